use crate::array::numel;
use crate::gemm::{gemm, Layout};
use crate::{Float, NdArray, Tensor};

impl<'g, F: Float> Tensor<'g, F> {
    /// Matrix product over the last two axes.
    ///
    /// `self` is `[..., m, k]`; `other` is either a shared `[k, n]` matrix or
    /// `[..., k, n]` with the same leading axes.
    pub fn matmul(self, other: Tensor<'g, F>) -> Tensor<'g, F> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs matrices");
        let k = sa[sa.len() - 1];
        let m = sa[sa.len() - 2];
        assert_eq!(sb[sb.len() - 2], k, "matmul inner dims {sa:?} x {sb:?}");
        let n = sb[sb.len() - 1];
        let shared = sb.len() == 2;
        let batch = numel(&sa[..sa.len() - 2]);
        if !shared {
            assert_eq!(&sa[..sa.len() - 2], &sb[..sb.len() - 2], "matmul batch dims");
        }
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        let mut out = vec![F::zero(); batch * m * n];
        if shared {
            gemm(
                batch * m,
                k,
                n,
                F::one(),
                a.data(),
                Layout::row_major(k),
                b.data(),
                Layout::row_major(n),
                F::zero(),
                &mut out,
                Layout::row_major(n),
            );
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    F::one(),
                    &a.data()[i * m * k..][..m * k],
                    Layout::row_major(k),
                    &b.data()[i * k * n..][..k * n],
                    Layout::row_major(n),
                    F::zero(),
                    &mut out[i * m * n..][..m * n],
                    Layout::row_major(n),
                );
            }
        }
        let out = NdArray::from_vec(out_shape, out);
        self.graph.record(out, &[self, other], move |_| {
            Box::new(move |g, needs| {
                let gd = g.data();
                let da = needs[0].then(|| {
                    let mut da = vec![F::zero(); a.len()];
                    let rows = if shared { batch * m } else { m };
                    let reps = if shared { 1 } else { batch };
                    for i in 0..reps {
                        gemm(
                            rows,
                            n,
                            k,
                            F::one(),
                            &gd[i * rows * n..][..rows * n],
                            Layout::row_major(n),
                            &b.data()[if shared { 0 } else { i * k * n }..][..k * n],
                            Layout::transposed(n),
                            F::zero(),
                            &mut da[i * rows * k..][..rows * k],
                            Layout::row_major(k),
                        );
                    }
                    NdArray::from_vec(sa.clone(), da)
                });
                let db = needs[1].then(|| {
                    let mut db = vec![F::zero(); b.len()];
                    if shared {
                        gemm(
                            k,
                            batch * m,
                            n,
                            F::one(),
                            a.data(),
                            Layout::transposed(k),
                            gd,
                            Layout::row_major(n),
                            F::zero(),
                            &mut db,
                            Layout::row_major(n),
                        );
                    } else {
                        for i in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                F::one(),
                                &a.data()[i * m * k..][..m * k],
                                Layout::transposed(k),
                                &gd[i * m * n..][..m * n],
                                Layout::row_major(n),
                                F::zero(),
                                &mut db[i * k * n..][..k * n],
                                Layout::row_major(n),
                            );
                        }
                    }
                    NdArray::from_vec(sb.clone(), db)
                });
                vec![da, db]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, NdArray};

    #[test]
    fn shared_and_batched_products() {
        let g = Graph::<f64>::new();
        let a = g.leaf(NdArray::from_fn(vec![2, 2, 3], |i| i as f64), true);
        let w = g.leaf(NdArray::from_fn(vec![3, 2], |i| (i as f64) - 2.0), true);
        let y = a.matmul(w);
        assert_eq!(y.shape(), vec![2, 2, 2]);
        // row [0,1,2] . cols [-2,0,2], [-1,1,3]
        assert_eq!(y.value().get(&[0, 0, 0]), 4.0);
        assert_eq!(y.value().get(&[0, 0, 1]), 7.0);
        let grads = g.backward(y.sum());
        // dW[k, n] = sum over rows of a[.., k]
        let aw = a.value();
        let col_sum: f64 = (0..4).map(|r| aw.data()[r * 3]).sum();
        assert_eq!(grads.get(w).unwrap().get(&[0, 1]), col_sum);

        let b = g.leaf(NdArray::from_fn(vec![2, 3, 1], |i| i as f64), true);
        let z = a.matmul(b);
        assert_eq!(z.shape(), vec![2, 2, 1]);
        assert_eq!(z.value().get(&[1, 0, 0]), 6.0 * 3.0 + 7.0 * 4.0 + 8.0 * 5.0);
    }
}
