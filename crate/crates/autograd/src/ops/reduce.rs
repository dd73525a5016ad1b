//! Sums, means and maxima.

use crate::array::split_at_axis;
use crate::{Float, NdArray, Tensor};

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut out = shape.to_vec();
    if keepdim {
        out[axis] = 1;
    } else {
        out.remove(axis);
    }
    out
}

impl<'g, F: Float> Tensor<'g, F> {
    /// Sum of all elements as a zero-dimensional tensor.
    pub fn sum(self) -> Tensor<'g, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let total = NdArray::scalar(x.sum());
        self.graph.record(total, &[self], move |_| {
            Box::new(move |g, _| vec![Some(NdArray::full(shape.clone(), g.item()))])
        })
    }

    pub fn mean(self) -> Tensor<'g, F> {
        let n = self.value().len();
        self.sum().mul_scalar(F::one() / F::of(n as f64))
    }

    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Tensor<'g, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (outer, extent, inner) = split_at_axis(&shape, axis);
        let xd = x.data();
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let src = &xd[(o * extent + a) * inner..][..inner];
                let dst = &mut out[o * inner..][..inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let out = NdArray::from_vec(reduced_shape(&shape, axis, keepdim), out);
        self.graph.record(out, &[self], move |_| {
            Box::new(move |g, _| {
                let gd = g.data();
                let mut dx = vec![F::zero(); outer * extent * inner];
                for o in 0..outer {
                    for a in 0..extent {
                        dx[(o * extent + a) * inner..][..inner]
                            .copy_from_slice(&gd[o * inner..][..inner]);
                    }
                }
                vec![Some(NdArray::from_vec(shape.clone(), dx))]
            })
        })
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Tensor<'g, F> {
        let extent = self.shape()[axis];
        self.sum_axis(axis, keepdim)
            .mul_scalar(F::one() / F::of(extent as f64))
    }

    /// Maximum along `axis`; the gradient flows to the first maximal entry.
    pub fn max_axis(self, axis: usize, keepdim: bool) -> Tensor<'g, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (outer, extent, inner) = split_at_axis(&shape, axis);
        assert!(extent > 0, "max over empty axis");
        let xd = x.data();
        let mut out = vec![F::zero(); outer * inner];
        let mut arg = vec![0u32; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..][..inner];
            dst.copy_from_slice(&xd[o * extent * inner..][..inner]);
            let idx = &mut arg[o * inner..][..inner];
            for a in 1..extent {
                let src = &xd[(o * extent + a) * inner..][..inner];
                for i in 0..inner {
                    if src[i] > dst[i] {
                        dst[i] = src[i];
                        idx[i] = a as u32;
                    }
                }
            }
        }
        let out = NdArray::from_vec(reduced_shape(&shape, axis, keepdim), out);
        self.graph.record(out, &[self], move |_| {
            Box::new(move |g, _| {
                let gd = g.data();
                let mut dx = vec![F::zero(); outer * extent * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let a = arg[o * inner + i] as usize;
                        dx[(o * extent + a) * inner + i] = gd[o * inner + i];
                    }
                }
                vec![Some(NdArray::from_vec(shape.clone(), dx))]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, NdArray};

    #[test]
    fn max_axis_routes_gradient_to_argmax() {
        let g = Graph::<f64>::new();
        let x = g.leaf(
            NdArray::from_vec(vec![2, 3], vec![1.0, 5.0, 2.0, 7.0, 0.0, 7.0]),
            true,
        );
        let m = x.max_axis(1, false);
        assert_eq!(m.value().data(), &[5.0, 7.0]);
        let grads = g.backward(m.sum());
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_axis_keepdim_shape() {
        let g = Graph::<f64>::new();
        let x = g.constant(NdArray::from_fn(vec![2, 3, 4], |i| i as f64));
        assert_eq!(x.sum_axis(1, true).shape(), vec![2, 1, 4]);
        let s = x.sum_axis(2, false);
        assert_eq!(s.value().get(&[1, 2]), 20.0 + 21.0 + 22.0 + 23.0);
    }
}
