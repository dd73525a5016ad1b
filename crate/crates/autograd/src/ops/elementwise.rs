//! Broadcasting arithmetic and pointwise nonlinearities.

use crate::array::{for_each_offset2, numel, row_major_strides};
use crate::{Float, NdArray, Tensor};

/// Numpy-style broadcast of two shapes (aligned from the trailing axis).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let nd = a.len().max(b.len());
    (0..nd)
        .map(|i| {
            let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
            let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
            }
        })
        .collect()
}

/// Strides of `shape` laid against `out`, zero where `shape` is broadcast.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = row_major_strides(shape);
    let lead = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < lead || shape[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Sums a broadcast gradient back down to `shape`.
pub fn sum_to_shape<F: Float>(g: &NdArray<F>, shape: &[usize]) -> NdArray<F> {
    if g.shape() == shape {
        return g.clone();
    }
    let st = aligned_strides(shape, g.shape());
    let zero = vec![0; g.ndim()];
    let mut out = vec![F::zero(); numel(shape)];
    let gd = g.data();
    for_each_offset2(g.shape(), &st, &zero, |lin, off, _| out[off] += gd[lin]);
    NdArray::from_vec(shape.to_vec(), out)
}

fn apply<F: Float>(a: &NdArray<F>, b: &NdArray<F>, f: impl Fn(F, F) -> F) -> NdArray<F> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape());
    let sa = aligned_strides(a.shape(), &out);
    let sb = aligned_strides(b.shape(), &out);
    let mut data = vec![F::zero(); numel(&out)];
    let (ad, bd) = (a.data(), b.data());
    for_each_offset2(&out, &sa, &sb, |lin, oa, ob| data[lin] = f(ad[oa], bd[ob]));
    NdArray::from_vec(out, data)
}

/// Gradient of one operand of a broadcast binary op, where `d(a, b, g)` is the
/// pointwise contribution.
fn operand_grad<F: Float>(
    a: &NdArray<F>,
    b: &NdArray<F>,
    g: &NdArray<F>,
    target_is_a: bool,
    d: impl Fn(F, F, F) -> F,
) -> NdArray<F> {
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    if a.shape() == b.shape() {
        let data = (0..gd.len()).map(|i| d(ad[i], bd[i], gd[i])).collect();
        return NdArray::from_vec(g.shape().to_vec(), data);
    }
    let out = g.shape();
    let sa = aligned_strides(a.shape(), out);
    let sb = aligned_strides(b.shape(), out);
    let target = if target_is_a { a.shape() } else { b.shape() };
    let mut acc = vec![F::zero(); numel(target)];
    for_each_offset2(out, &sa, &sb, |lin, oa, ob| {
        let v = d(ad[oa], bd[ob], gd[lin]);
        acc[if target_is_a { oa } else { ob }] += v;
    });
    NdArray::from_vec(target.to_vec(), acc)
}

macro_rules! binary_op {
    ($name:ident, $fwd:expr, $da:expr, $db:expr) => {
        pub fn $name(self, other: Tensor<'g, F>) -> Tensor<'g, F> {
            let (a, b) = (self.value(), other.value());
            let out = apply(&a, &b, $fwd);
            self.graph.record(out, &[self, other], move |_| {
                Box::new(move |g, needs| {
                    vec![
                        needs[0].then(|| operand_grad(&a, &b, g, true, $da)),
                        needs[1].then(|| operand_grad(&a, &b, g, false, $db)),
                    ]
                })
            })
        }
    };
}

impl<'g, F: Float> Tensor<'g, F> {
    pub fn add(self, other: Tensor<'g, F>) -> Tensor<'g, F> {
        self.additive(other, false)
    }

    pub fn sub(self, other: Tensor<'g, F>) -> Tensor<'g, F> {
        self.additive(other, true)
    }

    /// `a + b` or `a - b`; gradients only need reducing to operand shapes.
    fn additive(self, other: Tensor<'g, F>, negate: bool) -> Tensor<'g, F> {
        let (a, b) = (self.value(), other.value());
        let out = if negate { apply(&a, &b, |x, y| x - y) } else { apply(&a, &b, |x, y| x + y) };
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        drop((a, b));
        self.graph.record(out, &[self, other], move |_| {
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| sum_to_shape(g, &sa)),
                    needs[1].then(|| {
                        let mut r = sum_to_shape(g, &sb);
                        if negate {
                            r.scale(-F::one());
                        }
                        r
                    }),
                ]
            })
        })
    }

    binary_op!(mul, |x, y| x * y, |_, y, g| g * y, |x, _, g| g * x);
    binary_op!(div, |x, y| x / y, |_, y, g| g / y, |x, y, g| -g * x / (y * y));

    fn unary(
        self,
        f: impl Fn(F) -> F,
        df: impl Fn(F, F) -> F + 'static,
    ) -> Tensor<'g, F> {
        let x = self.value();
        let out = x.map(f);
        self.graph.record(out, &[self], move |y| {
            let y = y.clone();
            Box::new(move |g, _| {
                let (xd, yd, gd) = (x.data(), y.data(), g.data());
                let data = (0..gd.len()).map(|i| gd[i] * df(xd[i], yd[i])).collect();
                vec![Some(NdArray::from_vec(g.shape().to_vec(), data))]
            })
        })
    }

    pub fn add_scalar(self, c: F) -> Tensor<'g, F> {
        self.unary(move |x| x + c, |_, _| F::one())
    }

    pub fn mul_scalar(self, c: F) -> Tensor<'g, F> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn neg(self) -> Tensor<'g, F> {
        self.mul_scalar(-F::one())
    }

    pub fn relu(self) -> Tensor<'g, F> {
        self.unary(
            |x| if x > F::zero() { x } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    /// Exact (erf-based) Gaussian error linear unit.
    pub fn gelu(self) -> Tensor<'g, F> {
        let half = F::of(0.5);
        let inv_sqrt2 = F::of(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = F::of(0.398_942_280_401_432_7);
        self.unary(
            move |x| half * x * (F::one() + (x * inv_sqrt2).erf()),
            move |x, _| {
                half * (F::one() + (x * inv_sqrt2).erf())
                    + x * inv_sqrt_2pi * (-half * x * x).exp()
            },
        )
    }

    pub fn exp(self) -> Tensor<'g, F> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Tensor<'g, F> {
        self.unary(|x| x.ln(), |x, _| F::one() / x)
    }

    pub fn square(self) -> Tensor<'g, F> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// Square root with the subgradient 0 at the origin, so zero distances do
    /// not produce infinite gradients.
    pub fn sqrt(self) -> Tensor<'g, F> {
        self.unary(
            |x| x.max(F::zero()).sqrt(),
            |_, y| {
                if y > F::zero() {
                    F::of(0.5) / y
                } else {
                    F::zero()
                }
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), vec![2, 3]);
        assert_eq!(broadcast_shape(&[4, 1, 5], &[3, 1]), vec![4, 3, 5]);
        assert_eq!(broadcast_shape(&[], &[2]), vec![2]);
    }

    #[test]
    fn broadcast_add_gradients_reduce() {
        let g = Graph::<f64>::new();
        let a = g.leaf(NdArray::from_fn(vec![2, 3], |i| i as f64), true);
        let b = g.leaf(NdArray::from_vec(vec![3], vec![1.0, 2.0, 3.0]), true);
        let y = a.mul(b).sum();
        let grads = g.backward(y);
        assert_eq!(grads.get(b).unwrap().data(), &[3.0, 5.0, 7.0]);
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn sqrt_at_zero_has_zero_gradient() {
        let g = Graph::<f64>::new();
        let x = g.leaf(NdArray::from_vec(vec![2], vec![0.0, 4.0]), true);
        let y = x.sqrt().sum();
        let grads = g.backward(y);
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.25]);
    }
}
