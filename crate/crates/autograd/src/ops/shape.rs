//! Layout operations: reshape, permute, slicing, concatenation, cyclic shift
//! and row gathering.

use std::rc::Rc;

use crate::array::{numel, split_at_axis};
use crate::{Float, NdArray, Tensor};

fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

impl<'g, F: Float> Tensor<'g, F> {
    pub fn reshape(self, shape: &[usize]) -> Tensor<'g, F> {
        let x = self.value();
        let old = x.shape().to_vec();
        assert_eq!(
            numel(shape),
            x.len(),
            "cannot reshape {old:?} into {shape:?}"
        );
        let out = NdArray::from_vec(shape.to_vec(), x.data().to_vec());
        self.graph.record(out, &[self], move |_| {
            Box::new(move |g, _| vec![Some(g.clone().reshape(old.clone()))])
        })
    }

    pub fn permute(self, axes: &[usize]) -> Tensor<'g, F> {
        let out = self.value().permute(axes);
        let inv = inverse_permutation(axes);
        self.graph.record(out, &[self], move |_| {
            Box::new(move |g, _| vec![Some(g.permute(&inv))])
        })
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Tensor<'g, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (outer, extent, inner) = split_at_axis(&shape, axis);
        assert!(start + len <= extent, "narrow out of range");
        let xd = x.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * extent + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.graph
            .record(NdArray::from_vec(out_shape, out), &[self], move |_| {
                Box::new(move |g, _| {
                    let gd = g.data();
                    let mut dx = vec![F::zero(); outer * extent * inner];
                    for o in 0..outer {
                        dx[(o * extent + start) * inner..][..len * inner]
                            .copy_from_slice(&gd[o * len * inner..][..len * inner]);
                    }
                    vec![Some(NdArray::from_vec(shape.clone(), dx))]
                })
            })
    }

    /// Cyclic shift along `axis`: entry `i` moves to `(i + shift) mod n`.
    pub fn roll(self, axis: usize, shift: isize) -> Tensor<'g, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = roll_array(&x, axis, shift);
        self.graph.record(out, &[self], move |_| {
            Box::new(move |g, _| {
                debug_assert_eq!(g.shape(), &shape[..]);
                vec![Some(roll_array(g, axis, -shift))]
            })
        })
    }

    /// Rows of `self` (indexed along axis 0) selected by `indices`.
    pub fn gather_rows(self, indices: Rc<[usize]>) -> Tensor<'g, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let row = numel(&shape[1..]);
        let xd = x.data();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices.iter() {
            assert!(i < shape[0], "gather index {i} out of range");
            out.extend_from_slice(&xd[i * row..][..row]);
        }
        let mut out_shape = shape.clone();
        out_shape[0] = indices.len();
        self.graph
            .record(NdArray::from_vec(out_shape, out), &[self], move |_| {
                Box::new(move |g, _| {
                    let gd = g.data();
                    let mut dx = vec![F::zero(); numel(&shape)];
                    for (k, &i) in indices.iter().enumerate() {
                        for (d, &s) in dx[i * row..][..row].iter_mut().zip(&gd[k * row..][..row]) {
                            *d += s;
                        }
                    }
                    vec![Some(NdArray::from_vec(shape.clone(), dx))]
                })
            })
    }
}

pub fn roll_array<F: Float>(x: &NdArray<F>, axis: usize, shift: isize) -> NdArray<F> {
    let shape = x.shape();
    let (outer, extent, inner) = split_at_axis(shape, axis);
    if extent == 0 {
        return x.clone();
    }
    let s = shift.rem_euclid(extent as isize) as usize;
    let xd = x.data();
    let mut out = vec![F::zero(); xd.len()];
    for o in 0..outer {
        for a in 0..extent {
            let dst = (a + s) % extent;
            out[(o * extent + dst) * inner..][..inner]
                .copy_from_slice(&xd[(o * extent + a) * inner..][..inner]);
        }
    }
    NdArray::from_vec(shape.to_vec(), out)
}

/// Concatenation along `axis`.
pub fn concat<'g, F: Float>(parts: &[Tensor<'g, F>], axis: usize) -> Tensor<'g, F> {
    assert!(!parts.is_empty(), "concat of nothing");
    let values: Vec<Rc<NdArray<F>>> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    let extents: Vec<usize> = values
        .iter()
        .map(|v| {
            let s = v.shape();
            assert_eq!(s.len(), base.len(), "concat rank mismatch");
            for (d, (&a, &b)) in s.iter().zip(&base).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch {s:?} vs {base:?}");
            }
            s[axis]
        })
        .collect();
    let total: usize = extents.iter().sum();
    let (outer, _, inner) = split_at_axis(&base, axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &e) in values.iter().zip(&extents) {
            out.extend_from_slice(&v.data()[o * e * inner..][..e * inner]);
        }
    }
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let graph = parts[0].graph;
    graph.record(NdArray::from_vec(out_shape, out), parts, move |_| {
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut offset = 0;
            extents
                .iter()
                .zip(needs)
                .map(|(&e, &need)| {
                    let start = offset;
                    offset += e;
                    need.then(|| {
                        let mut d = Vec::with_capacity(outer * e * inner);
                        for o in 0..outer {
                            d.extend_from_slice(&gd[(o * total + start) * inner..][..e * inner]);
                        }
                        let mut s = base.clone();
                        s[axis] = e;
                        NdArray::from_vec(s, d)
                    })
                })
                .collect()
        })
    })
}
