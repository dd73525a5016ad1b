//! Softmax family and normalization layers.

use crate::array::split_at_axis;
use crate::{Float, NdArray, Tensor};

fn last_axis_rows<F: Float>(x: &NdArray<F>) -> (usize, usize) {
    let d = *x.shape().last().expect("last-axis op on scalar");
    (x.len() / d.max(1), d)
}

impl<'g, F: Float> Tensor<'g, F> {
    /// Softmax over the last axis.
    pub fn softmax(self) -> Tensor<'g, F> {
        let x = self.value();
        let (rows, d) = last_axis_rows(&x);
        let mut out = x.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * d..][..d];
            let mx = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
            let mut total = F::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let out = NdArray::from_vec(x.shape().to_vec(), out);
        self.graph.record(out, &[self], move |y| {
            let y = y.clone();
            Box::new(move |g, _| {
                let (yd, gd) = (y.data(), g.data());
                let mut dx = vec![F::zero(); yd.len()];
                for r in 0..rows {
                    let (yr, gr) = (&yd[r * d..][..d], &gd[r * d..][..d]);
                    let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for i in 0..d {
                        dx[r * d + i] = yr[i] * (gr[i] - dot);
                    }
                }
                vec![Some(NdArray::from_vec(y.shape().to_vec(), dx))]
            })
        })
    }

    /// Log-softmax over the last axis, stabilized by the row maximum.
    pub fn log_softmax(self) -> Tensor<'g, F> {
        let x = self.value();
        let (rows, d) = last_axis_rows(&x);
        let mut out = x.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * d..][..d];
            let mx = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<F>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = NdArray::from_vec(x.shape().to_vec(), out);
        self.graph.record(out, &[self], move |y| {
            let y = y.clone();
            Box::new(move |g, _| {
                let (yd, gd) = (y.data(), g.data());
                let mut dx = vec![F::zero(); yd.len()];
                for r in 0..rows {
                    let gr = &gd[r * d..][..d];
                    let total: F = gr.iter().copied().sum();
                    for i in 0..d {
                        dx[r * d + i] = gr[i] - yd[r * d + i].exp() * total;
                    }
                }
                vec![Some(NdArray::from_vec(y.shape().to_vec(), dx))]
            })
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`
    /// (both of the last axis' length).
    pub fn layer_norm(self, gamma: Tensor<'g, F>, beta: Tensor<'g, F>, eps: F) -> Tensor<'g, F> {
        let x = self.value();
        let (rows, d) = last_axis_rows(&x);
        let (gv, bv) = (gamma.value(), beta.value());
        assert_eq!(gv.shape(), &[d], "layer_norm gamma shape");
        assert_eq!(bv.shape(), &[d], "layer_norm beta shape");
        let xd = x.data();
        let df = F::of(d as f64);
        let mut xhat = vec![F::zero(); xd.len()];
        let mut inv_std = vec![F::zero(); rows];
        let mut out = vec![F::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..][..d];
            let mean = row.iter().copied().sum::<F>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / df;
            let is = F::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..d {
                let h = (row[i] - mean) * is;
                xhat[r * d + i] = h;
                out[r * d + i] = h * gv.data()[i] + bv.data()[i];
            }
        }
        let out = NdArray::from_vec(x.shape().to_vec(), out);
        let shape = x.shape().to_vec();
        self.graph.record(out, &[self, gamma, beta], move |_| {
            Box::new(move |g, needs| {
                let gd = g.data();
                let gam = gv.data();
                let dx = needs[0].then(|| {
                    let mut dx = vec![F::zero(); gd.len()];
                    for r in 0..rows {
                        let mut s1 = F::zero();
                        let mut s2 = F::zero();
                        for i in 0..d {
                            let dh = gd[r * d + i] * gam[i];
                            s1 += dh;
                            s2 += dh * xhat[r * d + i];
                        }
                        for i in 0..d {
                            let dh = gd[r * d + i] * gam[i];
                            dx[r * d + i] =
                                inv_std[r] / df * (df * dh - s1 - xhat[r * d + i] * s2);
                        }
                    }
                    NdArray::from_vec(shape.clone(), dx)
                });
                let dgamma = needs[1].then(|| {
                    let mut acc = vec![F::zero(); d];
                    for r in 0..rows {
                        for i in 0..d {
                            acc[i] += gd[r * d + i] * xhat[r * d + i];
                        }
                    }
                    NdArray::from_vec(vec![d], acc)
                });
                let dbeta = needs[2].then(|| {
                    let mut acc = vec![F::zero(); d];
                    for r in 0..rows {
                        for i in 0..d {
                            acc[i] += gd[r * d + i];
                        }
                    }
                    NdArray::from_vec(vec![d], acc)
                });
                vec![dx, dgamma, dbeta]
            })
        })
    }
}

/// Per-channel statistics of one training-mode batch normalization call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<F>,
}

/// Batch normalization over every axis except `axis`.
///
/// With `running = Some((mean, var))` the stored statistics are used and no
/// batch statistics are returned; otherwise the batch's own biased variance
/// normalizes and its statistics are returned for running-average updates.
pub fn batch_norm<'g, F: Float>(
    x: Tensor<'g, F>,
    gamma: Tensor<'g, F>,
    beta: Tensor<'g, F>,
    axis: usize,
    eps: F,
    running: Option<(&[F], &[F])>,
) -> (Tensor<'g, F>, Option<BatchStats<F>>) {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    let (outer, c, inner) = split_at_axis(&shape, axis);
    let (gv, bv) = (gamma.value(), beta.value());
    assert_eq!(gv.shape(), &[c], "batch_norm gamma shape");
    assert_eq!(bv.shape(), &[c], "batch_norm beta shape");
    let count = outer * inner;
    let xd = xv.data();

    let (mean, var_biased, stats) = match running {
        Some((m, v)) => (m.to_vec(), v.to_vec(), None),
        None => {
            assert!(count > 1, "batch_norm needs more than one value per channel");
            let mut mean = vec![0f64; c];
            let mut sq = vec![0f64; c];
            for o in 0..outer {
                for ch in 0..c {
                    let mut s = 0f64;
                    for &v in &xd[(o * c + ch) * inner..][..inner] {
                        s += v.as_f64();
                    }
                    mean[ch] += s;
                }
            }
            for m in &mut mean {
                *m /= count as f64;
            }
            for o in 0..outer {
                for ch in 0..c {
                    let mu = mean[ch];
                    let mut s = 0f64;
                    for &v in &xd[(o * c + ch) * inner..][..inner] {
                        let dv = v.as_f64() - mu;
                        s += dv * dv;
                    }
                    sq[ch] += s;
                }
            }
            let biased: Vec<F> = sq.iter().map(|&s| F::of(s / count as f64)).collect();
            let unbiased: Vec<F> = sq
                .iter()
                .map(|&s| F::of(s / (count - 1) as f64))
                .collect();
            let mean_f: Vec<F> = mean.iter().map(|&m| F::of(m)).collect();
            (
                mean_f.clone(),
                biased,
                Some(BatchStats {
                    mean: mean_f,
                    var: unbiased,
                }),
            )
        }
    };
    let train = stats.is_some();
    let inv_std: Vec<F> = var_biased.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![F::zero(); xd.len()];
    let mut out = vec![F::zero(); xd.len()];
    for o in 0..outer {
        for ch in 0..c {
            let base = (o * c + ch) * inner;
            let (mu, is, ga, be) = (mean[ch], inv_std[ch], gv.data()[ch], bv.data()[ch]);
            for i in 0..inner {
                let h = (xd[base + i] - mu) * is;
                xhat[base + i] = h;
                out[base + i] = h * ga + be;
            }
        }
    }
    let out = NdArray::from_vec(shape.clone(), out);
    let y = x.graph.record(out, &[x, gamma, beta], move |_| {
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut sum_dy = vec![F::zero(); c];
            let mut sum_dy_xhat = vec![F::zero(); c];
            for o in 0..outer {
                for ch in 0..c {
                    let base = (o * c + ch) * inner;
                    let mut s1 = F::zero();
                    let mut s2 = F::zero();
                    for i in 0..inner {
                        s1 += gd[base + i];
                        s2 += gd[base + i] * xhat[base + i];
                    }
                    sum_dy[ch] += s1;
                    sum_dy_xhat[ch] += s2;
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![F::zero(); gd.len()];
                let n = F::of(count as f64);
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        let scale = gv.data()[ch] * inv_std[ch];
                        if train {
                            let (m1, m2) = (sum_dy[ch] / n, sum_dy_xhat[ch] / n);
                            for i in 0..inner {
                                dx[base + i] = scale * (gd[base + i] - m1 - xhat[base + i] * m2);
                            }
                        } else {
                            for i in 0..inner {
                                dx[base + i] = scale * gd[base + i];
                            }
                        }
                    }
                }
                NdArray::from_vec(shape.clone(), dx)
            });
            vec![
                dx,
                needs[1].then(|| NdArray::from_vec(vec![c], sum_dy_xhat.clone())),
                needs[2].then(|| NdArray::from_vec(vec![c], sum_dy.clone())),
            ]
        })
    });
    (y, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    #[test]
    fn softmax_rows_sum_to_one() {
        let g = Graph::<f64>::new();
        let x = g.constant(NdArray::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, -1e3, 0.0, 1e3]));
        let y = x.softmax().value();
        for r in 0..2 {
            let s: f64 = y.data()[r * 3..][..3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let l = x.log_softmax().value();
        assert!(l.all_finite());
        assert!((l.get(&[1, 2])).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_train_normalizes_each_channel() {
        let g = Graph::<f64>::new();
        let x = g.constant(NdArray::from_fn(vec![4, 2, 3], |i| (i * i) as f64));
        let gamma = g.constant(NdArray::full(vec![2], 1.0));
        let beta = g.constant(NdArray::zeros(vec![2]));
        let (y, stats) = batch_norm(x, gamma, beta, 1, 0.0, None);
        let yv = y.value();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|o| (0..3).map(move |i| (o, i)))
                .map(|(o, i)| yv.get(&[o, ch, i]))
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / 12.0;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
        assert_eq!(stats.unwrap().mean.len(), 2);
    }
}
