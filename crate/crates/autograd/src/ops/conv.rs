//! Spatial (per-frame) and temporal convolutions without bias.

use crate::gemm::{gemm, Layout};
use crate::{Float, NdArray, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output side length of a convolution, or `None` when the kernel does not fit.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad)
        .checked_sub(kernel)
        .map(|span| span / stride + 1)
}

/// Unfolds one `[c, h, w]` image into a `[c*kh*kw, ho*wo]` patch matrix.
fn im2col<F: Float>(img: &[F], g: &Geometry, cols: &mut [F]) {
    let n_cols = g.cols();
    for ch in 0..g.c {
        let plane = &img[ch * g.h * g.w..][..g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n_cols..][..n_cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..][..g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..][..g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            F::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a patch matrix back into an image.
fn col2im<F: Float>(cols: &[F], g: &Geometry, img: &mut [F]) {
    let n_cols = g.cols();
    for ch in 0..g.c {
        let plane = &mut img[ch * g.h * g.w..][..g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n_cols..][..n_cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..][..g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution of `x: [n, c, h, w]` with `weight: [o, c, kh, kw]`,
/// symmetric zero padding `pad` and equal stride on both axes.
pub fn conv2d<'g, F: Float>(
    x: Tensor<'g, F>,
    weight: Tensor<'g, F>,
    stride: usize,
    pad: usize,
) -> Tensor<'g, F> {
    let (xv, wv) = (x.value(), weight.value());
    let xs = xv.shape().to_vec();
    let ws = wv.shape().to_vec();
    assert_eq!(xs.len(), 4, "conv2d input must be [n, c, h, w], got {xs:?}");
    assert_eq!(ws.len(), 4, "conv2d weight must be [o, c, kh, kw], got {ws:?}");
    assert_eq!(xs[1], ws[1], "conv2d channel mismatch {xs:?} vs {ws:?}");
    assert!(stride > 0);
    let (n, o) = (xs[0], ws[0]);
    let geo = Geometry {
        c: xs[1],
        h: xs[2],
        w: xs[3],
        kh: ws[2],
        kw: ws[3],
        stride,
        pad,
        ho: conv_out_len(xs[2], ws[2], stride, pad).expect("kernel taller than padded input"),
        wo: conv_out_len(xs[3], ws[3], stride, pad).expect("kernel wider than padded input"),
    };
    let (rows, cols_n) = (geo.rows(), geo.cols());
    let in_sz = geo.c * geo.h * geo.w;
    let mut cols = vec![F::zero(); rows * cols_n];
    let mut out = vec![F::zero(); n * o * cols_n];
    for i in 0..n {
        im2col(&xv.data()[i * in_sz..][..in_sz], &geo, &mut cols);
        gemm(
            o,
            rows,
            cols_n,
            F::one(),
            wv.data(),
            Layout::row_major(rows),
            &cols,
            Layout::row_major(cols_n),
            F::zero(),
            &mut out[i * o * cols_n..][..o * cols_n],
            Layout::row_major(cols_n),
        );
    }
    let out = NdArray::from_vec(vec![n, o, geo.ho, geo.wo], out);
    x.graph.record(out, &[x, weight], move |_| {
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut cols = vec![F::zero(); rows * cols_n];
            let mut dw = needs[1].then(|| vec![F::zero(); o * rows]);
            let mut dx = needs[0].then(|| vec![F::zero(); n * in_sz]);
            for i in 0..n {
                let gi = &gd[i * o * cols_n..][..o * cols_n];
                if let Some(dw) = dw.as_mut() {
                    im2col(&xv.data()[i * in_sz..][..in_sz], &geo, &mut cols);
                    gemm(
                        o,
                        cols_n,
                        rows,
                        F::one(),
                        gi,
                        Layout::row_major(cols_n),
                        &cols,
                        Layout::transposed(cols_n),
                        F::one(),
                        dw,
                        Layout::row_major(rows),
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(
                        rows,
                        o,
                        cols_n,
                        F::one(),
                        wv.data(),
                        Layout::transposed(rows),
                        gi,
                        Layout::row_major(cols_n),
                        F::zero(),
                        &mut cols,
                        Layout::row_major(cols_n),
                    );
                    col2im(&cols, &geo, &mut dx[i * in_sz..][..in_sz]);
                }
            }
            vec![
                dx.map(|d| NdArray::from_vec(xs.clone(), d)),
                dw.map(|d| NdArray::from_vec(ws.clone(), d)),
            ]
        })
    })
}

/// Convolution along time for frame-major features `x: [b*t, c, h, w]` with
/// `weight: [o, c, k]` (odd `k`, zero padding `k/2`, stride 1). Frames of
/// different sequences never mix.
pub fn temporal_conv<'g, F: Float>(
    x: Tensor<'g, F>,
    weight: Tensor<'g, F>,
    frames: usize,
) -> Tensor<'g, F> {
    let (xv, wv) = (x.value(), weight.value());
    let xs = xv.shape().to_vec();
    let ws = wv.shape().to_vec();
    assert_eq!(xs.len(), 4, "temporal_conv input must be [b*t, c, h, w]");
    assert_eq!(ws.len(), 3, "temporal_conv weight must be [o, c, k]");
    assert_eq!(xs[1], ws[1], "temporal_conv channel mismatch");
    assert!(frames > 0 && xs[0] % frames == 0, "frame count does not divide batch");
    let (c, o, k) = (ws[1], ws[0], ws[2]);
    assert!(k % 2 == 1, "temporal kernel must be odd");
    let pad = k / 2;
    let hw = xs[2] * xs[3];
    let seqs = xs[0] / frames;
    let wrow = c * k;
    // tap j of the weight, viewed as an o x c matrix starting at offset j
    let tap = Layout { rs: wrow, cs: k };
    let mut out = vec![F::zero(); seqs * frames * o * hw];
    for s in 0..seqs {
        for t in 0..frames {
            let dst = &mut out[(s * frames + t) * o * hw..][..o * hw];
            for j in 0..k {
                let src_t = t as isize + j as isize - pad as isize;
                if src_t < 0 || src_t >= frames as isize {
                    continue;
                }
                gemm(
                    o,
                    c,
                    hw,
                    F::one(),
                    &wv.data()[j..],
                    tap,
                    &xv.data()[(s * frames + src_t as usize) * c * hw..][..c * hw],
                    Layout::row_major(hw),
                    F::one(),
                    dst,
                    Layout::row_major(hw),
                );
            }
        }
    }
    let out = NdArray::from_vec(vec![xs[0], o, xs[2], xs[3]], out);
    x.graph.record(out, &[x, weight], move |_| {
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut dx = needs[0].then(|| vec![F::zero(); xv.len()]);
            let mut dw = needs[1].then(|| vec![F::zero(); wv.len()]);
            for s in 0..seqs {
                for t in 0..frames {
                    let gt = &gd[(s * frames + t) * o * hw..][..o * hw];
                    for j in 0..k {
                        let src_t = t as isize + j as isize - pad as isize;
                        if src_t < 0 || src_t >= frames as isize {
                            continue;
                        }
                        let src = (s * frames + src_t as usize) * c * hw;
                        if let Some(dw) = dw.as_mut() {
                            gemm(
                                o,
                                hw,
                                c,
                                F::one(),
                                gt,
                                Layout::row_major(hw),
                                &xv.data()[src..][..c * hw],
                                Layout::transposed(hw),
                                F::one(),
                                &mut dw[j..],
                                tap,
                            );
                        }
                        if let Some(dx) = dx.as_mut() {
                            gemm(
                                c,
                                o,
                                hw,
                                F::one(),
                                &wv.data()[j..],
                                Layout { rs: k, cs: wrow },
                                gt,
                                Layout::row_major(hw),
                                F::one(),
                                &mut dx[src..][..c * hw],
                                Layout::row_major(hw),
                            );
                        }
                    }
                }
            }
            vec![
                dx.map(|d| NdArray::from_vec(xs.clone(), d)),
                dw.map(|d| NdArray::from_vec(ws.clone(), d)),
            ]
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    fn direct_conv(
        x: &NdArray<f64>,
        w: &NdArray<f64>,
        stride: usize,
        pad: usize,
    ) -> NdArray<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let ho = conv_out_len(xs[2], ws[2], stride, pad).unwrap();
        let wo = conv_out_len(xs[3], ws[3], stride, pad).unwrap();
        NdArray::from_fn(vec![xs[0], ws[0], ho, wo], |lin| {
            let ox = lin % wo;
            let oy = (lin / wo) % ho;
            let oc = (lin / (wo * ho)) % ws[0];
            let n = lin / (wo * ho * ws[0]);
            let mut acc = 0.0;
            for c in 0..xs[1] {
                for i in 0..ws[2] {
                    for j in 0..ws[3] {
                        let iy = (oy * stride + i) as isize - pad as isize;
                        let ix = (ox * stride + j) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs[2] && (ix as usize) < xs[3] {
                            acc += x.get(&[n, c, iy as usize, ix as usize]) * w.get(&[oc, c, i, j]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv2d_matches_direct_summation() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (2, 0, 2), (1, 0, 1)] {
            let g = Graph::<f64>::new();
            let x = NdArray::from_fn(vec![2, 3, 7, 6], |i| ((i * 37 % 11) as f64) - 5.0);
            let w = NdArray::from_fn(vec![4, 3, k, k], |i| ((i * 13 % 7) as f64) * 0.1 - 0.3);
            let y = conv2d(g.constant(x.clone()), g.constant(w.clone()), stride, pad);
            let expected = direct_conv(&x, &w, stride, pad);
            assert_eq!(y.shape(), expected.shape().to_vec());
            for (a, b) in y.value().data().iter().zip(expected.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn temporal_conv_mixes_only_neighbouring_frames_of_one_sequence() {
        let g = Graph::<f64>::new();
        // two sequences of three frames, one channel, 1x1 pixels
        let x = g.constant(NdArray::from_vec(
            vec![6, 1, 1, 1],
            vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0],
        ));
        let w = g.constant(NdArray::from_vec(vec![1, 1, 3], vec![1.0, 1.0, 1.0]));
        let y = temporal_conv(x, w, 3);
        assert_eq!(y.value().data(), &[3.0, 6.0, 5.0, 30.0, 60.0, 50.0]);
    }
}
