//! Clip sampling, clip-level augmentation and batch assembly.
//!
//! Spatial augmentations are drawn once per clip and applied to every
//! frame, so the walking motion inside a clip stays coherent. Affine,
//! rotation and perspective jitter are composed into a single homography
//! and resampled bilinearly; flipping is an exact mirror.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{FrailtyLabel, GaitSequence};
use crate::error::{Error, Result};

/// A fixed-length stack of frames, `(T, H, W)` row-major, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub participant_id: String,
    pub label: FrailtyLabel,
    pub length: usize,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<f32>,
}

impl Clip {
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.frames[t * n..(t + 1) * n]
    }

    fn from_indices(seq: &GaitSequence, indices: &[usize]) -> Self {
        let (height, width) = seq.resolution();
        let mut frames = Vec::with_capacity(indices.len() * height * width);
        for &i in indices {
            frames.extend_from_slice(seq.frames()[i].pixels());
        }
        Clip {
            participant_id: seq.participant_id().to_string(),
            label: seq.label(),
            length: indices.len(),
            height,
            width,
            frames,
        }
    }
}

/// Frame positions `start, start+skip, ...`, wrapped modulo `n`.
pub fn strided_indices(n: usize, length: usize, skip: usize, start: usize) -> Vec<usize> {
    (0..length).map(|i| (start + i * skip) % n).collect()
}

fn check_budget(length: usize, skip: usize) -> Result<()> {
    if length == 0 || skip == 0 {
        return Err(Error::Validation(format!(
            "clip length and frame skip must be positive (got {length}, {skip})"
        )));
    }
    Ok(())
}

/// Random training clip. When the strided window fits, the start is
/// uniform over every position that keeps it inside the sequence;
/// otherwise it is uniform over all frames and indices wrap.
pub fn sample_training_clip<R: Rng + ?Sized>(
    seq: &GaitSequence,
    length: usize,
    skip: usize,
    rng: &mut R,
) -> Result<Clip> {
    check_budget(length, skip)?;
    let n = seq.len();
    let span = (length - 1) * skip + 1;
    let start = if n >= span {
        rng.random_range(0..=n - span)
    } else {
        rng.random_range(0..n)
    };
    Ok(Clip::from_indices(seq, &strided_indices(n, length, skip, start)))
}

/// Deterministic evaluation clip: the first `length` frames, wrapping.
pub fn sample_eval_clip(seq: &GaitSequence, length: usize) -> Result<Clip> {
    check_budget(length, 1)?;
    Ok(Clip::from_indices(seq, &strided_indices(seq.len(), length, 1, 0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub affine: bool,
    /// Degrees.
    pub affine_rotation: f64,
    /// Fraction of the frame side.
    pub affine_translate: f64,
    pub affine_scale: (f64, f64),
    pub flip_prob: f64,
    pub perspective: bool,
    pub perspective_scale: f64,
    pub cut: bool,
    /// Largest erased band as a fraction of frame height.
    pub cut_max_fraction: f64,
    pub rotation: bool,
    /// Degrees.
    pub rotation_max: f64,
    pub dropout_prob: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            affine: true,
            affine_rotation: 10.0,
            affine_translate: 0.1,
            affine_scale: (0.9, 1.1),
            flip_prob: 0.5,
            perspective: true,
            perspective_scale: 0.2,
            cut: true,
            cut_max_fraction: 0.25,
            rotation: true,
            rotation_max: 10.0,
            dropout_prob: 0.1,
        }
    }
}

impl AugmentPolicy {
    /// Policy that leaves clips untouched.
    pub fn disabled() -> Self {
        Self {
            affine: false,
            flip_prob: 0.0,
            perspective: false,
            cut: false,
            rotation: false,
            dropout_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} is not a probability")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must be a finite non-negative number")))
            }
        };
        prob("flip_prob", self.flip_prob)?;
        prob("dropout_prob", self.dropout_prob)?;
        prob("cut_max_fraction", self.cut_max_fraction)?;
        prob("perspective_scale", self.perspective_scale)?;
        nonneg("affine_rotation", self.affine_rotation)?;
        nonneg("affine_translate", self.affine_translate)?;
        nonneg("rotation_max", self.rotation_max)?;
        let (lo, hi) = self.affine_scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("affine_scale range [{lo}, {hi}] is empty or non-positive")));
        }
        Ok(())
    }

    fn warps(&self) -> bool {
        self.affine || self.perspective || self.rotation
    }
}

type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn mat_inverse(m: &Mat3) -> Option<Mat3> {
    let c = |i: usize, j: usize| {
        let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
        let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
        m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    if det.abs() < 1e-12 {
        return None;
    }
    Some(std::array::from_fn(|i| std::array::from_fn(|j| c(j, i) / det)))
}

/// Similarity transform about `center`: scale, rotate (radians), translate.
fn similarity(center: (f64, f64), angle: f64, scale: f64, shift: (f64, f64)) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let (a, b) = (scale * c, scale * s);
    [
        [a, -b, center.0 - a * center.0 + b * center.1 + shift.0],
        [b, a, center.1 - b * center.0 - a * center.1 + shift.1],
        [0.0, 0.0, 1.0],
    ]
}

/// Homography taking the four `from` points onto `to`.
fn homography(from: &[(f64, f64); 4], to: &[(f64, f64); 4]) -> Option<Mat3> {
    let mut a = [[0.0f64; 9]; 8];
    for (k, (&(x, y), &(u, v))) in from.iter().zip(to).enumerate() {
        a[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -x * u, -y * u, u];
        a[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -x * v, -y * v, v];
    }
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let h: Vec<f64> = (0..8).map(|i| a[i][8] / a[i][i]).collect();
    Some([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
}

/// Parameters drawn once per clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipTransform {
    /// Maps source to destination coordinates (pixel centres at `i + 0.5`).
    pub warp: Option<Mat3>,
    pub flip: bool,
    /// Erased rows `[start, start + len)`.
    pub cut: Option<(usize, usize)>,
    pub dropped: Vec<bool>,
}

impl ClipTransform {
    pub fn draw<R: Rng + ?Sized>(
        policy: &AugmentPolicy,
        length: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let (h, w) = (height as f64, width as f64);
        let center = (w / 2.0, h / 2.0);
        let mut warp: Option<Mat3> = None;
        let mut compose = |m: Mat3| {
            warp = Some(match warp {
                Some(prev) => mat_mul(&m, &prev),
                None => m,
            });
        };
        if policy.perspective && policy.perspective_scale > 0.0 {
            let (dx, dy) = (policy.perspective_scale * w / 2.0, policy.perspective_scale * h / 2.0);
            let mut jitter = |ex: f64, ey: f64| (rng.random_range(0.0..=ex), rng.random_range(0.0..=ey));
            let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
            let (a, b, c, d) = (jitter(dx, dy), jitter(dx, dy), jitter(dx, dy), jitter(dx, dy));
            let moved = [(a.0, a.1), (w - b.0, b.1), (w - c.0, h - c.1), (d.0, h - d.1)];
            if let Some(m) = homography(&corners, &moved) {
                compose(m);
            }
        }
        if policy.rotation && policy.rotation_max > 0.0 {
            let angle = rng.random_range(-policy.rotation_max..=policy.rotation_max).to_radians();
            compose(similarity(center, angle, 1.0, (0.0, 0.0)));
        }
        if policy.affine {
            let r = policy.affine_rotation;
            let angle = if r > 0.0 { rng.random_range(-r..=r).to_radians() } else { 0.0 };
            let t = policy.affine_translate;
            let shift = if t > 0.0 {
                (rng.random_range(-t..=t) * w, rng.random_range(-t..=t) * h)
            } else {
                (0.0, 0.0)
            };
            let (lo, hi) = policy.affine_scale;
            let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            compose(similarity(center, angle, scale, shift));
        }
        let flip = policy.flip_prob > 0.0 && rng.random_bool(policy.flip_prob);
        let cut = if policy.cut && policy.cut_max_fraction > 0.0 {
            let max_rows = (policy.cut_max_fraction * h).floor() as usize;
            let len = rng.random_range(0..=max_rows);
            let start = rng.random_range(0..=height - len);
            (len > 0).then_some((start, len))
        } else {
            None
        };
        let dropped = (0..length)
            .map(|_| policy.dropout_prob > 0.0 && rng.random_bool(policy.dropout_prob))
            .collect();
        Self {
            warp: if policy.warps() { warp } else { None },
            flip,
            cut,
            dropped,
        }
    }

    /// Applies the transform to one frame. `t` selects the dropout flag.
    pub fn apply_frame(&self, frame: &mut [f32], t: usize, height: usize, width: usize) {
        if self.dropped[t] {
            frame.fill(0.0);
            return;
        }
        if let Some(m) = self.warp {
            let inv = mat_inverse(&m).expect("augmentation warp is invertible");
            let src = frame.to_vec();
            warp_bilinear(&src, frame, height, width, &inv);
        }
        if self.flip {
            for row in frame.chunks_mut(width) {
                row.reverse();
            }
        }
        if let Some((start, len)) = self.cut {
            frame[start * width..(start + len) * width].fill(0.0);
        }
    }
}

/// Fills `dst` by sampling `src` at `inv · p` for each destination pixel
/// centre `p`; samples outside the frame read as zero.
fn warp_bilinear(src: &[f32], dst: &mut [f32], height: usize, width: usize, inv: &Mat3) {
    let at = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= height as i64 || c >= width as i64 {
            0.0
        } else {
            src[r as usize * width + c as usize] as f64
        }
    };
    for r in 0..height {
        for c in 0..width {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let z = inv[2][0] * x + inv[2][1] * y + inv[2][2];
            let sx = (inv[0][0] * x + inv[0][1] * y + inv[0][2]) / z - 0.5;
            let sy = (inv[1][0] * x + inv[1][1] * y + inv[1][2]) / z - 0.5;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            dst[r * width + c] = v.clamp(0.0, 1.0) as f32;
        }
    }
}

/// Augments a clip with parameters drawn once and shared by all frames.
pub fn augment<R: Rng + ?Sized>(clip: &Clip, policy: &AugmentPolicy, rng: &mut R) -> Clip {
    let transform = ClipTransform::draw(policy, clip.length, clip.height, clip.width, rng);
    let mut out = clip.clone();
    for t in 0..clip.length {
        transform.apply_frame(out.frame_mut(t), t, clip.height, clip.width);
    }
    out
}

/// Maps recorded frames onto the model's input grid: zero-pad centrally
/// to an integer multiple of the model size, then average-pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FitPlan {
    pub source: (usize, usize),
    pub target: (usize, usize),
    pub factor: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl FitPlan {
    pub fn new(source: (usize, usize), target: (usize, usize)) -> Result<Self> {
        if source.0 == 0 || source.1 == 0 || target.0 == 0 || target.1 == 0 {
            return Err(Error::Config("frame and model resolutions must be nonzero".into()));
        }
        let factor = source.0.div_ceil(target.0).max(source.1.div_ceil(target.1));
        Ok(Self {
            source,
            target,
            factor,
            pad_top: (target.0 * factor - source.0) / 2,
            pad_left: (target.1 * factor - source.1) / 2,
        })
    }

    /// Padded canvas size, `target * factor`.
    pub fn canvas(&self) -> (usize, usize) {
        (self.target.0 * self.factor, self.target.1 * self.factor)
    }

    pub fn apply(&self, frame: &[f32], out: &mut [f32]) {
        let (sh, sw) = self.source;
        let (th, tw) = self.target;
        let f = self.factor;
        let norm = 1.0 / (f * f) as f32;
        for r in 0..th {
            for c in 0..tw {
                let mut acc = 0.0;
                for dr in 0..f {
                    let y = (r * f + dr).wrapping_sub(self.pad_top);
                    if y >= sh {
                        continue;
                    }
                    for dc in 0..f {
                        let x = (c * f + dc).wrapping_sub(self.pad_left);
                        if x < sw {
                            acc += frame[y * sw + x];
                        }
                    }
                }
                out[r * tw + c] = acc * norm;
            }
        }
    }
}

/// Model input: `(B, T, H, W)` row-major plus per-sample metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub length: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub labels: Vec<FrailtyLabel>,
    pub participant_ids: Vec<String>,
}

pub fn assemble_batch(clips: &[Clip], fit: &FitPlan) -> Result<Batch> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Validation("cannot assemble an empty batch".into()))?;
    let length = first.length;
    let (th, tw) = fit.target;
    let mut data = vec![0.0; clips.len() * length * th * tw];
    for (b, clip) in clips.iter().enumerate() {
        if clip.length != length || (clip.height, clip.width) != fit.source {
            return Err(Error::Validation(format!(
                "clip `{}` is {}x{}x{}, expected {}x{}x{}",
                clip.participant_id, clip.length, clip.height, clip.width, length, fit.source.0, fit.source.1
            )));
        }
        for t in 0..length {
            let off = (b * length + t) * th * tw;
            fit.apply(clip.frame(t), &mut data[off..off + th * tw]);
        }
    }
    Ok(Batch {
        size: clips.len(),
        length,
        height: th,
        width: tw,
        data,
        labels: clips.iter().map(|c| c.label).collect(),
        participant_ids: clips.iter().map(|c| c.participant_id.clone()).collect(),
    })
}

/// Generator for one training iteration, derived from the master seed so
/// batches do not depend on what ran before.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SilhouetteFrame;

    /// Frame `t` encodes `t` in binary, so every frame is distinct.
    fn ramp_sequence(n: usize, h: usize, w: usize) -> GaitSequence {
        let frames = (0..n)
            .map(|t| {
                let mask: Vec<bool> = (0..h * w).map(|i| (t >> i) & 1 == 1).collect();
                SilhouetteFrame::from_mask(h, w, &mask, t)
            })
            .collect();
        GaitSequence::new("p", frames, FrailtyLabel::Prefrail, None).unwrap()
    }

    #[test]
    fn strided_indices_cases() {
        let idx = strided_indices(300, 60, 3, 0);
        assert_eq!(idx, (0..60).map(|i| 3 * i).collect::<Vec<_>>());
        assert_eq!(*idx.last().unwrap(), 177);
        assert_eq!(strided_indices(60, 60, 1, 0), (0..60).collect::<Vec<_>>());
        let wrapped = strided_indices(10, 60, 3, 0);
        assert_eq!(wrapped.len(), 60);
        assert!(wrapped.iter().enumerate().all(|(i, &v)| v == (3 * i) % 10));
    }

    #[test]
    fn eval_clip_wraps() {
        let seq = ramp_sequence(50, 4, 3);
        let clip = sample_eval_clip(&seq, 80).unwrap();
        assert_eq!(clip.length, 80);
        for t in 0..80 {
            assert_eq!(clip.frame(t), seq.frames()[t % 50].pixels());
        }
    }

    #[test]
    fn training_clip_stays_inside_when_it_fits() {
        let seq = ramp_sequence(300, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let clip = sample_training_clip(&seq, 60, 3, &mut rng).unwrap();
            let decode = |f: &[f32]| f.iter().enumerate().map(|(i, &v)| (v as usize) << i).sum::<usize>();
            let start = decode(clip.frame(0));
            assert!(start <= 300 - 178);
            for t in 0..60 {
                assert_eq!(decode(clip.frame(t)), start + 3 * t);
            }
        }
        assert!(sample_training_clip(&seq, 0, 3, &mut rng).is_err());
        assert!(sample_training_clip(&seq, 60, 0, &mut rng).is_err());
    }

    #[test]
    fn homography_maps_corners() {
        let from = [(0.0, 0.0), (4.0, 0.0), (4.0, 6.0), (0.0, 6.0)];
        let to = [(0.5, 0.2), (3.7, 0.4), (3.9, 5.5), (0.1, 5.8)];
        let m = homography(&from, &to).unwrap();
        for (p, q) in from.iter().zip(&to) {
            let z = m[2][0] * p.0 + m[2][1] * p.1 + m[2][2];
            let x = (m[0][0] * p.0 + m[0][1] * p.1 + m[0][2]) / z;
            let y = (m[1][0] * p.0 + m[1][1] * p.1 + m[1][2]) / z;
            assert!((x - q.0).abs() < 1e-9 && (y - q.1).abs() < 1e-9);
        }
        let inv = mat_inverse(&m).unwrap();
        let id = mat_mul(&m, &inv);
        for i in 0..3 {
            for j in 0..3 {
                assert!((id[i][j] - (i == j) as u8 as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fit_plan_pads_and_pools() {
        let plan = FitPlan::new((64, 44), (32, 32)).unwrap();
        assert_eq!((plan.factor, plan.pad_top, plan.pad_left), (2, 0, 10));
        let frame = vec![1.0; 64 * 44];
        let mut out = vec![0.0; 32 * 32];
        plan.apply(&frame, &mut out);
        // Columns 5..27 cover source pixels 0..44 exactly.
        for r in 0..32 {
            for c in 0..32 {
                let expect = if (5..27).contains(&c) { 1.0 } else { 0.0 };
                assert_eq!(out[r * 32 + c], expect);
            }
        }
        let same = FitPlan::new((8, 8), (8, 8)).unwrap();
        let frame: Vec<f32> = (0..64).map(|i| i as f32).collect();
        let mut out = vec![0.0; 64];
        same.apply(&frame, &mut out);
        assert_eq!(out, frame);
    }
}
