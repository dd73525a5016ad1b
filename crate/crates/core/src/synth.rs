//! Procedural walking silhouettes with class-dependent gait.
//!
//! A walker is a head circle, a torso ellipse and four capsules (legs and
//! arms) swinging about the hip and shoulder. Frail walkers step slower,
//! with shorter swings and more forward lean. Prefrail ranges overlap both
//! neighbours.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    frame_file_name, write_manifest, DatasetManifest, FrailtyLabel, FriedScore, ManifestEntry,
    SilhouetteFrame,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkerParams {
    /// Peak hip swing angle in radians.
    pub stride_amplitude: f64,
    /// Gait phase advance per frame, radians.
    pub cadence: f64,
    /// Forward tilt of the torso, radians.
    pub torso_lean: f64,
    /// Standing height in pixels.
    pub height: f64,
    /// Per-pixel flip probability.
    pub noise: f64,
}

/// Label-conditioned sampling ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassBands {
    pub cadence: Range<f64>,
    pub stride_amplitude: Range<f64>,
    pub torso_lean: Range<f64>,
}

pub fn class_bands(label: FrailtyLabel) -> ClassBands {
    match label {
        FrailtyLabel::NonFrail => ClassBands {
            cadence: 0.20..0.26,
            stride_amplitude: 0.45..0.60,
            torso_lean: 0.0..0.05,
        },
        FrailtyLabel::Prefrail => ClassBands {
            cadence: 0.14..0.22,
            stride_amplitude: 0.30..0.50,
            torso_lean: 0.03..0.12,
        },
        FrailtyLabel::Frail => ClassBands {
            cadence: 0.10..0.15,
            stride_amplitude: 0.18..0.32,
            torso_lean: 0.10..0.25,
        },
    }
}

/// Draws one walker for a frame of height `frame_height`; height is
/// 78–90% of the frame for every class.
pub fn class_params<R: Rng + ?Sized>(
    label: FrailtyLabel,
    frame_height: usize,
    noise: f64,
    rng: &mut R,
) -> WalkerParams {
    let bands = class_bands(label);
    WalkerParams {
        stride_amplitude: rng.random_range(bands.stride_amplitude),
        cadence: rng.random_range(bands.cadence),
        torso_lean: rng.random_range(bands.torso_lean),
        height: rng.random_range(0.78..0.90) * frame_height as f64,
        noise,
    }
}

#[derive(Clone, Copy, Debug)]
struct Capsule {
    a: (f64, f64),
    b: (f64, f64),
    radius: f64,
}

impl Capsule {
    fn contains(&self, p: (f64, f64)) -> bool {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (qx, qy) = (self.a.0 + t * dx - p.0, self.a.1 + t * dy - p.1);
        qx * qx + qy * qy <= self.radius * self.radius
    }

    fn area(&self) -> f64 {
        let len = ((self.b.0 - self.a.0).powi(2) + (self.b.1 - self.a.1).powi(2)).sqrt();
        2.0 * self.radius * len + PI * self.radius * self.radius
    }
}

/// Body parts of one pose, in pixel coordinates (x right, y down).
#[derive(Clone, Debug)]
pub struct WalkerShape {
    head_center: (f64, f64),
    head_radius: f64,
    torso_center: (f64, f64),
    torso_axis: (f64, f64),
    torso_half_length: f64,
    torso_half_width: f64,
    limbs: [Capsule; 4],
}

impl WalkerShape {
    pub fn pose(phase: f64, params: &WalkerParams, height: usize, width: usize) -> Self {
        let h = params.height;
        let cx = width as f64 / 2.0;
        let top = (height as f64 - h) / 2.0;
        let leg = 0.47 * h;
        let torso = 0.33 * h;
        let head_radius = 0.08 * h;
        let hip = (cx, top + h - leg);
        // Unit vector from hip to shoulder.
        let axis = (params.torso_lean.sin(), -params.torso_lean.cos());
        let shoulder = (hip.0 + 0.9 * torso * axis.0, hip.1 + 0.9 * torso * axis.1);
        let along = |from: (f64, f64), dist: f64| (from.0 + dist * axis.0, from.1 + dist * axis.1);

        let swing = params.stride_amplitude * phase.sin();
        let limb = |origin: (f64, f64), angle: f64, length: f64, radius: f64| Capsule {
            a: origin,
            b: (origin.0 + length * angle.sin(), origin.1 + length * angle.cos()),
            radius,
        };
        let arm_swing = 0.6 * swing;
        WalkerShape {
            head_center: along(hip, torso + 1.1 * head_radius),
            head_radius,
            torso_center: along(hip, torso / 2.0),
            torso_axis: axis,
            torso_half_length: torso / 2.0,
            torso_half_width: 0.09 * h,
            limbs: [
                limb(hip, swing, leg, 0.045 * h),
                limb(hip, -swing, leg, 0.045 * h),
                limb(shoulder, -arm_swing, 0.3 * h, 0.03 * h),
                limb(shoulder, arm_swing, 0.3 * h, 0.03 * h),
            ],
        }
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let (hx, hy) = (p.0 - self.head_center.0, p.1 - self.head_center.1);
        if hx * hx + hy * hy <= self.head_radius * self.head_radius {
            return true;
        }
        let (dx, dy) = (p.0 - self.torso_center.0, p.1 - self.torso_center.1);
        let u = dx * self.torso_axis.0 + dy * self.torso_axis.1;
        let v = -dx * self.torso_axis.1 + dy * self.torso_axis.0;
        if (u / self.torso_half_length).powi(2) + (v / self.torso_half_width).powi(2) <= 1.0 {
            return true;
        }
        self.limbs.iter().any(|c| c.contains(p))
    }

    /// Sum of the component areas, an upper bound on the union.
    pub fn component_area(&self) -> f64 {
        PI * self.head_radius.powi(2)
            + PI * self.torso_half_length * self.torso_half_width
            + self.limbs.iter().map(Capsule::area).sum::<f64>()
    }
}

/// Noise-free mask sampled at pixel centres, row-major.
pub fn render_walker(phase: f64, params: &WalkerParams, height: usize, width: usize) -> Vec<bool> {
    let shape = WalkerShape::pose(phase, params, height, width);
    (0..height * width)
        .map(|i| shape.contains(((i % width) as f64 + 0.5, (i / width) as f64 + 0.5)))
        .collect()
}

pub fn generate_walker_frame<R: Rng + ?Sized>(
    phase: f64,
    params: &WalkerParams,
    height: usize,
    width: usize,
    timestamp: usize,
    rng: &mut R,
) -> SilhouetteFrame {
    let mut mask = render_walker(phase, params, height, width);
    if params.noise > 0.0 {
        for m in &mut mask {
            if rng.random_bool(params.noise) {
                *m = !*m;
            }
        }
    }
    SilhouetteFrame::from_mask(height, width, &mask, timestamp)
}

/// Frames of one walker, starting at a random gait phase.
pub fn generate_walker_sequence<R: Rng + ?Sized>(
    params: &WalkerParams,
    frames: usize,
    height: usize,
    width: usize,
    rng: &mut R,
) -> Vec<SilhouetteFrame> {
    let phase0 = rng.random_range(0.0..TAU);
    (0..frames)
        .map(|t| generate_walker_frame(phase0 + params.cadence * t as f64, params, height, width, t, rng))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortConfig {
    pub n_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub noise: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_per_class: 10,
            frames: 300,
            height: 64,
            width: 44,
            seed: 0,
            noise: 0.0,
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Seed of the walker at `index`, independent of generation order.
fn walker_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn fried_for<R: Rng + ?Sized>(label: FrailtyLabel, rng: &mut R) -> FriedScore {
    let score = match label {
        FrailtyLabel::NonFrail => 0,
        FrailtyLabel::Prefrail => rng.random_range(1..=2),
        FrailtyLabel::Frail => rng.random_range(3..=5),
    };
    FriedScore::new(score).expect("score within 0..=5")
}

/// Writes `n_per_class` walkers of each class under `out_dir` together
/// with `manifest.csv`, and returns the manifest. Participant `i` has
/// label `i mod 3`.
pub fn generate_cohort(config: &CohortConfig, out_dir: &Path) -> Result<DatasetManifest> {
    if config.n_per_class == 0 || config.frames == 0 {
        return Err(Error::Validation("cohort needs at least one walker and one frame".into()));
    }
    if !(0.0..=1.0).contains(&config.noise) {
        return Err(Error::Validation(format!("noise {} outside [0, 1]", config.noise)));
    }
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let mut entries = Vec::new();
    for i in 0..config.n_per_class * 3 {
        let label = FrailtyLabel::ALL[i % 3];
        let mut rng = ChaCha8Rng::seed_from_u64(walker_seed(config.seed, i));
        let params = class_params(label, config.height, config.noise, &mut rng);
        let fried = fried_for(label, &mut rng);
        let id = format!("p{i:03}");
        let frame_dir = PathBuf::from("frames").join(&id);
        let dir = out_dir.join(&frame_dir);
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        let frames = generate_walker_sequence(&params, config.frames, config.height, config.width, &mut rng);
        for frame in &frames {
            frame.write_png(&dir.join(frame_file_name(frame.timestamp())))?;
        }
        entries.push(ManifestEntry {
            participant_id: id,
            label,
            fried_score: Some(fried),
            frame_dir,
            frame_count: config.frames,
        });
    }
    let manifest = DatasetManifest {
        entries,
        resolution: (config.height, config.width),
        base_dir: out_dir.to_path_buf(),
    };
    write_manifest(&manifest, &out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
