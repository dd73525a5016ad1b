//! Gait backbones with named parameter groups, freezing presets and
//! checkpoints.

pub mod checkpoint;
pub mod deepgait;
pub mod layers;
pub mod store;
pub mod swin;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use autograd::{Float, Tensor};

use crate::error::{Error, Result};
use deepgait::DeepGaitV2;
use store::{Init, ParamId, ParamStore, Session};
use swin::SwinGait;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackboneKind {
    SwinGait,
    DeepGaitV2,
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SwinGait => "swingait",
            Self::DeepGaitV2 => "deepgaitv2",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "swingait" | "swin" => Ok(Self::SwinGait),
            "deepgaitv2" | "deepgait" => Ok(Self::DeepGaitV2),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwinConfig {
    /// Model input `(H, W)`.
    pub input: (usize, usize),
    pub stem_channels: [usize; 2],
    /// Side of the square patch embedding.
    pub patch: usize,
    /// Token width of the two stages; merging maps `4 * dims[0]` to `dims[1]`.
    pub dims: [usize; 2],
    pub depths: [usize; 2],
    pub heads: [usize; 2],
    pub window: usize,
    /// Half-window shift on every second block.
    pub shift: bool,
    pub mlp_ratio: usize,
}

impl SwinConfig {
    pub fn toy() -> Self {
        Self {
            input: (32, 32),
            stem_channels: [4, 8],
            patch: 4,
            dims: [16, 32],
            depths: [2, 2],
            heads: [2, 4],
            window: 4,
            shift: true,
            mlp_ratio: 2,
        }
    }

    pub fn full() -> Self {
        Self {
            input: (64, 64),
            stem_channels: [32, 64],
            patch: 2,
            dims: [128, 256],
            depths: [2, 2],
            heads: [4, 8],
            window: 8,
            shift: true,
            mlp_ratio: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepGaitConfig {
    pub input: (usize, usize),
    pub stem_channels: usize,
    /// Widths of layers 1–4.
    pub channels: [usize; 4],
    pub blocks: [usize; 4],
    pub strides: [usize; 4],
    pub temporal_kernel: usize,
    /// Start every residual branch at zero (last norm scale 0).
    pub zero_init_residual: bool,
}

impl DeepGaitConfig {
    pub fn toy() -> Self {
        Self {
            input: (32, 32),
            stem_channels: 4,
            channels: [4, 8, 16, 32],
            blocks: [1, 1, 1, 1],
            strides: [1, 2, 2, 1],
            temporal_kernel: 3,
            zero_init_residual: false,
        }
    }

    pub fn full() -> Self {
        Self {
            input: (64, 44),
            stem_channels: 64,
            channels: [64, 128, 256, 512],
            blocks: [1, 4, 4, 1],
            strides: [1, 2, 2, 1],
            temporal_kernel: 3,
            zero_init_residual: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackboneConfig {
    SwinGait(SwinConfig),
    DeepGaitV2(DeepGaitConfig),
}

impl BackboneConfig {
    pub fn toy(kind: BackboneKind) -> Self {
        match kind {
            BackboneKind::SwinGait => Self::SwinGait(SwinConfig::toy()),
            BackboneKind::DeepGaitV2 => Self::DeepGaitV2(DeepGaitConfig::toy()),
        }
    }

    pub fn full(kind: BackboneKind) -> Self {
        match kind {
            BackboneKind::SwinGait => Self::SwinGait(SwinConfig::full()),
            BackboneKind::DeepGaitV2 => Self::DeepGaitV2(DeepGaitConfig::full()),
        }
    }

    /// Looks up `toy` or `full`.
    pub fn preset(kind: BackboneKind, scale: &str) -> Result<Self> {
        match scale {
            "toy" => Ok(Self::toy(kind)),
            "full" => Ok(Self::full(kind)),
            other => Err(Error::Config(format!("unknown backbone scale `{other}` (toy, full)"))),
        }
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            Self::SwinGait(_) => BackboneKind::SwinGait,
            Self::DeepGaitV2(_) => BackboneKind::DeepGaitV2,
        }
    }

    pub fn input(&self) -> (usize, usize) {
        match self {
            Self::SwinGait(c) => c.input,
            Self::DeepGaitV2(c) => c.input,
        }
    }

    /// Backbone group names, shallow to deep.
    pub fn groups(&self) -> &'static [&'static str] {
        match self {
            Self::SwinGait(_) => &swin::GROUPS,
            Self::DeepGaitV2(_) => &deepgait::GROUPS,
        }
    }

    /// `(C, H', W')` of the output feature map.
    pub fn output_shape(&self) -> (usize, usize, usize) {
        match self {
            Self::SwinGait(c) => (c.dims[1], c.input.0 / c.patch / 2, c.input.1 / c.patch / 2),
            Self::DeepGaitV2(c) => {
                let down: usize = c.strides.iter().product();
                (c.channels[3], c.input.0 / down, c.input.1 / down)
            }
        }
    }

    /// `(C, H, W)` of a named layer output, channels first.
    pub fn layer_shape(&self, layer: &str) -> Option<(usize, usize, usize)> {
        let pos = self.groups().iter().position(|g| *g == layer)?;
        Some(match self {
            Self::SwinGait(c) => {
                let (h, w) = c.input;
                let g = (h / c.patch, w / c.patch);
                match pos {
                    0 => (c.stem_channels[1], h, w),
                    1 => (c.dims[0], g.0, g.1),
                    _ => (c.dims[1], g.0 / 2, g.1 / 2),
                }
            }
            Self::DeepGaitV2(c) => {
                if pos == 0 {
                    (c.stem_channels, c.input.0, c.input.1)
                } else {
                    let down: usize = c.strides[..pos].iter().product();
                    (c.channels[pos - 1], c.input.0 / down, c.input.1 / down)
                }
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        match self {
            Self::SwinGait(c) => {
                let (h, w) = c.input;
                if [h, w, c.patch, c.window, c.mlp_ratio].contains(&0)
                    || c.stem_channels.contains(&0)
                    || c.dims.contains(&0)
                    || c.heads.contains(&0)
                {
                    return err("swin sizes must be positive".into());
                }
                if h % c.patch != 0 || w % c.patch != 0 {
                    return err(format!("input {h}x{w} is not divisible by patch {}", c.patch));
                }
                let (gh, gw) = (h / c.patch, w / c.patch);
                if gh % 2 != 0 || gw % 2 != 0 {
                    return err(format!("token grid {gh}x{gw} cannot be merged 2x2"));
                }
                for (gh, gw) in [(gh, gw), (gh / 2, gw / 2)] {
                    if gh % c.window != 0 || gw % c.window != 0 {
                        return err(format!("window {} does not divide token grid {gh}x{gw}", c.window));
                    }
                }
                if c.shift && c.window < 2 {
                    return err("shifted windows need window >= 2".into());
                }
                for (d, h) in c.dims.iter().zip(&c.heads) {
                    if d % h != 0 {
                        return err(format!("dim {d} is not divisible by {h} heads"));
                    }
                }
            }
            Self::DeepGaitV2(c) => {
                let (h, w) = c.input;
                if [h, w, c.stem_channels].contains(&0)
                    || c.channels.contains(&0)
                    || c.blocks.contains(&0)
                    || c.strides.contains(&0)
                {
                    return err("deepgait sizes must be positive".into());
                }
                let down: usize = c.strides.iter().product();
                if h % down != 0 || w % down != 0 {
                    return err(format!("input {h}x{w} is not divisible by total stride {down}"));
                }
                if c.temporal_kernel % 2 == 0 {
                    return err(format!("temporal kernel {} must be odd", c.temporal_kernel));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Backbone {
    SwinGait(SwinGait),
    DeepGaitV2(DeepGaitV2),
}

impl Backbone {
    pub fn new<F: Float>(init: &mut Init<'_, F>, config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        Ok(match config {
            BackboneConfig::SwinGait(c) => Self::SwinGait(SwinGait::new(init, c)),
            BackboneConfig::DeepGaitV2(c) => Self::DeepGaitV2(DeepGaitV2::new(init, c)),
        })
    }

    /// `x: [B*T, 1, H, W]` to the frame-major feature map `[B*T, C, H', W']`.
    pub fn forward<'g, F: Float>(&self, s: &Session<'g, '_, F>, x: Tensor<'g, F>, frames: usize) -> Tensor<'g, F> {
        match self {
            Self::SwinGait(b) => b.forward(s, x),
            Self::DeepGaitV2(b) => b.forward(s, x, frames),
        }
    }
}

/// Group name of the classification head.
pub const HEAD_GROUP: &str = "head";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub params: Vec<ParamId>,
    pub elements: usize,
}

/// Partition of a model's parameters into named groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterGroups {
    pub groups: Vec<ParamGroup>,
}

impl ParameterGroups {
    pub fn names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn total_elements(&self) -> usize {
        self.groups.iter().map(|g| g.elements).sum()
    }
}

pub fn parameter_groups<F: Float>(store: &ParamStore<F>) -> ParameterGroups {
    ParameterGroups {
        groups: store
            .groups()
            .into_iter()
            .map(|name| {
                let params = store.group_params(&name);
                let elements = params.iter().map(|&p| store.value(p).len()).sum();
                ParamGroup { name, params, elements }
            })
            .collect(),
    }
}

/// Named freezing strategy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezeConfig {
    pub name: String,
    pub kind: BackboneKind,
    pub frozen: BTreeSet<String>,
}

impl FreezeConfig {
    /// `M1`–`M5` freeze a growing prefix of the SwinGait groups (M1 none,
    /// M5 all four); `D0`–`D5` do the same for DeepGaitV2 layers 0–4.
    pub fn preset(name: &str) -> Result<Self> {
        let upper = name.trim().to_ascii_uppercase();
        let (kind, groups, depth): (_, &[&str], _) = match upper.as_bytes() {
            [b'M', d @ b'1'..=b'5'] => (BackboneKind::SwinGait, &swin::GROUPS, (d - b'1') as usize),
            [b'D', d @ b'0'..=b'5'] => (BackboneKind::DeepGaitV2, &deepgait::GROUPS, (d - b'0') as usize),
            _ => return Err(Error::Config(format!("unknown freeze config `{name}` (M1–M5, D0–D5)"))),
        };
        Ok(Self {
            name: upper,
            kind,
            frozen: groups[..depth].iter().map(|g| g.to_string()).collect(),
        })
    }

    pub fn all_presets() -> Vec<Self> {
        ["M1", "M2", "M3", "M4", "M5", "D0", "D1", "D2", "D3", "D4", "D5"]
            .iter()
            .map(|n| Self::preset(n).expect("known preset"))
            .collect()
    }
}

/// Resolves a freeze config against a model's groups, returning the set of
/// frozen group names. Unknown groups and freezing the head are errors.
pub fn apply_freeze(groups: &ParameterGroups, config: &FreezeConfig) -> Result<BTreeSet<String>> {
    for g in &config.frozen {
        if g == HEAD_GROUP {
            return Err(Error::Config("the head group cannot be frozen".into()));
        }
        if groups.get(g).is_none() {
            return Err(Error::Config(format!(
                "freeze config {} names unknown group `{g}` (model has {:?})",
                config.name,
                groups.names()
            )));
        }
    }
    Ok(config.frozen.clone())
}

#[cfg(test)]
mod tests {
    use super::store::Mode;
    use super::*;
    use crate::model::{GaitModel, ModelConfig};
    use crate::objective::{joint_loss, ClassWeights, LossConfig};
    use crate::data::FrailtyLabel::{self, *};
    use autograd::{Graph, NdArray};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const KINDS: [BackboneKind; 2] = [BackboneKind::SwinGait, BackboneKind::DeepGaitV2];

    fn toy_model(kind: BackboneKind, seed: u64) -> GaitModel<f64> {
        GaitModel::new(ModelConfig::toy(kind), seed).unwrap()
    }

    fn random_input(b: usize, t: usize, (h, w): (usize, usize), seed: u64) -> NdArray<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NdArray::from_fn(vec![b, t, h, w], |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
    }

    fn features(model: &GaitModel<f64>, x: &NdArray<f64>) -> NdArray<f64> {
        let g = Graph::new();
        let s = Session::new(&g, &model.store, Mode::Eval, Default::default());
        model.forward(&s, g.constant(x.clone())).features.value().as_ref().clone()
    }

    #[test]
    fn output_shapes_follow_the_strides() {
        assert_eq!(BackboneConfig::toy(BackboneKind::SwinGait).output_shape(), (32, 4, 4));
        assert_eq!(BackboneConfig::toy(BackboneKind::DeepGaitV2).output_shape(), (32, 8, 8));
        assert_eq!(BackboneConfig::full(BackboneKind::SwinGait).output_shape(), (256, 16, 16));
        assert_eq!(BackboneConfig::full(BackboneKind::DeepGaitV2).output_shape(), (512, 16, 11));
        for kind in KINDS {
            BackboneConfig::full(kind).validate().unwrap();
            let model = toy_model(kind, 0);
            let cfg = &model.config.backbone;
            let (b, t) = (2, 3);
            let x = random_input(b, t, cfg.input(), 1);
            let (c, h, w) = cfg.output_shape();
            assert_eq!(features(&model, &x).shape(), &[b * t, c, h, w]);
            for layer in cfg.groups() {
                let g = Graph::new();
                let s = Session::new(&g, &model.store, Mode::Eval, Default::default()).with_tap(layer);
                model.forward(&s, g.constant(x.clone()));
                let (c, h, w) = cfg.layer_shape(layer).unwrap();
                assert_eq!(s.tapped().unwrap().shape(), vec![b * t, c, h, w], "{kind} {layer}");
            }
            assert_eq!(cfg.layer_shape(HEAD_GROUP), None);
        }
    }

    #[test]
    fn zero_input_gives_finite_features() {
        for kind in KINDS {
            let model = toy_model(kind, 2);
            let x = NdArray::zeros(vec![2, 4, 32, 32]);
            assert!(features(&model, &x).data().iter().all(|v| v.is_finite()));
            let g = Graph::new();
            let s = Session::new(&g, &model.store, Mode::Train, Default::default());
            let out = model.forward(&s, g.constant(x));
            assert!(out.head.logits.value().data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn invalid_geometry_is_a_config_error() {
        let mut swin = SwinConfig::toy();
        swin.window = 3;
        assert!(matches!(BackboneConfig::SwinGait(swin).validate(), Err(Error::Config(_))));
        let mut swin = SwinConfig::toy();
        swin.heads = [3, 4];
        assert!(matches!(BackboneConfig::SwinGait(swin).validate(), Err(Error::Config(_))));
        let mut deep = DeepGaitConfig::toy();
        deep.temporal_kernel = 2;
        assert!(matches!(BackboneConfig::DeepGaitV2(deep).validate(), Err(Error::Config(_))));
        let mut deep = DeepGaitConfig::toy();
        deep.input = (30, 32);
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init::new(&mut store, &mut rng, "");
        assert!(Backbone::new(&mut init, &BackboneConfig::DeepGaitV2(deep)).is_err());
        assert!("resnet".parse::<BackboneKind>().is_err());
        assert_eq!("Swin".parse::<BackboneKind>().unwrap(), BackboneKind::SwinGait);
    }

    /// Output frames whose features changed after perturbing frame `t0`.
    fn changed_frames(model: &GaitModel<f64>, t: usize, t0: usize) -> Vec<usize> {
        let (h, w) = model.config.backbone.input();
        let x = random_input(1, t, (h, w), 6);
        let mut y = x.clone();
        for v in &mut y.data_mut()[t0 * h * w..(t0 + 1) * h * w] {
            *v = 1.0 - *v;
        }
        let (fx, fy) = (features(model, &x), features(model, &y));
        let per = fx.len() / t;
        (0..t)
            .filter(|&f| fx.data()[f * per..(f + 1) * per] != fy.data()[f * per..(f + 1) * per])
            .collect()
    }

    #[test]
    fn temporal_receptive_field() {
        let swin = toy_model(BackboneKind::SwinGait, 3);
        assert_eq!(changed_frames(&swin, 6, 2), vec![2]);
        // Three pseudo-3D blocks with temporal kernel 3 reach three frames each way.
        let deep = toy_model(BackboneKind::DeepGaitV2, 3);
        assert_eq!(changed_frames(&deep, 9, 0), vec![0, 1, 2, 3]);
        assert_eq!(changed_frames(&deep, 9, 4), (1..=7).collect::<Vec<_>>());
    }

    #[test]
    fn groups_partition_the_parameters() {
        for (kind, n) in [(BackboneKind::SwinGait, 4), (BackboneKind::DeepGaitV2, 5)] {
            let model = toy_model(kind, 0);
            let groups = model.groups();
            assert_eq!(groups.groups.len(), n + 1);
            let mut names = groups.names();
            names.sort();
            let mut want: Vec<&str> = model.config.backbone.groups().to_vec();
            want.push(HEAD_GROUP);
            want.sort();
            assert_eq!(names, want);
            assert_eq!(groups.total_elements(), model.store.num_elements());
            let mut seen = vec![0; model.store.params().len()];
            for g in &groups.groups {
                assert!(g.elements > 0, "{}", g.name);
                for &p in &g.params {
                    seen[p] += 1;
                    assert_eq!(model.store.param(p).group, g.name);
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn freeze_presets_freeze_growing_prefixes() {
        let sizes: Vec<(String, usize)> = FreezeConfig::all_presets()
            .into_iter()
            .map(|f| (f.name.clone(), f.frozen.len()))
            .collect();
        let want = [("M1", 0), ("M2", 1), ("M3", 2), ("M4", 3), ("M5", 4), ("D0", 0), ("D1", 1), ("D2", 2), ("D3", 3), ("D4", 4), ("D5", 5)];
        assert_eq!(sizes, want.map(|(n, k)| (n.to_string(), k)));
        let m3 = FreezeConfig::preset("m3").unwrap();
        assert_eq!(m3.kind, BackboneKind::SwinGait);
        assert_eq!(m3.frozen, ["cnn_stem", "patch_embed"].map(String::from).into());
        let d2 = FreezeConfig::preset("D2").unwrap();
        assert_eq!(d2.frozen, ["layer0", "layer1"].map(String::from).into());
        for bad in ["M0", "M6", "D6", "X1", ""] {
            assert!(matches!(FreezeConfig::preset(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn apply_freeze_checks_group_names() {
        let swin = toy_model(BackboneKind::SwinGait, 0).groups();
        let deep = toy_model(BackboneKind::DeepGaitV2, 0).groups();
        assert_eq!(apply_freeze(&swin, &FreezeConfig::preset("M4").unwrap()).unwrap().len(), 3);
        assert!(matches!(apply_freeze(&swin, &FreezeConfig::preset("D2").unwrap()), Err(Error::Config(_))));
        let mut head = FreezeConfig::preset("D1").unwrap();
        head.frozen.insert(HEAD_GROUP.into());
        assert!(matches!(apply_freeze(&deep, &head), Err(Error::Config(_))));
    }

    #[test]
    fn initialization_is_deterministic() {
        for kind in KINDS {
            let (a, b, c) = (toy_model(kind, 11), toy_model(kind, 11), toy_model(kind, 12));
            let values = |m: &GaitModel<f64>| m.store.params().iter().map(|p| p.value.data().to_vec()).collect::<Vec<_>>();
            assert_eq!(values(&a), values(&b));
            assert_ne!(values(&a), values(&c));
            let x = random_input(1, 3, a.config.backbone.input(), 7);
            assert_eq!(features(&a, &x).data(), features(&b, &x).data());
        }
    }

    #[test]
    fn fully_frozen_backbone_only_trains_the_head() {
        for (kind, preset) in [(BackboneKind::SwinGait, "M5"), (BackboneKind::DeepGaitV2, "D5")] {
            let model = toy_model(kind, 0);
            let frozen = apply_freeze(&model.groups(), &FreezeConfig::preset(preset).unwrap()).unwrap();
            let g = Graph::new();
            let s = Session::new(&g, &model.store, Mode::Train, frozen);
            let out = model.forward(&s, g.constant(random_input(2, 3, model.config.backbone.input(), 8)));
            assert!(!out.features.requires_grad());
            let leaves = s.trainable_leaves();
            assert!(!leaves.is_empty());
            assert!(leaves.iter().all(|(id, _)| model.store.param(*id).group == HEAD_GROUP));
            assert!(s.take_norm_updates().len() == 1, "only the neck updates running statistics");
        }
    }

    fn loss_value(model: &GaitModel<f64>, x: &NdArray<f64>, ys: &[FrailtyLabel]) -> f64 {
        let g = Graph::new();
        let s = Session::new(&g, &model.store, Mode::Train, Default::default());
        let out = model.forward(&s, g.constant(x.clone()));
        joint_loss(&out.head, ys, &LossConfig::default(), &ClassWeights::uniform()).total.value().item()
    }

    #[test]
    fn backbone_gradients_match_central_differences() {
        for kind in KINDS {
            let mut model = toy_model(kind, 21);
            let ys = [NonFrail, Frail, Prefrail, Frail];
            // Continuous values keep the max pools free of exact ties.
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let (h, w) = model.config.backbone.input();
            let x = NdArray::from_fn(vec![ys.len(), 2, h, w], |_| rng.random_range(0.0..1.0));
            let g = Graph::new();
            let s = Session::new(&g, &model.store, Mode::Train, Default::default());
            let out = model.forward(&s, g.constant(x.clone()));
            let total = joint_loss(&out.head, &ys, &LossConfig::default(), &ClassWeights::uniform()).total;
            let grads = g.backward(total);
            let analytic: Vec<(ParamId, NdArray<f64>)> = s
                .trainable_leaves()
                .into_iter()
                .filter(|(id, _)| model.store.param(*id).group != HEAD_GROUP)
                .map(|(id, t)| (id, grads.get(t).cloned().unwrap_or_else(|| NdArray::zeros(t.shape()))))
                .collect();
            drop(grads);
            drop(s);
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            let h = 1e-6;
            let mut checked = 0;
            while checked < 16 {
                let (id, grad) = &analytic[rng.random_range(0..analytic.len())];
                let k = rng.random_range(0..grad.len());
                let orig = model.store.value(*id).data()[k];
                model.store.value_mut(*id).data_mut()[k] = orig + h;
                let up = loss_value(&model, &x, &ys);
                model.store.value_mut(*id).data_mut()[k] = orig - h;
                let down = loss_value(&model, &x, &ys);
                model.store.value_mut(*id).data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = grad.data()[k];
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                assert!(rel < 1e-3, "{kind} {} [{k}]: analytic {a} numeric {numeric}", model.store.param(*id).name);
                checked += 1;
            }
        }
    }
}
