//! A backbone and a classification head over one parameter store.

use std::path::Path;

use autograd::{Float, NdArray, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbones::store::{Init, ParamStore, Session};
use crate::backbones::{checkpoint, parameter_groups, HEAD_GROUP, Backbone, BackboneConfig, BackboneKind, ParameterGroups};
use crate::error::Result;
use crate::objective::{Head, HeadConfig, HeadOutput};
use crate::pipeline::Batch;
use crate::sealed::digest_hex;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    /// Toy backbone with the matching head defaults.
    pub fn toy(kind: BackboneKind) -> Self {
        Self {
            backbone: BackboneConfig::toy(kind),
            head: HeadConfig::default(),
        }
    }

    /// Published-scale backbone with 16 parts.
    pub fn full(kind: BackboneKind) -> Self {
        Self {
            backbone: BackboneConfig::full(kind),
            head: HeadConfig { parts: 16, embed_dim: 256 },
        }
    }

    /// Hash of the architecture, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        digest_hex(format!("{self:?}").as_bytes())
    }
}

/// Forward results for one batch.
pub struct ModelOutput<'g, F: Float> {
    /// Backbone output `[B*T, C, H', W']`.
    pub features: Tensor<'g, F>,
    pub head: HeadOutput<'g, F>,
}

#[derive(Clone, Debug)]
pub struct GaitModel<F: Float> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    backbone: Backbone,
    head: Head,
}

impl<F: Float> GaitModel<F> {
    /// Builds and randomly initializes; invalid geometry is a config error.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (backbone, head) = {
            let mut init = Init::new(&mut store, &mut rng, "");
            let backbone = Backbone::new(&mut init, &config.backbone)?;
            let (c, h, _) = config.backbone.output_shape();
            (backbone, Head::new(&mut init, c, h, &config.head)?)
        };
        Ok(Self {
            config,
            store,
            backbone,
            head,
        })
    }

    pub fn kind(&self) -> BackboneKind {
        self.config.backbone.kind()
    }

    pub fn groups(&self) -> ParameterGroups {
        parameter_groups(&self.store)
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    /// `input: [B, T, H, W]` at the model resolution.
    pub fn forward<'g>(&self, s: &Session<'g, '_, F>, input: Tensor<'g, F>) -> ModelOutput<'g, F> {
        let shape = input.shape();
        let (b, t, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let frames = input.reshape(&[b * t, 1, h, w]);
        let features = self.backbone.forward(s, frames, t);
        let head = self.head.forward(s, features, b, t);
        ModelOutput { features, head }
    }

    pub fn forward_batch<'g>(&self, s: &Session<'g, '_, F>, batch: &Batch) -> ModelOutput<'g, F> {
        let x = NdArray::from_vec(
            vec![batch.size, batch.length, batch.height, batch.width],
            batch.data.iter().map(|&v| F::of(v as f64)).collect(),
        );
        self.forward(s, s.graph().constant(x))
    }

    /// Same architecture and values in another precision.
    pub fn cast<G: Float>(&self) -> GaitModel<G> {
        GaitModel {
            config: self.config.clone(),
            store: self.store.cast(),
            backbone: self.backbone.clone(),
            head: self.head.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store, &self.config.fingerprint())
    }

    /// Refuses checkpoints of a different architecture.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let fingerprint = self.config.fingerprint();
        checkpoint::load(path, &mut self.store, Some(&fingerprint)).map(|_| ())
    }

    /// Loads every backbone tensor by name from a checkpoint of any head.
    pub fn load_backbone(&mut self, path: &Path) -> Result<()> {
        checkpoint::load_except_group(path, &mut self.store, HEAD_GROUP).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::store::Mode;
    use crate::error::Error;
    use autograd::Graph;

    fn logits(model: &GaitModel<f32>) -> Vec<f32> {
        let (h, w) = model.config.backbone.input();
        let x = NdArray::from_fn(vec![2, 3, h, w], |i| ((i * 13) % 5) as f32 / 4.0);
        let g = Graph::new();
        let s = Session::new(&g, &model.store, Mode::Eval, Default::default());
        model.forward(&s, g.constant(x)).head.logits.value().data().to_vec()
    }

    #[test]
    fn checkpoint_restores_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        for kind in [BackboneKind::SwinGait, BackboneKind::DeepGaitV2] {
            let trained = GaitModel::<f32>::new(ModelConfig::toy(kind), 1).unwrap();
            trained.save(&path).unwrap();
            let mut fresh = GaitModel::<f32>::new(ModelConfig::toy(kind), 2).unwrap();
            assert_ne!(logits(&fresh), logits(&trained));
            fresh.load(&path).unwrap();
            assert_eq!(logits(&fresh), logits(&trained));
        }
    }

    #[test]
    fn checkpoint_of_another_architecture_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        GaitModel::<f32>::new(ModelConfig::toy(BackboneKind::DeepGaitV2), 1).unwrap().save(&path).unwrap();
        let mut cfg = ModelConfig::toy(BackboneKind::DeepGaitV2);
        cfg.head.embed_dim = 16;
        let mut other = GaitModel::<f32>::new(cfg, 1).unwrap();
        let before = logits(&other);
        assert!(matches!(other.load(&path), Err(Error::Checkpoint { .. })));
        assert_eq!(logits(&other), before);
        assert_ne!(ModelConfig::toy(BackboneKind::SwinGait).fingerprint(), ModelConfig::toy(BackboneKind::DeepGaitV2).fingerprint());
    }

    #[test]
    fn backbone_weights_transfer_under_a_new_head() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pre.ckpt");
        let pre = GaitModel::<f32>::new(ModelConfig::toy(BackboneKind::SwinGait), 1).unwrap();
        pre.save(&path).unwrap();
        let mut cfg = ModelConfig::toy(BackboneKind::SwinGait);
        cfg.head.embed_dim = 8;
        let mut model = GaitModel::<f32>::new(cfg, 2).unwrap();
        model.load_backbone(&path).unwrap();
        for (a, b) in pre.store.params().iter().zip(model.store.params()) {
            assert_eq!(a.name, b.name);
            if a.group != HEAD_GROUP {
                assert_eq!(a.value, b.value);
            }
        }
        let mut deep = GaitModel::<f32>::new(ModelConfig::toy(BackboneKind::DeepGaitV2), 2).unwrap();
        assert!(deep.load_backbone(&path).is_err());
    }

    #[test]
    fn cast_preserves_values() {
        let model = GaitModel::<f32>::new(ModelConfig::toy(BackboneKind::DeepGaitV2), 4).unwrap();
        let wide: GaitModel<f64> = model.cast();
        let back: GaitModel<f32> = wide.cast();
        assert_eq!(logits(&back), logits(&model));
    }
}
