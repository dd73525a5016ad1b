//! Classification head and the joint weighted cross-entropy plus triplet
//! objective.
//!
//! The head max-pools backbone features over time, splits the map into
//! horizontal strips and max-pools each strip to a channel vector. A
//! per-part linear map gives the part embeddings used by the triplet term.
//! A batch-norm bottleneck and a classifier shared by all parts give
//! per-part logits, which are averaged into the class logits used by the
//! cross-entropy term.

use autograd::{Float, NdArray, Tensor};

use crate::backbones::layers::BatchNorm;
use crate::backbones::store::{Init, ParamId, Session};
use crate::backbones::HEAD_GROUP;
use crate::data::FrailtyLabel;
use crate::error::{Error, Result};

pub const CLASSES: usize = FrailtyLabel::COUNT;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    /// Number of horizontal strips.
    pub parts: usize,
    /// Embedding width per part.
    pub embed_dim: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { parts: 4, embed_dim: 32 }
    }
}

#[derive(Clone, Debug)]
pub struct Head {
    parts: usize,
    part_fc: ParamId,
    neck: BatchNorm,
    classifier: ParamId,
}

/// Head outputs for one batch.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput<'g, F: Float> {
    /// Pre-bottleneck part embeddings `[B, P, D]`.
    pub embeddings: Tensor<'g, F>,
    /// Part-averaged class logits `[B, 3]`.
    pub logits: Tensor<'g, F>,
}

impl Head {
    /// `feature_height` is the backbone output height, which must split
    /// into `parts` equal strips.
    pub fn new<F: Float>(init: &mut Init<'_, F>, channels: usize, feature_height: usize, cfg: &HeadConfig) -> Result<Self> {
        if cfg.parts == 0 || cfg.embed_dim == 0 {
            return Err(Error::Config("head parts and embedding width must be positive".into()));
        }
        if feature_height % cfg.parts != 0 {
            return Err(Error::Config(format!(
                "feature height {feature_height} does not split into {} parts",
                cfg.parts
            )));
        }
        init.set_group(HEAD_GROUP);
        let (p, d) = (cfg.parts, cfg.embed_dim);
        Ok(Self {
            parts: p,
            part_fc: init.uniform("part_fc.weight", &[p, channels, d], 1.0 / (channels as f64).sqrt()),
            neck: BatchNorm::new(init, "neck", p * d),
            classifier: init.uniform("classifier.weight", &[d, CLASSES], 1.0 / (d as f64).sqrt()),
        })
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    /// `features: [B*T, C, H', W']` frame-major.
    pub fn forward<'g, F: Float>(
        &self,
        s: &Session<'g, '_, F>,
        features: Tensor<'g, F>,
        batch: usize,
        frames: usize,
    ) -> HeadOutput<'g, F> {
        let shape = features.shape();
        let (c, h, w) = (shape[1], shape[2], shape[3]);
        let p = self.parts;
        let pooled = features.reshape(&[batch, frames, c, h, w]).max_axis(1, false);
        let strips = pooled.reshape(&[batch, c, p, (h / p) * w]).max_axis(3, false);
        let part_major = strips.permute(&[2, 0, 1]);
        let embeddings = part_major.matmul(s.param(self.part_fc)).permute(&[1, 0, 2]);
        let d = embeddings.shape()[2];
        let normed = self.neck.forward(s, embeddings.reshape(&[batch, p * d]), 1);
        let logits = normed
            .reshape(&[batch, p, d])
            .matmul(s.param(self.classifier))
            .mean_axis(1, false);
        HeadOutput { embeddings, logits }
    }
}

/// Per-class loss weights, normalized to mean 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights(pub [f64; CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        Self([1.0; CLASSES])
    }

    pub fn get(&self, label: FrailtyLabel) -> f64 {
        self.0[label.index()]
    }
}

/// `w_c ∝ 1/√n_c`, rescaled to mean 1.
pub fn inverse_sqrt_weights(counts: [usize; CLASSES]) -> Result<ClassWeights> {
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Validation(format!(
            "class {} has no samples; cannot weight by inverse square root",
            FrailtyLabel::from_index(i).expect("class index")
        )));
    }
    let raw = counts.map(|n| 1.0 / (n as f64).sqrt());
    let mean = raw.iter().sum::<f64>() / CLASSES as f64;
    Ok(ClassWeights(raw.map(|r| r / mean)))
}

/// Weighted mean of the per-sample negative log-likelihood,
/// `Σ w_{y_i} nll_i / Σ w_{y_i}`.
pub fn weighted_cross_entropy<'g, F: Float>(
    logits: Tensor<'g, F>,
    labels: &[FrailtyLabel],
    weights: &ClassWeights,
) -> Tensor<'g, F> {
    let b = labels.len();
    assert_eq!(logits.shape(), [b, CLASSES], "logits must be [batch, 3]");
    let mut select = vec![F::zero(); b * CLASSES];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        select[i * CLASSES + y.index()] = F::of(weights.get(y));
        total += weights.get(y);
    }
    let select = logits.graph().constant(NdArray::from_vec(vec![b, CLASSES], select));
    logits.log_softmax().mul(select).sum().mul_scalar(F::of(-1.0 / total))
}

/// Batch-all triplet loss.
///
/// Per part, averages `max(0, margin + d(a,p) − d(a,n))` over the valid
/// triples `(a, p, n)` with `y_a = y_p ≠ y_n`, `a ≠ p` whose hinge is
/// positive, then averages over parts. Returns the loss and the number of
/// valid triples per part.
pub fn batch_all_triplet<'g, F: Float>(
    embeddings: Tensor<'g, F>,
    labels: &[FrailtyLabel],
    margin: f64,
) -> (Tensor<'g, F>, usize) {
    let shape = embeddings.shape();
    let (b, p, d) = (shape[0], shape[1], shape[2]);
    assert_eq!(b, labels.len(), "one label per embedding");
    let graph = embeddings.graph();
    let mut valid = vec![F::zero(); b * b * b];
    let mut count = 0;
    for a in 0..b {
        for q in 0..b {
            for n in 0..b {
                if a != q && labels[a] == labels[q] && labels[a] != labels[n] {
                    valid[(a * b + q) * b + n] = F::one();
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return (graph.scalar(F::zero()), 0);
    }
    let e = embeddings.permute(&[1, 0, 2]);
    let diff = e.reshape(&[p, b, 1, d]).sub(e.reshape(&[p, 1, b, d]));
    let dist = diff.square().sum_axis(3, false).sqrt();
    let hinge = dist
        .reshape(&[p, b, b, 1])
        .sub(dist.reshape(&[p, b, 1, b]))
        .add_scalar(F::of(margin))
        .relu()
        .mul(graph.constant(NdArray::from_vec(vec![1, b, b, b], valid)));
    let values = hinge.value();
    let scale: Vec<F> = values
        .data()
        .chunks(b * b * b)
        .map(|part| {
            let active = part.iter().filter(|v| **v > F::zero()).count();
            if active == 0 {
                F::zero()
            } else {
                F::of(1.0 / (active * p) as f64)
            }
        })
        .collect();
    let scale = graph.constant(NdArray::from_vec(vec![p, 1, 1, 1], scale));
    (hinge.mul(scale).sum(), count)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub ce_weight: f64,
    pub triplet_weight: f64,
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ce_weight: 1.0,
            triplet_weight: 1.0,
            margin: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub triplet: f64,
    pub total: f64,
    pub valid_triplet_count: usize,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.ce.is_finite() && self.triplet.is_finite() && self.total.is_finite()
    }
}

/// The differentiable total and its components.
pub struct JointLoss<'g, F: Float> {
    pub total: Tensor<'g, F>,
    pub breakdown: LossBreakdown,
}

/// `ce_weight · CE(logits) + triplet_weight · triplet(embeddings)`.
pub fn joint_loss<'g, F: Float>(
    output: &HeadOutput<'g, F>,
    labels: &[FrailtyLabel],
    cfg: &LossConfig,
    weights: &ClassWeights,
) -> JointLoss<'g, F> {
    let ce = weighted_cross_entropy(output.logits, labels, weights);
    let (triplet, valid_triplet_count) = batch_all_triplet(output.embeddings, labels, cfg.margin);
    let total = ce
        .mul_scalar(F::of(cfg.ce_weight))
        .add(triplet.mul_scalar(F::of(cfg.triplet_weight)));
    let breakdown = LossBreakdown {
        ce: ce.value().item().as_f64(),
        triplet: triplet.value().item().as_f64(),
        total: total.value().item().as_f64(),
        valid_triplet_count,
    };
    JointLoss { total, breakdown }
}

/// Row-wise softmax of detached logits, as probabilities.
pub fn probabilities<F: Float>(logits: &NdArray<F>) -> Vec<[f64; CLASSES]> {
    logits
        .data()
        .chunks(CLASSES)
        .map(|row| {
            let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let e = [0, 1, 2].map(|c| (row[c].as_f64() - m).exp());
            let z: f64 = e.iter().sum();
            e.map(|v| v / z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::store::{Mode, ParamStore};
    use autograd::Graph;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use FrailtyLabel::*;

    fn labels(ix: &[usize]) -> Vec<FrailtyLabel> {
        ix.iter().map(|&i| FrailtyLabel::from_index(i).unwrap()).collect()
    }

    #[test]
    fn cohort_weights_for_25_24_17() {
        let w = inverse_sqrt_weights([25, 24, 17]).unwrap().0;
        let raw = [25f64, 24.0, 17.0].map(|n| n.powf(-0.5));
        let mean = raw.iter().sum::<f64>() / 3.0;
        for c in 0..3 {
            assert!((w[c] - raw[c] / mean).abs() < 1e-12);
        }
        for (got, want) in w.iter().zip([0.9279, 0.9470, 1.1252]) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn closed_form_weights() {
        let w = inverse_sqrt_weights([1, 4, 16]).unwrap().0;
        for (got, want) in w.iter().zip([12.0 / 7.0, 6.0 / 7.0, 3.0 / 7.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(inverse_sqrt_weights([10, 10, 10]).unwrap().0, [1.0; 3]);
        assert!(matches!(inverse_sqrt_weights([3, 0, 2]), Err(Error::Validation(_))));
    }

    proptest! {
        #[test]
        fn weights_mean_one_and_scale_invariant(a in 1usize..500, b in 1usize..500, c in 1usize..500, k in 1usize..20) {
            let w = inverse_sqrt_weights([a, b, c]).unwrap().0;
            prop_assert!((w.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|v| *v > 0.0));
            let s = inverse_sqrt_weights([a * k, b * k, c * k]).unwrap().0;
            for i in 0..3 {
                prop_assert!((w[i] - s[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn ce_is_shift_invariant(
            rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0, 0usize..3, -50.0f64..50.0), 1..6)
        ) {
            let g = Graph::<f64>::new();
            let ys = labels(&rows.iter().map(|r| r.3).collect::<Vec<_>>());
            let base: Vec<f64> = rows.iter().flat_map(|r| [r.0, r.1, r.2]).collect();
            let shifted: Vec<f64> = rows.iter().flat_map(|r| [r.0 + r.4, r.1 + r.4, r.2 + r.4]).collect();
            let w = ClassWeights([2.0, 0.5, 1.0]);
            let b = rows.len();
            let l0 = weighted_cross_entropy(g.constant(NdArray::from_vec(vec![b, 3], base)), &ys, &w).value().item();
            let l1 = weighted_cross_entropy(g.constant(NdArray::from_vec(vec![b, 3], shifted)), &ys, &w).value().item();
            prop_assert!((l0 - l1).abs() < 1e-9);
        }

        #[test]
        fn triplet_is_rotation_invariant(
            pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0usize..3), 2..7),
            angle in 0.0f64..std::f64::consts::TAU,
        ) {
            let g = Graph::<f64>::new();
            let ys = labels(&pts.iter().map(|p| p.2).collect::<Vec<_>>());
            let (c, s) = (angle.cos(), angle.sin());
            let b = pts.len();
            let plain: Vec<f64> = pts.iter().flat_map(|p| [p.0, p.1]).collect();
            let rotated: Vec<f64> = pts.iter().flat_map(|p| [c * p.0 - s * p.1, s * p.0 + c * p.1]).collect();
            let (l0, n0) = batch_all_triplet(g.constant(NdArray::from_vec(vec![b, 1, 2], plain)), &ys, 0.2);
            let (l1, n1) = batch_all_triplet(g.constant(NdArray::from_vec(vec![b, 1, 2], rotated)), &ys, 0.2);
            prop_assert_eq!(n0, n1);
            prop_assert!((l0.value().item() - l1.value().item()).abs() < 1e-9);
        }
    }

    #[test]
    fn ce_known_values() {
        let g = Graph::<f64>::new();
        let uniform = g.constant(NdArray::zeros(vec![2, 3]));
        let l = weighted_cross_entropy(uniform, &[Prefrail, Frail], &ClassWeights::uniform());
        assert!((l.value().item() - 3f64.ln()).abs() < 1e-12);

        let peaked = g.constant(NdArray::from_vec(vec![1, 3], vec![0.0, 1e6, 0.0]));
        let l = weighted_cross_entropy(peaked, &[Prefrail], &ClassWeights::uniform());
        assert!(l.value().item().abs() < 1e-12);
    }

    #[test]
    fn ce_weighted_hand_case() {
        let g = Graph::<f64>::new();
        let rows = [[1.0, 0.0, -1.0], [0.5, 2.0, 0.0]];
        let logits = g.constant(NdArray::from_vec(vec![2, 3], rows.concat()));
        let w = ClassWeights([2.0, 1.0, 1.0]);
        let got = weighted_cross_entropy(logits, &[NonFrail, Frail], &w).value().item();
        let nll = |r: [f64; 3], y: usize| r.iter().map(|v| v.exp()).sum::<f64>().ln() - r[y];
        let want = (2.0 * nll(rows[0], 0) + 1.0 * nll(rows[1], 2)) / 3.0;
        assert!((got - want).abs() < 1e-12);
    }

    fn brute_triplet(x: &[f64], ys: &[usize], m: f64) -> (f64, usize) {
        let (mut sum, mut active, mut valid) = (0.0, 0, 0);
        for a in 0..x.len() {
            for p in 0..x.len() {
                for n in 0..x.len() {
                    if a != p && ys[a] == ys[p] && ys[a] != ys[n] {
                        valid += 1;
                        let h = m + (x[a] - x[p]).abs() - (x[a] - x[n]).abs();
                        if h > 0.0 {
                            sum += h;
                            active += 1;
                        }
                    }
                }
            }
        }
        (if active == 0 { 0.0 } else { sum / active as f64 }, valid)
    }

    fn triplet_1d(x: &[f64], ys: &[usize], m: f64) -> (f64, usize) {
        let g = Graph::<f64>::new();
        let e = g.constant(NdArray::from_vec(vec![x.len(), 1, 1], x.to_vec()));
        let (l, n) = batch_all_triplet(e, &labels(ys), m);
        (l.value().item(), n)
    }

    #[test]
    fn triplet_hand_cases() {
        assert_eq!(triplet_1d(&[0.0, 0.0, 10.0], &[0, 0, 1], 0.2), (0.0, 2));
        let (l, n) = triplet_1d(&[0.0, 1.0, 0.5], &[0, 0, 1], 0.2);
        let (want, valid) = brute_triplet(&[0.0, 1.0, 0.5], &[0, 0, 1], 0.2);
        assert_eq!(n, valid);
        assert!((l - want).abs() < 1e-12 && (l - 0.7).abs() < 1e-12);
        assert_eq!(triplet_1d(&[0.0, 1.0, 2.0], &[1, 1, 1], 0.2), (0.0, 0));
    }

    proptest! {
        #[test]
        fn triplet_matches_brute_force(pts in proptest::collection::vec((-4.0f64..4.0, 0usize..3), 1..8)) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<usize> = pts.iter().map(|p| p.1).collect();
            let (l, n) = triplet_1d(&x, &ys, 0.2);
            let (want, valid) = brute_triplet(&x, &ys, 0.2);
            prop_assert_eq!(n, valid);
            prop_assert!((l - want).abs() < 1e-9);
        }
    }

    #[test]
    fn triplet_averages_parts() {
        let g = Graph::<f64>::new();
        // part 0 is the hand case above, part 1 has no active hinge
        let data = vec![0.0, 0.0, 1.0, 0.0, 0.5, 10.0];
        let e = g.constant(NdArray::from_vec(vec![3, 2, 1], data));
        let (l, n) = batch_all_triplet(e, &[NonFrail, NonFrail, Prefrail], 0.2);
        assert_eq!(n, 2);
        assert!((l.value().item() - 0.35).abs() < 1e-12);
    }

    fn head_fixture(parts: usize, channels: usize, h: usize) -> (ParamStore<f64>, Head) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = {
            let mut init = Init::new(&mut store, &mut rng, HEAD_GROUP);
            Head::new(&mut init, channels, h, &HeadConfig { parts, embed_dim: 5 }).unwrap()
        };
        (store, head)
    }

    #[test]
    fn strip_geometry_is_validated() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut init = Init::new(&mut store, &mut rng, HEAD_GROUP);
        let e = Head::new(&mut init, 4, 6, &HeadConfig { parts: 4, embed_dim: 2 }).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn bottom_strip_only_reaches_last_part() {
        let (store, head) = head_fixture(4, 3, 8);
        let g = Graph::new();
        let s = Session::new(&g, &store, Mode::Eval, Default::default());
        let (b, t, c, h, w) = (2, 3, 3, 8, 4);
        let fm = NdArray::from_fn(vec![b * t, c, h, w], |i| {
            let row = (i / w) % h;
            if row >= 6 {
                1.0 + (i % 7) as f64
            } else {
                0.0
            }
        });
        let out = head.forward(&s, g.constant(fm), b, t);
        let emb = out.embeddings.value();
        assert_eq!(emb.shape(), &[2, 4, 5]);
        for bi in 0..b {
            for p in 0..4 {
                let nonzero = (0..5).any(|d| emb.get(&[bi, p, d]) != 0.0);
                assert_eq!(nonzero, p == 3, "batch {bi} part {p}");
            }
        }
        assert_eq!(out.logits.shape(), vec![2, 3]);
    }

    #[test]
    fn constant_map_gives_identical_parts() {
        let (store, head) = head_fixture(1, 2, 4);
        let g = Graph::new();
        let s = Session::new(&g, &store, Mode::Eval, Default::default());
        let out = head.forward(&s, g.constant(NdArray::full(vec![4, 2, 4, 3], 0.7)), 2, 2);
        assert_eq!(out.logits.shape(), vec![2, 3]);
        let l = out.logits.value();
        for c in 0..3 {
            assert_eq!(l.get(&[0, c]), l.get(&[1, c]));
        }
    }

    #[test]
    fn joint_loss_recomposes() {
        let g = Graph::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand::Rng;
        let emb = g.leaf(NdArray::from_fn(vec![4, 2, 3], |_| rng.random_range(-1.0..1.0)), true);
        let logits = g.leaf(NdArray::from_fn(vec![4, 3], |_| rng.random_range(-2.0..2.0)), true);
        let ys = [NonFrail, Frail, NonFrail, Frail];
        let out = HeadOutput { embeddings: emb, logits };
        let w = inverse_sqrt_weights([25, 24, 17]).unwrap();
        let cfg = LossConfig { ce_weight: 0.7, triplet_weight: 1.3, margin: 0.2 };
        let j = joint_loss(&out, &ys, &cfg, &w);
        let ce = weighted_cross_entropy(logits, &ys, &w).value().item();
        let (tri, _) = batch_all_triplet(emb, &ys, 0.2);
        let want = 0.7 * ce + 1.3 * tri.value().item();
        assert!((j.breakdown.total - want).abs() < 1e-12);
        assert!((j.total.value().item() - want).abs() < 1e-12);

        let ce_only = joint_loss(&out, &ys, &LossConfig { triplet_weight: 0.0, ..cfg.clone() }, &w);
        assert_eq!(ce_only.breakdown.total, ce_only.breakdown.ce * 0.7);
        let single = [Frail; 4];
        let zero = joint_loss(&out, &single, &LossConfig { ce_weight: 0.0, ..cfg }, &w);
        assert_eq!(zero.breakdown.total, 0.0);
        assert_eq!(zero.breakdown.valid_triplet_count, 0);
    }

    fn head_loss(store: &ParamStore<f64>, head: &Head, fm: &NdArray<f64>, ys: &[FrailtyLabel], w: &ClassWeights) -> f64 {
        let g = Graph::new();
        let s = Session::new(&g, store, Mode::Train, Default::default());
        let out = head.forward(&s, g.constant(fm.clone()), ys.len(), 2);
        joint_loss(&out, ys, &LossConfig::default(), w).total.value().item()
    }

    #[test]
    fn joint_loss_gradients_match_central_differences() {
        use rand::Rng;
        let (mut store, head) = head_fixture(2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ys = labels(&[0, 1, 2, 0, 2, 1]);
        let fm = NdArray::from_fn(vec![ys.len() * 2, 3, 4, 3], |_| rng.random_range(-1.0..1.0));
        let w = inverse_sqrt_weights([25, 24, 17]).unwrap();

        let g = Graph::new();
        let s = Session::new(&g, &store, Mode::Train, Default::default());
        let out = head.forward(&s, g.constant(fm.clone()), ys.len(), 2);
        let loss = joint_loss(&out, &ys, &LossConfig::default(), &w);
        assert!(loss.breakdown.valid_triplet_count > 0);
        let grads = g.backward(loss.total);
        let analytic: Vec<(ParamId, NdArray<f64>)> = s
            .trainable_leaves()
            .into_iter()
            .map(|(id, t)| (id, grads.get(t).cloned().unwrap_or_else(|| NdArray::zeros(t.shape()))))
            .collect();
        drop(grads);
        drop(s);

        let h = 1e-6;
        for _ in 0..32 {
            let (id, grad) = &analytic[rng.random_range(0..analytic.len())];
            let k = rng.random_range(0..grad.len());
            let orig = store.value(*id).data()[k];
            store.value_mut(*id).data_mut()[k] = orig + h;
            let up = head_loss(&store, &head, &fm, &ys, &w);
            store.value_mut(*id).data_mut()[k] = orig - h;
            let down = head_loss(&store, &head, &fm, &ys, &w);
            store.value_mut(*id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-7);
            assert!(rel < 1e-4, "{} [{k}]: analytic {a} numeric {numeric}", store.param(*id).name);
        }
    }
}
