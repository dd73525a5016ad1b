//! Per-fold training with decoupled weight decay, periodic evaluation and
//! experiment aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use autograd::{Float, Graph, NdArray};
use rand::Rng;

use crate::backbones::store::{Mode, ParamId, ParamStore, Session};
use crate::backbones::{apply_freeze, FreezeConfig};
use crate::data::{DatasetManifest, GaitSequence};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_folds, micro_auroc, weighted_kappa, EvalReport, FoldSummary, Prediction};
use crate::model::{GaitModel, ModelConfig};
use crate::objective::{inverse_sqrt_weights, joint_loss, probabilities, ClassWeights, LossBreakdown, LossConfig};
use crate::pipeline::{
    assemble_batch, augment, iteration_rng, sample_eval_clip, sample_training_clip, AugmentPolicy, Clip, FitPlan,
};
use crate::splits::{Fold, FoldPlan};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub clip_length: usize,
    pub frame_skip: usize,
    pub eval_clip_length: usize,
    pub total_iterations: usize,
    pub eval_interval: usize,
    pub class_weighting: bool,
    pub seed: u64,
    pub loss: LossConfig,
    pub augment: AugmentPolicy,
    /// Pretrained backbone weights loaded before training; the head keeps
    /// its random initialization.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 4,
            clip_length: 60,
            frame_skip: 3,
            eval_clip_length: 80,
            total_iterations: 10_000,
            eval_interval: 500,
            class_weighting: false,
            seed: 0,
            loss: LossConfig::default(),
            augment: AugmentPolicy::default(),
            init_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate must be finite and nonnegative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err("weight_decay must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return err("optimizer betas must lie in [0, 1) and epsilon must be positive");
        }
        if self.clip_length == 0 || self.frame_skip == 0 || self.eval_clip_length == 0 {
            return err("clip_length, frame_skip and eval_clip_length must be positive");
        }
        if self.batch_size < 2 {
            return err("batch_size must be at least 2 for batch statistics and triplets");
        }
        if self.total_iterations == 0 || self.eval_interval == 0 {
            return err("total_iterations and eval_interval must be positive");
        }
        if self.total_iterations % self.eval_interval != 0 {
            return Err(Error::Config(format!(
                "eval_interval {} does not divide total_iterations {}",
                self.eval_interval, self.total_iterations
            )));
        }
        if self.loss.ce_weight < 0.0 || self.loss.triplet_weight < 0.0 || self.loss.margin < 0.0 {
            return err("loss weights and margin must be nonnegative");
        }
        self.augment.validate()
    }
}

/// Adam moments of one parameter.
#[derive(Clone, Debug)]
struct Moments<F> {
    m: Vec<F>,
    v: Vec<F>,
}

/// Adam with decoupled weight decay:
/// `θ ← θ(1 − lr·wd) − lr · m̂ / (√v̂ + ε)`.
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    steps: u64,
    state: BTreeMap<ParamId, Moments<F>>,
}

impl<F: Float> AdamW<F> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            steps: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Parameters that have optimizer state.
    pub fn tracked(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.state.keys().copied()
    }

    /// One update of the parameters in `grads`; others are not touched and
    /// get no state.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, NdArray<F>)]) {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let step_size = F::of(self.lr / c1);
        let root_c2 = F::of(c2.sqrt());
        let eps = F::of(self.epsilon);
        let decay = F::of(1.0 - self.lr * self.weight_decay);
        for (id, grad) in grads {
            let n = grad.len();
            let mom = self.state.entry(*id).or_insert_with(|| Moments {
                m: vec![F::zero(); n],
                v: vec![F::zero(); n],
            });
            let theta = store.value_mut(*id).data_mut();
            for (i, &g) in grad.data().iter().enumerate() {
                mom.m[i] = b1 * mom.m[i] + (F::one() - b1) * g;
                mom.v[i] = b2 * mom.v[i] + (F::one() - b2) * g * g;
                let update = step_size * mom.m[i] / (mom.v[i].sqrt() / root_c2 + eps);
                theta[i] = theta[i] * decay - update;
            }
        }
    }
}

/// Metrics at one evaluation point plus the mean training loss since the
/// previous one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPoint {
    pub iteration: usize,
    /// NaN when undefined on the test set.
    pub micro_auc: f64,
    pub weighted_kappa: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrajectory {
    pub points: Vec<EvalPoint>,
    pub checkpoint: Option<PathBuf>,
}

pub const TRAJECTORY_HEADER: &str = "iteration,micro_auc,weighted_kappa,ce,triplet,total";

impl TrainTrajectory {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAJECTORY_HEADER}\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                p.iteration, p.micro_auc, p.weighted_kappa, p.loss.ce, p.loss.triplet, p.loss.total
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(TRAJECTORY_HEADER) {
            return Err(Error::Validation(format!("trajectory header must be `{TRAJECTORY_HEADER}`")));
        }
        let mut points = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Validation(format!("trajectory line {}: `{line}`", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |i: usize| f[i].trim().parse::<f64>().map_err(|_| bad());
            points.push(EvalPoint {
                iteration: f[0].trim().parse().map_err(|_| bad())?,
                micro_auc: num(1)?,
                weighted_kappa: num(2)?,
                loss: LossBreakdown {
                    ce: num(3)?,
                    triplet: num(4)?,
                    total: num(5)?,
                    valid_triplet_count: 0,
                },
            });
        }
        Ok(Self { points, checkpoint: None })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(Error::io(path))
    }

    pub fn last(&self) -> Option<&EvalPoint> {
        self.points.last()
    }

    /// Maximum of each metric over the trajectory, ignoring undefined points.
    pub fn best(&self) -> (Option<f64>, Option<f64>) {
        let max = |f: fn(&EvalPoint) -> f64| {
            self.points.iter().map(f).filter(|v| v.is_finite()).fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.max(v)))
            })
        };
        (max(|p| p.micro_auc), max(|p| p.weighted_kappa))
    }
}

/// Deterministic evaluation: one eval clip per sequence, running
/// normalization statistics, softmax probabilities.
pub fn evaluate<F: Float>(
    model: &GaitModel<F>,
    sequences: &[GaitSequence],
    eval_clip_length: usize,
    batch_size: usize,
) -> Result<Vec<Prediction>> {
    let mut preds = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(batch_size.max(1)) {
        let clips = chunk
            .iter()
            .map(|s| sample_eval_clip(s, eval_clip_length))
            .collect::<Result<Vec<_>>>()?;
        let fit = fit_plan(&clips, model)?;
        let batch = assemble_batch(&clips, &fit)?;
        let graph = Graph::new();
        let session = Session::new(&graph, &model.store, Mode::Eval, BTreeSet::new());
        let out = model.forward_batch(&session, &batch);
        for (clip, probs) in clips.iter().zip(probabilities(&out.head.logits.value())) {
            preds.push(Prediction {
                participant_id: clip.participant_id.clone(),
                truth: clip.label,
                probs,
            });
        }
    }
    Ok(preds)
}

fn fit_plan<F: Float>(clips: &[Clip], model: &GaitModel<F>) -> Result<FitPlan> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Validation("no sequences to batch".into()))?;
    FitPlan::new((first.height, first.width), model.config.backbone.input())
}

/// What a training run produced.
#[derive(Debug)]
pub struct TrainOutcome {
    pub trajectory: TrainTrajectory,
    /// Test-set predictions of the final model.
    pub predictions: Vec<Prediction>,
    pub model: GaitModel<f32>,
    pub optimizer: AdamW<f32>,
}

fn class_counts(seqs: &[GaitSequence]) -> [usize; 3] {
    let mut counts = [0; 3];
    for s in seqs {
        counts[s.label().index()] += 1;
    }
    counts
}

/// Trains `model` on `train` with the groups in `frozen` held fixed,
/// evaluating on `test` every `eval_interval` iterations. `progress` sees
/// each evaluation point as it is produced.
pub fn train_model(
    mut model: GaitModel<f32>,
    train: &[GaitSequence],
    test: &[GaitSequence],
    cfg: &TrainConfig,
    frozen: &BTreeSet<String>,
    progress: &mut dyn FnMut(&EvalPoint),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Validation("training and test sets must be nonempty".into()));
    }
    let weights = if cfg.class_weighting {
        inverse_sqrt_weights(class_counts(train))?
    } else {
        ClassWeights::uniform()
    };
    let mut optimizer = AdamW::new(cfg);
    let mut trajectory = TrainTrajectory::default();
    let mut predictions = Vec::new();
    let mut window = (0.0, 0.0, 0.0, 0usize, 0usize);
    for iteration in 1..=cfg.total_iterations {
        let mut rng = iteration_rng(cfg.seed, iteration as u64);
        let clips = (0..cfg.batch_size)
            .map(|_| {
                let seq = &train[rng.random_range(0..train.len())];
                let clip = sample_training_clip(seq, cfg.clip_length, cfg.frame_skip, &mut rng)?;
                Ok(augment(&clip, &cfg.augment, &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = assemble_batch(&clips, &fit_plan(&clips, &model)?)?;

        let (grads, norm_updates, breakdown) = {
            let graph = Graph::new();
            let session = Session::new(&graph, &model.store, Mode::Train, frozen.clone());
            let out = model.forward_batch(&session, &batch);
            let loss = joint_loss(&out.head, &batch.labels, &cfg.loss, &weights);
            let b = loss.breakdown;
            if !b.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    ce: b.ce,
                    triplet: b.triplet,
                    total: b.total,
                });
            }
            let leaves = session.trainable_leaves();
            let mut grads = graph.backward(loss.total);
            let grads: Vec<(ParamId, NdArray<f32>)> = leaves
                .into_iter()
                .map(|(id, leaf)| {
                    let g = grads.take(leaf).unwrap_or_else(|| NdArray::zeros(leaf.shape()));
                    (id, g)
                })
                .collect();
            (grads, session.take_norm_updates(), b)
        };
        model.store.apply_norm_updates(norm_updates);
        optimizer.step(&mut model.store, &grads);

        window.0 += breakdown.ce;
        window.1 += breakdown.triplet;
        window.2 += breakdown.total;
        window.3 += breakdown.valid_triplet_count;
        window.4 += 1;
        if iteration % cfg.eval_interval == 0 {
            predictions = evaluate(&model, test, cfg.eval_clip_length, cfg.batch_size)?;
            let n = window.4 as f64;
            let point = EvalPoint {
                iteration,
                micro_auc: micro_auroc(&predictions).unwrap_or(f64::NAN),
                weighted_kappa: weighted_kappa(&predictions).unwrap_or(f64::NAN),
                loss: LossBreakdown {
                    ce: window.0 / n,
                    triplet: window.1 / n,
                    total: window.2 / n,
                    valid_triplet_count: window.3,
                },
            };
            progress(&point);
            trajectory.points.push(point);
            window = (0.0, 0.0, 0.0, 0, 0);
        }
    }
    Ok(TrainOutcome {
        trajectory,
        predictions,
        model,
        optimizer,
    })
}

/// Loads the sequences of `ids` in manifest order.
pub fn load_sequences(manifest: &DatasetManifest, ids: &BTreeSet<String>) -> Result<Vec<GaitSequence>> {
    manifest
        .entries
        .iter()
        .filter(|e| ids.contains(&e.participant_id))
        .map(|e| manifest.load_sequence(e))
        .collect()
}

/// Checks that a freeze preset belongs to the model's backbone.
pub fn check_freeze(model: &ModelConfig, freeze: &FreezeConfig) -> Result<()> {
    if model.backbone.kind() != freeze.kind {
        return Err(Error::Config(format!(
            "freeze config {} applies to {}, not {}",
            freeze.name,
            freeze.kind,
            model.backbone.kind()
        )));
    }
    Ok(())
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";

/// Trains one fold from scratch. With `out_dir`, the final checkpoint and
/// the trajectory CSV are written there.
pub fn train_fold(
    fold: &Fold,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    freeze: &FreezeConfig,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EvalPoint),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_freeze(model_cfg, freeze)?;
    let mut model = GaitModel::new(model_cfg.clone(), cfg.seed)?;
    if let Some(path) = &cfg.init_checkpoint {
        model.load_backbone(path)?;
    }
    let frozen = apply_freeze(&model.groups(), freeze)?;
    let train = load_sequences(manifest, &fold.train)?;
    let test = load_sequences(manifest, &fold.test)?;
    let mut outcome = train_model(model, &train, &test, cfg, &frozen, progress)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let ckpt = dir.join(CHECKPOINT_FILE);
        outcome.model.save(&ckpt)?;
        outcome.trajectory.checkpoint = Some(ckpt);
        outcome.trajectory.write(&dir.join(TRAJECTORY_FILE))?;
    }
    Ok(outcome)
}

/// One row of an experiment grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridEntry {
    pub model: ModelConfig,
    pub freeze: FreezeConfig,
    pub class_weighting: bool,
}

impl GridEntry {
    /// Row label such as `swingait M2 weighted`.
    pub fn name(&self) -> String {
        format!(
            "{} {} {}",
            self.model.backbone.kind(),
            self.freeze.name,
            if self.class_weighting { "weighted" } else { "unweighted" }
        )
    }
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub entry: GridEntry,
    pub reports: Vec<EvalReport>,
    /// Folds that failed, with their error message.
    pub failures: Vec<(usize, String)>,
    pub summary: Option<FoldSummary>,
}

/// Trains every grid entry on every fold of `plan` (or only `folds`).
/// Fold failures are recorded per entry rather than aborting the grid.
pub fn run_experiment(
    manifest: &DatasetManifest,
    plan: &FoldPlan,
    grid: &[GridEntry],
    base: &TrainConfig,
    folds: Option<&[usize]>,
    progress: &mut dyn FnMut(&str, usize, &EvalPoint),
) -> Vec<ExperimentResult> {
    let fold_ids: Vec<usize> = folds.map_or_else(|| (0..plan.folds.len()).collect(), <[usize]>::to_vec);
    grid.iter()
        .map(|entry| {
            let name = entry.name();
            let cfg = TrainConfig {
                class_weighting: entry.class_weighting,
                ..base.clone()
            };
            let mut reports = Vec::new();
            let mut failures = Vec::new();
            for &f in &fold_ids {
                let run = plan
                    .folds
                    .get(f)
                    .ok_or_else(|| Error::Config(format!("fold {f} out of range")))
                    .and_then(|fold| {
                        train_fold(fold, manifest, &cfg, &entry.model, &entry.freeze, None, &mut |p| progress(&name, f, p))
                    })
                    .and_then(|out| fold_report(&name, f, &out));
                match run {
                    Ok(r) => reports.push(r),
                    Err(e) => failures.push((f, e.to_string())),
                }
            }
            let summary = aggregate_folds(&reports).ok();
            ExperimentResult {
                entry: entry.clone(),
                reports,
                failures,
                summary,
            }
        })
        .collect()
}

/// Final-model report with the trajectory maxima attached.
pub fn fold_report(experiment: &str, fold: usize, outcome: &TrainOutcome) -> Result<EvalReport> {
    let mut report = EvalReport::from_predictions(experiment, fold, &outcome.predictions)?;
    let (auc, kappa) = outcome.trajectory.best();
    report.best_micro_auc = auc;
    report.best_weighted_kappa = kappa;
    Ok(report)
}

/// Markdown table with `mean ± std` cells, one row per experiment.
pub fn report_table(rows: &[(String, FoldSummary)]) -> String {
    let mut out = String::from("| Model | Folds | Micro-AUC | Weighted Kappa | Best Micro-AUC | Best Kappa |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    let opt = |v: &Option<crate::metrics::MeanStd>| v.as_ref().map_or_else(|| "n/a".to_string(), |m| m.to_string());
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "| {name} | {} | {} | {} | {} | {} |",
            s.folds,
            s.micro_auc,
            s.weighted_kappa,
            opt(&s.best_micro_auc),
            opt(&s.best_weighted_kappa)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::BackboneKind;
    use crate::data::FrailtyLabel;
    use crate::metrics::mean_std;
    use crate::synth::{class_params, generate_cohort, generate_walker_sequence, CohortConfig};
    use crate::splits::make_folds;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_param_store(values: &[f64]) -> (ParamStore<f64>, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add_param("w".into(), "g", NdArray::from_vec(vec![values.len()], values.to_vec()));
        (store, id)
    }

    #[test]
    fn adamw_matches_textbook_update() {
        let cfg = TrainConfig {
            learning_rate: 0.01,
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        let (mut store, id) = one_param_store(&[0.5, -1.0, 2.0]);
        let mut opt = AdamW::new(&cfg);
        let grads = [[0.3, -0.2, 1e-3], [-0.1, 0.4, 0.0], [0.2, 0.2, -5.0]];
        let mut theta = [0.5f64, -1.0, 2.0];
        let (mut m, mut v) = ([0.0f64; 3], [0.0f64; 3]);
        for (t, g) in grads.iter().enumerate() {
            opt.step(&mut store, &[(id, NdArray::from_vec(vec![3], g.to_vec()))]);
            let t = t as i32 + 1;
            for i in 0..3 {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / (1.0 - cfg.beta1.powi(t));
                let v_hat = v[i] / (1.0 - cfg.beta2.powi(t));
                theta[i] -= cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * theta[i]);
            }
            for (got, want) in store.value(id).data().iter().zip(&theta) {
                assert!((got - want).abs() < 1e-12, "step {t}: {got} vs {want}");
            }
        }
        assert_eq!(opt.steps(), 3);
    }

    #[test]
    fn weight_decay_is_decoupled_from_the_gradient() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..TrainConfig::default()
        };
        let (mut store, id) = one_param_store(&[4.0, -2.0]);
        let mut opt = AdamW::new(&cfg);
        for _ in 0..5 {
            opt.step(&mut store, &[(id, NdArray::zeros(vec![2]))]);
        }
        let shrink = (1.0f64 - 0.05).powi(5);
        assert!((store.value(id).data()[0] - 4.0 * shrink).abs() < 1e-12);
        assert!((store.value(id).data()[1] + 2.0 * shrink).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let (mut store, id) = one_param_store(&[0.25, -3.0]);
        let other = store.add_param("u".into(), "g", NdArray::from_vec(vec![1], vec![7.0]));
        let mut opt = AdamW::new(&cfg);
        for _ in 0..3 {
            opt.step(&mut store, &[(id, NdArray::from_vec(vec![2], vec![1.0, -1.0]))]);
        }
        assert_eq!(store.value(id).data(), &[0.25, -3.0]);
        assert_eq!(opt.tracked().collect::<Vec<_>>(), vec![id]);
        assert_eq!(store.value(other).data(), &[7.0]);
    }

    #[test]
    fn invalid_train_configs_are_rejected() {
        let bad = [
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
            TrainConfig { beta1: 1.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 1, ..TrainConfig::default() },
            TrainConfig { eval_interval: 0, ..TrainConfig::default() },
            TrainConfig { clip_length: 0, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn trajectory_csv_round_trips_and_best_skips_nan() {
        let point = |iteration, auc, kappa| EvalPoint {
            iteration,
            micro_auc: auc,
            weighted_kappa: kappa,
            loss: LossBreakdown { ce: 1.5, triplet: 0.25, total: 1.75, valid_triplet_count: 0 },
        };
        let traj = TrainTrajectory {
            points: vec![point(5, 0.6, 0.1), point(10, f64::NAN, 0.4), point(15, 0.7, 0.3)],
            checkpoint: None,
        };
        let back = TrainTrajectory::from_csv(&traj.to_csv()).unwrap();
        assert_eq!(back.points.len(), 3);
        assert_eq!(back.points[2], traj.points[2]);
        assert!(back.points[1].micro_auc.is_nan());
        assert_eq!(traj.best(), (Some(0.7), Some(0.4)));
        assert!(TrainTrajectory::from_csv("iteration,auc\n").is_err());
    }

    fn walkers(per_class: usize, seed: u64) -> Vec<GaitSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..per_class * 3 {
            let label = FrailtyLabel::from_index(i % 3).unwrap();
            let params = class_params(label, 40, 0.0, &mut rng);
            let frames = generate_walker_sequence(&params, 90, 40, 28, &mut rng);
            out.push(GaitSequence::new(format!("w{i:02}"), frames, label, None).unwrap());
        }
        out
    }

    fn short_config() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            clip_length: 12,
            eval_clip_length: 16,
            total_iterations: 6,
            eval_interval: 3,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    fn snapshot(model: &GaitModel<f32>) -> Vec<(String, Vec<f32>)> {
        let mut out: Vec<(String, Vec<f32>)> =
            model.store.params().iter().map(|p| (p.group.clone(), p.value.data().to_vec())).collect();
        out.extend(model.store.norms().iter().map(|n| (n.group.clone(), [n.mean.clone(), n.var.clone()].concat())));
        out
    }

    #[test]
    fn training_respects_freezing_and_is_reproducible() {
        let (train, test) = (walkers(2, 1), walkers(1, 2));
        let cfg = short_config();
        let model_cfg = ModelConfig::toy(BackboneKind::DeepGaitV2);
        let run = || {
            let model = GaitModel::new(model_cfg.clone(), 3).unwrap();
            let frozen = apply_freeze(&model.groups(), &FreezeConfig::preset("D2").unwrap()).unwrap();
            let before = snapshot(&model);
            let out = train_model(model, &train, &test, &cfg, &frozen, &mut |_| {}).unwrap();
            (before, out)
        };
        let (before, out) = run();
        assert_eq!(out.trajectory.points.len(), 2);
        assert_eq!(out.trajectory.points.iter().map(|p| p.iteration).collect::<Vec<_>>(), vec![3, 6]);
        assert_eq!(out.predictions.len(), test.len());
        let after = snapshot(&out.model);
        for ((group, a), (_, b)) in before.iter().zip(&after) {
            if group == "layer0" || group == "layer1" {
                assert_eq!(a, b, "frozen group {group} changed");
            }
        }
        for group in ["layer2", "layer3", "layer4", "head"] {
            let changed = before.iter().zip(&after).any(|((g, a), (_, b))| g == group && a != b);
            assert!(changed, "trainable group {group} did not change");
        }
        for id in out.optimizer.tracked() {
            let group = &out.model.store.param(id).group;
            assert!(group != "layer0" && group != "layer1");
        }
        assert_eq!(out.optimizer.steps(), 6);

        let (_, again) = run();
        assert_eq!(snapshot(&again.model), after);
        assert_eq!(again.predictions, out.predictions);
        assert_eq!(again.trajectory.to_csv(), out.trajectory.to_csv());
    }

    #[test]
    fn experiment_bookkeeping_and_report_table() {
        let dir = tempfile::tempdir().unwrap();
        let cohort = CohortConfig {
            n_per_class: 2,
            frames: 90,
            height: 32,
            width: 22,
            seed: 5,
            noise: 0.0,
        };
        let manifest = generate_cohort(&cohort, dir.path()).unwrap();
        let plan = make_folds(&manifest, 2, 0).unwrap();
        let grid = [
            GridEntry {
                model: ModelConfig::toy(BackboneKind::DeepGaitV2),
                freeze: FreezeConfig::preset("D4").unwrap(),
                class_weighting: true,
            },
            GridEntry {
                model: ModelConfig::toy(BackboneKind::DeepGaitV2),
                freeze: FreezeConfig::preset("M2").unwrap(),
                class_weighting: false,
            },
        ];
        let cfg = TrainConfig { total_iterations: 2, eval_interval: 2, ..short_config() };
        let mut seen = Vec::new();
        let results = run_experiment(&manifest, &plan, &grid, &cfg, Some(&[0, 1, 7]), &mut |name, fold, p| {
            seen.push((name.to_string(), fold, p.iteration))
        });
        assert_eq!(results.len(), 2);
        let ok = &results[0];
        assert_eq!(ok.entry.name(), "deepgaitv2 D4 weighted");
        assert_eq!(ok.reports.iter().map(|r| r.fold).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(ok.failures.len(), 1);
        assert_eq!(ok.failures[0].0, 7);
        let summary = ok.summary.as_ref().unwrap();
        assert_eq!(summary.folds, 2);
        let aucs: Vec<f64> = ok.reports.iter().map(|r| r.micro_auc).collect();
        assert_eq!(summary.micro_auc, mean_std(&aucs).unwrap());
        assert!(summary.best_micro_auc.is_some());
        let bad = &results[1];
        assert!(bad.reports.is_empty() && bad.summary.is_none());
        assert_eq!(bad.failures.len(), 3);
        assert_eq!(seen.iter().filter(|(n, _, _)| n == "deepgaitv2 D4 weighted").count(), 2);

        let constant = crate::metrics::FoldSummary {
            folds: 5,
            micro_auc: mean_std(&[0.8125; 5]).unwrap(),
            weighted_kappa: mean_std(&[0.25; 5]).unwrap(),
            best_micro_auc: None,
            best_weighted_kappa: None,
        };
        let table = report_table(&[("swingait M2 unweighted".into(), constant)]);
        assert!(table.contains("| swingait M2 unweighted | 5 | 0.8125 ± 0.0000 | 0.2500 ± 0.0000 | n/a | n/a |"), "{table}");
    }

    #[test]
    fn freeze_kind_must_match_the_backbone() {
        let model = ModelConfig::toy(BackboneKind::SwinGait);
        assert!(check_freeze(&model, &FreezeConfig::preset("M3").unwrap()).is_ok());
        assert!(matches!(check_freeze(&model, &FreezeConfig::preset("D3").unwrap()), Err(Error::Config(_))));
    }
}
