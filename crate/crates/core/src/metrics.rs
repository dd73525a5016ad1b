//! Participant-level evaluation: micro-averaged AUROC, linearly weighted
//! Cohen's kappa, confusion matrices and cross-fold aggregation.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::data::FrailtyLabel;
use crate::error::{Error, Result};
use crate::sealed;

/// Class probabilities for one test participant.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub participant_id: String,
    pub truth: FrailtyLabel,
    pub probs: [f64; 3],
}

impl Prediction {
    /// Arg-max class; ties go to the lower (less frail) class.
    pub fn predicted(&self) -> FrailtyLabel {
        let mut best = 0;
        for c in 1..3 {
            if self.probs[c] > self.probs[best] {
                best = c;
            }
        }
        FrailtyLabel::ALL[best]
    }
}

/// Confusion counts, rows = true class, columns = predicted class.
pub type Confusion = [[usize; 3]; 3];

pub fn confusion_matrix(preds: &[Prediction]) -> Confusion {
    let mut m = [[0; 3]; 3];
    for p in preds {
        m[p.truth.index()][p.predicted().index()] += 1;
    }
    m
}

/// Area under the ROC curve of `(score, is_positive)` pairs, with ties
/// credited one half. Computed from mid-ranks in O(n log n).
pub fn binary_auroc(pairs: &[(f64, bool)]) -> Result<f64> {
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos = sorted[i..j].iter().filter(|p| p.1).count();
        pos_rank_sum += mid * pos as f64;
        i = j;
    }
    let np = n_pos as f64;
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// AUROC over the flattened one-vs-rest expansion: every (sample, class)
/// cell contributes its probability, positive iff the class is the truth.
pub fn micro_auroc(preds: &[Prediction]) -> Result<f64> {
    let pairs: Vec<(f64, bool)> = preds
        .iter()
        .flat_map(|p| (0..3).map(move |c| (p.probs[c], p.truth.index() == c)))
        .collect();
    binary_auroc(&pairs)
}

/// One-vs-rest AUROC per class; `None` where the class is absent or is
/// the only class present.
pub fn per_class_auroc(preds: &[Prediction]) -> [Option<f64>; 3] {
    std::array::from_fn(|c| {
        let pairs: Vec<(f64, bool)> = preds.iter().map(|p| (p.probs[c], p.truth.index() == c)).collect();
        binary_auroc(&pairs).ok()
    })
}

/// Micro AUROC over the participants of two classes only, with each
/// probability vector renormalized over those two classes.
pub fn restricted_micro_auroc(preds: &[Prediction], classes: [FrailtyLabel; 2]) -> Result<f64> {
    let [a, b] = classes.map(FrailtyLabel::index);
    let mut pairs = Vec::new();
    for p in preds.iter().filter(|p| classes.contains(&p.truth)) {
        let total = p.probs[a] + p.probs[b];
        let (pa, pb) = if total > 0.0 {
            (p.probs[a] / total, p.probs[b] / total)
        } else {
            (0.5, 0.5)
        };
        pairs.push((pa, p.truth.index() == a));
        pairs.push((pb, p.truth.index() == b));
    }
    binary_auroc(&pairs)
}

/// Linearly weighted kappa of a 3×3 confusion matrix.
pub fn weighted_kappa_from_confusion(m: &Confusion) -> Result<f64> {
    let n: usize = m.iter().flatten().sum();
    if n == 0 {
        return Err(Error::UndefinedMetric("kappa of an empty confusion matrix".into()));
    }
    let n = n as f64;
    let rows: Vec<f64> = (0..3).map(|i| m[i].iter().sum::<usize>() as f64).collect();
    let cols: Vec<f64> = (0..3).map(|j| (0..3).map(|i| m[i][j]).sum::<usize>() as f64).collect();
    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let w = (i as f64 - j as f64).abs() / 2.0;
            observed += w * m[i][j] as f64 / n;
            expected += w * rows[i] * cols[j] / (n * n);
        }
    }
    if expected == 0.0 {
        return Err(Error::UndefinedMetric("kappa with zero expected disagreement".into()));
    }
    Ok(1.0 - observed / expected)
}

pub fn weighted_kappa(preds: &[Prediction]) -> Result<f64> {
    weighted_kappa_from_confusion(&confusion_matrix(preds))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KappaBand {
    Poor,
    Fair,
    Moderate,
    Substantial,
    NearPerfect,
}

impl fmt::Display for KappaBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Poor => "poor",
            Self::Fair => "fair",
            Self::Moderate => "moderate",
            Self::Substantial => "substantial",
            Self::NearPerfect => "near-perfect",
        })
    }
}

/// Qualitative agreement band; each lower bound is inclusive.
pub fn kappa_band(kappa: f64) -> KappaBand {
    match kappa {
        k if k >= 0.81 => KappaBand::NearPerfect,
        k if k >= 0.61 => KappaBand::Substantial,
        k if k >= 0.41 => KappaBand::Moderate,
        k if k >= 0.21 => KappaBand::Fair,
        _ => KappaBand::Poor,
    }
}

/// Metrics of one fold. `best_*` hold the maximum over the training
/// trajectory when the report comes from a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub experiment: String,
    pub fold: usize,
    pub confusion: Confusion,
    pub micro_auc: f64,
    pub weighted_kappa: f64,
    pub per_class_auc: [Option<f64>; 3],
    pub best_micro_auc: Option<f64>,
    pub best_weighted_kappa: Option<f64>,
}

impl EvalReport {
    pub fn from_predictions(experiment: &str, fold: usize, preds: &[Prediction]) -> Result<Self> {
        Ok(Self {
            experiment: experiment.to_string(),
            fold,
            confusion: confusion_matrix(preds),
            micro_auc: micro_auroc(preds)?,
            weighted_kappa: weighted_kappa(preds)?,
            per_class_auc: per_class_auroc(preds),
            best_micro_auc: None,
            best_weighted_kappa: None,
        })
    }

    /// Key=value text; floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        let confusion = self
            .confusion
            .iter()
            .map(|r| format!("{} {} {}", r[0], r[1], r[2]))
            .collect::<Vec<_>>()
            .join(";");
        let mut out = String::new();
        out.push_str(&format!("experiment={}\n", self.experiment));
        out.push_str(&format!("fold={}\n", self.fold));
        out.push_str(&format!("micro_auc={}\n", self.micro_auc));
        out.push_str(&format!("weighted_kappa={}\n", self.weighted_kappa));
        for label in FrailtyLabel::ALL {
            out.push_str(&format!("auc_{}={}\n", label, opt(self.per_class_auc[label.index()])));
        }
        out.push_str(&format!("best_micro_auc={}\n", opt(self.best_micro_auc)));
        out.push_str(&format!("best_weighted_kappa={}\n", opt(self.best_weighted_kappa)));
        out.push_str(&format!("confusion={confusion}\n"));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::Validation(format!("eval report: bad or missing `{what}`"));
        let get = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| bad(key))
        };
        let float = |key: &str| get(key)?.parse::<f64>().map_err(|_| bad(key));
        let opt = |key: &str| match get(key)? {
            "none" => Ok(None),
            v => v.parse::<f64>().map(Some).map_err(|_| bad(key)),
        };
        let mut confusion = [[0; 3]; 3];
        let rows: Vec<&str> = get("confusion")?.split(';').collect();
        if rows.len() != 3 {
            return Err(bad("confusion"));
        }
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<usize> = row
                .split_whitespace()
                .map(|c| c.parse().map_err(|_| bad("confusion")))
                .collect::<Result<_>>()?;
            if cells.len() != 3 {
                return Err(bad("confusion"));
            }
            confusion[i].copy_from_slice(&cells);
        }
        Ok(Self {
            experiment: get("experiment")?.to_string(),
            fold: get("fold")?.parse().map_err(|_| bad("fold"))?,
            confusion,
            micro_auc: float("micro_auc")?,
            weighted_kappa: float("weighted_kappa")?,
            per_class_auc: [opt("auc_nonfrail")?, opt("auc_prefrail")?, opt("auc_frail")?],
            best_micro_auc: opt("best_micro_auc")?,
            best_weighted_kappa: opt("best_weighted_kappa")?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        sealed::write_sealed(path, &self.to_text())
    }

    /// Reads a report, rejecting files without a valid checksum line.
    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&sealed::read_sealed(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Mean and sample standard deviation (n − 1 denominator).
pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 values for a sample deviation, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MeanStd { mean, std: var.sqrt() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldSummary {
    pub folds: usize,
    pub micro_auc: MeanStd,
    pub weighted_kappa: MeanStd,
    /// Present when every report carries the trajectory maximum.
    pub best_micro_auc: Option<MeanStd>,
    pub best_weighted_kappa: Option<MeanStd>,
}

pub fn aggregate_folds(reports: &[EvalReport]) -> Result<FoldSummary> {
    let collect = |f: fn(&EvalReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    let best = |f: fn(&EvalReport) -> Option<f64>| {
        reports
            .iter()
            .map(f)
            .collect::<Option<Vec<_>>>()
            .and_then(|v| mean_std(&v).ok())
    };
    Ok(FoldSummary {
        folds: reports.len(),
        micro_auc: mean_std(&collect(|r| r.micro_auc))?,
        weighted_kappa: mean_std(&collect(|r| r.weighted_kappa))?,
        best_micro_auc: best(|r| r.best_micro_auc),
        best_weighted_kappa: best(|r| r.best_weighted_kappa),
    })
}

const PREDICTIONS_HEADER: &str = "participant_id,true,p_nonfrail,p_prefrail,p_frail";

pub fn predictions_to_csv(preds: &[Prediction]) -> String {
    let mut out = format!("{PREDICTIONS_HEADER}\n");
    for p in preds {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.participant_id, p.truth, p.probs[0], p.probs[1], p.probs[2]
        ));
    }
    out
}

pub fn predictions_from_csv(text: &str) -> Result<Vec<Prediction>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(PREDICTIONS_HEADER) {
        return Err(Error::Validation(format!("predictions: expected header `{PREDICTIONS_HEADER}`")));
    }
    lines
        .map(|line| {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(Error::Validation(format!("predictions: bad line `{line}`")));
            }
            let mut probs = [0.0; 3];
            for (c, v) in cols[2..].iter().enumerate() {
                probs[c] = v
                    .parse()
                    .map_err(|_| Error::Validation(format!("predictions: bad probability `{v}`")))?;
            }
            Ok(Prediction {
                participant_id: cols[0].to_string(),
                truth: cols[1].parse()?,
                probs,
            })
        })
        .collect()
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    fs::write(path, predictions_to_csv(preds)).map_err(Error::io(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    predictions_from_csv(&fs::read_to_string(path).map_err(Error::io(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use FrailtyLabel::*;

    fn pred(truth: FrailtyLabel, probs: [f64; 3]) -> Prediction {
        Prediction {
            participant_id: String::new(),
            truth,
            probs,
        }
    }

    #[test]
    fn four_sample_hand_case() {
        let preds = [
            pred(NonFrail, [0.6, 0.3, 0.1]),
            pred(Prefrail, [0.3, 0.3, 0.4]),
            pred(Frail, [0.1, 0.2, 0.7]),
            pred(Frail, [0.2, 0.5, 0.3]),
        ];
        // Positives: 0.6, 0.3, 0.7, 0.3. Negatives: 0.3 0.1 0.3 0.4 0.1 0.2 0.2 0.5.
        // 0.6 and 0.7 beat all 8; each 0.3 beats 4 and ties 2.
        let wins = 8.0 + (4.0 + 1.0) * 2.0 + 8.0;
        assert!((micro_auroc(&preds).unwrap() - wins / 32.0).abs() < 1e-15);
    }

    #[test]
    fn ten_sample_kappa_hand_case() {
        let m: Confusion = [[3, 1, 0], [1, 2, 1], [0, 1, 1]];
        // rows (4,4,2), cols (4,4,2), n = 10.
        // Observed weighted disagreement: 4 adjacent cells of weight 1/2 → 0.2.
        // Expected: Σ w r_i c_j / 100 = (0.5·(16+8+16+8) + 1·(8+8)) / 100 = 0.4.
        let k = weighted_kappa_from_confusion(&m).unwrap();
        assert!((k - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kappa_penalizes_extreme_confusion_twice() {
        let base: Confusion = [[2, 0, 0], [0, 2, 0], [0, 0, 2]];
        let adjacent: Confusion = [[1, 1, 0], [0, 2, 0], [0, 0, 2]];
        let extreme: Confusion = [[1, 0, 1], [0, 2, 0], [0, 0, 2]];
        let disagreement = |m: &Confusion| {
            let n: usize = m.iter().flatten().sum();
            (0..9)
                .map(|c: usize| (c / 3).abs_diff(c % 3) as f64 / 2.0 * m[c / 3][c % 3] as f64)
                .sum::<f64>()
                / n as f64
        };
        assert_eq!(disagreement(&base), 0.0);
        assert!((disagreement(&extreme) - 2.0 * disagreement(&adjacent)).abs() < 1e-15);
    }

    #[test]
    fn undefined_cases() {
        assert!(micro_auroc(&[]).is_err());
        let m: Confusion = [[5, 0, 0], [0, 0, 0], [0, 0, 0]];
        assert!(weighted_kappa_from_confusion(&m).is_err());
    }

    #[test]
    fn bands() {
        assert_eq!(kappa_band(0.6190), KappaBand::Substantial);
        assert_eq!(kappa_band(0.5228), KappaBand::Moderate);
        assert_eq!(kappa_band(0.2110), KappaBand::Fair);
        assert_eq!(kappa_band(0.21), KappaBand::Fair);
        assert_eq!(kappa_band(0.2099), KappaBand::Poor);
        assert_eq!(kappa_band(0.81), KappaBand::NearPerfect);
        assert_eq!(kappa_band(-0.3), KappaBand::Poor);
    }

    #[test]
    fn fold_statistics() {
        let s = mean_std(&[0.7, 0.8]).unwrap();
        assert!((s.mean - 0.75).abs() < 1e-15);
        assert!((s.std - 0.070_710_678_118_654_76).abs() < 1e-12);
        assert_eq!(mean_std(&[0.5; 5]).unwrap().std, 0.0);
        assert!(mean_std(&[0.5]).is_err());
        assert_eq!(format!("{}", MeanStd { mean: 0.779, std: 0.091 }), "0.7790 ± 0.0910");
    }

    #[test]
    fn report_and_csv_round_trip() {
        let preds = vec![
            Prediction { participant_id: "a".into(), truth: NonFrail, probs: [0.7, 0.2, 0.1] },
            Prediction { participant_id: "b".into(), truth: Frail, probs: [0.1, 0.3, 0.6] },
            Prediction { participant_id: "c".into(), truth: Prefrail, probs: [1.0 / 3.0, 0.4, 0.6 - 1.0 / 3.0] },
        ];
        assert_eq!(predictions_from_csv(&predictions_to_csv(&preds)).unwrap(), preds);
        let mut report = EvalReport::from_predictions("M2-unweighted", 3, &preds).unwrap();
        report.best_micro_auc = Some(0.9);
        assert_eq!(EvalReport::from_text(&report.to_text()).unwrap(), report);
    }
}
