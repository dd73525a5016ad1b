//! Participant-level stratified k-fold planning.
//!
//! Each class is sorted, shuffled with a seeded generator and dealt
//! round-robin into the k test buckets. The dealing pointer carries over
//! from one class to the next (classes in label order), so the remainders
//! of uneven classes land on different folds and total fold sizes stay
//! within one of each other.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetManifest, FrailtyLabel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

/// Per-class participant counts of one fold, indexed by label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FoldClassCounts {
    pub train: [usize; 3],
    pub test: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
    pub class_counts: Vec<FoldClassCounts>,
}

pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be at least 2, got {k}")));
    }
    let mut by_class: [Vec<&str>; 3] = Default::default();
    for e in &manifest.entries {
        by_class[e.label.index()].push(&e.participant_id);
    }
    // Every class must be present and the cohort must fill all k test
    // folds. A class smaller than k is allowed: it simply lands in fewer
    // folds, which keeps the one-per-class, k = 3 case well defined.
    let smallest = FrailtyLabel::ALL
        .into_iter()
        .min_by_key(|l| by_class[l.index()].len())
        .expect("three labels");
    let count = by_class[smallest.index()].len();
    if count == 0 || manifest.entries.len() < k {
        return Err(Error::Stratification { label: smallest, count, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buckets: Vec<BTreeSet<String>> = vec![BTreeSet::new(); k];
    let mut next = 0;
    for ids in &mut by_class {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for id in ids.iter() {
            buckets[next].insert(id.to_string());
            next = (next + 1) % k;
        }
    }

    let everyone: BTreeSet<String> = manifest.entries.iter().map(|e| e.participant_id.clone()).collect();
    let folds = buckets
        .into_iter()
        .map(|test| Fold {
            train: everyone.difference(&test).cloned().collect(),
            test,
        })
        .collect();
    Ok(with_counts(k, seed, folds, manifest))
}

fn with_counts(k: usize, seed: u64, folds: Vec<Fold>, manifest: &DatasetManifest) -> FoldPlan {
    let labels: BTreeMap<&str, FrailtyLabel> = manifest
        .entries
        .iter()
        .map(|e| (e.participant_id.as_str(), e.label))
        .collect();
    let tally = |ids: &BTreeSet<String>| {
        let mut c = [0; 3];
        for id in ids {
            if let Some(l) = labels.get(id.as_str()) {
                c[l.index()] += 1;
            }
        }
        c
    };
    let class_counts = folds
        .iter()
        .map(|f| FoldClassCounts {
            train: tally(&f.train),
            test: tally(&f.test),
        })
        .collect();
    FoldPlan {
        k,
        seed,
        folds,
        class_counts,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LeakageIssue {
    WrongFoldCount { declared: usize, found: usize },
    BothSides { fold: usize, id: String },
    MissingFromFold { fold: usize, id: String },
    UnknownParticipant { fold: usize, id: String },
    RepeatedTest { id: String, folds: Vec<usize> },
    IncompleteCover { missing: Vec<String> },
}

impl fmt::Display for LeakageIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WrongFoldCount { declared, found } => {
                write!(f, "plan declares {declared} folds but holds {found}")
            }
            Self::BothSides { fold, id } => write!(f, "fold {fold}: `{id}` is in both train and test"),
            Self::MissingFromFold { fold, id } => write!(f, "fold {fold}: `{id}` is in neither partition"),
            Self::UnknownParticipant { fold, id } => write!(f, "fold {fold}: `{id}` is not in the manifest"),
            Self::RepeatedTest { id, folds } => write!(f, "`{id}` is tested in folds {folds:?}"),
            Self::IncompleteCover { missing } => write!(f, "incomplete test cover: missing {missing:?}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LeakageReport {
    pub issues: Vec<LeakageIssue>,
}

impl LeakageReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn verify_no_leakage(plan: &FoldPlan, manifest: &DatasetManifest) -> LeakageReport {
    let mut issues = Vec::new();
    if plan.folds.len() != plan.k {
        issues.push(LeakageIssue::WrongFoldCount {
            declared: plan.k,
            found: plan.folds.len(),
        });
    }
    let everyone: BTreeSet<&str> = manifest.entries.iter().map(|e| e.participant_id.as_str()).collect();
    let mut tested_in: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, fold) in plan.folds.iter().enumerate() {
        for id in fold.train.intersection(&fold.test) {
            issues.push(LeakageIssue::BothSides { fold: i, id: id.clone() });
        }
        for id in fold.train.union(&fold.test) {
            if !everyone.contains(id.as_str()) {
                issues.push(LeakageIssue::UnknownParticipant { fold: i, id: id.clone() });
            }
        }
        for &id in &everyone {
            if !fold.train.contains(id) && !fold.test.contains(id) {
                issues.push(LeakageIssue::MissingFromFold { fold: i, id: id.to_string() });
            }
        }
        for id in &fold.test {
            tested_in.entry(id.as_str()).or_default().push(i);
        }
    }
    for (id, folds) in &tested_in {
        if folds.len() > 1 {
            issues.push(LeakageIssue::RepeatedTest {
                id: id.to_string(),
                folds: folds.clone(),
            });
        }
    }
    let missing: Vec<String> = everyone
        .iter()
        .filter(|id| !tested_in.contains_key(*id))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        issues.push(LeakageIssue::IncompleteCover { missing });
    }
    LeakageReport { issues }
}

impl FoldPlan {
    /// Text form: a `k=..,seed=..` header, then `fold_index,partition,participant_id`
    /// lines ordered by fold, partition and id.
    pub fn to_text(&self) -> String {
        let mut out = format!("k={},seed={}\n", self.k, self.seed);
        for (i, fold) in self.folds.iter().enumerate() {
            for (name, ids) in [("test", &fold.test), ("train", &fold.train)] {
                for id in ids {
                    out.push_str(&format!("{i},{name},{id}\n"));
                }
            }
        }
        out
    }

    /// Parses [`FoldPlan::to_text`] output; class counts are recomputed
    /// from the manifest.
    pub fn from_text(text: &str, manifest: &DatasetManifest) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Validation("empty fold plan".into()))?;
        let mut k = None;
        let mut seed = None;
        for field in header.split(',') {
            match field.trim().split_once('=') {
                Some(("k", v)) => k = v.parse::<usize>().ok(),
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                _ => return Err(Error::Validation(format!("bad fold plan header `{header}`"))),
            }
        }
        let (k, seed) = k
            .zip(seed)
            .ok_or_else(|| Error::Validation(format!("bad fold plan header `{header}`")))?;
        let mut folds = vec![
            Fold {
                train: BTreeSet::new(),
                test: BTreeSet::new()
            };
            k
        ];
        for line in lines {
            let mut cols = line.splitn(3, ',');
            let (Some(i), Some(part), Some(id)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Validation(format!("bad fold plan line `{line}`")));
            };
            let fold = i
                .trim()
                .parse::<usize>()
                .ok()
                .and_then(|i| folds.get_mut(i))
                .ok_or_else(|| Error::Validation(format!("fold index out of range in `{line}`")))?;
            let id = id.trim().to_string();
            match part.trim() {
                "train" => fold.train.insert(id),
                "test" => fold.test.insert(id),
                other => return Err(Error::Validation(format!("unknown partition `{other}`"))),
            };
        }
        Ok(with_counts(k, seed, folds, manifest))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(Error::io(path))
    }

    pub fn read(path: &Path, manifest: &DatasetManifest) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_text(&text, manifest)
    }
}
