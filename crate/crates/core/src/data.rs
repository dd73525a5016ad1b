//! Frailty labels, silhouette sequences and the on-disk dataset manifest.
//!
//! A dataset is a CSV manifest plus one directory of PNG masks per
//! participant. Frame files are named by their original timestamp index
//! (`000123.png`), so gaps left by excluded frames survive ingestion.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imageio::{self, Image8};

/// Smallest usable sequence length unless configured otherwise.
pub const DEFAULT_MIN_FRAMES: usize = 80;

const MANIFEST_HEADER: &str = "participant_id,fried_score,label,frame_dir,frame_count";

/// Ordinal frailty stage. The discriminant is the class index used by
/// every tensor and metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrailtyLabel {
    NonFrail = 0,
    Prefrail = 1,
    Frail = 2,
}

impl FrailtyLabel {
    pub const ALL: [FrailtyLabel; 3] = [Self::NonFrail, Self::Prefrail, Self::Frail];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NonFrail => "nonfrail",
            Self::Prefrail => "prefrail",
            Self::Frail => "frail",
        }
    }
}

impl fmt::Display for FrailtyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrailtyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nonfrail" | "0" => Ok(Self::NonFrail),
            "prefrail" | "1" => Ok(Self::Prefrail),
            "frail" | "2" => Ok(Self::Frail),
            other => Err(Error::Validation(format!("unknown frailty label `{other}`"))),
        }
    }
}

/// Fried phenotype score, 0 to 5 criteria met.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FriedScore(u8);

impl FriedScore {
    pub fn new(score: i64) -> Result<Self> {
        if (0..=5).contains(&score) {
            Ok(Self(score as u8))
        } else {
            Err(Error::FriedScoreOutOfRange(score))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

pub fn fried_to_label(score: FriedScore) -> FrailtyLabel {
    match score.0 {
        0 => FrailtyLabel::NonFrail,
        1 | 2 => FrailtyLabel::Prefrail,
        _ => FrailtyLabel::Frail,
    }
}

/// One silhouette mask. Pixels are stored as `f32` so that ingestion from
/// other sources can be checked for non-binary values.
#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteFrame {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    timestamp: usize,
}

impl SilhouetteFrame {
    /// Panics if `pixels.len() != height * width`.
    pub fn new(height: usize, width: usize, pixels: Vec<f32>, timestamp: usize) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel buffer does not match {height}x{width}");
        Self {
            height,
            width,
            pixels,
            timestamp,
        }
    }

    pub fn from_mask(height: usize, width: usize, mask: &[bool], timestamp: usize) -> Self {
        let pixels = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        Self::new(height, width, pixels, timestamp)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn timestamp(&self) -> usize {
        self.timestamp
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p >= 0.5).count()
    }

    /// Reads an 8-bit PNG, binarizing at 128.
    pub fn read_png(path: &Path, timestamp: usize) -> Result<Self> {
        let image = imageio::read_png(path)?;
        let pixels = image
            .to_gray()
            .into_iter()
            .map(|v| if v >= 128 { 1.0 } else { 0.0 })
            .collect();
        Ok(Self::new(image.height, image.width, pixels, timestamp))
    }

    /// Writes foreground as 255 and background as 0.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let data = self
            .pixels
            .iter()
            .map(|&p| if p >= 0.5 { 255 } else { 0 })
            .collect();
        imageio::write_png(
            path,
            &Image8 {
                height: self.height,
                width: self.width,
                channels: 1,
                data,
            },
        )
    }
}

/// Canonical file name of the frame with the given timestamp.
pub fn frame_file_name(timestamp: usize) -> String {
    format!("{timestamp:06}.png")
}

/// All silhouettes recorded for one participant.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitSequence {
    participant_id: String,
    frames: Vec<SilhouetteFrame>,
    label: FrailtyLabel,
    fried_score: Option<FriedScore>,
}

impl GaitSequence {
    /// Checks that frames are present, timestamps strictly increase and
    /// the score, if any, agrees with the label.
    pub fn new(
        participant_id: impl Into<String>,
        frames: Vec<SilhouetteFrame>,
        label: FrailtyLabel,
        fried_score: Option<FriedScore>,
    ) -> Result<Self> {
        let participant_id = participant_id.into();
        if frames.is_empty() {
            return Err(Error::InvalidSequence(format!("`{participant_id}` has no frames")));
        }
        if let Some(w) = frames.windows(2).position(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(Error::InvalidSequence(format!(
                "`{participant_id}`: timestamp of frame {} does not increase",
                w + 1
            )));
        }
        if let Some(score) = fried_score {
            let implied = fried_to_label(score);
            if implied != label {
                return Err(Error::LabelScoreMismatch {
                    id: participant_id,
                    label,
                    score: score.value(),
                    implied,
                });
            }
        }
        Ok(Self {
            participant_id,
            frames,
            label,
            fried_score,
        })
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn frames(&self) -> &[SilhouetteFrame] {
        &self.frames
    }

    pub fn label(&self) -> FrailtyLabel {
        self.label
    }

    pub fn fried_score(&self) -> Option<FriedScore> {
        self.fried_score
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Resolution of the first frame.
    pub fn resolution(&self) -> (usize, usize) {
        self.frames[0].resolution()
    }
}

/// A single problem found by [`validate_sequence`]. Frame indices are
/// positions within the sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SequenceIssue {
    InsufficientFrames { count: usize, min: usize },
    NonBinaryFrames(Vec<usize>),
    ResolutionMismatch(Vec<usize>),
}

impl fmt::Display for SequenceIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InsufficientFrames { count, min } => {
                write!(f, "insufficient frames: {count} < {min}")
            }
            Self::NonBinaryFrames(idx) => write!(f, "non-binary frames at {idx:?}"),
            Self::ResolutionMismatch(idx) => write!(f, "resolution differs at frames {idx:?}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SequenceReport {
    pub issues: Vec<SequenceIssue>,
}

impl SequenceReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn validate_sequence(seq: &GaitSequence, min_frames: usize) -> SequenceReport {
    let mut issues = Vec::new();
    if seq.len() < min_frames {
        issues.push(SequenceIssue::InsufficientFrames {
            count: seq.len(),
            min: min_frames,
        });
    }
    let non_binary: Vec<usize> = seq
        .frames
        .iter()
        .enumerate()
        .filter(|(_, f)| !f.is_binary())
        .map(|(i, _)| i)
        .collect();
    if !non_binary.is_empty() {
        issues.push(SequenceIssue::NonBinaryFrames(non_binary));
    }
    let res = seq.resolution();
    let mismatched: Vec<usize> = seq
        .frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.resolution() != res)
        .map(|(i, _)| i)
        .collect();
    if !mismatched.is_empty() {
        issues.push(SequenceIssue::ResolutionMismatch(mismatched));
    }
    SequenceReport { issues }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub participant_id: String,
    pub label: FrailtyLabel,
    pub fried_score: Option<FriedScore>,
    /// As written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub frame_dir: PathBuf,
    pub frame_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// `(height, width)` of every frame.
    pub resolution: (usize, usize),
    /// Directory that relative frame directories are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn frame_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.frame_dir)
    }

    pub fn entry(&self, participant_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.participant_id == participant_id)
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for e in &self.entries {
            counts[e.label.index()] += 1;
        }
        counts
    }

    /// Loads every frame of one participant, ordered by timestamp.
    pub fn load_sequence(&self, entry: &ManifestEntry) -> Result<GaitSequence> {
        let dir = self.frame_path(entry);
        let frame_files = list_frames(&dir)?;
        if frame_files.len() != entry.frame_count {
            return Err(Error::InvalidSequence(format!(
                "`{}`: manifest declares {} frames, directory holds {}",
                entry.participant_id,
                entry.frame_count,
                frame_files.len()
            )));
        }
        let frames = frame_files
            .iter()
            .map(|(ts, path)| SilhouetteFrame::read_png(path, *ts))
            .collect::<Result<Vec<_>>>()?;
        GaitSequence::new(entry.participant_id.clone(), frames, entry.label, entry.fried_score)
    }
}

/// PNG files in `dir` whose stem is a timestamp, sorted by timestamp.
fn list_frames(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut frames = Vec::new();
    for item in fs::read_dir(dir).map_err(Error::io(dir))? {
        let path = item.map_err(Error::io(dir))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            let ts = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::Image {
                    path: path.clone(),
                    message: "frame file name is not a timestamp index".into(),
                })?;
            frames.push((ts, path));
        }
    }
    frames.sort();
    Ok(frames)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest_with(path, DEFAULT_MIN_FRAMES)
}

pub fn load_manifest_with(path: &Path, min_frames: usize) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let parse_err = |line: usize, message: String| Error::ManifestParse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == MANIFEST_HEADER => {}
        Some((i, header)) => {
            return Err(parse_err(i + 1, format!("expected header `{MANIFEST_HEADER}`, found `{header}`")))
        }
        None => return Err(parse_err(1, "empty manifest".into())),
    }

    let mut entries: Vec<ManifestEntry> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(parse_err(lineno, format!("expected 5 columns, found {}", cols.len())));
        }
        let participant_id = cols[0].to_string();
        if participant_id.is_empty() {
            return Err(parse_err(lineno, "empty participant_id".into()));
        }
        let fried_score = match cols[1] {
            "" => None,
            s => {
                let v: i64 = s
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("fried_score `{s}` is not an integer")))?;
                Some(FriedScore::new(v)?)
            }
        };
        let label = match (cols[2], fried_score) {
            ("", Some(score)) => fried_to_label(score),
            ("", None) => return Err(parse_err(lineno, "neither label nor fried_score given".into())),
            (s, score) => {
                let label: FrailtyLabel = s.parse().map_err(|e: Error| parse_err(lineno, e.to_string()))?;
                if let Some(score) = score {
                    let implied = fried_to_label(score);
                    if implied != label {
                        return Err(Error::LabelScoreMismatch {
                            id: participant_id,
                            label,
                            score: score.value(),
                            implied,
                        });
                    }
                }
                label
            }
        };
        let frame_count: usize = cols[4]
            .parse()
            .map_err(|_| parse_err(lineno, format!("frame_count `{}` is not a count", cols[4])))?;
        if !seen.insert(participant_id.clone()) {
            return Err(Error::DuplicateParticipant(participant_id));
        }
        let frame_dir = PathBuf::from(cols[3]);
        if !base_dir.join(&frame_dir).is_dir() {
            return Err(Error::MissingFrameDirectory {
                id: participant_id,
                path: base_dir.join(&frame_dir),
            });
        }
        if frame_count < min_frames {
            return Err(Error::TooFewFrames {
                id: participant_id,
                count: frame_count,
                min: min_frames,
            });
        }
        entries.push(ManifestEntry {
            participant_id,
            label,
            fried_score,
            frame_dir,
            frame_count,
        });
    }

    let resolution = match entries.first() {
        Some(first) => {
            let dir = base_dir.join(&first.frame_dir);
            let frames = list_frames(&dir)?;
            let (_, probe) = frames.first().ok_or_else(|| Error::InvalidSequence(format!(
                "`{}`: frame directory is empty",
                first.participant_id
            )))?;
            imageio::png_dimensions(probe)?
        }
        None => (0, 0),
    };

    Ok(DatasetManifest {
        entries,
        resolution,
        base_dir,
    })
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in &manifest.entries {
        let score = e.fried_score.map(|s| s.value().to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.participant_id,
            score,
            e.label,
            e.frame_dir.display(),
            e.frame_count
        ));
    }
    fs::write(path, out).map_err(Error::io(path))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRate {
    pub participant_id: String,
    pub frame_count: usize,
    pub expected_frames: i64,
    pub rate: f64,
}

/// Fraction of expected frames that yielded a usable silhouette, highest
/// first. Ties are ordered by participant id.
pub fn detection_rate_report(
    manifest: &DatasetManifest,
    expected_frames: impl Fn(&ManifestEntry) -> i64,
) -> Result<Vec<DetectionRate>> {
    let mut rates = manifest
        .entries
        .iter()
        .map(|e| {
            let expected = expected_frames(e);
            if expected <= 0 {
                return Err(Error::Validation(format!(
                    "expected frame count for `{}` must be positive, got {expected}",
                    e.participant_id
                )));
            }
            Ok(DetectionRate {
                participant_id: e.participant_id.clone(),
                frame_count: e.frame_count,
                expected_frames: expected,
                rate: (e.frame_count as f64 / expected as f64).clamp(0.0, 1.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rates.sort_by(|a, b| {
        b.rate
            .total_cmp(&a.rate)
            .then_with(|| a.participant_id.cmp(&b.participant_id))
    });
    Ok(rates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize) -> GaitSequence {
        let frames = (0..n)
            .map(|t| SilhouetteFrame::new(64, 44, vec![0.0; 64 * 44], t))
            .collect();
        GaitSequence::new("p", frames, FrailtyLabel::Frail, None).unwrap()
    }

    #[test]
    fn fried_thresholds() {
        let labels: Vec<_> = (0..=5).map(|s| fried_to_label(FriedScore::new(s).unwrap())).collect();
        use FrailtyLabel::*;
        assert_eq!(labels, [NonFrail, Prefrail, Prefrail, Frail, Frail, Frail]);
        assert!(matches!(FriedScore::new(6), Err(Error::FriedScoreOutOfRange(6))));
        assert!(matches!(FriedScore::new(-1), Err(Error::FriedScoreOutOfRange(-1))));
    }

    #[test]
    fn label_order_and_parse() {
        assert!(FrailtyLabel::NonFrail < FrailtyLabel::Prefrail);
        assert!(FrailtyLabel::Prefrail < FrailtyLabel::Frail);
        for l in FrailtyLabel::ALL {
            assert_eq!(l.name().parse::<FrailtyLabel>().unwrap(), l);
            assert_eq!(FrailtyLabel::from_index(l.index()), Some(l));
        }
    }

    #[test]
    fn sequence_validation_cases() {
        assert!(validate_sequence(&seq(100), 80).passed());

        let short = validate_sequence(&seq(60), 80);
        assert_eq!(
            short.issues,
            vec![SequenceIssue::InsufficientFrames { count: 60, min: 80 }]
        );
        assert!(short.issues[0].to_string().starts_with("insufficient frames"));

        let mut frames = seq(100).frames;
        frames[17] = SilhouetteFrame::new(64, 44, {
            let mut p = vec![0.0; 64 * 44];
            p[5] = 0.5;
            p
        }, 17);
        let s = GaitSequence::new("p", frames, FrailtyLabel::Frail, None).unwrap();
        let before = s.clone();
        let report = validate_sequence(&s, 80);
        assert_eq!(report.issues, vec![SequenceIssue::NonBinaryFrames(vec![17])]);
        assert_eq!(s, before);
    }

    #[test]
    fn sequence_constructor_checks() {
        let frames = vec![
            SilhouetteFrame::new(2, 2, vec![0.0; 4], 3),
            SilhouetteFrame::new(2, 2, vec![0.0; 4], 3),
        ];
        assert!(GaitSequence::new("p", frames, FrailtyLabel::Frail, None).is_err());
        assert!(GaitSequence::new("p", vec![], FrailtyLabel::Frail, None).is_err());
        let frames = vec![SilhouetteFrame::new(2, 2, vec![0.0; 4], 0)];
        let score = FriedScore::new(1).ok();
        assert!(matches!(
            GaitSequence::new("p", frames, FrailtyLabel::Frail, score),
            Err(Error::LabelScoreMismatch { .. })
        ));
    }

    #[test]
    fn detection_rates() {
        let entry = |id: &str, n| ManifestEntry {
            participant_id: id.into(),
            label: FrailtyLabel::NonFrail,
            fried_score: None,
            frame_dir: id.into(),
            frame_count: n,
        };
        let m = DatasetManifest {
            entries: vec![entry("a", 0), entry("b", 3762), entry("c", 52), entry("d", 150)],
            resolution: (64, 44),
            base_dir: PathBuf::new(),
        };
        let r = detection_rate_report(&m, |e| if e.participant_id == "b" { 3762 } else { 100 }).unwrap();
        let got: Vec<(&str, f64)> = r.iter().map(|d| (d.participant_id.as_str(), d.rate)).collect();
        assert_eq!(got, vec![("b", 1.0), ("d", 1.0), ("c", 0.52), ("a", 0.0)]);
        assert!(detection_rate_report(&m, |_| 0).is_err());
    }
}
