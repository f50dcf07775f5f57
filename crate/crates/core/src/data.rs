//! Subject records, anthropometric labels, dataset I/O and target
//! standardization.
//!
//! Datasets are UTF-8 JSON Lines with one subject per line. Pose maps are
//! keyed by [`PoseKind`] and always serialized in canonical pose order, so
//! writing the same records twice yields identical bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, RecordError, Result};

/// Length of one pose embedding produced by the external image encoder.
pub const EMBED_DIM: usize = 1024;

/// Node feature length: embedding plus the appended age.
pub const NODE_DIM: usize = EMBED_DIM + 1;

/// The eight photographed views, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseKind {
    #[serde(rename = "frontal_1")]
    Frontal1,
    #[serde(rename = "frontal_2")]
    Frontal2,
    #[serde(rename = "frontal_3")]
    Frontal3,
    #[serde(rename = "frontal_4")]
    Frontal4,
    LateralLeft,
    LateralRight,
    Posterior,
    Selfie,
}

impl PoseKind {
    pub const ALL: [PoseKind; 8] = [
        PoseKind::Frontal1,
        PoseKind::Frontal2,
        PoseKind::Frontal3,
        PoseKind::Frontal4,
        PoseKind::LateralLeft,
        PoseKind::LateralRight,
        PoseKind::Posterior,
        PoseKind::Selfie,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoseKind::Frontal1 => "frontal_1",
            PoseKind::Frontal2 => "frontal_2",
            PoseKind::Frontal3 => "frontal_3",
            PoseKind::Frontal4 => "frontal_4",
            PoseKind::LateralLeft => "lateral_left",
            PoseKind::LateralRight => "lateral_right",
            PoseKind::Posterior => "posterior",
            PoseKind::Selfie => "selfie",
        }
    }

    /// Position in canonical order.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PoseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The four anthropometric regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnthroTarget {
    #[serde(rename = "height_cm")]
    Height,
    #[serde(rename = "weight_kg")]
    Weight,
    #[serde(rename = "muac_cm")]
    Muac,
    #[serde(rename = "hc_cm")]
    HeadCircumference,
}

impl AnthroTarget {
    pub const ALL: [AnthroTarget; 4] = [
        AnthroTarget::Height,
        AnthroTarget::Weight,
        AnthroTarget::Muac,
        AnthroTarget::HeadCircumference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnthroTarget::Height => "height_cm",
            AnthroTarget::Weight => "weight_kg",
            AnthroTarget::Muac => "muac_cm",
            AnthroTarget::HeadCircumference => "hc_cm",
        }
    }

    /// Short column label used in report tables.
    pub fn short(self) -> &'static str {
        match self {
            AnthroTarget::Height => "H",
            AnthroTarget::Weight => "W",
            AnthroTarget::Muac => "MUAC",
            AnthroTarget::HeadCircumference => "HC",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            AnthroTarget::Weight => "kg",
            _ => "cm",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for AnthroTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnthroTarget::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTarget(s.to_string()))
    }
}

/// Optional anthropometric measurements of one subject.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AnthroLabels {
    #[serde(default)]
    pub height_cm: Option<f64>,
    #[serde(default)]
    pub weight_kg: Option<f64>,
    #[serde(default)]
    pub muac_cm: Option<f64>,
    #[serde(default)]
    pub hc_cm: Option<f64>,
}

impl AnthroLabels {
    pub fn from_array(values: [Option<f64>; 4]) -> Self {
        AnthroLabels {
            height_cm: values[0],
            weight_kg: values[1],
            muac_cm: values[2],
            hc_cm: values[3],
        }
    }

    pub fn to_array(&self) -> [Option<f64>; 4] {
        [self.height_cm, self.weight_kg, self.muac_cm, self.hc_cm]
    }

    pub fn get(&self, target: AnthroTarget) -> Option<f64> {
        self.to_array()[target.index()]
    }

    pub fn is_empty(&self) -> bool {
        self.to_array().iter().all(Option::is_none)
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.is_empty() {
            return Err(RecordError::invalid(
                "anthro",
                "at least one measurement must be present",
            ));
        }
        for target in AnthroTarget::ALL {
            if let Some(v) = self.get(target) {
                if !v.is_finite() {
                    return Err(RecordError::invalid(
                        format!("anthro.{}", target.name()),
                        "must be finite",
                    ));
                }
                if v < 0.0 {
                    return Err(RecordError::invalid(
                        format!("anthro.{}", target.name()),
                        "must be nonnegative",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One child: age, per-pose embeddings and optional labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub age_months: f64,
    pub poses: BTreeMap<PoseKind, Vec<f64>>,
    #[serde(default)]
    pub class_label: Option<u8>,
    #[serde(default)]
    pub anthro: Option<AnthroLabels>,
}

impl SubjectRecord {
    /// Checks every record invariant against the given embedding length.
    pub fn validate_with_dim(&self, embed_dim: usize) -> Result<(), RecordError> {
        if self.id.is_empty() {
            return Err(RecordError::invalid("id", "must be nonempty"));
        }
        if !self.age_months.is_finite() || self.age_months <= 0.0 {
            return Err(RecordError::invalid("age_months", "age_months must be positive"));
        }
        if self.poses.is_empty() {
            return Err(RecordError::invalid("poses", "at least one pose is required"));
        }
        for (&pose, embedding) in &self.poses {
            if embedding.len() != embed_dim {
                return Err(RecordError::DimensionMismatch {
                    pose,
                    expected: embed_dim,
                    got: embedding.len(),
                });
            }
            if embedding.iter().any(|v| !v.is_finite()) {
                return Err(RecordError::invalid(
                    format!("poses.{pose}"),
                    "non-finite embedding value",
                ));
            }
        }
        if let Some(label) = self.class_label {
            if label > 1 {
                return Err(RecordError::invalid("class_label", "must be 0, 1 or null"));
            }
        }
        if let Some(anthro) = &self.anthro {
            anthro.validate()?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        self.validate_with_dim(EMBED_DIM)
    }

    pub fn has_any_label(&self) -> bool {
        self.class_label.is_some() || self.anthro.is_some_and(|a| !a.is_empty())
    }

    pub fn anthro_value(&self, target: AnthroTarget) -> Option<f64> {
        self.anthro.and_then(|a| a.get(target))
    }

    /// Length of the pose embeddings (all poses share it once validated).
    pub fn embed_dim(&self) -> usize {
        self.poses.values().next().map_or(0, Vec::len)
    }
}

/// Parses and validates one JSON object in dataset-line format. Errors
/// report line 1.
pub fn parse_record(json: &str, embed_dim: usize) -> Result<SubjectRecord> {
    parse_line(json, 1, embed_dim)
}

fn parse_line(line: &str, lineno: usize, embed_dim: usize) -> Result<SubjectRecord> {
    let record: SubjectRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
        line: lineno,
        message: e.to_string(),
    })?;
    record.validate_with_dim(embed_dim).map_err(|e| match e {
        RecordError::DimensionMismatch { .. } => Error::DimensionMismatch {
            line: lineno,
            source: e,
        },
        RecordError::Invalid { .. } => Error::InvalidRecord {
            line: lineno,
            source: e,
        },
    })?;
    Ok(record)
}

/// Parses and validates JSON Lines text. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_dataset(reader: impl BufRead, embed_dim: usize) -> Result<Vec<SubjectRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(&line, lineno, embed_dim)?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId {
                line: lineno,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Loads a dataset file of 1024-d pose embeddings.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SubjectRecord>> {
    load_dataset_with_dim(path, EMBED_DIM)
}

pub fn load_dataset_with_dim(path: impl AsRef<Path>, embed_dim: usize) -> Result<Vec<SubjectRecord>> {
    let file = File::open(path)?;
    parse_dataset(BufReader::new(file), embed_dim)
}

pub fn write_dataset(mut writer: impl Write, records: &[SubjectRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[SubjectRecord]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_dataset(&mut writer, records)?;
    writer.flush()?;
    Ok(())
}

/// Per-target mean and sample standard deviation over a training fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl TargetStats {
    /// Identity scaling; used by models trained without regression labels.
    pub fn identity() -> Self {
        TargetStats {
            mean: [0.0; 4],
            std: [1.0; 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in AnthroTarget::ALL {
            let (m, s) = (self.mean[t.index()], self.std[t.index()]);
            if !m.is_finite() || !s.is_finite() {
                return Err(Error::NonFinite(format!("target stats for {}", t.name())));
            }
            if s <= 0.0 {
                return Err(Error::ZeroVariance(t.name().to_string()));
            }
        }
        Ok(())
    }

    pub fn standardize(&self, value: f64, target: AnthroTarget) -> f64 {
        (value - self.mean[target.index()]) / self.std[target.index()]
    }

    pub fn destandardize(&self, value: f64, target: AnthroTarget) -> f64 {
        value * self.std[target.index()] + self.mean[target.index()]
    }

    pub fn standardize_named(&self, value: f64, target: &str) -> Result<f64> {
        Ok(self.standardize(value, target.parse()?))
    }

    pub fn destandardize_named(&self, value: f64, target: &str) -> Result<f64> {
        Ok(self.destandardize(value, target.parse()?))
    }
}

/// Mean and sample standard deviation (divisor n-1) of each target over the
/// records that carry it.
pub fn compute_target_stats(records: &[SubjectRecord]) -> Result<TargetStats> {
    target_stats_from_values(records.iter().map(|r| r.anthro.map(|a| a.to_array()).unwrap_or([None; 4])))
}

/// As [`compute_target_stats`] over bare label rows.
pub fn target_stats_from_values(rows: impl IntoIterator<Item = [Option<f64>; 4]>) -> Result<TargetStats> {
    let mut columns: [Vec<f64>; 4] = Default::default();
    for row in rows {
        for (col, v) in columns.iter_mut().zip(row) {
            col.extend(v);
        }
    }
    let mut stats = TargetStats::identity();
    for target in AnthroTarget::ALL {
        let values = &columns[target.index()];
        match values.len() {
            0 => return Err(Error::NoTargetValues(target.name().to_string())),
            1 => {
                return Err(Error::TooFewTargetValues {
                    target: target.name().to_string(),
                    count: 1,
                })
            }
            _ => {}
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var <= 0.0 {
            return Err(Error::ZeroVariance(target.name().to_string()));
        }
        stats.mean[target.index()] = mean;
        stats.std[target.index()] = var.sqrt();
    }
    Ok(stats)
}
