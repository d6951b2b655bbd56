use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GEMAPS_DIM: usize = 62;
pub const COMPARE_DIM: usize = 6373;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Gemaps,
    Compare,
    FaceIdentity,
    FaceEmotion,
    Custom,
}

impl FeatureSource {
    /// Fixed width for the openSMILE sets; other sources are free-width.
    pub fn expected_dim(self) -> Option<usize> {
        match self {
            FeatureSource::Gemaps => Some(GEMAPS_DIM),
            FeatureSource::Compare => Some(COMPARE_DIM),
            _ => None,
        }
    }
}

impl std::str::FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gemaps" => Ok(FeatureSource::Gemaps),
            "compare" => Ok(FeatureSource::Compare),
            "face_identity" => Ok(FeatureSource::FaceIdentity),
            "face_emotion" => Ok(FeatureSource::FaceEmotion),
            "custom" => Ok(FeatureSource::Custom),
            other => Err(Error::Config(format!("unknown feature source `{other}`"))),
        }
    }
}

/// A finite feature vector tagged with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureVector")]
pub struct FeatureVector {
    values: Vec<f64>,
    source: FeatureSource,
}

#[derive(Deserialize)]
struct RawFeatureVector {
    values: Vec<f64>,
    source: FeatureSource,
}

impl TryFrom<RawFeatureVector> for FeatureVector {
    type Error = Error;

    fn try_from(raw: RawFeatureVector) -> Result<Self> {
        FeatureVector::new(raw.values, raw.source)
    }
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, source: FeatureSource) -> Result<Self> {
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("feature value {bad} is not finite")));
        }
        if let Some(d) = source.expected_dim() {
            if values.len() != d {
                return Err(Error::Shape(format!(
                    "{source:?} features must have {d} values, got {}",
                    values.len()
                )));
            }
        }
        Ok(Self { values, source })
    }

    pub fn zeros(dim: usize, source: FeatureSource) -> Self {
        Self {
            values: vec![0.0; dim],
            source,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }
}

/// Reads `utterance_id, v0, …, vD-1` rows. The header row is optional.
pub fn read_feature_csv(path: impl AsRef<Path>, source: FeatureSource) -> Result<BTreeMap<String, FeatureVector>> {
    let path = path.as_ref();
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        let Some(id) = record.get(0) else { continue };
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().skip(1).map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(csv_err(format!("row {}: {e}", line + 1))),
        };
        let fv = FeatureVector::new(values, source).map_err(|e| csv_err(format!("row {}: {e}", line + 1)))?;
        out.insert(id.to_string(), fv);
    }
    Ok(out)
}

pub fn write_feature_csv(path: impl AsRef<Path>, rows: &BTreeMap<String, FeatureVector>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let dim = rows.values().next().map_or(0, FeatureVector::dim);
    let mut header = vec!["utterance_id".to_string()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (id, fv) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(fv.values().iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_are_validated() {
        assert!(FeatureVector::new(vec![0.0; 62], FeatureSource::Gemaps).is_ok());
        assert!(FeatureVector::new(vec![0.0; 61], FeatureSource::Gemaps).is_err());
        assert!(FeatureVector::new(vec![0.0; 6373], FeatureSource::Compare).is_ok());
        assert!(FeatureVector::new(vec![0.0; 100], FeatureSource::Compare).is_err());
        assert!(FeatureVector::new(vec![f64::NAN], FeatureSource::Custom).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut rows = BTreeMap::new();
        rows.insert("c1_u1".to_string(), FeatureVector::new(vec![0.5, -1.25, 3.0], FeatureSource::Custom).unwrap());
        rows.insert("c1_u2".to_string(), FeatureVector::new(vec![0.1, 0.2, 1e-300], FeatureSource::Custom).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_feature_csv(&p, &rows).unwrap();
        let back = read_feature_csv(&p, FeatureSource::Custom).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn wrong_width_in_csv_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        std::fs::write(&p, "u1,1,2,3\n").unwrap();
        assert!(read_feature_csv(&p, FeatureSource::Gemaps).is_err());
    }
}
