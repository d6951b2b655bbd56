use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::graph::{Gradients, Matrix};
use crate::error::{Error, Result};

const FORMAT: &str = "ecpec-params/1";

/// Expected parameter names and shapes for a model.
pub type Manifest = BTreeMap<String, (usize, usize)>;

/// Named parameter matrices. Vectors are stored as `1×n` rows.
///
/// Serialises each matrix as little-endian `f64` bytes in base64, so a JSON
/// round trip is exact and re-saving a loaded store reproduces the same bytes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Matrix>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: (usize, usize),
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStore {
    format: String,
    params: BTreeMap<String, RawTensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|m| m.len()).sum()
    }

    /// Copies every entry of `other` into `self`, overwriting on collision.
    pub fn extend(&mut self, other: &ParameterStore) {
        for (k, v) in &other.params {
            self.params.insert(k.clone(), v.clone());
        }
    }

    /// Entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParameterStore {
        ParameterStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn manifest(&self) -> Manifest {
        self.params.iter().map(|(k, v)| (k.clone(), v.dim())).collect()
    }

    pub fn init_normal<R: Rng>(&mut self, name: &str, shape: (usize, usize), std: f64, rng: &mut R) {
        let dist = Normal::new(0.0, std).expect("positive std");
        let m = Matrix::from_shape_simple_fn(shape, || dist.sample(rng));
        self.insert(name, m);
    }

    /// Glorot-style initialisation scaled by fan-in plus fan-out.
    pub fn init_xavier<R: Rng>(&mut self, name: &str, shape: (usize, usize), rng: &mut R) {
        let std = (2.0 / (shape.0 + shape.1) as f64).sqrt();
        self.init_normal(name, shape, std, rng);
    }

    pub fn init_zeros(&mut self, name: &str, shape: (usize, usize)) {
        self.insert(name, Matrix::zeros(shape));
    }

    pub fn init_ones(&mut self, name: &str, shape: (usize, usize)) {
        self.insert(name, Matrix::ones(shape));
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            by_name: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.dim())))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Rejects missing, unknown or mis-shaped entries relative to `manifest`.
    pub fn check_manifest(&self, manifest: &Manifest) -> Result<()> {
        for (name, m) in &self.params {
            match manifest.get(name) {
                None => return Err(Error::Config(format!("unknown parameter `{name}` in checkpoint"))),
                Some(shape) if *shape != m.dim() => {
                    return Err(Error::Shape(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        m.dim(),
                        shape
                    )))
                }
                _ => {}
            }
        }
        if let Some(missing) = manifest.keys().find(|k| !self.params.contains_key(*k)) {
            return Err(Error::Config(format!("parameter `{missing}` missing from checkpoint")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter store serialises")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, manifest: Option<&Manifest>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let store = Self::from_json(&raw).map_err(|e| Error::parse(path, e))?;
        if let Some(m) = manifest {
            store.check_manifest(m)?;
        }
        Ok(store)
    }
}

fn encode(m: &Matrix) -> String {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode(name: &str, raw: &RawTensor) -> std::result::Result<Matrix, String> {
    let bytes = B64
        .decode(raw.data.as_bytes())
        .map_err(|e| format!("parameter `{name}`: {e}"))?;
    let (r, c) = raw.shape;
    if bytes.len() != r * c * 8 {
        return Err(format!(
            "parameter `{name}`: {} bytes do not fit shape {r}x{c}",
            bytes.len()
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|ch| f64::from_le_bytes(ch.try_into().expect("chunk of 8")))
        .collect();
    Matrix::from_shape_vec((r, c), values).map_err(|e| format!("parameter `{name}`: {e}"))
}

impl Serialize for ParameterStore {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = RawStore {
            format: FORMAT.to_string(),
            params: self
                .params
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        RawTensor {
                            shape: v.dim(),
                            data: encode(v),
                        },
                    )
                })
                .collect(),
        };
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParameterStore {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = RawStore::deserialize(deserializer)?;
        if raw.format != FORMAT {
            return Err(serde::de::Error::custom(format!(
                "unsupported parameter format `{}`",
                raw.format
            )));
        }
        let mut params = BTreeMap::new();
        for (k, t) in &raw.params {
            let m = decode(k, t).map_err(serde::de::Error::custom)?;
            params.insert(k.clone(), m);
        }
        Ok(ParameterStore { params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParameterStore::new();
        s.init_xavier("enc.w", (4, 3), &mut rng);
        s.init_zeros("enc.b", (1, 3));
        s.insert("odd", Matrix::from_elem((1, 2), f64::MIN_POSITIVE));
        s
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let s = sample();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        s.save(&p1).unwrap();
        let loaded = ParameterStore::load(&p1, Some(&s.manifest())).unwrap();
        assert_eq!(loaded, s);
        loaded.save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn manifest_rejects_unknown_and_missing() {
        let s = sample();
        let mut m = s.manifest();
        m.remove("odd");
        assert!(s.check_manifest(&m).is_err());
        let mut m = s.manifest();
        m.insert("extra".into(), (1, 1));
        assert!(s.check_manifest(&m).is_err());
        let mut m = s.manifest();
        m.insert("enc.b".into(), (1, 4));
        assert!(matches!(s.check_manifest(&m), Err(Error::Shape(_))));
    }

    #[test]
    fn corrupt_payload_rejected() {
        let json = r#"{"format":"ecpec-params/1","params":{"x":{"shape":[1,2],"data":"AAAA"}}}"#;
        assert!(ParameterStore::from_json(json).is_err());
        let json = r#"{"format":"other","params":{}}"#;
        assert!(ParameterStore::from_json(json).is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip_is_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let n = values.len();
            let mut s = ParameterStore::new();
            s.insert("p", Matrix::from_shape_vec((1, n), values).unwrap());
            let back = ParameterStore::from_json(&s.to_json()).unwrap();
            let a = s.get("p").unwrap();
            let b = back.get("p").unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
