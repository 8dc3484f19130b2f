//! Policy data model, the discrete search grid, and the policy JSON format.
//!
//! Document layout (version 1):
//!
//! ```json
//! {"version":1,"chains":[{"policies":[{"technique":"Rotate","probability":1.0,"level":6}],
//!   "accuracy":0.5,"evaluations_used":20}]}
//! ```

use std::fmt;

use serde::{Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::ops::{MagnitudeLevel, Technique};

pub const FORMAT_VERSION: u64 = 1;

/// Grid membership tolerance for parsed probabilities.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

/// Application probability on the 11-point grid `{0.0, 0.1, ..., 1.0}`,
/// stored as tenths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Probability(u8);

impl Probability {
    pub const ZERO: Probability = Probability(0);
    pub const ONE: Probability = Probability(10);
    pub const GRID_SIZE: usize = 11;

    pub fn from_tenths(tenths: u8) -> Option<Self> {
        (tenths <= 10).then_some(Probability(tenths))
    }

    /// Snaps `p` to the grid, or `None` if it is further than
    /// [`PROBABILITY_TOLERANCE`] from every grid point.
    pub fn from_f64(p: f64) -> Option<Self> {
        if !p.is_finite() {
            return None;
        }
        let tenths = (p * 10.0).round();
        if !(0.0..=10.0).contains(&tenths) || (p - tenths / 10.0).abs() > PROBABILITY_TOLERANCE {
            return None;
        }
        Some(Probability(tenths as u8))
    }

    pub fn tenths(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 10.0
    }
}

impl Serialize for Probability {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.value())
    }
}

/// One search-space atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Policy {
    pub technique: Technique,
    pub probability: Probability,
    pub level: MagnitudeLevel,
}

impl Policy {
    pub fn new(technique: Technique, probability: Probability, level: MagnitudeLevel) -> Self {
        Self { technique, probability, level }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(p={}, m={})", self.technique, self.probability, self.level)
    }
}

/// Ordered policies, one per search layer. The empty chain stands for the
/// unaugmented baseline.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct PolicyChain(Vec<Policy>);

impl PolicyChain {
    pub fn new(policies: Vec<Policy>) -> Self {
        Self(policies)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Policy> {
        self.0.iter()
    }

    pub fn policies(&self) -> &[Policy] {
        &self.0
    }

    /// Copy with `policy` appended.
    pub fn extended(&self, policy: Policy) -> Self {
        let mut v = self.0.clone();
        v.push(policy);
        Self(v)
    }

    /// Copy with layer `layer` set to `level`.
    pub fn with_level(&self, layer: usize, level: MagnitudeLevel) -> Self {
        let mut v = self.0.clone();
        v[layer].level = level;
        Self(v)
    }

    pub fn contains(&self, technique: Technique) -> bool {
        self.0.iter().any(|p| p.technique == technique)
    }
}

impl fmt::Display for PolicyChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("[]");
        }
        f.write_str("[")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str("]")
    }
}

/// A chain with its child-evaluator accuracy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoredChain {
    #[serde(rename = "policies")]
    pub chain: PolicyChain,
    pub accuracy: f64,
    pub evaluations_used: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpaceError {
    #[error("search space arguments must be >= 1")]
    ZeroArgument,
    #[error("search space size overflows 128 bits")]
    Overflow,
}

/// Number of distinct chains of length `layers`:
/// `(techniques * magnitudes * probabilities) ^ layers`.
pub fn search_space_size(layers: u32, techniques: u64, magnitudes: u64, probabilities: u64) -> Result<u128, SpaceError> {
    if layers == 0 || techniques == 0 || magnitudes == 0 || probabilities == 0 {
        return Err(SpaceError::ZeroArgument);
    }
    let per_layer = u128::from(techniques)
        .checked_mul(u128::from(magnitudes))
        .and_then(|v| v.checked_mul(u128::from(probabilities)))
        .ok_or(SpaceError::Overflow)?;
    per_layer.checked_pow(layers).ok_or(SpaceError::Overflow)
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("{path}: missing field")]
    MissingField { path: String },
    #[error("{path}: expected {expected}")]
    WrongType { path: String, expected: &'static str },
    #[error("version: unsupported version {found}, expected {FORMAT_VERSION}")]
    UnsupportedVersion { found: String },
    #[error("{path}: unknown technique {name:?}")]
    UnknownTechnique { path: String, name: String },
    #[error("{path}: probability {value} is not on the grid {{0.0, 0.1, ..., 1.0}}")]
    OffGridProbability { path: String, value: f64 },
    #[error("{path}: level {value} outside [1, 10]")]
    LevelOutOfRange { path: String, value: String },
    #[error("{path}: accuracy {value} outside [0, 1]")]
    AccuracyOutOfRange { path: String, value: f64 },
}

/// The `{"version":1,"chains":[...]}` document as a JSON value.
pub fn document_value(chains: &[ScoredChain]) -> Value {
    let mut doc = Map::new();
    doc.insert("version".into(), Value::from(FORMAT_VERSION));
    doc.insert("chains".into(), serde_json::to_value(chains).expect("chains serialize"));
    Value::Object(doc)
}

pub fn serialize_policies(chains: &[ScoredChain]) -> Vec<u8> {
    serde_json::to_vec(&document_value(chains)).expect("document serializes")
}

pub fn parse_policies(doc: &[u8]) -> Result<Vec<ScoredChain>, ParseError> {
    let value: Value = serde_json::from_slice(doc).map_err(|e| ParseError::Malformed(e.to_string()))?;
    chains_from_value(&value)
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, ParseError> {
    obj.get(key).ok_or_else(|| ParseError::MissingField { path: join(path, key) })
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, ParseError> {
    v.as_object().ok_or_else(|| ParseError::WrongType { path: path.to_string(), expected: "object" })
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, ParseError> {
    v.as_array().ok_or_else(|| ParseError::WrongType { path: path.to_string(), expected: "array" })
}

fn as_f64(v: &Value, path: &str) -> Result<f64, ParseError> {
    v.as_f64().ok_or_else(|| ParseError::WrongType { path: path.to_string(), expected: "number" })
}

/// Validates a parsed document and extracts its chains. Unknown extra
/// fields (such as a ledger block) are ignored.
pub fn chains_from_value(value: &Value) -> Result<Vec<ScoredChain>, ParseError> {
    let root = as_object(value, "$")?;
    let version = field(root, "version", "")?;
    if version.as_u64() != Some(FORMAT_VERSION) {
        return Err(ParseError::UnsupportedVersion { found: version.to_string() });
    }
    let chains = as_array(field(root, "chains", "")?, "chains")?;
    chains
        .iter()
        .enumerate()
        .map(|(i, c)| parse_scored_chain(c, &format!("chains[{i}]")))
        .collect()
}

fn parse_scored_chain(v: &Value, path: &str) -> Result<ScoredChain, ParseError> {
    let obj = as_object(v, path)?;
    let policies_path = join(path, "policies");
    let policies = as_array(field(obj, "policies", path)?, &policies_path)?
        .iter()
        .enumerate()
        .map(|(j, p)| parse_policy(p, &format!("{policies_path}[{j}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let acc_path = join(path, "accuracy");
    let accuracy = as_f64(field(obj, "accuracy", path)?, &acc_path)?;
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(ParseError::AccuracyOutOfRange { path: acc_path, value: accuracy });
    }
    let evaluations_used = match obj.get("evaluations_used") {
        None => 0,
        Some(v) => v.as_u64().ok_or_else(|| ParseError::WrongType {
            path: join(path, "evaluations_used"),
            expected: "nonnegative integer",
        })?,
    };
    Ok(ScoredChain { chain: PolicyChain::new(policies), accuracy, evaluations_used })
}

fn parse_policy(v: &Value, path: &str) -> Result<Policy, ParseError> {
    let obj = as_object(v, path)?;

    let tech_path = join(path, "technique");
    let name = field(obj, "technique", path)?
        .as_str()
        .ok_or_else(|| ParseError::WrongType { path: tech_path.clone(), expected: "string" })?;
    let technique = name
        .parse::<Technique>()
        .map_err(|_| ParseError::UnknownTechnique { path: tech_path, name: name.to_string() })?;

    let prob_path = join(path, "probability");
    let p = as_f64(field(obj, "probability", path)?, &prob_path)?;
    let probability = Probability::from_f64(p).ok_or(ParseError::OffGridProbability { path: prob_path, value: p })?;

    let level_path = join(path, "level");
    let raw = field(obj, "level", path)?;
    let level = raw
        .as_i64()
        .and_then(|l| MagnitudeLevel::try_from(l).ok())
        .ok_or_else(|| ParseError::LevelOutOfRange { path: level_path, value: raw.to_string() })?;

    Ok(Policy { technique, probability, level })
}
