use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::nodes::Label;

/// JSONL field mappings:
/// - HOVER: `uid`, `claim`, `label` (`SUPPORTED` / `NOT_SUPPORTED`), `num_hops`
/// - FEVEROUS: `id`, `claim`, `label` (`SUPPORTS` / `REFUTES`)
/// - CUSTOM: `id`, `claim`, `label`, optional `hops`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DatasetFormat {
    Hover,
    Feverous,
    Custom,
}

impl FromStr for DatasetFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hover" => Ok(Self::Hover),
            "feverous" => Ok(Self::Feverous),
            "custom" => Ok(Self::Custom),
            _ => Err(DatasetError::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hover => "HOVER",
            Self::Feverous => "FEVEROUS",
            Self::Custom => "CUSTOM",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: String,
    pub claim: String,
    /// SUPPORTS or REFUTES, never UNCERTAIN.
    pub gold: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hops: Option<u32>,
    pub dataset: DatasetFormat,
}

/// A well-formed line whose label is outside the binary label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub line: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<ClaimRecord>,
    pub rejected: Vec<RejectedRecord>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown dataset format {0:?} (expected hover, feverous or custom)")]
    UnknownFormat(String),
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Maps dataset labels onto the two verdict classes.
pub fn gold_label(raw: &str) -> Option<Label> {
    match Label::parse(raw)? {
        Label::Uncertain => None,
        l => Some(l),
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, DatasetError> {
    let raw = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&raw, format)
}

pub fn parse_dataset(raw: &str, format: DatasetFormat) -> Result<Dataset, DatasetError> {
    let (id_key, hops_key) = match format {
        DatasetFormat::Hover => ("uid", Some("num_hops")),
        DatasetFormat::Feverous => ("id", None),
        DatasetFormat::Custom => ("id", Some("hops")),
    };
    let mut out = Dataset::default();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| DatasetError::Malformed {
            line: line_no,
            message,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| bad("not a JSON object".into()))?;
        let id = match obj.get(id_key) {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(bad(format!("missing \"{id_key}\""))),
        };
        let claim = match obj.get("claim") {
            Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
            _ => return Err(bad(format!("record {id}: missing \"claim\""))),
        };
        let label = obj
            .get("label")
            .and_then(Value::as_str)
            .ok_or_else(|| bad(format!("record {id}: missing \"label\"")))?;
        let hops =
            match hops_key.and_then(|k| obj.get(k)) {
                None | Some(Value::Null) => None,
                Some(v) => Some(v.as_u64().and_then(|h| u32::try_from(h).ok()).ok_or_else(
                    || {
                        bad(format!(
                            "record {id}: hop count must be a non-negative integer"
                        ))
                    },
                )?),
            };
        match gold_label(label) {
            Some(gold) => out.records.push(ClaimRecord {
                id,
                claim,
                gold,
                hops,
                dataset: format,
            }),
            None => out.rejected.push(RejectedRecord {
                line: line_no,
                id,
                reason: format!("label {label:?} is not SUPPORTS or REFUTES"),
            }),
        }
    }
    Ok(out)
}
