//! File parsing and the JSON bodies exchanged with the HTTP service.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchConfig, BenchSample, ScenarioReport};
use crate::emu::LatencyModelParams;
use crate::error::{FieldPath, PathSegment, ValidationError};
use crate::federation::SfiRule;
use crate::model::{InstanceMode, Inventory, SliceBlueprint};

/// Header carrying the calling tenant's id on every mutating request.
pub const TENANT_HEADER: &str = "x-tenant-id";
/// Header echoed on every response.
pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    Syntax,
    Schema,
    Semantic,
    Io,
}

/// A rejected input file. `pointer` is a JSON pointer such as
/// `/vfs/0/demand/cpu_millicores`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} error at `{pointer}`: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub pointer: String,
    pub message: String,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    let mut fp = FieldPath::root();
    for seg in path.iter() {
        match seg {
            serde_path_to_error::Segment::Seq { index } => fp.0.push(PathSegment::Index(*index)),
            serde_path_to_error::Segment::Map { key } => fp.0.push(PathSegment::Field(key.clone())),
            serde_path_to_error::Segment::Enum { variant } => {
                fp.0.push(PathSegment::Field(variant.clone()))
            }
            serde_path_to_error::Segment::Unknown => {}
        }
    }
    fp.pointer()
}

/// Deserializes any JSON document, reporting failures with a pointer.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ParseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let pointer = pointer_of(err.path());
        let inner = err.into_inner();
        let kind = match inner.classify() {
            serde_json::error::Category::Data => ParseErrorKind::Schema,
            _ => ParseErrorKind::Syntax,
        };
        ParseError {
            kind,
            pointer,
            message: inner.to_string(),
        }
    })
}

impl From<ValidationError> for ParseError {
    fn from(err: ValidationError) -> Self {
        ParseError {
            kind: ParseErrorKind::Semantic,
            pointer: err.path.pointer(),
            message: err.message,
        }
    }
}

/// Parses and structurally validates a blueprint document.
pub fn parse_blueprint(text: &str) -> Result<SliceBlueprint, ParseError> {
    let bp: SliceBlueprint = parse_json(text)?;
    bp.validate()?;
    Ok(bp.canonicalized())
}

pub fn parse_blueprint_file(path: &Path) -> Result<SliceBlueprint, ParseError> {
    let text = std::fs::read_to_string(path).map_err(|e| ParseError {
        kind: ParseErrorKind::Io,
        pointer: String::new(),
        message: format!("{}: {e}", path.display()),
    })?;
    parse_blueprint(&text)
}

pub fn parse_inventory(text: &str) -> Result<Inventory, ParseError> {
    let inv: Inventory = parse_json(text)?;
    inv.validate()?;
    Ok(inv)
}

/// Canonical serialized form of a blueprint.
pub fn blueprint_to_json(bp: &SliceBlueprint) -> String {
    serde_json::to_string_pretty(&bp.clone().canonicalized()).expect("blueprint is serializable")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub slice_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// Rules file accepted by `federate` and the body of `POST /federations`
/// minus the slice ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationRules {
    pub rules: Vec<SfiRule>,
    #[serde(default)]
    pub encrypted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateFederationRequest {
    pub exporter: String,
    pub importer: String,
    pub rules: Vec<SfiRule>,
    #[serde(default)]
    pub encrypted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantResponse {
    pub grant_id: String,
}

/// Body of `POST /bench/fig6`. Unset fields take the harness defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Fig6Request {
    pub mode: Option<InstanceMode>,
    pub nodes: Option<u32>,
    pub per_round: Option<u32>,
    pub rounds: Option<u32>,
    pub seed: Option<u64>,
    pub noise_sigma_s: Option<f64>,
    pub params: Option<LatencyModelParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig6Response {
    pub samples: Vec<BenchSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    /// NDJSON lifecycle log of the bench's private orchestrator.
    #[serde(default)]
    pub event_log: String,
}

impl Fig6Request {
    /// Resolves the request against the harness defaults.
    pub fn to_config(&self) -> BenchConfig {
        let mut cfg = BenchConfig::default();
        if let Some(params) = &self.params {
            cfg.params = params.clone();
        }
        if let Some(sigma) = self.noise_sigma_s {
            cfg.params.noise_sigma_s = sigma;
        }
        cfg.mode = self.mode.unwrap_or(cfg.mode);
        cfg.nodes = self.nodes.unwrap_or(cfg.nodes);
        cfg.per_round = self.per_round.unwrap_or(cfg.per_round);
        cfg.rounds = self.rounds.unwrap_or(cfg.rounds);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg
    }
}

pub type ScenarioResponse = ScenarioReport;
