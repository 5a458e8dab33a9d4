use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{RejectReason, SliceState};

/// One step of a path into a JSON document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathSegment {
    Field(String),
    Index(usize),
}

/// Location of an offending value inside a blueprint, inventory or rule set.
///
/// Renders as `vlinks[0].endpoint_b` through `Display` and as the
/// JSON-pointer form `/vlinks/0/endpoint_b` through [`FieldPath::pointer`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldPath(pub Vec<PathSegment>);

impl FieldPath {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn field(&self, name: &str) -> Self {
        let mut segments = self.0.clone();
        segments.push(PathSegment::Field(name.to_string()));
        Self(segments)
    }

    pub fn index(&self, i: usize) -> Self {
        let mut segments = self.0.clone();
        segments.push(PathSegment::Index(i));
        Self(segments)
    }

    pub fn pointer(&self) -> String {
        let mut out = String::new();
        for seg in &self.0 {
            out.push('/');
            match seg {
                PathSegment::Field(name) => {
                    out.push_str(&name.replace('~', "~0").replace('/', "~1"))
                }
                PathSegment::Index(i) => out.push_str(&i.to_string()),
            }
        }
        out
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, seg) in self.0.iter().enumerate() {
            match seg {
                PathSegment::Field(name) if n == 0 => write!(f, "{name}")?,
                PathSegment::Field(name) => write!(f, ".{name}")?,
                PathSegment::Index(i) => write!(f, "[{i}]")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{path}: {message}")]
pub struct ValidationError {
    pub path: FieldPath,
    pub message: String,
}

impl ValidationError {
    pub fn new(path: FieldPath, message: impl Into<String>) -> Self {
        Self {
            path,
            message: message.into(),
        }
    }

    /// A validation error that is not tied to any field.
    pub fn general(message: impl Into<String>) -> Self {
        Self::new(FieldPath::root(), message)
    }
}

/// Subtraction would drive a resource component below zero.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("resource underflow in component `{component}`: {have} - {take}")]
pub struct UnderflowError {
    pub component: String,
    pub have: u64,
    pub take: u64,
}

/// A node agent refused a spawn because it would exceed capacity.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("node {node}: {detail}")]
pub struct CapacityError {
    pub node: String,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed at {0}")]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Underflow(#[from] UnderflowError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("tenant `{tenant}` may not {action} `{target}`")]
    Unauthorized {
        tenant: String,
        action: String,
        target: String,
    },
    #[error("tenant `{tenant}` does not own `{target}`")]
    Ownership { tenant: String, target: String },
    #[error("slice `{0}` cannot federate with itself")]
    SelfFederation(String),
    #[error("equipment `{0}` has no free virtual controller slot")]
    EquipmentExhausted(String),
    #[error("reconfiguration rejected: {reason}")]
    InfeasibleDelta {
        reason: RejectReason,
        detail: String,
    },
    #[error("illegal transition {from:?} -> {to:?} for slice `{slice}`")]
    IllegalTransition {
        slice: String,
        from: SliceState,
        to: SliceState,
    },
    #[error("slice `{slice}` is {state:?}, expected {expected}")]
    InvalidState {
        slice: String,
        state: SliceState,
        expected: &'static str,
    },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_renders_dotted_and_pointer() {
        let p = FieldPath::root()
            .field("vlinks")
            .index(0)
            .field("endpoint_b");
        assert_eq!(p.to_string(), "vlinks[0].endpoint_b");
        assert_eq!(p.pointer(), "/vlinks/0/endpoint_b");
        assert_eq!(FieldPath::root().pointer(), "");
    }
}
