use serde::{Deserialize, Serialize};

use super::placement::{PlacementPlan, RejectReason};
use crate::model::SliceBlueprint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SliceState {
    Requested,
    Admitted,
    Placing,
    Instantiating,
    Active,
    Reconfiguring,
    Terminating,
    Terminated,
    Rejected,
}

impl SliceState {
    pub const ALL: [SliceState; 9] = [
        SliceState::Requested,
        SliceState::Admitted,
        SliceState::Placing,
        SliceState::Instantiating,
        SliceState::Active,
        SliceState::Reconfiguring,
        SliceState::Terminating,
        SliceState::Terminated,
        SliceState::Rejected,
    ];

    /// Legal lifecycle edges. INSTANTIATING -> REJECTED is the rollback
    /// taken when a node agent refuses a spawn.
    pub fn can_transition_to(self, to: SliceState) -> bool {
        use SliceState::*;
        matches!(
            (self, to),
            (Requested, Admitted)
                | (Requested, Rejected)
                | (Admitted, Placing)
                | (Placing, Instantiating)
                | (Instantiating, Active)
                | (Instantiating, Rejected)
                | (Active, Reconfiguring)
                | (Active, Terminating)
                | (Reconfiguring, Active)
                | (Terminating, Terminated)
        )
    }

    /// States whose plan holds reserved resources.
    pub fn holds_resources(self) -> bool {
        use SliceState::*;
        matches!(
            self,
            Admitted | Placing | Instantiating | Active | Reconfiguring | Terminating
        )
    }

    pub fn has_plan(self) -> bool {
        !matches!(self, SliceState::Requested | SliceState::Rejected)
    }

    pub fn name(self) -> &'static str {
        use SliceState::*;
        match self {
            Requested => "REQUESTED",
            Admitted => "ADMITTED",
            Placing => "PLACING",
            Instantiating => "INSTANTIATING",
            Active => "ACTIVE",
            Reconfiguring => "RECONFIGURING",
            Terminating => "TERMINATING",
            Terminated => "TERMINATED",
            Rejected => "REJECTED",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl std::fmt::Display for SliceState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Runtime slice managed by the orchestrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub id: String,
    pub blueprint: SliceBlueprint,
    pub state: SliceState,
    pub arrival: u64,
    pub plan: Option<PlacementPlan>,
    pub instances: Vec<String>,
    pub federations: Vec<String>,
    pub response_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<RejectReason>,
}

impl Slice {
    pub fn tenant(&self) -> &str {
        &self.blueprint.tenant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Slice,
    Federation,
}

/// One line of the append-only event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub timestamp: u64,
    pub kind: EventKind,
    pub id: String,
    pub from: Option<String>,
    pub to: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// A submitted request waiting for an admission decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingRequest {
    pub id: String,
    pub arrival: u64,
}

/// Deterministic total order: arrival ascending, then id ascending.
pub fn order_requests(pending: &[PendingRequest]) -> Vec<PendingRequest> {
    let mut out = pending.to_vec();
    out.sort_by(|a, b| (a.arrival, &a.id).cmp(&(b.arrival, &b.id)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(arrival: u64, id: &str) -> PendingRequest {
        PendingRequest {
            id: id.into(),
            arrival,
        }
    }

    #[test]
    fn ordering() {
        let ids = |v: Vec<PendingRequest>| v.into_iter().map(|r| r.id).collect::<Vec<_>>();
        assert_eq!(ids(order_requests(&[req(2, "b"), req(1, "a")])), ["a", "b"]);
        assert_eq!(ids(order_requests(&[req(1, "b"), req(1, "a")])), ["a", "b"]);
        let set = [req(3, "c"), req(1, "z"), req(1, "y")];
        assert_eq!(order_requests(&set), order_requests(&set));
    }

    #[test]
    fn transition_table() {
        use SliceState::*;
        assert!(Requested.can_transition_to(Admitted));
        assert!(!Requested.can_transition_to(Active));
        assert!(!Terminated.can_transition_to(Active));
        assert!(!Active.can_transition_to(Admitted));
        for s in SliceState::ALL {
            assert_eq!(SliceState::from_name(s.name()), Some(s));
        }
    }
}
