use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Monitor,
    Reconfigure,
    Maintain,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Action::Monitor => "MONITOR",
            Action::Reconfigure => "RECONFIGURE",
            Action::Maintain => "MAINTAIN",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Slice(String),
    Equipment(String),
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Slice(id) => write!(f, "slice {id}"),
            Target::Equipment(id) => write!(f, "equipment {id}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantScope {
    #[serde(default)]
    pub equipment: BTreeSet<String>,
    #[serde(default)]
    pub slices: BTreeSet<String>,
}

impl GrantScope {
    pub fn covers(&self, target: &Target) -> bool {
        match target {
            Target::Slice(id) => self.slices.contains(id),
            Target::Equipment(id) => self.equipment.contains(id),
        }
    }

    pub fn targets(&self) -> impl Iterator<Item = Target> + '_ {
        self.equipment
            .iter()
            .map(|e| Target::Equipment(e.clone()))
            .chain(self.slices.iter().map(|s| Target::Slice(s.clone())))
    }
}

/// Management rights handed to another tenant without transferring ownership.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationGrant {
    /// Assigned by the orchestrator; ignored on input.
    #[serde(default)]
    pub id: String,
    pub grantor: String,
    pub grantee: String,
    pub scope: GrantScope,
    pub actions: BTreeSet<Action>,
    /// Logical timestamp after which the grant no longer applies.
    pub expiry: u64,
}

impl DelegationGrant {
    pub fn allows(&self, tenant: &str, action: Action, target: &Target, now: u64) -> bool {
        self.grantee == tenant
            && now < self.expiry
            && self.actions.contains(&action)
            && self.scope.covers(target)
    }
}
