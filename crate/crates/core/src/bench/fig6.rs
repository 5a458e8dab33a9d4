use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::BenchSample;
use crate::emu::LatencyModelParams;
use crate::error::{FieldPath, Result, ValidationError};
use crate::model::{
    EdgeNode, InstanceMode, Inventory, ResourceVector, Site, SliceBlueprint, Tenant, TenantRole,
    VLinkSpec, VfKind, VfSpec, WanLink, DEFAULT_MAX_INSTANCES,
};
use crate::orchestrator::{
    AdmissionOutcome, Orchestrator, OrchestratorConfig, DEFAULT_ORCHESTRATION_OVERHEAD_S,
};

const VF_CPU: u64 = 100;
const VF_MEMORY: u64 = 64;
const LINE_WAN_MS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub nodes: u32,
    pub per_round: u32,
    /// Eight rounds keep ten-per-round batches within the 80-instance limit.
    pub rounds: u32,
    pub mode: InstanceMode,
    pub params: LatencyModelParams,
    pub seed: u64,
    pub max_instances: u32,
    pub orchestration_overhead_s: f64,
    /// Per-node CPU; defaults to exactly `max_instances` bench VFs.
    pub node_cpu_millicores: Option<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            nodes: 9,
            per_round: 10,
            rounds: 8,
            mode: InstanceMode::WithVf,
            params: LatencyModelParams::default(),
            seed: 0,
            max_instances: DEFAULT_MAX_INSTANCES,
            orchestration_overhead_s: DEFAULT_ORCHESTRATION_OVERHEAD_S,
            node_cpu_millicores: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let root = FieldPath::root();
        if self.nodes == 0 {
            return Err(ValidationError::new(
                root.field("nodes"),
                "must be positive",
            ));
        }
        if self.per_round == 0 {
            return Err(ValidationError::new(
                root.field("per_round"),
                "must be positive",
            ));
        }
        if u64::from(self.rounds) * u64::from(self.per_round) > u64::from(self.max_instances) {
            return Err(ValidationError::new(
                root.field("rounds"),
                format!(
                    "{} rounds x {} per round exceeds max_instances {}",
                    self.rounds, self.per_round, self.max_instances
                ),
            ));
        }
        self.params.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig6Run {
    pub samples: Vec<BenchSample>,
    /// Set when a round could not be admitted; samples hold the rounds before it.
    pub aborted: Option<String>,
    pub nodes_touched: Vec<usize>,
    pub event_log: String,
}

fn line_id(j: u32) -> String {
    format!("line-{:02}", j + 1)
}

fn node_id(j: u32) -> String {
    format!("pi-{:02}", j + 1)
}

/// One production line per node, fully meshed over the WAN.
pub fn fig6_inventory(config: &BenchConfig) -> Inventory {
    let cpu = config
        .node_cpu_millicores
        .unwrap_or(VF_CPU * u64::from(config.max_instances));
    let sites = (0..config.nodes)
        .map(|j| Site {
            id: line_id(j),
            owner: "pm".into(),
            intra_site_latency_ms: 1.0,
            radio_capacity: BTreeMap::new(),
            nodes: vec![node_id(j)],
            wan_links: (0..config.nodes)
                .filter(|k| *k != j)
                .map(|k| WanLink {
                    peer: line_id(k),
                    latency_ms: LINE_WAN_MS,
                    bandwidth_mbps: 10_000,
                })
                .collect(),
            local_core: false,
        })
        .collect();
    let nodes = (0..config.nodes)
        .map(|j| EdgeNode {
            id: node_id(j),
            site: line_id(j),
            capacity: ResourceVector {
                cpu_millicores: cpu,
                memory_mb: VF_MEMORY * u64::from(config.max_instances),
                storage_mb: 0,
                bandwidth_mbps: 0,
                radio_units: BTreeMap::new(),
            },
            max_instances: config.max_instances,
            running_instances: Vec::new(),
        })
        .collect();
    Inventory {
        tenants: vec![
            Tenant {
                id: "pm".into(),
                role: TenantRole::ProductManufacturer,
            },
            Tenant {
                id: "po".into(),
                role: TenantRole::ProductOwner,
            },
        ],
        sites,
        nodes,
        equipment: Vec::new(),
    }
}

/// A slice of `per_round` chained VFs on every line, the lines joined in a chain.
pub fn round_blueprint(config: &BenchConfig, round: u32) -> SliceBlueprint {
    let mut bp = SliceBlueprint::empty(format!("fig6-round-{round}"), "po");
    let name = |j: u32, k: u32| format!("r{round}-n{j}-vf{k}");
    for j in 0..config.nodes {
        for k in 0..config.per_round {
            bp.vfs.push(VfSpec {
                name: name(j, k),
                kind: VfKind::Vnf,
                demand: ResourceVector {
                    cpu_millicores: VF_CPU,
                    memory_mb: VF_MEMORY,
                    ..Default::default()
                },
                site_affinity: Some(line_id(j)),
                equipment_binding: None,
                mode: config.mode,
            });
            if k > 0 {
                bp.vlinks.push(VLinkSpec {
                    endpoint_a: name(j, k - 1),
                    endpoint_b: name(j, k),
                    bandwidth_mbps: 1,
                    max_latency_ms: 20.0,
                });
            }
        }
        if j > 0 {
            bp.vlinks.push(VLinkSpec {
                endpoint_a: name(j - 1, 0),
                endpoint_b: name(j, 0),
                bandwidth_mbps: 1,
                max_latency_ms: 50.0,
            });
        }
    }
    bp
}

/// Each round submits one slice spreading `per_round` VFs over every node
/// and records its instantiation response time.
pub fn run_fig6(config: &BenchConfig) -> Result<Fig6Run> {
    config.validate()?;
    let mut params = config.params.clone();
    params.seed = config.seed;
    let orch_config = OrchestratorConfig {
        orchestration_overhead_s: config.orchestration_overhead_s,
        latency: params,
        ..OrchestratorConfig::default()
    };
    let mut orch = Orchestrator::new(fig6_inventory(config), orch_config)?;
    let mut samples = Vec::new();
    let mut nodes_touched = Vec::new();
    let mut aborted = None;
    for round in 1..=config.rounds {
        let arrival = orch.tick();
        let id = orch.submit(round_blueprint(config, round), arrival)?;
        let outcomes = orch.process_pending();
        if let Some(AdmissionOutcome::Rejected { reason, detail, .. }) = outcomes.first() {
            aborted = Some(format!("round {round}: {reason}: {detail}"));
            break;
        }
        let slice = orch.slice(&id).expect("submitted");
        let touched: BTreeSet<&String> = slice
            .plan
            .iter()
            .flat_map(|p| p.assignments.values())
            .collect();
        nodes_touched.push(touched.len());
        samples.push(BenchSample {
            round,
            running_after: round * config.per_round,
            mode: config.mode,
            response_time_s: slice.response_time_s.unwrap_or(0.0),
        });
    }
    Ok(Fig6Run {
        samples,
        aborted,
        nodes_touched,
        event_log: orch.event_log_ndjson(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rounds_is_empty() {
        let run = run_fig6(&BenchConfig {
            rounds: 0,
            ..BenchConfig::default()
        })
        .unwrap();
        assert!(run.samples.is_empty());
        assert!(run.aborted.is_none());
    }

    #[test]
    fn sixth_round_hits_anchor_plus_overhead() {
        let run = run_fig6(&BenchConfig::default()).unwrap();
        assert_eq!(run.samples.len(), 8);
        let s = &run.samples[5];
        assert_eq!(s.running_after, 60);
        assert!(
            (s.response_time_s - 8.4).abs() < 1e-9,
            "{}",
            s.response_time_s
        );
        assert!(run.nodes_touched.iter().all(|n| *n == 9));
    }

    #[test]
    fn too_many_rounds_rejected_up_front() {
        let cfg = BenchConfig {
            rounds: 10,
            ..BenchConfig::default()
        };
        assert!(run_fig6(&cfg).is_err());
    }

    #[test]
    fn exhaustion_mid_run_flags_partial_results() {
        let cfg = BenchConfig {
            node_cpu_millicores: Some(VF_CPU * 35),
            ..BenchConfig::default()
        };
        let run = run_fig6(&cfg).unwrap();
        assert_eq!(run.samples.len(), 3);
        assert!(run.aborted.as_deref().unwrap().contains("round 4"));
    }
}
