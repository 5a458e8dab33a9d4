//! Deterministic emulation of the infrastructure and virtualization planes.
//!
//! Each edge node is a [`NodeAgent`] that "spawns" VF instances and reports
//! how long the batch took under a linear latency model. Time is virtual by
//! default: the emulator advances its own clock instead of sleeping.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CapacityError, Error, Result, ValidationError};
use crate::model::{EdgeNode, InstanceMode, ResourceVector};

/// Linear batch-cost coefficients for one instance mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeParams {
    pub alpha_s: f64,
    pub beta_s_per_instance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModelParams {
    pub empty: ModeParams,
    pub with_vf: ModeParams,
    pub noise_sigma_s: f64,
    pub seed: u64,
}

/// Running-instance count at which both calibration anchors are read.
pub const ANCHOR_INSTANCES: u32 = 60;
/// Batch time with 60 running VF instances.
pub const ANCHOR_WITH_VF_S: f64 = 8.2;
/// Batch time with 60 empty instances.
pub const ANCHOR_EMPTY_S: f64 = 4.1;
pub const DEFAULT_ALPHA_S: f64 = 0.5;

/// Coefficients fitted through the two anchors with a shared base cost.
pub fn default_params() -> LatencyModelParams {
    let n = f64::from(ANCHOR_INSTANCES);
    LatencyModelParams {
        empty: ModeParams {
            alpha_s: DEFAULT_ALPHA_S,
            beta_s_per_instance: (ANCHOR_EMPTY_S - DEFAULT_ALPHA_S) / n,
        },
        with_vf: ModeParams {
            alpha_s: DEFAULT_ALPHA_S,
            beta_s_per_instance: (ANCHOR_WITH_VF_S - DEFAULT_ALPHA_S) / n,
        },
        noise_sigma_s: 0.0,
        seed: 0,
    }
}

impl Default for LatencyModelParams {
    fn default() -> Self {
        default_params()
    }
}

impl LatencyModelParams {
    pub fn mode(&self, mode: InstanceMode) -> &ModeParams {
        match mode {
            InstanceMode::Empty => &self.empty,
            InstanceMode::WithVf => &self.with_vf,
        }
    }

    /// Noise-free model value for a batch that leaves `k_after` instances running.
    pub fn mean_elapsed(&self, mode: InstanceMode, k_after: u32) -> f64 {
        let p = self.mode(mode);
        p.alpha_s + p.beta_s_per_instance * f64::from(k_after)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        use crate::error::FieldPath;
        let root = FieldPath::root();
        for (name, p) in [("empty", &self.empty), ("with_vf", &self.with_vf)] {
            if !(p.alpha_s >= 0.0 && p.alpha_s.is_finite()) {
                return Err(ValidationError::new(
                    root.field(name).field("alpha_s"),
                    "must be non-negative",
                ));
            }
            if !(p.beta_s_per_instance >= 0.0 && p.beta_s_per_instance.is_finite()) {
                return Err(ValidationError::new(
                    root.field(name).field("beta_s_per_instance"),
                    "must be non-negative",
                ));
            }
        }
        if self.with_vf.beta_s_per_instance <= 0.0 {
            return Err(ValidationError::new(
                root.field("with_vf").field("beta_s_per_instance"),
                "must be positive",
            ));
        }
        if !(self.noise_sigma_s >= 0.0 && self.noise_sigma_s.is_finite()) {
            return Err(ValidationError::new(
                root.field("noise_sigma_s"),
                "must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VfInstance {
    pub id: String,
    pub node: String,
    pub slice: String,
    pub vf: String,
    pub mode: InstanceMode,
    pub demand: ResourceVector,
}

/// One instance to create in a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpawnRequest {
    pub slice: String,
    pub vf: String,
    pub mode: InstanceMode,
    pub demand: ResourceVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpawnOutcome {
    pub node: String,
    pub elapsed_s: f64,
    pub k_after: u32,
    pub instances: Vec<String>,
}

/// Sequential actor for a single edge node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAgent {
    pub node: String,
    pub capacity: ResourceVector,
    pub max_instances: u32,
    pub instances: BTreeMap<String, VfInstance>,
    spawns: u64,
}

impl NodeAgent {
    pub fn new(node: &EdgeNode) -> Self {
        Self {
            node: node.id.clone(),
            capacity: node.capacity.without_radio(),
            max_instances: node.max_instances,
            instances: BTreeMap::new(),
            spawns: 0,
        }
    }

    pub fn running(&self) -> u32 {
        self.instances.len() as u32
    }

    pub fn used(&self) -> ResourceVector {
        self.instances
            .values()
            .map(|i| &i.demand)
            .sum::<ResourceVector>()
            .without_radio()
    }

    pub fn residual(&self) -> ResourceVector {
        self.capacity.saturating_sub(&self.used())
    }

    fn check(&self, batch: &[SpawnRequest]) -> Result<(), CapacityError> {
        let count = batch.len() as u64;
        if u64::from(self.running()) + count > u64::from(self.max_instances) {
            return Err(CapacityError {
                node: self.node.clone(),
                detail: format!(
                    "{} running + {} requested exceeds max_instances {}",
                    self.running(),
                    count,
                    self.max_instances
                ),
            });
        }
        let demand: ResourceVector = batch
            .iter()
            .map(|r| &r.demand)
            .sum::<ResourceVector>()
            .without_radio();
        if !demand.fits(&self.residual()) {
            return Err(CapacityError {
                node: self.node.clone(),
                detail: "batch demand exceeds residual capacity".into(),
            });
        }
        Ok(())
    }

    fn noise_rng(&self, seed: u64) -> ChaCha8Rng {
        // FNV-1a over the node id, mixed with the seed and spawn counter.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.node.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        ChaCha8Rng::seed_from_u64(seed ^ h ^ self.spawns.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    /// Creates every instance of `batch` or none of them.
    pub fn spawn_batch(
        &mut self,
        ids: Vec<String>,
        batch: Vec<SpawnRequest>,
        mode: InstanceMode,
        params: &LatencyModelParams,
    ) -> Result<SpawnOutcome, CapacityError> {
        assert_eq!(ids.len(), batch.len());
        self.check(&batch)?;
        if batch.is_empty() {
            return Ok(SpawnOutcome {
                node: self.node.clone(),
                elapsed_s: 0.0,
                k_after: self.running(),
                instances: Vec::new(),
            });
        }
        for (id, req) in ids.iter().zip(batch) {
            self.instances.insert(
                id.clone(),
                VfInstance {
                    id: id.clone(),
                    node: self.node.clone(),
                    slice: req.slice,
                    vf: req.vf,
                    mode: req.mode,
                    demand: req.demand,
                },
            );
        }
        let k_after = self.running();
        let mut elapsed = params.mean_elapsed(mode, k_after);
        if params.noise_sigma_s > 0.0 {
            let normal = Normal::new(0.0, params.noise_sigma_s).expect("sigma validated");
            elapsed += normal.sample(&mut self.noise_rng(params.seed));
        }
        self.spawns += 1;
        Ok(SpawnOutcome {
            node: self.node.clone(),
            elapsed_s: elapsed.max(0.0),
            k_after,
            instances: ids,
        })
    }

    /// Removes the given instances, returning their summed demand. Unknown
    /// ids leave the node untouched.
    pub fn teardown(&mut self, ids: &[String]) -> Result<ResourceVector> {
        if let Some(missing) = ids.iter().find(|id| !self.instances.contains_key(*id)) {
            return Err(Error::NotFound {
                kind: "instance",
                id: missing.clone(),
            });
        }
        let mut released = ResourceVector::zero();
        for id in ids {
            if let Some(inst) = self.instances.remove(id) {
                released = &released + &inst.demand;
            }
        }
        Ok(released)
    }
}

/// Pure model helper: elapsed time of a non-empty batch without noise.
pub fn spawn_time(
    params: &LatencyModelParams,
    mode: InstanceMode,
    count: u32,
    k_after: u32,
) -> f64 {
    if count == 0 {
        0.0
    } else {
        params.mean_elapsed(mode, k_after)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emulator {
    pub params: LatencyModelParams,
    agents: BTreeMap<String, NodeAgent>,
    next_instance: u64,
    clock_s: f64,
    #[serde(skip)]
    realtime: bool,
}

impl Emulator {
    pub fn new<'a>(
        nodes: impl IntoIterator<Item = &'a EdgeNode>,
        params: LatencyModelParams,
    ) -> Self {
        Self {
            params,
            agents: nodes
                .into_iter()
                .map(|n| (n.id.clone(), NodeAgent::new(n)))
                .collect(),
            next_instance: 0,
            clock_s: 0.0,
            realtime: false,
        }
    }

    /// Wall-clock sleeps in each node agent, for demos.
    pub fn set_realtime(&mut self, realtime: bool) {
        self.realtime = realtime;
    }

    pub fn clock_s(&self) -> f64 {
        self.clock_s
    }

    pub fn advance_clock(&mut self, dt_s: f64) {
        self.clock_s += dt_s;
    }

    pub fn agent(&self, node: &str) -> Option<&NodeAgent> {
        self.agents.get(node)
    }

    pub fn agents(&self) -> impl Iterator<Item = &NodeAgent> {
        self.agents.values()
    }

    pub fn instance(&self, id: &str) -> Option<&VfInstance> {
        self.agents.values().find_map(|a| a.instances.get(id))
    }

    fn agent_mut(&mut self, node: &str) -> Result<&mut NodeAgent> {
        self.agents.get_mut(node).ok_or_else(|| Error::NotFound {
            kind: "node",
            id: node.to_string(),
        })
    }

    fn fresh_ids(&mut self, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| {
                self.next_instance += 1;
                format!("i{:06}", self.next_instance)
            })
            .collect()
    }

    pub fn spawn_batch(
        &mut self,
        node: &str,
        mode: InstanceMode,
        batch: Vec<SpawnRequest>,
    ) -> Result<SpawnOutcome> {
        self.agent_mut(node)?.check(&batch)?;
        let ids = self.fresh_ids(batch.len());
        let params = self.params.clone();
        let out = self
            .agent_mut(node)?
            .spawn_batch(ids, batch, mode, &params)?;
        if self.realtime {
            std::thread::sleep(Duration::from_secs_f64(out.elapsed_s));
        }
        Ok(out)
    }

    /// Spawns one batch per node concurrently. Every batch is checked before
    /// any is created, so a capacity error leaves all nodes untouched.
    pub fn spawn_parallel(
        &mut self,
        batches: BTreeMap<String, (InstanceMode, Vec<SpawnRequest>)>,
    ) -> Result<Vec<SpawnOutcome>> {
        for (node, (_, batch)) in &batches {
            self.agents
                .get(node)
                .ok_or_else(|| Error::NotFound {
                    kind: "node",
                    id: node.clone(),
                })?
                .check(batch)?;
        }
        let mut work = Vec::new();
        for (node, (mode, batch)) in batches {
            let ids = self.fresh_ids(batch.len());
            work.push((node, mode, ids, batch));
        }
        let params = &self.params;
        let realtime = self.realtime;
        let mut agents: BTreeMap<&String, &mut NodeAgent> = self.agents.iter_mut().collect();
        let jobs: Vec<_> = work
            .into_iter()
            .map(|(node, mode, ids, batch)| {
                let agent = agents.remove(&node).expect("node checked above");
                (agent, mode, ids, batch)
            })
            .collect();
        let results: Vec<Result<SpawnOutcome, CapacityError>> = std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .into_iter()
                .map(|(agent, mode, ids, batch)| {
                    s.spawn(move || {
                        let out = agent.spawn_batch(ids, batch, mode, params)?;
                        if realtime {
                            std::thread::sleep(Duration::from_secs_f64(out.elapsed_s));
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("node agent panicked"))
                .collect()
        });
        results
            .into_iter()
            .map(|r| r.map_err(Error::from))
            .collect()
    }

    pub fn teardown(&mut self, node: &str, ids: &[String]) -> Result<ResourceVector> {
        self.agent_mut(node)?.teardown(ids)
    }

    /// Places instances that the orchestrator does not manage, such as
    /// foreign workloads sharing the node. Ignores the instance limit.
    pub fn inject_foreign(
        &mut self,
        node: &str,
        count: u32,
        demand: ResourceVector,
    ) -> Result<Vec<String>> {
        let ids = self.fresh_ids(count as usize);
        let agent = self.agent_mut(node)?;
        for id in &ids {
            agent.instances.insert(
                id.clone(),
                VfInstance {
                    id: id.clone(),
                    node: node.to_string(),
                    slice: String::new(),
                    vf: String::new(),
                    mode: InstanceMode::Empty,
                    demand: demand.clone(),
                },
            );
        }
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(max_instances: u32) -> EdgeNode {
        EdgeNode {
            id: "n1".into(),
            site: "s1".into(),
            capacity: ResourceVector::cpu(100_000),
            max_instances,
            running_instances: Vec::new(),
        }
    }

    fn reqs(n: usize, cpu: u64) -> Vec<SpawnRequest> {
        (0..n)
            .map(|i| SpawnRequest {
                slice: "s".into(),
                vf: format!("vf{i}"),
                mode: InstanceMode::WithVf,
                demand: ResourceVector::cpu(cpu),
            })
            .collect()
    }

    #[test]
    fn default_coefficients() {
        let p = default_params();
        assert!((p.with_vf.beta_s_per_instance - 0.128_333_333_333_333_33).abs() < 1e-12);
        assert!((p.empty.beta_s_per_instance - 0.06).abs() < 1e-12);
        assert_eq!(p.noise_sigma_s, 0.0);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn anchors() {
        let p = default_params();
        assert!((p.mean_elapsed(InstanceMode::WithVf, 60) - 8.2).abs() < 1e-9);
        assert!((p.mean_elapsed(InstanceMode::Empty, 60) - 4.1).abs() < 1e-9);
    }

    #[test]
    fn zero_count_takes_zero_time() {
        let mut emu = Emulator::new([&node(80)], default_params());
        let out = emu
            .spawn_batch("n1", InstanceMode::WithVf, Vec::new())
            .unwrap();
        assert_eq!(out.elapsed_s, 0.0);
        assert_eq!(
            spawn_time(&default_params(), InstanceMode::WithVf, 0, 10),
            0.0
        );
    }

    #[test]
    fn spawn_at_60_hits_anchor() {
        let mut emu = Emulator::new([&node(80)], default_params());
        emu.spawn_batch("n1", InstanceMode::WithVf, reqs(50, 1))
            .unwrap();
        let out = emu
            .spawn_batch("n1", InstanceMode::WithVf, reqs(10, 1))
            .unwrap();
        assert_eq!(out.k_after, 60);
        assert!((out.elapsed_s - 8.2).abs() < 1e-9);
    }

    #[test]
    fn capacity_error_creates_nothing() {
        let mut emu = Emulator::new([&node(5)], default_params());
        emu.spawn_batch("n1", InstanceMode::WithVf, reqs(4, 1))
            .unwrap();
        let before = emu.clone();
        let err = emu
            .spawn_batch("n1", InstanceMode::WithVf, reqs(2, 1))
            .unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
        assert_eq!(emu, before);
    }

    #[test]
    fn teardown_restores_and_rejects_unknown() {
        let mut emu = Emulator::new([&node(80)], default_params());
        let pristine = emu.agent("n1").unwrap().residual();
        let out = emu
            .spawn_batch("n1", InstanceMode::WithVf, reqs(3, 10))
            .unwrap();
        assert_eq!(emu.teardown("n1", &[]).unwrap(), ResourceVector::zero());
        let before = emu.clone();
        assert!(matches!(
            emu.teardown("n1", &["nope".to_string()]),
            Err(Error::NotFound { .. })
        ));
        assert_eq!(emu, before);
        let released = emu.teardown("n1", &out.instances).unwrap();
        assert_eq!(released, ResourceVector::cpu(30));
        assert_eq!(emu.agent("n1").unwrap().residual(), pristine);
    }

    #[test]
    fn noisy_runs_repeat_with_same_seed() {
        let mut params = default_params();
        params.noise_sigma_s = 0.3;
        params.seed = 42;
        let run = |p: &LatencyModelParams| {
            let mut emu = Emulator::new([&node(80)], p.clone());
            (0..5)
                .map(|_| {
                    emu.spawn_batch("n1", InstanceMode::WithVf, reqs(10, 1))
                        .unwrap()
                        .elapsed_s
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(&params), run(&params));
        assert!(run(&params).iter().all(|t| *t >= 0.0));
    }
}
