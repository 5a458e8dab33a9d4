//! The orchestration plane: admission, placement, slice lifecycle,
//! reconfiguration, equipment slicing and delegated management.
//!
//! [`Orchestrator`] is a plain single-owner state machine. Every mutating
//! method takes `&mut self`, so callers serialize decisions by construction;
//! the HTTP service wraps it in a single actor task.

mod delegation;
mod lifecycle;
mod placement;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use delegation::{Action, DelegationGrant, GrantScope, Target};
pub use lifecycle::{order_requests, Event, EventKind, PendingRequest, Slice, SliceState};
pub use placement::{
    place, place_with_fixed, wan_key, Hop, Infeasible, LinkRoute, NodeResidual, PlacementPlan,
    RejectReason, ResidualView,
};

use crate::emu::{Emulator, LatencyModelParams, SpawnRequest};
use crate::error::{Error, FieldPath, Result, ValidationError};
use crate::federation::{
    self, DataRecord, FederationLink, FederationRegistry, MergeInput, MergedRecord, SfiRule,
};
use crate::model::{
    InstanceMode, Inventory, ResourceVector, SliceBlueprint, VController, VLinkSpec, VfSpec,
};

pub const DEFAULT_ORCHESTRATION_OVERHEAD_S: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    /// Fixed cost added to every instantiation on top of the slowest node.
    pub orchestration_overhead_s: f64,
    /// Multiplier on node capacity used by admission. 1.0 forbids
    /// over-subscription.
    pub oversubscription: f64,
    pub latency: LatencyModelParams,
    /// Sleep for the modeled durations instead of advancing virtual time.
    pub realtime: bool,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            orchestration_overhead_s: DEFAULT_ORCHESTRATION_OVERHEAD_S,
            oversubscription: 1.0,
            latency: LatencyModelParams::default(),
            realtime: false,
        }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.orchestration_overhead_s >= 0.0 && self.orchestration_overhead_s.is_finite()) {
            return Err(ValidationError::new(
                FieldPath::root().field("orchestration_overhead_s"),
                "must be non-negative",
            ));
        }
        if !(self.oversubscription >= 1.0 && self.oversubscription.is_finite()) {
            return Err(ValidationError::new(
                FieldPath::root().field("oversubscription"),
                "must be at least 1.0",
            ));
        }
        self.latency.validate()
    }
}

/// Changes applied by [`Orchestrator::reconfigure`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceDelta {
    pub add_vfs: Vec<VfSpec>,
    pub remove_vfs: Vec<String>,
    /// Replaces the whole link list when present. Otherwise links touching a
    /// removed VF are dropped and the rest are kept.
    pub updated_vlinks: Option<Vec<VLinkSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdmissionOutcome {
    Admitted {
        slice: String,
    },
    Rejected {
        slice: String,
        reason: RejectReason,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeResources {
    pub residual: ResourceVector,
    pub free_slots: u32,
    pub running: u32,
}

/// Resource-level view used for conservation checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceSnapshot {
    pub nodes: BTreeMap<String, NodeResources>,
    pub site_radio: BTreeMap<String, ResourceVector>,
    pub wan: BTreeMap<String, u64>,
    pub equipment_free: BTreeMap<String, u32>,
    pub instances: usize,
    pub vcontrollers: usize,
}

#[derive(Default)]
struct Usage {
    nodes: BTreeMap<String, (ResourceVector, u32)>,
    radio: BTreeMap<String, ResourceVector>,
    wan: BTreeMap<(String, String), u64>,
}

impl Usage {
    fn add_vf(&mut self, inventory: &Inventory, node: &str, demand: &ResourceVector) {
        let e = self.nodes.entry(node.to_string()).or_default();
        e.0 = &e.0 + &demand.without_radio();
        e.1 += 1;
        if let Some(n) = inventory.node(node) {
            let r = self.radio.entry(n.site.clone()).or_default();
            *r = &*r + &demand.radio_only();
        }
    }

    fn add_plan(&mut self, inventory: &Inventory, bp: &SliceBlueprint, plan: &PlacementPlan) {
        for (vf, node) in &plan.assignments {
            if let Some(spec) = bp.vf(vf) {
                self.add_vf(inventory, node, &spec.demand);
            }
        }
        for route in &plan.link_routes {
            for hop in &route.hops {
                *self
                    .wan
                    .entry(wan_key(&hop.from_site, &hop.to_site))
                    .or_insert(0) += hop.bandwidth_mbps;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orchestrator {
    config: OrchestratorConfig,
    inventory: Inventory,
    emulator: Emulator,
    slices: BTreeMap<String, Slice>,
    pending: Vec<PendingRequest>,
    vcontrollers: BTreeMap<String, VController>,
    grants: BTreeMap<String, DelegationGrant>,
    federation: FederationRegistry,
    clock: u64,
    events: Vec<Event>,
    next_slice: u64,
    next_vcontroller: u64,
    next_grant: u64,
}

impl Orchestrator {
    pub fn new(inventory: Inventory, config: OrchestratorConfig) -> Result<Self> {
        inventory.validate()?;
        config.validate()?;
        for (i, n) in inventory.nodes.iter().enumerate() {
            if !n.running_instances.is_empty() {
                return Err(ValidationError::new(
                    FieldPath::root()
                        .field("nodes")
                        .index(i)
                        .field("running_instances"),
                    "an inventory must start with no running instances",
                )
                .into());
            }
        }
        for (i, e) in inventory.equipment.iter().enumerate() {
            if !e.vcontrollers.is_empty() {
                return Err(ValidationError::new(
                    FieldPath::root()
                        .field("equipment")
                        .index(i)
                        .field("vcontrollers"),
                    "an inventory must start with no virtual controllers",
                )
                .into());
            }
        }
        let mut emulator = Emulator::new(&inventory.nodes, config.latency.clone());
        emulator.set_realtime(config.realtime);
        Ok(Self {
            config,
            inventory,
            emulator,
            slices: BTreeMap::new(),
            pending: Vec::new(),
            vcontrollers: BTreeMap::new(),
            grants: BTreeMap::new(),
            federation: FederationRegistry::new(),
            clock: 0,
            events: Vec::new(),
            next_slice: 0,
            next_vcontroller: 0,
            next_grant: 0,
        })
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn inventory(&self) -> &Inventory {
        &self.inventory
    }

    pub fn emulator(&self) -> &Emulator {
        &self.emulator
    }

    pub fn emulator_mut(&mut self) -> &mut Emulator {
        &mut self.emulator
    }

    pub fn slice(&self, id: &str) -> Option<&Slice> {
        self.slices.get(id)
    }

    pub fn slices(&self) -> impl Iterator<Item = &Slice> {
        self.slices.values()
    }

    pub fn vcontroller(&self, id: &str) -> Option<&VController> {
        self.vcontrollers.get(id)
    }

    pub fn vcontrollers(&self) -> impl Iterator<Item = &VController> {
        self.vcontrollers.values()
    }

    pub fn grant(&self, id: &str) -> Option<&DelegationGrant> {
        self.grants.get(id)
    }

    pub fn federations(&self) -> &FederationRegistry {
        &self.federation
    }

    pub fn pending(&self) -> &[PendingRequest] {
        &self.pending
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event_log_ndjson(&self) -> String {
        federation::ndjson(&self.events)
    }

    pub fn now(&self) -> u64 {
        self.clock
    }

    /// Advances the logical clock and returns the new time.
    pub fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn export_snapshot(&self) -> String {
        serde_json::to_string_pretty(self).expect("orchestrator state is serializable")
    }

    pub fn import_snapshot(json: &str) -> Result<Self> {
        let mut orch: Orchestrator = serde_json::from_str(json)?;
        orch.inventory.validate()?;
        orch.config.validate()?;
        orch.emulator.set_realtime(orch.config.realtime);
        orch.validate()?;
        Ok(orch)
    }

    fn log(
        &mut self,
        kind: EventKind,
        id: &str,
        from: Option<String>,
        to: &str,
        reason: Option<String>,
    ) {
        self.events.push(Event {
            timestamp: self.clock,
            kind,
            id: id.to_string(),
            from,
            to: to.to_string(),
            reason,
        });
    }

    fn transition(&mut self, id: &str, to: SliceState, reason: Option<String>) -> Result<()> {
        let slice = self
            .slices
            .get_mut(id)
            .ok_or_else(|| not_found("slice", id))?;
        let from = slice.state;
        if !from.can_transition_to(to) {
            return Err(Error::IllegalTransition {
                slice: id.to_string(),
                from,
                to,
            });
        }
        slice.state = to;
        self.log(
            EventKind::Slice,
            id,
            Some(from.name().into()),
            to.name(),
            reason,
        );
        Ok(())
    }

    // ---- ownership and delegation ----

    fn owner_of(&self, target: &Target) -> Option<&str> {
        match target {
            Target::Slice(id) => self.slices.get(id).map(|s| s.tenant()),
            Target::Equipment(id) => {
                let eq = self.inventory.equipment(id)?;
                self.inventory.site(&eq.site).map(|s| s.owner.as_str())
            }
        }
    }

    /// True iff `tenant` owns `target` or holds an unexpired grant for `action` on it.
    pub fn authorize(&self, tenant: &str, action: Action, target: &Target) -> bool {
        if self.owner_of(target) == Some(tenant) {
            return true;
        }
        self.grants
            .values()
            .any(|g| g.allows(tenant, action, target, self.clock))
    }

    fn require(&self, tenant: &str, action: Action, target: Target) -> Result<()> {
        if self.authorize(tenant, action, &target) {
            Ok(())
        } else {
            Err(Error::Unauthorized {
                tenant: tenant.to_string(),
                action: action.to_string(),
                target: target.to_string(),
            })
        }
    }

    pub fn delegate(&mut self, mut grant: DelegationGrant) -> Result<String> {
        if self.inventory.tenant(&grant.grantee).is_none() {
            return Err(ValidationError::new(
                FieldPath::root().field("grantee"),
                format!("unknown tenant `{}`", grant.grantee),
            )
            .into());
        }
        for target in grant.scope.targets() {
            match self.owner_of(&target) {
                None => {
                    return Err(match target {
                        Target::Slice(id) => not_found("slice", &id),
                        Target::Equipment(id) => not_found("equipment", &id),
                    })
                }
                Some(owner) if owner != grant.grantor => {
                    return Err(Error::Ownership {
                        tenant: grant.grantor.clone(),
                        target: target.to_string(),
                    })
                }
                Some(_) => {}
            }
        }
        self.tick();
        self.next_grant += 1;
        grant.id = format!("g{:06}", self.next_grant);
        let id = grant.id.clone();
        self.grants.insert(id.clone(), grant);
        Ok(id)
    }

    // ---- equipment slicing ----

    pub fn equipment_free_slots(&self, equipment: &str) -> u32 {
        let Some(eq) = self.inventory.equipment(equipment) else {
            return 0;
        };
        let used = self
            .vcontrollers
            .values()
            .filter(|v| v.equipment == equipment)
            .count() as u32;
        eq.max_vcontrollers.saturating_sub(used)
    }

    /// Allocates a fresh virtual controller on `equipment` for `slice`.
    pub fn bind_vcontroller(&mut self, equipment: &str, slice: &str) -> Result<VController> {
        if self.inventory.equipment(equipment).is_none() {
            return Err(not_found("equipment", equipment));
        }
        let owner = self
            .slices
            .get(slice)
            .ok_or_else(|| not_found("slice", slice))?
            .tenant()
            .to_string();
        if self.equipment_free_slots(equipment) == 0 {
            return Err(Error::EquipmentExhausted(equipment.to_string()));
        }
        self.next_vcontroller += 1;
        let vc = VController {
            id: format!("vc{:06}", self.next_vcontroller),
            equipment: equipment.to_string(),
            slice: slice.to_string(),
            owner,
            config_version: 1,
        };
        self.vcontrollers.insert(vc.id.clone(), vc.clone());
        Ok(vc)
    }

    /// Pushes a new configuration to a virtual controller.
    pub fn update_vcontroller(&mut self, actor: &str, id: &str) -> Result<&VController> {
        let vc = self
            .vcontrollers
            .get(id)
            .ok_or_else(|| not_found("vcontroller", id))?;
        let slice = vc.slice.clone();
        let equipment = vc.equipment.clone();
        if !self.authorize(actor, Action::Reconfigure, &Target::Slice(slice.clone()))
            && !self.authorize(actor, Action::Reconfigure, &Target::Equipment(equipment))
        {
            return Err(Error::Unauthorized {
                tenant: actor.to_string(),
                action: Action::Reconfigure.to_string(),
                target: format!("vcontroller {id}"),
            });
        }
        self.tick();
        let vc = self.vcontrollers.get_mut(id).expect("checked above");
        vc.config_version += 1;
        Ok(vc)
    }

    // ---- residual accounting ----

    fn usage(&self, exclude: Option<&str>) -> Usage {
        let mut usage = Usage::default();
        for s in self.slices.values() {
            if Some(s.id.as_str()) == exclude || !s.state.holds_resources() {
                continue;
            }
            if let Some(plan) = &s.plan {
                usage.add_plan(&self.inventory, &s.blueprint, plan);
            }
        }
        usage
    }

    fn view_from(&self, usage: &Usage) -> ResidualView {
        let mut view = ResidualView::pristine(&self.inventory);
        for (id, r) in view.nodes.iter_mut() {
            let cap = r.available.scaled(self.config.oversubscription);
            let mut used = ResourceVector::zero();
            let mut slots = 0;
            if let Some((v, n)) = usage.nodes.get(id) {
                used = v.clone();
                slots = *n;
            }
            // Instances the orchestrator did not place still occupy the node.
            if let Some(agent) = self.emulator.agent(id) {
                for inst in agent.instances.values().filter(|i| i.slice.is_empty()) {
                    used = &used + &inst.demand.without_radio();
                    slots += 1;
                }
            }
            r.available = cap.saturating_sub(&used);
            r.free_slots = r.free_slots.saturating_sub(slots);
        }
        for (site, radio) in view.site_radio.iter_mut() {
            if let Some(used) = usage.radio.get(site) {
                *radio = radio.saturating_sub(used);
            }
        }
        for (key, bw) in view.wan.iter_mut() {
            if let Some(used) = usage.wan.get(key) {
                *bw = bw.saturating_sub(*used);
            }
        }
        view
    }

    /// Residual capacity after every live slice's reservations.
    pub fn residual_view(&self) -> ResidualView {
        self.view_from(&self.usage(None))
    }

    pub fn resource_snapshot(&self) -> ResourceSnapshot {
        let view = self.residual_view();
        ResourceSnapshot {
            nodes: view
                .nodes
                .iter()
                .map(|(id, r)| {
                    (
                        id.clone(),
                        NodeResources {
                            residual: r.available.clone(),
                            free_slots: r.free_slots,
                            running: self.emulator.agent(id).map(|a| a.running()).unwrap_or(0),
                        },
                    )
                })
                .collect(),
            site_radio: view.site_radio.clone(),
            wan: view
                .wan
                .iter()
                .map(|((a, b), bw)| (format!("{a}|{b}"), *bw))
                .collect(),
            equipment_free: self
                .inventory
                .equipment
                .iter()
                .map(|e| (e.id.clone(), self.equipment_free_slots(&e.id)))
                .collect(),
            instances: self.emulator.agents().map(|a| a.instances.len()).sum(),
            vcontrollers: self.vcontrollers.len(),
        }
    }

    /// The inventory with running instances and virtual controllers filled in.
    pub fn inventory_snapshot(&self) -> Inventory {
        let mut inv = self.inventory.clone();
        for n in inv.nodes.iter_mut() {
            if let Some(agent) = self.emulator.agent(&n.id) {
                n.running_instances = agent.instances.keys().cloned().collect();
            }
        }
        for e in inv.equipment.iter_mut() {
            e.vcontrollers = self
                .vcontrollers
                .values()
                .filter(|v| v.equipment == e.id)
                .map(|v| v.id.clone())
                .collect();
        }
        inv
    }

    // ---- submission and admission ----

    /// Validates and enqueues a blueprint. No resources are touched.
    pub fn submit(&mut self, blueprint: SliceBlueprint, arrival: u64) -> Result<String> {
        self.inventory.validate_blueprint(&blueprint)?;
        self.tick();
        self.next_slice += 1;
        let id = format!("s{:06}", self.next_slice);
        self.slices.insert(
            id.clone(),
            Slice {
                id: id.clone(),
                blueprint: blueprint.canonicalized(),
                state: SliceState::Requested,
                arrival,
                plan: None,
                instances: Vec::new(),
                federations: Vec::new(),
                response_time_s: None,
                reject_reason: None,
            },
        );
        self.pending.push(PendingRequest {
            id: id.clone(),
            arrival,
        });
        self.log(
            EventKind::Slice,
            &id,
            None,
            SliceState::Requested.name(),
            None,
        );
        Ok(id)
    }

    /// Decides every pending request, in [`order_requests`] order, without
    /// instantiating.
    pub fn admit_pending(&mut self) -> Vec<AdmissionOutcome> {
        let order = order_requests(&self.pending);
        self.pending.clear();
        order.into_iter().map(|r| self.admit(&r.id)).collect()
    }

    /// Admits and instantiates every pending request in order.
    pub fn process_pending(&mut self) -> Vec<AdmissionOutcome> {
        let order = order_requests(&self.pending);
        self.pending.clear();
        let mut out = Vec::new();
        for r in order {
            let outcome = self.admit(&r.id);
            if let AdmissionOutcome::Admitted { slice } = &outcome {
                if let Err(e) = self.instantiate(slice) {
                    out.push(AdmissionOutcome::Rejected {
                        slice: slice.clone(),
                        reason: RejectReason::InsufficientCapacity,
                        detail: e.to_string(),
                    });
                    continue;
                }
            }
            out.push(outcome);
        }
        out
    }

    fn admit(&mut self, id: &str) -> AdmissionOutcome {
        self.tick();
        let bp = self.slices[id].blueprint.clone();
        match self.plan_admission(id, &bp) {
            Ok(mut plan) => {
                for eq in bp.bound_equipment() {
                    let vc = self
                        .bind_vcontroller(eq, id)
                        .expect("slot checked during planning");
                    plan.vcontroller_allocs.insert(eq.to_string(), vc.id);
                }
                let slice = self.slices.get_mut(id).expect("submitted slice");
                slice.plan = Some(plan);
                self.transition(id, SliceState::Admitted, None)
                    .expect("REQUESTED -> ADMITTED");
                AdmissionOutcome::Admitted {
                    slice: id.to_string(),
                }
            }
            Err(inf) => {
                self.slices
                    .get_mut(id)
                    .expect("submitted slice")
                    .reject_reason = Some(inf.reason);
                self.transition(
                    id,
                    SliceState::Rejected,
                    Some(format!("{}: {}", inf.reason, inf.detail)),
                )
                .expect("REQUESTED -> REJECTED");
                AdmissionOutcome::Rejected {
                    slice: id.to_string(),
                    reason: inf.reason,
                    detail: inf.detail,
                }
            }
        }
    }

    fn plan_admission(&self, id: &str, bp: &SliceBlueprint) -> Result<PlacementPlan, Infeasible> {
        if self.slices.get(id).map(|s| s.state) != Some(SliceState::Requested) {
            return Err(Infeasible {
                reason: RejectReason::InsufficientCapacity,
                detail: format!("slice `{id}` is not awaiting admission"),
            });
        }
        for eq in bp.bound_equipment() {
            if self.equipment_free_slots(eq) == 0 {
                return Err(Infeasible {
                    reason: RejectReason::EquipmentExhausted,
                    detail: format!("equipment `{eq}` has no free virtual controller"),
                });
            }
        }
        place(bp, &self.inventory, &self.residual_view())
    }

    // ---- instantiation ----

    fn spawn_batches(
        &self,
        slice: &str,
        bp: &SliceBlueprint,
        vfs: impl Iterator<Item = (String, String)>,
    ) -> BTreeMap<String, (InstanceMode, Vec<SpawnRequest>)> {
        let mut batches: BTreeMap<String, (InstanceMode, Vec<SpawnRequest>)> = BTreeMap::new();
        for (vf, node) in vfs {
            let spec = bp.vf(&vf).expect("assigned VF exists");
            let entry = batches
                .entry(node)
                .or_insert((InstanceMode::Empty, Vec::new()));
            entry.0 = entry.0.max(spec.mode);
            entry.1.push(SpawnRequest {
                slice: slice.to_string(),
                vf: vf.clone(),
                mode: spec.mode,
                demand: spec.demand.clone(),
            });
        }
        batches
    }

    /// Drives an ADMITTED slice to ACTIVE. Per-node spawns run in parallel,
    /// so the response time is the overhead plus the slowest node.
    pub fn instantiate(&mut self, id: &str) -> Result<&Slice> {
        let slice = self.slices.get(id).ok_or_else(|| not_found("slice", id))?;
        if slice.state != SliceState::Admitted {
            return Err(Error::InvalidState {
                slice: id.to_string(),
                state: slice.state,
                expected: "ADMITTED",
            });
        }
        let bp = slice.blueprint.clone();
        let plan = slice.plan.clone().expect("admitted slice has a plan");
        self.tick();
        self.transition(id, SliceState::Placing, None)?;
        self.transition(id, SliceState::Instantiating, None)?;
        let batches = self.spawn_batches(id, &bp, plan.assignments.clone().into_iter());
        match self.emulator.spawn_parallel(batches) {
            Ok(outcomes) => {
                let slowest = outcomes.iter().map(|o| o.elapsed_s).fold(0.0, f64::max);
                let response = self.config.orchestration_overhead_s + slowest;
                if self.config.realtime {
                    std::thread::sleep(std::time::Duration::from_secs_f64(
                        self.config.orchestration_overhead_s,
                    ));
                }
                self.emulator.advance_clock(response);
                let slice = self.slices.get_mut(id).expect("exists");
                slice.instances = outcomes.into_iter().flat_map(|o| o.instances).collect();
                slice.response_time_s = Some(response);
                self.transition(id, SliceState::Active, None)?;
                self.open_offered_federations(id);
                Ok(&self.slices[id])
            }
            Err(err) => {
                self.release_vcontrollers(id);
                let slice = self.slices.get_mut(id).expect("exists");
                slice.plan = None;
                slice.reject_reason = Some(RejectReason::InsufficientCapacity);
                self.transition(
                    id,
                    SliceState::Rejected,
                    Some(format!("spawn failed: {err}")),
                )?;
                Err(err)
            }
        }
    }

    fn release_vcontrollers(&mut self, slice: &str) {
        self.vcontrollers.retain(|_, v| v.slice != slice);
    }

    fn open_offered_federations(&mut self, id: &str) {
        let bp = self.slices[id].blueprint.clone();
        for offer in bp.federations {
            let importer_ok = self
                .slices
                .get(&offer.importer)
                .is_some_and(|s| s.state == SliceState::Active && s.id != id);
            if !importer_ok {
                continue;
            }
            let tenant = bp.tenant.clone();
            if let Ok(link) =
                self.create_federation(&tenant, id, &offer.importer, offer.rules, offer.encrypted)
            {
                let _ = self.consent(&tenant, &link.id);
            }
        }
    }

    // ---- reconfiguration ----

    fn live_slice(&self, id: &str) -> Result<&Slice> {
        match self.slices.get(id) {
            Some(s) if !matches!(s.state, SliceState::Terminated | SliceState::Rejected) => Ok(s),
            _ => Err(not_found("slice", id)),
        }
    }

    /// Applies `delta` atomically: either every change lands and the slice
    /// is ACTIVE again, or the slice is left exactly as it was.
    pub fn reconfigure(&mut self, actor: &str, id: &str, delta: SliceDelta) -> Result<&Slice> {
        let slice = self.live_slice(id)?;
        self.require(actor, Action::Reconfigure, Target::Slice(id.to_string()))?;
        if slice.state != SliceState::Active {
            return Err(Error::InvalidState {
                slice: id.to_string(),
                state: slice.state,
                expected: "ACTIVE",
            });
        }
        let old_bp = slice.blueprint.clone();
        let old_plan = slice.plan.clone().expect("active slice has a plan");

        let root = FieldPath::root();
        let removed: BTreeSet<&str> = delta.remove_vfs.iter().map(String::as_str).collect();
        for (i, name) in delta.remove_vfs.iter().enumerate() {
            if old_bp.vf(name).is_none() {
                return Err(ValidationError::new(
                    root.field("remove_vfs").index(i),
                    format!("slice has no VF `{name}`"),
                )
                .into());
            }
        }
        let mut new_bp = old_bp.clone();
        new_bp.vfs.retain(|v| !removed.contains(v.name.as_str()));
        new_bp.vfs.extend(delta.add_vfs.iter().cloned());
        let names: BTreeSet<String> = new_bp.vfs.iter().map(|v| v.name.clone()).collect();
        let gone = |e: &str| removed.contains(e) && !names.contains(e);
        match &delta.updated_vlinks {
            Some(links) => new_bp.vlinks = links.clone(),
            None => new_bp
                .vlinks
                .retain(|l| !gone(&l.endpoint_a) && !gone(&l.endpoint_b)),
        }
        new_bp.streams.retain(|s| !gone(&s.producer));
        let streams: BTreeSet<String> = new_bp.streams.iter().map(|s| s.id.clone()).collect();
        for offer in new_bp.federations.iter_mut() {
            offer.rules.retain(|r| streams.contains(&r.stream));
        }
        new_bp.federations.retain(|o| !o.rules.is_empty());
        let new_bp = new_bp.canonicalized();
        self.inventory.validate_blueprint(&new_bp)?;

        let kept: BTreeMap<String, String> = old_plan
            .assignments
            .iter()
            .filter(|(vf, _)| {
                new_bp.vf(vf).is_some() && !delta.add_vfs.iter().any(|a| &a.name == *vf)
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();

        let old_equipment: BTreeSet<String> = old_plan.vcontroller_allocs.keys().cloned().collect();
        let new_equipment: BTreeSet<String> = new_bp
            .bound_equipment()
            .into_iter()
            .map(String::from)
            .collect();
        for eq in new_equipment.difference(&old_equipment) {
            if self.equipment_free_slots(eq) == 0 {
                return Err(Error::InfeasibleDelta {
                    reason: RejectReason::EquipmentExhausted,
                    detail: format!("equipment `{eq}` has no free virtual controller"),
                });
            }
        }

        let mut usage = self.usage(Some(id));
        for (vf, node) in &kept {
            let spec = new_bp.vf(vf).expect("kept VF exists");
            usage.add_vf(&self.inventory, node, &spec.demand);
        }
        let view = self.view_from(&usage);
        let mut plan = place_with_fixed(&new_bp, &self.inventory, &view, &kept).map_err(|inf| {
            Error::InfeasibleDelta {
                reason: inf.reason,
                detail: inf.detail,
            }
        })?;

        // Feasible: apply.
        self.tick();
        self.transition(id, SliceState::Reconfiguring, None)?;
        let mut instances: BTreeMap<String, (String, String)> = BTreeMap::new();
        for inst in &self.slices[id].instances {
            if let Some(vi) = self.emulator.instance(inst) {
                instances.insert(vi.vf.clone(), (vi.node.clone(), vi.id.clone()));
            }
        }
        let dropped: Vec<String> = old_plan
            .assignments
            .keys()
            .filter(|vf| !kept.contains_key(*vf))
            .cloned()
            .collect();
        let mut by_node: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for vf in &dropped {
            if let Some((node, inst)) = instances.get(vf) {
                by_node.entry(node.clone()).or_default().push(inst.clone());
            }
        }
        for (node, ids) in &by_node {
            self.emulator.teardown(node, ids)?;
        }
        let added = plan
            .assignments
            .iter()
            .filter(|(vf, _)| !kept.contains_key(*vf))
            .map(|(k, v)| (k.clone(), v.clone()));
        let batches = self.spawn_batches(id, &new_bp, added);
        let spawned = match self.emulator.spawn_parallel(batches) {
            Ok(outcomes) => outcomes,
            Err(err) => {
                // Restore the dropped VFs on their previous nodes.
                let restore = dropped.iter().filter_map(|vf| {
                    old_plan
                        .assignments
                        .get(vf)
                        .map(|n| (vf.clone(), n.clone()))
                });
                let batches = self.spawn_batches(id, &old_bp, restore);
                let outcomes = self.emulator.spawn_parallel(batches)?;
                let slice = self.slices.get_mut(id).expect("exists");
                let dropped_ids: BTreeSet<&String> = by_node.values().flatten().collect();
                slice.instances.retain(|i| !dropped_ids.contains(i));
                slice
                    .instances
                    .extend(outcomes.into_iter().flat_map(|o| o.instances));
                self.transition(
                    id,
                    SliceState::Active,
                    Some(format!("reconfiguration rolled back: {err}")),
                )?;
                return Err(Error::InfeasibleDelta {
                    reason: RejectReason::InsufficientCapacity,
                    detail: err.to_string(),
                });
            }
        };

        let mut allocs = old_plan.vcontroller_allocs.clone();
        for eq in old_equipment.difference(&new_equipment) {
            if let Some(vc) = allocs.remove(eq) {
                self.vcontrollers.remove(&vc);
            }
        }
        for eq in new_equipment.difference(&old_equipment) {
            let vc = self.bind_vcontroller(eq, id)?;
            allocs.insert(eq.clone(), vc.id);
        }
        plan.vcontroller_allocs = allocs;

        let slice = self.slices.get_mut(id).expect("exists");
        let dropped_ids: BTreeSet<&String> = by_node.values().flatten().collect();
        slice.instances.retain(|i| !dropped_ids.contains(i));
        slice
            .instances
            .extend(spawned.into_iter().flat_map(|o| o.instances));
        slice.blueprint = new_bp;
        slice.plan = Some(plan);
        self.transition(id, SliceState::Active, None)?;
        Ok(&self.slices[id])
    }

    // ---- termination ----

    /// Closes the slice's federations, tears down its instances and frees
    /// everything it reserved.
    pub fn terminate(&mut self, actor: &str, id: &str) -> Result<&Slice> {
        let slice = self.live_slice(id)?;
        self.require(actor, Action::Reconfigure, Target::Slice(id.to_string()))?;
        if !matches!(slice.state, SliceState::Active | SliceState::Reconfiguring) {
            return Err(Error::InvalidState {
                slice: id.to_string(),
                state: slice.state,
                expected: "ACTIVE or RECONFIGURING",
            });
        }
        self.tick();
        self.transition(id, SliceState::Terminating, None)?;
        for link in self.federation.open_links_of(id) {
            let from = self.federation.link(&link).map(|l| l.state);
            self.federation.close(&link)?;
            self.log(
                EventKind::Federation,
                &link,
                from.map(|s| link_state_name(s).to_string()),
                "CLOSED",
                Some(format!("slice {id} terminating")),
            );
        }
        let mut by_node: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for inst in &self.slices[id].instances {
            if let Some(vi) = self.emulator.instance(inst) {
                by_node
                    .entry(vi.node.clone())
                    .or_default()
                    .push(vi.id.clone());
            }
        }
        for (node, ids) in by_node {
            self.emulator.teardown(&node, &ids)?;
        }
        self.release_vcontrollers(id);
        self.slices.get_mut(id).expect("exists").instances.clear();
        self.transition(id, SliceState::Terminated, None)?;
        Ok(&self.slices[id])
    }

    // ---- federation ----

    /// Proposes a link from `exporter` to `importer`. `actor` must manage
    /// one of the two slices.
    pub fn create_federation(
        &mut self,
        actor: &str,
        exporter: &str,
        importer: &str,
        rules: Vec<SfiRule>,
        encrypted: bool,
    ) -> Result<FederationLink> {
        if exporter == importer {
            return Err(Error::SelfFederation(exporter.to_string()));
        }
        let exp = self
            .slices
            .get(exporter)
            .ok_or_else(|| not_found("slice", exporter))?;
        let imp = self
            .slices
            .get(importer)
            .ok_or_else(|| not_found("slice", importer))?;
        if !self.authorize(
            actor,
            Action::Reconfigure,
            &Target::Slice(exporter.to_string()),
        ) && !self.authorize(
            actor,
            Action::Reconfigure,
            &Target::Slice(importer.to_string()),
        ) {
            return Err(Error::Unauthorized {
                tenant: actor.to_string(),
                action: "federate".into(),
                target: format!("slices {exporter} and {importer}"),
            });
        }
        for s in [exp, imp] {
            if s.state != SliceState::Active {
                return Err(Error::InvalidState {
                    slice: s.id.clone(),
                    state: s.state,
                    expected: "ACTIVE",
                });
            }
        }
        federation::validate_rules(&rules, &exp.blueprint, &FieldPath::root().field("rules"))?;
        let (exp_tenant, imp_tenant) = (exp.tenant().to_string(), imp.tenant().to_string());
        self.tick();
        let link = self
            .federation
            .propose(
                (exporter, &exp_tenant),
                (importer, &imp_tenant),
                rules,
                encrypted,
            )?
            .clone();
        for s in [exporter, importer] {
            self.slices
                .get_mut(s)
                .expect("exists")
                .federations
                .push(link.id.clone());
        }
        let reason = Some(format!("{exporter} -> {importer}, encrypted={encrypted}"));
        self.log(EventKind::Federation, &link.id, None, "PROPOSED", reason);
        Ok(link)
    }

    pub fn consent(&mut self, actor: &str, link: &str) -> Result<FederationLink> {
        let before = self
            .federation
            .link(link)
            .ok_or_else(|| not_found("federation", link))?
            .state;
        self.tick();
        let after = self.federation.consent(link, actor)?.clone();
        if after.state != before {
            self.log(
                EventKind::Federation,
                link,
                Some(link_state_name(before).into()),
                link_state_name(after.state),
                None,
            );
        }
        Ok(after)
    }

    /// Sends a record from its slice towards `target` through the federation
    /// layer. The record's label is raised to its stream's declared label.
    pub fn publish(&mut self, record: &DataRecord, target: &str) -> Vec<DataRecord> {
        let mut rec = record.clone();
        if let Some(stream) = self
            .slices
            .get(&rec.slice)
            .and_then(|s| s.blueprint.stream(&rec.stream))
        {
            rec.sensitivity = rec.sensitivity.max(stream.sensitivity);
        }
        self.federation.deliver(&rec, target)
    }

    /// The site hosting the producer of `stream` in `slice`.
    pub fn stream_site(&self, slice: &str, stream: &str) -> Option<String> {
        let s = self.slices.get(slice)?;
        let producer = &s.blueprint.stream(stream)?.producer;
        if let Some(node) = s.plan.as_ref().and_then(|p| p.assignments.get(producer)) {
            return self.inventory.node(node).map(|n| n.site.clone());
        }
        self.inventory.equipment(producer).map(|e| e.site.clone())
    }

    /// Merges the records gathered over several links sharing one importer.
    pub fn merge_federated(
        &self,
        inputs: &[(String, Vec<DataRecord>)],
    ) -> Result<Vec<MergedRecord>> {
        let mut merge = Vec::new();
        for (link_id, records) in inputs {
            let link = self
                .federation
                .link(link_id)
                .ok_or_else(|| not_found("federation", link_id))?;
            let mut per_site: BTreeMap<String, Vec<DataRecord>> = BTreeMap::new();
            for r in records {
                let mut r = r.clone();
                if let Some(stream) = self
                    .slices
                    .get(&r.slice)
                    .and_then(|s| s.blueprint.stream(&r.stream))
                {
                    r.sensitivity = r.sensitivity.max(stream.sensitivity);
                }
                let site = self.stream_site(&r.slice, &r.stream).unwrap_or_default();
                per_site.entry(site).or_default().push(r);
            }
            for (site, records) in per_site {
                merge.push(MergeInput {
                    link,
                    exporter_site: site,
                    records,
                });
            }
        }
        federation::merge_streams(&merge)
    }

    // ---- invariants ----

    /// Checks every system invariant against the current state.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let fail = |msg: String| Err(ValidationError::general(msg));
        for n in &self.inventory.nodes {
            let Some(agent) = self.emulator.agent(&n.id) else {
                return fail(format!("node {} has no agent", n.id));
            };
            if agent.running() > n.max_instances {
                return fail(format!(
                    "node {} runs {} > {}",
                    n.id,
                    agent.running(),
                    n.max_instances
                ));
            }
            if !agent.used().fits(&n.capacity.without_radio()) {
                return fail(format!("node {} instance demand exceeds capacity", n.id));
            }
        }
        let usage = self.usage(None);
        for (node, (demand, count)) in &usage.nodes {
            let Some(n) = self.inventory.node(node) else {
                return fail(format!("plan references unknown node {node}"));
            };
            if !demand.fits(
                &n.capacity
                    .without_radio()
                    .scaled(self.config.oversubscription),
            ) {
                return fail(format!("reservations on {node} exceed capacity"));
            }
            if *count > n.max_instances {
                return fail(format!("reservations on {node} exceed max_instances"));
            }
        }
        for (site, used) in &usage.radio {
            let cap = self
                .inventory
                .site(site)
                .map(|s| s.radio_capacity.clone())
                .unwrap_or_default();
            let cap = ResourceVector {
                radio_units: cap,
                ..Default::default()
            };
            if !used.fits(&cap) {
                return fail(format!("radio reservations exceed capacity at {site}"));
            }
        }
        let pristine = ResidualView::pristine(&self.inventory);
        for (key, used) in &usage.wan {
            if *used > pristine.wan.get(key).copied().unwrap_or(0) {
                return fail(format!("WAN reservations exceed capacity on {key:?}"));
            }
        }
        for e in &self.inventory.equipment {
            if self
                .vcontrollers
                .values()
                .filter(|v| v.equipment == e.id)
                .count()
                > e.max_vcontrollers as usize
            {
                return fail(format!("equipment {} over-allocated", e.id));
            }
        }
        let mut seen = BTreeSet::new();
        for vc in self.vcontrollers.values() {
            match self.slices.get(&vc.slice) {
                Some(s) if s.state.holds_resources() => {}
                _ => {
                    return fail(format!(
                        "vcontroller {} bound to non-live slice {}",
                        vc.id, vc.slice
                    ))
                }
            }
            if !seen.insert((vc.equipment.clone(), vc.slice.clone())) {
                return fail(format!(
                    "slice {} holds two vcontrollers on {}",
                    vc.slice, vc.equipment
                ));
            }
            if vc.config_version == 0 {
                return fail(format!("vcontroller {} has config_version 0", vc.id));
            }
        }
        for s in self.slices.values() {
            if s.plan.is_some() != s.state.has_plan() {
                return fail(format!(
                    "slice {} in {} has plan={}",
                    s.id,
                    s.state,
                    s.plan.is_some()
                ));
            }
            if let Some(plan) = &s.plan {
                if s.blueprint
                    .vfs
                    .iter()
                    .any(|v| !plan.assignments.contains_key(&v.name))
                {
                    return fail(format!("slice {} has unassigned VFs", s.id));
                }
                for route in &plan.link_routes {
                    match s.blueprint.vlinks.get(route.link) {
                        Some(l) if route.latency_ms <= l.max_latency_ms => {}
                        _ => {
                            return fail(format!(
                                "slice {} route {} violates its bound",
                                s.id, route.link
                            ))
                        }
                    }
                }
            }
            if s.state == SliceState::Active {
                for inst in &s.instances {
                    if self.emulator.instance(inst).map(|i| i.slice.as_str()) != Some(s.id.as_str())
                    {
                        return fail(format!("slice {} lost instance {inst}", s.id));
                    }
                }
            }
        }
        let mut last: BTreeMap<&str, SliceState> = BTreeMap::new();
        for e in self.events.iter().filter(|e| e.kind == EventKind::Slice) {
            let Some(to) = SliceState::from_name(&e.to) else {
                return fail(format!("event with unknown state {}", e.to));
            };
            match (last.get(e.id.as_str()), &e.from) {
                (None, None) if to == SliceState::Requested => {}
                (Some(prev), Some(from)) if from == prev.name() && prev.can_transition_to(to) => {}
                _ => {
                    return fail(format!(
                        "illegal transition recorded for {}: {:?} -> {}",
                        e.id, e.from, e.to
                    ))
                }
            }
            last.insert(&e.id, to);
        }
        Ok(())
    }
}

fn not_found(kind: &'static str, id: &str) -> Error {
    Error::NotFound {
        kind,
        id: id.to_string(),
    }
}

fn link_state_name(s: federation::LinkState) -> &'static str {
    match s {
        federation::LinkState::Proposed => "PROPOSED",
        federation::LinkState::Active => "ACTIVE",
        federation::LinkState::Closed => "CLOSED",
    }
}
