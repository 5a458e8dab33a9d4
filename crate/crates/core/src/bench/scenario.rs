use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{DataRecord, FieldValue, SfiRule, Transform};
use crate::model::{Inventory, Sensitivity, SliceBlueprint};
use crate::orchestrator::{
    Action, AdmissionOutcome, DelegationGrant, GrantScope, Orchestrator, OrchestratorConfig,
    SliceDelta, SliceState, Target,
};

pub const SCENARIOS: [&str; 3] = ["monitoring", "maintenance", "sfaas"];

const MONITORING: &str = include_str!("../../fixtures/scenarios/monitoring.json");
const MAINTENANCE: &str = include_str!("../../fixtures/scenarios/maintenance.json");
const SFAAS: &str = include_str!("../../fixtures/scenarios/sfaas.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    pub metrics: BTreeMap<String, f64>,
}

impl ScenarioReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            passed: true,
            checks: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks
            .push(CheckResult::new(name, passed, detail.into()));
    }

    fn metric(&mut self, name: &str, value: impl Into<f64>) {
        self.metrics.insert(name.to_string(), value.into());
    }

    pub fn metric_value(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Slice ids in fixtures are blueprint ids; they are mapped to the
/// orchestrator's ids on submission.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Fixture {
    inventory: Inventory,
    slices: Vec<SliceBlueprint>,
    #[serde(default)]
    federations: Vec<FixtureFederation>,
    #[serde(default)]
    delegations: Vec<FixtureGrant>,
    #[serde(default)]
    emissions: Vec<Emission>,
    #[serde(default)]
    reconfigure: Option<FixtureReconfigure>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureFederation {
    exporter: String,
    importer: String,
    rules: Vec<SfiRule>,
    #[serde(default)]
    encrypted: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureGrant {
    grantor: String,
    grantee: String,
    #[serde(default)]
    equipment: BTreeSet<String>,
    #[serde(default)]
    slices: BTreeSet<String>,
    actions: BTreeSet<Action>,
    expiry: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Emission {
    slice: String,
    stream: String,
    count: u64,
    #[serde(default)]
    start: u64,
    #[serde(default = "one")]
    step: u64,
    #[serde(default)]
    fields: BTreeMap<String, FieldValue>,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureReconfigure {
    slice: String,
    actor: String,
    delta: SliceDelta,
    /// A tenant that must be refused.
    stranger: String,
}

/// Submitted fixture: orchestrator plus the blueprint-id to slice-id map.
struct Deployment {
    orch: Orchestrator,
    ids: BTreeMap<String, String>,
    links: BTreeMap<(String, String), String>,
}

impl Deployment {
    fn id<'a>(&'a self, bp: &'a str) -> &'a str {
        self.ids.get(bp).map(String::as_str).unwrap_or(bp)
    }

    fn bp_of<'a>(&'a self, slice: &'a str) -> &'a str {
        self.ids
            .iter()
            .find(|(_, v)| v.as_str() == slice)
            .map(|(k, _)| k.as_str())
            .unwrap_or(slice)
    }
}

fn load(text: &str) -> Result<Fixture> {
    crate::api::parse_json(text)
        .map_err(|e| Error::Validation(crate::error::ValidationError::general(e.to_string())))
}

fn deploy(fx: &Fixture, report: &mut ScenarioReport) -> Result<Deployment> {
    let mut orch = Orchestrator::new(fx.inventory.clone(), OrchestratorConfig::default())?;
    let mut ids = BTreeMap::new();
    for bp in &fx.slices {
        let arrival = orch.tick();
        ids.insert(bp.id.clone(), orch.submit(bp.clone(), arrival)?);
    }
    let outcomes = orch.process_pending();
    let rejected: Vec<String> = outcomes
        .iter()
        .filter_map(|o| match o {
            AdmissionOutcome::Rejected { slice, reason, .. } => Some(format!("{slice}: {reason}")),
            AdmissionOutcome::Admitted { .. } => None,
        })
        .collect();
    let active = ids
        .values()
        .filter(|id| {
            orch.slice(id)
                .is_some_and(|s| s.state == SliceState::Active)
        })
        .count();
    report.check(
        "all_slices_active",
        rejected.is_empty() && active == ids.len(),
        format!("{active}/{} active; rejected {rejected:?}", ids.len()),
    );
    let mut dep = Deployment {
        orch,
        ids,
        links: BTreeMap::new(),
    };
    for g in &fx.delegations {
        let grant = DelegationGrant {
            id: String::new(),
            grantor: g.grantor.clone(),
            grantee: g.grantee.clone(),
            scope: GrantScope {
                equipment: g.equipment.clone(),
                slices: g.slices.iter().map(|s| dep.id(s).to_string()).collect(),
            },
            actions: g.actions.clone(),
            expiry: g.expiry,
        };
        dep.orch.delegate(grant)?;
    }
    for f in &fx.federations {
        let (exp, imp) = (
            dep.id(&f.exporter).to_string(),
            dep.id(&f.importer).to_string(),
        );
        let exp_tenant = dep
            .orch
            .slice(&exp)
            .map(|s| s.tenant().to_string())
            .unwrap_or_default();
        let imp_tenant = dep
            .orch
            .slice(&imp)
            .map(|s| s.tenant().to_string())
            .unwrap_or_default();
        let link =
            dep.orch
                .create_federation(&exp_tenant, &exp, &imp, f.rules.clone(), f.encrypted)?;
        dep.orch.consent(&exp_tenant, &link.id)?;
        dep.orch.consent(&imp_tenant, &link.id)?;
        dep.links
            .insert((f.exporter.clone(), f.importer.clone()), link.id.clone());
    }
    Ok(dep)
}

fn records(dep: &Deployment, e: &Emission) -> Vec<DataRecord> {
    (0..e.count)
        .map(|i| {
            let mut fields = e.fields.clone();
            fields.insert("value".into(), FieldValue::Number(i as f64));
            DataRecord {
                stream: e.stream.clone(),
                slice: dep.id(&e.slice).to_string(),
                timestamp: e.start + i * e.step,
                seq: i + 1,
                fields,
                sensitivity: Sensitivity::Public,
            }
        })
        .collect()
}

/// Runs one bundled use-case scenario end to end.
pub fn run_scenario(name: &str) -> Result<ScenarioReport> {
    match name {
        "monitoring" => monitoring(&load(MONITORING)?),
        "maintenance" => maintenance(&load(MAINTENANCE)?),
        "sfaas" => sfaas(&load(SFAAS)?),
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}

/// Contract manufacturers produce for several product companies; every
/// record is offered to every other slice and must only reach the customer
/// it belongs to.
fn monitoring(fx: &Fixture) -> Result<ScenarioReport> {
    let mut report = ScenarioReport::new("monitoring");
    let mut dep = deploy(fx, &mut report)?;

    let allowed: BTreeSet<(String, String, String)> = fx
        .federations
        .iter()
        .flat_map(|f| {
            f.rules
                .iter()
                .map(|r| (f.exporter.clone(), f.importer.clone(), r.stream.clone()))
        })
        .collect();
    let redacted: BTreeMap<(String, String), BTreeSet<String>> = fx
        .federations
        .iter()
        .map(|f| {
            let fields = f
                .rules
                .iter()
                .filter_map(|r| match &r.transform {
                    Transform::Redact { fields } => Some(fields.iter().cloned()),
                    _ => None,
                })
                .flatten()
                .collect();
            ((f.exporter.clone(), f.importer.clone()), fields)
        })
        .collect();

    let targets: Vec<String> = fx.slices.iter().map(|b| b.id.clone()).collect();
    let (mut offered, mut delivered, mut leaks, mut cross_customer, mut unredacted) =
        (0u32, 0u32, 0u32, 0u32, 0u32);
    let mut sources_seen: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for e in &fx.emissions {
        for rec in records(&dep, e) {
            for target in targets.iter().filter(|t| **t != e.slice) {
                offered += 1;
                let target_id = dep.id(target).to_string();
                let target_tenant = dep.orch.slice(&target_id).map(|s| s.tenant().to_string());
                for out in dep.orch.publish(&rec, &target_id) {
                    delivered += 1;
                    if !allowed.contains(&(e.slice.clone(), target.clone(), out.stream.clone()))
                        || out.sensitivity == Sensitivity::LocalOnly
                    {
                        leaks += 1;
                    }
                    if let Some(FieldValue::Text(customer)) = out.fields.get("customer") {
                        if Some(customer) != target_tenant.as_ref() {
                            cross_customer += 1;
                        }
                    }
                    let hidden = redacted.get(&(e.slice.clone(), target.clone()));
                    if hidden.is_some_and(|h| h.iter().any(|f| out.fields.contains_key(f))) {
                        unredacted += 1;
                    }
                    sources_seen
                        .entry(target.clone())
                        .or_default()
                        .insert(dep.bp_of(&out.slice).to_string());
                }
            }
        }
    }
    report.metric("records_offered", offered);
    report.metric("records_delivered", delivered);
    report.metric("leakage", leaks + cross_customer);
    report.check(
        "zero_leakage",
        leaks == 0 && cross_customer == 0,
        format!("{leaks} unauthorized deliveries, {cross_customer} cross-customer deliveries"),
    );
    report.check(
        "redaction_applied",
        unredacted == 0,
        format!("{unredacted} delivered records kept a redacted field"),
    );

    // Every monitoring slice hears from exactly the lines federated to it.
    let mut expected: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for f in &fx.federations {
        expected
            .entry(f.importer.clone())
            .or_default()
            .insert(f.exporter.clone());
    }
    for (importer, exporters) in &expected {
        let seen = sources_seen.get(importer).cloned().unwrap_or_default();
        report.check(
            &format!("{importer}_receives_its_lines"),
            &seen == exporters,
            format!("expected {exporters:?}, saw {seen:?}"),
        );
    }

    // Lines of different customers sharing a plant run on disjoint instances.
    let mut per_site: BTreeMap<String, BTreeMap<String, BTreeSet<String>>> = BTreeMap::new();
    for bp in &fx.slices {
        let Some(slice) = dep.orch.slice(dep.id(&bp.id)) else {
            continue;
        };
        for inst in &slice.instances {
            if let Some(vi) = dep.orch.emulator().instance(inst) {
                let site = dep
                    .orch
                    .inventory()
                    .node(&vi.node)
                    .map(|n| n.site.clone())
                    .unwrap_or_default();
                per_site
                    .entry(site)
                    .or_default()
                    .entry(bp.id.clone())
                    .or_default()
                    .insert(inst.clone());
            }
        }
    }
    let shared_sites = per_site.values().filter(|m| m.len() > 1).count();
    let disjoint = per_site.values().all(|m| {
        let total: usize = m.values().map(BTreeSet::len).sum();
        let union: BTreeSet<&String> = m.values().flatten().collect();
        union.len() == total
    });
    report.metric("shared_sites", shared_sites as f64);
    report.check(
        "shared_plant_isolated",
        disjoint && shared_sites > 0,
        format!("{shared_sites} sites host several slices"),
    );
    let v = dep.orch.validate();
    report.check("invariants_hold", v.is_ok(), format!("{v:?}"));
    Ok(report)
}

/// An equipment vendor gathers robot health data from two manufacturers'
/// plants and merges it.
fn maintenance(fx: &Fixture) -> Result<ScenarioReport> {
    let mut report = ScenarioReport::new("maintenance");
    let mut dep = deploy(fx, &mut report)?;

    let importers: BTreeSet<&String> = fx.federations.iter().map(|f| &f.importer).collect();
    let Some(importer) = importers.first().map(|s| s.to_string()) else {
        return Err(Error::Validation(crate::error::ValidationError::general(
            "maintenance fixture declares no federation",
        )));
    };
    let importer_id = dep.id(&importer).to_string();

    let mut emitted: BTreeMap<String, Vec<DataRecord>> = BTreeMap::new();
    let mut live = 0u32;
    for e in &fx.emissions {
        let Some(link) = dep.links.get(&(e.slice.clone(), importer.clone())).cloned() else {
            continue;
        };
        for rec in records(&dep, e) {
            live += dep.orch.publish(&rec, &importer_id).len() as u32;
            emitted.entry(link.clone()).or_default().push(rec);
        }
    }
    let inputs: Vec<(String, Vec<DataRecord>)> = emitted.into_iter().collect();
    let merged = dep.orch.merge_federated(&inputs)?;
    let sites: BTreeSet<&str> = merged.iter().map(|m| m.exporter_site.as_str()).collect();
    let ordered = merged.windows(2).all(|w| {
        (w[0].record.timestamp, &w[0].exporter_site, w[0].record.seq)
            <= (w[1].record.timestamp, &w[1].exporter_site, w[1].record.seq)
    });
    report.metric(
        "records_emitted",
        inputs.iter().map(|(_, r)| r.len() as f64).sum::<f64>(),
    );
    report.metric("records_merged", merged.len() as f64);
    report.metric("records_delivered_live", live);
    report.metric("exporter_sites", sites.len() as f64);
    report.check(
        "merged_is_union_of_permitted",
        merged.len() as u32 == live && sites.len() == 2,
        format!(
            "{} merged, {live} delivered live, sites {sites:?}",
            merged.len()
        ),
    );
    report.check(
        "merge_ordered",
        ordered,
        "ordered by (timestamp, site, seq)".to_string(),
    );
    let local_only = merged
        .iter()
        .filter(|m| {
            dep.orch
                .slice(&m.record.slice)
                .and_then(|s| s.blueprint.stream(&m.record.stream))
                .is_some_and(|s| s.sensitivity == Sensitivity::LocalOnly)
        })
        .count();
    report.check(
        "local_only_withheld",
        local_only == 0,
        format!("{local_only} LOCAL_ONLY records merged"),
    );

    // The vendor maintains the robots it was granted and nothing else.
    for g in &fx.delegations {
        for eq in &g.equipment {
            let target = Target::Equipment(eq.clone());
            let may_maintain = dep.orch.authorize(&g.grantee, Action::Maintain, &target);
            let may_reconfigure = g.actions.contains(&Action::Reconfigure)
                || !dep.orch.authorize(&g.grantee, Action::Reconfigure, &target);
            report.check(
                &format!("{}_maintains_{eq}", g.grantee),
                may_maintain && may_reconfigure,
                format!("MAINTAIN={may_maintain}, rights limited to grant={may_reconfigure}"),
            );
        }
    }
    let v = dep.orch.validate();
    report.check("invariants_hold", v.is_ok(), format!("{v:?}"));
    Ok(report)
}

/// A designer rents factory capacity: admit, grow by one function through
/// a delegated operator, terminate, and get every resource back.
fn sfaas(fx: &Fixture) -> Result<ScenarioReport> {
    let mut report = ScenarioReport::new("sfaas");
    let Some(rc) = fx.reconfigure.clone() else {
        return Err(Error::Validation(crate::error::ValidationError::general(
            "sfaas fixture declares no reconfiguration",
        )));
    };
    let initial =
        Orchestrator::new(fx.inventory.clone(), OrchestratorConfig::default())?.resource_snapshot();
    let mut dep = deploy(fx, &mut report)?;
    let id = dep.id(&rc.slice).to_string();
    let before = dep
        .orch
        .slice(&id)
        .map(|s| (s.instances.len(), s.blueprint.vfs.len()));
    report.metric(
        "response_time_s",
        dep.orch
            .slice(&id)
            .and_then(|s| s.response_time_s)
            .unwrap_or(0.0),
    );

    let stranger = dep.orch.reconfigure(&rc.stranger, &id, rc.delta.clone());
    report.check(
        "stranger_refused",
        matches!(stranger, Err(Error::Unauthorized { .. })),
        format!("{stranger:?}")
            .chars()
            .take(160)
            .collect::<String>(),
    );
    let added = rc.delta.add_vfs.len() - rc.delta.remove_vfs.len().min(rc.delta.add_vfs.len());
    let outcome = dep
        .orch
        .reconfigure(&rc.actor, &id, rc.delta.clone())
        .map(|s| (s.state, s.instances.len(), s.blueprint.vfs.len()));
    let grown = match (&outcome, before) {
        (Ok((SliceState::Active, inst, vfs)), Some((inst0, vfs0))) => {
            *inst == inst0 + added && *vfs == vfs0 + added
        }
        _ => false,
    };
    report.check(
        "reconfigured_by_delegate",
        grown,
        format!("{outcome:?} from {before:?}"),
    );
    let mid = dep.orch.validate();
    report.check(
        "invariants_after_reconfigure",
        mid.is_ok(),
        format!("{mid:?}"),
    );

    let owner = fx
        .slices
        .iter()
        .find(|b| b.id == rc.slice)
        .map(|b| b.tenant.clone())
        .unwrap_or_default();
    for bp in &fx.slices {
        let sid = dep.id(&bp.id).to_string();
        let actor = if bp.id == rc.slice {
            owner.clone()
        } else {
            bp.tenant.clone()
        };
        dep.orch.terminate(&actor, &sid)?;
    }
    let fin = dep.orch.resource_snapshot();
    report.check(
        "resources_restored",
        fin == initial,
        if fin == initial {
            "final snapshot equals initial".to_string()
        } else {
            format!("initial {initial:?}, final {fin:?}")
        },
    );
    let v = dep.orch.validate();
    report.check("invariants_hold", v.is_ok(), format!("{v:?}"));
    Ok(report)
}
