//! Independent reference checks for placement, used by tests only.
//!
//! Nothing here calls into the placement module: latencies, WAN lookups and
//! capacity sums are recomputed from the raw inventory.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    EdgeNode, Equipment, EquipmentKind, Inventory, Rat, ResourceVector, Site, SliceBlueprint,
    Tenant, TenantRole, VLinkSpec, VfKind, VfSpec, WanLink,
};
use crate::orchestrator::{PlacementPlan, ResidualView};

fn site_of_endpoint<'a>(
    inv: &'a Inventory,
    assign: &BTreeMap<String, String>,
    ep: &str,
) -> Option<(&'a str, &'a str)> {
    if let Some(node) = assign.get(ep) {
        let n = inv.nodes.iter().find(|n| &n.id == node)?;
        return Some((n.id.as_str(), n.site.as_str()));
    }
    let e = inv.equipment.iter().find(|e| e.id == ep)?;
    Some((e.id.as_str(), e.site.as_str()))
}

fn direct_wan(inv: &Inventory, a: &str, b: &str) -> Option<(f64, u64)> {
    let site = inv.sites.iter().find(|s| s.id == a)?;
    site.wan_links
        .iter()
        .find(|l| l.peer == b)
        .map(|l| (l.latency_ms, l.bandwidth_mbps))
}

fn intra(inv: &Inventory, site: &str) -> f64 {
    inv.sites
        .iter()
        .find(|s| s.id == site)
        .map(|s| s.intra_site_latency_ms)
        .unwrap_or(0.0)
}

/// Latency of one link plus the unordered site pair it crosses.
fn link_cost(
    inv: &Inventory,
    assign: &BTreeMap<String, String>,
    link: &VLinkSpec,
) -> Result<(f64, Option<(String, String)>), String> {
    let a = site_of_endpoint(inv, assign, &link.endpoint_a)
        .ok_or(format!("{} unplaced", link.endpoint_a))?;
    let b = site_of_endpoint(inv, assign, &link.endpoint_b)
        .ok_or(format!("{} unplaced", link.endpoint_b))?;
    if a.0 == b.0 {
        return Ok((0.0, None));
    }
    if a.1 == b.1 {
        return Ok((intra(inv, a.1), None));
    }
    let (wan, _) = direct_wan(inv, a.1, b.1).ok_or(format!("no WAN link {}-{}", a.1, b.1))?;
    let pair = if a.1 < b.1 {
        (a.1.to_string(), b.1.to_string())
    } else {
        (b.1.to_string(), a.1.to_string())
    };
    Ok((intra(inv, a.1) + wan + intra(inv, b.1), Some(pair)))
}

/// Checks a complete VF-to-node assignment against every hard constraint.
pub fn check_assignment(
    bp: &SliceBlueprint,
    inv: &Inventory,
    view: &ResidualView,
    assign: &BTreeMap<String, String>,
) -> Result<(), String> {
    if assign.len() != bp.vfs.len() {
        return Err(format!(
            "{} assignments for {} VFs",
            assign.len(),
            bp.vfs.len()
        ));
    }
    let mut per_node: BTreeMap<&str, (u64, u64, u64, u64, u32)> = BTreeMap::new();
    let mut per_site_radio: BTreeMap<String, BTreeMap<Rat, u64>> = BTreeMap::new();
    for vf in &bp.vfs {
        let node = assign
            .get(&vf.name)
            .ok_or(format!("{} unassigned", vf.name))?;
        let n = inv
            .nodes
            .iter()
            .find(|n| &n.id == node)
            .ok_or(format!("unknown node {node}"))?;
        if let Some(site) = &vf.site_affinity {
            if &n.site != site {
                return Err(format!("{} wants site {site}, got {}", vf.name, n.site));
            }
        }
        if let Some(eq) = &vf.equipment_binding {
            let e = inv
                .equipment
                .iter()
                .find(|e| &e.id == eq)
                .ok_or(format!("unknown equipment {eq}"))?;
            if e.site != n.site {
                return Err(format!(
                    "{} bound to {eq} at {}, placed at {}",
                    vf.name, e.site, n.site
                ));
            }
        }
        let d = &vf.demand;
        let e = per_node.entry(node.as_str()).or_default();
        e.0 += d.cpu_millicores;
        e.1 += d.memory_mb;
        e.2 += d.storage_mb;
        e.3 += d.bandwidth_mbps;
        e.4 += 1;
        let radio = per_site_radio.entry(n.site.clone()).or_default();
        for (rat, units) in &d.radio_units {
            *radio.entry(*rat).or_default() += units;
        }
    }
    for (node, (cpu, mem, sto, bw, count)) in per_node {
        let r = view
            .nodes
            .get(node)
            .ok_or(format!("node {node} missing from view"))?;
        let a = &r.available;
        if cpu > a.cpu_millicores
            || mem > a.memory_mb
            || sto > a.storage_mb
            || bw > a.bandwidth_mbps
        {
            return Err(format!("node {node} over capacity"));
        }
        if count > r.free_slots {
            return Err(format!("node {node} over instance limit"));
        }
    }
    for (site, radio) in per_site_radio {
        let pool = view.site_radio.get(&site);
        for (rat, units) in radio {
            let have = pool.map(|p| p.radio(rat)).unwrap_or(0);
            if units > have {
                return Err(format!("site {site} radio {rat:?}: {units} > {have}"));
            }
        }
    }
    let mut wan_use: BTreeMap<(String, String), u64> = BTreeMap::new();
    for (i, link) in bp.vlinks.iter().enumerate() {
        let (lat, pair) = link_cost(inv, assign, link)?;
        if lat > link.max_latency_ms {
            return Err(format!(
                "vlinks[{i}] latency {lat} > {}",
                link.max_latency_ms
            ));
        }
        if let Some(p) = pair {
            *wan_use.entry(p).or_default() += link.bandwidth_mbps;
        }
    }
    for (pair, used) in wan_use {
        let have = view.wan.get(&pair).copied().unwrap_or(0);
        if used > have {
            return Err(format!("WAN {pair:?}: {used} > {have}"));
        }
    }
    Ok(())
}

/// Validates a plan, including the latencies and hops it reports.
pub fn validate_plan(
    bp: &SliceBlueprint,
    inv: &Inventory,
    view: &ResidualView,
    plan: &PlacementPlan,
) -> Result<(), String> {
    check_assignment(bp, inv, view, &plan.assignments)?;
    if plan.link_routes.len() != bp.vlinks.len() {
        return Err(format!(
            "{} routes for {} links",
            plan.link_routes.len(),
            bp.vlinks.len()
        ));
    }
    for route in &plan.link_routes {
        let link = bp
            .vlinks
            .get(route.link)
            .ok_or(format!("route for unknown link {}", route.link))?;
        let (lat, pair) = link_cost(inv, &plan.assignments, link)?;
        if (lat - route.latency_ms).abs() > 1e-9 {
            return Err(format!(
                "link {} reports {} ms, actual {lat}",
                route.link, route.latency_ms
            ));
        }
        let reported: u64 = route.hops.iter().map(|h| h.bandwidth_mbps).sum();
        let expected = if pair.is_some() {
            link.bandwidth_mbps
        } else {
            0
        };
        if reported != expected || route.hops.len() != usize::from(pair.is_some()) {
            return Err(format!(
                "link {} reserves {reported} Mbps, expected {expected}",
                route.link
            ));
        }
    }
    Ok(())
}

/// Brute force: is there any assignment satisfying every constraint?
pub fn exhaustive_feasible(bp: &SliceBlueprint, inv: &Inventory, view: &ResidualView) -> bool {
    let nodes: Vec<&String> = view.nodes.keys().collect();
    let mut assign = BTreeMap::new();
    dfs(bp, inv, view, &nodes, 0, &mut assign)
}

fn dfs(
    bp: &SliceBlueprint,
    inv: &Inventory,
    view: &ResidualView,
    nodes: &[&String],
    i: usize,
    assign: &mut BTreeMap<String, String>,
) -> bool {
    if i == bp.vfs.len() {
        return check_assignment(bp, inv, view, assign).is_ok();
    }
    let vf = &bp.vfs[i];
    for node in nodes {
        let site = &view.nodes[*node].site;
        if vf.site_affinity.as_ref().is_some_and(|s| s != site) {
            continue;
        }
        // Node capacity pruning on the partial assignment.
        let mut used = vf.demand.without_radio();
        let mut count = 1;
        for other in &bp.vfs[..i] {
            if assign.get(&other.name) == Some(*node) {
                used = &used + &other.demand.without_radio();
                count += 1;
            }
        }
        let r = &view.nodes[*node];
        if !used.fits(&r.available) || count > r.free_slots {
            continue;
        }
        assign.insert(vf.name.clone(), (*node).clone());
        if dfs(bp, inv, view, nodes, i + 1, assign) {
            return true;
        }
        assign.remove(&vf.name);
    }
    false
}

/// A small random placement problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub inventory: Inventory,
    pub blueprint: SliceBlueprint,
    pub view: ResidualView,
}

/// Up to 3 sites, 4 nodes, 2 pieces of equipment and 6 VFs, with some
/// capacity already consumed.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_nodes = rng.random_range(1..=4usize);
    let n_sites = rng.random_range(1..=3usize).min(n_nodes);
    let site_ids: Vec<String> = (0..n_sites).map(|i| format!("s{i}")).collect();
    let mut sites: Vec<Site> = site_ids
        .iter()
        .map(|id| Site {
            id: id.clone(),
            owner: "pm".into(),
            intra_site_latency_ms: f64::from(rng.random_range(1..=6u32)) / 2.0,
            radio_capacity: if rng.random_bool(0.5) {
                [(Rat::Urllc, rng.random_range(0..=8))].into()
            } else {
                BTreeMap::new()
            },
            nodes: Vec::new(),
            wan_links: Vec::new(),
            local_core: false,
        })
        .collect();
    for a in 0..n_sites {
        for b in a + 1..n_sites {
            if rng.random_bool(0.75) {
                let latency_ms = f64::from(rng.random_range(5..=30u32));
                let bandwidth_mbps = rng.random_range(1..=10u64) * 50;
                sites[a].wan_links.push(WanLink {
                    peer: site_ids[b].clone(),
                    latency_ms,
                    bandwidth_mbps,
                });
                sites[b].wan_links.push(WanLink {
                    peer: site_ids[a].clone(),
                    latency_ms,
                    bandwidth_mbps,
                });
            }
        }
    }
    let mut nodes = Vec::new();
    for j in 0..n_nodes {
        let site = if j < n_sites {
            j
        } else {
            rng.random_range(0..n_sites)
        };
        let id = format!("n{j}");
        sites[site].nodes.push(id.clone());
        nodes.push(EdgeNode {
            id,
            site: site_ids[site].clone(),
            capacity: ResourceVector {
                cpu_millicores: rng.random_range(10..=40u64) * 100,
                memory_mb: rng.random_range(1..=16u64) * 512,
                storage_mb: 0,
                bandwidth_mbps: rng.random_range(1..=10u64) * 100,
                radio_units: BTreeMap::new(),
            },
            max_instances: rng.random_range(2..=5),
            running_instances: Vec::new(),
        });
    }
    let n_eq = rng.random_range(0..=2usize);
    let equipment: Vec<Equipment> = (0..n_eq)
        .map(|k| Equipment {
            id: format!("eq{k}"),
            site: site_ids[rng.random_range(0..n_sites)].clone(),
            kind: EquipmentKind::Robot,
            max_vcontrollers: 4,
            vcontrollers: Vec::new(),
        })
        .collect();
    let inventory = Inventory {
        tenants: vec![
            Tenant {
                id: "pm".into(),
                role: TenantRole::ProductManufacturer,
            },
            Tenant {
                id: "t".into(),
                role: TenantRole::ProductOwner,
            },
        ],
        sites,
        nodes,
        equipment,
    };

    let n_vfs = rng.random_range(1..=6usize);
    let mut bp = SliceBlueprint::empty(format!("rand-{seed}"), "t");
    for i in 0..n_vfs {
        let mut demand = ResourceVector {
            cpu_millicores: rng.random_range(1..=10u64) * 100,
            memory_mb: rng.random_range(0..=8u64) * 256,
            storage_mb: 0,
            bandwidth_mbps: rng.random_range(0..=10u64) * 10,
            radio_units: BTreeMap::new(),
        };
        if rng.random_bool(0.3) {
            demand = demand.with_radio(Rat::Urllc, rng.random_range(1..=3));
        }
        let site_affinity = rng
            .random_bool(0.15)
            .then(|| site_ids[rng.random_range(0..n_sites)].clone());
        let equipment_binding =
            (n_eq > 0 && rng.random_bool(0.15)).then(|| format!("eq{}", rng.random_range(0..n_eq)));
        bp.vfs.push(VfSpec {
            name: format!("v{i}"),
            kind: if rng.random_bool(0.5) {
                VfKind::Vnf
            } else {
                VfKind::Vaf
            },
            demand,
            site_affinity,
            equipment_binding,
            mode: Default::default(),
        });
    }
    let n_links = rng.random_range(0..=n_vfs + 1);
    let latencies = [1.0, 3.0, 8.0, 20.0, 40.0, 80.0];
    let bound: Vec<String> = bp.bound_equipment().into_iter().map(String::from).collect();
    for _ in 0..n_links {
        let a = rng.random_range(0..n_vfs);
        let endpoint_b = if !bound.is_empty() && rng.random_bool(0.2) {
            bound[rng.random_range(0..bound.len())].clone()
        } else {
            let b = rng.random_range(0..n_vfs);
            if b == a {
                continue;
            }
            format!("v{b}")
        };
        bp.vlinks.push(VLinkSpec {
            endpoint_a: format!("v{a}"),
            endpoint_b,
            bandwidth_mbps: rng.random_range(0..=10u64) * 20,
            max_latency_ms: latencies[rng.random_range(0..latencies.len())],
        });
    }

    let mut view = ResidualView::pristine(&inventory);
    for r in view.nodes.values_mut() {
        if rng.random_bool(0.3) {
            let frac = rng.random_range(0.2..0.8);
            r.available = r.available.scaled(frac);
            r.free_slots = r.free_slots.saturating_sub(rng.random_range(0..=1));
        }
    }
    Instance {
        inventory,
        blueprint: bp,
        view,
    }
}

/// Outcome of [`conservation_fuzz`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConservationReport {
    pub sequences: usize,
    pub operations: usize,
    pub admitted: usize,
    pub reconfigured: usize,
    pub terminated: usize,
    pub violations: Vec<String>,
}

fn fuzz_inventory(rng: &mut ChaCha8Rng) -> Inventory {
    let n_sites = rng.random_range(1..=3usize);
    let ids: Vec<String> = (0..n_sites).map(|i| format!("s{i}")).collect();
    let mut sites: Vec<Site> = ids
        .iter()
        .map(|id| Site {
            id: id.clone(),
            owner: "pm".into(),
            intra_site_latency_ms: 1.0,
            radio_capacity: [(Rat::Urllc, rng.random_range(0..=12))].into(),
            nodes: Vec::new(),
            wan_links: ids
                .iter()
                .filter(|p| *p != id)
                .map(|p| WanLink {
                    peer: p.clone(),
                    latency_ms: 12.0,
                    bandwidth_mbps: 300,
                })
                .collect(),
            local_core: false,
        })
        .collect();
    let mut nodes = Vec::new();
    for j in 0..rng.random_range(n_sites..=4) {
        let s = j % n_sites;
        let id = format!("n{j}");
        sites[s].nodes.push(id.clone());
        nodes.push(EdgeNode {
            id,
            site: ids[s].clone(),
            capacity: ResourceVector {
                cpu_millicores: rng.random_range(10..=40u64) * 100,
                memory_mb: rng.random_range(4..=16u64) * 512,
                storage_mb: 10_000,
                bandwidth_mbps: 1000,
                radio_units: BTreeMap::new(),
            },
            max_instances: rng.random_range(3..=8),
            running_instances: Vec::new(),
        });
    }
    Inventory {
        tenants: vec![
            Tenant {
                id: "pm".into(),
                role: TenantRole::ProductManufacturer,
            },
            Tenant {
                id: "t".into(),
                role: TenantRole::ProductOwner,
            },
        ],
        sites,
        nodes,
        equipment: vec![Equipment {
            id: "eq0".into(),
            site: ids[0].clone(),
            kind: EquipmentKind::Plc,
            max_vcontrollers: 2,
            vcontrollers: Vec::new(),
        }],
    }
}

fn fuzz_vf(rng: &mut ChaCha8Rng, name: String) -> VfSpec {
    let mut demand = ResourceVector {
        cpu_millicores: rng.random_range(1..=12u64) * 100,
        memory_mb: rng.random_range(0..=4u64) * 256,
        storage_mb: rng.random_range(0..=2u64) * 500,
        bandwidth_mbps: rng.random_range(0..=5u64) * 20,
        radio_units: BTreeMap::new(),
    };
    if rng.random_bool(0.2) {
        demand = demand.with_radio(Rat::Urllc, rng.random_range(1..=4));
    }
    VfSpec {
        name,
        kind: VfKind::Vnf,
        demand,
        site_affinity: None,
        equipment_binding: rng.random_bool(0.1).then(|| "eq0".to_string()),
        mode: Default::default(),
    }
}

/// Per-node sums over the emulator's instances, checked against raw capacity.
fn check_nodes(orch: &crate::orchestrator::Orchestrator) -> Result<(), String> {
    for n in &orch.inventory().nodes {
        let agent = orch
            .emulator()
            .agent(&n.id)
            .ok_or(format!("no agent for {}", n.id))?;
        let (mut cpu, mut mem, mut sto, mut bw) = (0u64, 0u64, 0u64, 0u64);
        for i in agent.instances.values() {
            cpu += i.demand.cpu_millicores;
            mem += i.demand.memory_mb;
            sto += i.demand.storage_mb;
            bw += i.demand.bandwidth_mbps;
        }
        let c = &n.capacity;
        if cpu > c.cpu_millicores
            || mem > c.memory_mb
            || sto > c.storage_mb
            || bw > c.bandwidth_mbps
        {
            return Err(format!("node {} over capacity", n.id));
        }
        if agent.instances.len() > n.max_instances as usize {
            return Err(format!("node {} over instance limit", n.id));
        }
    }
    let mut owners: BTreeMap<&str, &str> = BTreeMap::new();
    for vc in orch.vcontrollers() {
        if let Some(prev) = owners.insert(vc.id.as_str(), vc.slice.as_str()) {
            return Err(format!(
                "vcontroller {} shared by {prev} and {}",
                vc.id, vc.slice
            ));
        }
    }
    Ok(())
}

/// Random admit/reconfigure/terminate sequences. Every step is followed by
/// the orchestrator's own invariant check and an independent capacity sum;
/// every sequence ends by terminating all slices and comparing against the
/// initial snapshot.
pub fn conservation_fuzz(sequences: u64, seed: u64) -> ConservationReport {
    use crate::orchestrator::{Orchestrator, OrchestratorConfig, SliceDelta, SliceState};

    let mut report = ConservationReport {
        sequences: sequences as usize,
        ..Default::default()
    };
    for s in 0..sequences {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(s));
        let inv = fuzz_inventory(&mut rng);
        let mut orch = match Orchestrator::new(inv, OrchestratorConfig::default()) {
            Ok(o) => o,
            Err(e) => {
                report
                    .violations
                    .push(format!("seq {s}: inventory rejected: {e}"));
                continue;
            }
        };
        let initial = orch.resource_snapshot();
        let mut counter = 0;
        for _ in 0..rng.random_range(5..=15) {
            report.operations += 1;
            let live: Vec<String> = orch
                .slices()
                .filter(|x| x.state == SliceState::Active)
                .map(|x| x.id.clone())
                .collect();
            let op = rng.random_range(0..10);
            if op < 5 || live.is_empty() {
                let mut bp = SliceBlueprint::empty(format!("bp{counter}"), "t");
                for k in 0..rng.random_range(1..=4) {
                    bp.vfs.push(fuzz_vf(&mut rng, format!("v{k}")));
                }
                if bp.vfs.len() > 1 && rng.random_bool(0.5) {
                    bp.vlinks.push(VLinkSpec {
                        endpoint_a: "v0".into(),
                        endpoint_b: "v1".into(),
                        bandwidth_mbps: rng.random_range(0..=5u64) * 40,
                        max_latency_ms: [5.0, 50.0][rng.random_range(0..2)],
                    });
                }
                counter += 1;
                let t = orch.tick();
                if orch.submit(bp, t).is_ok() {
                    for out in orch.process_pending() {
                        if matches!(out, crate::orchestrator::AdmissionOutcome::Admitted { .. }) {
                            report.admitted += 1;
                        }
                    }
                }
            } else if op < 8 {
                let id = &live[rng.random_range(0..live.len())];
                let vfs: Vec<String> = orch
                    .slice(id)
                    .map(|x| x.blueprint.vfs.iter().map(|v| v.name.clone()).collect())
                    .unwrap_or_default();
                let mut delta = SliceDelta::default();
                if rng.random_bool(0.5) && !vfs.is_empty() {
                    delta
                        .remove_vfs
                        .push(vfs[rng.random_range(0..vfs.len())].clone());
                }
                if rng.random_bool(0.7) {
                    counter += 1;
                    delta
                        .add_vfs
                        .push(fuzz_vf(&mut rng, format!("add{counter}")));
                }
                let before = orch.slice(id).cloned();
                let snap = orch.resource_snapshot();
                match orch.reconfigure("t", id, delta) {
                    Ok(_) => report.reconfigured += 1,
                    Err(_) => {
                        if orch.slice(id).cloned() != before || orch.resource_snapshot() != snap {
                            report
                                .violations
                                .push(format!("seq {s}: failed reconfigure changed state of {id}"));
                        }
                    }
                }
            } else {
                let id = &live[rng.random_range(0..live.len())];
                match orch.terminate("t", id) {
                    Ok(_) => report.terminated += 1,
                    Err(e) => report
                        .violations
                        .push(format!("seq {s}: terminate {id}: {e}")),
                }
            }
            if let Err(e) = orch.validate() {
                report.violations.push(format!("seq {s}: {e}"));
            }
            if let Err(e) = check_nodes(&orch) {
                report.violations.push(format!("seq {s}: {e}"));
            }
        }
        let live: Vec<String> = orch
            .slices()
            .filter(|x| x.state == SliceState::Active)
            .map(|x| x.id.clone())
            .collect();
        for id in live {
            if let Err(e) = orch.terminate("t", &id) {
                report
                    .violations
                    .push(format!("seq {s}: final terminate {id}: {e}"));
            }
        }
        if orch.resource_snapshot() != initial {
            report
                .violations
                .push(format!("seq {s}: final snapshot differs from initial"));
        }
    }
    report
}

/// Outcome of [`isolation_fuzz`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IsolationReport {
    pub records: usize,
    pub delivered: usize,
    pub unauthorized: usize,
    pub local_only_exported: usize,
}

/// Random records between random slices over a random mesh of federation
/// links in every state. A delivery counts as unauthorized unless an ACTIVE
/// link from the source to the target carries a rule for the stream.
pub fn isolation_fuzz(records: usize, seed: u64) -> IsolationReport {
    use crate::federation::{
        AggregateFn, DataRecord, Direction, FieldValue, LinkState, SfiRule, Transform,
    };
    use crate::model::{Sensitivity, StreamSpec};
    use crate::orchestrator::{Orchestrator, OrchestratorConfig, SliceState};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inv = fuzz_inventory(&mut rng);
    for n in inv.nodes.iter_mut() {
        n.capacity.cpu_millicores = 100_000;
        n.capacity.memory_mb = 100_000;
        n.max_instances = 80;
    }
    let tenants = ["ta", "tb", "tc"];
    for t in tenants {
        inv.tenants.push(Tenant {
            id: t.into(),
            role: TenantRole::ProductOwner,
        });
    }
    let mut orch =
        Orchestrator::new(inv, OrchestratorConfig::default()).expect("fuzz inventory is valid");
    let labels = [
        Sensitivity::Public,
        Sensitivity::Confidential,
        Sensitivity::LocalOnly,
    ];
    let streams = ["s0", "s1", "s2"];
    let mut slices = Vec::new();
    for i in 0..8 {
        let tenant = tenants[i % tenants.len()];
        let mut bp = SliceBlueprint::empty(format!("bp{i}"), tenant);
        bp.vfs.push(VfSpec::new("src", ResourceVector::cpu(10)));
        for st in streams {
            bp.streams.push(StreamSpec {
                id: st.into(),
                producer: "src".into(),
                sensitivity: labels[rng.random_range(0..labels.len())],
            });
        }
        let t = orch.tick();
        let id = orch.submit(bp, t).expect("valid blueprint");
        orch.process_pending();
        slices.push((id, tenant));
    }
    for _ in 0..20 {
        let a = rng.random_range(0..slices.len());
        let b = rng.random_range(0..slices.len());
        if a == b {
            continue;
        }
        let mut rules = Vec::new();
        for st in streams {
            if rng.random_bool(0.5) {
                let transform = match rng.random_range(0..3) {
                    0 => Transform::Pass,
                    1 => Transform::Redact {
                        fields: vec!["secret".into()],
                    },
                    _ => Transform::Aggregate {
                        window: rng.random_range(1..=3),
                        function: AggregateFn::Max,
                    },
                };
                let direction = if rng.random_bool(0.5) {
                    Direction::Outbound
                } else {
                    Direction::Inbound
                };
                rules.push(SfiRule {
                    direction,
                    stream: st.into(),
                    transform,
                });
            }
        }
        let (exp, exp_t) = &slices[a];
        let (imp, imp_t) = &slices[b];
        let Ok(link) = orch.create_federation(exp_t, exp, imp, rules, false) else {
            continue;
        };
        match rng.random_range(0..4) {
            0 => {}
            1 => {
                let _ = orch.consent(exp_t, &link.id);
            }
            _ => {
                let _ = orch.consent(exp_t, &link.id);
                let _ = orch.consent(imp_t, &link.id);
            }
        }
    }
    // Terminating a slice closes its links.
    let (victim, victim_t) = slices[rng.random_range(0..slices.len())].clone();
    let _ = orch.terminate(victim_t, &victim);

    let mut report = IsolationReport {
        records,
        ..Default::default()
    };
    let mut seq: BTreeMap<(String, String), u64> = BTreeMap::new();
    let stream_ids = ["s0", "s1", "s2", "undeclared"];
    for n in 0..records {
        let (src, _) = &slices[rng.random_range(0..slices.len())];
        let (dst, _) = &slices[rng.random_range(0..slices.len())];
        let stream = stream_ids[rng.random_range(0..stream_ids.len())];
        let counter = seq.entry((src.clone(), stream.to_string())).or_insert(0);
        // Occasional replays exercise the ordering check.
        if !rng.random_bool(0.05) {
            *counter += 1;
        }
        let record = DataRecord {
            stream: stream.into(),
            slice: src.clone(),
            timestamp: n as u64,
            seq: *counter,
            fields: [
                (
                    "value".to_string(),
                    FieldValue::Number(rng.random_range(0.0..100.0)),
                ),
                ("secret".to_string(), FieldValue::Text("s3cr3t".into())),
            ]
            .into(),
            sensitivity: labels[rng.random_range(0..labels.len())],
        };
        let declared = orch
            .slice(src)
            .and_then(|s| s.blueprint.stream(stream))
            .map(|s| s.sensitivity);
        let delivered = orch.publish(&record, dst);
        report.delivered += delivered.len();
        if delivered.is_empty() {
            continue;
        }
        let authorized = orch.federations().links().any(|l| {
            l.state == LinkState::Active
                && l.exporter == *src
                && l.importer == *dst
                && l.rules.iter().any(|r| r.stream == stream)
        }) && orch
            .slice(src)
            .is_some_and(|s| s.state == SliceState::Active);
        if !authorized {
            report.unauthorized += delivered.len();
        }
        if record.sensitivity == Sensitivity::LocalOnly || declared == Some(Sensitivity::LocalOnly)
        {
            report.local_only_exported += delivered.len();
        }
    }
    report
}
