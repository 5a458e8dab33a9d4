//! First-fit-decreasing placement of a blueprint onto residual capacity.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{Inventory, ResourceVector, SliceBlueprint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    InsufficientCapacity,
    LatencyUnsatisfiable,
    EquipmentExhausted,
    RadioExhausted,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RejectReason::InsufficientCapacity => "INSUFFICIENT_CAPACITY",
            RejectReason::LatencyUnsatisfiable => "LATENCY_UNSATISFIABLE",
            RejectReason::EquipmentExhausted => "EQUIPMENT_EXHAUSTED",
            RejectReason::RadioExhausted => "RADIO_EXHAUSTED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Infeasible {
    pub reason: RejectReason,
    pub detail: String,
}

impl Infeasible {
    fn new(reason: RejectReason, detail: impl Into<String>) -> Self {
        Self {
            reason,
            detail: detail.into(),
        }
    }
}

/// Bandwidth reserved on one WAN hop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub from_site: String,
    pub to_site: String,
    pub bandwidth_mbps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRoute {
    /// Index of the link in the blueprint's `vlinks`.
    pub link: usize,
    pub latency_ms: f64,
    pub hops: Vec<Hop>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub assignments: BTreeMap<String, String>,
    pub vcontroller_allocs: BTreeMap<String, String>,
    pub link_routes: Vec<LinkRoute>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeResidual {
    pub site: String,
    pub available: ResourceVector,
    pub free_slots: u32,
}

/// Residual capacity at planning time. Node vectors carry no radio; radio
/// is pooled per site. WAN keys are unordered site pairs stored sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResidualView {
    pub nodes: BTreeMap<String, NodeResidual>,
    pub site_radio: BTreeMap<String, ResourceVector>,
    pub wan: BTreeMap<(String, String), u64>,
}

impl ResidualView {
    /// Full capacity of `inventory`, nothing reserved.
    pub fn pristine(inventory: &Inventory) -> Self {
        let nodes = inventory
            .nodes
            .iter()
            .map(|n| {
                (
                    n.id.clone(),
                    NodeResidual {
                        site: n.site.clone(),
                        available: n.capacity.without_radio(),
                        free_slots: n.max_instances,
                    },
                )
            })
            .collect();
        let site_radio = inventory
            .sites
            .iter()
            .map(|s| {
                let rv = ResourceVector {
                    radio_units: s.radio_capacity.clone(),
                    ..Default::default()
                };
                (s.id.clone(), rv.normalized())
            })
            .collect();
        let mut wan = BTreeMap::new();
        for s in &inventory.sites {
            for l in &s.wan_links {
                let key = wan_key(&s.id, &l.peer);
                let e = wan.entry(key).or_insert(l.bandwidth_mbps);
                *e = (*e).min(l.bandwidth_mbps);
            }
        }
        Self {
            nodes,
            site_radio,
            wan,
        }
    }
}

pub fn wan_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Where a link endpoint lives once the VFs are assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Location<'a> {
    Node { node: &'a str, site: &'a str },
    Equipment { id: &'a str, site: &'a str },
}

impl Location<'_> {
    fn site(&self) -> &str {
        match self {
            Location::Node { site, .. } | Location::Equipment { site, .. } => site,
        }
    }
}

/// Latency between two endpoints and the WAN hop crossed, if any. `None`
/// when the sites share no direct WAN link.
pub(crate) fn path_between(
    inventory: &Inventory,
    a: &Location<'_>,
    b: &Location<'_>,
) -> Option<(f64, Option<(String, String)>)> {
    let same_point = match (a, b) {
        (Location::Node { node: x, .. }, Location::Node { node: y, .. }) => x == y,
        (Location::Equipment { id: x, .. }, Location::Equipment { id: y, .. }) => x == y,
        _ => false,
    };
    if same_point {
        return Some((0.0, None));
    }
    let (sa, sb) = (a.site(), b.site());
    let intra = |s: &str| {
        inventory
            .site(s)
            .map(|s| s.intra_site_latency_ms)
            .unwrap_or(0.0)
    };
    if sa == sb {
        return Some((intra(sa), None));
    }
    let wan = inventory.wan_link(sa, sb)?;
    Some((
        intra(sa) + wan.latency_ms + intra(sb),
        Some((sa.to_string(), sb.to_string())),
    ))
}

pub(crate) fn locate<'a>(
    inventory: &'a Inventory,
    assignments: &'a BTreeMap<String, String>,
    endpoint: &'a str,
) -> Option<Location<'a>> {
    if let Some(node) = assignments.get(endpoint) {
        let n = inventory.node(node)?;
        return Some(Location::Node {
            node: &n.id,
            site: &n.site,
        });
    }
    let e = inventory.equipment(endpoint)?;
    Some(Location::Equipment {
        id: &e.id,
        site: &e.site,
    })
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let p = self.0[x];
        if p == x {
            return x;
        }
        let r = self.find(p);
        self.0[x] = r;
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Places every VF of `blueprint`.
pub fn place(
    blueprint: &SliceBlueprint,
    inventory: &Inventory,
    view: &ResidualView,
) -> Result<PlacementPlan, Infeasible> {
    place_with_fixed(blueprint, inventory, view, &BTreeMap::new())
}

/// Places the VFs not listed in `fixed`; fixed VFs keep their node and are
/// assumed to be already accounted for in `view`. All links are routed.
///
/// 1. VFs joined by a link tighter than the smallest WAN latency form a
///    cluster that must share a site; affinity, equipment bindings and fixed
///    VFs pin their cluster's site.
/// 2. Clusters go in order of their largest member, members in order of
///    scalar demand (descending, then name).
/// 3. Nodes are ranked by residual scalar capacity (descending, then id).
///    A cluster takes the first site, in node-rank order, where all its
///    members first-fit.
/// 4. Each link is routed over its same-node, intra-site or direct WAN path
///    and checked for latency and WAN bandwidth.
pub fn place_with_fixed(
    blueprint: &SliceBlueprint,
    inventory: &Inventory,
    view: &ResidualView,
    fixed: &BTreeMap<String, String>,
) -> Result<PlacementPlan, Infeasible> {
    let vfs = &blueprint.vfs;
    let index: BTreeMap<&str, usize> = vfs
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.as_str(), i))
        .collect();
    let min_wan = inventory.min_wan_latency_ms();

    let mut sets = DisjointSet::new(vfs.len());
    for link in &blueprint.vlinks {
        if let (Some(&a), Some(&b)) = (
            index.get(link.endpoint_a.as_str()),
            index.get(link.endpoint_b.as_str()),
        ) {
            if link.max_latency_ms < min_wan {
                sets.union(a, b);
            }
        }
    }

    let mut pins: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    let mut pin = |sets: &mut DisjointSet, i: usize, site: &str| {
        pins.entry(sets.find(i))
            .or_default()
            .insert(site.to_string());
    };
    for (i, vf) in vfs.iter().enumerate() {
        if let Some(site) = &vf.site_affinity {
            pin(&mut sets, i, site);
        }
        if let Some(eq) = vf
            .equipment_binding
            .as_deref()
            .and_then(|e| inventory.equipment(e))
        {
            pin(&mut sets, i, &eq.site);
        }
        if let Some(node) = fixed.get(&vf.name).and_then(|n| inventory.node(n)) {
            pin(&mut sets, i, &node.site);
        }
    }
    for link in &blueprint.vlinks {
        if link.max_latency_ms >= min_wan {
            continue;
        }
        for (vf_end, other) in [
            (&link.endpoint_a, &link.endpoint_b),
            (&link.endpoint_b, &link.endpoint_a),
        ] {
            if let (Some(&i), Some(eq)) = (index.get(vf_end.as_str()), inventory.equipment(other)) {
                pin(&mut sets, i, &eq.site);
            }
        }
    }

    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..vfs.len() {
        clusters.entry(sets.find(i)).or_default().push(i);
    }
    let by_demand = |i: &usize| {
        (
            std::cmp::Reverse(vfs[*i].demand.scalar()),
            vfs[*i].name.clone(),
        )
    };
    let mut ordered: Vec<(Option<String>, Vec<usize>)> = Vec::new();
    for (root, mut members) in clusters {
        let site_pins = pins.remove(&root).unwrap_or_default();
        if site_pins.len() > 1 {
            return Err(Infeasible::new(
                RejectReason::LatencyUnsatisfiable,
                format!("VFs that must share a site are pinned to {site_pins:?}"),
            ));
        }
        members.sort_by_key(by_demand);
        ordered.push((site_pins.into_iter().next(), members));
    }
    ordered.sort_by_key(|(_, m)| by_demand(&m[0]));

    let mut node_order: Vec<(&String, &NodeResidual)> = view.nodes.iter().collect();
    node_order.sort_by_key(|(id, r)| (std::cmp::Reverse(r.available.scalar()), (*id).clone()));
    let mut site_order: Vec<&str> = Vec::new();
    for (_, r) in &node_order {
        if !site_order.contains(&r.site.as_str()) {
            site_order.push(&r.site);
        }
    }

    let mut work = view.clone();
    let mut assignments = fixed.clone();
    for (pinned, members) in &ordered {
        let todo: Vec<usize> = members
            .iter()
            .copied()
            .filter(|i| !fixed.contains_key(&vfs[*i].name))
            .collect();
        if todo.is_empty() {
            continue;
        }
        let candidates: Vec<&str> = match pinned {
            Some(site) => vec![site.as_str()],
            None => site_order.clone(),
        };
        let radio_demand: ResourceVector = todo
            .iter()
            .map(|i| &vfs[*i].demand)
            .sum::<ResourceVector>()
            .radio_only();
        let mut failure = RejectReason::InsufficientCapacity;
        let mut placed = false;
        for site in candidates {
            let site_radio = work.site_radio.get(site).cloned().unwrap_or_default();
            if !radio_demand.fits(&site_radio) {
                failure = RejectReason::RadioExhausted;
                continue;
            }
            let mut trial = work.nodes.clone();
            let mut chosen = Vec::new();
            for &i in &todo {
                let demand = vfs[i].demand.without_radio();
                let hit = node_order.iter().map(|(id, _)| *id).find(|id| {
                    let r = &trial[*id];
                    r.site == site && r.free_slots > 0 && demand.fits(&r.available)
                });
                match hit {
                    Some(id) => {
                        let r = trial.get_mut(id).expect("node from view");
                        r.available = r.available.saturating_sub(&demand);
                        r.free_slots -= 1;
                        chosen.push((i, id.clone()));
                    }
                    None => break,
                }
            }
            if chosen.len() == todo.len() {
                work.nodes = trial;
                work.site_radio
                    .insert(site.to_string(), site_radio.saturating_sub(&radio_demand));
                for (i, node) in chosen {
                    assignments.insert(vfs[i].name.clone(), node);
                }
                placed = true;
                break;
            }
            failure = RejectReason::InsufficientCapacity;
        }
        if !placed {
            let names: Vec<&str> = todo.iter().map(|i| vfs[*i].name.as_str()).collect();
            return Err(Infeasible::new(
                failure,
                format!("no site can host {names:?}"),
            ));
        }
    }

    let mut link_routes = Vec::with_capacity(blueprint.vlinks.len());
    for (li, link) in blueprint.vlinks.iter().enumerate() {
        let (a, b) = match (
            locate(inventory, &assignments, &link.endpoint_a),
            locate(inventory, &assignments, &link.endpoint_b),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Infeasible::new(
                    RejectReason::LatencyUnsatisfiable,
                    format!("vlinks[{li}] endpoint cannot be located"),
                ))
            }
        };
        let Some((latency_ms, crossing)) = path_between(inventory, &a, &b) else {
            return Err(Infeasible::new(
                RejectReason::LatencyUnsatisfiable,
                format!(
                    "vlinks[{li}]: no WAN link between {} and {}",
                    a.site(),
                    b.site()
                ),
            ));
        };
        if latency_ms > link.max_latency_ms {
            return Err(Infeasible::new(
                RejectReason::LatencyUnsatisfiable,
                format!(
                    "vlinks[{li}]: {latency_ms} ms exceeds {} ms",
                    link.max_latency_ms
                ),
            ));
        }
        let mut hops = Vec::new();
        if let Some((from_site, to_site)) = crossing {
            let left = work.wan.entry(wan_key(&from_site, &to_site)).or_insert(0);
            if *left < link.bandwidth_mbps {
                return Err(Infeasible::new(
                    RejectReason::InsufficientCapacity,
                    format!("vlinks[{li}]: WAN {from_site}-{to_site} has {left} Mbps left"),
                ));
            }
            *left -= link.bandwidth_mbps;
            hops.push(Hop {
                from_site,
                to_site,
                bandwidth_mbps: link.bandwidth_mbps,
            });
        }
        link_routes.push(LinkRoute {
            link: li,
            latency_ms,
            hops,
        });
    }

    Ok(PlacementPlan {
        assignments,
        vcontroller_allocs: BTreeMap::new(),
        link_routes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EdgeNode, Site, Tenant, TenantRole, VLinkSpec, VfSpec, WanLink};

    pub(crate) fn two_site_inventory(cpu: u64) -> Inventory {
        let site = |id: &str, peer: &str, node: &str| Site {
            id: id.into(),
            owner: "pm".into(),
            intra_site_latency_ms: 2.0,
            radio_capacity: BTreeMap::new(),
            nodes: vec![node.into()],
            wan_links: vec![WanLink {
                peer: peer.into(),
                latency_ms: 25.0,
                bandwidth_mbps: 1000,
            }],
            local_core: false,
        };
        let node = |id: &str, site: &str| EdgeNode {
            id: id.into(),
            site: site.into(),
            capacity: ResourceVector::cpu(cpu),
            max_instances: 80,
            running_instances: vec![],
        };
        Inventory {
            tenants: vec![Tenant {
                id: "pm".into(),
                role: TenantRole::ProductManufacturer,
            }],
            sites: vec![site("s1", "s2", "n1"), site("s2", "s1", "n2")],
            nodes: vec![node("n1", "s1"), node("n2", "s2")],
            equipment: vec![],
        }
    }

    #[test]
    fn empty_blueprint_gives_empty_plan() {
        let inv = two_site_inventory(1000);
        let plan = place(
            &SliceBlueprint::empty("bp", "pm"),
            &inv,
            &ResidualView::pristine(&inv),
        )
        .unwrap();
        assert_eq!(plan, PlacementPlan::default());
    }

    #[test]
    fn six_by_400_on_two_1000_nodes_infeasible() {
        let inv = two_site_inventory(1000);
        let mut bp = SliceBlueprint::empty("bp", "pm");
        for i in 0..6 {
            bp.vfs
                .push(VfSpec::new(format!("v{i}"), ResourceVector::cpu(400)));
        }
        let err = place(&bp, &inv, &ResidualView::pristine(&inv)).unwrap_err();
        assert_eq!(err.reason, RejectReason::InsufficientCapacity);
    }

    #[test]
    fn tight_link_keeps_endpoints_in_one_site() {
        let inv = two_site_inventory(1000);
        let mut bp = SliceBlueprint::empty("bp", "pm");
        bp.vfs.push(VfSpec::new("a", ResourceVector::cpu(600)));
        bp.vfs.push(VfSpec::new("b", ResourceVector::cpu(300)));
        bp.vlinks.push(VLinkSpec {
            endpoint_a: "a".into(),
            endpoint_b: "b".into(),
            bandwidth_mbps: 10,
            max_latency_ms: 10.0,
        });
        let plan = place(&bp, &inv, &ResidualView::pristine(&inv)).unwrap();
        let site_of = |vf: &str| inv.node(&plan.assignments[vf]).unwrap().site.clone();
        assert_eq!(site_of("a"), site_of("b"));
        assert!(plan.link_routes[0].latency_ms <= 10.0);
    }

    #[test]
    fn tight_link_without_room_in_any_site_is_rejected() {
        let inv = two_site_inventory(1000);
        let mut bp = SliceBlueprint::empty("bp", "pm");
        bp.vfs.push(VfSpec::new("a", ResourceVector::cpu(600)));
        bp.vfs.push(VfSpec::new("b", ResourceVector::cpu(600)));
        bp.vlinks.push(VLinkSpec {
            endpoint_a: "a".into(),
            endpoint_b: "b".into(),
            bandwidth_mbps: 10,
            max_latency_ms: 10.0,
        });
        assert!(place(&bp, &inv, &ResidualView::pristine(&inv)).is_err());
    }

    #[test]
    fn wan_bandwidth_is_reserved() {
        let inv = two_site_inventory(1000);
        let mut bp = SliceBlueprint::empty("bp", "pm");
        bp.vfs.push(VfSpec::new("a", ResourceVector::cpu(800)));
        bp.vfs.push(VfSpec::new("b", ResourceVector::cpu(800)));
        bp.vlinks.push(VLinkSpec {
            endpoint_a: "a".into(),
            endpoint_b: "b".into(),
            bandwidth_mbps: 400,
            max_latency_ms: 100.0,
        });
        let plan = place(&bp, &inv, &ResidualView::pristine(&inv)).unwrap();
        assert_eq!(plan.link_routes[0].hops.len(), 1);
        assert_eq!(plan.link_routes[0].latency_ms, 29.0);
        bp.vlinks[0].bandwidth_mbps = 1001;
        assert_eq!(
            place(&bp, &inv, &ResidualView::pristine(&inv))
                .unwrap_err()
                .reason,
            RejectReason::InsufficientCapacity
        );
    }
}
