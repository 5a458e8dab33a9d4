//! Domain types and resource arithmetic shared by the rest of the crate.
//!
//! Every file-facing type serializes with snake_case field names that match
//! the blueprint and inventory JSON schemas documented in the README.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{FieldPath, UnderflowError, ValidationError};
use crate::federation::{self, SfiRule};

/// Radio access technology with its own pool of resource units per site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rat {
    NbIot,
    Urllc,
    Embb,
}

impl Rat {
    pub const ALL: [Rat; 3] = [Rat::NbIot, Rat::Urllc, Rat::Embb];
}

/// Multi-dimensional capacity or demand. Missing radio keys count as zero.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceVector {
    #[serde(default)]
    pub cpu_millicores: u64,
    #[serde(default)]
    pub memory_mb: u64,
    #[serde(default)]
    pub storage_mb: u64,
    #[serde(default)]
    pub bandwidth_mbps: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub radio_units: BTreeMap<Rat, u64>,
}

impl PartialEq for ResourceVector {
    fn eq(&self, other: &Self) -> bool {
        self.cpu_millicores == other.cpu_millicores
            && self.memory_mb == other.memory_mb
            && self.storage_mb == other.storage_mb
            && self.bandwidth_mbps == other.bandwidth_mbps
            && Rat::ALL.iter().all(|r| self.radio(*r) == other.radio(*r))
    }
}

impl Eq for ResourceVector {}

impl ResourceVector {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn cpu(cpu_millicores: u64) -> Self {
        Self {
            cpu_millicores,
            ..Self::default()
        }
    }

    pub fn with_radio(mut self, rat: Rat, units: u64) -> Self {
        self.radio_units.insert(rat, units);
        self.normalized()
    }

    pub fn radio(&self, rat: Rat) -> u64 {
        self.radio_units.get(&rat).copied().unwrap_or(0)
    }

    /// Drops zero-valued radio entries so equal vectors serialize identically.
    pub fn normalized(mut self) -> Self {
        self.radio_units.retain(|_, v| *v > 0);
        self
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::zero()
    }

    /// The node-level part of the vector; radio is pooled per site.
    pub fn without_radio(&self) -> Self {
        Self {
            radio_units: BTreeMap::new(),
            ..self.clone()
        }
    }

    pub fn radio_only(&self) -> Self {
        Self {
            radio_units: self.radio_units.clone(),
            ..Self::default()
        }
        .normalized()
    }

    /// True iff `self` fits into `available` in every component, radio included.
    pub fn fits(&self, available: &ResourceVector) -> bool {
        self.cpu_millicores <= available.cpu_millicores
            && self.memory_mb <= available.memory_mb
            && self.storage_mb <= available.storage_mb
            && self.bandwidth_mbps <= available.bandwidth_mbps
            && self
                .radio_units
                .iter()
                .all(|(rat, units)| *units <= available.radio(*rat))
    }

    pub fn checked_sub(&self, other: &ResourceVector) -> Result<ResourceVector, UnderflowError> {
        fn sub(component: &str, have: u64, take: u64) -> Result<u64, UnderflowError> {
            have.checked_sub(take).ok_or_else(|| UnderflowError {
                component: component.to_string(),
                have,
                take,
            })
        }
        let mut radio_units = BTreeMap::new();
        for rat in Rat::ALL {
            let v = sub(
                &format!("radio_units.{rat:?}"),
                self.radio(rat),
                other.radio(rat),
            )?;
            if v > 0 {
                radio_units.insert(rat, v);
            }
        }
        Ok(ResourceVector {
            cpu_millicores: sub("cpu_millicores", self.cpu_millicores, other.cpu_millicores)?,
            memory_mb: sub("memory_mb", self.memory_mb, other.memory_mb)?,
            storage_mb: sub("storage_mb", self.storage_mb, other.storage_mb)?,
            bandwidth_mbps: sub("bandwidth_mbps", self.bandwidth_mbps, other.bandwidth_mbps)?,
            radio_units,
        })
    }

    /// Componentwise difference clamped at zero.
    pub fn saturating_sub(&self, other: &ResourceVector) -> ResourceVector {
        let mut radio_units = BTreeMap::new();
        for rat in Rat::ALL {
            let v = self.radio(rat).saturating_sub(other.radio(rat));
            if v > 0 {
                radio_units.insert(rat, v);
            }
        }
        ResourceVector {
            cpu_millicores: self.cpu_millicores.saturating_sub(other.cpu_millicores),
            memory_mb: self.memory_mb.saturating_sub(other.memory_mb),
            storage_mb: self.storage_mb.saturating_sub(other.storage_mb),
            bandwidth_mbps: self.bandwidth_mbps.saturating_sub(other.bandwidth_mbps),
            radio_units,
        }
    }

    /// Scale the non-radio components by `factor`, rounding down.
    pub fn scaled(&self, factor: f64) -> ResourceVector {
        let s = |v: u64| (v as f64 * factor).floor() as u64;
        ResourceVector {
            cpu_millicores: s(self.cpu_millicores),
            memory_mb: s(self.memory_mb),
            storage_mb: s(self.storage_mb),
            bandwidth_mbps: s(self.bandwidth_mbps),
            radio_units: self.radio_units.clone(),
        }
    }

    /// Scalar size used for heuristic ordering: cpu + memory/4 + bandwidth.
    pub fn scalar(&self) -> u64 {
        self.cpu_millicores + self.memory_mb / 4 + self.bandwidth_mbps
    }
}

impl Add for &ResourceVector {
    type Output = ResourceVector;

    fn add(self, rhs: &ResourceVector) -> ResourceVector {
        let mut radio_units = self.radio_units.clone();
        for (rat, units) in &rhs.radio_units {
            *radio_units.entry(*rat).or_insert(0) += units;
        }
        ResourceVector {
            cpu_millicores: self.cpu_millicores + rhs.cpu_millicores,
            memory_mb: self.memory_mb + rhs.memory_mb,
            storage_mb: self.storage_mb + rhs.storage_mb,
            bandwidth_mbps: self.bandwidth_mbps + rhs.bandwidth_mbps,
            radio_units,
        }
        .normalized()
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;

    fn add(self, rhs: ResourceVector) -> ResourceVector {
        &self + &rhs
    }
}

impl<'a> std::iter::Sum<&'a ResourceVector> for ResourceVector {
    fn sum<I: Iterator<Item = &'a ResourceVector>>(iter: I) -> Self {
        iter.fold(ResourceVector::zero(), |acc, v| &acc + v)
    }
}

pub fn rv_fits(demand: &ResourceVector, available: &ResourceVector) -> bool {
    demand.fits(available)
}

pub fn rv_add(a: &ResourceVector, b: &ResourceVector) -> ResourceVector {
    a + b
}

pub fn rv_sub(a: &ResourceVector, b: &ResourceVector) -> Result<ResourceVector, UnderflowError> {
    a.checked_sub(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TenantRole {
    ProductOwner,
    ProductManufacturer,
    EquipmentVendor,
    ExternalOperator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tenant {
    pub id: String,
    pub role: TenantRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WanLink {
    pub peer: String,
    pub latency_ms: f64,
    pub bandwidth_mbps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub owner: String,
    pub intra_site_latency_ms: f64,
    #[serde(default)]
    pub radio_capacity: BTreeMap<Rat, u64>,
    #[serde(default)]
    pub nodes: Vec<String>,
    #[serde(default)]
    pub wan_links: Vec<WanLink>,
    #[serde(default)]
    pub local_core: bool,
}

pub const DEFAULT_MAX_INSTANCES: u32 = 80;

fn default_max_instances() -> u32 {
    DEFAULT_MAX_INSTANCES
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeNode {
    pub id: String,
    pub site: String,
    pub capacity: ResourceVector,
    #[serde(default = "default_max_instances")]
    pub max_instances: u32,
    #[serde(default)]
    pub running_instances: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EquipmentKind {
    Robot,
    Sensor,
    Actuator,
    Plc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Equipment {
    pub id: String,
    pub site: String,
    pub kind: EquipmentKind,
    pub max_vcontrollers: u32,
    #[serde(default)]
    pub vcontrollers: Vec<String>,
}

/// A virtualized controller slot on a piece of equipment, bound to one slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VController {
    pub id: String,
    pub equipment: String,
    pub slice: String,
    pub owner: String,
    pub config_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VfKind {
    Vnf,
    Vaf,
}

/// Whether a spawned instance runs its function or is an empty container.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InstanceMode {
    Empty,
    #[default]
    WithVf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VfSpec {
    pub name: String,
    pub kind: VfKind,
    #[serde(default)]
    pub demand: ResourceVector,
    #[serde(default)]
    pub site_affinity: Option<String>,
    #[serde(default)]
    pub equipment_binding: Option<String>,
    #[serde(default)]
    pub mode: InstanceMode,
}

impl VfSpec {
    pub fn new(name: impl Into<String>, demand: ResourceVector) -> Self {
        Self {
            name: name.into(),
            kind: VfKind::Vnf,
            demand,
            site_affinity: None,
            equipment_binding: None,
            mode: InstanceMode::WithVf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VLinkSpec {
    pub endpoint_a: String,
    pub endpoint_b: String,
    #[serde(default)]
    pub bandwidth_mbps: u64,
    pub max_latency_ms: f64,
}

/// Sensitivity label, ordered from least to most restricted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Sensitivity {
    Public,
    Confidential,
    LocalOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub id: String,
    pub producer: String,
    pub sensitivity: Sensitivity,
}

/// A federation the blueprint's slice offers to export once it is active.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationOffer {
    pub importer: String,
    pub rules: Vec<SfiRule>,
    #[serde(default)]
    pub encrypted: bool,
}

/// A tenant's slice request: function graph, links, streams and equipment bindings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceBlueprint {
    pub id: String,
    pub tenant: String,
    #[serde(default)]
    pub vfs: Vec<VfSpec>,
    #[serde(default)]
    pub vlinks: Vec<VLinkSpec>,
    #[serde(default)]
    pub streams: Vec<StreamSpec>,
    #[serde(default)]
    pub federations: Vec<FederationOffer>,
}

impl SliceBlueprint {
    pub fn empty(id: impl Into<String>, tenant: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            tenant: tenant.into(),
            vfs: Vec::new(),
            vlinks: Vec::new(),
            streams: Vec::new(),
            federations: Vec::new(),
        }
    }

    pub fn vf(&self, name: &str) -> Option<&VfSpec> {
        self.vfs.iter().find(|v| v.name == name)
    }

    /// Equipment ids bound by at least one VF.
    pub fn bound_equipment(&self) -> BTreeSet<&str> {
        self.vfs
            .iter()
            .filter_map(|v| v.equipment_binding.as_deref())
            .collect()
    }

    pub fn stream(&self, id: &str) -> Option<&StreamSpec> {
        self.streams.iter().find(|s| s.id == id)
    }

    /// Canonical form: zero radio entries removed.
    pub fn canonicalized(mut self) -> Self {
        for vf in &mut self.vfs {
            vf.demand = std::mem::take(&mut vf.demand).normalized();
        }
        self
    }

    /// Structural validation. Link endpoints and stream producers must name a
    /// VF of this blueprint or an equipment id bound by one of its VFs.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let root = FieldPath::root();
        if self.id.is_empty() {
            return Err(ValidationError::new(root.field("id"), "must not be empty"));
        }
        if self.tenant.is_empty() {
            return Err(ValidationError::new(
                root.field("tenant"),
                "must not be empty",
            ));
        }
        let mut names = BTreeSet::new();
        for (i, vf) in self.vfs.iter().enumerate() {
            let at = root.field("vfs").index(i);
            if vf.name.is_empty() {
                return Err(ValidationError::new(at.field("name"), "must not be empty"));
            }
            if !names.insert(vf.name.as_str()) {
                return Err(ValidationError::new(
                    at.field("name"),
                    format!("duplicate VF name `{}`", vf.name),
                ));
            }
        }
        let equipment = self.bound_equipment();
        for name in &names {
            if equipment.contains(name) {
                return Err(ValidationError::new(
                    root.field("vfs"),
                    format!("VF name `{name}` collides with a bound equipment id"),
                ));
            }
        }
        let resolves = |e: &str| names.contains(e) || equipment.contains(e);
        for (i, link) in self.vlinks.iter().enumerate() {
            let at = root.field("vlinks").index(i);
            if !resolves(&link.endpoint_a) {
                return Err(ValidationError::new(
                    at.field("endpoint_a"),
                    format!("unknown endpoint `{}`", link.endpoint_a),
                ));
            }
            if !resolves(&link.endpoint_b) {
                return Err(ValidationError::new(
                    at.field("endpoint_b"),
                    format!("unknown endpoint `{}`", link.endpoint_b),
                ));
            }
            if !(link.max_latency_ms > 0.0 && link.max_latency_ms.is_finite()) {
                return Err(ValidationError::new(
                    at.field("max_latency_ms"),
                    "must be a positive finite number",
                ));
            }
        }
        let mut stream_ids = BTreeSet::new();
        for (i, stream) in self.streams.iter().enumerate() {
            let at = root.field("streams").index(i);
            if !stream_ids.insert(stream.id.as_str()) {
                return Err(ValidationError::new(
                    at.field("id"),
                    format!("duplicate stream id `{}`", stream.id),
                ));
            }
            if !resolves(&stream.producer) {
                return Err(ValidationError::new(
                    at.field("producer"),
                    format!("unknown producer `{}`", stream.producer),
                ));
            }
        }
        for (i, offer) in self.federations.iter().enumerate() {
            let at = root.field("federations").index(i);
            federation::validate_rules(&offer.rules, self, &at.field("rules"))?;
        }
        Ok(())
    }
}

/// Static description of the shared infrastructure.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inventory {
    #[serde(default)]
    pub tenants: Vec<Tenant>,
    #[serde(default)]
    pub sites: Vec<Site>,
    #[serde(default)]
    pub nodes: Vec<EdgeNode>,
    #[serde(default)]
    pub equipment: Vec<Equipment>,
}

impl Inventory {
    pub fn tenant(&self, id: &str) -> Option<&Tenant> {
        self.tenants.iter().find(|t| t.id == id)
    }

    pub fn site(&self, id: &str) -> Option<&Site> {
        self.sites.iter().find(|s| s.id == id)
    }

    pub fn node(&self, id: &str) -> Option<&EdgeNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn equipment(&self, id: &str) -> Option<&Equipment> {
        self.equipment.iter().find(|e| e.id == id)
    }

    /// Direct WAN link between two distinct sites, if any.
    pub fn wan_link(&self, a: &str, b: &str) -> Option<&WanLink> {
        self.site(a)?.wan_links.iter().find(|l| l.peer == b)
    }

    pub fn min_wan_latency_ms(&self) -> f64 {
        self.sites
            .iter()
            .flat_map(|s| s.wan_links.iter().map(|l| l.latency_ms))
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks every static invariant of the inventory.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let root = FieldPath::root();
        let mut tenant_ids = BTreeSet::new();
        for (i, t) in self.tenants.iter().enumerate() {
            if !tenant_ids.insert(t.id.as_str()) {
                return Err(ValidationError::new(
                    root.field("tenants").index(i).field("id"),
                    format!("duplicate tenant `{}`", t.id),
                ));
            }
        }
        let mut site_ids = BTreeSet::new();
        for (i, s) in self.sites.iter().enumerate() {
            let at = root.field("sites").index(i);
            if !site_ids.insert(s.id.as_str()) {
                return Err(ValidationError::new(at.field("id"), "duplicate site id"));
            }
            if !tenant_ids.contains(s.owner.as_str()) {
                return Err(ValidationError::new(
                    at.field("owner"),
                    format!("unknown tenant `{}`", s.owner),
                ));
            }
            if !(s.intra_site_latency_ms >= 0.0 && s.intra_site_latency_ms.is_finite()) {
                return Err(ValidationError::new(
                    at.field("intra_site_latency_ms"),
                    "must be a non-negative finite number",
                ));
            }
        }
        for (i, s) in self.sites.iter().enumerate() {
            let at = root.field("sites").index(i);
            for (j, link) in s.wan_links.iter().enumerate() {
                let lat = at.field("wan_links").index(j);
                if link.peer == s.id {
                    return Err(ValidationError::new(lat.field("peer"), "self-loop"));
                }
                if !(link.latency_ms >= 0.0 && link.latency_ms.is_finite()) {
                    return Err(ValidationError::new(
                        lat.field("latency_ms"),
                        "must be a non-negative finite number",
                    ));
                }
                match self.wan_link(&link.peer, &s.id) {
                    Some(back) if back.latency_ms == link.latency_ms => {}
                    Some(_) => {
                        return Err(ValidationError::new(
                            lat.field("latency_ms"),
                            "asymmetric WAN latency",
                        ))
                    }
                    None => {
                        return Err(ValidationError::new(
                            lat.field("peer"),
                            format!("peer `{}` does not list `{}`", link.peer, s.id),
                        ))
                    }
                }
            }
            for (j, node) in s.nodes.iter().enumerate() {
                match self.node(node) {
                    Some(n) if n.site == s.id => {}
                    _ => {
                        return Err(ValidationError::new(
                            at.field("nodes").index(j),
                            format!("node `{node}` is not located in this site"),
                        ))
                    }
                }
            }
        }
        let mut node_ids = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let at = root.field("nodes").index(i);
            if !node_ids.insert(n.id.as_str()) {
                return Err(ValidationError::new(at.field("id"), "duplicate node id"));
            }
            match self.site(&n.site) {
                Some(s) if s.nodes.contains(&n.id) => {}
                _ => {
                    return Err(ValidationError::new(
                        at.field("site"),
                        format!("site `{}` does not list this node", n.site),
                    ))
                }
            }
            if n.max_instances == 0 {
                return Err(ValidationError::new(
                    at.field("max_instances"),
                    "must be positive",
                ));
            }
            if n.running_instances.len() > n.max_instances as usize {
                return Err(ValidationError::new(
                    at.field("running_instances"),
                    "more running instances than max_instances",
                ));
            }
        }
        let mut eq_ids = BTreeSet::new();
        for (i, e) in self.equipment.iter().enumerate() {
            let at = root.field("equipment").index(i);
            if !eq_ids.insert(e.id.as_str()) || node_ids.contains(e.id.as_str()) {
                return Err(ValidationError::new(
                    at.field("id"),
                    "duplicate equipment id",
                ));
            }
            if self.site(&e.site).is_none() {
                return Err(ValidationError::new(
                    at.field("site"),
                    format!("unknown site `{}`", e.site),
                ));
            }
            if e.max_vcontrollers == 0 {
                return Err(ValidationError::new(
                    at.field("max_vcontrollers"),
                    "must be positive",
                ));
            }
            if e.vcontrollers.len() > e.max_vcontrollers as usize {
                return Err(ValidationError::new(
                    at.field("vcontrollers"),
                    "more vcontrollers than max_vcontrollers",
                ));
            }
        }
        Ok(())
    }

    /// Validation of a blueprint against this inventory, on top of the
    /// structural checks.
    pub fn validate_blueprint(&self, bp: &SliceBlueprint) -> Result<(), ValidationError> {
        bp.validate()?;
        let root = FieldPath::root();
        if self.tenant(&bp.tenant).is_none() {
            return Err(ValidationError::new(
                root.field("tenant"),
                format!("unknown tenant `{}`", bp.tenant),
            ));
        }
        for (i, vf) in bp.vfs.iter().enumerate() {
            let at = root.field("vfs").index(i);
            if let Some(site) = &vf.site_affinity {
                if self.site(site).is_none() {
                    return Err(ValidationError::new(
                        at.field("site_affinity"),
                        format!("unknown site `{site}`"),
                    ));
                }
            }
            if let Some(eq) = &vf.equipment_binding {
                if self.equipment(eq).is_none() {
                    return Err(ValidationError::new(
                        at.field("equipment_binding"),
                        format!("unknown equipment `{eq}`"),
                    ));
                }
            }
        }
        Ok(())
    }
}
