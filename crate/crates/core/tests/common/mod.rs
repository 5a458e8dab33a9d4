#![allow(dead_code)]

use std::collections::BTreeMap;

use slicefab_core::model::{
    EdgeNode, Equipment, EquipmentKind, Inventory, Rat, ResourceVector, Site, SliceBlueprint,
    Tenant, TenantRole, VLinkSpec, VfSpec, WanLink,
};

/// `n` single-node sites in a full WAN mesh, owned by "pm", plus tenants
/// "po", "po2" and "ops". Node `k` is `n{k}` at site `s{k}`.
pub fn mesh(n: usize, cpu: u64) -> Inventory {
    let ids: Vec<String> = (0..n).map(|k| format!("s{k}")).collect();
    let sites = ids
        .iter()
        .enumerate()
        .map(|(k, id)| Site {
            id: id.clone(),
            owner: "pm".into(),
            intra_site_latency_ms: 1.0,
            radio_capacity: [(Rat::Urllc, 10)].into(),
            nodes: vec![format!("n{k}")],
            wan_links: ids
                .iter()
                .filter(|p| *p != id)
                .map(|p| WanLink {
                    peer: p.clone(),
                    latency_ms: 10.0,
                    bandwidth_mbps: 500,
                })
                .collect(),
            local_core: false,
        })
        .collect();
    let nodes = (0..n)
        .map(|k| EdgeNode {
            id: format!("n{k}"),
            site: format!("s{k}"),
            capacity: ResourceVector {
                cpu_millicores: cpu,
                memory_mb: 4096,
                storage_mb: 0,
                bandwidth_mbps: 1000,
                radio_units: BTreeMap::new(),
            },
            max_instances: 8,
            running_instances: vec![],
        })
        .collect();
    let tenant = |id: &str, role| Tenant {
        id: id.into(),
        role,
    };
    Inventory {
        tenants: vec![
            tenant("pm", TenantRole::ProductManufacturer),
            tenant("po", TenantRole::ProductOwner),
            tenant("po2", TenantRole::ProductOwner),
            tenant("ops", TenantRole::ExternalOperator),
        ],
        sites,
        nodes,
        equipment: vec![Equipment {
            id: "robot".into(),
            site: "s0".into(),
            kind: EquipmentKind::Robot,
            max_vcontrollers: 2,
            vcontrollers: vec![],
        }],
    }
}

pub fn vf(name: &str, cpu: u64) -> VfSpec {
    VfSpec::new(name, ResourceVector::cpu(cpu))
}

pub fn vf_at(name: &str, cpu: u64, site: &str) -> VfSpec {
    VfSpec {
        site_affinity: Some(site.into()),
        ..vf(name, cpu)
    }
}

pub fn link(a: &str, b: &str, max_latency_ms: f64) -> VLinkSpec {
    VLinkSpec {
        endpoint_a: a.into(),
        endpoint_b: b.into(),
        bandwidth_mbps: 10,
        max_latency_ms,
    }
}

pub fn blueprint(id: &str, tenant: &str, vfs: Vec<VfSpec>) -> SliceBlueprint {
    SliceBlueprint {
        vfs,
        ..SliceBlueprint::empty(id, tenant)
    }
}
