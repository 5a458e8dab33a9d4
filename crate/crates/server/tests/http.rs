use std::collections::BTreeMap;

use reqwest::StatusCode;
use serde_json::{json, Value};
use slicefab_core::bench::{fig6_inventory, BenchConfig};
use slicefab_core::orchestrator::{
    order_requests, Orchestrator, OrchestratorConfig, PendingRequest, Slice,
};
use slicefab_server::{serve_on, ServerConfig, ServiceHandle};
use tokio::net::TcpListener;

async fn start() -> ServiceHandle {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    serve_on(listener, ServerConfig::default()).await.unwrap()
}

fn blueprint(id: &str, tenant: &str, vfs: usize) -> Value {
    let vfs: Vec<Value> = (0..vfs)
        .map(|i| json!({"name": format!("vf{i}"), "kind": "VNF", "demand": {"cpu_millicores": 100, "memory_mb": 64}}))
        .collect();
    json!({"id": id, "tenant": tenant, "vfs": vfs})
}

struct Api {
    http: reqwest::Client,
    base: String,
}

impl Api {
    fn new(h: &ServiceHandle) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: h.url(),
        }
    }

    async fn call(
        &self,
        method: reqwest::Method,
        path: &str,
        tenant: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut rb = self.http.request(method, format!("{}{path}", self.base));
        if let Some(t) = tenant {
            rb = rb.header("x-tenant-id", t);
        }
        if let Some(b) = body {
            rb = rb.json(&b);
        }
        let resp = rb.send().await.unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        (
            status,
            serde_json::from_str(&text).unwrap_or(Value::String(text)),
        )
    }

    /// Polls until the slice has left the admission queue.
    async fn settled(&self, id: &str) -> Value {
        for _ in 0..500 {
            let (_, slice) = self
                .call(reqwest::Method::GET, &format!("/slices/{id}"), None, None)
                .await;
            if slice["state"] != "REQUESTED" {
                return slice;
            }
            tokio::time::sleep(std::time::Duration::from_millis(5)).await;
        }
        panic!("slice {id} never left REQUESTED");
    }

    async fn submit(&self, tenant: &str, bp: Value) -> String {
        let (status, body) = self
            .call(reqwest::Method::POST, "/slices", Some(tenant), Some(bp))
            .await;
        assert_eq!(status, StatusCode::ACCEPTED, "{body}");
        body["slice_id"].as_str().unwrap().to_string()
    }
}

#[tokio::test]
async fn post_slice_returns_202_with_id_and_request_id() {
    let h = start().await;
    let resp = reqwest::Client::new()
        .post(format!("{}/slices", h.url()))
        .header("x-tenant-id", "po")
        .header("x-request-id", "abc-123")
        .json(&blueprint("bp", "po", 2))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::ACCEPTED);
    assert_eq!(resp.headers()["x-request-id"], "abc-123");
    let body: Value = resp.json().await.unwrap();
    let id = body["slice_id"].as_str().unwrap();

    let resp = reqwest::get(format!("{}/slices/{id}", h.url()))
        .await
        .unwrap();
    assert!(resp.headers().contains_key("x-request-id"));
    let fresh: Slice = resp.json().await.unwrap();
    assert!(matches!(fresh.state.name(), "REQUESTED" | "ACTIVE"));
    let slice: Slice = serde_json::from_value(Api::new(&h).settled(id).await).unwrap();
    assert_eq!(slice.state.name(), "ACTIVE");
    assert_eq!(slice.plan.unwrap().assignments.len(), 2);
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn unknown_slice_is_404() {
    let h = start().await;
    let api = Api::new(&h);
    let (status, body) = api
        .call(reqwest::Method::GET, "/slices/unknown", None, None)
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["kind"], "not_found");
}

#[tokio::test]
async fn delete_by_non_owner_without_grant_is_403() {
    let h = start().await;
    let api = Api::new(&h);
    let id = api.submit("po", blueprint("bp", "po", 1)).await;
    let (status, _) = api
        .call(
            reqwest::Method::DELETE,
            &format!("/slices/{id}"),
            Some("pm"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, body) = api
        .call(
            reqwest::Method::DELETE,
            &format!("/slices/{id}"),
            Some("po"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["state"], "TERMINATED");
}

#[tokio::test]
async fn grant_lets_a_second_tenant_terminate() {
    let h = start().await;
    let api = Api::new(&h);
    let id = api.submit("po", blueprint("bp", "po", 1)).await;
    let grant = json!({"grantor": "po", "grantee": "pm", "scope": {"slices": [id]}, "actions": ["RECONFIGURE"], "expiry": 1000});
    let (status, _) = api
        .call(
            reqwest::Method::POST,
            "/delegations",
            Some("pm"),
            Some(grant.clone()),
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN, "grantor must be the caller");
    let (status, _) = api
        .call(
            reqwest::Method::POST,
            "/delegations",
            Some("po"),
            Some(grant),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, _) = api
        .call(
            reqwest::Method::DELETE,
            &format!("/slices/{id}"),
            Some("pm"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn missing_or_unknown_tenant_is_401() {
    let h = start().await;
    let api = Api::new(&h);
    let (status, _) = api
        .call(
            reqwest::Method::POST,
            "/slices",
            None,
            Some(blueprint("bp", "po", 1)),
        )
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = api
        .call(
            reqwest::Method::POST,
            "/slices",
            Some("mallory"),
            Some(blueprint("bp", "po", 1)),
        )
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = api
        .call(
            reqwest::Method::POST,
            "/slices",
            Some("pm"),
            Some(blueprint("bp", "po", 1)),
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn invalid_blueprint_is_400_with_pointer() {
    let h = start().await;
    let api = Api::new(&h);
    let mut bp = blueprint("bp", "po", 1);
    bp["vfs"][0]["demand"]["cpu_millicores"] = json!(-5);
    let (status, body) = api
        .call(reqwest::Method::POST, "/slices", Some("po"), Some(bp))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["path"], "/vfs/0/demand/cpu_millicores");
}

#[tokio::test]
async fn infeasible_reconfigure_is_409_and_state_unchanged() {
    let h = start().await;
    let api = Api::new(&h);
    let id = api.submit("po", blueprint("bp", "po", 1)).await;
    let huge = json!({"add_vfs": [{"name": "big", "kind": "VNF", "demand": {"cpu_millicores": 1_000_000}}]});
    let path = format!("/slices/{id}/reconfigure");
    let (status, _) = api
        .call(reqwest::Method::POST, &path, Some("po"), Some(huge))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, slice) = api
        .call(reqwest::Method::GET, &format!("/slices/{id}"), None, None)
        .await;
    assert_eq!(slice["state"], "ACTIVE");
    assert_eq!(slice["blueprint"]["vfs"].as_array().unwrap().len(), 1);

    let small =
        json!({"add_vfs": [{"name": "extra", "kind": "VNF", "demand": {"cpu_millicores": 100}}]});
    let (status, slice) = api
        .call(reqwest::Method::POST, &path, Some("po"), Some(small))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(slice["blueprint"]["vfs"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn federation_needs_both_consents() {
    let h = start().await;
    let api = Api::new(&h);
    let mut exp = blueprint("exp", "po", 1);
    exp["streams"] = json!([{"id": "temp", "producer": "vf0", "sensitivity": "CONFIDENTIAL"}]);
    let a = api.submit("po", exp).await;
    let b = api.submit("pm", blueprint("imp", "pm", 1)).await;
    let req = json!({"exporter": a, "importer": b, "rules": [{"direction": "OUTBOUND", "stream": "temp", "transform": {"kind": "PASS"}}]});
    let (status, link) = api
        .call(reqwest::Method::POST, "/federations", Some("po"), Some(req))
        .await;
    assert_eq!(status, StatusCode::CREATED, "{link}");
    let link_id = link["id"].as_str().unwrap().to_string();
    let consent = format!("/federations/{link_id}/consent");
    let (_, link) = api
        .call(reqwest::Method::POST, &consent, Some("po"), None)
        .await;
    assert_eq!(link["state"], "PROPOSED");
    let (status, link) = api
        .call(reqwest::Method::POST, &consent, Some("pm"), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(link["state"], "ACTIVE");
}

#[tokio::test]
async fn concurrent_posts_are_totally_ordered() {
    let h = start().await;
    let n = 24;
    let mut tasks = Vec::new();
    for i in 0..n {
        let url = h.url();
        tasks.push(tokio::spawn(async move {
            let resp = reqwest::Client::new()
                .post(format!("{url}/slices"))
                .header("x-tenant-id", "po")
                .json(&blueprint(&format!("bp{i}"), "po", 3))
                .send()
                .await
                .unwrap();
            assert_eq!(resp.status(), StatusCode::ACCEPTED);
            resp.json::<Value>().await.unwrap()["slice_id"]
                .as_str()
                .unwrap()
                .to_string()
        }));
    }
    let mut ids = Vec::new();
    for t in tasks {
        ids.push(t.await.unwrap());
    }
    let api = Api::new(&h);
    for id in &ids {
        api.settled(id).await;
    }
    let (_, slices) = api.call(reqwest::Method::GET, "/slices", None, None).await;
    let slices: Vec<Slice> = serde_json::from_value(slices).unwrap();
    assert_eq!(slices.len(), n);
    let pending: Vec<PendingRequest> = slices
        .iter()
        .map(|s| PendingRequest {
            id: s.id.clone(),
            arrival: s.arrival,
        })
        .collect();
    let expected: Vec<String> = order_requests(&pending).into_iter().map(|r| r.id).collect();

    let (_, log) = api.call(reqwest::Method::GET, "/events", None, None).await;
    let events: Vec<Value> = log
        .as_str()
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let requested = events.iter().filter(|e| e["to"] == "REQUESTED").count();
    assert_eq!(requested, n);
    let admitted: Vec<String> = events
        .iter()
        .filter(|e| e["to"] == "ADMITTED")
        .map(|e| e["id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(admitted, expected);
    ids.sort();
    let mut seen = expected.clone();
    seen.sort();
    assert_eq!(ids, seen);
}

#[tokio::test]
async fn service_matches_direct_calls() {
    let h = start().await;
    let api = Api::new(&h);
    let mut direct = Orchestrator::new(
        fig6_inventory(&BenchConfig::default()),
        OrchestratorConfig::default(),
    )
    .unwrap();
    let mut ids = BTreeMap::new();
    for (i, vfs) in [2usize, 5, 1].iter().enumerate() {
        let bp = blueprint(&format!("bp{i}"), "po", *vfs);
        let via_api = api.submit("po", bp.clone()).await;
        let arrival = direct.tick();
        let id = direct
            .submit(serde_json::from_value(bp).unwrap(), arrival)
            .unwrap();
        direct.process_pending();
        assert_eq!(via_api, id);
        ids.insert(i, id);
    }
    let (status, _) = api
        .call(
            reqwest::Method::DELETE,
            &format!("/slices/{}", ids[&1]),
            Some("po"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    direct.terminate("po", &ids[&1]).unwrap();

    let (_, snap) = api
        .call(reqwest::Method::GET, "/snapshot", None, None)
        .await;
    let direct_snap: Value = serde_json::from_str(&direct.export_snapshot()).unwrap();
    assert_eq!(snap, direct_snap);
}

#[tokio::test]
async fn bench_and_scenarios_over_http() {
    let h = start().await;
    let api = Api::new(&h);
    let (status, body) = api
        .call(
            reqwest::Method::POST,
            "/bench/fig6",
            None,
            Some(json!({"mode": "WITH_VF"})),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    let samples = body["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 8);
    assert!((samples[5]["response_time_s"].as_f64().unwrap() - 8.4).abs() < 1e-9);

    let (status, body) = api
        .call(
            reqwest::Method::POST,
            "/bench/fig6",
            None,
            Some(json!({"rounds": 20})),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["path"], "/rounds");

    let (status, body) = api
        .call(reqwest::Method::POST, "/scenarios/sfaas", None, None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["passed"], true);
    let (status, _) = api
        .call(reqwest::Method::POST, "/scenarios/nope", None, None)
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[test]
fn config_file_parses_and_rejects_unknown_keys() {
    let dir = std::env::temp_dir();
    let cfg = ServerConfig::from_toml(
        "listen = \"127.0.0.1:9000\"\n[orchestrator]\noversubscription = 1.5\n",
        &dir,
    )
    .unwrap();
    assert_eq!(cfg.listen.port(), 9000);
    assert_eq!(cfg.orchestrator.oversubscription, 1.5);
    assert!(ServerConfig::from_toml("bogus = 1\n", &dir).is_err());
    assert!(ServerConfig::from_toml("inventory = \"/nonexistent/inv.json\"\n", &dir).is_err());
}

#[tokio::test]
async fn bind_failure_is_a_startup_error() {
    let taken = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let cfg = ServerConfig {
        listen: taken.local_addr().unwrap(),
        ..ServerConfig::default()
    };
    assert!(slicefab_server::serve(cfg).await.is_err());
}

#[test]
fn shipped_config_loads() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../deploy/slicefabd.toml");
    let cfg = ServerConfig::load(&path).unwrap();
    assert_eq!(cfg.inventory.sites.len(), 5);
    assert!(cfg.inventory.tenant("cm-2").is_some());
    assert_eq!(cfg.orchestrator, OrchestratorConfig::default());
}
