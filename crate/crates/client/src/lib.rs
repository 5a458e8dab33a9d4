//! Typed async client for the slicefab HTTP service.

use std::time::Duration;

use reqwest::{Method, RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use slicefab_core::api::{
    CreateFederationRequest, ErrorBody, Fig6Request, Fig6Response, GrantResponse, SubmitResponse,
    TENANT_HEADER,
};
use slicefab_core::bench::ScenarioReport;
use slicefab_core::federation::FederationLink;
use slicefab_core::model::SliceBlueprint;
use slicefab_core::orchestrator::{DelegationGrant, Slice, SliceDelta, SliceState};
use thiserror::Error;

pub const SERVER_ENV: &str = "SLICEFAB_SERVER";
pub const TENANT_ENV: &str = "SLICEFAB_TENANT";
pub const DEFAULT_SERVER: &str = "http://127.0.0.1:7878";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {}", .body.error)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("timed out waiting for slice `{0}`")]
    Timeout(String),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }

    /// JSON pointer of the offending field, when the server reported one.
    pub fn path(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => body.path.as_deref(),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    tenant: Option<String>,
}

impl Client {
    pub fn new(base: impl Into<String>, tenant: Option<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
            tenant,
        }
    }

    pub fn with_tenant(&self, tenant: impl Into<String>) -> Self {
        Self {
            tenant: Some(tenant.into()),
            ..self.clone()
        }
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        let rb = self.http.request(method, format!("{}{path}", self.base));
        match &self.tenant {
            Some(t) => rb.header(TENANT_HEADER, t),
            None => rb,
        }
    }

    async fn send(rb: RequestBuilder) -> Result<reqwest::Response> {
        let resp = rb.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await.unwrap_or_default();
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: text,
            kind: "unknown".into(),
            path: None,
        });
        Err(ClientError::Api { status, body })
    }

    async fn json<T: DeserializeOwned>(rb: RequestBuilder) -> Result<T> {
        Ok(Self::send(rb).await?.json().await?)
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T> {
        Self::json(self.request(Method::POST, path).json(body)).await
    }

    pub async fn submit(&self, bp: &SliceBlueprint) -> Result<String> {
        let resp: SubmitResponse = self.post("/slices", bp).await?;
        Ok(resp.slice_id)
    }

    pub async fn slice(&self, id: &str) -> Result<Slice> {
        Self::json(self.request(Method::GET, &format!("/slices/{id}"))).await
    }

    pub async fn slices(&self) -> Result<Vec<Slice>> {
        Self::json(self.request(Method::GET, "/slices")).await
    }

    /// Polls until the slice leaves the transient admission states.
    pub async fn wait_settled(&self, id: &str, timeout: Duration) -> Result<Slice> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let slice = self.slice(id).await?;
            if !matches!(
                slice.state,
                SliceState::Requested | SliceState::Admitted | SliceState::Instantiating
            ) {
                return Ok(slice);
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(ClientError::Timeout(id.to_string()));
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub async fn reconfigure(&self, id: &str, delta: &SliceDelta) -> Result<Slice> {
        self.post(&format!("/slices/{id}/reconfigure"), delta).await
    }

    pub async fn terminate(&self, id: &str) -> Result<Slice> {
        Self::json(self.request(Method::DELETE, &format!("/slices/{id}"))).await
    }

    pub async fn federate(&self, req: &CreateFederationRequest) -> Result<FederationLink> {
        self.post("/federations", req).await
    }

    pub async fn federation(&self, id: &str) -> Result<FederationLink> {
        Self::json(self.request(Method::GET, &format!("/federations/{id}"))).await
    }

    pub async fn consent(&self, link: &str) -> Result<FederationLink> {
        Self::json(self.request(Method::POST, &format!("/federations/{link}/consent"))).await
    }

    pub async fn delegate(&self, grant: &DelegationGrant) -> Result<String> {
        let resp: GrantResponse = self.post("/delegations", grant).await?;
        Ok(resp.grant_id)
    }

    pub async fn fig6(&self, req: &Fig6Request) -> Result<Fig6Response> {
        self.post("/bench/fig6", req).await
    }

    pub async fn scenario(&self, name: &str) -> Result<ScenarioReport> {
        Self::json(self.request(Method::POST, &format!("/scenarios/{name}"))).await
    }

    pub async fn events(&self) -> Result<String> {
        Ok(Self::send(self.request(Method::GET, "/events"))
            .await?
            .text()
            .await?)
    }

    pub async fn snapshot(&self) -> Result<String> {
        Ok(Self::send(self.request(Method::GET, "/snapshot"))
            .await?
            .text()
            .await?)
    }
}
