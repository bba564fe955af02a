use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};
use ureq::Agent;

use super::protocol::{self, *};
use super::{
    BackendError, ChatBackend, ChatMessage, Embedder, Embedding, FeatureExtractor, FeatureMap,
    GreyImage, TextTo3d,
};
use crate::mesh::TriangleMesh;

/// Environment variable holding the bearer token, if any.
pub const TOKEN_ENV: &str = "PHYSGEN_BACKEND_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendEndpointConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    /// Extra attempts after the first failure.
    pub max_retries: u32,
    /// Pause between attempts, doubled each time.
    pub backoff_ms: u64,
    /// Name of the environment variable read for the bearer token.
    pub token_env: String,
}

impl Default for BackendEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 200,
            token_env: TOKEN_ENV.into(),
        }
    }
}

impl BackendEndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err("backend timeout must be positive".into());
        }
        if self.base_url.trim().is_empty() {
            return Err("backend base_url is empty".into());
        }
        Ok(())
    }
}

/// Blocking client for all five endpoints. Safe to share between threads.
pub struct HttpBackend {
    config: BackendEndpointConfig,
    agent: Agent,
    token: Option<String>,
    /// Embedding dimension fixed by the first vector received; 0 until then.
    dim: AtomicUsize,
}

impl HttpBackend {
    pub fn new(config: BackendEndpointConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(1e-3))))
            .http_status_as_error(false)
            .build()
            .into();
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        Self { config, agent, token, dim: AtomicUsize::new(0) }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// POSTs `body`, retrying retryable failures up to `max_retries` extra times.
    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let mut attempt = 0;
        loop {
            match self.post_once(path, body) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    let pause = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    warn!(endpoint = path, attempt, error = %e, "retrying backend call");
                    std::thread::sleep(Duration::from_millis(pause));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn post_once<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let mut request = self.agent.post(self.url(path)).header("Accept", "application/json");
        if let Some(token) = &self.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let endpoint = path.to_string();
        let mut response = request.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout { endpoint: endpoint.clone() },
            other => BackendError::Transport { endpoint: endpoint.clone(), message: other.to_string() },
        })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Status { endpoint, status, body: truncate(&body, 300) });
        }
        debug!(endpoint = path, status, "backend call");
        response.body_mut().read_json::<Resp>().map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout { endpoint: endpoint.clone() },
            other => BackendError::Decode { what: format!("{endpoint} response"), message: other.to_string() },
        })
    }

    /// Rejects vectors whose dimension differs from the first one seen.
    fn check_dim(&self, vector: Vec<f64>) -> Result<Embedding, BackendError> {
        let n = vector.len();
        if n == 0 {
            return Err(BackendError::Protocol("empty embedding vector".into()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Protocol("non-finite embedding entry".into()));
        }
        match self.dim.compare_exchange(0, n, Ordering::SeqCst, Ordering::SeqCst) {
            Ok(_) => Ok(Embedding(vector)),
            Err(d) if d == n => Ok(Embedding(vector)),
            Err(d) => Err(BackendError::Protocol(format!(
                "embedding dimension changed from {d} to {n}"
            ))),
        }
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

impl ChatBackend for HttpBackend {
    fn chat(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, BackendError> {
        let req = ChatRequest { messages: messages.to_vec(), temperature };
        let resp: ChatResponse = self.post(protocol::CHAT, &req)?;
        Ok(resp.text)
    }
}

impl TextTo3d for HttpBackend {
    fn generate(&self, prompt: &str, seed: u64) -> Result<TriangleMesh, BackendError> {
        let req = TextTo3dRequest { prompt: prompt.to_string(), seed };
        let resp: TextTo3dResponse = self.post(protocol::TEXT_TO_3D, &req)?;
        resp.decode()
    }
}

impl Embedder for HttpBackend {
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        let resp: EmbedResponse = self.post(protocol::EMBED_TEXT, &EmbedTextRequest { text: text.into() })?;
        self.check_dim(resp.vector)
    }

    fn embed_image(&self, image: &GreyImage) -> Result<Embedding, BackendError> {
        let req = EmbedImageRequest { png_b64: encode_png_b64(&image.to_png()?) };
        let resp: EmbedResponse = self.post(protocol::EMBED_IMAGE, &req)?;
        self.check_dim(resp.vector)
    }
}

impl FeatureExtractor for HttpBackend {
    fn feature_maps(&self, image: &GreyImage, levels: &[usize]) -> Result<Vec<FeatureMap>, BackendError> {
        let req = FeaturesRequest { png_b64: encode_png_b64(&image.to_png()?), levels: levels.to_vec() };
        let resp: FeaturesResponse = self.post(protocol::FEATURES, &req)?;
        if resp.maps.len() != levels.len() {
            return Err(BackendError::Protocol(format!(
                "asked for {} feature levels, got {}",
                levels.len(),
                resp.maps.len()
            )));
        }
        resp.maps.iter().map(WireFeatureMap::decode).collect()
    }
}
