//! Capabilities the loop depends on (prompt proposal, text-to-3D, embeddings, feature maps),
//! their JSON-over-HTTP client, and deterministic in-process mocks.

mod http;
pub mod mock;
pub mod protocol;

use std::io::Cursor;
use std::sync::Arc;

use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{MeshError, TriangleMesh};

pub use http::{BackendEndpointConfig, HttpBackend, TOKEN_ENV};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{endpoint} returned HTTP {status}: {body}")]
    Status { endpoint: String, status: u16, body: String },
    #[error("{endpoint} timed out")]
    Timeout { endpoint: String },
    #[error("{endpoint} transport failure: {message}")]
    Transport { endpoint: String, message: String },
    #[error("cannot decode {what}: {message}")]
    Decode { what: String, message: String },
    #[error("generated mesh rejected: {0}")]
    Mesh(#[from] MeshError),
    /// Contract violations such as embedding dimensions changing mid-run. Never retried.
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, Self::Protocol(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: "user".into(), text: text.into() }
    }
}

/// Fixed-dimension embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.iter().map(|v| v * k).collect())
    }
}

/// Single-channel image with intensities in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GreyImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GreyImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer size");
        Self { width, height, data }
    }

    pub fn square(side: usize, data: Vec<f32>) -> Self {
        Self::new(side, side, data)
    }

    pub fn to_png(&self) -> Result<Vec<u8>, BackendError> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.data[y as usize * self.width + x as usize];
            Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
        });
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).map_err(|e| BackendError::Decode {
            what: "png".into(),
            message: e.to_string(),
        })?;
        Ok(out.into_inner())
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, BackendError> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| BackendError::Decode { what: "png".into(), message: e.to_string() })?
            .to_luma8();
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
        Ok(Self::new(w as usize, h as usize, data))
    }
}

/// One level of a feature pyramid, stored height × width × channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub level: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, BackendError>;
}

pub trait TextTo3d: Send + Sync {
    fn generate(&self, prompt: &str, seed: u64) -> Result<TriangleMesh, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError>;
    fn embed_image(&self, image: &GreyImage) -> Result<Embedding, BackendError>;
}

pub trait FeatureExtractor: Send + Sync {
    fn feature_maps(&self, image: &GreyImage, levels: &[usize]) -> Result<Vec<FeatureMap>, BackendError>;
}

/// Everything the refinement loop talks to.
#[derive(Clone)]
pub struct Backends {
    pub chat: Arc<dyn ChatBackend>,
    pub text_to_3d: Arc<dyn TextTo3d>,
    pub embedder: Arc<dyn Embedder>,
    pub features: Arc<dyn FeatureExtractor>,
}

impl Backends {
    /// All four capabilities served by the in-process mock world.
    pub fn mock(config: mock::MockWorldConfig) -> Self {
        let world = Arc::new(mock::MockWorld::new(config));
        Self {
            chat: world.clone(),
            text_to_3d: world.clone(),
            embedder: world.clone(),
            features: world,
        }
    }

    /// All four capabilities served over HTTP by one endpoint.
    pub fn http(config: BackendEndpointConfig) -> Self {
        let client = Arc::new(HttpBackend::new(config));
        Self {
            chat: client.clone(),
            text_to_3d: client.clone(),
            embedder: client.clone(),
            features: client,
        }
    }
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Backends { .. }")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_quantized() {
        let img = GreyImage::new(3, 2, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]);
        let back = GreyImage::from_png(&img.to_png().unwrap()).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn protocol_errors_are_final() {
        assert!(!BackendError::Protocol("dim".into()).is_retryable());
        assert!(BackendError::Timeout { endpoint: "x".into() }.is_retryable());
    }
}
