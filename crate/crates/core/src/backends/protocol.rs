//! Wire types of the `/v1` JSON protocol. Binary payloads travel as base64; numeric blobs are
//! little-endian `f32`.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatMessage, FeatureMap};
use crate::mesh::{encode_stl_binary, parse_mesh, MeshFormat, TriangleMesh};

pub const CHAT: &str = "/v1/chat";
pub const TEXT_TO_3D: &str = "/v1/text-to-3d";
pub const EMBED_TEXT: &str = "/v1/embed/text";
pub const EMBED_IMAGE: &str = "/v1/embed/image";
pub const FEATURES: &str = "/v1/features";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextTo3dRequest {
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireMeshFormat {
    Obj,
    /// ASCII or binary; the payload is sniffed.
    Stl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextTo3dResponse {
    pub format: WireMeshFormat,
    pub mesh_b64: String,
}

impl TextTo3dResponse {
    /// Binary STL body, the default transport.
    pub fn from_mesh(mesh: &TriangleMesh) -> Self {
        Self {
            format: WireMeshFormat::Stl,
            mesh_b64: B64.encode(encode_stl_binary(mesh)),
        }
    }

    pub fn decode(&self) -> Result<TriangleMesh, BackendError> {
        let bytes = B64.decode(self.mesh_b64.trim()).map_err(|e| decode_err("mesh_b64", e))?;
        let format = match self.format {
            WireMeshFormat::Obj => MeshFormat::Obj,
            WireMeshFormat::Stl => {
                if looks_binary_stl(&bytes) {
                    MeshFormat::BinaryStl
                } else {
                    MeshFormat::Stl
                }
            }
        };
        Ok(parse_mesh(&bytes, format)?)
    }
}

fn looks_binary_stl(bytes: &[u8]) -> bool {
    if bytes.len() < 84 {
        return false;
    }
    let count = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    bytes.len() == 84 + 50 * count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTextRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedImageRequest {
    pub png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesRequest {
    pub png_b64: String,
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFeatureMap {
    pub level: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesResponse {
    pub maps: Vec<WireFeatureMap>,
}

impl WireFeatureMap {
    pub fn encode(map: &FeatureMap) -> Self {
        Self {
            level: map.level,
            h: map.height,
            w: map.width,
            c: map.channels,
            data_b64: encode_f32(&map.data),
        }
    }

    pub fn decode(&self) -> Result<FeatureMap, BackendError> {
        let data = decode_f32(&self.data_b64)?;
        let want = self.h * self.w * self.c;
        if data.len() != want {
            return Err(BackendError::Decode {
                what: format!("feature map level {}", self.level),
                message: format!("{} values for declared {}x{}x{}", data.len(), self.h, self.w, self.c),
            });
        }
        Ok(FeatureMap {
            level: self.level,
            height: self.h,
            width: self.w,
            channels: self.c,
            data,
        })
    }
}

pub fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_f32(text: &str) -> Result<Vec<f32>, BackendError> {
    let bytes = B64.decode(text.trim()).map_err(|e| decode_err("data_b64", e))?;
    if bytes.len() % 4 != 0 {
        return Err(BackendError::Decode {
            what: "data_b64".into(),
            message: format!("{} bytes is not a whole number of f32", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn encode_png_b64(png: &[u8]) -> String {
    B64.encode(png)
}

pub fn decode_png_b64(text: &str) -> Result<Vec<u8>, BackendError> {
    B64.decode(text.trim()).map_err(|e| decode_err("png_b64", e))
}

fn decode_err(what: &str, e: impl std::fmt::Display) -> BackendError {
    BackendError::Decode { what: what.into(), message: e.to_string() }
}
