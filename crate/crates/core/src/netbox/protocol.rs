//! JSON envelopes shared by the server and the client.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::oracle::OracleError;

pub const PROTOCOL_VERSION: u32 = 1;

pub const SIMILARITY_PATH: &str = "/v1/similarity";
pub const TARGETS_PATH: &str = "/v1/targets";
pub const HEALTH_PATH: &str = "/v1/health";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRequest {
    pub version: u32,
    pub target_id: String,
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    /// Base64 of the f32 little-endian pixel array.
    pub pixels: String,
}

impl SimilarityRequest {
    pub fn new(target_id: &str, image: &ImageTensor) -> Self {
        let (width, height, channels) = image.dims();
        let bytes: Vec<u8> = image.pixels().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            version: PROTOCOL_VERSION,
            target_id: target_id.to_string(),
            width,
            height,
            channels,
            pixels: STANDARD.encode(bytes),
        }
    }

    pub fn decode_image(&self) -> Result<ImageTensor, OracleError> {
        let bytes = STANDARD
            .decode(&self.pixels)
            .map_err(|e| OracleError::Malformed(format!("pixels are not valid base64: {e}")))?;
        let expected = self.width as u64 * self.height as u64 * self.channels as u64 * 4;
        if bytes.len() as u64 != expected {
            return Err(OracleError::Malformed(format!(
                "pixels decode to {} bytes, {}x{}x{} needs {expected}",
                bytes.len(),
                self.width,
                self.height,
                self.channels
            )));
        }
        let px = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        ImageTensor::new(self.width, self.height, self.channels, px).map_err(|e| OracleError::Malformed(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResponse {
    pub version: u32,
    pub similarity: f64,
    pub queries_used: u64,
    /// `None` when the target has no budget.
    pub budget_remaining: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetStatus {
    pub target_id: String,
    pub queries_used: u64,
    pub budget: Option<u64>,
    pub budget_remaining: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetsResponse {
    pub version: u32,
    pub targets: Vec<TargetStatus>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    Malformed,
    UnknownTarget,
    BudgetExhausted,
    VersionMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error_code: ErrorCode,
    pub message: String,
}
