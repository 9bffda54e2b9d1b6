//! HTTP/JSON similarity service and the matching client oracle.
//!
//! `POST /v1/similarity` scores one probe against one enrolled target,
//! `GET /v1/targets` lists targets with their budget state and
//! `GET /v1/health` carries the protocol version for the client handshake.
//! Pixels travel as base64 of the f32 little-endian array and scores as JSON
//! numbers that round-trip f64 exactly, so a loopback run sees the same
//! answers as a local one.

mod client;
pub mod protocol;
mod server;

pub use client::RemoteOracle;
pub use protocol::{ErrorCode, ErrorEnvelope, SimilarityRequest, SimilarityResponse, TargetStatus, PROTOCOL_VERSION};
pub use server::{serve, serve_until, ServeError, ServerConfig, ServerHandle};
