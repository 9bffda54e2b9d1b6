use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;

use crate::image::ImageTensor;
use crate::oracle::{OracleError, QueryLedger, SimilarityOracle, TargetId};

use super::protocol::*;

/// Attempts per request when the TCP connection itself cannot be opened.
/// Such a request never reached the scorer, so retrying cannot double-count.
const CONNECT_ATTEMPTS: u32 = 3;

/// Oracle backed by a remote netbox server.
///
/// The local ledger counts scored answers received by this client. Its
/// budget is the caller's budget capped by what the server reported for the
/// target at connect time, so the optimizer's up-front budget check sees the
/// server limit.
pub struct RemoteOracle {
    base: String,
    http: Client,
    ledger: QueryLedger,
}

fn transport(e: reqwest::Error) -> OracleError {
    OracleError::Connection(e.to_string())
}

impl RemoteOracle {
    /// Connects to `addr` (`host:port` or an `http://` URL) and checks the
    /// protocol version via the health endpoint.
    pub fn connect(addr: &str, budget: Option<u64>) -> Result<Self, OracleError> {
        let base = if addr.starts_with("http://") || addr.starts_with("https://") {
            addr.trim_end_matches('/').to_string()
        } else {
            format!("http://{addr}")
        };
        let http = Client::builder()
            .connect_timeout(Duration::from_secs(5))
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(transport)?;
        let oracle = Self {
            base,
            http,
            ledger: QueryLedger::new(budget),
        };
        let health: HealthResponse = oracle.get(HEALTH_PATH)?;
        if health.version != PROTOCOL_VERSION {
            return Err(OracleError::VersionMismatch {
                client: PROTOCOL_VERSION,
                server: health.version,
            });
        }
        Ok(oracle)
    }

    /// [`connect`](Self::connect), then check that `target` is enrolled and
    /// cap the local budget by the server's remaining budget for it.
    pub fn for_target(addr: &str, target: &TargetId, budget: Option<u64>) -> Result<Self, OracleError> {
        let mut oracle = Self::connect(addr, budget)?;
        let status = oracle
            .status()?
            .into_iter()
            .find(|s| s.target_id == target.as_str())
            .ok_or_else(|| OracleError::UnknownTarget(target.to_string()))?;
        let cap = match (budget, status.budget_remaining) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        oracle.ledger = QueryLedger::new(cap);
        Ok(oracle)
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// Ledger state of every target on the server.
    pub fn status(&self) -> Result<Vec<TargetStatus>, OracleError> {
        let r: TargetsResponse = self.get(TARGETS_PATH)?;
        Ok(r.targets)
    }

    fn send(
        &self,
        build: impl Fn() -> reqwest::blocking::RequestBuilder,
    ) -> Result<reqwest::blocking::Response, OracleError> {
        let mut attempt = 1;
        loop {
            match build().send() {
                Ok(r) => return Ok(r),
                Err(e) if e.is_connect() && attempt < CONNECT_ATTEMPTS => {
                    std::thread::sleep(Duration::from_millis(50 * attempt as u64));
                    attempt += 1;
                }
                Err(e) => return Err(transport(e)),
            }
        }
    }

    fn get<T: serde::de::DeserializeOwned>(&self, path: &str) -> Result<T, OracleError> {
        let url = format!("{}{}", self.base, path);
        let resp = self.send(|| self.http.get(&url))?;
        self.decode(resp)
    }

    fn decode<T: serde::de::DeserializeOwned>(&self, resp: reqwest::blocking::Response) -> Result<T, OracleError> {
        let status = resp.status();
        let body = resp.bytes().map_err(transport)?;
        if status.is_success() {
            return serde_json::from_slice(&body).map_err(|e| OracleError::Protocol(format!("bad response body: {e}")));
        }
        let env: ErrorEnvelope = serde_json::from_slice(&body)
            .map_err(|_| OracleError::Protocol(format!("server answered {status} without an error envelope")))?;
        Err(match env.error_code {
            ErrorCode::Malformed if status == StatusCode::BAD_GATEWAY => OracleError::Protocol(env.message),
            ErrorCode::Malformed => OracleError::Malformed(env.message),
            ErrorCode::UnknownTarget => OracleError::UnknownTarget(env.message),
            ErrorCode::BudgetExhausted => OracleError::BudgetExhausted {
                used: self.ledger.used(),
                budget: self.ledger.budget().unwrap_or(self.ledger.used()),
            },
            ErrorCode::VersionMismatch => OracleError::VersionMismatch {
                client: PROTOCOL_VERSION,
                server: 0,
            },
        })
    }
}

impl SimilarityOracle for RemoteOracle {
    fn query(&self, image: &ImageTensor, target: &TargetId) -> Result<f64, OracleError> {
        self.ledger.try_acquire()?;
        let url = format!("{}{}", self.base, SIMILARITY_PATH);
        let req = SimilarityRequest::new(target.as_str(), image);
        let result = self
            .send(|| self.http.post(&url).json(&req))
            .and_then(|r| self.decode::<SimilarityResponse>(r));
        match result {
            Ok(r) if r.version == PROTOCOL_VERSION && r.similarity.is_finite() => Ok(r.similarity),
            Ok(r) => {
                self.ledger.refund();
                Err(OracleError::Protocol(format!(
                    "unusable response: version {}, similarity {}",
                    r.version, r.similarity
                )))
            }
            Err(e) => {
                self.ledger.refund();
                Err(e)
            }
        }
    }

    fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    fn targets(&self) -> Vec<TargetId> {
        self.status()
            .map(|v| v.into_iter().filter_map(|s| TargetId::new(s.target_id).ok()).collect())
            .unwrap_or_default()
    }
}
