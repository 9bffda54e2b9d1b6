//! Black-box similarity oracles.
//!
//! An oracle answers `S(image, target)` with a scalar and nothing else. Every
//! scored answer is charged to a [`QueryLedger`]; the optimizer never learns
//! whether the backend is a local synthetic model or a remote server.

mod embedder;
mod multimodal;
mod wrappers;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::image::ImageTensor;

pub use embedder::SyntheticEmbedder;
pub use multimodal::TwoPeakOracle;
pub use wrappers::{quantize_score, NoisyOracle, QuantizedOracle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("query budget exhausted ({used} of {budget} used)")]
    BudgetExhausted { used: u64, budget: u64 },
    #[error("unknown target {0:?}")]
    UnknownTarget(String),
    #[error("image has {found} values, oracle expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("protocol version mismatch: client speaks {client}, server speaks {server}")]
    VersionMismatch { client: u32, server: u32 },
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl OracleError {
    pub fn is_budget_exhausted(&self) -> bool {
        matches!(self, OracleError::BudgetExhausted { .. })
    }

    pub fn is_connection(&self) -> bool {
        matches!(self, OracleError::Connection(_))
    }
}

/// Opaque, non-empty identity label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TargetId(String);

impl TargetId {
    pub fn new(id: impl Into<String>) -> Result<Self, OracleError> {
        let id = id.into();
        if id.is_empty() {
            return Err(OracleError::UnknownTarget(id));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TargetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Query counter with an optional hard budget. The budget check and the
/// increment happen in one atomic step.
#[derive(Debug)]
pub struct QueryLedger {
    used: AtomicU64,
    budget: Option<u64>,
}

impl QueryLedger {
    pub fn new(budget: Option<u64>) -> Self {
        Self {
            used: AtomicU64::new(0),
            budget,
        }
    }

    pub fn unlimited() -> Self {
        Self::new(None)
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.used()))
    }

    /// Claim one query. Returns the new `used` count.
    pub fn try_acquire(&self) -> Result<u64, OracleError> {
        match self.budget {
            None => Ok(self.used.fetch_add(1, Ordering::SeqCst) + 1),
            Some(budget) => self
                .used
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| (u < budget).then_some(u + 1))
                .map(|prev| prev + 1)
                .map_err(|used| OracleError::BudgetExhausted { used, budget }),
        }
    }

    /// Return a claim whose query was never scored.
    pub fn refund(&self) {
        let _ = self
            .used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| u.checked_sub(1));
    }
}

/// The black-box similarity interface.
pub trait SimilarityOracle: Send + Sync {
    /// Score `image` against `target`, charging one query on success.
    fn query(&self, image: &ImageTensor, target: &TargetId) -> Result<f64, OracleError>;

    /// Check that a query would be well-formed without charging it.
    fn validate(&self, _image: &ImageTensor, _target: &TargetId) -> Result<(), OracleError> {
        Ok(())
    }

    fn ledger(&self) -> &QueryLedger;

    /// Enrolled identities, when the backend can list them.
    fn targets(&self) -> Vec<TargetId>;
}

impl<T: SimilarityOracle + ?Sized> SimilarityOracle for Box<T> {
    fn query(&self, image: &ImageTensor, target: &TargetId) -> Result<f64, OracleError> {
        (**self).query(image, target)
    }
    fn validate(&self, image: &ImageTensor, target: &TargetId) -> Result<(), OracleError> {
        (**self).validate(image, target)
    }
    fn ledger(&self) -> &QueryLedger {
        (**self).ledger()
    }
    fn targets(&self) -> Vec<TargetId> {
        (**self).targets()
    }
}

impl<T: SimilarityOracle + ?Sized> SimilarityOracle for Arc<T> {
    fn query(&self, image: &ImageTensor, target: &TargetId) -> Result<f64, OracleError> {
        (**self).query(image, target)
    }
    fn validate(&self, image: &ImageTensor, target: &TargetId) -> Result<(), OracleError> {
        (**self).validate(image, target)
    }
    fn ledger(&self) -> &QueryLedger {
        (**self).ledger()
    }
    fn targets(&self) -> Vec<TargetId> {
        (**self).targets()
    }
}

/// Cosine similarity `a.b / (|a| |b|)`, clamped to `[-1, 1]`.
///
/// The denominator is `sqrt(|a|^2 |b|^2)`, which makes `cosine(v, v)` exactly
/// 1 and `cosine(v, -v)` exactly -1.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, OracleError> {
    if a.len() != b.len() {
        return Err(OracleError::LengthMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(OracleError::ZeroNorm);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// `S(img, t) = cosine(embed(img), embed(enrolled[t]))` under a synthetic
/// embedder.
pub struct CosineOracle {
    embedder: Arc<SyntheticEmbedder>,
    enrolled: BTreeMap<TargetId, Vec<f64>>,
    ledger: QueryLedger,
}

impl CosineOracle {
    pub fn embedder(&self) -> &SyntheticEmbedder {
        &self.embedder
    }

    /// Enrolled embedding for `target`.
    pub fn enrolled_embedding(&self, target: &TargetId) -> Option<&[f64]> {
        self.enrolled.get(target).map(Vec::as_slice)
    }

    /// Score without touching the ledger. Evaluation-side measurements use
    /// this; attack code must go through [`SimilarityOracle::query`].
    pub fn score_uncounted(&self, image: &ImageTensor, target: &TargetId) -> Result<f64, OracleError> {
        let reference = self
            .enrolled
            .get(target)
            .ok_or_else(|| OracleError::UnknownTarget(target.to_string()))?;
        cosine(&self.embedder.embed(image)?, reference)
    }
}

impl SimilarityOracle for CosineOracle {
    fn query(&self, image: &ImageTensor, target: &TargetId) -> Result<f64, OracleError> {
        self.validate(image, target)?;
        let embedding = self.embedder.embed(image)?;
        let score = cosine(&embedding, &self.enrolled[target])?;
        self.ledger.try_acquire()?;
        Ok(score)
    }

    fn validate(&self, image: &ImageTensor, target: &TargetId) -> Result<(), OracleError> {
        if !self.enrolled.contains_key(target) {
            return Err(OracleError::UnknownTarget(target.to_string()));
        }
        self.embedder.check_dims(image)
    }

    fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    fn targets(&self) -> Vec<TargetId> {
        self.enrolled.keys().cloned().collect()
    }
}

/// Build a cosine oracle over `enrollment` with a fresh ledger.
pub fn make_cosine_oracle(
    embedder: Arc<SyntheticEmbedder>,
    enrollment: &BTreeMap<TargetId, ImageTensor>,
    budget: Option<u64>,
) -> Result<CosineOracle, OracleError> {
    if enrollment.is_empty() {
        return Err(OracleError::Malformed("enrollment is empty".into()));
    }
    let mut enrolled = BTreeMap::new();
    for (id, img) in enrollment {
        let e = embedder.embed(img)?;
        if e.iter().all(|&v| v == 0.0) {
            return Err(OracleError::ZeroNorm);
        }
        enrolled.insert(id.clone(), e);
    }
    Ok(CosineOracle {
        embedder,
        enrolled,
        ledger: QueryLedger::new(budget),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tid(s: &str) -> TargetId {
        TargetId::new(s).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.7, 2.2, 0.01];
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(cosine(&v, &neg).unwrap(), -1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(OracleError::ZeroNorm));
        assert_eq!(cosine(&[1.0], &[1.0, 0.0]), Err(OracleError::LengthMismatch(1, 2)));
    }

    #[test]
    fn ledger_enforces_budget() {
        let l = QueryLedger::new(Some(3));
        for i in 1..=3 {
            assert_eq!(l.try_acquire().unwrap(), i);
        }
        assert_eq!(
            l.try_acquire(),
            Err(OracleError::BudgetExhausted { used: 3, budget: 3 })
        );
        assert_eq!(l.used(), 3);
        l.refund();
        assert_eq!(l.remaining(), Some(1));
    }

    #[test]
    fn ledger_is_exact_under_contention() {
        let l = Arc::new(QueryLedger::new(Some(1000)));
        let ok = Arc::new(AtomicU64::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (l, ok) = (l.clone(), ok.clone());
                s.spawn(move || {
                    for _ in 0..200 {
                        if l.try_acquire().is_ok() {
                            ok.fetch_add(1, Ordering::SeqCst);
                        }
                    }
                });
            }
        });
        assert_eq!(ok.load(Ordering::SeqCst), 1000);
        assert_eq!(l.used(), 1000);
    }

    fn small_oracle(budget: Option<u64>) -> (CosineOracle, ImageTensor, ImageTensor) {
        let emb = Arc::new(SyntheticEmbedder::new(11, 8, (4, 2, 1), false));
        let a = ImageTensor::new(4, 2, 1, vec![0.1, 0.2, 0.9, 0.4, 0.5, 0.0, 0.3, 0.7]).unwrap();
        let b = ImageTensor::new(4, 2, 1, vec![0.8, 0.1, 0.2, 0.6, 0.2, 0.9, 0.4, 0.1]).unwrap();
        let mut enroll = BTreeMap::new();
        enroll.insert(tid("alice"), a.clone());
        enroll.insert(tid("bob"), b.clone());
        (make_cosine_oracle(emb, &enroll, budget).unwrap(), a, b)
    }

    #[test]
    fn cosine_oracle_scores_and_counts() {
        let (o, a, b) = small_oracle(Some(10));
        assert_eq!(o.query(&a, &tid("alice")).unwrap(), 1.0);
        assert_eq!(o.query(&b, &tid("bob")).unwrap(), 1.0);
        let cross = o.query(&a, &tid("bob")).unwrap();
        assert!(cross < 1.0 && cross > -1.0);
        assert_eq!(o.ledger().used(), 3);
        // errors do not charge
        assert!(matches!(o.query(&a, &tid("carol")), Err(OracleError::UnknownTarget(_))));
        let wrong = ImageTensor::new(2, 2, 1, vec![0.5; 4]).unwrap();
        assert!(matches!(
            o.query(&wrong, &tid("alice")),
            Err(OracleError::DimensionMismatch { expected: 8, found: 4 })
        ));
        assert_eq!(o.ledger().used(), 3);
    }

    #[test]
    fn eleventh_query_is_refused() {
        let (o, a, _) = small_oracle(Some(10));
        for _ in 0..10 {
            o.query(&a, &tid("alice")).unwrap();
        }
        assert!(o.query(&a, &tid("alice")).unwrap_err().is_budget_exhausted());
        assert_eq!(o.ledger().used(), 10);
    }

    #[test]
    fn cosine_oracle_is_deterministic() {
        let (o1, a, _) = small_oracle(None);
        let (o2, _, _) = small_oracle(None);
        let probe = a.horizontal_flip();
        assert_eq!(
            o1.query(&probe, &tid("bob")).unwrap().to_bits(),
            o2.query(&probe, &tid("bob")).unwrap().to_bits()
        );
    }

    #[test]
    fn empty_enrollment_rejected() {
        let emb = Arc::new(SyntheticEmbedder::new(1, 4, (2, 1, 1), false));
        assert!(make_cosine_oracle(emb, &BTreeMap::new(), None).is_err());
        assert!(TargetId::new("").is_err());
    }
}
