//! Score-degrading wrappers that emulate defended endpoints. Both pass the
//! inner oracle's ledger through untouched.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::image::ImageTensor;
use crate::rng::{self, streams};

use super::{OracleError, QueryLedger, SimilarityOracle, TargetId};

/// Round to the nearest multiple of `2 / 2^bits` (ties away from zero),
/// clamped to `[-1, 1]`.
pub fn quantize_score(score: f64, bits: u32) -> f64 {
    let step = 2f64.powi(1 - bits as i32);
    ((score / step).round() * step).clamp(-1.0, 1.0)
}

pub struct QuantizedOracle<O> {
    inner: O,
    bits: u32,
}

impl<O: SimilarityOracle> QuantizedOracle<O> {
    pub fn new(inner: O, bits: u32) -> Self {
        assert!(bits >= 1, "quantization needs at least one bit");
        Self { inner, bits }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: SimilarityOracle> SimilarityOracle for QuantizedOracle<O> {
    fn query(&self, image: &ImageTensor, target: &TargetId) -> Result<f64, OracleError> {
        self.inner.query(image, target).map(|s| quantize_score(s, self.bits))
    }
    fn validate(&self, image: &ImageTensor, target: &TargetId) -> Result<(), OracleError> {
        self.inner.validate(image, target)
    }
    fn ledger(&self) -> &QueryLedger {
        self.inner.ledger()
    }
    fn targets(&self) -> Vec<TargetId> {
        self.inner.targets()
    }
}

/// Adds `N(0, stddev^2)` noise and clamps to `[-1, 1]`. The n-th scored
/// answer uses variate `(seed, streams::NOISE, n)`.
pub struct NoisyOracle<O> {
    inner: O,
    stddev: f64,
    seed: u64,
    draws: AtomicU64,
}

impl<O: SimilarityOracle> NoisyOracle<O> {
    pub fn new(inner: O, stddev: f64, seed: u64) -> Self {
        assert!(
            stddev >= 0.0 && stddev.is_finite(),
            "noise stddev must be finite and >= 0"
        );
        Self {
            inner,
            stddev,
            seed,
            draws: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: SimilarityOracle> SimilarityOracle for NoisyOracle<O> {
    fn query(&self, image: &ImageTensor, target: &TargetId) -> Result<f64, OracleError> {
        let s = self.inner.query(image, target)?;
        if self.stddev == 0.0 {
            return Ok(s);
        }
        let n = self.draws.fetch_add(1, Ordering::SeqCst);
        Ok((s + self.stddev * rng::normal(self.seed, streams::NOISE, n)).clamp(-1.0, 1.0))
    }
    fn validate(&self, image: &ImageTensor, target: &TargetId) -> Result<(), OracleError> {
        self.inner.validate(image, target)
    }
    fn ledger(&self) -> &QueryLedger {
        self.inner.ledger()
    }
    fn targets(&self) -> Vec<TargetId> {
        self.inner.targets()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use super::*;
    use crate::oracle::{make_cosine_oracle, CosineOracle, SyntheticEmbedder};

    #[test]
    fn one_bit_grid() {
        assert_eq!(quantize_score(0.3, 1), 0.0);
        assert_eq!(quantize_score(0.8, 1), 1.0);
        assert_eq!(quantize_score(-0.6, 1), -1.0);
        assert_eq!(quantize_score(0.5, 1), 1.0);
        assert_eq!(quantize_score(-0.5, 1), -1.0);
        assert_eq!(quantize_score(0.3, 2), 0.5);
    }

    #[test]
    fn fine_grid_is_nearly_identity() {
        for i in 0..1000 {
            let s = -1.0 + 2.0 * i as f64 / 999.0;
            assert!((quantize_score(s, 30) - s).abs() < 1e-8);
        }
    }

    fn base(budget: Option<u64>) -> (CosineOracle, Vec<ImageTensor>) {
        let emb = Arc::new(SyntheticEmbedder::new(5, 6, (3, 3, 1), false));
        let enrolled = ImageTensor::new(3, 3, 1, (0..9).map(|i| i as f32 / 9.0).collect()).unwrap();
        let mut m = BTreeMap::new();
        m.insert(TargetId::new("t").unwrap(), enrolled);
        let probes = (0..20)
            .map(|k| ImageTensor::new(3, 3, 1, (0..9).map(|i| ((i * 7 + k) % 11) as f32 / 11.0).collect()).unwrap())
            .collect();
        (make_cosine_oracle(emb, &m, budget).unwrap(), probes)
    }

    #[test]
    fn zero_noise_is_identity() {
        let (plain, probes) = base(None);
        let (inner, _) = base(None);
        let noisy = NoisyOracle::new(inner, 0.0, 9);
        let t = TargetId::new("t").unwrap();
        for p in &probes {
            assert_eq!(plain.query(p, &t).unwrap(), noisy.query(p, &t).unwrap());
        }
    }

    #[test]
    fn noise_is_seeded_and_bounded() {
        let t = TargetId::new("t").unwrap();
        let (a, probes) = base(None);
        let (b, _) = base(None);
        let (na, nb) = (NoisyOracle::new(a, 0.5, 1), NoisyOracle::new(b, 0.5, 1));
        let mut differs = false;
        for p in &probes {
            let (x, y) = (na.query(p, &t).unwrap(), nb.query(p, &t).unwrap());
            assert_eq!(x, y);
            assert!((-1.0..=1.0).contains(&x));
            differs |= x != na.inner().score_uncounted(p, &t).unwrap();
        }
        assert!(differs);
    }

    #[test]
    fn composed_wrappers_keep_ledger_semantics() {
        let t = TargetId::new("t").unwrap();
        let (inner, probes) = base(Some(5));
        let o = QuantizedOracle::new(NoisyOracle::new(inner, 0.1, 3), 1);
        for p in probes.iter().take(5) {
            let s = o.query(p, &t).unwrap();
            assert!([-1.0, 0.0, 1.0].contains(&s));
        }
        assert_eq!(o.ledger().used(), 5);
        assert!(o.query(&probes[5], &t).unwrap_err().is_budget_exhausted());
        assert_eq!(o.ledger().used(), 5);
    }
}
