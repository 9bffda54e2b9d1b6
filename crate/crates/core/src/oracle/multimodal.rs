use std::sync::Arc;

use crate::image::ImageTensor;

use super::{cosine, OracleError, QueryLedger, SimilarityOracle, SyntheticEmbedder, TargetId};

/// A single identity whose score surface has two cosine peaks:
/// `S = max(cos(e, t_true), cos(e, t_decoy) - depth)`.
///
/// The decoy peak tops out at `1 - depth`, below the true peak, and is a
/// strict local maximum whenever `cos(t_true, t_decoy) < 1 - depth`.
pub struct TwoPeakOracle {
    embedder: Arc<SyntheticEmbedder>,
    target: TargetId,
    peak: Vec<f64>,
    decoy: Vec<f64>,
    depth: f64,
    ledger: QueryLedger,
}

impl TwoPeakOracle {
    pub fn new(
        embedder: Arc<SyntheticEmbedder>,
        target: TargetId,
        true_image: &ImageTensor,
        decoy_image: &ImageTensor,
        depth: f64,
        budget: Option<u64>,
    ) -> Result<Self, OracleError> {
        let peak = embedder.embed(true_image)?;
        let decoy = embedder.embed(decoy_image)?;
        // reject zero-norm references up front
        cosine(&peak, &decoy)?;
        Ok(Self {
            embedder,
            target,
            peak,
            decoy,
            depth,
            ledger: QueryLedger::new(budget),
        })
    }

    /// Cosine between the two peak embeddings.
    pub fn peak_separation(&self) -> f64 {
        cosine(&self.peak, &self.decoy).expect("checked at construction")
    }

    /// `(cos to true peak, cos to decoy)` without charging the ledger.
    pub fn components_uncounted(&self, image: &ImageTensor) -> Result<(f64, f64), OracleError> {
        let e = self.embedder.embed(image)?;
        Ok((cosine(&e, &self.peak)?, cosine(&e, &self.decoy)?))
    }

    pub fn score_uncounted(&self, image: &ImageTensor) -> Result<f64, OracleError> {
        let (a, b) = self.components_uncounted(image)?;
        Ok(a.max(b - self.depth))
    }
}

impl SimilarityOracle for TwoPeakOracle {
    fn query(&self, image: &ImageTensor, target: &TargetId) -> Result<f64, OracleError> {
        self.validate(image, target)?;
        let s = self.score_uncounted(image)?;
        self.ledger.try_acquire()?;
        Ok(s)
    }

    fn validate(&self, image: &ImageTensor, target: &TargetId) -> Result<(), OracleError> {
        if target != &self.target {
            return Err(OracleError::UnknownTarget(target.to_string()));
        }
        self.embedder.check_dims(image)
    }

    fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    fn targets(&self) -> Vec<TargetId> {
        vec![self.target.clone()]
    }
}
