//! Desk-scale experiments: a synthetic world (corpus, target embedder,
//! transfer embedder) and one-axis-at-a-time ablation sweeps over it.
//!
//! The transfer embedder is a second, differently seeded synthetic model. It
//! measures how well a reconstruction generalizes beyond the oracle it was
//! optimized against.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use crate::eigenspace::{fit_pca, BasisError, EigenBasis};
use crate::image::ImageTensor;
use crate::optimizer::{
    reconstruct_with_monitors, EmbeddingMonitor, OptimizerConfig, Reconstruction, RunError, TraceMonitor,
};
use crate::oracle::{cosine, make_cosine_oracle, SimilarityOracle, SyntheticEmbedder, TargetId};
use crate::synthetic::{FaceModel, FaceModelSpec};

pub const TARGET_MONITOR: &str = "target_similarity";
pub const TRANSFER_MONITOR: &str = "transfer_similarity";

#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    pub model: FaceModelSpec,
    pub train_size: usize,
    pub target_seed: u64,
    pub target_dim: usize,
    pub transfer_seed: u64,
    pub transfer_dim: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            model: FaceModelSpec::default(),
            train_size: 256,
            target_seed: 1,
            target_dim: 32,
            transfer_seed: 2,
            transfer_dim: 32,
        }
    }
}

pub struct World {
    pub spec: WorldSpec,
    pub model: FaceModel,
    pub train: Vec<ImageTensor>,
    pub target_embedder: Arc<SyntheticEmbedder>,
    pub transfer_embedder: Arc<SyntheticEmbedder>,
}

impl World {
    pub fn new(spec: WorldSpec) -> Self {
        let model = FaceModel::new(spec.model.clone());
        let train = model.training_set(spec.train_size);
        let dims = model.dims();
        Self {
            target_embedder: Arc::new(SyntheticEmbedder::new(spec.target_seed, spec.target_dim, dims, false)),
            transfer_embedder: Arc::new(SyntheticEmbedder::new(
                spec.transfer_seed,
                spec.transfer_dim,
                dims,
                false,
            )),
            model,
            train,
            spec,
        }
    }

    pub fn fit(&self, k: usize) -> Result<EigenBasis, BasisError> {
        fit_pca(&self.train, k)
    }

    /// Reconstruct `target` against a fresh target-embedder oracle, logging
    /// both the exact target similarity and the transfer similarity at every
    /// traced step.
    pub fn attack(
        &self,
        basis: &EigenBasis,
        target: &ImageTensor,
        config: &OptimizerConfig,
    ) -> Result<Trial, RunError> {
        let id = TargetId::new("target").expect("non-empty");
        let mut enrolled = BTreeMap::new();
        enrolled.insert(id.clone(), target.clone());
        let oracle = make_cosine_oracle(self.target_embedder.clone(), &enrolled, None)
            .map_err(|e| RunError::Config(e.to_string()))?;
        let target_mon = EmbeddingMonitor::new(TARGET_MONITOR, self.target_embedder.clone(), target);
        let transfer_mon = EmbeddingMonitor::new(TRANSFER_MONITOR, self.transfer_embedder.clone(), target);
        let monitors: [&dyn TraceMonitor; 2] = [&target_mon, &transfer_mon];
        let rec = reconstruct_with_monitors(basis, &oracle, &id, config, &monitors)?;
        Ok(Trial {
            target_similarity: target_mon.measure(&rec.image),
            transfer_similarity: transfer_mon.measure(&rec.image),
            queries_used: oracle.ledger().used(),
            reconstruction: rec,
        })
    }

    /// Transfer-embedder cosine between two images.
    pub fn transfer_cosine(&self, a: &ImageTensor, b: &ImageTensor) -> f64 {
        let e = &self.transfer_embedder;
        cosine(&e.embed(a).expect("world dims"), &e.embed(b).expect("world dims")).unwrap_or(f64::NAN)
    }
}

pub struct Trial {
    pub reconstruction: Reconstruction,
    pub target_similarity: f64,
    pub transfer_similarity: f64,
    pub queries_used: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Axis {
    K,
    Sigma,
    Restarts,
    MainIters,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::K => "k",
            Axis::Sigma => "sigma",
            Axis::Restarts => "n_restarts",
            Axis::MainIters => "main_iters",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sweep plan: every axis is varied on its own around `base`/`base_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub base: OptimizerConfig,
    pub base_k: usize,
    pub ks: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub restarts: Vec<usize>,
    pub main_iters: Vec<u64>,
    /// Trials per grid point. Trial `i` attacks held-out image `i` with
    /// optimizer seed `base.seed + i`.
    pub trials: u64,
    pub threads: usize,
}

impl AblationPlan {
    pub fn points(&self) -> Vec<(Axis, f64)> {
        let mut p = Vec::new();
        p.extend(self.ks.iter().map(|&v| (Axis::K, v as f64)));
        p.extend(self.sigmas.iter().map(|&v| (Axis::Sigma, v)));
        p.extend(self.restarts.iter().map(|&v| (Axis::Restarts, v as f64)));
        p.extend(self.main_iters.iter().map(|&v| (Axis::MainIters, v as f64)));
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub axis: Axis,
    pub value: f64,
    pub trial: u64,
    pub k: usize,
    pub sigma: f64,
    pub n_restarts: usize,
    pub restart_iters: u64,
    pub main_iters: u64,
    pub seed: u64,
    pub target_similarity: f64,
    pub transfer_similarity: f64,
    pub queries_used: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error("no sweep axis has any values")]
    EmptyPlan,
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("trial failed: {0}")]
    Run(#[from] RunError),
}

/// A grid point that could not be run.
#[derive(Clone, Debug, PartialEq)]
pub struct SkippedPoint {
    pub axis: Axis,
    pub value: f64,
    pub reason: String,
}

pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub skipped: Vec<SkippedPoint>,
}

struct Job {
    axis: Axis,
    value: f64,
    k: usize,
    config: OptimizerConfig,
    trial: u64,
}

pub fn run_ablation(world: &World, plan: &AblationPlan) -> Result<AblationOutcome, AblationError> {
    let points = plan.points();
    if points.is_empty() {
        return Err(AblationError::EmptyPlan);
    }
    if plan.trials == 0 {
        return Err(AblationError::NoTrials);
    }

    // Fit each distinct k once; infeasible ranks are reported, not fatal.
    let mut bases: BTreeMap<usize, EigenBasis> = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    for (axis, value) in points {
        let mut config = plan.base.clone();
        let mut k = plan.base_k;
        match axis {
            Axis::K => k = value as usize,
            Axis::Sigma => config.sigma = value,
            Axis::Restarts => config.n_restarts = value as usize,
            Axis::MainIters => config.main_iters = value as u64,
        }
        if let Err(e) = config.validate() {
            log::warn!("skipping {axis}={value}: {e}");
            skipped.push(SkippedPoint {
                axis,
                value,
                reason: e.to_string(),
            });
            continue;
        }
        if let std::collections::btree_map::Entry::Vacant(slot) = bases.entry(k) {
            match world.fit(k) {
                Ok(b) => {
                    slot.insert(b);
                }
                Err(e) => {
                    log::warn!("skipping {axis}={value}: {e}");
                    skipped.push(SkippedPoint {
                        axis,
                        value,
                        reason: e.to_string(),
                    });
                    continue;
                }
            }
        }
        for trial in 0..plan.trials {
            let config = OptimizerConfig {
                seed: plan.base.seed + trial,
                ..config.clone()
            };
            jobs.push(Job {
                axis,
                value,
                k,
                config,
                trial,
            });
        }
    }

    let run = |job: &Job| -> Result<AblationRow, RunError> {
        let target = world.model.heldout(job.trial);
        let t = world.attack(&bases[&job.k], &target, &job.config)?;
        Ok(AblationRow {
            axis: job.axis,
            value: job.value,
            trial: job.trial,
            k: job.k,
            sigma: job.config.sigma,
            n_restarts: job.config.n_restarts,
            restart_iters: job.config.restart_iters,
            main_iters: job.config.main_iters,
            seed: job.config.seed,
            target_similarity: t.target_similarity,
            transfer_similarity: t.transfer_similarity,
            queries_used: t.queries_used,
        })
    };

    // Jobs are independent; results are placed back in job order.
    let threads = plan.threads.max(1).min(jobs.len().max(1));
    let mut results: Vec<Option<Result<AblationRow, RunError>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunks: Vec<_> = results.chunks_mut(jobs.len().div_ceil(threads).max(1)).collect();
        let mut start = 0;
        for chunk in chunks {
            let my_jobs = &jobs[start..start + chunk.len()];
            start += chunk.len();
            let run = &run;
            s.spawn(move || {
                for (slot, job) in chunk.iter_mut().zip(my_jobs) {
                    *slot = Some(run(job));
                }
            });
        }
    });
    let rows = results
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AblationOutcome { rows, skipped })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSummary {
    pub axis: Axis,
    pub value: f64,
    pub trials: usize,
    pub mean_target_similarity: f64,
    pub mean_transfer_similarity: f64,
}

/// Per-point means, in first-appearance order.
pub fn summarize(rows: &[AblationRow]) -> Vec<AblationSummary> {
    let mut out: Vec<AblationSummary> = Vec::new();
    for r in rows {
        let pos = out.iter().position(|s| s.axis == r.axis && s.value == r.value);
        let s = match pos {
            Some(i) => &mut out[i],
            None => {
                out.push(AblationSummary {
                    axis: r.axis,
                    value: r.value,
                    trials: 0,
                    mean_target_similarity: 0.0,
                    mean_transfer_similarity: 0.0,
                });
                out.last_mut().unwrap()
            }
        };
        s.trials += 1;
        s.mean_target_similarity += r.target_similarity;
        s.mean_transfer_similarity += r.transfer_similarity;
    }
    for s in &mut out {
        s.mean_target_similarity /= s.trials as f64;
        s.mean_transfer_similarity /= s.trials as f64;
    }
    out
}

/// Mean transfer similarity along one axis, in plan order.
pub fn axis_curve(summary: &[AblationSummary], axis: Axis) -> Vec<(f64, f64)> {
    summary
        .iter()
        .filter(|s| s.axis == axis)
        .map(|s| (s.value, s.mean_transfer_similarity))
        .collect()
}

pub fn write_rows_csv<W: Write>(rows: &[AblationRow], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "axis",
        "value",
        "trial",
        "k",
        "sigma",
        "n_restarts",
        "restart_iters",
        "main_iters",
        "seed",
        "target_similarity",
        "transfer_similarity",
        "queries_used",
    ])?;
    for r in rows {
        w.write_record([
            r.axis.to_string(),
            r.value.to_string(),
            r.trial.to_string(),
            r.k.to_string(),
            r.sigma.to_string(),
            r.n_restarts.to_string(),
            r.restart_iters.to_string(),
            r.main_iters.to_string(),
            r.seed.to_string(),
            r.target_similarity.to_string(),
            r.transfer_similarity.to_string(),
            r.queries_used.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_summary_csv<W: Write>(summary: &[AblationSummary], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "axis",
        "value",
        "trials",
        "mean_target_similarity",
        "mean_transfer_similarity",
    ])?;
    for s in summary {
        w.write_record([
            s.axis.to_string(),
            s.value.to_string(),
            s.trials.to_string(),
            s.mean_target_similarity.to_string(),
            s.mean_transfer_similarity.to_string(),
        ])?;
    }
    w.flush()
}
