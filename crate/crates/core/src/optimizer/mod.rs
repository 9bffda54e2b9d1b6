//! Zero-order ascent in eigenspace coordinates.
//!
//! Each step samples `u ~ N(0, sigma^2 I_k)`, queries the oracle at `c - u`
//! and then `c + u`, and moves along
//!
//! ```text
//! G = k * (s_plus - s_minus) / (2 sigma) * u,     c <- c + eta * G
//! ```
//!
//! [`reconstruct`] wraps this in the multi-start schedule: `n_restarts` short
//! ascents, one scoring query each, then a long ascent from the best one.

mod trace;

use std::thread;

use thiserror::Error;

use crate::eigenspace::{EigenBasis, LatentCoords};
use crate::image::ImageTensor;
use crate::oracle::{OracleError, SimilarityOracle, TargetId};
use crate::rng::{self, streams, NormalStream};

pub use trace::{EmbeddingMonitor, Phase, RunTrace, TraceMonitor, TraceRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    /// Smoothing radius of the probe directions.
    pub sigma: f64,
    /// Step size. `None` means `1 / k`.
    pub learning_rate: Option<f64>,
    pub n_restarts: usize,
    pub restart_iters: u64,
    pub main_iters: u64,
    pub seed: u64,
    /// Log every n-th ascent iteration (the last iteration of a phase is
    /// always logged).
    pub trace_every: u64,
    /// Standard deviation of the Gaussian restart initialization; 0 starts
    /// every restart at the mean face.
    pub init_std: f64,
    /// Clamp probe images to `[0, 1]` before querying.
    pub clamp_probes: bool,
    /// Run restarts on separate threads. Results are identical to the
    /// sequential order; the oracle sees a different interleaving.
    pub parallel_restarts: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            sigma: 0.3,
            learning_rate: None,
            n_restarts: 10,
            restart_iters: 500,
            main_iters: 15_000,
            seed: 0,
            trace_every: 1,
            init_std: 0.0,
            clamp_probes: false,
            parallel_restarts: false,
        }
    }
}

impl OptimizerConfig {
    pub fn effective_learning_rate(&self, k: usize) -> f64 {
        self.learning_rate.unwrap_or(1.0 / k as f64)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |msg: &str| Err(RunError::Config(msg.to_string()));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and > 0");
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning rate must be finite and > 0");
            }
        }
        if self.n_restarts == 0 {
            return bad("n_restarts must be at least 1");
        }
        if self.trace_every == 0 {
            return bad("trace_every must be at least 1");
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be finite and >= 0");
        }
        Ok(())
    }

    pub fn required_queries(&self) -> u64 {
        required_queries(self.n_restarts, self.restart_iters, self.main_iters)
    }
}

/// `n_restarts * (2 * restart_iters + 1) + 2 * main_iters`.
pub fn required_queries(n_restarts: usize, restart_iters: u64, main_iters: u64) -> u64 {
    n_restarts as u64 * (2 * restart_iters + 1) + 2 * main_iters
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub direction_sample: Vec<f64>,
    pub s_minus: f64,
    pub s_plus: f64,
    pub estimate: Vec<f64>,
}

/// Work done before a run stopped.
#[derive(Clone, Debug)]
pub struct PartialRun {
    /// Best coordinates known at the time of failure: the current main-phase
    /// iterate, else the best finished restart, else the interrupted one.
    pub coords: LatentCoords,
    pub trace: RunTrace,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("coordinate length {found} does not match basis rank {expected}")]
    RankMismatch { expected: usize, found: usize },
    #[error("run needs {required} queries but only {available} remain")]
    InsufficientBudget { required: u64, available: u64 },
    #[error("run interrupted after {} queries: {source}", .partial.trace.queries_used)]
    Interrupted {
        source: OracleError,
        partial: Box<PartialRun>,
    },
}

impl RunError {
    pub fn oracle_error(&self) -> Option<&OracleError> {
        match self {
            RunError::Interrupted { source, .. } => Some(source),
            _ => None,
        }
    }

    pub fn partial(&self) -> Option<&PartialRun> {
        match self {
            RunError::Interrupted { partial, .. } => Some(partial),
            _ => None,
        }
    }

    pub fn is_budget_exhausted(&self) -> bool {
        matches!(self, RunError::InsufficientBudget { .. })
            || self.oracle_error().is_some_and(OracleError::is_budget_exhausted)
    }

    pub fn is_connection(&self) -> bool {
        self.oracle_error().is_some_and(OracleError::is_connection)
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Unclamped `mean + E c_final`.
    pub image: ImageTensor,
    pub coords: LatentCoords,
    pub trace: RunTrace,
}

/// Everything a single ascent needs besides the coordinates.
struct Probe<'a> {
    basis: &'a EigenBasis,
    oracle: &'a dyn SimilarityOracle,
    target: &'a TargetId,
    clamp: bool,
}

impl Probe<'_> {
    fn image(&self, coords: &[f64]) -> ImageTensor {
        let img = self
            .basis
            .synthesize_slice(coords)
            .expect("coordinate length checked against basis rank");
        if self.clamp {
            img.clamped()
        } else {
            img
        }
    }

    fn score(&self, coords: &[f64], used: &mut u64) -> Result<f64, OracleError> {
        let s = self.oracle.query(&self.image(coords), self.target)?;
        *used += 1;
        Ok(s)
    }

    /// Queries `c - u` then `c + u`.
    fn pair(&self, coords: &[f64], u: &[f64], used: &mut u64) -> Result<(f64, f64), OracleError> {
        let minus: Vec<f64> = coords.iter().zip(u).map(|(c, u)| c - u).collect();
        let plus: Vec<f64> = coords.iter().zip(u).map(|(c, u)| c + u).collect();
        let s_minus = self.score(&minus, used)?;
        let s_plus = self.score(&plus, used)?;
        Ok((s_minus, s_plus))
    }
}

fn gradient_factor(k: usize, sigma: f64, s_minus: f64, s_plus: f64) -> f64 {
    k as f64 * (s_plus - s_minus) / (2.0 * sigma)
}

fn ensure_pair_budget(oracle: &dyn SimilarityOracle) -> Result<(), OracleError> {
    let ledger = oracle.ledger();
    match (ledger.remaining(), ledger.budget()) {
        (Some(rem), Some(budget)) if rem < 2 => Err(OracleError::BudgetExhausted {
            used: ledger.used(),
            budget,
        }),
        _ => Ok(()),
    }
}

/// One two-point estimate with a direction drawn from `rng` (scaled by
/// `sigma`). Fails without querying if fewer than two queries remain.
pub fn estimate_gradient(
    coords: &LatentCoords,
    basis: &EigenBasis,
    oracle: &dyn SimilarityOracle,
    target: &TargetId,
    sigma: f64,
    rng: &mut NormalStream,
) -> Result<GradientEstimate, OracleError> {
    let mut u = vec![0.0; coords.len()];
    rng.fill(&mut u, sigma);
    estimate_gradient_along(coords, basis, oracle, target, sigma, u, false)
}

/// [`estimate_gradient`] with a caller-supplied direction `u`.
pub fn estimate_gradient_along(
    coords: &LatentCoords,
    basis: &EigenBasis,
    oracle: &dyn SimilarityOracle,
    target: &TargetId,
    sigma: f64,
    u: Vec<f64>,
    clamp_probes: bool,
) -> Result<GradientEstimate, OracleError> {
    let k = basis.rank();
    if coords.len() != k || u.len() != k {
        return Err(OracleError::DimensionMismatch {
            expected: k,
            found: if coords.len() != k { coords.len() } else { u.len() },
        });
    }
    ensure_pair_budget(oracle)?;
    let probe = Probe {
        basis,
        oracle,
        target,
        clamp: clamp_probes,
    };
    let mut used = 0;
    let (s_minus, s_plus) = probe.pair(coords.as_slice(), &u, &mut used)?;
    let f = gradient_factor(k, sigma, s_minus, s_plus);
    let estimate = u.iter().map(|x| f * x).collect();
    Ok(GradientEstimate {
        direction_sample: u,
        s_minus,
        s_plus,
        estimate,
    })
}

struct Stepper<'a> {
    probe: Probe<'a>,
    sigma: f64,
    lr: f64,
    trace_every: u64,
    monitors: &'a [&'a dyn TraceMonitor],
}

impl Stepper<'_> {
    fn readings(&self, coords: &[f64]) -> Vec<f64> {
        if self.monitors.is_empty() {
            return Vec::new();
        }
        let img = self.probe.basis.synthesize_slice(coords).expect("rank checked");
        self.monitors.iter().map(|m| m.measure(&img)).collect()
    }

    /// `iters` estimate-and-step updates, appending trace rows. `used` is the
    /// run-local query counter and is kept exact even on failure.
    #[allow(clippy::too_many_arguments)]
    fn ascend(
        &self,
        coords: &mut [f64],
        iters: u64,
        dirs: &mut NormalStream,
        phase: Phase,
        restart: Option<usize>,
        used: &mut u64,
        records: &mut Vec<TraceRecord>,
    ) -> Result<(), OracleError> {
        let k = coords.len();
        let mut u = vec![0.0; k];
        for it in 1..=iters {
            ensure_pair_budget(self.probe.oracle)?;
            dirs.fill(&mut u, self.sigma);
            let (s_minus, s_plus) = self.probe.pair(coords, &u, used)?;
            let f = gradient_factor(k, self.sigma, s_minus, s_plus);
            for (c, x) in coords.iter_mut().zip(&u) {
                *c += self.lr * (f * x);
            }
            if it % self.trace_every == 0 || it == iters {
                records.push(TraceRecord {
                    phase,
                    restart,
                    iteration: it,
                    queries_used: *used,
                    score: 0.5 * (s_minus + s_plus),
                    monitors: self.readings(coords),
                });
            }
        }
        Ok(())
    }
}

fn check_rank(basis: &EigenBasis, coords: &LatentCoords) -> Result<(), RunError> {
    if coords.len() != basis.rank() {
        return Err(RunError::RankMismatch {
            expected: basis.rank(),
            found: coords.len(),
        });
    }
    Ok(())
}

fn monitor_names(monitors: &[&dyn TraceMonitor]) -> Vec<String> {
    monitors.iter().map(|m| m.name().to_string()).collect()
}

/// `iters` sequential updates from `coords`, directions drawn from the main
/// stream of `config.seed`. Consumes exactly `2 * iters` queries.
pub fn ascend(
    coords: &LatentCoords,
    basis: &EigenBasis,
    oracle: &dyn SimilarityOracle,
    target: &TargetId,
    config: &OptimizerConfig,
    iters: u64,
) -> Result<(LatentCoords, RunTrace), RunError> {
    ascend_with_monitors(coords, basis, oracle, target, config, iters, &[])
}

pub fn ascend_with_monitors(
    coords: &LatentCoords,
    basis: &EigenBasis,
    oracle: &dyn SimilarityOracle,
    target: &TargetId,
    config: &OptimizerConfig,
    iters: u64,
    monitors: &[&dyn TraceMonitor],
) -> Result<(LatentCoords, RunTrace), RunError> {
    config.validate()?;
    check_rank(basis, coords)?;
    let stepper = Stepper {
        probe: Probe {
            basis,
            oracle,
            target,
            clamp: config.clamp_probes,
        },
        sigma: config.sigma,
        lr: config.effective_learning_rate(basis.rank()),
        trace_every: config.trace_every,
        monitors,
    };
    let mut c = coords.0.clone();
    let mut trace = RunTrace::empty(basis.rank(), monitor_names(monitors));
    let mut used = 0;
    let mut dirs = NormalStream::new(config.seed, streams::MAIN);
    let res = stepper.ascend(
        &mut c,
        iters,
        &mut dirs,
        Phase::Main,
        None,
        &mut used,
        &mut trace.records,
    );
    trace.queries_used = used;
    trace.final_coords = LatentCoords(c.clone());
    match res {
        Ok(()) => Ok((LatentCoords(c), trace)),
        Err(source) => Err(RunError::Interrupted {
            source,
            partial: Box::new(PartialRun {
                coords: LatentCoords(c),
                trace,
            }),
        }),
    }
}

/// Multi-start reconstruction of `target`.
///
/// Restart `r` starts at `init_std * N(0, I)` drawn from stream
/// `INIT_BASE + r` (the zero vector when `init_std == 0`) and draws its
/// directions from `RESTART_BASE + r`; the main phase uses `MAIN`. The run is
/// rejected before any query if the oracle cannot cover
/// [`OptimizerConfig::required_queries`].
pub fn reconstruct(
    basis: &EigenBasis,
    oracle: &dyn SimilarityOracle,
    target: &TargetId,
    config: &OptimizerConfig,
) -> Result<Reconstruction, RunError> {
    reconstruct_with_monitors(basis, oracle, target, config, &[])
}

struct RestartOutcome {
    coords: Vec<f64>,
    records: Vec<TraceRecord>,
    used: u64,
    score: Option<f64>,
    error: Option<OracleError>,
}

pub fn reconstruct_with_monitors(
    basis: &EigenBasis,
    oracle: &dyn SimilarityOracle,
    target: &TargetId,
    config: &OptimizerConfig,
    monitors: &[&dyn TraceMonitor],
) -> Result<Reconstruction, RunError> {
    config.validate()?;
    let required = config.required_queries();
    if let Some(available) = oracle.ledger().remaining() {
        if available < required {
            return Err(RunError::InsufficientBudget { required, available });
        }
    }
    let k = basis.rank();
    let stepper = Stepper {
        probe: Probe {
            basis,
            oracle,
            target,
            clamp: config.clamp_probes,
        },
        sigma: config.sigma,
        lr: config.effective_learning_rate(k),
        trace_every: config.trace_every,
        monitors,
    };

    let run_restart = |r: usize| -> RestartOutcome {
        let init = streams::INIT_BASE + r as u64;
        let mut coords: Vec<f64> = if config.init_std > 0.0 {
            (0..k as u64)
                .map(|i| config.init_std * rng::normal(config.seed, init, i))
                .collect()
        } else {
            vec![0.0; k]
        };
        let mut dirs = NormalStream::new(config.seed, streams::RESTART_BASE + r as u64);
        let mut records = Vec::new();
        let mut used = 0;
        let res = stepper
            .ascend(
                &mut coords,
                config.restart_iters,
                &mut dirs,
                Phase::Restart,
                Some(r),
                &mut used,
                &mut records,
            )
            .and_then(|()| stepper.probe.score(&coords, &mut used));
        match res {
            Ok(s) => {
                records.push(TraceRecord {
                    phase: Phase::Select,
                    restart: Some(r),
                    iteration: config.restart_iters,
                    queries_used: used,
                    score: s,
                    monitors: stepper.readings(&coords),
                });
                RestartOutcome {
                    coords,
                    records,
                    used,
                    score: Some(s),
                    error: None,
                }
            }
            Err(e) => RestartOutcome {
                coords,
                records,
                used,
                score: None,
                error: Some(e),
            },
        }
    };

    let outcomes: Vec<RestartOutcome> = if config.parallel_restarts && config.n_restarts > 1 {
        thread::scope(|s| {
            let handles: Vec<_> = (0..config.n_restarts)
                .map(|r| s.spawn(move || run_restart(r)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("restart thread panicked"))
                .collect()
        })
    } else {
        let mut out = Vec::with_capacity(config.n_restarts);
        for r in 0..config.n_restarts {
            let o = run_restart(r);
            let failed = o.error.is_some();
            out.push(o);
            if failed {
                break;
            }
        }
        out
    };

    // Merge in restart order so the trace is independent of scheduling.
    let mut trace = RunTrace::empty(k, monitor_names(monitors));
    let mut used = 0;
    let mut best: Option<(usize, f64)> = None;
    let mut failure: Option<(OracleError, Vec<f64>)> = None;
    let mut coords_by_restart = Vec::with_capacity(outcomes.len());
    for (r, o) in outcomes.into_iter().enumerate() {
        for mut rec in o.records {
            rec.queries_used += used;
            trace.records.push(rec);
        }
        used += o.used;
        if let Some(e) = o.error {
            failure = Some((e, o.coords));
            break;
        }
        let s = o.score.expect("finished restart has a score");
        trace.restart_scores.push(s);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((r, s));
        }
        coords_by_restart.push(o.coords);
    }
    trace.queries_used = used;

    if let Some((source, interrupted)) = failure {
        let coords = match best {
            Some((r, _)) => coords_by_restart.swap_remove(r),
            None => interrupted,
        };
        trace.selected_restart = best.map(|(r, _)| r);
        trace.final_coords = LatentCoords(coords.clone());
        return Err(RunError::Interrupted {
            source,
            partial: Box::new(PartialRun {
                coords: LatentCoords(coords),
                trace,
            }),
        });
    }

    let (winner, _) = best.expect("n_restarts >= 1");
    trace.selected_restart = Some(winner);
    let mut c = coords_by_restart.swap_remove(winner);
    let mut dirs = NormalStream::new(config.seed, streams::MAIN);
    let res = stepper.ascend(
        &mut c,
        config.main_iters,
        &mut dirs,
        Phase::Main,
        None,
        &mut used,
        &mut trace.records,
    );
    trace.queries_used = used;
    trace.final_coords = LatentCoords(c.clone());
    match res {
        Ok(()) => Ok(Reconstruction {
            image: basis.synthesize_slice(&c).expect("rank checked"),
            coords: LatentCoords(c),
            trace,
        }),
        Err(source) => Err(RunError::Interrupted {
            source,
            partial: Box::new(PartialRun {
                coords: LatentCoords(c),
                trace,
            }),
        }),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use super::*;
    use crate::oracle::{make_cosine_oracle, QueryLedger, SyntheticEmbedder};

    /// Identity basis on a `k x 1 x 1` image: pixel i == coordinate i.
    fn identity_basis(k: usize) -> EigenBasis {
        let mut comps = vec![0f32; k * k];
        for i in 0..k {
            comps[i * k + i] = 1.0;
        }
        EigenBasis::from_parts((k as u32, 1, 1), vec![0.0; k], comps, vec![1.0; k]).unwrap()
    }

    fn tid() -> TargetId {
        TargetId::new("t").unwrap()
    }

    /// Scores computed from the probe pixels (== coordinates for the identity basis).
    struct FnOracle<F> {
        f: F,
        ledger: QueryLedger,
    }

    impl<F: Fn(&[f32]) -> f64 + Send + Sync> FnOracle<F> {
        fn new(f: F, budget: Option<u64>) -> Self {
            Self {
                f,
                ledger: QueryLedger::new(budget),
            }
        }
    }

    impl<F: Fn(&[f32]) -> f64 + Send + Sync> SimilarityOracle for FnOracle<F> {
        fn query(&self, image: &ImageTensor, _: &TargetId) -> Result<f64, OracleError> {
            let s = (self.f)(image.pixels());
            self.ledger.try_acquire()?;
            Ok(s)
        }
        fn ledger(&self) -> &QueryLedger {
            &self.ledger
        }
        fn targets(&self) -> Vec<TargetId> {
            vec![tid()]
        }
    }

    fn small_config() -> OptimizerConfig {
        OptimizerConfig {
            n_restarts: 3,
            restart_iters: 7,
            main_iters: 11,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn injected_direction_estimate() {
        let basis = identity_basis(4);
        let o = FnOracle::new(|p| p[0] as f64, None);
        let c = LatentCoords::zeros(4);
        let g = estimate_gradient_along(&c, &basis, &o, &tid(), 0.3, vec![0.3, 0.0, 0.0, 0.0], false).unwrap();
        assert!((g.s_minus + 0.3).abs() < 1e-7 && (g.s_plus - 0.3).abs() < 1e-7);
        assert!((g.estimate[0] - 1.2).abs() < 1e-6);
        assert_eq!(&g.estimate[1..], &[0.0, 0.0, 0.0]);
        assert_eq!(o.ledger().used(), 2);
    }

    #[test]
    fn estimate_matches_formula_exactly() {
        let basis = identity_basis(5);
        let o = FnOracle::new(|p| p.iter().map(|&x| (x as f64).sin()).sum(), None);
        let mut rng = NormalStream::new(3, 9);
        let c = LatentCoords(vec![0.1, -0.2, 0.3, 0.0, 0.5]);
        let g = estimate_gradient(&c, &basis, &o, &tid(), 0.25, &mut rng).unwrap();
        for (e, u) in g.estimate.iter().zip(&g.direction_sample) {
            assert_eq!(*e, 5.0 * (g.s_plus - g.s_minus) / (2.0 * 0.25) * u);
        }
    }

    #[test]
    fn constant_oracle_gives_zero_estimate_and_no_motion() {
        let basis = identity_basis(6);
        let o = FnOracle::new(|_| 0.7, None);
        let mut rng = NormalStream::new(1, 1);
        let g = estimate_gradient(&LatentCoords::zeros(6), &basis, &o, &tid(), 0.3, &mut rng).unwrap();
        assert!(g.estimate.iter().all(|&x| x == 0.0));

        let start = LatentCoords(vec![0.5; 6]);
        let (end, trace) = ascend(&start, &basis, &o, &tid(), &small_config(), 25).unwrap();
        assert_eq!(end, start);
        assert_eq!(trace.queries_used, 50);

        let rec = reconstruct(&basis, &o, &tid(), &small_config()).unwrap();
        assert!(rec.coords.0.iter().all(|&x| x == 0.0));
        assert_eq!(rec.image.pixels(), basis.mean());
    }

    #[test]
    fn linear_oracle_expectation() {
        let k = 16;
        let basis = identity_basis(k);
        let w: Vec<f64> = (0..k).map(|i| (i as f64 - 7.5) / 10.0).collect();
        let w2 = w.clone();
        let o = FnOracle::new(move |p| p.iter().zip(&w2).map(|(&x, w)| x as f64 * w).sum(), None);
        let mut rng = NormalStream::new(11, 77);
        let c = LatentCoords::zeros(k);
        let n = 10_000;
        let mut mean = vec![0.0; k];
        for _ in 0..n {
            let g = estimate_gradient(&c, &basis, &o, &tid(), 0.3, &mut rng).unwrap();
            for (m, e) in mean.iter_mut().zip(&g.estimate) {
                *m += e / n as f64;
            }
        }
        let expect: Vec<f64> = w.iter().map(|x| k as f64 * 0.3 * x).collect();
        let err: f64 = mean
            .iter()
            .zip(&expect)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = expect.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(err / norm <= 0.05, "relative error {}", err / norm);
    }

    #[test]
    fn pair_precheck_refuses_without_querying() {
        let basis = identity_basis(3);
        let o = FnOracle::new(|_| 0.1, Some(1));
        let mut rng = NormalStream::new(0, 0);
        let err = estimate_gradient(&LatentCoords::zeros(3), &basis, &o, &tid(), 0.3, &mut rng).unwrap_err();
        assert!(err.is_budget_exhausted());
        assert_eq!(o.ledger().used(), 0);
    }

    #[test]
    fn quadratic_oracle_converges() {
        let k = 16;
        let basis = identity_basis(k);
        let target: Vec<f64> = (0..k).map(|i| rng::normal(5, 5, i as u64)).collect();
        let t2 = target.clone();
        let z = 4.0 * k as f64;
        let o = FnOracle::new(
            move |p| 1.0 - p.iter().zip(&t2).map(|(&x, t)| (x as f64 - t).powi(2)).sum::<f64>() / z,
            None,
        );
        let cfg = OptimizerConfig {
            learning_rate: Some(0.5),
            seed: 8,
            trace_every: 100,
            ..Default::default()
        };
        let (c, _) = ascend(&LatentCoords::zeros(k), &basis, &o, &tid(), &cfg, 5000).unwrap();
        let s = 1.0 - c.0.iter().zip(&target).map(|(x, t)| (x - t).powi(2)).sum::<f64>() / z;
        assert!(s >= 0.99, "final score {s}");
    }

    #[test]
    fn degenerate_schedule_is_mean_face_with_one_query() {
        let basis = identity_basis(4);
        let o = FnOracle::new(|p| p[1] as f64, None);
        let cfg = OptimizerConfig {
            n_restarts: 1,
            restart_iters: 0,
            main_iters: 0,
            ..Default::default()
        };
        let rec = reconstruct(&basis, &o, &tid(), &cfg).unwrap();
        assert_eq!(rec.image.pixels(), basis.mean());
        assert_eq!(o.ledger().used(), 1);
        assert_eq!(rec.trace.queries_used, 1);
        assert_eq!(rec.trace.records.len(), 1);
        assert_eq!(rec.trace.records[0].phase, Phase::Select);
    }

    #[test]
    fn query_count_and_trace_increments() {
        let basis = identity_basis(4);
        let o = FnOracle::new(|p| -(p[0] as f64 - 0.4).powi(2), None);
        let cfg = small_config();
        let rec = reconstruct(&basis, &o, &tid(), &cfg).unwrap();
        assert_eq!(o.ledger().used(), cfg.required_queries());
        assert_eq!(rec.trace.queries_used, cfg.required_queries());
        let mut prev = 0;
        for r in &rec.trace.records {
            let step = if r.phase == Phase::Select { 1 } else { 2 };
            assert_eq!(r.queries_used, prev + step);
            prev = r.queries_used;
        }
        assert_eq!(rec.trace.restart_scores.len(), 3);
    }

    #[test]
    fn ties_pick_lowest_restart() {
        let basis = identity_basis(3);
        let o = FnOracle::new(|_| 0.25, None);
        let rec = reconstruct(&basis, &o, &tid(), &small_config()).unwrap();
        assert_eq!(rec.trace.selected_restart, Some(0));
    }

    #[test]
    fn insufficient_budget_is_rejected_up_front() {
        let basis = identity_basis(3);
        let cfg = small_config();
        let o = FnOracle::new(|_| 0.0, Some(cfg.required_queries() - 1));
        let err = reconstruct(&basis, &o, &tid(), &cfg).err().unwrap();
        assert!(matches!(err, RunError::InsufficientBudget { .. }));
        assert_eq!(o.ledger().used(), 0);
    }

    #[test]
    fn exhaustion_mid_run_keeps_partial_trace() {
        let basis = identity_basis(3);
        let o = FnOracle::new(|p| -(p[2] as f64 - 1.0).powi(2), Some(1000));
        // Another consumer drains the shared budget after the precheck.
        let cfg = small_config();
        let (c, _) = ascend(&LatentCoords::zeros(3), &basis, &o, &tid(), &cfg, 494).unwrap();
        assert_eq!(c.len(), 3);
        let err = ascend(&LatentCoords::zeros(3), &basis, &o, &tid(), &cfg, 10)
            .err()
            .unwrap();
        let p = err.partial().unwrap();
        assert!(err.is_budget_exhausted());
        assert_eq!(p.trace.queries_used, 12);
        assert_eq!(p.trace.records.len(), 6);
    }

    #[test]
    fn runs_are_reproducible_and_parallel_matches_sequential() {
        let emb = Arc::new(SyntheticEmbedder::new(3, 8, (4, 1, 1), false));
        let mut m = BTreeMap::new();
        m.insert(tid(), ImageTensor::new(4, 1, 1, vec![0.9, -0.3, 0.2, 0.5]).unwrap());
        let basis = identity_basis(4);
        let cfg = OptimizerConfig {
            init_std: 0.5,
            ..small_config()
        };
        let run = |cfg: &OptimizerConfig| {
            let o = make_cosine_oracle(emb.clone(), &m, None).unwrap();
            reconstruct(&basis, &o, &tid(), cfg).unwrap()
        };
        let (a, b) = (run(&cfg), run(&cfg));
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.image, b.image);
        let par = run(&OptimizerConfig {
            parallel_restarts: true,
            ..cfg.clone()
        });
        assert_eq!(a.trace, par.trace);
        let other = run(&OptimizerConfig { seed: 43, ..cfg });
        assert_ne!(a.trace, other.trace);
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let basis = identity_basis(2);
        let o = FnOracle::new(|p| p[0] as f64, None);
        let cfg = OptimizerConfig {
            n_restarts: 1,
            restart_iters: 2,
            main_iters: 3,
            ..Default::default()
        };
        let rec = reconstruct(&basis, &o, &tid(), &cfg).unwrap();
        let csv = rec.trace.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "phase,restart,iteration,queries_used,score");
        assert_eq!(lines.len(), 1 + 2 + 1 + 3);
        assert!(lines[3].starts_with("select,0,2,5,"));
        assert!(lines[6].starts_with("main,,3,11,"));
    }
}
