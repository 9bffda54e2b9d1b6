//! C ABI over `simrecon`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible function
//! returns a [`SimreconStatus`]; on failure a message for the calling thread
//! is available from [`simrecon_last_error`]. Pixel buffers are `f32`,
//! row-major, channel-interleaved.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use simrecon::netbox::RemoteOracle;
use simrecon::{
    cosine, kfold_accuracy, load_basis, make_cosine_oracle, optimizer, EigenBasis, ImageTensor, LatentCoords,
    OptimizerConfig, OracleError, RunError, SimilarityOracle, SyntheticEmbedder, TargetId, VerificationPair,
};

/// Passed as a budget to mean "no limit".
pub const SIMRECON_UNLIMITED: u64 = u64::MAX;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimreconStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    BudgetExhausted = 5,
    Connection = 6,
    Oracle = 7,
    Internal = 8,
}

pub struct SimreconBasis(EigenBasis);

pub struct SimreconEmbedder(Arc<SyntheticEmbedder>);

pub struct SimreconOracle {
    inner: Box<dyn SimilarityOracle>,
    target: TargetId,
}

/// Mirrors `OptimizerConfig`. A `learning_rate` of 0 selects the default 1/k.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SimreconOptimizerConfig {
    pub sigma: f64,
    pub learning_rate: f64,
    pub n_restarts: u64,
    pub restart_iters: u64,
    pub main_iters: u64,
    pub seed: u64,
    pub init_std: f64,
    pub clamp_probes: bool,
    pub parallel_restarts: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SimreconStatus, String);

impl Failure {
    fn arg(m: impl Into<String>) -> Self {
        Failure(SimreconStatus::InvalidArgument, m.into())
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        let code = if e.is_budget_exhausted() {
            SimreconStatus::BudgetExhausted
        } else if e.is_connection() {
            SimreconStatus::Connection
        } else {
            SimreconStatus::Oracle
        };
        Failure(code, e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = if e.is_budget_exhausted() {
            SimreconStatus::BudgetExhausted
        } else if e.is_connection() {
            SimreconStatus::Connection
        } else if matches!(e, RunError::Config(_) | RunError::RankMismatch { .. }) {
            SimreconStatus::InvalidArgument
        } else {
            SimreconStatus::Oracle
        };
        Failure(code, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SimreconStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SimreconStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            SimreconStatus::Internal
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SimreconStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(SimreconStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(SimreconStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure(SimreconStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    let s = nonnull(p, what)?;
    CStr::from_ptr(s)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Failure::arg(format!("{what} is not UTF-8")))
}

fn budget_of(b: u64) -> Option<u64> {
    (b != SIMRECON_UNLIMITED).then_some(b)
}

fn image(dims: (u32, u32, u32), pixels: &[f32]) -> Result<ImageTensor, Failure> {
    ImageTensor::new(dims.0, dims.1, dims.2, pixels.to_vec()).map_err(|e| Failure::arg(e.to_string()))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn simrecon_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn simrecon_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Standard normal draw number `index` of `(seed, stream)`.
#[no_mangle]
pub extern "C" fn simrecon_philox_normal(seed: u64, stream: u64, index: u64) -> f64 {
    simrecon::rng::normal(seed, stream, index)
}

/// Queries consumed by a run: `n_restarts * (2 * restart_iters + 1) + 2 * main_iters`.
#[no_mangle]
pub extern "C" fn simrecon_required_queries(n_restarts: u64, restart_iters: u64, main_iters: u64) -> u64 {
    simrecon::required_queries(n_restarts as usize, restart_iters, main_iters)
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn simrecon_basis_load(path: *const c_char, out: *mut *mut SimreconBasis) -> SimreconStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = string(path, "path")?;
        let b = load_basis(&path).map_err(|e| {
            let code = match e {
                simrecon::BasisError::Io(_) => SimreconStatus::Io,
                _ => SimreconStatus::Format,
            };
            Failure(code, format!("{path}: {e}"))
        })?;
        *out = Box::into_raw(Box::new(SimreconBasis(b)));
        Ok(())
    })
}

/// # Safety
/// `basis` must come from [`simrecon_basis_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn simrecon_basis_free(basis: *mut SimreconBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Writes width, height, channels and rank of `basis`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn simrecon_basis_shape(
    basis: *const SimreconBasis,
    width: *mut u32,
    height: *mut u32,
    channels: *mut u32,
    rank: *mut u64,
) -> SimreconStatus {
    guard(|| {
        let b = &nonnull(basis, "basis")?.0;
        let (w, h, c) = b.dims();
        *out_ptr(width, "width")? = w;
        *out_ptr(height, "height")? = h;
        *out_ptr(channels, "channels")? = c;
        *out_ptr(rank, "rank")? = b.rank() as u64;
        Ok(())
    })
}

/// `out_pixels = mean + sum_i coords[i] * s_i * u_i`; `k` must equal the
/// rank and `d` the pixel count.
///
/// # Safety
/// Buffers must hold `k` and `d` elements.
#[no_mangle]
pub unsafe extern "C" fn simrecon_basis_synthesize(
    basis: *const SimreconBasis,
    coords: *const f64,
    k: usize,
    out_pixels: *mut f32,
    d: usize,
) -> SimreconStatus {
    guard(|| {
        let b = &nonnull(basis, "basis")?.0;
        let c = slice(coords, k, "coords")?;
        let out = slice_mut(out_pixels, d, "out_pixels")?;
        if d != b.dim() {
            return Err(Failure::arg(format!(
                "pixel buffer holds {d}, basis dim is {}",
                b.dim()
            )));
        }
        let img = b.synthesize_slice(c).map_err(|e| Failure::arg(e.to_string()))?;
        out.copy_from_slice(img.pixels());
        Ok(())
    })
}

/// Coordinates of `pixels` in `basis`.
///
/// # Safety
/// Buffers must hold `d` and `k` elements.
#[no_mangle]
pub unsafe extern "C" fn simrecon_basis_project(
    basis: *const SimreconBasis,
    pixels: *const f32,
    d: usize,
    out_coords: *mut f64,
    k: usize,
) -> SimreconStatus {
    guard(|| {
        let b = &nonnull(basis, "basis")?.0;
        let img = image(b.dims(), slice(pixels, d, "pixels")?)?;
        let out = slice_mut(out_coords, k, "out_coords")?;
        if k != b.rank() {
            return Err(Failure::arg(format!(
                "coordinate buffer holds {k}, rank is {}",
                b.rank()
            )));
        }
        let c = b.project(&img).map_err(|e| Failure::arg(e.to_string()))?;
        out.copy_from_slice(&c.0);
        Ok(())
    })
}

/// Synthetic embedder over `width x height x channels` images. With
/// `flip_concat` the output is twice `embed_dim` long.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn simrecon_embedder_new(
    seed: u64,
    embed_dim: usize,
    width: u32,
    height: u32,
    channels: u32,
    flip_concat: bool,
    out: *mut *mut SimreconEmbedder,
) -> SimreconStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if embed_dim == 0 || width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Failure::arg(
                "embedder needs embed_dim > 0, nonzero size and 1 or 3 channels",
            ));
        }
        let e = SyntheticEmbedder::new(seed, embed_dim, (width, height, channels), flip_concat);
        *out = Box::into_raw(Box::new(SimreconEmbedder(Arc::new(e))));
        Ok(())
    })
}

/// # Safety
/// `embedder` must come from [`simrecon_embedder_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn simrecon_embedder_free(embedder: *mut SimreconEmbedder) {
    if !embedder.is_null() {
        drop(Box::from_raw(embedder));
    }
}

/// Length of the vectors written by [`simrecon_embed`], or 0 for NULL.
///
/// # Safety
/// `embedder` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn simrecon_embedder_output_dim(embedder: *const SimreconEmbedder) -> usize {
    embedder.as_ref().map_or(0, |e| e.0.output_dim())
}

/// # Safety
/// `pixels` must hold `d` floats and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn simrecon_embed(
    embedder: *const SimreconEmbedder,
    pixels: *const f32,
    d: usize,
    out: *mut f64,
    out_len: usize,
) -> SimreconStatus {
    guard(|| {
        let e = &nonnull(embedder, "embedder")?.0;
        let img = image(e.dims(), slice(pixels, d, "pixels")?)?;
        let out = slice_mut(out, out_len, "out")?;
        if out_len != e.output_dim() {
            return Err(Failure::arg(format!(
                "output buffer holds {out_len}, embedding has {}",
                e.output_dim()
            )));
        }
        out.copy_from_slice(&e.embed(&img)?);
        Ok(())
    })
}

/// Cosine similarity of two length-`n` vectors.
///
/// # Safety
/// `a` and `b` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn simrecon_cosine(a: *const f64, b: *const f64, n: usize, out: *mut f64) -> SimreconStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = cosine(slice(a, n, "a")?, slice(b, n, "b")?)?;
        Ok(())
    })
}

/// Cosine oracle with a single enrolled identity `target_id` whose image is
/// `pixels`. `budget` may be [`SIMRECON_UNLIMITED`].
///
/// # Safety
/// `pixels` must hold `d` floats; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn simrecon_oracle_new_cosine(
    embedder: *const SimreconEmbedder,
    target_id: *const c_char,
    pixels: *const f32,
    d: usize,
    budget: u64,
    out: *mut *mut SimreconOracle,
) -> SimreconStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let e = &nonnull(embedder, "embedder")?.0;
        let target = TargetId::new(string(target_id, "target_id")?).map_err(|_| Failure::arg("empty target_id"))?;
        let img = image(e.dims(), slice(pixels, d, "pixels")?)?;
        let mut enrolled = BTreeMap::new();
        enrolled.insert(target.clone(), img);
        let o = make_cosine_oracle(e.clone(), &enrolled, budget_of(budget))?;
        *out = Box::into_raw(Box::new(SimreconOracle {
            inner: Box::new(o),
            target,
        }));
        Ok(())
    })
}

/// Oracle answering through a netbox server at `address` (`host:port`).
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn simrecon_oracle_connect(
    address: *const c_char,
    target_id: *const c_char,
    budget: u64,
    out: *mut *mut SimreconOracle,
) -> SimreconStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let addr = string(address, "address")?;
        let target = TargetId::new(string(target_id, "target_id")?).map_err(|_| Failure::arg("empty target_id"))?;
        let o = RemoteOracle::for_target(&addr, &target, budget_of(budget))?;
        *out = Box::into_raw(Box::new(SimreconOracle {
            inner: Box::new(o),
            target,
        }));
        Ok(())
    })
}

/// # Safety
/// `oracle` must come from an oracle constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn simrecon_oracle_free(oracle: *mut SimreconOracle) {
    if !oracle.is_null() {
        drop(Box::from_raw(oracle));
    }
}

/// Scores one image against the oracle's target, charging one query.
///
/// # Safety
/// `pixels` must hold `width * height * channels` floats.
#[no_mangle]
pub unsafe extern "C" fn simrecon_oracle_query(
    oracle: *const SimreconOracle,
    width: u32,
    height: u32,
    channels: u32,
    pixels: *const f32,
    out_score: *mut f64,
) -> SimreconStatus {
    guard(|| {
        let o = nonnull(oracle, "oracle")?;
        let out = out_ptr(out_score, "out_score")?;
        let d = width as usize * height as usize * channels as usize;
        let img = image((width, height, channels), slice(pixels, d, "pixels")?)?;
        *out = o.inner.query(&img, &o.target)?;
        Ok(())
    })
}

/// Queries charged so far, or 0 for NULL.
///
/// # Safety
/// `oracle` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn simrecon_oracle_queries_used(oracle: *const SimreconOracle) -> u64 {
    oracle.as_ref().map_or(0, |o| o.inner.ledger().used())
}

/// Default optimizer settings.
#[no_mangle]
pub extern "C" fn simrecon_optimizer_config_default() -> SimreconOptimizerConfig {
    let d = OptimizerConfig::default();
    SimreconOptimizerConfig {
        sigma: d.sigma,
        learning_rate: 0.0,
        n_restarts: d.n_restarts as u64,
        restart_iters: d.restart_iters,
        main_iters: d.main_iters,
        seed: d.seed,
        init_std: d.init_std,
        clamp_probes: d.clamp_probes,
        parallel_restarts: d.parallel_restarts,
    }
}

/// Runs the full multi-start reconstruction of the oracle's target.
/// On success writes the final coordinates (`k` = rank), the unclamped image
/// (`d` = basis dim) and the queries consumed. On a budget or connection
/// failure the best partial result is still written.
///
/// # Safety
/// Buffers must hold `k` and `d` elements; `queries_used` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn simrecon_reconstruct(
    basis: *const SimreconBasis,
    oracle: *const SimreconOracle,
    config: *const SimreconOptimizerConfig,
    out_coords: *mut f64,
    k: usize,
    out_pixels: *mut f32,
    d: usize,
    queries_used: *mut u64,
) -> SimreconStatus {
    guard(|| {
        let b = &nonnull(basis, "basis")?.0;
        let o = nonnull(oracle, "oracle")?;
        let c = nonnull(config, "config")?;
        let coords_out = slice_mut(out_coords, k, "out_coords")?;
        let pixels_out = slice_mut(out_pixels, d, "out_pixels")?;
        if k != b.rank() || d != b.dim() {
            return Err(Failure::arg(format!(
                "buffers hold k={k}, d={d}; basis has k={}, d={}",
                b.rank(),
                b.dim()
            )));
        }
        let config = OptimizerConfig {
            sigma: c.sigma,
            learning_rate: (c.learning_rate != 0.0).then_some(c.learning_rate),
            n_restarts: c.n_restarts as usize,
            restart_iters: c.restart_iters,
            main_iters: c.main_iters,
            seed: c.seed,
            init_std: c.init_std,
            clamp_probes: c.clamp_probes,
            parallel_restarts: c.parallel_restarts,
            ..OptimizerConfig::default()
        };
        let mut write = |coords: &LatentCoords, used: u64| {
            coords_out.copy_from_slice(&coords.0);
            let img = b.synthesize(coords).expect("coords match rank");
            pixels_out.copy_from_slice(img.pixels());
            if let Some(q) = queries_used.as_mut() {
                *q = used;
            }
        };
        match optimizer::reconstruct(b, &o.inner, &o.target, &config) {
            Ok(r) => {
                write(&r.coords, r.trace.queries_used);
                Ok(())
            }
            Err(e) => {
                if let Some(p) = e.partial() {
                    write(&p.coords, p.trace.queries_used);
                }
                Err(e.into())
            }
        }
    })
}

/// K-fold verification accuracy over `n` scored pairs; `same[i]` is 1 for a
/// genuine pair and 0 otherwise. Per-fold accuracies are written to
/// `out_fold_accuracies` when it is not NULL (it must then hold `folds`).
///
/// # Safety
/// `scores` and `same` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn simrecon_kfold_accuracy(
    scores: *const f64,
    same: *const u8,
    n: usize,
    folds: usize,
    out_mean: *mut f64,
    out_fold_accuracies: *mut f64,
) -> SimreconStatus {
    guard(|| {
        let scores = slice(scores, n, "scores")?;
        let same = slice(same, n, "same")?;
        let out_mean = out_ptr(out_mean, "out_mean")?;
        let mut pairs = Vec::with_capacity(n);
        for (i, (&s, &l)) in scores.iter().zip(same).enumerate() {
            if l > 1 {
                return Err(Failure::arg(format!("label {i} is {l}, expected 0 or 1")));
            }
            pairs.push(VerificationPair::new(s, l == 1));
        }
        let r = kfold_accuracy(&pairs, folds).map_err(|e| Failure::arg(e.to_string()))?;
        *out_mean = r.mean_accuracy;
        if !out_fold_accuracies.is_null() {
            slice_mut(out_fold_accuracies, folds, "out_fold_accuracies")?.copy_from_slice(&r.accuracies);
        }
        Ok(())
    })
}
