//! PCA eigenface subspace.
//!
//! A basis holds the mean image `mu`, `k` orthonormal components `u_i` and
//! their sample standard deviations `s_i`. Latent coordinates are whitened:
//! an image maps to `c_i = <x - mu, u_i> / s_i` and back to
//! `x = mu + sum_i c_i s_i u_i`, so projected training data has unit sample
//! variance along every axis.
//!
//! Basis file layout, little-endian:
//!
//! | field            | type           |
//! |------------------|----------------|
//! | magic            | `b"EIGBASIS"`  |
//! | version          | u32 = 1        |
//! | width            | u32            |
//! | height           | u32            |
//! | channels         | u32            |
//! | rank             | u64            |
//! | mean             | d x f32        |
//! | component_stds   | k x f32        |
//! | components       | k x d f32, row-major |

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::image::{ImageError, ImageTensor};

pub const BASIS_MAGIC: &[u8; 8] = b"EIGBASIS";
pub const BASIS_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 8;

/// Singular values at or below this fraction of the data's Frobenius norm are
/// treated as zero.
const DEGENERATE_REL_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("need at least 2 images to fit, got {0}")]
    TooFewImages(usize),
    #[error("image {index} has dims {found:?}, expected {expected:?}")]
    DimensionMismatch {
        index: usize,
        expected: (u32, u32, u32),
        found: (u32, u32, u32),
    },
    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("component {index} is degenerate (singular value {singular_value:e})")]
    DegenerateComponent { index: usize, singular_value: f64 },
    #[error("input has length {found}, basis expects {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("not a basis file (bad magic)")]
    BadMagic,
    #[error("unsupported basis file version {0}")]
    VersionMismatch(u32),
    #[error("basis file truncated: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },
    #[error("basis file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("non-finite value in {field}")]
    NonFinite { field: &'static str },
    #[error("invalid basis: {0}")]
    Invalid(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("basis file i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Whitened latent coordinates `c` of length `rank`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCoords(pub Vec<f64>);

impl LatentCoords {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Raw sidecar encoding: `k` little-endian f32 values, no header.
    pub fn to_f32_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
    }

    pub fn from_f32_le_bytes(bytes: &[u8]) -> Option<Self> {
        if !bytes.len().is_multiple_of(4) {
            return None;
        }
        Some(Self(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect(),
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis {
    width: u32,
    height: u32,
    channels: u32,
    mean: Vec<f32>,
    /// `rank x dim`, row-major.
    components: Vec<f32>,
    stds: Vec<f32>,
}

/// Extra numbers produced by a fit that are not stored in the basis file.
#[derive(Clone, Debug)]
pub struct FitStats {
    pub samples: usize,
    /// Total sample variance of the training data (trace of the covariance).
    pub total_variance: f64,
    /// Variance captured by the retained components.
    pub retained_variance: f64,
}

impl FitStats {
    pub fn retained_fraction(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.retained_variance / self.total_variance
        } else {
            0.0
        }
    }
}

impl EigenBasis {
    /// Assemble a basis from raw parts, checking shapes, finiteness,
    /// positivity and ordering of the standard deviations.
    pub fn from_parts(
        dims: (u32, u32, u32),
        mean: Vec<f32>,
        components: Vec<f32>,
        stds: Vec<f32>,
    ) -> Result<Self, BasisError> {
        let (width, height, channels) = dims;
        let d = width as usize * height as usize * channels as usize;
        if d == 0 {
            return Err(BasisError::Invalid("zero-sized image dims".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(BasisError::Invalid(format!("channels must be 1 or 3, got {channels}")));
        }
        let k = stds.len();
        if k == 0 {
            return Err(BasisError::Invalid("rank must be at least 1".into()));
        }
        if mean.len() != d {
            return Err(BasisError::LengthMismatch {
                expected: d,
                found: mean.len(),
            });
        }
        if components.len() != k * d {
            return Err(BasisError::LengthMismatch {
                expected: k * d,
                found: components.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(BasisError::NonFinite { field: "mean" });
        }
        if stds.iter().any(|v| !v.is_finite()) {
            return Err(BasisError::NonFinite {
                field: "component_stds",
            });
        }
        if components.iter().any(|v| !v.is_finite()) {
            return Err(BasisError::NonFinite { field: "components" });
        }
        if let Some(i) = stds.iter().position(|&s| s <= 0.0) {
            return Err(BasisError::DegenerateComponent {
                index: i,
                singular_value: stds[i] as f64,
            });
        }
        if stds.windows(2).any(|w| w[1] > w[0]) {
            return Err(BasisError::Invalid("component_stds must be nonincreasing".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            mean,
            components,
            stds,
        })
    }

    pub fn dims(&self) -> (u32, u32, u32) {
        (self.width, self.height, self.channels)
    }

    /// Flattened image length `d`.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of retained components `k`.
    pub fn rank(&self) -> usize {
        self.stds.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn component(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.components[i * d..(i + 1) * d]
    }

    pub fn components(&self) -> &[f32] {
        &self.components
    }

    pub fn component_stds(&self) -> &[f32] {
        &self.stds
    }

    pub fn mean_image(&self) -> ImageTensor {
        ImageTensor::new(self.width, self.height, self.channels, self.mean.clone())
            .expect("basis invariants guarantee a valid mean image")
    }

    /// Keep only the leading `rank` components.
    pub fn truncated(&self, rank: usize) -> Result<Self, BasisError> {
        if rank == 0 || rank > self.rank() {
            return Err(BasisError::RankOutOfRange { rank, max: self.rank() });
        }
        Ok(Self {
            components: self.components[..rank * self.dim()].to_vec(),
            stds: self.stds[..rank].to_vec(),
            ..self.clone()
        })
    }

    /// `c_i = <x - mu, u_i> / s_i`.
    pub fn project(&self, image: &ImageTensor) -> Result<LatentCoords, BasisError> {
        if image.dims() != self.dims() {
            return Err(BasisError::LengthMismatch {
                expected: self.dim(),
                found: image.len(),
            });
        }
        let centered: Vec<f64> = image
            .pixels()
            .iter()
            .zip(&self.mean)
            .map(|(&x, &m)| x as f64 - m as f64)
            .collect();
        let coords = (0..self.rank())
            .map(|i| {
                let dot: f64 = self
                    .component(i)
                    .iter()
                    .zip(&centered)
                    .map(|(&u, &x)| u as f64 * x)
                    .sum();
                dot / self.stds[i] as f64
            })
            .collect();
        Ok(LatentCoords(coords))
    }

    /// `x = mu + sum_i c_i s_i u_i`, unclamped.
    pub fn synthesize(&self, coords: &LatentCoords) -> Result<ImageTensor, BasisError> {
        self.synthesize_slice(coords.as_slice())
    }

    pub fn synthesize_slice(&self, coords: &[f64]) -> Result<ImageTensor, BasisError> {
        if coords.len() != self.rank() {
            return Err(BasisError::LengthMismatch {
                expected: self.rank(),
                found: coords.len(),
            });
        }
        let mut acc: Vec<f64> = self.mean.iter().map(|&m| m as f64).collect();
        for (i, &c) in coords.iter().enumerate() {
            let w = c * self.stds[i] as f64;
            if w == 0.0 {
                continue;
            }
            for (a, &u) in acc.iter_mut().zip(self.component(i)) {
                *a += w * u as f64;
            }
        }
        let pixels = acc.into_iter().map(|v| v as f32).collect();
        Ok(ImageTensor::new(self.width, self.height, self.channels, pixels)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.dim() * (self.rank() + 1) + self.rank()));
        out.extend_from_slice(BASIS_MAGIC);
        out.extend_from_slice(&BASIS_VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.channels.to_le_bytes());
        out.extend_from_slice(&(self.rank() as u64).to_le_bytes());
        for v in self.mean.iter().chain(&self.stds).chain(&self.components) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BasisError> {
        if bytes.len() < 8 {
            return Err(BasisError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..8] != BASIS_MAGIC {
            return Err(BasisError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(BasisError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != BASIS_VERSION {
            return Err(BasisError::VersionMismatch(version));
        }
        let (width, height, channels) = (u32_at(12), u32_at(16), u32_at(20));
        let rank = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let d = width as u64 * height as u64 * channels as u64;
        let payload_floats = d
            .checked_mul(rank)
            .and_then(|kd| kd.checked_add(d))
            .and_then(|n| n.checked_add(rank))
            .ok_or_else(|| BasisError::Invalid("header sizes overflow".into()))?;
        let expected = (payload_floats as u128 * 4 + HEADER_LEN as u128).min(usize::MAX as u128) as usize;
        if bytes.len() < expected {
            return Err(BasisError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(BasisError::TrailingBytes(bytes.len() - expected));
        }
        let (d, k) = (d as usize, rank as usize);
        let floats: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mean = floats[..d].to_vec();
        let stds = floats[d..d + k].to_vec();
        let components = floats[d + k..].to_vec();
        Self::from_parts((width, height, channels), mean, components, stds)
    }
}

pub fn save_basis(basis: &EigenBasis, path: impl AsRef<Path>) -> Result<(), BasisError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&basis.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn load_basis(path: impl AsRef<Path>) -> Result<EigenBasis, BasisError> {
    EigenBasis::from_bytes(&fs::read(path)?)
}

/// Fit a rank-`rank` basis to `images`.
pub fn fit_pca(images: &[ImageTensor], rank: usize) -> Result<EigenBasis, BasisError> {
    fit_pca_with_stats(images, rank).map(|(b, _)| b)
}

/// Fit via thin SVD of the centered `M x d` data matrix. The SVD is taken
/// through the eigendecomposition of the `M x M` Gram matrix when `M <= d`
/// and of the `d x d` scatter matrix otherwise.
pub fn fit_pca_with_stats(images: &[ImageTensor], rank: usize) -> Result<(EigenBasis, FitStats), BasisError> {
    let m = images.len();
    if m < 2 {
        return Err(BasisError::TooFewImages(m));
    }
    let dims = images[0].dims();
    for (index, img) in images.iter().enumerate() {
        if img.dims() != dims {
            return Err(BasisError::DimensionMismatch {
                index,
                expected: dims,
                found: img.dims(),
            });
        }
    }
    let d = images[0].len();
    let max_rank = d.min(m - 1);
    if rank == 0 || rank > max_rank {
        return Err(BasisError::RankOutOfRange { rank, max: max_rank });
    }

    let mut mean = vec![0f64; d];
    for img in images {
        for (acc, &x) in mean.iter_mut().zip(img.pixels()) {
            *acc += x as f64;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let raw_norm = images
        .iter()
        .flat_map(|img| img.pixels().iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt();
    // rows: centered samples
    let centered: Vec<Vec<f64>> = images
        .iter()
        .map(|img| img.pixels().iter().zip(&mean).map(|(&x, &mu)| x as f64 - mu).collect())
        .collect();
    let total_sq: f64 = centered.iter().flatten().map(|v| v * v).sum();

    let (singular, vectors) = if m <= d {
        gram_route(&centered, rank)
    } else {
        scatter_route(&centered, d, rank)
    };
    // near-ties can come back out of order after recomputing sigma
    let mut pairs: Vec<(f64, Vec<f64>)> = singular.into_iter().zip(vectors).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (singular, mut vectors): (Vec<f64>, Vec<Vec<f64>>) = pairs.into_iter().unzip();

    let tol = DEGENERATE_REL_TOL * raw_norm.max(f64::MIN_POSITIVE);
    if let Some(index) = singular.iter().position(|&s| s.is_nan() || s <= tol) {
        return Err(BasisError::DegenerateComponent {
            index,
            singular_value: singular[index],
        });
    }

    for v in vectors.iter_mut() {
        fix_sign(v);
    }

    let scale = ((m - 1) as f64).sqrt();
    let stds: Vec<f32> = singular.iter().map(|&s| (s / scale) as f32).collect();
    let retained_sq: f64 = singular.iter().map(|s| s * s).sum();
    let components: Vec<f32> = vectors.iter().flatten().map(|&v| v as f32).collect();
    let mean32: Vec<f32> = mean.iter().map(|&v| v as f32).collect();
    let basis = EigenBasis::from_parts(dims, mean32, components, stds)?;
    let stats = FitStats {
        samples: m,
        total_variance: total_sq / (m - 1) as f64,
        retained_variance: retained_sq / (m - 1) as f64,
    };
    Ok((basis, stats))
}

/// Returns descending singular values and the matching unit right singular
/// vectors (length `d`).
fn gram_route(rows: &[Vec<f64>], rank: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = rows.len();
    let d = rows[0].len();
    let mut gram = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let g: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let eig = SymmetricEigen::new(gram);
    let order = descending_order(eig.eigenvalues.as_slice());
    let mut singular = Vec::with_capacity(rank);
    let mut vectors = Vec::with_capacity(rank);
    for &idx in order.iter().take(rank) {
        let left = eig.eigenvectors.column(idx);
        let mut u = vec![0f64; d];
        for (r, row) in rows.iter().enumerate() {
            let w = left[r];
            for (acc, &x) in u.iter_mut().zip(row) {
                *acc += w * x;
            }
        }
        // ||X^T v|| is the singular value; it is more accurate than
        // sqrt(lambda) for small components.
        let sigma = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sigma > 0.0 {
            u.iter_mut().for_each(|v| *v /= sigma);
        }
        singular.push(sigma);
        vectors.push(u);
    }
    (singular, vectors)
}

fn scatter_route(rows: &[Vec<f64>], d: usize, rank: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for row in rows {
        for i in 0..d {
            for j in 0..=i {
                scatter[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            scatter[(j, i)] = scatter[(i, j)];
        }
    }
    let eig = SymmetricEigen::new(scatter);
    let order = descending_order(eig.eigenvalues.as_slice());
    let singular = order
        .iter()
        .take(rank)
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
        .collect();
    let vectors = order
        .iter()
        .take(rank)
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (singular, vectors)
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Flip `v` so its entry of largest magnitude (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
