//! Procedural face-like images for desk-scale experiments.
//!
//! An image is a smooth bright oval on a dark background plus a weighted sum
//! of low-frequency colour patterns with Gaussian weights, plus a little
//! pixel noise. The pattern weights decay as `j^-decay`, which gives the
//! corpus a PCA spectrum with a long tail.

use std::f64::consts::PI;

use crate::eigenspace::{EigenBasis, LatentCoords};
use crate::image::ImageTensor;
use crate::oracle::{cosine, SyntheticEmbedder};
use crate::rng::{self, streams};

/// First sample index of the held-out range used for targets.
pub const HELDOUT_OFFSET: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct FaceModelSpec {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub modes: usize,
    pub base_level: f64,
    pub bump: f64,
    /// RMS pixel deviation contributed by the patterns.
    pub amplitude: f64,
    pub decay: f64,
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for FaceModelSpec {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            channels: 3,
            modes: 48,
            base_level: 0.3,
            bump: 0.1,
            amplitude: 0.2,
            decay: 0.5,
            pixel_noise: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FaceModel {
    spec: FaceModelSpec,
    base: Vec<f64>,
    /// `modes x d`, unit-norm rows.
    patterns: Vec<f64>,
    weights: Vec<f64>,
}

impl FaceModel {
    pub fn new(spec: FaceModelSpec) -> Self {
        let (w, h, ch) = (spec.width as usize, spec.height as usize, spec.channels as usize);
        let d = w * h * ch;
        let coord = |x: usize, y: usize| (x as f64 / w as f64, y as f64 / h as f64);

        let mut base = Vec::with_capacity(d);
        for y in 0..h {
            for x in 0..w {
                let (xs, ys) = coord(x, y);
                let v =
                    spec.base_level + spec.bump * (-(((xs - 0.5) / 0.3).powi(2) + ((ys - 0.5) / 0.4).powi(2))).exp();
                base.extend(std::iter::repeat_n(v, ch));
            }
        }

        let s = spec.seed;
        let pat = streams::CORPUS_PATTERNS;
        let mut patterns = Vec::with_capacity(spec.modes * d);
        for j in 0..spec.modes as u64 {
            let fx = (rng::uniform(s, pat, 8 * j) * 5.0).floor();
            let fy = (rng::uniform(s, pat, 8 * j + 1) * 5.0).floor();
            let px = 2.0 * PI * rng::uniform(s, pat, 8 * j + 2);
            let py = 2.0 * PI * rng::uniform(s, pat, 8 * j + 3);
            let colour: Vec<f64> = (0..ch as u64).map(|c| rng::normal(s, pat, 8 * j + 4 + c)).collect();
            let start = patterns.len();
            for y in 0..h {
                for x in 0..w {
                    let (xs, ys) = coord(x, y);
                    let p = (PI * fx * xs + px).cos() * (PI * fy * ys + py).cos();
                    patterns.extend(colour.iter().map(|c| p * c));
                }
            }
            let row = &mut patterns[start..];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }

        let mut weights: Vec<f64> = (1..=spec.modes).map(|j| (j as f64).powf(-spec.decay)).collect();
        let rss = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        let scale = spec.amplitude * (d as f64).sqrt() / rss;
        weights.iter_mut().for_each(|w| *w *= scale);

        Self {
            spec,
            base,
            patterns,
            weights,
        }
    }

    pub fn spec(&self) -> &FaceModelSpec {
        &self.spec
    }

    pub fn dims(&self) -> (u32, u32, u32) {
        (self.spec.width, self.spec.height, self.spec.channels)
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// Image number `index`, drawn from its own stream so any subset of the
    /// corpus can be regenerated independently.
    pub fn sample(&self, index: u64) -> ImageTensor {
        let d = self.dim();
        let mut draws = rng::NormalStream::new(self.spec.seed, streams::CORPUS_IMAGES + index);
        let mut px = self.base.clone();
        for (j, w) in self.weights.iter().enumerate() {
            let z = w * draws.next_normal();
            for (p, v) in px.iter_mut().zip(&self.patterns[j * d..(j + 1) * d]) {
                *p += z * v;
            }
        }
        for p in px.iter_mut() {
            *p += self.spec.pixel_noise * draws.next_normal();
        }
        let (w, h, c) = self.dims();
        ImageTensor::new(w, h, c, px.into_iter().map(|v| v as f32).collect()).expect("finite by construction")
    }

    /// Images `0..n`: the public corpus a basis is fitted on.
    pub fn training_set(&self, n: usize) -> Vec<ImageTensor> {
        (0..n as u64).map(|i| self.sample(i)).collect()
    }

    /// Image `i` of the held-out range; never part of a training set.
    pub fn heldout(&self, i: u64) -> ImageTensor {
        self.sample(HELDOUT_OFFSET + i)
    }
}

/// Standard-normal coordinates for in-span target `index`, drawn from
/// `(seed, TARGETS, index * k + i)`.
pub fn in_span_coords(k: usize, seed: u64, index: u64) -> LatentCoords {
    LatentCoords(
        (0..k as u64)
            .map(|i| rng::normal(seed, streams::TARGETS, index * k as u64 + i))
            .collect(),
    )
}

/// A target that lies exactly in the span of `basis`.
pub fn in_span_target(basis: &EigenBasis, seed: u64, index: u64) -> (LatentCoords, ImageTensor) {
    let c = in_span_coords(basis.rank(), seed, index);
    let img = basis.synthesize(&c).expect("length matches rank");
    (c, img)
}

/// Two in-span peaks for a bimodal score surface: the true peak at
/// `true_scale * z` and a decoy at `-decoy_scale * z`.
#[derive(Clone, Debug)]
pub struct TwoPeakGeometry {
    pub attempt: u64,
    pub true_coords: LatentCoords,
    pub decoy_coords: LatentCoords,
    pub true_image: ImageTensor,
    pub decoy_image: ImageTensor,
    /// Cosine between the two peak embeddings.
    pub separation: f64,
    /// Cosines from the mean face to the true and decoy peaks.
    pub mean_to_true: f64,
    pub mean_to_decoy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPeakSpec {
    pub true_scale: f64,
    pub decoy_scale: f64,
    pub depth: f64,
    pub max_attempts: u64,
}

impl Default for TwoPeakSpec {
    fn default() -> Self {
        Self {
            true_scale: 3.0,
            decoy_scale: 1.0,
            depth: 0.3,
            max_attempts: 64,
        }
    }
}

/// First geometry (over attempts `0..max_attempts`) in which an ascent from
/// the mean face is drawn to the decoy, `cos(mean, decoy) - depth >
/// cos(mean, true)`, and the decoy is a strict local maximum,
/// `separation < 1 - depth`.
pub fn two_peak_geometry(
    basis: &EigenBasis,
    embedder: &SyntheticEmbedder,
    seed: u64,
    spec: &TwoPeakSpec,
) -> Option<TwoPeakGeometry> {
    let k = basis.rank();
    let mean = embedder.embed(&basis.mean_image()).ok()?;
    for attempt in 0..spec.max_attempts {
        let z = in_span_coords(k, seed, attempt);
        let tc = LatentCoords(z.0.iter().map(|v| spec.true_scale * v).collect());
        let dc = LatentCoords(z.0.iter().map(|v| -spec.decoy_scale * v).collect());
        let ti = basis.synthesize(&tc).ok()?;
        let di = basis.synthesize(&dc).ok()?;
        let (te, de) = (embedder.embed(&ti).ok()?, embedder.embed(&di).ok()?);
        let separation = cosine(&te, &de).ok()?;
        let mean_to_true = cosine(&mean, &te).ok()?;
        let mean_to_decoy = cosine(&mean, &de).ok()?;
        if mean_to_decoy - spec.depth > mean_to_true && separation < 1.0 - spec.depth {
            return Some(TwoPeakGeometry {
                attempt,
                true_coords: tc,
                decoy_coords: dc,
                true_image: ti,
                decoy_image: di,
                separation,
                mean_to_true,
                mean_to_decoy,
            });
        }
    }
    None
}
