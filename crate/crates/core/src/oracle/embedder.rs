use crate::image::ImageTensor;
use crate::rng::{self, streams};

use super::OracleError;

/// Linear stand-in for a face embedding network: `e = P x` with `P` an
/// `embed_dim x d` matrix of standard normals drawn from
/// `(seed, streams::PROJECTION, row * d + col)` and stored as f32.
///
/// With `flip_concat`, the embedding is `[P x, P flip(x)]`.
#[derive(Clone, Debug)]
pub struct SyntheticEmbedder {
    seed: u64,
    embed_dim: usize,
    dims: (u32, u32, u32),
    flip_concat: bool,
    projection: Vec<f32>,
}

impl SyntheticEmbedder {
    pub fn new(seed: u64, embed_dim: usize, dims: (u32, u32, u32), flip_concat: bool) -> Self {
        let d = dims.0 as usize * dims.1 as usize * dims.2 as usize;
        let projection = (0..(embed_dim * d) as u64)
            .map(|i| rng::normal(seed, streams::PROJECTION, i) as f32)
            .collect();
        Self {
            seed,
            embed_dim,
            dims,
            flip_concat,
            projection,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Output length: `embed_dim`, doubled with flip-concat.
    pub fn output_dim(&self) -> usize {
        if self.flip_concat {
            2 * self.embed_dim
        } else {
            self.embed_dim
        }
    }

    pub fn dims(&self) -> (u32, u32, u32) {
        self.dims
    }

    pub fn flip_concat(&self) -> bool {
        self.flip_concat
    }

    pub fn projection(&self) -> &[f32] {
        &self.projection
    }

    pub(crate) fn check_dims(&self, image: &ImageTensor) -> Result<(), OracleError> {
        if image.dims() != self.dims {
            let d = self.dims.0 as usize * self.dims.1 as usize * self.dims.2 as usize;
            return Err(OracleError::DimensionMismatch {
                expected: d,
                found: image.len(),
            });
        }
        Ok(())
    }

    fn apply(&self, x: &[f32], out: &mut Vec<f64>) {
        let d = x.len();
        for row in self.projection.chunks_exact(d) {
            let mut acc = 0f64;
            for (&p, &v) in row.iter().zip(x) {
                acc += p as f64 * v as f64;
            }
            out.push(acc);
        }
    }

    pub fn embed(&self, image: &ImageTensor) -> Result<Vec<f64>, OracleError> {
        self.check_dims(image)?;
        let mut out = Vec::with_capacity(self.output_dim());
        self.apply(image.pixels(), &mut out);
        if self.flip_concat {
            self.apply(image.horizontal_flip().pixels(), &mut out);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_seeded() {
        let a = SyntheticEmbedder::new(3, 4, (2, 2, 1), false);
        let b = SyntheticEmbedder::new(3, 4, (2, 2, 1), false);
        let c = SyntheticEmbedder::new(4, 4, (2, 2, 1), false);
        assert_eq!(a.projection(), b.projection());
        assert_ne!(a.projection(), c.projection());
        assert_eq!(a.projection()[5], rng::normal(3, streams::PROJECTION, 5) as f32);
    }

    #[test]
    fn zero_image_embeds_to_zero() {
        let e = SyntheticEmbedder::new(1, 6, (3, 2, 3), true);
        let z = ImageTensor::filled(3, 2, 3, 0.0).unwrap();
        let v = e.embed(&z).unwrap();
        assert_eq!(v.len(), 12);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn flip_concat_halves_agree_on_symmetric_image() {
        let e = SyntheticEmbedder::new(2, 5, (3, 1, 1), true);
        let img = ImageTensor::new(3, 1, 1, vec![0.2, 0.9, 0.2]).unwrap();
        let v = e.embed(&img).unwrap();
        assert_eq!(v[..5], v[5..]);
    }

    #[test]
    fn embedding_is_linear() {
        let e = SyntheticEmbedder::new(8, 7, (4, 1, 1), false);
        let img = ImageTensor::new(4, 1, 1, vec![0.25, 0.5, 0.125, 1.0]).unwrap();
        let doubled = ImageTensor::new(4, 1, 1, vec![0.5, 1.0, 0.25, 2.0]).unwrap();
        let (a, b) = (e.embed(&img).unwrap(), e.embed(&doubled).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn rejects_wrong_dims() {
        let e = SyntheticEmbedder::new(8, 7, (4, 1, 1), false);
        let img = ImageTensor::new(2, 2, 1, vec![0.0; 4]).unwrap();
        assert!(matches!(e.embed(&img), Err(OracleError::DimensionMismatch { .. })));
    }
}
