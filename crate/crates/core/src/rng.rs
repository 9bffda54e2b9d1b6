//! Counter-based random numbers.
//!
//! Every random draw in the crate is a pure function of `(seed, stream, index)`
//! computed with Philox4x32-10 (Salmon et al., "Parallel random numbers: as
//! easy as 1, 2, 3", SC'11; the generator used by Random123, cuRAND and
//! TensorFlow). The mapping is:
//!
//! - key = `[seed as u32, (seed >> 32) as u32]`
//! - counter = `[block as u32, (block >> 32) as u32, stream as u32, (stream >> 32) as u32]`
//!   with `block = index / 2`
//! - the four output words `x0..x3` form `a = x1 << 32 | x0` and `b = x3 << 32 | x2`
//! - `u1 = ((a >> 11) + 1) * 2^-53` in `(0, 1]`, `u2 = (b >> 11) * 2^-53` in `[0, 1)`
//! - Box-Muller: `r = sqrt(-2 ln u1)`, even index gives `r cos(2 pi u2)`, odd
//!   index gives `r sin(2 pi u2)`
//!
//! All arithmetic after the integer stage is IEEE f64; values consumed as f32
//! are rounded from that f64. Implementations in other languages that follow
//! this recipe reproduce the same f32 values.

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Named stream identifiers. Stream ids are part of the reproducibility
/// contract; changing one changes every derived value.
pub mod streams {
    /// Synthetic embedder projection matrices.
    pub const PROJECTION: u64 = 0x0001;
    /// Synthetic corpus mode patterns.
    pub const CORPUS_PATTERNS: u64 = 0x0002;
    /// Synthetic corpus per-image latents; add the image index.
    pub const CORPUS_IMAGES: u64 = 0x0100_0000;
    /// Optimizer main phase directions.
    pub const MAIN: u64 = 0x0003;
    /// Score noise wrapper.
    pub const NOISE: u64 = 0x0004;
    /// Synthetic target identities (in-span latent draws).
    pub const TARGETS: u64 = 0x0005;
    /// Restart-phase directions; add the restart index.
    pub const RESTART_BASE: u64 = 0x0200_0000;
    /// Restart Gaussian initializations; add the restart index.
    pub const INIT_BASE: u64 = 0x0300_0000;
}

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// One Philox4x32-10 block.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut ctr = counter;
    let mut key = key;
    for round in 0..10 {
        if round > 0 {
            key[0] = key[0].wrapping_add(PHILOX_W0);
            key[1] = key[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
    }
    ctr
}

fn block(seed: u64, stream: u64, block: u64) -> [u32; 4] {
    philox4x32_10(
        [block as u32, (block >> 32) as u32, stream as u32, (stream >> 32) as u32],
        [seed as u32, (seed >> 32) as u32],
    )
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

fn words_to_u64s(w: [u32; 4]) -> (u64, u64) {
    ((w[1] as u64) << 32 | w[0] as u64, (w[3] as u64) << 32 | w[2] as u64)
}

fn normal_pair(seed: u64, stream: u64, blk: u64) -> [f64; 2] {
    let (a, b) = words_to_u64s(block(seed, stream, blk));
    let u1 = ((a >> 11) + 1) as f64 * TWO_POW_M53;
    let u2 = (b >> 11) as f64 * TWO_POW_M53;
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    [r * theta.cos(), r * theta.sin()]
}

/// Standard normal variate at `(seed, stream, index)`.
pub fn normal(seed: u64, stream: u64, index: u64) -> f64 {
    normal_pair(seed, stream, index >> 1)[(index & 1) as usize]
}

/// Uniform variate in `[0, 1)` at `(seed, stream, index)`; uses the first
/// 64-bit word of block `index`.
pub fn uniform(seed: u64, stream: u64, index: u64) -> f64 {
    let (a, _) = words_to_u64s(block(seed, stream, index));
    (a >> 11) as f64 * TWO_POW_M53
}

/// Sequential reader over one `(seed, stream)` pair of normal variates.
#[derive(Clone, Debug)]
pub struct NormalStream {
    seed: u64,
    stream: u64,
    next: u64,
    cached: Option<(u64, [f64; 2])>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            next: 0,
            cached: None,
        }
    }

    /// Index of the next variate to be returned.
    pub fn position(&self) -> u64 {
        self.next
    }

    pub fn next_normal(&mut self) -> f64 {
        let idx = self.next;
        self.next += 1;
        let blk = idx >> 1;
        let pair = match self.cached {
            Some((b, p)) if b == blk => p,
            _ => {
                let p = normal_pair(self.seed, self.stream, blk);
                self.cached = Some((blk, p));
                p
            }
        };
        pair[(idx & 1) as usize]
    }

    pub fn fill(&mut self, out: &mut [f64], scale: f64) {
        for v in out.iter_mut() {
            *v = scale * self.next_normal();
        }
    }
}

/// Derive a child seed from a parent seed and a label; used for splitting a
/// single user seed into independent sub-experiments.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let (a, _) = words_to_u64s(block(seed, 0xD3_5EED, label));
    a
}
