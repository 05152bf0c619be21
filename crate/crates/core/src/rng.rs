//! Deterministic, splittable random streams and the sampling primitives used
//! by the data-generating processes.
//!
//! Every unit of simulation work draws from its own [`RngStream`], keyed on
//! the full path `(master seed, scenario, sample size, repetition, purpose)`.
//! The key is hashed into a ChaCha12 seed, so a stream never depends on the
//! order in which other streams were created or consumed. That is what makes
//! serial and parallel runs bit-identical.

use crate::linalg;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use thiserror::Error;

/// What a stream is used for within one repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Data generation (and any resampling done by the analysis) for the
    /// given attempt; attempts > 0 are redraws after non-convergence.
    Data { attempt: u32 },
    /// Pilot runs used to estimate asymptotic scale parameters.
    Pilot { attempt: u32 },
    /// Free-form tag for tests and ad hoc use.
    Custom(u64),
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Data { attempt } => 0x1000_0000 | u64::from(attempt),
            Purpose::Pilot { attempt } => 0x2000_0000 | u64::from(attempt),
            Purpose::Custom(tag) => 0x3000_0000_0000_0000 ^ tag,
        }
    }
}

/// Position of a stream in the simulation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamPath {
    pub scenario: u64,
    pub n: u64,
    pub repetition: u64,
    pub purpose: Purpose,
}

impl StreamPath {
    pub fn new(scenario: u64, n: u64, repetition: u64, purpose: Purpose) -> Self {
        Self {
            scenario,
            n,
            repetition,
            purpose,
        }
    }
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible random stream for one node of the simulation tree.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, path: StreamPath) -> Self {
        let words = [
            master_seed,
            path.scenario,
            path.n,
            path.repetition,
            path.purpose.code(),
        ];
        // Absorb each word through splitmix so that every field perturbs the
        // whole state; then squeeze 256 bits of seed.
        let mut state = 0x243F_6A88_85A3_08D3u64;
        for w in words {
            state ^= w;
            state = splitmix64(&mut state);
        }
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self {
            inner: ChaCha12Rng::from_seed(seed),
        }
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    #[inline]
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    #[inline]
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),
    #[error("scenario `{scenario}`: correlation matrix is not symmetric positive definite")]
    NotPositiveDefinite { scenario: String },
    #[error("scenario `{scenario}`: correlation matrix {reason}")]
    MalformedCorrelation { scenario: String, reason: String },
}

/// Scalar distributions supported by [`sample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
    Poisson { rate: f64 },
    Gamma { shape: f64, scale: f64 },
}

/// Draws one value. Integer-valued distributions return whole numbers.
pub fn sample<R: Rng + ?Sized>(dist: Dist, rng: &mut R) -> Result<f64, SamplingError> {
    let bad = |m: &str| Err(SamplingError::InvalidParameters(m.to_string()));
    match dist {
        Dist::Uniform { low, high } => {
            if !(low < high) {
                return bad("uniform requires low < high");
            }
            Ok(rng.gen_range(low..high))
        }
        Dist::Normal { mean, sd } => {
            if !(sd >= 0.0) || !mean.is_finite() {
                return bad("normal requires finite mean and sd >= 0");
            }
            if sd == 0.0 {
                return Ok(mean);
            }
            Ok(mean + sd * standard_normal(rng))
        }
        Dist::Bernoulli { p } => {
            if !(0.0..=1.0).contains(&p) {
                return bad("bernoulli requires p in [0, 1]");
            }
            Ok(if bernoulli(p, rng) { 1.0 } else { 0.0 })
        }
        Dist::Poisson { rate } => {
            if rate == 0.0 {
                return Ok(0.0);
            }
            match Poisson::new(rate) {
                Ok(d) => Ok(d.sample(rng)),
                Err(_) => bad("poisson requires rate >= 0"),
            }
        }
        Dist::Gamma { shape, scale } => match Gamma::new(shape, scale) {
            Ok(d) => Ok(d.sample(rng)),
            Err(_) => bad("gamma requires shape > 0 and scale > 0"),
        },
    }
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Normal::new(0, 1) cannot fail.
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Bernoulli draw that is exact at the endpoints: `p = 1` always succeeds and
/// `p = 0` never does.
#[inline]
pub fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.gen::<f64>() < p
}

/// Lower Cholesky factor of a correlation matrix, used to draw latent
/// multivariate normal vectors for Gaussian copulas.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl CorrelationFactor {
    /// `matrix` is row-major `dim × dim`. `scenario` names the owner in error
    /// messages.
    pub fn new(matrix: &[f64], dim: usize, scenario: &str) -> Result<Self, SamplingError> {
        let malformed = |reason: String| SamplingError::MalformedCorrelation {
            scenario: scenario.to_string(),
            reason,
        };
        if dim == 0 || matrix.len() != dim * dim {
            return Err(malformed(format!(
                "has {} entries, expected {}",
                matrix.len(),
                dim * dim
            )));
        }
        for i in 0..dim {
            if (matrix[i * dim + i] - 1.0).abs() > 1e-12 {
                return Err(malformed(format!("has diagonal entry {} != 1", i)));
            }
            for j in 0..i {
                let (a, b) = (matrix[i * dim + j], matrix[j * dim + i]);
                if (a - b).abs() > 1e-12 {
                    return Err(malformed(format!("is not symmetric at ({i}, {j})")));
                }
                if !(-1.0..=1.0).contains(&a) {
                    return Err(malformed(format!("entry ({i}, {j}) = {a} outside [-1, 1]")));
                }
            }
        }
        let lower = linalg::cholesky(matrix, dim).ok_or_else(|| SamplingError::NotPositiveDefinite {
            scenario: scenario.to_string(),
        })?;
        Ok(Self { dim, lower })
    }

    pub fn identity(dim: usize) -> Self {
        let mut lower = vec![0.0; dim * dim];
        for i in 0..dim {
            lower[i * dim + i] = 1.0;
        }
        Self { dim, lower }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fills `out` with one draw from N(0, R).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut Vec<f64>, out: &mut [f64]) {
        let d = self.dim;
        scratch.clear();
        scratch.extend((0..d).map(|_| standard_normal(rng)));
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i + 1];
            out[i] = row.iter().zip(scratch.iter()).map(|(l, z)| l * z).sum();
        }
    }
}
