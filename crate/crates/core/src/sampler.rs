//! Exact samplers for the stationary field `(Z(i,j) : 0 <= i,j < n)`.
//!
//! Three routes produce the same law:
//!
//! * moving average: `Z = theta + a * xi`, cost `O(n^2 |supp a|)`;
//! * Cholesky of the `n^2 x n^2` block-Toeplitz covariance (reference, small `n`);
//! * circulant embedding on a torus with a 2D FFT.
//!
//! Every sampler is a pure function of its parameters and an [`RngStream`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

use crate::kernel::{psd_tolerance, FieldParams};
use crate::spectral::{torus_spectrum, Fft2};

/// Largest field side accepted by the Cholesky reference sampler.
pub const CHOLESKY_CAP: usize = 48;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("MA sampler requires MA-specified kernel")]
    MissingFilter,
    #[error("kernel not positive semidefinite at size {0}")]
    NotPsd(usize),
    #[error("cholesky sampler is capped at n = {cap}, got {n}")]
    TooLarge { n: usize, cap: usize },
    #[error("circulant embedding failed: spectral value {min} below -{tol}")]
    EmbeddingFailed { min: f64, tol: f64 },
    #[error("field size must be at least 1")]
    EmptyField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Ma,
    Cholesky,
    Circulant,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Ma => "ma",
            SamplerKind::Cholesky => "cholesky",
            SamplerKind::Circulant => "circulant",
        })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifies the random stream of one replication: `(master_seed, n, rep)`.
///
/// The stream key is a 64-bit hash of the triple; the field and the
/// eigensolver start vector draw from two disjoint ChaCha streams under that key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub n: usize,
    pub rep: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, n: usize, rep: u64) -> Self {
        Self {
            master_seed,
            n,
            rep,
        }
    }

    pub fn key(&self) -> u64 {
        splitmix64(splitmix64(splitmix64(self.master_seed) ^ self.n as u64) ^ self.rep)
    }

    fn generator(&self, stream: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.key());
        rng.set_stream(stream);
        rng
    }

    /// Generator for the field's normal variates.
    pub fn field_rng(&self) -> ChaCha12Rng {
        self.generator(0)
    }

    /// Generator for auxiliary draws (eigensolver start vectors).
    pub fn aux_rng(&self) -> ChaCha12Rng {
        self.generator(1)
    }
}

/// An `n x n` realization of the field, row-major, entry `(i,j)` is `Z(i,j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    n: usize,
    theta: f64,
    values: Vec<f64>,
}

impl FieldSample {
    pub fn from_values(n: usize, theta: f64, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n, "field must hold n^2 values");
        Self { n, theta, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// `X(i,j) = Z(i,j) - theta`.
    #[inline]
    pub fn centered(&self, i: usize, j: usize) -> f64 {
        self.get(i, j) - self.theta
    }

    /// Text dump: a `# n=.. theta=.. seed=..` header, then one row per line.
    pub fn to_text(&self, seed: u64) -> String {
        let mut out = format!("# n={} theta={} seed={}\n", self.n, self.theta, seed);
        for row in self.values.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Sampler state that depends only on `(params, n)`: filter offsets, a
/// Cholesky factor, or circulant weights. Build once per size, then draw.
#[derive(Debug, Clone)]
pub struct PreparedSampler {
    n: usize,
    theta: f64,
    inner: Prepared,
}

#[derive(Clone)]
enum Prepared {
    Ma(MaState),
    Cholesky(DMatrix<f64>),
    Circulant(CirculantState),
}

impl std::fmt::Debug for Prepared {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Prepared::Ma(_) => f.write_str("Ma"),
            Prepared::Cholesky(l) => write!(f, "Cholesky({}x{})", l.nrows(), l.ncols()),
            Prepared::Circulant(c) => write!(f, "Circulant(side={})", c.fft.side()),
        }
    }
}

#[derive(Clone)]
struct MaState {
    taps: Vec<(usize, usize, f64)>,
    side: usize,
}

#[derive(Clone)]
struct CirculantState {
    fft: std::sync::Arc<Fft2>,
    weights: Vec<f64>,
}

/// Diagnostics of a circulant embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmbeddingInfo {
    pub side: usize,
    pub min_eigenvalue: f64,
    pub clamped_modes: usize,
}

impl PreparedSampler {
    pub fn new(kind: SamplerKind, params: &FieldParams, n: usize) -> Result<Self, SampleError> {
        match kind {
            SamplerKind::Ma => Self::ma(params, n),
            SamplerKind::Cholesky => Self::cholesky(params, n),
            SamplerKind::Circulant => Self::circulant(params, n).map(|(s, _)| s),
        }
    }

    pub fn ma(params: &FieldParams, n: usize) -> Result<Self, SampleError> {
        if n == 0 {
            return Err(SampleError::EmptyField);
        }
        let filter = params.ma().ok_or(SampleError::MissingFilter)?;
        let sb = filter.support();
        let span = (sb.u_max - sb.u_min).max(sb.v_max - sb.v_min) as usize;
        let taps = filter
            .coeffs()
            .iter()
            .filter(|(_, &a)| a != 0.0)
            .map(|(&(s, t), &a)| ((s - sb.u_min) as usize, (t - sb.v_min) as usize, a))
            .collect();
        Ok(Self {
            n,
            theta: params.theta(),
            inner: Prepared::Ma(MaState {
                taps,
                side: n + span,
            }),
        })
    }

    pub fn cholesky(params: &FieldParams, n: usize) -> Result<Self, SampleError> {
        if n == 0 {
            return Err(SampleError::EmptyField);
        }
        if n > CHOLESKY_CAP {
            return Err(SampleError::TooLarge {
                n,
                cap: CHOLESKY_CAP,
            });
        }
        let kernel = params.kernel();
        let dim = n * n;
        // Cov(Z(i,j), Z(k,l)) = R(i-k, j-l)
        let cov = DMatrix::from_fn(dim, dim, |p, q| {
            let (i, j) = ((p / n) as i64, (p % n) as i64);
            let (k, l) = ((q / n) as i64, (q % n) as i64);
            kernel.get((i - k, j - l))
        });
        let factor = match cov.clone().cholesky() {
            Some(c) => c,
            None => {
                let jitter = 1e-12 * kernel.origin_value();
                let mut cov = cov;
                for d in 0..dim {
                    cov[(d, d)] += jitter;
                }
                cov.cholesky().ok_or(SampleError::NotPsd(n))?
            }
        };
        Ok(Self {
            n,
            theta: params.theta(),
            inner: Prepared::Cholesky(factor.unpack()),
        })
    }

    pub fn circulant(params: &FieldParams, n: usize) -> Result<(Self, EmbeddingInfo), SampleError> {
        if n == 0 {
            return Err(SampleError::EmptyField);
        }
        let kernel = params.kernel();
        let side = (2 * (n + kernel.radius())).next_power_of_two();
        let fft = Fft2::new(side);
        let spectrum = torus_spectrum(kernel, &fft);
        let tol = psd_tolerance(kernel);
        let min = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(SampleError::EmbeddingFailed { min, tol });
        }
        let clamped_modes = spectrum.iter().filter(|&&x| x < 0.0).count();
        let scale = 1.0 / side as f64;
        let weights = spectrum
            .iter()
            .map(|&x| x.max(0.0).sqrt() * scale)
            .collect();
        let info = EmbeddingInfo {
            side,
            min_eigenvalue: min,
            clamped_modes,
        };
        let state = CirculantState {
            fft: std::sync::Arc::new(fft),
            weights,
        };
        Ok((
            Self {
                n,
                theta: params.theta(),
                inner: Prepared::Circulant(state),
            },
            info,
        ))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sample(&self, stream: &RngStream) -> FieldSample {
        let mut rng = stream.field_rng();
        let n = self.n;
        let values = match &self.inner {
            Prepared::Ma(state) => {
                let side = state.side;
                let xi: Vec<f64> = (0..side * side)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let mut values = vec![self.theta; n * n];
                for i in 0..n {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for &(ds, dt, a) in &state.taps {
                            acc += a * xi[(i + ds) * side + j + dt];
                        }
                        values[i * n + j] += acc;
                    }
                }
                values
            }
            Prepared::Cholesky(lower) => {
                let xi = DVector::from_fn(n * n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let z = lower * xi;
                z.iter().map(|x| x + self.theta).collect()
            }
            Prepared::Circulant(state) => {
                let side = state.fft.side();
                let mut grid: Vec<Complex64> = state
                    .weights
                    .iter()
                    .map(|&w| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(w * re, w * im)
                    })
                    .collect();
                state.fft.process(&mut grid);
                let mut values = Vec::with_capacity(n * n);
                for i in 0..n {
                    values.extend(
                        grid[i * side..i * side + n]
                            .iter()
                            .map(|z| z.re + self.theta),
                    );
                }
                values
            }
        };
        FieldSample {
            n,
            theta: self.theta,
            values,
        }
    }
}

pub fn sample_ma(
    params: &FieldParams,
    n: usize,
    stream: &RngStream,
) -> Result<FieldSample, SampleError> {
    Ok(PreparedSampler::ma(params, n)?.sample(stream))
}

pub fn sample_cholesky(
    params: &FieldParams,
    n: usize,
    stream: &RngStream,
) -> Result<FieldSample, SampleError> {
    Ok(PreparedSampler::cholesky(params, n)?.sample(stream))
}

pub fn sample_circulant(
    params: &FieldParams,
    n: usize,
    stream: &RngStream,
) -> Result<FieldSample, SampleError> {
    Ok(PreparedSampler::circulant(params, n)?.0.sample(stream))
}
