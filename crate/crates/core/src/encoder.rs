//! Fixed random Fourier feature encoders.
//!
//! `Φ(s) = D^{-1/2} [cos(ω_k·s + b_k)]_k` with `ω_k ~ N(0, σ⁻² I)` and
//! `b_k ~ U[0, 2π)`. Without the usual √2 amplitude the empirical kernel
//! concentrates on `½·exp(−‖x−y‖²/(2σ²))`, and `‖Φ(s)‖₂ ≤ 1` for every state.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Matrix};
use crate::rng::{derive_seed, derive_seed2, fill_standard_normal, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error("state has dimension {actual}, encoder expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
}

/// Serialized form of an encoder; the random matrices are regenerated from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderDescriptor {
    pub seed: u64,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "d")]
    pub state_dim: usize,
    pub sigma: f64,
}

impl EncoderDescriptor {
    /// Stable 64-bit fingerprint used to validate cached anchor features.
    pub fn fingerprint(&self) -> u64 {
        let mut h = derive_seed(self.seed, self.dim as u64);
        h = derive_seed(h, self.state_dim as u64);
        derive_seed(h, self.sigma.to_bits())
    }
}

#[derive(Debug, Clone)]
pub struct RffEncoder {
    /// `None` for encoders assembled from explicit parts.
    seed: Option<u64>,
    sigma: f64,
    frequencies: Matrix,
    phases: Vec<f64>,
    scale: f64,
}

impl RffEncoder {
    pub fn new(seed: u64, dim: usize, state_dim: usize, sigma: f64) -> Result<Self, EncoderError> {
        if dim == 0 || state_dim == 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "dimensions must be positive (D={dim}, d={state_dim})"
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(EncoderError::InvalidConfig(format!("bandwidth must be > 0, got {sigma}")));
        }
        let mut rng = rng_from_seed(seed);
        let mut freq = vec![0.0; dim * state_dim];
        fill_standard_normal(&mut rng, &mut freq);
        let inv_sigma = 1.0 / sigma;
        freq.iter_mut().for_each(|w| *w *= inv_sigma);
        let phases = (0..dim).map(|_| TAU * rng.random::<f64>()).collect();
        Ok(Self {
            seed: Some(seed),
            sigma,
            frequencies: Matrix::from_raw(dim, state_dim, freq),
            phases,
            scale: 1.0 / (dim as f64).sqrt(),
        })
    }

    pub fn from_descriptor(desc: &EncoderDescriptor) -> Result<Self, EncoderError> {
        Self::new(desc.seed, desc.dim, desc.state_dim, desc.sigma)
    }

    /// Encoder with explicit frequencies (`D × d`) and phases.
    pub fn from_parts(frequencies: Matrix, phases: Vec<f64>, sigma: f64) -> Result<Self, EncoderError> {
        if frequencies.rows() != phases.len() || frequencies.rows() == 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "{} frequency rows but {} phases",
                frequencies.rows(),
                phases.len()
            )));
        }
        let dim = phases.len();
        Ok(Self {
            seed: None,
            sigma,
            frequencies,
            phases,
            scale: 1.0 / (dim as f64).sqrt(),
        })
    }

    pub fn dim(&self) -> usize {
        self.phases.len()
    }

    pub fn state_dim(&self) -> usize {
        self.frequencies.cols()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn frequencies(&self) -> &Matrix {
        &self.frequencies
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn descriptor(&self) -> Option<EncoderDescriptor> {
        self.seed.map(|seed| EncoderDescriptor {
            seed,
            dim: self.dim(),
            state_dim: self.state_dim(),
            sigma: self.sigma,
        })
    }

    /// Fingerprint of the descriptor, or of the raw parameters for
    /// hand-assembled encoders.
    pub fn fingerprint(&self) -> u64 {
        match self.descriptor() {
            Some(d) => d.fingerprint(),
            None => self
                .frequencies
                .as_slice()
                .iter()
                .chain(&self.phases)
                .fold(0x5EED, |h, v| derive_seed(h, v.to_bits())),
        }
    }

    fn check_state(&self, s: &[f64]) -> Result<(), EncoderError> {
        if s.len() != self.state_dim() {
            return Err(EncoderError::DimensionMismatch {
                expected: self.state_dim(),
                actual: s.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, s: &[f64]) -> Result<Vec<f64>, EncoderError> {
        let mut out = vec![0.0; self.dim()];
        self.encode_into(s, &mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, s: &[f64], out: &mut [f64]) -> Result<(), EncoderError> {
        self.check_state(s)?;
        assert_eq!(out.len(), self.dim());
        for (k, o) in out.iter_mut().enumerate() {
            let arg = dot(self.frequencies.row(k), s) + self.phases[k];
            *o = self.scale * arg.cos();
        }
        Ok(())
    }

    /// Stacks `Φ(s)ᵀ` row-wise for each state: an `n × D` matrix.
    pub fn encode_batch<S: AsRef<[f64]>>(&self, states: &[S]) -> Result<Matrix, EncoderError> {
        let dim = self.dim();
        let mut data = vec![0.0; states.len() * dim];
        for (s, row) in states.iter().zip(data.chunks_exact_mut(dim.max(1))) {
            self.encode_into(s.as_ref(), row)?;
        }
        Ok(Matrix::from_raw(states.len(), dim, data))
    }

    /// `k_D(x, y) = ⟨Φ(x), Φ(y)⟩`.
    pub fn empirical_kernel(&self, x: &[f64], y: &[f64]) -> Result<f64, EncoderError> {
        let fx = self.encode(x)?;
        let fy = self.encode(y)?;
        Ok(dot(&fx, &fy))
    }
}

/// The kernel the empirical kernel concentrates on as `D → ∞`.
pub fn limiting_kernel(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * (-sq / (2.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    Homogeneous,
    Heterogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub mode: EncoderMode,
    pub n_clients: usize,
    pub state_dim: usize,
    /// Shared dimension in homogeneous mode.
    pub dim: usize,
    /// Per-client dimensions in heterogeneous mode, assigned cyclically.
    pub dims: Vec<usize>,
    pub sigma0: f64,
}

/// One encoder per client.
#[derive(Debug, Clone)]
pub struct EncoderFleet {
    encoders: Vec<Arc<RffEncoder>>,
    homogeneous: bool,
}

const FLEET_SIGMA_TAG: u64 = 0x51_67_4D_41;

/// Builds the client encoders. Client `i`'s encoder depends only on
/// `(master_seed, i)`, so growing the fleet leaves earlier clients untouched.
pub fn build_fleet(config: &FleetConfig, master_seed: u64) -> Result<EncoderFleet, EncoderError> {
    if config.n_clients == 0 {
        return Err(EncoderError::InvalidConfig("fleet needs at least one client".into()));
    }
    if !(config.sigma0 > 0.0) {
        return Err(EncoderError::InvalidConfig(format!("sigma0 must be > 0, got {}", config.sigma0)));
    }
    match config.mode {
        EncoderMode::Homogeneous => {
            let shared = Arc::new(RffEncoder::new(
                derive_seed(master_seed, 0),
                config.dim,
                config.state_dim,
                config.sigma0,
            )?);
            Ok(EncoderFleet {
                encoders: vec![shared; config.n_clients],
                homogeneous: true,
            })
        }
        EncoderMode::Heterogeneous => {
            if config.dims.is_empty() || config.dims.contains(&0) {
                return Err(EncoderError::InvalidConfig(
                    "heterogeneous fleet needs a nonempty list of positive dimensions".into(),
                ));
            }
            let encoders = (0..config.n_clients)
                .map(|i| {
                    let mut sigma_rng = rng_from_seed(derive_seed2(master_seed, FLEET_SIGMA_TAG, i as u64));
                    let sigma = config.sigma0 * sigma_rng.random_range(0.5..=1.5);
                    let dim = config.dims[i % config.dims.len()];
                    RffEncoder::new(derive_seed(master_seed, i as u64), dim, config.state_dim, sigma)
                        .map(Arc::new)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(EncoderFleet {
                encoders,
                homogeneous: false,
            })
        }
    }
}

impl EncoderFleet {
    pub fn from_encoders(encoders: Vec<Arc<RffEncoder>>) -> Self {
        let homogeneous = encoders
            .windows(2)
            .all(|w| Arc::ptr_eq(&w[0], &w[1]) || w[0].fingerprint() == w[1].fingerprint());
        Self { encoders, homogeneous }
    }

    pub fn len(&self) -> usize {
        self.encoders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoders.is_empty()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn encoder(&self, i: usize) -> &Arc<RffEncoder> {
        &self.encoders[i]
    }

    pub fn encoders(&self) -> &[Arc<RffEncoder>] {
        &self.encoders
    }

    pub fn dims(&self) -> Vec<usize> {
        self.encoders.iter().map(|e| e.dim()).collect()
    }
}
