//! Federation-gap measurement on a synthetic testbed.
//!
//! The true Q-function is linear in a large "master" random-feature map,
//! so the best approximation in each client's feature space (its oracle)
//! and every term of the gap bound are directly computable:
//!
//! ```text
//! |Δ_i| ≤ h̄_i + √m·h̄_i/√(γ_i+λ) + λ‖Ŵ_i‖_F/(γ_i+λ)
//! h̄_i = Σ_{j≠i} π_j (2B sinθ_ij + ε_i + ε_j)
//! ```

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::ReadoutMatrix;
use crate::encoder::{build_fleet, EncoderError, EncoderFleet, EncoderMode, FleetConfig, RffEncoder};
use crate::federation::{aggregate_teacher, compile_client, AnchorSet, AnchorTeacher, FederationError, Solver};
use crate::linalg::{cholesky_solve, dot, norm2, sym_eigvals, LinalgError, Matrix};
use crate::rng::{derive_seed2, fill_standard_normal, rng_from_seed, SimRng};

/// Rows per block when streaming large feature matrices.
const CHUNK: usize = 1024;
/// Seed of the fixed evaluation grid.
pub const GRID_SEED: u64 = 0x6_12_1D;
/// A basis column whose residual falls below this fraction of its original
/// norm during orthonormalisation counts as linearly dependent.
pub const RANK_TOL: f64 = 1e-9;

const TRUTH_TAG: u64 = 0x7207;
const FLEET_TAG: u64 = 0xF1EE7;
const ANCHOR_TAG: u64 = 0xA2C402;
const FIT_TAG: u64 = 0xF17;
const HOLDOUT_TAG: u64 = 0x401D;
const PROBE_TAG: u64 = 0x9120BE;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("feature matrix of client {client} loses rank at column {column} on the probe sample")]
    RankDeficient { client: usize, column: usize },
    #[error("invalid testbed configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Federation(#[from] FederationError),
}

/// Synthetic testbed parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestbedConfig {
    pub state_dim: usize,
    /// States are drawn uniformly from `[-h, h]^d`.
    pub box_half_width: f64,
    pub master_dim: usize,
    pub master_sigma: f64,
    /// Kernel centres per action in the true weights.
    pub n_centers: usize,
    pub actions: usize,
    pub n_clients: usize,
    /// Client bandwidths are drawn from `U[0.5σ₀, 1.5σ₀]`.
    pub sigma0: f64,
    /// Oracle fits use `fit_factor · D_i` samples.
    pub fit_factor: usize,
    pub fit_ridge: f64,
    pub holdout: usize,
    pub grid: usize,
    /// Probe states for principal angles, as a multiple of the largest `D_i`.
    pub probe_factor: usize,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            state_dim: 9,
            box_half_width: 1.0,
            master_dim: 4096,
            master_sigma: 1.0,
            n_centers: 32,
            actions: 2,
            n_clients: 2,
            sigma0: 1.0,
            fit_factor: 10,
            fit_ridge: 1e-10,
            holdout: 2048,
            grid: 512,
            probe_factor: 2,
        }
    }
}

impl TestbedConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |msg: &str| Err(AnalysisError::InvalidConfig(msg.into()));
        if self.state_dim == 0 || self.master_dim == 0 || self.actions == 0 || self.n_clients == 0 {
            return bad("state_dim, master_dim, actions and n_clients must be positive");
        }
        if !(self.box_half_width > 0.0) || !(self.master_sigma > 0.0) || !(self.sigma0 > 0.0) {
            return bad("box_half_width, master_sigma and sigma0 must be positive");
        }
        if self.n_centers == 0 || self.fit_factor == 0 || self.holdout == 0 || self.grid == 0 || self.probe_factor == 0 {
            return bad("n_centers, fit_factor, holdout, grid and probe_factor must be positive");
        }
        if !(self.fit_ridge >= 0.0) {
            return bad("fit_ridge must be nonnegative");
        }
        Ok(())
    }
}

/// `Q*(s, a) = Φ*(s)·w*_a` with `w*_a = Σ_k α_{k,a} Φ*(c_k)`.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    master: Arc<RffEncoder>,
    weights: ReadoutMatrix,
    bound: f64,
    half_width: f64,
}

impl SyntheticTruth {
    pub fn new(config: &TestbedConfig, seed: u64) -> Result<Self, AnalysisError> {
        config.validate()?;
        let master = Arc::new(RffEncoder::new(
            derive_seed2(seed, TRUTH_TAG, 0),
            config.master_dim,
            config.state_dim,
            config.master_sigma,
        )?);
        let mut rng = rng_from_seed(derive_seed2(seed, TRUTH_TAG, 1));
        let h = config.box_half_width;
        let centers: Vec<Vec<f64>> = (0..config.n_centers)
            .map(|_| (0..config.state_dim).map(|_| rng.random_range(-h..h)).collect())
            .collect();
        let phi_c = master.encode_batch(&centers)?;
        let mut alpha = vec![0.0; config.n_centers * config.actions];
        fill_standard_normal(&mut rng, &mut alpha);
        let scale = 2.0 / (config.n_centers as f64).sqrt();
        let alpha = Matrix::from_vec(config.n_centers, config.actions, alpha.iter().map(|a| a * scale).collect())?;
        let w = phi_c.t_matmul(&alpha)?;
        Ok(Self::from_parts(master, ReadoutMatrix::from_matrix(&w), h))
    }

    pub fn from_parts(master: Arc<RffEncoder>, weights: ReadoutMatrix, half_width: f64) -> Self {
        let bound = (0..weights.actions())
            .map(|a| norm2(weights.column(a)))
            .fold(0.0, f64::max);
        Self {
            master,
            weights,
            bound,
            half_width,
        }
    }

    pub fn master(&self) -> &Arc<RffEncoder> {
        &self.master
    }

    pub fn weights(&self) -> &ReadoutMatrix {
        &self.weights
    }

    /// `B = max_a ‖w*_a‖₂`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn actions(&self) -> usize {
        self.weights.actions()
    }

    pub fn state_dim(&self) -> usize {
        self.master.state_dim()
    }

    pub fn sample_states(&self, n: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
        let h = self.half_width;
        (0..n)
            .map(|_| (0..self.state_dim()).map(|_| rng.random_range(-h..h)).collect())
            .collect()
    }

    pub fn q_star(&self, s: &[f64]) -> Result<Vec<f64>, AnalysisError> {
        Ok(self.weights.q_from_features(&self.master.encode(s)?))
    }

    /// `n × |A|` matrix of true values.
    pub fn q_star_batch(&self, states: &[Vec<f64>]) -> Result<Matrix, AnalysisError> {
        predict(&self.master, &self.weights, states)
    }
}

/// `Φ(states) W` computed in row blocks.
pub fn predict(encoder: &RffEncoder, w: &ReadoutMatrix, states: &[Vec<f64>]) -> Result<Matrix, AnalysisError> {
    let mut out = Vec::with_capacity(states.len() * w.actions());
    for block in states.chunks(CHUNK) {
        let x = encoder.encode_batch(block)?;
        out.extend(x.matmul_t(w.by_action())?.into_vec());
    }
    Ok(Matrix::from_vec(states.len(), w.actions(), out)?)
}

fn rms(a: &Matrix, b: &Matrix) -> Result<f64, AnalysisError> {
    let diff = a.sub(b)?;
    Ok(diff.frobenius_norm() / ((diff.rows() * diff.cols()).max(1) as f64).sqrt())
}

/// Client `i`'s least-squares approximation of `Q*`.
#[derive(Debug, Clone)]
pub struct OracleFit {
    pub weights: ReadoutMatrix,
    /// Held-out RMS of `Q̂_i − Q*`.
    pub eps_rep: f64,
}

/// Fits `Q*` in the span of `encoder` from `n_fit` samples of ν with a
/// tiny ridge, then measures the held-out residual.
pub fn oracle_projection(
    encoder: &RffEncoder,
    truth: &SyntheticTruth,
    n_fit: usize,
    ridge: f64,
    holdout: usize,
    seed: u64,
) -> Result<OracleFit, AnalysisError> {
    let mut rng = rng_from_seed(derive_seed2(seed, FIT_TAG, 0));
    let dim = encoder.dim();
    let mut xtx = Matrix::zeros(dim, dim);
    let mut xty = Matrix::zeros(dim, truth.actions());
    let mut remaining = n_fit;
    while remaining > 0 {
        let take = remaining.min(CHUNK);
        remaining -= take;
        let states = truth.sample_states(take, &mut rng);
        let x = encoder.encode_batch(&states)?;
        let y = truth.q_star_batch(&states)?;
        xtx.add_scaled(1.0, &x.gram_cols())?;
        xty.add_scaled(1.0, &x.t_matmul(&y)?)?;
    }
    xtx.add_diagonal(ridge);
    let w = ReadoutMatrix::from_matrix(&cholesky_solve(&xtx, &xty)?);
    let mut hold_rng = rng_from_seed(derive_seed2(seed, HOLDOUT_TAG, 0));
    let hold = truth.sample_states(holdout, &mut hold_rng);
    let eps_rep = rms(&predict(encoder, &w, &hold)?, &truth.q_star_batch(&hold)?)?;
    Ok(OracleFit { weights: w, eps_rep })
}

/// Orthonormal basis of the column space of `x` (`n × D`), returned as the
/// rows of a `D × n` matrix. Modified Gram–Schmidt with one
/// reorthogonalisation pass.
pub fn orthonormal_columns(x: &Matrix, client: usize) -> Result<Matrix, AnalysisError> {
    let mut q = x.transpose();
    let (k, n) = q.shape();
    for j in 0..k {
        let original = norm2(q.row(j));
        for _pass in 0..2 {
            for i in 0..j {
                let (done, rest) = q.as_mut_slice().split_at_mut(j * n);
                let qi = &done[i * n..(i + 1) * n];
                let qj = &mut rest[..n];
                let c = dot(qi, qj);
                for (y, &b) in qj.iter_mut().zip(qi) {
                    *y -= c * b;
                }
            }
        }
        let norm = norm2(q.row(j));
        if !(norm > RANK_TOL * original) || original == 0.0 {
            return Err(AnalysisError::RankDeficient { client, column: j });
        }
        for v in q.row_mut(j) {
            *v /= norm;
        }
    }
    Ok(q)
}

/// Sine of the largest principal angle between two orthonormal bases
/// (rows of `u` and `v`).
///
/// Projects the smaller basis onto the larger and takes the largest
/// singular value of the residual, which is accurate for small angles.
pub fn largest_principal_sine(u: &Matrix, v: &Matrix) -> Result<f64, AnalysisError> {
    if u.cols() != v.cols() {
        return Err(AnalysisError::Linalg(LinalgError::DimensionMismatch {
            expected: format!("{} probe rows", u.cols()),
            actual: format!("{}", v.cols()),
        }));
    }
    let (big, small) = if u.rows() >= v.rows() { (u, v) } else { (v, u) };
    // residual = small - (small bigᵀ) big
    let coeff = small.matmul_t(big)?;
    let residual = small.sub(&coeff.matmul(big)?)?;
    let top = sym_eigvals(&residual.gram_rows())?.first().copied().unwrap_or(0.0);
    Ok(top.max(0.0).sqrt().min(1.0))
}

/// Sine of the largest principal angle between the feature subspaces of
/// two encoders, restricted to `probes`.
pub fn principal_sine(enc_i: &RffEncoder, enc_j: &RffEncoder, probes: &[Vec<f64>]) -> Result<f64, AnalysisError> {
    if probes.len() < enc_i.dim().max(enc_j.dim()) {
        return Err(AnalysisError::InvalidConfig(format!(
            "{} probes cannot span dimension {}",
            probes.len(),
            enc_i.dim().max(enc_j.dim())
        )));
    }
    let u = orthonormal_columns(&enc_i.encode_batch(probes)?, 0)?;
    let v = orthonormal_columns(&enc_j.encode_batch(probes)?, 1)?;
    largest_principal_sine(&u, &v)
}

/// Principal-angle sines for every client pair.
pub fn sine_table(encoders: &[Arc<RffEncoder>], probes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let bases = encoders
        .par_iter()
        .enumerate()
        .map(|(i, e)| orthonormal_columns(&e.encode_batch(probes)?, i))
        .collect::<Result<Vec<_>, _>>()?;
    let n = encoders.len();
    let mut table = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = if Arc::ptr_eq(&encoders[i], &encoders[j]) {
                0.0
            } else {
                largest_principal_sine(&bases[i], &bases[j])?
            };
            table[i][j] = s;
            table[j][i] = s;
        }
    }
    Ok(table)
}

/// Bound terms for one client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundTerms {
    pub h_bar: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.term1 + self.term2 + self.term3
    }
}

/// Evaluates the three-term bound for client `i`.
#[allow(clippy::too_many_arguments)]
pub fn bound_terms(
    i: usize,
    weights: &[f64],
    sines: &[Vec<f64>],
    eps_rep: &[f64],
    bound: f64,
    m: usize,
    gamma: f64,
    lambda: f64,
    w_hat_norm: f64,
) -> BoundTerms {
    let h_bar: f64 = (0..weights.len())
        .filter(|&j| j != i)
        .map(|j| weights[j] * (2.0 * bound * sines[i][j] + eps_rep[i] + eps_rep[j]))
        .sum();
    let denom = gamma + lambda;
    BoundTerms {
        h_bar,
        term1: h_bar,
        term2: (m as f64).sqrt() * h_bar / denom.sqrt(),
        term3: lambda * w_hat_norm / denom,
    }
}

/// Settings for a gap measurement beyond the testbed itself.
#[derive(Debug, Clone, PartialEq)]
pub struct GapOptions {
    pub lambda: f64,
    pub weights: Vec<f64>,
    /// Compute principal angles and bound terms (the costly part at large D).
    pub with_bound: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientGap {
    pub client: usize,
    pub dim: usize,
    pub sigma: f64,
    pub gamma: f64,
    pub solver: Solver,
    pub eps_rep: f64,
    pub w_hat_norm: f64,
    /// `max |Δ_i(s, a)|` over the evaluation grid.
    pub delta_max: f64,
    /// RMS of compiled `Q_i − Q*` over the grid.
    pub q_error: f64,
    pub terms: Option<BoundTerms>,
}

impl ClientGap {
    pub fn bound_holds(&self) -> Option<bool> {
        self.terms.map(|t| self.delta_max <= t.total())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub m: usize,
    pub lambda: f64,
    /// The norm proxy `B` used in the bound.
    pub bound_b: f64,
    pub sines: Vec<Vec<f64>>,
    pub clients: Vec<ClientGap>,
}

impl GapReport {
    /// `Some(true)` when every client's gap is within its bound.
    pub fn bound_holds(&self) -> Option<bool> {
        self.clients
            .iter()
            .map(ClientGap::bound_holds)
            .try_fold(true, |acc, h| h.map(|h| acc && h))
    }

    pub fn max_delta(&self) -> f64 {
        self.clients.iter().map(|c| c.delta_max).fold(0.0, f64::max)
    }

    pub fn mean_q_error(&self) -> f64 {
        self.clients.iter().map(|c| c.q_error).sum::<f64>() / self.clients.len().max(1) as f64
    }
}

/// Everything the gap measurement needs, built once per configuration.
#[derive(Debug)]
pub struct Testbed {
    pub config: TestbedConfig,
    pub truth: SyntheticTruth,
    pub fleet: EncoderFleet,
    pub oracles: Vec<OracleFit>,
    pub grid: Vec<Vec<f64>>,
    seed: u64,
}

impl Testbed {
    /// Heterogeneous fleet with `dims` assigned cyclically.
    pub fn new(config: &TestbedConfig, dims: &[usize], seed: u64) -> Result<Self, AnalysisError> {
        let truth = SyntheticTruth::new(config, seed)?;
        let fleet = build_fleet(
            &FleetConfig {
                mode: EncoderMode::Heterogeneous,
                n_clients: config.n_clients,
                state_dim: config.state_dim,
                dim: 0,
                dims: dims.to_vec(),
                sigma0: config.sigma0,
            },
            derive_seed2(seed, FLEET_TAG, 0),
        )?;
        Self::with_fleet(config, truth, fleet, seed)
    }

    pub fn with_fleet(
        config: &TestbedConfig,
        truth: SyntheticTruth,
        fleet: EncoderFleet,
        seed: u64,
    ) -> Result<Self, AnalysisError> {
        config.validate()?;
        // the oracle depends only on the encoder, so identical encoders share one fit
        let mut unique: Vec<&Arc<RffEncoder>> = Vec::new();
        for e in fleet.encoders() {
            if !unique.iter().any(|u| u.fingerprint() == e.fingerprint()) {
                unique.push(e);
            }
        }
        let fits = unique
            .par_iter()
            .map(|e| {
                oracle_projection(
                    e,
                    &truth,
                    config.fit_factor * e.dim(),
                    config.fit_ridge,
                    config.holdout,
                    derive_seed2(seed, FIT_TAG, e.fingerprint()),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let oracles = fleet
            .encoders()
            .iter()
            .map(|e| {
                let k = unique.iter().position(|u| u.fingerprint() == e.fingerprint()).expect("listed above");
                fits[k].clone()
            })
            .collect();
        let grid = truth.sample_states(config.grid, &mut rng_from_seed(GRID_SEED));
        Ok(Self {
            config: config.clone(),
            truth,
            fleet,
            oracles,
            grid,
            seed,
        })
    }

    pub fn sample_anchors(&self, m: usize) -> Result<AnchorSet, AnalysisError> {
        let mut rng = rng_from_seed(derive_seed2(self.seed, ANCHOR_TAG, m as u64));
        Ok(AnchorSet::new(self.truth.sample_states(m, &mut rng), &self.fleet)?)
    }

    /// Teacher `Σ π_j X_j Ŵ_j` from the oracle readouts.
    pub fn oracle_teacher(&self, anchors: &AnchorSet, weights: &[f64]) -> Result<AnchorTeacher, AnalysisError> {
        let q_refs = self
            .oracles
            .iter()
            .enumerate()
            .map(|(j, o)| Ok(anchors.client(j).features().matmul_t(o.weights.by_action())?))
            .collect::<Result<Vec<_>, AnalysisError>>()?;
        Ok(aggregate_teacher(&q_refs, weights)?)
    }

    pub fn federation_gap(&self, anchors: &AnchorSet, options: &GapOptions) -> Result<GapReport, AnalysisError> {
        let teacher = self.oracle_teacher(anchors, &options.weights)?;
        self.gap_for_teacher(anchors, &teacher, options)
    }

    /// Gap report for an arbitrary teacher matrix on the anchors.
    pub fn gap_for_teacher(
        &self,
        anchors: &AnchorSet,
        teacher: &AnchorTeacher,
        options: &GapOptions,
    ) -> Result<GapReport, AnalysisError> {
        let n = self.fleet.len();
        let grid_q = self.truth.q_star_batch(&self.grid)?;
        let sines = if options.with_bound {
            let probes = self.truth.sample_states(
                self.config.probe_factor * self.fleet.dims().into_iter().max().unwrap_or(1),
                &mut rng_from_seed(derive_seed2(options.seed, PROBE_TAG, 0)),
            );
            sine_table(self.fleet.encoders(), &probes)?
        } else {
            Vec::new()
        };
        let eps: Vec<f64> = self.oracles.iter().map(|o| o.eps_rep).collect();
        let clients = (0..n)
            .into_par_iter()
            .map(|i| {
                let (w_glob, report) = compile_client(anchors, i, teacher, options.lambda, false)?;
                let enc = self.fleet.encoder(i);
                let oracle = &self.oracles[i];
                let q_hat = predict(enc, &oracle.weights, &self.grid)?;
                let q_glob = predict(enc, &w_glob, &self.grid)?;
                let delta_max = q_hat.sub(&q_glob)?.max_abs();
                let q_error = rms(&q_glob, &grid_q)?;
                let w_hat_norm = oracle.weights.frobenius_norm();
                let terms = options.with_bound.then(|| {
                    bound_terms(
                        i,
                        &options.weights,
                        &sines,
                        &eps,
                        self.truth.bound(),
                        anchors.m(),
                        report.gamma,
                        options.lambda,
                        w_hat_norm,
                    )
                });
                Ok(ClientGap {
                    client: i,
                    dim: enc.dim(),
                    sigma: enc.sigma(),
                    gamma: report.gamma,
                    solver: report.solver,
                    eps_rep: oracle.eps_rep,
                    w_hat_norm,
                    delta_max,
                    q_error,
                    terms,
                })
            })
            .collect::<Result<Vec<_>, AnalysisError>>()?;
        Ok(GapReport {
            m: anchors.m(),
            lambda: options.lambda,
            bound_b: self.truth.bound(),
            sines,
            clients,
        })
    }
}

/// Least-squares line `y = slope·x + intercept` with its R².
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LineFit {
        slope,
        intercept: my - slope * mx,
        r2,
    }
}

/// One (seed, D, m) configuration of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub seed: u64,
    pub dim: usize,
    pub m: usize,
    pub report: GapReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    /// Sweep coordinate (D or m) with the seed-and-client mean error.
    pub coordinate: Vec<f64>,
    pub mean_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionSweep {
    pub points: Vec<SweepPoint>,
    pub summary: SweepSummary,
    /// Fit of `ln error` against `ln D`.
    pub fit: LineFit,
}

fn summarize(points: &[SweepPoint], coordinate: impl Fn(&SweepPoint) -> usize) -> SweepSummary {
    let mut keys: Vec<usize> = points.iter().map(&coordinate).collect();
    keys.sort_unstable();
    keys.dedup();
    let mean_error = keys
        .iter()
        .map(|&k| {
            let errs: Vec<f64> = points
                .iter()
                .filter(|p| coordinate(p) == k)
                .map(|p| p.report.mean_q_error())
                .collect();
            errs.iter().sum::<f64>() / errs.len() as f64
        })
        .collect();
    SweepSummary {
        coordinate: keys.iter().map(|&k| k as f64).collect(),
        mean_error,
    }
}

/// Compiled Q-error against `D` with `m = m_factor · D` anchors.
pub fn dimension_sweep(
    dims: &[usize],
    m_factor: usize,
    config: &TestbedConfig,
    seeds: &[u64],
    lambda: f64,
    with_bound: bool,
) -> Result<DimensionSweep, AnalysisError> {
    let mut points = Vec::new();
    for &seed in seeds {
        for &dim in dims {
            let bed = Testbed::new(config, &[dim], seed)?;
            let m = m_factor * dim;
            let anchors = bed.sample_anchors(m)?;
            let report = bed.federation_gap(
                &anchors,
                &GapOptions {
                    lambda,
                    weights: crate::federation::uniform_weights(config.n_clients),
                    with_bound,
                    seed,
                },
            )?;
            points.push(SweepPoint { seed, dim, m, report });
        }
    }
    let summary = summarize(&points, |p| p.dim);
    let lx: Vec<f64> = summary.coordinate.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = summary.mean_error.iter().map(|v| v.ln()).collect();
    let fit = fit_line(&lx, &ly);
    Ok(DimensionSweep { points, summary, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorSweep {
    pub dim: usize,
    pub points: Vec<SweepPoint>,
    pub summary: SweepSummary,
    /// Linear fit of mean `γ` against `m` over the points with `m ≥ D`.
    pub gamma_fit: Option<LineFit>,
}

impl AnchorSweep {
    pub fn error_at(&self, m: usize) -> Option<f64> {
        self.summary
            .coordinate
            .iter()
            .position(|&c| c == m as f64)
            .map(|i| self.summary.mean_error[i])
    }
}

/// Compiled Q-error against `m` at fixed `D`. The fleet and oracles are
/// shared across `m` within a seed.
pub fn anchor_sweep(
    ms: &[usize],
    dim: usize,
    config: &TestbedConfig,
    seeds: &[u64],
    lambda: f64,
    with_bound: bool,
) -> Result<AnchorSweep, AnalysisError> {
    let mut points = Vec::new();
    for &seed in seeds {
        let bed = Testbed::new(config, &[dim], seed)?;
        for &m in ms {
            let anchors = bed.sample_anchors(m)?;
            let report = bed.federation_gap(
                &anchors,
                &GapOptions {
                    lambda,
                    weights: crate::federation::uniform_weights(config.n_clients),
                    with_bound,
                    seed,
                },
            )?;
            points.push(SweepPoint { seed, dim, m, report });
        }
    }
    let summary = summarize(&points, |p| p.m);
    let over: Vec<(f64, f64)> = summary
        .coordinate
        .iter()
        .filter(|&&m| m >= dim as f64)
        .map(|&m| {
            let gammas: Vec<f64> = points
                .iter()
                .filter(|p| p.m as f64 == m)
                .flat_map(|p| p.report.clients.iter().map(|c| c.gamma))
                .collect();
            (m, gammas.iter().sum::<f64>() / gammas.len() as f64)
        })
        .collect();
    let gamma_fit = (over.len() >= 2).then(|| {
        let (x, y): (Vec<f64>, Vec<f64>) = over.into_iter().unzip();
        fit_line(&x, &y)
    });
    Ok(AnchorSweep {
        dim,
        points,
        summary,
        gamma_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::uniform_weights;

    fn small_config() -> TestbedConfig {
        TestbedConfig {
            master_dim: 256,
            holdout: 512,
            grid: 256,
            ..TestbedConfig::default()
        }
    }

    fn options(lambda: f64, n: usize) -> GapOptions {
        GapOptions {
            lambda,
            weights: uniform_weights(n),
            with_bound: true,
            seed: 3,
        }
    }

    #[test]
    fn fit_line_recovers_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| -0.5 * v + 2.0).collect();
        let f = fit_line(&x, &y);
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truth_is_deterministic_and_bounded() {
        let c = small_config();
        let a = SyntheticTruth::new(&c, 5).unwrap();
        let b = SyntheticTruth::new(&c, 5).unwrap();
        assert_eq!(a.weights(), b.weights());
        let s = a.sample_states(64, &mut rng_from_seed(1));
        assert!(s.iter().flatten().all(|v| v.abs() <= c.box_half_width));
        let q = a.q_star_batch(&s).unwrap();
        // |Φ(s)·w| ≤ ‖Φ(s)‖‖w‖ ≤ B since ‖Φ(s)‖ ≤ 1
        assert!(q.max_abs() <= a.bound() + 1e-12);
        assert!(a.bound() > 0.0);
    }

    #[test]
    fn master_encoder_represents_truth_exactly() {
        let c = TestbedConfig {
            master_dim: 96,
            ..small_config()
        };
        let truth = SyntheticTruth::new(&c, 2).unwrap();
        let fit = oracle_projection(truth.master(), &truth, 10 * 96, 1e-12, 512, 9).unwrap();
        assert!(fit.eps_rep <= 1e-6, "eps_rep {}", fit.eps_rep);
    }

    #[test]
    fn representation_error_shrinks_with_dimension() {
        let c = small_config();
        let eps: Vec<f64> = [32, 128, 512]
            .iter()
            .map(|&d| Testbed::new(&TestbedConfig { n_clients: 1, ..c.clone() }, &[d], 4).unwrap().oracles[0].eps_rep)
            .collect();
        assert!(eps[0] > eps[1] && eps[1] > eps[2], "{eps:?}");
    }

    #[test]
    fn oracle_is_stable_under_resampling() {
        let c = TestbedConfig {
            n_clients: 1,
            ..small_config()
        };
        let truth = SyntheticTruth::new(&c, 1).unwrap();
        let enc = RffEncoder::new(77, 64, c.state_dim, 1.0).unwrap();
        let a = oracle_projection(&enc, &truth, 640, 1e-10, 1024, 1).unwrap();
        let b = oracle_projection(&enc, &truth, 640, 1e-10, 1024, 2).unwrap();
        let hold = truth.sample_states(1024, &mut rng_from_seed(99));
        let gap = rms(&predict(&enc, &a.weights, &hold).unwrap(), &predict(&enc, &b.weights, &hold).unwrap()).unwrap();
        assert!(gap <= 2.0 * a.eps_rep, "{gap} vs eps_rep {}", a.eps_rep);
    }

    #[test]
    fn oracle_beats_perturbed_readouts() {
        let c = small_config();
        let truth = SyntheticTruth::new(&c, 6).unwrap();
        let enc = RffEncoder::new(8, 48, c.state_dim, 1.0).unwrap();
        let fit = oracle_projection(&enc, &truth, 4800, 0.0, 1, 1).unwrap();
        // training objective is minimised by the fit
        let states = truth.sample_states(4800, &mut rng_from_seed(derive_seed2(1, FIT_TAG, 0)));
        let q = truth.q_star_batch(&states).unwrap();
        let loss = |w: &ReadoutMatrix| rms(&predict(&enc, w, &states).unwrap(), &q).unwrap();
        let base = loss(&fit.weights);
        let mut rng = rng_from_seed(4);
        for _ in 0..5 {
            let mut w = fit.weights.clone();
            for a in 0..w.actions() {
                for v in w.column_mut(a) {
                    *v += 1e-3 * crate::rng::standard_normal(&mut rng);
                }
            }
            assert!(loss(&w) >= base);
        }
    }

    #[test]
    fn principal_sine_of_hand_bases() {
        let e1 = Matrix::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let e2 = Matrix::from_vec(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let plane = Matrix::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((largest_principal_sine(&e1, &e2).unwrap() - 1.0).abs() < 1e-12);
        assert!(largest_principal_sine(&e1, &plane).unwrap() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let diag = Matrix::from_vec(1, 3, vec![h, 0.0, h]).unwrap();
        assert!((largest_principal_sine(&diag, &plane).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn principal_sine_of_encoders() {
        let probes = SyntheticTruth::new(&small_config(), 1)
            .unwrap()
            .sample_states(96, &mut rng_from_seed(2));
        let d = small_config().state_dim;
        let a = RffEncoder::new(1, 24, d, 1.0).unwrap();
        let b = RffEncoder::new(2, 40, d, 1.3).unwrap();
        assert!(principal_sine(&a, &a, &probes).unwrap() < 1e-7);
        let ab = principal_sine(&a, &b, &probes).unwrap();
        let ba = principal_sine(&b, &a, &probes).unwrap();
        assert!((ab - ba).abs() < 1e-12 && ab > 0.0 && ab <= 1.0);
        // a's features are a subset of the wider encoder's
        let take = |m: &Matrix, n: usize| Matrix::from_vec(n, m.cols(), m.as_slice()[..n * m.cols()].to_vec()).unwrap();
        let wide = RffEncoder::new(1, 48, d, 1.0).unwrap();
        let narrow = RffEncoder::from_parts(take(wide.frequencies(), 24), wide.phases()[..24].to_vec(), 1.0).unwrap();
        assert!(principal_sine(&narrow, &wide, &probes).unwrap() < 1e-6);
        assert!(principal_sine(&a, &RffEncoder::new(3, 200, d, 1.0).unwrap(), &probes).is_err());
    }

    #[test]
    fn bound_terms_match_hand_values() {
        let sines = vec![vec![0.0, 0.5], vec![0.5, 0.0]];
        let t = bound_terms(0, &[0.25, 0.75], &sines, &[0.1, 0.2], 2.0, 16, 3.0, 1.0, 8.0);
        let h = 0.75 * (2.0 * 2.0 * 0.5 + 0.1 + 0.2);
        assert!((t.h_bar - h).abs() < 1e-15);
        assert_eq!(t.term1, h);
        assert!((t.term2 - 4.0 * h / 2.0).abs() < 1e-12);
        assert!((t.term3 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn shared_encoder_has_zero_gap() {
        let c = small_config();
        let truth = SyntheticTruth::new(&c, 3).unwrap();
        let enc = Arc::new(RffEncoder::new(5, 64, c.state_dim, 1.0).unwrap());
        let fleet = EncoderFleet::from_encoders(vec![enc.clone(), enc]);
        let bed = Testbed::with_fleet(&c, truth, fleet, 3).unwrap();
        let report = bed.federation_gap(&bed.sample_anchors(256).unwrap(), &options(1e-10, 2)).unwrap();
        assert!(report.max_delta() <= 1e-6, "{}", report.max_delta());
        assert_eq!(report.sines[0][1], 0.0);
    }

    #[test]
    fn single_client_gap_is_within_ridge_term() {
        let c = TestbedConfig {
            n_clients: 1,
            ..small_config()
        };
        let bed = Testbed::new(&c, &[64], 8).unwrap();
        for lambda in [1e-6, 1e-2, 1.0] {
            let report = bed.federation_gap(&bed.sample_anchors(128).unwrap(), &options(lambda, 1)).unwrap();
            let gap = &report.clients[0];
            let t = gap.terms.unwrap();
            assert_eq!(t.h_bar, 0.0);
            assert!(gap.delta_max <= t.term3, "λ={lambda}: {} > {}", gap.delta_max, t.term3);
        }
    }

    #[test]
    fn bound_holds_on_heterogeneous_fleet() {
        let c = TestbedConfig {
            n_clients: 3,
            ..small_config()
        };
        let bed = Testbed::new(&c, &[32, 48, 64], 11).unwrap();
        let report = bed.federation_gap(&bed.sample_anchors(100).unwrap(), &options(1e-6, 3)).unwrap();
        assert_eq!(report.bound_holds(), Some(true));
        assert!(report.clients.iter().all(|g| g.gamma > 0.0));
        assert!(report.sines[0][1] > 0.0);
    }

    #[test]
    fn residual_outside_feature_span_does_not_move_compile() {
        let c = small_config();
        let bed = Testbed::new(&c, &[24, 40], 12).unwrap();
        let anchors = bed.sample_anchors(80).unwrap();
        let teacher = bed.oracle_teacher(&anchors, &[0.5, 0.5]).unwrap();
        let x = anchors.client(0).features();
        let basis = orthonormal_columns(x, 0).unwrap();
        let mut rng = rng_from_seed(13);
        let mut z = Matrix::zeros(anchors.m(), 2);
        for v in z.as_mut_slice() {
            *v = crate::rng::standard_normal(&mut rng);
        }
        let r = z.sub(&basis.t_matmul(&basis.matmul(&z).unwrap()).unwrap()).unwrap();
        let mut shifted = teacher.clone();
        shifted.q_ref.add_scaled(1.0, &r).unwrap();
        let (w0, _) = compile_client(&anchors, 0, &teacher, 1e-6, false).unwrap();
        let (w1, _) = compile_client(&anchors, 0, &shifted, 1e-6, false).unwrap();
        let q0 = predict(bed.fleet.encoder(0), &w0, &bed.grid).unwrap();
        let q1 = predict(bed.fleet.encoder(0), &w1, &bed.grid).unwrap();
        assert!(q0.sub(&q1).unwrap().max_abs() <= 1e-8);
        assert!(r.max_abs() > 0.1);
        let opts = GapOptions {
            with_bound: false,
            ..options(1e-6, 2)
        };
        let d0 = bed.gap_for_teacher(&anchors, &teacher, &opts).unwrap().clients[0].delta_max;
        let d1 = bed.gap_for_teacher(&anchors, &shifted, &opts).unwrap().clients[0].delta_max;
        assert!((d0 - d1).abs() <= 1e-8, "{d0} vs {d1}");
    }

    #[test]
    fn config_validation_rejects_zeros() {
        for c in [
            TestbedConfig { state_dim: 0, ..TestbedConfig::default() },
            TestbedConfig { sigma0: 0.0, ..TestbedConfig::default() },
            TestbedConfig { grid: 0, ..TestbedConfig::default() },
            TestbedConfig { fit_ridge: -1.0, ..TestbedConfig::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
