//! Server-side federation.
//!
//! Shared encoders: the function-space average of the clients' Q-functions
//! is exactly the weighted average of their readouts. Heterogeneous
//! encoders: clients report Q-values on shared anchor states, the server
//! averages them into a teacher, and each client compiles the teacher into
//! its own feature space with ridge regression, either in the primal
//! (`D_i × D_i`) or the Woodbury-dual (`m × m`) form.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentError, ReadoutMatrix};
use crate::encoder::{EncoderFleet, RffEncoder};
use crate::envs::{Env, EnvError, EnvKind};
use crate::linalg::{cholesky_solve, smallest_positive, sym_eigvals, LinalgError, Matrix};

/// Eigenvalues below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FederationError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("federation weights must be nonnegative and sum to 1: {0}")]
    BadWeights(String),
    #[error("anchor cache for client {client} was built for a different encoder")]
    StaleCache { client: usize },
    #[error("heterogeneous federation needs an anchor set")]
    MissingAnchors,
    #[error("client {client}: {source}")]
    Solve { client: usize, source: LinalgError },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FederationMode {
    /// Weight averaging for shared encoders, anchor compilation otherwise.
    Fedqhd,
    /// No communication.
    Independent,
    /// Truncate to the smallest dimension, average, zero-pad back.
    TruncateAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Primal,
    Dual,
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn validate_weights(weights: &[f64], n: usize) -> Result<(), FederationError> {
    if weights.len() != n {
        return Err(FederationError::BadWeights(format!("{} weights for {n} clients", weights.len())));
    }
    if weights.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(FederationError::BadWeights(format!("{weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(FederationError::BadWeights(format!("sum is {total}")));
    }
    Ok(())
}

/// `W_glob = Σ π_i W_i`.
pub fn federate_homogeneous(ws: &[ReadoutMatrix], weights: &[f64]) -> Result<ReadoutMatrix, FederationError> {
    let first = ws
        .first()
        .ok_or_else(|| FederationError::ShapeMismatch("no client readouts".into()))?;
    validate_weights(weights, ws.len())?;
    if let Some(bad) = ws.iter().find(|w| w.shape() != first.shape()) {
        return Err(FederationError::ShapeMismatch(format!(
            "readout {:?} vs {:?}",
            bad.shape(),
            first.shape()
        )));
    }
    let mut acc = Matrix::zeros(first.actions(), first.dim());
    for (w, &p) in ws.iter().zip(weights) {
        acc.add_scaled(p, w.by_action())?;
    }
    Ok(ReadoutMatrix::from_matrix(&acc.transpose()))
}

/// Truncate-and-average baseline: average the first `D_min` feature rows
/// across clients, then zero-pad back to each client's own dimension.
pub fn truncate_fedavg(ws: &[ReadoutMatrix], weights: &[f64]) -> Result<Vec<ReadoutMatrix>, FederationError> {
    let first = ws
        .first()
        .ok_or_else(|| FederationError::ShapeMismatch("no client readouts".into()))?;
    validate_weights(weights, ws.len())?;
    let actions = first.actions();
    if ws.iter().any(|w| w.actions() != actions) {
        return Err(FederationError::ShapeMismatch("action counts differ".into()));
    }
    let d_min = ws.iter().map(|w| w.dim()).min().unwrap_or(0);
    let mut avg = vec![vec![0.0; d_min]; actions];
    for (w, &p) in ws.iter().zip(weights) {
        for (a, col) in avg.iter_mut().enumerate() {
            crate::linalg::axpy(p, &w.column(a)[..d_min], col);
        }
    }
    Ok(ws
        .iter()
        .map(|w| {
            let mut out = ReadoutMatrix::zeros(w.dim(), actions);
            for (a, col) in avg.iter().enumerate() {
                out.column_mut(a)[..d_min].copy_from_slice(col);
            }
            out
        })
        .collect())
}

/// Per-client anchor features `X_i` (m × D_i) with lazily computed
/// `G_i = X_i X_iᵀ` and `γ_i = λ⁺_min(G_i)`.
#[derive(Debug)]
pub struct ClientAnchors {
    fingerprint: u64,
    features: Matrix,
    gram: OnceLock<Matrix>,
    gamma: OnceLock<Result<f64, LinalgError>>,
}

impl ClientAnchors {
    pub fn new(encoder: &RffEncoder, states: &[Vec<f64>]) -> Result<Self, FederationError> {
        let features = encoder
            .encode_batch(states)
            .map_err(|e| FederationError::ShapeMismatch(e.to_string()))?;
        Ok(Self::from_features(encoder.fingerprint(), features))
    }

    pub fn from_features(fingerprint: u64, features: Matrix) -> Self {
        Self {
            fingerprint,
            features,
            gram: OnceLock::new(),
            gamma: OnceLock::new(),
        }
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn m(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn gram(&self) -> &Matrix {
        self.gram.get_or_init(|| self.features.gram_rows())
    }

    /// Smallest positive eigenvalue of `G_i`. Computed on whichever of
    /// `X Xᵀ` and `Xᵀ X` is smaller; both share their nonzero spectrum.
    pub fn gamma(&self) -> Result<f64, LinalgError> {
        self.gamma
            .get_or_init(|| {
                let small = if self.m() <= self.dim() {
                    self.gram().clone()
                } else {
                    self.features.gram_cols()
                };
                let values = sym_eigvals(&small)?;
                Ok(smallest_positive(&values, RANK_TOL).unwrap_or(0.0))
            })
            .clone()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// Shared reference states plus cached per-client anchor features.
#[derive(Debug)]
pub struct AnchorSet {
    states: Vec<Vec<f64>>,
    clients: Vec<Arc<ClientAnchors>>,
}

impl AnchorSet {
    /// Encodes `states` under every client encoder; clients sharing an
    /// encoder share one cache entry.
    pub fn new(states: Vec<Vec<f64>>, fleet: &EncoderFleet) -> Result<Self, FederationError> {
        if states.is_empty() {
            return Err(FederationError::ShapeMismatch("anchor set needs at least one state".into()));
        }
        let mut clients: Vec<Arc<ClientAnchors>> = Vec::with_capacity(fleet.len());
        for (i, enc) in fleet.encoders().iter().enumerate() {
            let reuse = (0..i).find(|&j| Arc::ptr_eq(fleet.encoder(j), enc));
            let entry = match reuse {
                Some(j) => clients[j].clone(),
                None => Arc::new(ClientAnchors::new(enc, &states)?),
            };
            clients.push(entry);
        }
        Ok(Self { states, clients })
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn m(&self) -> usize {
        self.states.len()
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client(&self, i: usize) -> &ClientAnchors {
        &self.clients[i]
    }

    pub fn gamma(&self, i: usize) -> Result<f64, LinalgError> {
        self.clients[i].gamma()
    }
}

/// Collects `m` states from uniformly random rollouts, restarting episodes
/// as needed. Each recorded state is an observation the policy acted from.
pub fn sample_anchor_states(kind: EnvKind, m: usize, seed: u64) -> Result<Vec<Vec<f64>>, EnvError> {
    let mut env = Env::new(kind, seed);
    let mut states = Vec::with_capacity(m);
    while states.len() < m {
        states.push(env.observation().to_vec());
        let a = env.sample_action();
        if env.step(a)?.done {
            env.reset();
        }
    }
    Ok(states)
}

pub fn sample_anchors(kind: EnvKind, m: usize, seed: u64, fleet: &EncoderFleet) -> Result<AnchorSet, FederationError> {
    if m == 0 {
        return Err(FederationError::ShapeMismatch("m must be at least 1".into()));
    }
    let states = sample_anchor_states(kind, m, seed)?;
    AnchorSet::new(states, fleet)
}

/// `Q_i^ref = X_i W_i` for readout `w` under client `i`'s cached features.
pub fn evaluate_anchors_with(
    anchors: &AnchorSet,
    client: usize,
    encoder_fingerprint: u64,
    w: &ReadoutMatrix,
) -> Result<Matrix, FederationError> {
    let cache = anchors.client(client);
    if cache.fingerprint() != encoder_fingerprint {
        return Err(FederationError::StaleCache { client });
    }
    if cache.dim() != w.dim() {
        return Err(FederationError::ShapeMismatch(format!(
            "anchor features have D={}, readout has D={}",
            cache.dim(),
            w.dim()
        )));
    }
    // (m × D) · (D × |A|) via the action-major layout
    Ok(cache.features().matmul_t(w.by_action())?)
}

pub fn evaluate_anchors(agent: &Agent, anchors: &AnchorSet, client: usize) -> Result<Matrix, FederationError> {
    evaluate_anchors_with(anchors, client, agent.encoder().fingerprint(), agent.weights())
}

/// Weighted anchor teacher `Σ π_i Q_i^ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTeacher {
    pub q_ref: Matrix,
    pub weights: Vec<f64>,
}

pub fn aggregate_teacher(q_refs: &[Matrix], weights: &[f64]) -> Result<AnchorTeacher, FederationError> {
    let first = q_refs
        .first()
        .ok_or_else(|| FederationError::ShapeMismatch("no anchor predictions".into()))?;
    validate_weights(weights, q_refs.len())?;
    let mut acc = Matrix::zeros(first.rows(), first.cols());
    for (q, &p) in q_refs.iter().zip(weights) {
        acc.add_scaled(p, q)
            .map_err(|e| FederationError::ShapeMismatch(e.to_string()))?;
    }
    Ok(AnchorTeacher {
        q_ref: acc,
        weights: weights.to_vec(),
    })
}

fn check_teacher(cache: &ClientAnchors, teacher: &Matrix) -> Result<(), FederationError> {
    if teacher.rows() != cache.m() {
        return Err(FederationError::ShapeMismatch(format!(
            "teacher has {} rows for {} anchors",
            teacher.rows(),
            cache.m()
        )));
    }
    Ok(())
}

/// `(XᵀX + λI)⁻¹ Xᵀ Q`, a `D × D` Cholesky solve.
pub fn compile_ridge_primal(cache: &ClientAnchors, teacher: &Matrix, lambda: f64) -> Result<ReadoutMatrix, FederationError> {
    check_teacher(cache, teacher)?;
    let x = cache.features();
    let mut a = x.gram_cols();
    a.add_diagonal(lambda);
    let rhs = x.t_matmul(teacher)?;
    let w = cholesky_solve(&a, &rhs)?;
    Ok(ReadoutMatrix::from_matrix(&w))
}

/// `Xᵀ (G + λI)⁻¹ Q`, an `m × m` Cholesky solve.
pub fn compile_ridge_dual(cache: &ClientAnchors, teacher: &Matrix, lambda: f64) -> Result<ReadoutMatrix, FederationError> {
    check_teacher(cache, teacher)?;
    if !(lambda > 0.0) {
        return Err(FederationError::Linalg(LinalgError::NotSpd { pivot: 0, value: lambda }));
    }
    let mut a = cache.gram().clone();
    a.add_diagonal(lambda);
    let alpha = cholesky_solve(&a, teacher)?;
    let w = cache.features().t_matmul(&alpha)?;
    Ok(ReadoutMatrix::from_matrix(&w))
}

/// The dual form when `m < D_i`, the primal otherwise.
pub fn choose_solver(m: usize, dim: usize) -> Solver {
    if m < dim {
        Solver::Dual
    } else {
        Solver::Primal
    }
}

/// Diagnostics for one client's compilation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompileReport {
    pub client: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub solver: Solver,
    /// `‖X_i W_i^glob − Q_ref^glob‖_F`.
    pub anchor_residual: f64,
    /// Relative Frobenius gap between primal and dual results, when both ran.
    pub primal_dual_discrepancy: Option<f64>,
    pub compile_ms: f64,
}

/// Compiles the teacher for `client`, picking the cheaper solve.
pub fn compile_client(
    anchors: &AnchorSet,
    client: usize,
    teacher: &AnchorTeacher,
    lambda: f64,
    cross_check: bool,
) -> Result<(ReadoutMatrix, CompileReport), FederationError> {
    let start = Instant::now();
    let cache = anchors.client(client);
    let solver = choose_solver(cache.m(), cache.dim());
    let solve = |s: Solver| match s {
        Solver::Primal => compile_ridge_primal(cache, &teacher.q_ref, lambda),
        Solver::Dual => compile_ridge_dual(cache, &teacher.q_ref, lambda),
    };
    let wrap = |e: FederationError| match e {
        FederationError::Linalg(source) => FederationError::Solve { client, source },
        other => other,
    };
    let w = solve(solver).map_err(wrap)?;
    let compile_ms = start.elapsed().as_secs_f64() * 1e3;
    let primal_dual_discrepancy = if cross_check && lambda > 0.0 {
        let other = solve(match solver {
            Solver::Primal => Solver::Dual,
            Solver::Dual => Solver::Primal,
        })
        .map_err(wrap)?;
        let diff = w.by_action().sub(other.by_action())?.frobenius_norm();
        Some(diff / w.frobenius_norm().max(f64::MIN_POSITIVE))
    } else {
        None
    };
    let fitted = cache.features().matmul_t(w.by_action())?;
    let anchor_residual = fitted.sub(&teacher.q_ref)?.frobenius_norm();
    let gamma = cache.gamma().map_err(|source| FederationError::Solve { client, source })?;
    Ok((
        w,
        CompileReport {
            client,
            lambda,
            gamma,
            solver,
            anchor_residual,
            primal_dual_discrepancy,
            compile_ms,
        },
    ))
}

/// One client's slice of a round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientRoundMetrics {
    pub client: usize,
    /// Total episodes this client has played after the round.
    pub episodes: usize,
    pub returns: Vec<f64>,
    pub compile: Option<CompileReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub clients: Vec<ClientRoundMetrics>,
    pub wall_ms: f64,
}

/// Round-level federation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSettings {
    pub mode: FederationMode,
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub local_episodes: usize,
    /// Run both ridge forms and report their discrepancy.
    pub cross_check: bool,
}

/// Local training on every client followed by one federation step.
///
/// Clients train in parallel; each owns its agent, environment and random
/// streams, so the outcome does not depend on scheduling.
pub fn run_round(
    round: usize,
    fleet: &EncoderFleet,
    agents: &mut [Agent],
    envs: &mut [Env],
    anchors: Option<&AnchorSet>,
    settings: &RoundSettings,
) -> Result<RoundMetrics, FederationError> {
    let start = Instant::now();
    let n = agents.len();
    if n != fleet.len() || envs.len() != n {
        return Err(FederationError::ShapeMismatch(format!(
            "{} agents, {} envs, {} encoders",
            n,
            envs.len(),
            fleet.len()
        )));
    }
    validate_weights(&settings.weights, n)?;

    let returns: Vec<Vec<f64>> = agents
        .par_iter_mut()
        .zip(envs.par_iter_mut())
        .map(|(agent, env)| {
            agent.sync_target();
            agent.run_local_episodes(env, settings.local_episodes)
        })
        .collect::<Result<_, _>>()?;

    let mut reports: Vec<Option<CompileReport>> = vec![None; n];
    match settings.mode {
        FederationMode::Independent => {}
        FederationMode::TruncateAvg => {
            let ws: Vec<ReadoutMatrix> = agents.iter().map(|a| a.weights().clone()).collect();
            for (agent, w) in agents.iter_mut().zip(truncate_fedavg(&ws, &settings.weights)?) {
                agent.install_global(w)?;
            }
        }
        FederationMode::Fedqhd if fleet.is_homogeneous() => {
            let ws: Vec<ReadoutMatrix> = agents.iter().map(|a| a.weights().clone()).collect();
            let global = federate_homogeneous(&ws, &settings.weights)?;
            for agent in agents.iter_mut() {
                agent.install_global(global.clone())?;
            }
        }
        FederationMode::Fedqhd => {
            let anchors = anchors.ok_or(FederationError::MissingAnchors)?;
            let q_refs = agents
                .iter()
                .enumerate()
                .map(|(i, a)| evaluate_anchors(a, anchors, i))
                .collect::<Result<Vec<_>, _>>()?;
            let teacher = aggregate_teacher(&q_refs, &settings.weights)?;
            let compiled = (0..n)
                .into_par_iter()
                .map(|i| compile_client(anchors, i, &teacher, settings.lambda, settings.cross_check))
                .collect::<Result<Vec<_>, _>>()?;
            for (i, (w, report)) in compiled.into_iter().enumerate() {
                agents[i].install_global(w)?;
                reports[i] = Some(report);
            }
        }
    }

    let clients = returns
        .into_iter()
        .zip(reports)
        .enumerate()
        .map(|(client, (returns, compile))| ClientRoundMetrics {
            client,
            episodes: agents[client].episodes_done(),
            returns,
            compile,
        })
        .collect();
    Ok(RoundMetrics {
        round,
        clients,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
