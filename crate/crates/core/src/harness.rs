//! Experiment runner: config parsing, federated training runs, sweeps and
//! metrics files.
//!
//! A run writes three files into its output directory:
//!
//! * `resolved_config.json`: the config with every default filled in;
//! * `rounds.jsonl`: one record per (seed, round, client);
//! * `summary.csv`: final-100-episode mean return per (seed, client), per
//!   seed and overall.
//!
//! Sweeps write `sweep_<kind>.csv` with the columns in [`SWEEP_HEADER`].

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, AgentError};
use crate::analysis::{anchor_sweep, dimension_sweep, AnalysisError, SweepPoint, TestbedConfig};
use crate::encoder::{build_fleet, EncoderError, EncoderFleet, EncoderMode, FleetConfig};
use crate::envs::{Env, EnvKind};
use crate::federation::{
    run_round, sample_anchors, uniform_weights, validate_weights, FederationError, FederationMode, RoundMetrics,
    RoundSettings,
};
use crate::rng::{derive_seed2, GENERATOR};

pub const SUMMARY_HEADER: &str = "seed,client,episodes,final100_mean,mean_return";
pub const SWEEP_HEADER: &str =
    "row_type,config_id,seed,client,n_clients,D,m,lambda,delta_max,q_error,term1,term2,term3,gamma_i,eps_rep,final_reward,slope,intercept,r2";
/// Episodes averaged for the headline metric.
pub const FINAL_WINDOW: usize = 100;

const FLEET_TAG: u64 = 0xF1EE;
const AGENT_TAG: u64 = 0xA6E7;
const ENV_TAG: u64 = 0xE7F;
const ANCHOR_TAG: u64 = 0xA7C;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Io { .. } => 3,
            _ => 1,
        }
    }
}

impl From<EncoderError> for HarnessError {
    fn from(e: EncoderError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderBlock {
    pub mode: EncoderMode,
    /// Shared dimension (homogeneous).
    pub dim: usize,
    /// Dimensions cycled over clients (heterogeneous).
    pub dims: Vec<usize>,
    pub sigma0: f64,
}

impl Default for EncoderBlock {
    fn default() -> Self {
        Self {
            mode: EncoderMode::Homogeneous,
            dim: 4096,
            dims: vec![500, 1000, 2000, 5000, 10000],
            sigma0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationBlock {
    pub mode: FederationMode,
    /// Anchor states for heterogeneous compilation.
    pub anchors: usize,
    pub lambda: f64,
    /// Client weights; uniform when absent.
    pub weights: Option<Vec<f64>>,
    /// Run both ridge forms each round and report their discrepancy.
    pub cross_check: bool,
}

impl Default for FederationBlock {
    fn default() -> Self {
        Self {
            mode: FederationMode::Fedqhd,
            anchors: 200,
            lambda: 1e-6,
            weights: None,
            cross_check: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimensionSweepBlock {
    pub testbed: TestbedConfig,
    pub dims: Vec<usize>,
    pub m_factor: usize,
    pub lambda: f64,
    pub with_bound: bool,
}

impl Default for DimensionSweepBlock {
    fn default() -> Self {
        Self {
            testbed: TestbedConfig::default(),
            dims: vec![16, 32, 64, 128, 256, 512, 1024, 2048],
            m_factor: 4,
            lambda: 1e-6,
            with_bound: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorSweepBlock {
    /// A single client in a lower-dimensional state space by default, so the
    /// ridge error is not swamped by the cross-client subspace gap.
    pub testbed: TestbedConfig,
    pub ms: Vec<usize>,
    pub dim: usize,
    pub lambda: f64,
    pub with_bound: bool,
}

impl Default for AnchorSweepBlock {
    fn default() -> Self {
        Self {
            testbed: TestbedConfig {
                state_dim: 7,
                n_clients: 1,
                ..TestbedConfig::default()
            },
            ms: vec![51, 128, 256, 512, 1024, 2048],
            dim: 512,
            lambda: 1e-6,
            with_bound: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalabilitySweepBlock {
    pub n_clients: Vec<usize>,
}

impl Default for ScalabilitySweepBlock {
    fn default() -> Self {
        Self {
            n_clients: vec![1, 2, 5, 20],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub dimension: DimensionSweepBlock,
    pub anchor: AnchorSweepBlock,
    pub scalability: ScalabilitySweepBlock,
}

/// One reproducible experiment. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub n_clients: usize,
    pub rounds: usize,
    /// Local episodes between federation steps.
    pub local_episodes: usize,
    pub encoder: EncoderBlock,
    pub agent: AgentConfig,
    pub federation: FederationBlock,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Dump each client's final readout and encoder descriptor.
    pub checkpoint: bool,
    pub sweep: SweepBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::CartPole,
            n_clients: 5,
            rounds: 12,
            local_episodes: 50,
            encoder: EncoderBlock::default(),
            agent: AgentConfig::default(),
            federation: FederationBlock::default(),
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("out"),
            checkpoint: false,
            sweep: SweepBlock::default(),
        }
    }
}

/// The resolved config plus values fixed by the implementation.
#[derive(Debug, Clone, Serialize)]
struct ResolvedConfig<'a> {
    #[serde(flatten)]
    config: &'a RunConfig,
    federation_weights: Vec<f64>,
    total_episodes: usize,
    final_window: usize,
    rng: &'static str,
    state_dim: usize,
    action_count: usize,
    max_episode_steps: usize,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => HarnessError::Config(format!("config {} not found", path.display())),
            _ => HarnessError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n_clients == 0 || self.rounds == 0 || self.local_episodes == 0 {
            return bad("n_clients, rounds and local_episodes must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.agent.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.encoder.sigma0 > 0.0) {
            return bad(format!("sigma0 must be positive, got {}", self.encoder.sigma0));
        }
        match self.encoder.mode {
            EncoderMode::Homogeneous if self.encoder.dim == 0 => return bad("encoder.dim must be positive".into()),
            EncoderMode::Heterogeneous if self.encoder.dims.is_empty() || self.encoder.dims.contains(&0) => {
                return bad("encoder.dims must be a nonempty list of positive dimensions".into())
            }
            _ => {}
        }
        if !(self.federation.lambda >= 0.0) {
            return bad("federation.lambda must be nonnegative".into());
        }
        if self.encoder.mode == EncoderMode::Heterogeneous
            && self.federation.mode == FederationMode::Fedqhd
            && (self.federation.anchors == 0 || self.federation.lambda == 0.0)
        {
            return bad("heterogeneous fedqhd needs anchors > 0 and lambda > 0".into());
        }
        if let Some(w) = &self.federation.weights {
            validate_weights(w, self.n_clients).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        for testbed in [&self.sweep.dimension.testbed, &self.sweep.anchor.testbed] {
            testbed.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn federation_weights(&self) -> Vec<f64> {
        self.federation
            .weights
            .clone()
            .unwrap_or_else(|| uniform_weights(self.n_clients))
    }

    pub fn fleet_config(&self) -> FleetConfig {
        FleetConfig {
            mode: self.encoder.mode,
            n_clients: self.n_clients,
            state_dim: self.env.spec().state_dim,
            dim: self.encoder.dim,
            dims: self.encoder.dims.clone(),
            sigma0: self.encoder.sigma0,
        }
    }

    /// JSON of the config with all defaults and derived values spelled out.
    pub fn resolved_json(&self) -> String {
        let spec = self.env.spec();
        let resolved = ResolvedConfig {
            config: self,
            federation_weights: self.federation_weights(),
            total_episodes: self.rounds * self.local_episodes,
            final_window: FINAL_WINDOW,
            rng: GENERATOR,
            state_dim: spec.state_dim,
            action_count: spec.action_count,
            max_episode_steps: spec.max_episode_steps,
        };
        let mut text = serde_json::to_string_pretty(&resolved).expect("config serialises");
        text.push('\n');
        text
    }
}

/// Per-round record written to `rounds.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub seed: u64,
    pub round: usize,
    pub client: usize,
    pub episodes: usize,
    pub returns: Vec<f64>,
    pub gamma_i: Option<f64>,
    pub lambda: f64,
    pub anchor_residual: Option<f64>,
    pub compile_ms: Option<f64>,
}

impl RoundRecord {
    fn from_metrics(seed: u64, lambda: f64, metrics: &RoundMetrics) -> Vec<Self> {
        metrics
            .clients
            .iter()
            .map(|c| RoundRecord {
                seed,
                round: metrics.round,
                client: c.client,
                episodes: c.episodes,
                returns: c.returns.clone(),
                gamma_i: c.compile.as_ref().map(|r| r.gamma),
                lambda,
                anchor_residual: c.compile.as_ref().map(|r| r.anchor_residual),
                compile_ms: c.compile.as_ref().map(|r| r.compile_ms),
            })
            .collect()
    }
}

/// Final-window statistics for one client.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientSummary {
    pub seed: u64,
    pub client: usize,
    pub episodes: usize,
    pub final100_mean: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub clients: Vec<ClientSummary>,
    /// Mean over clients of the final-window mean, per seed.
    pub per_seed: Vec<(u64, f64)>,
    /// Mean over seeds of `per_seed`.
    pub overall: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Summarises per-client return histories.
pub fn summarize_returns(seed: u64, histories: &[Vec<f64>]) -> Vec<ClientSummary> {
    histories
        .iter()
        .enumerate()
        .map(|(client, h)| ClientSummary {
            seed,
            client,
            episodes: h.len(),
            final100_mean: mean(&h[h.len().saturating_sub(FINAL_WINDOW)..]),
            mean_return: mean(h),
        })
        .collect()
}

impl RunSummary {
    pub fn from_clients(clients: Vec<ClientSummary>) -> Self {
        let mut seeds: Vec<u64> = Vec::new();
        for c in &clients {
            if !seeds.contains(&c.seed) {
                seeds.push(c.seed);
            }
        }
        let per_seed: Vec<(u64, f64)> = seeds
            .iter()
            .map(|&s| {
                let vals: Vec<f64> = clients.iter().filter(|c| c.seed == s).map(|c| c.final100_mean).collect();
                (s, mean(&vals))
            })
            .collect();
        let overall = mean(&per_seed.iter().map(|p| p.1).collect::<Vec<_>>());
        Self {
            clients,
            per_seed,
            overall,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for c in &self.clients {
            let _ = writeln!(out, "{},{},{},{},{}", c.seed, c.client, c.episodes, c.final100_mean, c.mean_return);
        }
        for (seed, v) in &self.per_seed {
            let _ = writeln!(out, "{seed},all,,{v},");
        }
        let _ = writeln!(out, "all,all,,{},", self.overall);
        out
    }
}

/// Everything one seed needs: fleet, agents, environments.
pub struct SeedRun {
    pub seed: u64,
    pub fleet: EncoderFleet,
    pub agents: Vec<Agent>,
    pub envs: Vec<Env>,
}

impl SeedRun {
    pub fn new(config: &RunConfig, seed: u64) -> Result<Self, HarnessError> {
        let fleet = build_fleet(&config.fleet_config(), derive_seed2(seed, FLEET_TAG, 0))?;
        let actions = config.env.spec().action_count;
        let agents = (0..config.n_clients)
            .map(|i| {
                Agent::new(
                    fleet.encoder(i).clone(),
                    actions,
                    config.agent.clone(),
                    derive_seed2(seed, AGENT_TAG, i as u64),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let envs = (0..config.n_clients)
            .map(|i| Env::new(config.env, derive_seed2(seed, ENV_TAG, i as u64)))
            .collect();
        Ok(Self {
            seed,
            fleet,
            agents,
            envs,
        })
    }

    /// Runs every round, handing each round's metrics to `on_round`.
    pub fn run(
        &mut self,
        config: &RunConfig,
        mut on_round: impl FnMut(&RoundMetrics) -> Result<(), HarnessError>,
    ) -> Result<Vec<Vec<f64>>, HarnessError> {
        let needs_anchors = config.federation.mode == FederationMode::Fedqhd && !self.fleet.is_homogeneous();
        let anchors = if needs_anchors {
            Some(sample_anchors(
                config.env,
                config.federation.anchors,
                derive_seed2(self.seed, ANCHOR_TAG, 0),
                &self.fleet,
            )?)
        } else {
            None
        };
        let settings = RoundSettings {
            mode: config.federation.mode,
            weights: config.federation_weights(),
            lambda: config.federation.lambda,
            local_episodes: config.local_episodes,
            cross_check: config.federation.cross_check,
        };
        let mut histories = vec![Vec::new(); config.n_clients];
        for round in 0..config.rounds {
            let metrics = run_round(
                round,
                &self.fleet,
                &mut self.agents,
                &mut self.envs,
                anchors.as_ref(),
                &settings,
            )?;
            for c in &metrics.clients {
                histories[c.client].extend_from_slice(&c.returns);
            }
            on_round(&metrics)?;
        }
        Ok(histories)
    }
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Trains every seed and writes the run's metrics files into `out_dir`.
pub fn run_experiment(config: &RunConfig, out_dir: &Path) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    create_dir(out_dir)?;
    write_file(&out_dir.join("resolved_config.json"), &config.resolved_json())?;
    let rounds_path = out_dir.join("rounds.jsonl");
    let file = fs::File::create(&rounds_path).map_err(io_err(&rounds_path))?;
    let mut rounds = BufWriter::new(file);
    let mut clients = Vec::new();
    for &seed in &config.seeds {
        let mut run = SeedRun::new(config, seed)?;
        let histories = run.run(config, |metrics| {
            for rec in RoundRecord::from_metrics(seed, config.federation.lambda, metrics) {
                let line = serde_json::to_string(&rec).expect("record serialises");
                writeln!(rounds, "{line}").map_err(io_err(&rounds_path))?;
            }
            Ok(())
        })?;
        if config.checkpoint {
            write_checkpoints(out_dir, &run)?;
        }
        clients.extend(summarize_returns(seed, &histories));
    }
    rounds.flush().map_err(io_err(&rounds_path))?;
    let summary = RunSummary::from_clients(clients);
    write_file(&out_dir.join("summary.csv"), &summary.to_csv())?;
    Ok(summary)
}

fn write_checkpoints(out_dir: &Path, run: &SeedRun) -> Result<(), HarnessError> {
    let dir = out_dir.join("checkpoints");
    create_dir(&dir)?;
    for (i, agent) in run.agents.iter().enumerate() {
        let stem = format!("seed{}_client{}", run.seed, i);
        let bin = dir.join(format!("{stem}.bin"));
        write_file_bytes(&bin, &agent.weights().to_matrix().to_binary())?;
        if let Some(desc) = agent.encoder().descriptor() {
            let json = serde_json::to_string_pretty(&desc).expect("descriptor serialises");
            write_file(&dir.join(format!("{stem}.encoder.json")), &json)?;
        }
    }
    Ok(())
}

fn write_file_bytes(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Dimension,
    Anchor,
    Scalability,
}

impl SweepKind {
    pub fn file_name(self) -> &'static str {
        match self {
            SweepKind::Dimension => "sweep_dimension.csv",
            SweepKind::Anchor => "sweep_anchor.csv",
            SweepKind::Scalability => "sweep_scalability.csv",
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dimension" => Ok(SweepKind::Dimension),
            "anchor" => Ok(SweepKind::Anchor),
            "scalability" => Ok(SweepKind::Scalability),
            other => Err(HarnessError::Config(format!("unknown sweep kind {other:?}"))),
        }
    }
}

/// One row of a sweep CSV; empty cells are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepRow {
    pub row_type: &'static str,
    pub config_id: String,
    pub seed: Option<u64>,
    pub client: Option<usize>,
    pub n_clients: Option<usize>,
    pub dim: Option<usize>,
    pub m: Option<usize>,
    pub lambda: Option<f64>,
    pub delta_max: Option<f64>,
    pub q_error: Option<f64>,
    pub term1: Option<f64>,
    pub term2: Option<f64>,
    pub term3: Option<f64>,
    pub gamma_i: Option<f64>,
    pub eps_rep: Option<f64>,
    pub final_reward: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
}

fn cell<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        [
            self.row_type.to_string(),
            self.config_id.clone(),
            cell(&self.seed),
            cell(&self.client),
            cell(&self.n_clients),
            cell(&self.dim),
            cell(&self.m),
            cell(&self.lambda),
            cell(&self.delta_max),
            cell(&self.q_error),
            cell(&self.term1),
            cell(&self.term2),
            cell(&self.term3),
            cell(&self.gamma_i),
            cell(&self.eps_rep),
            cell(&self.final_reward),
            cell(&self.slope),
            cell(&self.intercept),
            cell(&self.r2),
        ]
        .join(",")
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

fn gap_rows(points: &[SweepPoint], n_clients: usize) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for p in points {
        let config_id = format!("s{}_D{}_m{}", p.seed, p.dim, p.m);
        for c in &p.report.clients {
            rows.push(SweepRow {
                row_type: "point",
                config_id: config_id.clone(),
                seed: Some(p.seed),
                client: Some(c.client),
                n_clients: Some(n_clients),
                dim: Some(c.dim),
                m: Some(p.m),
                lambda: Some(p.report.lambda),
                delta_max: Some(c.delta_max),
                q_error: Some(c.q_error),
                term1: c.terms.map(|t| t.term1),
                term2: c.terms.map(|t| t.term2),
                term3: c.terms.map(|t| t.term3),
                gamma_i: Some(c.gamma),
                eps_rep: Some(c.eps_rep),
                ..SweepRow::default()
            });
        }
    }
    rows
}

/// Result of a sweep: its rows plus the fitted line, when there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
    pub path: PathBuf,
}

impl SweepOutput {
    pub fn fit_row(&self) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.row_type == "fit")
    }

    pub fn mean_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.row_type == "mean")
    }
}

/// Runs one sweep and writes `sweep_<kind>.csv` into `out_dir`.
pub fn run_sweep(kind: SweepKind, config: &RunConfig, out_dir: &Path) -> Result<SweepOutput, HarnessError> {
    config.validate()?;
    create_dir(out_dir)?;
    write_file(&out_dir.join("resolved_config.json"), &config.resolved_json())?;
    let rows = match kind {
        SweepKind::Dimension => {
            let block = &config.sweep.dimension;
            let testbed = &block.testbed;
            if block.dims.len() < 2 || block.m_factor == 0 {
                return Err(HarnessError::Config("dimension sweep needs two or more dims and m_factor > 0".into()));
            }
            let sweep = dimension_sweep(&block.dims, block.m_factor, testbed, &config.seeds, block.lambda, block.with_bound)?;
            let mut rows = gap_rows(&sweep.points, testbed.n_clients);
            for (d, e) in sweep.summary.coordinate.iter().zip(&sweep.summary.mean_error) {
                let dim = *d as usize;
                rows.push(SweepRow {
                    row_type: "mean",
                    config_id: format!("D{dim}"),
                    n_clients: Some(testbed.n_clients),
                    dim: Some(dim),
                    m: Some(block.m_factor * dim),
                    lambda: Some(block.lambda),
                    q_error: Some(*e),
                    ..SweepRow::default()
                });
            }
            rows.push(SweepRow {
                row_type: "fit",
                config_id: "loglog_error_vs_D".into(),
                lambda: Some(block.lambda),
                slope: Some(sweep.fit.slope),
                intercept: Some(sweep.fit.intercept),
                r2: Some(sweep.fit.r2),
                ..SweepRow::default()
            });
            rows
        }
        SweepKind::Anchor => {
            let block = &config.sweep.anchor;
            let testbed = &block.testbed;
            if block.ms.is_empty() || block.dim == 0 {
                return Err(HarnessError::Config("anchor sweep needs ms and a positive dim".into()));
            }
            let sweep = anchor_sweep(&block.ms, block.dim, testbed, &config.seeds, block.lambda, block.with_bound)?;
            let mut rows = gap_rows(&sweep.points, testbed.n_clients);
            for (m, e) in sweep.summary.coordinate.iter().zip(&sweep.summary.mean_error) {
                let m = *m as usize;
                rows.push(SweepRow {
                    row_type: "mean",
                    config_id: format!("m{m}"),
                    n_clients: Some(testbed.n_clients),
                    dim: Some(block.dim),
                    m: Some(m),
                    lambda: Some(block.lambda),
                    q_error: Some(*e),
                    ..SweepRow::default()
                });
            }
            if let Some(fit) = sweep.gamma_fit {
                rows.push(SweepRow {
                    row_type: "fit",
                    config_id: "gamma_vs_m".into(),
                    dim: Some(block.dim),
                    lambda: Some(block.lambda),
                    slope: Some(fit.slope),
                    intercept: Some(fit.intercept),
                    r2: Some(fit.r2),
                    ..SweepRow::default()
                });
            }
            rows
        }
        SweepKind::Scalability => {
            let block = &config.sweep.scalability;
            if block.n_clients.is_empty() || block.n_clients.contains(&0) {
                return Err(HarnessError::Config("scalability sweep needs positive client counts".into()));
            }
            let mut rows = Vec::new();
            for &n in &block.n_clients {
                let mut sub = config.clone();
                sub.n_clients = n;
                sub.federation.weights = None;
                let summary = run_experiment(&sub, &out_dir.join(format!("N{n}")))?;
                for (seed, v) in &summary.per_seed {
                    rows.push(SweepRow {
                        row_type: "point",
                        config_id: format!("s{seed}_N{n}"),
                        seed: Some(*seed),
                        n_clients: Some(n),
                        final_reward: Some(*v),
                        ..SweepRow::default()
                    });
                }
                rows.push(SweepRow {
                    row_type: "mean",
                    config_id: format!("N{n}"),
                    n_clients: Some(n),
                    final_reward: Some(summary.overall),
                    ..SweepRow::default()
                });
            }
            rows
        }
    };
    let path = out_dir.join(kind.file_name());
    write_file(&path, &sweep_csv(&rows))?;
    Ok(SweepOutput { kind, rows, path })
}
