//! Agent-based ideation runs.
//!
//! Synthetic participants stand in for people. Every idea carries a hidden
//! latent quality `q` in `[0, 1]`:
//!
//! * an agent votes for a shown idea with probability `q`;
//! * a new idea written under a column gets
//!   `clamp01(mu + lambda * (q_best - mu) + N(0, sigma))`, where `q_best` is
//!   the best quality visible in that column, except that with probability
//!   `p_d` the agent writes a disruptive idea with `q ~ U(0, q_low)`.
//!
//! The engine never sees `q`; it only sees presentations and votes, exactly
//! as with human participants. Sessions run one at a time.
//!
//! None of the agent defaults come from observed data. They are set so that
//! the overall vote rate lands near 0.4.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, FullReport, DEFAULT_ID_CUTOFF, DEFAULT_WINDOW};
use crate::idea_store::{IdeaId, IdeaStore, StoreConfig, StoreError};
use crate::selection::SelectionStrategy;
use crate::session_engine::{EngineConfig, EngineError, Phase, SessionEngine, Submission};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("paired configs differ: {0}")]
    Mismatch(String),
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    /// Quality children regress toward.
    pub mu: f64,
    /// How much of the best visible idea's advantage carries over.
    pub lambda: f64,
    pub sigma: f64,
    /// Upper bound of a disruptive idea's quality.
    pub q_low: f64,
    /// Probability that a new idea is disruptive.
    pub p_d: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            mu: 0.3,
            lambda: 0.8,
            sigma: 0.1,
            q_low: 0.2,
            p_d: 0.15,
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.mu) || !unit(self.q_low) || !unit(self.p_d) {
            return Err(SimError::InvalidConfig("mu, q_low and p_d must lie in [0, 1]".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) || !self.lambda.is_finite() {
            return Err(SimError::InvalidConfig("sigma must be non-negative and lambda finite".into()));
        }
        Ok(())
    }

    fn child_quality<R: Rng + ?Sized>(&self, best_visible: f64, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.p_d {
            return rng.random::<f64>() * self.q_low;
        }
        let noise = if self.sigma > 0.0 {
            Normal::new(0.0, self.sigma).expect("sigma validated").sample(rng)
        } else {
            0.0
        };
        (self.lambda * best_visible + (1.0 - self.lambda) * self.mu + noise).clamp(0.0, 1.0)
    }

    /// Quality of an initial idea when none is supplied: `U(0, 2 mu)`, capped at 1.
    fn initial_quality<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        (rng.random::<f64>() * 2.0 * self.mu).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub strategy: SelectionStrategy,
    pub target_idea_count: u32,
    pub family_count: u32,
    pub ideas_per_session: usize,
    pub agent: AgentParams,
    pub seed: u64,
    pub replicates: u32,
    /// Participant numbers cycle through `1..=participant_pool`.
    pub participant_pool: u32,
    /// Latent qualities of the initial ideas, in id order. Drawn from the
    /// agent stream when absent or too short.
    pub initial_qualities: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: SelectionStrategy::Ecbw,
            target_idea_count: 210,
            family_count: 12,
            ideas_per_session: 3,
            agent: AgentParams::default(),
            seed: 0,
            replicates: 1,
            participant_pool: 37,
            initial_qualities: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.agent.validate()?;
        StoreConfig::with_sizes(self.target_idea_count, self.family_count)
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if !(1..=3).contains(&self.ideas_per_session) {
            return Err(SimError::InvalidConfig("ideas_per_session must be 1, 2 or 3".into()));
        }
        if self.participant_pool == 0 || self.replicates == 0 {
            return Err(SimError::InvalidConfig("participant_pool and replicates must be positive".into()));
        }
        if let Some(q) = &self.initial_qualities {
            if q.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(SimError::InvalidConfig("initial qualities must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let config: Self = serde_json::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// The same config with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub store: IdeaStore,
    /// Latent quality of idea `id` at index `id - 1`.
    pub qualities: Vec<f64>,
    pub sessions: usize,
    pub stimulus_sessions: usize,
    /// Seed the run's engine was built with.
    pub engine_seed: u64,
}

#[derive(Serialize)]
struct QualityLine {
    id: IdeaId,
    q: f64,
}

impl RunOutput {
    pub fn quality(&self, id: IdeaId) -> f64 {
        self.qualities[id as usize - 1]
    }

    /// Sidecar JSON lines, one `{"id", "q"}` object per idea.
    pub fn quality_trace(&self) -> String {
        self.qualities
            .iter()
            .enumerate()
            .map(|(i, &q)| serde_json::to_string(&QualityLine { id: i as IdeaId + 1, q }).expect("serializable") + "\n")
            .collect()
    }

    pub fn latent_windows(&self) -> Vec<f64> {
        latent_window_means(&self.qualities, DEFAULT_WINDOW, DEFAULT_ID_CUTOFF)
    }
}

/// Initial qualities for paired runs, drawn the same way a run draws them
/// when none are supplied.
pub fn draw_initial_qualities(agent: &AgentParams, family_count: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..family_count).map(|_| agent.initial_quality(&mut rng)).collect()
}

/// Mean latent quality of consecutive id windows up to `id_cutoff`.
pub fn latent_window_means(qualities: &[f64], window: usize, id_cutoff: IdeaId) -> Vec<f64> {
    let kept = &qualities[..qualities.len().min(id_cutoff as usize)];
    kept.chunks(window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Peak window mean minus the final window mean; zero when the last window
/// is the peak.
pub fn peak_to_final_drop(windows: &[f64]) -> f64 {
    match windows.last() {
        Some(last) => windows.iter().copied().fold(f64::NEG_INFINITY, f64::max) - last,
        None => 0.0,
    }
}

/// Execute one full run. The engine and the agents draw from separate
/// streams derived from the master seed.
pub fn run(config: &RunConfig) -> Result<RunOutput, SimError> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let engine_seed = master.next_u64();
    let mut agents = ChaCha8Rng::seed_from_u64(master.next_u64());

    let store = IdeaStore::new(StoreConfig::with_sizes(config.target_idea_count, config.family_count))?;
    let engine = SessionEngine::new(store, EngineConfig::new(config.strategy, engine_seed));
    let supplied = config.initial_qualities.as_deref().unwrap_or(&[]);
    let mut qualities: Vec<f64> = Vec::with_capacity(config.target_idea_count as usize + 3);
    let mut sessions = 0usize;
    let mut stimulus_sessions = 0usize;

    while !engine.is_terminated() {
        let participant = (sessions as u32 % config.participant_pool) + 1;
        let session = engine.login(participant)?;
        let (submission, new_q) = match (&session.phase, &session.grid) {
            (Phase::Initial, _) => {
                let n = qualities.len();
                let q: Vec<f64> = (0..3)
                    .map(|k| supplied.get(n + k).copied().unwrap_or_else(|| config.agent.initial_quality(&mut agents)))
                    .collect();
                let ideas = (0..3).map(|c| (c, format!("initial idea from participant {participant}, slot {c}"))).collect();
                (Submission { voted_cells: vec![], new_ideas: ideas }, q)
            }
            (Phase::Stimulus, Some(grid)) => {
                stimulus_sessions += 1;
                let mut votes = Vec::new();
                for (c, col) in grid.columns.iter().enumerate() {
                    for (r, id) in col.cells.iter().enumerate() {
                        if agents.random::<f64>() < qualities[*id as usize - 1] {
                            votes.push((c, r));
                        }
                    }
                }
                let snapshot = engine.snapshot();
                let mut ideas = Vec::new();
                let mut q = Vec::new();
                for (c, col) in grid.columns.iter().enumerate().take(config.ideas_per_session) {
                    let best = if col.cells.is_empty() {
                        let newest = snapshot.latest_k(col.family_no, 1)?[0].id;
                        qualities[newest as usize - 1]
                    } else {
                        col.cells.iter().map(|id| qualities[*id as usize - 1]).fold(0.0, f64::max)
                    };
                    q.push(config.agent.child_quality(best, &mut agents));
                    ideas.push((c, format!("idea from participant {participant}, session {sessions}, column {c}")));
                }
                (Submission { voted_cells: votes, new_ideas: ideas }, q)
            }
            (Phase::Stimulus, None) => unreachable!("stimulus sessions carry a grid"),
        };
        let receipt = engine.commit(&session.id, &submission)?;
        debug_assert_eq!(receipt.new_ids.len(), new_q.len());
        qualities.extend(new_q);
        sessions += 1;
    }

    let store = (*engine.snapshot()).clone();
    debug_assert_eq!(store.len(), qualities.len());
    Ok(RunOutput { store, qualities, sessions, stimulus_sessions, engine_seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: SelectionStrategy,
    pub seed: u64,
    pub analysis: FullReport,
    pub latent_windows: Vec<f64>,
    pub latent_drop: f64,
}

impl RunReport {
    fn from_output(config: &RunConfig, out: &RunOutput) -> Result<Self, SimError> {
        let windows = out.latent_windows();
        Ok(Self {
            strategy: config.strategy,
            seed: config.seed,
            analysis: analysis::full_report(&out.store)?,
            latent_drop: peak_to_final_drop(&windows),
            latent_windows: windows,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub ecbw: RunReport,
    pub obw: RunReport,
}

/// Run two strategies from the same initial families.
pub fn compare(
    config_ecbw: &RunConfig,
    config_obw: &RunConfig,
    shared_initial_qualities: &[f64],
) -> Result<PairedReport, SimError> {
    if config_ecbw.target_idea_count != config_obw.target_idea_count
        || config_ecbw.family_count != config_obw.family_count
    {
        return Err(SimError::Mismatch("target_idea_count and family_count must agree".into()));
    }
    if shared_initial_qualities.len() != config_ecbw.family_count as usize {
        return Err(SimError::Mismatch(format!(
            "{} initial qualities for {} families",
            shared_initial_qualities.len(),
            config_ecbw.family_count
        )));
    }
    let with_initial = |c: &RunConfig| RunConfig {
        initial_qualities: Some(shared_initial_qualities.to_vec()),
        ..c.clone()
    };
    let (a, b) = (with_initial(config_ecbw), with_initial(config_obw));
    let (ra, rb) = rayon::join(|| run(&a), || run(&b));
    Ok(PairedReport {
        ecbw: RunReport::from_output(&a, &ra?)?,
        obw: RunReport::from_output(&b, &rb?)?,
    })
}

/// Parameter lists whose Cartesian product is swept. Empty lists fall back to
/// the base config's value, except `strategies`, which must be non-empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub base: RunConfig,
    pub strategies: Vec<SelectionStrategy>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub sigma: Vec<f64>,
    pub q_low: Vec<f64>,
    pub p_d: Vec<f64>,
}

impl SweepGrid {
    pub fn points(&self) -> Vec<RunConfig> {
        let or_base = |v: &[f64], b: f64| if v.is_empty() { vec![b] } else { v.to_vec() };
        let a = self.base.agent;
        let mut out = Vec::new();
        for &strategy in &self.strategies {
            for &mu in &or_base(&self.mu, a.mu) {
                for &lambda in &or_base(&self.lambda, a.lambda) {
                    for &sigma in &or_base(&self.sigma, a.sigma) {
                        for &q_low in &or_base(&self.q_low, a.q_low) {
                            for &p_d in &or_base(&self.p_d, a.p_d) {
                                out.push(RunConfig {
                                    strategy,
                                    agent: AgentParams { mu, lambda, sigma, q_low, p_d },
                                    ..self.base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Per-run scalars aggregated by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub total_score_rate: f64,
    pub mean_isr_eligible: f64,
    pub eliminated: usize,
    pub final_latent_window: f64,
    pub latent_drop: f64,
}

impl RunMetrics {
    pub fn of(seed: u64, out: &RunOutput) -> Result<Self, SimError> {
        let s = analysis::summary(&out.store)?;
        let windows = out.latent_windows();
        Ok(Self {
            seed,
            total_score_rate: s.total_score_rate.unwrap_or(f64::NAN),
            mean_isr_eligible: s.mean_isr_eligible.unwrap_or(f64::NAN),
            eliminated: out
                .store
                .records()
                .iter()
                .filter(|r| crate::score_math::is_eliminated(r.presentations, r.score))
                .count(),
            final_latent_window: windows.last().copied().unwrap_or(f64::NAN),
            latent_drop: peak_to_final_drop(&windows),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: RunConfig,
    pub runs: Vec<RunMetrics>,
}

impl SweepRow {
    fn mean(&self, f: impl Fn(&RunMetrics) -> f64) -> f64 {
        self.runs.iter().map(f).sum::<f64>() / self.runs.len() as f64
    }
}

/// Run every grid point for `base.replicates` seeds (`base.seed`,
/// `base.seed + 1`, ...). Runs execute in parallel; row order follows
/// [`SweepGrid::points`].
pub fn sweep(grid: &SweepGrid) -> Result<Vec<SweepRow>, SimError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    points
        .into_par_iter()
        .map(|config| {
            let runs = (0..config.replicates as u64)
                .into_par_iter()
                .map(|r| {
                    let seeded = config.with_seed(config.seed.wrapping_add(r));
                    RunMetrics::of(seeded.seed, &run(&seeded)?)
                })
                .collect::<Result<Vec<_>, SimError>>()?;
            Ok(SweepRow { config, runs })
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], writer: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "strategy",
        "mu",
        "lambda",
        "sigma",
        "q_low",
        "p_d",
        "replicates",
        "mean_total_score_rate",
        "mean_isr_eligible",
        "mean_eliminated",
        "mean_final_latent_window",
        "mean_latent_drop",
    ])?;
    for row in rows {
        let a = row.config.agent;
        w.write_record([
            row.config.strategy.to_string(),
            a.mu.to_string(),
            a.lambda.to_string(),
            a.sigma.to_string(),
            a.q_low.to_string(),
            a.p_d.to_string(),
            row.runs.len().to_string(),
            row.mean(|m| m.total_score_rate).to_string(),
            row.mean(|m| m.mean_isr_eligible).to_string(),
            row.mean(|m| m.eliminated as f64).to_string(),
            row.mean(|m| m.final_latent_window).to_string(),
            row.mean(|m| m.latent_drop).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
