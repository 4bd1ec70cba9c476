//! The adapt/combine belief recursion, run synchronously over a weak graph.
//!
//! Beliefs live in the log domain throughout. Each round every agent draws a
//! private observation and adapts its belief, then every agent combines the
//! intermediate beliefs of its in-neighbours from that same round.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::graph::CombinationMatrix;
use crate::linalg::log_sum_exp;
use crate::models::AgentModel;
use crate::{Error, Result};

/// Log-beliefs below this value are clamped and counted.
pub const LOG_BELIEF_FLOOR: f64 = -1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Uniform,
    /// Normalised exponential draws (a flat Dirichlet sample).
    Random,
}

/// `N x H` log-beliefs, every row normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    log_mu: Vec<f64>,
    agents: usize,
    hypotheses: usize,
    iteration: usize,
    floor_hits: u64,
}

impl BeliefState {
    /// Builds a state from probability rows. Zero or negative mass is rejected.
    pub fn from_probabilities(rows: &[Vec<f64>]) -> Result<Self> {
        let hypotheses = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || hypotheses < 2 {
            return Err(Error::InvalidSpec("need at least one agent and two hypotheses".into()));
        }
        let mut log_mu = Vec::with_capacity(rows.len() * hypotheses);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != hypotheses {
                return Err(Error::DimensionMismatch(format!("belief row {k} has {} entries", row.len())));
            }
            if row.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
                return Err(Error::InvalidSpec(format!("belief row {k} must be strictly positive")));
            }
            let start = log_mu.len();
            log_mu.extend(row.iter().map(|p| p.ln()));
            normalize(&mut log_mu[start..]);
        }
        Ok(Self {
            log_mu,
            agents: rows.len(),
            hypotheses,
            iteration: 0,
            floor_hits: 0,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agents
    }

    pub fn num_hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Number of log-belief entries clamped to [`LOG_BELIEF_FLOOR`] so far.
    pub fn floor_hits(&self) -> u64 {
        self.floor_hits
    }

    pub fn log_row(&self, k: usize) -> &[f64] {
        &self.log_mu[k * self.hypotheses..(k + 1) * self.hypotheses]
    }

    pub fn log_belief(&self, k: usize, theta: usize) -> f64 {
        self.log_mu[k * self.hypotheses + theta]
    }

    pub fn belief(&self, k: usize, theta: usize) -> f64 {
        self.log_belief(k, theta).exp()
    }

    /// Hypothesis with the largest belief at agent `k`.
    pub fn argmax(&self, k: usize) -> usize {
        argmax(self.log_row(k))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn normalize(row: &mut [f64]) {
    let z = log_sum_exp(row);
    for v in row.iter_mut() {
        *v -= z;
    }
}

pub fn init_beliefs<R: Rng + ?Sized>(agents: usize, hypotheses: usize, mode: InitMode, rng: &mut R) -> Result<BeliefState> {
    if hypotheses < 2 || agents == 0 {
        return Err(Error::InvalidSpec(format!("need N >= 1 and H >= 2, got N={agents} H={hypotheses}")));
    }
    let rows: Vec<Vec<f64>> = (0..agents)
        .map(|_| match mode {
            InitMode::Uniform => vec![1.0 / hypotheses as f64; hypotheses],
            InitMode::Random => (0..hypotheses)
                .map(|_| {
                    let e: f64 = Exp1.sample(rng);
                    e.max(f64::MIN_POSITIVE)
                })
                .collect(),
        })
        .collect();
    BeliefState::from_probabilities(&rows)
}

/// In-place adapt step: `row <- row + log_lik`, renormalised.
fn adapt_row(row: &mut [f64], log_lik: &[f64], agent: usize, xi: f64) -> Result<()> {
    if log_lik.iter().all(|l| *l == f64::NEG_INFINITY) {
        return Err(Error::AllZeroLikelihood { agent, value: xi });
    }
    for (r, l) in row.iter_mut().zip(log_lik) {
        *r += l;
    }
    normalize(row);
    Ok(())
}

/// Bayesian update of one normalised log-belief row with observation `xi`.
pub fn adapt(log_mu_row: &[f64], xi: f64, model: &AgentModel) -> Result<Vec<f64>> {
    let mut log_lik = vec![0.0; model.num_hypotheses()];
    model.log_likelihoods_into(xi, &mut log_lik)?;
    adapt_with_log_likelihoods(log_mu_row, &log_lik)
}

/// Same as [`adapt`] with the log-likelihood vector supplied directly.
pub fn adapt_with_log_likelihoods(log_mu_row: &[f64], log_lik: &[f64]) -> Result<Vec<f64>> {
    if log_mu_row.len() != log_lik.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} beliefs vs {} likelihoods",
            log_mu_row.len(),
            log_lik.len()
        )));
    }
    let mut out = log_mu_row.to_vec();
    adapt_row(&mut out, log_lik, 0, f64::NAN)?;
    Ok(out)
}

/// Geometric combination at agent `k` of the intermediate rows `log_psi`.
pub fn combine(log_psi: &[Vec<f64>], graph: &CombinationMatrix, k: usize) -> Result<Vec<f64>> {
    if log_psi.len() != graph.num_agents() {
        return Err(Error::DimensionMismatch(format!(
            "{} belief rows for {} agents",
            log_psi.len(),
            graph.num_agents()
        )));
    }
    let h = log_psi[0].len();
    let mut out = vec![0.0; h];
    for (l, a) in graph.in_neighbors(k) {
        for (o, p) in out.iter_mut().zip(&log_psi[l]) {
            *o += a * p;
        }
    }
    normalize(&mut out);
    Ok(out)
}

/// Simulation engine with precomputed in-neighbour lists and one random
/// stream per agent.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    neighbors: Vec<Vec<(usize, f64)>>,
    models: &'a [AgentModel],
    rngs: Vec<ChaCha8Rng>,
    hypotheses: usize,
    log_psi: Vec<f64>,
    log_lik: Vec<f64>,
    observations: Vec<f64>,
}

impl<'a> Engine<'a> {
    /// `models[k]` is the model of agent `k`.
    pub fn new(graph: &CombinationMatrix, models: &'a [AgentModel], seed: u64) -> Result<Self> {
        let n = graph.num_agents();
        if models.len() != n {
            return Err(Error::DimensionMismatch(format!("{} models for {n} agents", models.len())));
        }
        let hypotheses = models[0].num_hypotheses();
        if let Some(k) = models.iter().position(|m| m.num_hypotheses() != hypotheses) {
            return Err(Error::DimensionMismatch(format!(
                "agent {k} has {} hypotheses, agent 0 has {hypotheses}",
                models[k].num_hypotheses()
            )));
        }
        let rngs = (0..n)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                rng
            })
            .collect();
        Ok(Self {
            neighbors: (0..n).map(|k| graph.in_neighbors(k)).collect(),
            models,
            rngs,
            hypotheses,
            log_psi: vec![0.0; n * hypotheses],
            log_lik: vec![0.0; hypotheses],
            observations: vec![0.0; n],
        })
    }

    pub fn num_agents(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_hypotheses(&self) -> usize {
        self.hypotheses
    }

    /// Intermediate beliefs of the last round, agent-major.
    pub fn log_psi_row(&self, k: usize) -> &[f64] {
        &self.log_psi[k * self.hypotheses..(k + 1) * self.hypotheses]
    }

    /// Observations drawn in the last round.
    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    fn check(&self, state: &BeliefState) -> Result<()> {
        if state.agents != self.num_agents() || state.hypotheses != self.hypotheses {
            return Err(Error::DimensionMismatch(format!(
                "state is {}x{}, engine is {}x{}",
                state.agents,
                state.hypotheses,
                self.num_agents(),
                self.hypotheses
            )));
        }
        Ok(())
    }

    /// One synchronous round with fresh observations.
    pub fn step(&mut self, state: &mut BeliefState) -> Result<()> {
        self.check(state)?;
        for k in 0..self.num_agents() {
            self.observations[k] = self.models[k].sample(&mut self.rngs[k]);
        }
        self.advance(state)
    }

    /// One synchronous round with caller-supplied observations.
    pub fn step_with_observations(&mut self, state: &mut BeliefState, observations: &[f64]) -> Result<()> {
        self.check(state)?;
        if observations.len() != self.num_agents() {
            return Err(Error::DimensionMismatch(format!("{} observations", observations.len())));
        }
        self.observations.copy_from_slice(observations);
        self.advance(state)
    }

    fn advance(&mut self, state: &mut BeliefState) -> Result<()> {
        let h = self.hypotheses;
        // adapt: every agent, from its own previous belief
        self.log_psi.copy_from_slice(&state.log_mu);
        for k in 0..self.num_agents() {
            let xi = self.observations[k];
            self.models[k].log_likelihoods_into(xi, &mut self.log_lik)?;
            adapt_row(&mut self.log_psi[k * h..(k + 1) * h], &self.log_lik, k, xi)?;
        }
        // combine: reads only the frozen psi buffer
        for (k, neigh) in self.neighbors.iter().enumerate() {
            let row = &mut state.log_mu[k * h..(k + 1) * h];
            row.fill(0.0);
            for &(l, a) in neigh {
                let psi = &self.log_psi[l * h..(l + 1) * h];
                for (r, p) in row.iter_mut().zip(psi) {
                    *r += a * p;
                }
            }
            normalize(row);
            for v in row.iter_mut() {
                if *v < LOG_BELIEF_FLOOR {
                    *v = LOG_BELIEF_FLOOR;
                    state.floor_hits += 1;
                }
            }
        }
        state.iteration += 1;
        Ok(())
    }
}

/// What [`run`] keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSpec {
    /// Agents to record; `None` records all of them.
    #[serde(default)]
    pub agents: Option<Vec<usize>>,
    /// Record every `stride`-th iteration; 0 disables periodic recording.
    #[serde(default)]
    pub stride: usize,
    /// Extra iterations to record.
    #[serde(default)]
    pub iterations: Vec<usize>,
    #[serde(default = "yes")]
    pub psi: bool,
    #[serde(default = "yes")]
    pub mu: bool,
    #[serde(default)]
    pub init: InitMode,
}

fn yes() -> bool {
    true
}

impl Default for RecordSpec {
    fn default() -> Self {
        Self {
            agents: None,
            stride: 1,
            iterations: Vec::new(),
            psi: true,
            mu: true,
            init: InitMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    /// Agent-major rows for the recorded agents.
    pub log_psi: Option<Vec<f64>>,
    pub log_mu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub agents: Vec<usize>,
    pub hypotheses: usize,
    pub seed: u64,
    pub horizon: usize,
    pub snapshots: Vec<Snapshot>,
    pub floor_hits: u64,
}

impl TrajectoryRecord {
    pub fn snapshot_at(&self, iteration: usize) -> Option<&Snapshot> {
        self.snapshots
            .binary_search_by_key(&iteration, |s| s.iteration)
            .ok()
            .map(|i| &self.snapshots[i])
    }

    fn position(&self, agent: usize) -> Result<usize> {
        self.agents
            .iter()
            .position(|a| *a == agent)
            .ok_or_else(|| Error::MissingRecord(format!("agent {} was not recorded", agent + 1)))
    }

    /// `log ψ_{k,i}` for a recorded agent.
    pub fn log_psi(&self, agent: usize, iteration: usize) -> Result<&[f64]> {
        let pos = self.position(agent)?;
        let snap = self
            .snapshot_at(iteration)
            .ok_or_else(|| Error::MissingRecord(format!("iteration {iteration} was not recorded")))?;
        let psi = snap
            .log_psi
            .as_ref()
            .ok_or_else(|| Error::MissingRecord("intermediate beliefs were not recorded".into()))?;
        Ok(&psi[pos * self.hypotheses..(pos + 1) * self.hypotheses])
    }

    /// `log μ_{k,i}` for a recorded agent.
    pub fn log_mu(&self, agent: usize, iteration: usize) -> Result<&[f64]> {
        let pos = self.position(agent)?;
        let snap = self
            .snapshot_at(iteration)
            .ok_or_else(|| Error::MissingRecord(format!("iteration {iteration} was not recorded")))?;
        let mu = snap
            .log_mu
            .as_ref()
            .ok_or_else(|| Error::MissingRecord("beliefs were not recorded".into()))?;
        Ok(&mu[pos * self.hypotheses..(pos + 1) * self.hypotheses])
    }

    pub fn iterations(&self) -> impl Iterator<Item = usize> + '_ {
        self.snapshots.iter().map(|s| s.iteration)
    }
}

/// Seed offset separating the initial-belief stream from the agent streams.
const INIT_STREAM: u64 = u64::MAX;

/// Runs `horizon` rounds from the configured initial beliefs.
pub fn run(
    graph: &CombinationMatrix,
    models: &[AgentModel],
    horizon: usize,
    seed: u64,
    record: &RecordSpec,
) -> Result<TrajectoryRecord> {
    run_with_state(graph, models, horizon, seed, record).map(|(r, _)| r)
}

/// As [`run`], also returning the final belief state.
pub fn run_with_state(
    graph: &CombinationMatrix,
    models: &[AgentModel],
    horizon: usize,
    seed: u64,
    record: &RecordSpec,
) -> Result<(TrajectoryRecord, BeliefState)> {
    if horizon == 0 {
        return Err(Error::InvalidSpec("horizon must be at least 1".into()));
    }
    let mut engine = Engine::new(graph, models, seed)?;
    let n = engine.num_agents();
    let h = engine.num_hypotheses();
    let agents = match &record.agents {
        Some(list) => {
            if let Some(bad) = list.iter().find(|a| **a >= n) {
                return Err(Error::InvalidSpec(format!("recorded agent {} out of range", bad + 1)));
            }
            list.clone()
        }
        None => (0..n).collect(),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(INIT_STREAM);
    let mut state = init_beliefs(n, h, record.init, &mut init_rng)?;

    let mut extra: Vec<usize> = record.iterations.iter().copied().filter(|i| *i >= 1 && *i <= horizon).collect();
    extra.sort_unstable();
    extra.dedup();
    let mut next_extra = 0;
    let mut snapshots = Vec::new();
    for i in 1..=horizon {
        engine.step(&mut state)?;
        let periodic = record.stride > 0 && i % record.stride == 0;
        let listed = next_extra < extra.len() && extra[next_extra] == i;
        if listed {
            next_extra += 1;
        }
        if periodic || listed {
            let psi = record.psi.then(|| {
                let mut out = Vec::with_capacity(agents.len() * h);
                for &a in &agents {
                    out.extend_from_slice(engine.log_psi_row(a));
                }
                out
            });
            let mu = record.mu.then(|| {
                let mut out = Vec::with_capacity(agents.len() * h);
                for &a in &agents {
                    out.extend_from_slice(state.log_row(a));
                }
                out
            });
            snapshots.push(Snapshot {
                iteration: i,
                log_psi: psi,
                log_mu: mu,
            });
        }
    }
    let floor_hits = state.floor_hits;
    Ok((
        TrajectoryRecord {
            agents,
            hypotheses: h,
            seed,
            horizon,
            snapshots,
            floor_hits,
        },
        state,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NetworkPartition;
    use crate::models::Descriptor;
    use nalgebra::DMatrix;

    fn two_agent_graph() -> CombinationMatrix {
        let p = NetworkPartition::new(vec![1], vec![1]).unwrap();
        CombinationMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 0.4]), p).unwrap()
    }

    fn gaussian_model(truth: f64, means: &[f64]) -> AgentModel {
        AgentModel::new(Descriptor::gaussian(truth), means.iter().map(|m| Descriptor::gaussian(*m)).collect()).unwrap()
    }

    #[test]
    fn uniform_and_random_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = init_beliefs(4, 3, InitMode::Uniform, &mut rng).unwrap();
        assert!(s.log_row(2).iter().all(|v| (v + 3f64.ln()).abs() < 1e-15));
        let r = init_beliefs(4, 3, InitMode::Random, &mut rng).unwrap();
        for k in 0..4 {
            let sum: f64 = (0..3).map(|t| r.belief(k, t)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!((0..3).all(|t| r.belief(k, t) > 0.0));
        }
        assert!(BeliefState::from_probabilities(&[vec![1.0, 0.0]]).is_err());
        assert!(init_beliefs(2, 1, InitMode::Uniform, &mut rng).is_err());
    }

    #[test]
    fn adapt_examples() {
        let prior = vec![-(2f64.ln()); 2];
        let out = adapt_with_log_likelihoods(&prior, &[0.0, 3f64.ln()]).unwrap();
        assert!((out[0].exp() - 0.25).abs() < 1e-15 && (out[1].exp() - 0.75).abs() < 1e-15);
        let flat = adapt_with_log_likelihoods(&[0.3f64.ln(), 0.7f64.ln()], &[-2.0, -2.0]).unwrap();
        assert!((flat[0].exp() - 0.3).abs() < 1e-15);
        let delta = 1.4;
        let m = gaussian_model(0.0, &[0.0, delta]);
        let out = adapt(&prior, 0.0, &m).unwrap();
        assert!((out[0] - out[1] - delta * delta / 2.0).abs() < 1e-14);
        let dead = adapt_with_log_likelihoods(&prior, &[f64::NEG_INFINITY; 2]);
        assert!(matches!(dead, Err(Error::AllZeroLikelihood { .. })));
    }

    #[test]
    fn combine_examples() {
        let p = NetworkPartition::new(vec![1, 1], vec![1]).unwrap();
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, 0.5, 0.0, 0.0, 0.0]);
        let g = CombinationMatrix::new(a, p).unwrap();
        let rows = vec![
            vec![0.8f64.ln(), 0.2f64.ln()],
            vec![0.2f64.ln(), 0.8f64.ln()],
            vec![0.5f64.ln(), 0.5f64.ln()],
        ];
        let mu = combine(&rows, &g, 2).unwrap();
        assert!((mu[0].exp() - 0.5).abs() < 1e-15);
        let ident = combine(&rows, &g, 0).unwrap();
        assert!((ident[0].exp() - 0.8).abs() < 1e-15);
        let same = vec![rows[0].clone(); 3];
        let mu = combine(&same, &g, 2).unwrap();
        assert!((mu[1] - rows[0][1]).abs() < 1e-15);
    }

    #[test]
    fn single_agent_is_bayes() {
        // the sender of the 2-agent graph only listens to itself
        let g = two_agent_graph();
        let models = vec![gaussian_model(0.0, &[0.0, 1.0]); 2];
        let mut engine = Engine::new(&g, &models, 3).unwrap();
        let mut state = init_beliefs(2, 2, InitMode::Uniform, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut expected = vec![-(2f64.ln()); 2];
        for _ in 0..5 {
            engine.step(&mut state).unwrap();
            expected = adapt(&expected, engine.observations()[0], &models[0]).unwrap();
        }
        assert!((state.log_belief(0, 1) - expected[1]).abs() < 1e-12);
        assert_eq!(state.iteration(), 5);
    }

    #[test]
    fn stride_bookkeeping_and_determinism() {
        let g = two_agent_graph();
        let models = vec![gaussian_model(0.0, &[0.0, 1.0]); 2];
        let spec = RecordSpec {
            stride: 10,
            ..RecordSpec::default()
        };
        let a = run(&g, &models, 100, 7, &spec).unwrap();
        assert_eq!(a.snapshots.len(), 10);
        assert!(a.iterations().zip(a.iterations().skip(1)).all(|(x, y)| x < y));
        let b = run(&g, &models, 100, 7, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.log_psi(1, 50).is_ok());
        assert!(matches!(a.log_psi(1, 55), Err(Error::MissingRecord(_))));
        assert!(run(&g, &models, 0, 7, &spec).is_err());
    }

    #[test]
    fn normalization_holds_over_long_runs() {
        let g = two_agent_graph();
        let models = vec![gaussian_model(0.0, &[-1.0, 0.0, 1.0]); 2];
        let mut engine = Engine::new(&g, &models, 11).unwrap();
        let mut state = init_beliefs(2, 3, InitMode::Random, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for _ in 0..1000 {
            engine.step(&mut state).unwrap();
            for k in 0..2 {
                assert!(log_sum_exp(state.log_row(k)).abs() < 1e-10);
                assert!(log_sum_exp(engine.log_psi_row(k)).abs() < 1e-10);
                assert!(state.log_row(k).iter().all(|v| v.is_finite()));
            }
        }
    }
}
