//! Experiment configuration, presets and scenario assembly.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{build_weak_graph, CombinationMatrix, GraphSpec, NetworkPartition};
use crate::learning::{InitMode, RecordSpec};
use crate::models::{
    beta_agent, beta_family, canonical_family, divergence_matrix, perturbed_gaussian_agent,
    perturbed_gaussian_family, structured_gaussian_family, AgentModel, Descriptor, DivergenceMatrix, KlMethod,
};
use crate::{Error, Result};

/// Model families of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Two senders, hypotheses with means `-Δ, 0, Δ`.
    Canonical {
        delta: f64,
        #[serde(default)]
        receiving_truth_mean: f64,
    },
    StructuredGaussian {
        means: Vec<f64>,
        nu: Vec<f64>,
        receiving_truth_mean: f64,
    },
    PerturbedGaussian {
        hypotheses: usize,
        variance: f64,
        correlation: f64,
        truth_mean: f64,
    },
    Beta {
        hypotheses: usize,
        half_width: f64,
        #[serde(default = "default_receiving_beta")]
        receiving_truth: Descriptor,
    },
    /// One model per sending component and one per receiving agent.
    Custom {
        sending: Vec<AgentModel>,
        receiving: Vec<AgentModel>,
    },
}

fn default_receiving_beta() -> Descriptor {
    Descriptor::beta(2.0, 2.0)
}

/// Which agents to record; lists are one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentSelection {
    Named(Selection),
    List(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    All,
    Receiving,
}

impl Default for AgentSelection {
    fn default() -> Self {
        AgentSelection::Named(Selection::Receiving)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordConfig {
    #[serde(default)]
    pub agents: AgentSelection,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub iterations: Vec<usize>,
    #[serde(default = "yes")]
    pub psi: bool,
    #[serde(default = "yes")]
    pub mu: bool,
    #[serde(default)]
    pub init: InitMode,
}

fn default_stride() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl Default for RecordConfig {
    fn default() -> Self {
        Self {
            agents: AgentSelection::default(),
            stride: 1,
            iterations: Vec::new(),
            psi: true,
            mu: true,
            init: InitMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct InferConfig {
    /// Iterations at which the topology is estimated; each must be recorded.
    #[serde(default)]
    pub iterations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub graph: GraphSpec,
    pub models: ModelSpec,
    pub horizon: usize,
    #[serde(default)]
    pub record: RecordConfig,
    #[serde(default)]
    pub infer: InferConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

const PRESETS: &[(&str, &str)] = &[
    ("setup1", include_str!("../presets/setup1.json")),
    ("setup2", include_str!("../presets/setup2.json")),
    ("setup3", include_str!("../presets/setup3.json")),
    ("exp-a", include_str!("../presets/exp-a.json")),
    ("exp-b", include_str!("../presets/exp-b.json")),
    ("exp-c", include_str!("../presets/exp-c.json")),
    ("structured-s3", include_str!("../presets/structured-s3.json")),
];

/// JSON schema describing [`ExperimentConfig`].
pub const SCHEMA: &str = include_str!("../presets/experiment.schema.json");

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}', expected one of {:?}", preset_names())))?;
    ExperimentConfig::from_json(text)
}

/// Independent seed for one purpose (graph, models, data) from the master seed.
pub fn derive_seed(master: u64, purpose: Purpose) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(purpose as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Graph = 1,
    Models = 2,
    Data = 3,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn partition(&self) -> &NetworkPartition {
        self.graph.partition()
    }

    pub fn num_hypotheses(&self) -> usize {
        match &self.models {
            ModelSpec::Canonical { .. } => 3,
            ModelSpec::StructuredGaussian { means, .. } => means.len(),
            ModelSpec::PerturbedGaussian { hypotheses, .. } | ModelSpec::Beta { hypotheses, .. } => *hypotheses,
            ModelSpec::Custom { sending, .. } => sending.first().map_or(0, AgentModel::num_hypotheses),
        }
    }

    fn model_components(&self) -> usize {
        match &self.models {
            ModelSpec::Canonical { .. } => 2,
            ModelSpec::StructuredGaussian { nu, .. } => nu.len(),
            ModelSpec::Custom { sending, .. } => sending.len(),
            _ => self.partition().num_sending(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.partition();
        if self.model_components() != p.num_sending() {
            return Err(Error::Config(format!(
                "model describes {} sending components, graph has {}",
                self.model_components(),
                p.num_sending()
            )));
        }
        if self.num_hypotheses() < 2 {
            return Err(Error::Config("need at least two hypotheses".into()));
        }
        if let ModelSpec::Custom { sending, receiving } = &self.models {
            let h = self.num_hypotheses();
            if receiving.len() != p.receiving_agents() {
                return Err(Error::Config(format!(
                    "{} receiving models for {} receiving agents",
                    receiving.len(),
                    p.receiving_agents()
                )));
            }
            if sending.iter().chain(receiving).any(|m| m.num_hypotheses() != h) {
                return Err(Error::Config("custom models disagree on the number of hypotheses".into()));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if let AgentSelection::List(list) = &self.record.agents {
            if let Some(a) = list.iter().find(|a| **a == 0 || **a > p.total_agents()) {
                return Err(Error::Config(format!("recorded agent {a} outside 1..={}", p.total_agents())));
            }
        }
        if let Some(i) = self.infer.iterations.iter().find(|i| **i == 0 || **i > self.horizon) {
            return Err(Error::Config(format!("inference iteration {i} outside 1..={}", self.horizon)));
        }
        Ok(())
    }

    /// Library record spec, with inference iterations always recorded.
    pub fn record_spec(&self) -> RecordSpec {
        let p = self.partition();
        let agents = match &self.record.agents {
            AgentSelection::Named(Selection::All) => None,
            AgentSelection::Named(Selection::Receiving) => Some(p.receiving_agent_range().collect()),
            AgentSelection::List(list) => Some(list.iter().map(|a| a - 1).collect()),
        };
        let mut iterations = self.record.iterations.clone();
        iterations.extend(&self.infer.iterations);
        iterations.push(self.horizon);
        RecordSpec {
            agents,
            stride: self.record.stride,
            iterations,
            psi: self.record.psi || !self.infer.iterations.is_empty(),
            mu: self.record.mu,
            init: self.record.init,
        }
    }

    pub fn build_graph(&self) -> Result<CombinationMatrix> {
        build_weak_graph(&self.graph, derive_seed(self.seed, Purpose::Graph))
    }

    pub fn build_models(&self) -> Result<ModelSet> {
        build_models(&self.models, self.partition(), derive_seed(self.seed, Purpose::Models))
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, Purpose::Data)
    }

    /// Same experiment under another master seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Sending models per component, and models for every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub sending: Vec<AgentModel>,
    pub agents: Vec<AgentModel>,
}

impl ModelSet {
    pub fn divergence_matrix(&self, method: KlMethod) -> Result<DivergenceMatrix> {
        let h = self.sending[0].num_hypotheses();
        divergence_matrix(&self.sending, h, method)
    }

    /// Replaces the models of the receiving agents, keeping the senders.
    pub fn with_receiving(&self, partition: &NetworkPartition, receiving: Vec<AgentModel>) -> Result<Self> {
        if receiving.len() != partition.receiving_agents() {
            return Err(Error::DimensionMismatch(format!("{} receiving models", receiving.len())));
        }
        let mut agents = self.agents.clone();
        for (slot, m) in agents[partition.receiving_agent_range()].iter_mut().zip(receiving) {
            *slot = m;
        }
        Ok(Self {
            sending: self.sending.clone(),
            agents,
        })
    }
}

pub fn build_models(spec: &ModelSpec, partition: &NetworkPartition, seed: u64) -> Result<ModelSet> {
    let nr = partition.receiving_agents();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (sending, receiving): (Vec<AgentModel>, Vec<AgentModel>) = match spec {
        ModelSpec::Canonical {
            delta,
            receiving_truth_mean,
        } => {
            let sending = canonical_family(*delta)?;
            let r = AgentModel::new(Descriptor::gaussian(*receiving_truth_mean), sending[0].likelihoods().to_vec())?;
            (sending, vec![r; nr])
        }
        ModelSpec::StructuredGaussian {
            means,
            nu,
            receiving_truth_mean,
        } => {
            let sending = structured_gaussian_family(means, nu)?;
            let r = AgentModel::new(Descriptor::gaussian(*receiving_truth_mean), sending[0].likelihoods().to_vec())?;
            (sending, vec![r; nr])
        }
        ModelSpec::PerturbedGaussian {
            hypotheses,
            variance,
            correlation,
            truth_mean,
        } => {
            let sending = perturbed_gaussian_family(
                *hypotheses,
                partition.num_sending(),
                *variance,
                *correlation,
                *truth_mean,
                seed,
            )?;
            let receiving = (0..nr)
                .map(|_| perturbed_gaussian_agent(*hypotheses, *variance, *correlation, *truth_mean, &mut rng))
                .collect::<Result<_>>()?;
            (sending, receiving)
        }
        ModelSpec::Beta {
            hypotheses,
            half_width,
            receiving_truth,
        } => {
            let sending = beta_family(*hypotheses, partition.num_sending(), *half_width, seed)?;
            let receiving = (0..nr)
                .map(|_| beta_agent(*hypotheses, *half_width, *receiving_truth, &mut rng))
                .collect::<Result<_>>()?;
            (sending, receiving)
        }
        ModelSpec::Custom { sending, receiving } => (sending.clone(), receiving.clone()),
    };
    if sending.len() != partition.num_sending() {
        return Err(Error::Config(format!(
            "{} sending models for {} components",
            sending.len(),
            partition.num_sending()
        )));
    }
    let mut agents = Vec::with_capacity(partition.total_agents());
    for (s, m) in sending.iter().enumerate() {
        agents.extend(std::iter::repeat_n(m.clone(), partition.sending_range(s).len()));
    }
    agents.extend(receiving);
    Ok(ModelSet { sending, agents })
}
