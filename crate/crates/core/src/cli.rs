//! Command-line experiment runner.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{analysis_report, AnalysisReport};
use crate::config::{preset, ExperimentConfig};
use crate::graph::{aggregate_weights, limiting_matrices, AggregateWeights, CombinationMatrix};
use crate::io::{self, EstimateRow};
use crate::learning::run;
use crate::linalg::DEFAULT_REL_TOL;
use crate::models::{DivergenceMatrix, KlMethod};
use crate::topology::{estimate_from_trajectory, feasibility_report, FeasibilityReport};
use crate::{Error, Result};

/// Environment variable naming the output directory when `--out` is absent.
pub const OUT_ENV: &str = "WEAKGRAPH_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "weakgraph", version, about = "Social learning over weakly-connected graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the graph and write its limiting analysis.
    Generate(Common),
    /// Run the belief recursion on a generated graph.
    Simulate(Common),
    /// Estimate aggregate weights from a recorded trajectory.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Iterations to estimate at, overriding the config.
        #[arg(long, value_delimiter = ',')]
        at: Vec<usize>,
    },
    /// Rank diagnostics of the divergence matrix.
    Feasibility(Common),
    /// generate, simulate and infer in sequence.
    Reproduce(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in preset instead of a config file.
    #[arg(long)]
    pub preset: Option<String>,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => return Err(Error::Config("either --config or --preset is required".into())),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = self
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
        Ok((cfg, out))
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Numerical(_) | Error::SingularSystem(_) | Error::NoConvergence { .. } => EXIT_NUMERICAL,
        Error::DivergenceInfinite(_) | Error::AllZeroLikelihood { .. } => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Generate(c) => {
            let (cfg, out) = c.load()?;
            generate(&cfg, &out).map(|_| EXIT_OK)
        }
        Command::Simulate(c) => {
            let (cfg, out) = c.load()?;
            simulate(&cfg, &out).map(|_| EXIT_OK)
        }
        Command::Infer { common, at } => {
            let (cfg, out) = common.load()?;
            let at = if at.is_empty() { cfg.infer.iterations.clone() } else { at.clone() };
            infer(&cfg, &out, &at).map(|r| if r.feasible { EXIT_OK } else { EXIT_INFEASIBLE })
        }
        Command::Feasibility(c) => {
            let (cfg, out) = c.load()?;
            feasibility(&cfg, &out).map(|r| if r.feasible { EXIT_OK } else { EXIT_INFEASIBLE })
        }
        Command::Reproduce(c) => {
            let (cfg, out) = c.load()?;
            generate(&cfg, &out)?;
            simulate(&cfg, &out)?;
            if cfg.infer.iterations.is_empty() {
                return Ok(EXIT_OK);
            }
            let r = infer(&cfg, &out, &cfg.infer.iterations)?;
            Ok(if r.feasible { EXIT_OK } else { EXIT_INFEASIBLE })
        }
    }
}

/// Everything `generate` computes.
pub struct Generated {
    pub graph: CombinationMatrix,
    pub weights: AggregateWeights,
    pub divergence: DivergenceMatrix,
    pub report: AnalysisReport,
}

pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Generated> {
    let graph = cfg.build_graph()?;
    let lim = limiting_matrices(&graph)?;
    let weights = aggregate_weights(&lim, graph.partition())?;
    let models = cfg.build_models()?;
    let divergence = models.divergence_matrix(KlMethod::default())?;
    let report = analysis_report(&divergence, &weights, graph.partition())?;
    let p = graph.partition();
    io::write_graph(&out.join("graph.json"), &graph)?;
    io::write_matrix_csv(&out.join("A.csv"), graph.matrix(), p)?;
    io::write_matrix_csv(&out.join("W.csv"), &lim.w, p)?;
    io::write_matrix_csv(&out.join("Omega.csv"), &lim.omega, p)?;
    io::write_matrix_csv(&out.join("x.csv"), &weights.x, p)?;
    io::write_divergence_csv(&out.join("D.csv"), &divergence)?;
    io::write_json(&out.join("models.json"), &models)?;
    io::write_json(&out.join("analysis.json"), &report)?;
    println!("generated {} ({}) in {}", cfg.name, p.describe(), out.display());
    for a in &report.agents {
        let theta = a.theta_star.map_or_else(|| "ambiguous".to_string(), |t| t.to_string());
        println!("  agent {:>3}: theta* = {theta}", a.agent);
    }
    Ok(Generated {
        graph,
        weights,
        divergence,
        report,
    })
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    name: String,
    seed: u64,
    horizon: usize,
    floor_hits: u64,
    snapshots: usize,
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let graph = io::read_graph(&out.join("graph.json"))?;
    let expected = cfg.build_graph()?;
    if graph.matrix() != expected.matrix() {
        return Err(Error::InconsistentData(format!(
            "{} was generated from a different config or seed",
            out.join("graph.json").display()
        )));
    }
    let models = cfg.build_models()?;
    let traj = run(&graph, &models.agents, cfg.horizon, cfg.data_seed(), &cfg.record_spec())?;
    io::write_trajectory_csv(&out.join("trajectory.csv"), &traj)?;
    io::write_json(
        &out.join("simulation.json"),
        &SimulationSummary {
            name: cfg.name.clone(),
            seed: cfg.seed,
            horizon: cfg.horizon,
            floor_hits: traj.floor_hits,
            snapshots: traj.snapshots.len(),
        },
    )?;
    println!("simulated {} for {} rounds into {}", cfg.name, cfg.horizon, out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    agent: usize,
    iteration: usize,
    theta_star_hat: usize,
    x_hat: Vec<f64>,
    x_true: Vec<f64>,
    rank: usize,
    residual: f64,
    feasible: bool,
    max_error: f64,
}

#[derive(Debug, Serialize)]
pub struct InferReport {
    pub feasibility: FeasibilityReport,
    pub feasible: bool,
    estimates: Vec<EstimateReport>,
}

pub fn infer(cfg: &ExperimentConfig, out: &Path, at: &[usize]) -> Result<InferReport> {
    if at.is_empty() {
        return Err(Error::Config("no inference iterations given".into()));
    }
    let graph = io::read_graph(&out.join("graph.json"))?;
    let traj = io::read_trajectory_csv(&out.join("trajectory.csv"))?;
    let lim = limiting_matrices(&graph)?;
    let weights = aggregate_weights(&lim, graph.partition())?;
    let d = cfg.build_models()?.divergence_matrix(KlMethod::default())?;
    let feasibility = feasibility_report(&d, DEFAULT_REL_TOL);
    let first = graph.partition().receiving_agent_range().start;
    let agents: Vec<usize> = traj.agents.iter().copied().filter(|a| *a >= first).collect();
    if agents.is_empty() {
        return Err(Error::MissingRecord("no receiving agent was recorded".into()));
    }
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for &i in at {
        for est in estimate_from_trajectory(&traj, &d, i, &agents, DEFAULT_REL_TOL)? {
            let truth: Vec<f64> = weights.column(est.agent - first).iter().copied().collect();
            for (s, (xh, xt)) in est.result.x_hat.iter().zip(&truth).enumerate() {
                rows.push(EstimateRow {
                    iteration: i,
                    agent: est.agent,
                    component: s,
                    x_hat: *xh,
                    x_true: Some(*xt),
                });
            }
            let max_error = est.result.x_hat.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            estimates.push(EstimateReport {
                agent: est.agent + 1,
                iteration: i,
                theta_star_hat: est.theta_star_hat + 1,
                x_hat: est.result.x_hat,
                x_true: truth,
                rank: est.result.numerical_rank,
                residual: est.result.residual,
                feasible: est.result.feasible,
                max_error,
            });
        }
    }
    io::write_estimates_csv(&out.join("topology.csv"), &rows)?;
    let report = InferReport {
        feasible: feasibility.feasible,
        feasibility,
        estimates,
    };
    io::write_json(&out.join("topology.json"), &report)?;
    if report.feasible {
        if let Some(last) = at.iter().max() {
            let worst = report
                .estimates
                .iter()
                .filter(|e| e.iteration == *last)
                .map(|e| e.max_error)
                .fold(0.0, f64::max);
            println!("inferred {} at {} iterations; max error at i={last}: {worst:.3e}", cfg.name, at.len());
        }
    } else {
        println!(
            "inferred {}: topology not identifiable (ranks {:?}, S = {})",
            cfg.name, report.feasibility.ranks, report.feasibility.components
        );
    }
    Ok(report)
}

pub fn feasibility(cfg: &ExperimentConfig, out: &Path) -> Result<FeasibilityReport> {
    let d = cfg.build_models()?.divergence_matrix(KlMethod::default())?;
    let report = feasibility_report(&d, DEFAULT_REL_TOL);
    io::write_json(&out.join("feasibility.json"), &report)?;
    println!(
        "H = {}, S = {}, ranks of C(theta) = {:?}: {}",
        report.hypotheses,
        report.components,
        report.ranks,
        if report.feasible { "feasible" } else { "infeasible" }
    );
    Ok(report)
}
