//! Limiting opinions of receiving agents: network divergences, their
//! minimisers, exponential rates and the three-region map of the canonical
//! two-sender example.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::graph::{AggregateWeights, NetworkPartition};
use crate::models::{kl_divergence, AgentModel, DivergenceMatrix, KlMethod};
use crate::{Error, Result};

/// Absolute tolerance under which two network divergences count as tied.
pub const TIE_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-9;

fn check_weights(x: &[f64], expected: usize) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch(format!("{} weights for {expected} components", x.len())));
    }
    if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidSpec("weights must be finite and nonnegative".into()));
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidSpec(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// `𝒟_k(θ) = Σ_s d_{θs} x_{sk}`.
pub fn network_divergence(d: &DivergenceMatrix, x_k: &[f64]) -> Result<Vec<f64>> {
    check_weights(x_k, d.num_components())?;
    let x = DVector::from_column_slice(x_k);
    Ok((d.matrix() * x).iter().copied().collect())
}

/// General form over individual sending agents: `Σ_ℓ ω_{ℓk} D[f_ℓ || L_ℓ(θ)]`,
/// with `per_agent[ℓ][θ]` the divergences of sending agent `ℓ`.
pub fn network_divergence_general(omega_k: &[f64], per_agent: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_weights(omega_k, per_agent.len())?;
    let h = per_agent.first().map_or(0, Vec::len);
    if per_agent.iter().any(|row| row.len() != h) {
        return Err(Error::DimensionMismatch("sending agents disagree on H".into()));
    }
    let mut out = vec![0.0; h];
    for (w, row) in omega_k.iter().zip(per_agent) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Divergences `D[f_ℓ || L_ℓ(θ)]` of every given agent model.
pub fn agent_divergences(models: &[AgentModel], method: KlMethod) -> Result<Vec<Vec<f64>>> {
    models
        .iter()
        .map(|m| {
            m.likelihoods()
                .iter()
                .map(|l| kl_divergence(m.truth(), l, method).map(|e| e.value))
                .collect()
        })
        .collect()
}

/// The unique minimiser of a divergence vector.
pub fn limiting_hypothesis(divergences: &[f64]) -> Result<usize> {
    if divergences.is_empty() || divergences.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("divergences must be finite and nonempty".into()));
    }
    let min = divergences.iter().copied().fold(f64::INFINITY, f64::min);
    let ties: Vec<usize> = divergences
        .iter()
        .enumerate()
        .filter(|(_, v)| **v - min <= TIE_TOL)
        .map(|(i, _)| i)
        .collect();
    if ties.len() > 1 {
        return Err(Error::AmbiguousMinimizer(ties));
    }
    Ok(ties[0])
}

/// `y(θ) = 𝒟(θ*) - 𝒟(θ)`.
pub fn predicted_rates(divergences: &[f64], theta_star: usize) -> Result<Vec<f64>> {
    let anchor = *divergences
        .get(theta_star)
        .ok_or_else(|| Error::DimensionMismatch(format!("θ* = {theta_star} out of range")))?;
    Ok(divergences.iter().map(|v| anchor - v).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    N1Dominant,
    Middle,
    N2Dominant,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::N1Dominant => "N1-dominant",
            Region::Middle => "middle",
            Region::N2Dominant => "N2-dominant",
        }
    }
}

/// Returns `Δ` when `d` has the shape of the canonical example, `None` otherwise.
pub fn canonical_delta(d: &DivergenceMatrix) -> Option<f64> {
    if d.num_hypotheses() != 3 || d.num_components() != 2 {
        return None;
    }
    let half_sq = d.get(1, 0);
    if !(half_sq > 0.0) {
        return None;
    }
    let expected = [[0.0, 4.0], [1.0, 1.0], [4.0, 0.0]];
    let ok = (0..3).all(|t| (0..2).all(|s| (d.get(t, s) - expected[t][s] * half_sq).abs() <= 1e-9 * half_sq));
    ok.then(|| (2.0 * half_sq).sqrt())
}

/// Region of the canonical example that a weight vector falls in.
pub fn canonical_thresholds(d: &DivergenceMatrix, x_k: &[f64]) -> Result<Region> {
    if canonical_delta(d).is_none() {
        return Err(Error::WrongConfiguration(
            "region map needs two senders and three hypotheses with means -Δ, 0, Δ".into(),
        ));
    }
    let div = network_divergence(d, x_k)?;
    Ok(match limiting_hypothesis(&div)? {
        0 => Region::N1Dominant,
        1 => Region::Middle,
        _ => Region::N2Dominant,
    })
}

/// Limiting analysis of one receiving agent.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDivergence {
    pub divergences: Vec<f64>,
    pub theta_star: Option<usize>,
    /// Tied minimisers when the minimiser is not unique.
    pub ties: Vec<usize>,
    pub rates: Option<Vec<f64>>,
}

impl NetworkDivergence {
    pub fn unique(&self) -> bool {
        self.theta_star.is_some()
    }
}

pub fn analyze_agent(d: &DivergenceMatrix, x_k: &[f64]) -> Result<NetworkDivergence> {
    let divergences = network_divergence(d, x_k)?;
    match limiting_hypothesis(&divergences) {
        Ok(t) => Ok(NetworkDivergence {
            rates: Some(predicted_rates(&divergences, t)?),
            theta_star: Some(t),
            ties: Vec::new(),
            divergences,
        }),
        Err(Error::AmbiguousMinimizer(ties)) => Ok(NetworkDivergence {
            divergences,
            theta_star: None,
            ties,
            rates: None,
        }),
        Err(e) => Err(e),
    }
}

/// One line of the analysis report. Labels are one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent: usize,
    pub theta_star: Option<usize>,
    pub unique: bool,
    pub divergences: Vec<f64>,
    pub rates: Option<Vec<f64>>,
    pub aggregate_weights: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub region: Option<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub partition: String,
    pub hypotheses: usize,
    pub agents: Vec<AgentReport>,
}

impl AnalysisReport {
    /// Zero-based limiting hypotheses in receiving-agent order.
    pub fn theta_stars(&self) -> Vec<Option<usize>> {
        self.agents.iter().map(|a| a.theta_star.map(|t| t - 1)).collect()
    }
}

pub fn analysis_report(d: &DivergenceMatrix, x: &AggregateWeights, partition: &NetworkPartition) -> Result<AnalysisReport> {
    let canonical = canonical_delta(d).is_some();
    let first = partition.receiving_agent_range().start;
    let mut agents = Vec::with_capacity(x.num_receiving());
    for j in 0..x.num_receiving() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let nd = analyze_agent(d, &col)?;
        let region = if canonical {
            nd.theta_star.map(|t| match t {
                0 => Region::N1Dominant,
                1 => Region::Middle,
                _ => Region::N2Dominant,
            })
        } else {
            None
        };
        agents.push(AgentReport {
            agent: first + j + 1,
            theta_star: nd.theta_star.map(|t| t + 1),
            unique: nd.unique(),
            divergences: nd.divergences,
            rates: nd.rates,
            aggregate_weights: col,
            region,
        });
    }
    Ok(AnalysisReport {
        partition: partition.describe(),
        hypotheses: d.num_hypotheses(),
        agents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{canonical_family, divergence_matrix, structured_gaussian_d};

    fn canonical(delta: f64) -> DivergenceMatrix {
        divergence_matrix(&canonical_family(delta).unwrap(), 3, KlMethod::default()).unwrap()
    }

    #[test]
    fn canonical_divergence_displays() {
        let delta = 1.7;
        let d = canonical(delta);
        for x1 in [0.1, 0.4, 0.9] {
            let div = network_divergence(&d, &[x1, 1.0 - x1]).unwrap();
            assert!((div[1] - delta * delta / 2.0).abs() < 1e-12);
            assert!((div[0] - 2.0 * delta * delta * (1.0 - x1)).abs() < 1e-12);
            assert!((div[2] - 2.0 * delta * delta * x1).abs() < 1e-12);
        }
        let corner = network_divergence(&d, &[1.0, 0.0]).unwrap();
        assert_eq!(corner, vec![d.get(0, 0), d.get(1, 0), d.get(2, 0)]);
        assert!(network_divergence(&d, &[1.0]).is_err());
        assert_eq!(canonical_delta(&d).map(|v| (v - delta).abs() < 1e-12), Some(true));
    }

    #[test]
    fn limiting_hypothesis_examples() {
        let d = canonical(1.0);
        let pick = |x1: f64| limiting_hypothesis(&network_divergence(&d, &[x1, 1.0 - x1]).unwrap()).unwrap();
        assert_eq!(pick(0.8), 0);
        assert_eq!(pick(0.645), 1);
        assert!(matches!(limiting_hypothesis(&[1.0, 0.5, 0.5]), Err(Error::AmbiguousMinimizer(t)) if t == vec![1, 2]));
        let boundary = network_divergence(&d, &[0.75, 0.25]).unwrap();
        assert!(matches!(limiting_hypothesis(&boundary), Err(Error::AmbiguousMinimizer(_))));
    }

    #[test]
    fn region_map() {
        let d = canonical(2.0);
        assert_eq!(canonical_thresholds(&d, &[0.8, 0.2]).unwrap(), Region::N1Dominant);
        assert_eq!(canonical_thresholds(&d, &[0.5, 0.5]).unwrap(), Region::Middle);
        assert_eq!(canonical_thresholds(&d, &[0.2, 0.8]).unwrap(), Region::N2Dominant);
        let other = structured_gaussian_d(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert!(matches!(canonical_thresholds(&other, &[0.5, 0.5]), Err(Error::WrongConfiguration(_))));
    }

    #[test]
    fn rates() {
        let d = canonical(1.0);
        let div = network_divergence(&d, &[1.0, 0.0]).unwrap();
        let y = predicted_rates(&div, 0).unwrap();
        assert_eq!(y[0], 0.0);
        assert!((y[2] + 2.0).abs() < 1e-15);
        assert!(y.iter().all(|v| *v <= 0.0));
    }

    #[test]
    fn general_form_matches_homogeneous() {
        let models = canonical_family(1.0).unwrap();
        let d = divergence_matrix(&models, 3, KlMethod::default()).unwrap();
        // three agents in the first component, two in the second
        let omega = [0.2, 0.3, 0.1, 0.25, 0.15];
        let per_agent = agent_divergences(
            &[models[0].clone(), models[0].clone(), models[0].clone(), models[1].clone(), models[1].clone()],
            KlMethod::default(),
        )
        .unwrap();
        let general = network_divergence_general(&omega, &per_agent).unwrap();
        let homog = network_divergence(&d, &[0.6, 0.4]).unwrap();
        for (a, b) in general.iter().zip(&homog) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
