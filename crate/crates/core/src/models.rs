//! Agent statistical models, data sampling and the divergence matrix `D`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::digamma;

use crate::quadrature;
use crate::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
pub const DEFAULT_KL_TOL: f64 = 1e-8;
/// Half-width (in standard deviations) of the window used to integrate Gaussian truths.
const GAUSSIAN_WINDOW: f64 = 14.0;

/// A scalar distribution used either as a true data law or as a likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Descriptor {
    UnitGaussian { mean: f64 },
    Beta { alpha: f64, beta: f64 },
}

impl Descriptor {
    pub fn gaussian(mean: f64) -> Self {
        Descriptor::UnitGaussian { mean }
    }

    pub fn beta(alpha: f64, beta: f64) -> Self {
        Descriptor::Beta { alpha, beta }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Descriptor::UnitGaussian { .. } => "unit-variance Gaussian",
            Descriptor::Beta { .. } => "Beta",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Descriptor::UnitGaussian { mean } if !mean.is_finite() => {
                Err(Error::InvalidSpec(format!("Gaussian mean {mean} is not finite")))
            }
            Descriptor::Beta { alpha, beta }
                if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) =>
            {
                Err(Error::InvalidShape(format!("Beta({alpha}, {beta})")))
            }
            _ => Ok(()),
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        match self {
            Descriptor::UnitGaussian { .. } => x.is_finite(),
            Descriptor::Beta { .. } => x > 0.0 && x < 1.0,
        }
    }

    /// True when the support of `other` contains the support of `self`.
    fn support_within(&self, other: &Descriptor) -> bool {
        !matches!(
            (self, other),
            (Descriptor::UnitGaussian { .. }, Descriptor::Beta { .. })
        )
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        LogDensity::new(self).eval(x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Descriptor::UnitGaussian { mean } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + z
            }
            Descriptor::Beta { alpha, beta } => {
                let dist = rand_distr::Beta::new(alpha, beta).expect("validated shapes");
                // rounding can land exactly on an endpoint; those draws are redrawn
                loop {
                    let x = dist.sample(rng);
                    if x > 0.0 && x < 1.0 {
                        return x;
                    }
                }
            }
        }
    }
}

/// Log-density with its normalising constant precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
enum LogDensity {
    Gaussian { mean: f64 },
    Beta { am1: f64, bm1: f64, ln_norm: f64 },
}

impl LogDensity {
    fn new(d: &Descriptor) -> Self {
        match *d {
            Descriptor::UnitGaussian { mean } => LogDensity::Gaussian { mean },
            Descriptor::Beta { alpha, beta } => LogDensity::Beta {
                am1: alpha - 1.0,
                bm1: beta - 1.0,
                ln_norm: ln_beta(alpha, beta),
            },
        }
    }

    #[inline]
    fn eval(&self, x: f64) -> Result<f64> {
        match *self {
            LogDensity::Gaussian { mean } => {
                let z = x - mean;
                Ok(-0.5 * z * z - LN_SQRT_2PI)
            }
            LogDensity::Beta { am1, bm1, ln_norm } => {
                if !(x > 0.0 && x < 1.0) {
                    return Err(Error::OutOfSupport { value: x, family: "Beta" });
                }
                Ok(am1 * x.ln() + bm1 * (-x).ln_1p() - ln_norm)
            }
        }
    }
}

/// The data law and the `H` likelihoods of one agent. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAgentModel", into = "RawAgentModel")]
pub struct AgentModel {
    truth: Descriptor,
    likelihoods: Vec<Descriptor>,
    offsets: Vec<f64>,
    compiled: Vec<LogDensity>,
}

#[derive(Serialize, Deserialize)]
struct RawAgentModel {
    truth: Descriptor,
    likelihoods: Vec<Descriptor>,
    #[serde(default)]
    offsets: Vec<f64>,
}

impl TryFrom<RawAgentModel> for AgentModel {
    type Error = Error;
    fn try_from(raw: RawAgentModel) -> Result<Self> {
        let offsets = if raw.offsets.is_empty() {
            vec![0.0; raw.likelihoods.len()]
        } else {
            raw.offsets
        };
        AgentModel::with_offsets(raw.truth, raw.likelihoods, offsets)
    }
}

impl From<AgentModel> for RawAgentModel {
    fn from(m: AgentModel) -> Self {
        RawAgentModel {
            truth: m.truth,
            likelihoods: m.likelihoods,
            offsets: m.offsets,
        }
    }
}

impl AgentModel {
    pub fn new(truth: Descriptor, likelihoods: Vec<Descriptor>) -> Result<Self> {
        let n = likelihoods.len();
        Self::with_offsets(truth, likelihoods, vec![0.0; n])
    }

    /// `offsets[θ]` records the perturbation that produced likelihood `θ`.
    pub fn with_offsets(truth: Descriptor, likelihoods: Vec<Descriptor>, offsets: Vec<f64>) -> Result<Self> {
        if likelihoods.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least two hypotheses, got {}",
                likelihoods.len()
            )));
        }
        if offsets.len() != likelihoods.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} offsets for {} likelihoods",
                offsets.len(),
                likelihoods.len()
            )));
        }
        truth.validate()?;
        for l in &likelihoods {
            l.validate()?;
            if !truth.support_within(l) {
                return Err(Error::DivergenceInfinite(format!(
                    "{} likelihood vanishes on the support of a {} truth",
                    l.family(),
                    truth.family()
                )));
            }
        }
        let compiled = likelihoods.iter().map(LogDensity::new).collect();
        Ok(Self {
            truth,
            likelihoods,
            offsets,
            compiled,
        })
    }

    pub fn truth(&self) -> &Descriptor {
        &self.truth
    }

    pub fn likelihoods(&self) -> &[Descriptor] {
        &self.likelihoods
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn num_hypotheses(&self) -> usize {
        self.likelihoods.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.truth.sample(rng)
    }

    pub fn log_likelihood(&self, x: f64, theta: usize) -> Result<f64> {
        let d = self.compiled.get(theta).ok_or_else(|| {
            Error::DimensionMismatch(format!("hypothesis {theta} out of range"))
        })?;
        d.eval(x)
    }

    /// Fills `out[θ] = log L(x | θ)` for every hypothesis.
    pub fn log_likelihoods_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.compiled.len());
        for (o, d) in out.iter_mut().zip(&self.compiled) {
            *o = d.eval(x)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    Quadrature,
    MonteCarlo,
    /// Supplied directly rather than computed from models.
    Given,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Analytic => "analytic",
            Provenance::Quadrature => "quadrature",
            Provenance::MonteCarlo => "monte-carlo",
            Provenance::Given => "given",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlMethod {
    /// Closed form for Gaussian pairs, quadrature otherwise.
    Auto { tol: f64 },
    Quadrature { tol: f64 },
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for KlMethod {
    fn default() -> Self {
        KlMethod::Auto { tol: DEFAULT_KL_TOL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    pub provenance: Provenance,
    /// Standard error of Monte-Carlo estimates.
    pub std_error: Option<f64>,
}

/// `D[truth || likelihood] = E_truth[log truth / likelihood]`.
pub fn kl_divergence(truth: &Descriptor, likelihood: &Descriptor, method: KlMethod) -> Result<KlEstimate> {
    truth.validate()?;
    likelihood.validate()?;
    if !truth.support_within(likelihood) {
        return Err(Error::DivergenceInfinite(format!(
            "{} likelihood vanishes where the {} truth has mass",
            likelihood.family(),
            truth.family()
        )));
    }
    match method {
        KlMethod::Auto { tol } => match (truth, likelihood) {
            (Descriptor::UnitGaussian { mean: a }, Descriptor::UnitGaussian { mean: b }) => Ok(KlEstimate {
                value: 0.5 * (a - b) * (a - b),
                provenance: Provenance::Analytic,
                std_error: None,
            }),
            _ => kl_quadrature(truth, likelihood, tol),
        },
        KlMethod::Quadrature { tol } => kl_quadrature(truth, likelihood, tol),
        KlMethod::MonteCarlo { samples, seed } => kl_monte_carlo(truth, likelihood, samples, seed),
    }
}

fn kl_quadrature(truth: &Descriptor, likelihood: &Descriptor, tol: f64) -> Result<KlEstimate> {
    let f = LogDensity::new(truth);
    let l = LogDensity::new(likelihood);
    let integrand = |x: f64| {
        let lf = f.eval(x).unwrap_or(f64::NEG_INFINITY);
        if lf == f64::NEG_INFINITY {
            return 0.0;
        }
        let ll = l.eval(x).unwrap_or(f64::NEG_INFINITY);
        lf.exp() * (lf - ll)
    };
    let (a, b) = match *truth {
        Descriptor::UnitGaussian { mean } => (mean - GAUSSIAN_WINDOW, mean + GAUSSIAN_WINDOW),
        Descriptor::Beta { .. } => (0.0, 1.0),
    };
    let out = quadrature::integrate(integrand, a, b, tol)?;
    // identical laws integrate to round-off around zero
    let value = if out.value < 0.0 && out.value > -10.0 * tol {
        0.0
    } else {
        out.value
    };
    if value < 0.0 {
        return Err(Error::Numerical(format!("negative divergence {value:e}")));
    }
    Ok(KlEstimate {
        value,
        provenance: Provenance::Quadrature,
        std_error: None,
    })
}

fn kl_monte_carlo(truth: &Descriptor, likelihood: &Descriptor, samples: usize, seed: u64) -> Result<KlEstimate> {
    if samples < 2 {
        return Err(Error::InvalidSpec("Monte-Carlo needs at least two samples".into()));
    }
    let f = LogDensity::new(truth);
    let l = LogDensity::new(likelihood);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let x = truth.sample(&mut rng);
        let v = f.eval(x)? - l.eval(x)?;
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(KlEstimate {
        value: mean,
        provenance: Provenance::MonteCarlo,
        std_error: Some((var / n).sqrt()),
    })
}

/// Closed-form divergence between two Beta laws (digamma form).
pub fn beta_kl_closed_form(a1: f64, b1: f64, a2: f64, b2: f64) -> f64 {
    ln_beta(a2, b2) - ln_beta(a1, b1) + (a1 - a2) * digamma(a1) + (b1 - b2) * digamma(b1)
        + (a2 - a1 + b2 - b1) * digamma(a1 + b1)
}

/// The `H x S` matrix `d[θ][s] = D[f^(s) || L^(s)(θ)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceMatrix {
    d: DMatrix<f64>,
    provenance: DMatrix<Provenance>,
}

impl DivergenceMatrix {
    /// Wraps a given nonnegative matrix (rows hypotheses, columns components).
    pub fn from_matrix(d: DMatrix<f64>) -> Result<Self> {
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidSpec("divergences must be finite and nonnegative".into()));
        }
        if d.nrows() < 2 || d.ncols() < 1 {
            return Err(Error::InvalidSpec(format!(
                "divergence matrix must have H >= 2 rows and S >= 1 columns, got {:?}",
                d.shape()
            )));
        }
        let provenance = DMatrix::from_element(d.nrows(), d.ncols(), Provenance::Given);
        Ok(Self { d, provenance })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn get(&self, theta: usize, s: usize) -> f64 {
        self.d[(theta, s)]
    }

    pub fn provenance(&self, theta: usize, s: usize) -> Provenance {
        self.provenance[(theta, s)]
    }

    pub fn num_hypotheses(&self) -> usize {
        self.d.nrows()
    }

    pub fn num_components(&self) -> usize {
        self.d.ncols()
    }

    /// Multiplies every divergence by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            d: &self.d * c,
            provenance: self.provenance.clone(),
        }
    }
}

/// Fills `D` from one homogeneous model per sending component.
pub fn divergence_matrix(sending_models: &[AgentModel], hypotheses: usize, method: KlMethod) -> Result<DivergenceMatrix> {
    if sending_models.is_empty() {
        return Err(Error::InvalidSpec("no sending models".into()));
    }
    let s_count = sending_models.len();
    let mut d = DMatrix::zeros(hypotheses, s_count);
    let mut provenance = DMatrix::from_element(hypotheses, s_count, Provenance::Given);
    for (s, model) in sending_models.iter().enumerate() {
        if model.num_hypotheses() != hypotheses {
            return Err(Error::DimensionMismatch(format!(
                "sending model {s} has {} likelihoods, expected {hypotheses}",
                model.num_hypotheses()
            )));
        }
        for theta in 0..hypotheses {
            let est = kl_divergence(model.truth(), &model.likelihoods()[theta], method)?;
            d[(theta, s)] = est.value;
            provenance[(theta, s)] = est.provenance;
        }
    }
    Ok(DivergenceMatrix { d, provenance })
}

fn check_distinct(means: &[f64]) -> Result<()> {
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            if means[i] == means[j] {
                return Err(Error::DegenerateMeans(format!(
                    "means {i} and {j} coincide at {}",
                    means[i]
                )));
            }
        }
    }
    Ok(())
}

/// `d[θ][s] = (m_θ - ν_s)^2 / 2` for a shared Gaussian likelihood family.
///
/// Every `ν_s` must be one of the means. Repeated `ν` values are accepted and
/// collapse `D` towards rank one.
pub fn structured_gaussian_d(means: &[f64], nu: &[f64]) -> Result<DivergenceMatrix> {
    structured_gaussian_check(means, nu)?;
    let d = DMatrix::from_fn(means.len(), nu.len(), |t, s| 0.5 * (means[t] - nu[s]).powi(2));
    Ok(DivergenceMatrix {
        provenance: DMatrix::from_element(d.nrows(), d.ncols(), Provenance::Analytic),
        d,
    })
}

fn structured_gaussian_check(means: &[f64], nu: &[f64]) -> Result<()> {
    if means.len() < 2 || nu.is_empty() {
        return Err(Error::InvalidSpec("need H >= 2 means and S >= 1 components".into()));
    }
    if means.iter().chain(nu).any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("means must be finite".into()));
    }
    check_distinct(means)?;
    if let Some(v) = nu.iter().find(|v| !means.contains(v)) {
        return Err(Error::InvalidSpec(format!("true mean {v} is not one of the likelihood means")));
    }
    Ok(())
}

/// One sending model per component sharing the likelihood means `means`,
/// component `s` generating data with mean `nu[s]`.
pub fn structured_gaussian_family(means: &[f64], nu: &[f64]) -> Result<Vec<AgentModel>> {
    structured_gaussian_check(means, nu)?;
    let likelihoods: Vec<_> = means.iter().map(|&m| Descriptor::gaussian(m)).collect();
    nu.iter()
        .map(|&v| AgentModel::new(Descriptor::gaussian(v), likelihoods.clone()))
        .collect()
}

/// The three-hypothesis example with means `(-Δ, 0, +Δ)`: the first component
/// generates data under the first hypothesis, the second under the third.
pub fn canonical_family(delta: f64) -> Result<Vec<AgentModel>> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidSpec(format!("Δ = {delta} must be positive")));
    }
    structured_gaussian_family(&[-delta, 0.0, delta], &[-delta, delta])
}

/// Standard-normal vector with pairwise correlation `rho`, scaled to `variance`.
fn equicorrelated<R: Rng + ?Sized>(count: usize, variance: f64, rho: f64, rng: &mut R) -> Vec<f64> {
    let sd = variance.sqrt();
    if rho >= 0.0 {
        // shared factor plus independent residual
        let shared: f64 = StandardNormal.sample(rng);
        (0..count)
            .map(|_| {
                let own: f64 = StandardNormal.sample(rng);
                sd * (rho.sqrt() * shared + (1.0 - rho).sqrt() * own)
            })
            .collect()
    } else {
        // negative correlation: centred residuals plus a scaled common mean
        let z: Vec<f64> = (0..count).map(|_| StandardNormal.sample(rng)).collect();
        let n = count as f64;
        let mean = z.iter().sum::<f64>() / n;
        let alpha = (1.0 - rho).sqrt();
        let beta = ((1.0 + (n - 1.0) * rho) / n).sqrt();
        z.iter()
            .map(|zi| sd * (alpha * (zi - mean) + beta * n.sqrt() * mean))
            .collect()
    }
}

fn check_perturbation(count: usize, variance: f64, rho: f64) -> Result<()> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::InvalidSpec(format!("variance {variance} must be nonnegative")));
    }
    let lower = if count > 1 { -1.0 / (count as f64 - 1.0) } else { -1.0 };
    if !(rho > lower && rho < 1.0) {
        return Err(Error::InvalidCorrelation { correlation: rho, count });
    }
    Ok(())
}

/// Sending models whose likelihood `θ` is a unit Gaussian with mean `θ + ε_{θs}`
/// (hypotheses numbered from one). The `H·S` offsets are jointly Gaussian with
/// common variance and pairwise correlation; every truth has mean `truth_mean`.
pub fn perturbed_gaussian_family(
    hypotheses: usize,
    components: usize,
    variance: f64,
    correlation: f64,
    truth_mean: f64,
    seed: u64,
) -> Result<Vec<AgentModel>> {
    if hypotheses < 2 || components < 1 {
        return Err(Error::InvalidSpec("need H >= 2 and S >= 1".into()));
    }
    let count = hypotheses * components;
    check_perturbation(count, variance, correlation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = equicorrelated(count, variance, correlation, &mut rng);
    (0..components)
        .map(|s| {
            let offsets: Vec<f64> = (0..hypotheses).map(|t| eps[s * hypotheses + t]).collect();
            perturbed_gaussian_model(&offsets, truth_mean)
        })
        .collect()
}

fn perturbed_gaussian_model(offsets: &[f64], truth_mean: f64) -> Result<AgentModel> {
    let likelihoods = offsets
        .iter()
        .enumerate()
        .map(|(t, e)| Descriptor::gaussian((t + 1) as f64 + e))
        .collect();
    AgentModel::with_offsets(Descriptor::gaussian(truth_mean), likelihoods, offsets.to_vec())
}

/// A single agent with its own equicorrelated perturbation over its `H` likelihoods.
pub fn perturbed_gaussian_agent<R: Rng + ?Sized>(
    hypotheses: usize,
    variance: f64,
    correlation: f64,
    truth_mean: f64,
    rng: &mut R,
) -> Result<AgentModel> {
    check_perturbation(hypotheses, variance, correlation)?;
    let eps = equicorrelated(hypotheses, variance, correlation, rng);
    perturbed_gaussian_model(&eps, truth_mean)
}

/// Fixed second shape parameter of the Beta family.
pub const BETA_SECOND_SHAPE: f64 = 2.0;

fn check_half_width(half_width: f64) -> Result<()> {
    // smallest first shape is 1 + 1 - half_width
    if !(half_width >= 0.0 && half_width < 2.0) {
        return Err(Error::InvalidShape(format!(
            "half-width {half_width} must lie in [0, 2) to keep every shape positive"
        )));
    }
    Ok(())
}

fn beta_model(offsets: &[f64], truth: Descriptor) -> Result<AgentModel> {
    let likelihoods = offsets
        .iter()
        .enumerate()
        .map(|(t, u)| Descriptor::beta((t + 1) as f64 + 1.0 + u, BETA_SECOND_SHAPE))
        .collect();
    AgentModel::with_offsets(truth, likelihoods, offsets.to_vec())
}

/// Sending models with likelihood `θ` equal to `Beta(θ + 1 + u_{θs}, 2)`, `u`
/// i.i.d. uniform on `[-half_width, half_width]`, and truth `Beta(s + 1, 2)`
/// (hypotheses and components numbered from one).
pub fn beta_family(hypotheses: usize, components: usize, half_width: f64, seed: u64) -> Result<Vec<AgentModel>> {
    if hypotheses < 2 || components < 1 {
        return Err(Error::InvalidSpec("need H >= 2 and S >= 1".into()));
    }
    check_half_width(half_width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..components)
        .map(|s| {
            let offsets = uniform_offsets(hypotheses, half_width, &mut rng);
            beta_model(&offsets, Descriptor::beta((s + 1) as f64 + 1.0, BETA_SECOND_SHAPE))
        })
        .collect()
}

fn uniform_offsets<R: Rng + ?Sized>(count: usize, half_width: f64, rng: &mut R) -> Vec<f64> {
    (0..count)
        .map(|_| {
            if half_width == 0.0 {
                0.0
            } else {
                rng.random_range(-half_width..=half_width)
            }
        })
        .collect()
}

/// A single Beta-family agent with its own uniform perturbations.
pub fn beta_agent<R: Rng + ?Sized>(hypotheses: usize, half_width: f64, truth: Descriptor, rng: &mut R) -> Result<AgentModel> {
    check_half_width(half_width)?;
    let offsets = uniform_offsets(hypotheses, half_width, rng);
    beta_model(&offsets, truth)
}

/// `-½ log(2π)`, the peak value of the unit Gaussian log-density.
pub fn gaussian_log_peak() -> f64 {
    -0.5 * (2.0 * PI).ln()
}
