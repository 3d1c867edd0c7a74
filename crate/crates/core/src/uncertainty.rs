//! Geometric error models: discretized scenario sets, population sampling
//! and the two error-statistics estimators used for replanning.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalCdf};

use crate::error::{invalid, Result};

/// Default truncation of discretized normals, in standard deviations.
pub const DEFAULT_HALF_WIDTH: f64 = 3.0;

/// Ratio between a normal standard deviation and its mean absolute deviation.
pub const MAD_TO_SD: f64 = 1.25;

/// Shift scenarios on the voxel grid with their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteScenarioSet {
    shifts: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteScenarioSet {
    pub fn new(shifts: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if shifts.is_empty() || shifts.len() != probs.len() {
            return Err(invalid(
                "scenario set needs matching, nonempty shifts and probabilities",
            ));
        }
        if shifts.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("scenario shifts must be strictly increasing"));
        }
        check_probabilities(&probs)?;
        Ok(Self { shifts, probs })
    }

    /// A single certain scenario.
    pub fn point(shift: f64) -> Self {
        Self {
            shifts: vec![shift],
            probs: vec![1.0],
        }
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.shifts.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(s, p)| s * p).sum()
    }
}

/// Random-error standard deviation scenarios with their probabilities.
///
/// A zero standard deviation is allowed and means "no random error".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaScenarioSet {
    sigmas: Vec<f64>,
    probs: Vec<f64>,
}

impl SigmaScenarioSet {
    pub fn new(sigmas: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() || sigmas.len() != probs.len() {
            return Err(invalid("sigma set needs matching, nonempty values and probabilities"));
        }
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(invalid("sigma scenarios must be finite and nonnegative"));
        }
        check_probabilities(&probs)?;
        Ok(Self { sigmas, probs })
    }

    pub fn single(sigma: f64) -> Result<Self> {
        Self::new(vec![sigma], vec![1.0])
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }
}

fn check_probabilities(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(invalid("probabilities must be nonnegative"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("probabilities sum to {total}, expected 1")));
    }
    Ok(())
}

/// Discretizes `N(mean, std^2)` onto multiples of `spacing`.
///
/// Grid points within `mean ± half_width * std` receive the normal mass of
/// their half-open cell `[k h - h/2, k h + h/2)`; the result is renormalized.
/// The grid point nearest to the mean is always present, so a zero standard
/// deviation yields a single certain scenario.
pub fn discretize_normal(mean: f64, std: f64, spacing: f64, half_width: f64) -> Result<DiscreteScenarioSet> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(invalid(format!("standard deviation must be nonnegative, got {std}")));
    }
    if !(spacing > 0.0) {
        return Err(invalid(format!("spacing must be positive, got {spacing}")));
    }
    if !(half_width >= 0.0) || !mean.is_finite() {
        return Err(invalid("half width must be nonnegative and mean finite"));
    }
    let nearest = (mean / spacing).round() as i64;
    if std == 0.0 {
        return Ok(DiscreteScenarioSet::point(nearest as f64 * spacing));
    }
    let k_lo = (((mean - half_width * std) / spacing).ceil() as i64).min(nearest);
    let k_hi = (((mean + half_width * std) / spacing).floor() as i64).max(nearest);
    let normal = NormalCdf::new(mean, std).map_err(|e| invalid(e.to_string()))?;
    let half = 0.5 * spacing;
    let mut shifts = Vec::with_capacity((k_hi - k_lo + 1) as usize);
    let mut probs = Vec::with_capacity(shifts.capacity());
    for k in k_lo..=k_hi {
        let c = k as f64 * spacing;
        shifts.push(c);
        probs.push(cell_mass(&normal, mean, c - half, c + half));
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Ok(DiscreteScenarioSet::point(nearest as f64 * spacing));
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    // Drop scenarios whose mass underflowed, keeping the set nonempty.
    let keep: Vec<bool> = probs.iter().map(|&p| p > 0.0).collect();
    let shifts: Vec<f64> = shifts.iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| *s).collect();
    let probs: Vec<f64> = probs.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect();
    Ok(DiscreteScenarioSet { shifts, probs })
}

fn cell_mass(normal: &NormalCdf, mean: f64, a: f64, b: f64) -> f64 {
    // Use the upper tail on the right half for accuracy far from the mean.
    if a >= mean {
        normal.sf(a) - normal.sf(b)
    } else {
        normal.cdf(b) - normal.cdf(a)
    }
}

/// Distribution of one error component's per-patient mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanSpec {
    Fixed { mm: f64 },
    Uniform { lo_mm: f64, hi_mm: f64 },
}

impl MeanSpec {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MeanSpec::Fixed { mm } => mm,
            MeanSpec::Uniform { lo_mm, hi_mm } => {
                if hi_mm > lo_mm {
                    Uniform::new(lo_mm, hi_mm).expect("ordered bounds").sample(rng)
                } else {
                    lo_mm
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorComponent {
    pub mean: MeanSpec,
    pub std_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationKind {
    Small,
    Large,
}

impl PopulationKind {
    pub fn label(self) -> &'static str {
        match self {
            PopulationKind::Small => "small",
            PopulationKind::Large => "large",
        }
    }
}

/// Patient population error model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub kind: PopulationKind,
    pub systematic: ErrorComponent,
    pub random: ErrorComponent,
}

impl PopulationSpec {
    /// Errors of the magnitude the initial robust plan anticipates.
    pub fn small() -> Self {
        Self {
            kind: PopulationKind::Small,
            systematic: ErrorComponent {
                mean: MeanSpec::Fixed { mm: 0.0 },
                std_mm: 2.5,
            },
            random: ErrorComponent {
                mean: MeanSpec::Fixed { mm: 0.0 },
                std_mm: 6.5,
            },
        }
    }

    /// Larger errors with patient-specific means drawn from U[-3, 3] mm.
    pub fn large() -> Self {
        Self {
            kind: PopulationKind::Large,
            systematic: ErrorComponent {
                mean: MeanSpec::Uniform {
                    lo_mm: -3.0,
                    hi_mm: 3.0,
                },
                std_mm: 3.5,
            },
            random: ErrorComponent {
                mean: MeanSpec::Uniform {
                    lo_mm: -3.0,
                    hi_mm: 3.0,
                },
                std_mm: 7.5,
            },
        }
    }

    pub fn for_kind(kind: PopulationKind) -> Self {
        match kind {
            PopulationKind::Small => Self::small(),
            PopulationKind::Large => Self::large(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("systematic", &self.systematic), ("random", &self.random)] {
            if !(c.std_mm >= 0.0) {
                return Err(invalid(format!("{name} std must be nonnegative")));
            }
            if let MeanSpec::Uniform { lo_mm, hi_mm } = c.mean {
                if !(lo_mm <= hi_mm) {
                    return Err(invalid(format!("{name} mean bounds are inverted")));
                }
            }
        }
        Ok(())
    }
}

/// One patient's realized geometric errors.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientErrors {
    pub systematic: f64,
    pub random: Vec<f64>,
}

impl PatientErrors {
    /// Measured positions `Δr_0 = 0, Δr_n = systematic + random_n`.
    pub fn trajectory(&self) -> TrajectoryLog {
        let mut shifts = Vec::with_capacity(self.random.len() + 1);
        shifts.push(0.0);
        shifts.extend(self.random.iter().map(|r| self.systematic + r));
        TrajectoryLog { shifts }
    }
}

/// Draws a patient's systematic error once and `fractions` i.i.d. random errors.
pub fn sample_patient<R: Rng + ?Sized>(pop: &PopulationSpec, fractions: usize, rng: &mut R) -> Result<PatientErrors> {
    if fractions == 0 {
        return Err(invalid("at least one fraction is required"));
    }
    pop.validate()?;
    let sys_mean = pop.systematic.mean.draw(rng);
    let rand_mean = pop.random.mean.draw(rng);
    let sys = Normal::new(sys_mean, pop.systematic.std_mm).map_err(|e| invalid(e.to_string()))?;
    let rnd = Normal::new(rand_mean, pop.random.std_mm).map_err(|e| invalid(e.to_string()))?;
    let systematic = sys.sample(rng);
    let random = (0..fractions).map(|_| rnd.sample(rng)).collect();
    Ok(PatientErrors { systematic, random })
}

/// Measured isocenter shifts. Entry 0 is the planning position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    shifts: Vec<f64>,
}

impl TrajectoryLog {
    pub fn new(shifts: Vec<f64>) -> Self {
        Self { shifts }
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    /// Number of delivered fractions.
    pub fn fractions(&self) -> usize {
        self.shifts.len().saturating_sub(1)
    }

    /// Measurements `Δr_0 ..= Δr_n`.
    pub fn prefix(&self, n: usize) -> &[f64] {
        &self.shifts[..=n.min(self.shifts.len() - 1)]
    }
}

/// Estimated error statistics (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub systematic_mean: f64,
    pub systematic_std: f64,
    pub random_mean: f64,
    pub random_std: f64,
}

/// Arithmetic-mean estimator over `Δr_0 .. Δr_{M-1}`.
///
/// The random-error spread is the standard deviation of the absolute
/// deviations `δ_μ = |Δr_μ - Δi|` around their own mean.
pub fn estimate_arithmetic(log: &[f64]) -> Result<ErrorEstimate> {
    if log.len() < 2 {
        return Err(invalid(format!(
            "estimator needs at least 2 measurements, got {}",
            log.len()
        )));
    }
    let m = log.len() as f64;
    let mean = log.iter().sum::<f64>() / m;
    let var = log.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / m;
    let dev: Vec<f64> = log.iter().map(|r| (r - mean).abs()).collect();
    let dev_mean = dev.iter().sum::<f64>() / m;
    let dev_var = dev.iter().map(|d| (d - dev_mean).powi(2)).sum::<f64>() / m;
    Ok(ErrorEstimate {
        systematic_mean: mean,
        systematic_std: var.sqrt(),
        random_mean: dev_mean,
        random_std: dev_var.sqrt(),
    })
}

/// Seeds for the exponential-smoothing recursions: a-priori standard
/// deviations (mm) from which the initial MADs are `sd / 1.25`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingPrior {
    pub systematic_sd_mm: f64,
    pub random_sd_mm: f64,
}

/// Exponential-smoothing estimator with smoothing parameter `beta`.
///
/// Forecast `r̂_{μ+1} = β Δr_μ + (1-β) r̂_μ` from `r̂_1 = Δr_0`, and
/// `MAD_{μ+1} = β |Δr_μ - r̂_μ| + (1-β) MAD_μ`. The random component repeats
/// both recursions on `δ_μ = |Δr_μ - r̂_M|`.
pub fn estimate_exp_smoothing(log: &[f64], beta: f64, prior: &SmoothingPrior) -> Result<ErrorEstimate> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid(format!("smoothing parameter must lie in [0, 1], got {beta}")));
    }
    if log.len() < 2 {
        return Err(invalid(format!(
            "estimator needs at least 2 measurements, got {}",
            log.len()
        )));
    }
    let (forecast, mad) = smooth(log, beta, prior.systematic_sd_mm / MAD_TO_SD);
    let dev: Vec<f64> = log.iter().map(|r| (r - forecast).abs()).collect();
    let (dev_forecast, dev_mad) = smooth(&dev, beta, prior.random_sd_mm / MAD_TO_SD);
    Ok(ErrorEstimate {
        systematic_mean: forecast,
        systematic_std: MAD_TO_SD * mad,
        random_mean: dev_forecast,
        random_std: MAD_TO_SD * dev_mad,
    })
}

/// Runs the level and MAD recursions; returns `(r̂_M, MAD_M)`.
fn smooth(series: &[f64], beta: f64, mad_seed: f64) -> (f64, f64) {
    let mut level = series[0];
    let mut mad = mad_seed;
    for &obs in &series[1..] {
        mad = beta * (obs - level).abs() + (1.0 - beta) * mad;
        level = beta * obs + (1.0 - beta) * level;
    }
    (level, mad)
}

/// One step of the forecast recursion.
pub fn smoothing_step(forecast: f64, observation: f64, beta: f64) -> f64 {
    beta * observation + (1.0 - beta) * forecast
}
