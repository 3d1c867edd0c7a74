//! Quadratic dose penalties, their expectation over fractionated random
//! errors, dose-volume metrics and plan-quality criteria.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::phantom::{Phantom, RoiKind};
use crate::uncertainty::{discretize_normal, DEFAULT_HALF_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerm {
    pub roi: RoiKind,
    pub weight: f64,
    pub prescribed_dose: f64,
}

/// Importance weights of the optimized structures (dimensionless).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub target: f64,
    pub left_oar: f64,
    pub right_oar: f64,
    pub external: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            target: 1.0,
            left_oar: 0.1,
            right_oar: 0.1,
            external: 0.02,
        }
    }
}

/// Weighted sum of per-structure quadratic penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    terms: Vec<ObjectiveTerm>,
}

impl ObjectiveSpec {
    pub fn new(terms: Vec<ObjectiveTerm>) -> Result<Self> {
        for (i, t) in terms.iter().enumerate() {
            if !(t.weight >= 0.0) || !t.weight.is_finite() {
                return Err(invalid(format!("weight of {} must be finite and nonnegative", t.roi)));
            }
            if !(t.prescribed_dose >= 0.0) || !t.prescribed_dose.is_finite() {
                return Err(invalid(format!("prescribed dose of {} must be nonnegative", t.roi)));
            }
            if terms[..i].iter().any(|o| o.roi == t.roi) {
                return Err(invalid(format!("{} appears twice in the objective", t.roi)));
            }
        }
        Ok(Self { terms })
    }

    fn with_target(target: RoiKind, w: &ObjectiveWeights, prescription: f64) -> Result<Self> {
        Self::new(vec![
            ObjectiveTerm {
                roi: target,
                weight: w.target,
                prescribed_dose: prescription,
            },
            ObjectiveTerm {
                roi: RoiKind::RightOar,
                weight: w.right_oar,
                prescribed_dose: 0.0,
            },
            ObjectiveTerm {
                roi: RoiKind::LeftOar,
                weight: w.left_oar,
                prescribed_dose: 0.0,
            },
            ObjectiveTerm {
                roi: RoiKind::External,
                weight: w.external,
                prescribed_dose: 0.0,
            },
        ])
    }

    /// Margin-based plan: the PTV is the high-dose target.
    pub fn nominal(w: &ObjectiveWeights, prescription: f64) -> Result<Self> {
        Self::with_target(RoiKind::Ptv, w, prescription)
    }

    /// Robust plan: uniform dose is sought in the CTV itself.
    pub fn robust(w: &ObjectiveWeights, prescription: f64) -> Result<Self> {
        Self::with_target(RoiKind::Ctv, w, prescription)
    }

    pub fn terms(&self) -> &[ObjectiveTerm] {
        &self.terms
    }

    pub fn target(&self) -> Option<RoiKind> {
        self.terms
            .iter()
            .filter(|t| t.prescribed_dose > 0.0)
            .max_by(|a, b| a.prescribed_dose.total_cmp(&b.prescribed_dose))
            .map(|t| t.roi)
    }

    pub fn max_prescription(&self) -> f64 {
        self.terms.iter().map(|t| t.prescribed_dose).fold(0.0, f64::max)
    }

    pub fn scale_weights(&self, factor: f64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| ObjectiveTerm {
                    weight: t.weight * factor,
                    ..*t
                })
                .collect(),
        }
    }

    /// Collapses all terms into one quadratic per voxel:
    /// `sum_r w_r Δ_{v,r} (d - d̂_r)^2 = ω_v d^2 - 2 h_v d + c_v`.
    pub fn voxel_penalty(&self, phantom: &Phantom) -> VoxelPenalty {
        let n = phantom.grid().len();
        let mut omega = vec![0.0; n];
        let mut linear = vec![0.0; n];
        let mut constant = 0.0;
        for t in &self.terms {
            for (v, &delta) in phantom.weights().get(t.roi).iter().enumerate() {
                let wd = t.weight * delta;
                omega[v] += wd;
                linear[v] += wd * t.prescribed_dose;
                constant += wd * t.prescribed_dose * t.prescribed_dose;
            }
        }
        VoxelPenalty {
            omega,
            linear,
            constant,
        }
    }
}

/// Per-voxel quadratic `ω_v d_v^2 - 2 h_v d_v` plus a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelPenalty {
    pub omega: Vec<f64>,
    pub linear: Vec<f64>,
    pub constant: f64,
}

impl VoxelPenalty {
    pub fn value(&self, dose: &[f64]) -> f64 {
        dose.iter()
            .zip(self.omega.iter().zip(&self.linear))
            .map(|(&d, (&w, &h))| w * d * d - 2.0 * h * d)
            .sum::<f64>()
            + self.constant
    }
}

/// `sum_v Δ_{v,r} (d_v - d̂)^2` for one structure.
pub fn penalty(dose: &[f64], weights: &[f64], prescribed: f64) -> f64 {
    dose.iter()
        .zip(weights)
        .filter(|(_, &w)| w != 0.0)
        .map(|(&d, &w)| w * (d - prescribed).powi(2))
        .sum()
}

pub fn total_objective(dose: &[f64], phantom: &Phantom, spec: &ObjectiveSpec) -> f64 {
    spec.terms()
        .iter()
        .map(|t| t.weight * penalty(dose, phantom.weights().get(t.roi), t.prescribed_dose))
        .sum()
}

/// Gradient of `total_objective(dose(x, shift))` with respect to fluence.
pub fn total_objective_gradient(fluence: &[f64], shift: f64, phantom: &Phantom, spec: &ObjectiveSpec) -> Vec<f64> {
    let dose = phantom.dose(fluence, shift);
    let mut coef = vec![0.0; dose.len()];
    for t in spec.terms() {
        for (v, &delta) in phantom.weights().get(t.roi).iter().enumerate() {
            coef[v] += 2.0 * t.weight * delta * (dose[v] - t.prescribed_dose);
        }
    }
    apply_transpose(phantom, shift, &coef)
}

fn apply_transpose(phantom: &Phantom, shift: f64, coef: &[f64]) -> Vec<f64> {
    let op = phantom.operator();
    let pos = phantom.grid().positions();
    op.beamlets()
        .iter()
        .map(|&c| {
            coef.iter()
                .zip(pos)
                .filter(|(&k, _)| k != 0.0)
                .map(|(&k, &p)| k * op.kernel(p - shift - c))
                .sum()
        })
        .collect()
}

/// Random-error scenarios for one fraction: `N(0, sigma^2)` on the grid.
pub fn random_error_scenarios(phantom: &Phantom, sigma: f64) -> Result<crate::uncertainty::DiscreteScenarioSet> {
    discretize_normal(0.0, sigma, phantom.grid().spacing(), DEFAULT_HALF_WIDTH)
}

/// Expected objective of the cumulative dose `(1/N) sum_i dose(x, s + t_i)`
/// over i.i.d. per-fraction shifts `t_i ~ N(0, sigma_u^2)` (discretized).
///
/// Evaluated per voxel as `(mean_v - d̂)^2 + Var_v / N`.
pub fn expected_fraction_objective(
    fluence: &[f64],
    systematic: f64,
    sigma_u: f64,
    fractions: usize,
    phantom: &Phantom,
    spec: &ObjectiveSpec,
) -> Result<f64> {
    let stats = FractionDoseStats::new(fluence, systematic, sigma_u, phantom)?;
    let n = fractions.max(1) as f64;
    let mut total = 0.0;
    for t in spec.terms() {
        let w = phantom.weights().get(t.roi);
        let f: f64 = (0..stats.mean.len())
            .filter(|&v| w[v] != 0.0)
            .map(|v| w[v] * ((stats.mean[v] - t.prescribed_dose).powi(2) + stats.var[v] / n))
            .sum();
        total += t.weight * f;
    }
    Ok(total)
}

/// Gradient of [`expected_fraction_objective`] with respect to fluence.
pub fn expected_fraction_gradient(
    fluence: &[f64],
    systematic: f64,
    sigma_u: f64,
    fractions: usize,
    phantom: &Phantom,
    spec: &ObjectiveSpec,
) -> Result<Vec<f64>> {
    let stats = FractionDoseStats::new(fluence, systematic, sigma_u, phantom)?;
    let n = fractions.max(1) as f64;
    let mut grad = vec![0.0; fluence.len()];
    for ((t, q), dose) in stats.scenarios.iter().zip(&stats.doses) {
        let mut coef = vec![0.0; dose.len()];
        for term in spec.terms() {
            for (v, &delta) in phantom.weights().get(term.roi).iter().enumerate() {
                if delta != 0.0 {
                    coef[v] += 2.0
                        * term.weight
                        * delta
                        * ((stats.mean[v] - term.prescribed_dose) + (dose[v] - stats.mean[v]) / n);
                }
            }
        }
        for (g, c) in grad.iter_mut().zip(apply_transpose(phantom, systematic + t, &coef)) {
            *g += q * c;
        }
    }
    Ok(grad)
}

struct FractionDoseStats {
    scenarios: Vec<(f64, f64)>,
    doses: Vec<Vec<f64>>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl FractionDoseStats {
    fn new(fluence: &[f64], systematic: f64, sigma_u: f64, phantom: &Phantom) -> Result<Self> {
        if !(sigma_u >= 0.0) {
            return Err(invalid(format!("sigma_u must be nonnegative, got {sigma_u}")));
        }
        let set = random_error_scenarios(phantom, sigma_u)?;
        let scenarios: Vec<(f64, f64)> = set.iter().collect();
        let doses: Vec<Vec<f64>> = scenarios
            .iter()
            .map(|(t, _)| phantom.dose(fluence, systematic + t))
            .collect();
        let nv = phantom.grid().len();
        let mut mean = vec![0.0; nv];
        for ((_, q), d) in scenarios.iter().zip(&doses) {
            for v in 0..nv {
                mean[v] += q * d[v];
            }
        }
        let mut var = vec![0.0; nv];
        for ((_, q), d) in scenarios.iter().zip(&doses) {
            for v in 0..nv {
                var[v] += q * (d[v] - mean[v]).powi(2);
            }
        }
        Ok(Self {
            scenarios,
            doses,
            mean,
            var,
        })
    }
}

/// `Dxx`: the largest dose level received by at least `volume_pct` percent of
/// the structure. Lower discrete quantile, no interpolation.
pub fn dxx(dose: &[f64], weights: &[f64], volume_pct: f64) -> Result<f64> {
    if !(volume_pct > 0.0 && volume_pct <= 100.0) {
        return Err(invalid(format!(
            "volume percentage must lie in (0, 100], got {volume_pct}"
        )));
    }
    let mut voxels: Vec<(f64, f64)> = dose
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&d, &w)| (d, w))
        .collect();
    if voxels.is_empty() {
        return Err(invalid("Dxx of an empty structure"));
    }
    voxels.sort_by(|a, b| b.0.total_cmp(&a.0));
    let needed = volume_pct / 100.0 - 1e-12;
    let mut acc = 0.0;
    for &(d, w) in &voxels {
        acc += w;
        if acc >= needed {
            return Ok(d);
        }
    }
    Ok(voxels[voxels.len() - 1].0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtLeast,
    AtMost,
}

/// Dose-volume point: `D{volume_pct}` of `roi` compared with
/// `dose_pct` percent of the prescription.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityCriterion {
    pub roi: RoiKind,
    pub volume_pct: f64,
    pub dose_pct: f64,
    pub direction: Direction,
}

impl QualityCriterion {
    pub fn label(&self) -> String {
        format!("{}_d{}", self.roi, self.volume_pct)
    }

    pub fn is_target(&self) -> bool {
        self.direction == Direction::AtLeast
    }
}

/// The three dose-volume points: CTV D99 >= 90%, left OAR D20 and right
/// OAR D30 below the given thresholds (percent of prescription).
pub fn standard_criteria(left_oar_pct: f64, right_oar_pct: f64) -> Vec<QualityCriterion> {
    vec![
        QualityCriterion {
            roi: RoiKind::Ctv,
            volume_pct: 99.0,
            dose_pct: 90.0,
            direction: Direction::AtLeast,
        },
        QualityCriterion {
            roi: RoiKind::RightOar,
            volume_pct: 30.0,
            dose_pct: right_oar_pct,
            direction: Direction::AtMost,
        },
        QualityCriterion {
            roi: RoiKind::LeftOar,
            volume_pct: 20.0,
            dose_pct: left_oar_pct,
            direction: Direction::AtMost,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionOutcome {
    pub criterion: QualityCriterion,
    /// Dxx in dose units.
    pub value: f64,
    pub passed: bool,
}

pub fn evaluate_criteria(
    dose: &[f64],
    phantom: &Phantom,
    criteria: &[QualityCriterion],
    prescription: f64,
) -> Result<Vec<CriterionOutcome>> {
    criteria
        .iter()
        .map(|c| {
            let value = dxx(dose, phantom.weights().get(c.roi), c.volume_pct)?;
            let limit = c.dose_pct / 100.0 * prescription;
            let passed = match c.direction {
                Direction::AtLeast => value >= limit,
                Direction::AtMost => value <= limit,
            };
            Ok(CriterionOutcome {
                criterion: *c,
                value,
                passed,
            })
        })
        .collect()
}

pub fn violations(outcomes: &[CriterionOutcome]) -> Vec<QualityCriterion> {
    outcomes.iter().filter(|o| !o.passed).map(|o| o.criterion).collect()
}
