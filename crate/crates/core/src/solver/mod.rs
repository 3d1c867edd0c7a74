//! Nominal and robust (CVaR) fluence optimization.

mod cvar;
mod linalg;
mod qp;
mod quadratic;
mod robust;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::objective::ObjectiveSpec;
use crate::phantom::{Interval, Phantom, RoiKind};
use crate::uncertainty::{DiscreteScenarioSet, SigmaScenarioSet};

pub use cvar::{cvar_discrete, cvar_with_threshold, nested_cvar};
pub use qp::{solve_nonneg_qp, QpSolution};
pub use quadratic::{QuadraticForm, ScenarioForms};
pub use robust::{solve_cvar_program, Diagnostics, RobustSolution};

/// Interior-point stopping rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Relative tolerance on the duality gap and the dual residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Accepted accuracy when the iteration stalls before reaching `tolerance`.
    pub acceptable_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 200,
            acceptable_tolerance: 1e-7,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(invalid("solver tolerance must lie in (0, 1)"));
        }
        if !(self.acceptable_tolerance >= self.tolerance && self.acceptable_tolerance < 1.0) {
            return Err(invalid("acceptable tolerance must lie in [tolerance, 1)"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("solver needs at least one iteration"));
        }
        Ok(())
    }
}

/// How a plan was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Nominal {
        ptv: Interval,
        margin_mm: f64,
    },
    Robust {
        alpha: f64,
        systematic: DiscreteScenarioSet,
        sigmas: SigmaScenarioSet,
        fractions: usize,
    },
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Provenance::Nominal { .. } => "nominal",
            Provenance::Robust { alpha, .. } if *alpha >= 1.0 => "probabilistic",
            Provenance::Robust { alpha, systematic, .. } if systematic.probs().iter().all(|&p| *alpha <= p) => {
                "worst-case"
            }
            Provenance::Robust { .. } => "robust-cvar",
        }
    }
}

/// A fluence profile and the problem it solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub fluence: Vec<f64>,
    pub objective: f64,
    pub provenance: Provenance,
    /// Fraction after which the plan was created (0 = before treatment).
    pub created_at_fraction: usize,
}

/// Solves the margin-based problem `min f(A x)` over `x >= 0`.
pub fn solve_nominal(phantom: &Phantom, spec: &ObjectiveSpec, settings: &SolverSettings) -> Result<(Plan, QpSolution)> {
    if spec.target() == Some(RoiKind::Ctv) {
        return Err(invalid("the nominal problem targets the PTV"));
    }
    let forms = ScenarioForms::new(std::sync::Arc::new(phantom.clone()), spec.clone());
    let sol = solve_nonneg_qp(&forms.static_form(0.0), settings)?;
    let ctv = phantom.ctv().interval;
    let ptv = phantom.ptv().interval;
    let plan = Plan {
        fluence: sol.x.iter().copied().collect(),
        objective: sol.objective,
        provenance: Provenance::Nominal {
            ptv,
            margin_mm: (ctv.lo - ptv.lo).max(ptv.hi - ctv.hi).max(0.0),
        },
        created_at_fraction: 0,
    };
    Ok((plan, sol))
}

/// The robust CVaR problem for one phantom and objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustProblem {
    pub systematic: DiscreteScenarioSet,
    pub sigmas: SigmaScenarioSet,
    pub fractions: usize,
    pub alpha: f64,
}

impl RobustProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.fractions == 0 {
            return Err(invalid("at least one fraction is required"));
        }
        Ok(())
    }

    /// Expected fraction objectives `F_su`, indexed `[s][u]`.
    pub fn scenario_forms(&self, forms: &ScenarioForms) -> Result<Vec<Vec<QuadraticForm>>> {
        self.systematic
            .shifts()
            .iter()
            .map(|&s| {
                self.sigmas
                    .sigmas()
                    .iter()
                    .map(|&u| forms.expected_form(s, u, self.fractions))
                    .collect()
            })
            .collect()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::Robust {
            alpha: self.alpha,
            systematic: self.systematic.clone(),
            sigmas: self.sigmas.clone(),
            fractions: self.fractions,
        }
    }
}

/// Solves the robust problem; `forms` must use a CTV-targeting objective.
pub fn solve_robust(
    forms: &ScenarioForms,
    problem: &RobustProblem,
    settings: &SolverSettings,
) -> Result<RobustSolution> {
    problem.validate()?;
    if forms.spec().target() == Some(RoiKind::Ptv) {
        return Err(invalid("the robust problem targets the CTV"));
    }
    let scen = problem.scenario_forms(forms)?;
    solve_cvar_program(
        &scen,
        problem.systematic.probs(),
        problem.sigmas.probs(),
        problem.alpha,
        settings,
    )
}

impl RobustSolution {
    pub fn into_plan(self, problem: &RobustProblem, created_at_fraction: usize) -> Plan {
        Plan {
            fluence: self.fluence.iter().copied().collect(),
            objective: self.objective,
            provenance: problem.provenance(),
            created_at_fraction,
        }
    }
}
