//! Adaptive replanning strategies.
//!
//! * Strategy I re-estimates the systematic and random error distributions
//!   from the measured shifts and re-solves the robust problem.
//! * Strategy II moves the CVaR level α by a fixed step.
//! * Strategy III recomputes the CTV-PTV margin and re-solves the nominal
//!   problem for the new PTV.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::objective::{ObjectiveSpec, ObjectiveWeights, QualityCriterion};
use crate::phantom::{margin, ptv_from_margin, Interval, Phantom, RoiKind};
use crate::solver::{solve_nominal, solve_robust, Plan, RobustProblem, ScenarioForms, SolverSettings};
use crate::uncertainty::{
    discretize_normal, estimate_arithmetic, estimate_exp_smoothing, ErrorEstimate, SigmaScenarioSet, SmoothingPrior,
    DEFAULT_HALF_WIDTH,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Scenario-distribution update.
    #[serde(rename = "I")]
    ScenarioUpdate,
    /// CVaR level update.
    #[serde(rename = "II")]
    AlphaUpdate,
    /// Margin update.
    #[serde(rename = "III")]
    MarginUpdate,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::ScenarioUpdate => "I",
            StrategyKind::AlphaUpdate => "II",
            StrategyKind::MarginUpdate => "III",
        }
    }

    /// Whether the initial plan is robust (I, II) or margin based (III).
    pub fn uses_robust_plan(self) -> bool {
        !matches!(self, StrategyKind::MarginUpdate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Estimator {
    Arithmetic,
    ExpSmoothing { beta: f64 },
}

impl Estimator {
    pub fn label(&self) -> String {
        match self {
            Estimator::Arithmetic => "arithmetic".to_string(),
            Estimator::ExpSmoothing { beta } => format!("exp_smoothing(beta={beta})"),
        }
    }

    pub fn estimate(&self, log: &[f64], prior: &SmoothingPrior) -> Result<ErrorEstimate> {
        match *self {
            Estimator::Arithmetic => estimate_arithmetic(log),
            Estimator::ExpSmoothing { beta } => estimate_exp_smoothing(log, beta, prior),
        }
    }
}

/// Shape of the adapted random-error σ scenario set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpread {
    /// One scenario at the estimated random standard deviation.
    Single,
    /// `σ (1 - rel), σ, σ (1 + rel)` with probabilities 1/4, 1/2, 1/4.
    ThreePoint { rel: f64 },
    /// One scenario at the estimated random-error mean `Δj`, the centre of
    /// the updated random-error distribution `N(Δj, σ_j)`.
    RandomMean,
}

impl SigmaSpread {
    pub fn build(&self, est: &ErrorEstimate) -> Result<SigmaScenarioSet> {
        let sigma = est.random_std;
        match *self {
            SigmaSpread::RandomMean => SigmaScenarioSet::single(est.random_mean.max(0.0)),
            SigmaSpread::Single => SigmaScenarioSet::single(sigma),
            SigmaSpread::ThreePoint { rel } => {
                if !(0.0..1.0).contains(&rel) {
                    return Err(invalid("three-point sigma spread needs 0 <= rel < 1"));
                }
                if sigma == 0.0 || rel == 0.0 {
                    return SigmaScenarioSet::single(sigma);
                }
                SigmaScenarioSet::new(
                    vec![sigma * (1.0 - rel), sigma, sigma * (1.0 + rel)],
                    vec![0.25, 0.5, 0.25],
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub estimator: Estimator,
    /// CVaR level of the initial robust plan (strategies I and II).
    #[serde(default = "default_alpha")]
    pub initial_alpha: f64,
    #[serde(default = "default_alpha_step")]
    pub alpha_step: f64,
    #[serde(default = "default_alpha_min")]
    pub alpha_min: f64,
    #[serde(default = "default_sigma_spread")]
    pub sigma_spread: SigmaSpread,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_alpha_step() -> f64 {
    0.09
}

fn default_alpha_min() -> f64 {
    0.01
}

fn default_sigma_spread() -> SigmaSpread {
    SigmaSpread::Single
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, estimator: Estimator) -> Self {
        Self {
            kind,
            estimator,
            initial_alpha: default_alpha(),
            alpha_step: default_alpha_step(),
            alpha_min: default_alpha_min(),
            sigma_spread: default_sigma_spread(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Estimator::ExpSmoothing { beta } = self.estimator {
            if !(0.0..=1.0).contains(&beta) {
                return Err(invalid(format!("smoothing parameter must lie in [0, 1], got {beta}")));
            }
        }
        if !(self.alpha_step > 0.0) {
            return Err(invalid("alpha step must be positive"));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= 1.0) {
            return Err(invalid("alpha_min must lie in (0, 1]"));
        }
        if !(self.initial_alpha >= self.alpha_min && self.initial_alpha <= 1.0) {
            return Err(invalid("initial alpha must lie in [alpha_min, 1]"));
        }
        if let SigmaSpread::ThreePoint { rel } = self.sigma_spread {
            if !(0.0..1.0).contains(&rel) {
                return Err(invalid("three-point sigma spread needs 0 <= rel < 1"));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::AlphaUpdate => format!("II alpha0={}", self.initial_alpha),
            kind => format!("{} {}", kind.label(), self.estimator.label()),
        }
    }
}

/// Everything needed to (re)plan for one phantom.
#[derive(Debug)]
pub struct PlanningContext {
    pub phantom: Arc<Phantom>,
    /// CTV-targeting robust objective with cached scenario forms.
    pub robust_forms: ScenarioForms,
    pub weights: ObjectiveWeights,
    pub prescription: f64,
    pub fractions: usize,
    pub settings: SolverSettings,
    pub prior: SmoothingPrior,
}

impl PlanningContext {
    pub fn new(
        phantom: Arc<Phantom>,
        weights: ObjectiveWeights,
        prescription: f64,
        fractions: usize,
        settings: SolverSettings,
        prior: SmoothingPrior,
    ) -> Result<Self> {
        if fractions == 0 {
            return Err(invalid("at least one fraction is required"));
        }
        let spec = ObjectiveSpec::robust(&weights, prescription)?;
        Ok(Self {
            robust_forms: ScenarioForms::new(Arc::clone(&phantom), spec),
            phantom,
            weights,
            prescription,
            fractions,
            settings,
            prior,
        })
    }

    pub fn nominal_spec(&self) -> Result<ObjectiveSpec> {
        ObjectiveSpec::nominal(&self.weights, self.prescription)
    }

    pub fn solve_robust(&self, problem: &RobustProblem, fraction: usize) -> Result<Plan> {
        Ok(solve_robust(&self.robust_forms, problem, &self.settings)?.into_plan(problem, fraction))
    }

    /// Nominal plan for the PTV `ctv ± margin`.
    pub fn solve_nominal_margin(&self, margin_mm: f64, fraction: usize) -> Result<(Plan, Interval)> {
        let ptv = ptv_from_margin(self.phantom.ctv(), margin_mm, self.phantom.grid())?;
        let phantom = self.phantom.with_ptv(ptv.interval);
        let (mut plan, _) = solve_nominal(&phantom, &self.nominal_spec()?, &self.settings)?;
        plan.created_at_fraction = fraction;
        Ok((plan, ptv.interval))
    }
}

/// Strategy-specific planning state carried through a treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyState {
    Robust { problem: RobustProblem },
    Margin { margin_mm: f64, ptv: Interval },
}

impl StrategyState {
    pub fn describe(&self) -> String {
        match self {
            StrategyState::Robust { problem } => {
                let sys = &problem.systematic;
                let mean = sys.mean();
                let var = sys.iter().map(|(s, p)| p * (s - mean).powi(2)).sum::<f64>();
                let sig: Vec<String> = problem.sigmas.sigmas().iter().map(|s| format!("{s:.3}")).collect();
                format!(
                    "alpha={:.2} sys_mean_mm={mean:.3} sys_sd_mm={:.3} sigma_mm={}",
                    problem.alpha,
                    var.sqrt(),
                    sig.join("/")
                )
            }
            StrategyState::Margin { margin_mm, .. } => format!("margin_mm={margin_mm:.3}"),
        }
    }
}

/// Outcome of one scheduled evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationDecision {
    pub triggered: bool,
    pub violations: Vec<QualityCriterion>,
    pub plan: Option<Plan>,
    pub state: StrategyState,
}

impl AdaptationDecision {
    pub fn unchanged(state: StrategyState) -> Self {
        Self {
            triggered: false,
            violations: Vec::new(),
            plan: None,
            state,
        }
    }
}

/// Strategy I: rebuild `𝒮` from the estimated systematic distribution and
/// `𝒰` around the estimated random spread, then re-solve.
pub fn strategy1_adapt(
    log: &[f64],
    cfg: &StrategyConfig,
    ctx: &PlanningContext,
    current: &RobustProblem,
    violations: &[QualityCriterion],
    fraction: usize,
) -> Result<AdaptationDecision> {
    if violations.is_empty() {
        return Ok(AdaptationDecision::unchanged(StrategyState::Robust {
            problem: current.clone(),
        }));
    }
    let est = cfg.estimator.estimate(log, &ctx.prior)?;
    let spacing = ctx.phantom.grid().spacing();
    let problem = RobustProblem {
        systematic: discretize_normal(est.systematic_mean, est.systematic_std, spacing, DEFAULT_HALF_WIDTH)?,
        sigmas: cfg.sigma_spread.build(&est)?,
        fractions: current.fractions,
        alpha: current.alpha,
    };
    let plan = ctx.solve_robust(&problem, fraction)?;
    Ok(AdaptationDecision {
        triggered: true,
        violations: violations.to_vec(),
        plan: Some(plan),
        state: StrategyState::Robust { problem },
    })
}

/// Strategy II step rule: a violated target criterion lowers α, an OAR-only
/// violation raises it; the result is clamped to `[alpha_min, 1]`.
pub fn next_alpha(violations: &[QualityCriterion], alpha: f64, cfg: &StrategyConfig) -> f64 {
    if violations.is_empty() {
        return alpha;
    }
    let step = if violations.iter().any(|v| v.roi == RoiKind::Ctv || v.is_target()) {
        -cfg.alpha_step
    } else {
        cfg.alpha_step
    };
    // Round away accumulated binary noise of repeated ±step updates.
    let next = ((alpha + step) * 1e12).round() / 1e12;
    next.clamp(cfg.alpha_min, 1.0)
}

/// Strategy II: re-solve the current robust problem at the updated α.
pub fn strategy2_adapt(
    violations: &[QualityCriterion],
    cfg: &StrategyConfig,
    ctx: &PlanningContext,
    current: &RobustProblem,
    fraction: usize,
) -> Result<AdaptationDecision> {
    if !(current.alpha > 0.0 && current.alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {}", current.alpha)));
    }
    if violations.is_empty() {
        return Ok(AdaptationDecision::unchanged(StrategyState::Robust {
            problem: current.clone(),
        }));
    }
    let problem = RobustProblem {
        alpha: next_alpha(violations, current.alpha, cfg),
        ..current.clone()
    };
    let plan = ctx.solve_robust(&problem, fraction)?;
    Ok(AdaptationDecision {
        triggered: true,
        violations: violations.to_vec(),
        plan: Some(plan),
        state: StrategyState::Robust { problem },
    })
}

/// Adapted margin `m' = margin(Σ', σ')` from the estimated standard deviations.
pub fn adapted_margin(log: &[f64], cfg: &StrategyConfig, prior: &SmoothingPrior) -> Result<f64> {
    let est = cfg.estimator.estimate(log, prior)?;
    margin(est.systematic_std, est.random_std)
}

/// Strategy III: recompute the margin, rebuild the PTV around the CTV and
/// re-solve the nominal problem.
pub fn strategy3_adapt(
    log: &[f64],
    cfg: &StrategyConfig,
    ctx: &PlanningContext,
    violations: &[QualityCriterion],
    current: &StrategyState,
    fraction: usize,
) -> Result<AdaptationDecision> {
    if violations.is_empty() {
        return Ok(AdaptationDecision::unchanged(current.clone()));
    }
    let m = adapted_margin(log, cfg, &ctx.prior)?;
    let (plan, ptv) = ctx.solve_nominal_margin(m, fraction)?;
    Ok(AdaptationDecision {
        triggered: true,
        violations: violations.to_vec(),
        plan: Some(plan),
        state: StrategyState::Margin { margin_mm: m, ptv },
    })
}

/// Dispatches to the configured strategy.
pub fn adapt(
    log: &[f64],
    cfg: &StrategyConfig,
    ctx: &PlanningContext,
    state: &StrategyState,
    violations: &[QualityCriterion],
    fraction: usize,
) -> Result<AdaptationDecision> {
    match (cfg.kind, state) {
        (StrategyKind::ScenarioUpdate, StrategyState::Robust { problem }) => {
            strategy1_adapt(log, cfg, ctx, problem, violations, fraction)
        }
        (StrategyKind::AlphaUpdate, StrategyState::Robust { problem }) => {
            strategy2_adapt(violations, cfg, ctx, problem, fraction)
        }
        (StrategyKind::MarginUpdate, StrategyState::Margin { .. }) => {
            strategy3_adapt(log, cfg, ctx, violations, state, fraction)
        }
        _ => Err(invalid("strategy does not match the plan it adapts")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::standard_criteria;
    use crate::phantom::PhantomConfig;
    use crate::uncertainty::DiscreteScenarioSet;
    use approx::assert_relative_eq;

    fn ctx() -> PlanningContext {
        let ph = Arc::new(Phantom::build(&PhantomConfig::default()).unwrap());
        PlanningContext::new(
            ph,
            ObjectiveWeights::default(),
            70.0,
            30,
            SolverSettings::default(),
            SmoothingPrior {
                systematic_sd_mm: 2.5,
                random_sd_mm: 5.0,
            },
        )
        .unwrap()
    }

    fn crit() -> Vec<QualityCriterion> {
        standard_criteria(45.0, 35.0)
    }

    fn alpha_cfg() -> StrategyConfig {
        StrategyConfig::new(StrategyKind::AlphaUpdate, Estimator::Arithmetic)
    }

    #[test]
    fn alpha_rule() {
        let c = crit();
        let cfg = alpha_cfg();
        let ctv = vec![c[0]];
        let oar = vec![c[1]];
        assert_relative_eq!(next_alpha(&ctv, 0.1, &cfg), 0.01, epsilon = 1e-15);
        assert_relative_eq!(next_alpha(&oar, 0.9, &cfg), 0.99, epsilon = 1e-15);
        assert_relative_eq!(next_alpha(&oar, 0.95, &cfg), 1.0, epsilon = 1e-15);
        assert_eq!(next_alpha(&[], 0.4, &cfg), 0.4);
        // Coverage wins over OAR sparing.
        assert_relative_eq!(next_alpha(&c, 0.4, &cfg), 0.31, epsilon = 1e-15);
    }

    #[test]
    fn alpha_walk_stays_in_bounds_and_moves_by_step() {
        let c = crit();
        let cfg = alpha_cfg();
        let mut a = 0.4;
        for i in 0..40 {
            let v = if (i / 7) % 2 == 0 { vec![c[0]] } else { vec![c[2]] };
            let b = next_alpha(&v, a, &cfg);
            assert!((cfg.alpha_min..=1.0).contains(&b));
            let d = (b - a).abs();
            assert!((d - 0.09).abs() < 1e-12 || b == cfg.alpha_min || b == 1.0, "{a} -> {b}");
            a = b;
        }
    }

    #[test]
    fn zero_log_margin_is_zero_and_ptv_is_ctv() {
        let ctx = ctx();
        let cfg = StrategyConfig::new(StrategyKind::MarginUpdate, Estimator::Arithmetic);
        let log = [0.0; 6];
        assert_eq!(adapted_margin(&log, &cfg, &ctx.prior).unwrap(), 0.0);
        let state = StrategyState::Margin {
            margin_mm: 8.4,
            ptv: ctx.phantom.ptv().interval,
        };
        let d = strategy3_adapt(&log, &cfg, &ctx, &crit()[..1], &state, 5).unwrap();
        match d.state {
            StrategyState::Margin { margin_mm, ptv } => {
                assert_eq!(margin_mm, 0.0);
                assert_eq!(ptv, ctx.phantom.ctv().interval);
            }
            _ => panic!("wrong state"),
        }
        assert_eq!(d.plan.unwrap().created_at_fraction, 5);
    }

    #[test]
    fn margin_ptv_contains_ctv() {
        let ctx = ctx();
        let cfg = StrategyConfig::new(StrategyKind::MarginUpdate, Estimator::ExpSmoothing { beta: 0.9 });
        let log = [0.0, 3.0, -7.0, 12.0, 4.0];
        let m = adapted_margin(&log, &cfg, &ctx.prior).unwrap();
        assert!(m >= 0.0);
        let (_, ptv) = ctx.solve_nominal_margin(m, 4).unwrap();
        assert!(ptv.contains(&ctx.phantom.ctv().interval));
    }

    #[test]
    fn strategy1_uses_estimated_distribution() {
        let ctx = ctx();
        let cfg = StrategyConfig::new(StrategyKind::ScenarioUpdate, Estimator::Arithmetic);
        let current = RobustProblem {
            systematic: discretize_normal(0.0, 2.5, 1.0, 3.0).unwrap(),
            sigmas: SigmaScenarioSet::single(5.0).unwrap(),
            fractions: 30,
            alpha: 0.1,
        };
        let d = strategy1_adapt(&[0.0, 2.0, 4.0], &cfg, &ctx, &current, &crit()[..1], 2).unwrap();
        let StrategyState::Robust { problem } = d.state else {
            panic!("wrong state")
        };
        let expected = discretize_normal(2.0, (8.0f64 / 3.0).sqrt(), 1.0, 3.0).unwrap();
        assert_eq!(problem.systematic, expected);
        assert_eq!(problem.alpha, 0.1);
        assert!(d.triggered);
        let plan = d.plan.unwrap();
        assert_eq!(plan.fluence.len(), 101);
        assert!(plan.fluence.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn zero_log_gives_degenerate_scenarios() {
        let ctx = ctx();
        let cfg = StrategyConfig::new(StrategyKind::ScenarioUpdate, Estimator::ExpSmoothing { beta: 1.0 });
        let current = RobustProblem {
            systematic: DiscreteScenarioSet::point(0.0),
            sigmas: SigmaScenarioSet::single(0.0).unwrap(),
            fractions: 30,
            alpha: 0.1,
        };
        let d = strategy1_adapt(&[0.0; 4], &cfg, &ctx, &current, &crit()[..1], 3).unwrap();
        let StrategyState::Robust { problem } = d.state else {
            panic!("wrong state")
        };
        assert_eq!(problem.systematic, DiscreteScenarioSet::point(0.0));
        assert_eq!(problem.sigmas.sigmas(), &[0.0]);
        // Same problem as the degenerate initial one, so the same plan.
        let initial = ctx.solve_robust(&current, 3).unwrap();
        assert_eq!(d.plan.unwrap().fluence, initial.fluence);
    }

    #[test]
    fn no_violation_keeps_state() {
        let ctx = ctx();
        let cfg = StrategyConfig::new(StrategyKind::ScenarioUpdate, Estimator::Arithmetic);
        let current = RobustProblem {
            systematic: DiscreteScenarioSet::point(0.0),
            sigmas: SigmaScenarioSet::single(3.0).unwrap(),
            fractions: 30,
            alpha: 0.4,
        };
        let state = StrategyState::Robust {
            problem: current.clone(),
        };
        for cfg in [cfg.clone(), alpha_cfg()] {
            let d = adapt(&[0.0, 1.0], &cfg, &ctx, &state, &[], 1).unwrap();
            assert!(!d.triggered && d.plan.is_none());
            assert_eq!(d.state, state);
        }
    }

    #[test]
    fn three_point_spread() {
        let est = |random_mean, random_std| ErrorEstimate {
            systematic_mean: 0.0,
            systematic_std: 1.0,
            random_mean,
            random_std,
        };
        let s = SigmaSpread::ThreePoint { rel: 0.2 }.build(&est(1.0, 5.0)).unwrap();
        assert_eq!(s.sigmas(), &[4.0, 5.0, 6.0]);
        assert_eq!(
            SigmaSpread::ThreePoint { rel: 0.2 }
                .build(&est(1.0, 0.0))
                .unwrap()
                .len(),
            1
        );
        assert_eq!(SigmaSpread::RandomMean.build(&est(3.5, 5.0)).unwrap().sigmas(), &[3.5]);
        assert_eq!(SigmaSpread::Single.build(&est(3.5, 5.0)).unwrap().sigmas(), &[5.0]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = StrategyConfig::new(StrategyKind::ScenarioUpdate, Estimator::ExpSmoothing { beta: 1.5 });
        assert!(cfg.validate().is_err());
        cfg.estimator = Estimator::ExpSmoothing { beta: 0.4 };
        assert!(cfg.validate().is_ok());
        cfg.alpha_step = 0.0;
        assert!(cfg.validate().is_err());
    }
}
