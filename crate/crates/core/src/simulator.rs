//! Fractionated treatment simulation and population statistics.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objective::{dxx, evaluate_criteria, violations, CriterionOutcome, Direction, QualityCriterion};
use crate::phantom::margin;
use crate::solver::{Plan, RobustProblem};
use crate::strategies::{adapt, PlanningContext, StrategyConfig, StrategyKind, StrategyState};
use crate::uncertainty::{
    discretize_normal, sample_patient, PatientErrors, PopulationKind, PopulationSpec, SigmaScenarioSet, TrajectoryLog,
    DEFAULT_HALF_WIDTH,
};

/// Evaluation fractions of a treatment. Empty means non-adaptive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub name: String,
    pub fractions: Vec<usize>,
}

/// Built-in weekly schedules (five fractions per week).
pub const BUILTIN_SCHEDULES: [(&str, &[usize]); 9] = [
    ("W1Eval1", &[5]),
    ("W2Eval1", &[10]),
    ("W3Eval1", &[15]),
    ("W4Eval1", &[20]),
    ("W5Eval1", &[25]),
    ("W1Eval3", &[5, 15, 20]),
    ("W2Eval3", &[10, 15, 20]),
    ("W1Eval4", &[5, 15, 20, 25]),
    ("W2Eval4", &[10, 15, 20, 25]),
];

pub const NON_ADAPTIVE: &str = "NonAdaptive";
pub const GOLD: &str = "Gold";

impl Schedule {
    pub fn non_adaptive() -> Self {
        Self {
            name: NON_ADAPTIVE.to_string(),
            fractions: Vec::new(),
        }
    }

    /// Looks up a built-in schedule; `Gold` evaluates after every fraction
    /// `1..N-1`.
    pub fn builtin(name: &str, total_fractions: usize) -> Result<Self> {
        if name == NON_ADAPTIVE {
            return Ok(Self::non_adaptive());
        }
        if name == GOLD {
            return Self::custom(GOLD, (1..total_fractions).collect(), total_fractions);
        }
        let (_, fr) = BUILTIN_SCHEDULES
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| invalid(format!("unknown schedule '{name}'")))?;
        Self::custom(name, fr.to_vec(), total_fractions)
    }

    pub fn custom(name: &str, fractions: Vec<usize>, total_fractions: usize) -> Result<Self> {
        if fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!("schedule '{name}' must be strictly increasing")));
        }
        if let Some(&f) = fractions.iter().find(|&&f| f == 0 || f >= total_fractions) {
            return Err(invalid(format!(
                "schedule '{name}' evaluates at fraction {f}, outside 1..{}",
                total_fractions.saturating_sub(1)
            )));
        }
        Ok(Self {
            name: name.to_string(),
            fractions,
        })
    }

    pub fn is_adaptive(&self) -> bool {
        !self.fractions.is_empty()
    }
}

/// Dose the quality criteria are checked against at an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    /// Delivered dose scaled by `N / n`.
    #[default]
    Scaled,
    /// Delivered dose plus the current plan's unshifted dose for the
    /// remaining fractions.
    Projected,
}

/// Measurements available to an adaptation after fraction `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementWindow {
    /// `Δr_0 ..= Δr_n`.
    #[default]
    Inclusive,
    /// `Δr_0 ..= Δr_{n-1}`.
    Exclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSettings {
    pub fractions: usize,
    pub prescription: f64,
    pub criteria: Vec<QualityCriterion>,
    pub evaluation: EvaluationMode,
    pub measurements: MeasurementWindow,
}

impl SimulationSettings {
    pub fn validate(&self) -> Result<()> {
        if self.fractions == 0 {
            return Err(invalid("at least one fraction is required"));
        }
        if !(self.prescription > 0.0) {
            return Err(invalid("prescription must be positive"));
        }
        if self.criteria.is_empty() {
            return Err(invalid("at least one quality criterion is required"));
        }
        Ok(())
    }
}

/// A-priori error statistics the initial plans are built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanningAssumptions {
    pub systematic_sd_mm: f64,
    /// Random-error σ scenarios of the robust plan.
    pub random_sd_mm: Vec<f64>,
    pub random_probs: Vec<f64>,
    /// Margin of the initial nominal plan; the margin recipe at
    /// `(systematic_sd_mm, Σ q σ)` when absent.
    pub margin_mm: Option<f64>,
}

impl PlanningAssumptions {
    pub fn sigma_set(&self) -> Result<SigmaScenarioSet> {
        SigmaScenarioSet::new(self.random_sd_mm.clone(), self.random_probs.clone())
    }

    pub fn initial_margin(&self) -> Result<f64> {
        match self.margin_mm {
            Some(m) if m >= 0.0 => Ok(m),
            Some(m) => Err(invalid(format!("margin must be nonnegative, got {m}"))),
            None => {
                let set = self.sigma_set()?;
                let sigma = set.sigmas().iter().zip(set.probs()).map(|(s, p)| s * p).sum();
                margin(self.systematic_sd_mm, sigma)
            }
        }
    }

    pub fn robust_problem(&self, ctx: &PlanningContext, alpha: f64) -> Result<RobustProblem> {
        let problem = RobustProblem {
            systematic: discretize_normal(
                0.0,
                self.systematic_sd_mm,
                ctx.phantom.grid().spacing(),
                DEFAULT_HALF_WIDTH,
            )?,
            sigmas: self.sigma_set()?,
            fractions: ctx.fractions,
            alpha,
        };
        problem.validate()?;
        Ok(problem)
    }
}

/// How a population is treated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Treatment {
    /// Margin-based plan, never adapted.
    Nominal,
    /// Robust plan at the given α, never adapted.
    Robust {
        alpha: f64,
    },
    Adaptive(StrategyConfig),
}

impl Treatment {
    pub fn label(&self) -> String {
        match self {
            Treatment::Nominal => "nominal".to_string(),
            Treatment::Robust { alpha } => format!("robust alpha={alpha}"),
            Treatment::Adaptive(cfg) => format!("strategy {}", cfg.label()),
        }
    }

    pub fn strategy(&self) -> Option<&StrategyConfig> {
        match self {
            Treatment::Adaptive(cfg) => Some(cfg),
            _ => None,
        }
    }
}

/// Initial plan and strategy state of a treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialPlan {
    pub plan: Plan,
    pub state: StrategyState,
}

pub fn initial_plan(
    treatment: &Treatment,
    ctx: &PlanningContext,
    assumptions: &PlanningAssumptions,
) -> Result<InitialPlan> {
    let robust = |alpha: f64| -> Result<InitialPlan> {
        let problem = assumptions.robust_problem(ctx, alpha)?;
        let plan = ctx.solve_robust(&problem, 0)?;
        Ok(InitialPlan {
            plan,
            state: StrategyState::Robust { problem },
        })
    };
    let nominal = || -> Result<InitialPlan> {
        let m = assumptions.initial_margin()?;
        let (plan, ptv) = ctx.solve_nominal_margin(m, 0)?;
        Ok(InitialPlan {
            plan,
            state: StrategyState::Margin { margin_mm: m, ptv },
        })
    };
    match treatment {
        Treatment::Nominal => nominal(),
        Treatment::Robust { alpha } => robust(*alpha),
        Treatment::Adaptive(cfg) => {
            cfg.validate()?;
            if cfg.kind.uses_robust_plan() {
                robust(cfg.initial_alpha)
            } else {
                nominal()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub fraction: usize,
    pub outcomes: Vec<CriterionOutcome>,
    /// A criterion was violated, so the patient is an adaptation candidate.
    pub candidate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Adapted,
    /// Adaptation failed; the current plan stays in use.
    Failed,
    /// Too few measurements to estimate from.
    Skipped,
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Adapted => "adapted",
            EventKind::Failed => "failed",
            EventKind::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationEvent {
    pub fraction: usize,
    pub kind: EventKind,
    pub violations: Vec<QualityCriterion>,
    /// Strategy state after the event.
    pub state: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientResult {
    pub index: usize,
    pub errors: PatientErrors,
    pub trajectory: TrajectoryLog,
    pub cumulative_dose: Vec<f64>,
    pub outcomes: Vec<CriterionOutcome>,
    pub evaluations: Vec<EvaluationRecord>,
    pub events: Vec<AdaptationEvent>,
    /// An adaptation failed during the treatment.
    pub solver_failed: bool,
}

impl PatientResult {
    /// All criteria met on the final dose and no failed adaptation.
    pub fn success(&self) -> bool {
        !self.solver_failed && self.outcomes.iter().all(|o| o.passed)
    }

    pub fn adaptations(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Adapted).count()
    }

    pub fn candidate_at(&self, fraction: usize) -> bool {
        self.evaluations.iter().any(|e| e.fraction == fraction && e.candidate)
    }
}

/// Dose the criteria are evaluated on after `n` of `total` fractions.
pub fn evaluation_dose(
    cumulative: &[f64],
    n: usize,
    total: usize,
    mode: EvaluationMode,
    plan: &Plan,
    ctx: &PlanningContext,
) -> Vec<f64> {
    match mode {
        EvaluationMode::Scaled => {
            let f = total as f64 / n as f64;
            cumulative.iter().map(|d| d * f).collect()
        }
        EvaluationMode::Projected => {
            let rest = (total - n) as f64 / total as f64;
            let nominal = ctx.phantom.dose(&plan.fluence, 0.0);
            cumulative.iter().zip(nominal).map(|(d, e)| d + rest * e).collect()
        }
    }
}

/// Delivers the treatment fraction by fraction, evaluating and adapting
/// at the scheduled fractions.
pub fn simulate_patient(
    index: usize,
    errors: &PatientErrors,
    initial: &InitialPlan,
    treatment: &Treatment,
    schedule: &Schedule,
    ctx: &PlanningContext,
    settings: &SimulationSettings,
) -> Result<PatientResult> {
    let total = settings.fractions;
    if errors.random.len() != total {
        return Err(invalid(format!(
            "patient has {} fractions, expected {total}",
            errors.random.len()
        )));
    }
    if let Some(cfg) = treatment.strategy() {
        let robust_state = matches!(initial.state, StrategyState::Robust { .. });
        if cfg.kind.uses_robust_plan() != robust_state {
            return Err(invalid(format!(
                "strategy {} cannot adapt a {} plan",
                cfg.kind.label(),
                initial.plan.provenance.label()
            )));
        }
    }
    let trajectory = errors.trajectory();
    let nv = ctx.phantom.grid().len();
    let mut cumulative = vec![0.0; nv];
    let mut plan = initial.plan.clone();
    let mut state = initial.state.clone();
    let mut evaluations = Vec::with_capacity(schedule.fractions.len());
    let mut events = Vec::new();
    let mut solver_failed = false;
    let inv_n = 1.0 / total as f64;

    for n in 1..=total {
        let dose = ctx.phantom.dose(&plan.fluence, trajectory.shifts()[n]);
        for (c, d) in cumulative.iter_mut().zip(dose) {
            *c += d * inv_n;
        }
        if !schedule.fractions.contains(&n) {
            continue;
        }
        let eval = evaluation_dose(&cumulative, n, total, settings.evaluation, &plan, ctx);
        let outcomes = evaluate_criteria(&eval, &ctx.phantom, &settings.criteria, settings.prescription)?;
        let violated = violations(&outcomes);
        evaluations.push(EvaluationRecord {
            fraction: n,
            outcomes,
            candidate: !violated.is_empty(),
        });
        let Some(cfg) = treatment.strategy() else {
            continue;
        };
        if violated.is_empty() {
            continue;
        }
        let upto = match settings.measurements {
            MeasurementWindow::Inclusive => n,
            MeasurementWindow::Exclusive => n - 1,
        };
        let log = trajectory.prefix(upto);
        if cfg.kind != StrategyKind::AlphaUpdate && log.len() < 2 {
            events.push(AdaptationEvent {
                fraction: n,
                kind: EventKind::Skipped,
                violations: violated,
                state: state.describe(),
                message: "fewer than two measurements".to_string(),
            });
            continue;
        }
        match adapt(log, cfg, ctx, &state, &violated, n) {
            Ok(decision) => {
                if let Some(p) = decision.plan {
                    plan = p;
                }
                state = decision.state;
                events.push(AdaptationEvent {
                    fraction: n,
                    kind: EventKind::Adapted,
                    violations: violated,
                    state: state.describe(),
                    message: String::new(),
                });
            }
            Err(e @ (Error::NotConverged { .. } | Error::Numerical(_))) => {
                log::warn!("patient {index}: adaptation at fraction {n} failed: {e}");
                solver_failed = true;
                events.push(AdaptationEvent {
                    fraction: n,
                    kind: EventKind::Failed,
                    violations: violated,
                    state: state.describe(),
                    message: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let outcomes = evaluate_criteria(&cumulative, &ctx.phantom, &settings.criteria, settings.prescription)?;
    Ok(PatientResult {
        index,
        errors: errors.clone(),
        trajectory,
        cumulative_dose: cumulative,
        outcomes,
        evaluations,
        events,
        solver_failed,
    })
}

/// Worst observed value of one criterion across a population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriterionSummary {
    pub criterion: QualityCriterion,
    /// Lowest (targets) or highest (OARs) Dxx, in percent of prescription.
    pub worst_pct: f64,
    pub failed_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateRate {
    pub fraction: usize,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationReport {
    pub treatment: String,
    pub schedule: String,
    pub population: PopulationKind,
    pub patients: usize,
    pub success_pct: f64,
    pub criteria: Vec<CriterionSummary>,
    pub candidates: Vec<CandidateRate>,
    /// Patients that were candidates at every evaluation.
    pub intersection_pct: Option<f64>,
    pub most_common_adaptations: usize,
    pub mean_adaptations: f64,
    pub solver_failures: usize,
}

impl PopulationReport {
    pub fn from_results(
        results: &[PatientResult],
        treatment: &Treatment,
        schedule: &Schedule,
        population: PopulationKind,
        prescription: f64,
    ) -> Result<Self> {
        if results.is_empty() {
            return Err(invalid("population is empty"));
        }
        let k = results.len() as f64;
        let pct = |count: usize| 100.0 * count as f64 / k;
        let success_pct = pct(results.iter().filter(|r| r.success()).count());
        let criteria = results[0]
            .outcomes
            .iter()
            .enumerate()
            .map(|(i, first)| {
                let values = results.iter().map(|r| r.outcomes[i].value);
                let worst = match first.criterion.direction {
                    Direction::AtLeast => values.fold(f64::INFINITY, f64::min),
                    Direction::AtMost => values.fold(f64::NEG_INFINITY, f64::max),
                };
                CriterionSummary {
                    criterion: first.criterion,
                    worst_pct: 100.0 * worst / prescription,
                    failed_pct: pct(results.iter().filter(|r| !r.outcomes[i].passed).count()),
                }
            })
            .collect();
        let candidates = schedule
            .fractions
            .iter()
            .map(|&f| CandidateRate {
                fraction: f,
                pct: pct(results.iter().filter(|r| r.candidate_at(f)).count()),
            })
            .collect();
        let intersection_pct = schedule.is_adaptive().then(|| {
            pct(results
                .iter()
                .filter(|r| schedule.fractions.iter().all(|&f| r.candidate_at(f)))
                .count())
        });
        let mut counts = BTreeMap::new();
        for r in results {
            *counts.entry(r.adaptations()).or_insert(0usize) += 1;
        }
        let most_common_adaptations = counts
            .iter()
            .fold((0, 0), |best, (&a, &c)| if c > best.1 { (a, c) } else { best })
            .0;
        Ok(Self {
            treatment: treatment.label(),
            schedule: schedule.name.clone(),
            population,
            patients: results.len(),
            success_pct,
            criteria,
            candidates,
            intersection_pct,
            most_common_adaptations,
            mean_adaptations: results.iter().map(|r| r.adaptations() as f64).sum::<f64>() / k,
            solver_failures: results.iter().filter(|r| r.solver_failed).count(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct PopulationRun {
    pub report: PopulationReport,
    pub initial: InitialPlan,
    pub patients: Vec<PatientResult>,
}

/// Per-patient random generator: seeded with `base_seed + index`.
pub fn patient_rng(base_seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(index as u64))
}

/// Samples `size` patients from `pop`; patient `i` uses [`patient_rng`].
pub fn sample_population(
    pop: &PopulationSpec,
    fractions: usize,
    size: usize,
    base_seed: u64,
) -> Result<Vec<PatientErrors>> {
    (0..size)
        .map(|i| sample_patient(pop, fractions, &mut patient_rng(base_seed, i)))
        .collect()
}

/// Simulates a whole population. Patients run in parallel; results do not
/// depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn run_population(
    pop: &PopulationSpec,
    treatment: &Treatment,
    schedule: &Schedule,
    ctx: &PlanningContext,
    assumptions: &PlanningAssumptions,
    settings: &SimulationSettings,
    size: usize,
    base_seed: u64,
) -> Result<PopulationRun> {
    if size == 0 {
        return Err(invalid("population size must be at least 1"));
    }
    settings.validate()?;
    if settings.fractions != ctx.fractions {
        return Err(invalid("simulation and planning fraction counts differ"));
    }
    let patients = sample_population(pop, settings.fractions, size, base_seed)?;
    let initial = initial_plan(treatment, ctx, assumptions)?;
    let results = patients
        .par_iter()
        .enumerate()
        .map(|(i, errors)| simulate_patient(i, errors, &initial, treatment, schedule, ctx, settings))
        .collect::<Result<Vec<_>>>()?;
    let report = PopulationReport::from_results(&results, treatment, schedule, pop.kind, settings.prescription)?;
    Ok(PopulationRun {
        report,
        initial,
        patients: results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramPoint {
    pub dose: f64,
    pub probability: f64,
}

/// Fraction of patients whose final `D{volume}` meets each dose level:
/// at least the level for targets, at most for OARs.
pub fn dose_probability_histogram(
    results: &[PatientResult],
    ctx: &PlanningContext,
    criterion: &QualityCriterion,
    dose_levels: &[f64],
) -> Result<Vec<HistogramPoint>> {
    if results.is_empty() {
        return Err(invalid("no patients to histogram"));
    }
    let w = ctx.phantom.weights().get(criterion.roi);
    let values = results
        .iter()
        .map(|r| dxx(&r.cumulative_dose, w, criterion.volume_pct))
        .collect::<Result<Vec<_>>>()?;
    let k = values.len() as f64;
    Ok(dose_levels
        .iter()
        .map(|&level| {
            let hits = values
                .iter()
                .filter(|&&v| match criterion.direction {
                    Direction::AtLeast => v >= level,
                    Direction::AtMost => v <= level,
                })
                .count();
            HistogramPoint {
                dose: level,
                probability: hits as f64 / k,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `count / (k · width)`; for a zero-width bin the point mass `count / k`.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    /// Standard deviation of the per-patient worst errors of the full sample.
    pub full_sample_std: f64,
    pub resampled_std: Vec<f64>,
    pub density: Vec<DensityBin>,
}

impl BootstrapResult {
    pub fn mean(&self) -> f64 {
        self.resampled_std.iter().sum::<f64>() / self.resampled_std.len() as f64
    }

    /// Standard deviation of the resampled statistics.
    pub fn spread(&self) -> f64 {
        sample_std(&self.resampled_std)
    }

    /// Standard error of [`Self::mean`].
    pub fn standard_error(&self) -> f64 {
        self.spread() / (self.resampled_std.len() as f64).sqrt()
    }
}

/// Per-patient worst error `max_n |Δr_n|`.
pub fn worst_error(log: &TrajectoryLog) -> f64 {
    log.shifts().iter().fold(0.0, |m, s| m.max(s.abs()))
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Bootstrap distribution of the standard deviation of the per-patient
/// worst errors from `k` resamples with replacement.
pub fn bootstrap_worst_error(trajectories: &[TrajectoryLog], k: usize, seed: u64) -> Result<BootstrapResult> {
    if k == 0 {
        return Err(invalid("bootstrap needs at least one resample"));
    }
    if trajectories.is_empty() {
        return Err(invalid("bootstrap needs at least one trajectory"));
    }
    let stats: Vec<f64> = trajectories.iter().map(worst_error).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = vec![0.0; stats.len()];
    let resampled_std: Vec<f64> = (0..k)
        .map(|_| {
            for s in sample.iter_mut() {
                *s = *stats.choose(&mut rng).expect("nonempty");
            }
            sample_std(&sample)
        })
        .collect();
    Ok(BootstrapResult {
        full_sample_std: sample_std(&stats),
        density: histogram_density(&resampled_std),
        resampled_std,
    })
}

/// Equal-width histogram density with `ceil(sqrt(k))` bins.
pub fn histogram_density(values: &[f64]) -> Vec<DensityBin> {
    let k = values.len();
    if k == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![DensityBin {
            lo,
            hi,
            count: k,
            density: 1.0,
        }];
    }
    let bins = (k as f64).sqrt().ceil() as usize;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| DensityBin {
            lo: lo + i as f64 * width,
            hi: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count,
            density: count as f64 / (k as f64 * width),
        })
        .collect()
}
