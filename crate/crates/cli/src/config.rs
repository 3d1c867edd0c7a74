//! Run configuration (TOML). Every physical quantity carries its unit in
//! the key name: `_mm`, `_pct` (percent), `_cgy`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use robart_core::objective::{Direction, ObjectiveWeights, QualityCriterion};
use robart_core::phantom::{PhantomConfig, RoiKind};
use robart_core::simulator::{
    EvaluationMode, MeasurementWindow, PlanningAssumptions, Schedule, SimulationSettings, Treatment,
};
use robart_core::solver::SolverSettings;
use robart_core::strategies::StrategyConfig;
use robart_core::uncertainty::{ErrorComponent, PopulationKind, PopulationSpec, SmoothingPrior};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub base_seed: u64,
    pub patients: usize,
    pub fractions: usize,
    pub prescription_cgy: f64,
    /// Built-in schedule name, `NonAdaptive`, or `Gold`.
    pub schedule: String,
    /// Custom evaluation fractions; overrides the built-in lookup when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_fractions: Option<Vec<usize>>,
    #[serde(default)]
    pub phantom: PhantomConfig,
    pub population: PopulationConfig,
    pub treatment: TreatmentConfig,
    pub planning: PlanningConfig,
    #[serde(default)]
    pub objective: ObjectiveWeights,
    pub criteria: CriteriaConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub simulation: SimulationOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub kind: PopulationKind,
    /// Overrides of the built-in error model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub systematic: Option<ErrorComponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<ErrorComponent>,
}

impl PopulationConfig {
    pub fn spec(&self) -> PopulationSpec {
        let base = PopulationSpec::for_kind(self.kind);
        PopulationSpec {
            kind: self.kind,
            systematic: self.systematic.unwrap_or(base.systematic),
            random: self.random.unwrap_or(base.random),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreatmentConfig {
    Nominal,
    Robust { alpha: f64 },
    Adaptive { strategy: StrategyConfig },
}

impl TreatmentConfig {
    pub fn treatment(&self) -> Treatment {
        match self {
            TreatmentConfig::Nominal => Treatment::Nominal,
            TreatmentConfig::Robust { alpha } => Treatment::Robust { alpha: *alpha },
            TreatmentConfig::Adaptive { strategy } => Treatment::Adaptive(strategy.clone()),
        }
    }

    /// CVaR level of the robust plan written by `plan`.
    pub fn robust_alpha(&self) -> f64 {
        match self {
            TreatmentConfig::Robust { alpha } => *alpha,
            TreatmentConfig::Adaptive { strategy } if strategy.kind.uses_robust_plan() => strategy.initial_alpha,
            _ => 0.1,
        }
    }
}

/// A-priori error statistics for the initial plans and the smoothing seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanningConfig {
    pub systematic_sd_mm: f64,
    pub random_sd_mm: Vec<f64>,
    pub random_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_mm: Option<f64>,
    pub prior_systematic_sd_mm: f64,
    pub prior_random_sd_mm: f64,
}

impl PlanningConfig {
    pub fn assumptions(&self) -> PlanningAssumptions {
        PlanningAssumptions {
            systematic_sd_mm: self.systematic_sd_mm,
            random_sd_mm: self.random_sd_mm.clone(),
            random_probs: self.random_probs.clone(),
            margin_mm: self.margin_mm,
        }
    }

    pub fn prior(&self) -> SmoothingPrior {
        SmoothingPrior {
            systematic_sd_mm: self.prior_systematic_sd_mm,
            random_sd_mm: self.prior_random_sd_mm,
        }
    }
}

/// Dose-volume criteria in percent of volume and of prescription. The OAR
/// dose limits have no defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriteriaConfig {
    #[serde(default = "ctv_volume")]
    pub ctv_volume_pct: f64,
    #[serde(default = "ctv_dose")]
    pub ctv_dose_pct: f64,
    #[serde(default = "right_volume")]
    pub right_oar_volume_pct: f64,
    pub right_oar_dose_pct: f64,
    #[serde(default = "left_volume")]
    pub left_oar_volume_pct: f64,
    pub left_oar_dose_pct: f64,
}

fn ctv_volume() -> f64 {
    99.0
}

fn ctv_dose() -> f64 {
    90.0
}

fn right_volume() -> f64 {
    30.0
}

fn left_volume() -> f64 {
    20.0
}

impl CriteriaConfig {
    pub fn criteria(&self) -> Vec<QualityCriterion> {
        vec![
            QualityCriterion {
                roi: RoiKind::Ctv,
                volume_pct: self.ctv_volume_pct,
                dose_pct: self.ctv_dose_pct,
                direction: Direction::AtLeast,
            },
            QualityCriterion {
                roi: RoiKind::RightOar,
                volume_pct: self.right_oar_volume_pct,
                dose_pct: self.right_oar_dose_pct,
                direction: Direction::AtMost,
            },
            QualityCriterion {
                roi: RoiKind::LeftOar,
                volume_pct: self.left_oar_volume_pct,
                dose_pct: self.left_oar_dose_pct,
                direction: Direction::AtMost,
            },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationOptions {
    pub evaluation: EvaluationMode,
    pub measurements: MeasurementWindow,
    pub bootstrap_resamples: usize,
    /// Dose-level spacing of the dose-probability histograms.
    pub histogram_step_pct: f64,
    pub histogram_max_pct: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            evaluation: EvaluationMode::Scaled,
            measurements: MeasurementWindow::Inclusive,
            bootstrap_resamples: 500,
            histogram_step_pct: 0.5,
            histogram_max_pct: 120.0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner().message().trim()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn schedule(&self) -> Result<Schedule, CliError> {
        let s = match &self.schedule_fractions {
            Some(f) => Schedule::custom(&self.schedule, f.clone(), self.fractions),
            None => Schedule::builtin(&self.schedule, self.fractions),
        };
        s.map_err(|e| CliError::Config(format!("schedule: {e}")))
    }

    pub fn simulation_settings(&self) -> SimulationSettings {
        SimulationSettings {
            fractions: self.fractions,
            prescription: self.prescription_cgy,
            criteria: self.criteria.criteria(),
            evaluation: self.simulation.evaluation,
            measurements: self.simulation.measurements,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.patients == 0 {
            return cfg("patients", "population size must be at least 1".into());
        }
        if self.fractions == 0 {
            return cfg("fractions", "at least one fraction is required".into());
        }
        if !(self.prescription_cgy > 0.0) {
            return cfg("prescription_cgy", "must be positive".into());
        }
        self.schedule()?;
        if let Err(e) = self.population.spec().validate() {
            return cfg("population", e.to_string());
        }
        if let TreatmentConfig::Robust { alpha } = self.treatment {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return cfg("treatment.alpha", format!("must lie in (0, 1], got {alpha}"));
            }
        }
        if let TreatmentConfig::Adaptive { strategy } = &self.treatment {
            if let Err(e) = strategy.validate() {
                return cfg("treatment.strategy", e.to_string());
            }
        }
        if let Err(e) = self.planning.assumptions().sigma_set() {
            return cfg("planning.random_sd_mm", e.to_string());
        }
        if !(self.planning.systematic_sd_mm >= 0.0) {
            return cfg("planning.systematic_sd_mm", "must be nonnegative".into());
        }
        if let Err(e) = self.planning.assumptions().initial_margin() {
            return cfg("planning.margin_mm", e.to_string());
        }
        if let Err(e) = self.solver.validate() {
            return cfg("solver", e.to_string());
        }
        for (name, v) in [
            ("criteria.right_oar_dose_pct", self.criteria.right_oar_dose_pct),
            ("criteria.left_oar_dose_pct", self.criteria.left_oar_dose_pct),
            ("criteria.ctv_dose_pct", self.criteria.ctv_dose_pct),
        ] {
            if !(v >= 0.0) {
                return cfg(name, format!("must be nonnegative, got {v}"));
            }
        }
        for (name, v) in [
            ("criteria.ctv_volume_pct", self.criteria.ctv_volume_pct),
            ("criteria.right_oar_volume_pct", self.criteria.right_oar_volume_pct),
            ("criteria.left_oar_volume_pct", self.criteria.left_oar_volume_pct),
        ] {
            if !(v > 0.0 && v <= 100.0) {
                return cfg(name, format!("must lie in (0, 100], got {v}"));
            }
        }
        let o = &self.simulation;
        if o.bootstrap_resamples == 0 {
            return cfg("simulation.bootstrap_resamples", "must be at least 1".into());
        }
        if !(o.histogram_step_pct > 0.0 && o.histogram_max_pct > 0.0) {
            return cfg(
                "simulation.histogram_step_pct",
                "histogram grid must be positive".into(),
            );
        }
        Ok(())
    }
}
