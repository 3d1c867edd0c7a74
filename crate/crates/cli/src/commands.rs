//! The `plan` and `simulate` commands.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use robart_core::objective::{evaluate_criteria, CriterionOutcome};
use robart_core::phantom::Phantom;
use robart_core::simulator::{
    bootstrap_worst_error, dose_probability_histogram, initial_plan, run_population, BootstrapResult, PopulationRun,
    Treatment,
};
use robart_core::strategies::PlanningContext;

use crate::artifact::PlanArtifact;
use crate::config::RunConfig;
use crate::CliError;

pub const SUMMARY_CSV: &str = "summary.csv";
pub const CANDIDATES_CSV: &str = "candidates.csv";
pub const PATIENTS_CSV: &str = "patients.csv";
pub const EVENTS_CSV: &str = "events.csv";
pub const BOOTSTRAP_CSV: &str = "bootstrap.csv";
pub const BOOTSTRAP_DENSITY_CSV: &str = "bootstrap_density.csv";
pub const BOOTSTRAP_SUMMARY_CSV: &str = "bootstrap_summary.csv";
pub const CONFIG_COPY: &str = "config.toml";

pub fn planning_context(cfg: &RunConfig) -> Result<PlanningContext, CliError> {
    let phantom = Phantom::build(&cfg.phantom).map_err(|e| CliError::Config(format!("phantom: {e}")))?;
    Ok(PlanningContext::new(
        Arc::new(phantom),
        cfg.objective,
        cfg.prescription_cgy,
        cfg.fractions,
        cfg.solver,
        cfg.planning.prior(),
    )?)
}

#[derive(Debug, Clone)]
pub struct PlanReport {
    pub name: &'static str,
    pub artifact: PlanArtifact,
    /// Criteria evaluated on the unshifted plan dose.
    pub zero_shift: Vec<CriterionOutcome>,
}

/// Solves the nominal and robust initial plans and writes
/// `nominal.plan.toml` and `robust.plan.toml` to `out`.
pub fn cmd_plan(cfg: &RunConfig, out: &Path) -> Result<Vec<PlanReport>, CliError> {
    let ctx = planning_context(cfg)?;
    let assumptions = cfg.planning.assumptions();
    fs::create_dir_all(out)?;
    let mut reports = Vec::new();
    for (name, treatment) in [
        ("nominal", Treatment::Nominal),
        (
            "robust",
            Treatment::Robust {
                alpha: cfg.treatment.robust_alpha(),
            },
        ),
    ] {
        let init = initial_plan(&treatment, &ctx, &assumptions)?;
        let dose = ctx.phantom.dose(&init.plan.fluence, 0.0);
        let zero_shift = evaluate_criteria(&dose, &ctx.phantom, &cfg.criteria.criteria(), cfg.prescription_cgy)?;
        let artifact = PlanArtifact::new(init.plan);
        artifact.write(&out.join(format!("{name}.plan.toml")))?;
        reports.push(PlanReport {
            name,
            artifact,
            zero_shift,
        });
    }
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub run: PopulationRun,
    pub bootstrap: BootstrapResult,
}

/// Runs the configured population and writes all report files to `out`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<SimulationOutput, CliError> {
    let ctx = planning_context(cfg)?;
    let schedule = cfg.schedule()?;
    let run = run_population(
        &cfg.population.spec(),
        &cfg.treatment.treatment(),
        &schedule,
        &ctx,
        &cfg.planning.assumptions(),
        &cfg.simulation_settings(),
        cfg.patients,
        cfg.base_seed,
    )?;
    let logs: Vec<_> = run.patients.iter().map(|p| p.trajectory.clone()).collect();
    let bootstrap = bootstrap_worst_error(&logs, cfg.simulation.bootstrap_resamples, cfg.base_seed)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_COPY), cfg.to_toml())?;
    write_summary(&out.join(SUMMARY_CSV), &run)?;
    write_candidates(&out.join(CANDIDATES_CSV), &run)?;
    write_patients(&out.join(PATIENTS_CSV), &run, cfg.prescription_cgy)?;
    write_events(&out.join(EVENTS_CSV), &run)?;
    write_histograms(out, &run, &ctx, cfg)?;
    write_bootstrap(out, &bootstrap)?;
    Ok(SimulationOutput { run, bootstrap })
}

fn pct(v: f64) -> String {
    format!("{v:.4}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_summary(path: &Path, run: &PopulationRun) -> Result<(), CliError> {
    let r = &run.report;
    let mut w = writer(path)?;
    let mut header = vec![
        "treatment".to_string(),
        "schedule".into(),
        "population".into(),
        "patients".into(),
        "success_pct".into(),
    ];
    for c in &r.criteria {
        let l = c.criterion.label();
        header.push(format!("{l}_worst_pct"));
        header.push(format!("{l}_failed_pct"));
    }
    header.extend([
        "most_common_adaptations".into(),
        "mean_adaptations".into(),
        "solver_failures".into(),
    ]);
    w.write_record(&header)?;
    let mut row = vec![
        r.treatment.clone(),
        r.schedule.clone(),
        r.population.label().to_string(),
        r.patients.to_string(),
        pct(r.success_pct),
    ];
    for c in &r.criteria {
        row.push(pct(c.worst_pct));
        row.push(pct(c.failed_pct));
    }
    row.extend([
        r.most_common_adaptations.to_string(),
        pct(r.mean_adaptations),
        r.solver_failures.to_string(),
    ]);
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

fn write_candidates(path: &Path, run: &PopulationRun) -> Result<(), CliError> {
    let r = &run.report;
    let mut w = writer(path)?;
    w.write_record(["treatment", "schedule", "population", "evaluation", "candidate_pct"])?;
    let base = [r.treatment.as_str(), r.schedule.as_str(), r.population.label()];
    for c in &r.candidates {
        w.write_record(
            base.iter()
                .map(|s| s.to_string())
                .chain([c.fraction.to_string(), pct(c.pct)]),
        )?;
    }
    if let Some(i) = r.intersection_pct {
        w.write_record(
            base.iter()
                .map(|s| s.to_string())
                .chain(["intersection".to_string(), pct(i)]),
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_patients(path: &Path, run: &PopulationRun, prescription: f64) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let mut header = vec![
        "patient".to_string(),
        "systematic_mm".into(),
        "success".into(),
        "adaptations".into(),
        "solver_failed".into(),
    ];
    if let Some(first) = run.patients.first() {
        header.extend(first.outcomes.iter().map(|o| format!("{}_pct", o.criterion.label())));
    }
    w.write_record(&header)?;
    for p in &run.patients {
        let mut row = vec![
            p.index.to_string(),
            format!("{:.6}", p.errors.systematic),
            p.success().to_string(),
            p.adaptations().to_string(),
            p.solver_failed.to_string(),
        ];
        row.extend(p.outcomes.iter().map(|o| pct(100.0 * o.value / prescription)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_events(path: &Path, run: &PopulationRun) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["patient", "fraction", "event", "violations", "state", "message"])?;
    for p in &run.patients {
        for e in &p.events {
            let v: Vec<String> = e.violations.iter().map(|c| c.label()).collect();
            w.write_record([
                p.index.to_string(),
                e.fraction.to_string(),
                e.kind.label().to_string(),
                v.join(";"),
                e.state.clone(),
                e.message.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_histograms(out: &Path, run: &PopulationRun, ctx: &PlanningContext, cfg: &RunConfig) -> Result<(), CliError> {
    let step = cfg.simulation.histogram_step_pct;
    let count = (cfg.simulation.histogram_max_pct / step).round() as usize;
    let levels_pct: Vec<f64> = (0..=count).map(|i| i as f64 * step).collect();
    let levels: Vec<f64> = levels_pct.iter().map(|p| p / 100.0 * cfg.prescription_cgy).collect();
    for c in cfg.criteria.criteria() {
        let h = dose_probability_histogram(&run.patients, ctx, &c, &levels)?;
        let mut w = writer(&out.join(format!("histogram_{}.csv", c.roi)))?;
        w.write_record(["dose_pct", "dose_cgy", "probability"])?;
        for (p, point) in levels_pct.iter().zip(&h) {
            w.write_record([
                pct(*p),
                format!("{:.6}", point.dose),
                format!("{:.6}", point.probability),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn write_bootstrap(out: &Path, b: &BootstrapResult) -> Result<(), CliError> {
    let mut w = writer(&out.join(BOOTSTRAP_CSV))?;
    w.write_record(["resample", "std_mm"])?;
    for (i, s) in b.resampled_std.iter().enumerate() {
        w.write_record([i.to_string(), format!("{s:.6}")])?;
    }
    w.flush()?;
    let mut w = writer(&out.join(BOOTSTRAP_SUMMARY_CSV))?;
    w.write_record([
        "resamples",
        "full_sample_std_mm",
        "resample_mean_mm",
        "resample_spread_mm",
        "standard_error_mm",
    ])?;
    w.write_record([
        b.resampled_std.len().to_string(),
        format!("{:.6}", b.full_sample_std),
        format!("{:.6}", b.mean()),
        format!("{:.6}", b.spread()),
        format!("{:.6}", b.standard_error()),
    ])?;
    w.flush()?;
    let mut w = writer(&out.join(BOOTSTRAP_DENSITY_CSV))?;
    w.write_record(["std_lo_mm", "std_hi_mm", "count", "density"])?;
    for bin in &b.density {
        w.write_record([
            format!("{:.6}", bin.lo),
            format!("{:.6}", bin.hi),
            bin.count.to_string(),
            format!("{:.6}", bin.density),
        ])?;
    }
    w.flush()?;
    Ok(())
}
