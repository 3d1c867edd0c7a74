//! The `report` command: a success-rate matrix over simulate outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use robart_core::simulator::{BUILTIN_SCHEDULES, GOLD, NON_ADAPTIVE};

use crate::commands::{CANDIDATES_CSV, SUMMARY_CSV};
use crate::CliError;

const REQUIRED: [&str; 2] = [SUMMARY_CSV, CANDIDATES_CSV];

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub treatment: String,
    pub schedule: String,
    pub population: String,
    pub patients: usize,
    pub success_pct: f64,
}

/// Run directories under `input`: `input` itself if it holds a summary,
/// otherwise its immediate subdirectories in name order.
pub fn run_dirs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !input.is_dir() {
        return Err(CliError::Io(format!("{} is not a directory", input.display())));
    }
    if input.join(SUMMARY_CSV).exists() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Io(format!(
            "{} contains no simulate output; missing {}",
            input.display(),
            REQUIRED.join(", ")
        )));
    }
    Ok(dirs)
}

pub fn load_runs(input: &Path) -> Result<Vec<RunSummary>, CliError> {
    let dirs = run_dirs(input)?;
    let missing: Vec<String> = dirs
        .iter()
        .flat_map(|d| REQUIRED.iter().map(move |f| d.join(f)))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Io(format!("missing files:\n  {}", missing.join("\n  "))));
    }
    dirs.iter().map(|d| read_summary(d)).collect()
}

fn read_summary(dir: &Path) -> Result<RunSummary, CliError> {
    let path = dir.join(SUMMARY_CSV);
    let mut r = csv::Reader::from_path(&path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Io(format!("{}: no column '{name}'", path.display())))
    };
    let (t, s, p, n, sr) = (
        col("treatment")?,
        col("schedule")?,
        col("population")?,
        col("patients")?,
        col("success_pct")?,
    );
    let rec = r
        .records()
        .next()
        .ok_or_else(|| CliError::Io(format!("{}: no data row", path.display())))??;
    let num = |i: usize| -> Result<f64, CliError> {
        rec[i]
            .parse()
            .map_err(|_| CliError::Io(format!("{}: bad number '{}'", path.display(), &rec[i])))
    };
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        treatment: rec[t].to_string(),
        schedule: rec[s].to_string(),
        population: rec[p].to_string(),
        patients: num(n)? as usize,
        success_pct: num(sr)?,
    })
}

/// Sort key of a schedule row: non-adaptive first, then the built-ins in
/// their canonical order (W1Eval4 directly above W2Eval4), then Gold, then
/// custom schedules by name.
fn schedule_rank(name: &str) -> (usize, String) {
    if name == NON_ADAPTIVE {
        return (0, String::new());
    }
    if let Some(i) = BUILTIN_SCHEDULES.iter().position(|(n, _)| *n == name) {
        return (1 + i, String::new());
    }
    if name == GOLD {
        return (1 + BUILTIN_SCHEDULES.len(), String::new());
    }
    (2 + BUILTIN_SCHEDULES.len(), name.to_string())
}

/// Schedule × treatment matrix of success rates per population, followed
/// by the runs ordered by success rate.
pub fn format_report(runs: &[RunSummary]) -> String {
    let mut out = String::new();
    let mut by_pop: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        by_pop.entry(&r.population).or_default().push(r);
    }
    for (pop, runs) in by_pop {
        let mut treatments: Vec<&str> = runs.iter().map(|r| r.treatment.as_str()).collect();
        treatments.sort();
        treatments.dedup();
        let mut schedules: Vec<&str> = runs.iter().map(|r| r.schedule.as_str()).collect();
        schedules.sort_by_key(|s| schedule_rank(s));
        schedules.dedup();
        let w0 = schedules
            .iter()
            .map(|s| s.len())
            .max()
            .unwrap_or(0)
            .max("schedule".len());
        let widths: Vec<usize> = treatments.iter().map(|t| t.len().max(7)).collect();
        let _ = writeln!(out, "population: {pop} (success rate in %)");
        let _ = write!(out, "{:<w0$}", "schedule");
        for (t, w) in treatments.iter().zip(&widths) {
            let _ = write!(out, " | {t:>w$}");
        }
        out.push('\n');
        let _ = writeln!(out, "{}", "-".repeat(w0 + widths.iter().map(|w| w + 3).sum::<usize>()));
        for s in &schedules {
            let _ = write!(out, "{s:<w0$}");
            for (t, w) in treatments.iter().zip(&widths) {
                let cell = runs
                    .iter()
                    .find(|r| r.schedule == *s && r.treatment == *t)
                    .map(|r| format!("{:.1}", r.success_pct))
                    .unwrap_or_else(|| "-".to_string());
                let _ = write!(out, " | {cell:>w$}");
            }
            out.push('\n');
        }
        if runs.len() > 1 {
            let mut ranked = runs.clone();
            ranked.sort_by(|a, b| b.success_pct.total_cmp(&a.success_pct));
            let mut line = String::from("ordering: ");
            for (i, r) in ranked.iter().enumerate() {
                if i > 0 {
                    line.push_str(if ranked[i - 1].success_pct > r.success_pct {
                        " > "
                    } else {
                        " = "
                    });
                }
                let _ = write!(line, "{} [{}] ({:.1}%)", r.treatment, r.schedule, r.success_pct);
            }
            let _ = writeln!(out, "{line}");
        }
        out.push('\n');
    }
    out
}

pub fn cmd_report(input: &Path) -> Result<String, CliError> {
    Ok(format_report(&load_runs(input)?))
}
