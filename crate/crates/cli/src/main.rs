use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robart_cli::commands::{cmd_plan, cmd_simulate};
use robart_cli::config::RunConfig;
use robart_cli::report::cmd_report;
use robart_cli::CliError;

#[derive(Parser)]
#[command(
    name = "robart",
    version,
    about = "Robust adaptive fluence planning and treatment simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the nominal and robust initial plans and write plan artifacts.
    Plan(RunArgs),
    /// Simulate a patient population and write CSV reports.
    Simulate(RunArgs),
    /// Summarize one or more simulate output directories.
    Report {
        /// A simulate output directory, or a directory of them.
        input: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `patients`.
    #[arg(long)]
    patients: Option<usize>,
    /// Worker threads for the population run.
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, PathBuf), CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(p) = self.patients {
            cfg.patients = p;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        if let Some(t) = self.threads {
            if t == 0 {
                return Err(CliError::Config("--threads must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
        }
        let out = cfg.output_dir.clone();
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Plan(args) => {
            let (cfg, out) = args.load()?;
            for r in cmd_plan(&cfg, &out)? {
                println!(
                    "{} plan ({}): objective {:.6e}, written to {}",
                    r.name,
                    r.artifact.label,
                    r.artifact.plan.objective,
                    out.join(format!("{}.plan.toml", r.name)).display()
                );
                for o in &r.zero_shift {
                    println!(
                        "  {:<14} {:8.3} cGy ({:6.2}% of prescription) {}",
                        o.criterion.label(),
                        o.value,
                        100.0 * o.value / cfg.prescription_cgy,
                        if o.passed { "pass" } else { "FAIL" }
                    );
                }
            }
        }
        Command::Simulate(args) => {
            let (cfg, out) = args.load()?;
            let res = cmd_simulate(&cfg, &out)?;
            let r = &res.run.report;
            println!(
                "{} / {} / {} population, {} patients: success {:.1}%",
                r.treatment,
                r.schedule,
                r.population.label(),
                r.patients,
                r.success_pct
            );
            for c in &r.criteria {
                println!(
                    "  {:<14} worst {:6.2}% ({:.1}% failed)",
                    c.criterion.label(),
                    c.worst_pct,
                    c.failed_pct
                );
            }
            if r.solver_failures > 0 {
                eprintln!("warning: {} patients had failed adaptations", r.solver_failures);
            }
            println!("reports written to {}", out.display());
        }
        Command::Report { input } => print!("{}", cmd_report(&input)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
