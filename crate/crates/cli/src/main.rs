use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use popgames_cli::{
    certify, equilibria, finite, run, sweep, write_artifact, CliError, ExperimentConfig, FiniteOverrides, RunContext,
};

#[derive(Parser)]
#[command(name = "popgames", version, about = "Population game closed-loop experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate every initial condition and write trajectory CSVs.
    Run,
    /// Terminal states and limit points over all initial conditions.
    Sweep,
    /// Finite-population runs against the mean closed loop.
    Finite {
        /// Comma-separated population sizes.
        #[arg(long, value_delimiter = ',')]
        populations: Option<Vec<usize>>,
        /// Seeds per population size.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Apply the convergence theorems and print a JSON certificate.
    Certify,
    /// Print the equilibrium set as JSON.
    Equilibria,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("popgames: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let cfg = ExperimentConfig::load(&path)?;
    let out = cli.out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let ctx = RunContext::new(out, cli.jobs);
    let text = match cli.command {
        Command::Run => {
            let report = run(&cfg, &ctx)?;
            let mut s = String::new();
            for r in &report.runs {
                s.push_str(&format!(
                    "run {:3}  dist {:.3e}  gap {:.3e}  storage {:.3e}\n",
                    r.index, r.terminal_distance, r.terminal_payoff_gap, r.terminal_storage
                ));
            }
            s.push_str(&format!("summary written to {}", report.files.last().unwrap().display()));
            s
        }
        Command::Sweep => {
            let report = sweep(&cfg, &ctx)?;
            let mut s = format!("{} limit point(s)\n", report.limit_points.len());
            for lp in &report.limit_points {
                s.push_str(&format!("{:?}  runs {}  dist_to_eq {:.3e}\n", lp.point, lp.runs.len(), lp.distance_to_eq));
            }
            s.trim_end().to_string()
        }
        Command::Finite { populations, seeds, horizon } => {
            let report = finite(&cfg, &FiniteOverrides { populations, seeds, horizon }, &ctx)?;
            format!("{} rows written to {}", report.rows.len(), report.file.display())
        }
        Command::Certify => {
            let cert = certify(&cfg)?;
            write_artifact(&cfg, &ctx, "certificate.json", &cert)?;
            serde_json::to_string_pretty(&cert).expect("certificate serializes")
        }
        Command::Equilibria => {
            let value = equilibria(&cfg)?;
            write_artifact(&cfg, &ctx, "equilibria.json", &value)?;
            serde_json::to_string_pretty(&value).expect("json serializes")
        }
    };
    println!("{text}");
    Ok(())
}
