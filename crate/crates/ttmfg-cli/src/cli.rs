use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use ttmfg::benchmarks::run_ladder;

use crate::config::RunSpec;
use crate::report::{write_csv, write_outputs, Environment, ExperimentReport, Manifest};
use crate::{exit, fit, rules, verify, CliError};

#[derive(Debug, Parser)]
#[command(name = "ttmfg", version, about = "Tensor-train semi-Lagrangian mean field game experiments")]
pub struct Cli {
    /// Caps the number of worker threads (1 runs sequentially).
    #[arg(long, global = true, env = "TTMFG_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs the time-step ladder described by a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides the `output` key of the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Allows configs marked `long = true`.
        #[arg(long)]
        long: bool,
        /// Suppresses the CSV echo on stdout.
        #[arg(long)]
        quiet: bool,
    },
    /// Inspects cubature rules.
    Rules {
        #[command(subcommand)]
        action: RulesAction,
    },
    /// Runs the cubature, mutation and dense-oracle invariant suites.
    Verify {
        /// Prints every check as JSON instead of a summary.
        #[arg(long)]
        json: bool,
    },
    /// Fits solver time against dimension for the reports in a directory.
    ReportFit {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum RulesAction {
    Print {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        nu: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long)]
        json: bool,
    },
}

/// Result of `run`: the reports, one per dimension, and the manifest that
/// was written next to them.
pub struct RunOutcome {
    pub reports: Vec<ExperimentReport>,
    pub manifest: Manifest,
    pub directory: PathBuf,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        self.reports.iter().all(|r| r.converged())
    }
}

/// Runs every dimension of a spec and writes CSV, JSON and the manifest.
pub fn run_spec(spec: &RunSpec, spec_path: Option<&Path>, output: Option<&Path>, allow_long: bool) -> Result<RunOutcome, CliError> {
    if spec.is_long() && !allow_long {
        return Err(CliError::Usage(format!(
            "`{}` is marked long-running; pass --long to start it",
            spec.label()
        )));
    }
    let directory = output
        .map(Path::to_path_buf)
        .or_else(|| spec.output.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(spec.label()));
    let dims = spec.dimensions()?;
    // Validate every dimension before spending time on the first.
    let settings = dims.iter().map(|&d| spec.settings(d)).collect::<Result<Vec<_>, _>>()?;
    let mut manifest = Manifest {
        spec: spec_path.map(Path::to_path_buf),
        entries: Vec::new(),
    };
    let mut reports = Vec::new();
    for s in settings {
        let started = Instant::now();
        let rows = run_ladder(&s)?;
        let report = ExperimentReport {
            name: spec.label(),
            benchmark: s.kind.name().to_string(),
            dim: s.dim,
            rule: s.rule.name().to_string(),
            settings: s,
            rows,
            environment: Environment::capture(),
            seconds: started.elapsed().as_secs_f64(),
        };
        manifest.entries.push(write_outputs(&directory, &report)?);
        reports.push(report);
    }
    std::fs::write(directory.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome {
        reports,
        manifest,
        directory,
    })
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    if let Some(t) = cli.threads {
        ttmfg::exec::limit_threads(t).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Run {
            config,
            output,
            long,
            quiet,
        } => {
            let spec = RunSpec::from_file(&config)?;
            let outcome = run_spec(&spec, Some(&config), output.as_deref(), long)?;
            if !quiet {
                for r in &outcome.reports {
                    println!("# {} d={} rule={}", r.name, r.dim, r.rule);
                    write_csv(r.settings.kind, &r.rows, std::io::stdout())?;
                }
            }
            eprintln!("wrote {}", outcome.directory.display());
            if outcome.converged() {
                Ok(exit::SUCCESS)
            } else {
                eprintln!("at least one ladder row hit the iteration cap without converging");
                Ok(exit::NOT_CONVERGED)
            }
        }
        Command::Rules {
            action: RulesAction::Print { kind, dim, nu, dt, json },
        } => {
            let rule = rules::build(&kind, dim, nu, dt)?;
            if json {
                println!("{}", rules::render_json(&rule)?);
            } else {
                print!("{}", rules::render_text(&rule));
            }
            Ok(exit::SUCCESS)
        }
        Command::Verify { json } => {
            let report = verify::run_all();
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                for group in ["cubature", "mutation", "dense-oracle"] {
                    let checks: Vec<_> = report.checks.iter().filter(|c| c.group == group).collect();
                    let ok = checks.iter().all(|c| c.passed);
                    let detail = if checks.iter().all(|c| c.must_exceed) {
                        let least = checks.iter().map(|c| c.measured).fold(f64::INFINITY, f64::min);
                        format!("smallest required defect {least:.3e}")
                    } else {
                        format!("worst bounded value {:.3e}", report.worst(group))
                    };
                    println!(
                        "{group:<13} {} ({} checks, {detail})",
                        if ok { "pass" } else { "FAIL" },
                        checks.len()
                    );
                }
                for c in report.failures() {
                    println!("  failed: {} [{}] measured {:.3e} vs {:.3e}", c.check, c.group, c.measured, c.threshold);
                }
            }
            Ok(if report.passed() { exit::SUCCESS } else { exit::INVARIANT })
        }
        Command::ReportFit { dir, json } => {
            let table = fit::report_fit(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&table)?);
            } else {
                print!("{}", table.render());
            }
            Ok(exit::SUCCESS)
        }
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
