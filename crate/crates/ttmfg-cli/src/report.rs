//! Experiment reports, CSV tables and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ttmfg::benchmarks::{BenchmarkKind, BenchmarkSettings, LadderRow};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub os: String,
    pub arch: String,
    pub execution: String,
    pub workers: usize,
    pub unix_time: u64,
}

impl Environment {
    pub fn capture() -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            execution: format!("{:?}", ttmfg::exec::execution()).to_lowercase(),
            workers: ttmfg::exec::worker_count(),
            unix_time: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub benchmark: String,
    pub dim: usize,
    pub rule: String,
    pub settings: BenchmarkSettings,
    pub rows: Vec<LadderRow>,
    pub environment: Environment,
    pub seconds: f64,
}

impl ExperimentReport {
    pub fn converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }

    /// Time spent inside the solvers, summed over the ladder.
    pub fn solver_seconds(&self) -> f64 {
        self.rows.iter().map(|r| r.solver_seconds).sum()
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{} is not a report: {e}", path.display())))
    }
}

/// Column names of the CSV table for each benchmark.
pub fn columns(kind: BenchmarkKind) -> &'static [&'static str] {
    match kind {
        BenchmarkKind::AdvDiff => &["dt", "steps", "e2", "einf", "order", "seconds", "fit_warnings"],
        BenchmarkKind::Positivity => &["dt", "steps", "probe_min", "probe_order", "e2", "seconds", "fit_warnings"],
        BenchmarkKind::LocalMfg => &[
            "dt",
            "steps",
            "e2_u",
            "einf_u",
            "order_u",
            "e2_m",
            "einf_m",
            "order_m",
            "grid_e2_u",
            "grid_einf_u",
            "grid_seconds",
            "iterations",
            "converged",
            "seconds",
            "fit_warnings",
        ],
        BenchmarkKind::NonlocalMfg => &[
            "dt",
            "steps",
            "e2_u",
            "order_u",
            "e2_m",
            "order_m",
            "mass_defect",
            "mean_defect",
            "iterations",
            "converged",
            "seconds",
            "solver_seconds",
            "fit_warnings",
        ],
    }
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_default()
}

fn cell(row: &LadderRow, column: &str) -> String {
    let value = row.value.as_ref();
    let density = row.density.as_ref();
    let grid = row.grid.as_ref();
    match column {
        "dt" => format!("{:.6e}", row.dt),
        "steps" => row.steps.to_string(),
        "e2" | "e2_m" => num(density.map(|e| e.l2)),
        "einf" | "einf_m" => num(density.and_then(|e| e.linf)),
        "order" | "order_m" => num(row.density_order),
        "e2_u" => num(value.map(|e| e.l2)),
        "einf_u" => num(value.and_then(|e| e.linf)),
        "order_u" => num(row.value_order),
        "probe_min" => num(row.probe_min),
        "probe_order" => num(row.probe_order),
        "grid_e2_u" => num(grid.map(|g| g.errors.l2)),
        "grid_einf_u" => num(grid.and_then(|g| g.errors.linf)),
        "grid_seconds" => num(grid.map(|g| g.seconds)),
        "mass_defect" => num(row.mass_defect),
        "mean_defect" => num(row.mean_defect),
        "iterations" => row.iterations.to_string(),
        "converged" => row.converged.to_string(),
        "seconds" => format!("{:.3}", row.seconds),
        "solver_seconds" => format!("{:.3}", row.solver_seconds),
        "fit_warnings" => row.fit_warnings.to_string(),
        other => unreachable!("no column named {other}"),
    }
}

/// Writes the ladder as CSV, one row per time step.
pub fn write_csv<W: std::io::Write>(kind: BenchmarkKind, rows: &[LadderRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let cols = columns(kind);
    w.write_record(cols)?;
    for row in rows {
        w.write_record(cols.iter().map(|c| cell(row, c)))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: Option<PathBuf>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dim: usize,
    pub csv: PathBuf,
    pub report: PathBuf,
    pub converged: bool,
}

/// Writes `<label>_d<dim>.csv` and `.json` into `dir` and returns the entry.
pub fn write_outputs(dir: &Path, report: &ExperimentReport) -> Result<ManifestEntry, CliError> {
    std::fs::create_dir_all(dir)?;
    let kind: BenchmarkKind = report.settings.kind;
    let stem = format!("{}_d{}", report.name, report.dim);
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_csv(kind, &report.rows, std::fs::File::create(&csv_path)?)?;
    std::fs::write(&json_path, serde_json::to_string_pretty(report)?)?;
    Ok(ManifestEntry {
        dim: report.dim,
        csv: csv_path,
        report: json_path,
        converged: report.converged(),
    })
}
