//! Scaling fits of solver time against dimension across a set of reports.

use std::path::Path;

use serde::{Deserialize, Serialize};
use ttmfg::benchmarks::{fit_scaling, ScalingFit};

use crate::report::ExperimentReport;
use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitTable {
    pub benchmark: String,
    pub rule: String,
    pub dims: Vec<usize>,
    pub seconds: Vec<f64>,
    pub fit: ScalingFit,
}

impl FitTable {
    pub fn render(&self) -> String {
        let mut out = format!("{} / {}\n", self.benchmark, self.rule);
        out.push_str("model        a           b         R2\n");
        for (label, m) in [("exponential", self.fit.exponential), ("power-law", self.fit.power_law)] {
            let r2 = m.r2.map(|r| format!("{r:.4}")).unwrap_or_else(|| "undefined".into());
            out.push_str(&format!("{label:<12} {:<11.4e} {:<9.4} {r2}\n", m.a, m.b));
        }
        let preferred = if self.fit.prefers_power_law() { "power-law" } else { "exponential" };
        out.push_str(&format!("preferred: {preferred}\n"));
        out
    }
}

/// Fits solver time against dimension for reports that share a benchmark
/// and a rule.
pub fn fit_reports(reports: &[ExperimentReport]) -> Result<FitTable, CliError> {
    if reports.len() < 3 {
        return Err(CliError::Usage(format!(
            "a scaling fit needs at least three reports, found {}",
            reports.len()
        )));
    }
    let first = &reports[0];
    if let Some(odd) = reports.iter().find(|r| r.benchmark != first.benchmark || r.rule != first.rule) {
        return Err(CliError::Usage(format!(
            "reports mix {}/{} with {}/{}",
            first.benchmark, first.rule, odd.benchmark, odd.rule
        )));
    }
    let mut pairs: Vec<(usize, f64)> = reports.iter().map(|r| (r.dim, r.solver_seconds())).collect();
    pairs.sort_by_key(|p| p.0);
    let dims: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let seconds: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let xs: Vec<f64> = dims.iter().map(|&d| d as f64).collect();
    let fit = fit_scaling(&xs, &seconds).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(FitTable {
        benchmark: first.benchmark.clone(),
        rule: first.rule.clone(),
        dims,
        seconds,
        fit,
    })
}

/// Loads every report in `dir` (files ending in `.json` other than the
/// manifest) and fits them.
pub fn report_fit(dir: &Path) -> Result<FitTable, CliError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json") && p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    paths.sort();
    let reports = paths
        .iter()
        .map(|p| ExperimentReport::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    fit_reports(&reports)
}
