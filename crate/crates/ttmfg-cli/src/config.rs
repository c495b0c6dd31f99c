//! Run specifications read from plain `key = value` files.
//!
//! Every key is optional except `benchmark`. Missing keys fall back to
//! [`BenchmarkSettings::defaults`] for the named benchmark, so a config file
//! only lists what differs from the reference experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ttmfg::benchmarks::{BenchmarkKind, BenchmarkSettings, GridInterpolation};
use ttmfg::cubature::RuleKind;
use ttmfg::propagator::FlowOrder;
use ttmfg::spi::{DriftSign, MeanEstimator, Smoothing, SolveMode};
use ttmfg::tt::Extrapolation;

use crate::CliError;

/// A number or a keyword, for keys such as `smoothing = 0.01` versus
/// `smoothing = "harmonic"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumberOrName {
    Number(f64),
    Name(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub benchmark: String,
    /// Label used for output file names; defaults to the benchmark name.
    pub name: Option<String>,
    pub dim: Option<usize>,
    /// Runs the same ladder once per listed dimension.
    pub dims: Option<Vec<usize>>,
    pub viscosity: Option<f64>,
    pub rule: Option<String>,
    pub order: Option<String>,
    pub steps: Option<Vec<usize>>,
    pub horizon: Option<f64>,
    pub half_width: Option<f64>,
    pub value_degree: Option<usize>,
    pub density_degree: Option<usize>,
    pub value_rank: Option<usize>,
    pub density_rank: Option<usize>,
    pub max_sweeps: Option<usize>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub initial_mean: Option<f64>,
    pub initial_variance: Option<f64>,
    pub smoothing: Option<NumberOrName>,
    pub stop_tol: Option<f64>,
    pub max_iterations: Option<usize>,
    pub log_density: Option<bool>,
    pub periodic: Option<bool>,
    pub drift_sign: Option<String>,
    pub mode: Option<String>,
    pub value_extrapolation: Option<NumberOrName>,
    pub density_extrapolation: Option<NumberOrName>,
    pub mean_estimator: Option<String>,
    pub seed: Option<u64>,
    pub validation_points: Option<usize>,
    pub grid_points: Option<Vec<usize>>,
    pub grid_interpolation: Option<String>,
    pub conservation: Option<bool>,
    /// Marks runs that take hours; they only start with `--long`.
    pub long: Option<bool>,
    pub output: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_extrapolation(v: &NumberOrName) -> Result<Extrapolation, CliError> {
    match v {
        NumberOrName::Number(m) if *m >= 0.0 => Ok(Extrapolation::Margin(*m)),
        NumberOrName::Number(m) => Err(usage(format!("extrapolation margin must be non-negative, got {m}"))),
        NumberOrName::Name(s) if s == "unlimited" => Ok(Extrapolation::Unlimited),
        NumberOrName::Name(s) => Err(usage(format!("unknown extrapolation `{s}` (a margin or \"unlimited\")"))),
    }
}

fn parse_smoothing(v: &NumberOrName) -> Result<Smoothing, CliError> {
    match v {
        NumberOrName::Number(w) if *w > 0.0 && *w <= 1.0 => Ok(Smoothing::Constant(*w)),
        NumberOrName::Number(w) => Err(usage(format!("smoothing weight must lie in (0, 1], got {w}"))),
        NumberOrName::Name(s) if s == "harmonic" => Ok(Smoothing::Harmonic),
        NumberOrName::Name(s) => Err(usage(format!("unknown smoothing `{s}` (a weight or \"harmonic\")"))),
    }
}

fn pick<T: Copy>(value: &str, key: &str, table: &[(&str, T)]) -> Result<T, CliError> {
    table.iter().find(|(name, _)| *name == value).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<_> = table.iter().map(|(n, _)| *n).collect();
        usage(format!("unknown {key} `{value}`; expected one of {}", names.join(", ")))
    })
}

impl RunSpec {
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| usage(format!("malformed run spec: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn kind(&self) -> Result<BenchmarkKind, CliError> {
        self.benchmark.parse().map_err(|e: ttmfg::Error| usage(e.to_string()))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.benchmark.clone())
    }

    pub fn is_long(&self) -> bool {
        self.long.unwrap_or(false)
    }

    /// Dimensions to run, in file order.
    pub fn dimensions(&self) -> Result<Vec<usize>, CliError> {
        match (&self.dim, &self.dims) {
            (Some(_), Some(_)) => Err(usage("give either `dim` or `dims`, not both")),
            (_, Some(ds)) if ds.is_empty() => Err(usage("`dims` is empty")),
            (_, Some(ds)) => Ok(ds.clone()),
            (Some(d), None) => Ok(vec![*d]),
            (None, None) => Ok(vec![BenchmarkSettings::defaults(self.kind()?).dim]),
        }
    }

    /// Settings for one dimension of the spec.
    pub fn settings(&self, dim: usize) -> Result<BenchmarkSettings, CliError> {
        let mut s = BenchmarkSettings::defaults(self.kind()?);
        s.dim = dim;
        macro_rules! copy {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { s.$field = v.clone(); })*
            };
        }
        copy!(
            viscosity, steps, value_degree, density_degree, value_rank, density_rank, max_sweeps, beta,
            gamma, initial_mean, initial_variance, stop_tol, max_iterations, log_density, periodic, seed,
            validation_points, grid_points, conservation
        );
        if self.horizon.is_some() {
            s.horizon = self.horizon;
        }
        if self.half_width.is_some() {
            s.half_width = self.half_width;
        }
        if let Some(r) = &self.rule {
            s.rule = r.parse::<RuleKind>().map_err(|e| usage(e.to_string()))?;
        }
        if let Some(o) = &self.order {
            s.order = Some(pick(
                o,
                "order",
                &[("euler", FlowOrder::Euler1), ("crank-nicolson", FlowOrder::CrankNicolson2)],
            )?);
        }
        if let Some(v) = &self.smoothing {
            s.smoothing = parse_smoothing(v)?;
        }
        if let Some(v) = &self.drift_sign {
            s.drift_sign = pick(v, "drift_sign", &[("negative", DriftSign::Negative), ("positive", DriftSign::Positive)])?;
        }
        if let Some(v) = &self.mode {
            s.mode = pick(v, "mode", &[("coupled", SolveMode::Coupled), ("value-only", SolveMode::ValueOnly)])?;
        }
        if let Some(v) = &self.value_extrapolation {
            s.value_extrapolation = parse_extrapolation(v)?;
        }
        if let Some(v) = &self.density_extrapolation {
            s.density_extrapolation = parse_extrapolation(v)?;
        }
        if let Some(v) = &self.mean_estimator {
            s.mean_estimator = pick(
                v,
                "mean_estimator",
                &[("box", MeanEstimator::BoxMoment), ("symmetric-window", MeanEstimator::SymmetricWindow)],
            )?;
        }
        if let Some(v) = &self.grid_interpolation {
            s.grid_interpolation = pick(
                v,
                "grid_interpolation",
                &[("cubic", GridInterpolation::Cubic), ("multilinear", GridInterpolation::Multilinear)],
            )?;
        }
        s.validate().map_err(|e| usage(e.to_string()))?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_keys() {
        let spec = RunSpec::from_str("benchmark = \"nonlocal-mfg\"\nrule = \"sl1\"\nviscosity = 1e-3\n").unwrap();
        let s = spec.settings(3).unwrap();
        assert_eq!(s.rule, RuleKind::Sl1);
        assert_eq!(s.viscosity, 1e-3);
        assert_eq!(s.steps, vec![2, 4, 8, 16]);
        assert_eq!(s.horizon, Some(0.25));
    }

    #[test]
    fn keywords_and_numbers() {
        let spec = RunSpec::from_str(
            "benchmark = \"local-mfg\"\nsmoothing = \"harmonic\"\ndensity_extrapolation = 0.25\nvalue_extrapolation = \"unlimited\"\n",
        )
        .unwrap();
        let s = spec.settings(3).unwrap();
        assert_eq!(s.smoothing, Smoothing::Harmonic);
        assert_eq!(s.density_extrapolation, Extrapolation::Margin(0.25));
        assert_eq!(s.value_extrapolation, Extrapolation::Unlimited);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(RunSpec::from_str("benchmark = \"advdiff\"\nunknown_key = 1\n").is_err());
        let spec = RunSpec::from_str("benchmark = \"advdiff\"\nsteps = []\n").unwrap();
        assert!(matches!(spec.settings(3), Err(CliError::Usage(_))));
        let spec = RunSpec::from_str("benchmark = \"heat\"\n").unwrap();
        let err = spec.settings(3).unwrap_err().to_string();
        assert!(err.contains("advdiff") && err.contains("nonlocal-mfg"), "{err}");
        let spec = RunSpec::from_str("benchmark = \"advdiff\"\ndim = 3\ndims = [3, 4]\n").unwrap();
        assert!(spec.dimensions().is_err());
    }
}
