//! Smoothed policy iteration for mean field games with semi-Lagrangian
//! steps and tensor-train value/density fields.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::benchmarks::{compute_errors, ErrorPair, ValidationSet};
use crate::cross::{self, AdaptiveSampleSet, CrossConfig, FitOutput, WarmStart};
use crate::cubature::{rule_for, RuleKind};
use crate::error::{Error, Result};
use crate::legendre::BasisSpec;
use crate::propagator::{
    self, finite_difference_divergence, FlowOrder, PointFunction, SpaceTimeFunction, StepScheme, VelocityField,
};
use crate::tt::{Extrapolation, TensorTrain};

/// Hamiltonian `H(p)` with its gradient and Legendre dual.
pub trait Hamiltonian: Send + Sync {
    fn value(&self, p: &[f64]) -> f64;
    fn gradient(&self, p: &[f64], out: &mut [f64]);
    fn lagrangian(&self, q: &[f64]) -> f64;
    /// True when `∇_p H(p) = p`, which lets blended policies collapse into
    /// a single potential.
    fn gradient_is_identity(&self) -> bool {
        false
    }
}

/// `H(p) = |p|²/2`, `L(q) = |q|²/2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct QuadraticHamiltonian;

impl Hamiltonian for QuadraticHamiltonian {
    fn value(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().map(|v| v * v).sum::<f64>()
    }
    fn gradient(&self, p: &[f64], out: &mut [f64]) {
        out.copy_from_slice(p);
    }
    fn lagrangian(&self, q: &[f64]) -> f64 {
        0.5 * q.iter().map(|v| v * v).sum::<f64>()
    }
    fn gradient_is_identity(&self) -> bool {
        true
    }
}

/// How the first moment of a box-truncated density is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeanEstimator {
    /// Normalized first moment over the whole box.
    BoxMoment,
    /// Normalized first moment over the largest window centred on the
    /// estimate that still fits in the box, iterated to a fixed point.
    /// Truncation by the box does not bias it for symmetric densities.
    SymmetricWindow,
}

/// Read access to a density for the couplings.
pub struct DensityView<'a> {
    tt: &'a TensorTrain,
    mean: Vec<f64>,
    mass: f64,
}

impl<'a> DensityView<'a> {
    pub fn new(tt: &'a TensorTrain, estimator: Option<MeanEstimator>) -> Result<Self> {
        let (mean, mass) = match estimator {
            Some(e) => density_moments(tt, e)?,
            None => (Vec::new(), f64::NAN),
        };
        Ok(Self { tt, mean, mass })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.tt.value_unchecked(x)
    }

    /// `ln m(x)`; read from the exponent when the density is in log form.
    pub fn ln_value(&self, x: &[f64]) -> f64 {
        if self.tt.is_log_form() {
            self.tt.expansion(x)
        } else {
            self.tt.value_unchecked(x).max(1e-300).ln()
        }
    }

    /// First moment, empty unless requested at construction.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn train(&self) -> &TensorTrain {
        self.tt
    }
}

/// Mean and box mass of a density under the given estimator.
pub fn density_moments(tt: &TensorTrain, estimator: MeanEstimator) -> Result<(Vec<f64>, f64)> {
    let owned;
    let tt = if tt.is_log_form() {
        let degree = tt.bases().iter().map(|b| b.degree).max().unwrap_or(2).max(24);
        let bases: Vec<BasisSpec> = tt
            .bases()
            .iter()
            .map(|b| BasisSpec::new(degree, b.half_width))
            .collect::<Result<_>>()?;
        let oracle = |x: &[f64]| tt.value_unchecked(x);
        let mut cfg = CrossConfig::uniform(tt.dim(), 2);
        cfg.max_sweeps = 4;
        owned = cross::fit(&oracle, &bases, &cfg, None)?.tt;
        &owned
    } else {
        tt
    };
    let mass = tt.moment(0, None)?;
    let d = tt.dim();
    let full: Vec<(f64, f64)> = tt.bases().iter().map(|b| (-b.half_width, b.half_width)).collect();
    let mut mean = Vec::with_capacity(d);
    for j in 0..d {
        let mut c = tt.moment(1, Some(j))? / mass;
        if estimator == MeanEstimator::SymmetricWindow {
            let l = tt.bases()[j].half_width;
            for _ in 0..200 {
                let half = l - c.abs();
                if half <= 0.0 {
                    break;
                }
                let mut bounds = full.clone();
                bounds[j] = (c - half, c + half);
                let m0 = tt.box_moment(0, None, &bounds)?;
                let m1 = tt.box_moment(1, Some(j), &bounds)?;
                let next = m1 / m0;
                let done = (next - c).abs() <= 1e-15 * (1.0 + c.abs());
                c = next;
                if done {
                    break;
                }
            }
        }
        mean.push(c);
    }
    Ok((mean, mass))
}

/// Running or terminal cost `F(x, m)`.
pub trait Coupling: Send + Sync {
    fn value(&self, x: &[f64], density: &DensityView<'_>) -> f64;
    /// Whether the cost reads the density's first moment.
    fn needs_mean(&self) -> bool {
        false
    }
}

/// Coupling from a closure, with an explicit flag for mean dependence.
pub struct FnCoupling<F> {
    pub f: F,
    pub needs_mean: bool,
}

impl<F> FnCoupling<F> {
    pub fn local(f: F) -> Self {
        Self { f, needs_mean: false }
    }
    pub fn with_mean(f: F) -> Self {
        Self { f, needs_mean: true }
    }
}

impl<F> Coupling for FnCoupling<F>
where
    F: Fn(&[f64], &DensityView<'_>) -> f64 + Send + Sync,
{
    fn value(&self, x: &[f64], density: &DensityView<'_>) -> f64 {
        (self.f)(x, density)
    }
    fn needs_mean(&self) -> bool {
        self.needs_mean
    }
}

/// Closed-form value function and density.
pub trait ExactSolution: Send + Sync {
    fn value(&self, x: &[f64], t: f64) -> f64;
    fn density(&self, x: &[f64], t: f64) -> f64;
}

pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct MfgProblem {
    pub dim: usize,
    pub half_width: f64,
    pub horizon: f64,
    pub viscosity: f64,
    pub hamiltonian: Arc<dyn Hamiltonian>,
    pub running: Arc<dyn Coupling>,
    pub terminal: Arc<dyn Coupling>,
    pub initial_density: DensityFn,
    pub policy_radius: Option<f64>,
    pub exact: Option<Arc<dyn ExactSolution>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Smoothing {
    Constant(f64),
    /// `δ_n = 2 / (n + 2)`.
    Harmonic,
}

impl Smoothing {
    pub fn weight(self, n: usize) -> f64 {
        match self {
            Smoothing::Constant(d) => d,
            Smoothing::Harmonic => 2.0 / (n as f64 + 2.0),
        }
    }
}

/// Sign linking the policy to the characteristic velocity, `b = sign · q̄`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftSign {
    Negative,
    Positive,
}

impl DriftSign {
    pub fn factor(self) -> f64 {
        match self {
            DriftSign::Negative => -1.0,
            DriftSign::Positive => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMode {
    /// Forward and backward sweeps every iteration.
    Coupled,
    /// Backward sweeps only; the density stays at the initial fit.
    ValueOnly,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub steps: usize,
    pub rule: RuleKind,
    /// Defaults to first order for SL1 and Crank–Nicolson otherwise.
    pub order: Option<FlowOrder>,
    pub smoothing: Smoothing,
    pub stop_tol: f64,
    pub max_iterations: usize,
    pub value_degree: usize,
    pub density_degree: usize,
    pub value_cross: CrossConfig,
    pub density_cross: CrossConfig,
    pub log_density: bool,
    pub drift_sign: DriftSign,
    pub value_extrapolation: Extrapolation,
    pub density_extrapolation: Extrapolation,
    pub mean_estimator: MeanEstimator,
    pub mode: SolveMode,
    pub validation_seed: u64,
    pub validation_points: usize,
    pub stop_samples: usize,
    pub density_floor: f64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl SolverConfig {
    pub fn new(dim: usize, steps: usize, rule: RuleKind) -> Self {
        Self {
            steps,
            rule,
            order: None,
            smoothing: Smoothing::Constant(1.0),
            stop_tol: 1e-5,
            max_iterations: 500,
            value_degree: 2,
            density_degree: 2,
            value_cross: CrossConfig::uniform(dim, 2),
            density_cross: CrossConfig::uniform(dim, 2),
            log_density: false,
            drift_sign: DriftSign::Negative,
            value_extrapolation: Extrapolation::default(),
            density_extrapolation: Extrapolation::default(),
            mean_estimator: MeanEstimator::BoxMoment,
            mode: SolveMode::Coupled,
            validation_seed: 2024,
            validation_points: 100_000,
            stop_samples: 4096,
            density_floor: 1e-300,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("at least one time step is required".into()));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::InvalidArgument("stop tolerance must be positive".into()));
        }
        if let Smoothing::Constant(d) = self.smoothing {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::InvalidArgument(format!("smoothing weight {d} not in (0, 1]")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be positive".into()));
        }
        Ok(())
    }

    pub fn flow_order(&self) -> FlowOrder {
        self.order.unwrap_or_else(|| StepScheme::order_for(self.rule))
    }
}

/// Policy at one time level: `q(x) = Σ_j w_j ∇_p H(∇φ_j(x))`, clamped to
/// the policy ball when a radius is set. No terms means the zero policy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub terms: Vec<(f64, TensorTrain)>,
}

impl Policy {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_potential(potential: TensorTrain) -> Self {
        Self {
            terms: vec![(1.0, potential)],
        }
    }

    /// `(1 - δ)·self + δ·new`. With `collapse` the result is merged into a
    /// single rounded potential.
    pub fn blend(&self, new: &TensorTrain, delta: f64, collapse: bool) -> Result<Policy> {
        if delta >= 1.0 {
            return Ok(Policy::from_potential(new.clone()));
        }
        let mut terms: Vec<(f64, TensorTrain)> = self
            .terms
            .iter()
            .map(|(w, phi)| (w * (1.0 - delta), phi.clone()))
            .collect();
        terms.push((delta, new.clone()));
        if !collapse {
            return Ok(Policy { terms });
        }
        let mut iter = terms.into_iter();
        let (w0, mut acc) = iter.next().expect("at least the new term");
        acc.scale(w0);
        for (w, phi) in iter {
            acc = acc.linear_combination(1.0, &phi, w)?;
        }
        Ok(Policy::from_potential(acc.round(1e-13)?))
    }
}

/// Evaluates a policy sequence as a velocity field `b_k = sign · q̄_k`.
pub struct PolicyField<'a> {
    pub policies: &'a [Policy],
    pub hamiltonian: &'a dyn Hamiltonian,
    pub radius: Option<f64>,
    pub sign: f64,
    pub dim: usize,
}

impl PolicyField<'_> {
    /// `q̄_k(x)`.
    pub fn policy(&self, x: &[f64], k: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut q = vec![0.0; self.dim];
        for (w, phi) in &self.policies[k].terms {
            let grad = phi.derivatives_unchecked(x, false).gradient;
            self.hamiltonian.gradient(&grad, &mut q);
            if let Some(r) = self.radius {
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > r {
                    let s = if n > 0.0 { r / n } else { 0.0 };
                    q.iter_mut().for_each(|v| *v *= s);
                }
            }
            for (o, v) in out.iter_mut().zip(&q) {
                *o += w * v;
            }
        }
    }

    /// `div q̄_k(x)`: blended Laplacians when the policy is a plain gradient,
    /// central differences with step `1e-5·L` otherwise.
    pub fn policy_divergence(&self, x: &[f64], k: usize) -> f64 {
        let policy = &self.policies[k];
        if self.hamiltonian.gradient_is_identity() && self.radius.is_none() {
            return policy
                .terms
                .iter()
                .map(|(w, phi)| w * phi.derivatives_unchecked(x, true).laplacian)
                .sum();
        }
        let h = 1e-5
            * policy
                .terms
                .first()
                .map(|(_, p)| p.bases()[0].half_width)
                .unwrap_or(1.0);
        let unsigned = PolicyField {
            policies: self.policies,
            hamiltonian: self.hamiltonian,
            radius: self.radius,
            sign: 1.0,
            dim: self.dim,
        };
        finite_difference_divergence(&unsigned, x, k, h)
    }
}

impl VelocityField for PolicyField<'_> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn velocity(&self, x: &[f64], k: usize, out: &mut [f64]) {
        self.policy(x, k, out);
        if self.sign != 1.0 {
            out.iter_mut().for_each(|v| *v *= self.sign);
        }
    }
    fn divergence(&self, x: &[f64], k: usize) -> Option<f64> {
        Some(self.sign * self.policy_divergence(x, k))
    }
}

/// Reaction `-div b` of the density transport.
struct TransportReaction<'a> {
    field: &'a PolicyField<'a>,
}

impl SpaceTimeFunction for TransportReaction<'_> {
    fn value(&self, x: &[f64], k: usize) -> f64 {
        -self.field.sign * self.field.policy_divergence(x, k)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual: Option<f64>,
    pub value_sweeps: usize,
    pub density_sweeps: usize,
    pub fit_warnings: usize,
    pub worst_holdout: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverState {
    pub iteration: usize,
    pub values: Vec<TensorTrain>,
    pub densities: Vec<TensorTrain>,
    pub policies: Vec<Policy>,
    pub history: Vec<IterationRecord>,
    pub value_samples: Vec<Option<AdaptiveSampleSet>>,
    pub density_samples: Vec<Option<AdaptiveSampleSet>>,
}

impl SolverState {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinalErrors {
    /// Value function at `t = 0`.
    pub value: ErrorPair,
    /// Density at `t = T`.
    pub density: Option<ErrorPair>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub final_errors: Option<FinalErrors>,
    pub seconds: f64,
}

struct Fitted {
    tt: TensorTrain,
    samples: AdaptiveSampleSet,
    sweeps: usize,
    warning: bool,
    holdout: f64,
}

fn refit<F>(
    oracle: &F,
    bases: &[BasisSpec],
    cfg: &CrossConfig,
    warm_tt: Option<&TensorTrain>,
    warm_samples: Option<&AdaptiveSampleSet>,
    log_form: bool,
    extrapolation: Extrapolation,
) -> Result<Fitted>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let warm = warm_tt.map(|tt| WarmStart {
        tt,
        samples: warm_samples,
    });
    let FitOutput {
        tt,
        samples,
        diagnostics,
    } = cross::fit(oracle, bases, cfg, warm)?;
    Ok(Fitted {
        tt: tt.with_log_form(log_form).with_extrapolation(extrapolation),
        samples,
        sweeps: diagnostics.sweeps,
        warning: diagnostics.warning,
        holdout: diagnostics.holdout_residual,
    })
}

/// Semi-Lagrangian policy-iteration solver.
pub struct Solver<'p> {
    pub problem: &'p MfgProblem,
    pub config: SolverConfig,
    scheme: StepScheme,
    value_bases: Vec<BasisSpec>,
    density_bases: Vec<BasisSpec>,
    stop_points: Vec<Vec<f64>>,
    collapse: bool,
}

#[derive(Default)]
struct SweepStats {
    sweeps: usize,
    warnings: usize,
    worst_holdout: f64,
}

impl SweepStats {
    fn add(&mut self, f: &Fitted) {
        self.sweeps += f.sweeps;
        self.warnings += usize::from(f.warning);
        self.worst_holdout = self.worst_holdout.max(f.holdout);
    }
}

impl<'p> Solver<'p> {
    pub fn new(problem: &'p MfgProblem, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let d = problem.dim;
        let dt = problem.horizon / config.steps as f64;
        let rule = rule_for(config.rule, d, problem.viscosity, dt)?;
        let scheme = StepScheme::new(config.flow_order(), rule, dt)?;
        let value_bases = TensorTrain::uniform_bases(d, config.value_degree, problem.half_width)?;
        let density_bases = TensorTrain::uniform_bases(d, config.density_degree, problem.half_width)?;
        let stop_points = ValidationSet::new(d, problem.half_width, config.stop_samples, config.validation_seed ^ 0x570b)
            .points()
            .map(<[f64]>::to_vec)
            .collect();
        let collapse = problem.hamiltonian.gradient_is_identity() && problem.policy_radius.is_none();
        Ok(Self {
            problem,
            config,
            scheme,
            value_bases,
            density_bases,
            stop_points,
            collapse,
        })
    }

    pub fn scheme(&self) -> &StepScheme {
        &self.scheme
    }

    fn field<'a>(&'a self, policies: &'a [Policy]) -> PolicyField<'a> {
        PolicyField {
            policies,
            hamiltonian: self.problem.hamiltonian.as_ref(),
            radius: self.problem.policy_radius,
            sign: self.config.drift_sign.factor(),
            dim: self.problem.dim,
        }
    }

    fn density_oracle_value(&self, v: f64) -> f64 {
        if self.config.log_density {
            v.max(self.config.density_floor).ln()
        } else {
            v
        }
    }

    fn fit_initial_density(&self) -> Result<Fitted> {
        let m0 = self.problem.initial_density.clone();
        let oracle = |x: &[f64]| self.density_oracle_value(m0(x));
        refit(
            &oracle,
            &self.density_bases,
            &self.config.density_cross,
            None,
            None,
            self.config.log_density,
            self.config.density_extrapolation,
        )
    }

    fn mean_estimator(&self, coupling: &dyn Coupling) -> Option<MeanEstimator> {
        coupling.needs_mean().then_some(self.config.mean_estimator)
    }

    fn fit_terminal(&self, density: &TensorTrain, warm: Option<(&TensorTrain, Option<&AdaptiveSampleSet>)>) -> Result<Fitted> {
        let view = DensityView::new(density, self.mean_estimator(self.problem.terminal.as_ref()))?;
        let g = self.problem.terminal.clone();
        let oracle = |x: &[f64]| g.value(x, &view);
        refit(
            &oracle,
            &self.value_bases,
            &self.config.value_cross,
            warm.map(|w| w.0),
            warm.and_then(|w| w.1),
            false,
            self.config.value_extrapolation,
        )
    }

    /// Initial state: fitted `m_0` at every level and the policy
    /// `∇_p H(∇G)` with `G` evaluated at `m_0`.
    pub fn initial_state(&self) -> Result<SolverState> {
        let n = self.config.steps;
        let m0 = self.fit_initial_density()?;
        let g = self.fit_terminal(&m0.tt, None)?;
        let policy = Policy::from_potential(g.tt.clone());
        Ok(SolverState {
            iteration: 0,
            values: vec![g.tt.clone(); n + 1],
            densities: vec![m0.tt.clone(); n + 1],
            policies: vec![policy; n + 1],
            history: Vec::new(),
            value_samples: vec![Some(g.samples); n + 1],
            density_samples: vec![Some(m0.samples); n + 1],
        })
    }

    fn forward_sweep(&self, state: &mut SolverState, stats: &mut SweepStats) -> Result<()> {
        let field = self.field(&state.policies);
        let reaction = TransportReaction { field: &field };
        for k in 0..self.config.steps {
            let prev = state.densities[k].clone();
            let prev_fn = |x: &[f64]| prev.value_unchecked(x);
            let step = propagator::fp_step(&prev_fn, &field, Some(&reaction), &self.scheme, k);
            let oracle = |x: &[f64]| self.density_oracle_value(step.value(x));
            let fitted = refit(
                &oracle,
                &self.density_bases,
                &self.config.density_cross,
                Some(&state.densities[k + 1]),
                state.density_samples[k + 1].as_ref(),
                self.config.log_density,
                self.config.density_extrapolation,
            )
            .map_err(|e| e.at_step(k + 1))?;
            stats.add(&fitted);
            state.densities[k + 1] = fitted.tt;
            state.density_samples[k + 1] = Some(fitted.samples);
        }
        Ok(())
    }

    fn backward_sweep(&self, state: &mut SolverState, stats: &mut SweepStats) -> Result<()> {
        let n = self.config.steps;
        let terminal = self
            .fit_terminal(
                &state.densities[n],
                Some((&state.values[n], state.value_samples[n].as_ref())),
            )
            .map_err(|e| e.at_step(n))?;
        stats.add(&terminal);
        state.values[n] = terminal.tt;
        state.value_samples[n] = Some(terminal.samples);

        let field = self.field(&state.policies);
        let estimator = self.mean_estimator(self.problem.running.as_ref());
        let views = (0..=n)
            .map(|k| DensityView::new(&state.densities[k], estimator))
            .collect::<Result<Vec<_>>>()?;
        let running = self.problem.running.clone();
        let lagrangian = self.problem.hamiltonian.clone();
        let d = self.problem.dim;
        let source = |x: &[f64], k: usize| {
            let mut q = vec![0.0; d];
            field.policy(x, k, &mut q);
            lagrangian.lagrangian(&q) + running.value(x, &views[k])
        };
        let mut new_values = state.values.clone();
        for k in (0..n).rev() {
            let next = new_values[k + 1].clone();
            let next_fn = |x: &[f64]| next.value_unchecked(x);
            let step = propagator::hjb_step(&next_fn, &source, &field, &self.scheme, k);
            let oracle = |x: &[f64]| step.value(x);
            let fitted = refit(
                &oracle,
                &self.value_bases,
                &self.config.value_cross,
                Some(&state.values[k]),
                state.value_samples[k].as_ref(),
                false,
                self.config.value_extrapolation,
            )
            .map_err(|e| e.at_step(k))?;
            stats.add(&fitted);
            new_values[k] = fitted.tt;
            state.value_samples[k] = Some(fitted.samples);
        }
        state.values = new_values;
        Ok(())
    }

    /// Blends `∇_p H(∇u_k)` into the stored policies with weight `δ`.
    fn update_policies(&self, state: &mut SolverState, delta: f64) -> Result<()> {
        for k in 0..=self.config.steps {
            state.policies[k] = state.policies[k].blend(&state.values[k], delta, self.collapse)?;
        }
        Ok(())
    }

    fn l2_difference(&self, a: &TensorTrain, b: &TensorTrain) -> f64 {
        let vol = (2.0 * self.problem.half_width).powi(self.problem.dim as i32);
        let pts = &self.stop_points;
        let sq = crate::exec::map_indexed(pts.len(), |i| {
            let e = a.value_unchecked(&pts[i]) - b.value_unchecked(&pts[i]);
            e * e
        });
        (vol * sq.iter().sum::<f64>() / pts.len() as f64).sqrt()
    }

    /// Monte-Carlo `L²` change of `m_N` and `u_0` between iterates.
    pub fn stop_residual(&self, current: &SolverState, previous: &SolverState) -> f64 {
        let n = self.config.steps;
        let u = self.l2_difference(&current.values[0], &previous.values[0]);
        match self.config.mode {
            SolveMode::Coupled => u + self.l2_difference(&current.densities[n], &previous.densities[n]),
            SolveMode::ValueOnly => u,
        }
    }

    pub fn solve(&self) -> Result<(SolverState, SolveReport)> {
        let state = self.initial_state()?;
        self.resume(state)
    }

    /// Continues iterating from a stored state.
    pub fn resume(&self, mut state: SolverState) -> Result<(SolverState, SolveReport)> {
        let started = Instant::now();
        let mut converged = false;
        let mut previous: Option<SolverState> = None;
        while state.iteration < self.config.max_iterations {
            let t0 = Instant::now();
            let mut stats = SweepStats::default();
            let mut density_stats = SweepStats::default();
            if self.config.mode == SolveMode::Coupled {
                self.forward_sweep(&mut state, &mut density_stats)?;
            }
            self.backward_sweep(&mut state, &mut stats)?;
            let residual = previous.as_ref().map(|p| self.stop_residual(&state, p));
            state.history.push(IterationRecord {
                iteration: state.iteration,
                residual,
                value_sweeps: stats.sweeps,
                density_sweeps: density_stats.sweeps,
                fit_warnings: stats.warnings + density_stats.warnings,
                worst_holdout: stats.worst_holdout.max(density_stats.worst_holdout),
                seconds: t0.elapsed().as_secs_f64(),
            });
            if let Some(dir) = &self.config.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                state.save(&dir.join("checkpoint.json"))?;
            }
            if residual.is_some_and(|r| r <= self.config.stop_tol) {
                converged = true;
                break;
            }
            previous = Some(state.clone());
            let delta = self.config.smoothing.weight(state.iteration);
            self.update_policies(&mut state, delta)?;
            state.iteration += 1;
        }
        let seconds = started.elapsed().as_secs_f64();
        let final_errors = self.final_errors(&state)?;
        let report = SolveReport {
            converged,
            iterations: state.history.len(),
            history: state.history.clone(),
            final_errors,
            seconds,
        };
        Ok((state, report))
    }

    fn final_errors(&self, state: &SolverState) -> Result<Option<FinalErrors>> {
        let Some(exact) = &self.problem.exact else {
            return Ok(None);
        };
        let vset = ValidationSet::new(
            self.problem.dim,
            self.problem.half_width,
            self.config.validation_points,
            self.config.validation_seed,
        );
        let u0 = &state.values[0];
        let value = compute_errors(&|x: &[f64]| u0.value_unchecked(x), &|x: &[f64]| exact.value(x, 0.0), &vset)?;
        let density = if self.config.mode == SolveMode::Coupled {
            let mn = &state.densities[self.config.steps];
            let t = self.problem.horizon;
            Some(compute_errors(
                &|x: &[f64]| mn.value_unchecked(x),
                &|x: &[f64]| exact.density(x, t),
                &vset,
            )?)
        } else {
            None
        };
        Ok(Some(FinalErrors { value, density }))
    }
}

/// Convenience wrapper around [`Solver`].
pub fn solve(problem: &MfgProblem, config: SolverConfig) -> Result<(SolverState, SolveReport)> {
    Solver::new(problem, config)?.solve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quad_potential(d: usize, l: f64, alpha: f64) -> TensorTrain {
        let oracle = |x: &[f64]| 0.5 * alpha * x.iter().map(|v| v * v).sum::<f64>();
        let bases = TensorTrain::uniform_bases(d, 2, l).unwrap();
        cross::fit(&oracle, &bases, &CrossConfig::uniform(d, 2), None).unwrap().tt
    }

    fn zero_problem(d: usize) -> MfgProblem {
        MfgProblem {
            dim: d,
            half_width: 1.0,
            horizon: 0.5,
            viscosity: 0.1,
            hamiltonian: Arc::new(QuadraticHamiltonian),
            running: Arc::new(FnCoupling::local(|_: &[f64], _: &DensityView<'_>| 0.0)),
            terminal: Arc::new(FnCoupling::local(|_: &[f64], _: &DensityView<'_>| 0.0)),
            initial_density: Arc::new(|x: &[f64]| 1.0 + 0.2 * x[0]),
            policy_radius: None,
            exact: None,
        }
    }

    #[test]
    fn legendre_dual_of_quadratic() {
        let h = QuadraticHamiltonian;
        let p = [0.3, -1.2, 0.7];
        // sup_q (p·q - H(q)) over a sampled neighbourhood is attained at q = p.
        let mut best = f64::NEG_INFINITY;
        for i in -50..=50 {
            let q: Vec<f64> = p.iter().map(|v| v * (1.0 + i as f64 * 1e-3)).collect();
            let val = p.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() - h.value(&q);
            best = best.max(val);
        }
        assert_abs_diff_eq!(best, h.lagrangian(&p), epsilon = 1e-6);
    }

    #[test]
    fn policy_blending() {
        let phi = quad_potential(2, 1.0, 2.0);
        let zero = Policy::zero();
        let ham = QuadraticHamiltonian;
        let one = zero.blend(&phi, 1.0, true).unwrap();
        let small = zero.blend(&phi, 0.01, true).unwrap();
        let policies = [one.clone(), small];
        let field = PolicyField {
            policies: &policies,
            hamiltonian: &ham,
            radius: None,
            sign: 1.0,
            dim: 2,
        };
        let mut q = [0.0; 2];
        field.policy(&[0.3, -0.4], 0, &mut q);
        assert_abs_diff_eq!(q[0], 0.6, epsilon = 1e-12);
        field.policy(&[0.3, -0.4], 1, &mut q);
        assert_abs_diff_eq!(q[1], -0.008, epsilon = 1e-12);
        assert_abs_diff_eq!(field.policy_divergence(&[0.1, 0.2], 0), 4.0, epsilon = 1e-10);

        // Convexity of the blend, with and without collapsing.
        let other = quad_potential(2, 1.0, -1.0);
        for collapse in [true, false] {
            let blended = one.blend(&other, 0.3, collapse).unwrap();
            let ps = [one.clone(), Policy::from_potential(other.clone()), blended];
            let f = PolicyField {
                policies: &ps,
                hamiltonian: &ham,
                radius: None,
                sign: 1.0,
                dim: 2,
            };
            let x = [0.5, -0.25];
            let (mut a, mut b, mut c) = ([0.0; 2], [0.0; 2], [0.0; 2]);
            f.policy(&x, 0, &mut a);
            f.policy(&x, 1, &mut b);
            f.policy(&x, 2, &mut c);
            for i in 0..2 {
                assert_abs_diff_eq!(c[i], 0.7 * a[i] + 0.3 * b[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn clamp_to_ball() {
        let phi = quad_potential(2, 1.0, 2.0);
        let ham = QuadraticHamiltonian;
        let ps = [Policy::from_potential(phi)];
        let f = PolicyField {
            policies: &ps,
            hamiltonian: &ham,
            radius: Some(0.0),
            sign: -1.0,
            dim: 2,
        };
        let mut q = [1.0; 2];
        f.velocity(&[0.5, 0.5], 0, &mut q);
        assert_eq!(q, [0.0, 0.0]);
    }

    #[test]
    fn harmonic_schedule() {
        assert_eq!(Smoothing::Harmonic.weight(0), 1.0);
        assert_eq!(Smoothing::Constant(0.01).weight(7), 0.01);
    }

    #[test]
    fn zero_costs_give_zero_value_and_pure_diffusion() {
        let problem = zero_problem(2);
        let mut cfg = SolverConfig::new(2, 4, RuleKind::Sl2p);
        cfg.density_degree = 3;
        cfg.density_extrapolation = Extrapolation::Unlimited;
        cfg.validation_points = 1000;
        let (state, report) = solve(&problem, cfg).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 2);
        for u in &state.values {
            assert!(u.evaluate(&[0.3, -0.2]).unwrap().abs() < 1e-12);
        }
        // A linear density is invariant under pure diffusion.
        let m = state.densities[4].evaluate(&[0.5, 0.1]).unwrap();
        assert_abs_diff_eq!(m, 1.1, epsilon = 1e-10);
    }

    #[test]
    fn unit_source_integrates_to_horizon() {
        let mut problem = zero_problem(2);
        problem.viscosity = 0.0;
        problem.running = Arc::new(FnCoupling::local(|_: &[f64], _: &DensityView<'_>| 1.0));
        let mut cfg = SolverConfig::new(2, 5, RuleKind::Sl2p);
        cfg.mode = SolveMode::ValueOnly;
        cfg.validation_points = 100;
        let (state, _) = solve(&problem, cfg).unwrap();
        assert_abs_diff_eq!(state.values[0].evaluate(&[0.1, 0.9]).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn identity_flow_without_policy() {
        let mut problem = zero_problem(2);
        problem.viscosity = 0.0;
        problem.initial_density = Arc::new(|x: &[f64]| (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp());
        let mut cfg = SolverConfig::new(2, 3, RuleKind::Sl2p);
        cfg.density_degree = 12;
        cfg.max_iterations = 1;
        cfg.validation_points = 100;
        let solver = Solver::new(&problem, cfg).unwrap();
        let (state, _) = solver.solve().unwrap();
        for k in 1..=3 {
            let x = [0.3, -0.7];
            assert_abs_diff_eq!(
                state.densities[k].evaluate(&x).unwrap(),
                state.densities[0].evaluate(&x).unwrap(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let problem = zero_problem(2);
        let dir = std::env::temp_dir().join(format!("ttmfg-ckpt-{}", std::process::id()));
        let mut cfg = SolverConfig::new(2, 2, RuleKind::Sl2p);
        cfg.checkpoint_dir = Some(dir.clone());
        cfg.validation_points = 100;
        let solver = Solver::new(&problem, cfg).unwrap();
        let (state, _) = solver.solve().unwrap();
        let loaded = SolverState::load(&dir.join("checkpoint.json")).unwrap();
        assert_eq!(loaded.values, state.values);
        let (_, report) = solver.resume(loaded).unwrap();
        assert!(report.converged);
        std::fs::remove_dir_all(dir).ok();
    }
}
