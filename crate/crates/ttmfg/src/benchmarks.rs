//! Benchmark problems with closed-form solutions, error metrics and the
//! analyses used to build convergence tables.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cross::{self, CrossConfig, WarmStart};
use crate::cubature::{rule_for, RuleKind};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::legendre::gauss_legendre;
use crate::propagator::{self, ConstantVelocity, FlowOrder, PeriodicWrap, PointFunction, StepScheme};
use crate::spi::{
    self, DensityView, DriftSign, ExactSolution, FnCoupling, MeanEstimator, MfgProblem,
    QuadraticHamiltonian, Smoothing, SolveMode, SolverConfig,
};
use crate::tt::{Extrapolation, TensorTrain};

pub const DEFAULT_VALIDATION_POINTS: usize = 100_000;

/// Points drawn uniformly from `[-L, L]^d` with a seeded generator.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationSet {
    dim: usize,
    half_width: f64,
    coords: Vec<f64>,
}

impl ValidationSet {
    pub fn new(dim: usize, half_width: f64, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..dim * count).map(|_| rng.gen_range(-half_width..half_width)).collect();
        Self {
            dim,
            half_width,
            coords,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }
}

/// Relative discrete `L²` and uniform errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub l2: f64,
    /// `None` when the exact solution vanishes on the whole set.
    pub linf: Option<f64>,
    /// Points left out of the uniform error because `|exact|` was below
    /// `1e-9·max|exact|`.
    pub guarded: usize,
    /// True when `l2` is an absolute norm because the exact values are all zero.
    pub absolute: bool,
}

pub const LINF_GUARD: f64 = 1e-9;

/// Compares `numeric` to `exact` on every point of `set`.
pub fn compute_errors(
    numeric: &(dyn Fn(&[f64]) -> f64 + Sync),
    exact: &(dyn Fn(&[f64]) -> f64 + Sync),
    set: &ValidationSet,
) -> Result<ErrorPair> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    let pairs = map_indexed(set.len(), |i| {
        let x = set.point(i);
        (numeric(x), exact(x))
    });
    if let Some(i) = pairs.iter().position(|(h, e)| !h.is_finite() || !e.is_finite()) {
        return Err(Error::NonFinite {
            point: set.point(i).to_vec(),
        });
    }
    let mut diff2 = 0.0;
    let mut exact2 = 0.0;
    let mut scale = 0.0f64;
    for &(h, e) in &pairs {
        diff2 += (h - e) * (h - e);
        exact2 += e * e;
        scale = scale.max(e.abs());
    }
    if scale == 0.0 {
        return Ok(ErrorPair {
            l2: diff2.sqrt(),
            linf: None,
            guarded: pairs.len(),
            absolute: true,
        });
    }
    let floor = LINF_GUARD * scale;
    let mut linf = 0.0f64;
    let mut guarded = 0;
    for &(h, e) in &pairs {
        if e.abs() < floor {
            guarded += 1;
        } else {
            linf = linf.max((h - e).abs() / e.abs());
        }
    }
    Ok(ErrorPair {
        l2: (diff2 / exact2).sqrt(),
        linf: Some(linf),
        guarded,
        absolute: false,
    })
}

/// `log2(e_i / e_{i+1})` for successive halvings; `None` where an error is
/// not positive.
pub fn convergence_order(errors: &[f64]) -> Result<Vec<Option<f64>>> {
    if errors.len() < 2 {
        return Err(Error::InvalidArgument("at least two errors are needed for an order".into()));
    }
    Ok(errors
        .windows(2)
        .map(|w| (w[0] > 0.0 && w[1] > 0.0).then(|| (w[0] / w[1]).log2()))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub a: f64,
    pub b: f64,
    /// Coefficient of determination in the transformed coordinates;
    /// `None` when the transformed data have no variance.
    pub r2: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// `C(d) = a·exp(b·d)`.
    pub exponential: ModelFit,
    /// `C(d) = a·d^b`.
    pub power_law: ModelFit,
}

impl ScalingFit {
    pub fn prefers_power_law(&self) -> bool {
        match (self.power_law.r2, self.exponential.r2) {
            (Some(p), Some(e)) => p > e,
            _ => false,
        }
    }
}

fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, Option<f64>)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("abscissae have no spread".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let tss: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = (tss > 0.0).then(|| 1.0 - rss / tss);
    Ok((intercept, slope, r2))
}

/// Exponential and power-law fits of run times against dimension.
pub fn fit_scaling(dims: &[f64], times: &[f64]) -> Result<ScalingFit> {
    if dims.len() != times.len() {
        return Err(Error::Shape(format!("{} dimensions for {} timings", dims.len(), times.len())));
    }
    if dims.len() < 3 {
        return Err(Error::InvalidArgument("at least three (d, time) pairs are needed".into()));
    }
    if times.iter().any(|&t| !(t > 0.0)) || dims.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument("dimensions and times must be positive".into()));
    }
    let log_t: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let log_d: Vec<f64> = dims.iter().map(|d| d.ln()).collect();
    let (ia, ib, ir) = least_squares(dims, &log_t)?;
    let (pa, pb, pr) = least_squares(&log_d, &log_t)?;
    Ok(ScalingFit {
        exponential: ModelFit {
            a: ia.exp(),
            b: ib,
            r2: ir,
        },
        power_law: ModelFit {
            a: pa.exp(),
            b: pb,
            r2: pr,
        },
    })
}

// ---------------------------------------------------------------------------
// Periodic transport problems
// ---------------------------------------------------------------------------

/// `m(x, t) = offset + sin(π Σ (x_i - t - s_i)) e^{-νπ²d t}` on `[-1, 1]^d`,
/// transported with unit velocity along every axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportProblem {
    pub dim: usize,
    pub viscosity: f64,
    pub offset: f64,
    pub shifts: Vec<f64>,
    pub horizon: f64,
}

impl TransportProblem {
    pub fn half_width(&self) -> f64 {
        1.0
    }

    pub fn density(&self, x: &[f64], t: f64) -> f64 {
        let phase: f64 = x.iter().zip(&self.shifts).map(|(xi, s)| xi - t - s).sum();
        let d = self.dim as f64;
        self.offset + (std::f64::consts::PI * phase).sin() * (-self.viscosity * std::f64::consts::PI.powi(2) * d * t).exp()
    }
}

/// Horizon at which diffusion halves the oscillation amplitude.
pub fn half_amplitude_time(dim: usize, viscosity: f64) -> f64 {
    std::f64::consts::LN_2 / (dim as f64 * viscosity * std::f64::consts::PI.powi(2))
}

pub fn advection_diffusion_problem(dim: usize, viscosity: f64) -> Result<TransportProblem> {
    if dim == 0 || !(viscosity > 0.0) {
        return Err(Error::InvalidArgument("need d ≥ 1 and ν > 0".into()));
    }
    Ok(TransportProblem {
        dim,
        viscosity,
        offset: 2.0,
        shifts: (0..dim).map(|i| i as f64 / dim as f64).collect(),
        horizon: half_amplitude_time(dim, viscosity),
    })
}

/// Variant whose final-time minimum is exactly zero.
pub fn positivity_problem(dim: usize, viscosity: f64) -> Result<TransportProblem> {
    let mut p = advection_diffusion_problem(dim, viscosity)?;
    p.offset = 0.5;
    p.shifts = vec![0.0; dim];
    Ok(p)
}

/// Points `(s_k, …, s_k)`, `s_k = T + k/4 - 1/16`, `k = -4..=3`, where the
/// final-time exact density of [`positivity_problem`] vanishes.
pub fn positivity_points(problem: &TransportProblem) -> Vec<Vec<f64>> {
    (-4..=3)
        .map(|k| {
            let s = problem.horizon + k as f64 / 4.0 - 1.0 / 16.0;
            vec![s; problem.dim]
        })
        .collect()
}

pub fn positivity_probe(density: &dyn PointFunction, points: &[Vec<f64>]) -> f64 {
    points.iter().map(|x| density.value(x)).fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug)]
pub struct TransportSettings {
    pub rule: RuleKind,
    pub steps: usize,
    pub degree: usize,
    pub rank: usize,
    pub periodic: bool,
    pub extrapolation: Extrapolation,
    pub max_sweeps: usize,
}

#[derive(Clone, Debug)]
pub struct TransportRun {
    pub density: TensorTrain,
    pub errors: ErrorPair,
    pub probe_min: Option<f64>,
    pub fit_warnings: usize,
    pub seconds: f64,
}

/// Forward-only run of a transport problem.
pub fn run_transport(
    problem: &TransportProblem,
    settings: &TransportSettings,
    validation: &ValidationSet,
    probe_points: Option<&[Vec<f64>]>,
) -> Result<TransportRun> {
    let started = Instant::now();
    let d = problem.dim;
    let dt = problem.horizon / settings.steps as f64;
    let rule = rule_for(settings.rule, d, problem.viscosity, dt)?;
    let scheme = StepScheme::new(StepScheme::order_for(settings.rule), rule, dt)?;
    let bases = TensorTrain::uniform_bases(d, settings.degree, problem.half_width())?;
    let mut cfg = CrossConfig::uniform(d, settings.rank);
    cfg.max_sweeps = settings.max_sweeps;
    let initial = |x: &[f64]| problem.density(x, 0.0);
    let mut current = cross::fit(&initial, &bases, &cfg, None)?;
    let mut warnings = usize::from(current.diagnostics.warning);
    let velocity = ConstantVelocity(vec![1.0; d]);
    for k in 0..settings.steps {
        let prev = current.tt.clone().with_extrapolation(settings.extrapolation);
        let prev_fn = |x: &[f64]| prev.value_unchecked(x);
        let wrapped = PeriodicWrap {
            inner: &prev_fn,
            half_width: problem.half_width(),
        };
        let source: &dyn PointFunction = if settings.periodic { &wrapped } else { &prev_fn };
        let step = propagator::fp_step(source, &velocity, None, &scheme, k);
        let oracle = |x: &[f64]| step.value(x);
        let warm = WarmStart {
            tt: &current.tt,
            samples: Some(&current.samples),
        };
        current = cross::fit(&oracle, &bases, &cfg, Some(warm)).map_err(|e| e.at_step(k + 1))?;
        warnings += usize::from(current.diagnostics.warning);
    }
    let density = current.tt.with_extrapolation(settings.extrapolation);
    let t = problem.horizon;
    let errors = compute_errors(
        &|x: &[f64]| density.value_unchecked(x),
        &|x: &[f64]| problem.density(x, t),
        validation,
    )?;
    let probe_min = probe_points.map(|pts| positivity_probe(&|x: &[f64]| density.value_unchecked(x), pts));
    Ok(TransportRun {
        density,
        errors,
        probe_min,
        fit_warnings: warnings,
        seconds: started.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Local MFG with a stationary Gaussian
// ---------------------------------------------------------------------------

/// Stationary solution `u = α|x|²/2 - C t`, `m = (α/2πν)^{d/2} e^{-α|x|²/2ν}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalExact {
    pub dim: usize,
    pub viscosity: f64,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    /// `C = νdα + (γd/2) ln(α/2πν)`.
    pub decay: f64,
}

impl LocalExact {
    pub fn new(dim: usize, viscosity: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(viscosity > 0.0) {
            return Err(Error::InvalidArgument("the local problem needs ν > 0".into()));
        }
        let disc = gamma * gamma + 4.0 * viscosity * viscosity * beta;
        if disc < 0.0 {
            return Err(Error::InvalidArgument(format!("γ² + 4ν²β = {disc} is negative")));
        }
        let alpha = (-gamma + disc.sqrt()) / (2.0 * viscosity);
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("α = {alpha} must be positive")));
        }
        let d = dim as f64;
        let decay =
            viscosity * d * alpha + 0.5 * gamma * d * (alpha / (2.0 * std::f64::consts::PI * viscosity)).ln();
        Ok(Self {
            dim,
            viscosity,
            gamma,
            beta,
            alpha,
            decay,
        })
    }

    pub fn ln_density(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        0.5 * self.dim as f64 * (self.alpha / (2.0 * std::f64::consts::PI * self.viscosity)).ln()
            - self.alpha * r2 / (2.0 * self.viscosity)
    }
}

impl ExactSolution for LocalExact {
    fn value(&self, x: &[f64], t: f64) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        0.5 * self.alpha * r2 - self.decay * t
    }
    fn density(&self, x: &[f64], _t: f64) -> f64 {
        self.ln_density(x).exp()
    }
}

pub fn local_mfg_problem(
    dim: usize,
    viscosity: f64,
    beta: f64,
    gamma: f64,
    half_width: f64,
    horizon: f64,
) -> Result<(MfgProblem, LocalExact)> {
    let exact = LocalExact::new(dim, viscosity, beta, gamma)?;
    let running = FnCoupling::local(move |x: &[f64], m: &DensityView<'_>| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let log_term = if gamma == 0.0 { 0.0 } else { gamma * m.ln_value(x) };
        log_term + 0.5 * beta * r2
    });
    let terminal = FnCoupling::local(move |x: &[f64], _: &DensityView<'_>| exact.value(x, horizon));
    let problem = MfgProblem {
        dim,
        half_width,
        horizon,
        viscosity,
        hamiltonian: Arc::new(QuadraticHamiltonian),
        running: Arc::new(running),
        terminal: Arc::new(terminal),
        initial_density: Arc::new(move |x: &[f64]| exact.density(x, 0.0)),
        policy_radius: None,
        exact: Some(Arc::new(exact)),
    };
    Ok((problem, exact))
}

// ---------------------------------------------------------------------------
// Non-local MFG with a mean-field attraction
// ---------------------------------------------------------------------------

/// `u = ½ tanh(T-t)|x-μ₀|² + νd ln cosh(T-t)` with a Gaussian density of
/// mean `μ₀` and diagonal covariance `Σ(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlocalExact {
    pub dim: usize,
    pub viscosity: f64,
    pub horizon: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl NonlocalExact {
    /// Diagonal covariance entry `i` at time `t`.
    pub fn covariance(&self, i: usize, t: f64) -> f64 {
        let tau = self.horizon - t;
        let ch = tau.cosh();
        self.variance[i] * ch * ch / self.horizon.cosh().powi(2)
            + 2.0 * self.viscosity * ch * ch * (self.horizon.tanh() - tau.tanh())
    }

    /// Mass and first moments of the exact density restricted to `[-L, L]^d`.
    pub fn box_moments(&self, half_width: f64, t: f64) -> (f64, Vec<f64>) {
        let (nodes, weights) = gauss_legendre(200);
        let axis: Vec<(f64, f64)> = (0..self.dim)
            .map(|i| {
                let (mu, var) = (self.mean[i], self.covariance(i, t));
                let mut m0 = 0.0;
                let mut m1 = 0.0;
                for (s, w) in nodes.iter().zip(&weights) {
                    let x = half_width * s;
                    let g = gaussian(x, mu, var) * w * half_width;
                    m0 += g;
                    m1 += x * g;
                }
                (m0, m1)
            })
            .collect();
        let mass: f64 = axis.iter().map(|a| a.0).product();
        let first = (0..self.dim).map(|i| mass / axis[i].0 * axis[i].1).collect();
        (mass, first)
    }
}

fn gaussian(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

impl ExactSolution for NonlocalExact {
    fn value(&self, x: &[f64], t: f64) -> f64 {
        let tau = self.horizon - t;
        let r2: f64 = x.iter().zip(&self.mean).map(|(a, m)| (a - m) * (a - m)).sum();
        0.5 * tau.tanh() * r2 + self.viscosity * self.dim as f64 * tau.cosh().ln()
    }
    fn density(&self, x: &[f64], t: f64) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| gaussian(xi, self.mean[i], self.covariance(i, t)))
            .product()
    }
}

pub fn nonlocal_mfg_problem(
    dim: usize,
    viscosity: f64,
    mean: f64,
    variance: f64,
    horizon: f64,
    half_width: f64,
) -> Result<(MfgProblem, NonlocalExact)> {
    if !(variance > 0.0) {
        return Err(Error::InvalidArgument("initial variance must be positive".into()));
    }
    let exact = NonlocalExact {
        dim,
        viscosity,
        horizon,
        mean: vec![mean; dim],
        variance: vec![variance; dim],
    };
    let running = FnCoupling::with_mean(|x: &[f64], m: &DensityView<'_>| {
        0.5 * x.iter().zip(m.mean()).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()
    });
    let terminal = FnCoupling::local(|_: &[f64], _: &DensityView<'_>| 0.0);
    let initial = exact.clone();
    let problem = MfgProblem {
        dim,
        half_width,
        horizon,
        viscosity,
        hamiltonian: Arc::new(QuadraticHamiltonian),
        running: Arc::new(running),
        terminal: Arc::new(terminal),
        initial_density: Arc::new(move |x: &[f64]| initial.density(x, 0.0)),
        policy_radius: None,
        exact: Some(Arc::new(exact.clone())),
    };
    Ok((problem, exact))
}

/// Mass and first-moment defects of a density against reference values.
pub fn conservation_defects(density: &TensorTrain, mass: f64, first: &[f64]) -> Result<(f64, f64)> {
    let fitted;
    let tt = if density.is_log_form() {
        fitted = cross::refit_exponential(density, &CrossConfig::uniform(density.dim(), 2))?.tt;
        &fitted
    } else {
        density
    };
    let m = tt.moment(0, None)?;
    let mut sq = 0.0;
    for (j, f) in first.iter().enumerate() {
        let mj = tt.moment(1, Some(j))?;
        sq += (mj - f) * (mj - f);
    }
    Ok(((m - mass).abs(), sq.sqrt()))
}

// ---------------------------------------------------------------------------
// Grid-based reference for value-only runs
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridInterpolation {
    /// Tensor product of local four-point Lagrange stencils.
    Cubic,
    Multilinear,
}

/// Values on a uniform tensor grid over `[-L, L]^d`, `d ≤ 3`.
#[derive(Clone, Debug)]
pub struct GridFunction {
    dim: usize,
    n: usize,
    half_width: f64,
    values: Vec<f64>,
    interpolation: GridInterpolation,
}

pub const GRID_MAX_DIM: usize = 3;

impl GridFunction {
    pub fn from_fn(
        dim: usize,
        n: usize,
        half_width: f64,
        interpolation: GridInterpolation,
        f: impl Fn(&[f64]) -> f64 + Sync + Send,
    ) -> Result<Self> {
        if dim == 0 || dim > GRID_MAX_DIM {
            return Err(Error::Unsupported(format!(
                "grid reference is limited to d ≤ {GRID_MAX_DIM}, got {dim}"
            )));
        }
        let min_n = match interpolation {
            GridInterpolation::Cubic => 4,
            GridInterpolation::Multilinear => 2,
        };
        if n < min_n {
            return Err(Error::InvalidArgument(format!("need at least {min_n} points per axis")));
        }
        let mut g = Self {
            dim,
            n,
            half_width,
            values: vec![0.0; n.pow(dim as u32)],
            interpolation,
        };
        g.values = map_indexed(g.values.len(), |i| f(&g.node(i)));
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn node(&self, mut i: usize) -> Vec<f64> {
        let h = self.spacing();
        let mut x = vec![0.0; self.dim];
        for a in (0..self.dim).rev() {
            x[a] = -self.half_width + h * (i % self.n) as f64;
            i /= self.n;
        }
        x
    }

    /// Stencil start and weights (value and derivative) along one axis.
    fn stencil(&self, y: f64) -> (usize, [f64; 4], [f64; 4], usize) {
        let h = self.spacing();
        let t = (y + self.half_width) / h;
        match self.interpolation {
            GridInterpolation::Multilinear => {
                let i = (t.floor() as isize).clamp(0, self.n as isize - 2) as usize;
                let s = t - i as f64;
                (i, [1.0 - s, s, 0.0, 0.0], [-1.0 / h, 1.0 / h, 0.0, 0.0], 2)
            }
            GridInterpolation::Cubic => {
                let i = (t.floor() as isize - 1).clamp(0, self.n as isize - 4) as usize;
                let s = t - i as f64;
                let mut w = [0.0; 4];
                let mut dw = [0.0; 4];
                for j in 0..4 {
                    let mut num = 1.0;
                    let mut den = 1.0;
                    let mut deriv = 0.0;
                    for m in 0..4 {
                        if m == j {
                            continue;
                        }
                        den *= (j as f64) - (m as f64);
                        num *= s - m as f64;
                        let mut prod = 1.0;
                        for p in 0..4 {
                            if p != j && p != m {
                                prod *= s - p as f64;
                            }
                        }
                        deriv += prod;
                    }
                    w[j] = num / den;
                    dw[j] = deriv / den / h;
                }
                (i, w, dw, 4)
            }
        }
    }

    /// Interpolated value and, optionally, gradient.
    pub fn evaluate(&self, x: &[f64], gradient: Option<&mut [f64]>) -> f64 {
        let stencils: Vec<_> = x.iter().map(|&y| self.stencil(y)).collect();
        let want_grad = gradient.is_some();
        let mut grad = [0.0; GRID_MAX_DIM];
        let mut value = 0.0;
        let mut offs = [0usize; GRID_MAX_DIM];
        let width = stencils[0].3;
        let total = width.pow(self.dim as u32);
        for flat in 0..total {
            let mut rem = flat;
            for a in (0..self.dim).rev() {
                offs[a] = rem % width;
                rem /= width;
            }
            let mut idx = 0;
            let mut w = 1.0;
            for a in 0..self.dim {
                idx = idx * self.n + stencils[a].0 + offs[a];
                w *= stencils[a].1[offs[a]];
            }
            let v = self.values[idx];
            value += w * v;
            if want_grad {
                for (g, gslot) in grad.iter_mut().enumerate().take(self.dim) {
                    let mut wg = 1.0;
                    for a in 0..self.dim {
                        wg *= if a == g { stencils[a].2[offs[a]] } else { stencils[a].1[offs[a]] };
                    }
                    *gslot += wg * v;
                }
            }
        }
        if let Some(out) = gradient {
            out.copy_from_slice(&grad[..self.dim]);
        }
        value
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridReferenceRun {
    pub errors: ErrorPair,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
}

/// First-order value-only policy iteration on a tensor grid. The density
/// entering the running cost stays at `density`.
#[allow(clippy::too_many_arguments)]
pub fn grid_sl_reference(
    problem: &MfgProblem,
    density: &TensorTrain,
    n: usize,
    steps: usize,
    interpolation: GridInterpolation,
    stop_tol: f64,
    max_iterations: usize,
    validation: &ValidationSet,
) -> Result<GridReferenceRun> {
    let started = Instant::now();
    let d = problem.dim;
    if d > GRID_MAX_DIM {
        return Err(Error::Unsupported(format!("grid reference is limited to d ≤ {GRID_MAX_DIM}")));
    }
    let dt = problem.horizon / steps as f64;
    let rule = rule_for(RuleKind::Sl1, d, problem.viscosity, dt)?;
    let view = DensityView::new(density, None)?;
    let ham = problem.hamiltonian.clone();
    let terminal = GridFunction::from_fn(d, n, problem.half_width, interpolation, |x| {
        problem.terminal.value(x, &view)
    })?;
    let mut values = vec![terminal.clone(); steps + 1];
    let mut iterations = 0;
    let mut converged = false;
    let mut previous_u0: Option<Vec<f64>> = None;
    while iterations < max_iterations {
        let policies = values.clone();
        let policy = |x: &[f64], k: usize, q: &mut [f64]| {
            let mut g = vec![0.0; d];
            policies[k].evaluate(x, Some(&mut g));
            ham.gradient(&g, q);
        };
        for k in (0..steps).rev() {
            let next = values[k + 1].clone();
            values[k] = GridFunction::from_fn(d, n, problem.half_width, interpolation, |x| {
                let mut q1 = vec![0.0; d];
                let mut q0 = vec![0.0; d];
                policy(x, k + 1, &mut q1);
                policy(x, k, &mut q0);
                let mut foot = vec![0.0; d];
                let mut acc = 0.0;
                for l in 0..rule.len() {
                    let xi = rule.node(l);
                    for i in 0..d {
                        foot[i] = x[i] - dt * q1[i] + xi[i];
                    }
                    acc += rule.weights[l] * next.evaluate(&foot, None);
                }
                acc + dt * (ham.lagrangian(&q0) + problem.running.value(x, &view))
            })?;
        }
        iterations += 1;
        if let Some(prev) = &previous_u0 {
            let h = terminal.spacing();
            let change: f64 = prev
                .iter()
                .zip(&values[0].values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                * h.powi(d as i32);
            if change.sqrt() <= stop_tol {
                converged = true;
                break;
            }
        }
        previous_u0 = Some(values[0].values.clone());
    }
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("grid reference needs an exact solution".into()))?;
    let u0 = &values[0];
    let errors = compute_errors(
        &|x: &[f64]| u0.evaluate(x, None),
        &|x: &[f64]| exact.value(x, 0.0),
        validation,
    )?;
    Ok(GridReferenceRun {
        errors,
        iterations,
        converged,
        seconds: started.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Named benchmark runs
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchmarkKind {
    AdvDiff,
    Positivity,
    LocalMfg,
    NonlocalMfg,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 4] = [
        BenchmarkKind::AdvDiff,
        BenchmarkKind::Positivity,
        BenchmarkKind::LocalMfg,
        BenchmarkKind::NonlocalMfg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::AdvDiff => "advdiff",
            BenchmarkKind::Positivity => "positivity",
            BenchmarkKind::LocalMfg => "local-mfg",
            BenchmarkKind::NonlocalMfg => "nonlocal-mfg",
        }
    }
}

impl std::str::FromStr for BenchmarkKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BenchmarkKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = BenchmarkKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!("unknown benchmark `{s}`; available: {}", names.join(", ")))
            })
    }
}

/// Every knob of a benchmark run. [`BenchmarkSettings::defaults`] gives the
/// settings of the reference experiments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkSettings {
    pub kind: BenchmarkKind,
    pub dim: usize,
    pub viscosity: f64,
    pub rule: RuleKind,
    pub order: Option<FlowOrder>,
    /// Time-step counts, coarsest first.
    pub steps: Vec<usize>,
    pub horizon: Option<f64>,
    pub half_width: Option<f64>,
    pub value_degree: usize,
    pub density_degree: usize,
    pub value_rank: usize,
    pub density_rank: usize,
    pub max_sweeps: usize,
    pub beta: f64,
    pub gamma: f64,
    pub initial_mean: f64,
    pub initial_variance: f64,
    pub smoothing: Smoothing,
    pub stop_tol: f64,
    pub max_iterations: usize,
    pub log_density: bool,
    pub periodic: bool,
    pub drift_sign: DriftSign,
    pub mode: SolveMode,
    pub value_extrapolation: Extrapolation,
    pub density_extrapolation: Extrapolation,
    pub mean_estimator: MeanEstimator,
    pub seed: u64,
    pub validation_points: usize,
    /// Grid points per axis for each ladder row of the grid reference.
    pub grid_points: Vec<usize>,
    pub grid_interpolation: GridInterpolation,
    pub conservation: bool,
}

impl BenchmarkSettings {
    pub fn defaults(kind: BenchmarkKind) -> Self {
        let base = Self {
            kind,
            dim: 3,
            viscosity: 0.1,
            rule: RuleKind::Sl2p,
            order: None,
            steps: vec![2, 4, 8, 16, 32],
            horizon: None,
            half_width: None,
            value_degree: 2,
            density_degree: 2,
            value_rank: 2,
            density_rank: 2,
            max_sweeps: 8,
            beta: 1.0,
            gamma: 0.0,
            initial_mean: 0.1,
            initial_variance: 0.5,
            smoothing: Smoothing::Constant(1.0),
            stop_tol: 1e-5,
            max_iterations: 500,
            log_density: false,
            periodic: true,
            drift_sign: DriftSign::Negative,
            mode: SolveMode::Coupled,
            value_extrapolation: Extrapolation::Unlimited,
            density_extrapolation: Extrapolation::Margin(0.1),
            mean_estimator: MeanEstimator::SymmetricWindow,
            seed: 2024,
            validation_points: DEFAULT_VALIDATION_POINTS,
            grid_points: Vec::new(),
            grid_interpolation: GridInterpolation::Cubic,
            conservation: false,
        };
        match kind {
            BenchmarkKind::AdvDiff => Self {
                density_degree: 14,
                density_rank: 3,
                density_extrapolation: Extrapolation::Margin(0.1),
                ..base
            },
            BenchmarkKind::Positivity => Self {
                dim: 8,
                steps: vec![2, 4, 8],
                density_degree: 14,
                density_rank: 3,
                ..base
            },
            BenchmarkKind::LocalMfg => Self {
                viscosity: 1.0,
                gamma: 0.1,
                steps: vec![4, 8, 16],
                horizon: Some(1.0),
                half_width: Some(1.0),
                smoothing: Smoothing::Constant(1e-2),
                log_density: true,
                density_extrapolation: Extrapolation::Unlimited,
                mean_estimator: MeanEstimator::BoxMoment,
                ..base
            },
            BenchmarkKind::NonlocalMfg => Self {
                viscosity: 0.0,
                rule: RuleKind::Sl2p,
                steps: vec![2, 4, 8, 16],
                horizon: Some(0.25),
                half_width: Some(2.5),
                density_degree: 39,
                density_rank: 1,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::InvalidArgument("the time-step ladder is empty".into()));
        }
        if self.steps.contains(&0) {
            return Err(Error::InvalidArgument("time-step counts must be positive".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if self.validation_points == 0 {
            return Err(Error::InvalidArgument("validation set is empty".into()));
        }
        if !self.grid_points.is_empty() && self.grid_points.len() != self.steps.len() {
            return Err(Error::InvalidArgument("grid_points must match the time-step ladder".into()));
        }
        Ok(())
    }

    fn half_width(&self) -> f64 {
        self.half_width.unwrap_or(1.0)
    }

    fn cross(&self, rank: usize, seed: u64) -> CrossConfig {
        let mut c = CrossConfig::uniform(self.dim, rank);
        c.max_sweeps = self.max_sweeps;
        c.seed = seed;
        c
    }

    fn solver_config(&self, steps: usize) -> SolverConfig {
        let mut c = SolverConfig::new(self.dim, steps, self.rule);
        c.order = self.order;
        c.smoothing = self.smoothing;
        c.stop_tol = self.stop_tol;
        c.max_iterations = self.max_iterations;
        c.value_degree = self.value_degree;
        c.density_degree = self.density_degree;
        c.value_cross = self.cross(self.value_rank, self.seed);
        c.density_cross = self.cross(self.density_rank, self.seed ^ 0xd5);
        c.log_density = self.log_density;
        c.drift_sign = self.drift_sign;
        c.value_extrapolation = self.value_extrapolation;
        c.density_extrapolation = self.density_extrapolation;
        c.mean_estimator = self.mean_estimator;
        c.mode = self.mode;
        c.validation_seed = self.seed;
        c.validation_points = self.validation_points;
        c
    }
}

/// One ladder row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LadderRow {
    pub steps: usize,
    pub dt: f64,
    pub value: Option<ErrorPair>,
    pub density: Option<ErrorPair>,
    pub value_order: Option<f64>,
    pub density_order: Option<f64>,
    pub probe_min: Option<f64>,
    pub probe_order: Option<f64>,
    pub mass_defect: Option<f64>,
    pub mean_defect: Option<f64>,
    pub grid: Option<GridReferenceRun>,
    pub iterations: usize,
    pub converged: bool,
    pub fit_warnings: usize,
    /// Wall time of the row including error evaluation.
    pub seconds: f64,
    /// Wall time spent inside the solver iterations only.
    pub solver_seconds: f64,
}

impl LadderRow {
    fn new(steps: usize, dt: f64) -> Self {
        Self {
            steps,
            dt,
            value: None,
            density: None,
            value_order: None,
            density_order: None,
            probe_min: None,
            probe_order: None,
            mass_defect: None,
            mean_defect: None,
            grid: None,
            iterations: 0,
            converged: true,
            fit_warnings: 0,
            seconds: 0.0,
            solver_seconds: 0.0,
        }
    }
}

fn fill_orders(rows: &mut [LadderRow], get: impl Fn(&LadderRow) -> Option<f64>, set: impl Fn(&mut LadderRow, f64)) {
    for i in 1..rows.len() {
        if let (Some(a), Some(b)) = (get(&rows[i - 1]), get(&rows[i])) {
            if let Ok(o) = convergence_order(&[a, b]) {
                if let Some(o) = o[0] {
                    set(&mut rows[i], o);
                }
            }
        }
    }
}

pub fn horizon_of(settings: &BenchmarkSettings) -> f64 {
    match settings.kind {
        BenchmarkKind::AdvDiff | BenchmarkKind::Positivity => settings
            .horizon
            .unwrap_or_else(|| half_amplitude_time(settings.dim, settings.viscosity)),
        BenchmarkKind::LocalMfg => settings.horizon.unwrap_or(1.0),
        BenchmarkKind::NonlocalMfg => settings.horizon.unwrap_or(0.25),
    }
}

/// Runs a single ladder row.
pub fn run_row(settings: &BenchmarkSettings, index: usize) -> Result<LadderRow> {
    settings.validate()?;
    let steps = settings.steps[index];
    let horizon = horizon_of(settings);
    let mut row = LadderRow::new(steps, horizon / steps as f64);
    let started = Instant::now();
    let validation = ValidationSet::new(settings.dim, settings.half_width(), settings.validation_points, settings.seed);
    match settings.kind {
        BenchmarkKind::AdvDiff | BenchmarkKind::Positivity => {
            let mut problem = if settings.kind == BenchmarkKind::AdvDiff {
                advection_diffusion_problem(settings.dim, settings.viscosity)?
            } else {
                positivity_problem(settings.dim, settings.viscosity)?
            };
            problem.horizon = horizon;
            let transport = TransportSettings {
                rule: settings.rule,
                steps,
                degree: settings.density_degree,
                rank: settings.density_rank,
                periodic: settings.periodic,
                extrapolation: settings.density_extrapolation,
                max_sweeps: settings.max_sweeps,
            };
            let probes = positivity_points(&problem);
            let run = run_transport(
                &problem,
                &transport,
                &validation,
                (settings.kind == BenchmarkKind::Positivity).then_some(probes.as_slice()),
            )?;
            row.density = Some(run.errors);
            row.probe_min = run.probe_min;
            row.fit_warnings = run.fit_warnings;
            row.solver_seconds = run.seconds;
        }
        BenchmarkKind::LocalMfg | BenchmarkKind::NonlocalMfg => {
            let (problem, nonlocal) = if settings.kind == BenchmarkKind::LocalMfg {
                let (p, _) = local_mfg_problem(
                    settings.dim,
                    settings.viscosity,
                    settings.beta,
                    settings.gamma,
                    settings.half_width(),
                    horizon,
                )?;
                (p, None)
            } else {
                let (p, e) = nonlocal_mfg_problem(
                    settings.dim,
                    settings.viscosity,
                    settings.initial_mean,
                    settings.initial_variance,
                    horizon,
                    settings.half_width(),
                )?;
                (p, Some(e))
            };
            let config = settings.solver_config(steps);
            let solver = spi::Solver::new(&problem, config)?;
            let (state, report) = solver.solve()?;
            row.iterations = report.iterations;
            row.converged = report.converged;
            row.solver_seconds = report.seconds;
            row.fit_warnings = report.history.iter().map(|h| h.fit_warnings).sum();
            if let Some(errors) = report.final_errors {
                row.value = Some(errors.value);
                row.density = errors.density;
            }
            if settings.conservation && settings.mode == SolveMode::Coupled {
                if let Some(exact) = &nonlocal {
                    let (mass, first) = exact.box_moments(settings.half_width(), horizon);
                    let (em, emu) = conservation_defects(&state.densities[steps], mass, &first)?;
                    row.mass_defect = Some(em);
                    row.mean_defect = Some(emu);
                }
            }
            if let Some(&n) = settings.grid_points.get(index) {
                row.grid = Some(grid_sl_reference(
                    &problem,
                    &state.densities[0],
                    n,
                    steps,
                    settings.grid_interpolation,
                    settings.stop_tol,
                    settings.max_iterations,
                    &validation,
                )?);
            }
        }
    }
    row.seconds = started.elapsed().as_secs_f64();
    Ok(row)
}

/// Runs every row of the ladder and fills in observed orders.
pub fn run_ladder(settings: &BenchmarkSettings) -> Result<Vec<LadderRow>> {
    settings.validate()?;
    let mut rows = (0..settings.steps.len())
        .map(|i| run_row(settings, i))
        .collect::<Result<Vec<_>>>()?;
    annotate_orders(&mut rows);
    Ok(rows)
}

/// Observed orders between consecutive rows.
pub fn annotate_orders(rows: &mut [LadderRow]) {
    fill_orders(rows, |r| r.value.as_ref().map(|e| e.l2), |r, o| r.value_order = Some(o));
    fill_orders(rows, |r| r.density.as_ref().map(|e| e.l2), |r, o| r.density_order = Some(o));
    fill_orders(rows, |r| r.probe_min.map(f64::abs), |r, o| r.probe_order = Some(o));
}
