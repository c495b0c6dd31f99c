//! One-step semi-Lagrangian updates along stochastic characteristics.
//!
//! Everything is phrased in terms of the characteristic velocity `b`: the
//! backward foot moves against `b`, the forward foot along it.

use serde::{Deserialize, Serialize};

use crate::cubature::{CubatureRule, RuleKind};
use crate::error::{Error, Result};

/// Point-evaluable scalar function.
pub trait PointFunction: Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl<F> PointFunction for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Scalar function of space and time index.
pub trait SpaceTimeFunction: Sync {
    fn value(&self, x: &[f64], k: usize) -> f64;
}

impl<F> SpaceTimeFunction for F
where
    F: Fn(&[f64], usize) -> f64 + Sync,
{
    fn value(&self, x: &[f64], k: usize) -> f64 {
        self(x, k)
    }
}

/// Characteristic velocity stored per time-grid node.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &[f64], k: usize, out: &mut [f64]);
    /// Divergence of the velocity, when known in closed form.
    fn divergence(&self, _x: &[f64], _k: usize) -> Option<f64> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct ConstantVelocity(pub Vec<f64>);

impl VelocityField for ConstantVelocity {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn velocity(&self, _x: &[f64], _k: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
    fn divergence(&self, _x: &[f64], _k: usize) -> Option<f64> {
        Some(0.0)
    }
}

/// Velocity given by a closure `(x, k, out)`.
pub struct FnVelocity<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> VelocityField for FnVelocity<F>
where
    F: Fn(&[f64], usize, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn velocity(&self, x: &[f64], k: usize, out: &mut [f64]) {
        (self.f)(x, k, out)
    }
}

/// Central-difference divergence with step `h`.
pub fn finite_difference_divergence(b: &dyn VelocityField, x: &[f64], k: usize, h: f64) -> f64 {
    let d = b.dim();
    let mut y = x.to_vec();
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    let mut div = 0.0;
    for i in 0..d {
        y[i] = x[i] + h;
        b.velocity(&y, k, &mut plus);
        y[i] = x[i] - h;
        b.velocity(&y, k, &mut minus);
        y[i] = x[i];
        div += (plus[i] - minus[i]) / (2.0 * h);
    }
    div
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowOrder {
    Euler1,
    CrankNicolson2,
}

#[derive(Clone, Debug)]
pub struct StepScheme {
    pub order: FlowOrder,
    pub rule: CubatureRule,
    pub dt: f64,
}

impl StepScheme {
    pub fn new(order: FlowOrder, rule: CubatureRule, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let ok = match order {
            FlowOrder::Euler1 => matches!(rule.kind, RuleKind::Sl1 | RuleKind::Deterministic),
            FlowOrder::CrankNicolson2 => {
                matches!(rule.kind, RuleKind::Sl2e | RuleKind::Sl2p | RuleKind::Deterministic)
            }
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{order:?} cannot be paired with the {} rule",
                rule.kind.name()
            )));
        }
        Ok(Self { order, rule, dt })
    }

    /// The natural flow order for a rule (first order for SL1).
    pub fn order_for(kind: RuleKind) -> FlowOrder {
        match kind {
            RuleKind::Sl1 => FlowOrder::Euler1,
            _ => FlowOrder::CrankNicolson2,
        }
    }

    pub fn dim(&self) -> usize {
        self.rule.dim
    }
}

/// Foot `Ψ⁻_ℓ(x, t_{k+1})` of the characteristic arriving at `x`.
pub fn backward_foot(b: &dyn VelocityField, scheme: &StepScheme, x: &[f64], k: usize, l: usize, out: &mut [f64]) {
    let mut v1 = vec![0.0; x.len()];
    b.velocity(x, k + 1, &mut v1);
    backward_foot_from(b, scheme, x, &v1, k, l, out);
}

/// [`backward_foot`] with `b(x, t_{k+1})` already evaluated.
fn backward_foot_from(
    b: &dyn VelocityField,
    scheme: &StepScheme,
    x: &[f64],
    v1: &[f64],
    k: usize,
    l: usize,
    out: &mut [f64],
) {
    let d = x.len();
    let xi = scheme.rule.node(l);
    let dt = scheme.dt;
    for i in 0..d {
        out[i] = x[i] - dt * v1[i] + xi[i];
    }
    if scheme.order == FlowOrder::CrankNicolson2 {
        let mut v0 = vec![0.0; d];
        b.velocity(out, k, &mut v0);
        for i in 0..d {
            out[i] = x[i] - 0.5 * dt * (v1[i] + v0[i]) + xi[i];
        }
    }
}

/// Velocity used by the first forward stage: `t_k` for Crank–Nicolson and
/// `t_{k+1}` for the first-order step, the level whose values are transported.
fn forward_base_velocity(b: &dyn VelocityField, scheme: &StepScheme, x: &[f64], k: usize) -> Vec<f64> {
    let mut v = vec![0.0; x.len()];
    let level = match scheme.order {
        FlowOrder::Euler1 => k + 1,
        FlowOrder::CrankNicolson2 => k,
    };
    b.velocity(x, level, &mut v);
    v
}

/// Foot `Ψ⁺_ℓ(x, t_k)` of the characteristic leaving `x`.
pub fn forward_foot(b: &dyn VelocityField, scheme: &StepScheme, x: &[f64], k: usize, l: usize, out: &mut [f64]) {
    let v0 = forward_base_velocity(b, scheme, x, k);
    forward_foot_from(b, scheme, x, &v0, k, l, out);
}

fn forward_foot_from(
    b: &dyn VelocityField,
    scheme: &StepScheme,
    x: &[f64],
    v0: &[f64],
    k: usize,
    l: usize,
    out: &mut [f64],
) {
    let d = x.len();
    let xi = scheme.rule.node(l);
    let dt = scheme.dt;
    for i in 0..d {
        out[i] = x[i] + dt * v0[i] + xi[i];
    }
    if scheme.order == FlowOrder::CrankNicolson2 {
        let mut v1 = vec![0.0; d];
        b.velocity(out, k + 1, &mut v1);
        for i in 0..d {
            out[i] = x[i] + 0.5 * dt * (v0[i] + v1[i]) + xi[i];
        }
    }
}

/// Forward transport of a density from `t_k` to `t_{k+1}` with an
/// exponential reaction factor.
pub struct FpStep<'a> {
    pub previous: &'a dyn PointFunction,
    pub velocity: &'a dyn VelocityField,
    pub reaction: Option<&'a dyn SpaceTimeFunction>,
    pub scheme: &'a StepScheme,
    pub k: usize,
}

pub fn fp_step<'a>(
    previous: &'a dyn PointFunction,
    velocity: &'a dyn VelocityField,
    reaction: Option<&'a dyn SpaceTimeFunction>,
    scheme: &'a StepScheme,
    k: usize,
) -> FpStep<'a> {
    FpStep {
        previous,
        velocity,
        reaction,
        scheme,
        k,
    }
}

impl FpStep<'_> {
    pub fn try_value(&self, x: &[f64]) -> Result<f64> {
        let v = PointFunction::value(self, x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { point: x.to_vec() })
        }
    }
}

impl PointFunction for FpStep<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let rule = &self.scheme.rule;
        let dt = self.scheme.dt;
        let mut foot = vec![0.0; x.len()];
        let mut v1 = vec![0.0; x.len()];
        self.velocity.velocity(x, self.k + 1, &mut v1);
        let r_here = self.reaction.map(|r| r.value(x, self.k + 1)).unwrap_or(0.0);
        let mut acc = 0.0;
        for l in 0..rule.len() {
            backward_foot_from(self.velocity, self.scheme, x, &v1, self.k, l, &mut foot);
            let factor = match (self.reaction, self.scheme.order) {
                (None, _) => 1.0,
                (Some(_), FlowOrder::Euler1) => (dt * r_here).exp(),
                (Some(r), FlowOrder::CrankNicolson2) => (0.5 * dt * (r.value(&foot, self.k) + r_here)).exp(),
            };
            acc += rule.weights[l] * self.previous.value(&foot) * factor;
        }
        acc
    }
}

/// Backward update of a value function from `t_{k+1}` to `t_k` with a
/// running source.
pub struct HjbStep<'a> {
    pub next: &'a dyn PointFunction,
    pub source: &'a dyn SpaceTimeFunction,
    pub velocity: &'a dyn VelocityField,
    pub scheme: &'a StepScheme,
    pub k: usize,
}

pub fn hjb_step<'a>(
    next: &'a dyn PointFunction,
    source: &'a dyn SpaceTimeFunction,
    velocity: &'a dyn VelocityField,
    scheme: &'a StepScheme,
    k: usize,
) -> HjbStep<'a> {
    HjbStep {
        next,
        source,
        velocity,
        scheme,
        k,
    }
}

impl HjbStep<'_> {
    pub fn try_value(&self, x: &[f64]) -> Result<f64> {
        let v = PointFunction::value(self, x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { point: x.to_vec() })
        }
    }
}

impl PointFunction for HjbStep<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let rule = &self.scheme.rule;
        let dt = self.scheme.dt;
        let mut foot = vec![0.0; x.len()];
        let v0 = forward_base_velocity(self.velocity, self.scheme, x, self.k);
        let mut acc = 0.0;
        match self.scheme.order {
            FlowOrder::Euler1 => {
                for l in 0..rule.len() {
                    forward_foot_from(self.velocity, self.scheme, x, &v0, self.k, l, &mut foot);
                    acc += rule.weights[l] * self.next.value(&foot);
                }
                acc + dt * self.source.value(x, self.k)
            }
            FlowOrder::CrankNicolson2 => {
                for l in 0..rule.len() {
                    forward_foot_from(self.velocity, self.scheme, x, &v0, self.k, l, &mut foot);
                    acc += rule.weights[l]
                        * (self.next.value(&foot) + 0.5 * dt * self.source.value(&foot, self.k + 1));
                }
                acc + 0.5 * dt * self.source.value(x, self.k)
            }
        }
    }
}

/// Evaluates `inner` after wrapping every coordinate into `[-L, L)`.
pub struct PeriodicWrap<'a> {
    pub inner: &'a dyn PointFunction,
    pub half_width: f64,
}

pub fn wrap_periodic(x: f64, half_width: f64) -> f64 {
    let period = 2.0 * half_width;
    (x + half_width).rem_euclid(period) - half_width
}

impl PointFunction for PeriodicWrap<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let y: Vec<f64> = x.iter().map(|&v| wrap_periodic(v, self.half_width)).collect();
        self.inner.value(&y)
    }
}
