//! Legendre polynomials on the reference interval and their scaled use on
//! a physical box `[-L, L]`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial degree and half-width of one axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub degree: usize,
    pub half_width: f64,
}

impl BasisSpec {
    pub fn new(degree: usize, half_width: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "half width must be positive and finite, got {half_width}"
            )));
        }
        Ok(Self { degree, half_width })
    }

    /// Number of basis functions, `degree + 1`.
    pub fn size(&self) -> usize {
        self.degree + 1
    }

    /// Maps a physical coordinate in `[-L, L]` to the reference interval.
    pub fn to_reference(&self, x: f64) -> Result<f64> {
        let s = x / self.half_width;
        if s.abs() > 1.0 + 4.0 * f64::EPSILON || s.is_nan() {
            return Err(Error::OutOfReference { value: s });
        }
        Ok(s.clamp(-1.0, 1.0))
    }

    pub fn from_reference(&self, s: f64) -> f64 {
        s * self.half_width
    }
}

fn check_reference(s: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(Error::OutOfReference { value: s })
    }
}

/// Values `ψ_0(s), …, ψ_n(s)` of the Legendre polynomials.
pub fn eval_basis(spec: &BasisSpec, s: f64) -> Result<Vec<f64>> {
    check_reference(s)?;
    let mut values = vec![0.0; spec.size()];
    legendre_values(s, &mut values);
    Ok(values)
}

/// First derivatives `ψ'_i(s)` with respect to the reference coordinate.
pub fn eval_basis_derivative(spec: &BasisSpec, s: f64) -> Result<Vec<f64>> {
    check_reference(s)?;
    let mut values = vec![0.0; spec.size()];
    let mut first = vec![0.0; spec.size()];
    legendre_with_derivatives(s, &mut values, Some(&mut first), None);
    Ok(first)
}

/// Bonnet recurrence, valid for any real `s` (used for polynomial extension).
pub(crate) fn legendre_values(s: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    out[0] = 1.0;
    if n > 1 {
        out[1] = s;
    }
    for i in 1..n.saturating_sub(1) {
        let fi = i as f64;
        out[i + 1] = ((2.0 * fi + 1.0) * s * out[i] - fi * out[i - 1]) / (fi + 1.0);
    }
}

/// Values plus optional first and second derivatives.
///
/// Derivatives follow `P'_{i+1} = P'_{i-1} + (2i+1) P_i` and the same
/// identity one order up.
pub(crate) fn legendre_with_derivatives(
    s: f64,
    values: &mut [f64],
    first: Option<&mut [f64]>,
    second: Option<&mut [f64]>,
) {
    legendre_values(s, values);
    let n = values.len();
    let mut scratch;
    let first: &mut [f64] = match first {
        Some(f) => f,
        None => {
            if second.is_none() {
                return;
            }
            scratch = vec![0.0; n];
            &mut scratch
        }
    };
    if n > 0 {
        first[0] = 0.0;
    }
    if n > 1 {
        first[1] = 1.0;
    }
    for i in 1..n.saturating_sub(1) {
        first[i + 1] = first[i - 1] + (2 * i + 1) as f64 * values[i];
    }
    if let Some(second) = second {
        if n > 0 {
            second[0] = 0.0;
        }
        if n > 1 {
            second[1] = 0.0;
        }
        for i in 1..n.saturating_sub(1) {
            second[i + 1] = second[i - 1] + (2 * i + 1) as f64 * first[i];
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Chebyshev initial guesses.
pub fn gauss_legendre(points: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; points];
    let mut weights = vec![0.0; points];
    if points == 0 {
        return (nodes, weights);
    }
    let n = points as f64;
    for i in 0..points.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut derivative = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 1..points {
                let k = k as f64;
                let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
                p0 = p1;
                p1 = p2;
            }
            let p = if points == 1 { x } else { p1 };
            let p_prev = if points == 1 { 1.0 } else { p0 };
            derivative = n * (x * p - p_prev) / (x * x - 1.0);
            let dx = p / derivative;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * derivative * derivative);
        nodes[i] = -x;
        nodes[points - 1 - i] = x;
        weights[i] = w;
        weights[points - 1 - i] = w;
    }
    if points % 2 == 1 {
        nodes[points / 2] = 0.0;
    }
    (nodes, weights)
}

type MomentKey = (usize, usize);

fn moment_cache() -> &'static Mutex<HashMap<MomentKey, Arc<[f64]>>> {
    static CACHE: OnceLock<Mutex<HashMap<MomentKey, Arc<[f64]>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Entry `i` is `∫_{-1}^{1} s^p ψ_i(s) ds`, cached per `(degree, p)`.
pub fn moment_vector(spec: &BasisSpec, p: usize) -> Arc<[f64]> {
    let key = (spec.degree, p);
    if let Some(v) = moment_cache().lock().expect("moment cache").get(&key) {
        return Arc::clone(v);
    }
    let v: Arc<[f64]> = interval_moments(spec.degree, p, -1.0, 1.0).into();
    moment_cache()
        .lock()
        .expect("moment cache")
        .insert(key, Arc::clone(&v));
    v
}

/// `∫_a^b s^p ψ_i(s) ds` on a reference sub-interval.
pub(crate) fn interval_moments(degree: usize, p: usize, a: f64, b: f64) -> Vec<f64> {
    let points = (degree + p) / 2 + 2;
    let (nodes, weights) = gauss_legendre(points);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut out = vec![0.0; degree + 1];
    let mut values = vec![0.0; degree + 1];
    for (&t, &w) in nodes.iter().zip(&weights) {
        let s = mid + half * t;
        legendre_values(s, &mut values);
        let weight = w * half * s.powi(p as i32);
        for (o, v) in out.iter_mut().zip(&values) {
            *o += weight * v;
        }
    }
    if a == -1.0 && b == 1.0 {
        for (i, o) in out.iter_mut().enumerate() {
            if i > p || (i + p) % 2 == 1 {
                *o = 0.0;
            }
        }
    }
    out
}
