//! Standalone invariant suites: cubature moment defects, a weight mutation
//! that must be caught, and tensor-train operations against a dense
//! coefficient-tensor oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ttmfg::cubature::{moment_defect, sl1_rule, sl2e_rule, sl2p_rule, CubatureRule};
use ttmfg::legendre::BasisSpec;
use ttmfg::tt::TensorTrain;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub group: String,
    pub check: String,
    pub measured: f64,
    pub threshold: f64,
    /// `true` when the measured value must exceed the threshold rather
    /// than stay below it.
    pub must_exceed: bool,
    pub passed: bool,
}

impl CheckResult {
    fn at_most(group: &str, check: String, measured: f64, threshold: f64) -> Self {
        Self {
            group: group.into(),
            check,
            measured,
            threshold,
            must_exceed: false,
            passed: measured <= threshold,
        }
    }

    fn above(group: &str, check: String, measured: f64, threshold: f64) -> Self {
        Self {
            group: group.into(),
            check,
            measured,
            threshold,
            must_exceed: true,
            passed: measured > threshold,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Worst measured value among the checks of a group that must stay
    /// below their threshold.
    pub fn worst(&self, group: &str) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.group == group && !c.must_exceed)
            .map(|c| c.measured)
            .fold(0.0, f64::max)
    }
}

pub const SL2P_DEFECT_TOL: f64 = 1e-11;
pub const SL1_DEFECT_TOL: f64 = 1e-12;
pub const SL1_ORDER4_FLOOR: f64 = 1e-3;
pub const WEIGHT_SUM_TOL: f64 = 1e-13;
pub const DENSE_TOL: f64 = 1e-11;

/// (ν, Δt) pairs the rules are checked at.
const RULE_PARAMETERS: [(f64, f64); 3] = [(0.1, 0.01), (1.0, 0.25), (1e-3, 0.125)];

fn weight_defect(rule: &CubatureRule) -> f64 {
    (rule.weight_sum() - 1.0).abs()
}

/// Moment defects and weight sums for every rule and `d = 2..=10`.
pub fn cubature_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let g = "cubature";
    for d in 2..=10 {
        for (nu, dt) in RULE_PARAMETERS {
            let tag = format!("d={d} nu={nu} dt={dt}");
            let p = sl2p_rule(d, nu, dt).expect("valid parameters");
            out.push(CheckResult::at_most(g, format!("sl2p moments<=5 {tag}"), moment_defect(&p, 5), SL2P_DEFECT_TOL));
            out.push(CheckResult::at_most(g, format!("sl2p weight sum {tag}"), weight_defect(&p), WEIGHT_SUM_TOL));
            let s = sl1_rule(d, nu, dt).expect("valid parameters");
            out.push(CheckResult::at_most(g, format!("sl1 moments<=3 {tag}"), moment_defect(&s, 3), SL1_DEFECT_TOL));
            out.push(CheckResult::above(g, format!("sl1 order-4 defect {tag}"), moment_defect(&s, 4), SL1_ORDER4_FLOOR));
            out.push(CheckResult::at_most(g, format!("sl1 weight sum {tag}"), weight_defect(&s), WEIGHT_SUM_TOL));
            if d <= 6 {
                let e = sl2e_rule(d, nu, dt).expect("valid parameters");
                out.push(CheckResult::at_most(g, format!("sl2e moments<=5 {tag}"), moment_defect(&e, 5), SL2P_DEFECT_TOL));
                out.push(CheckResult::at_most(g, format!("sl2e weight sum {tag}"), weight_defect(&e), WEIGHT_SUM_TOL));
            }
        }
    }
    out
}

/// Perturbs one SL2p weight and reports whether the mass condition notices.
pub fn mutation_check() -> CheckResult {
    let mut rule = sl2p_rule(5, 0.1, 0.01).expect("valid parameters");
    rule.weights[1] += 1e-3;
    let mass_defect = weight_defect(&rule).max(moment_defect(&rule, 0));
    CheckResult::above("mutation", "corrupted sl2p weight breaks the mass condition".into(), mass_defect, WEIGHT_SUM_TOL)
}

// ---------------------------------------------------------------------------
// Dense oracle
// ---------------------------------------------------------------------------

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Monomial coefficients of `P_n` from the explicit sum
/// `P_n(s) = 2^{-n} Σ_k (-1)^k C(n,k) C(2n-2k, n) s^{n-2k}`.
fn legendre_monomials(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n + 1];
    for k in 0..=n / 2 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        c[n - 2 * k] += sign * binomial(n, k) * binomial(2 * n - 2 * k, n) / 2f64.powi(n as i32);
    }
    c
}

/// `j`-th derivative in `s` of a polynomial given by monomial coefficients.
fn poly_eval(c: &[f64], s: f64, j: usize) -> f64 {
    let mut acc = 0.0;
    for (p, &cp) in c.iter().enumerate().skip(j) {
        let falling: f64 = (0..j).map(|i| (p - i) as f64).product();
        acc += cp * falling * s.powi((p - j) as i32);
    }
    acc
}

/// `∫_{-1}^{1} s^p P(s) ds` for monomial coefficients of `P`.
fn poly_moment(c: &[f64], p: usize) -> f64 {
    c.iter()
        .enumerate()
        .filter(|(k, _)| (k + p) % 2 == 0)
        .map(|(k, &ck)| ck * 2.0 / (k + p + 1) as f64)
        .sum()
}

/// The full coefficient tensor of a train, row-major over `(i_1, …, i_d)`.
pub struct Dense {
    pub sizes: Vec<usize>,
    pub half_widths: Vec<f64>,
    pub coeffs: Vec<f64>,
    monomials: Vec<Vec<Vec<f64>>>,
}

impl Dense {
    pub fn from_train(tt: &TensorTrain) -> Self {
        let sizes: Vec<usize> = tt.cores().iter().map(|c| c.size).collect();
        let total: usize = sizes.iter().product();
        let mut coeffs = vec![0.0; total];
        for (flat, slot) in coeffs.iter_mut().enumerate() {
            let idx = unflatten(flat, &sizes);
            let mut row = vec![1.0];
            for (k, core) in tt.cores().iter().enumerate() {
                let mut next = vec![0.0; core.right];
                for (a, &ra) in row.iter().enumerate() {
                    for (b, nb) in next.iter_mut().enumerate() {
                        *nb += ra * core.get(a, idx[k], b);
                    }
                }
                row = next;
            }
            *slot = row[0];
        }
        let monomials = sizes.iter().map(|&n| (0..n).map(legendre_monomials).collect()).collect();
        Self {
            sizes,
            half_widths: tt.bases().iter().map(|b| b.half_width).collect(),
            coeffs,
            monomials,
        }
    }

    /// Sum over all multi-indices with a per-axis weight for each index.
    fn contract(&self, weight: impl Fn(usize, usize) -> f64) -> f64 {
        let d = self.sizes.len();
        let table: Vec<Vec<f64>> = (0..d).map(|k| (0..self.sizes[k]).map(|i| weight(k, i)).collect()).collect();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(flat, &c)| {
                let idx = unflatten(flat, &self.sizes);
                c * idx.iter().enumerate().map(|(k, &i)| table[k][i]).product::<f64>()
            })
            .sum()
    }

    fn basis(&self, k: usize, i: usize, x: f64, derivative: usize) -> f64 {
        let l = self.half_widths[k];
        poly_eval(&self.monomials[k][i], x / l, derivative) / l.powi(derivative as i32)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.contract(|k, i| self.basis(k, i, x[k], 0))
    }

    pub fn partial(&self, x: &[f64], axis: usize, order: usize) -> f64 {
        self.contract(|k, i| self.basis(k, i, x[k], if k == axis { order } else { 0 }))
    }

    pub fn moment(&self, p: usize, axis: Option<usize>) -> f64 {
        self.contract(|k, i| {
            let power = if axis == Some(k) { p } else { 0 };
            let l = self.half_widths[k];
            l.powi(power as i32 + 1) * poly_moment(&self.monomials[k][i], power)
        })
    }

    pub fn dot(&self, other: &Dense) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }
}

fn unflatten(mut flat: usize, sizes: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; sizes.len()];
    for k in (0..sizes.len()).rev() {
        idx[k] = flat % sizes[k];
        flat /= sizes[k];
    }
    idx
}

fn deviation(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

/// Largest scaled deviation between train operations and the dense oracle
/// over `instances` random trains with `d ≤ 3`, mode sizes `≤ 4` and bond
/// ranks `≤ 3`.
pub fn dense_oracle_deviation(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let d: usize = rng.gen_range(1..=3);
        let bases: Vec<BasisSpec> = (0..d)
            .map(|_| BasisSpec::new(rng.gen_range(0..=3), rng.gen_range(0.5..2.0)).expect("valid basis"))
            .collect();
        let ranks: Vec<usize> = (0..d.saturating_sub(1)).map(|_| rng.gen_range(1..=3)).collect();
        let tt = TensorTrain::random(bases.clone(), &ranks, &mut rng).expect("valid train");
        let other = TensorTrain::random(bases.clone(), &ranks, &mut rng).expect("valid train");
        let dense = Dense::from_train(&tt);
        let mut track = |got: f64, want: f64| worst = worst.max(deviation(got, want));

        for _ in 0..10 {
            let x: Vec<f64> = bases.iter().map(|b| rng.gen_range(-b.half_width..=b.half_width)).collect();
            track(tt.evaluate(&x).expect("inside the box"), dense.value(&x));
            let grad = tt.gradient(&x).expect("inside the box");
            let lap = tt.laplacian(&x).expect("inside the box");
            let mut dense_lap = 0.0;
            for k in 0..d {
                track(grad[k], dense.partial(&x, k, 1));
                dense_lap += dense.partial(&x, k, 2);
            }
            track(lap, dense_lap);
            let log = tt.clone().with_log_form(true);
            let g = dense.value(&x);
            if g < 5.0 {
                track(log.evaluate(&x).expect("inside the box"), g.exp());
            }
        }
        track(tt.moment(0, None).expect("plain form"), dense.moment(0, None));
        for k in 0..d {
            for p in 1..=2 {
                track(tt.moment(p, Some(k)).expect("plain form"), dense.moment(p, Some(k)));
            }
        }
        let other_dense = Dense::from_train(&other);
        track(tt.dot(&other).expect("compatible"), dense.dot(&other_dense));
        track(tt.norm(), dense.dot(&dense).sqrt());
        let rounded = tt.round(1e-14).expect("positive tolerance");
        let rounded_dense = Dense::from_train(&rounded);
        for (a, b) in rounded_dense.coeffs.iter().zip(&dense.coeffs) {
            track(*a, *b);
        }
    }
    worst
}

pub const DENSE_INSTANCES: usize = 100;
pub const DENSE_SEED: u64 = 11;

/// Every suite, as run by `ttmfg verify`.
pub fn run_all() -> VerifyReport {
    let mut checks = cubature_checks();
    checks.push(mutation_check());
    checks.push(CheckResult::at_most(
        "dense-oracle",
        format!("{DENSE_INSTANCES} random trains, d<=3, n<=4, R<=3"),
        dense_oracle_deviation(DENSE_INSTANCES, DENSE_SEED),
        DENSE_TOL,
    ));
    VerifyReport { checks }
}
