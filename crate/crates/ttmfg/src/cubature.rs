//! Node/weight rules for the Gaussian increment `E[φ(x + √(2νΔt) Z)]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleKind {
    Sl1,
    Sl2e,
    Sl2p,
    Deterministic,
}

impl RuleKind {
    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Sl1 => "sl1",
            RuleKind::Sl2e => "sl2e",
            RuleKind::Sl2p => "sl2p",
            RuleKind::Deterministic => "deterministic",
        }
    }
}

impl std::str::FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sl1" => Ok(RuleKind::Sl1),
            "sl2e" => Ok(RuleKind::Sl2e),
            "sl2p" => Ok(RuleKind::Sl2p),
            "deterministic" | "det" => Ok(RuleKind::Deterministic),
            other => Err(Error::InvalidArgument(format!(
                "unknown rule '{other}' (expected sl1, sl2e, sl2p, deterministic)"
            ))),
        }
    }
}

/// Default cap on the tensor rule's node count.
pub const SL2E_NODE_CAP: usize = 59_049;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubatureRule {
    pub dim: usize,
    /// Row-major `len x dim` node coordinates.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: RuleKind,
    /// Per-axis variance `2νΔt` of the targeted Gaussian.
    pub variance: f64,
    pub has_negative_weights: bool,
}

impl CubatureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, l: usize) -> &[f64] {
        &self.nodes[l * self.dim..(l + 1) * self.dim]
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn from_parts(dim: usize, nodes: Vec<Vec<f64>>, weights: Vec<f64>, kind: RuleKind, variance: f64) -> Self {
        let has_negative_weights = weights.iter().any(|&w| w < 0.0);
        Self {
            dim,
            nodes: nodes.into_iter().flatten().collect(),
            weights,
            kind,
            variance,
            has_negative_weights,
        }
    }
}

fn check(d: usize, nu: f64, dt: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "viscosity must be positive for stochastic rules, got {nu}; use the deterministic rule"
        )));
    }
    Ok(())
}

fn axis(d: usize, i: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = scale;
    v
}

/// Axial rule: `±√(2dνΔt) e_i`, weights `1/(2d)`.
pub fn sl1_rule(d: usize, nu: f64, dt: f64) -> Result<CubatureRule> {
    check(d, nu, dt)?;
    let r = (2.0 * d as f64 * nu * dt).sqrt();
    let mut nodes = Vec::with_capacity(2 * d);
    for i in 0..d {
        nodes.push(axis(d, i, r));
        nodes.push(axis(d, i, -r));
    }
    let weights = vec![1.0 / (2 * d) as f64; 2 * d];
    Ok(CubatureRule::from_parts(d, nodes, weights, RuleKind::Sl1, 2.0 * nu * dt))
}

pub fn sl2e_rule(d: usize, nu: f64, dt: f64) -> Result<CubatureRule> {
    sl2e_rule_with_cap(d, nu, dt, SL2E_NODE_CAP)
}

/// Tensor product of the three-point Gauss–Hermite rule.
pub fn sl2e_rule_with_cap(d: usize, nu: f64, dt: f64, cap: usize) -> Result<CubatureRule> {
    check(d, nu, dt)?;
    let count = 3usize.checked_pow(d as u32).unwrap_or(usize::MAX);
    if count > cap {
        return Err(Error::NodeBudget { nodes: count, cap });
    }
    let r = (6.0 * nu * dt).sqrt();
    let points = [0.0, r, -r];
    let w1 = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
    let mut nodes = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for mut code in 0..count {
        let mut node = vec![0.0; d];
        let mut w = 1.0;
        for slot in node.iter_mut() {
            *slot = points[code % 3];
            w *= w1[code % 3];
            code /= 3;
        }
        nodes.push(node);
        weights.push(w);
    }
    Ok(CubatureRule::from_parts(d, nodes, weights, RuleKind::Sl2e, 2.0 * nu * dt))
}

/// Parameters of the central/axial/face-diagonal rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentSolution {
    pub radius: f64,
    pub center_weight: f64,
    pub axial_weight: f64,
    pub diagonal_weight: f64,
}

/// Solves the moment-matching system for the symmetric layout
/// {0, ±r e_i, ±r(e_i ± e_j)}.
///
/// With `a = νΔt` the conditions are
/// mass `w0 + 2d wA + 2d(d-1) wD = 1`,
/// second moment `2 wA r² + 4(d-1) wD r² = 2a`,
/// fourth moment `2 wA r⁴ + 4(d-1) wD r⁴ = 12a²`,
/// mixed moment `4 wD r⁴ = 4a²`.
/// Dividing the fourth-moment equation by the second gives `r²`, the mixed
/// equation then gives `wD`, the second-moment equation `wA`, and mass `w0`.
pub fn solve_moment_system(d: usize, nu: f64, dt: f64) -> Result<MomentSolution> {
    if d < 2 {
        return Err(Error::InvalidArgument("the face-diagonal layout needs d >= 2".into()));
    }
    check(d, nu, dt)?;
    let a = nu * dt;
    let df = d as f64;
    let r2 = 12.0 * a * a / (2.0 * a);
    let wd = a * a / (r2 * r2);
    let wa = (2.0 * a - 4.0 * (df - 1.0) * wd * r2) / (2.0 * r2);
    let w0 = 1.0 - 2.0 * df * wa - 2.0 * df * (df - 1.0) * wd;
    Ok(MomentSolution {
        radius: r2.sqrt(),
        center_weight: w0,
        axial_weight: wa,
        diagonal_weight: wd,
    })
}

/// Central, axial and face-diagonal nodes, `2d² + 1` in total.
pub fn sl2p_rule(d: usize, nu: f64, dt: f64) -> Result<CubatureRule> {
    check(d, nu, dt)?;
    if d == 1 {
        let mut rule = sl2e_rule(1, nu, dt)?;
        rule.kind = RuleKind::Sl2p;
        return Ok(rule);
    }
    let df = d as f64;
    let r = (6.0 * nu * dt).sqrt();
    let w0 = (df * df - 7.0 * df + 18.0) / 18.0;
    let wa = (4.0 - df) / 18.0;
    let wd = 1.0 / 36.0;
    let mut nodes = vec![vec![0.0; d]];
    let mut weights = vec![w0];
    for i in 0..d {
        nodes.push(axis(d, i, r));
        nodes.push(axis(d, i, -r));
        weights.extend([wa, wa]);
    }
    for i in 0..d {
        for j in i + 1..d {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut v = vec![0.0; d];
                v[i] = si * r;
                v[j] = sj * r;
                nodes.push(v);
                weights.push(wd);
            }
        }
    }
    Ok(CubatureRule::from_parts(d, nodes, weights, RuleKind::Sl2p, 2.0 * nu * dt))
}

pub fn deterministic_rule(d: usize) -> CubatureRule {
    CubatureRule::from_parts(d, vec![vec![0.0; d]], vec![1.0], RuleKind::Deterministic, 0.0)
}

/// Builds a rule by kind; `nu = 0` always yields the deterministic rule.
pub fn rule_for(kind: RuleKind, d: usize, nu: f64, dt: f64) -> Result<CubatureRule> {
    if nu == 0.0 || kind == RuleKind::Deterministic {
        return Ok(deterministic_rule(d));
    }
    match kind {
        RuleKind::Sl1 => sl1_rule(d, nu, dt),
        RuleKind::Sl2e => sl2e_rule(d, nu, dt),
        RuleKind::Sl2p => sl2p_rule(d, nu, dt),
        RuleKind::Deterministic => unreachable!(),
    }
}

fn double_factorial_odd(k: u32) -> f64 {
    // (2k-1)!!
    (1..=k).map(|i| (2 * i - 1) as f64).product()
}

/// Worst scaled moment defect against the rule's own Gaussian variance.
pub fn moment_defect(rule: &CubatureRule, max_order: usize) -> f64 {
    moment_defect_with_variance(rule, max_order, rule.variance)
}

/// Worst defect `|Σ ω ξ^α − E[Y^α]| / σ^{|α|}` over `|α| ≤ max_order`,
/// `Y ~ N(0, σ² I)`.
///
/// The deterministic rule targets no diffusion, so a reference variance
/// must be supplied to measure how far it is from a diffusive step.
pub fn moment_defect_with_variance(rule: &CubatureRule, max_order: usize, variance: f64) -> f64 {
    let d = rule.dim;
    let sigma = variance.sqrt();
    let mut worst: f64 = 0.0;
    let mut alpha = vec![0u32; d];
    loop {
        let order: u32 = alpha.iter().sum();
        if order as usize <= max_order {
            let approx: f64 = (0..rule.len())
                .map(|l| {
                    let node = rule.node(l);
                    rule.weights[l]
                        * node
                            .iter()
                            .zip(&alpha)
                            .map(|(x, &a)| x.powi(a as i32))
                            .product::<f64>()
                })
                .sum();
            let exact: f64 = alpha
                .iter()
                .map(|&a| {
                    if a % 2 == 1 {
                        0.0
                    } else {
                        double_factorial_odd(a / 2) * variance.powi(a as i32 / 2)
                    }
                })
                .product();
            let scale = if sigma > 0.0 { sigma.powi(order as i32) } else { 1.0 };
            worst = worst.max((approx - exact).abs() / scale);
        }
        // Next multi-index with |α| ≤ max_order.
        let mut k = 0;
        loop {
            if k == d {
                return worst;
            }
            alpha[k] += 1;
            if alpha.iter().sum::<u32>() as usize <= max_order {
                break;
            }
            alpha[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const NU: f64 = 0.1;
    const DT: f64 = 0.05;

    #[test]
    fn sl1_layout() {
        let r = sl1_rule(1, NU, DT).unwrap();
        assert_eq!(r.len(), 2);
        assert_abs_diff_eq!(r.node(0)[0], (2.0 * NU * DT).sqrt(), epsilon = 1e-15);
        assert_eq!(r.weights, vec![0.5, 0.5]);
        let r = sl1_rule(3, NU, DT).unwrap();
        assert_eq!(r.len(), 6);
        for i in 0..3 {
            let m2: f64 = (0..r.len()).map(|l| r.weights[l] * r.node(l)[i].powi(2)).sum();
            assert_abs_diff_eq!(m2, 2.0 * NU * DT, epsilon = 1e-15);
        }
        assert!(sl1_rule(2, 0.0, DT).is_err());
    }

    #[test]
    fn sl2e_layout() {
        let r = sl2e_rule(3, NU, DT).unwrap();
        assert_eq!(r.len(), 27);
        let r1 = sl2e_rule(1, NU, DT).unwrap();
        let m4: f64 = (0..3).map(|l| r1.weights[l] * r1.node(l)[0].powi(4)).sum();
        assert_abs_diff_eq!(m4, 12.0 * (NU * DT).powi(2), epsilon = 1e-15);
        let unit = sl2e_rule(1, 0.5, 1.0).unwrap();
        let mut pts: Vec<(f64, f64)> = (0..3).map(|l| (unit.node(l)[0], unit.weights[l])).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_abs_diff_eq!(pts[0].0, -(3.0f64).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(pts[1].1, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pts[2].1, 1.0 / 6.0, epsilon = 1e-15);
        assert!(moment_defect(&unit, 5) < 1e-13);
        assert!(matches!(sl2e_rule_with_cap(4, NU, DT, 80), Err(Error::NodeBudget { nodes: 81, .. })));
    }

    #[test]
    fn sl2p_weights() {
        let r = sl2p_rule(3, NU, DT).unwrap();
        assert_eq!(r.len(), 19);
        assert_abs_diff_eq!(r.weights[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[1], 1.0 / 18.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[18], 1.0 / 36.0, epsilon = 1e-15);
        assert!(!r.has_negative_weights);
        assert_eq!(sl2p_rule(4, NU, DT).unwrap().weights[1], 0.0);
        let r5 = sl2p_rule(5, NU, DT).unwrap();
        assert_abs_diff_eq!(r5.weights[1], -1.0 / 18.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r5.weight_sum(), 1.0, epsilon = 1e-13);
        assert!(r5.has_negative_weights);
        assert!(moment_defect(&sl2p_rule(2, NU, DT).unwrap(), 5) <= 1e-12);
    }

    #[test]
    fn moment_system_matches_closed_form() {
        let s = solve_moment_system(3, NU, DT).unwrap();
        assert_abs_diff_eq!(s.radius, (6.0 * NU * DT).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.center_weight, 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.axial_weight, 1.0 / 18.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.diagonal_weight, 1.0 / 36.0, epsilon = 1e-14);
        assert_abs_diff_eq!(solve_moment_system(6, NU, DT).unwrap().center_weight, 2.0 / 3.0, epsilon = 1e-14);
        for d in 2..=10 {
            let s = solve_moment_system(d, NU, DT).unwrap();
            let r = sl2p_rule(d, NU, DT).unwrap();
            assert_abs_diff_eq!(s.center_weight, r.weights[0], epsilon = 1e-14);
            assert_abs_diff_eq!(s.axial_weight, r.weights[1], epsilon = 1e-14);
            assert_abs_diff_eq!(s.diagonal_weight, *r.weights.last().unwrap(), epsilon = 1e-14);
            assert_abs_diff_eq!(s.radius, r.node(1).iter().map(|v| v.abs()).sum::<f64>(), epsilon = 1e-14);
        }
        assert!(solve_moment_system(1, NU, DT).is_err());
    }

    #[test]
    fn deterministic() {
        let r = deterministic_rule(3);
        assert_eq!(r.len(), 1);
        assert_eq!(r.weight_sum(), 1.0);
        // Order-2 defect against a diffusive reference is exactly one unit.
        assert_abs_diff_eq!(moment_defect_with_variance(&r, 2, 2.0 * NU * DT), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(moment_defect_with_variance(&r, 1, 2.0 * NU * DT), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn sl1_fourth_order_defect() {
        let r = sl1_rule(3, NU, DT).unwrap();
        assert!(moment_defect(&r, 3) <= 1e-12);
        assert!(moment_defect(&r, 4) > 1e-3);
    }

    #[test]
    fn symmetry() {
        for kind in [RuleKind::Sl1, RuleKind::Sl2e, RuleKind::Sl2p] {
            for d in 1..=4 {
                let r = rule_for(kind, d, NU, DT).unwrap();
                for l in 0..r.len() {
                    let neg: Vec<f64> = r.node(l).iter().map(|v| -v).collect();
                    let found = (0..r.len()).any(|m| {
                        r.weights[m] == r.weights[l]
                            && r.node(m).iter().zip(&neg).all(|(a, b)| (a - b).abs() < 1e-15)
                    });
                    assert!(found, "{kind:?} d={d} node {l}");
                }
            }
        }
    }

    #[test]
    fn parse_kind() {
        assert_eq!("SL2p".parse::<RuleKind>().unwrap(), RuleKind::Sl2p);
        assert!("sl3".parse::<RuleKind>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn weights_counts_and_symmetry(d in 1usize..8, nu in 1e-4f64..1.0, dt in 1e-4f64..0.5) {
            let cases = [
                (RuleKind::Sl1, 2 * d),
                (RuleKind::Sl2p, 2 * d * d + 1),
                (RuleKind::Sl2e, 3usize.pow(d as u32)),
            ];
            for (kind, count) in cases {
                if kind == RuleKind::Sl2e && d > 5 {
                    continue;
                }
                let r = rule_for(kind, d, nu, dt).unwrap();
                proptest::prop_assert_eq!(r.len(), count);
                proptest::prop_assert!((r.weight_sum() - 1.0).abs() <= 1e-13);
                for l in 0..r.len() {
                    let mirrored = (0..r.len()).any(|m| {
                        r.weights[m] == r.weights[l]
                            && r.node(m).iter().zip(r.node(l)).all(|(a, b)| (a + b).abs() <= 1e-15 * (1.0 + b.abs()))
                    });
                    proptest::prop_assert!(mirrored, "{:?} node {}", kind, l);
                }
            }
            proptest::prop_assert_eq!(deterministic_rule(d).len(), 1);
        }
    }
}
