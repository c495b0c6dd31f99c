//! Reconstruction of tensor trains from point evaluations.
//!
//! Each axis carries a grid of Chebyshev points, oversampled relative to the
//! polynomial degree. A sweep visits the cores in one direction: for core
//! `k` the oracle is sampled on the fibres `left_k × grid_k × right_{k+1}`,
//! the left/right interface matrices are inverted, and the mode coefficients
//! come from a least-squares fit against the Legendre Vandermonde matrix.
//! After orthogonalizing the updated core, maxvol picks the next pivot set.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::legendre::{self, BasisSpec};
use crate::tt::{TensorTrain, TtCore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceGate {
    CoreChange,
    HeldOut,
    Either,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossConfig {
    pub max_sweeps: usize,
    pub residual_tol: f64,
    /// Interior bond ranks, `d - 1` entries.
    pub ranks: Vec<usize>,
    /// Extra grid points per axis beyond `degree + 1`; `None` doubles the rows.
    pub oversampling: Option<usize>,
    pub seed: u64,
    pub gate: ConvergenceGate,
    pub holdout_points: usize,
}

impl CrossConfig {
    pub fn new(ranks: Vec<usize>) -> Self {
        Self {
            max_sweeps: 8,
            residual_tol: 1e-10,
            ranks,
            oversampling: None,
            seed: 0x5eed,
            gate: ConvergenceGate::CoreChange,
            holdout_points: 256,
        }
    }

    pub fn uniform(dim: usize, rank: usize) -> Self {
        Self::new(vec![rank; dim.saturating_sub(1)])
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::InvalidArgument("max_sweeps must be at least 1".into()));
        }
        if !(self.residual_tol > 0.0) {
            return Err(Error::InvalidArgument("residual_tol must be positive".into()));
        }
        if self.ranks.len() + 1 != dim {
            return Err(Error::Shape(format!(
                "{} bond ranks for dimension {dim}",
                self.ranks.len()
            )));
        }
        if self.ranks.iter().any(|&r| r == 0) {
            return Err(Error::InvalidArgument("bond ranks must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cross pivots per bond, as grid multi-indices, plus the axis grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSampleSet {
    /// `left[k]` holds `r_k` multi-indices over axes `0..k`.
    pub left: Vec<Vec<Vec<usize>>>,
    /// `right[k]` holds `r_k` multi-indices over axes `k..d`.
    pub right: Vec<Vec<Vec<usize>>>,
    pub grids: Vec<Vec<f64>>,
}

impl AdaptiveSampleSet {
    /// Physical coordinates of the left pivots of bond `k`.
    pub fn left_points(&self, k: usize) -> Vec<Vec<f64>> {
        self.left[k]
            .iter()
            .map(|idx| idx.iter().enumerate().map(|(a, &i)| self.grids[a][i]).collect())
            .collect()
    }

    /// Physical coordinates of the right pivots of bond `k`.
    pub fn right_points(&self, k: usize) -> Vec<Vec<f64>> {
        self.right[k]
            .iter()
            .map(|idx| idx.iter().enumerate().map(|(a, &i)| self.grids[k + a][i]).collect())
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub sweeps: usize,
    pub converged: bool,
    pub warning: bool,
    pub core_change: f64,
    pub holdout_residual: f64,
    pub oracle_calls: usize,
    pub init_calls: usize,
    pub holdout_calls: usize,
    pub calls_per_sweep: Vec<usize>,
    pub ranks: Vec<usize>,
}

pub struct WarmStart<'a> {
    pub tt: &'a TensorTrain,
    pub samples: Option<&'a AdaptiveSampleSet>,
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub tt: TensorTrain,
    pub samples: AdaptiveSampleSet,
    pub diagnostics: FitDiagnostics,
}

const MAXVOL_TOL: f64 = 1e-2;

/// Rows of a tall matrix whose square submatrix has locally maximal volume.
pub fn maxvol(matrix: &DMatrix<f64>) -> Result<Vec<usize>> {
    maxvol_from(matrix, None)
}

fn maxvol_from(a: &DMatrix<f64>, start: Option<&[usize]>) -> Result<Vec<usize>> {
    let (n, r) = a.shape();
    if n < r {
        return Err(Error::Shape(format!("maxvol needs rows >= cols, got {n}x{r}")));
    }
    if r == 0 {
        return Ok(Vec::new());
    }
    let sv = a.singular_values();
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > smax * 1e-12 && s > 0.0).count();
    if rank < r {
        return Err(Error::RankDeficient { rank, cols: r });
    }
    let mut rows = match start {
        Some(s) if s.len() == r && submatrix(a, s).try_inverse().is_some() => s.to_vec(),
        _ => greedy_rows(a),
    };
    for _ in 0..(100 * r).max(100) {
        let sub = submatrix(a, &rows);
        let inv = match sub.try_inverse() {
            Some(inv) => inv,
            None => return Err(Error::RankDeficient { rank: r - 1, cols: r }),
        };
        let b = a * inv;
        let (mut bi, mut bj, mut best) = (0, 0, 0.0);
        for i in 0..n {
            for j in 0..r {
                let v = b[(i, j)].abs();
                if v > best {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        }
        if best <= 1.0 + MAXVOL_TOL {
            break;
        }
        rows[bj] = bi;
    }
    Ok(rows)
}

fn submatrix(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

/// Gaussian elimination with row pivoting; the pivot rows start maxvol.
fn greedy_rows(a: &DMatrix<f64>) -> Vec<usize> {
    let (n, r) = a.shape();
    let mut work = a.clone();
    let mut used = vec![false; n];
    let mut rows = Vec::with_capacity(r);
    for c in 0..r {
        let (mut best, mut piv) = (-1.0, 0);
        for i in 0..n {
            if !used[i] && work[(i, c)].abs() > best {
                best = work[(i, c)].abs();
                piv = i;
            }
        }
        used[piv] = true;
        rows.push(piv);
        let p = work[(piv, c)];
        if p != 0.0 {
            for i in 0..n {
                if !used[i] {
                    let f = work[(i, c)] / p;
                    for cc in c..r {
                        work[(i, cc)] -= f * work[(piv, cc)];
                    }
                }
            }
        }
    }
    rows
}

struct Axis {
    grid: Vec<f64>,
    vander: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl Axis {
    fn new(basis: &BasisSpec, oversampling: Option<usize>) -> Result<Self> {
        let n1 = basis.size();
        let m = n1 + oversampling.unwrap_or(n1);
        let grid: Vec<f64> = (0..m)
            .map(|j| basis.half_width * (std::f64::consts::PI * (j as f64 + 0.5) / m as f64).cos())
            .collect();
        let mut vander = DMatrix::zeros(m, n1);
        let mut psi = vec![0.0; n1];
        for (j, &x) in grid.iter().enumerate() {
            legendre::legendre_values(x / basis.half_width, &mut psi);
            for i in 0..n1 {
                vander[(j, i)] = psi[i];
            }
        }
        let pinv = vander
            .clone()
            .pseudo_inverse(1e-14)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Self { grid, vander, pinv })
    }
}

/// Ranks clipped to what the mode sizes can support.
fn feasible_ranks(bases: &[BasisSpec], requested: &[usize], oversampled: &[usize]) -> Vec<usize> {
    let d = bases.len();
    let mut ranks = vec![1; d + 1];
    for k in 1..d {
        let left: f64 = bases[..k].iter().map(|b| b.size() as f64).product();
        let right: f64 = bases[k..].iter().map(|b| b.size() as f64).product();
        let grid_left: f64 = oversampled[..k].iter().map(|&m| m as f64).product();
        let cap = left.min(right).min(grid_left);
        ranks[k] = (requested[k - 1] as f64).min(cap) as usize;
    }
    // Neighbouring bonds must also be compatible with the local mode size.
    for _ in 0..d {
        for k in 1..d {
            ranks[k] = ranks[k].min(ranks[k - 1] * bases[k - 1].size());
            ranks[k] = ranks[k].min(ranks[k + 1] * bases[k].size());
        }
    }
    ranks
}

struct Sweeper<'a, F> {
    oracle: &'a F,
    bases: &'a [BasisSpec],
    axes: Vec<Axis>,
    ranks: Vec<usize>,
    left: Vec<Vec<Vec<usize>>>,
    right: Vec<Vec<Vec<usize>>>,
    lmat: Vec<DMatrix<f64>>,
    rmat: Vec<DMatrix<f64>>,
    cores: Vec<TtCore>,
    calls: usize,
}

impl<'a, F> Sweeper<'a, F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.bases.len()
    }

    fn sample_core(&mut self, k: usize) -> Result<Vec<f64>> {
        let (r0, r1) = (self.ranks[k], self.ranks[k + 1]);
        let m = self.axes[k].grid.len();
        let d = self.dim();
        let total = r0 * m * r1;
        let (left, right, axes, oracle) = (&self.left[k], &self.right[k + 1], &self.axes, self.oracle);
        let values = exec::try_map_indexed(total, |flat| {
            let b = flat % r1;
            let j = (flat / r1) % m;
            let a = flat / (r1 * m);
            let mut x = Vec::with_capacity(d);
            for (axis, &i) in left[a].iter().enumerate() {
                x.push(axes[axis].grid[i]);
            }
            x.push(axes[k].grid[j]);
            for (off, &i) in right[b].iter().enumerate() {
                x.push(axes[k + 1 + off].grid[i]);
            }
            let v = oracle(&x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite { point: x })
            }
        })?;
        self.calls += total;
        Ok(values)
    }

    /// Least-squares core from fibre samples, optionally skipping the left interface.
    fn solve_core(&self, k: usize, w: Vec<f64>, with_left: bool) -> Result<TtCore> {
        let (r0, r1) = (self.ranks[k], self.ranks[k + 1]);
        let axis = &self.axes[k];
        let m = axis.grid.len();
        let n1 = self.bases[k].size();
        let mut x = DMatrix::from_row_slice(r0, m * r1, &w);
        if with_left && r0 > 1 {
            let lu = self.lmat[k].clone().lu();
            x = lu
                .solve(&x)
                .ok_or(Error::RankDeficient { rank: r0 - 1, cols: r0 })?;
        } else if with_left {
            x /= self.lmat[k][(0, 0)];
        }
        // Re-read as (r0*m) x r1 and apply the inverse right interface.
        let mut flat = vec![0.0; r0 * m * r1];
        for a in 0..r0 {
            for c in 0..m * r1 {
                flat[a * m * r1 + c] = x[(a, c)];
            }
        }
        let y = DMatrix::from_row_slice(r0 * m, r1, &flat);
        let y = if r1 > 1 {
            let lu = self.rmat[k + 1].transpose().lu();
            lu.solve(&y.transpose())
                .ok_or(Error::RankDeficient { rank: r1 - 1, cols: r1 })?
                .transpose()
        } else {
            y / self.rmat[k + 1][(0, 0)]
        };
        let mut core = TtCore::zeros(r0, n1, r1);
        for a in 0..r0 {
            let block = y.rows(a * m, m);
            let coef = &axis.pinv * block;
            for i in 0..n1 {
                for b in 0..r1 {
                    let idx = core.index(a, i, b);
                    core.data[idx] = coef[(i, b)];
                }
            }
        }
        Ok(core)
    }

    fn forward_pass(&mut self) -> Result<()> {
        let d = self.dim();
        for k in 0..d {
            let w = self.sample_core(k)?;
            let core = self.solve_core(k, w, true)?;
            if k == d - 1 {
                self.cores[k] = core;
                break;
            }
            let n1 = core.size;
            let qr = core.left_unfolding().qr();
            let q = qr.q();
            let q = q.columns(0, self.ranks[k + 1]).into_owned();
            let qcore = TtCore::from_left_unfolding(&q, n1);
            let (r0, r1) = (self.ranks[k], self.ranks[k + 1]);
            let axis = &self.axes[k];
            let m = axis.grid.len();
            // Interface values at every candidate (a, j).
            let mut fibre = DMatrix::zeros(r0 * m, r1);
            for a2 in 0..r0 {
                let qa = DMatrix::from_fn(n1, r1, |i, b| qcore.get(a2, i, b));
                let vq = &axis.vander * qa;
                for a in 0..r0 {
                    let l = self.lmat[k][(a, a2)];
                    if l == 0.0 {
                        continue;
                    }
                    for j in 0..m {
                        for b in 0..r1 {
                            fibre[(a * m + j, b)] += l * vq[(j, b)];
                        }
                    }
                }
            }
            let start: Option<Vec<usize>> = self.left[k + 1]
                .iter()
                .map(|idx| {
                    if idx.len() != k + 1 {
                        return None;
                    }
                    let (prefix, last) = idx.split_at(k);
                    self.left[k]
                        .iter()
                        .position(|p| p.as_slice() == prefix)
                        .map(|a| a * m + last[0])
                })
                .collect();
            let rows = maxvol_from(&fibre, start.as_deref())?;
            self.left[k + 1] = rows
                .iter()
                .map(|&row| {
                    let mut idx = self.left[k][row / m].clone();
                    idx.push(row % m);
                    idx
                })
                .collect();
            self.lmat[k + 1] = submatrix(&fibre, &rows);
            self.cores[k] = qcore;
        }
        Ok(())
    }

    fn backward_pass(&mut self, with_left: bool) -> Result<()> {
        let d = self.dim();
        for k in (0..d).rev() {
            let w = self.sample_core(k)?;
            let core = self.solve_core(k, w, with_left)?;
            if k == 0 {
                self.cores[0] = core;
                break;
            }
            self.select_right(k, core)?;
        }
        Ok(())
    }

    /// LQ-orthogonalizes `core` as core `k` and chooses the right pivots of bond `k`.
    fn select_right(&mut self, k: usize, core: TtCore) -> Result<()> {
        let n1 = core.size;
        let (r0, r1) = (self.ranks[k], self.ranks[k + 1]);
        let qr = core.right_unfolding().transpose().qr();
        let q = qr.q();
        let q = q.columns(0, r0).into_owned();
        let qcore = TtCore::from_right_unfolding(&q.transpose(), n1);
        let axis = &self.axes[k];
        let m = axis.grid.len();
        // Transposed candidate matrix: rows (j, b), columns a.
        let mut fibre = DMatrix::zeros(m * r1, r0);
        for b2 in 0..r1 {
            let qb = DMatrix::from_fn(n1, r0, |i, a| qcore.get(a, i, b2));
            let vq = &axis.vander * qb;
            for b in 0..r1 {
                let rv = self.rmat[k + 1][(b2, b)];
                if rv == 0.0 {
                    continue;
                }
                for j in 0..m {
                    for a in 0..r0 {
                        fibre[(j * r1 + b, a)] += rv * vq[(j, a)];
                    }
                }
            }
        }
        let start: Option<Vec<usize>> = self.right[k]
            .iter()
            .map(|idx| {
                if idx.len() != self.dim() - k {
                    return None;
                }
                let (first, rest) = idx.split_at(1);
                self.right[k + 1]
                    .iter()
                    .position(|p| p.as_slice() == rest)
                    .map(|b| first[0] * r1 + b)
            })
            .collect();
        let rows = maxvol_from(&fibre, start.as_deref())?;
        self.right[k] = rows
            .iter()
            .map(|&row| {
                let mut idx = vec![row / r1];
                idx.extend_from_slice(&self.right[k + 1][row % r1]);
                idx
            })
            .collect();
        self.rmat[k] = submatrix(&fibre, &rows).transpose();
        self.cores[k] = qcore;
        Ok(())
    }

    fn train(&self) -> Result<TensorTrain> {
        TensorTrain::new(self.bases.to_vec(), self.cores.clone())
    }
}

fn holdout_set<F>(oracle: &F, bases: &[BasisSpec], count: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<f64>)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4f1d_0a7e_55e7_c0de);
    let points: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            bases
                .iter()
                .map(|b| rng.gen_range(-b.half_width..=b.half_width))
                .collect()
        })
        .collect();
    let values = exec::try_map_indexed(count, |i| {
        let v = oracle(&points[i]);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { point: points[i].clone() })
        }
    })?;
    Ok((points, values))
}

fn holdout_residual(tt: &TensorTrain, points: &[Vec<f64>], values: &[f64]) -> f64 {
    let errs = exec::map_indexed(points.len(), |i| {
        let e = tt.value_unchecked(&points[i]) - values[i];
        (e * e, values[i] * values[i])
    });
    let (num, den) = errs
        .into_iter()
        .fold((0.0, 0.0), |acc, (e, v)| (acc.0 + e, acc.1 + v));
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

fn relative_change(new: &TensorTrain, old: &TensorTrain) -> Result<f64> {
    let diff = new.linear_combination(1.0, old, -1.0)?;
    let scale = new.norm();
    let dn = diff.norm();
    Ok(if scale > 0.0 { dn / scale } else { dn })
}

/// Fits a tensor train to `oracle` over the box described by `bases`.
pub fn fit<F>(oracle: &F, bases: &[BasisSpec], config: &CrossConfig, warm: Option<WarmStart<'_>>) -> Result<FitOutput>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = bases.len();
    config.validate(d)?;
    let axes = bases
        .iter()
        .map(|b| Axis::new(b, config.oversampling))
        .collect::<Result<Vec<_>>>()?;
    let grid_sizes: Vec<usize> = axes.iter().map(|a| a.grid.len()).collect();
    let ranks = feasible_ranks(bases, &config.ranks, &grid_sizes);

    let mut sweeper = Sweeper {
        oracle,
        bases,
        axes,
        ranks: ranks.clone(),
        left: vec![vec![Vec::new()]; d + 1],
        right: vec![vec![Vec::new()]; d + 1],
        lmat: (0..=d).map(|k| DMatrix::identity(ranks[k], ranks[k])).collect(),
        rmat: (0..=d).map(|k| DMatrix::identity(ranks[k], ranks[k])).collect(),
        cores: bases
            .iter()
            .enumerate()
            .map(|(k, b)| TtCore::zeros(ranks[k], b.size(), ranks[k + 1]))
            .collect(),
        calls: 0,
    };

    let warm_tt = match warm {
        Some(w) if compatible(w.tt, bases, &ranks) => Some((w.tt, w.samples)),
        _ => None,
    };
    let previous = if let Some((tt, samples)) = warm_tt {
        let mut ortho = tt.clone();
        ortho.right_orthogonalize();
        sweeper.cores = ortho.cores().to_vec();
        let reuse = samples.filter(|s| {
            s.right.len() == d + 1 && (1..d).all(|k| s.right[k].len() == ranks[k]) && s.grids.len() == d
        });
        for k in (1..d).rev() {
            let reused = reuse.and_then(|s| {
                let pivots = s.right[k].clone();
                let rm = right_interface(&sweeper, k, &pivots);
                let cond_ok = rm.clone().try_inverse().is_some() && condition(&rm) < 1e8;
                cond_ok.then_some((pivots, rm))
            });
            match reused {
                Some((pivots, rm)) => {
                    sweeper.right[k] = pivots;
                    sweeper.rmat[k] = rm;
                }
                None => {
                    let core = sweeper.cores[k].clone();
                    sweeper.select_right(k, core)?;
                }
            }
        }
        if let Some(s) = reuse {
            if s.left.len() == d + 1 && (1..d).all(|k| s.left[k].len() == ranks[k]) {
                sweeper.left = s.left.clone();
            }
        }
        tt.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for k in 1..d {
            let space: usize = grid_sizes[..k].iter().product::<usize>().min(1 << 40);
            let picks = sample(&mut rng, space, ranks[k]);
            sweeper.left[k] = picks
                .iter()
                .map(|mut code| {
                    let mut idx = Vec::with_capacity(k);
                    for &m in &grid_sizes[..k] {
                        idx.push(code % m);
                        code /= m;
                    }
                    idx
                })
                .collect();
        }
        sweeper.backward_pass(false)?;
        sweeper.train()?
    };
    let init_calls = sweeper.calls;
    sweeper.calls = 0;

    let (hold_points, hold_values) = holdout_set(oracle, bases, config.holdout_points, config.seed)?;
    let mut diag = FitDiagnostics {
        init_calls,
        holdout_calls: hold_points.len(),
        ranks: ranks[1..d].to_vec(),
        ..Default::default()
    };
    let mut prev = previous;
    let mut current = prev.clone();
    for sweep in 1..=config.max_sweeps {
        if sweep % 2 == 1 {
            sweeper.forward_pass()?;
        } else {
            sweeper.backward_pass(true)?;
        }
        diag.calls_per_sweep.push(sweeper.calls);
        diag.oracle_calls += sweeper.calls;
        sweeper.calls = 0;
        current = sweeper.train()?;
        diag.sweeps = sweep;
        diag.core_change = relative_change(&current, &prev)?;
        diag.holdout_residual = holdout_residual(&current, &hold_points, &hold_values);
        let by_change = diag.core_change < config.residual_tol;
        let by_holdout = diag.holdout_residual < config.residual_tol;
        let done = match config.gate {
            ConvergenceGate::CoreChange => by_change,
            ConvergenceGate::HeldOut => by_holdout,
            ConvergenceGate::Either => by_change || by_holdout,
        };
        if done {
            diag.converged = true;
            break;
        }
        prev = current.clone();
    }
    diag.warning = !diag.converged;
    let samples = AdaptiveSampleSet {
        left: sweeper.left.clone(),
        right: sweeper.right.clone(),
        grids: sweeper.axes.iter().map(|a| a.grid.clone()).collect(),
    };
    Ok(FitOutput {
        tt: current,
        samples,
        diagnostics: diag,
    })
}

fn compatible(tt: &TensorTrain, bases: &[BasisSpec], ranks: &[usize]) -> bool {
    tt.dim() == bases.len()
        && tt.bases().iter().zip(bases).all(|(a, b)| a == b)
        && tt.cores().iter().enumerate().all(|(k, c)| c.right == ranks[k + 1])
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let min = sv.min();
    if min > 0.0 {
        sv.max() / min
    } else {
        f64::INFINITY
    }
}

/// Suffix products of cores `k..d` evaluated at grid pivots: `(r_k x r_k)`,
/// entry `(component, pivot)`.
fn right_interface<F>(s: &Sweeper<'_, F>, k: usize, pivots: &[Vec<usize>]) -> DMatrix<f64> {
    let d = s.bases.len();
    let r = s.ranks[k];
    let mut out = DMatrix::zeros(r, pivots.len());
    for (p, idx) in pivots.iter().enumerate() {
        let mut col = vec![1.0];
        for axis in (k..d).rev() {
            let core = &s.cores[axis];
            let i = idx[axis - k];
            let psi: Vec<f64> = (0..core.size).map(|c| s.axes[axis].vander[(i, c)]).collect();
            let mut next = vec![0.0; core.left];
            for a in 0..core.left {
                let mut acc = 0.0;
                for (c, &pv) in psi.iter().enumerate() {
                    for b in 0..core.right {
                        acc += core.get(a, c, b) * pv * col[b];
                    }
                }
                next[a] = acc;
            }
            col = next;
        }
        for a in 0..r {
            out[(a, p)] = col[a];
        }
    }
    out
}

/// Fits `exp` of a log-form train as an ordinary train, for integration.
pub fn refit_exponential(tt: &TensorTrain, config: &CrossConfig) -> Result<FitOutput> {
    if !tt.is_log_form() {
        return Err(Error::InvalidArgument("train is not in log form".into()));
    }
    let oracle = |x: &[f64]| tt.value_unchecked(x);
    let mut out = fit(&oracle, tt.bases(), config, None)?;
    out.tt = out.tt.with_extrapolation(tt.extrapolation());
    Ok(out)
}
