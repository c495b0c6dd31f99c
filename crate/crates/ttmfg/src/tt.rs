//! Tensor-train functions over a tensor Legendre basis.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legendre::{self, BasisSpec};

/// One order-3 core with shape `(left, size, right)`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtCore {
    pub left: usize,
    pub size: usize,
    pub right: usize,
    pub data: Vec<f64>,
}

impl TtCore {
    pub fn zeros(left: usize, size: usize, right: usize) -> Self {
        Self {
            left,
            size,
            right,
            data: vec![0.0; left * size * right],
        }
    }

    pub fn from_data(left: usize, size: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != left * size * right {
            return Err(Error::Shape(format!(
                "core payload has {} entries, expected {left}x{size}x{right}",
                data.len()
            )));
        }
        Ok(Self {
            left,
            size,
            right,
            data,
        })
    }

    #[inline]
    pub fn index(&self, a: usize, i: usize, b: usize) -> usize {
        (a * self.size + i) * self.right + b
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[self.index(a, i, b)]
    }

    /// `(left*size) x right` unfolding.
    pub(crate) fn left_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.left * self.size, self.right, &self.data)
    }

    /// `left x (size*right)` unfolding.
    pub(crate) fn right_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.left, self.size * self.right, &self.data)
    }

    pub(crate) fn from_left_unfolding(m: &DMatrix<f64>, size: usize) -> Self {
        let right = m.ncols();
        let left = m.nrows() / size;
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..right {
                data.push(m[(r, c)]);
            }
        }
        Self {
            left,
            size,
            right,
            data,
        }
    }

    pub(crate) fn from_right_unfolding(m: &DMatrix<f64>, size: usize) -> Self {
        let left = m.nrows();
        let right = m.ncols() / size;
        let mut data = Vec::with_capacity(m.len());
        for r in 0..left {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self {
            left,
            size,
            right,
            data,
        }
    }

    /// `Σ_i w_i C[:, i, :]` written into `out` (row-major, `left x right`).
    #[inline]
    fn contract_mode(&self, weights: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (n, r) = (self.size, self.right);
        for a in 0..self.left {
            let row = &mut out[a * r..(a + 1) * r];
            for (i, &w) in weights.iter().enumerate().take(n) {
                if w == 0.0 {
                    continue;
                }
                let base = (a * n + i) * r;
                for (o, c) in row.iter_mut().zip(&self.data[base..base + r]) {
                    *o += w * c;
                }
            }
        }
    }
}

/// How evaluation treats coordinates outside `[-L, L]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Extrapolation {
    /// Polynomial extension up to `L·(1 + margin)`, clamped beyond.
    Margin(f64),
    /// Polynomial extension everywhere.
    Unlimited,
}

impl Default for Extrapolation {
    fn default() -> Self {
        Extrapolation::Margin(0.1)
    }
}

impl Extrapolation {
    #[inline]
    fn apply(self, s: f64) -> f64 {
        match self {
            Extrapolation::Margin(m) => s.clamp(-1.0 - m, 1.0 + m),
            Extrapolation::Unlimited => s,
        }
    }
}

/// Value, gradient and Laplacian at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointDerivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub laplacian: f64,
}

#[derive(Deserialize)]
struct RawTensorTrain {
    bases: Vec<BasisSpec>,
    cores: Vec<TtCore>,
    log_form: bool,
    #[serde(default)]
    extrapolation: Extrapolation,
}

impl TryFrom<RawTensorTrain> for TensorTrain {
    type Error = Error;

    fn try_from(raw: RawTensorTrain) -> Result<Self> {
        for b in &raw.bases {
            BasisSpec::new(b.degree, b.half_width)?;
        }
        Ok(TensorTrain::new(raw.bases, raw.cores)?
            .with_log_form(raw.log_form)
            .with_extrapolation(raw.extrapolation))
    }
}

/// A d-variate function `v(x) = Σ c[i_1..i_d] Π ψ_{i_k}(x_k / L_k)` with the
/// coefficient tensor in TT format. In log form the expansion represents
/// `ln v` and evaluation exponentiates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensorTrain")]
pub struct TensorTrain {
    bases: Vec<BasisSpec>,
    cores: Vec<TtCore>,
    log_form: bool,
    extrapolation: Extrapolation,
}

impl TensorTrain {
    pub fn new(bases: Vec<BasisSpec>, cores: Vec<TtCore>) -> Result<Self> {
        if bases.is_empty() || bases.len() != cores.len() {
            return Err(Error::Shape(format!(
                "{} bases for {} cores",
                bases.len(),
                cores.len()
            )));
        }
        for (k, (b, c)) in bases.iter().zip(&cores).enumerate() {
            if c.size != b.size() {
                return Err(Error::Shape(format!(
                    "core {k} mode size {} does not match degree {}",
                    c.size, b.degree
                )));
            }
            if c.data.len() != c.left * c.size * c.right {
                return Err(Error::Shape(format!("core {k} payload length")));
            }
            if c.left == 0 || c.right == 0 {
                return Err(Error::Shape(format!("core {k} has a zero rank")));
            }
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(Error::Shape("boundary ranks must be 1".into()));
        }
        for k in 1..cores.len() {
            if cores[k - 1].right != cores[k].left {
                return Err(Error::Shape(format!(
                    "rank chain broken between cores {} and {k}: {} vs {}",
                    k - 1,
                    cores[k - 1].right,
                    cores[k].left
                )));
            }
        }
        Ok(Self {
            bases,
            cores,
            log_form: false,
            extrapolation: Extrapolation::default(),
        })
    }

    /// Uniform basis on every axis.
    pub fn uniform_bases(dim: usize, degree: usize, half_width: f64) -> Result<Vec<BasisSpec>> {
        let b = BasisSpec::new(degree, half_width)?;
        Ok(vec![b; dim])
    }

    pub fn zeros(bases: Vec<BasisSpec>, ranks: &[usize]) -> Result<Self> {
        let dims = chain(bases.len(), ranks)?;
        let cores = bases
            .iter()
            .enumerate()
            .map(|(k, b)| TtCore::zeros(dims[k], b.size(), dims[k + 1]))
            .collect();
        Self::new(bases, cores)
    }

    pub fn constant(bases: Vec<BasisSpec>, value: f64) -> Result<Self> {
        let factors = bases
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let mut f = vec![0.0; b.size()];
                f[0] = if k == 0 { value } else { 1.0 };
                f
            })
            .collect();
        Self::rank_one(bases, factors)
    }

    /// Rank-one train with per-axis coefficient vectors.
    pub fn rank_one(bases: Vec<BasisSpec>, factors: Vec<Vec<f64>>) -> Result<Self> {
        let cores = factors
            .into_iter()
            .map(|f| {
                let n = f.len();
                TtCore::from_data(1, n, 1, f)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bases, cores)
    }

    /// Entries drawn uniformly from `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(bases: Vec<BasisSpec>, ranks: &[usize], rng: &mut R) -> Result<Self> {
        let mut tt = Self::zeros(bases, ranks)?;
        for c in &mut tt.cores {
            for v in &mut c.data {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        Ok(tt)
    }

    pub fn with_log_form(mut self, log_form: bool) -> Self {
        self.log_form = log_form;
        self
    }

    pub fn with_extrapolation(mut self, extrapolation: Extrapolation) -> Self {
        self.extrapolation = extrapolation;
        self
    }

    pub fn dim(&self) -> usize {
        self.cores.len()
    }

    pub fn bases(&self) -> &[BasisSpec] {
        &self.bases
    }

    pub fn cores(&self) -> &[TtCore] {
        &self.cores
    }

    pub fn is_log_form(&self) -> bool {
        self.log_form
    }

    pub fn extrapolation(&self) -> Extrapolation {
        self.extrapolation
    }

    /// Interior bond ranks `r_1 … r_{d-1}`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores[..self.dim() - 1].iter().map(|c| c.right).collect()
    }

    pub fn max_rank(&self) -> usize {
        self.cores.iter().map(|c| c.right.max(c.left)).max().unwrap_or(1)
    }

    pub fn parameter_count(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, train has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { point: x.to_vec() });
        }
        Ok(())
    }

    #[inline]
    fn reference(&self, k: usize, x: f64) -> f64 {
        self.extrapolation.apply(x / self.bases[k].half_width)
    }

    /// The represented expansion without exponentiation.
    pub fn evaluate_exponent(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.expansion(x))
    }

    pub(crate) fn expansion(&self, x: &[f64]) -> f64 {
        let max_size = self.bases.iter().map(|b| b.size()).max().unwrap_or(1);
        let max_rank = self.max_rank();
        let mut psi = vec![0.0; max_size];
        let mut vec_in = vec![0.0; max_rank];
        let mut vec_out = vec![0.0; max_rank];
        vec_in[0] = 1.0;
        for (k, core) in self.cores.iter().enumerate() {
            let n = core.size;
            legendre::legendre_values(self.reference(k, x[k]), &mut psi[..n]);
            let r = core.right;
            vec_out[..r].iter_mut().for_each(|v| *v = 0.0);
            for a in 0..core.left {
                let va = vec_in[a];
                if va == 0.0 {
                    continue;
                }
                for (i, &p) in psi[..n].iter().enumerate() {
                    let w = va * p;
                    let base = (a * n + i) * r;
                    for (o, c) in vec_out[..r].iter_mut().zip(&core.data[base..base + r]) {
                        *o += w * c;
                    }
                }
            }
            std::mem::swap(&mut vec_in, &mut vec_out);
        }
        vec_in[0]
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let g = self.evaluate_exponent(x)?;
        Ok(if self.log_form { g.exp() } else { g })
    }

    /// Fast path for callers that already validated the point.
    #[inline]
    pub(crate) fn value_unchecked(&self, x: &[f64]) -> f64 {
        let g = self.expansion(x);
        if self.log_form {
            g.exp()
        } else {
            g
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.derivatives_unchecked(x, false).gradient)
    }

    pub fn laplacian(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.derivatives_unchecked(x, true).laplacian)
    }

    pub fn derivatives(&self, x: &[f64]) -> Result<PointDerivatives> {
        self.check_point(x)?;
        Ok(self.derivatives_unchecked(x, true))
    }

    /// Prefix/suffix sweep: every partial derivative reuses the shared left
    /// and right contractions, so the cost is `O(d n R^2)`.
    pub(crate) fn derivatives_unchecked(&self, x: &[f64], with_laplacian: bool) -> PointDerivatives {
        let d = self.dim();
        let mut mats0 = Vec::with_capacity(d);
        let mut mats1 = Vec::with_capacity(d);
        let mut mats2 = Vec::with_capacity(d);
        for (k, core) in self.cores.iter().enumerate() {
            let n = core.size;
            let mut v = vec![0.0; n];
            let mut d1 = vec![0.0; n];
            let mut d2 = vec![0.0; n];
            let s = self.reference(k, x[k]);
            legendre::legendre_with_derivatives(
                s,
                &mut v,
                Some(&mut d1),
                if with_laplacian { Some(&mut d2) } else { None },
            );
            // Beyond a clamp the function is constant along this axis.
            let clamped = match self.extrapolation {
                Extrapolation::Margin(m) => (x[k] / self.bases[k].half_width).abs() > 1.0 + m,
                Extrapolation::Unlimited => false,
            };
            let scale = if clamped { 0.0 } else { 1.0 / self.bases[k].half_width };
            let mut m0 = vec![0.0; core.left * core.right];
            let mut m1 = vec![0.0; core.left * core.right];
            core.contract_mode(&v, &mut m0);
            d1.iter_mut().for_each(|v| *v *= scale);
            core.contract_mode(&d1, &mut m1);
            mats0.push(m0);
            mats1.push(m1);
            if with_laplacian {
                let mut m2 = vec![0.0; core.left * core.right];
                d2.iter_mut().for_each(|v| *v *= scale * scale);
                core.contract_mode(&d2, &mut m2);
                mats2.push(m2);
            }
        }
        // prefix[k]: row vector after cores 0..k; suffix[k]: column vector of cores k..d.
        let mut prefix: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
        prefix.push(vec![1.0]);
        for k in 0..d {
            let c = &self.cores[k];
            prefix.push(row_times(&prefix[k], &mats0[k], c.left, c.right));
        }
        let mut suffix: Vec<Vec<f64>> = vec![Vec::new(); d + 1];
        suffix[d] = vec![1.0];
        for k in (0..d).rev() {
            let c = &self.cores[k];
            suffix[k] = times_col(&mats0[k], &suffix[k + 1], c.left, c.right);
        }
        let g = prefix[d][0];
        let mut grad = vec![0.0; d];
        let mut lap = 0.0;
        for k in 0..d {
            let c = &self.cores[k];
            grad[k] = bilinear(&prefix[k], &mats1[k], &suffix[k + 1], c.left, c.right);
            if with_laplacian {
                lap += bilinear(&prefix[k], &mats2[k], &suffix[k + 1], c.left, c.right);
            }
        }
        if self.log_form {
            let value = g.exp();
            let norm2: f64 = grad.iter().map(|v| v * v).sum();
            grad.iter_mut().for_each(|v| *v *= value);
            PointDerivatives {
                value,
                gradient: grad,
                laplacian: value * (lap + norm2),
            }
        } else {
            PointDerivatives {
                value: g,
                gradient: grad,
                laplacian: lap,
            }
        }
    }

    /// `∫ x_j^p v(x) dx` over the box (`axis = None` integrates `v`).
    pub fn moment(&self, p: usize, axis: Option<usize>) -> Result<f64> {
        if self.log_form {
            return Err(Error::Unsupported(
                "moments of a log-form train; refit the exponential with cross::refit_exponential first"
                    .into(),
            ));
        }
        if let Some(j) = axis {
            if j >= self.dim() {
                return Err(Error::InvalidArgument(format!("axis {j} out of range")));
            }
        }
        let vectors: Vec<Vec<f64>> = self
            .bases
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let power = if axis == Some(k) { p } else { 0 };
                let scale = b.half_width.powi(power as i32 + 1);
                legendre::moment_vector(b, power).iter().map(|v| v * scale).collect()
            })
            .collect();
        Ok(self.contract_all(&vectors))
    }

    /// `∫ x_j^p v(x) dx` over a sub-box given by per-axis physical bounds.
    pub fn box_moment(&self, p: usize, axis: Option<usize>, bounds: &[(f64, f64)]) -> Result<f64> {
        if self.log_form {
            return Err(Error::Unsupported("moments of a log-form train".into()));
        }
        if bounds.len() != self.dim() {
            return Err(Error::Shape("one interval per axis is required".into()));
        }
        let vectors: Vec<Vec<f64>> = self
            .bases
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let power = if axis == Some(k) { p } else { 0 };
                let (lo, hi) = bounds[k];
                let l = b.half_width;
                let scale = l.powi(power as i32 + 1);
                legendre::interval_moments(b.degree, power, lo / l, hi / l)
                    .into_iter()
                    .map(|v| v * scale)
                    .collect()
            })
            .collect();
        Ok(self.contract_all(&vectors))
    }

    /// Contracts each core with a per-axis weight vector.
    pub(crate) fn contract_all(&self, vectors: &[Vec<f64>]) -> f64 {
        let mut row = vec![1.0];
        for (core, w) in self.cores.iter().zip(vectors) {
            let mut m = vec![0.0; core.left * core.right];
            core.contract_mode(w, &mut m);
            row = row_times(&row, &m, core.left, core.right);
        }
        row[0]
    }

    /// Coefficient-space inner product.
    pub fn dot(&self, other: &TensorTrain) -> Result<f64> {
        self.check_compatible(other)?;
        let mut z = DMatrix::from_element(1, 1, 1.0);
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let mut next = DMatrix::zeros(a.right, b.right);
            for i in 0..a.size {
                let ai = slice_matrix(a, i);
                let bi = slice_matrix(b, i);
                next += ai.transpose() * &z * bi;
            }
            z = next;
        }
        Ok(z[(0, 0)])
    }

    /// Frobenius norm of the coefficient tensor, computed by orthogonalization.
    pub fn norm(&self) -> f64 {
        let mut tt = self.clone();
        tt.left_orthogonalize();
        let last = &tt.cores[tt.dim() - 1];
        last.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_compatible(&self, other: &TensorTrain) -> Result<()> {
        if self.dim() != other.dim()
            || self
                .bases
                .iter()
                .zip(&other.bases)
                .any(|(a, b)| a.size() != b.size())
        {
            return Err(Error::Shape("trains have different mode sizes".into()));
        }
        Ok(())
    }

    /// Block-diagonal sum `a·self ⊕ b·other`.
    pub(crate) fn linear_combination(&self, a: f64, other: &TensorTrain, b: f64) -> Result<TensorTrain> {
        self.check_compatible(other)?;
        let d = self.dim();
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let (x, y) = (&self.cores[k], &other.cores[k]);
            let left = if k == 0 { 1 } else { x.left + y.left };
            let right = if k == d - 1 { 1 } else { x.right + y.right };
            let mut c = TtCore::zeros(left, x.size, right);
            let (ox_l, oy_l) = (0, if k == 0 { 0 } else { x.left });
            let (ox_r, oy_r) = (0, if k == d - 1 { 0 } else { x.right });
            let (sx, sy) = if k == 0 { (a, b) } else { (1.0, 1.0) };
            for i in 0..x.size {
                for p in 0..x.left {
                    for q in 0..x.right {
                        let idx = c.index(ox_l + p, i, ox_r + q);
                        c.data[idx] += sx * x.get(p, i, q);
                    }
                }
                for p in 0..y.left {
                    for q in 0..y.right {
                        let idx = c.index(oy_l + p, i, oy_r + q);
                        c.data[idx] += sy * y.get(p, i, q);
                    }
                }
            }
            cores.push(c);
        }
        Ok(TensorTrain::new(self.bases.clone(), cores)?
            .with_log_form(self.log_form)
            .with_extrapolation(self.extrapolation))
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        self.cores[0].data.iter_mut().for_each(|v| *v *= factor);
    }

    /// QR sweep left to right; the norm ends up in the last core.
    pub(crate) fn left_orthogonalize(&mut self) {
        let d = self.dim();
        for k in 0..d - 1 {
            let unfold = self.cores[k].left_unfolding();
            let size = self.cores[k].size;
            let qr = unfold.qr();
            let q = qr.q();
            let r = qr.r();
            self.cores[k] = TtCore::from_left_unfolding(&q, size);
            let next = &self.cores[k + 1];
            let next_size = next.size;
            let merged = &r * next.right_unfolding();
            self.cores[k + 1] = TtCore::from_right_unfolding(&merged, next_size);
        }
    }

    /// LQ sweep right to left; the norm ends up in the first core.
    pub(crate) fn right_orthogonalize(&mut self) {
        let d = self.dim();
        for k in (1..d).rev() {
            let size = self.cores[k].size;
            let unfold_t = self.cores[k].right_unfolding().transpose();
            let qr = unfold_t.qr();
            let q = qr.q();
            let r = qr.r();
            self.cores[k] = TtCore::from_right_unfolding(&q.transpose(), size);
            let prev = &self.cores[k - 1];
            let prev_size = prev.size;
            let merged = prev.left_unfolding() * r.transpose();
            self.cores[k - 1] = TtCore::from_left_unfolding(&merged, prev_size);
        }
    }

    /// TT-SVD rounding to relative Frobenius accuracy `tol`.
    pub fn round(&self, tol: f64) -> Result<TensorTrain> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("rounding tolerance must be positive, got {tol}")));
        }
        let d = self.dim();
        if d == 1 || self.cores.iter().all(|c| c.right == 1) {
            return Ok(self.clone());
        }
        let mut tt = self.clone();
        tt.right_orthogonalize();
        let total = tt.cores[0].data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let delta = tol * total / ((d - 1) as f64).sqrt();
        for k in 0..d - 1 {
            let size = tt.cores[k].size;
            let unfold = tt.cores[k].left_unfolding();
            let svd = unfold.svd(true, true);
            let u = svd.u.expect("left singular vectors");
            let vt = svd.v_t.expect("right singular vectors");
            let sigma = svd.singular_values;
            let mut order: Vec<usize> = (0..sigma.len()).collect();
            order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
            let mut keep = order.len();
            let mut tail = 0.0;
            while keep > 1 {
                let s = sigma[order[keep - 1]];
                if tail + s * s > delta * delta {
                    break;
                }
                tail += s * s;
                keep -= 1;
            }
            let mut u_kept = DMatrix::zeros(u.nrows(), keep);
            let mut sv = DMatrix::zeros(keep, vt.ncols());
            for (c, &idx) in order[..keep].iter().enumerate() {
                u_kept.set_column(c, &u.column(idx));
                let row = vt.row(idx) * sigma[idx];
                sv.set_row(c, &row);
            }
            tt.cores[k] = TtCore::from_left_unfolding(&u_kept, size);
            let next = &tt.cores[k + 1];
            let next_size = next.size;
            let merged = sv * next.right_unfolding();
            tt.cores[k + 1] = TtCore::from_right_unfolding(&merged, next_size);
        }
        Ok(tt)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn chain(d: usize, ranks: &[usize]) -> Result<Vec<usize>> {
    if d == 0 {
        return Err(Error::Shape("dimension must be positive".into()));
    }
    if ranks.len() != d - 1 {
        return Err(Error::Shape(format!("{} bond ranks for dimension {d}", ranks.len())));
    }
    if ranks.iter().any(|&r| r == 0) {
        return Err(Error::InvalidArgument("bond ranks must be at least 1".into()));
    }
    let mut dims = vec![1];
    dims.extend_from_slice(ranks);
    dims.push(1);
    Ok(dims)
}

fn slice_matrix(c: &TtCore, i: usize) -> DMatrix<f64> {
    DMatrix::from_fn(c.left, c.right, |a, b| c.get(a, i, b))
}

#[inline]
fn row_times(row: &[f64], m: &[f64], left: usize, right: usize) -> Vec<f64> {
    let mut out = vec![0.0; right];
    for a in 0..left {
        let va = row[a];
        for (o, v) in out.iter_mut().zip(&m[a * right..(a + 1) * right]) {
            *o += va * v;
        }
    }
    out
}

#[inline]
fn times_col(m: &[f64], col: &[f64], left: usize, right: usize) -> Vec<f64> {
    (0..left)
        .map(|a| m[a * right..(a + 1) * right].iter().zip(col).map(|(x, y)| x * y).sum())
        .collect()
}

#[inline]
fn bilinear(row: &[f64], m: &[f64], col: &[f64], left: usize, right: usize) -> f64 {
    let mut acc = 0.0;
    for a in 0..left {
        let inner: f64 = m[a * right..(a + 1) * right].iter().zip(col).map(|(x, y)| x * y).sum();
        acc += row[a] * inner;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bases(d: usize, n: usize, l: f64) -> Vec<BasisSpec> {
        TensorTrain::uniform_bases(d, n, l).unwrap()
    }

    fn product_of_one_plus_x(d: usize) -> TensorTrain {
        let f = vec![vec![1.0, 1.0]; d];
        TensorTrain::rank_one(bases(d, 1, 1.0), f).unwrap()
    }

    /// Independent oracle: sum over every multi-index of the full coefficient tensor.
    fn dense_eval(tt: &TensorTrain, x: &[f64]) -> f64 {
        let d = tt.dim();
        let psi: Vec<Vec<f64>> = (0..d)
            .map(|k| {
                let b = tt.bases()[k];
                let s = x[k] / b.half_width;
                let mut v = vec![0.0; b.size()];
                let (mut p0, mut p1) = (1.0, s);
                for (i, slot) in v.iter_mut().enumerate() {
                    *slot = match i {
                        0 => 1.0,
                        1 => s,
                        _ => {
                            let fi = (i - 1) as f64;
                            let p2 = ((2.0 * fi + 1.0) * s * p1 - fi * p0) / (fi + 1.0);
                            p0 = p1;
                            p1 = p2;
                            p2
                        }
                    };
                }
                v
            })
            .collect();
        let sizes: Vec<usize> = tt.cores().iter().map(|c| c.size).collect();
        let mut idx = vec![0usize; d];
        let mut total = 0.0;
        loop {
            let mut row = vec![1.0];
            for k in 0..d {
                let c = &tt.cores()[k];
                let mut next = vec![0.0; c.right];
                for a in 0..c.left {
                    for b in 0..c.right {
                        next[b] += row[a] * c.get(a, idx[k], b);
                    }
                }
                row = next;
            }
            let basis: f64 = (0..d).map(|k| psi[k][idx[k]]).product();
            total += row[0] * basis;
            let mut k = 0;
            loop {
                if k == d {
                    return total;
                }
                idx[k] += 1;
                if idx[k] < sizes[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn separable_product_and_zero() {
        let tt = product_of_one_plus_x(3);
        assert_eq!(tt.evaluate(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(tt.evaluate(&[0.5, -0.5, 0.25]).unwrap(), 1.5 * 0.5 * 1.25, epsilon = 1e-15);
        let z = TensorTrain::zeros(bases(3, 3, 2.0), &[2, 3]).unwrap();
        assert_eq!(z.evaluate(&[0.3, -1.0, 1.9]).unwrap(), 0.0);
    }

    #[test]
    fn construction_validates_rank_chain() {
        let b = bases(2, 1, 1.0);
        let bad = vec![TtCore::zeros(1, 2, 2), TtCore::zeros(3, 2, 1)];
        assert!(matches!(TensorTrain::new(b.clone(), bad), Err(Error::Shape(_))));
        let bad = vec![TtCore::zeros(2, 2, 2), TtCore::zeros(2, 2, 1)];
        assert!(TensorTrain::new(b, bad).is_err());
        let tt = product_of_one_plus_x(2);
        assert!(matches!(tt.evaluate(&[f64::NAN, 0.0]), Err(Error::NonFinite { .. })));
        assert!(tt.evaluate(&[0.0]).is_err());
    }

    #[test]
    fn random_train_matches_dense_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tt = TensorTrain::random(bases(2, 3, 1.0), &[2], &mut rng).unwrap();
        for _ in 0..50 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            assert_abs_diff_eq!(tt.evaluate(&x).unwrap(), dense_eval(&tt, &x), epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_of_constant_and_linear() {
        let c = TensorTrain::constant(bases(3, 2, 1.5), 4.0).unwrap();
        assert_eq!(c.gradient(&[0.1, 0.2, -0.3]).unwrap(), vec![0.0; 3]);
        assert_eq!(c.laplacian(&[0.1, 0.2, -0.3]).unwrap(), 0.0);
        // x1 + x2 on [-1,1]^2 as a rank-2 train.
        let b = bases(2, 1, 1.0);
        let first = TtCore::from_data(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let second = TtCore::from_data(2, 2, 1, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let tt = TensorTrain::new(b, vec![first, second]).unwrap();
        assert_abs_diff_eq!(tt.evaluate(&[0.3, 0.4]).unwrap(), 0.7, epsilon = 1e-15);
        let g = tt.gradient(&[0.3, -0.8]).unwrap();
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 1.0, epsilon = 1e-15);
    }

    fn sum_of_squares(d: usize, l: f64) -> TensorTrain {
        // x^2 = L^2 (2 P_2(s) + 1) / 3 with s = x/L; Σ x_k^2 has TT rank 2.
        let a = l * l / 3.0;
        let q = [a, 0.0, 2.0 * a];
        let mut cores = Vec::new();
        for k in 0..d {
            let (left, right) = (if k == 0 { 1 } else { 2 }, if k == d - 1 { 1 } else { 2 });
            let mut c = TtCore::zeros(left, 3, right);
            for i in 0..3 {
                let one = if i == 0 { 1.0 } else { 0.0 };
                let blocks: Vec<(usize, usize, f64)> = match (left, right) {
                    (1, 2) => vec![(0, 0, q[i]), (0, 1, one)],
                    (2, 1) => vec![(0, 0, one), (1, 0, q[i])],
                    (2, 2) => vec![(0, 0, one), (1, 0, q[i]), (1, 1, one)],
                    _ => vec![(0, 0, q[i])],
                };
                for (p, r, v) in blocks {
                    let idx = c.index(p, i, r);
                    c.data[idx] = v;
                }
            }
            cores.push(c);
        }
        TensorTrain::new(bases(d, 2, l), cores).unwrap()
    }

    #[test]
    fn laplacian_of_sum_of_squares() {
        let tt = sum_of_squares(3, 2.0);
        let x = [0.4, -1.1, 1.7];
        assert_abs_diff_eq!(tt.evaluate(&x).unwrap(), 0.16 + 1.21 + 2.89, epsilon = 1e-13);
        assert_abs_diff_eq!(tt.laplacian(&x).unwrap(), 6.0, epsilon = 1e-12);
        let g = tt.gradient(&x).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(g[k], 2.0 * x[k], epsilon = 1e-13);
        }
    }

    #[test]
    fn log_form_chain_rule() {
        let tt = sum_of_squares(2, 1.0).with_log_form(true);
        let x = [0.3, -0.2];
        let r2: f64 = 0.13;
        let d = tt.derivatives(&x).unwrap();
        assert_abs_diff_eq!(d.value, r2.exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(d.gradient[0], 0.6 * r2.exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(d.laplacian, r2.exp() * (4.0 + 4.0 * r2), epsilon = 1e-13);
        assert_abs_diff_eq!(tt.evaluate_exponent(&x).unwrap(), r2, epsilon = 1e-15);
        assert!(matches!(tt.moment(0, None), Err(Error::Unsupported(_))));
    }

    #[test]
    fn moments() {
        let one = TensorTrain::constant(bases(3, 2, 1.0), 1.0).unwrap();
        assert_abs_diff_eq!(one.moment(0, None).unwrap(), 8.0, epsilon = 1e-14);
        let x1 = TensorTrain::rank_one(bases(2, 1, 1.0), vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(x1.moment(1, Some(0)).unwrap(), 4.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x1.moment(1, Some(1)).unwrap(), 0.0, epsilon = 1e-14);
        // Scaled box: ∫_{[-2,2]^2} x_2^2 dx = 2 * 4 * 8/3 ... via sum of squares.
        let s = sum_of_squares(2, 2.0);
        let exact = 2.0 * (16.0 / 3.0) * 4.0;
        assert_abs_diff_eq!(s.moment(0, None).unwrap(), exact, epsilon = 1e-11);
        let full = s.box_moment(0, None, &[(-2.0, 2.0), (-2.0, 2.0)]).unwrap();
        assert_abs_diff_eq!(full, exact, epsilon = 1e-11);
        // ∫_0^1 ∫_{-2}^{2} (x^2 + y^2) dy dx = 4/3 + 16/3
        let part = s.box_moment(0, None, &[(0.0, 1.0), (-2.0, 2.0)]).unwrap();
        assert_abs_diff_eq!(part, 4.0 / 3.0 + 16.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn extrapolation_policy() {
        let tt = sum_of_squares(1, 1.0);
        assert_abs_diff_eq!(tt.evaluate(&[1.05]).unwrap(), 1.05 * 1.05, epsilon = 1e-14);
        assert_abs_diff_eq!(tt.evaluate(&[3.0]).unwrap(), 1.1 * 1.1, epsilon = 1e-14);
        assert_eq!(tt.gradient(&[3.0]).unwrap(), vec![0.0]);
        let free = tt.clone().with_extrapolation(Extrapolation::Unlimited);
        assert_abs_diff_eq!(free.evaluate(&[3.0]).unwrap(), 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(free.gradient(&[3.0]).unwrap()[0], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_combination_and_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = TensorTrain::random(bases(3, 3, 1.0), &[2, 3], &mut rng).unwrap();
            let b = TensorTrain::random(bases(3, 3, 1.0), &[3, 1], &mut rng).unwrap();
            let c = a.linear_combination(0.7, &b, -1.3).unwrap();
            for _ in 0..5 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let expect = 0.7 * a.evaluate(&x).unwrap() - 1.3 * b.evaluate(&x).unwrap();
                assert!((c.evaluate(&x).unwrap() - expect).abs() <= 1e-11 * (1.0 + expect.abs()));
            }
        }
        let one = product_of_one_plus_x(2);
        let lin = TensorTrain::rank_one(bases(2, 1, 1.0), vec![vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
        let sum = one.linear_combination(1.0, &lin, 1.0).unwrap();
        let sum3 = sum.linear_combination(1.0, &one, 2.0).unwrap();
        assert_eq!(sum3.ranks(), vec![3]);
        let rounded = sum3.round(1e-12).unwrap();
        assert!(rounded.ranks()[0] <= 2);
        let x = [0.3, -0.6];
        assert_abs_diff_eq!(rounded.evaluate(&x).unwrap(), sum3.evaluate(&x).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn norms_and_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = TensorTrain::random(bases(3, 2, 1.0), &[2, 2], &mut rng).unwrap();
        let n2 = a.dot(&a).unwrap();
        assert_abs_diff_eq!(a.norm(), n2.sqrt(), epsilon = 1e-12);
        let mut b = a.clone();
        b.scale(-1.0);
        let zero = a.linear_combination(1.0, &b, 1.0).unwrap();
        assert!(zero.norm() < 1e-14);
    }

    #[test]
    fn json_round_trip_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = TensorTrain::random(bases(3, 2, 1.5), &[2, 2], &mut rng)
            .unwrap()
            .with_log_form(true)
            .with_extrapolation(Extrapolation::Unlimited);
        let back = TensorTrain::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
        let broken = a.to_json().unwrap().replacen("\"left\":2", "\"left\":3", 1);
        assert!(TensorTrain::from_json(&broken).is_err());
    }

    proptest::proptest! {
        #[test]
        fn rank_chain_and_parameter_count(
            degrees in proptest::collection::vec(0usize..5, 1..6),
            rank in 1usize..4,
            seed in 0u64..1000,
        ) {
            let d = degrees.len();
            let specs: Vec<BasisSpec> = degrees.iter().map(|&n| BasisSpec::new(n, 1.0).unwrap()).collect();
            let ranks = vec![rank; d - 1];
            let tt = TensorTrain::random(specs, &ranks, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let cores = tt.cores();
            proptest::prop_assert_eq!(cores[0].left, 1);
            proptest::prop_assert_eq!(cores[d - 1].right, 1);
            for pair in cores.windows(2) {
                proptest::prop_assert_eq!(pair[0].right, pair[1].left);
            }
            let mut chain = vec![1];
            chain.extend(&ranks);
            chain.push(1);
            let expected: usize = (0..d).map(|k| chain[k] * (degrees[k] + 1) * chain[k + 1]).sum();
            proptest::prop_assert_eq!(tt.parameter_count(), expected);
        }

        #[test]
        fn norm_squared_is_self_dot(seed in 0u64..1000, d in 1usize..4) {
            let tt = TensorTrain::random(bases(d, 3, 0.7), &vec![2; d - 1], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let dot = tt.dot(&tt).unwrap();
            proptest::prop_assert!((tt.norm().powi(2) - dot).abs() <= 1e-12 * (1.0 + dot));
        }
    }
}
