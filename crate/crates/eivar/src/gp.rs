//! Single-output Gaussian-process regression with the separable Matérn-1.5
//! kernel, marginal-likelihood hyperparameter fitting, prediction, and exact
//! rank-one fantasy updates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;

/// Nugget floor on the correlation scale; escalated x10 up to
/// [`NUGGET_CEIL`] when the Cholesky factorization fails.
pub const NUGGET_FLOOR: f64 = 1e-8;
pub const NUGGET_CEIL: f64 = 1e-2;

/// Kernel hyperparameters in log space.
///
/// The covariance is `k(a, b) = exp(log_scale) * c(a, b)` with the separable
/// Matérn-1.5 correlation `c` parameterized by per-dimension rates
/// `exp(log_lengthscales[l])`, and the kernel matrix carries an additive
/// nugget `exp(log_nugget)` on its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub log_scale: f64,
    pub log_lengthscales: Vec<f64>,
    pub log_nugget: f64,
}

impl KernelParams {
    pub fn new(log_scale: f64, log_lengthscales: Vec<f64>, log_nugget: f64) -> Self {
        Self {
            log_scale,
            log_lengthscales,
            log_nugget,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn nugget(&self) -> f64 {
        self.log_nugget.exp()
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }
}

/// Separable Matérn-1.5 correlation between two points separated by `delta`:
/// the product over dimensions of `(1 + |d| e^z) exp(-e^z |d|)`.
pub fn matern15(delta: &[f64], log_lengthscales: &[f64]) -> f64 {
    debug_assert_eq!(delta.len(), log_lengthscales.len());
    delta
        .iter()
        .zip(log_lengthscales)
        .map(|(d, z)| {
            let r = d.abs() * z.exp();
            (1.0 + r) * (-r).exp()
        })
        .product()
}

fn corr_rows(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize, zetas: &[f64]) -> f64 {
    let mut c = 1.0;
    for (l, z) in zetas.iter().enumerate() {
        let r = (a[(i, l)] - b[(j, l)]).abs() * z.exp();
        c *= (1.0 + r) * (-r).exp();
    }
    c
}

/// Correlation matrix of a set of points stored as rows.
fn corr_matrix(inputs: &DMatrix<f64>, zetas: &[f64]) -> DMatrix<f64> {
    let n = inputs.nrows();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        c[(i, i)] = 1.0;
        for j in 0..i {
            let v = corr_rows(inputs, i, inputs, j, zetas);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Fitted GP state: immutable after construction.
#[derive(Debug, Clone)]
pub struct GpState {
    train_inputs: DMatrix<f64>,
    train_targets: DVector<f64>,
    params: KernelParams,
    /// Lower-triangular Cholesky factor of `scale * C + nugget * I`.
    chol_factor: DMatrix<f64>,
    /// Solution of the kernel system against the targets.
    alpha: DVector<f64>,
}

/// In-place lower Cholesky; returns false if a pivot is not positive.
fn cholesky_lower(a: &mut DMatrix<f64>) -> bool {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / d;
        }
    }
    // zero the strict upper triangle
    for j in 0..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    true
}

fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let t = x[k];
            x[i] -= l[(i, k)] * t;
        }
        x[i] /= l[(i, i)];
    }
    x
}

fn solve_upper_t(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    // solves L^T x = b
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let t = x[k];
            x[i] -= l[(k, i)] * t;
        }
        x[i] /= l[(i, i)];
    }
    x
}

impl GpState {
    /// Builds the state at fixed hyperparameters, escalating the nugget by
    /// factors of 10 (up to `NUGGET_CEIL` on the correlation scale) if the
    /// kernel matrix is not positive definite.
    pub fn with_params(
        inputs: DMatrix<f64>,
        targets: DVector<f64>,
        params: KernelParams,
    ) -> Result<Self, Error> {
        assert_eq!(inputs.nrows(), targets.len());
        assert_eq!(inputs.ncols(), params.dim());
        let scale = params.scale();
        let corr = corr_matrix(&inputs, &params.log_lengthscales);
        let mut nugget = params.nugget();
        loop {
            let mut k = &corr * scale;
            for i in 0..k.nrows() {
                k[(i, i)] += nugget;
            }
            if cholesky_lower(&mut k) {
                let alpha = solve_upper_t(&k, &solve_lower(&k, &targets));
                let mut params = params;
                params.log_nugget = nugget.ln();
                return Ok(Self {
                    train_inputs: inputs,
                    train_targets: targets,
                    params,
                    chol_factor: k,
                    alpha,
                });
            }
            let next = if nugget < NUGGET_FLOOR * scale {
                NUGGET_FLOOR * scale
            } else {
                nugget * 10.0
            };
            if next > NUGGET_CEIL * scale {
                return Err(Error::CholeskyFailure);
            }
            nugget = next;
        }
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &DVector<f64> {
        &self.train_targets
    }

    pub fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol_factor
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.train_inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.train_inputs.ncols()
    }

    /// Covariance vector between the training set and a query point.
    pub fn kvec(&self, query: &[f64]) -> DVector<f64> {
        let scale = self.params.scale();
        let zetas = &self.params.log_lengthscales;
        DVector::from_fn(self.len(), |i, _| {
            let mut c = 1.0;
            for (l, z) in zetas.iter().enumerate() {
                let r = (self.train_inputs[(i, l)] - query[l]).abs() * z.exp();
                c *= (1.0 + r) * (-r).exp();
            }
            scale * c
        })
    }

    /// Prior covariance between two arbitrary points.
    pub fn prior_cov(&self, a: &[f64], b: &[f64]) -> f64 {
        let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.params.scale() * matern15(&delta, &self.params.log_lengthscales)
    }

    /// `L^{-1} k(X, query)`, the half-solved covariance vector used by both
    /// prediction and fantasy updates.
    pub fn solved_kvec(&self, query: &[f64]) -> DVector<f64> {
        solve_lower(&self.chol_factor, &self.kvec(query))
    }

    /// Predictive mean and variance at a query point. The variance is the
    /// latent (noise-free) variance, clamped at zero from below.
    pub fn predict(&self, query: &[f64]) -> (f64, f64) {
        let k = self.kvec(query);
        let mean = k.dot(&self.alpha);
        let s = solve_lower(&self.chol_factor, &k);
        let var = self.params.scale() - s.norm_squared();
        (mean, var.max(0.0))
    }

    /// Posterior covariance between two points given the training data.
    pub fn posterior_cov(&self, a: &[f64], b: &[f64]) -> f64 {
        let sa = self.solved_kvec(a);
        let sb = self.solved_kvec(b);
        self.prior_cov(a, b) - sa.dot(&sb)
    }

    /// Variance reductions at `queries` from conditioning on a hypothetical
    /// observation at `new_input`, plus the current predictive variance at
    /// `new_input`. The reduction at a query never exceeds the current
    /// variance there.
    pub fn fantasy(&self, new_input: &[f64], queries: &[Vec<f64>]) -> (Vec<f64>, f64) {
        let s_new = self.solved_kvec(new_input);
        let var_new = (self.params.scale() - s_new.norm_squared()).max(0.0);
        let denom = var_new + self.params.nugget().max(NUGGET_FLOOR * self.params.scale());
        let reductions = queries
            .iter()
            .map(|q| {
                let s_q = self.solved_kvec(q);
                let cov = self.prior_cov(q, new_input) - s_q.dot(&s_new);
                cov * cov / denom
            })
            .collect();
        (reductions, var_new)
    }

    /// Variance reduction at a single query from conditioning on `new_input`,
    /// reusing precomputed half-solves (see [`GpState::solved_kvec`]).
    pub fn fantasy_cached(
        &self,
        solved_query: &DVector<f64>,
        query: &[f64],
        solved_new: &DVector<f64>,
        new_input: &[f64],
        var_new: f64,
    ) -> f64 {
        let cov = self.prior_cov(query, new_input) - solved_query.dot(solved_new);
        let denom = var_new + self.params.nugget().max(NUGGET_FLOOR * self.params.scale());
        cov * cov / denom
    }

    /// Returns a new state with `(new_input, new_target)` appended, keeping
    /// hyperparameters frozen, via rank-one extension of the Cholesky factor.
    pub fn extend(&self, new_input: &[f64], new_target: f64) -> Self {
        let n = self.len();
        let p = self.input_dim();
        let mut inputs = DMatrix::zeros(n + 1, p);
        inputs.rows_mut(0, n).copy_from(&self.train_inputs);
        for l in 0..p {
            inputs[(n, l)] = new_input[l];
        }
        let mut targets = DVector::zeros(n + 1);
        targets.rows_mut(0, n).copy_from(&self.train_targets);
        targets[n] = new_target;

        let kv = self.kvec(new_input);
        let l_row = solve_lower(&self.chol_factor, &kv);
        let diag = self.params.scale() + self.params.nugget() - l_row.norm_squared();
        // guard against round-off when the new point duplicates the design
        let l_nn = diag.max(self.params.nugget().max(1e-14 * self.params.scale())).sqrt();

        let mut chol = DMatrix::zeros(n + 1, n + 1);
        chol.view_mut((0, 0), (n, n)).copy_from(&self.chol_factor);
        for i in 0..n {
            chol[(n, i)] = l_row[i];
        }
        chol[(n, n)] = l_nn;

        let alpha = solve_upper_t(&chol, &solve_lower(&chol, &targets));
        Self {
            train_inputs: inputs,
            train_targets: targets,
            params: self.params.clone(),
            chol_factor: chol,
            alpha,
        }
    }

    /// Log marginal likelihood of the training targets under the current
    /// hyperparameters.
    pub fn loglik(&self) -> f64 {
        let n = self.len() as f64;
        let logdet: f64 = (0..self.len())
            .map(|i| self.chol_factor[(i, i)].ln())
            .sum();
        -0.5 * self.train_targets.dot(&self.alpha)
            - logdet
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Analytic gradient of the log marginal likelihood with respect to
    /// `(log_scale, log_lengthscales..., log_nugget)`.
    pub fn loglik_grad(&self) -> Vec<f64> {
        let n = self.len();
        let p = self.input_dim();
        let scale = self.params.scale();
        let nugget = self.params.nugget();
        let zetas = &self.params.log_lengthscales;

        // K^{-1} via the stored factor; n stays small in this artifact.
        let mut kinv = DMatrix::identity(n, n);
        for j in 0..n {
            let col = DVector::from_column_slice(kinv.column(j).as_slice());
            let solved = solve_upper_t(&self.chol_factor, &solve_lower(&self.chol_factor, &col));
            kinv.set_column(j, &solved);
        }
        // M = alpha alpha^T - K^{-1}; grad_psi = 0.5 tr(M dK/dpsi)
        let corr = corr_matrix(&self.train_inputs, zetas);
        let mut grad = vec![0.0; p + 2];
        for i in 0..n {
            for j in 0..n {
                let m = self.alpha[i] * self.alpha[j] - kinv[(i, j)];
                // dK/dlog_scale = scale * C
                grad[0] += 0.5 * m * scale * corr[(i, j)];
                // dK/dzeta_l = scale * C .* (-r^2/(1+r)) per dimension
                for (l, z) in zetas.iter().enumerate() {
                    let r = (self.train_inputs[(i, l)] - self.train_inputs[(j, l)]).abs()
                        * z.exp();
                    grad[1 + l] += 0.5 * m * scale * corr[(i, j)] * (-r * r / (1.0 + r));
                }
            }
            let m_ii = self.alpha[i] * self.alpha[i] - kinv[(i, i)];
            grad[p + 1] += 0.5 * m_ii * nugget;
        }
        grad
    }
}

/// Search box for hyperparameter optimization, derived from the data.
fn fit_box(inputs: &DMatrix<f64>, targets: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    let p = inputs.ncols();
    let n = inputs.nrows() as f64;
    let var_w = (targets.norm_squared() / n).max(1e-10);
    let mut lo = Vec::with_capacity(p + 2);
    let mut hi = Vec::with_capacity(p + 2);
    lo.push((0.05 * var_w).ln());
    hi.push((20.0 * var_w).ln());
    for l in 0..p {
        let col = inputs.column(l);
        let range = (col.max() - col.min()).max(1e-6);
        lo.push((0.2 / range).ln());
        hi.push((30.0 / range).ln());
    }
    // relative nugget bounds
    lo.push(NUGGET_FLOOR.ln());
    hi.push(NUGGET_CEIL.ln());
    (lo, hi)
}

fn clamp_to_box(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn params_from_vec(x: &[f64], p: usize) -> KernelParams {
    // x = [log_scale, zetas..., log_rel_nugget]
    KernelParams {
        log_scale: x[0],
        log_lengthscales: x[1..=p].to_vec(),
        log_nugget: x[0] + x[p + 1],
    }
}

fn objective(
    inputs: &DMatrix<f64>,
    targets: &DVector<f64>,
    x: &[f64],
    p: usize,
) -> Option<(f64, Vec<f64>)> {
    let params = params_from_vec(x, p);
    let state = GpState::with_params(inputs.clone(), targets.clone(), params).ok()?;
    let value = state.loglik();
    let g = state.loglik_grad();
    // chain rule: relative nugget contributes its gradient to log_scale too
    let mut grad = Vec::with_capacity(p + 2);
    grad.push(g[0] + g[p + 1]);
    grad.extend_from_slice(&g[1..=p]);
    grad.push(g[p + 1]);
    if !value.is_finite() {
        return None;
    }
    Some((value, grad))
}

/// Projected gradient ascent with backtracking line search.
fn ascend(
    inputs: &DMatrix<f64>,
    targets: &DVector<f64>,
    mut x: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    max_iters: usize,
) -> Option<(Vec<f64>, f64)> {
    let p = inputs.ncols();
    clamp_to_box(&mut x, lo, hi);
    let (mut value, mut grad) = objective(inputs, targets, &x, p)?;
    let mut step = 0.5;
    for _ in 0..max_iters {
        // projected-gradient convergence test
        let mut pg_norm: f64 = 0.0;
        for i in 0..x.len() {
            let mut probe = x[i] + grad[i];
            probe = probe.clamp(lo[i], hi[i]);
            pg_norm += (probe - x[i]).powi(2);
        }
        if pg_norm.sqrt() < 1e-6 {
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand: Vec<f64> = x
                .iter()
                .zip(&grad)
                .map(|(xi, gi)| xi + step * gi)
                .collect();
            clamp_to_box(&mut cand, lo, hi);
            if let Some((v, g)) = objective(inputs, targets, &cand, p) {
                if v > value {
                    x = cand;
                    value = v;
                    grad = g;
                    step *= 1.6;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Some((x, value))
}

/// Latin hypercube sample in an axis-aligned box, stratified per dimension.
pub fn lhs_in_box<R: Rng>(lo: &[f64], hi: &[f64], count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let p = lo.len();
    let mut strata: Vec<Vec<usize>> = Vec::with_capacity(p);
    for _ in 0..p {
        let mut idx: Vec<usize> = (0..count).collect();
        for i in (1..count).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        strata.push(idx);
    }
    (0..count)
        .map(|i| {
            (0..p)
                .map(|l| {
                    let u: f64 = rng.gen();
                    let frac = (strata[l][i] as f64 + u) / count as f64;
                    lo[l] + frac * (hi[l] - lo[l])
                })
                .collect()
        })
        .collect()
}

/// Fits a GP by maximizing the log marginal likelihood with multi-start
/// projected gradient ascent, or builds the state directly when `fixed`.
///
/// When `init` is given it seeds one of the starts (and is the only start
/// when `fixed`); the remaining starts are drawn by seeded LHS in a
/// data-derived box, so the fit is deterministic for a given seed.
pub fn gp_fit(
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
    init: Option<KernelParams>,
    fixed: bool,
    starts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GpState, Error> {
    assert!(inputs.nrows() >= 1);
    if fixed {
        let params = init.expect("fixed fit requires init params");
        return GpState::with_params(inputs, targets, params);
    }
    let p = inputs.ncols();
    let (lo, hi) = fit_box(&inputs, &targets);
    let mut start_points: Vec<Vec<f64>> = Vec::new();
    if let Some(init) = &init {
        let mut x = vec![init.log_scale];
        x.extend_from_slice(&init.log_lengthscales);
        x.push((init.log_nugget - init.log_scale).clamp(NUGGET_FLOOR.ln(), NUGGET_CEIL.ln()));
        start_points.push(x);
    }
    let remaining = starts.saturating_sub(start_points.len());
    start_points.extend(lhs_in_box(&lo, &hi, remaining, rng));

    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in start_points {
        if let Some((x, v)) = ascend(&inputs, &targets, s, &lo, &hi, 600) {
            if best.as_ref().map_or(true, |(_, bv)| v > *bv) {
                best = Some((x, v));
            }
        }
    }
    let (x, _) = best.ok_or(Error::CholeskyFailure)?;
    GpState::with_params(inputs, targets, params_from_vec(&x, p))
}
