//! The asymmetric squared loss, its per-batch moments and gradient, the
//! IRLS batch solver, and the sandwich covariance used for Wald inference.
//!
//! For a residual u and level tau in (0, 1), the loss is
//!
//! ```text
//! rho_tau(u) = 0.5 * u^2 * |tau - I(u < 0)|
//! ```
//!
//! i.e. weight tau on nonnegative residuals and 1 - tau on negative ones.
//! The level-tau expectile of a linear model minimizes the mean of this
//! loss; the minimizer solves the fixed point beta = W(beta)^-1 U(beta)
//! with the weighted moments
//!
//! ```text
//! W(beta) = sum_i w_i x_i x_i^T      U(beta) = sum_i w_i x_i y_i
//! w_i     = |tau - I(y_i < x_i^T beta)|
//! ```
//!
//! which IRLS iterates to convergence.

use crate::error::{Error, Result};
use crate::linalg::{spd_solve, SpdSolver, SymMatrix};

/// An expectile level, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectileLevel(f64);

impl ExpectileLevel {
    pub fn new(tau: f64) -> Result<ExpectileLevel> {
        if !(tau.is_finite() && 0.0 < tau && tau < 1.0) {
            return Err(Error::InvalidLevel(tau));
        }
        Ok(ExpectileLevel(tau))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl std::fmt::Display for ExpectileLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One arriving block of data: an n x p design matrix (row-major) and the
/// n responses. If the model has an intercept, it is an ordinary all-ones
/// column; nothing downstream treats it specially.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    n: usize,
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Batch {
    /// `x` is row-major with `y.len() * p` entries; every value must be
    /// finite and there must be at least one row.
    pub fn new(x: Vec<f64>, y: Vec<f64>, p: usize) -> Result<Batch> {
        let n = y.len();
        if n == 0 || p == 0 {
            return Err(Error::DimensionMismatch {
                context: format!("batch must be nonempty, got n={n}, p={p}"),
            });
        }
        if x.len() != n * p {
            return Err(Error::DimensionMismatch {
                context: format!("design has {} entries, expected {n} rows x {p} columns", x.len()),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "batch rows".into(),
            });
        }
        Ok(Batch { n, p, x, y })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn response(&self, i: usize) -> f64 {
        self.y[i]
    }
}

/// A fitted coefficient vector together with the level it was fitted at.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub beta: Vec<f64>,
    pub tau: ExpectileLevel,
}

impl Coefficients {
    pub fn predict(&self, row: &[f64]) -> f64 {
        dot(row, &self.beta)
    }
}

/// Tuning for the IRLS solver. `init = None` starts from the ordinary
/// least-squares fit, which is also the exact solution at tau = 0.5.
#[derive(Debug, Clone)]
pub struct IrlsConfig {
    /// Convergence threshold on the max-norm of successive iterate
    /// differences.
    pub tol: f64,
    pub max_iter: usize,
    /// Optional warm start (e.g. the fit at a neighboring level).
    pub init: Option<Coefficients>,
}

impl Default for IrlsConfig {
    fn default() -> IrlsConfig {
        IrlsConfig {
            tol: 1e-8,
            max_iter: 100,
            init: None,
        }
    }
}

impl IrlsConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("IRLS tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("IRLS max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Successful IRLS output.
#[derive(Debug, Clone)]
pub struct IrlsFit {
    pub coefficients: Coefficients,
    pub iterations: usize,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `rho_tau(u) = 0.5 * u^2 * |tau - I(u < 0)|`. Zero residuals count as
/// nonnegative, so they take weight tau.
#[inline]
pub fn asymmetric_loss(u: f64, tau: ExpectileLevel) -> f64 {
    0.5 * u * u * asymmetric_weight(u, tau)
}

/// The loss curvature weight `|tau - I(u < 0)|`: tau for u >= 0 (the
/// indicator is strict, so exactly-zero residuals take tau), 1 - tau
/// otherwise.
#[inline]
pub fn asymmetric_weight(u: f64, tau: ExpectileLevel) -> f64 {
    if u >= 0.0 {
        tau.value()
    } else {
        1.0 - tau.value()
    }
}

/// Accumulates the weighted moments of one batch at `beta` into existing
/// buffers. Sums are unnormalized so cross-batch pooling is plain addition.
#[inline]
pub(crate) fn accumulate_moments(
    w_mat: &mut SymMatrix,
    u_vec: &mut [f64],
    batch: &Batch,
    beta: &[f64],
    tau: ExpectileLevel,
) {
    for i in 0..batch.n() {
        let row = batch.row(i);
        let y = batch.response(i);
        let w = asymmetric_weight(y - dot(row, beta), tau);
        w_mat.add_outer_mut(row, w);
        let wy = w * y;
        for (u, &xj) in u_vec.iter_mut().zip(row) {
            *u += wy * xj;
        }
    }
}

/// Like [`accumulate_moments`] but skips the response moment; used where
/// only the weighted Gram matrix is needed.
#[inline]
pub(crate) fn accumulate_weighted_gram(w_mat: &mut SymMatrix, batch: &Batch, beta: &[f64], tau: ExpectileLevel) {
    for i in 0..batch.n() {
        let row = batch.row(i);
        let w = asymmetric_weight(batch.response(i) - dot(row, beta), tau);
        w_mat.add_outer_mut(row, w);
    }
}

fn check_batch_dim(batch: &Batch, beta: &[f64]) -> Result<()> {
    if batch.p() != beta.len() {
        return Err(Error::DimensionMismatch {
            context: format!("batch has {} columns, coefficients have {}", batch.p(), beta.len()),
        });
    }
    Ok(())
}

/// Weighted moments `(W, U)` of one batch evaluated at `beta`:
/// `W = sum_i w_i x_i x_i^T` and `U = sum_i w_i x_i y_i`, unnormalized.
pub fn batch_moments(batch: &Batch, beta: &Coefficients) -> Result<(SymMatrix, Vec<f64>)> {
    check_batch_dim(batch, &beta.beta)?;
    let mut w_mat = SymMatrix::zeros(batch.p());
    let mut u_vec = vec![0.0; batch.p()];
    accumulate_moments(&mut w_mat, &mut u_vec, batch, &beta.beta, beta.tau);
    Ok((w_mat, u_vec))
}

/// Gradient of the mean loss over the batch at `beta`:
/// `g = -(1/n) * (U(beta) - W(beta) * beta)`.
pub fn loss_gradient(batch: &Batch, beta: &Coefficients) -> Result<Vec<f64>> {
    let (w_mat, u_vec) = batch_moments(batch, beta)?;
    let wb = w_mat.mat_vec(&beta.beta)?;
    let scale = -1.0 / batch.n() as f64;
    Ok(u_vec.iter().zip(&wb).map(|(u, w)| scale * (u - w)).collect())
}

fn pooled_dim(batches: &[Batch]) -> Result<usize> {
    let first = batches.first().ok_or_else(|| Error::InvalidConfig("no batches given".into()))?;
    let p = first.p();
    if batches.iter().any(|b| b.p() != p) {
        return Err(Error::DimensionMismatch {
            context: "batches have differing column counts".into(),
        });
    }
    Ok(p)
}

/// Fits the level-tau expectile regression on all rows of `batches`
/// pooled, by iteratively reweighted least squares. The result satisfies
/// the fixed point `beta = W(beta)^-1 U(beta)` up to `cfg.tol`; the fit is
/// invariant to how the same rows are split into batches.
pub fn irls_fit(batches: &[Batch], tau: ExpectileLevel, cfg: &IrlsConfig) -> Result<IrlsFit> {
    cfg.validate()?;
    let p = pooled_dim(batches)?;

    let mut beta = match &cfg.init {
        Some(c) => {
            if c.beta.len() != p {
                return Err(Error::DimensionMismatch {
                    context: format!("warm start has {} coefficients, design has {p} columns", c.beta.len()),
                });
            }
            c.beta.clone()
        }
        None => ols_fit(batches, p)?,
    };

    let mut last_delta = f64::INFINITY;
    for iterations in 1..=cfg.max_iter {
        let mut w_mat = SymMatrix::zeros(p);
        let mut u_vec = vec![0.0; p];
        for b in batches {
            accumulate_moments(&mut w_mat, &mut u_vec, b, &beta, tau);
        }
        let next = spd_solve(&w_mat, &u_vec)?;
        last_delta = max_abs_diff(&next, &beta);
        beta = next;
        if last_delta < cfg.tol {
            return Ok(IrlsFit {
                coefficients: Coefficients { beta, tau },
                iterations,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        last_delta,
        last: Coefficients { beta, tau },
    })
}

/// Ordinary least squares on the pooled rows via the normal equations.
fn ols_fit(batches: &[Batch], p: usize) -> Result<Vec<f64>> {
    let mut gram = SymMatrix::zeros(p);
    let mut xty = vec![0.0; p];
    for b in batches {
        for i in 0..b.n() {
            let row = b.row(i);
            gram.add_outer_mut(row, 1.0);
            let y = b.response(i);
            for (acc, &xj) in xty.iter_mut().zip(row) {
                *acc += y * xj;
            }
        }
    }
    spd_solve(&gram, &xty)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Plug-in covariance of the fitted coefficients over the pooled rows:
///
/// ```text
/// Var(beta_hat) ~ (1/N) * S_w^-1 Omega S_w^-1
/// S_w   = (1/N) sum_i w_i x_i x_i^T
/// Omega = (1/N) sum_i w_i^2 e_i^2 x_i x_i^T,   e_i = y_i - x_i^T beta
/// ```
///
/// The returned matrix already includes the 1/N factor, so its diagonal
/// gives squared standard errors directly.
pub fn sandwich_covariance(batches: &[Batch], beta: &Coefficients) -> Result<SymMatrix> {
    let p = pooled_dim(batches)?;
    check_batch_dim(&batches[0], &beta.beta)?;
    let n_total: usize = batches.iter().map(|b| b.n()).sum();
    let mut s_w = SymMatrix::zeros(p);
    let mut omega = SymMatrix::zeros(p);
    for b in batches {
        for i in 0..b.n() {
            let row = b.row(i);
            let resid = b.response(i) - dot(row, &beta.beta);
            let w = asymmetric_weight(resid, beta.tau);
            s_w.add_outer_mut(row, w);
            omega.add_outer_mut(row, w * w * resid * resid);
        }
    }
    let inv_n = 1.0 / n_total as f64;
    let solver = SpdSolver::new(&s_w.scaled(inv_n))?;
    Ok(solver.inv_congruence(&omega.scaled(inv_n))?.scaled(inv_n))
}

/// Mean prediction error at the coefficients' level: the average
/// asymmetric loss of residuals over all rows of `batches`.
pub fn mean_prediction_error(batches: &[Batch], beta: &Coefficients) -> Result<f64> {
    pooled_dim(batches)?;
    check_batch_dim(&batches[0], &beta.beta)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for b in batches {
        for i in 0..b.n() {
            total += asymmetric_loss(b.response(i) - beta.predict(b.row(i)), beta.tau);
        }
        n += b.n();
    }
    Ok(total / n as f64)
}
