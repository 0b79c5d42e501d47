//! The renewable estimator: sequential batch updates from compact summary
//! statistics.
//!
//! After batch b the retained state is just the pair
//! `S_b = { H_b, beta_b }` where `H_b = sum_t W_t(beta_t)` is the
//! cumulative weighted Hessian and `beta_b` the current estimate; its size
//! is Theta(p^2) regardless of how much data has streamed past. Each new
//! batch triggers exactly one linear solve and two weight passes:
//!
//! ```text
//! beta_b = (H_{b-1} + W_b(beta_{b-1}))^-1 (H_{b-1} beta_{b-1} + U_b(beta_{b-1}))
//! H_b    = H_{b-1} + W_b(beta_b)
//! ```
//!
//! with the Hessian increment re-evaluated at the freshly renewed
//! estimate. There is no inner fixed-point refinement: the previous
//! estimate is plugged in once, which is what makes the update a single
//! solve. At tau = 0.5 the weights are constant and the recursion is an
//! exact recursive-least-squares identity, so the stream estimate equals
//! the pooled OLS fit for any batch partition.

use crate::error::{Error, Result};
use crate::expectile::{
    accumulate_weighted_gram, batch_moments, irls_fit, Batch, Coefficients, ExpectileLevel, IrlsConfig,
};
use crate::linalg::{spd_solve, SymMatrix};

/// Summary statistics retained between batches. Immutable: updates return
/// a new state.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryState {
    h: SymMatrix,
    beta: Vec<f64>,
    tau: ExpectileLevel,
    n_seen: u64,
    batches_seen: u64,
}

impl SummaryState {
    /// Initializes from the first batch: a full IRLS fit, then the weighted
    /// Gram matrix at that fit becomes the initial Hessian. The first batch
    /// must carry at least p independent rows; later batches may be
    /// arbitrarily small.
    pub fn from_first_batch(first_batch: &Batch, tau: ExpectileLevel, cfg: &IrlsConfig) -> Result<SummaryState> {
        let fit = irls_fit(std::slice::from_ref(first_batch), tau, cfg)?;
        let mut h = SymMatrix::zeros(first_batch.p());
        accumulate_weighted_gram(&mut h, first_batch, &fit.coefficients.beta, tau);
        Ok(SummaryState {
            h,
            beta: fit.coefficients.beta,
            tau,
            n_seen: first_batch.n() as u64,
            batches_seen: 1,
        })
    }

    /// Rebuilds a state from its persisted parts, re-checking every
    /// invariant the constructor would have enforced.
    pub fn from_parts(
        h: SymMatrix,
        beta: Vec<f64>,
        tau: ExpectileLevel,
        n_seen: u64,
        batches_seen: u64,
    ) -> Result<SummaryState> {
        if h.dim() != beta.len() {
            return Err(Error::DimensionMismatch {
                context: format!("Hessian is {}x{}, coefficients have {}", h.dim(), h.dim(), beta.len()),
            });
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "state coefficients".into(),
            });
        }
        if batches_seen == 0 || n_seen < batches_seen {
            return Err(Error::BadStateFile(format!(
                "counters out of range: n_seen={n_seen}, batches_seen={batches_seen}"
            )));
        }
        Ok(SummaryState { h, beta, tau, n_seen, batches_seen })
    }

    /// Absorbs one batch and returns the renewed state. One linear solve,
    /// two weight passes, no inner iteration.
    pub fn update(&self, batch: &Batch) -> Result<SummaryState> {
        let current = Coefficients { beta: self.beta.clone(), tau: self.tau };
        let (w_mat, u_vec) = batch_moments(batch, &current)?;
        let lhs = self.h.add(&w_mat)?;
        let mut rhs = self.h.mat_vec(&self.beta)?;
        for (r, u) in rhs.iter_mut().zip(&u_vec) {
            *r += u;
        }
        let beta = spd_solve(&lhs, &rhs)?;
        // second weight pass: the Hessian stores the batch's moment at its
        // own renewed estimate, not at the estimate used for the solve
        let mut h = self.h.clone();
        accumulate_weighted_gram(&mut h, batch, &beta, self.tau);
        Ok(SummaryState {
            h,
            beta,
            tau: self.tau,
            n_seen: self.n_seen + batch.n() as u64,
            batches_seen: self.batches_seen + 1,
        })
    }

    /// The current estimate at the state's level.
    pub fn estimate(&self) -> Coefficients {
        Coefficients { beta: self.beta.clone(), tau: self.tau }
    }

    /// Errors unless `tau` matches the level this state was initialized
    /// with; summary statistics are level-specific.
    pub fn ensure_level(&self, tau: ExpectileLevel) -> Result<()> {
        if tau != self.tau {
            return Err(Error::LevelMismatch {
                state: self.tau.value(),
                given: tau.value(),
            });
        }
        Ok(())
    }

    pub fn tau(&self) -> ExpectileLevel {
        self.tau
    }

    pub fn p(&self) -> usize {
        self.h.dim()
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }

    pub fn hessian(&self) -> &SymMatrix {
        &self.h
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
}
