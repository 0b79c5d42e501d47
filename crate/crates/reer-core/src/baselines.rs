//! One-shot aggregation baselines: each batch is fitted independently by
//! IRLS and the local estimates are combined by matrix-weighted averaging.
//!
//! PAER aggregates with per-batch Gram matrices,
//!
//! ```text
//! beta = (sum_t w_t G_t / n_t)^-1 (sum_t w_t (G_t / n_t) beta_t)
//! ```
//!
//! where `G_t = X_t^T X_t` is unweighted (the asymmetry enters only
//! through the local fits). DCER weights each local fit by the inverse of
//! its estimated covariance `Q_t` (the per-batch sandwich matrix):
//!
//! ```text
//! beta = (sum_t Q_t^-1)^-1 (sum_t Q_t^-1 beta_t)
//! ```
//!
//! Both accumulators are commutative sums, so finalized estimates do not
//! depend on batch arrival order and states can be merged by field-wise
//! addition.

use crate::error::{Error, Result};
use crate::expectile::{irls_fit, sandwich_covariance, Batch, Coefficients, ExpectileLevel, IrlsConfig};
use crate::linalg::{spd_solve, SpdSolver, SymMatrix};

/// How PAER scales each batch's contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// `w_t` proportional to the batch size `n_t`. A global constant
    /// cancels in the final solve, so this equals weighting by each
    /// batch's fraction of the total sample.
    #[default]
    FinalFraction,
    /// `w_t = n_t / N_t` with `N_t` the observations seen so far,
    /// inclusive. Equal-size batches then get decaying weights 1/t, and
    /// the result depends on arrival order; kept selectable for fidelity
    /// experiments against the final-fraction default.
    CumulativeFraction,
}

impl WeightMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightMode::FinalFraction => "final_fraction",
            WeightMode::CumulativeFraction => "cumulative_fraction",
        }
    }

    pub fn parse(s: &str) -> Result<WeightMode> {
        match s {
            "final_fraction" => Ok(WeightMode::FinalFraction),
            "cumulative_fraction" => Ok(WeightMode::CumulativeFraction),
            other => Err(Error::InvalidConfig(format!("unknown weight mode '{other}'"))),
        }
    }
}

/// Streaming accumulator for the Gram-weighted one-shot aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct PaerState {
    tau: ExpectileLevel,
    weight_mode: WeightMode,
    acc_mat: SymMatrix,
    acc_vec: Vec<f64>,
    n_seen: u64,
    batches_seen: u64,
}

impl PaerState {
    pub fn new(p: usize, tau: ExpectileLevel, weight_mode: WeightMode) -> Result<PaerState> {
        if p == 0 {
            return Err(Error::InvalidConfig("coefficient dimension must be at least 1".into()));
        }
        Ok(PaerState {
            tau,
            weight_mode,
            acc_mat: SymMatrix::zeros(p),
            acc_vec: vec![0.0; p],
            n_seen: 0,
            batches_seen: 0,
        })
    }

    /// Fits the batch locally and folds `w_t G_t / n_t` and
    /// `w_t (G_t / n_t) beta_t` into the accumulators.
    pub fn update(&self, batch: &Batch, cfg: &IrlsConfig) -> Result<PaerState> {
        let p = self.p();
        self.check_dim(batch)?;
        if batch.n() < p {
            return Err(Error::BatchTooSmall { n: batch.n(), required: p });
        }
        let fit = irls_fit(std::slice::from_ref(batch), self.tau, cfg)?;
        let mut gram = SymMatrix::zeros(p);
        for i in 0..batch.n() {
            gram.add_outer_mut(batch.row(i), 1.0);
        }
        let n_t = batch.n() as f64;
        let weight = match self.weight_mode {
            WeightMode::FinalFraction => n_t,
            WeightMode::CumulativeFraction => n_t / (self.n_seen + batch.n() as u64) as f64,
        };
        let scaled = gram.scaled(weight / n_t);
        let mut next = self.clone();
        next.acc_mat.add_assign(&scaled)?;
        let contrib = scaled.mat_vec(&fit.coefficients.beta)?;
        for (a, c) in next.acc_vec.iter_mut().zip(&contrib) {
            *a += c;
        }
        next.n_seen += batch.n() as u64;
        next.batches_seen += 1;
        Ok(next)
    }

    /// Solves the aggregation system. Errors on an empty accumulator.
    pub fn finalize(&self) -> Result<Coefficients> {
        let beta = spd_solve(&self.acc_mat, &self.acc_vec)?;
        Ok(Coefficients { beta, tau: self.tau })
    }

    /// Field-wise addition of two accumulators over disjoint batches.
    /// Under the cumulative weight mode the weights depend on arrival
    /// order by definition, so merged parallel states will not match a
    /// sequential pass; the default mode is order-free.
    pub fn merge(&self, other: &PaerState) -> Result<PaerState> {
        if self.tau != other.tau {
            return Err(Error::LevelMismatch {
                state: self.tau.value(),
                given: other.tau.value(),
            });
        }
        if self.weight_mode != other.weight_mode {
            return Err(Error::InvalidConfig("cannot merge states with different weight modes".into()));
        }
        let mut out = self.clone();
        out.acc_mat.add_assign(&other.acc_mat)?;
        for (a, b) in out.acc_vec.iter_mut().zip(&other.acc_vec) {
            *a += b;
        }
        out.n_seen += other.n_seen;
        out.batches_seen += other.batches_seen;
        Ok(out)
    }

    pub fn from_parts(
        tau: ExpectileLevel,
        weight_mode: WeightMode,
        acc_mat: SymMatrix,
        acc_vec: Vec<f64>,
        n_seen: u64,
        batches_seen: u64,
    ) -> Result<PaerState> {
        if acc_mat.dim() != acc_vec.len() {
            return Err(Error::DimensionMismatch {
                context: format!("accumulator is {}x{}, vector has {}", acc_mat.dim(), acc_mat.dim(), acc_vec.len()),
            });
        }
        if acc_vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "state accumulator".into() });
        }
        Ok(PaerState { tau, weight_mode, acc_mat, acc_vec, n_seen, batches_seen })
    }

    pub fn tau(&self) -> ExpectileLevel {
        self.tau
    }

    pub fn weight_mode(&self) -> WeightMode {
        self.weight_mode
    }

    pub fn p(&self) -> usize {
        self.acc_mat.dim()
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }

    pub fn acc_mat(&self) -> &SymMatrix {
        &self.acc_mat
    }

    pub fn acc_vec(&self) -> &[f64] {
        &self.acc_vec
    }

    fn check_dim(&self, batch: &Batch) -> Result<()> {
        if batch.p() != self.p() {
            return Err(Error::DimensionMismatch {
                context: format!("batch has {} columns, state expects {}", batch.p(), self.p()),
            });
        }
        Ok(())
    }
}

/// Streaming accumulator for the covariance-weighted one-shot aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct DcerState {
    tau: ExpectileLevel,
    acc_mat: SymMatrix,
    acc_vec: Vec<f64>,
    n_seen: u64,
    batches_seen: u64,
}

impl DcerState {
    pub fn new(p: usize, tau: ExpectileLevel) -> Result<DcerState> {
        if p == 0 {
            return Err(Error::InvalidConfig("coefficient dimension must be at least 1".into()));
        }
        Ok(DcerState {
            tau,
            acc_mat: SymMatrix::zeros(p),
            acc_vec: vec![0.0; p],
            n_seen: 0,
            batches_seen: 0,
        })
    }

    /// Fits the batch locally, estimates its sandwich covariance `Q_t`,
    /// and folds `Q_t^-1` and `Q_t^-1 beta_t` into the accumulators.
    /// Needs strictly more than p rows so `Q_t` can be inverted.
    pub fn update(&self, batch: &Batch, cfg: &IrlsConfig) -> Result<DcerState> {
        let p = self.p();
        self.check_dim(batch)?;
        if batch.n() <= p {
            return Err(Error::BatchTooSmall { n: batch.n(), required: p + 1 });
        }
        let fit = irls_fit(std::slice::from_ref(batch), self.tau, cfg)?;
        let q = sandwich_covariance(std::slice::from_ref(batch), &fit.coefficients)?;
        let solver = SpdSolver::new(&q)?;
        let q_inv = solver.inverse();
        let weighted_beta = solver.solve(&fit.coefficients.beta)?;
        let mut next = self.clone();
        next.acc_mat.add_assign(&q_inv)?;
        for (a, c) in next.acc_vec.iter_mut().zip(&weighted_beta) {
            *a += c;
        }
        next.n_seen += batch.n() as u64;
        next.batches_seen += 1;
        Ok(next)
    }

    /// Solves the aggregation system. Errors on an empty accumulator.
    pub fn finalize(&self) -> Result<Coefficients> {
        let beta = spd_solve(&self.acc_mat, &self.acc_vec)?;
        Ok(Coefficients { beta, tau: self.tau })
    }

    /// Field-wise addition of two accumulators over disjoint batches.
    pub fn merge(&self, other: &DcerState) -> Result<DcerState> {
        if self.tau != other.tau {
            return Err(Error::LevelMismatch {
                state: self.tau.value(),
                given: other.tau.value(),
            });
        }
        let mut out = self.clone();
        out.acc_mat.add_assign(&other.acc_mat)?;
        for (a, b) in out.acc_vec.iter_mut().zip(&other.acc_vec) {
            *a += b;
        }
        out.n_seen += other.n_seen;
        out.batches_seen += other.batches_seen;
        Ok(out)
    }

    pub fn from_parts(
        tau: ExpectileLevel,
        acc_mat: SymMatrix,
        acc_vec: Vec<f64>,
        n_seen: u64,
        batches_seen: u64,
    ) -> Result<DcerState> {
        if acc_mat.dim() != acc_vec.len() {
            return Err(Error::DimensionMismatch {
                context: format!("accumulator is {}x{}, vector has {}", acc_mat.dim(), acc_mat.dim(), acc_vec.len()),
            });
        }
        if acc_vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "state accumulator".into() });
        }
        Ok(DcerState { tau, acc_mat, acc_vec, n_seen, batches_seen })
    }

    pub fn tau(&self) -> ExpectileLevel {
        self.tau
    }

    pub fn p(&self) -> usize {
        self.acc_mat.dim()
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }

    pub fn acc_mat(&self) -> &SymMatrix {
        &self.acc_mat
    }

    pub fn acc_vec(&self) -> &[f64] {
        &self.acc_vec
    }

    fn check_dim(&self, batch: &Batch) -> Result<()> {
        if batch.p() != self.p() {
            return Err(Error::DimensionMismatch {
                context: format!("batch has {} columns, state expects {}", batch.p(), self.p()),
            });
        }
        Ok(())
    }
}
