//! Streaming expectile regression.
//!
//! The centerpiece is [`SummaryState`], a renewable estimator that
//! consumes a data stream one batch at a time while holding only a
//! `p x p` matrix, a coefficient vector, and two counters. Its estimate
//! tracks the full-data iterative fit ([`irls_fit`]) without revisiting
//! old rows, and at `tau = 1/2` it reproduces streaming least squares
//! exactly. Two one-shot aggregation baselines ([`PaerState`],
//! [`DcerState`]) average per-batch fits instead and are provided for
//! comparison; they degrade on small or ill-conditioned batches where
//! the renewable update does not.
//!
//! The [`sim`] module generates synthetic streams with exactly known
//! population coefficients and races all estimators over replicated
//! runs; [`persist`] saves and restores estimator states as JSON with
//! bit-exact round-trips, which is what makes stop/resume streaming
//! safe.
//!
//! ```
//! use reer_core::{Batch, ExpectileLevel, IrlsConfig, SummaryState};
//!
//! let tau = ExpectileLevel::new(0.25)?;
//! let first = Batch::new(vec![1.0, 1.0, 1.0, 1.0], vec![0.0, 1.0, 2.0, 4.0], 1)?;
//! let mut state = SummaryState::from_first_batch(&first, tau, &IrlsConfig::default())?;
//! state = state.update(&Batch::new(vec![1.0, 1.0], vec![1.0, 3.0], 1)?)?;
//! assert_eq!(state.n_seen(), 6);
//! # Ok::<(), reer_core::Error>(())
//! ```

pub mod baselines;
pub mod error;
pub mod expectile;
pub mod linalg;
pub mod persist;
pub mod renewable;
pub mod sim;

pub use baselines::{DcerState, PaerState, WeightMode};
pub use error::{Error, Result};
pub use expectile::{
    asymmetric_loss, asymmetric_weight, batch_moments, irls_fit, loss_gradient,
    mean_prediction_error, sandwich_covariance, Batch, Coefficients, ExpectileLevel, IrlsConfig,
    IrlsFit,
};
pub use linalg::{spd_solve, SpdSolver, SymMatrix};
pub use persist::{load_state, save_state, state_from_str, state_to_string, StateFile, STATE_FORMAT_VERSION};
pub use renewable::SummaryState;
pub use sim::{
    distribution_expectile, generate_batch, run_experiment, run_experiment_with_mode,
    true_coefficients, ErrorDist, Method, MetricsTable, MethodMetrics, RepFailure, Scenario,
    SimCase, SimConfig, ALL_METHODS, DEFAULT_REPS,
};
