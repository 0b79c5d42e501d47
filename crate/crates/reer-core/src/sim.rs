//! Synthetic stream generation and the Monte-Carlo comparison harness.
//!
//! Data follow the linear model
//!
//! ```text
//! y = x' beta_star + (x' gamma) * eps,    x = (1, U(0,1), ..., U(0,1))
//! ```
//!
//! where `eps` is standard normal or Student t with 3 degrees of freedom
//! and `gamma` decides whether the noise scale is constant or tied to a
//! covariate. Under this model the population coefficient vector at
//! level tau is `beta_star + e_tau * gamma`, with `e_tau` the level-tau
//! expectile of the error distribution, so every estimator can be scored
//! against an exact target.
//!
//! Batch generation is keyed by `(seed, replication, batch)`: each batch
//! owns an independent RNG stream derived from those three values only.
//! Replications can therefore run in parallel, in any order, and a
//! replay of any single batch reproduces it bit-for-bit.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::baselines::{DcerState, PaerState, WeightMode};
use crate::error::{Error, Result};
use crate::expectile::{dot, irls_fit, Batch, ExpectileLevel, IrlsConfig};
use crate::persist::fmt_f64_17;
use crate::renewable::SummaryState;

/// Error distribution driving the noise term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorDist {
    StdNormal,
    StudentT3,
}

/// The four simulation cases: {constant, covariate-dependent} noise
/// scale crossed with {normal, t(3)} errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimCase {
    HomoNormal,
    HomoT3,
    HeteroNormal,
    HeteroT3,
}

impl SimCase {
    pub fn from_index(index: u8) -> Result<SimCase> {
        match index {
            1 => Ok(SimCase::HomoNormal),
            2 => Ok(SimCase::HomoT3),
            3 => Ok(SimCase::HeteroNormal),
            4 => Ok(SimCase::HeteroT3),
            other => Err(Error::InvalidConfig(format!("case must be 1..=4, got {other}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            SimCase::HomoNormal => 1,
            SimCase::HomoT3 => 2,
            SimCase::HeteroNormal => 3,
            SimCase::HeteroT3 => 4,
        }
    }

    pub fn error_dist(self) -> ErrorDist {
        match self {
            SimCase::HomoNormal | SimCase::HeteroNormal => ErrorDist::StdNormal,
            SimCase::HomoT3 | SimCase::HeteroT3 => ErrorDist::StudentT3,
        }
    }

    pub fn heteroscedastic(self) -> bool {
        matches!(self, SimCase::HeteroNormal | SimCase::HeteroT3)
    }

    fn default_gamma(self) -> Vec<f64> {
        if self.heteroscedastic() {
            vec![1.0, 0.25, 0.0]
        } else {
            vec![1.0, 0.0, 0.0]
        }
    }
}

/// Streaming regime: many small batches versus few large ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    S1,
    S2,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
        }
    }

    pub fn parse(s: &str) -> Result<Scenario> {
        match s {
            "s1" | "S1" => Ok(Scenario::S1),
            "s2" | "S2" => Ok(Scenario::S2),
            other => Err(Error::InvalidConfig(format!("scenario must be s1 or s2, got '{other}'"))),
        }
    }
}

pub const DEFAULT_REPS: usize = 200;

/// Full description of one simulation experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub case: SimCase,
    pub scenario: Scenario,
    pub tau: ExpectileLevel,
    /// Rows per batch.
    pub n_k: usize,
    pub num_batches: usize,
    pub reps: usize,
    pub seed: u64,
    pub beta_star: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl SimConfig {
    /// Standard three-coefficient design: `beta_star = (2, 1, 2)` and the
    /// case's default noise-scale vector.
    pub fn new(
        case: SimCase,
        scenario: Scenario,
        tau: ExpectileLevel,
        n_k: usize,
        num_batches: usize,
        reps: usize,
        seed: u64,
    ) -> Result<SimConfig> {
        let cfg = SimConfig {
            case,
            scenario,
            tau,
            n_k,
            num_batches,
            reps,
            seed,
            beta_star: vec![2.0, 1.0, 2.0],
            gamma: case.default_gamma(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the coefficient design, revalidating shape against the case.
    pub fn with_coefficients(mut self, beta_star: Vec<f64>, gamma: Vec<f64>) -> Result<SimConfig> {
        self.beta_star = beta_star;
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.beta_star.len()
    }

    pub fn total_n(&self) -> usize {
        self.n_k * self.num_batches
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_k == 0 {
            return Err(Error::InvalidConfig("n_k must be at least 1".into()));
        }
        if self.num_batches == 0 {
            return Err(Error::InvalidConfig("num_batches must be at least 1".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.beta_star.is_empty() {
            return Err(Error::InvalidConfig("beta_star must not be empty".into()));
        }
        if self.gamma.len() != self.beta_star.len() {
            return Err(Error::InvalidConfig(format!(
                "gamma has {} entries, beta_star has {}",
                self.gamma.len(),
                self.beta_star.len()
            )));
        }
        if self.beta_star.iter().chain(self.gamma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "simulation coefficients".into() });
        }
        let slope_noise = self.gamma.iter().skip(1).any(|&g| g != 0.0);
        if slope_noise != self.case.heteroscedastic() {
            return Err(Error::InvalidConfig(format!(
                "case {} expects a {} noise scale but gamma = {:?}",
                self.case.index(),
                if self.case.heteroscedastic() { "covariate-dependent" } else { "constant" },
                self.gamma
            )));
        }
        Ok(())
    }
}

// 64-bit finalizer with full avalanche: every input bit affects every
// output bit, so nearby (seed, rep, batch) triples land far apart.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 33)).wrapping_mul(0xff51afd7ed558ccd);
    z = (z ^ (z >> 33)).wrapping_mul(0xc4ceb9fe1a85ec53);
    z ^ (z >> 33)
}

/// RNG for one (replication, batch) cell of the stream. The three keys
/// are absorbed sponge-style into a 256-bit ChaCha seed.
pub fn stream_rng(seed: u64, rep: u64, batch: u64) -> ChaCha8Rng {
    let mut words = [0u64; 4];
    let mut state = mix64(seed ^ 0x9e3779b97f4a7c15);
    state = mix64(state ^ rep);
    state = mix64(state ^ batch);
    for (i, w) in words.iter_mut().enumerate() {
        state = mix64(state.wrapping_add(i as u64 + 1));
        *w = state;
    }
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn sample_error(dist: ErrorDist, rng: &mut ChaCha8Rng) -> f64 {
    match dist {
        ErrorDist::StdNormal => rng.sample(StandardNormal),
        ErrorDist::StudentT3 => loop {
            let z: f64 = rng.sample(StandardNormal);
            let mut chi2 = 0.0;
            for _ in 0..3 {
                let v: f64 = rng.sample(StandardNormal);
                chi2 += v * v;
            }
            let t = z / (chi2 / 3.0).sqrt();
            if t.is_finite() {
                break t;
            }
        },
    }
}

/// Generates batch `batch_index` of replication `rep_index`. Pure in its
/// arguments: the same triple always yields the same rows.
pub fn generate_batch(cfg: &SimConfig, batch_index: usize, rep_index: usize) -> Batch {
    let p = cfg.p();
    let n = cfg.n_k;
    let dist = cfg.case.error_dist();
    let mut rng = stream_rng(cfg.seed, rep_index as u64, batch_index as u64);
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let start = x.len();
        x.push(1.0);
        for _ in 1..p {
            x.push(rng.random::<f64>());
        }
        let eps = sample_error(dist, &mut rng);
        let row = &x[start..];
        y.push(dot(row, &cfg.beta_star) + dot(row, &cfg.gamma) * eps);
    }
    Batch::new(x, y, p).expect("generated rows are finite by construction")
}

fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_upper_tail(t: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(t / std::f64::consts::SQRT_2)
}

fn t3_pdf(t: f64) -> f64 {
    let base = 1.0 + t * t / 3.0;
    2.0 / (std::f64::consts::PI * 3.0_f64.sqrt()) / (base * base)
}

fn t3_upper_tail(t: f64) -> f64 {
    let s3 = 3.0_f64.sqrt();
    0.5 - ((t / s3).atan() + s3 * t / (t * t + 3.0)) / std::f64::consts::PI
}

// E[(eps - t)_+] for the unit-variance-parameterized members; both have
// closed forms, which keeps the root-finder exact to machine precision.
fn upper_partial_moment(dist: ErrorDist, t: f64) -> f64 {
    match dist {
        ErrorDist::StdNormal => std_normal_pdf(t) - t * std_normal_upper_tail(t),
        // integral of u f3(u) over (t, inf) is (3 + t^2)/2 * f3(t)
        ErrorDist::StudentT3 => 0.5 * (3.0 + t * t) * t3_pdf(t) - t * t3_upper_tail(t),
    }
}

fn upper_tail(dist: ErrorDist, t: f64) -> f64 {
    match dist {
        ErrorDist::StdNormal => std_normal_upper_tail(t),
        ErrorDist::StudentT3 => t3_upper_tail(t),
    }
}

/// The level-tau expectile of the error distribution: the unique root of
/// `(2 tau - 1) E[(eps - t)_+] - (1 - tau) t` (both distributions here
/// are symmetric with mean zero). Exactly 0 at tau = 1/2; otherwise
/// solved by a bracketed Newton iteration to full precision.
pub fn distribution_expectile(dist: ErrorDist, tau: ExpectileLevel) -> f64 {
    let tau = tau.value();
    let psi = |t: f64| (2.0 * tau - 1.0) * upper_partial_moment(dist, t) - (1.0 - tau) * t;
    // psi' = (2 tau - 1)(F(t) - 1) - (1 - tau) < 0: psi strictly decreases
    let dpsi = |t: f64| -(2.0 * tau - 1.0) * upper_tail(dist, t) - (1.0 - tau);

    let (mut lo, mut hi) = (-64.0, 64.0);
    let mut t = 0.0;
    for _ in 0..200 {
        let f = psi(t);
        if f == 0.0 {
            return t;
        }
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - f / dpsi(t);
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - t).abs() <= 1e-15 * (1.0 + t.abs()) {
            return next;
        }
        t = next;
    }
    t
}

/// Population coefficient vector targeted by the experiment's level.
pub fn true_coefficients(cfg: &SimConfig) -> Vec<f64> {
    let e = distribution_expectile(cfg.case.error_dist(), cfg.tau);
    cfg.beta_star.iter().zip(&cfg.gamma).map(|(b, g)| b + e * g).collect()
}

/// Estimators the harness can race against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Full-data iterative fit over the pooled stream.
    Oracle,
    /// Renewable summary-statistic estimator.
    Reer,
    /// Weighted average of per-batch fits by Gram matrix.
    Paer,
    /// Covariance-weighted average of per-batch fits.
    Dcer,
}

pub const ALL_METHODS: [Method; 4] = [Method::Oracle, Method::Reer, Method::Paer, Method::Dcer];

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Reer => "reer",
            Method::Paer => "paer",
            Method::Dcer => "dcer",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "oracle" => Ok(Method::Oracle),
            "reer" => Ok(Method::Reer),
            "paer" => Ok(Method::Paer),
            "dcer" => Ok(Method::Dcer),
            other => Err(Error::InvalidConfig(format!(
                "unknown method '{other}' (expected oracle, reer, paer, or dcer)"
            ))),
        }
    }
}

/// Monte-Carlo summary for one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: Method,
    /// Mean of (estimate - truth), per coefficient.
    pub bias: Vec<f64>,
    /// Mean of (estimate - truth)^2, per coefficient.
    pub mse: Vec<f64>,
    /// Mean wall-clock seconds per replication for this estimator alone.
    pub mean_time_seconds: f64,
}

/// One replication where some estimator failed; the whole replication is
/// dropped for every method so the comparison stays paired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepFailure {
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub config: SimConfig,
    pub methods: Vec<MethodMetrics>,
    pub reps_used: usize,
    pub failures: Vec<RepFailure>,
}

impl MetricsTable {
    pub fn metrics_for(&self, method: Method) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Pointwise sanity checks that hold for any correctly aggregated
    /// table: finite entries and `mse >= bias^2` per coefficient.
    pub fn check_invariants(&self) -> Result<()> {
        for m in &self.methods {
            for (i, (&b, &s)) in m.bias.iter().zip(&m.mse).enumerate() {
                if !b.is_finite() || !s.is_finite() || !m.mean_time_seconds.is_finite() {
                    return Err(Error::NonFinite { context: format!("metrics for {}", m.method) });
                }
                if s + 1e-12 * (1.0 + s) < b * b {
                    return Err(Error::InvalidConfig(format!(
                        "mse {} below squared bias {} for {} coefficient {i}",
                        s,
                        b * b,
                        m.method
                    )));
                }
            }
        }
        Ok(())
    }

    /// Emits the table as CSV: `#`-prefixed metadata lines first, then a
    /// header row and one row per (method, coefficient).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let cfg = &self.config;
        writeln!(out, "# case,{}", cfg.case.index())?;
        writeln!(out, "# scenario,{}", cfg.scenario.as_str())?;
        writeln!(out, "# tau,{}", fmt_f64_17(cfg.tau.value()))?;
        writeln!(out, "# n_k,{}", cfg.n_k)?;
        writeln!(out, "# num_batches,{}", cfg.num_batches)?;
        writeln!(out, "# reps,{}", cfg.reps)?;
        writeln!(out, "# seed,{}", cfg.seed)?;
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64_17(*x)).collect::<Vec<_>>().join(" ");
        writeln!(out, "# beta_star,{}", join(&cfg.beta_star))?;
        writeln!(out, "# gamma,{}", join(&cfg.gamma))?;
        writeln!(out, "# reps_used,{}", self.reps_used)?;
        writeln!(out, "# failed_reps,{}", self.failures.len())?;
        for f in &self.failures {
            writeln!(out, "# failed_rep,{},{}", f.rep, f.message.replace('\n', " "))?;
        }
        writeln!(out, "method,coefficient_index,bias,mse,mean_time_seconds,reps")?;
        for m in &self.methods {
            for j in 0..m.bias.len() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    m.method,
                    j,
                    fmt_f64_17(m.bias[j]),
                    fmt_f64_17(m.mse[j]),
                    fmt_f64_17(m.mean_time_seconds),
                    self.reps_used
                )?;
            }
        }
        Ok(())
    }
}

type RepOutcome = Vec<(Vec<f64>, f64)>;

fn run_replication(
    cfg: &SimConfig,
    methods: &[Method],
    paer_mode: WeightMode,
    rep: usize,
) -> std::result::Result<RepOutcome, RepFailure> {
    let batches: Vec<Batch> = (0..cfg.num_batches).map(|k| generate_batch(cfg, k, rep)).collect();
    let irls = IrlsConfig::default();
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let started = Instant::now();
        let estimate: Result<Vec<f64>> = match method {
            Method::Oracle => irls_fit(&batches, cfg.tau, &irls).map(|fit| fit.coefficients.beta),
            Method::Reer => {
                SummaryState::from_first_batch(&batches[0], cfg.tau, &irls).and_then(|mut st| {
                    for b in &batches[1..] {
                        st = st.update(b)?;
                    }
                    Ok(st.estimate().beta)
                })
            }
            Method::Paer => PaerState::new(cfg.p(), cfg.tau, paer_mode).and_then(|mut st| {
                for b in &batches {
                    st = st.update(b, &irls)?;
                }
                Ok(st.finalize()?.beta)
            }),
            Method::Dcer => DcerState::new(cfg.p(), cfg.tau).and_then(|mut st| {
                for b in &batches {
                    st = st.update(b, &irls)?;
                }
                Ok(st.finalize()?.beta)
            }),
        };
        let seconds = started.elapsed().as_secs_f64();
        match estimate {
            Ok(beta) => out.push((beta, seconds)),
            Err(err) => return Err(RepFailure { rep, message: format!("{method}: {err}") }),
        }
    }
    Ok(out)
}

pub fn run_experiment(cfg: &SimConfig, methods: &[Method]) -> Result<MetricsTable> {
    run_experiment_with_mode(cfg, methods, WeightMode::default())
}

/// Runs `cfg.reps` independent replications of the stream and scores
/// each estimator against the population coefficients. Replications run
/// in parallel; aggregation is a fixed-order sequential sum, so results
/// do not depend on scheduling. A replication where any estimator fails
/// is dropped for all of them and recorded in `failures`.
pub fn run_experiment_with_mode(
    cfg: &SimConfig,
    methods: &[Method],
    paer_mode: WeightMode,
) -> Result<MetricsTable> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("at least one method is required".into()));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(Error::InvalidConfig(format!("method {m} listed twice")));
        }
    }

    let outcomes: Vec<std::result::Result<RepOutcome, RepFailure>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, methods, paer_mode, rep))
        .collect();

    let truth = true_coefficients(cfg);
    let p = cfg.p();
    let mut bias = vec![vec![0.0; p]; methods.len()];
    let mut mse = vec![vec![0.0; p]; methods.len()];
    let mut time = vec![0.0; methods.len()];
    let mut reps_used = 0usize;
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(per_method) => {
                reps_used += 1;
                for (m, (beta, seconds)) in per_method.iter().enumerate() {
                    for j in 0..p {
                        let d = beta[j] - truth[j];
                        bias[m][j] += d;
                        mse[m][j] += d * d;
                    }
                    time[m] += seconds;
                }
            }
            Err(failure) => failures.push(failure),
        }
    }

    let methods = methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let scale = if reps_used > 0 { 1.0 / reps_used as f64 } else { 0.0 };
            MethodMetrics {
                method,
                bias: bias[m].iter().map(|s| s * scale).collect(),
                mse: mse[m].iter().map(|s| s * scale).collect(),
                mean_time_seconds: time[m] * scale,
            }
        })
        .collect();

    Ok(MetricsTable { config: cfg.clone(), methods, reps_used, failures })
}
