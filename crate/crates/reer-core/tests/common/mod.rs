//! Shared oracles for the integration suites, implemented on purpose
//! with different machinery than the library: adaptive quadrature and
//! bisection instead of closed forms and Newton, Gaussian elimination
//! instead of a triangular factorization, golden-section search instead
//! of reweighted solves, finite differences instead of moment algebra.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use reer_core::Batch;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Asymmetrically weighted squared loss, written out from the definition.
pub fn rho(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    0.5 * w * u * u
}

pub fn predict(row: &[f64], beta: &[f64]) -> f64 {
    row.iter().zip(beta).map(|(x, c)| x * c).sum()
}

/// Mean asymmetric loss over all pooled rows.
pub fn pooled_mean_loss(batches: &[Batch], beta: &[f64], tau: f64) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for b in batches {
        for i in 0..b.n() {
            total += rho(b.response(i) - predict(b.row(i), beta), tau);
            n += 1;
        }
    }
    total / n as f64
}

/// Central finite-difference gradient of the pooled mean loss.
pub fn fd_gradient(batches: &[Batch], beta: &[f64], tau: f64, step: f64) -> Vec<f64> {
    (0..beta.len())
        .map(|j| {
            let mut hi = beta.to_vec();
            let mut lo = beta.to_vec();
            hi[j] += step;
            lo[j] -= step;
            (pooled_mean_loss(batches, &hi, tau) - pooled_mean_loss(batches, &lo, tau)) / (2.0 * step)
        })
        .collect()
}

/// Gaussian elimination with partial pivoting. Returns None when the
/// best available pivot is negligible relative to the matrix scale.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    let scale = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for col in 0..n {
        let pivot_row = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot_row][col].abs() <= 1e-12 * scale.max(1.0) {
            return None;
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Pooled ordinary least squares via the normal equations and elimination.
pub fn ols_by_elimination(batches: &[Batch]) -> Option<Vec<f64>> {
    let p = batches[0].p();
    let mut gram = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for b in batches {
        for i in 0..b.n() {
            let row = b.row(i);
            let y = b.response(i);
            for j in 0..p {
                xty[j] += row[j] * y;
                for k in 0..p {
                    gram[j][k] += row[j] * row[k];
                }
            }
        }
    }
    solve_dense(&gram, &xty)
}

/// Golden-section minimizer of a unimodal function on [a, b].
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Random regression batch: intercept plus uniform covariates, normal
/// noise of the given scale. Returns the batch and the coefficient
/// vector used to build it.
pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, p: usize, noise: f64) -> (Batch, Vec<f64>) {
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let start = x.len();
        x.push(1.0);
        for _ in 1..p {
            x.push(rng.random::<f64>());
        }
        let z: f64 = rng.sample(StandardNormal);
        y.push(predict(&x[start..], &beta) + noise * z);
    }
    (Batch::new(x, y, p).unwrap(), beta)
}

/// Like [`random_batch`] but every residual at `beta` is kept at least
/// `floor` away from zero, so the loss is smooth in a window around it.
pub fn random_batch_floored(rng: &mut ChaCha8Rng, n: usize, p: usize, floor: f64) -> (Batch, Vec<f64>) {
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let start = x.len();
        x.push(1.0);
        for _ in 1..p {
            x.push(rng.random::<f64>());
        }
        let z: f64 = rng.sample(StandardNormal);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let offset = sign * (floor + z.abs());
        y.push(predict(&x[start..], &beta) + offset);
    }
    (Batch::new(x, y, p).unwrap(), beta)
}

/// Splits `n` rows into at most `max_parts` contiguous chunks; the first
/// chunk always has at least `first_min` rows, later ones at least 1.
pub fn random_partition(rng: &mut ChaCha8Rng, n: usize, first_min: usize, max_parts: usize) -> Vec<usize> {
    assert!(n >= first_min);
    let parts = rng.random_range(1..=max_parts.min(n - first_min + 1));
    let mut sizes = vec![0usize; parts];
    sizes[0] = first_min;
    let mut rest = n - first_min;
    for s in sizes.iter_mut().skip(1) {
        *s = 1;
        rest -= 1;
    }
    for _ in 0..rest {
        let ix = rng.random_range(0..parts);
        sizes[ix] += 1;
    }
    sizes
}

/// Cuts one batch worth of rows into the given contiguous chunk sizes.
pub fn split_batch(batch: &Batch, sizes: &[usize]) -> Vec<Batch> {
    assert_eq!(sizes.iter().sum::<usize>(), batch.n());
    let p = batch.p();
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0usize;
    for &len in sizes {
        let mut x = Vec::with_capacity(len * p);
        let mut y = Vec::with_capacity(len);
        for i in at..at + len {
            x.extend_from_slice(batch.row(i));
            y.push(batch.response(i));
        }
        out.push(Batch::new(x, y, p).unwrap());
        at += len;
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Numeric distribution oracles built on adaptive Simpson quadrature.
pub mod quad {
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Dist {
        Normal,
        T3,
    }

    pub fn pdf(dist: Dist, x: f64) -> f64 {
        match dist {
            Dist::Normal => (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            Dist::T3 => {
                let base = 1.0 + x * x / 3.0;
                2.0 / (std::f64::consts::PI * 3.0_f64.sqrt()) / (base * base)
            }
        }
    }

    fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }

    #[allow(clippy::too_many_arguments)]
    fn adapt(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        adapt(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + adapt(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }

    pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        let (fa, fb) = (f(a), f(b));
        let (whole, m, fm) = simpson(f, a, fa, b, fb);
        adapt(f, a, fa, b, fb, whole, m, fm, tol, 48)
    }

    // adaptive Simpson over one wide interval can accept early when all
    // its first sample points miss the density's bump, so long ranges are
    // cut into unit panels first
    pub fn integrate_paneled(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        let panels = ((b - a).ceil() as usize).max(1);
        let width = (b - a) / panels as f64;
        let per_panel = tol / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + k as f64 * width;
                integrate(f, lo, lo + width, per_panel)
            })
            .sum()
    }

    // E[(X - t)_+] by quadrature: finite leg over panels, then for the
    // heavy t(3) tail the substitution x = 1/u maps (A, inf) onto (0, 1/A)
    pub fn upper_partial(dist: Dist, t: f64) -> f64 {
        match dist {
            Dist::Normal => {
                let hi = 12.0f64.max(t + 1.0);
                integrate_paneled(&|x| (x - t) * pdf(dist, x), t, hi, 1e-14)
            }
            Dist::T3 => {
                let a = 50.0f64.max(t + 1.0);
                let finite = integrate_paneled(&|x| (x - t) * pdf(dist, x), t, a, 1e-14);
                let c = 2.0 / (std::f64::consts::PI * 3.0_f64.sqrt());
                let tail_integrand = |u: f64| {
                    let q = 3.0 * u * u + 1.0;
                    c * 9.0 * u * (1.0 - t * u) / (q * q)
                };
                finite + integrate(&tail_integrand, 0.0, 1.0 / a, 1e-15)
            }
        }
    }

    /// Expectile by pure bisection on the first-order condition
    /// `tau E[(X - t)_+] = (1 - tau) E[(t - X)_+]`; both sides come from
    /// quadrature, the lower partial moment via symmetry of the density.
    pub fn expectile_by_bisection(dist: Dist, tau: f64) -> f64 {
        let g = |t: f64| tau * upper_partial(dist, t) - (1.0 - tau) * upper_partial(dist, -t);
        let (mut lo, mut hi) = (-45.0, 45.0);
        for _ in 0..120 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}
