//! Dense symmetric linear algebra for small positive-definite systems.
//!
//! Every estimator in this crate accumulates p x p moment matrices with p
//! rarely above a few dozen, so storage is plain dense row-major and the
//! solver is a root-free LDL^T factorization. Operations return new values
//! rather than mutating their inputs, which keeps state transitions easy to
//! audit in tests; crate-internal hot loops use private in-place variants.

use crate::error::{Error, Result};

/// A factorization pivot below this fraction of the largest diagonal entry
/// counts as a singularity.
const REL_PIVOT_TOL: f64 = 1e-8;

/// Diagonal jitter applied on the single factorization retry, as a fraction
/// of the mean diagonal entry. Cumulative Hessians are positive-definite in
/// theory but can be borderline after a tiny first batch.
const JITTER_FRACTION: f64 = 1e-10;

/// Dense symmetric matrix. Symmetry is maintained by construction: all
/// mutating operations write both mirror entries from one computed value,
/// so `get(i, j) == get(j, i)` holds bit-for-bit at all times.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> SymMatrix {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> SymMatrix {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from a row-major slice, rejecting asymmetric or
    /// non-finite input. Intended for deserialization and tests.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<SymMatrix> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                context: format!("expected {dim}x{dim} = {} entries, got {}", dim * dim, data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix entries".into(),
            });
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(Error::BadStateFile(format!(
                        "matrix entry ({i},{j}) does not equal its mirror"
                    )));
                }
            }
        }
        Ok(SymMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Row-major view of all entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Returns `self + w * x * x^T` without touching `self`.
    pub fn accumulate_outer(&self, x: &[f64], w: f64) -> Result<SymMatrix> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: format!("outer-product vector has {} entries, matrix is {}x{}", x.len(), self.dim, self.dim),
            });
        }
        let mut out = self.clone();
        out.add_outer_mut(x, w);
        Ok(out)
    }

    /// In-place rank-one accumulation, used by moment kernels. Both mirror
    /// entries receive the same computed product, preserving bit symmetry.
    #[inline]
    pub(crate) fn add_outer_mut(&mut self, x: &[f64], w: f64) {
        let p = self.dim;
        debug_assert_eq!(x.len(), p);
        for i in 0..p {
            let wxi = w * x[i];
            self.data[i * p + i] += wxi * x[i];
            for j in 0..i {
                let v = wxi * x[j];
                self.data[i * p + j] += v;
                self.data[j * p + i] += v;
            }
        }
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.check_same_dim(other)?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(out)
    }

    pub(crate) fn add_assign(&mut self, other: &SymMatrix) -> Result<()> {
        self.check_same_dim(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= c;
        }
        out
    }

    /// Returns `self + c * I`.
    pub fn add_diagonal(&self, c: f64) -> SymMatrix {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.data[i * self.dim + i] += c;
        }
        out
    }

    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: format!("vector has {} entries, matrix is {}x{}", v.len(), self.dim, self.dim),
            });
        }
        let p = self.dim;
        let mut out = vec![0.0; p];
        for i in 0..p {
            let row = &self.data[i * p..(i + 1) * p];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            out[i] = acc;
        }
        Ok(out)
    }

    fn check_same_dim(&self, other: &SymMatrix) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                context: format!("matrices are {}x{} and {}x{}", self.dim, self.dim, other.dim, other.dim),
            });
        }
        Ok(())
    }

    fn max_abs_diag(&self) -> f64 {
        (0..self.dim).fold(0.0, |m, i| m.max(self.get(i, i).abs()))
    }
}

/// LDL^T factorization of an intended-positive-definite matrix, reusable
/// across several right-hand sides. Construction applies the jitter-retry
/// policy once before reporting singularity.
#[derive(Debug, Clone)]
pub struct SpdSolver {
    dim: usize,
    // unit lower triangle, row-major; diagonal entries are implicitly 1
    lower: Vec<f64>,
    pivots: Vec<f64>,
}

impl SpdSolver {
    pub fn new(a: &SymMatrix) -> Result<SpdSolver> {
        match try_factor(a) {
            Ok(f) => Ok(f),
            Err(_) => {
                let jitter = JITTER_FRACTION * a.trace() / a.dim as f64;
                try_factor(&a.add_diagonal(jitter)).map_err(|col| Error::SingularMatrix { col })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: format!("right-hand side has {} entries, system is {}x{}", b.len(), self.dim, self.dim),
            });
        }
        let p = self.dim;
        let mut x = b.to_vec();
        // forward substitution with the unit lower triangle
        for i in 1..p {
            let mut acc = x[i];
            for k in 0..i {
                acc -= self.lower[i * p + k] * x[k];
            }
            x[i] = acc;
        }
        // diagonal scaling; exact when pivots are powers of two
        for i in 0..p {
            x[i] /= self.pivots[i];
        }
        // backward substitution with the transpose
        for i in (0..p).rev() {
            let mut acc = x[i];
            for k in (i + 1)..p {
                acc -= self.lower[k * p + i] * x[k];
            }
            x[i] = acc;
        }
        Ok(x)
    }

    /// Inverse of the factored matrix, symmetrized so mirror entries are
    /// bit-identical.
    pub fn inverse(&self) -> SymMatrix {
        let p = self.dim;
        let mut cols = vec![0.0; p * p];
        let mut e = vec![0.0; p];
        for j in 0..p {
            e[j] = 1.0;
            let col = self.solve(&e).expect("dimension fixed by construction");
            e[j] = 0.0;
            for i in 0..p {
                cols[i * p + j] = col[i];
            }
        }
        symmetrized(p, &cols)
    }

    /// Computes `A^-1 * m * A^-1` for the factored matrix A, symmetrized.
    pub fn inv_congruence(&self, m: &SymMatrix) -> Result<SymMatrix> {
        if m.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: format!("congruence argument is {}x{}, system is {}x{}", m.dim(), m.dim(), self.dim, self.dim),
            });
        }
        let p = self.dim;
        // X = A^-1 m, column by column
        let mut x = vec![0.0; p * p];
        let mut col = vec![0.0; p];
        for j in 0..p {
            for i in 0..p {
                col[i] = m.get(i, j);
            }
            let s = self.solve(&col)?;
            for i in 0..p {
                x[i * p + j] = s[i];
            }
        }
        // rows of X A^-1 are A^-1 applied to rows of X (A is symmetric)
        let mut r = vec![0.0; p * p];
        for i in 0..p {
            let s = self.solve(&x[i * p..(i + 1) * p])?;
            r[i * p..(i + 1) * p].copy_from_slice(&s);
        }
        Ok(symmetrized(p, &r))
    }
}

fn symmetrized(p: usize, raw: &[f64]) -> SymMatrix {
    let mut out = SymMatrix::zeros(p);
    for i in 0..p {
        out.data[i * p + i] = raw[i * p + i];
        for j in 0..i {
            let v = 0.5 * (raw[i * p + j] + raw[j * p + i]);
            out.data[i * p + j] = v;
            out.data[j * p + i] = v;
        }
    }
    out
}

/// On failure returns the column index of the offending pivot.
fn try_factor(a: &SymMatrix) -> std::result::Result<SpdSolver, usize> {
    let p = a.dim();
    let tol = REL_PIVOT_TOL * a.max_abs_diag();
    let mut lower = vec![0.0; p * p];
    let mut pivots = vec![0.0; p];
    for j in 0..p {
        let mut dj = a.get(j, j);
        for k in 0..j {
            dj -= lower[j * p + k] * lower[j * p + k] * pivots[k];
        }
        // the negated comparison also rejects NaN pivots
        if !(dj > tol) {
            return Err(j);
        }
        pivots[j] = dj;
        for i in (j + 1)..p {
            let mut v = a.get(i, j);
            for k in 0..j {
                v -= lower[i * p + k] * lower[j * p + k] * pivots[k];
            }
            lower[i * p + j] = v / dj;
        }
    }
    Ok(SpdSolver { dim: p, lower, pivots })
}

/// Solves `a * x = b` for an intended-positive-definite `a`.
pub fn spd_solve(a: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    SpdSolver::new(a)?.solve(b)
}
