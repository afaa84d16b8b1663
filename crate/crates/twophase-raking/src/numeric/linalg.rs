//! Dense symmetric positive definite solves used by the Newton loops.
//!
//! All problem matrices here are small (a handful of regression
//! coefficients), so an unblocked Cholesky is plenty. A single
//! diagonal-jitter retry absorbs near-singular information matrices before
//! a hard [`Error::Singular`] is raised.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

const COND_LIMIT: f64 = 1e12;

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: Array2<f64>,
}

enum FactorFailure {
    /// Pivot that went non-positive; magnitude doubles as a smallest
    /// eigenvalue estimate for error reporting.
    BadPivot(f64),
    IllConditioned(f64),
}

fn try_factor(a: &ArrayView2<f64>) -> std::result::Result<CholeskyFactor, FactorFailure> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    let mut min_pivot = f64::INFINITY;
    let mut max_pivot: f64 = 0.0;
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(FactorFailure::BadPivot(d));
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        min_pivot = min_pivot.min(dj);
        max_pivot = max_pivot.max(dj);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    // cond(A) ~ (max diag(L) / min diag(L))^2 is a cheap lower bound.
    let cond = (max_pivot / min_pivot).powi(2);
    if cond > COND_LIMIT {
        return Err(FactorFailure::IllConditioned(min_pivot * min_pivot));
    }
    Ok(CholeskyFactor { l })
}

impl CholeskyFactor {
    /// The lower-triangular factor `L` with `A = L L'`.
    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn solve(&self, b: &ArrayView1<f64>) -> Array1<f64> {
        let n = self.l.nrows();
        let mut y = b.to_owned();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[(i, k)] * y[k];
            }
            y[i] /= self.l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.l[(k, i)] * y[k];
            }
            y[i] /= self.l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Array2<f64> {
        let n = self.l.nrows();
        let mut inv = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut e = Array1::<f64>::zeros(n);
            e[j] = 1.0;
            let col = self.solve(&e.view());
            inv.column_mut(j).assign(&col);
        }
        // Symmetrize against round-off.
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// Factor an SPD matrix, retrying once with diagonal jitter
/// `1e-10 * trace/dim` before reporting singularity.
pub fn factor_spd(a: &ArrayView2<f64>) -> Result<CholeskyFactor> {
    if a.nrows() != a.ncols() {
        return Err(Error::dimension(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let first = match try_factor(a) {
        Ok(f) => return Ok(f),
        Err(e) => e,
    };
    let n = a.nrows();
    let trace: f64 = (0..n).map(|i| a[(i, i)]).sum();
    let jitter = 1e-10 * trace / n as f64;
    let mut aj = a.to_owned();
    for i in 0..n {
        aj[(i, i)] += jitter;
    }
    match try_factor(&aj.view()) {
        Ok(f) => Ok(f),
        Err(second) => {
            let min_eigen = match (first, second) {
                (FactorFailure::BadPivot(p), _) => p,
                (FactorFailure::IllConditioned(e), _) => e,
            };
            Err(Error::Singular { min_eigen })
        }
    }
}

/// Unweighted Gram matrix `M'M`, accumulated in one row-major pass.
pub fn gram_matrix(m: &ArrayView2<f64>) -> Array2<f64> {
    let k = m.ncols();
    let mut gram = Array2::<f64>::zeros((k, k));
    for row in m.rows() {
        let r = row.as_slice().unwrap_or(&[]);
        if r.is_empty() {
            for a in 0..k {
                let xa = row[a];
                for b in a..k {
                    gram[(a, b)] += xa * row[b];
                }
            }
        } else {
            for a in 0..k {
                let xa = r[a];
                for b in a..k {
                    gram[(a, b)] += xa * r[b];
                }
            }
        }
    }
    for a in 0..k {
        for b in (a + 1)..k {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    gram
}

/// Rank check on a precomputed Gram: Cholesky of the correlation-normalized
/// matrix with a pivot tolerance. A zero or dependent column comes back as
/// [`Error::RankDeficient`] naming it.
pub fn check_gram_full_rank(gram: &Array2<f64>, pivot_tol: f64) -> Result<()> {
    let k = gram.ncols();
    let mut norms = Vec::with_capacity(k);
    for j in 0..k {
        let d = gram[(j, j)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::RankDeficient { column: j });
        }
        norms.push(d.sqrt());
    }
    let mut g = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            g[(i, j)] = gram[(i, j)] / (norms[i] * norms[j]);
        }
    }
    for j in 0..k {
        let mut d = g[(j, j)];
        for r in 0..j {
            d -= g[(j, r)] * g[(j, r)];
        }
        if !(d > pivot_tol) {
            return Err(Error::RankDeficient { column: j });
        }
        let dj = d.sqrt();
        for i in (j + 1)..k {
            let mut s = g[(i, j)];
            for r in 0..j {
                s -= g[(i, r)] * g[(j, r)];
            }
            g[(i, j)] = s / dj;
        }
        g[(j, j)] = dj;
    }
    Ok(())
}

/// Verify the columns of `m` are numerically independent.
pub fn check_columns_independent(m: &ArrayView2<f64>, pivot_tol: f64) -> Result<()> {
    check_gram_full_rank(&gram_matrix(m), pivot_tol)
}

/// Solve `A x = b` for SPD `A`.
pub fn solve_spd(a: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Result<Array1<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::dimension(format!(
            "matrix is {}x{} but rhs has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    Ok(factor_spd(a)?.solve(b))
}

/// Invert an SPD matrix.
pub fn invert_spd(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(factor_spd(a)?.inverse())
}
