//! Truncated generator `G_N = A_N + B_N` and the decay resolvent.
//!
//! The generator is upper triangular: a diagonal `-theta_i`, the decay inflow
//! `r_{i+1}` on the superdiagonal, and the fragmentation gain `a_j b(i, j)` for
//! `j > i`. Row `N` drops the inflow `r_{N+1} u_{N+1}`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_g;
use crate::rates::{check_kernel_conservation, theta, KernelSpec, RateModel, KERNEL_CONSERVATION_TOL};

/// Cluster counts `f_1..f_N` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub t: f64,
    pub f: Vec<f64>,
}

impl ClusterState {
    pub fn new(t: f64, f: Vec<f64>) -> Self {
        ClusterState { t, f }
    }

    /// `amount` clusters of a single size (1-based).
    pub fn monodisperse(n: usize, size: usize, amount: f64) -> Self {
        let mut f = vec![0.0; n];
        f[size - 1] = amount;
        ClusterState { t: 0.0, f }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }
}

/// Mass norm `sum_n n |f_n|`.
pub fn mass_norm(f: &[f64]) -> f64 {
    f.iter().enumerate().map(|(k, v)| (k + 1) as f64 * v.abs()).sum()
}

/// Strictly upper triangular fragmentation block, stored column by column.
#[derive(Debug, Clone, PartialEq)]
struct UpperCsc {
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedGenerator {
    n: usize,
    /// `-theta_i`.
    diag: Vec<f64>,
    /// `superdiag[i] = r_{i+2}` in 0-based storage, i.e. `G(i, i+1)` decay part.
    superdiag: Vec<f64>,
    upper: UpperCsc,
}

/// Assembles `G_N` from a rate model and a kernel.
///
/// Fails if the model cannot be evaluated at `N` or the kernel violates mass
/// conservation on `2..=N` by more than [`KERNEL_CONSERVATION_TOL`].
pub fn build_generator(model: &RateModel, kernel: &KernelSpec, n: usize) -> Result<TruncatedGenerator> {
    model.check_size(n)?;
    let report = check_kernel_conservation(kernel, n);
    if let Some(j) = report.worst_j {
        if report.max_deviation > KERNEL_CONSERVATION_TOL {
            return Err(Error::KernelNotConservative {
                j,
                deviation: report.max_deviation,
                tolerance: KERNEL_CONSERVATION_TOL,
            });
        }
    }
    // theta() rejects non-positive totals, which an unchecked model may produce
    // legitimately (r = d = 0 for pure fragmentation); assemble directly instead.
    let diag: Vec<f64> = (1..=n)
        .map(|i| -(model.decay(i) + model.frag(i) + model.death(i)))
        .collect();
    let superdiag: Vec<f64> = (2..=n).map(|i| model.decay(i)).collect();

    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut rows = Vec::new();
    let mut values = Vec::new();
    col_ptr.push(0);
    for j in 1..=n {
        let aj = model.frag(j);
        if aj != 0.0 {
            for i in 1..j {
                let v = aj * kernel.eval(i, j);
                if v != 0.0 {
                    rows.push(i - 1);
                    values.push(v);
                }
            }
        }
        col_ptr.push(rows.len());
    }
    Ok(TruncatedGenerator {
        n,
        diag,
        superdiag,
        upper: UpperCsc { col_ptr, rows, values },
    })
}

impl TruncatedGenerator {
    pub fn size(&self) -> usize {
        self.n
    }

    /// Diagonal `-theta_i`, 0-based.
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Decay inflow `r_2..r_N`, 0-based (`superdiag()[i] = G(i, i+1)` minus fragmentation).
    pub fn superdiag(&self) -> &[f64] {
        &self.superdiag
    }

    pub fn nnz_upper(&self) -> usize {
        self.upper.values.len()
    }

    /// Entries of column `j` (0-based) strictly above the diagonal, with the decay
    /// inflow folded into the superdiagonal entry, in ascending row order.
    fn column_above(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.upper.col_ptr[j], self.upper.col_ptr[j + 1]);
        let rows = &self.upper.rows[lo..hi];
        let vals = &self.upper.values[lo..hi];
        // Rows are sorted, so a fragmentation entry on the superdiagonal comes last.
        let on_super = j > 0 && rows.last() == Some(&(j - 1));
        let body = if on_super { rows.len() - 1 } else { rows.len() };
        let superdiag = (j > 0).then(|| {
            let r = self.superdiag[j - 1];
            (j - 1, if on_super { r + vals[body] } else { r })
        });
        rows[..body]
            .iter()
            .copied()
            .zip(vals[..body].iter().copied())
            .chain(superdiag)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: len,
            });
        }
        Ok(())
    }

    /// `G f`, column-oriented in `O(N + nnz)`.
    ///
    /// Each row accumulates its terms in ascending column order starting from zero,
    /// so the result matches a dense row-by-row product bit for bit.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(f.len())?;
        let mut y = vec![0.0; self.n];
        self.apply_into(f, &mut y);
        Ok(y)
    }

    pub(crate) fn apply_into(&self, f: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.n {
            let fj = f[j];
            y[j] += self.diag[j] * fj;
            for (i, g) in self.column_above(j) {
                y[i] += g * fj;
            }
        }
    }

    /// `G^T g`: `(G^T g)_j = -theta_j g_j + r_j g_{j-1} + a_j sum_i b(i,j) g_i`.
    pub fn apply_adjoint(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g.len())?;
        Ok((0..self.n)
            .map(|j| {
                let above: f64 = self.column_above(j).map(|(i, v)| v * g[i]).sum();
                above + self.diag[j] * g[j]
            })
            .collect())
    }

    /// Solves `(I - c G) x = rhs` in place by column-oriented back substitution.
    /// The diagonal `1 + c theta_i` is positive for `c > 0`.
    pub(crate) fn solve_shifted_in_place(&self, c: f64, x: &mut [f64]) {
        for j in (0..self.n).rev() {
            x[j] /= 1.0 - c * self.diag[j];
            let xj = x[j];
            if xj != 0.0 {
                for (i, g) in self.column_above(j) {
                    x[i] += c * g * xj;
                }
            }
        }
    }

    /// Dense row-major copy; entry `(i, i+1)` is `r_{i+1} + a_{i+1} b(i, i+1)`.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (j, &d) in self.diag.iter().enumerate() {
            m[j][j] = d;
            for (i, g) in self.column_above(j) {
                m[i][j] = g;
            }
        }
        m
    }

    /// Row-major text dump, one row per line, `%.17g`, space separated.
    pub fn write_dense<W: Write>(&self, mut out: W) -> io::Result<()> {
        for row in self.to_dense() {
            let line: Vec<String> = row.iter().map(|&v| fmt_g(v, 17)).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// `u = R_lambda f` for the truncated decay part `A_N` (diagonal plus superdiagonal).
///
/// Evaluates `u_i = (f_i + r_{i+1} u_{i+1}) / (lambda + theta_i)` from `i = N` down,
/// which is the truncated product formula without forming the products.
pub fn decay_resolvent_apply(model: &RateModel, n: usize, lambda: f64, f: &[f64]) -> Result<Vec<f64>> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Domain(format!("resolvent needs lambda > 0, got {lambda}")));
    }
    if f.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: f.len(),
        });
    }
    let th = theta(model, n)?;
    let th = th.values();
    let mut u = vec![0.0; n];
    let mut carry = 0.0;
    for k in (0..n).rev() {
        u[k] = (f[k] + carry) / (lambda + th[k]);
        carry = model.decay(k + 1) * u[k];
    }
    Ok(u)
}
