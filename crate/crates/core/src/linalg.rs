//! Matrix-free Krylov solvers on [`Field`] vectors.

use crate::grid::Field;

/// Outcome of a Krylov solve.
#[derive(Clone, Debug)]
pub struct KrylovResult {
    pub x: Field,
    pub iterations: usize,
    /// Final residual norm relative to `|b|`.
    pub relative_residual: f64,
}

/// Conjugate gradients for a symmetric positive definite operator.
pub fn cg(apply: impl Fn(&Field) -> Field, b: &Field, tol: f64, max_iter: usize) -> KrylovResult {
    let bnorm = b.dot(b).sqrt();
    let mut x = Field::new(vec![0.0; b.len()]);
    if bnorm == 0.0 {
        return KrylovResult { x, iterations: 0, relative_residual: 0.0 };
    }
    let mut r = b.clone();
    let mut d = r.clone();
    let mut rr = r.dot(&r);
    let mut it = 0;
    while it < max_iter && rr.sqrt() > tol * bnorm {
        let ad = apply(&d);
        let dad = d.dot(&ad);
        if !(dad > 0.0) {
            break;
        }
        let alpha = rr / dad;
        x = x.axpy(alpha, &d);
        r = r.axpy(-alpha, &ad);
        let rr_new = r.dot(&r);
        d = r.axpy(rr_new / rr, &d);
        rr = rr_new;
        it += 1;
    }
    KrylovResult { x, iterations: it, relative_residual: rr.sqrt() / bnorm }
}

/// Preconditioned MINRES for a symmetric, possibly indefinite operator
/// `apply` with a symmetric positive definite preconditioner `precond`
/// (which applies `M^{-1}`). The reported residual is measured in the
/// `M^{-1}` norm.
pub fn pminres(
    apply: impl Fn(&Field) -> Field,
    precond: impl Fn(&Field) -> Field,
    b: &Field,
    tol: f64,
    max_iter: usize,
) -> KrylovResult {
    let n = b.len();
    let zeros = || Field::new(vec![0.0; n]);
    let mut x = zeros();
    let mut v_old = zeros();
    let mut v = b.clone();
    let mut z = precond(&v);
    let mut gamma = z.dot(&v).max(0.0).sqrt();
    let gamma1 = gamma;
    if gamma1 == 0.0 {
        return KrylovResult { x, iterations: 0, relative_residual: 0.0 };
    }
    let mut gamma_old = 1.0;
    let (mut w_old, mut w) = (zeros(), zeros());
    let (mut c_old, mut c) = (1.0, 1.0);
    let (mut s_old, mut s) = (0.0, 0.0);
    let mut eta = gamma1;
    let mut it = 0;
    while it < max_iter && eta.abs() > tol * gamma1 {
        z = z.scale(1.0 / gamma);
        let az = apply(&z);
        let delta = az.dot(&z);
        let v_new = az.axpy(-delta / gamma, &v).axpy(-gamma / gamma_old, &v_old);
        let z_new = precond(&v_new);
        let gamma_new = z_new.dot(&v_new).max(0.0).sqrt();
        let a0 = c * delta - c_old * s * gamma;
        let a1 = (a0 * a0 + gamma_new * gamma_new).sqrt();
        let a2 = s * delta + c_old * c * gamma;
        let a3 = s_old * gamma;
        if a1 == 0.0 {
            break;
        }
        let c_new = a0 / a1;
        let s_new = gamma_new / a1;
        let w_new = z.axpy(-a3, &w_old).axpy(-a2, &w).scale(1.0 / a1);
        x = x.axpy(c_new * eta, &w_new);
        eta *= -s_new;
        it += 1;
        if gamma_new == 0.0 {
            break;
        }
        v_old = v;
        v = v_new;
        z = z_new;
        gamma_old = gamma;
        gamma = gamma_new;
        w_old = w;
        w = w_new;
        c_old = c;
        c = c_new;
        s_old = s;
        s = s_new;
    }
    KrylovResult { x, iterations: it, relative_residual: eta.abs() / gamma1 }
}

/// Unpreconditioned MINRES.
pub fn minres(apply: impl Fn(&Field) -> Field, b: &Field, tol: f64, max_iter: usize) -> KrylovResult {
    pminres(apply, |x: &Field| x.clone(), b, tol, max_iter)
}

/// Compressed sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix { row_ptr, cols, vals }
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn mul(&self, x: &Field) -> Field {
        Field::new(
            (0..self.rows())
                .map(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| self.vals[k] * x.values[self.cols[k]]).sum())
                .collect(),
        )
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.cols[k] == i)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }
}
