//! Full (unrestarted) GMRES for matrix-free operators.
//!
//! The Krylov basis is built by Arnoldi with modified Gram-Schmidt and one
//! conditional re-orthogonalization pass. The Hessenberg matrix is reduced to
//! upper-triangular form column by column with Givens rotations, so the
//! residual norm is available after every iteration without forming the
//! iterate. The small triangular system is solved once, after the loop.

use thiserror::Error;

/// Relative size of `||A v_k - sum h_jk v_j||` below which the Krylov space
/// is treated as invariant.
pub const BREAKDOWN_TOL: f64 = 1e-14;
/// Inner products above this (relative to the vector norm) after the first
/// Gram-Schmidt sweep trigger a second sweep.
pub const REORTHO_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmresError {
    #[error("dimension mismatch: operator is {op}, vector is {vec}")]
    Dimension { op: usize, vec: usize },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("max_iter must be at least 1")]
    BadMaxIter,
    #[error("Krylov space became invariant at iteration {iteration} with residual {residual:e} > eps: operator is singular on it")]
    Singular { iteration: usize, residual: f64 },
    #[error("zero pivot at row {0} of the triangular factor")]
    ZeroPivot(usize),
    #[error("non-finite value encountered at iteration {0}")]
    NonFinite(usize),
}

/// A linear map on `R^n`, known only through its action.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply(x, out)
    }
}

/// Wraps a closure as an operator.
pub struct FnOperator<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnOperator<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// Row-major dense matrix, mostly for tests and self-checks.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    n: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        Self {
            n,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Solves `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve_dense(&self, b: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let piv = (col..n).max_by(|&p, &q| {
                a[p * n + col].abs().total_cmp(&a[q * n + col].abs())
            })?;
            if a[piv * n + col].abs() < 1e-300 {
                return None;
            }
            if piv != col {
                for k in 0..n {
                    a.swap(piv * n + k, col * n + k);
                }
                x.swap(piv, col);
            }
            for r in col + 1..n {
                let m = a[r * n + col] / a[col * n + col];
                if m != 0.0 {
                    for k in col..n {
                        a[r * n + k] -= m * a[col * n + k];
                    }
                    x[r] -= m * x[col];
                }
            }
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
            x[r] = (x[r] - s) / a[r * n + r];
        }
        Some(x)
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.data[i * self.n..(i + 1) * self.n]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Plane rotation `[[c, -s], [s, c]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Givens {
    pub c: f64,
    pub s: f64,
}

impl Givens {
    /// Rotation taking `(a, b)` to `(sqrt(a^2 + b^2), 0)`.
    pub fn zeroing(a: f64, b: f64) -> Self {
        if b == 0.0 {
            return Self { c: 1.0, s: 0.0 };
        }
        let r = a.hypot(b);
        Self { c: a / r, s: -b / r }
    }

    #[inline]
    pub fn apply(&self, a: f64, b: f64) -> (f64, f64) {
        (self.c * a - self.s * b, self.s * a + self.c * b)
    }
}

/// State of one GMRES solve.
#[derive(Debug, Clone)]
pub struct GmresWorkspace {
    n: usize,
    /// Orthonormal Krylov vectors `V_1 .. V_{k+1}`.
    pub basis: Vec<Vec<f64>>,
    /// Column `k` holds `h_{1,k} .. h_{k+1,k}`; after [`apply_new_givens`]
    /// the column is rotated into the triangular factor.
    ///
    /// [`apply_new_givens`]: GmresWorkspace::apply_new_givens
    pub hessenberg: Vec<Vec<f64>>,
    pub givens: Vec<Givens>,
    /// Rotated right-hand side `r_0 Q e_1`.
    pub g: Vec<f64>,
    pub residual_history: Vec<f64>,
    /// Set once the Arnoldi vector vanished.
    pub breakdown: bool,
    pending_column: bool,
}

impl GmresWorkspace {
    /// Initializes from the residual `r0 = b - A x0`.
    pub fn new(r0: &[f64]) -> Self {
        let beta = norm(r0);
        let mut basis = Vec::new();
        if beta > 0.0 {
            basis.push(r0.iter().map(|x| x / beta).collect());
        }
        Self {
            n: r0.len(),
            basis,
            hessenberg: Vec::new(),
            givens: Vec::new(),
            g: vec![beta],
            residual_history: vec![beta],
            breakdown: false,
            pending_column: false,
        }
    }

    /// Number of completed Arnoldi steps.
    pub fn iterations(&self) -> usize {
        self.hessenberg.len()
    }

    pub fn residual(&self) -> f64 {
        *self.residual_history.last().expect("history starts with r0")
    }

    /// Extends the basis by one vector and appends the new Hessenberg column.
    pub fn arnoldi_step<A: LinearOperator + ?Sized>(&mut self, op: &A) -> Result<(), GmresError> {
        let k = self.hessenberg.len();
        let last = self.basis.get(k).expect("arnoldi_step needs a current basis vector");
        let mut w = vec![0.0; self.n];
        op.apply(last, &mut w);
        let scale = norm(&w);
        let mut col = vec![0.0; k + 2];
        for (j, vj) in self.basis.iter().enumerate() {
            let hj = dot(&w, vj);
            col[j] = hj;
            w.iter_mut().zip(vj).for_each(|(wi, vi)| *wi -= hj * vi);
        }
        let wn = norm(&w);
        if self
            .basis
            .iter()
            .any(|vj| dot(&w, vj).abs() > REORTHO_TOL * wn.max(f64::MIN_POSITIVE))
        {
            for (j, vj) in self.basis.iter().enumerate() {
                let hj = dot(&w, vj);
                col[j] += hj;
                w.iter_mut().zip(vj).for_each(|(wi, vi)| *wi -= hj * vi);
            }
        }
        let wn = norm(&w);
        if !wn.is_finite() || col.iter().any(|x| !x.is_finite()) {
            return Err(GmresError::NonFinite(k + 1));
        }
        col[k + 1] = wn;
        if wn <= BREAKDOWN_TOL * scale.max(f64::MIN_POSITIVE) {
            self.breakdown = true;
            col[k + 1] = 0.0;
        } else {
            self.basis.push(w.into_iter().map(|x| x / wn).collect());
        }
        self.hessenberg.push(col);
        self.pending_column = true;
        Ok(())
    }

    /// Rotates the newest column by the stored rotations, adds the rotation
    /// that annihilates its subdiagonal entry, updates `g` and returns the
    /// new residual norm `|g_{k+1}|`.
    pub fn apply_new_givens(&mut self) -> f64 {
        assert!(self.pending_column, "no fresh Hessenberg column");
        let k = self.hessenberg.len() - 1;
        let col = &mut self.hessenberg[k];
        for (i, rot) in self.givens.iter().enumerate() {
            let (a, b) = rot.apply(col[i], col[i + 1]);
            col[i] = a;
            col[i + 1] = b;
        }
        let rot = Givens::zeroing(col[k], col[k + 1]);
        let (a, _) = rot.apply(col[k], col[k + 1]);
        col[k] = a;
        col[k + 1] = 0.0;
        self.givens.push(rot);
        let (gk, gk1) = rot.apply(self.g[k], 0.0);
        self.g[k] = gk;
        self.g.push(gk1);
        // A zero column (singular on the Krylov space) cannot reduce g_k.
        let r = if a == 0.0 { gk.abs() } else { gk1.abs() };
        self.residual_history.push(r);
        self.pending_column = false;
        r
    }

    /// Back-substitution for `R y = g[..k]`.
    pub fn solve_triangular(&self) -> Result<Vec<f64>, GmresError> {
        let k = self.hessenberg.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = self.g[i];
            for j in i + 1..k {
                s -= self.hessenberg[j][i] * y[j];
            }
            let piv = self.hessenberg[i][i];
            if piv == 0.0 || !piv.is_finite() {
                return Err(GmresError::ZeroPivot(i));
            }
            y[i] = s / piv;
        }
        Ok(y)
    }

    /// `x0 + V y` for the current triangular solve.
    pub fn solution(&self, x0: &[f64]) -> Result<Vec<f64>, GmresError> {
        let y = self.solve_triangular()?;
        let mut x = x0.to_vec();
        for (yi, vi) in y.iter().zip(&self.basis) {
            x.iter_mut().zip(vi).for_each(|(xj, vj)| *xj += yi * vj);
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresSolution {
    pub x: Vec<f64>,
    /// `r_0, r_1, ..., r_k` as tracked through the rotations.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl GmresSolution {
    pub fn residual(&self) -> f64 {
        *self.residual_history.last().expect("non-empty history")
    }
}

/// Minimizes `||b - A x||_2` over `x0 + K_k(A, r0)` until the tracked
/// residual drops to `eps` or `max_iter` steps have been taken. Hitting the
/// iteration cap is not an error: the best iterate comes back with
/// `converged = false`.
pub fn gmres_solve<A: LinearOperator + ?Sized>(
    op: &A,
    b: &[f64],
    x0: &[f64],
    eps: f64,
    max_iter: usize,
) -> Result<GmresSolution, GmresError> {
    let n = op.dim();
    for len in [b.len(), x0.len()] {
        if len != n {
            return Err(GmresError::Dimension { op: n, vec: len });
        }
    }
    if !(eps > 0.0) {
        return Err(GmresError::BadTolerance(eps));
    }
    if max_iter == 0 {
        return Err(GmresError::BadMaxIter);
    }
    let mut ax = vec![0.0; n];
    op.apply(x0, &mut ax);
    let r0: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut ws = GmresWorkspace::new(&r0);
    if !ws.residual().is_finite() {
        return Err(GmresError::NonFinite(0));
    }
    if ws.residual() < eps {
        return Ok(GmresSolution {
            x: x0.to_vec(),
            residual_history: ws.residual_history,
            converged: true,
            iterations: 0,
        });
    }
    while ws.residual() > eps && ws.iterations() < max_iter {
        ws.arnoldi_step(op)?;
        ws.apply_new_givens();
        if ws.breakdown {
            break;
        }
    }
    let converged = ws.residual() <= eps;
    if ws.breakdown && !converged {
        return Err(GmresError::Singular {
            iteration: ws.iterations(),
            residual: ws.residual(),
        });
    }
    let x = ws.solution(x0)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GmresError::NonFinite(ws.iterations()));
    }
    Ok(GmresSolution {
        x,
        iterations: ws.iterations(),
        residual_history: ws.residual_history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, rng: &mut ChaCha8Rng, diag_boost: f64) -> DenseOperator {
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] += diag_boost;
        }
        DenseOperator::from_rows(rows)
    }

    fn explicit_residual(op: &DenseOperator, b: &[f64], x: &[f64]) -> f64 {
        let mut ax = vec![0.0; b.len()];
        op.apply(x, &mut ax);
        norm(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>())
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let b = vec![1.0, -2.0, 3.5, 0.25];
        let sol = gmres_solve(&DenseOperator::identity(4), &b, &[0.0; 4], 1e-12, 10).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.converged);
        for (x, y) in sol.x.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_initial_guess_returns_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(8, &mut rng, 5.0);
        let x0: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let mut b = vec![0.0; 8];
        a.apply(&x0, &mut b);
        let sol = gmres_solve(&a, &b, &x0, 1e-10, 50).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.x, x0);
        assert_eq!(sol.residual_history.len(), 1);
    }

    #[test]
    fn diagonally_dominant_system_matches_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(50, &mut rng, 25.0);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sol = gmres_solve(&a, &b, &[0.0; 50], 1e-10, 50).unwrap();
        let exact = a.solve_dense(&b).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 50);
        for (x, y) in sol.x.iter().zip(&exact) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn arnoldi_basis_is_orthonormal_and_satisfies_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(6, &mut rng, 0.0);
        let r0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut ws = GmresWorkspace::new(&r0);
        assert!((norm(&ws.basis[0]) - 1.0).abs() < 1e-15);
        for _ in 0..5 {
            ws.arnoldi_step(&a).unwrap();
        }
        let k = 5;
        for i in 0..=k {
            for j in 0..=k {
                let d = dot(&ws.basis[i], &ws.basis[j]);
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((d - e).abs() < 1e-8);
            }
        }
        // H_k == V_{k+1}^T A V_k, entry by entry
        for col in 0..k {
            let mut av = vec![0.0; 6];
            a.apply(&ws.basis[col], &mut av);
            for row in 0..=k {
                let expected = dot(&ws.basis[row], &av);
                let stored = if row <= col + 1 { ws.hessenberg[col][row] } else { 0.0 };
                assert!((stored - expected).abs() < 1e-8, "({row},{col})");
            }
        }
    }

    #[test]
    fn givens_examples() {
        let g = Givens::zeroing(3.0, 4.0);
        let (a, b) = g.apply(3.0, 4.0);
        assert!((a - 5.0).abs() < 1e-15 && b.abs() < 1e-15);
        assert_eq!(Givens::zeroing(2.0, 0.0), Givens { c: 1.0, s: 0.0 });
    }

    #[test]
    fn triangular_solve_examples() {
        let mut ws = GmresWorkspace::new(&[5.0, 0.0]);
        ws.hessenberg = vec![vec![2.0, 0.0], vec![1.0, 3.0, 0.0]];
        ws.g = vec![5.0, 6.0, 0.0];
        assert_eq!(ws.solve_triangular().unwrap(), vec![1.5, 2.0]);

        ws.hessenberg = vec![vec![1.0, 0.0], vec![0.0, 1.0, 0.0]];
        ws.g = vec![5.0, 0.0, 0.0];
        assert_eq!(ws.solve_triangular().unwrap(), vec![5.0, 0.0]);

        ws.hessenberg = vec![vec![0.0, 0.0]];
        ws.g = vec![1.0, 0.0];
        assert_eq!(ws.solve_triangular(), Err(GmresError::ZeroPivot(0)));
    }

    #[test]
    fn implicit_residual_tracks_explicit_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_matrix(20, &mut rng, 2.0);
        let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x0 = vec![0.0; 20];
        let mut ws = GmresWorkspace::new(&b);
        for _ in 0..20 {
            ws.arnoldi_step(&a).unwrap();
            let implicit = ws.apply_new_givens();
            let x = ws.solution(&x0).unwrap();
            let explicit = explicit_residual(&a, &b, &x);
            let scale = norm(&b);
            assert!((implicit - explicit).abs() <= 1e-8 * scale.max(explicit), "{implicit} vs {explicit}");
            let r = ws.solve_triangular().unwrap();
            let k = r.len();
            // R y - g == 0
            for i in 0..k {
                let lhs: f64 = (i..k).map(|j| ws.hessenberg[j][i] * r[j]).sum();
                assert!((lhs - ws.g[i]).abs() < 1e-10);
            }
            if ws.breakdown {
                break;
            }
        }
    }

    #[test]
    fn singular_operator_is_reported() {
        // diag(1, 0): b = (0, 1) is outside the range, Krylov space is {e2 -> 0}.
        let a = DenseOperator::from_rows(vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        let err = gmres_solve(&a, &[0.0, 1.0], &[0.0, 0.0], 1e-10, 10).unwrap_err();
        assert!(matches!(err, GmresError::Singular { .. }));
    }

    #[test]
    fn consistent_singular_system_uses_happy_breakdown() {
        let a = DenseOperator::from_rows(vec![vec![2.0, 0.0], vec![0.0, 0.0]]);
        let sol = gmres_solve(&a, &[4.0, 0.0], &[0.0, 0.0], 1e-12, 10).unwrap();
        assert!(sol.converged);
        assert!((sol.x[0] - 2.0).abs() < 1e-14 && sol.x[1] == 0.0);
    }

    #[test]
    fn iteration_cap_returns_best_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(30, &mut rng, 0.5);
        let b: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sol = gmres_solve(&a, &b, &[0.0; 30], 1e-12, 3).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
        assert!(sol.residual() < sol.residual_history[0]);
    }

    #[test]
    fn argument_validation() {
        let a = DenseOperator::identity(3);
        assert!(matches!(gmres_solve(&a, &[1.0; 2], &[0.0; 3], 1e-6, 5), Err(GmresError::Dimension { .. })));
        assert!(matches!(gmres_solve(&a, &[1.0; 3], &[0.0; 3], 0.0, 5), Err(GmresError::BadTolerance(_))));
        assert!(matches!(gmres_solve(&a, &[1.0; 3], &[0.0; 3], 1e-6, 0), Err(GmresError::BadMaxIter)));
    }

    #[test]
    fn nan_in_operator_is_a_numerical_fault() {
        let op = FnOperator::new(3, |_x: &[f64], out: &mut [f64]| out.fill(f64::NAN));
        let err = gmres_solve(&op, &[1.0, 0.0, 0.0], &[0.0; 3], 1e-6, 5).unwrap_err();
        assert!(matches!(err, GmresError::NonFinite(_)));
    }

    #[test]
    fn closure_operator_is_linear() {
        let op = FnOperator::new(4, |x: &[f64], out: &mut [f64]| {
            for i in 0..4 {
                out[i] = 2.0 * x[i] - x[(i + 1) % 4];
            }
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (al, be) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| al * p + be * q).collect();
            let (mut ax, mut ay, mut ac) = (vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]);
            op.apply(&x, &mut ax);
            op.apply(&y, &mut ay);
            op.apply(&combo, &mut ac);
            for i in 0..4 {
                assert!((ac[i] - (al * ax[i] + be * ay[i])).abs() < 1e-10);
            }
        }
    }
}
