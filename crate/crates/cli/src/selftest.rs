//! Oracle-equivalence checks runnable from the installed binary.
//!
//! The stencils under test are injectable so a deliberately broken kernel
//! can be shown to trip the named check.

use bmec_ks::gmres::{gmres_solve, DenseOperator, LinearOperator};
use bmec_ks::grid::{self, dense, GridSpec, ScalarField};
use bmec_ks::reconstruct::{elliptic_operator, solve_elliptic, ReconstructOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt::Write as _;

pub type LaplacianFn = fn(&ScalarField) -> ScalarField;
pub type GradientFn = fn(&ScalarField) -> (ScalarField, ScalarField);

#[derive(Debug, Clone, Copy)]
pub struct SelfTestHooks {
    pub laplacian: LaplacianFn,
    pub gradient: GradientFn,
}

impl Default for SelfTestHooks {
    fn default() -> Self {
        Self {
            laplacian: grid::laplacian,
            gradient: grid::gradient,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, err: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: err <= tol,
        detail: format!("max error {err:.3e} (tolerance {tol:.0e})"),
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_field(spec: GridSpec, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ScalarField {
    ScalarField::from_fn(spec, |_, _| rng.gen_range(lo..hi))
}

const GRIDS: [(usize, usize); 4] = [(3, 3), (3, 5), (5, 4), (8, 8)];

fn stencil_checks(hooks: &SelfTestHooks, rng: &mut ChaCha8Rng) -> Vec<CheckResult> {
    let (mut lap_err, mut grad_err, mut const_err) = (0.0f64, 0.0f64, 0.0f64);
    for (nx, ny) in GRIDS {
        let spec = GridSpec::new(nx, ny, 0.7).expect("valid grid");
        let lap_m = dense::laplacian_matrix(&spec);
        let (dx, dy) = dense::gradient_matrices(&spec);
        for _ in 0..5 {
            let f = random_field(spec, rng, -1.0, 1.0);
            let lap = (hooks.laplacian)(&f);
            lap_err = lap_err.max(max_diff(lap.values(), &dense::matvec(&lap_m, f.values())));
            let (gx, gy) = (hooks.gradient)(&f);
            grad_err = grad_err
                .max(max_diff(gx.values(), &dense::matvec(&dx, f.values())))
                .max(max_diff(gy.values(), &dense::matvec(&dy, f.values())));
        }
        let c = ScalarField::constant(spec, 3.7);
        const_err = const_err.max((hooks.laplacian)(&c).values().iter().fold(0.0, |m, x| m.max(x.abs())));
        let (gx, gy) = (hooks.gradient)(&c);
        const_err = const_err.max(gx.values().iter().chain(gy.values()).fold(0.0, |m, x| m.max(x.abs())));
    }
    vec![
        check("laplacian matches dense assembly", lap_err, 1e-10),
        check("gradient matches dense assembly", grad_err, 1e-10),
        check("stencils annihilate constants", const_err, 1e-10),
    ]
}

fn gmres_checks(rng: &mut ChaCha8Rng) -> Vec<CheckResult> {
    let (mut sol_err, mut monotone, mut gap) = (0.0f64, true, 0.0f64);
    for _ in 0..20 {
        let n = rng.gen_range(2..=30);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| rng.gen_range(-1.0..1.0) + if i == j { n as f64 * 0.5 } else { 0.0 })
                    .collect()
            })
            .collect();
        let a = DenseOperator::from_rows(rows);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let Some(oracle) = a.solve_dense(&b) else {
            sol_err = f64::INFINITY;
            continue;
        };
        let sol = match gmres_solve(&a, &b, &vec![0.0; n], 1e-12, n) {
            Ok(s) => s,
            Err(_) => {
                sol_err = f64::INFINITY;
                continue;
            }
        };
        let scale = oracle.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        sol_err = sol_err.max(max_diff(&sol.x, &oracle) / scale);
        monotone &= sol.residual_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        let mut ax = vec![0.0; n];
        a.apply(&sol.x, &mut ax);
        let explicit = ax.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let bn = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        gap = gap.max((explicit - sol.residual()).abs() / bn);
    }
    let identity = gmres_solve(&DenseOperator::identity(10), &[1.0; 10], &[0.0; 10], 1e-12, 10)
        .map(|s| s.iterations)
        .unwrap_or(usize::MAX);
    vec![
        check("gmres matches dense elimination", sol_err, 1e-8),
        CheckResult {
            name: "gmres residual history is non-increasing",
            passed: monotone,
            detail: if monotone { "ok".into() } else { "increase found".into() },
        },
        check("gmres implicit residual tracks explicit residual", gap, 1e-6),
        CheckResult {
            name: "gmres solves the identity in one iteration",
            passed: identity == 1,
            detail: format!("{identity} iteration(s)"),
        },
    ]
}

/// `A x = -(Dx u) (Dx x) - (Dy u) (Dy x) - u (L x)` from dense matrices.
fn dense_elliptic(u: &ScalarField, x: &[f64]) -> Vec<f64> {
    let spec = u.spec();
    let lap_m = dense::laplacian_matrix(spec);
    let (dx, dy) = dense::gradient_matrices(spec);
    let (ux, uy) = (dense::matvec(&dx, u.values()), dense::matvec(&dy, u.values()));
    let (xx, xy, lx) = (dense::matvec(&dx, x), dense::matvec(&dy, x), dense::matvec(&lap_m, x));
    (0..x.len())
        .map(|k| -ux[k] * xx[k] - uy[k] * xy[k] - u.values()[k] * lx[k])
        .collect()
}

fn elliptic_checks(rng: &mut ChaCha8Rng) -> Vec<CheckResult> {
    let (mut err, mut const_err) = (0.0f64, 0.0f64);
    for (nx, ny) in GRIDS {
        let spec = GridSpec::new(nx, ny, 1.0).expect("valid grid");
        for _ in 0..5 {
            let u = random_field(spec, rng, 0.1, 1.0);
            let x = random_field(spec, rng, -1.0, 1.0);
            let op = elliptic_operator(&u, 1e-3).expect("u above floor");
            let mut out = vec![0.0; spec.len()];
            op.apply(x.values(), &mut out);
            err = err.max(max_diff(&out, &dense_elliptic(&u, x.values())));
            op.apply(&vec![2.5; spec.len()], &mut out);
            const_err = const_err.max(out.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    vec![
        check("elliptic operator matches dense assembly", err, 1e-10),
        check("elliptic operator annihilates constants", const_err, 1e-10),
    ]
}

/// Builds `rhs = A v*` for smooth `u`, `v*` and checks the solver recovers
/// `v*` up to its mean.
fn manufactured_check() -> CheckResult {
    let n = 24;
    let spec = GridSpec::square(n).expect("valid grid");
    let k = 2.0 * PI / n as f64;
    let u = ScalarField::from_fn(spec, |i, j| 0.6 + 0.3 * (k * i as f64).cos() * (k * j as f64).sin());
    let v_star = ScalarField::from_fn(spec, |i, j| (k * i as f64).sin() + 0.5 * (k * j as f64).cos());
    let op = elliptic_operator(&u, 1e-3).expect("u above floor");
    let mut rhs = vec![0.0; spec.len()];
    op.apply(v_star.values(), &mut rhs);
    let rhs = ScalarField::from_values(spec, rhs).expect("finite");
    let opts = ReconstructOptions::with_eps(1e-10);
    match solve_elliptic(&u, &rhs, &opts) {
        Ok(rec) => {
            let target = v_star.mean_centered();
            let diff = rec.v.zip_map(&target, |a, b| a - b).expect("same grid");
            let rel = diff.norm_l2() / target.norm_l2();
            let mut c = check("manufactured elliptic solution is recovered", rel, 1e-6);
            c.detail = format!("relative L2 error {rel:.3e} after {} iterations", rec.iterations);
            c
        }
        Err(e) => CheckResult {
            name: "manufactured elliptic solution is recovered",
            passed: false,
            detail: e.to_string(),
        },
    }
}

pub fn run_selftest(hooks: &SelfTestHooks) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut out = stencil_checks(hooks, &mut rng);
    out.extend(gmres_checks(&mut rng));
    out.extend(elliptic_checks(&mut rng));
    out.push(manufactured_check());
    out
}

pub fn report(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{tag} {}: {}", r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(s, "{} checks, {} failed", results.len(), failed);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flipped_laplacian(f: &ScalarField) -> ScalarField {
        grid::laplacian(f).map(|x| -x)
    }

    #[test]
    fn default_kernels_pass() {
        let results = run_selftest(&SelfTestHooks::default());
        assert!(results.iter().all(|r| r.passed), "{}", report(&results));
    }

    #[test]
    fn sign_bug_names_the_invariant() {
        let hooks = SelfTestHooks {
            laplacian: flipped_laplacian,
            ..SelfTestHooks::default()
        };
        let results = run_selftest(&hooks);
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
        assert_eq!(failed, vec!["laplacian matches dense assembly"]);
    }
}
