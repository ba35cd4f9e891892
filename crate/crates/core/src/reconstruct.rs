//! Recovering the chemoattractant from two consecutive density frames.
//!
//! With `u(t)` and `u(t+1)` known, the forward `u` equation is linear in `v`:
//!
//! ```text
//! -grad u . grad v - u lap v = (u(t+1) - u(t) - f(u) - d_u lap u) / b
//! ```
//!
//! The operator on the left is a discrete non-symmetric elliptic operator
//! with constants in its kernel. It is solved matrix-free with GMRES and the
//! result is mean-centred.

use crate::gmres::{gmres_solve, GmresError, LinearOperator};
use crate::grid::{laplacian, GridError, GridSpec, ScalarField};
use crate::kinetics::{reaction, ModelParams};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DEFAULT_U_MIN: f64 = 1e-3;
pub const DEFAULT_EPS: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Gmres(#[from] GmresError),
    #[error("u = {value} at ({i}, {j}) is below the ellipticity floor {floor}")]
    Ellipticity { i: usize, j: usize, value: f64, floor: f64 },
    #[error("u_min must be positive, got {0}")]
    BadFloor(f64),
    #[error("b must be non-zero")]
    ZeroB,
    #[error("cannot read image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("image {0} has constant luminance")]
    DegenerateImage(PathBuf),
    #[error("need at least two frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame times must be strictly increasing (frame {0})")]
    FrameOrder(usize),
    #[error("frame {index} has value {value} outside [0, 1]")]
    FrameRange { index: usize, value: f64 },
    #[error("frame step must be positive, got {0}")]
    BadStep(f64),
}

/// Right-hand side for frames one time unit apart.
pub fn build_rhs(
    u_t: &ScalarField,
    u_next: &ScalarField,
    p: &ModelParams,
) -> Result<ScalarField, ReconstructError> {
    build_rhs_with_step(u_t, u_next, p, 1.0)
}

/// Like [`build_rhs`] but with the frame difference divided by `dt`, so
/// that frames a fraction of a unit apart can be used.
pub fn build_rhs_with_step(
    u_t: &ScalarField,
    u_next: &ScalarField,
    p: &ModelParams,
    dt: f64,
) -> Result<ScalarField, ReconstructError> {
    if p.b == 0.0 {
        return Err(ReconstructError::ZeroB);
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ReconstructError::BadStep(dt));
    }
    let lap = laplacian(u_t);
    let diff = u_next.zip_map(u_t, |a, b| (a - b) / dt)?;
    let mut out = diff;
    for ((o, &u), &l) in out.values_mut().iter_mut().zip(u_t.values()).zip(lap.values()) {
        *o = (*o - reaction(u, p) - p.d_u * l) / p.b;
    }
    Ok(out)
}

/// Copy of `u` with every value raised to at least `u_min`.
pub fn floor_field(u: &ScalarField, u_min: f64) -> ScalarField {
    u.map(|x| x.max(u_min))
}

/// `x -> -grad u . grad x - u lap x` with Neumann ghosts, applied without
/// assembling a matrix.
#[derive(Debug, Clone)]
pub struct EllipticOperator {
    spec: GridSpec,
    u: Vec<f64>,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl EllipticOperator {
    /// Fails if any value of `u` is below `u_min`.
    pub fn new(u: &ScalarField, u_min: f64) -> Result<Self, ReconstructError> {
        if !(u_min > 0.0) {
            return Err(ReconstructError::BadFloor(u_min));
        }
        if let Some((i, j, value)) = u.first_non_finite() {
            return Err(GridError::NonFinite { i, j, value }.into());
        }
        let nx = u.spec().nx();
        if let Some(k) = u.values().iter().position(|&x| x < u_min) {
            return Err(ReconstructError::Ellipticity {
                i: k / nx,
                j: k % nx,
                value: u.values()[k],
                floor: u_min,
            });
        }
        let (ux, uy) = crate::grid::gradient(u);
        Ok(Self {
            spec: *u.spec(),
            u: u.values().to_vec(),
            ux: ux.into_values(),
            uy: uy.into_values(),
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Row `k` as `(column, coefficient)` pairs: east, west, south, north,
    /// centre. Clamped neighbours may repeat a column.
    fn row(&self, k: usize) -> [(usize, f64); 5] {
        let (nx, ny, h) = (self.spec.nx(), self.spec.ny(), self.spec.h());
        let (i, j) = (k / nx, k % nx);
        let (im, ip) = crate::grid::neighbours(i, ny);
        let (jm, jp) = crate::grid::neighbours(j, nx);
        let (u, gx, gy) = (self.u[k], self.ux[k] * 0.5 / h, self.uy[k] * 0.5 / h);
        let d = u / (h * h);
        [
            (i * nx + jp, -gx - d),
            (i * nx + jm, gx - d),
            (ip * nx + j, -gy - d),
            (im * nx + j, gy - d),
            (k, 4.0 * d),
        ]
    }

    /// `out = A^T y`.
    pub fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, &yk) in y.iter().enumerate() {
            for (m, c) in self.row(k) {
                out[m] += c * yk;
            }
        }
    }

    /// The transpose as an operator in its own right.
    pub fn transpose(&self) -> TransposeOperator<'_> {
        TransposeOperator(self)
    }
}

impl LinearOperator for EllipticOperator {
    fn dim(&self) -> usize {
        self.spec.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.row(k).iter().map(|&(m, c)| c * x[m]).sum();
        }
    }
}

pub struct TransposeOperator<'a>(&'a EllipticOperator);

impl LinearOperator for TransposeOperator<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.0.apply_transpose(x, out)
    }
}

/// Floors `u` and wraps it in an [`EllipticOperator`].
pub fn elliptic_operator(u: &ScalarField, u_min: f64) -> Result<EllipticOperator, ReconstructError> {
    EllipticOperator::new(&floor_field(u, u_min), u_min)
}

/// Left kernel vector `w` of the operator (`A^T w = 0`), scaled to mean 1.
///
/// The discrete operator kills constants but its columns do not sum to zero,
/// so `A x = rhs` is solvable exactly when `w . rhs = 0`. Writing
/// `w = 1 + delta` and solving `A^T delta = -A^T 1` keeps the Krylov iterates
/// orthogonal to the constants, which pins the scale.
pub fn left_kernel(op: &EllipticOperator, tol: f64, max_iter: usize) -> Result<Vec<f64>, ReconstructError> {
    let n = op.dim();
    let ones = vec![1.0; n];
    let mut at1 = vec![0.0; n];
    op.apply_transpose(&ones, &mut at1);
    let rhs: Vec<f64> = at1.iter().map(|x| -x).collect();
    let scale = rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale <= tol {
        return Ok(ones);
    }
    let sol = gmres_solve(&op.transpose(), &rhs, &vec![0.0; n], tol, max_iter)?;
    let w: Vec<f64> = sol.x.iter().map(|d| 1.0 + d).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    Ok(w.into_iter().map(|x| x / mean).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructOptions {
    /// GMRES stopping threshold on `||rhs - A v||_2`.
    pub eps: f64,
    pub u_min: f64,
    pub max_iter: usize,
    /// Time between the two frames.
    pub frame_step: f64,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            u_min: DEFAULT_U_MIN,
            max_iter: 3000,
            frame_step: 1.0,
        }
    }
}

impl ReconstructOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Mean-zero chemoattractant estimate.
    pub v: ScalarField,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Constant removed from the right-hand side to make it solvable.
    pub discarded_constant: f64,
}

pub fn reconstruct_v(
    u_t: &ScalarField,
    u_next: &ScalarField,
    p: &ModelParams,
    eps: f64,
) -> Result<Reconstruction, ReconstructError> {
    reconstruct_v_with(u_t, u_next, p, &ReconstructOptions::with_eps(eps))
}

pub fn reconstruct_v_with(
    u_t: &ScalarField,
    u_next: &ScalarField,
    p: &ModelParams,
    opts: &ReconstructOptions,
) -> Result<Reconstruction, ReconstructError> {
    let rhs = build_rhs_with_step(u_t, u_next, p, opts.frame_step)?;
    solve_elliptic(u_t, &rhs, opts)
}

/// Solves `A v = rhs` for the operator built from `u`, after removing the
/// incompatible constant from `rhs`.
pub fn solve_elliptic(
    u: &ScalarField,
    rhs: &ScalarField,
    opts: &ReconstructOptions,
) -> Result<Reconstruction, ReconstructError> {
    u.spec().check_compatible(rhs.spec())?;
    let op = elliptic_operator(u, opts.u_min)?;
    let n = op.dim();
    let w = left_kernel(&op, 1e-10 * (n as f64).sqrt(), opts.max_iter.max(n.min(5000)))?;
    let b = rhs.values();
    let alpha = w.iter().zip(b).map(|(a, c)| a * c).sum::<f64>() / w.iter().sum::<f64>();
    let projected: Vec<f64> = b.iter().map(|x| x - alpha).collect();
    let sol = gmres_solve(&op, &projected, &vec![0.0; n], opts.eps, opts.max_iter)?;
    let v = ScalarField::from_values(*u.spec(), sol.x.clone())?.mean_centered();
    Ok(Reconstruction {
        v,
        residual: sol.residual(),
        iterations: sol.iterations,
        converged: sol.converged,
        discarded_constant: alpha,
    })
}

/// Relative L2 mismatch between `u_next - u_t` and the forward update
/// `f(u) + d_u lap u + b A v` built from a reconstructed `v`.
pub fn forward_mismatch(
    u_t: &ScalarField,
    u_next: &ScalarField,
    v: &ScalarField,
    p: &ModelParams,
    u_min: f64,
) -> Result<f64, ReconstructError> {
    let op = elliptic_operator(u_t, u_min)?;
    let mut av = vec![0.0; op.dim()];
    op.apply(v.values(), &mut av);
    let lap = laplacian(u_t);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..av.len() {
        let u = u_t.values()[k];
        let target = u_next.values()[k] - u;
        let model = reaction(u, p) + p.d_u * lap.values()[k] + p.b * av[k];
        num += (model - target).powi(2);
        den += target * target;
    }
    Ok((num / den.max(f64::MIN_POSITIVE)).sqrt())
}

/// Pearson correlation of two fields over all grid points.
pub fn pearson(a: &ScalarField, b: &ScalarField) -> Result<f64, ReconstructError> {
    a.spec().check_compatible(b.spec())?;
    let (ma, mb) = (a.mean(), b.mean());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Reads a raster, averages luminance over blocks to the target grid,
/// stretches it to `[0, 1]` and floors it at `u_min`.
pub fn ingest_image(path: &Path, target: GridSpec, u_min: f64) -> Result<ScalarField, ReconstructError> {
    if !(u_min > 0.0 && u_min < 1.0) {
        return Err(ReconstructError::BadFloor(u_min));
    }
    let img = image::open(path)
        .map_err(|e| ReconstructError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_luma32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let lum = img.into_raw();
    let field = box_resample(&lum, w, h, target);
    let (lo, hi) = (field.min(), field.max());
    if !(hi - lo > 1e-12) {
        return Err(ReconstructError::DegenerateImage(path.to_path_buf()));
    }
    Ok(field.map(|x| ((x - lo) / (hi - lo)).max(u_min)))
}

/// Block average of a `w x h` luminance buffer onto `target`.
fn box_resample(lum: &[f32], w: usize, h: usize, target: GridSpec) -> ScalarField {
    let span = |k: usize, n_src: usize, n_dst: usize| {
        let a = k * n_src / n_dst;
        let b = ((k + 1) * n_src / n_dst).max(a + 1).min(n_src);
        (a.min(n_src - 1), b)
    };
    ScalarField::from_fn(target, |i, j| {
        let (r0, r1) = span(i, h, target.ny());
        let (c0, c1) = span(j, w, target.nx());
        let mut s = 0.0;
        for r in r0..r1 {
            for c in c0..c1 {
                s += lum[r * w + c] as f64;
            }
        }
        s / ((r1 - r0) * (c1 - c0)) as f64
    })
}

/// Time-stamped density frames on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<(f64, ScalarField)>,
    spec: GridSpec,
}

impl FrameSequence {
    pub fn new(frames: Vec<(f64, ScalarField)>) -> Result<Self, ReconstructError> {
        let spec = *frames
            .first()
            .ok_or(ReconstructError::TooFewFrames(0))?
            .1
            .spec();
        for (index, (t, f)) in frames.iter().enumerate() {
            spec.check_compatible(f.spec())?;
            if index > 0 && !(*t > frames[index - 1].0) {
                return Err(ReconstructError::FrameOrder(index));
            }
            if let Some(&value) = f.values().iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(ReconstructError::FrameRange { index, value });
            }
        }
        Ok(Self { frames, spec })
    }

    pub fn frames(&self) -> &[(f64, ScalarField)] {
        &self.frames
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    /// Time of the earlier frame.
    pub t: f64,
    pub result: Result<Reconstruction, ReconstructError>,
}

/// One reconstruction per consecutive pair. A failing pair does not stop
/// the others.
pub fn process_sequence(
    seq: &FrameSequence,
    p: &ModelParams,
    opts: &ReconstructOptions,
) -> Result<Vec<PairResult>, ReconstructError> {
    if seq.len() < 2 {
        return Err(ReconstructError::TooFewFrames(seq.len()));
    }
    Ok(seq
        .frames
        .windows(2)
        .map(|w| PairResult {
            t: w[0].0,
            result: reconstruct_v_with(&w[0].1, &w[1].1, p, opts),
        })
        .collect())
}
