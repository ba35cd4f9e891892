//! Uniform 2D grids, scalar fields and the finite-difference operators shared
//! by the forward model and the inversion.
//!
//! Storage is row-major: index `(i, j)` is row `i` (the y axis) and column `j`
//! (the x axis), flattened as `i * nx + j`.
//!
//! Zero-flux boundaries are imposed with reflected ghost cells: the ghost
//! neighbour just outside the domain takes the value of the boundary cell
//! itself (`f[-1, j] := f[0, j]`, `f[ny, j] := f[ny - 1, j]`). The reflection
//! is taken about the cell face, which makes the discrete Laplacian exactly
//! conservative under a plain grid sum.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid must be at least 3x3, got {nx}x{ny}")]
    TooSmall { nx: usize, ny: usize },
    #[error("space step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("expected {expected} values for the grid, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value {value} at ({i}, {j})")]
    NonFinite { i: usize, j: usize, value: f64 },
    #[error("grid mismatch: {left:?} vs {right:?}")]
    SpecMismatch { left: GridSpec, right: GridSpec },
}

/// Dimensions and spacing of a uniform rectangular grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    h: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, h: f64) -> Result<Self, GridError> {
        if nx < 3 || ny < 3 {
            return Err(GridError::TooSmall { nx, ny });
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(GridError::BadStep(h));
        }
        Ok(Self { nx, ny, h })
    }

    /// Square grid with unit spacing.
    pub fn square(n: usize) -> Result<Self, GridError> {
        Self::new(n, n, 1.0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nx + j
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.ny && j < self.nx
    }

    pub fn check_compatible(&self, other: &GridSpec) -> Result<(), GridError> {
        if self == other {
            Ok(())
        } else {
            Err(GridError::SpecMismatch {
                left: *self,
                right: *other,
            })
        }
    }
}

/// A real-valued field sampled on every node of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    /// Wraps `values`, rejecting wrong lengths and non-finite entries.
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != spec.len() {
            return Err(GridError::LengthMismatch {
                expected: spec.len(),
                got: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite {
                i: k / spec.nx,
                j: k % spec.nx,
                value: values[k],
            });
        }
        Ok(Self { spec, values })
    }

    /// Caller guarantees the length; finiteness is the caller's concern.
    pub(crate) fn from_raw(spec: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        Self { spec, values }
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        Self::from_raw(spec, vec![value; spec.len()])
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.len());
        for i in 0..spec.ny {
            for j in 0..spec.nx {
                values.push(f(i, j));
            }
        }
        Self::from_raw(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.spec.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.spec.index(i, j);
        self.values[k] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.spec, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(
        &self,
        other: &ScalarField,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, GridError> {
        self.spec.check_compatible(&other.spec)?;
        Ok(Self::from_raw(
            self.spec,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn first_non_finite(&self) -> Option<(usize, usize, f64)> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|k| (k / self.spec.nx, k % self.spec.nx, self.values[k]))
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        let var = self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
            / self.values.len() as f64;
        var.sqrt()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Copy with the grid mean removed.
    pub fn mean_centered(&self) -> Self {
        let m = self.mean();
        self.map(|v| v - m)
    }
}

/// Neighbour indices `(lo, hi)` along one axis with face-reflected ghosts.
#[inline]
pub(crate) fn neighbours(k: usize, n: usize) -> (usize, usize) {
    (k.saturating_sub(1), if k + 1 < n { k + 1 } else { k })
}

/// Five-point Laplacian on a raw row-major buffer.
pub(crate) fn laplacian_into(spec: &GridSpec, f: &[f64], out: &mut [f64]) {
    let (nx, ny) = (spec.nx, spec.ny);
    let inv_h2 = 1.0 / (spec.h * spec.h);
    for i in 0..ny {
        let (im, ip) = neighbours(i, ny);
        for j in 0..nx {
            let (jm, jp) = neighbours(j, nx);
            let c = f[i * nx + j];
            out[i * nx + j] =
                (f[ip * nx + j] + f[im * nx + j] + f[i * nx + jp] + f[i * nx + jm] - 4.0 * c)
                    * inv_h2;
        }
    }
}

/// Centered-difference gradient `(d/dx, d/dy)` on a raw buffer.
pub(crate) fn gradient_into(spec: &GridSpec, f: &[f64], gx: &mut [f64], gy: &mut [f64]) {
    let (nx, ny) = (spec.nx, spec.ny);
    let inv_2h = 0.5 / spec.h;
    for i in 0..ny {
        let (im, ip) = neighbours(i, ny);
        for j in 0..nx {
            let (jm, jp) = neighbours(j, nx);
            gx[i * nx + j] = (f[i * nx + jp] - f[i * nx + jm]) * inv_2h;
            gy[i * nx + j] = (f[ip * nx + j] - f[im * nx + j]) * inv_2h;
        }
    }
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    let mut out = vec![0.0; f.spec.len()];
    laplacian_into(&f.spec, &f.values, &mut out);
    ScalarField::from_raw(f.spec, out)
}

/// Returns `(df/dx, df/dy)`.
pub fn gradient(f: &ScalarField) -> (ScalarField, ScalarField) {
    let n = f.spec.len();
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    gradient_into(&f.spec, &f.values, &mut gx, &mut gy);
    (
        ScalarField::from_raw(f.spec, gx),
        ScalarField::from_raw(f.spec, gy),
    )
}

/// Pointwise `grad u . grad v`.
pub fn dot_gradients(u: &ScalarField, v: &ScalarField) -> Result<ScalarField, GridError> {
    u.spec.check_compatible(&v.spec)?;
    let (ux, uy) = gradient(u);
    let (vx, vy) = gradient(v);
    let values = (0..u.spec.len())
        .map(|k| ux.values[k] * vx.values[k] + uy.values[k] * vy.values[k])
        .collect();
    Ok(ScalarField::from_raw(u.spec, values))
}

/// Chemotactic transport `-b (grad u . grad v + u lap v)`, the expanded form of
/// `-b div(u grad v)`.
pub fn chemotaxis_term(u: &ScalarField, v: &ScalarField, b: f64) -> Result<ScalarField, GridError> {
    let dot = dot_gradients(u, v)?;
    let lap_v = laplacian(v);
    let values = (0..u.spec.len())
        .map(|k| -b * (dot.values[k] + u.values[k] * lap_v.values[k]))
        .collect();
    Ok(ScalarField::from_raw(u.spec, values))
}

pub mod dense {
    //! Brute-force dense matrices for the stencils, assembled entry by entry
    //! from the ghost-cell rule. Used as an oracle by tests and the self-test.
    use super::GridSpec;

    pub type Dense = Vec<Vec<f64>>;

    /// Maps a possibly out-of-range index to the cell it reflects onto.
    fn reflect(k: isize, n: usize) -> usize {
        if k < 0 {
            0
        } else if k as usize >= n {
            n - 1
        } else {
            k as usize
        }
    }

    pub fn laplacian_matrix(spec: &GridSpec) -> Dense {
        let (nx, ny, h) = (spec.nx(), spec.ny(), spec.h());
        let n = nx * ny;
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..ny {
            for j in 0..nx {
                let row = i * nx + j;
                for (di, dj) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let ii = reflect(i as isize + di, ny);
                    let jj = reflect(j as isize + dj, nx);
                    m[row][ii * nx + jj] += 1.0 / (h * h);
                }
                m[row][row] -= 4.0 / (h * h);
            }
        }
        m
    }

    /// `(Dx, Dy)` centered-difference matrices.
    pub fn gradient_matrices(spec: &GridSpec) -> (Dense, Dense) {
        let (nx, ny, h) = (spec.nx(), spec.ny(), spec.h());
        let n = nx * ny;
        let mut dx = vec![vec![0.0; n]; n];
        let mut dy = vec![vec![0.0; n]; n];
        for i in 0..ny {
            for j in 0..nx {
                let row = i * nx + j;
                let jp = reflect(j as isize + 1, nx);
                let jm = reflect(j as isize - 1, nx);
                dx[row][i * nx + jp] += 0.5 / h;
                dx[row][i * nx + jm] -= 0.5 / h;
                let ip = reflect(i as isize + 1, ny);
                let im = reflect(i as isize - 1, ny);
                dy[row][ip * nx + j] += 0.5 / h;
                dy[row][im * nx + j] -= 0.5 / h;
            }
        }
        (dx, dy)
    }

    pub fn matvec(m: &Dense, x: &[f64]) -> Vec<f64> {
        m.iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}
