//! Two-node analogue of the chemotaxis system: four coupled ODEs
//!
//! ```text
//! u1' = f(u1) - b u1 (v2 - v1) + d_u (u2 - u1)
//! v1' = c u1 - e v1 + d_v (v2 - v1)
//! u2' = f(u2) - b u2 (v1 - v2) + d_u (u1 - u2)
//! v2' = c u2 - e v2 + d_v (v1 - v2)
//! ```
//!
//! Stationary points are found by eliminating the `v` variables, which leaves
//! `u2 = phi(u1)` and `u1 = phi(u2)`, i.e. fixed points of `phi o phi`.

use crate::kinetics::{reaction, reaction_derivative, ModelParams};
use nalgebra::Matrix4;
use std::fmt;
use thiserror::Error;

/// Distance from the pole of `phi` that sampling keeps clear of.
pub const POLE_EXCLUSION: f64 = 1e-6;
/// Largest acceptable `|rhs|` at a reported stationary point.
pub const STATIONARY_RESIDUAL: f64 = 1e-8;
/// Real parts closer to zero than this are not classified.
pub const MARGINAL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReducedError {
    #[error("alpha coefficients need d_v > 0 and e > 0 (d_v = {d_v}, e = {e})")]
    AlphaUndefined { d_v: f64, e: f64 },
    #[error("phi has a pole at u = {pole} (evaluated at {u})")]
    Pole { u: f64, pole: f64 },
    #[error("search needs lo < hi and at least 1000 samples")]
    BadSearch,
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
    #[error("trajectory blew up at t = {0}")]
    BlowUp(f64),
    #[error("U2* is not unstable at b = {0}")]
    MiddleNotUnstable(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReducedState {
    pub u1: f64,
    pub v1: f64,
    pub u2: f64,
    pub v2: f64,
}

impl ReducedState {
    pub fn new(u1: f64, v1: f64, u2: f64, v2: f64) -> Self {
        Self { u1, v1, u2, v2 }
    }

    pub fn symmetric(u: f64, v: f64) -> Self {
        Self::new(u, v, u, v)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.u1, self.v1, self.u2, self.v2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Exchanges the two nodes.
    pub fn swapped(self) -> Self {
        Self::new(self.u2, self.v2, self.u1, self.v1)
    }

    pub fn distance(self, other: Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn axpy(self, w: f64, k: Self) -> Self {
        Self::new(
            self.u1 + w * k.u1,
            self.v1 + w * k.v1,
            self.u2 + w * k.u2,
            self.v2 + w * k.v2,
        )
    }

    fn norm(self) -> f64 {
        self.distance(Self::default())
    }
}

pub fn reduced_rhs(s: ReducedState, p: &ModelParams) -> ReducedState {
    ReducedState {
        u1: reaction(s.u1, p) - p.b * s.u1 * (s.v2 - s.v1) + p.d_u * (s.u2 - s.u1),
        v1: p.c * s.u1 - p.e * s.v1 + p.d_v * (s.v2 - s.v1),
        u2: reaction(s.u2, p) - p.b * s.u2 * (s.v1 - s.v2) + p.d_u * (s.u1 - s.u2),
        v2: p.c * s.u2 - p.e * s.v2 + p.d_v * (s.v1 - s.v2),
    }
}

/// Coefficients of the stationary relation `v1 = alpha1 u1 + alpha2 u2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaCoeffs {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl AlphaCoeffs {
    pub fn new(p: &ModelParams) -> Result<Self, ReducedError> {
        if !(p.d_v > 0.0 && p.e > 0.0) {
            return Err(ReducedError::AlphaUndefined { d_v: p.d_v, e: p.e });
        }
        // Over the common denominator e (2 d_v + e) the two terms share the
        // factor c / e, which keeps their sum within a few ulps of c / e.
        let k = p.c / p.e;
        let den = 2.0 * p.d_v + p.e;
        Ok(Self {
            alpha1: k * (p.d_v + p.e) / den,
            alpha2: k * p.d_v / den,
        })
    }

    /// Location of the pole of `phi`, `d_u / (b (alpha1 - alpha2))`.
    pub fn pole(&self, p: &ModelParams) -> f64 {
        p.d_u / (p.b * (self.alpha1 - self.alpha2))
    }
}

pub fn alpha_coeffs(p: &ModelParams) -> Result<AlphaCoeffs, ReducedError> {
    AlphaCoeffs::new(p)
}

/// `phi(u) = u + f(u) / (b u (alpha1 - alpha2) - d_u)`.
pub fn phi(u: f64, p: &ModelParams, al: &AlphaCoeffs) -> Result<f64, ReducedError> {
    let den = p.b * u * (al.alpha1 - al.alpha2) - p.d_u;
    if den.abs() < 1e-12 {
        return Err(ReducedError::Pole {
            u,
            pole: al.pole(p),
        });
    }
    Ok(u + reaction(u, p) / den)
}

/// Analytic Jacobian of [`reduced_rhs`], rows/columns ordered `(u1, v1, u2, v2)`.
pub fn jacobian(s: ReducedState, p: &ModelParams) -> [[f64; 4]; 4] {
    let (b, du, dv) = (p.b, p.d_u, p.d_v);
    [
        [
            reaction_derivative(s.u1, p) - b * (s.v2 - s.v1) - du,
            b * s.u1,
            du,
            -b * s.u1,
        ],
        [p.c, -p.e - dv, 0.0, dv],
        [
            du,
            -b * s.u2,
            reaction_derivative(s.u2, p) - b * (s.v1 - s.v2) - du,
            b * s.u2,
        ],
        [0.0, dv, p.c, -p.e - dv],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointStability {
    /// Every eigenvalue has negative real part.
    Stable,
    /// Every eigenvalue has positive real part.
    Unstable,
    /// Mixed signs.
    Saddle,
    /// Some real part is within [`MARGINAL_TOL`] of zero.
    Marginal,
}

impl PointStability {
    pub fn is_stable(self) -> bool {
        self == PointStability::Stable
    }
}

/// Real parts of the Jacobian eigenvalues, sorted ascending.
pub fn eigen_real_parts(s: ReducedState, p: &ModelParams) -> [f64; 4] {
    let j = jacobian(s, p);
    let m = Matrix4::from_fn(|r, c| j[r][c]);
    let eig = m.complex_eigenvalues();
    let mut re = [eig[0].re, eig[1].re, eig[2].re, eig[3].re];
    re.sort_by(f64::total_cmp);
    re
}

pub fn stability_from_real_parts(re: &[f64; 4]) -> PointStability {
    if re.iter().any(|x| x.abs() <= MARGINAL_TOL) {
        PointStability::Marginal
    } else if re.iter().all(|&x| x < 0.0) {
        PointStability::Stable
    } else if re.iter().all(|&x| x > 0.0) {
        PointStability::Unstable
    } else {
        PointStability::Saddle
    }
}

pub fn classify_stability(s: ReducedState, p: &ModelParams) -> PointStability {
    stability_from_real_parts(&eigen_real_parts(s, p))
}

/// Names following the two-node census: U1*..U3* on the diagonal, U4*..U9*
/// for the asymmetric pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointLabel(pub u8);

impl fmt::Display for PointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "U{}*", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPoint {
    pub state: ReducedState,
    pub eigen_real_parts: [f64; 4],
    pub stability: PointStability,
    pub label: Option<PointLabel>,
    /// `|rhs(state)|`.
    pub residual: f64,
    /// `|phi(phi(u1)) - u1|`.
    pub fixed_point_residual: f64,
}

impl StationaryPoint {
    pub fn is_symmetric(&self) -> bool {
        (self.state.u1 - self.state.u2).abs() < 1e-7
    }
}

fn phi2_gap(u: f64, p: &ModelParams, al: &AlphaCoeffs) -> Option<f64> {
    let g = phi(phi(u, p, al).ok()?, p, al).ok()? - u;
    g.is_finite().then_some(g)
}

fn bisect(mut lo: f64, mut glo: f64, mut hi: f64, p: &ModelParams, al: &AlphaCoeffs) -> Option<f64> {
    for _ in 0..200 {
        if hi - lo <= 1e-15 * (1.0 + lo.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let gm = phi2_gap(mid, p, al)?;
        if gm == 0.0 {
            return Some(mid);
        }
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    let ghi = phi2_gap(hi, p, al)?;
    Some(if glo.abs() <= ghi.abs() { lo } else { hi })
}

/// Stationary points with `u1` in `[lo, hi]`.
///
/// Samples `phi(phi(u)) - u` on a uniform grid (skipping a small neighbourhood
/// of the pole), bisects every sign change, lifts each root to a full state
/// and keeps it only if the four-component residual is below
/// [`STATIONARY_RESIDUAL`]; sign changes across poles of `phi o phi` fail that
/// check and are dropped. Results are sorted by `(u1, u2)`.
pub fn find_stationary(
    p: &ModelParams,
    lo: f64,
    hi: f64,
    n_samples: usize,
) -> Result<Vec<StationaryPoint>, ReducedError> {
    if !(lo < hi) || n_samples < 1000 {
        return Err(ReducedError::BadSearch);
    }
    let al = AlphaCoeffs::new(p)?;
    let pole = al.pole(p);
    let step = (hi - lo) / (n_samples - 1) as f64;
    let samples: Vec<(f64, Option<f64>)> = (0..n_samples)
        .map(|k| lo + k as f64 * step)
        .map(|u| {
            if (u - pole).abs() < POLE_EXCLUSION {
                (u, None)
            } else {
                (u, phi2_gap(u, p, &al))
            }
        })
        .collect();

    let mut roots = Vec::new();
    for w in samples.windows(2) {
        let ((a, ga), (b, gb)) = (w[0], w[1]);
        let (Some(ga), Some(gb)) = (ga, gb) else { continue };
        if ga == 0.0 {
            roots.push(a);
        } else if ga.signum() != gb.signum() && gb != 0.0 {
            if let Some(r) = bisect(a, ga, b, p, &al) {
                roots.push(r);
            }
        }
    }
    if let Some((u, Some(g))) = samples.last() {
        if *g == 0.0 {
            roots.push(*u);
        }
    }

    let mut points: Vec<StationaryPoint> = Vec::new();
    for u1 in roots {
        let Ok(u2) = phi(u1, p, &al) else { continue };
        let state = ReducedState::new(
            u1,
            al.alpha1 * u1 + al.alpha2 * u2,
            u2,
            al.alpha1 * u2 + al.alpha2 * u1,
        );
        let residual = reduced_rhs(state, p).norm();
        if !(residual <= STATIONARY_RESIDUAL) {
            continue;
        }
        if points.iter().any(|q| q.state.distance(state) < 1e-7) {
            continue;
        }
        let re = eigen_real_parts(state, p);
        points.push(StationaryPoint {
            state,
            eigen_real_parts: re,
            stability: stability_from_real_parts(&re),
            label: None,
            residual,
            fixed_point_residual: phi2_gap(u1, p, &al).map_or(f64::INFINITY, f64::abs),
        });
    }
    points.sort_by(|a, b| {
        a.state
            .u1
            .total_cmp(&b.state.u1)
            .then(a.state.u2.total_cmp(&b.state.u2))
    });
    assign_labels(&mut points, p);
    Ok(points)
}

/// Diagonal points are named by matching `0`, `gamma`, `1`. Asymmetric
/// points come in swapped pairs: the stable pair is U8*/U9*, an unstable
/// pair nearest to it U6*/U7*, and the remaining unstable pair U4*/U5*.
/// Within a pair the member with `u1 > u2` takes the lower number.
fn assign_labels(points: &mut [StationaryPoint], p: &ModelParams) {
    for q in points.iter_mut().filter(|q| q.is_symmetric()) {
        let u = q.state.u1;
        q.label = [(0.0, 1), (p.gamma, 2), (1.0, 3)]
            .iter()
            .find(|(target, _)| (u - target).abs() < 1e-6)
            .map(|&(_, n)| PointLabel(n));
    }
    // Indices of the u1 > u2 member of each swapped pair.
    let leaders: Vec<usize> = (0..points.len())
        .filter(|&k| !points[k].is_symmetric() && points[k].state.u1 > points[k].state.u2)
        .collect();
    let partner = |k: usize, pts: &[StationaryPoint]| {
        let target = pts[k].state.swapped();
        (0..pts.len()).find(|&m| pts[m].state.distance(target) < 1e-6)
    };
    let stable: Vec<usize> = leaders.iter().copied().filter(|&k| points[k].stability.is_stable()).collect();
    let mut unstable: Vec<usize> = leaders.iter().copied().filter(|&k| !points[k].stability.is_stable()).collect();

    let mut naming: Vec<(usize, u8)> = Vec::new();
    if let Some(&s) = stable.first() {
        naming.push((s, 8));
        let anchor = points[s].state;
        unstable.sort_by(|&a, &b| {
            points[a].state.distance(anchor).total_cmp(&points[b].state.distance(anchor))
        });
        if let Some(&near) = unstable.first() {
            naming.push((near, 6));
        }
        if let Some(&far) = unstable.get(1) {
            naming.push((far, 4));
        }
    } else {
        unstable.sort_by(|&a, &b| {
            let gap = |k: usize| (points[k].state.u1 - points[k].state.u2).abs();
            gap(a).total_cmp(&gap(b))
        });
        for (&k, n) in unstable.iter().zip([4u8, 6]) {
            naming.push((k, n));
        }
    }
    for (k, n) in naming {
        points[k].label = Some(PointLabel(n));
        if let Some(m) = partner(k, points) {
            points[m].label = Some(PointLabel(n + 1));
        }
    }
}

/// One row of a sweep over `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub b: f64,
    pub result: Result<Vec<StationaryPoint>, ReducedError>,
}

impl ScanRow {
    pub fn count(&self) -> Option<usize> {
        self.result.as_ref().ok().map(Vec::len)
    }

    pub fn stable_count(&self) -> Option<usize> {
        self.result
            .as_ref()
            .ok()
            .map(|pts| pts.iter().filter(|q| q.stability.is_stable()).count())
    }
}

/// Default search window and sampling for the stationary census.
pub const SEARCH_LO: f64 = -0.1;
pub const SEARCH_HI: f64 = 1.6;
pub const SEARCH_SAMPLES: usize = 5000;

pub fn bifurcation_scan(b_values: &[f64], base: &ModelParams) -> Vec<ScanRow> {
    b_values
        .iter()
        .map(|&b| ScanRow {
            b,
            result: find_stationary(&base.with_b(b), SEARCH_LO, SEARCH_HI, SEARCH_SAMPLES),
        })
        .collect()
}

fn rk4(s: ReducedState, p: &ModelParams, dt: f64) -> ReducedState {
    let k1 = reduced_rhs(s, p);
    let k2 = reduced_rhs(s.axpy(0.5 * dt, k1), p);
    let k3 = reduced_rhs(s.axpy(0.5 * dt, k2), p);
    let k4 = reduced_rhs(s.axpy(dt, k3), p);
    ReducedState::new(
        s.u1 + dt / 6.0 * (k1.u1 + 2.0 * k2.u1 + 2.0 * k3.u1 + k4.u1),
        s.v1 + dt / 6.0 * (k1.v1 + 2.0 * k2.v1 + 2.0 * k3.v1 + k4.v1),
        s.u2 + dt / 6.0 * (k1.u2 + 2.0 * k2.u2 + 2.0 * k3.u2 + k4.u2),
        s.v2 + dt / 6.0 * (k1.v2 + 2.0 * k2.v2 + 2.0 * k3.v2 + k4.v2),
    )
}

/// RK4 trajectory, keeping every `stride`-th state plus the last one.
pub fn integrate(
    s0: ReducedState,
    p: &ModelParams,
    dt: f64,
    t_end: f64,
    stride: usize,
) -> Result<Vec<(f64, ReducedState)>, ReducedError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ReducedError::BadStep(dt));
    }
    let stride = stride.max(1);
    let n_steps = (t_end / dt).round() as usize;
    let mut out = vec![(0.0, s0)];
    let mut s = s0;
    for n in 1..=n_steps {
        s = rk4(s, p, dt);
        let t = n as f64 * dt;
        if !s.to_array().iter().all(|x| x.is_finite() && x.abs() < 1e6) {
            return Err(ReducedError::BlowUp(t));
        }
        if n % stride == 0 || n == n_steps {
            out.push((t, s));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seeding {
    /// `u1 = u2 = gamma - delta`.
    SymmetricDown,
    /// `u1 = u2 = gamma + delta`.
    SymmetricUp,
    /// `u1 = gamma + delta`, `u2 = gamma - delta`.
    Antisymmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    pub seeding: Seeding,
    pub trajectory: Vec<(f64, ReducedState)>,
    /// The known stationary point the orbit ends within 1e-4 of, if any.
    pub endpoint: Option<PointLabel>,
    pub endpoint_distance: f64,
}

impl Orbit {
    pub fn is_resolved(&self) -> bool {
        self.endpoint.is_some()
    }
}

pub const ORBIT_PERTURBATION: f64 = 1e-4;
pub const ORBIT_TOLERANCE: f64 = 1e-4;

/// Follows the three departures from U2* (symmetric down, symmetric up,
/// antisymmetric) and names the stationary point each one settles on.
pub fn heteroclinic_orbits(
    p: &ModelParams,
    dt: f64,
    t_end: f64,
) -> Result<(Vec<StationaryPoint>, Vec<Orbit>), ReducedError> {
    let points = find_stationary(p, SEARCH_LO, SEARCH_HI, SEARCH_SAMPLES)?;
    let middle = ReducedState::symmetric(p.gamma, p.c * p.gamma / p.e);
    if classify_stability(middle, p).is_stable() {
        return Err(ReducedError::MiddleNotUnstable(p.b));
    }
    let d = ORBIT_PERTURBATION;
    let seeds = [
        (Seeding::SymmetricDown, -d, -d),
        (Seeding::SymmetricUp, d, d),
        (Seeding::Antisymmetric, d, -d),
    ];
    let stride = ((t_end / dt) as usize / 2000).max(1);
    let mut orbits = Vec::new();
    for (seeding, d1, d2) in seeds {
        let s0 = ReducedState::new(middle.u1 + d1, middle.v1, middle.u2 + d2, middle.v2);
        let trajectory = integrate(s0, p, dt, t_end, stride)?;
        let end = trajectory.last().expect("non-empty").1;
        let (best, dist) = points
            .iter()
            .map(|q| (q, q.state.distance(end)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(q, dd)| (q.label, dd))
            .unwrap_or((None, f64::INFINITY));
        orbits.push(Orbit {
            seeding,
            trajectory,
            endpoint: if dist <= ORBIT_TOLERANCE { best } else { None },
            endpoint_distance: dist,
        });
    }
    Ok((points, orbits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(b: f64) -> ModelParams {
        ModelParams::standard(0.25).with_b(b)
    }

    #[test]
    fn rhs_vanishes_on_diagonal_equilibria() {
        let p = params(10.0);
        for s in [
            ReducedState::default(),
            ReducedState::symmetric(1.0, 1.5),
            ReducedState::symmetric(0.25, 0.375),
        ] {
            assert!(reduced_rhs(s, &p).norm() < 1e-15);
        }
    }

    #[test]
    fn alpha_values_and_identity() {
        let al = alpha_coeffs(&params(10.0)).unwrap();
        assert!((al.alpha1 - 36.0 / 44.0).abs() < 1e-14);
        assert!((al.alpha2 - 30.0 / 44.0).abs() < 1e-14);
        assert!((al.alpha1 + al.alpha2 - 1.5).abs() < 1e-14);
        let big_e = ModelParams { e: 1e6, ..params(10.0) };
        assert!(alpha_coeffs(&big_e).unwrap().alpha2 < 1e-9);
        let no_dv = ModelParams { d_v: 0.0, ..params(10.0) };
        assert!(matches!(alpha_coeffs(&no_dv), Err(ReducedError::AlphaUndefined { .. })));
    }

    #[test]
    fn phi_fixed_points_and_pole() {
        let p = params(10.0);
        let al = alpha_coeffs(&p).unwrap();
        assert_eq!(phi(0.0, &p, &al).unwrap(), 0.0);
        assert_eq!(phi(1.0, &p, &al).unwrap(), 1.0);
        assert!((phi(0.25, &p, &al).unwrap() - 0.25).abs() < 1e-16);
        let pole = al.pole(&p);
        assert!(matches!(phi(pole, &p, &al), Err(ReducedError::Pole { .. })));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = params(17.0);
        let states = [
            ReducedState::new(0.3, 0.5, 0.9, 1.1),
            ReducedState::new(1.2, 1.4, 0.4, 0.2),
            ReducedState::new(0.05, 0.02, 0.7, 0.9),
        ];
        for s in states {
            let j = jacobian(s, &p);
            let h = 1e-6;
            for col in 0..4 {
                let mut plus = s.to_array();
                let mut minus = s.to_array();
                plus[col] += h;
                minus[col] -= h;
                let fp = reduced_rhs(ReducedState::from_array(plus), &p).to_array();
                let fm = reduced_rhs(ReducedState::from_array(minus), &p).to_array();
                for row in 0..4 {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    assert!((fd - j[row][col]).abs() < 1e-5, "({row},{col})");
                }
            }
        }
    }

    #[test]
    fn jacobian_at_origin_and_swap_symmetry() {
        let p = params(10.0);
        let j0 = jacobian(ReducedState::default(), &p);
        assert!((j0[0][0] - (-p.a * p.gamma - p.d_u)).abs() < 1e-15);
        assert!((j0[2][2] - (-p.a * p.gamma - p.d_u)).abs() < 1e-15);

        let s = ReducedState::new(0.3, 0.5, 0.9, 1.1);
        let j = jacobian(s, &p);
        let js = jacobian(s.swapped(), &p);
        let perm = [2, 3, 0, 1];
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(js[r][c], j[perm[r]][perm[c]]);
            }
        }
    }

    #[test]
    fn census_at_b10() {
        let pts = find_stationary(&params(10.0), SEARCH_LO, SEARCH_HI, SEARCH_SAMPLES).unwrap();
        assert_eq!(pts.len(), 3, "{pts:#?}");
        let labels: Vec<_> = pts.iter().map(|q| q.label.unwrap().0).collect();
        assert_eq!(labels, vec![1, 2, 3]);
        assert_eq!(pts[0].stability, PointStability::Stable);
        assert!(!pts[1].stability.is_stable());
        assert_eq!(pts[2].stability, PointStability::Stable);
    }

    #[test]
    fn census_at_b15_and_b25() {
        let pts = find_stationary(&params(15.0), SEARCH_LO, SEARCH_HI, SEARCH_SAMPLES).unwrap();
        assert_eq!(pts.len(), 5, "{pts:#?}");
        assert_eq!(pts.iter().filter(|q| q.stability.is_stable()).count(), 2);
        let asym: Vec<_> = pts.iter().filter(|q| !q.is_symmetric()).collect();
        assert_eq!(asym.len(), 2);
        assert!(asym.iter().all(|q| !q.stability.is_stable()));

        let pts = find_stationary(&params(25.0), SEARCH_LO, SEARCH_HI, SEARCH_SAMPLES).unwrap();
        assert_eq!(pts.len(), 9, "{pts:#?}");
        assert_eq!(pts.iter().filter(|q| q.stability.is_stable()).count(), 4);
        let u8 = pts.iter().find(|q| q.label == Some(PointLabel(8))).unwrap();
        assert_eq!(u8.stability, PointStability::Stable);
        assert!(0.25 < u8.state.u2 && u8.state.u2 < 1.0 && 1.0 < u8.state.u1);
        let u9 = pts.iter().find(|q| q.label == Some(PointLabel(9))).unwrap();
        assert!((u9.state.u1 - u8.state.u2).abs() < 1e-9);
        for q in &pts {
            assert!(q.residual <= STATIONARY_RESIDUAL);
            assert!(q.fixed_point_residual <= 1e-10);
        }
    }

    #[test]
    fn force_balance_at_u8() {
        let p = params(25.0);
        let pts = find_stationary(&p, SEARCH_LO, SEARCH_HI, SEARCH_SAMPLES).unwrap();
        let s = pts.iter().find(|q| q.label == Some(PointLabel(8))).unwrap().state;
        let growth = reaction(s.u1, &p);
        let diffusion = p.d_u * (s.u2 - s.u1);
        let chemotaxis = -p.b * s.u1 * (s.v2 - s.v1);
        assert!(growth < 0.0 && diffusion < 0.0 && chemotaxis > 0.0);
        assert!((growth + diffusion + chemotaxis).abs() <= 1e-8);
    }

    #[test]
    fn find_stationary_rejects_bad_search() {
        assert!(find_stationary(&params(10.0), 1.0, 0.0, 5000).is_err());
        assert!(find_stationary(&params(10.0), 0.0, 1.0, 10).is_err());
    }

    #[test]
    fn integrate_from_u3_is_constant() {
        let s = ReducedState::symmetric(1.0, 1.5);
        let traj = integrate(s, &params(25.0), 1e-2, 10.0, 1).unwrap();
        assert!(traj.iter().all(|(_, q)| q.distance(s) < 1e-14));
        assert!(integrate(s, &params(25.0), 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn swapped_trajectory_is_a_trajectory() {
        let p = params(20.0);
        let s0 = ReducedState::new(0.3, 0.2, 0.8, 1.0);
        let a = integrate(s0, &p, 1e-3, 20.0, 100).unwrap();
        let b = integrate(s0.swapped(), &p, 1e-3, 20.0, 100).unwrap();
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            assert!(x.swapped().distance(*y) < 1e-10);
        }
    }

    #[test]
    fn positive_orthant_is_invariant() {
        let p = params(25.0);
        for s0 in [
            ReducedState::new(0.01, 0.01, 1.3, 2.0),
            ReducedState::new(0.2, 0.9, 0.1, 0.05),
            ReducedState::new(1e-3, 1e-3, 1e-3, 2.0),
        ] {
            let traj = integrate(s0, &p, 1e-3, 100.0, 50).unwrap();
            for (_, s) in traj {
                assert!(s.to_array().iter().all(|&x| x >= -1e-9), "{s:?}");
            }
        }
    }

    #[test]
    fn heteroclinic_endpoints_at_b25() {
        let (_, orbits) = heteroclinic_orbits(&params(25.0), 1e-3, 200.0).unwrap();
        let ends: Vec<_> = orbits.iter().map(|o| o.endpoint.map(|l| l.0)).collect();
        assert_eq!(ends[0], Some(1));
        assert_eq!(ends[1], Some(3));
        assert!(matches!(ends[2], Some(8) | Some(9)), "{ends:?}");
    }

    proptest! {
        #[test]
        fn alpha_identity_holds(c in 0.01f64..10.0, e in 0.01f64..10.0, d_v in 0.01f64..50.0) {
            let p = ModelParams { c, e, d_v, ..params(10.0) };
            let al = alpha_coeffs(&p).unwrap();
            prop_assert!(((al.alpha1 + al.alpha2) - c / e).abs() <= 1e-14 * (c / e).max(1.0));
            prop_assert!(al.alpha1 > al.alpha2);
        }
    }
}
