//! Bistable reaction term, the space-free ODE `u' = f(u), v' = c u - e v`,
//! its equilibria, and domain-integrated means.

use crate::grid::{GridError, ScalarField};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticsError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
    #[error("ODE state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Coefficients of the modified Keller-Segel system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Reaction rate.
    pub a: f64,
    /// Chemotactic strength.
    pub b: f64,
    /// Production rate of the chemoattractant.
    pub c: f64,
    /// Decay rate of the chemoattractant.
    pub e: f64,
    pub d_u: f64,
    pub d_v: f64,
    /// Unstable threshold of the cubic reaction.
    pub gamma: f64,
}

impl ModelParams {
    /// a = 7, b = 10, d_u = 1, c = 3, e = 2, d_v = 10.
    pub fn standard(gamma: f64) -> Self {
        Self {
            a: 7.0,
            b: 10.0,
            c: 3.0,
            e: 2.0,
            d_u: 1.0,
            d_v: 10.0,
            gamma,
        }
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, ..self }
    }

    pub fn with_b(self, b: f64) -> Self {
        Self { b, ..self }
    }

    pub fn validate(&self) -> Result<(), KineticsError> {
        let bad = |name, value, reason| Err(KineticsError::InvalidParam { name, value, reason });
        for (name, value) in [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("e", self.e),
            ("d_u", self.d_u),
            ("d_v", self.d_v),
            ("gamma", self.gamma),
        ] {
            if !value.is_finite() {
                return bad(name, value, "must be finite");
            }
        }
        if self.a <= 0.0 {
            return bad("a", self.a, "must be > 0");
        }
        if self.c <= 0.0 {
            return bad("c", self.c, "must be > 0");
        }
        if self.e <= 0.0 {
            return bad("e", self.e, "must be > 0");
        }
        if self.d_u < 0.0 {
            return bad("d_u", self.d_u, "must be >= 0");
        }
        if self.d_v < 0.0 {
            return bad("d_v", self.d_v, "must be >= 0");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", self.gamma, "must lie in (0, 1)");
        }
        Ok(())
    }
}

/// `f(u) = a u (1 - u) (u - gamma)`.
#[inline]
pub fn reaction(u: f64, p: &ModelParams) -> f64 {
    p.a * u * (1.0 - u) * (u - p.gamma)
}

/// `f'(u)`.
#[inline]
pub fn reaction_derivative(u: f64, p: &ModelParams) -> f64 {
    // f = a(-u^3 + (1 + g)u^2 - g u)
    p.a * (-3.0 * u * u + 2.0 * (1.0 + p.gamma) * u - p.gamma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeState {
    pub u: f64,
    pub v: f64,
}

impl OdeState {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

fn ode_rhs(s: OdeState, p: &ModelParams) -> OdeState {
    OdeState {
        u: reaction(s.u, p),
        v: p.c * s.u - p.e * s.v,
    }
}

/// One classical RK4 step of the space-free system.
pub fn ode_step(s: OdeState, p: &ModelParams, dt: f64) -> OdeState {
    let add = |a: OdeState, k: OdeState, w: f64| OdeState::new(a.u + w * k.u, a.v + w * k.v);
    let k1 = ode_rhs(s, p);
    let k2 = ode_rhs(add(s, k1, 0.5 * dt), p);
    let k3 = ode_rhs(add(s, k2, 0.5 * dt), p);
    let k4 = ode_rhs(add(s, k3, dt), p);
    OdeState::new(
        s.u + dt / 6.0 * (k1.u + 2.0 * k2.u + 2.0 * k3.u + k4.u),
        s.v + dt / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
    )
}

/// RK4 trajectory from `s0` up to `t_end`, including both endpoints. The last
/// step is shortened to land exactly on `t_end`.
pub fn ode_integrate(
    s0: OdeState,
    p: &ModelParams,
    dt: f64,
    t_end: f64,
) -> Result<Vec<(f64, OdeState)>, KineticsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(KineticsError::BadStep(dt));
    }
    let mut out = vec![(0.0, s0)];
    let mut s = s0;
    let mut n = 0u64;
    let mut t = 0.0;
    while t < t_end {
        let next = ((n + 1) as f64 * dt).min(t_end);
        s = ode_step(s, p, next - t);
        n += 1;
        t = next;
        if !(s.u.is_finite() && s.v.is_finite()) {
            return Err(KineticsError::NonFinite { t });
        }
        out.push((t, s));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    StableNode,
    UnstableNode,
    Saddle,
    /// At least one eigenvalue is numerically zero.
    Degenerate,
}

impl Stability {
    pub fn from_eigenvalues(l1: f64, l2: f64) -> Self {
        const ZERO: f64 = 1e-12;
        if l1.abs() < ZERO || l2.abs() < ZERO {
            Stability::Degenerate
        } else if l1 < 0.0 && l2 < 0.0 {
            Stability::StableNode
        } else if l1 > 0.0 && l2 > 0.0 {
            Stability::UnstableNode
        } else {
            Stability::Saddle
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub state: OdeState,
    /// Eigenvalues of the (lower-triangular) Jacobian `[[f'(u), 0], [c, -e]]`.
    pub eigenvalues: [f64; 2],
    pub stability: Stability,
}

/// The three equilibria `(0, 0)`, `(gamma, c gamma / e)` and `(1, c / e)`,
/// ordered by `u`, each labelled from its Jacobian eigenvalues.
pub fn classify_equilibria(p: &ModelParams) -> Vec<Equilibrium> {
    [0.0, p.gamma, 1.0]
        .into_iter()
        .map(|u| {
            let eig = [reaction_derivative(u, p), -p.e];
            Equilibrium {
                state: OdeState::new(u, p.c * u / p.e),
                eigenvalues: eig,
                stability: Stability::from_eigenvalues(eig[0], eig[1]),
            }
        })
        .collect()
}

/// Rectangle-rule integrals `(sum u h^2, sum v h^2)`.
pub fn mean_values(u: &ScalarField, v: &ScalarField) -> Result<(f64, f64), KineticsError> {
    if u.spec() != v.spec() {
        return Err(GridError::SpecMismatch {
            left: *u.spec(),
            right: *v.spec(),
        }
        .into());
    }
    let h2 = u.spec().h() * u.spec().h();
    Ok((u.sum() * h2, v.sum() * h2))
}
