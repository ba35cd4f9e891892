//! Forward integration of the discretized chemotaxis system with classical
//! RK4, plus snapshots, probe traces and mean bookkeeping.

mod outcome;
mod phases;

pub use outcome::{classify_outcome, classify_stats, OutcomeStats, PatternOutcome, HIGH_LEVEL};
pub use phases::{derivative, detect_phases, detect_phases_in, Phase, PhaseError, PhaseLabel};

use crate::grid::{self, neighbours, GridError, GridSpec, ScalarField};
use crate::kinetics::{reaction, KineticsError, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Magnitude above which a run is declared unstable.
pub const BLOW_UP_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Params(#[from] KineticsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("grid {nx}x{ny} too small for the nine-square initial condition (need 30x30)")]
    GridTooSmall { nx: usize, ny: usize },
    #[error("non-finite input at ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("instability at t = {t}: |value| reached {max_abs:e} at ({i}, {j})")]
    Instability {
        t: f64,
        max_abs: f64,
        i: usize,
        j: usize,
    },
    #[error("positivity budget exceeded at t = {t}: clipped mass {clipped:e} > {budget:e}")]
    PositivityBudget { t: f64, clipped: f64, budget: f64 },
}

/// Full description of one forward run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub grid: GridSpec,
    pub params: ModelParams,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub snapshot_times: Vec<f64>,
    /// Probe positions as `(i, j)` = (row, column).
    pub probes: Vec<(usize, usize)>,
    pub positivity_clip: bool,
    /// Upper bound on the total clipped mass; `None` disables the check.
    pub clip_budget: Option<f64>,
    /// Abort the run when the budget is exceeded. Otherwise the first
    /// violation time is recorded in [`SimRun::budget_exceeded_at`].
    pub strict_budget: bool,
    /// Probe and mean series are recorded every `record_stride` steps.
    pub record_stride: usize,
    /// Amplitude of the uniform noise added to the initial `u`.
    pub noise_amplitude: f64,
}

impl SimConfig {
    /// 100x100 grid, standard parameters, dt = 1e-3, t_end = 180.
    pub fn standard(gamma: f64) -> Self {
        let grid = GridSpec::square(100).expect("static grid");
        Self::on_grid(grid, gamma, 180.0)
    }

    pub fn on_grid(grid: GridSpec, gamma: f64, t_end: f64) -> Self {
        Self {
            grid,
            params: ModelParams::standard(gamma),
            dt: 1e-3,
            t_end,
            seed: 42,
            snapshot_times: Vec::new(),
            probes: Vec::new(),
            positivity_clip: true,
            clip_budget: Some(1e-6 * grid.len() as f64),
            strict_budget: false,
            record_stride: 10,
            noise_amplitude: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(SimError::Config(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if let Some(t) = self
            .snapshot_times
            .iter()
            .find(|&&t| !(0.0..=self.t_end).contains(&t))
        {
            return Err(SimError::Config(format!(
                "snapshot time {t} outside [0, {}]",
                self.t_end
            )));
        }
        if let Some(p) = self.probes.iter().find(|(i, j)| !self.grid.contains(*i, *j)) {
            return Err(SimError::Config(format!("probe {p:?} outside the grid")));
        }
        if self.record_stride == 0 {
            return Err(SimError::Config("record_stride must be >= 1".into()));
        }
        if !(self.noise_amplitude >= 0.0) {
            return Err(SimError::Config("noise amplitude must be >= 0".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub u: ScalarField,
    pub v: ScalarField,
}

impl SimState {
    pub fn homogeneous(grid: GridSpec, u: f64, v: f64) -> Self {
        Self {
            t: 0.0,
            u: ScalarField::constant(grid, u),
            v: ScalarField::constant(grid, v),
        }
    }
}

/// Nine squares of `u = 0.8` on a `0.2` background, arranged 3x3 with centres
/// at 1/4, 1/2 and 3/4 of each axis and side `floor(nx / 10)`, plus uniform
/// noise in `[0, noise_amplitude)` at every node; `v = 0.5` everywhere.
pub fn initial_condition(
    grid: GridSpec,
    seed: u64,
    noise_amplitude: f64,
) -> Result<(ScalarField, ScalarField), SimError> {
    let (nx, ny) = (grid.nx(), grid.ny());
    if nx < 30 || ny < 30 {
        return Err(SimError::GridTooSmall { nx, ny });
    }
    let side_x = nx / 10;
    let side_y = ny / 10;
    let starts = |n: usize, side: usize| -> [usize; 3] {
        [n / 4, n / 2, 3 * n / 4].map(|c| c - side / 2)
    };
    let (sx, sy) = (starts(nx, side_x), starts(ny, side_y));
    let in_square = |i: usize, j: usize| {
        sy.iter().any(|&s| (s..s + side_y).contains(&i)) && sx.iter().any(|&s| (s..s + side_x).contains(&j))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = ScalarField::from_fn(grid, |i, j| {
        let base = if in_square(i, j) { 0.8 } else { 0.2 };
        let noise: f64 = rng.gen();
        base + noise_amplitude * noise
    });
    Ok((u, ScalarField::constant(grid, 0.5)))
}

/// Time derivatives `(du/dt, dv/dt)` of the semi-discrete system.
pub fn rhs(state: &SimState, p: &ModelParams) -> Result<(ScalarField, ScalarField), SimError> {
    if state.u.spec() != state.v.spec() {
        return Err(GridError::SpecMismatch {
            left: *state.u.spec(),
            right: *state.v.spec(),
        }
        .into());
    }
    for f in [&state.u, &state.v] {
        if let Some((i, j, _)) = f.first_non_finite() {
            return Err(SimError::NonFinite { i, j });
        }
    }
    let spec = *state.u.spec();
    let mut du = vec![0.0; spec.len()];
    let mut dv = vec![0.0; spec.len()];
    rhs_into(&spec, p, state.u.values(), state.v.values(), &mut du, &mut dv);
    Ok((
        ScalarField::from_raw(spec, du),
        ScalarField::from_raw(spec, dv),
    ))
}

/// Fused stencil evaluation of
/// `du = f(u) - b (grad u . grad v + u lap v) + d_u lap u`,
/// `dv = c u - e v + d_v lap v`.
/// Operation order matches the composed grid operators exactly.
pub(crate) fn rhs_into(
    spec: &GridSpec,
    p: &ModelParams,
    u: &[f64],
    v: &[f64],
    du: &mut [f64],
    dv: &mut [f64],
) {
    let (nx, ny, h) = (spec.nx(), spec.ny(), spec.h());
    let inv_h2 = 1.0 / (h * h);
    let inv_2h = 0.5 / h;
    for i in 0..ny {
        let (im, ip) = neighbours(i, ny);
        let (row, up, down) = (i * nx, ip * nx, im * nx);
        for j in 0..nx {
            let (jm, jp) = neighbours(j, nx);
            let k = row + j;
            let uc = u[k];
            let vc = v[k];
            let lap_u = (u[up + j] + u[down + j] + u[row + jp] + u[row + jm] - 4.0 * uc) * inv_h2;
            let lap_v = (v[up + j] + v[down + j] + v[row + jp] + v[row + jm] - 4.0 * vc) * inv_h2;
            let ux = (u[row + jp] - u[row + jm]) * inv_2h;
            let uy = (u[up + j] - u[down + j]) * inv_2h;
            let vx = (v[row + jp] - v[row + jm]) * inv_2h;
            let vy = (v[up + j] - v[down + j]) * inv_2h;
            let chem = -p.b * ((ux * vx + uy * vy) + uc * lap_v);
            du[k] = reaction(uc, p) + chem + p.d_u * lap_u;
            dv[k] = p.c * uc - p.e * vc + p.d_v * lap_v;
        }
    }
}

/// Reusable buffers for repeated RK4 steps on one grid.
pub struct Stepper {
    spec: GridSpec,
    params: ModelParams,
    k: [(Vec<f64>, Vec<f64>); 4],
    stage_u: Vec<f64>,
    stage_v: Vec<f64>,
}

/// Result of one step: how much negative mass the clamp removed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub clipped_mass: f64,
}

impl Stepper {
    pub fn new(spec: GridSpec, params: ModelParams) -> Self {
        let n = spec.len();
        let pair = || (vec![0.0; n], vec![0.0; n]);
        Self {
            spec,
            params,
            k: [pair(), pair(), pair(), pair()],
            stage_u: vec![0.0; n],
            stage_v: vec![0.0; n],
        }
    }

    /// Advances `(u, v)` in place by `dt`; with `clip`, negative entries are
    /// clamped to zero afterwards.
    pub fn step(
        &mut self,
        u: &mut [f64],
        v: &mut [f64],
        dt: f64,
        clip: bool,
    ) -> StepReport {
        let n = self.spec.len();
        let weights = [0.5 * dt, 0.5 * dt, dt];
        for s in 0..4 {
            let (done, rest) = self.k.split_at_mut(s);
            let (ku, kv) = &mut rest[0];
            if s == 0 {
                rhs_into(&self.spec, &self.params, u, v, ku, kv);
            } else {
                let w = weights[s - 1];
                let (pu, pv) = &done[s - 1];
                for idx in 0..n {
                    self.stage_u[idx] = u[idx] + w * pu[idx];
                    self.stage_v[idx] = v[idx] + w * pv[idx];
                }
                rhs_into(&self.spec, &self.params, &self.stage_u, &self.stage_v, ku, kv);
            }
        }
        let sixth = dt / 6.0;
        let [(k1u, k1v), (k2u, k2v), (k3u, k3v), (k4u, k4v)] = &self.k;
        let mut clipped = 0.0;
        for idx in 0..n {
            u[idx] += sixth * (k1u[idx] + 2.0 * k2u[idx] + 2.0 * k3u[idx] + k4u[idx]);
            v[idx] += sixth * (k1v[idx] + 2.0 * k2v[idx] + 2.0 * k3v[idx] + k4v[idx]);
            if clip {
                if u[idx] < 0.0 {
                    clipped -= u[idx];
                    u[idx] = 0.0;
                }
                if v[idx] < 0.0 {
                    clipped -= v[idx];
                    v[idx] = 0.0;
                }
            }
        }
        StepReport {
            clipped_mass: clipped * self.spec.h() * self.spec.h(),
        }
    }
}

fn check_bounds(t: f64, spec: &GridSpec, fields: [&[f64]; 2]) -> Result<(), SimError> {
    for f in fields {
        for (k, &x) in f.iter().enumerate() {
            if !(x.abs() <= BLOW_UP_LIMIT) {
                return Err(SimError::Instability {
                    t,
                    max_abs: x.abs(),
                    i: k / spec.nx(),
                    j: k % spec.nx(),
                });
            }
        }
    }
    Ok(())
}

/// One RK4 step of the full system. Returns the new state and the clipped
/// mass.
pub fn rk4_step(
    state: &SimState,
    p: &ModelParams,
    dt: f64,
    positivity_clip: bool,
) -> Result<(SimState, StepReport), SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::Config(format!("dt must be positive, got {dt}")));
    }
    let spec = *state.u.spec();
    let mut u = state.u.values().to_vec();
    let mut v = state.v.values().to_vec();
    let mut stepper = Stepper::new(spec, *p);
    let report = stepper.step(&mut u, &mut v, dt, positivity_clip);
    let t = state.t + dt;
    check_bounds(t, &spec, [&u, &v])?;
    Ok((
        SimState {
            t,
            u: ScalarField::from_raw(spec, u),
            v: ScalarField::from_raw(spec, v),
        },
        report,
    ))
}

/// Time series of local quantities at one grid node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeSeries {
    pub position: (usize, usize),
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub lap_u: Vec<f64>,
    pub lap_v: Vec<f64>,
    pub gradu_dot_gradv: Vec<f64>,
}

impl ProbeSeries {
    fn new(position: (usize, usize)) -> Self {
        Self {
            position,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn record(&mut self, t: f64, spec: &GridSpec, u: &[f64], v: &[f64]) {
        let (i, j) = self.position;
        let (nx, ny, h) = (spec.nx(), spec.ny(), spec.h());
        let (im, ip) = neighbours(i, ny);
        let (jm, jp) = neighbours(j, nx);
        let at = |f: &[f64], a: usize, b: usize| f[a * nx + b];
        let lap = |f: &[f64]| {
            (at(f, ip, j) + at(f, im, j) + at(f, i, jp) + at(f, i, jm) - 4.0 * at(f, i, j)) / (h * h)
        };
        let gx = |f: &[f64]| (at(f, i, jp) - at(f, i, jm)) * (0.5 / h);
        let gy = |f: &[f64]| (at(f, ip, j) - at(f, im, j)) * (0.5 / h);
        self.times.push(t);
        self.u.push(at(u, i, j));
        self.v.push(at(v, i, j));
        self.lap_u.push(lap(u));
        self.lap_v.push(lap(v));
        self.gradu_dot_gradv.push(gx(u) * gx(v) + gy(u) * gy(v));
    }
}

/// Domain integrals of `u` and `v` over time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeanSeries {
    pub times: Vec<f64>,
    pub ubar: Vec<f64>,
    pub vbar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub config: SimConfig,
    /// Sorted by time; each at the integration step nearest the request.
    pub snapshots: Vec<SimState>,
    pub probe_series: Vec<ProbeSeries>,
    pub mean_series: MeanSeries,
    pub clipped_mass: f64,
    /// Time at which the clipped mass first went over the budget.
    pub budget_exceeded_at: Option<f64>,
    pub final_state: SimState,
    pub outcome: PatternOutcome,
    pub stats: OutcomeStats,
}

/// Integrates `config` from the standard initial condition.
pub fn run(config: &SimConfig) -> Result<SimRun, SimError> {
    config.validate()?;
    let (u0, v0) = initial_condition(config.grid, config.seed, config.noise_amplitude)?;
    run_from(
        config,
        SimState {
            t: 0.0,
            u: u0,
            v: v0,
        },
    )
}

/// Integrates `config` from an arbitrary starting state.
pub fn run_from(config: &SimConfig, initial: SimState) -> Result<SimRun, SimError> {
    config.validate()?;
    let spec = config.grid;
    if initial.u.spec() != &spec || initial.v.spec() != &spec {
        return Err(SimError::Config("initial state does not match the grid".into()));
    }
    let n_steps = config.total_steps();
    let dt = config.dt;
    let t0 = initial.t;
    let time_at = |n: u64| t0 + n as f64 * dt;

    let mut snap_steps: Vec<(u64, usize)> = config
        .snapshot_times
        .iter()
        .enumerate()
        .map(|(k, &t)| (((t - t0) / dt).round().clamp(0.0, n_steps as f64) as u64, k))
        .collect();
    snap_steps.sort();
    let mut next_snap = 0;

    let mut u = initial.u.into_values();
    let mut v = initial.v.into_values();
    let mut stepper = Stepper::new(spec, config.params);
    let mut probes: Vec<ProbeSeries> = config.probes.iter().map(|&p| ProbeSeries::new(p)).collect();
    let mut means = MeanSeries::default();
    let mut snapshots = Vec::with_capacity(snap_steps.len());
    let mut clipped_total = 0.0;
    let mut budget_exceeded_at = None;
    let h2 = spec.h() * spec.h();

    let mut record = |n: u64, u: &[f64], v: &[f64], probes: &mut Vec<ProbeSeries>| {
        let t = time_at(n);
        for p in probes.iter_mut() {
            p.record(t, &spec, u, v);
        }
        means.times.push(t);
        means.ubar.push(u.iter().sum::<f64>() * h2);
        means.vbar.push(v.iter().sum::<f64>() * h2);
    };

    let mut n = 0u64;
    loop {
        while next_snap < snap_steps.len() && snap_steps[next_snap].0 == n {
            snapshots.push(SimState {
                t: time_at(n),
                u: ScalarField::from_raw(spec, u.clone()),
                v: ScalarField::from_raw(spec, v.clone()),
            });
            next_snap += 1;
        }
        if n % config.record_stride as u64 == 0 || n == n_steps {
            record(n, &u, &v, &mut probes);
        }
        if n == n_steps {
            break;
        }
        let report = stepper.step(&mut u, &mut v, dt, config.positivity_clip);
        n += 1;
        clipped_total += report.clipped_mass;
        check_bounds(time_at(n), &spec, [&u, &v])?;
        if let Some(budget) = config.clip_budget {
            if clipped_total > budget && budget_exceeded_at.is_none() {
                if config.strict_budget {
                    return Err(SimError::PositivityBudget {
                        t: time_at(n),
                        clipped: clipped_total,
                        budget,
                    });
                }
                budget_exceeded_at = Some(time_at(n));
            }
        }
    }

    let final_state = SimState {
        t: time_at(n_steps),
        u: ScalarField::from_raw(spec, u),
        v: ScalarField::from_raw(spec, v),
    };
    let stats = OutcomeStats::of(&final_state.u);
    Ok(SimRun {
        config: config.clone(),
        snapshots,
        probe_series: probes,
        mean_series: means,
        clipped_mass: clipped_total,
        budget_exceeded_at,
        outcome: classify_outcome(&final_state),
        stats,
        final_state,
    })
}

/// One row of a gamma sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub result: Result<(PatternOutcome, OutcomeStats, f64), SimError>,
}

/// Runs `base` once per gamma with the shared seed. Faults are recorded per
/// row and the sweep carries on.
pub fn sweep_gamma(gammas: &[f64], base: &SimConfig) -> Vec<SweepRow> {
    gammas
        .iter()
        .map(|&gamma| {
            let cfg = SimConfig {
                params: base.params.with_gamma(gamma),
                ..base.clone()
            };
            let result = run(&cfg).map(|r| (r.outcome, r.stats, r.clipped_mass));
            SweepRow { gamma, result }
        })
        .collect()
}

/// `laplacian`, `gradient` based reference used by tests to cross-check the
/// fused kernel.
pub fn rhs_composed(state: &SimState, p: &ModelParams) -> Result<(ScalarField, ScalarField), SimError> {
    let chem = grid::chemotaxis_term(&state.u, &state.v, p.b)?;
    let lap_u = grid::laplacian(&state.u);
    let lap_v = grid::laplacian(&state.v);
    let spec = *state.u.spec();
    let du = (0..spec.len())
        .map(|k| reaction(state.u.values()[k], p) + chem.values()[k] + p.d_u * lap_u.values()[k])
        .collect();
    let dv = (0..spec.len())
        .map(|k| p.c * state.u.values()[k] - p.e * state.v.values()[k] + p.d_v * lap_v.values()[k])
        .collect();
    Ok((ScalarField::from_raw(spec, du), ScalarField::from_raw(spec, dv)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{ode_integrate, OdeState};
    use proptest::prelude::{prop_assert, proptest};
    use std::f64::consts::PI;

    fn random_state(spec: GridSpec, seed: u64) -> SimState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SimState {
            t: 0.0,
            u: ScalarField::from_fn(spec, |_, _| rng.gen_range(0.0..1.2)),
            v: ScalarField::from_fn(spec, |_, _| rng.gen_range(0.0..2.0)),
        }
    }

    fn equilibria(p: &ModelParams) -> [(f64, f64); 3] {
        [(0.0, 0.0), (p.gamma, p.c * p.gamma / p.e), (1.0, p.c / p.e)]
    }

    #[test]
    fn rhs_vanishes_at_homogeneous_equilibria() {
        let spec = GridSpec::square(12).unwrap();
        let p = ModelParams::standard(0.25);
        for (u, v) in equilibria(&p) {
            let (du, dv) = rhs(&SimState::homogeneous(spec, u, v), &p).unwrap();
            assert!(du.values().iter().chain(dv.values()).all(|x| x.abs() < 1e-15));
        }
    }

    #[test]
    fn fused_rhs_matches_composed_operators() {
        let p = ModelParams::standard(0.29);
        for (nx, ny, h) in [(7, 5, 1.0), (16, 16, 0.5), (9, 13, 2.0)] {
            let spec = GridSpec::new(nx, ny, h).unwrap();
            let s = random_state(spec, nx as u64);
            let (du, dv) = rhs(&s, &p).unwrap();
            let (cu, cv) = rhs_composed(&s, &p).unwrap();
            assert!(du.max_abs_diff(&cu) <= 1e-12);
            assert!(dv.max_abs_diff(&cv) <= 1e-12);
        }
    }

    #[test]
    fn rhs_rejects_non_finite_input() {
        let spec = GridSpec::square(6).unwrap();
        let mut s = random_state(spec, 1);
        s.v.set(3, 4, f64::INFINITY);
        assert_eq!(
            rhs(&s, &ModelParams::standard(0.25)),
            Err(SimError::NonFinite { i: 3, j: 4 })
        );
    }

    #[test]
    fn equilibria_do_not_drift() {
        let spec = GridSpec::square(20).unwrap();
        let p = ModelParams::standard(0.25);
        for (u0, v0) in equilibria(&p) {
            let mut u = vec![u0; spec.len()];
            let mut v = vec![v0; spec.len()];
            let mut stepper = Stepper::new(spec, p);
            for _ in 0..1000 {
                stepper.step(&mut u, &mut v, 1e-3, true);
            }
            let drift = u
                .iter()
                .map(|x| (x - u0).abs())
                .chain(v.iter().map(|x| (x - v0).abs()))
                .fold(0.0, f64::max);
            assert!(drift <= 1e-10, "drift {drift} at ({u0}, {v0})");
        }
    }

    #[test]
    fn pure_diffusion_conserves_mass() {
        let spec = GridSpec::new(17, 11, 0.8).unwrap();
        let p = ModelParams { a: 0.0, b: 0.0, c: 0.0, e: 0.0, ..ModelParams::standard(0.25) };
        let mut s = random_state(spec, 9);
        for _ in 0..200 {
            let before = s.u.sum();
            s = rk4_step(&s, &p, 1e-3, false).unwrap().0;
            assert!((s.u.sum() - before).abs() <= 1e-10);
        }
    }

    #[test]
    fn constant_fields_follow_the_kinetics() {
        let spec = GridSpec::square(8).unwrap();
        let p = ModelParams::standard(0.25);
        let dt = 1e-3;
        let oracle = ode_integrate(OdeState::new(0.4, 0.9), &p, dt, 2.0).unwrap();
        let mut u = vec![0.4; spec.len()];
        let mut v = vec![0.9; spec.len()];
        let mut stepper = Stepper::new(spec, p);
        for (_, expected) in oracle.iter().skip(1) {
            stepper.step(&mut u, &mut v, dt, true);
            for k in 0..spec.len() {
                assert!((u[k] - expected.u).abs() <= 1e-10);
                assert!((v[k] - expected.v).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn rk4_step_reports_blow_up() {
        let spec = GridSpec::square(6).unwrap();
        let s = SimState::homogeneous(spec, 1e5, 0.0);
        let err = rk4_step(&s, &ModelParams::standard(0.25), 1e-3, true).unwrap_err();
        assert!(matches!(err, SimError::Instability { .. }));
        assert!(rk4_step(&s, &ModelParams::standard(0.25), 0.0, true).is_err());
    }

    #[test]
    fn initial_condition_layout() {
        let grid = GridSpec::square(40).unwrap();
        let (u, v) = initial_condition(grid, 7, 0.2).unwrap();
        assert!(u.min() >= 0.2 && u.max() <= 1.0);
        assert!(v.values().iter().all(|&x| x == 0.5));

        let (bare, _) = initial_condition(grid, 7, 0.0).unwrap();
        let high = bare.values().iter().filter(|&&x| x == 0.8).count();
        let low = bare.values().iter().filter(|&&x| x == 0.2).count();
        assert_eq!(high, 9 * 4 * 4);
        assert_eq!(high + low, grid.len());
        for c in [10, 20, 30] {
            assert_eq!(bare.get(c, c), 0.8);
        }
        assert_eq!(bare.get(0, 0), 0.2);

        let (again, _) = initial_condition(grid, 7, 0.2).unwrap();
        assert_eq!(u, again);
        let (other, _) = initial_condition(grid, 8, 0.2).unwrap();
        assert_ne!(u, other);

        let small = GridSpec::new(29, 40, 1.0).unwrap();
        assert_eq!(
            initial_condition(small, 1, 0.2),
            Err(SimError::GridTooSmall { nx: 29, ny: 40 })
        );
    }

    fn short_config() -> SimConfig {
        let mut cfg = SimConfig::on_grid(GridSpec::square(32).unwrap(), 0.25, 0.5);
        cfg.snapshot_times = vec![0.5, 0.0, 0.2504];
        cfg.probes = vec![(16, 16), (0, 31)];
        cfg
    }

    #[test]
    fn run_records_snapshots_probes_and_means() {
        let cfg = short_config();
        let r = run(&cfg).unwrap();
        let times: Vec<f64> = r.snapshots.iter().map(|s| s.t).collect();
        assert_eq!(times.len(), 3);
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
        assert!((times[1] - 0.25).abs() < 1e-12);
        assert_eq!(r.final_state.t, 0.5);
        assert_eq!(r.snapshots[2].u, r.final_state.u);
        let expected = cfg.total_steps() as usize / cfg.record_stride + 1;
        for p in &r.probe_series {
            assert_eq!(p.len(), expected);
            for l in [p.u.len(), p.v.len(), p.lap_u.len(), p.lap_v.len(), p.gradu_dot_gradv.len()] {
                assert_eq!(l, expected);
            }
        }
        assert_eq!(r.mean_series.times.len(), expected);
        let s0 = &r.snapshots[0];
        assert!((r.mean_series.ubar[0] - s0.u.sum()).abs() < 1e-12);
        let probe = &r.probe_series[0];
        assert_eq!(probe.u[0], s0.u.get(16, 16));
        let lap = grid::laplacian(&s0.v);
        assert!((probe.lap_v[0] - lap.get(16, 16)).abs() < 1e-15);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = short_config();
        assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
    }

    #[test]
    fn config_validation() {
        let mut cfg = short_config();
        cfg.snapshot_times.push(0.6);
        assert!(matches!(run(&cfg), Err(SimError::Config(_))));
        let mut cfg = short_config();
        cfg.probes.push((32, 0));
        assert!(matches!(run(&cfg), Err(SimError::Config(_))));
        let mut cfg = short_config();
        cfg.dt = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = short_config();
        cfg.params.gamma = 1.5;
        assert!(matches!(cfg.validate(), Err(SimError::Params(_))));
    }

    #[test]
    fn positivity_budget_policy() {
        // A density bump on a steep attractant ramp: the centred transport
        // term pushes the empty cell upstream of the bump below zero.
        let mut cfg = short_config();
        cfg.t_end = 0.1;
        cfg.snapshot_times.clear();
        cfg.clip_budget = Some(0.0);
        let spec = cfg.grid;
        let start = SimState {
            t: 0.0,
            u: ScalarField::from_fn(spec, |i, j| if (14..18).contains(&i) && (14..18).contains(&j) { 1.0 } else { 0.0 }),
            v: ScalarField::from_fn(spec, |_, j| j as f64),
        };
        let lenient = run_from(&cfg, start.clone()).unwrap();
        assert!(lenient.clipped_mass > 0.0);
        assert!(lenient.budget_exceeded_at.is_some());
        cfg.strict_budget = true;
        assert!(matches!(run_from(&cfg, start.clone()), Err(SimError::PositivityBudget { .. })));
        cfg.clip_budget = None;
        assert!(run_from(&cfg, start).is_ok());
    }

    #[test]
    fn clipping_keeps_fields_non_negative() {
        let mut cfg = short_config();
        cfg.t_end = 3.0;
        cfg.snapshot_times = vec![1.0, 2.0, 3.0];
        let r = run(&cfg).unwrap();
        for s in &r.snapshots {
            assert!(s.u.min() >= 0.0 && s.v.min() >= 0.0);
        }
    }

    #[test]
    fn sweep_rows() {
        let mut base = short_config();
        base.t_end = 0.05;
        assert!(sweep_gamma(&[], &base).is_empty());
        let rows = sweep_gamma(&[0.25, 0.25, 1.5], &base);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], rows[1]);
        assert!(rows[2].result.is_err());
    }

    /// Cell-centred cosine bump on `[0, L]^2` sampled with `n` cells per side.
    fn bump_state(n: usize, length: f64) -> SimState {
        let h = length / n as f64;
        let spec = GridSpec::new(n, n, h).unwrap();
        let x = |k: usize| (k as f64 + 0.5) * h;
        SimState {
            t: 0.0,
            u: ScalarField::from_fn(spec, |i, j| {
                0.5 + 0.2 * (PI * x(j) / length).cos() * (PI * x(i) / length).cos()
            }),
            v: ScalarField::from_fn(spec, |i, _| 0.8 + 0.3 * (PI * x(i) / length).cos()),
        }
    }

    fn coarsen(f: &ScalarField) -> ScalarField {
        let spec = f.spec();
        let coarse = GridSpec::new(spec.nx() / 2, spec.ny() / 2, 2.0 * spec.h()).unwrap();
        ScalarField::from_fn(coarse, |i, j| {
            0.25 * (f.get(2 * i, 2 * j) + f.get(2 * i + 1, 2 * j) + f.get(2 * i, 2 * j + 1) + f.get(2 * i + 1, 2 * j + 1))
        })
    }

    #[test]
    fn refinement_is_second_order() {
        let p = ModelParams::standard(0.25);
        let length = 8.0;
        let t_end = 0.4;
        let solve = |n: usize, dt: f64| {
            let mut s = bump_state(n, length);
            let steps = (t_end / dt).round() as usize;
            for _ in 0..steps {
                s = rk4_step(&s, &p, dt, false).unwrap().0;
            }
            s.u
        };
        let u8 = solve(8, 4e-3);
        let u16 = solve(16, 2e-3);
        let u32 = solve(32, 1e-3);
        let d1 = u8.max_abs_diff(&coarsen(&u16));
        let d2 = u16.max_abs_diff(&coarsen(&u32));
        assert!(d1 / d2 > 3.0, "ratio {}", d1 / d2);
    }

    proptest! {
        #[test]
        fn rhs_is_swap_equivariant_under_transpose(seed in 0u64..200) {
            // Transposing a square grid commutes with the scheme.
            let spec = GridSpec::square(7).unwrap();
            let s = random_state(spec, seed);
            let tr = |f: &ScalarField| ScalarField::from_fn(spec, |i, j| f.get(j, i));
            let p = ModelParams::standard(0.25);
            let (du, dv) = rhs(&s, &p).unwrap();
            let st = SimState { t: 0.0, u: tr(&s.u), v: tr(&s.v) };
            let (du_t, dv_t) = rhs(&st, &p).unwrap();
            prop_assert!(du_t.max_abs_diff(&tr(&du)) <= 1e-12);
            prop_assert!(dv_t.max_abs_diff(&tr(&dv)) <= 1e-12);
        }
    }
}
