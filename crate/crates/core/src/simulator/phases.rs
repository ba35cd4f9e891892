//! Splitting a probe's `v` trace into time-scale phases.
//!
//! The rate `|dv/dt|` is finite-differenced, moved to a log scale and
//! smoothed. The log-rate is then fitted by a piecewise constant with at most
//! three pieces (exact least squares by dynamic programming). Pieces whose
//! levels sit closer than [`MIN_SEPARATION`] decades are not kept apart.

use super::ProbeSeries;
use std::fmt;
use thiserror::Error;

pub const MIN_SAMPLES: usize = 10;
/// Centered moving-average width applied to the log-rate.
pub const SMOOTHING_WINDOW: usize = 5;
/// Smallest gap, in decades of `|dv/dt|`, between neighbouring phases.
pub const MIN_SEPARATION: f64 = 0.25;
/// Shortest admissible phase, in (possibly block-averaged) samples. Long
/// enough that a smoothed jump between two levels is never a phase itself.
pub const MIN_PHASE_LEN: usize = 4 * SMOOTHING_WINDOW;
/// Longer traces are block-averaged down to about this many points before
/// segmentation.
const MAX_POINTS: usize = 3000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooShort(usize),
    #[error("times must be strictly increasing")]
    Unordered,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhaseLabel {
    VeryFast,
    Fast,
    Slow,
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseLabel::VeryFast => "VERY_FAST",
            PhaseLabel::Fast => "FAST",
            PhaseLabel::Slow => "SLOW",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub t_start: f64,
    pub t_end: f64,
    pub label: PhaseLabel,
    /// Sample indices `[start, end]` into the series, both inclusive.
    pub start: usize,
    pub end: usize,
    /// Mean of `|dv/dt|` over the phase.
    pub mean_rate: f64,
    /// `v(t_end) - v(t_start)`.
    pub v_change: f64,
}

/// Finite-difference derivative: centered inside, one-sided at the ends.
pub fn derivative(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    (0..n)
        .map(|k| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (y[b] - y[a]) / (t[b] - t[a])
        })
        .collect()
}

fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..x.len())
        .map(|k| {
            let (a, b) = (k.saturating_sub(half), (k + half + 1).min(x.len()));
            x[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Least-squares piecewise-constant fit of `x` with exactly `k` pieces, each
/// at least `min_len` long. Returns the piece start indices (first is 0), or
/// `None` if `x` is too short.
fn segment(x: &[f64], k: usize, min_len: usize) -> Option<Vec<usize>> {
    let n = x.len();
    if n < k * min_len {
        return None;
    }
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, &v) in x.iter().enumerate() {
        s1[i + 1] = s1[i] + v;
        s2[i + 1] = s2[i] + v * v;
    }
    let cost = |a: usize, b: usize| {
        let len = (b - a) as f64;
        let s = s1[b] - s1[a];
        (s2[b] - s2[a] - s * s / len).max(0.0)
    };
    // best[m][j]: cost of splitting x[..j] into m + 1 pieces.
    let mut best = vec![vec![f64::INFINITY; n + 1]; k];
    let mut arg = vec![vec![0usize; n + 1]; k];
    for j in min_len..=n {
        best[0][j] = cost(0, j);
    }
    for m in 1..k {
        for j in (m + 1) * min_len..=n {
            for i in m * min_len..=j - min_len {
                let c = best[m - 1][i] + cost(i, j);
                if c < best[m][j] {
                    best[m][j] = c;
                    arg[m][j] = i;
                }
            }
        }
    }
    let mut starts = vec![0; k];
    let mut j = n;
    for m in (1..k).rev() {
        j = arg[m][j];
        starts[m] = j;
    }
    Some(starts)
}

fn piece_means(x: &[f64], starts: &[usize]) -> Vec<f64> {
    (0..starts.len())
        .map(|p| {
            let end = starts.get(p + 1).copied().unwrap_or(x.len());
            x[starts[p]..end].iter().sum::<f64>() / (end - starts[p]) as f64
        })
        .collect()
}

/// Segments the probe's `v` trace into one to three phases.
pub fn detect_phases(series: &ProbeSeries) -> Result<Vec<Phase>, PhaseError> {
    detect_phases_in(&series.times, &series.v)
}

/// Same as [`detect_phases`] on bare arrays.
pub fn detect_phases_in(t: &[f64], v: &[f64]) -> Result<Vec<Phase>, PhaseError> {
    let n = t.len().min(v.len());
    if n < MIN_SAMPLES {
        return Err(PhaseError::TooShort(n));
    }
    if let Some(k) = (0..n).find(|&k| !t[k].is_finite() || !v[k].is_finite()) {
        return Err(PhaseError::NonFinite(k));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(PhaseError::Unordered);
    }
    let (t, v) = (&t[..n], &v[..n]);
    let rate: Vec<f64> = derivative(t, v).iter().map(|d| d.abs()).collect();
    let peak = rate.iter().copied().fold(0.0, f64::max);
    let scale = v.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    let make = |start: usize, end: usize, label| {
        let mean_rate = rate[start..=end].iter().sum::<f64>() / (end - start + 1) as f64;
        Phase {
            t_start: t[start],
            t_end: t[end],
            label,
            start,
            end,
            mean_rate,
            v_change: v[end] - v[start],
        }
    };
    if peak <= 1e-12 * scale {
        return Ok(vec![make(0, n - 1, PhaseLabel::Slow)]);
    }

    let floor = 1e-12 * peak;
    let log_rate: Vec<f64> = rate.iter().map(|r| (r + floor).log10()).collect();
    let smooth = moving_average(&log_rate, SMOOTHING_WINDOW);

    // Block-average long traces; breakpoints map back to block starts.
    let block = n.div_ceil(MAX_POINTS);
    let reduced: Vec<f64> = smooth
        .chunks(block)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();

    let mut starts = vec![0];
    for k in (2..=3).rev() {
        let Some(s) = segment(&reduced, k, MIN_PHASE_LEN) else { continue };
        let means = piece_means(&reduced, &s);
        if means.windows(2).all(|w| (w[0] - w[1]).abs() >= MIN_SEPARATION) {
            starts = s;
            break;
        }
    }
    let starts: Vec<usize> = starts.iter().map(|s| s * block).collect();

    let mut phases: Vec<Phase> = (0..starts.len())
        .map(|p| {
            // Neighbouring phases share their boundary sample.
            let end = starts.get(p + 1).copied().unwrap_or(n - 1);
            make(starts[p], end, PhaseLabel::Slow)
        })
        .collect();
    let mut order: Vec<usize> = (0..phases.len()).collect();
    order.sort_by(|&a, &b| phases[a].mean_rate.total_cmp(&phases[b].mean_rate));
    let labels = [PhaseLabel::Slow, PhaseLabel::Fast, PhaseLabel::VeryFast];
    for (rank, &p) in order.iter().enumerate() {
        phases[p].label = labels[rank];
    }
    Ok(phases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Piecewise-linear trace with the given slopes and breakpoints.
    fn piecewise(n: usize, dt: f64, slopes: &[f64], breaks: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let mut v = vec![0.0; n];
        for k in 1..n {
            let piece = breaks.iter().filter(|&&b| k > b).count();
            v[k] = v[k - 1] + slopes[piece] * dt;
        }
        (t, v)
    }

    #[test]
    fn constant_series_is_one_slow_phase() {
        let t: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let phases = detect_phases_in(&t, &vec![0.7; 50]).unwrap();
        assert_eq!(phases.len(), 1);
        assert_eq!(phases[0].label, PhaseLabel::Slow);
        assert_eq!((phases[0].t_start, phases[0].t_end), (0.0, 49.0));
    }

    #[test]
    fn single_slope_is_one_phase() {
        let (t, v) = piecewise(200, 0.1, &[2.0], &[]);
        assert_eq!(detect_phases_in(&t, &v).unwrap().len(), 1);
    }

    #[test]
    fn three_slopes_recovered_at_breakpoints() {
        let (t, v) = piecewise(300, 0.1, &[10.0, 1.0, 0.01], &[60, 150]);
        let phases = detect_phases_in(&t, &v).unwrap();
        assert_eq!(phases.len(), 3);
        assert!((phases[1].start as i64 - 60).abs() <= 2, "{phases:?}");
        assert!((phases[2].start as i64 - 150).abs() <= 2, "{phases:?}");
        let labels: Vec<_> = phases.iter().map(|p| p.label).collect();
        assert_eq!(labels, vec![PhaseLabel::VeryFast, PhaseLabel::Fast, PhaseLabel::Slow]);
    }

    #[test]
    fn long_traces_are_compressed_but_still_split() {
        let (t, v) = piecewise(20_000, 0.01, &[10.0, 1.0, 0.01], &[2_000, 9_000]);
        let phases = detect_phases_in(&t, &v).unwrap();
        assert_eq!(phases.len(), 3);
        assert!((phases[1].start as i64 - 2_000).abs() <= 2 * 7);
        assert!((phases[2].start as i64 - 9_000).abs() <= 2 * 7);
    }

    #[test]
    fn two_levels_give_two_phases() {
        let (t, v) = piecewise(100, 1.0, &[1.0, 0.001], &[40]);
        let phases = detect_phases_in(&t, &v).unwrap();
        assert_eq!(phases.len(), 2);
        assert_eq!(phases[0].label, PhaseLabel::Fast);
        assert_eq!(phases[1].label, PhaseLabel::Slow);
    }

    #[test]
    fn input_validation() {
        assert_eq!(detect_phases_in(&[0.0; 5], &[0.0; 5]), Err(PhaseError::TooShort(5)));
        let t = vec![0.0; 12];
        assert_eq!(detect_phases_in(&t, &[1.0; 12]), Err(PhaseError::Unordered));
        let t: Vec<f64> = (0..12).map(|k| k as f64).collect();
        let mut v = vec![1.0; 12];
        v[4] = f64::NAN;
        assert_eq!(detect_phases_in(&t, &v), Err(PhaseError::NonFinite(4)));
    }

    #[test]
    fn segmentation_is_exact_on_clean_steps() {
        let x: Vec<f64> = (0..30).map(|k| if k < 10 { 1.0 } else if k < 22 { 5.0 } else { -2.0 }).collect();
        assert_eq!(segment(&x, 3, 3).unwrap(), vec![0, 10, 22]);
        assert!(segment(&x[..5], 3, 3).is_none());
    }

    proptest! {
        #[test]
        fn phases_tile_the_series(seed in 0u64..500, n in 10usize..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t: Vec<f64> = (0..n).map(|k| k as f64 * 0.5).collect();
            let mut v = vec![0.0; n];
            for k in 1..n {
                v[k] = v[k - 1] + rng.gen_range(-1.0..1.0);
            }
            let phases = detect_phases_in(&t, &v).unwrap();
            prop_assert!((1..=3).contains(&phases.len()));
            prop_assert_eq!(phases[0].start, 0);
            prop_assert_eq!(phases.last().unwrap().end, n - 1);
            for w in phases.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
            let slow = phases.iter().filter(|p| p.label == PhaseLabel::Slow).count();
            prop_assert_eq!(slow, 1);
        }
    }
}
