//! Coarse labelling of a final density field.
//!
//! Thresholds were set once from seeded runs at 64x64 (t = 60) and 100x100
//! (t = 180) and are not tuned per run. A cell is "high" when `u > 0.7`.

use super::SimState;
use crate::grid::ScalarField;
use std::fmt;

pub const HIGH_LEVEL: f64 = 0.7;
/// Width of the band along the edges used for boundary residue.
pub const BOUNDARY_BAND: usize = 3;

const HOMOGENEOUS_STD: f64 = 0.05;
const EXTINCT_HIGH_FRACTION: f64 = 0.005;
/// Above this share of high cells in the boundary band, a sparse field counts
/// as extinct with boundary residue rather than as a pattern.
const RESIDUE_SHARE: f64 = 0.6;
const RESIDUE_MAX_HIGH_FRACTION: f64 = 0.3;
/// The largest high component must hold this share of all high cells for the
/// field to count as one connected web.
const WEB_SHARE: f64 = 0.5;
const NETWORK_HIGH_FRACTION: f64 = 0.135;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatternOutcome {
    HomogeneousHigh,
    NearExtinction,
    Network,
    DegenerateNetwork,
    Spots,
}

impl PatternOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternOutcome::HomogeneousHigh => "HOMOGENEOUS_HIGH",
            PatternOutcome::NearExtinction => "NEAR_EXTINCTION",
            PatternOutcome::Network => "NETWORK",
            PatternOutcome::DegenerateNetwork => "DEGENERATE_NETWORK",
            PatternOutcome::Spots => "SPOTS",
        }
    }
}

impl fmt::Display for PatternOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutcomeStats {
    pub mean: f64,
    pub std_dev: f64,
    /// Fraction of cells with `u > 0.7`.
    pub high_fraction: f64,
    /// Share of the high cells lying in the boundary band.
    pub boundary_share: f64,
    /// Number of 4-connected components of the high set.
    pub components: usize,
    /// Share of the high cells in the largest component.
    pub largest_share: f64,
}

impl OutcomeStats {
    pub fn of(u: &ScalarField) -> Self {
        let spec = u.spec();
        let (nx, ny) = (spec.nx(), spec.ny());
        let high: Vec<bool> = u.values().iter().map(|&x| x > HIGH_LEVEL).collect();
        let n_high = high.iter().filter(|&&h| h).count();
        let in_band = |k: usize| {
            let (i, j) = (k / nx, k % nx);
            i.min(j).min(ny - 1 - i).min(nx - 1 - j) < BOUNDARY_BAND
        };
        let band_high = (0..high.len()).filter(|&k| high[k] && in_band(k)).count();
        let sizes = component_sizes(&high, nx, ny);
        let share = |c: usize| if n_high == 0 { 0.0 } else { c as f64 / n_high as f64 };
        Self {
            mean: u.mean(),
            std_dev: u.std_dev(),
            high_fraction: n_high as f64 / high.len() as f64,
            boundary_share: share(band_high),
            components: sizes.len(),
            largest_share: share(sizes.iter().copied().max().unwrap_or(0)),
        }
    }
}

/// Sizes of the 4-connected components of `mask`.
fn component_sizes(mask: &[bool], nx: usize, ny: usize) -> Vec<usize> {
    let mut seen = vec![false; mask.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(k) = stack.pop() {
            size += 1;
            let (i, j) = (k / nx, k % nx);
            let mut visit = |m: usize| {
                if mask[m] && !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            };
            if i > 0 {
                visit(k - nx);
            }
            if i + 1 < ny {
                visit(k + nx);
            }
            if j > 0 {
                visit(k - 1);
            }
            if j + 1 < nx {
                visit(k + 1);
            }
        }
        sizes.push(size);
    }
    sizes
}

pub fn classify_stats(st: &OutcomeStats) -> PatternOutcome {
    if st.std_dev < HOMOGENEOUS_STD {
        return if st.mean > HIGH_LEVEL {
            PatternOutcome::HomogeneousHigh
        } else {
            PatternOutcome::NearExtinction
        };
    }
    if st.high_fraction < EXTINCT_HIGH_FRACTION
        || (st.high_fraction < RESIDUE_MAX_HIGH_FRACTION && st.boundary_share >= RESIDUE_SHARE)
    {
        return PatternOutcome::NearExtinction;
    }
    if st.largest_share < WEB_SHARE {
        return PatternOutcome::Spots;
    }
    if st.high_fraction >= NETWORK_HIGH_FRACTION {
        PatternOutcome::Network
    } else {
        PatternOutcome::DegenerateNetwork
    }
}

pub fn classify_outcome(s: &SimState) -> PatternOutcome {
    classify_stats(&OutcomeStats::of(&s.u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn state(u: ScalarField) -> SimState {
        let v = ScalarField::zeros(*u.spec());
        SimState { t: 0.0, u, v }
    }

    #[test]
    fn constant_fields() {
        let spec = GridSpec::square(20).unwrap();
        let one = state(ScalarField::constant(spec, 1.0));
        assert_eq!(classify_outcome(&one), PatternOutcome::HomogeneousHigh);
        let zero = state(ScalarField::zeros(spec));
        assert_eq!(classify_outcome(&zero), PatternOutcome::NearExtinction);
    }

    #[test]
    fn component_counting() {
        // Two blobs and a diagonal pair that is not 4-connected.
        let mask = [
            true, true, false, false, //
            false, false, false, true, //
            false, false, true, false, //
            true, false, false, false,
        ];
        let mut sizes = component_sizes(&mask, 4, 4);
        sizes.sort();
        assert_eq!(sizes, vec![1, 1, 1, 2]);
    }

    #[test]
    fn web_versus_spots_versus_residue() {
        let spec = GridSpec::square(40).unwrap();
        // Grid lines every 8 cells, 2 wide: one connected web.
        let web = ScalarField::from_fn(spec, |i, j| if i % 8 < 2 || j % 8 < 2 { 1.0 } else { 0.0 });
        let st = OutcomeStats::of(&web);
        assert_eq!(st.components, 1);
        assert_eq!(classify_stats(&st), PatternOutcome::Network);

        // Thin web: same topology, fewer high cells.
        let thin = ScalarField::from_fn(spec, |i, j| if i % 20 == 5 || j % 20 == 5 { 1.0 } else { 0.0 });
        assert_eq!(classify_outcome(&state(thin)), PatternOutcome::DegenerateNetwork);

        let spots = ScalarField::from_fn(spec, |i, j| if i % 8 == 4 && j % 8 == 4 { 1.0 } else { 0.0 });
        let st = OutcomeStats::of(&spots);
        assert_eq!(st.components, 25);
        assert_eq!(classify_stats(&st), PatternOutcome::Spots);

        let rim = ScalarField::from_fn(spec, |i, j| if i < 2 || j < 2 || j > 37 { 0.9 } else { 0.01 });
        let st = OutcomeStats::of(&rim);
        assert!(st.boundary_share > 0.99);
        assert_eq!(classify_stats(&st), PatternOutcome::NearExtinction);
    }
}
