//! Probability vectors over the 14 channel states, and Gaussian kernel
//! density estimation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::FusedSample;
use crate::{Error, Result, N_CHANNELS};

pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Non-negative weights over `N` states summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    /// Validates and wraps an existing distribution.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("probability vector is empty"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("probabilities must be finite and >= 0"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(ProbVector { probs })
    }

    /// Adds `epsilon` to every weight and renormalises.
    pub fn from_weights(weights: &[f64], epsilon: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("no states"));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and >= 0"));
        }
        let total: f64 = weights.iter().map(|w| w + epsilon).sum();
        if total <= 0.0 {
            return Err(Error::invalid("degenerate distribution; use ε > 0"));
        }
        Ok(ProbVector {
            probs: weights.iter().map(|w| (w + epsilon) / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ProbMode {
    /// Shift by the minimum channel and normalise.
    Normalize,
    /// Shift, smooth along the channel index with a discrete Gaussian, normalise.
    KdeSmoothed { bandwidth: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbConfig {
    pub mode: ProbMode,
    pub epsilon: f64,
}

impl Default for ProbConfig {
    fn default() -> Self {
        ProbConfig {
            mode: ProbMode::Normalize,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

pub fn to_prob(sample: &FusedSample, config: &ProbConfig) -> Result<ProbVector> {
    channels_to_prob(&sample.channels, config)
}

pub fn channels_to_prob(channels: &[f64; N_CHANNELS], config: &ProbConfig) -> Result<ProbVector> {
    if channels.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("channels must be finite"));
    }
    let min = channels.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = channels.iter().map(|v| v - min).collect();
    let weights = match config.mode {
        ProbMode::Normalize => shifted,
        ProbMode::KdeSmoothed { bandwidth } => smooth_states(&shifted, bandwidth)?,
    };
    if config.epsilon == 0.0 && weights.iter().all(|&w| w == 0.0) {
        return Err(Error::invalid("degenerate distribution; use ε > 0"));
    }
    ProbVector::from_weights(&weights, config.epsilon)
}

/// Spreads each state's mass over its neighbours with a discrete Gaussian of
/// the given bandwidth (in state-index units). Mass falling off either end is
/// reflected back, so the total is preserved.
pub fn smooth_states(weights: &[f64], bandwidth: f64) -> Result<Vec<f64>> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!(
            "bandwidth must be > 0, got {bandwidth}"
        )));
    }
    let n = weights.len() as i64;
    let reach = (4.0 * bandwidth).ceil().min(4.0 * n as f64) as i64;
    let taps: Vec<f64> = (-reach..=reach)
        .map(|k| (-(k * k) as f64 / (2.0 * bandwidth * bandwidth)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let mut out = vec![0.0; weights.len()];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (t, k) in taps.iter().zip(-reach..=reach) {
            out[reflect(i as i64 + k, n)] += w * t / norm;
        }
    }
    Ok(out)
}

/// Half-sample symmetric reflection into `0..n` (…, 1, 0 | 0, 1, …, n-1 | n-1, …).
fn reflect(idx: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = idx.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Silverman's rule of thumb, `1.06 · σ̂ · n^(-1/5)` with the Bessel-corrected
/// standard deviation.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(
            "bandwidth selection needs at least 2 values",
        ));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::invalid("values have zero spread"));
    }
    Ok(1.06 * sd * (n as f64).powf(-0.2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityEstimate {
    /// Trapezoid-rule integral over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Gaussian KDE evaluated on `grid`.
pub fn kde_density(values: &[f64], bandwidth: f64, grid: &[f64]) -> Result<DensityEstimate> {
    if values.is_empty() {
        return Err(Error::invalid("no values to estimate a density from"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!(
            "bandwidth must be > 0, got {bandwidth}"
        )));
    }
    if grid
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]).is_none_or(|o| o.is_gt()))
    {
        return Err(Error::invalid("grid must be sorted"));
    }
    let scale = 1.0 / (values.len() as f64 * bandwidth * (2.0 * PI).sqrt());
    let density = grid
        .iter()
        .map(|g| {
            values
                .iter()
                .map(|x| {
                    let u = (g - x) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * scale
        })
        .collect();
    Ok(DensityEstimate {
        grid: grid.to_vec(),
        density,
        bandwidth,
    })
}

/// Evenly spaced grid spanning the data ± 4 bandwidths.
pub fn default_grid(values: &[f64], bandwidth: f64, points: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * bandwidth;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * bandwidth;
    let points = points.max(2);
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from_seed;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn cfg(epsilon: f64) -> ProbConfig {
        ProbConfig {
            mode: ProbMode::Normalize,
            epsilon,
        }
    }

    #[test]
    fn single_mass() {
        let mut ch = [0.0; N_CHANNELS];
        ch[0] = 1.0;
        let p = channels_to_prob(&ch, &cfg(0.0)).unwrap();
        let mut expected = vec![0.0; N_CHANNELS];
        expected[0] = 1.0;
        assert_eq!(p.probs(), expected.as_slice());
    }

    #[test]
    fn equal_channels_give_uniform() {
        let p = channels_to_prob(&[3.3; N_CHANNELS], &cfg(1e-10)).unwrap();
        for v in p.probs() {
            assert!((v - 1.0 / 14.0).abs() < 1e-15);
        }
        let err = channels_to_prob(&[3.3; N_CHANNELS], &cfg(0.0)).unwrap_err();
        assert!(err.to_string().contains("degenerate distribution"));
    }

    #[test]
    fn two_to_one_ratio() {
        let mut ch = [0.0; N_CHANNELS];
        ch[0] = 2.0;
        ch[1] = 1.0;
        let p = channels_to_prob(&ch, &cfg(0.0)).unwrap();
        assert!((p.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(p.probs()[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smoothing_preserves_mass_and_floor() {
        let ch: [f64; N_CHANNELS] = core::array::from_fn(|k| (k * k % 5) as f64);
        let c = ProbConfig {
            mode: ProbMode::KdeSmoothed { bandwidth: 1.5 },
            epsilon: 1e-6,
        };
        let p = channels_to_prob(&ch, &c).unwrap();
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let floor = 1e-6 / (1.0 + 14.0 * 1e-6);
        assert!(p.probs().iter().all(|&v| v >= floor * (1.0 - 1e-12)));

        let w = [0.0, 0.0, 5.0, 0.0, 1.0];
        for bw in [0.3, 1.0, 7.0, 40.0] {
            let s = smooth_states(&w, bw).unwrap();
            assert!((s.iter().sum::<f64>() - 6.0).abs() < 1e-12, "bw {bw}");
        }
    }

    #[test]
    fn reflection_indices() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(10, 5), 0);
    }

    #[test]
    fn silverman_cases() {
        assert!(silverman_bandwidth(&[1.0]).is_err());
        assert!(silverman_bandwidth(&[2.0, 2.0, 2.0]).is_err());

        // closed form: sd 1, n = 100000 -> 1.06 * 100000^-0.2 = 0.106
        let n = 100_000usize;
        let raw: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let sd = (raw.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64).sqrt();
        let values: Vec<f64> = raw.iter().map(|v| v / sd).collect();
        assert!((silverman_bandwidth(&values).unwrap() - 0.106).abs() < 1e-12);

        let base = [0.3, 1.7, -2.0, 4.1, 0.9];
        let h = silverman_bandwidth(&base).unwrap();
        let scaled: Vec<f64> = base.iter().map(|v| v * 3.5).collect();
        assert!((silverman_bandwidth(&scaled).unwrap() - 3.5 * h).abs() < 1e-12);
    }

    #[test]
    fn single_value_density_is_symmetric_and_peaked() {
        let grid: Vec<f64> = (-40..=40).map(|i| 2.0 + i as f64 * 0.05).collect();
        let d = kde_density(&[2.0], 0.4, &grid).unwrap();
        let peak = d
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 40);
        for k in 0..40 {
            assert!((d.density[k] - d.density[80 - k]).abs() < 1e-15);
        }
    }

    #[test]
    fn narrow_two_point_density_integrates_to_one() {
        let h = 0.01;
        let values = [-1.0, 1.0];
        let grid = default_grid(&values, h, 20_001);
        let d = kde_density(&values, h, &grid).unwrap();
        assert!((d.integral() - 1.0).abs() < 1e-3);
        // midway between the bumps the density vanishes
        let mid = d.grid.iter().position(|g| g.abs() < 1e-3).unwrap();
        assert!(d.density[mid] < 1e-12);
    }

    #[test]
    fn silverman_kde_tracks_standard_normal() {
        let mut rng = rng_from_seed(2024);
        let values: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = silverman_bandwidth(&values).unwrap();
        let grid: Vec<f64> = (0..=400).map(|i| -4.0 + 0.02 * i as f64).collect();
        let d = kde_density(&values, h, &grid).unwrap();
        let sup = grid
            .iter()
            .zip(&d.density)
            .map(|(x, f)| (f - (-0.5 * x * x).exp() / (2.0 * PI).sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 0.05, "sup error {sup}");
    }

    #[test]
    fn kde_rejects_bad_input() {
        assert!(kde_density(&[], 1.0, &[0.0]).is_err());
        assert!(kde_density(&[1.0], 0.0, &[0.0]).is_err());
        assert!(kde_density(&[1.0], 1.0, &[1.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn prob_vectors_are_distributions(
            ch in prop::array::uniform14(-50.0f64..50.0),
            eps in prop::sample::select(vec![0.0, 1e-10, 1e-3]),
            smoothed in any::<bool>(),
        ) {
            let mode = if smoothed { ProbMode::KdeSmoothed { bandwidth: 0.8 } } else { ProbMode::Normalize };
            let p = channels_to_prob(&ch, &ProbConfig { mode, epsilon: eps }).unwrap();
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.probs().iter().all(|&v| v >= 0.0));
            if eps > 0.0 {
                prop_assert!(p.probs().iter().all(|&v| v > 0.0));
            }
        }

        #[test]
        fn prob_is_shift_invariant(ch in prop::array::uniform14(-5.0f64..5.0), c in -100.0f64..100.0) {
            let a = channels_to_prob(&ch, &cfg(1e-10)).unwrap();
            let b = channels_to_prob(&ch.map(|v| v + c), &cfg(1e-10)).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                // the shift itself rounds each channel, so compare relative to the range
                prop_assert!((x - y).abs() < 1e-12 * (1.0 + c.abs()));
            }
        }

        #[test]
        fn kde_integrates_to_one(values in prop::collection::vec(-10.0f64..10.0, 2..30), h in 0.05f64..3.0) {
            let grid = default_grid(&values, h, 4001);
            let d = kde_density(&values, h, &grid).unwrap();
            prop_assert!((d.integral() - 1.0).abs() < 1e-3);
        }
    }
}
