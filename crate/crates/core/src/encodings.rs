//! Input representations for the velocity field.
//!
//! The scalar interpolant `z(t)` is fed to the network as an HL-Gauss histogram:
//! a Gaussian `N(z, sigma^2)` integrated over `N` equal bins and renormalized to
//! the support. Integration time `t` is fed through a sin/cos Fourier embedding.
//! Plain scalar variants of both exist for ablations.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default HL-Gauss width as a fraction of the support width. With this value at
/// least 80% of the bins carry mass above [`COVERAGE_THRESHOLD`] for any `z`
/// inside the support.
pub const DEFAULT_SIGMA_FRACTION: f64 = 0.25;

/// Probability above which a bin counts as covered when selecting sigma.
pub const COVERAGE_THRESHOLD: f64 = 1e-6;

pub const DEFAULT_NUM_BINS: usize = 65;

pub const DEFAULT_TIME_DIM: usize = 64;

/// Highest frequency of the default Fourier ladder.
pub const DEFAULT_MAX_FREQUENCY: f64 = 16.0;

/// `Phi(b) - Phi(a)` for `a <= b`, evaluated on whichever tail keeps precision.
/// `erfc(|x| / sqrt 2)`, i.e. twice the tail mass beyond `|x|`.
#[inline]
fn upper_tail2(x: f64) -> f64 {
    libm::erfc(x.abs() * FRAC_1_SQRT_2)
}

/// `Phi(b) - Phi(a)` from the cached tails of both edges, subtracting on the
/// side that avoids cancellation.
#[inline]
fn mass_from_tails(a: f64, b: f64, ta: f64, tb: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (ta - tb)
    } else if b <= 0.0 {
        0.5 * (tb - ta)
    } else {
        1.0 - 0.5 * (ta + tb)
    }
}

/// How sigma is specified: in value units, or relative to the support width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaSpec {
    Absolute(f64),
    FractionOfSupport(f64),
}

impl Default for SigmaSpec {
    fn default() -> Self {
        SigmaSpec::FractionOfSupport(DEFAULT_SIGMA_FRACTION)
    }
}

impl SigmaSpec {
    pub fn resolve(&self, v_min: f64, v_max: f64) -> f64 {
        match *self {
            SigmaSpec::Absolute(s) => s,
            SigmaSpec::FractionOfSupport(f) => f * (v_max - v_min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlGauss {
    num_bins: usize,
    v_min: f64,
    v_max: f64,
    sigma: f64,
}

impl HlGauss {
    pub fn new(num_bins: usize, v_min: f64, v_max: f64, sigma: f64) -> Result<Self> {
        if num_bins < 2 {
            return Err(Error::InvalidParameter(format!(
                "HL-Gauss needs at least 2 bins, got {num_bins}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "HL-Gauss sigma must be positive, got {sigma}"
            )));
        }
        if !(v_min < v_max && v_min.is_finite() && v_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "HL-Gauss support must satisfy v_min < v_max, got [{v_min}, {v_max}]"
            )));
        }
        Ok(Self {
            num_bins,
            v_min,
            v_max,
            sigma,
        })
    }

    /// Support `[q_min - 5% R, q_max + 5% R]` around a value range of width `R`.
    pub fn for_value_range(
        num_bins: usize,
        q_min: f64,
        q_max: f64,
        sigma: SigmaSpec,
    ) -> Result<Self> {
        let (v_min, v_max) = support_for_value_range(q_min, q_max);
        Self::new(num_bins, v_min, v_max, sigma.resolve(v_min, v_max))
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn support(&self) -> (f64, f64) {
        (self.v_min, self.v_max)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn bin_width(&self) -> f64 {
        (self.v_max - self.v_min) / self.num_bins as f64
    }

    /// `N + 1` equally spaced edges from `v_min` to `v_max`.
    pub fn edges(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..=self.num_bins)
            .map(|i| {
                if i == self.num_bins {
                    self.v_max
                } else {
                    self.v_min + w * i as f64
                }
            })
            .collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..self.num_bins)
            .map(|i| self.v_min + w * (i as f64 + 0.5))
            .collect()
    }

    pub fn encode(&self, z: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_bins];
        self.encode_into(z, &mut out);
        out
    }

    /// Writes the `N` bin probabilities of `N(z, sigma^2)` truncated to the support.
    ///
    /// If `z` is so far outside the support that every bin mass underflows, all
    /// mass goes to the nearest boundary bin.
    pub fn encode_into(&self, z: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_bins);
        let w = self.bin_width();
        let inv = 1.0 / self.sigma;
        let mut lo = (self.v_min - z) * inv;
        let mut lo_tail = upper_tail2(lo);
        let mut total = 0.0;
        for (i, slot) in out.iter_mut().enumerate() {
            let edge = if i + 1 == self.num_bins {
                self.v_max
            } else {
                self.v_min + w * (i + 1) as f64
            };
            let hi = (edge - z) * inv;
            let hi_tail = upper_tail2(hi);
            let mass = mass_from_tails(lo, hi, lo_tail, hi_tail);
            *slot = mass;
            total += mass;
            lo = hi;
            lo_tail = hi_tail;
        }
        if total > 0.0 && total.is_finite() {
            for slot in out.iter_mut() {
                *slot /= total;
            }
        } else {
            out.iter_mut().for_each(|s| *s = 0.0);
            let idx = if z >= 0.5 * (self.v_min + self.v_max) {
                self.num_bins - 1
            } else {
                0
            };
            out[idx] = 1.0;
        }
    }

    /// Fraction of bins whose probability exceeds `threshold`.
    pub fn coverage_fraction(&self, z: f64, threshold: f64) -> f64 {
        let probs = self.encode(z);
        probs.iter().filter(|&&p| p > threshold).count() as f64 / self.num_bins as f64
    }

    /// Expected bin center under the encoding.
    pub fn mean(&self, z: f64) -> f64 {
        self.encode(z)
            .iter()
            .zip(self.centers())
            .map(|(p, c)| p * c)
            .sum()
    }
}

/// Encoding support used for a critic whose values lie in `[q_min, q_max]`.
pub fn support_for_value_range(q_min: f64, q_max: f64) -> (f64, f64) {
    let margin = 0.05 * (q_max - q_min);
    (q_min - margin, q_max + margin)
}

/// Sin/cos features `[sin(2 pi f_k t), cos(2 pi f_k t)]_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierTimeEmbedding {
    frequencies: Vec<f64>,
}

impl FourierTimeEmbedding {
    /// Default frequency ladder `f_k = F^((k-1)/(D/2-1))` with `F = 16`: geometric,
    /// starting at 1, and only the endpoints are integers, so `t = 0` and `t = 1`
    /// embed to different vectors.
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "Fourier embedding dimension must be positive and even, got {dim}"
            )));
        }
        let half = dim / 2;
        let frequencies = if half == 1 {
            vec![1.0]
        } else {
            (0..half)
                .map(|k| DEFAULT_MAX_FREQUENCY.powf(k as f64 / (half - 1) as f64))
                .collect()
        };
        Ok(Self { frequencies })
    }

    pub fn with_frequencies(frequencies: Vec<f64>) -> Result<Self> {
        if frequencies.is_empty() || frequencies.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidParameter(
                "Fourier frequencies must be positive and finite".to_string(),
            ));
        }
        Ok(Self { frequencies })
    }

    pub fn dim(&self) -> usize {
        2 * self.frequencies.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn embed(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        let mut out = vec![0.0; self.dim()];
        self.embed_into(t, &mut out);
        Ok(out)
    }

    /// Layout: all sines first, then all cosines.
    pub fn embed_into(&self, t: f64, out: &mut [f64]) {
        let half = self.frequencies.len();
        for (k, &f) in self.frequencies.iter().enumerate() {
            let (s, c) = (2.0 * PI * f * t).sin_cos();
            out[k] = s;
            out[half + k] = c;
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "time must lie in [0, 1], got {t}"
        )))
    }
}

/// Scalar time "embedding" `[t]`, the ablation baseline.
pub fn embed_time_scalar(t: f64) -> Vec<f64> {
    vec![t]
}

/// How the interpolant `z(t)` enters the velocity network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InterpolantEncoding {
    HlGauss(HlGauss),
    /// Raw `z`.
    Scalar,
    /// `z` mapped linearly from `[v_min, v_max]` to `[0, 1]` and clipped.
    NormalizedScalar {
        v_min: f64,
        v_max: f64,
    },
}

impl InterpolantEncoding {
    pub fn dim(&self) -> usize {
        match self {
            InterpolantEncoding::HlGauss(h) => h.num_bins(),
            _ => 1,
        }
    }

    pub fn encode_into(&self, z: f64, out: &mut [f64]) {
        match self {
            InterpolantEncoding::HlGauss(h) => h.encode_into(z, out),
            InterpolantEncoding::Scalar => out[0] = z,
            InterpolantEncoding::NormalizedScalar { v_min, v_max } => {
                out[0] = ((z - v_min) / (v_max - v_min)).clamp(0.0, 1.0)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InterpolantEncoding::HlGauss(_) => "hl-gauss",
            InterpolantEncoding::Scalar => "scalar",
            InterpolantEncoding::NormalizedScalar { .. } => "normalized-scalar",
        }
    }
}

/// How integration time enters the velocity (or BC policy) network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TimeEncoding {
    Fourier(FourierTimeEmbedding),
    Scalar,
}

impl TimeEncoding {
    pub fn dim(&self) -> usize {
        match self {
            TimeEncoding::Fourier(f) => f.dim(),
            TimeEncoding::Scalar => 1,
        }
    }

    /// `t` must already be validated to lie in `[0, 1]`.
    pub fn encode_into(&self, t: f64, out: &mut [f64]) {
        match self {
            TimeEncoding::Fourier(f) => f.embed_into(t, out),
            TimeEncoding::Scalar => out[0] = t,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TimeEncoding::Fourier(_) => "fourier",
            TimeEncoding::Scalar => "scalar",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn symmetric_two_bins() {
        let enc = HlGauss::new(2, 0.0, 1.0, 0.25).unwrap();
        let p = enc.encode(0.5);
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn off_center_two_bins() {
        // Phi via an independent erf (statrs, accurate to ~1e-11).
        let phi = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf(x / 2f64.sqrt()));
        let expected0 = (phi(1.0) - phi(-1.0)) / (phi(3.0) - phi(-1.0));
        let p = HlGauss::new(2, 0.0, 1.0, 0.25).unwrap().encode(0.25);
        assert_relative_eq!(p[0], expected0, epsilon = 1e-10);
        assert_relative_eq!(p[0], 0.8127, epsilon = 5e-5);
        assert_relative_eq!(p[1], 0.1873, epsilon = 5e-5);
    }

    #[test]
    fn delta_limit() {
        let enc = HlGauss::new(10, 0.0, 10.0, 1e-9).unwrap();
        let p = enc.encode(3.5);
        assert_relative_eq!(p[3], 1.0, epsilon = 1e-12);
        assert_eq!(enc.coverage_fraction(3.5, 0.0), 0.1);
    }

    #[test]
    fn far_outside_support_goes_to_boundary() {
        let enc = HlGauss::new(10, 0.0, 10.0, 0.01).unwrap();
        assert_eq!(enc.encode(1e6)[9], 1.0);
        assert_eq!(enc.encode(-1e6)[0], 1.0);
    }

    #[test]
    fn invalid_parameters() {
        assert!(HlGauss::new(1, 0.0, 1.0, 0.1).is_err());
        assert!(HlGauss::new(4, 0.0, 1.0, 0.0).is_err());
        assert!(HlGauss::new(4, 0.0, 1.0, -1.0).is_err());
        assert!(HlGauss::new(4, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn huge_sigma_covers_everything() {
        let enc = HlGauss::new(16, 0.0, 1.0, 1e3).unwrap();
        assert_eq!(enc.coverage_fraction(0.3, 0.0), 1.0);
    }

    #[test]
    fn paper_sigma_on_chain_range() {
        // chain(3, gamma = 0.9): Q in [0, 10]
        let enc = HlGauss::for_value_range(65, 0.0, 10.0, SigmaSpec::Absolute(16.0)).unwrap();
        assert!(enc.coverage_fraction(0.0, COVERAGE_THRESHOLD) >= 0.8);
    }

    #[test]
    fn edges_are_equally_spaced() {
        let enc = HlGauss::new(4, -1.0, 1.0, 0.3).unwrap();
        assert_eq!(enc.edges(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(enc.centers(), vec![-0.75, -0.25, 0.25, 0.75]);
    }

    #[test]
    fn fourier_known_values() {
        let emb = FourierTimeEmbedding::new(64).unwrap();
        assert_eq!(emb.dim(), 64);
        let e0 = emb.embed(0.0).unwrap();
        assert!(e0[..32].iter().all(|&s| s == 0.0));
        assert!(e0[32..].iter().all(|&c| c == 1.0));
        assert_eq!(emb.frequencies()[0], 1.0);
        let q = emb.embed(0.25).unwrap();
        assert_relative_eq!(q[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(q[32], 0.0, epsilon = 1e-15);
        assert!(emb.embed(1.5).is_err());
        assert!(emb.embed(-0.1).is_err());
        assert!(FourierTimeEmbedding::new(3).is_err());
    }

    #[test]
    fn fourier_grid_points_are_distinct() {
        let emb = FourierTimeEmbedding::new(DEFAULT_TIME_DIM).unwrap();
        for k in 1..=16usize {
            let vecs: Vec<Vec<f64>> = (0..=k)
                .map(|i| emb.embed(i as f64 / k as f64).unwrap())
                .collect();
            for i in 0..vecs.len() {
                for j in i + 1..vecs.len() {
                    let d: f64 = vecs[i]
                        .iter()
                        .zip(&vecs[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    assert!(d.sqrt() > 1e-6, "K={k}: t={i}/{k} and t={j}/{k} collide");
                }
            }
        }
    }

    #[test]
    fn scalar_time() {
        assert_eq!(embed_time_scalar(0.0), vec![0.0]);
        assert_eq!(embed_time_scalar(1.0), vec![1.0]);
        assert_eq!(embed_time_scalar(0.5), vec![0.5]);
    }

    #[test]
    fn normalized_scalar_clips() {
        let enc = InterpolantEncoding::NormalizedScalar {
            v_min: -10.0,
            v_max: 10.0,
        };
        let mut out = [0.0];
        enc.encode_into(0.0, &mut out);
        assert_eq!(out[0], 0.5);
        enc.encode_into(50.0, &mut out);
        assert_eq!(out[0], 1.0);
    }

    proptest! {
        #[test]
        fn partition_of_unity(z in -1e4f64..1e4, sigma in 1e-6f64..1e3, n in 2usize..100) {
            let enc = HlGauss::new(n, -5.0, 7.0, sigma).unwrap();
            let p = enc.encode(z);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn mean_is_monotone(z in -20.0f64..20.0, dz in 0.0f64..2.0, sigma in 0.05f64..10.0) {
            let enc = HlGauss::new(33, -10.0, 10.0, sigma).unwrap();
            prop_assert!(enc.mean(z + dz) >= enc.mean(z) - 1e-12);
        }

        #[test]
        fn lipschitz_in_z(z in -12.0f64..12.0, sigma in 0.1f64..10.0) {
            let enc = HlGauss::new(33, -10.0, 10.0, sigma).unwrap();
            let h = 1e-4;
            let a = enc.encode(z);
            let b = enc.encode(z + h);
            let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            // Total variation between two Gaussians is at most h / (sigma sqrt(2 pi)),
            // and truncated renormalization at most doubles it (x2 for the L1 norm).
            prop_assert!(l1 <= 4.0 * h / sigma + 1e-12, "l1 = {l1}");
        }
    }
}
