//! Fractional differencing (1-B)^d as a causal truncated convolution.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Series expansion coefficients of `(1 - k)^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FracDiffCoeffs {
    pub d: f64,
    pub coeffs: Vec<f64>,
}

impl FracDiffCoeffs {
    /// Checks `a_0 = 1` and the product recursion `a_j = a_{j-1} (j-1-d)/j`.
    pub fn validate(&self) -> Result<()> {
        if self.coeffs.first() != Some(&1.0) {
            return Err(Error::InvalidArgument("a_0 must be 1".into()));
        }
        for j in 1..self.coeffs.len() {
            let expected = self.coeffs[j - 1] * ((j - 1) as f64 - self.d) / j as f64;
            if (self.coeffs[j] - expected).abs() > 1e-12 * expected.abs().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "coefficient recursion violated at j = {j}"
                )));
            }
        }
        Ok(())
    }
}

/// Coefficients of `(1 - k)^d` up to length `len`, by the product recursion.
/// Equivalent to the Gamma-ratio form but immune to Gamma overflow at large j.
pub fn fracdiff_coeffs(d: f64, len: usize) -> FracDiffCoeffs {
    let mut coeffs = Vec::with_capacity(len.max(1));
    coeffs.push(1.0);
    for j in 1..len {
        let prev = coeffs[j - 1];
        coeffs.push(prev * ((j - 1) as f64 - d) / j as f64);
    }
    FracDiffCoeffs { d, coeffs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// Direct O(L^2) summation.
    Naive,
    /// FFT convolution, O(L log L).
    Fft,
}

/// Applies `(1 - B)^d` to a series as the causal truncated convolution
/// `y_t = sum_{j=0..t} a_j x_{t-j}`.
pub fn fracdiff_apply(series: &[f64], d: f64, mode: ConvMode) -> Vec<f64> {
    let coeffs = fracdiff_coeffs(d, series.len());
    convolve_causal(series, &coeffs.coeffs, mode)
}

/// Mode chosen by length: FFT pays off past a few hundred samples.
pub fn fracdiff_apply_auto(series: &[f64], d: f64) -> Vec<f64> {
    let mode = if series.len() >= 256 {
        ConvMode::Fft
    } else {
        ConvMode::Naive
    };
    fracdiff_apply(series, d, mode)
}

/// Inverse operator: `(1 - B)^(-d)`, i.e. the same expansion with `-d`.
/// Over a finite causal window the composition with `fracdiff_apply` is the
/// exact identity up to float rounding.
pub fn fracdiff_invert(series: &[f64], d: f64) -> Vec<f64> {
    fracdiff_apply_auto(series, -d)
}

fn convolve_causal(series: &[f64], kernel: &[f64], mode: ConvMode) -> Vec<f64> {
    let n = series.len();
    match mode {
        ConvMode::Naive => (0..n)
            .map(|t| (0..=t).map(|j| kernel[j] * series[t - j]).sum())
            .collect(),
        ConvMode::Fft => {
            if n == 0 {
                return Vec::new();
            }
            let size = (2 * n - 1).next_power_of_two();
            let mut planner = FftPlanner::new();
            let fft = planner.plan_fft_forward(size);
            let ifft = planner.plan_fft_inverse(size);

            let mut a: Vec<Complex64> = kernel
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .chain(std::iter::repeat(Complex64::ZERO))
                .take(size)
                .collect();
            let mut x: Vec<Complex64> = series
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .chain(std::iter::repeat(Complex64::ZERO))
                .take(size)
                .collect();
            fft.process(&mut a);
            fft.process(&mut x);
            for (ai, xi) in a.iter_mut().zip(&x) {
                *ai *= xi;
            }
            ifft.process(&mut a);
            let scale = 1.0 / size as f64;
            a[..n].iter().map(|c| c.re * scale).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::Distribution;

    fn random_series(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| rand_distr::StandardNormal.sample(&mut rng))
            .collect()
    }

    #[test]
    fn coeffs_identity_and_hand_values() {
        let c = fracdiff_coeffs(0.0, 4);
        assert_eq!(c.coeffs, vec![1.0, 0.0, 0.0, 0.0]);

        let c = fracdiff_coeffs(0.5, 3);
        assert!((c.coeffs[0] - 1.0).abs() < 1e-15);
        assert!((c.coeffs[1] + 0.5).abs() < 1e-15);
        assert!((c.coeffs[2] + 0.125).abs() < 1e-15);
        c.validate().unwrap();

        let c = fracdiff_coeffs(1.0, 5);
        assert_eq!(c.coeffs, vec![1.0, -1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn apply_first_difference() {
        let y = fracdiff_apply(&[1.0, 2.0, 4.0], 1.0, ConvMode::Naive);
        assert_eq!(y, vec![1.0, 1.0, 2.0]);
        let y = fracdiff_apply(&[1.0, 2.0, 4.0], 0.0, ConvMode::Fft);
        for (a, b) in y.iter().zip(&[1.0, 2.0, 4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_matches_naive() {
        let x = random_series(4096, 1);
        let naive = fracdiff_apply(&x, 0.3, ConvMode::Naive);
        let fft = fracdiff_apply(&x, 0.3, ConvMode::Fft);
        let max_delta = naive
            .iter()
            .zip(&fft)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_delta < 1e-8, "max delta {max_delta}");
    }

    #[test]
    fn invert_round_trips() {
        let x = random_series(2048, 2);
        let back = fracdiff_invert(&fracdiff_apply_auto(&x, 0.4), 0.4);
        let max_delta = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_delta < 1e-6, "max delta {max_delta}");
    }

    #[test]
    fn invert_is_apply_of_negated_order() {
        let x = random_series(128, 3);
        let inv = fracdiff_invert(&x, 0.25);
        let neg = fracdiff_apply(&x, -0.25, ConvMode::Naive);
        for (a, b) in inv.iter().zip(&neg) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
