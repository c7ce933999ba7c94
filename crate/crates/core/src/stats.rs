//! Second-order self-similarity diagnostics.
//!
//! Provides the autocorrelation function, variance-time and rescaled-range
//! Hurst estimators, the fractional Brownian motion covariance kernel, and an
//! exact fractional Gaussian noise sampler used as the calibration oracle for
//! both estimators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Smallest block used by the default grid. Blocks below this carry a strong
/// finite-sample bias in R/S statistics.
const MIN_BLOCK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HurstMethod {
    RescaledRange,
    VarianceTime,
}

/// Result of a log-log regression Hurst fit.
#[derive(Debug, Clone)]
pub struct HurstEstimate {
    pub hurst: f64,
    pub method: HurstMethod,
    pub block_sizes: Vec<usize>,
    pub regression_r2: f64,
    /// Set when the raw estimate fell outside (0.01, 0.99) and was clamped.
    pub clamped: bool,
}

impl HurstEstimate {
    /// Autocorrelation decay exponent under `H = 1 - beta/2`.
    pub fn beta(&self) -> f64 {
        2.0 - 2.0 * self.hurst
    }

    /// Fractional differencing order under `H = d + 1/2`.
    pub fn d(&self) -> f64 {
        self.hurst - 0.5
    }
}

/// Geometric block-size grid from [`MIN_BLOCK`] to `n / 10` with ratio
/// sqrt(2), i.e. about 6.6 sizes per decade.
pub fn default_block_sizes(n: usize) -> Vec<usize> {
    let max = (n / 10).max(MIN_BLOCK * 2);
    let mut sizes = Vec::new();
    let mut s = MIN_BLOCK as f64;
    while (s.round() as usize) <= max {
        let v = s.round() as usize;
        if sizes.last() != Some(&v) {
            sizes.push(v);
        }
        s *= std::f64::consts::SQRT_2;
    }
    sizes
}

/// Block grid for short series (forecast windows), trading bias for
/// availability: from 4 up to `n / 4`.
pub fn short_series_block_sizes(n: usize) -> Vec<usize> {
    let max = (n / 4).max(8);
    let mut sizes = Vec::new();
    let mut s = 4.0f64;
    while (s.round() as usize) <= max {
        let v = s.round() as usize;
        if sizes.last() != Some(&v) {
            sizes.push(v);
        }
        s *= std::f64::consts::SQRT_2;
    }
    sizes
}

/// Biased (1/n) sample autocorrelation for lags `0..=max_lag`.
///
/// The 1/n normalization keeps the estimated sequence positive semidefinite,
/// which Durbin-Levinson requires downstream.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= max_lag {
        return Err(Error::InvalidArgument(format!(
            "series length {n} must exceed max_lag {max_lag}"
        )));
    }
    let gamma = autocovariance(series, max_lag)?;
    Ok(gamma.iter().map(|g| g / gamma[0]).collect())
}

/// Biased (1/n) sample autocovariance for lags `0..=max_lag`.
pub fn autocovariance(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n == 0 || n <= max_lag {
        return Err(Error::InvalidArgument(format!(
            "series length {n} must exceed max_lag {max_lag}"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let var0: f64 = dev.iter().map(|d| d * d).sum::<f64>() / n as f64;
    if var0 <= 0.0 {
        return Err(Error::ConstantSeries);
    }
    let mut gamma = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let s: f64 = dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum();
        gamma.push(s / n as f64);
    }
    Ok(gamma)
}

fn least_squares_loglog(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

fn clamp_hurst(h: f64) -> (f64, bool) {
    if h <= 0.01 {
        (0.01, true)
    } else if h >= 0.99 {
        (0.99, true)
    } else {
        (h, false)
    }
}

fn validate_blocks(series_len: usize, block_sizes: &[usize]) -> Result<()> {
    if block_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "block sizes must be strictly increasing".into(),
        ));
    }
    match block_sizes.last() {
        None => Err(Error::InvalidArgument("no block sizes".into())),
        Some(&max) if max * 2 > series_len => Err(Error::InvalidArgument(format!(
            "largest block {max} leaves fewer than 2 blocks in {series_len} samples"
        ))),
        _ => Ok(()),
    }
}

/// Variance-time Hurst estimate: slope of `log var(X^(m))` against `log m`
/// gives `-beta`, and `H = 1 - beta/2`.
///
/// The sample variance of the K block means underestimates `var(X^(m))` when
/// the means are positively correlated; under self-similarity the shortfall
/// is exactly `(K^2H - K) / (K(K-1))`, so the fit is iterated twice with that
/// correction plugged in at the current H estimate. For H = 0.5 the
/// correction vanishes.
pub fn variance_time_hurst(series: &[f64], block_sizes: &[usize]) -> Result<HurstEstimate> {
    validate_blocks(series.len(), block_sizes)?;
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    if series.iter().all(|x| (x - mean).abs() < 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::ConstantSeries);
    }

    let mut raw = Vec::new(); // (m, block count, sample variance)
    for &m in block_sizes {
        let k = series.len() / m;
        if k < 2 {
            continue;
        }
        let means: Vec<f64> = (0..k)
            .map(|b| series[b * m..(b + 1) * m].iter().sum::<f64>() / m as f64)
            .collect();
        let mm = means.iter().sum::<f64>() / k as f64;
        let var = means.iter().map(|x| (x - mm) * (x - mm)).sum::<f64>() / (k - 1) as f64;
        if var > 0.0 {
            raw.push((m, k, var));
        }
    }
    if raw.len() < 3 {
        return Err(Error::DegenerateSeries(format!(
            "only {} usable block sizes for variance-time analysis",
            raw.len()
        )));
    }

    let fit = |h_for_correction: Option<f64>| -> (f64, f64) {
        let mut log_m = Vec::with_capacity(raw.len());
        let mut log_var = Vec::with_capacity(raw.len());
        for &(m, k, var) in &raw {
            let corrected = match h_for_correction {
                Some(h) => {
                    let k = k as f64;
                    let tau = ((k.powf(2.0 * h) - k) / (k * (k - 1.0))).min(0.95);
                    var / (1.0 - tau)
                }
                None => var,
            };
            log_m.push((m as f64).ln());
            log_var.push(corrected.ln());
        }
        let (slope, _, r2) = least_squares_loglog(&log_m, &log_var);
        (1.0 - (-slope) / 2.0, r2)
    };

    let (mut hurst, mut r2) = fit(None);
    for _ in 0..2 {
        let (h, r) = fit(Some(hurst.clamp(0.01, 0.99)));
        hurst = h;
        r2 = r;
    }
    let (hurst, clamped) = clamp_hurst(hurst);
    Ok(HurstEstimate {
        hurst,
        method: HurstMethod::VarianceTime,
        block_sizes: raw.iter().map(|&(m, _, _)| m).collect(),
        regression_r2: r2,
        clamped,
    })
}

/// Classical rescaled-range Hurst estimate: for each block size, average
/// R/S over non-overlapping blocks, then regress `log(R/S)` on `log n`.
pub fn rescaled_range_hurst(series: &[f64], block_sizes: &[usize]) -> Result<HurstEstimate> {
    validate_blocks(series.len(), block_sizes)?;

    let mut log_n = Vec::new();
    let mut log_rs = Vec::new();
    let mut used = Vec::new();
    for &m in block_sizes {
        let k = series.len() / m;
        if k < 1 {
            continue;
        }
        let mut rs_sum = 0.0;
        let mut rs_count = 0usize;
        for b in 0..k {
            let block = &series[b * m..(b + 1) * m];
            let bm = block.iter().sum::<f64>() / m as f64;
            let mut cum = 0.0;
            let mut max = f64::NEG_INFINITY;
            let mut min = f64::INFINITY;
            let mut ss = 0.0;
            for &x in block {
                let d = x - bm;
                cum += d;
                max = max.max(cum);
                min = min.min(cum);
                ss += d * d;
            }
            let s = (ss / (m - 1) as f64).sqrt();
            if s > 0.0 {
                rs_sum += (max - min) / s;
                rs_count += 1;
            }
        }
        if rs_count > 0 && rs_sum > 0.0 {
            log_n.push((m as f64).ln());
            log_rs.push((rs_sum / rs_count as f64).ln());
            used.push(m);
        }
    }
    if used.len() < 3 {
        return Err(Error::DegenerateSeries(format!(
            "only {} usable block sizes for rescaled-range analysis",
            used.len()
        )));
    }
    let (slope, _, r2) = least_squares_loglog(&log_n, &log_rs);
    let (hurst, clamped) = clamp_hurst(slope);
    Ok(HurstEstimate {
        hurst,
        method: HurstMethod::RescaledRange,
        block_sizes: used,
        regression_r2: r2,
        clamped,
    })
}

/// Fractional Brownian motion covariance
/// `cov(B_H(s), B_H(t)) = (s^2H + t^2H - |s-t|^2H) / 2`.
pub fn fbm_covariance(s: f64, t: f64, hurst: f64) -> f64 {
    debug_assert!(s >= 0.0 && t >= 0.0 && hurst > 0.0 && hurst < 1.0);
    let two_h = 2.0 * hurst;
    0.5 * (s.powf(two_h) + t.powf(two_h) - (s - t).abs().powf(two_h))
}

/// Autocovariance of unit-step fBm increments at integer lag `k`, derived
/// from [`fbm_covariance`].
pub fn fgn_autocovariance(k: usize, hurst: f64) -> f64 {
    let k = k as f64;
    // cov(B(k+1)-B(k), B(1)-B(0)) with B(0) = 0
    fbm_covariance(k + 1.0, 1.0, hurst) - fbm_covariance(k, 1.0, hurst)
}

/// Exact fractional Gaussian noise of length `n`.
///
/// Samples the zero-mean Gaussian vector with Toeplitz covariance
/// `gamma(k) = (|k+1|^2H - 2|k|^2H + |k-1|^2H) / 2` by progressively
/// factorizing that covariance matrix: the innovations form of the
/// Durbin-Levinson recursion yields the conditional mean and variance of
/// each coordinate given its predecessors, which is the LDL^T factorization
/// applied row by row in O(n) memory.
pub fn fgn_oracle(n: usize, hurst: f64, seed: u64) -> Result<Vec<f64>> {
    if n == 0 || n > (1 << 15) {
        return Err(Error::InvalidArgument(format!(
            "fgn length must be in 1..=2^15, got {n}"
        )));
    }
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "hurst must be in (0, 1), got {hurst}"
        )));
    }
    let gamma: Vec<f64> = (0..n).map(|k| fgn_autocovariance(k, hurst)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut x = Vec::with_capacity(n);
    let z0: f64 = normal.sample(&mut rng);
    x.push(gamma[0].sqrt() * z0);

    // phi holds the prediction coefficients of the current order.
    let mut phi: Vec<f64> = Vec::with_capacity(n);
    let mut v = gamma[0];
    for k in 1..n {
        let mut acc = gamma[k];
        for (j, p) in phi.iter().enumerate() {
            acc -= p * gamma[k - 1 - j];
        }
        let kappa = acc / v;
        let len = phi.len();
        let half = len / 2;
        for j in 0..half {
            let a = phi[j];
            let b = phi[len - 1 - j];
            phi[j] = a - kappa * b;
            phi[len - 1 - j] = b - kappa * a;
        }
        if len % 2 == 1 {
            phi[half] -= kappa * phi[half];
        }
        phi.push(kappa);
        v *= 1.0 - kappa * kappa;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::CovarianceFactorization {
                hurst,
                n,
                msg: format!("innovation variance {v} at step {k}"),
            });
        }
        let mut mean = 0.0;
        for (j, p) in phi.iter().enumerate() {
            mean += p * x[k - 1 - j];
        }
        let z: f64 = normal.sample(&mut rng);
        x.push(mean + v.sqrt() * z);
    }
    Ok(x)
}
