//! Parameter estimation: Durbin-Levinson, conditional-sum-of-squares and
//! Whittle ARMA fitting, AIC order selection, and the preliminary rescaled-
//! range estimate of the fractional order d.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::stats;

use super::fracdiff::fracdiff_apply_auto;
use super::simplex::nelder_mead;
use super::{FarimaModel, FitFlags, FitMethod};

const ROOT_MARGIN: f64 = 1e-6;
const PENALTY: f64 = 1e12;

/// Solves the Yule-Walker Toeplitz system for `autocov = [g(0), ..., g(p)]`
/// in O(p^2), returning the AR coefficients and the innovation variance.
pub fn durbin_levinson(autocov: &[f64]) -> Result<(Vec<f64>, f64)> {
    if autocov.is_empty() || autocov[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "autocovariance must start with g(0) > 0".into(),
        ));
    }
    let p = autocov.len() - 1;
    let mut phi: Vec<f64> = Vec::with_capacity(p);
    let mut v = autocov[0];
    for k in 1..=p {
        let mut acc = autocov[k];
        for (j, c) in phi.iter().enumerate() {
            acc -= c * autocov[k - 1 - j];
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
        if !(v > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "autocovariance not positive definite: prediction variance {v} at order {k}"
            )));
        }
    }
    Ok((phi, v))
}

/// Roots of `c_0 + c_1 z + ... + c_n z^n` by Durand-Kerner iteration.
/// Near-zero leading coefficients are trimmed first.
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let mut c: Vec<f64> = coeffs.to_vec();
    while c.len() > 1 && c.last().is_some_and(|v| v.abs() < 1e-12) {
        c.pop();
    }
    let degree = c.len().saturating_sub(1);
    if degree == 0 {
        return Vec::new();
    }
    let lead = c[degree];
    let monic: Vec<f64> = c.iter().map(|v| v / lead).collect();

    let eval = |z: Complex64| -> Complex64 {
        let mut acc = Complex64::ZERO;
        for &coef in monic.iter().rev() {
            acc = acc * z + Complex64::new(coef, 0.0);
        }
        acc
    };

    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..degree).map(|k| seed.powu(k as u32 + 1)).collect();
    for _ in 0..200 {
        let mut max_step = 0.0f64;
        for i in 0..degree {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..degree {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() < 1e-300 {
                continue;
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-13 {
            break;
        }
    }
    roots
}

/// AR polynomial `1 - phi_1 z - ... - phi_p z^p` from coefficients.
pub fn ar_polynomial(phi: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(phi.iter().map(|c| -c)).collect()
}

/// MA polynomial `1 + psi_1 z + ... + psi_q z^q` from coefficients.
pub fn ma_polynomial(psi: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(psi.iter().copied()).collect()
}

/// Smallest root modulus of the polynomial, or infinity for degree 0.
pub fn min_root_modulus(poly: &[f64]) -> f64 {
    polynomial_roots(poly)
        .iter()
        .map(|r| r.norm())
        .fold(f64::INFINITY, f64::min)
}

pub fn is_stationary(phi: &[f64]) -> bool {
    min_root_modulus(&ar_polynomial(phi)) > 1.0 + ROOT_MARGIN
}

pub fn is_invertible(psi: &[f64]) -> bool {
    min_root_modulus(&ma_polynomial(psi)) > 1.0 + ROOT_MARGIN
}

/// Reflects any root of the polynomial lying inside the unit circle to its
/// reciprocal conjugate, preserving realness; returns rebuilt coefficients
/// of the same normalization (constant term 1).
fn reflect_poly(poly: &[f64]) -> Vec<f64> {
    let roots = polynomial_roots(poly);
    if roots.is_empty() {
        return poly.to_vec();
    }
    let reflected: Vec<Complex64> = roots
        .iter()
        .map(|r| {
            if r.norm() >= 1.0 + ROOT_MARGIN {
                return *r;
            }
            let mut out = r.conj().finv();
            let floor = 1.0 + 2.0 * ROOT_MARGIN;
            if out.norm() < floor {
                out *= floor / out.norm().max(1e-12);
            }
            out
        })
        .collect();
    // rebuild product of (1 - z / r_i)
    let mut coef = vec![Complex64::new(1.0, 0.0)];
    for r in &reflected {
        let scale = -(Complex64::new(1.0, 0.0) / r);
        let mut next = vec![Complex64::ZERO; coef.len() + 1];
        for (i, &c) in coef.iter().enumerate() {
            next[i] += c;
            next[i + 1] += c * scale;
        }
        coef = next;
    }
    coef.iter().map(|c| c.re).collect()
}

/// Shrinks coefficients toward a stationary/invertible polynomial via root
/// reflection. Returns (coefficients, was_modified).
fn enforce_outside_unit_circle(coeffs: &[f64], is_ar: bool) -> (Vec<f64>, bool) {
    let poly = if is_ar {
        ar_polynomial(coeffs)
    } else {
        ma_polynomial(coeffs)
    };
    if min_root_modulus(&poly) > 1.0 + ROOT_MARGIN {
        return (coeffs.to_vec(), false);
    }
    let fixed = reflect_poly(&poly);
    let out: Vec<f64> = if is_ar {
        fixed[1..].iter().map(|c| -c).collect()
    } else {
        fixed[1..].to_vec()
    };
    (out, true)
}

/// Conditional sum of squared innovations for demeaned series `w`.
fn css(w: &[f64], phi: &[f64], psi: &[f64]) -> f64 {
    let p = phi.len();
    let q = psi.len();
    let n = w.len();
    let mut errs = vec![0.0; n];
    let mut total = 0.0;
    for t in p..n {
        let mut e = w[t];
        for (j, c) in phi.iter().enumerate() {
            e -= c * w[t - 1 - j];
        }
        for (k, c) in psi.iter().enumerate() {
            if t >= k + 1 {
                e -= c * errs[t - 1 - k];
            }
        }
        if q > 0 {
            errs[t] = e;
        }
        total += e * e;
    }
    total
}

fn unpack(params: &[f64], p: usize, q: usize) -> (&[f64], &[f64]) {
    (&params[..p], &params[p..p + q])
}

/// Fits an ARMA(p, q) model to the series, demeaning internally.
///
/// CSS minimizes the conditional sum of squared innovations with a simplex
/// search started from the Durbin-Levinson pure-AR solution (zeros for MA);
/// Whittle minimizes the profiled spectral objective over Fourier
/// frequencies. Non-stationary or non-invertible parameter vectors are
/// rejected inside the search by a penalty, and the returned model is
/// root-reflected (and flagged) if the optimum still violates the
/// constraints.
pub fn fit_arma(series: &[f64], p: usize, q: usize, method: FitMethod) -> Result<FarimaModel> {
    let n = series.len();
    if n < 10 * (p + q + 1) {
        return Err(Error::InvalidArgument(format!(
            "series length {n} too short for ARMA({p},{q}); need {}",
            10 * (p + q + 1)
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let w: Vec<f64> = series.iter().map(|x| x - mean).collect();

    if p == 0 && q == 0 {
        let sigma2 = w.iter().map(|x| x * x).sum::<f64>() / n as f64;
        if !(sigma2 > 0.0) {
            return Err(Error::ConstantSeries);
        }
        return Ok(FarimaModel {
            p,
            d: 0.0,
            q,
            phi: Vec::new(),
            psi: Vec::new(),
            sigma2_eps: sigma2,
            mean,
            flags: FitFlags::default(),
        });
    }

    // Durbin-Levinson AR start; zeros if the sample autocovariance is degenerate.
    let mut init = vec![0.0; p + q];
    if p > 0 {
        if let Ok(gamma) = stats::autocovariance(&w, p) {
            if let Ok((phi0, _)) = durbin_levinson(&gamma) {
                init[..p].copy_from_slice(&phi0);
            }
        }
    }

    let objective: Box<dyn Fn(&[f64]) -> f64> = match method {
        FitMethod::Css => {
            let w = w.clone();
            Box::new(move |params: &[f64]| {
                let (phi, psi) = unpack(params, p, q);
                if !is_stationary(phi) || !is_invertible(psi) {
                    return PENALTY;
                }
                css(&w, phi, psi)
            })
        }
        FitMethod::Whittle => {
            let (freqs, periodogram) = periodogram(&w);
            Box::new(move |params: &[f64]| {
                let (phi, psi) = unpack(params, p, q);
                if !is_stationary(phi) || !is_invertible(psi) {
                    return PENALTY;
                }
                whittle_objective(&freqs, &periodogram, phi, psi)
            })
        }
    };

    let res = nelder_mead(objective.as_ref(), &init, 0.1, 400 * (p + q), 1e-12);
    let (phi_raw, psi_raw) = unpack(&res.x, p, q);
    let (phi, ar_reflected) = enforce_outside_unit_circle(phi_raw, true);
    let (psi, ma_reflected) = enforce_outside_unit_circle(psi_raw, false);

    let sigma2 = match method {
        FitMethod::Css => css(&w, &phi, &psi) / (n - p) as f64,
        FitMethod::Whittle => {
            let (freqs, pgram) = periodogram(&w);
            whittle_sigma2(&freqs, &pgram, &phi, &psi)
        }
    };
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::FitFailed(format!(
            "innovation variance {sigma2} for ARMA({p},{q})"
        )));
    }

    Ok(FarimaModel {
        p,
        d: 0.0,
        q,
        phi,
        psi,
        sigma2_eps: sigma2,
        mean,
        flags: FitFlags {
            converged: res.converged,
            reflected: ar_reflected || ma_reflected,
            d_clamped: false,
        },
    })
}

/// Periodogram `I(l_j) = |DFT(x)_j|^2 / (2 pi n)` at the positive Fourier
/// frequencies `l_j = 2 pi j / n`, excluding zero and Nyquist.
pub fn periodogram(series: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = series.len();
    let mut buf: Vec<Complex64> = series.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let m = (n - 1) / 2;
    let mut freqs = Vec::with_capacity(m);
    let mut pgram = Vec::with_capacity(m);
    let scale = 1.0 / (2.0 * std::f64::consts::PI * n as f64);
    for j in 1..=m {
        freqs.push(2.0 * std::f64::consts::PI * j as f64 / n as f64);
        pgram.push(buf[j].norm_sqr() * scale);
    }
    (freqs, pgram)
}

/// ARMA spectral shape `|psi(e^{-il})|^2 / |phi(e^{-il})|^2` (the spectral
/// density without its `sigma^2 / 2 pi` factor).
fn spectral_shape(lambda: f64, phi: &[f64], psi: &[f64]) -> f64 {
    let z = Complex64::new(0.0, -lambda).exp();
    let mut ar = Complex64::new(1.0, 0.0);
    let mut zp = Complex64::new(1.0, 0.0);
    for c in phi {
        zp *= z;
        ar -= Complex64::new(*c, 0.0) * zp;
    }
    let mut ma = Complex64::new(1.0, 0.0);
    zp = Complex64::new(1.0, 0.0);
    for c in psi {
        zp *= z;
        ma += Complex64::new(*c, 0.0) * zp;
    }
    ma.norm_sqr() / ar.norm_sqr().max(1e-300)
}

/// Whittle objective with the innovation variance profiled out:
/// `m ln( mean_j I_j / g_j ) + sum_j ln g_j`.
fn whittle_objective(freqs: &[f64], pgram: &[f64], phi: &[f64], psi: &[f64]) -> f64 {
    let m = freqs.len() as f64;
    let mut ratio_sum = 0.0;
    let mut log_sum = 0.0;
    for (l, i_j) in freqs.iter().zip(pgram) {
        let g = spectral_shape(*l, phi, psi);
        ratio_sum += i_j / g;
        log_sum += g.ln();
    }
    m * (ratio_sum / m).ln() + log_sum
}

fn whittle_sigma2(freqs: &[f64], pgram: &[f64], phi: &[f64], psi: &[f64]) -> f64 {
    let m = freqs.len() as f64;
    let ratio_sum: f64 = freqs
        .iter()
        .zip(pgram)
        .map(|(l, i_j)| i_j / spectral_shape(*l, phi, psi))
        .sum();
    2.0 * std::f64::consts::PI * ratio_sum / m
}

/// True when the AR and MA polynomials have a near-common root, i.e. the
/// parameterization is redundant. Such fits reproduce a lower-order model
/// with spurious extra parameters and must not win order selection.
fn has_common_root(phi: &[f64], psi: &[f64]) -> bool {
    if phi.is_empty() || psi.is_empty() {
        return false;
    }
    let ar_roots = polynomial_roots(&ar_polynomial(phi));
    let ma_roots = polynomial_roots(&ma_polynomial(psi));
    ar_roots.iter().any(|a| {
        ma_roots
            .iter()
            .any(|m| (a - m).norm() < 0.05 * (1.0 + a.norm()))
    })
}

/// AIC order selection over the candidate grid `p = q in {0..p_max}` plus
/// pure-AR candidates `(p, 0)`. Redundant (near-common-root) ARMA fits are
/// skipped.
pub fn select_order(series: &[f64], p_max: usize) -> Result<(usize, usize)> {
    if p_max > 5 {
        return Err(Error::InvalidArgument(format!(
            "p_max must be <= 5, got {p_max}"
        )));
    }
    let mut candidates: Vec<(usize, usize)> = (0..=p_max).map(|k| (k, k)).collect();
    candidates.extend((1..=p_max).map(|p| (p, 0)));

    let n = series.len() as f64;
    let mut best: Option<((usize, usize), f64)> = None;
    for (p, q) in candidates {
        let Ok(model) = fit_arma(series, p, q, FitMethod::Css) else {
            continue;
        };
        if has_common_root(&model.phi, &model.psi) {
            continue;
        }
        // common sample count across candidates so AIC values are comparable
        let aic = n * model.sigma2_eps.ln() + 2.0 * (p + q + 1) as f64;
        if best.as_ref().is_none_or(|(_, b)| aic < *b) {
            best = Some(((p, q), aic));
        }
    }
    best.map(|(pq, _)| pq)
        .ok_or_else(|| Error::FitFailed("all candidate orders failed to fit".into()))
}

/// Preliminary fractional order from rescaled-range analysis:
/// `d = H_RS - 1/2`, clamped to [-0.49, 0.49].
///
/// Forecast windows can be as short as 64 samples; below 1280 samples a
/// denser small-block grid keeps at least three usable block sizes.
pub fn estimate_d_preliminary(series: &[f64]) -> Result<f64> {
    if series.len() < 32 {
        return Err(Error::InvalidArgument(format!(
            "series of length {} too short for rescaled-range analysis",
            series.len()
        )));
    }
    let blocks = if series.len() >= 1280 {
        stats::default_block_sizes(series.len())
    } else {
        stats::short_series_block_sizes(series.len())
    };
    let est = stats::rescaled_range_hurst(series, &blocks)?;
    Ok((est.hurst - 0.5).clamp(-0.49, 0.49))
}

/// Composite FARIMA fit: preliminary d by rescaled range (or pinned),
/// fractional differencing, then ARMA on the differenced series.
pub fn fit_farima_with(
    window: &[f64],
    p: usize,
    q: usize,
    method: FitMethod,
    fixed_d: Option<f64>,
) -> Result<FarimaModel> {
    if window.len() < 64 {
        return Err(Error::InvalidArgument(format!(
            "FARIMA window must have >= 64 samples, got {}",
            window.len()
        )));
    }
    let d = match fixed_d {
        Some(d) => {
            if d.abs() >= 0.5 {
                return Err(Error::InvalidArgument(format!(
                    "fractional order must satisfy |d| < 0.5, got {d}"
                )));
            }
            d
        }
        None => estimate_d_preliminary(window)?,
    };
    let d_clamped = fixed_d.is_none() && ((d - 0.49).abs() < 1e-12 || (d + 0.49).abs() < 1e-12);

    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let demeaned: Vec<f64> = window.iter().map(|x| x - mean).collect();
    let differenced = fracdiff_apply_auto(&demeaned, d);

    let mut model = fit_arma(&differenced, p, q, method)?;
    model.d = d;
    model.mean = mean;
    model.flags.d_clamped = d_clamped;
    Ok(model)
}

/// ARIMA fit with integer d in {0, 1} chosen per window: difference when
/// differencing reduces the sample variance.
pub fn fit_arima_with(
    window: &[f64],
    p: usize,
    q: usize,
    method: FitMethod,
    fixed_d: Option<u32>,
) -> Result<FarimaModel> {
    let d = match fixed_d {
        Some(d) => d,
        None => {
            let var = sample_variance(window);
            let diffed: Vec<f64> = window.windows(2).map(|w| w[1] - w[0]).collect();
            if diffed.len() > 2 && sample_variance(&diffed) < var {
                1
            } else {
                0
            }
        }
    };
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let mut model = if d == 0 {
        fit_arma(window, p, q, method)?
    } else {
        let mut series: Vec<f64> = window.iter().map(|x| x - mean).collect();
        for _ in 0..d {
            series = series.windows(2).map(|w| w[1] - w[0]).collect();
        }
        fit_arma(&series, p, q, method)?
    };
    model.d = d as f64;
    model.mean = mean;
    Ok(model)
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}
