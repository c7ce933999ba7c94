//! Derivative-free Nelder-Mead minimization, used by the CSS and Whittle
//! objectives. Deterministic: no randomized restarts.

pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub converged: bool,
}

pub fn nelder_mead<F>(f: F, x0: &[f64], step: f64, max_iter: usize, tol: f64) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(n > 0, "empty parameter vector");
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1e-8 { step * v[i].abs() } else { step };
        let fv = f(&v);
        simplex.push((v, fv));
    }

    let mut converged = false;
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        // f-spread alone is not enough: vertices symmetric around a minimum
        // have equal f while the simplex is still wide.
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if (worst - best).abs() <= tol * (1.0 + best.abs()) && diameter <= 1e-8 {
            converged = true;
            break;
        }

        // centroid of all but the worst
        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }

        let point = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let reflected = point(alpha);
        let f_ref = f(&reflected);
        if f_ref < simplex[0].1 {
            let expanded = point(gamma);
            let f_exp = f(&expanded);
            simplex[n] = if f_exp < f_ref {
                (expanded, f_exp)
            } else {
                (reflected, f_ref)
            };
            continue;
        }
        if f_ref < simplex[n - 1].1 {
            simplex[n] = (reflected, f_ref);
            continue;
        }
        let contracted = point(-rho);
        let f_con = f(&contracted);
        if f_con < simplex[n].1 {
            simplex[n] = (contracted, f_con);
            continue;
        }
        // shrink toward the best vertex
        let best_v = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            for (x, b) in entry.0.iter_mut().zip(&best_v) {
                *x = b + sigma * (*x - b);
            }
            entry.1 = f(&entry.0);
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    SimplexResult {
        x: simplex[0].0.clone(),
        fx: simplex[0].1,
        converged,
    }
}
