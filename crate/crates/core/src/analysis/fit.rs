//! Weighted nonlinear least squares for the peak-shape fits: a small
//! Levenberg-Marquardt loop with a numerical Jacobian, plus the Gaussian
//! and exponentially modified Gaussian models used on count histograms.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("fit did not converge after {iterations} iterations (chi2 {chi2})")]
    NoConvergence { iterations: usize, chi2: f64 },
    #[error("singular normal equations")]
    Singular,
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// 1σ errors from the curvature of the normal equations.
    pub errors: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, FitError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(FitError::Singular);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    Ok((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn invert(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, FitError> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve(a.to_vec(), e)?);
    }
    let mut inv = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            inv[i][j] = cols[j][i];
        }
    }
    Ok(inv)
}

/// Minimize Σ w_i (y_i − f(p, x_i))² over p, with differentiation scales
/// taken from the initial guess (or the x scale where the guess is 0).
pub fn levenberg_marquardt<F>(
    model: F,
    x: &[f64],
    y: &[f64],
    weights: &[f64],
    init: &[f64],
) -> Result<FitResult, FitError>
where
    F: Fn(&[f64], f64) -> f64,
{
    let x_scale = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64)
        .sqrt()
        .max(1e-12);
    let scales: Vec<f64> = init
        .iter()
        .map(|&p| if p != 0.0 { p.abs() } else { x_scale })
        .collect();
    levenberg_marquardt_scaled(model, x, y, weights, init, &scales)
}

/// As [`levenberg_marquardt`], with an explicit characteristic magnitude per
/// parameter. Parameters of mixed physical dimension (counts vs seconds)
/// need this to keep the numerical Jacobian meaningful when a parameter
/// passes through 0.
pub fn levenberg_marquardt_scaled<F>(
    model: F,
    x: &[f64],
    y: &[f64],
    weights: &[f64],
    init: &[f64],
    scales: &[f64],
) -> Result<FitResult, FitError>
where
    F: Fn(&[f64], f64) -> f64,
{
    assert_eq!(x.len(), y.len());
    assert_eq!(x.len(), weights.len());
    let n_params = init.len();
    assert_eq!(n_params, scales.len());
    if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(FitError::Degenerate("non-positive parameter scale".into()));
    }
    if x.len() < n_params {
        return Err(FitError::Degenerate(format!(
            "{} points for {} parameters",
            x.len(),
            n_params
        )));
    }
    let chi2_of = |p: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .zip(weights)
            .map(|((&xi, &yi), &wi)| {
                let r = yi - model(p, xi);
                wi * r * r
            })
            .sum()
    };
    let mut params = init.to_vec();
    let mut chi2 = chi2_of(&params);
    let mut lambda = 1e-3;
    let max_iter = 300;
    let mut ever_improved = false;
    let mut jtj = vec![vec![0.0; n_params]; n_params];
    for iteration in 0..max_iter {
        // numerical Jacobian
        let mut jac = vec![vec![0.0; n_params]; x.len()];
        for j in 0..n_params {
            let step = 1e-7 * params[j].abs().max(scales[j]);
            let mut plus = params.clone();
            plus[j] += step;
            let mut minus = params.clone();
            minus[j] -= step;
            for (i, &xi) in x.iter().enumerate() {
                jac[i][j] = (model(&plus, xi) - model(&minus, xi)) / (2.0 * step);
            }
        }
        for r in jtj.iter_mut() {
            r.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut jtr = vec![0.0; n_params];
        for (i, &xi) in x.iter().enumerate() {
            let resid = y[i] - model(&params, xi);
            for j in 0..n_params {
                jtr[j] += weights[i] * jac[i][j] * resid;
                for k in j..n_params {
                    jtj[j][k] += weights[i] * jac[i][j] * jac[i][k];
                }
            }
        }
        for j in 0..n_params {
            for k in 0..j {
                jtj[j][k] = jtj[k][j];
            }
        }
        // equilibrate: parameters span wildly different scales (counts vs
        // nanoseconds), so solve in units of the diagonal
        let scale: Vec<f64> = (0..n_params).map(|j| jtj[j][j].max(0.0).sqrt()).collect();
        if scale.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            // the solution itself can be degenerate, e.g. a zero-amplitude
            // peak makes its shape parameters unconstrained
            if ever_improved {
                return Ok(FitResult {
                    errors: vec![f64::NAN; n_params],
                    params,
                    chi2,
                    iterations: iteration + 1,
                });
            }
            return Err(FitError::Singular);
        }
        let mut corr = vec![vec![0.0; n_params]; n_params];
        for j in 0..n_params {
            for k in 0..n_params {
                corr[j][k] = jtj[j][k] / (scale[j] * scale[k]);
            }
        }
        let rhs: Vec<f64> = (0..n_params).map(|j| jtr[j] / scale[j]).collect();
        let finish = |params: Vec<f64>, chi2: f64, iterations: usize| -> Result<FitResult, FitError> {
            let errors = match invert(&corr) {
                Ok(cov) => (0..n_params)
                    .map(|j| cov[j][j].max(0.0).sqrt() / scale[j])
                    .collect(),
                Err(_) => vec![f64::NAN; n_params],
            };
            Ok(FitResult {
                errors,
                params,
                chi2,
                iterations,
            })
        };
        let mut improved = false;
        for _ in 0..12 {
            let mut damped = corr.clone();
            for d in damped.iter_mut().enumerate() {
                d.1[d.0] += lambda;
            }
            let Ok(delta) = solve(damped, rhs.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params
                .iter()
                .zip(&delta)
                .zip(&scale)
                .map(|((p, d), s)| p + d / s)
                .collect();
            let trial_chi2 = chi2_of(&trial);
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let rel = (chi2 - trial_chi2) / chi2.max(1e-300);
                params = trial;
                chi2 = trial_chi2;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                ever_improved = true;
                if rel < 1e-10 {
                    return finish(params, chi2, iteration + 1);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // stuck in a flat region; accept the current minimum
            return finish(params, chi2, iteration + 1);
        }
    }
    Err(FitError::NoConvergence {
        iterations: max_iter,
        chi2,
    })
}

/// Gaussian bump, no normalization: amp·exp(−(x−mean)²/2σ²).
pub fn gaussian(amp: f64, mean: f64, sigma: f64, x: f64) -> f64 {
    let z = (x - mean) / sigma;
    amp * (-0.5 * z * z).exp()
}

/// Exponentially modified Gaussian with location `mu`, width `sigma` and
/// tail constant `tau`, scaled to `amp` times the unit-area shape.
pub fn emg(amp: f64, mu: f64, sigma: f64, tau: f64, x: f64) -> f64 {
    let tau = tau.max(1e-15);
    let lambda = 1.0 / tau;
    let u = mu - x;
    let b = (u + lambda * sigma * sigma) / (std::f64::consts::SQRT_2 * sigma);
    let val = if b < 5.0 {
        let a = lambda * u + 0.5 * lambda * lambda * sigma * sigma;
        a.exp() * statrs::function::erf::erfc(b)
    } else {
        // exp(a)·erfc(b) with a − b² = −u²/2σ² exactly, avoiding the
        // cancellation of the two huge exponents; erfc by its asymptotic series
        let z = u / sigma;
        let b2 = b * b;
        (-0.5 * z * z).exp() / (b * std::f64::consts::PI.sqrt())
            * (1.0 - 0.5 / b2 + 0.75 / (b2 * b2))
    };
    amp * 0.5 * lambda * val
}
