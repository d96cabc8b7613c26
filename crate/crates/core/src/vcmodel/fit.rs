use nalgebra::{DMatrix, DVector};

use super::covariance::CovarianceModel;
use super::design::MeanModel;
use super::engine::{spd_inverse, Evaluator};
use super::index::ObservationIndex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative change in the objective below which a step counts as converged.
    pub rel_tol: f64,
    /// Bound on the scaled gradient max-norm at convergence.
    pub grad_tol: f64,
    pub use_rotation: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 1000,
            rel_tol: 1e-8,
            grad_tol: 1e-6,
            use_rotation: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub loglik: f64,
    pub gamma: DVector<f64>,
    pub gamma_cov: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub beta_se: DVector<f64>,
    pub covariance: CovarianceModel,
    pub converged: bool,
    pub iterations: usize,
    pub residual: DVector<f64>,
    /// Log-likelihood after every accepted iteration, starting with the initial point.
    pub trace: Vec<f64>,
    pub grad_max: f64,
}

impl FitResult {
    pub fn sigmas(&self) -> Vec<DMatrix<f64>> {
        self.covariance.sigmas()
    }
}

/// Packs the lower triangle of a factor `L` with `L Lᵀ = sigma`. A singular
/// sigma is nudged by a small ridge so every factor starts strictly inside
/// the cone.
pub fn psd_lower_factor(sigma: &DMatrix<f64>) -> Vec<f64> {
    let t = sigma.nrows();
    let scale = (sigma.trace() / t as f64).abs().max(1e-12);
    let mut ridge = 1e-10 * scale;
    let l = loop {
        if let Some(c) = (sigma + DMatrix::identity(t, t) * ridge).cholesky() {
            break c.l();
        }
        ridge *= 10.0;
    };
    let mut out = Vec::with_capacity(t * (t + 1) / 2);
    for i in 0..t {
        for j in 0..=i {
            // keep a floor on the diagonal so the gradient is not stuck at zero
            out.push(if i == j { l[(i, j)].max(1e-4 * scale.sqrt()) } else { l[(i, j)] });
        }
    }
    out
}

fn unpack(theta: &[f64], t: usize, k: usize) -> Vec<DMatrix<f64>> {
    let per = t * (t + 1) / 2;
    (0..k)
        .map(|c| {
            let mut l = DMatrix::zeros(t, t);
            let mut pos = c * per;
            for i in 0..t {
                for j in 0..=i {
                    l[(i, j)] = theta[pos];
                    pos += 1;
                }
            }
            &l * l.transpose()
        })
        .collect()
}

/// Objective `-loglik` and its gradient in the packed factor parametrization.
fn objective(ev: &Evaluator, theta: &[f64], t: usize, k: usize) -> Option<(f64, Vec<f64>)> {
    let sigmas = unpack(theta, t, k);
    let e = ev.evaluate(&sigmas, true).ok()?;
    if !e.loglik.is_finite() {
        return None;
    }
    let per = t * (t + 1) / 2;
    let mut grad = vec![0.0; theta.len()];
    for (c, g) in e.sigma_gradients.expect("gradient requested").iter().enumerate() {
        let mut l = DMatrix::zeros(t, t);
        let mut pos = c * per;
        for i in 0..t {
            for j in 0..=i {
                l[(i, j)] = theta[pos];
                pos += 1;
            }
        }
        let gl = g * &l * 2.0;
        let mut pos = c * per;
        for i in 0..t {
            for j in 0..=i {
                grad[pos] = -gl[(i, j)];
                pos += 1;
            }
        }
    }
    Some((-e.loglik, grad))
}

fn scaled_grad_max(theta: &[f64], grad: &[f64], f: f64) -> f64 {
    theta
        .iter()
        .zip(grad)
        .map(|(x, g)| (g * x.abs().max(1.0)).abs())
        .fold(0.0, f64::max)
        / f.abs().max(1.0)
}

/// Profile log-likelihood at the sigmas of `cov`, with the fixed effects at
/// their GLS estimate.
pub fn loglikelihood(y: &DVector<f64>, mean: &MeanModel, cov: &CovarianceModel, idx: &ObservationIndex) -> Result<f64> {
    let ev = Evaluator::new(y, &mean.reduced_design(), cov, idx, false)?;
    Ok(ev.evaluate(&cov.sigmas(), false)?.loglik)
}

/// Maximum-likelihood fit of the variance components with the fixed effects
/// profiled out by generalized least squares; BFGS on the packed Cholesky
/// factors of each component's trait covariance, starting from the sigmas
/// in `cov`.
pub fn fit_null(
    y: &DVector<f64>,
    mean: &MeanModel,
    cov: &CovarianceModel,
    idx: &ObservationIndex,
    opts: &FitOptions,
) -> Result<FitResult> {
    mean.check_rank()?;
    cov.validate(idx.n_persons())?;
    if idx.n_rows() <= mean.n_free() {
        return Err(Error::Model(format!(
            "{} observed cells cannot support {} mean parameters",
            idx.n_rows(),
            mean.n_free()
        )));
    }
    let x = mean.reduced_design();
    let ev = Evaluator::new(y, &x, cov, idx, opts.use_rotation)?;
    let t = cov.n_traits();
    let k = cov.components.len();
    let mut theta: Vec<f64> = cov.components.iter().flat_map(|c| psd_lower_factor(&c.sigma)).collect();
    let (mut f, mut g) = objective(&ev, &theta, t, k)
        .ok_or_else(|| Error::Numeric("covariance at the starting values is not positive definite".into()))?;
    let dim = theta.len();
    let mut h = DMatrix::<f64>::identity(dim, dim);
    let mut fresh = true;
    let mut trace = vec![-f];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut p = -(&h * &gv);
        let mut slope = p.dot(&gv);
        if slope >= 0.0 {
            h = DMatrix::identity(dim, dim);
            p = -gv.clone();
            slope = p.dot(&gv);
            fresh = true;
        }
        // cap the first trial so one step cannot leave the region of interest
        let tmax = theta.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let pmax = p.amax();
        let mut alpha = if pmax > tmax { tmax / pmax } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(p.iter()).map(|(a, b)| a + alpha * b).collect();
            if let Some((ft, gt)) = objective(&ev, &trial, t, k) {
                if ft <= f + 1e-4 * alpha * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else {
            if fresh {
                // stalled even along steepest descent
                converged = scaled_grad_max(&theta, &g, f) <= opts.grad_tol * 100.0;
                break;
            }
            h = DMatrix::identity(dim, dim);
            fresh = true;
            continue;
        };
        let s = DVector::from_iterator(dim, trial.iter().zip(&theta).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(dim, gt.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if fresh {
                h = DMatrix::identity(dim, dim) * (sy / yv.dot(&yv));
            }
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        let rel = (f - ft).abs() / f.abs().max(1.0);
        theta = trial;
        f = ft;
        g = gt;
        trace.push(-f);
        if rel < opts.rel_tol && scaled_grad_max(&theta, &g, f) <= opts.grad_tol {
            converged = true;
            break;
        }
    }
    let sigmas = unpack(&theta, t, k);
    let e = ev.evaluate(&sigmas, false)?;
    let gamma_cov = spd_inverse(&e.xtwx)?;
    let beta = &mean.constraint * &e.gamma;
    let beta_cov = &mean.constraint * &gamma_cov * mean.constraint.transpose();
    let beta_se = beta_cov.diagonal().map(|v| v.max(0.0).sqrt());
    let residual = y - &x * &e.gamma;
    Ok(FitResult {
        loglik: e.loglik,
        gamma: e.gamma,
        gamma_cov,
        beta,
        beta_se,
        covariance: cov.with_sigmas(&sigmas),
        converged,
        iterations,
        residual,
        trace,
        grad_max: scaled_grad_max(&theta, &g, f),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vcmodel::covariance::VarianceComponent;

    #[test]
    fn pack_round_trip() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let back = unpack(&psd_lower_factor(&s), 2, 1).remove(0);
        assert!((back - s).abs().max() < 1e-9);
    }

    #[test]
    fn iid_closed_form() {
        // identity-only model: ML variance is the mean squared OLS residual
        let n = 40;
        let y = DVector::from_fn(n, |i, _| ((i * 37 % 11) as f64).sqrt() + 0.1 * i as f64);
        let idx = ObservationIndex::new(n, 1, (0..n).map(|i| vec![i]).collect(), |_, _| true);
        let x = DMatrix::from_fn(n, 2, |i, c| if c == 0 { 1.0 } else { i as f64 });
        let mean = MeanModel::unconstrained(x.clone());
        let cov = CovarianceModel::new(vec![VarianceComponent::environment(DMatrix::from_element(1, 1, 1.0), n)]);
        let opts = FitOptions {
            grad_tol: 1e-10,
            rel_tol: 1e-14,
            ..FitOptions::default()
        };
        let fit = fit_null(&y, &mean, &cov, &idx, &opts).unwrap();
        let beta = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &y;
        let r = &y - &x * &beta;
        let s2 = r.dot(&r) / n as f64;
        assert!((fit.sigmas()[0][(0, 0)] - s2).abs() < 1e-8 * s2);
        assert!((&fit.beta - beta).amax() < 1e-8);
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
    }
}
