//! Step-size bounds and variance terms of the FedAvg and PropFair
//! convergence theorems, plus empirical estimators for their inputs.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::FederatedDataset;
use crate::error::{domain, Error, Result};
use crate::model::{ball_point, loss_and_gradient};
use crate::scalar::Scalar;
use crate::scalarize::check_simplex;
use crate::ModelParams;

fn check_positive<T: Scalar>(x: T, name: &str) -> Result<()> {
    if x > T::zero() && x.is_finite() {
        Ok(())
    } else {
        domain(format!("{name} must be positive, got {x}"))
    }
}

fn check_nonneg<T: Scalar>(x: T, name: &str) -> Result<()> {
    if x >= T::zero() && x.is_finite() {
        Ok(())
    } else {
        domain(format!("{name} must be nonnegative, got {x}"))
    }
}

fn check_steps<T: Scalar>(p: &[T], k: &[usize]) -> Result<()> {
    check_simplex(p, "client")?;
    if p.len() != k.len() {
        return Err(Error::LengthMismatch(format!(
            "{} weights vs {} step counts",
            p.len(),
            k.len()
        )));
    }
    if k.contains(&0) {
        return domain("every client needs at least one local step");
    }
    Ok(())
}

fn e_minus_2<T: Scalar>() -> T {
    T::E() - T::lit(2.0)
}

fn sum_sq<T: Scalar>(p: &[T]) -> T {
    p.iter().map(|&x| x * x).sum()
}

fn sum_pow<T: Scalar>(k: &[usize], e: i32) -> T {
    k.iter().map(|&x| T::lit(x as f64).powi(e)).sum()
}

fn min_local<T: Scalar>(l: T, k: &[usize]) -> T {
    let k_max = k.iter().copied().max().unwrap_or(1);
    (T::lit(6.0) * l * T::lit(k_max as f64)).recip()
}

/// Largest local step size covered by the FedAvg descent theorem:
/// `min(min_i 1/(6 L K_i), (1/L) sqrt(1 / (24 (e-2) sum p_i^2 sum K_i^4)))`.
pub fn lr_bound_fedavg<T: Scalar>(l: T, p: &[T], k: &[usize]) -> Result<T> {
    check_positive(l, "L")?;
    check_steps(p, k)?;
    let global = l.recip()
        * (T::lit(24.0) * e_minus_2::<T>() * sum_sq(p) * sum_pow::<T>(k, 4))
            .recip()
            .sqrt();
    Ok(min_local(l, k).min(global))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropFairBound<T> {
    pub eta_max: T,
    /// Smoothness of the PropFair objective, `(4/M^2)(1.5 M L + L0^2)`.
    pub l_tilde: T,
}

/// Step-size bound of the PropFair descent theorem.
pub fn lr_bound_propfair<T: Scalar>(
    m: T,
    l: T,
    l0: T,
    p: &[T],
    k: &[usize],
) -> Result<PropFairBound<T>> {
    check_positive(m, "M")?;
    check_positive(l, "L")?;
    check_positive(l0, "L0")?;
    check_steps(p, k)?;
    let l_tilde = T::lit(4.0) / (m * m) * (T::lit(1.5) * m * l + l0 * l0);
    let global = (T::lit(8.0) * l_tilde).recip()
        * (e_minus_2::<T>() * sum_sq(p) * sum_pow::<T>(k, 4))
            .recip()
            .sqrt();
    Ok(PropFairBound {
        eta_max: min_local(l_tilde, k).min(global),
        l_tilde,
    })
}

/// Inputs of the variance terms; `batch` is the minibatch size `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VarianceInputs<T> {
    FedAvg {
        eta: T,
        p: Vec<T>,
        k: Vec<usize>,
        batch: usize,
        l: T,
        sigma: T,
        sigma_i: Vec<T>,
    },
    PropFair {
        eta: T,
        p: Vec<T>,
        k: Vec<usize>,
        batch: usize,
        baseline: T,
        l: T,
        l0: T,
        sigma: T,
        sigma_i: Vec<T>,
        sigma0: T,
        sigma0_i: Vec<T>,
    },
}

fn check_variances<T: Scalar>(name: &str, v: &[T], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{name}: {} entries for {n} clients",
            v.len()
        )));
    }
    v.iter().try_for_each(|&x| check_nonneg(x, name))
}

/// Variance term `Psi_sigma` (FedAvg) or `Psi~_sigma` (PropFair).
///
/// PropFair rescales the inputs first:
/// `s~_i^2 = (8/M^4)(9 M^2 s_i^2 + 4 L0^2 s0_i^2)` and `s~ = (4/M)(1.5 s + L0 s0 / M)`.
pub fn variance_terms<T: Scalar>(inputs: &VarianceInputs<T>) -> Result<T> {
    let em2 = e_minus_2::<T>();
    match inputs {
        VarianceInputs::FedAvg {
            eta,
            p,
            k,
            batch,
            l,
            sigma,
            sigma_i,
        } => {
            let (eta, l, sigma) = (*eta, *l, *sigma);
            check_steps(p, k)?;
            check_nonneg(eta, "eta")?;
            check_positive(l, "L")?;
            check_nonneg(sigma, "sigma")?;
            check_variances("sigma_i", sigma_i, p.len())?;
            if *batch == 0 {
                return domain("batch size must be positive");
            }
            let m = T::lit(*batch as f64);
            let s2 = sigma * sigma;
            let mut first = T::zero();
            let mut second = T::zero();
            for (&ki, &si) in k.iter().zip(sigma_i) {
                let kf = T::lit(ki as f64);
                let si2 = si * si;
                first = first + kf * kf * (l * eta * si2 / (T::lit(2.0) * m) + s2);
                second = second + kf.powi(3) * (si2 / m + T::lit(6.0) * kf * s2);
            }
            Ok(eta * sum_sq(p) * (first + em2 * eta * eta * l * l * second))
        }
        VarianceInputs::PropFair {
            eta,
            p,
            k,
            batch,
            baseline,
            l,
            l0,
            sigma,
            sigma_i,
            sigma0,
            sigma0_i,
        } => {
            let (eta, big_m, l, l0, sigma, sigma0) = (*eta, *baseline, *l, *l0, *sigma, *sigma0);
            check_steps(p, k)?;
            check_nonneg(eta, "eta")?;
            check_nonneg(sigma, "sigma")?;
            check_nonneg(sigma0, "sigma0")?;
            check_variances("sigma_i", sigma_i, p.len())?;
            check_variances("sigma0_i", sigma0_i, p.len())?;
            if *batch == 0 {
                return domain("batch size must be positive");
            }
            let l_tilde = lr_bound_propfair(big_m, l, l0, p, k)?.l_tilde;
            let m = T::lit(*batch as f64);
            let st = T::lit(4.0) / big_m * (T::lit(1.5) * sigma + l0 * sigma0 / big_m);
            let st2 = st * st;
            let m2 = big_m * big_m;
            let mut first = T::zero();
            let mut second = T::zero();
            for ((&ki, &si), &s0i) in k.iter().zip(sigma_i).zip(sigma0_i) {
                let kf = T::lit(ki as f64);
                let sti2 = T::lit(8.0) / (m2 * m2)
                    * (T::lit(9.0) * m2 * si * si + T::lit(4.0) * l0 * l0 * s0i * s0i);
                first = first + kf * kf * (sti2 / m + T::lit(2.0) * st2);
                second = second + kf.powi(4) * (sti2 / m + st2);
            }
            Ok(eta
                * sum_sq(p)
                * (first + T::lit(16.0) * em2 * eta * eta * l_tilde * l_tilde * second))
        }
    }
}

/// Empirical noise and heterogeneity levels.
///
/// `sigma_i^2` is the per-sample gradient variance on client `i`, `sigma` the
/// largest deviation `||grad f_i - grad F||`; `sigma0_i`, `sigma0` are the
/// same quantities for loss values. Each is a maximum over the probe points,
/// hence a lower bound on the constant it estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimates {
    pub sigma: f64,
    pub sigma_i: Vec<f64>,
    pub sigma0: f64,
    pub sigma0_i: Vec<f64>,
}

struct ClientMoments {
    mean_loss: f64,
    mean_grad: Vec<f64>,
    grad_var: f64,
    loss_var: f64,
}

fn client_moments(model: &ModelParams, train: &[crate::Sample]) -> Result<ClientMoments> {
    let n = train.len() as f64;
    let per_sample: Vec<(f64, Vec<f64>)> = train
        .iter()
        .map(|s| loss_and_gradient(model, std::slice::from_ref(s)))
        .collect::<Result<_>>()?;
    let dim = model.theta().len();
    let mut mean_grad = vec![0.0; dim];
    let mut mean_loss = 0.0;
    for (l, g) in &per_sample {
        mean_loss += l / n;
        for (m, x) in mean_grad.iter_mut().zip(g) {
            *m += x / n;
        }
    }
    let mut grad_var = 0.0;
    let mut loss_var = 0.0;
    for (l, g) in &per_sample {
        grad_var += g
            .iter()
            .zip(&mean_grad)
            .map(|(x, m)| (x - m).powi(2))
            .sum::<f64>()
            / n;
        loss_var += (l - mean_loss).powi(2) / n;
    }
    Ok(ClientMoments {
        mean_loss,
        mean_grad,
        grad_var,
        loss_var,
    })
}

/// Estimates [`SigmaEstimates`] over `probes` points drawn uniformly from the
/// `radius`-ball around `center`.
pub fn estimate_sigmas<R: Rng + ?Sized>(
    fd: &FederatedDataset,
    center: &ModelParams,
    probes: usize,
    radius: f64,
    rng: &mut R,
) -> Result<SigmaEstimates> {
    fd.validate_for_training()?;
    if probes == 0 {
        return domain("need at least one probe point");
    }
    check_nonneg(radius, "radius")?;
    let p = fd.weights();
    let n = fd.n_clients();
    let mut est = SigmaEstimates {
        sigma: 0.0,
        sigma_i: vec![0.0; n],
        sigma0: 0.0,
        sigma0_i: vec![0.0; n],
    };
    for _ in 0..probes {
        let off: Vec<f64> = ball_point(center.theta().len(), radius, rng);
        let probe = center.with_theta(
            center
                .theta()
                .iter()
                .zip(&off)
                .map(|(c, o)| c + o)
                .collect(),
        )?;
        let moments: Vec<ClientMoments> = fd
            .clients
            .par_iter()
            .map(|c| client_moments(&probe, &c.train))
            .collect::<Result<_>>()?;
        let mut global_grad = vec![0.0; probe.theta().len()];
        let mut global_loss = 0.0;
        for (mo, &w) in moments.iter().zip(&p) {
            global_loss += w * mo.mean_loss;
            for (g, x) in global_grad.iter_mut().zip(&mo.mean_grad) {
                *g += w * x;
            }
        }
        for (i, mo) in moments.iter().enumerate() {
            est.sigma_i[i] = est.sigma_i[i].max(mo.grad_var.sqrt());
            est.sigma0_i[i] = est.sigma0_i[i].max(mo.loss_var.sqrt());
            let dev = mo
                .mean_grad
                .iter()
                .zip(&global_grad)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            est.sigma = est.sigma.max(dev);
            est.sigma0 = est.sigma0.max((mo.mean_loss - global_loss).abs());
        }
    }
    Ok(est)
}
