//! Scalarized fairness objectives for federated learning.
//!
//! Each objective maps the vector of client losses `f` to a scalar through a
//! surrogate `phi` and simplex weights `p`:
//!
//! ```text
//! A_phi(f) = phi^-1( sum_i p_i phi(f_i) )
//! ```
//!
//! | objective | phi(t)                | dual weights lambda_i          |
//! |-----------|-----------------------|--------------------------------|
//! | FedAvg    | t                     | p_i                            |
//! | q-FFL     | t^(q+1) / (q+1)       | prop. p_i f_i^q                |
//! | TERM      | exp(alpha t)          | prop. p_i exp(alpha f_i)       |
//! | PropFair  | -log_[eps](M - t)     | prop. p_i / (M - f_i)          |
//!
//! The dual weights solve the inner maximization of the conjugate form
//! `A_phi(f) = max_lambda lambda^T f - A*_phi(lambda)`, so every objective is
//! FedAvg with a re-weighted client mixture. All means and products are
//! evaluated in log space.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scalar::{log_sum_exp, xlogy, Scalar};

/// `M - f` below this value is reported as singular instead of producing inf.
pub const SINGULAR_GUARD: f64 = 1e-12;

/// Which fairness surrogate is applied to per-batch losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ScalarizerSpec<T> {
    FedAvg,
    #[serde(rename = "QFFL")]
    QFfl {
        q: T,
    },
    #[serde(rename = "TERM")]
    Term {
        alpha: T,
    },
    PropFair {
        baseline: T,
        epsilon: T,
    },
}

impl<T: Scalar> ScalarizerSpec<T> {
    pub fn qffl(q: T) -> Result<Self> {
        let s = ScalarizerSpec::QFfl { q };
        s.validate()?;
        Ok(s)
    }

    pub fn term(alpha: T) -> Result<Self> {
        let s = ScalarizerSpec::Term { alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn prop_fair(baseline: T, epsilon: T) -> Result<Self> {
        let s = ScalarizerSpec::PropFair { baseline, epsilon };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScalarizerSpec::FedAvg => Ok(()),
            ScalarizerSpec::QFfl { q } => {
                if q.is_finite() && q >= T::zero() {
                    Ok(())
                } else {
                    domain(format!("q-FFL requires q >= 0, got {q}"))
                }
            }
            ScalarizerSpec::Term { alpha } => {
                if alpha.is_finite() && alpha > T::zero() {
                    Ok(())
                } else {
                    domain(format!("TERM requires alpha > 0, got {alpha}"))
                }
            }
            ScalarizerSpec::PropFair { baseline, epsilon } => check_huber_params(baseline, epsilon),
        }
    }

    /// Short lowercase name used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            ScalarizerSpec::FedAvg => "fedavg",
            ScalarizerSpec::QFfl { .. } => "qffl",
            ScalarizerSpec::Term { .. } => "term",
            ScalarizerSpec::PropFair { .. } => "propfair",
        }
    }

    /// q-FFL with `q = 0` is FedAvg; every operation goes through this.
    fn canonical(&self) -> Result<Self> {
        self.validate()?;
        Ok(match *self {
            ScalarizerSpec::QFfl { q } if q == T::zero() => ScalarizerSpec::FedAvg,
            s => s,
        })
    }
}

/// Client losses together with their aggregation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossVector<T> {
    losses: Vec<T>,
    weights: Vec<T>,
}

pub(crate) fn simplex_tolerance<T: Scalar>(n: usize) -> T {
    let eps_based = T::epsilon() * T::lit(4.0 * n.max(1) as f64);
    eps_based.max(T::lit(1e-12))
}

pub(crate) fn check_simplex<T: Scalar>(weights: &[T], what: &str) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Empty(format!("{what} weights")));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
        return domain(format!("{what} weights must be finite and nonnegative"));
    }
    let sum: T = weights.iter().copied().sum();
    if (sum - T::one()).abs() > simplex_tolerance::<T>(weights.len()) {
        return domain(format!("{what} weights sum to {sum}, not 1"));
    }
    Ok(())
}

impl<T: Scalar> LossVector<T> {
    pub fn new(losses: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if losses.len() != weights.len() {
            return Err(Error::LengthMismatch(format!(
                "{} losses vs {} weights",
                losses.len(),
                weights.len()
            )));
        }
        if losses.iter().any(|f| !f.is_finite() || *f < T::zero()) {
            return domain("losses must be finite and nonnegative");
        }
        check_simplex(&weights, "loss")?;
        Ok(LossVector { losses, weights })
    }

    /// Equal weights `1/n`.
    pub fn uniform(losses: Vec<T>) -> Result<Self> {
        let n = losses.len();
        let w = T::one() / T::lit(n.max(1) as f64);
        Self::new(losses, vec![w; n])
    }

    /// Weights `n_i / sum_j n_j`.
    pub fn from_counts(losses: Vec<T>, counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Empty("sample counts".into()));
        }
        let weights = counts
            .iter()
            .map(|&c| T::lit(c as f64) / T::lit(total as f64))
            .collect();
        Self::new(losses, weights)
    }

    pub fn losses(&self) -> &[T] {
        &self.losses
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }
}

fn check_huber_params<T: Scalar>(m: T, eps: T) -> Result<()> {
    if !(m.is_finite() && eps.is_finite() && eps > T::zero() && eps < m) {
        return domain(format!("require 0 < eps < M, got eps={eps}, M={m}"));
    }
    Ok(())
}

/// `C^1` extension of `log(M - t)`: logarithmic up to `t = M - eps`, linear beyond.
pub fn huberized_log<T: Scalar>(m: T, eps: T, t: T) -> Result<T> {
    check_huber_params(m, eps)?;
    if !(t >= T::zero()) {
        return domain(format!("huberized_log requires t >= 0, got {t}"));
    }
    if t <= m - eps {
        Ok((m - t).ln())
    } else {
        Ok(eps.ln() - (t - m + eps) / eps)
    }
}

/// Derivative of [`huberized_log`] with respect to `t`.
pub fn huberized_log_derivative<T: Scalar>(m: T, eps: T, t: T) -> Result<T> {
    check_huber_params(m, eps)?;
    if !(t >= T::zero()) {
        return domain(format!("huberized_log requires t >= 0, got {t}"));
    }
    if t <= m - eps {
        Ok(-(m - t).recip())
    } else {
        Ok(-eps.recip())
    }
}

/// Returns `(phi(loss), phi'(loss))`, so that `grad(phi o f) = slope * grad f`.
pub fn surrogate<T: Scalar>(spec: &ScalarizerSpec<T>, loss: T) -> Result<(T, T)> {
    if !(loss >= T::zero()) {
        return domain(format!("surrogate requires loss >= 0, got {loss}"));
    }
    match spec.canonical()? {
        ScalarizerSpec::FedAvg => Ok((loss, T::one())),
        ScalarizerSpec::QFfl { q } => {
            let q1 = q + T::one();
            Ok((loss.powf(q1) / q1, loss.powf(q)))
        }
        ScalarizerSpec::Term { alpha } => {
            let e = (alpha * loss).exp();
            Ok((e, alpha * e))
        }
        ScalarizerSpec::PropFair { baseline, epsilon } => {
            let value = -huberized_log(baseline, epsilon, loss)?;
            let gap = baseline - loss;
            let slope = if loss <= baseline - epsilon {
                if gap < T::lit(SINGULAR_GUARD) {
                    return Err(Error::Singular(format!("M - loss = {gap}")));
                }
                gap.recip()
            } else {
                epsilon.recip()
            };
            Ok((value, slope))
        }
    }
}

/// `log(M - f_i)` for every client, rejecting `f_i >= M` and near-singular gaps.
fn log_gaps<T: Scalar>(losses: &[T], m: T) -> Result<Vec<T>> {
    losses
        .iter()
        .map(|&f| {
            let gap = m - f;
            if !(gap > T::zero()) {
                domain(format!("loss {f} is not below M = {m}"))
            } else if gap < T::lit(SINGULAR_GUARD) {
                Err(Error::Singular(format!("M - f = {gap}")))
            } else {
                Ok(gap.ln())
            }
        })
        .collect()
}

/// Log of the weighted Nash product `sum_i p_i log(M - f_i)`.
fn log_nash<T: Scalar>(lv: &LossVector<T>, m: T) -> Result<T> {
    let gaps = log_gaps(&lv.losses, m)?;
    Ok(lv
        .weights
        .iter()
        .zip(&gaps)
        .map(|(&p, &g)| if p == T::zero() { T::zero() } else { p * g })
        .sum())
}

/// Weighted Nash product `prod_i (M - f_i)^{p_i}`.
pub fn nash_product<T: Scalar>(lv: &LossVector<T>, m: T) -> Result<T> {
    if !(m > T::zero() && m.is_finite()) {
        return domain(format!("M must be positive, got {m}"));
    }
    Ok(log_nash(lv, m)?.exp())
}

/// Kolmogorov generalized mean `phi^-1(sum_i p_i phi(f_i))`.
pub fn generalized_mean<T: Scalar>(spec: &ScalarizerSpec<T>, lv: &LossVector<T>) -> Result<T> {
    let f = &lv.losses;
    let p = &lv.weights;
    match spec.canonical()? {
        ScalarizerSpec::FedAvg => Ok(p.iter().zip(f).map(|(&w, &x)| w * x).sum()),
        ScalarizerSpec::QFfl { q } => {
            let q1 = q + T::one();
            let lse = log_sum_exp(p.iter().zip(f).map(|(&w, &x)| w.ln() + q1 * x.ln()));
            Ok((lse / q1).exp())
        }
        ScalarizerSpec::Term { alpha } => {
            let lse = log_sum_exp(p.iter().zip(f).map(|(&w, &x)| w.ln() + alpha * x));
            Ok(lse / alpha)
        }
        ScalarizerSpec::PropFair { baseline, epsilon } => {
            if let Some(x) = f.iter().find(|&&x| x > baseline - epsilon) {
                return domain(format!(
                    "loss {x} is on the linear branch (M - eps = {}); the mean is undefined there",
                    baseline - epsilon
                ));
            }
            Ok(baseline - log_nash(lv, baseline)?.exp())
        }
    }
}

/// Closed-form maximizer of `lambda^T f - A*_phi(lambda)`.
pub fn dual_weights<T: Scalar>(spec: &ScalarizerSpec<T>, lv: &LossVector<T>) -> Result<Vec<T>> {
    let f = &lv.losses;
    let p = &lv.weights;
    match spec.canonical()? {
        ScalarizerSpec::FedAvg => Ok(p.clone()),
        ScalarizerSpec::QFfl { q } => {
            if f.iter().all(|&x| x == T::zero()) {
                return Ok(p.clone());
            }
            let q1 = q + T::one();
            // lambda_i = c p_i f_i^q with c = (sum_j p_j f_j^{q+1})^{-q/(q+1)}
            let lse = log_sum_exp(p.iter().zip(f).map(|(&w, &x)| w.ln() + q1 * x.ln()));
            let log_c = -q / q1 * lse;
            Ok(p.iter()
                .zip(f)
                .map(|(&w, &x)| {
                    if w == T::zero() || x == T::zero() {
                        T::zero()
                    } else {
                        (log_c + w.ln() + q * x.ln()).exp()
                    }
                })
                .collect())
        }
        ScalarizerSpec::Term { alpha } => {
            let logits: Vec<T> = p.iter().zip(f).map(|(&w, &x)| w.ln() + alpha * x).collect();
            let lse = log_sum_exp(logits.iter().copied());
            Ok(logits.iter().map(|&z| (z - lse).exp()).collect())
        }
        ScalarizerSpec::PropFair { baseline, .. } => {
            let gaps = log_gaps(f, baseline)?;
            let log_g = log_nash(lv, baseline)?;
            Ok(p.iter()
                .zip(&gaps)
                .map(|(&w, &lg)| {
                    if w == T::zero() {
                        T::zero()
                    } else {
                        (w.ln() + log_g - lg).exp()
                    }
                })
                .collect())
        }
    }
}

/// Client weights implied by the surrogate slopes, normalized per objective family.
///
/// Agrees with [`dual_weights`] wherever the latter is defined and extends
/// PropFair to the linear branch (slope `1/eps`), so it can be reported for
/// any training state.
pub fn effective_weights<T: Scalar>(
    spec: &ScalarizerSpec<T>,
    lv: &LossVector<T>,
) -> Result<Vec<T>> {
    match spec.canonical()? {
        ScalarizerSpec::PropFair { .. } => {
            let p = &lv.weights;
            let log_slopes = lv
                .losses
                .iter()
                .map(|&x| surrogate(spec, x).map(|(_, s)| s.ln()))
                .collect::<Result<Vec<T>>>()?;
            let log_norm: T = p
                .iter()
                .zip(&log_slopes)
                .map(|(&w, &s)| if w == T::zero() { T::zero() } else { w * s })
                .sum();
            Ok(p.iter()
                .zip(&log_slopes)
                .map(|(&w, &s)| {
                    if w == T::zero() {
                        T::zero()
                    } else {
                        (w.ln() + s - log_norm).exp()
                    }
                })
                .collect())
        }
        _ => dual_weights(spec, lv),
    }
}

/// Convex conjugate `A*_phi(lambda)`; `+inf` outside its effective domain.
///
/// Membership in the domain is tested to `tol`.
pub fn conjugate<T: Scalar>(
    spec: &ScalarizerSpec<T>,
    lambda: &[T],
    weights: &[T],
    tol: T,
) -> Result<T> {
    if lambda.len() != weights.len() {
        return Err(Error::LengthMismatch(format!(
            "{} dual weights vs {} weights",
            lambda.len(),
            weights.len()
        )));
    }
    if lambda.iter().any(|&l| l < -tol) {
        return Ok(T::infinity());
    }
    match spec.canonical()? {
        ScalarizerSpec::FedAvg => {
            let dev = lambda
                .iter()
                .zip(weights)
                .map(|(&l, &w)| (l - w).abs())
                .fold(T::zero(), T::max);
            Ok(if dev <= tol { T::zero() } else { T::infinity() })
        }
        ScalarizerSpec::QFfl { q } => {
            let total = qffl_constraint(q, lambda, weights);
            Ok(if total <= T::one() + tol {
                T::zero()
            } else {
                T::infinity()
            })
        }
        ScalarizerSpec::Term { alpha } => {
            let sum: T = lambda.iter().copied().sum();
            if (sum - T::one()).abs() > tol {
                return Ok(T::infinity());
            }
            let mut acc = T::zero();
            for (&l, &w) in lambda.iter().zip(weights) {
                if l <= T::zero() {
                    continue;
                }
                if w == T::zero() {
                    return Ok(T::infinity());
                }
                acc = acc + l / alpha * (l / w).ln();
            }
            Ok(acc)
        }
        ScalarizerSpec::PropFair { baseline, .. } => {
            let log_prod = propfair_log_constraint(lambda, weights);
            if log_prod < -tol {
                return Ok(T::infinity());
            }
            let sum: T = lambda.iter().copied().sum();
            Ok(baseline * (sum - T::one()))
        }
    }
}

fn qffl_constraint<T: Scalar>(q: T, lambda: &[T], weights: &[T]) -> T {
    let expo = (q + T::one()) / q;
    lambda
        .iter()
        .zip(weights)
        .map(|(&l, &w)| {
            if l <= T::zero() {
                T::zero()
            } else {
                (expo * l.ln() - w.ln() / q).exp()
            }
        })
        .sum()
}

/// `log prod_i (lambda_i / p_i)^{p_i}`.
fn propfair_log_constraint<T: Scalar>(lambda: &[T], weights: &[T]) -> T {
    lambda
        .iter()
        .zip(weights)
        .map(|(&l, &w)| {
            if w == T::zero() {
                T::zero()
            } else {
                xlogy(w, l) - w * w.ln()
            }
        })
        .sum()
}

/// Violation of the dual-feasibility constraints attached to each objective.
///
/// Zero means the weights satisfy the family's constraint exactly:
/// `lambda = p` (FedAvg), `sum p^{-1/q} lambda^{(q+1)/q} = 1` (q-FFL),
/// `sum lambda = 1` (TERM), `prod (lambda/p)^p = 1` (PropFair), plus `lambda >= 0`.
pub fn constraint_residual<T: Scalar>(
    spec: &ScalarizerSpec<T>,
    lambda: &[T],
    weights: &[T],
) -> Result<T> {
    if lambda.len() != weights.len() {
        return Err(Error::LengthMismatch("dual weights vs weights".into()));
    }
    let negativity = lambda.iter().fold(T::zero(), |a, &l| a.max(-l));
    let family = match spec.canonical()? {
        ScalarizerSpec::FedAvg => lambda
            .iter()
            .zip(weights)
            .map(|(&l, &w)| (l - w).abs())
            .fold(T::zero(), T::max),
        ScalarizerSpec::QFfl { q } => (qffl_constraint(q, lambda, weights) - T::one()).abs(),
        ScalarizerSpec::Term { .. } => (lambda.iter().copied().sum::<T>() - T::one()).abs(),
        ScalarizerSpec::PropFair { .. } => propfair_log_constraint(lambda, weights).exp_m1().abs(),
    };
    Ok(negativity.max(family))
}

/// `|lambda^T f - A*(lambda) - A(f)|` at the analytic dual maximizer.
pub fn duality_gap<T: Scalar>(spec: &ScalarizerSpec<T>, lv: &LossVector<T>) -> Result<T> {
    let spec = spec.canonical()?;
    let lambda = dual_weights(&spec, lv)?;
    let f = &lv.losses;
    let p = &lv.weights;
    let inner: T = lambda.iter().zip(f).map(|(&l, &x)| l * x).sum();
    let (conj, primal) = match spec {
        ScalarizerSpec::FedAvg | ScalarizerSpec::QFfl { .. } => {
            (T::zero(), generalized_mean(&spec, lv)?)
        }
        ScalarizerSpec::Term { alpha } => {
            let conj = lambda
                .iter()
                .zip(p)
                .map(|(&l, &w)| {
                    if l == T::zero() {
                        T::zero()
                    } else {
                        l / alpha * (l / w).ln()
                    }
                })
                .sum();
            (conj, generalized_mean(&spec, lv)?)
        }
        ScalarizerSpec::PropFair { baseline, .. } => {
            // The log branch extends to every f < M for the duality identities.
            let sum: T = lambda.iter().copied().sum();
            (
                baseline * (sum - T::one()),
                baseline - log_nash(lv, baseline)?.exp(),
            )
        }
    };
    Ok((inner - conj - primal).abs())
}
