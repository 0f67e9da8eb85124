//! Proportional fairness certificates and Nash bargaining oracles.
//!
//! A utility profile `u*` is proportionally fair against a set of candidates
//! when no candidate has a positive weighted total relative gain
//! `sum_i p_i (u_i - u*_i) / u*_i`. On convex utility sets this is equivalent
//! to `u*` maximizing the weighted Nash objective `sum_i p_i log u_i`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;
use crate::scalarize::check_simplex;

/// Floor applied to utilities (e.g. a zero accuracy) before relative comparisons.
pub const UTILITY_FLOOR: f64 = 1e-6;

/// Strictly positive utilities with simplex weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityProfile<T> {
    utilities: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> UtilityProfile<T> {
    pub fn new(utilities: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if utilities.len() != weights.len() {
            return Err(Error::LengthMismatch(format!(
                "{} utilities vs {} weights",
                utilities.len(),
                weights.len()
            )));
        }
        check_positive(&utilities)?;
        check_simplex(&weights, "utility")?;
        Ok(UtilityProfile { utilities, weights })
    }

    pub fn utilities(&self) -> &[T] {
        &self.utilities
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// `sum_i p_i log u_i`.
    pub fn log_nash(&self) -> T {
        nash_objective(&self.utilities, &self.weights)
    }
}

fn check_positive<T: Scalar>(u: &[T]) -> Result<()> {
    if let Some(x) = u.iter().find(|x| !(x.is_finite() && **x > T::zero())) {
        return domain(format!("utilities must be strictly positive, got {x}"));
    }
    Ok(())
}

fn nash_objective<T: Scalar>(u: &[T], p: &[T]) -> T {
    u.iter()
        .zip(p)
        .map(|(&x, &w)| {
            if w == T::zero() {
                T::zero()
            } else {
                w * x.ln()
            }
        })
        .sum()
}

/// Raises every utility to at least [`UTILITY_FLOOR`]; returns the number of clamped entries.
pub fn clamp_utilities<T: Scalar>(u: &[T]) -> (Vec<T>, usize) {
    let floor = T::lit(UTILITY_FLOOR);
    let mut clamped = 0;
    let out = u
        .iter()
        .map(|&x| {
            if x < floor || x.is_nan() {
                clamped += 1;
                floor
            } else {
                x
            }
        })
        .collect();
    (out, clamped)
}

/// Weighted total relative change `sum_i p_i (u_i - u*_i) / u*_i`.
///
/// Negative values mean `u_star` is proportionally preferred over `u`.
pub fn pf_score<T: Scalar>(u: &[T], u_star: &[T], p: &[T]) -> Result<T> {
    if u.len() != u_star.len() || u.len() != p.len() {
        return Err(Error::LengthMismatch(format!(
            "pf_score lengths {} / {} / {}",
            u.len(),
            u_star.len(),
            p.len()
        )));
    }
    check_positive(u_star)?;
    Ok(u.iter()
        .zip(u_star)
        .zip(p)
        .map(|((&x, &s), &w)| w * (x - s) / s)
        .sum())
}

/// Outcome of [`certify_pf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfCertificate<T> {
    pub certified: bool,
    /// Candidate with the largest score; `None` for an empty candidate list.
    pub worst_index: Option<usize>,
    /// `-inf` for an empty candidate list.
    pub worst_score: T,
}

/// Certifies `u_star` as proportionally fair against every candidate, up to `tol`.
pub fn certify_pf<T: Scalar>(
    u_star: &UtilityProfile<T>,
    candidates: &[Vec<T>],
    tol: T,
) -> Result<PfCertificate<T>> {
    let mut worst_index = None;
    let mut worst_score = T::neg_infinity();
    for (i, c) in candidates.iter().enumerate() {
        let s = pf_score(c, &u_star.utilities, &u_star.weights)?;
        if s > worst_score {
            worst_score = s;
            worst_index = Some(i);
        }
    }
    Ok(PfCertificate {
        certified: worst_score <= tol,
        worst_index,
        worst_score,
    })
}

/// Maximizer of the weighted Nash objective over a finite set.
#[derive(Debug, Clone, PartialEq)]
pub struct NbsSolution<T> {
    pub index: usize,
    pub point: Vec<T>,
    /// `sum_i p_i log u_i` at the maximizer.
    pub value: T,
}

/// Exhaustive Nash bargaining oracle; ties go to the lowest index.
pub fn nbs_grid<T: Scalar>(points: &[Vec<T>], p: &[T]) -> Result<NbsSolution<T>> {
    if points.is_empty() {
        return Err(Error::Empty("feasible point list".into()));
    }
    check_simplex(p, "bargaining")?;
    let mut best: Option<(usize, T)> = None;
    for (i, u) in points.iter().enumerate() {
        if u.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                got: u.len(),
            });
        }
        check_positive(u)?;
        let v = nash_objective(u, p);
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    let (index, value) = best.expect("nonempty");
    Ok(NbsSolution {
        index,
        point: points[index].clone(),
        value,
    })
}

/// Jensen gap `log(sum_i p_i u_i) - sum_i p_i log u_i >= 0`.
pub fn jensen_gap<T: Scalar>(u: &UtilityProfile<T>) -> T {
    let mean: T = u
        .utilities
        .iter()
        .zip(&u.weights)
        .map(|(&x, &w)| w * x)
        .sum();
    let gap = mean.ln() - u.log_nash();
    // rounding can push an exact zero slightly negative
    gap.max(T::zero())
}
