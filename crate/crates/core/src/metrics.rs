//! Accuracy statistics across clients, proportional-fairness comparisons
//! between runs, and Nash-product reports.

use serde::{Deserialize, Serialize};

use crate::bargain::{clamp_utilities, jensen_gap, pf_score};
use crate::error::{domain, Error, Result};
use crate::scalarize::nash_product;
use crate::{LossVector, UtilityProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientOutcome {
    pub client_id: usize,
    pub n_i: usize,
    pub test_accuracy: f64,
    pub test_loss: f64,
}

fn check_outcomes(outcomes: &[ClientOutcome]) -> Result<()> {
    if outcomes.is_empty() {
        return Err(Error::Empty("client outcomes".into()));
    }
    for o in outcomes {
        if !(0.0..=1.0).contains(&o.test_accuracy) {
            return domain(format!(
                "client {} accuracy {} outside [0, 1]",
                o.client_id, o.test_accuracy
            ));
        }
    }
    if outcomes.iter().all(|o| o.n_i == 0) {
        return domain("all clients have zero samples");
    }
    Ok(())
}

fn weights(outcomes: &[ClientOutcome]) -> Vec<f64> {
    let total: usize = outcomes.iter().map(|o| o.n_i).sum();
    outcomes
        .iter()
        .map(|o| o.n_i as f64 / total as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub mean_unweighted: f64,
    pub mean_weighted: f64,
    /// Population standard deviation across clients.
    pub std: f64,
    pub worst: f64,
    pub best: f64,
    pub k_percent: f64,
    /// Unweighted mean over the `ceil(k n / 100)` lowest accuracies.
    pub worst_k: f64,
    /// Unweighted mean over the `ceil(k n / 100)` highest accuracies.
    pub best_k: f64,
}

/// Size of the worst/best-k% client sets, `ceil(k n / 100)` within `[1, n]`.
pub fn tail_count(k_percent: f64, n: usize) -> usize {
    // the small offset keeps exact products such as 10 * 10 / 100 from rounding up
    ((k_percent * n as f64 / 100.0 - 1e-9).ceil() as usize).clamp(1, n)
}

pub fn summarize(outcomes: &[ClientOutcome], k_percent: f64) -> Result<AccuracySummary> {
    check_outcomes(outcomes)?;
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return domain(format!("k_percent must lie in (0, 100], got {k_percent}"));
    }
    let mut sorted: Vec<&ClientOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.client_id);
    let n = sorted.len() as f64;
    let acc: Vec<f64> = sorted.iter().map(|o| o.test_accuracy).collect();
    // shifted by the first accuracy so equal accuracies give exact results
    let shift = acc[0];
    let mean_unweighted = shift + acc.iter().map(|a| a - shift).sum::<f64>() / n;
    let p = weights(&sorted.iter().map(|&o| o.clone()).collect::<Vec<_>>());
    let mean_weighted = shift
        + acc
            .iter()
            .zip(&p)
            .map(|(a, w)| (a - shift) * w)
            .sum::<f64>();
    let std = (acc
        .iter()
        .map(|a| (a - mean_unweighted).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();

    let mut ascending: Vec<(f64, usize)> = sorted
        .iter()
        .map(|o| (o.test_accuracy, o.client_id))
        .collect();
    ascending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut descending = ascending.clone();
    descending.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let k = tail_count(k_percent, sorted.len());
    let tail_mean = |v: &[(f64, usize)]| v[..k].iter().map(|x| x.0).sum::<f64>() / k as f64;
    Ok(AccuracySummary {
        mean_unweighted,
        mean_weighted,
        std,
        worst: ascending[0].0,
        best: descending[0].0,
        k_percent,
        worst_k: tail_mean(&ascending),
        best_k: tail_mean(&descending),
    })
}

/// Relative accuracy changes of `other` against the base run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfComparison {
    /// `(client_id, (u_i - u*_i) / u*_i)` in ascending client id.
    pub per_client: Vec<(usize, f64)>,
    /// `sum_i p_i (u_i - u*_i) / u*_i` with `p_i = n_i / N` from the base run.
    pub weighted_aggregate: f64,
    /// Accuracies of either run raised to the utility floor.
    pub clamp_count: usize,
}

fn by_id(outcomes: &[ClientOutcome]) -> Vec<ClientOutcome> {
    let mut v = outcomes.to_vec();
    v.sort_by_key(|o| o.client_id);
    v
}

pub fn pf_compare(base: &[ClientOutcome], other: &[ClientOutcome]) -> Result<PfComparison> {
    check_outcomes(base)?;
    check_outcomes(other)?;
    let base = by_id(base);
    let other = by_id(other);
    let ids = |v: &[ClientOutcome]| v.iter().map(|o| o.client_id).collect::<Vec<_>>();
    if ids(&base) != ids(&other) {
        return Err(Error::LengthMismatch(format!(
            "client sets differ: {:?} vs {:?}",
            ids(&base),
            ids(&other)
        )));
    }
    let raw: Vec<f64> = base.iter().map(|o| o.test_accuracy).collect();
    let (u_star, base_clamped) = clamp_utilities(&raw);
    let raw: Vec<f64> = other.iter().map(|o| o.test_accuracy).collect();
    let (u, other_clamped) = clamp_utilities(&raw);
    let p = weights(&base);
    let weighted_aggregate = pf_score(&u, &u_star, &p)?;
    let per_client = base
        .iter()
        .zip(&u_star)
        .zip(&u)
        .map(|((o, &s), &x)| (o.client_id, (x - s) / s))
        .collect();
    Ok(PfComparison {
        per_client,
        weighted_aggregate,
        clamp_count: base_clamped + other_clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    /// `prod_i (M - f_i)^{p_i}` when training losses are supplied.
    pub nash_product_losses: Option<f64>,
    /// `prod_i u_i^{p_i}` over floored accuracies.
    pub nash_product_acc: f64,
    pub jensen_gap: f64,
    pub clamp_count: usize,
}

/// `losses`, when given, are in the same order as `outcomes`.
pub fn nash_report(
    outcomes: &[ClientOutcome],
    m: f64,
    losses: Option<&[f64]>,
) -> Result<NashReport> {
    check_outcomes(outcomes)?;
    let p = weights(outcomes);
    let nash_product_losses = match losses {
        Some(f) => Some(nash_product(&LossVector::new(f.to_vec(), p.clone())?, m)?),
        None => None,
    };
    let raw: Vec<f64> = outcomes.iter().map(|o| o.test_accuracy).collect();
    let (u, clamp_count) = clamp_utilities(&raw);
    let profile = UtilityProfile::new(u, p)?;
    Ok(NashReport {
        nash_product_losses,
        nash_product_acc: profile.log_nash().exp(),
        jensen_gap: jensen_gap(&profile),
        clamp_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn outcomes(acc: &[f64], n: &[usize]) -> Vec<ClientOutcome> {
        acc.iter()
            .zip(n)
            .enumerate()
            .map(|(i, (&a, &n_i))| ClientOutcome {
                client_id: i,
                n_i,
                test_accuracy: a,
                test_loss: 1.0 - a,
            })
            .collect()
    }

    fn tenths() -> Vec<f64> {
        (1..=10).map(|i| i as f64 / 10.0).collect()
    }

    #[test]
    fn summary_examples() {
        let o = outcomes(&tenths(), &[5; 10]);
        let s = summarize(&o, 10.0).unwrap();
        assert_eq!(s.worst_k, s.worst);
        assert_eq!(s.best_k, s.best);
        let s = summarize(&o, 20.0).unwrap();
        assert_abs_diff_eq!(s.worst_k, 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(s.best_k, 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mean_unweighted, 0.55, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mean_weighted, 0.55, epsilon = 1e-15);
        // population std of 0.1..1.0
        assert_abs_diff_eq!(s.std, (0.0825f64).sqrt(), epsilon = 1e-15);

        let flat = summarize(&outcomes(&[0.4; 7], &[1, 2, 3, 4, 5, 6, 7]), 30.0).unwrap();
        assert_eq!(
            (
                flat.mean_unweighted,
                flat.mean_weighted,
                flat.worst,
                flat.best,
                flat.std
            ),
            (0.4, 0.4, 0.4, 0.4, 0.0)
        );

        let w = summarize(&outcomes(&[0.2, 0.8], &[1, 3]), 50.0).unwrap();
        assert_abs_diff_eq!(w.mean_weighted, 0.65, epsilon = 1e-15);
    }

    #[test]
    fn summary_errors() {
        assert!(matches!(summarize(&[], 10.0), Err(Error::Empty(_))));
        let o = outcomes(&[0.5], &[1]);
        assert!(summarize(&o, 0.0).is_err());
        assert!(summarize(&o, 100.5).is_err());
        assert!(summarize(&outcomes(&[1.5], &[1]), 10.0).is_err());
    }

    #[test]
    fn tail_counts() {
        assert_eq!(tail_count(10.0, 10), 1);
        assert_eq!(tail_count(10.0, 11), 2);
        assert_eq!(tail_count(100.0, 7), 7);
        assert_eq!(tail_count(0.1, 7), 1);
    }

    #[test]
    fn pf_compare_examples() {
        let base = outcomes(&[0.5, 0.5], &[100, 300]);
        let other = outcomes(&[0.6, 0.45], &[100, 300]);
        let r = pf_compare(&base, &other).unwrap();
        assert_abs_diff_eq!(r.weighted_aggregate, -0.025, epsilon = 1e-15);
        assert_eq!(r.per_client.len(), 2);

        let same = pf_compare(&base, &base).unwrap();
        assert_eq!(same.weighted_aggregate, 0.0);
        assert!(same.per_client.iter().all(|x| x.1 == 0.0));

        let better = outcomes(&[0.505, 0.505], &[100, 300]);
        assert_abs_diff_eq!(
            pf_compare(&base, &better).unwrap().weighted_aggregate,
            0.01,
            epsilon = 1e-14
        );

        let zero = outcomes(&[0.0, 0.5], &[1, 1]);
        let same = pf_compare(&zero, &zero).unwrap();
        assert_eq!(same.clamp_count, 2);
        assert_eq!(same.weighted_aggregate, 0.0);

        let mut shifted = other.clone();
        shifted[1].client_id = 5;
        assert!(pf_compare(&base, &shifted).is_err());
    }

    #[test]
    fn nash_report_examples() {
        let o = outcomes(&[0.7, 0.7], &[1, 1]);
        let r = nash_report(&o, 5.0, Some(&[1.0, 3.0])).unwrap();
        assert_abs_diff_eq!(r.nash_product_losses.unwrap(), 8f64.sqrt(), epsilon = 1e-15);
        assert!(r.jensen_gap <= 1e-15);
        assert!(nash_report(&o, 5.0, Some(&[1.0, 5.0])).is_err());

        let low = outcomes(&[1e-9, 0.8, 0.6], &[2, 1, 1]);
        let r = nash_report(&low, 2.0, None).unwrap();
        assert_eq!(r.clamp_count, 1);
        assert!(r.nash_product_losses.is_none());
        assert!(
            r.nash_product_acc
                <= 1e-6f64.powf(0.5) * 0.8f64.powf(0.25) * 0.6f64.powf(0.25) * (1.0 + 1e-12)
        );
    }

    fn arb_outcomes() -> impl Strategy<Value = Vec<ClientOutcome>> {
        proptest::collection::vec((0.0f64..=1.0, 1usize..50), 1..30).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (a, n))| ClientOutcome {
                    client_id: i,
                    n_i: n,
                    test_accuracy: a,
                    test_loss: 0.0,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn tails_are_monotone_in_k(o in arb_outcomes(), k1 in 1.0f64..100.0, k2 in 1.0f64..100.0) {
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            let a = summarize(&o, lo).unwrap();
            let b = summarize(&o, hi).unwrap();
            // a larger worst set admits better clients; a larger best set admits worse ones
            prop_assert!(a.worst_k <= b.worst_k + 1e-12);
            prop_assert!(a.best_k + 1e-12 >= b.best_k);
            prop_assert!(a.worst <= a.worst_k && a.best_k <= a.best);
        }

        #[test]
        fn summary_is_permutation_invariant(o in arb_outcomes(), k in 1.0f64..100.0, rot in 0usize..30) {
            let mut p = o.clone();
            let r = rot % p.len();
            p.rotate_left(r);
            prop_assert_eq!(summarize(&o, k).unwrap(), summarize(&p, k).unwrap());
        }

        #[test]
        fn pf_compare_second_order_antisymmetry(v in proptest::collection::vec((0.05f64..1.0, 0.05f64..1.0, 1usize..20), 1..10)) {
            let base: Vec<ClientOutcome> = v.iter().enumerate().map(|(i, &(a, _, n))| ClientOutcome { client_id: i, n_i: n, test_accuracy: a, test_loss: 0.0 }).collect();
            let other: Vec<ClientOutcome> = v.iter().enumerate().map(|(i, &(_, b, n))| ClientOutcome { client_id: i, n_i: n, test_accuracy: b, test_loss: 0.0 }).collect();
            let s = pf_compare(&base, &other).unwrap().weighted_aggregate + pf_compare(&other, &base).unwrap().weighted_aggregate;
            let total: usize = v.iter().map(|x| x.2).sum();
            let bound: f64 = v.iter().map(|&(a, b, n)| n as f64 / total as f64 * (b - a).powi(2) / (a * b)).sum();
            prop_assert!(s >= -1e-12 && s <= bound + 1e-12);
        }
    }
}
