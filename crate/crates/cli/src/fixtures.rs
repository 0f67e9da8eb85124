//! Synthetic problems shared by `verify` and the acceptance suite.

use fairfl::datagen::{ClientDataset, FederatedDataset};
use fairfl::Sample;
use rand::Rng;

/// Features of [`rate_problem`], one per scale.
pub const RATE_FEATURES: usize = 24;

/// Variance scales `sigma_k^2`, log-spaced over `[1e-3, 1e2]`.
pub fn rate_scales() -> Vec<f64> {
    let (lo, hi) = (1e-3f64.ln(), 1e2f64.ln());
    (0..RATE_FEATURES)
        .map(|k| (lo + (hi - lo) * k as f64 / (RATE_FEATURES - 1) as f64).exp())
        .collect()
}

/// Homogeneous binary problem with a spread of curvature scales: feature `k`
/// takes the values `+-sigma_k e_k` with mildly label-correlated counts, so the
/// loss has a unique interior minimizer and condition number near `1e5`.
/// Every client holds the same samples.
pub fn rate_problem(n_clients: usize) -> FederatedDataset {
    let mut samples = Vec::new();
    for (k, s2) in rate_scales().into_iter().enumerate() {
        let s = s2.sqrt();
        for (sign, positives, negatives) in [(1.0, 3, 2), (-1.0, 2, 3)] {
            let mut x = vec![0.0; RATE_FEATURES];
            x[k] = sign * s;
            samples.extend(std::iter::repeat_n(Sample::new(x.clone(), 1), positives));
            samples.extend(std::iter::repeat_n(Sample::new(x, 0), negatives));
        }
    }
    homogeneous(samples, n_clients)
}

/// `n_clients` copies of `samples`, each used for both training and test.
pub fn homogeneous(samples: Vec<Sample>, n_clients: usize) -> FederatedDataset {
    FederatedDataset {
        clients: (0..n_clients)
            .map(|_| ClientDataset {
                train: samples.clone(),
                test: samples.clone(),
            })
            .collect(),
        global_test: None,
    }
}

/// A discretized convex utility set with a known Nash bargaining point.
#[derive(Debug, Clone)]
pub struct NbsInstance {
    pub points: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    /// Index of the bargaining point in `points`.
    pub optimum: usize,
}

/// Grid steps per axis for 2 and 3 players; both stay within `1e4` points.
pub fn grid_steps(n: usize) -> usize {
    match n {
        2 => 100,
        3 => 21,
        _ => (10_000f64.powf(1.0 / n as f64)).floor() as usize,
    }
}

fn grid(n: usize) -> Vec<Vec<f64>> {
    let steps = grid_steps(n);
    let h = 1.0 / steps as f64;
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                (1..=steps).map(move |j| {
                    let mut v = prefix.clone();
                    v.push(j as f64 * h);
                    v
                })
            })
            .collect();
    }
    out
}

/// Random instance: grid points of `(0, 1]^n` inside the tangent halfspace
/// `sum_i (p_i / c_i) u_i <= 1` at a random grid point `c`, cut further by
/// random halfspaces and a ball that keep `c` strictly inside. The weighted
/// Nash product over the halfspace peaks at `c`, so `c` is the unique
/// bargaining point of the set.
pub fn nbs_instance<R: Rng + ?Sized>(n: usize, rng: &mut R) -> NbsInstance {
    let steps = grid_steps(n);
    let h = 1.0 / steps as f64;
    let c: Vec<f64> = (0..n)
        .map(|_| rng.random_range(steps / 4..=3 * steps / 4) as f64 * h)
        .collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let p: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let cuts: Vec<(Vec<f64>, f64)> = (0..rng.random_range(1..=3))
        .map(|_| {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let at_c: f64 = a.iter().zip(&c).map(|(x, y)| x * y).sum();
            (a, at_c * rng.random_range(1.05..1.5))
        })
        .collect();
    let radius_sq = c.iter().map(|x| x * x).sum::<f64>() * rng.random_range(1.1..2.0);
    let tangent = |u: &[f64]| {
        u.iter()
            .zip(&p)
            .zip(&c)
            .map(|((x, w), y)| w / y * x)
            .sum::<f64>()
    };
    let mut points = Vec::new();
    let mut optimum = None;
    for u in grid(n) {
        let inside = tangent(&u) <= 1.0 + 1e-12
            && cuts
                .iter()
                .all(|(a, b)| a.iter().zip(&u).map(|(x, y)| x * y).sum::<f64>() <= *b)
            && u.iter().map(|x| x * x).sum::<f64>() <= radius_sq;
        if inside {
            if u.iter().zip(&c).all(|(x, y)| (x - y).abs() < 0.5 * h) {
                optimum = Some(points.len());
            }
            points.push(u);
        }
    }
    NbsInstance {
        points,
        p,
        optimum: optimum.expect("the tangent point lies on the grid"),
    }
}
