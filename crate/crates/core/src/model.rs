//! Small classifiers with closed-form gradients.
//!
//! Two architectures are supported: a linear softmax classifier (convex loss)
//! and a one-hidden-layer tanh network (nonconvex loss). Parameters are a
//! flat vector laid out row-major, layer by layer:
//! `[W1 (h x d), b1 (h), W2 (C x h), b2 (C)]`, where the linear model has
//! only the first pair with `h = C`.
//!
//! Batch reductions visit samples in a canonical order (label, then
//! features), so a permuted batch yields bit-identical losses and gradients.

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;

/// A labelled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub features: Vec<T>,
    pub label: usize,
}

impl<T> Sample<T> {
    pub fn new(features: Vec<T>, label: usize) -> Self {
        Sample { features, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    LinearSoftmax {
        d: usize,
        classes: usize,
    },
    Mlp1 {
        d: usize,
        hidden: usize,
        classes: usize,
    },
}

impl Arch {
    pub fn input_dim(&self) -> usize {
        match *self {
            Arch::LinearSoftmax { d, .. } | Arch::Mlp1 { d, .. } => d,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Arch::LinearSoftmax { classes, .. } | Arch::Mlp1 { classes, .. } => classes,
        }
    }

    pub fn n_params(&self) -> usize {
        match *self {
            Arch::LinearSoftmax { d, classes } => classes * d + classes,
            Arch::Mlp1 { d, hidden, classes } => hidden * d + hidden + classes * hidden + classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Arch::LinearSoftmax { d, classes } => d >= 1 && classes >= 2,
            Arch::Mlp1 { d, hidden, classes } => d >= 1 && hidden >= 1 && classes >= 2,
        };
        if ok {
            Ok(())
        } else {
            domain(format!("invalid architecture {self:?}"))
        }
    }
}

/// Architecture plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    arch: Arch,
    theta: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(arch: Arch, theta: Vec<T>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.n_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.n_params(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return domain("parameters must be finite");
        }
        Ok(ModelParams { arch, theta })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        Self::new(arch, vec![T::zero(); arch.n_params()])
    }

    /// Linear models start at zero; the MLP draws weights uniformly in
    /// `+-1/sqrt(fan_in)` per layer with zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Result<Self> {
        match arch {
            Arch::LinearSoftmax { .. } => Self::zeros(arch),
            Arch::Mlp1 { d, hidden, classes } => {
                arch.validate()?;
                let mut theta = Vec::with_capacity(arch.n_params());
                let s1 = 1.0 / (d as f64).sqrt();
                theta.extend((0..hidden * d).map(|_| T::lit(rng.random_range(-s1..s1))));
                theta.extend((0..hidden).map(|_| T::zero()));
                let s2 = 1.0 / (hidden as f64).sqrt();
                theta.extend((0..classes * hidden).map(|_| T::lit(rng.random_range(-s2..s2))));
                theta.extend((0..classes).map(|_| T::zero()));
                Self::new(arch, theta)
            }
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<T> {
        self.theta
    }

    /// Replaces the parameters, keeping the architecture.
    pub fn with_theta(&self, theta: Vec<T>) -> Result<Self> {
        Self::new(self.arch, theta)
    }

    /// `theta - step * direction`.
    pub fn stepped(&self, step: T, direction: &[T]) -> Result<Self> {
        if direction.len() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                got: direction.len(),
            });
        }
        let theta = self
            .theta
            .iter()
            .zip(direction)
            .map(|(&t, &g)| t - step * g)
            .collect();
        Self::new(self.arch, theta)
    }

    fn logits(&self, x: &[T], hidden_out: Option<&mut Vec<T>>) -> Vec<T> {
        match self.arch {
            Arch::LinearSoftmax { d, classes } => {
                let (w, b) = self.theta.split_at(classes * d);
                (0..classes)
                    .map(|k| dot(&w[k * d..(k + 1) * d], x) + b[k])
                    .collect()
            }
            Arch::Mlp1 { d, hidden, classes } => {
                let (w1, rest) = self.theta.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                let a: Vec<T> = (0..hidden)
                    .map(|j| (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh())
                    .collect();
                let z = (0..classes)
                    .map(|k| dot(&w2[k * hidden..(k + 1) * hidden], &a) + b2[k])
                    .collect();
                if let Some(h) = hidden_out {
                    *h = a;
                }
                z
            }
        }
    }

    /// Predicted class; ties resolve to the lowest class index.
    pub fn predict(&self, x: &[T]) -> usize {
        let z = self.logits(x, None);
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        best
    }

    fn check_batch(&self, batch: &[Sample<T>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        let d = self.arch.input_dim();
        let c = self.arch.classes();
        for s in batch {
            if s.features.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.features.len(),
                });
            }
            if s.label >= c {
                return domain(format!("label {} out of range for {c} classes", s.label));
            }
        }
        Ok(())
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Softmax probabilities and the cross-entropy `logsumexp(z) - z_y`.
fn softmax_xent<T: Scalar>(z: &[T], label: usize) -> (Vec<T>, T) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = (max + sum.ln() - z[label]).max(T::zero());
    (exps.into_iter().map(|e| e / sum).collect(), loss)
}

fn cmp_samples<T: Scalar>(a: &Sample<T>, b: &Sample<T>) -> Ordering {
    a.label.cmp(&b.label).then_with(|| {
        for (x, y) in a.features.iter().zip(&b.features) {
            match x.partial_cmp(y) {
                Some(Ordering::Equal) | None => continue,
                Some(o) => return o,
            }
        }
        Ordering::Equal
    })
}

fn canonical_order<T: Scalar>(batch: &[Sample<T>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    idx.sort_by(|&i, &j| cmp_samples(&batch[i], &batch[j]).then(i.cmp(&j)));
    idx
}

/// Mean cross-entropy over the batch.
pub fn batch_loss<T: Scalar>(m: &ModelParams<T>, batch: &[Sample<T>]) -> Result<T> {
    m.check_batch(batch)?;
    let mut total = T::zero();
    for i in canonical_order(batch) {
        let s = &batch[i];
        let z = m.logits(&s.features, None);
        total = total + softmax_xent(&z, s.label).1;
    }
    Ok(total / T::lit(batch.len() as f64))
}

/// Exact gradient of [`batch_loss`].
pub fn batch_gradient<T: Scalar>(m: &ModelParams<T>, batch: &[Sample<T>]) -> Result<Vec<T>> {
    Ok(loss_and_gradient(m, batch)?.1)
}

/// [`batch_loss`] and [`batch_gradient`] in one pass.
pub fn loss_and_gradient<T: Scalar>(
    m: &ModelParams<T>,
    batch: &[Sample<T>],
) -> Result<(T, Vec<T>)> {
    m.check_batch(batch)?;
    let mut grad = vec![T::zero(); m.theta.len()];
    let mut total = T::zero();
    let mut hidden_act = Vec::new();
    for i in canonical_order(batch) {
        let s = &batch[i];
        let x = &s.features;
        let z = m.logits(x, Some(&mut hidden_act));
        let (mut probs, loss) = softmax_xent(&z, s.label);
        total = total + loss;
        probs[s.label] = probs[s.label] - T::one();
        let gz = probs;
        match m.arch {
            Arch::LinearSoftmax { d, classes } => {
                let (gw, gb) = grad.split_at_mut(classes * d);
                for k in 0..classes {
                    for j in 0..d {
                        gw[k * d + j] = gw[k * d + j] + gz[k] * x[j];
                    }
                    gb[k] = gb[k] + gz[k];
                }
            }
            Arch::Mlp1 { d, hidden, classes } => {
                let w2 = &m.theta[hidden * d + hidden..hidden * d + hidden + classes * hidden];
                let (gw1, rest) = grad.split_at_mut(hidden * d);
                let (gb1, rest) = rest.split_at_mut(hidden);
                let (gw2, gb2) = rest.split_at_mut(classes * hidden);
                for k in 0..classes {
                    for j in 0..hidden {
                        gw2[k * hidden + j] = gw2[k * hidden + j] + gz[k] * hidden_act[j];
                    }
                    gb2[k] = gb2[k] + gz[k];
                }
                for j in 0..hidden {
                    let back: T =
                        (0..classes).fold(T::zero(), |acc, k| acc + w2[k * hidden + j] * gz[k]);
                    let ga = back * (T::one() - hidden_act[j] * hidden_act[j]);
                    for l in 0..d {
                        gw1[j * d + l] = gw1[j * d + l] + ga * x[l];
                    }
                    gb1[j] = gb1[j] + ga;
                }
            }
        }
    }
    let inv = T::one() / T::lit(batch.len() as f64);
    grad.iter_mut().for_each(|g| *g = *g * inv);
    Ok((total * inv, grad))
}

/// Central differences `(f(x + h e_j) - f(x - h e_j)) / 2h` for every coordinate.
pub fn central_difference<T: Scalar, F: FnMut(&[T]) -> T>(mut f: F, x: &[T], h: T) -> Vec<T> {
    let mut probe = x.to_vec();
    let two_h = h + h;
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let up = f(&probe);
            probe[j] = x[j] - h;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / two_h
        })
        .collect()
}

/// Finite-difference oracle for [`batch_gradient`].
pub fn fd_gradient<T: Scalar>(m: &ModelParams<T>, batch: &[Sample<T>], h: T) -> Result<Vec<T>> {
    if !(h > T::zero()) {
        return domain("finite-difference step must be positive");
    }
    m.check_batch(batch)?;
    let mut scratch = m.clone();
    Ok(central_difference(
        |theta: &[T]| {
            scratch.theta.copy_from_slice(theta);
            // the batch was validated above and theta stays finite for finite h
            batch_loss(&scratch, batch).unwrap_or(T::nan())
        },
        &m.theta,
        h,
    ))
}

/// Fraction of correctly classified samples.
pub fn accuracy<T: Scalar>(m: &ModelParams<T>, samples: &[Sample<T>]) -> Result<T> {
    m.check_batch(samples)?;
    let correct = samples
        .iter()
        .filter(|s| m.predict(&s.features) == s.label)
        .count();
    Ok(T::lit(correct as f64) / T::lit(samples.len() as f64))
}

pub fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Empirical smoothness constants of the full-batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothness<T> {
    /// Largest observed `||grad f(a) - grad f(b)|| / ||a - b||`.
    pub l_hat: T,
    /// Largest observed `||grad f(a)||`.
    pub l0_hat: T,
}

pub(crate) fn ball_point<T: Scalar, R: Rng + ?Sized>(dim: usize, radius: T, rng: &mut R) -> Vec<T> {
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = dir
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let r: f64 = rng.random::<f64>().powf(1.0 / dim as f64);
    dir.iter().map(|&x| radius * T::lit(x / n * r)).collect()
}

/// Estimates the smoothness constants around the origin.
pub fn estimate_smoothness<T: Scalar, R: Rng + ?Sized>(
    dataset: &[Sample<T>],
    arch: Arch,
    trials: usize,
    radius: T,
    rng: &mut R,
) -> Result<Smoothness<T>> {
    let center = ModelParams::zeros(arch)?;
    estimate_smoothness_at(dataset, &center, trials, radius, rng)
}

/// Estimates the smoothness constants from `trials` random pairs with
/// `theta` in the `radius`-ball around `center` and `||theta - theta'|| <= radius`.
///
/// Both values are lower bounds on the true constants.
pub fn estimate_smoothness_at<T: Scalar, R: Rng + ?Sized>(
    dataset: &[Sample<T>],
    center: &ModelParams<T>,
    trials: usize,
    radius: T,
    rng: &mut R,
) -> Result<Smoothness<T>> {
    if trials == 0 {
        return domain("estimate_smoothness needs at least one trial");
    }
    if !(radius > T::zero()) {
        return domain("radius must be positive");
    }
    let dim = center.theta.len();
    let mut l_hat = T::zero();
    let mut l0_hat = T::zero();
    for _ in 0..trials {
        let off = ball_point(dim, radius, rng);
        let a = center.with_theta(
            center
                .theta
                .iter()
                .zip(&off)
                .map(|(&c, &o)| c + o)
                .collect(),
        )?;
        let delta = ball_point(dim, radius, rng);
        let b = a.with_theta(a.theta.iter().zip(&delta).map(|(&c, &o)| c + o).collect())?;
        let ga = batch_gradient(&a, dataset)?;
        let gb = batch_gradient(&b, dataset)?;
        let dist = norm(&delta);
        if dist > T::zero() {
            let diff: Vec<T> = ga.iter().zip(&gb).map(|(&x, &y)| x - y).collect();
            l_hat = l_hat.max(norm(&diff) / dist);
        }
        l0_hat = l0_hat.max(norm(&ga)).max(norm(&gb));
    }
    Ok(Smoothness { l_hat, l0_hat })
}
