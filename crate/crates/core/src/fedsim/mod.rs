//! Federated training engine.
//!
//! Each round samples participating clients, runs local minibatch SGD on the
//! scalarized surrogate from the current global model, and aggregates the
//! local models. The minimax baseline (AFL) alternates the same local rounds
//! with projected ascent on the client weights.
//!
//! Every source of randomness is a private ChaCha stream keyed by
//! `(seed, round, client)`, and aggregation runs in ascending client order,
//! so a run is bit-reproducible regardless of the worker count.

mod checkpoint;
mod theory;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, META_FILE, PARAMS_FILE};
pub use theory::{
    estimate_sigmas, lr_bound_fedavg, lr_bound_propfair, variance_terms, PropFairBound,
    SigmaEstimates, VarianceInputs,
};

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::FederatedDataset;
use crate::error::{domain, Error, Result};
use crate::model::{accuracy, batch_loss, loss_and_gradient, Arch};
use crate::scalarize::{effective_weights, surrogate};
use crate::{LossVector, ModelParams, Sample, ScalarizerSpec};

/// Training objective of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Algorithm {
    /// Local SGD on `phi(l_S)` for one of the scalarized objectives.
    Scalarized(ScalarizerSpec),
    /// Minimax over client mixtures; `gamma_w` is the local step size.
    Afl { gamma_w: f64, gamma_lambda: f64 },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Scalarized(s) => s.name(),
            Algorithm::Afl { .. } => "afl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub arch: Arch,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Local step size. Zero is allowed and freezes the model.
    pub lr: f64,
    pub participation_frac: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self, n_clients: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "lr must be finite and nonnegative, got {}",
                self.lr
            ));
        }
        if !(self.participation_frac > 0.0 && self.participation_frac <= 1.0) {
            return bad(format!(
                "participation_frac must lie in (0, 1], got {}",
                self.participation_frac
            ));
        }
        if n_clients == 0 {
            return bad("no clients".into());
        }
        match self.algorithm {
            Algorithm::Scalarized(spec) => spec.validate()?,
            Algorithm::Afl {
                gamma_w,
                gamma_lambda,
            } => {
                if !(gamma_w >= 0.0 && gamma_w.is_finite()) {
                    return bad(format!("gamma_w must be nonnegative, got {gamma_w}"));
                }
                if !(gamma_lambda >= 0.0 && gamma_lambda.is_finite()) {
                    return bad(format!(
                        "gamma_lambda must be nonnegative, got {gamma_lambda}"
                    ));
                }
            }
        }
        self.arch.validate()
    }

    /// `ceil(frac * n)`, at least one and at most `n`.
    pub fn participants_per_round(&self, n_clients: usize) -> usize {
        ((self.participation_frac * n_clients as f64).ceil() as usize).clamp(1, n_clients.max(1))
    }
}

/// Evaluation of the global model at the start of a round (or after the last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Clients that train in this round; the final record repeats the last round's.
    pub participants: Vec<usize>,
    /// Full training-set loss of every client.
    pub train_loss: Vec<f64>,
    /// NaN for a client without test data.
    pub test_loss: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    /// Client weights in effect: slope-implied weights, or the AFL mixture.
    pub lambda: Vec<f64>,
    /// `sum_i p_i phi(f_i)`, or `sum_i lambda_i f_i` for AFL.
    pub objective: f64,
    /// Squared norm of the full-batch gradient of `objective`.
    pub grad_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub config: TrainConfig,
    pub records: Vec<RoundRecord>,
    /// PropFair minibatches with `l_S > M / 2`, per round.
    pub violations: Vec<usize>,
    pub final_model: ModelParams,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream id used for participant sampling in [`rng_stream`].
pub const PARTICIPATION_STREAM: u64 = u64::MAX;
/// Stream id used for model initialization in [`rng_stream`].
pub const INIT_STREAM: u64 = u64::MAX - 1;

/// Independent generator for `(seed, round, client)`.
pub fn rng_stream(seed: u64, round: u64, client: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(splitmix64(seed) ^ round) ^ client))
}

/// Number of local steps `K_i = local_epochs * ceil(n_i / m)`.
pub fn local_steps(n_i: usize, local_epochs: usize, batch_size: usize) -> usize {
    local_epochs * n_i.div_ceil(batch_size.max(1))
}

/// Result of one client's local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub model: ModelParams,
    pub steps: usize,
    /// PropFair minibatches with `l_S > M / 2`.
    pub violations: usize,
}

/// Runs `local_epochs` shuffled passes of minibatch SGD on `phi(l_S)`.
///
/// Every step averages the loss over the batch first, then applies the
/// surrogate slope: `theta -= eta_eff * phi'(l_S) * grad l_S`. PropFair scales
/// the step to `eta * eps / M` on the linear branch.
pub fn local_update<R: Rng + ?Sized>(
    train: &[Sample],
    theta: &ModelParams,
    spec: &ScalarizerSpec,
    eta: f64,
    local_epochs: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<LocalUpdate> {
    if train.is_empty() {
        return Err(Error::Empty("client training set".into()));
    }
    if batch_size == 0 {
        return domain("batch size must be positive");
    }
    let mut model = theta.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch: Vec<Sample> = Vec::with_capacity(batch_size.min(train.len()));
    let mut steps = 0;
    let mut violations = 0;
    for _ in 0..local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let samples: &[Sample] = if chunk.len() == train.len() {
                // the full batch is order-independent
                train
            } else {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| train[i].clone()));
                &batch
            };
            let (loss, grad) = loss_and_gradient(&model, samples)?;
            let (_, slope) = surrogate(spec, loss)?;
            let eta_eff = match *spec {
                ScalarizerSpec::PropFair { baseline, epsilon } => {
                    if loss > baseline / 2.0 {
                        violations += 1;
                    }
                    if loss > baseline - epsilon {
                        eta * epsilon / baseline
                    } else {
                        eta
                    }
                }
                _ => eta,
            };
            model = model.stepped(eta_eff * slope, &grad)?;
            steps += 1;
        }
    }
    Ok(LocalUpdate {
        model,
        steps,
        violations,
    })
}

/// `sum_i w_i theta_i / sum_i w_i`, reduced in the given order.
///
/// Computed as `theta_0 + sum_i w_i (theta_i - theta_0)`, which returns
/// identical inputs bit for bit.
pub fn aggregate_weighted(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::Empty("no models to aggregate".into()))?;
    if models.len() != weights.len() {
        return Err(Error::LengthMismatch(format!(
            "{} models vs {} weights",
            models.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return domain("aggregation weights must be finite and nonnegative");
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return domain("aggregation weights sum to zero");
    }
    let base = first.theta();
    let mut theta = base.to_vec();
    for (m, &w) in models.iter().zip(weights) {
        if m.arch() != first.arch() {
            return Err(Error::DimensionMismatch {
                expected: base.len(),
                got: m.theta().len(),
            });
        }
        let share = w / total;
        for ((t, &x), &b) in theta.iter_mut().zip(m.theta()).zip(base) {
            *t += share * (x - b);
        }
    }
    first.with_theta(theta)
}

/// Sample-count weighted average `sum_i n_i theta_i / sum_j n_j`.
pub fn aggregate(models: &[ModelParams], counts: &[usize]) -> Result<ModelParams> {
    let refs: Vec<&ModelParams> = models.iter().collect();
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    aggregate_weighted(&refs, &weights)
}

/// [`aggregate`] over `(client_id, model, n_i)` entries in any order; the
/// reduction always runs in ascending client id.
pub fn aggregate_indexed(entries: &[(usize, ModelParams, usize)]) -> Result<ModelParams> {
    let mut sorted: Vec<&(usize, ModelParams, usize)> = entries.iter().collect();
    sorted.sort_by_key(|e| e.0);
    let refs: Vec<&ModelParams> = sorted.iter().map(|e| &e.1).collect();
    let weights: Vec<f64> = sorted.iter().map(|e| e.2 as f64).collect();
    aggregate_weighted(&refs, &weights)
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// One projected ascent step `lambda <- proj(lambda + gamma * losses)`.
pub fn afl_dual_step(lambda: &[f64], losses: &[f64], gamma: f64) -> Vec<f64> {
    let raw: Vec<f64> = lambda
        .iter()
        .zip(losses)
        .map(|(&l, &f)| l + gamma * f)
        .collect();
    simplex_project(&raw)
}

fn sample_participants(n: usize, k: usize, seed: u64, round: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = rng_stream(seed, round as u64, PARTICIPATION_STREAM);
    let mut chosen = sample_indices(&mut rng, n, k).into_vec();
    chosen.sort_unstable();
    chosen
}

struct ClientEval {
    train_loss: f64,
    grad: Vec<f64>,
    test_loss: f64,
    test_accuracy: f64,
}

fn evaluate_client(model: &ModelParams, train: &[Sample], test: &[Sample]) -> Result<ClientEval> {
    let (train_loss, grad) = loss_and_gradient(model, train)?;
    let (test_loss, test_accuracy) = if test.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (batch_loss(model, test)?, accuracy(model, test)?)
    };
    Ok(ClientEval {
        train_loss,
        grad,
        test_loss,
        test_accuracy,
    })
}

/// Full-train losses of every client, in client order.
pub fn client_train_losses(fd: &FederatedDataset, model: &ModelParams) -> Result<Vec<f64>> {
    fd.clients
        .par_iter()
        .map(|c| batch_loss(model, &c.train))
        .collect()
}

fn evaluate(
    fd: &FederatedDataset,
    model: &ModelParams,
    round: usize,
    participants: Vec<usize>,
    algorithm: &Algorithm,
    lambda: &[f64],
) -> Result<RoundRecord> {
    let evals: Vec<ClientEval> = fd
        .clients
        .par_iter()
        .map(|c| evaluate_client(model, &c.train, &c.test))
        .collect::<Result<_>>()?;
    let train_loss: Vec<f64> = evals.iter().map(|e| e.train_loss).collect();
    // objective weight and surrogate (value, slope) per client
    let (weights, terms): (Vec<f64>, Vec<(f64, f64)>) = match algorithm {
        Algorithm::Scalarized(spec) => {
            let p = fd.weights();
            let terms = train_loss
                .iter()
                .map(|&f| surrogate(spec, f))
                .collect::<Result<_>>()?;
            (p, terms)
        }
        Algorithm::Afl { .. } => (
            lambda.to_vec(),
            train_loss.iter().map(|&f| (f, 1.0)).collect(),
        ),
    };
    let reported = match algorithm {
        Algorithm::Scalarized(spec) => {
            effective_weights(spec, &LossVector::new(train_loss.clone(), weights.clone())?)?
        }
        Algorithm::Afl { .. } => lambda.to_vec(),
    };
    let mut objective = 0.0;
    let mut grad = vec![0.0; model.theta().len()];
    for ((e, &w), &(value, slope)) in evals.iter().zip(&weights).zip(&terms) {
        if w == 0.0 {
            continue;
        }
        objective += w * value;
        for (g, &x) in grad.iter_mut().zip(&e.grad) {
            *g += w * slope * x;
        }
    }
    Ok(RoundRecord {
        round,
        participants,
        train_loss,
        test_loss: evals.iter().map(|e| e.test_loss).collect(),
        test_accuracy: evals.iter().map(|e| e.test_accuracy).collect(),
        lambda: reported,
        objective,
        grad_norm_sq: grad.iter().map(|g| g * g).sum(),
    })
}

fn initial_model(
    config: &TrainConfig,
    init: Option<&ModelParams>,
    fd: &FederatedDataset,
) -> Result<ModelParams> {
    if let Some(dim) = fd.dim() {
        if dim != config.arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: config.arch.input_dim(),
                got: dim,
            });
        }
    }
    match init {
        Some(m) => {
            if m.arch() != config.arch {
                return Err(Error::Config(format!(
                    "initial model architecture {:?} does not match {:?}",
                    m.arch(),
                    config.arch
                )));
            }
            Ok(m.clone())
        }
        None => ModelParams::init(config.arch, &mut rng_stream(config.seed, INIT_STREAM, 0)),
    }
}

/// Trains with the configured objective; AFL configs are routed to [`run_afl`].
pub fn run_training(
    fd: &FederatedDataset,
    config: &TrainConfig,
    init: Option<&ModelParams>,
) -> Result<RunHistory> {
    run(fd, config, init)
}

/// Minimax training: `lambda`-weighted aggregation of FedAvg local rounds,
/// then one projected ascent step on the clients' end-of-round train losses.
pub fn run_afl(
    fd: &FederatedDataset,
    config: &TrainConfig,
    init: Option<&ModelParams>,
) -> Result<RunHistory> {
    if !matches!(config.algorithm, Algorithm::Afl { .. }) {
        return Err(Error::Config("run_afl needs the AFL algorithm".into()));
    }
    run(fd, config, init)
}

fn run(
    fd: &FederatedDataset,
    config: &TrainConfig,
    init: Option<&ModelParams>,
) -> Result<RunHistory> {
    fd.validate_for_training()?;
    let n = fd.n_clients();
    config.validate(n)?;
    let counts = fd.counts();
    let k = config.participants_per_round(n);
    let (spec, eta, gamma_lambda) = match config.algorithm {
        Algorithm::Scalarized(spec) => (spec, config.lr, None),
        Algorithm::Afl {
            gamma_w,
            gamma_lambda,
        } => (ScalarizerSpec::FedAvg, gamma_w, Some(gamma_lambda)),
    };
    let mut lambda = vec![1.0 / n as f64; n];
    let mut model = initial_model(config, init, fd)?;
    let mut records = Vec::with_capacity(config.rounds.div_ceil(config.eval_every) + 1);
    let mut violations = Vec::with_capacity(config.rounds);
    let mut participants = Vec::new();

    for t in 0..config.rounds {
        participants = sample_participants(n, k, config.seed, t);
        if t % config.eval_every == 0 {
            records.push(evaluate(
                fd,
                &model,
                t,
                participants.clone(),
                &config.algorithm,
                &lambda,
            )?);
        }
        let updates: Vec<LocalUpdate> = participants
            .par_iter()
            .map(|&i| {
                let mut rng = rng_stream(config.seed, t as u64, i as u64);
                local_update(
                    &fd.clients[i].train,
                    &model,
                    &spec,
                    eta,
                    config.local_epochs,
                    config.batch_size,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        violations.push(updates.iter().map(|u| u.violations).sum());
        let weights: Vec<f64> = participants
            .iter()
            .map(|&i| {
                if gamma_lambda.is_some() {
                    lambda[i]
                } else {
                    counts[i] as f64
                }
            })
            .collect();
        if weights.iter().sum::<f64>() > 0.0 {
            let refs: Vec<&ModelParams> = updates.iter().map(|u| &u.model).collect();
            model = aggregate_weighted(&refs, &weights)?;
        }
        if let Some(gamma) = gamma_lambda {
            let losses = client_train_losses(fd, &model)?;
            lambda = afl_dual_step(&lambda, &losses, gamma);
        }
    }
    records.push(evaluate(
        fd,
        &model,
        config.rounds,
        participants,
        &config.algorithm,
        &lambda,
    )?);
    Ok(RunHistory {
        config: config.clone(),
        records,
        violations,
        final_model: model,
    })
}
