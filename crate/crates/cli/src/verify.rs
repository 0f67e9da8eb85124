//! Invariant suites run by `fairfl verify`.
//!
//! A suite returns `Err` with a short description of the first violation.
//! The hidden `--inject-fault <suite>` flag perturbs one suite's checked
//! quantity so the harness can be seen to fail.

use fairfl::bargain::{certify_pf, nbs_grid};
use fairfl::datagen::{dirichlet_partition, gaussian_mixture_data};
use fairfl::fedsim::{
    aggregate_indexed, load_checkpoint, local_update, lr_bound_fedavg, rng_stream, run_training,
    save_checkpoint, Algorithm, TrainConfig,
};
use fairfl::metrics::{summarize, ClientOutcome};
use fairfl::model::{
    batch_gradient, estimate_smoothness, fd_gradient, loss_and_gradient, norm, Arch,
};
use fairfl::scalarize::{
    constraint_residual, dual_weights, duality_gap, huberized_log, huberized_log_derivative,
};
use fairfl::{LossVector, ModelParams, Sample, ScalarizerSpec, UtilityProfile};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::fixtures::{nbs_instance, rate_problem};

type SuiteFn = fn(&mut ChaCha8Rng, bool) -> Result<(), String>;

/// Registered suites in execution order.
pub const SUITES: &[(&str, SuiteFn)] = &[
    ("duality", duality),
    ("huber-continuity", huber_continuity),
    ("fd-gradient", fd_gradient_suite),
    ("surrogate-step", surrogate_step),
    ("nbs-pf-equivalence", nbs_pf_equivalence),
    ("descent-under-bound", descent_under_bound),
    ("aggregation-order", aggregation_order),
    ("partition-min-size", partition_min_size),
    ("checkpoint-roundtrip", checkpoint_roundtrip),
    ("config-roundtrip", config_roundtrip),
    ("tail-ordering", tail_ordering),
];

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|(n, _)| *n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

/// Runs every suite; `fault` names the suite to sabotage.
pub fn run_suites(fault: Option<&str>) -> Vec<SuiteResult> {
    SUITES
        .iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut rng = rng_stream(0x7e51, i as u64, 0);
            SuiteResult {
                name,
                outcome: f(&mut rng, fault == Some(name)),
            }
        })
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: fairfl::Error) -> String {
    e.to_string()
}

fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

/// Random scalarizer of each family, with losses drawn from its domain.
pub fn random_spec_instance<R: Rng + ?Sized>(
    family: usize,
    rng: &mut R,
) -> (ScalarizerSpec, LossVector) {
    let n = rng.random_range(1..=8);
    let spec = match family {
        0 => ScalarizerSpec::FedAvg,
        1 => ScalarizerSpec::QFfl {
            q: rng.random_range(0.0..5.0),
        },
        2 => ScalarizerSpec::Term {
            alpha: rng.random_range(0.05..3.0),
        },
        _ => {
            let m = rng.random_range(1.0..10.0);
            ScalarizerSpec::PropFair {
                baseline: m,
                epsilon: m * rng.random_range(0.01..0.5),
            }
        }
    };
    let hi = match spec {
        ScalarizerSpec::PropFair { baseline, .. } => 0.99 * baseline,
        _ => 3.0,
    };
    let f: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..hi)).collect();
    (
        spec,
        LossVector::new(f, random_simplex(n, rng)).expect("valid loss vector"),
    )
}

fn duality(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    for family in 0..4 {
        for _ in 0..250 {
            let (spec, lv) = random_spec_instance(family, rng);
            let mut gap = duality_gap(&spec, &lv).map_err(err)?;
            if fault {
                gap += 1e-6;
            }
            ensure(gap <= 1e-8, || format!("{spec:?}: duality gap {gap:e}"))?;
            let lambda = dual_weights(&spec, &lv).map_err(err)?;
            let res = constraint_residual(&spec, &lambda, lv.weights()).map_err(err)?;
            ensure(res <= 1e-9, || {
                format!("{spec:?}: constraint residual {res:e}")
            })?;
        }
    }
    Ok(())
}

/// Largest value and slope jumps of the huberized log across `t = M - eps`.
pub fn huber_jump(m: f64, eps: f64) -> Result<(f64, f64), fairfl::Error> {
    let t0 = m - eps;
    let t1 = t0.next_up();
    let dv = (huberized_log(m, eps, t0)? - huberized_log(m, eps, t1)?).abs();
    let dd = (huberized_log_derivative(m, eps, t0)? - huberized_log_derivative(m, eps, t1)?).abs();
    // the step t1 - t0 itself moves the value by about |slope| ulp(t0)
    Ok((dv - (t1 - t0) / eps, dd))
}

fn huber_continuity(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    for _ in 0..1000 {
        let m = rng.random_range(0.5..10.0);
        let eps = m * rng.random_range(0.01..0.99);
        let (mut dv, dd) = huber_jump(m, eps).map_err(err)?;
        if fault {
            dv += 1e-6;
        }
        ensure(dv <= 1e-9 && dd <= 1e-9, || {
            format!("M={m}, eps={eps}: value jump {dv:e}, slope jump {dd:e}")
        })?;
    }
    Ok(())
}

fn random_arch<R: Rng + ?Sized>(mlp: bool, rng: &mut R) -> Arch {
    let d = rng.random_range(1..=5);
    let classes = rng.random_range(2..=4);
    if mlp {
        Arch::Mlp1 {
            d,
            hidden: rng.random_range(1..=6),
            classes,
        }
    } else {
        Arch::LinearSoftmax { d, classes }
    }
}

/// Random model and batch for gradient checks.
pub fn random_gradient_case<R: Rng + ?Sized>(mlp: bool, rng: &mut R) -> (ModelParams, Vec<Sample>) {
    let arch = random_arch(mlp, rng);
    let theta: Vec<f64> = (0..arch.n_params())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let model = ModelParams::new(arch, theta).expect("finite parameters");
    let batch = (0..rng.random_range(1..=8))
        .map(|_| {
            let x = (0..arch.input_dim())
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            Sample::new(x, rng.random_range(0..arch.classes()))
        })
        .collect();
    (model, batch)
}

/// `||g - g_fd|| / ||g_fd||` with a central-difference step of `1e-5`.
pub fn gradient_rel_error(model: &ModelParams, batch: &[Sample]) -> Result<f64, fairfl::Error> {
    let g = batch_gradient(model, batch)?;
    let f = fd_gradient(model, batch, 1e-5)?;
    let diff: Vec<f64> = g.iter().zip(&f).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&f).max(f64::MIN_POSITIVE))
}

fn fd_gradient_suite(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    for mlp in [false, true] {
        for _ in 0..25 {
            let (model, batch) = random_gradient_case(mlp, rng);
            let mut e = gradient_rel_error(&model, &batch).map_err(err)?;
            if fault {
                e += 1e-3;
            }
            ensure(e < 1e-5, || {
                format!("{:?}: relative error {e:e}", model.arch())
            })?;
        }
    }
    Ok(())
}

/// Number of coordinates where one full-batch local step differs from
/// `theta - (eta_eff * slope) * grad l_S`, where `eta_eff` is `eta` except
/// on the linear PropFair branch, where it is `eta * eps / M`.
pub fn surrogate_step_mismatch(
    spec: &ScalarizerSpec,
    model: &ModelParams,
    batch: &[Sample],
    eta: f64,
) -> Result<usize, fairfl::Error> {
    let upd = local_update(
        batch,
        model,
        spec,
        eta,
        1,
        batch.len(),
        &mut rng_stream(0, 0, 0),
    )?;
    let (loss, grad) = loss_and_gradient(model, batch)?;
    let (_, slope) = fairfl::scalarize::surrogate(spec, loss)?;
    let eta_eff = match *spec {
        ScalarizerSpec::PropFair { baseline, epsilon } if loss > baseline - epsilon => {
            eta * epsilon / baseline
        }
        _ => eta,
    };
    let expected = model.stepped(eta_eff * slope, &grad)?;
    Ok(upd
        .model
        .theta()
        .iter()
        .zip(expected.theta())
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count())
}

fn surrogate_step(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    let specs = [
        ScalarizerSpec::PropFair {
            baseline: 5.0,
            epsilon: 0.2,
        },
        ScalarizerSpec::QFfl { q: 0.1 },
        ScalarizerSpec::Term { alpha: 0.5 },
    ];
    for spec in specs {
        for _ in 0..10 {
            let (model, batch) = random_gradient_case(rng.random_bool(0.5), rng);
            let eta = if fault { 0.1 * (1.0 + 1e-9) } else { 0.1 };
            let mut off = surrogate_step_mismatch(&spec, &model, &batch, eta).map_err(err)?;
            if fault {
                off += 1;
            }
            ensure(off == 0, || {
                format!("{spec:?}: {off} coordinates differ from slope * grad")
            })?;
        }
    }
    Ok(())
}

fn nbs_pf_equivalence(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    for n in [2, 3] {
        for _ in 0..2 {
            let inst = nbs_instance(n, rng);
            let nbs = nbs_grid(&inst.points, &inst.p).map_err(err)?;
            ensure(nbs.index == inst.optimum, || {
                format!("n={n}: argmax {} != {}", nbs.index, inst.optimum)
            })?;
            let mut star = nbs.point.clone();
            if fault {
                star[0] *= 0.9;
            }
            let profile = UtilityProfile::new(star, inst.p.clone()).map_err(err)?;
            let cert = certify_pf(&profile, &inst.points, 1e-9).map_err(err)?;
            ensure(cert.certified, || {
                format!("n={n}: argmax not certified, score {:e}", cert.worst_score)
            })?;
        }
    }
    Ok(())
}

fn descent_under_bound(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    let fd = rate_problem(3);
    let arch = Arch::LinearSoftmax {
        d: crate::fixtures::RATE_FEATURES,
        classes: 2,
    };
    let smooth = estimate_smoothness(&fd.clients[0].train, arch, 32, 1.0, rng).map_err(err)?;
    let n = fd.clients[0].n_i();
    let bound = lr_bound_fedavg(smooth.l_hat, &fd.weights(), &[1, 1, 1]).map_err(err)?;
    let lr = if fault {
        8.0 / smooth.l_hat
    } else {
        0.5 * bound
    };
    let cfg = TrainConfig {
        algorithm: Algorithm::Scalarized(ScalarizerSpec::FedAvg),
        arch,
        rounds: 30,
        local_epochs: 1,
        batch_size: n,
        lr,
        participation_frac: 1.0,
        seed: 1,
        eval_every: 1,
    };
    let h = run_training(&fd, &cfg, None).map_err(err)?;
    for w in h.records.windows(2) {
        ensure(w[1].objective <= w[0].objective + 1e-12, || {
            format!(
                "objective rose at round {}: {} -> {}",
                w[1].round, w[0].objective, w[1].objective
            )
        })?;
    }
    Ok(())
}

fn aggregation_order(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    let arch = Arch::LinearSoftmax { d: 3, classes: 3 };
    for _ in 0..20 {
        let mut entries: Vec<(usize, ModelParams, usize)> = (0..rng.random_range(2..7))
            .map(|i| {
                let theta = (0..arch.n_params())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                (
                    i,
                    ModelParams::new(arch, theta).expect("finite"),
                    rng.random_range(1..50),
                )
            })
            .collect();
        let a = aggregate_indexed(&entries).map_err(err)?;
        entries.reverse();
        if fault {
            entries.pop();
        }
        let b = aggregate_indexed(&entries).map_err(err)?;
        ensure(a == b, || "aggregate depends on client order".into())?;
    }
    Ok(())
}

fn partition_min_size(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    for _ in 0..10 {
        let pool = gaussian_mixture_data(40, 4, 3, 2.0, rng).map_err(err)?;
        let min_size = if fault { 200 } else { 5 };
        let fd = dirichlet_partition(&pool, 8, 0.3, min_size, 100, rng).map_err(err)?;
        let counts = fd.counts();
        ensure(counts.iter().sum::<usize>() == pool.len(), || {
            format!("samples lost: {counts:?}")
        })?;
        ensure(counts.iter().all(|&c| c >= 5), || {
            format!("client below min size: {counts:?}")
        })?;
    }
    Ok(())
}

fn checkpoint_roundtrip(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for mlp in [false, true] {
        let (model, batch) = random_gradient_case(mlp, rng);
        save_checkpoint(dir.path(), &model, 3, "h").map_err(err)?;
        let (mut back, _) = load_checkpoint(dir.path()).map_err(err)?;
        if fault {
            back = back
                .stepped(1e-12, &vec![1.0; back.theta().len()])
                .map_err(err)?;
        }
        let a = fairfl::model::batch_loss(&model, &batch).map_err(err)?;
        let b = fairfl::model::batch_loss(&back, &batch).map_err(err)?;
        ensure(a.to_bits() == b.to_bits(), || {
            format!("probe loss {a} != {b}")
        })?;
    }
    Ok(())
}

fn config_roundtrip(_: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    let raw = "seeds = [1, 2]\n[dataset]\nclasses = 3\n[train]\nalgorithm = \"propfair\"\nbaseline = 5.0\n[metrics]\nk_percent = [10.0, 20.0]\n";
    let a = ExperimentConfig::parse(raw, "inline").map_err(|e| e.to_string())?;
    let mut text = toml::to_string(&a).map_err(|e| e.to_string())?;
    if fault {
        text = text.replace("5.0", "4.0");
    }
    let b = ExperimentConfig::parse(&text, "snapshot").map_err(|e| e.to_string())?;
    ensure(a == b && a.config_hash() == b.config_hash(), || {
        "snapshot does not reparse identically".into()
    })
}

fn tail_ordering(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    for _ in 0..100 {
        let outcomes: Vec<ClientOutcome> = (0..rng.random_range(1..30))
            .map(|i| ClientOutcome {
                client_id: i,
                n_i: rng.random_range(1..100),
                test_accuracy: rng.random_range(0.0..1.0),
                test_loss: 0.0,
            })
            .collect();
        let k = rng.random_range(1.0..100.0);
        let s = summarize(&outcomes, k).map_err(err)?;
        let worst_k = if fault { s.worst_k + 2.0 } else { s.worst_k };
        ensure(
            s.worst <= worst_k
                && worst_k <= s.mean_unweighted + 1e-12
                && s.mean_unweighted <= s.best_k + 1e-12,
            || format!("tail means out of order: {s:?}"),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_contains_required_suites() {
        let names = suite_names();
        for required in [
            "duality",
            "huber-continuity",
            "fd-gradient",
            "nbs-pf-equivalence",
            "descent-under-bound",
        ] {
            assert!(names.contains(&required), "{required}");
        }
    }

    #[test]
    fn clean_run_passes_and_each_fault_is_caught() {
        for r in run_suites(None) {
            assert!(r.outcome.is_ok(), "{}: {:?}", r.name, r.outcome);
        }
        for name in suite_names() {
            let failed: Vec<_> = run_suites(Some(name))
                .into_iter()
                .filter(|r| r.outcome.is_err())
                .map(|r| r.name)
                .collect();
            assert_eq!(failed, vec![name]);
        }
    }
}
