//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 10 and 11 are soft: a miss prints SOFT-FAIL with the per-seed
//! values and does not fail the run.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fairfl::bargain::{certify_pf, nbs_grid};
use fairfl::datagen::{gaussian_mixture_data, ClientDataset, FederatedDataset};
use fairfl::fedsim::{
    lr_bound_fedavg, lr_bound_propfair, rng_stream, run_training, variance_terms, Algorithm,
    TrainConfig, VarianceInputs,
};
use fairfl::model::{estimate_smoothness, loss_and_gradient, Arch};
use fairfl::scalarize::{
    constraint_residual, dual_weights, duality_gap, generalized_mean, nash_product,
};
use fairfl::{LossVector, ModelParams, ScalarizerSpec, UtilityProfile};
use fairfl_cli::commands::{cmd_run, pf_report, seed_dir};
use fairfl_cli::fixtures::{nbs_instance, rate_problem, RATE_FEATURES};
use fairfl_cli::output::SUMMARY_FILE;
use fairfl_cli::verify::{
    gradient_rel_error, huber_jump, random_gradient_case, random_spec_instance,
    surrogate_step_mismatch,
};
use fairfl_cli::GlobalOpts;
use rand::Rng;
use serde_json::Value;

type Check = fn() -> Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    soft: bool,
    check: Check,
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "duality suite",
            budget: secs(5),
            soft: false,
            check: duality,
        },
        Criterion {
            id: 2,
            name: "huberized continuity",
            budget: secs(1),
            soft: false,
            check: huber,
        },
        Criterion {
            id: 3,
            name: "gradient oracle",
            budget: secs(30),
            soft: false,
            check: gradients,
        },
        Criterion {
            id: 4,
            name: "NBS equals PF",
            budget: secs(60),
            soft: false,
            check: nbs_pf,
        },
        Criterion {
            id: 5,
            name: "Nash-product dominance",
            budget: secs(1),
            soft: false,
            check: nash_dominance,
        },
        Criterion {
            id: 6,
            name: "PropFair centralized equivalence",
            budget: secs(10),
            soft: false,
            check: centralized,
        },
        Criterion {
            id: 7,
            name: "convergence shape",
            budget: secs(300),
            soft: false,
            check: convergence,
        },
        Criterion {
            id: 8,
            name: "theorem constants",
            budget: secs(1),
            soft: false,
            check: theorem_constants,
        },
        Criterion {
            id: 9,
            name: "AFL failure analogue",
            budget: secs(300),
            soft: false,
            check: afl_failure,
        },
        Criterion {
            id: 10,
            name: "PF directionality",
            budget: secs(900),
            soft: true,
            check: pf_direction,
        },
        Criterion {
            id: 11,
            name: "worst-client balance",
            budget: secs(900),
            soft: true,
            check: worst_balance,
        },
        Criterion {
            id: 12,
            name: "determinism",
            budget: secs(600),
            soft: false,
            check: determinism,
        },
    ];
    let mut hard_failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => {
                Err(format!("{detail}; over budget {:?}", c.budget))
            }
            r => r,
        };
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) if c.soft => ("SOFT-FAIL", d),
            Err(d) => {
                hard_failures += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} [{:>2}] {}: {detail} ({:.2} s)",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if hard_failures > 0 {
        std::process::exit(1);
    }
}

fn require(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn duality() -> Result<String, String> {
    let mut rng = rng_stream(1, 0, 0);
    let (mut worst_gap, mut worst_res) = (0.0f64, 0.0f64);
    for family in 0..4 {
        for _ in 0..1000 {
            let (spec, lv) = random_spec_instance(family, &mut rng);
            let gap = duality_gap(&spec, &lv).map_err(|e| e.to_string())?;
            let lambda = dual_weights(&spec, &lv).map_err(|e| e.to_string())?;
            let res =
                constraint_residual(&spec, &lambda, lv.weights()).map_err(|e| e.to_string())?;
            worst_gap = worst_gap.max(gap);
            worst_res = worst_res.max(res);
        }
    }
    require(
        worst_gap <= 1e-8 && worst_res <= 1e-9,
        format!("4000 instances, max gap {worst_gap:.2e} (<= 1e-8), max residual {worst_res:.2e} (<= 1e-9)"),
    )
}

fn huber() -> Result<String, String> {
    let mut rng = rng_stream(2, 0, 0);
    let (mut dv, mut dd) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let m = rng.random_range(0.5..10.0);
        let eps = m * rng.random_range(0.01..0.99);
        let (v, d) = huber_jump(m, eps).map_err(|e| e.to_string())?;
        dv = dv.max(v);
        dd = dd.max(d);
    }
    require(
        dv <= 1e-9 && dd <= 1e-9,
        format!("1000 (M, eps), max value jump {dv:.2e}, max slope jump {dd:.2e} (<= 1e-9)"),
    )
}

fn gradients() -> Result<String, String> {
    let mut rng = rng_stream(3, 0, 0);
    let mut worst = [0.0f64; 2];
    for (slot, mlp) in [false, true].into_iter().enumerate() {
        for _ in 0..200 {
            let (model, batch) = random_gradient_case(mlp, &mut rng);
            worst[slot] =
                worst[slot].max(gradient_rel_error(&model, &batch).map_err(|e| e.to_string())?);
        }
    }
    let mut mismatched = 0;
    for family in 0..3 {
        for _ in 0..100 {
            let spec = match family {
                0 => ScalarizerSpec::PropFair {
                    baseline: rng.random_range(2.0..6.0),
                    epsilon: 0.2,
                },
                1 => ScalarizerSpec::QFfl {
                    q: rng.random_range(0.0..2.0),
                },
                _ => ScalarizerSpec::Term {
                    alpha: rng.random_range(0.1..2.0),
                },
            };
            let (model, batch) = random_gradient_case(rng.random_bool(0.5), &mut rng);
            mismatched +=
                surrogate_step_mismatch(&spec, &model, &batch, 0.1).map_err(|e| e.to_string())?;
        }
    }
    require(
        worst[0] < 1e-5 && worst[1] < 1e-5 && mismatched == 0,
        format!(
            "max rel error linear {:.2e}, mlp {:.2e} (< 1e-5); {mismatched} step coordinates differ from slope*grad over 300 cases",
            worst[0], worst[1]
        ),
    )
}

/// Certification tolerance of the discrete NBS check.
const GRID_TOL: f64 = 1e-9;

fn nbs_pf() -> Result<String, String> {
    let mut rng = rng_stream(4, 0, 0);
    let mut points_checked = 0;
    let mut min_fail_score = f64::INFINITY;
    for i in 0..50 {
        let n = if i % 2 == 0 { 2 } else { 3 };
        let inst = nbs_instance(n, &mut rng);
        if inst.points.len() > 10_000 {
            return Err(format!("instance {i} has {} points", inst.points.len()));
        }
        let nbs = nbs_grid(&inst.points, &inst.p).map_err(|e| e.to_string())?;
        if nbs.index != inst.optimum {
            return Err(format!(
                "instance {i}: argmax {} differs from bargaining point {}",
                nbs.index, inst.optimum
            ));
        }
        for (j, u) in inst.points.iter().enumerate() {
            let profile =
                UtilityProfile::new(u.clone(), inst.p.clone()).map_err(|e| e.to_string())?;
            let cert = certify_pf(&profile, &inst.points, GRID_TOL).map_err(|e| e.to_string())?;
            if j == nbs.index && !cert.certified {
                return Err(format!(
                    "instance {i}: argmax fails certification, score {:e}",
                    cert.worst_score
                ));
            }
            if j != nbs.index {
                if cert.certified {
                    return Err(format!("instance {i}: non-argmax point {j} certifies"));
                }
                min_fail_score = min_fail_score.min(cert.worst_score);
            }
            points_checked += 1;
        }
    }
    Ok(format!(
        "50 sets, {points_checked} points; argmax certified at tol {GRID_TOL:e}, smallest violation elsewhere {min_fail_score:.2e}"
    ))
}

fn nash_dominance() -> Result<String, String> {
    let p = vec![0.5, 0.5];
    let even = LossVector::new(vec![0.5, 0.5], p.clone()).map_err(|e| e.to_string())?;
    let skew = LossVector::new(vec![1.0 / 3.0, 2.0 / 3.0], p).map_err(|e| e.to_string())?;
    let mut margins = Vec::new();
    for m in [1.0, 1.5, 2.0, 5.0, 10.0] {
        let a = nash_product(&even, m).map_err(|e| e.to_string())?;
        let b = nash_product(&skew, m).map_err(|e| e.to_string())?;
        let spec = ScalarizerSpec::PropFair {
            baseline: m,
            epsilon: 0.2,
        };
        let ga = generalized_mean(&spec, &even).map_err(|e| e.to_string())?;
        let gb = generalized_mean(&spec, &skew).map_err(|e| e.to_string())?;
        if !(a - b > 1e-12 && gb - ga > 1e-12) {
            return Err(format!(
                "M={m}: nash {a} vs {b}, PropFair mean {ga} vs {gb}"
            ));
        }
        margins.push(a - b);
    }
    let listed: Vec<String> = margins.iter().map(|x| format!("{x:.3e}")).collect();
    Ok(format!(
        "nash margins {}; PropFair mean ordering agrees",
        listed.join(", ")
    ))
}

fn centralized() -> Result<String, String> {
    let mut rng = rng_stream(6, 0, 0);
    let arch = Arch::LinearSoftmax { d: 4, classes: 3 };
    let pool = gaussian_mixture_data(35, 3, 4, 1.0, &mut rng).map_err(|e| e.to_string())?;
    let sizes = [20, 35, 50];
    let mut clients = Vec::new();
    let mut at = 0;
    for n in sizes {
        clients.push(ClientDataset {
            train: pool[at..at + n].to_vec(),
            test: vec![],
        });
        at += n;
    }
    let fd = FederatedDataset {
        clients,
        global_test: None,
    };
    let (m, eps, eta) = (5.0, 0.2, 0.5);
    let cfg = TrainConfig {
        algorithm: Algorithm::Scalarized(ScalarizerSpec::PropFair {
            baseline: m,
            epsilon: eps,
        }),
        arch,
        rounds: 1,
        local_epochs: 1,
        batch_size: 64,
        lr: eta,
        participation_frac: 1.0,
        seed: 6,
        eval_every: 1,
    };
    let p = fd.weights();
    let mut fed = ModelParams::init(arch, &mut rng).map_err(|e| e.to_string())?;
    let mut central = fed.clone();
    let mut worst = 0.0f64;
    let mut max_loss = 0.0f64;
    for step in 0..100 {
        fed = run_training(&fd, &cfg, Some(&fed))
            .map_err(|e| e.to_string())?
            .final_model;
        let mut grad = vec![0.0; arch.n_params()];
        for (c, &w) in fd.clients.iter().zip(&p) {
            let (f, g) = loss_and_gradient(&central, &c.train).map_err(|e| e.to_string())?;
            max_loss = max_loss.max(f);
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += w * x / (m - f);
            }
        }
        central = central.stepped(eta, &grad).map_err(|e| e.to_string())?;
        let diff = fed
            .theta()
            .iter()
            .zip(central.theta())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
        if diff > 1e-10 {
            return Err(format!(
                "step {step}: max |theta_fed - theta_central| = {diff:e}"
            ));
        }
    }
    require(
        max_loss < m - eps,
        format!("100 steps, max abs deviation {worst:.2e} (<= 1e-10), losses below M - eps (max {max_loss:.3})"),
    )
}

fn rate_config(arch: Arch, n: usize, rounds: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        algorithm: Algorithm::Scalarized(ScalarizerSpec::FedAvg),
        arch,
        rounds,
        local_epochs: 1,
        batch_size: n,
        lr,
        participation_frac: 1.0,
        seed: 7,
        eval_every: 1,
    }
}

fn convergence() -> Result<String, String> {
    let fd = rate_problem(3);
    let n = fd.clients[0].n_i();
    let arch = Arch::LinearSoftmax {
        d: RATE_FEATURES,
        classes: 2,
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t in [64usize, 256, 1024] {
        let cfg = rate_config(arch, n, t, 2.0 / (t as f64).sqrt());
        let h = run_training(&fd, &cfg, None).map_err(|e| e.to_string())?;
        let min = h
            .records
            .iter()
            .map(|r| r.grad_norm_sq)
            .fold(f64::INFINITY, f64::min);
        xs.push((t as f64).ln());
        ys.push(min.ln());
    }
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();

    let smooth = estimate_smoothness(
        &fd.clients[0].train,
        arch,
        64,
        1.0,
        &mut rng_stream(7, 1, 0),
    )
    .map_err(|e| e.to_string())?;
    let bound =
        lr_bound_fedavg(smooth.l_hat, &fd.weights(), &[1, 1, 1]).map_err(|e| e.to_string())?;
    let h = run_training(&fd, &rate_config(arch, n, 200, 0.5 * bound), None)
        .map_err(|e| e.to_string())?;
    let rises = h
        .records
        .windows(2)
        .filter(|w| w[1].objective > w[0].objective + 1e-12)
        .count();
    require(
        (slope + 0.5).abs() <= 0.15 && rises == 0,
        format!(
            "log-log slope {slope:.3} (target -0.5 +- 0.15); eta = 0.5 * {bound:.4e} with L_hat {:.4}: {rises} objective increases in 200 rounds",
            smooth.l_hat
        ),
    )
}

fn theorem_constants() -> Result<String, String> {
    let e = |x: fairfl::Error| x.to_string();
    let pf = lr_bound_propfair(2.0, 1.0, 1.0, &[1.0], &[1]).map_err(e)?;
    let single = lr_bound_fedavg(1.0, &[1.0], &[1]).map_err(e)?;
    let ten_steps = lr_bound_fedavg(1.0, &[1.0], &[10]).map_err(e)?;
    let psi = variance_terms(&VarianceInputs::FedAvg {
        eta: 0.1,
        p: vec![1.0],
        k: vec![1],
        batch: 1,
        l: 1.0,
        sigma: 0.0,
        sigma_i: vec![1.0],
    })
    .map_err(e)?;
    let checks = [
        ("L_tilde", pf.l_tilde, 4.0),
        ("propfair eta", pf.eta_max, 0.036_872_499_798_415),
        ("fedavg K=1", single, 1.0 / 6.0),
        ("fedavg K=10", ten_steps, 0.002_408_501_601_253_129_1),
        ("Psi", psi, 0.005_718_281_828_459_045),
    ];
    let worst = checks
        .iter()
        .map(|&(_, got, want): &(&str, f64, f64)| (got - want).abs())
        .fold(0.0, f64::max);
    let listing: Vec<String> = checks
        .iter()
        .map(|(n, got, _)| format!("{n}={got}"))
        .collect();
    require(
        worst <= 1e-7,
        format!(
            "{}; max deviation {worst:.1e} (<= 1e-7)",
            listing.join(", ")
        ),
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).expect("write config");
    path
}

fn run(config: &Path, out: &Path) -> Result<(), String> {
    let opts = GlobalOpts {
        out: Some(out.to_path_buf()),
        seed_index: None,
    };
    cmd_run(config, &opts)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

fn seed_metrics(out: &Path, seed: u64) -> Result<Value, String> {
    let path = seed_dir(out, seed).join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    Ok(v["per_seed"][seed.to_string()].clone())
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn afl_failure() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let common = "seeds = [1, 2, 3, 4, 5]\n\
[dataset]\ngenerator = \"afl_failure\"\nn_major = 2000\n\
[output]\neval_every = 50\n";
    let algos = [
        (
            "afl",
            "algorithm = \"afl\"\ngamma_w = 0.5\ngamma_lambda = 0.1\n",
        ),
        ("fedavg", "algorithm = \"fedavg\"\nlr = 0.5\n"),
        (
            "propfair",
            "algorithm = \"propfair\"\nlr = 0.5\nbaseline = 2.0\nepsilon = 0.2\n",
        ),
    ];
    let mut means = Vec::new();
    for (name, train) in algos {
        let text =
            format!("{common}[train]\nrounds = 200\nbatch_size = 64\nlocal_epochs = 1\n{train}");
        let cfg = write_config(dir.path(), &format!("{name}.toml"), &text);
        let out = dir.path().join(name);
        run(&cfg, &out)?;
        let mut acc = Vec::new();
        for s in SEEDS {
            acc.push(
                seed_metrics(&out, s)?["global_test_accuracy"]
                    .as_f64()
                    .ok_or("missing global accuracy")?,
            );
        }
        means.push(acc.iter().sum::<f64>() / acc.len() as f64);
    }
    let (afl, fedavg, propfair) = (means[0], means[1], means[2]);
    require(
        fedavg >= 0.85 && propfair >= 0.85 && afl <= fedavg.min(propfair) - 0.15,
        format!("population accuracy over 5 seeds: AFL {afl:.4}, FedAvg {fedavg:.4}, PropFair {propfair:.4}"),
    )
}

fn mixture_config(algorithm: &str) -> String {
    format!(
        "seeds = [1, 2, 3, 4, 5]\n\
[dataset]\ngenerator = \"gaussian_mixture\"\nn_per_class = 300\nclasses = 5\ndim = 10\nseparation = 2.0\ntrain_frac = 0.8\n\
[dataset.partition]\nn_clients = 10\nbeta = 0.3\nmin_size = 10\n\
[model]\narch = \"linear_softmax\"\n\
[train]\nalgorithm = \"{algorithm}\"\nrounds = 100\nbatch_size = 32\nlr = 0.1\nbaseline = 2.0\nepsilon = 0.2\n\
[metrics]\nk_percent = [10.0]\n\
[output]\neval_every = 10\n"
    )
}

/// FedAvg and PropFair runs of the mixture task, shared by criteria 10 and 11.
fn mixture_runs() -> Result<&'static (tempfile::TempDir, PathBuf, PathBuf), String> {
    static RUNS: std::sync::OnceLock<Result<(tempfile::TempDir, PathBuf, PathBuf), String>> =
        std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let fedavg = dir.path().join("fedavg");
        let propfair = dir.path().join("propfair");
        run(
            &write_config(dir.path(), "fedavg.toml", &mixture_config("fedavg")),
            &fedavg,
        )?;
        run(
            &write_config(dir.path(), "propfair.toml", &mixture_config("propfair")),
            &propfair,
        )?;
        Ok((dir, fedavg, propfair))
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn pf_direction() -> Result<String, String> {
    let (_, fedavg, propfair) = mixture_runs()?;
    let mut aggs = Vec::new();
    for s in SEEDS {
        let report =
            pf_report(&seed_dir(propfair, s), &seed_dir(fedavg, s)).map_err(|e| e.to_string())?;
        aggs.push(
            report["weighted_aggregate"]
                .as_f64()
                .ok_or("missing aggregate")?,
        );
    }
    let mut sorted = aggs.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[2];
    require(
        median <= 0.005,
        format!("median aggregate {median:+.4} (<= +0.005); seeds {SEEDS:?} -> {aggs:+.4?}"),
    )
}

fn worst_balance() -> Result<String, String> {
    let (_, fedavg, propfair) = mixture_runs()?;
    let mut good_seeds = 0;
    let mut rows = Vec::new();
    let mut mean_gap = 0.0f64;
    for s in SEEDS {
        let f = seed_metrics(fedavg, s)?;
        let p = seed_metrics(propfair, s)?;
        let get = |v: &Value, k: &str| v[k].as_f64().unwrap_or(f64::NAN);
        let (fw, pw) = (
            f["worst_k"]["10"].as_f64().unwrap_or(f64::NAN),
            p["worst_k"]["10"].as_f64().unwrap_or(f64::NAN),
        );
        let (fm, pm) = (get(&f, "mean_unweighted"), get(&p, "mean_unweighted"));
        if pw >= fw - 0.01 {
            good_seeds += 1;
        }
        mean_gap = mean_gap.max((pm - fm).abs());
        rows.push(format!(
            "seed {s}: worst10 {pw:.3}/{fw:.3} mean {pm:.3}/{fm:.3}"
        ));
    }
    require(
        good_seeds >= 4 && mean_gap <= 0.03,
        format!(
            "{good_seeds}/5 seeds with PropFair worst-10% >= FedAvg - 0.01, max mean gap {mean_gap:.4} (<= 0.03); PropFair/FedAvg {}",
            rows.join("; ")
        ),
    )
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = "seeds = [11, 12]\n\
[dataset]\nn_per_class = 60\nclasses = 4\ndim = 6\n\
[dataset.partition]\nn_clients = 8\nmin_size = 6\n\
[model]\narch = \"mlp1\"\nhidden = 8\n\
[train]\nalgorithm = \"propfair\"\nrounds = 15\nbatch_size = 8\nlocal_epochs = 2\nparticipation_frac = 0.5\nlr = 0.2\n\
[metrics]\nk_percent = [10.0, 25.0]\n";
    let cfg = write_config(dir.path(), "det.toml", text);
    let many = std::thread::available_parallelism()
        .map_or(8, |n| n.get())
        .max(8);
    let mut outs = Vec::new();
    for (i, threads) in [1, many, many].into_iter().enumerate() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        let out = dir.path().join(format!("run{i}"));
        pool.install(|| run(&cfg, &out))?;
        outs.push(out);
    }
    let mut files = vec![PathBuf::from(SUMMARY_FILE)];
    for s in [11u64, 12] {
        files.push(PathBuf::from(format!("seed_{s}")).join("rounds.csv"));
        files.push(PathBuf::from(format!("seed_{s}")).join(SUMMARY_FILE));
    }
    for f in &files {
        let a = std::fs::read(outs[0].join(f)).map_err(|e| e.to_string())?;
        for o in &outs[1..] {
            let b = std::fs::read(o.join(f)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{} differs between runs", f.display()));
            }
        }
    }
    Ok(format!(
        "{} files byte-identical across 1, {many} and {many} threads",
        files.len()
    ))
}
