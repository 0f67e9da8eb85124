//! Subcommand implementations. Each returns the paths or reports it produced
//! so that tests can drive them without a process boundary.

use std::path::{Path, PathBuf};

use fairfl::datagen::{
    afl_failure_scenario, dirichlet_partition, export_dataset, gaussian_mixture_data,
    label_marginal, label_skew, split_train_test, FederatedDataset,
};
use fairfl::fedsim::{
    estimate_sigmas, load_checkpoint, local_steps, lr_bound_fedavg, lr_bound_propfair, rng_stream,
    run_training, save_checkpoint, variance_terms, RunHistory, VarianceInputs, INIT_STREAM,
    PARAMS_FILE,
};
use fairfl::metrics::{nash_report, summarize, ClientOutcome};
use fairfl::model::{accuracy, estimate_smoothness_at};
use fairfl::{ModelParams, Sample};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{sha256_json, ExperimentConfig, Generator};
use crate::error::CliError;
use crate::output::{
    aggregate_seeds, final_outcomes, k_key, read_json, read_rounds, round_rows, rounds_csv,
    write_atomic, write_json, BOUNDS_FILE, CHECKPOINT_DIR, CONFIG_SNAPSHOT, PF_REPORT_FILE,
    ROUNDS_FILE, SUMMARY_FILE,
};

/// Stream id of dataset generation in `rng_stream`.
pub const DATASET_STREAM: u64 = u64::MAX - 2;
/// Stream id of the smoothness and variance probes of `bounds`.
pub const PROBE_STREAM: u64 = u64::MAX - 3;

pub const DATASET_DIR: &str = "dataset";

/// Flags shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct GlobalOpts {
    /// Overrides `output.dir`.
    pub out: Option<PathBuf>,
    /// Restricts the run to `seeds[i]`.
    pub seed_index: Option<usize>,
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String), CliError> {
    Ok(ExperimentConfig::load(path)?)
}

fn selected_seeds(cfg: &ExperimentConfig, opts: &GlobalOpts) -> Result<Vec<u64>, CliError> {
    match opts.seed_index {
        None => Ok(cfg.seeds.clone()),
        Some(i) => cfg.seeds.get(i).map(|&s| vec![s]).ok_or_else(|| {
            CliError::Usage(format!(
                "--seed-index {i} out of range for {} seeds",
                cfg.seeds.len()
            ))
        }),
    }
}

fn out_dir(cfg: &ExperimentConfig, opts: &GlobalOpts) -> PathBuf {
    opts.out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Generates the federated dataset of one seed. The outlier scenario comes
/// with its own splits and ignores `train_frac` and `partition`.
pub fn generate_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<FederatedDataset, CliError> {
    let d = &cfg.dataset;
    let mut rng = rng_stream(seed, DATASET_STREAM, 0);
    let fd = match d.generator {
        Generator::GaussianMixture => {
            let pool =
                gaussian_mixture_data(d.n_per_class, d.classes, d.dim, d.separation, &mut rng)?;
            let p = &d.partition;
            let parts = dirichlet_partition(
                &pool,
                p.n_clients,
                p.beta,
                p.min_size,
                p.max_retries,
                &mut rng,
            )?;
            split_train_test(&parts, d.train_frac, &mut rng)?
        }
        Generator::AflFailure => afl_failure_scenario(d.n_major, &mut rng)?,
    };
    Ok(fd)
}

fn dataset_export_config(cfg: &ExperimentConfig, seed: u64) -> Value {
    json!({"dataset": cfg.dataset, "seed": seed, "dataset_hash": cfg.dataset_hash(seed)})
}

/// Metrics of one trained seed, keyed as in `summary.json`.
pub fn seed_metrics(
    cfg: &ExperimentConfig,
    fd: &FederatedDataset,
    history: &RunHistory,
) -> Result<Map<String, Value>, CliError> {
    let last = history
        .records
        .last()
        .ok_or_else(|| CliError::Runtime(fairfl::Error::Empty("round records".into())))?;
    let outcomes: Vec<ClientOutcome> = fd
        .counts()
        .into_iter()
        .enumerate()
        .map(|(i, n_i)| ClientOutcome {
            client_id: i,
            n_i,
            test_accuracy: last.test_accuracy[i],
            test_loss: last.test_loss[i],
        })
        .collect();
    let mut m = Map::new();
    let mut worst_k = Map::new();
    let mut best_k = Map::new();
    for (j, &k) in cfg.metrics.k_percent.iter().enumerate() {
        let s = summarize(&outcomes, k)?;
        if j == 0 {
            m.insert("mean_unweighted".into(), json!(s.mean_unweighted));
            m.insert("mean_weighted".into(), json!(s.mean_weighted));
            m.insert("std".into(), json!(s.std));
            m.insert("worst".into(), json!(s.worst));
            m.insert("best".into(), json!(s.best));
        }
        worst_k.insert(k_key(k), json!(s.worst_k));
        best_k.insert(k_key(k), json!(s.best_k));
    }
    m.insert("worst_k".into(), Value::Object(worst_k));
    m.insert("best_k".into(), Value::Object(best_k));
    let baseline = cfg.train.baseline;
    let losses = last
        .train_loss
        .iter()
        .all(|&f| f < baseline)
        .then_some(last.train_loss.as_slice());
    let nash = nash_report(&outcomes, baseline, losses)?;
    m.insert(
        "nash_product_losses".into(),
        json!(nash.nash_product_losses),
    );
    m.insert("nash_product_acc".into(), json!(nash.nash_product_acc));
    m.insert("jensen_gap".into(), json!(nash.jensen_gap));
    m.insert("utility_clamp_count".into(), json!(nash.clamp_count));
    m.insert(
        "assumption_violations".into(),
        json!(history.violations.iter().sum::<usize>()),
    );
    m.insert("final_objective".into(), json!(last.objective));
    if let Some(gt) = &fd.global_test {
        m.insert(
            "global_test_accuracy".into(),
            json!(accuracy(&history.final_model, gt)?),
        );
    }
    Ok(m)
}

/// `summary.json` for a set of seeds; one seed gives the per-seed file.
pub fn summary_json(
    cfg: &ExperimentConfig,
    runs: &[(u64, Map<String, Value>)],
    init: Option<&Value>,
) -> Value {
    let dataset_hash = match runs {
        [(seed, _)] => cfg.dataset_hash(*seed),
        _ => {
            let hashes: Vec<String> = runs.iter().map(|(s, _)| cfg.dataset_hash(*s)).collect();
            sha256_json(&json!(hashes))
        }
    };
    let per_seed: Map<String, Value> = runs
        .iter()
        .map(|(s, m)| (s.to_string(), Value::Object(m.clone())))
        .collect();
    let metrics: Vec<Map<String, Value>> = runs.iter().map(|(_, m)| m.clone()).collect();
    let mut v = json!({
        "config_hash": cfg.config_hash(),
        "dataset_hash": dataset_hash,
        "seeds": runs.iter().map(|(s, _)| *s).collect::<Vec<_>>(),
        "spec": cfg.effective_spec(),
        "per_seed": per_seed,
        "aggregate": aggregate_seeds(&metrics),
    });
    if let Some(init) = init {
        v["init"] = init.clone();
    }
    v
}

/// Artifacts of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Map<String, Value>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub seeds: Vec<SeedRun>,
}

struct InitModel {
    model: ModelParams,
    provenance: Value,
}

fn run_seed(
    cfg: &ExperimentConfig,
    raw: &str,
    seed: u64,
    out: &Path,
    init: Option<&InitModel>,
) -> Result<SeedRun, CliError> {
    let fd = generate_dataset(cfg, seed)?;
    let history = run_training(&fd, &cfg.train_config(seed), init.map(|i| &i.model))?;
    let metrics = seed_metrics(cfg, &fd, &history)?;
    let dir = seed_dir(out, seed);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_atomic(&dir.join(CONFIG_SNAPSHOT), raw.as_bytes())?;
    write_atomic(
        &dir.join(ROUNDS_FILE),
        &rounds_csv(&round_rows(&history, &fd.counts())),
    )?;
    let last_round = history.records.last().map_or(0, |r| r.round);
    save_checkpoint(
        &dir.join(CHECKPOINT_DIR),
        &history.final_model,
        last_round,
        &cfg.config_hash(),
    )?;
    if cfg.output.export_dataset {
        export_dataset(
            &fd,
            &dir.join(DATASET_DIR),
            dataset_export_config(cfg, seed),
        )?;
    }
    let runs = [(seed, metrics)];
    write_json(
        &dir.join(SUMMARY_FILE),
        &summary_json(cfg, &runs, init.map(|i| &i.provenance)),
    )?;
    let [(seed, metrics)] = runs;
    Ok(SeedRun { seed, dir, metrics })
}

fn run_all(
    cfg: &ExperimentConfig,
    raw: &str,
    opts: &GlobalOpts,
    init: Option<&InitModel>,
) -> Result<RunOutput, CliError> {
    let seeds = selected_seeds(cfg, opts)?;
    let out = out_dir(cfg, opts);
    let runs = seeds
        .iter()
        .map(|&s| run_seed(cfg, raw, s, &out, init))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(u64, Map<String, Value>)> =
        runs.iter().map(|r| (r.seed, r.metrics.clone())).collect();
    write_json(
        &out.join(SUMMARY_FILE),
        &summary_json(cfg, &pairs, init.map(|i| &i.provenance)),
    )?;
    Ok(RunOutput {
        out_dir: out,
        seeds: runs,
    })
}

/// Trains every configured seed and writes `seed_<s>/` with the config
/// snapshot, `rounds.csv`, `summary.json` and `checkpoint/`, plus a
/// seed-aggregated `summary.json` in the output directory.
pub fn cmd_run(config_path: &Path, opts: &GlobalOpts) -> Result<RunOutput, CliError> {
    let (cfg, raw) = load_config(config_path)?;
    run_all(&cfg, &raw, opts, None)
}

/// Like [`cmd_run`] but starts every seed from the checkpoint in `init_dir`.
/// The summaries gain an `init` entry with the checkpoint's config hash,
/// round and parameter digest, nested over earlier fine-tunes.
pub fn cmd_finetune(
    config_path: &Path,
    init_dir: &Path,
    opts: &GlobalOpts,
) -> Result<RunOutput, CliError> {
    let (cfg, raw) = load_config(config_path)?;
    let (model, meta) = load_checkpoint(init_dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", init_dir.display())))?;
    if meta.arch != cfg.arch() {
        return Err(CliError::Usage(format!(
            "checkpoint architecture {:?} does not match configured {:?}",
            meta.arch,
            cfg.arch()
        )));
    }
    let params =
        std::fs::read(init_dir.join(PARAMS_FILE)).map_err(|e| CliError::io(init_dir, e))?;
    let mut provenance = json!({
        "config_hash": meta.config_hash,
        "round": meta.round,
        "params_sha256": hex::encode(Sha256::digest(&params)),
    });
    if let Some(parent) = init_dir.parent() {
        let summary = parent.join(SUMMARY_FILE);
        if summary.exists() {
            if let Some(prev) = read_json(&summary)?.get("init") {
                provenance["init"] = prev.clone();
            }
        }
    }
    let init = InitModel { model, provenance };
    run_all(&cfg, &raw, opts, Some(&init))
}

/// Accepts a seed directory, or a run directory holding exactly one seed.
pub fn resolve_run_dir(dir: &Path) -> Result<PathBuf, CliError> {
    if dir.join(ROUNDS_FILE).exists() {
        return Ok(dir.to_path_buf());
    }
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut seeds: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(ROUNDS_FILE).exists())
        .collect();
    match seeds.len() {
        1 => Ok(seeds.remove(0)),
        0 => Err(CliError::Input(format!(
            "{}: no {ROUNDS_FILE} found",
            dir.display()
        ))),
        n => Err(CliError::Usage(format!(
            "{}: holds {n} seed runs, pass one seed directory",
            dir.display()
        ))),
    }
}

struct RunArtifacts {
    label: String,
    summary: Value,
    outcomes: Vec<ClientOutcome>,
}

fn read_run(dir: &Path) -> Result<RunArtifacts, CliError> {
    let dir = resolve_run_dir(dir)?;
    let summary = read_json(&dir.join(SUMMARY_FILE))?;
    let outcomes = final_outcomes(&read_rounds(&dir.join(ROUNDS_FILE))?);
    Ok(RunArtifacts {
        label: dir.display().to_string(),
        summary,
        outcomes,
    })
}

fn single_seed_metrics(summary: &Value) -> Option<&Map<String, Value>> {
    let per_seed = summary.get("per_seed")?.as_object()?;
    match per_seed.len() {
        1 => per_seed.values().next()?.as_object(),
        _ => None,
    }
}

fn metric_delta(base: &Value, other: &Value) -> Value {
    let (Some(b), Some(o)) = (single_seed_metrics(base), single_seed_metrics(other)) else {
        return Value::Null;
    };
    let mut out = Map::new();
    for (k, bv) in b {
        let Some(ov) = o.get(k) else { continue };
        match (bv, ov) {
            (Value::Number(x), Value::Number(y)) => {
                out.insert(
                    k.clone(),
                    json!(y.as_f64().unwrap_or(f64::NAN) - x.as_f64().unwrap_or(f64::NAN)),
                );
            }
            (Value::Object(x), Value::Object(y)) => {
                let inner: Map<String, Value> = x
                    .iter()
                    .filter_map(|(ik, xv)| {
                        Some((ik.clone(), json!(y.get(ik)?.as_f64()? - xv.as_f64()?)))
                    })
                    .collect();
                out.insert(k.clone(), Value::Object(inner));
            }
            _ => {}
        }
    }
    Value::Object(out)
}

/// PF comparison of `other` against `base`, as written to `pf_report.json`.
pub fn pf_report(base_dir: &Path, other_dir: &Path) -> Result<Value, CliError> {
    let base = read_run(base_dir)?;
    let other = read_run(other_dir)?;
    let hash = |r: &RunArtifacts| {
        r.summary
            .get("dataset_hash")
            .and_then(Value::as_str)
            .map(str::to_owned)
    };
    match (hash(&base), hash(&other)) {
        (Some(a), Some(b)) if a == b => {}
        (a, b) => {
            return Err(CliError::Usage(format!(
                "dataset hashes differ ({} vs {}); runs on different data are not comparable",
                a.as_deref().unwrap_or("missing"),
                b.as_deref().unwrap_or("missing")
            )))
        }
    }
    let cmp = fairfl::metrics::pf_compare(&base.outcomes, &other.outcomes)?;
    let run_info = |r: &RunArtifacts| {
        json!({
            "dir": r.label,
            "config_hash": r.summary.get("config_hash"),
            "spec": r.summary.get("spec"),
        })
    };
    Ok(json!({
        "base_run": run_info(&base),
        "other_run": run_info(&other),
        "dataset_hash": hash(&base),
        "per_client": cmp.per_client.iter().map(|(id, rel)| json!({"client_id": id, "rel_change": rel})).collect::<Vec<_>>(),
        "weighted_aggregate": cmp.weighted_aggregate,
        "clamp_count": cmp.clamp_count,
        "summary_delta": metric_delta(&base.summary, &other.summary),
    }))
}

/// Writes `pf_report.json` into `--out`, or the working directory.
pub fn cmd_pf_compare(
    base_dir: &Path,
    other_dir: &Path,
    opts: &GlobalOpts,
) -> Result<PathBuf, CliError> {
    let report = pf_report(base_dir, other_dir)?;
    let path = opts
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("."))
        .join(PF_REPORT_FILE);
    write_json(&path, &report)?;
    Ok(path)
}

/// Probe budget of the `bounds` estimators.
const SMOOTHNESS_TRIALS: usize = 64;
const SIGMA_PROBES: usize = 8;
const PROBE_RADIUS: f64 = 1.0;

/// Theorem quantities for the configured data and model, estimated around
/// the initial model of the selected seed (the first by default).
pub fn bounds_report(cfg: &ExperimentConfig, seed: u64) -> Result<Value, CliError> {
    let fd = generate_dataset(cfg, seed)?;
    let center = ModelParams::init(cfg.arch(), &mut rng_stream(seed, INIT_STREAM, 0))?;
    let pooled: Vec<Sample> = fd
        .clients
        .iter()
        .flat_map(|c| c.train.iter().cloned())
        .collect();
    let mut rng = rng_stream(seed, PROBE_STREAM, 0);
    let smooth =
        estimate_smoothness_at(&pooled, &center, SMOOTHNESS_TRIALS, PROBE_RADIUS, &mut rng)?;
    let sig = estimate_sigmas(&fd, &center, SIGMA_PROBES, PROBE_RADIUS, &mut rng)?;
    let t = &cfg.train;
    let p = fd.weights();
    let k: Vec<usize> = fd
        .counts()
        .iter()
        .map(|&n| local_steps(n, t.local_epochs, t.batch_size))
        .collect();
    let fedavg = lr_bound_fedavg(smooth.l_hat, &p, &k)?;
    let propfair = lr_bound_propfair(t.baseline, smooth.l_hat, smooth.l0_hat, &p, &k)?;
    let psi = variance_terms(&VarianceInputs::FedAvg {
        eta: t.lr,
        p: p.clone(),
        k: k.clone(),
        batch: t.batch_size,
        l: smooth.l_hat,
        sigma: sig.sigma,
        sigma_i: sig.sigma_i.clone(),
    })?;
    let psi_tilde = variance_terms(&VarianceInputs::PropFair {
        eta: t.lr,
        p,
        k: k.clone(),
        batch: t.batch_size,
        baseline: t.baseline,
        l: smooth.l_hat,
        l0: smooth.l0_hat,
        sigma: sig.sigma,
        sigma_i: sig.sigma_i.clone(),
        sigma0: sig.sigma0,
        sigma0_i: sig.sigma0_i.clone(),
    })?;
    Ok(json!({
        "seed": seed,
        "config_hash": cfg.config_hash(),
        "dataset_hash": cfg.dataset_hash(seed),
        "L_hat": smooth.l_hat,
        "L0_hat": smooth.l0_hat,
        "sigma": sig.sigma,
        "sigma_i": sig.sigma_i,
        "sigma0": sig.sigma0,
        "sigma0_i": sig.sigma0_i,
        "local_steps": k,
        "lr": t.lr,
        "M": t.baseline,
        "lr_bound_fedavg": fedavg,
        "lr_bound_propfair": propfair.eta_max,
        "L_tilde": propfair.l_tilde,
        "psi_fedavg": psi,
        "psi_propfair": psi_tilde,
        "safety_factor": 0.5,
        "lr_within_fedavg_bound": t.lr <= 0.5 * fedavg,
        "lr_within_propfair_bound": t.lr <= 0.5 * propfair.eta_max,
    }))
}

/// Writes `bounds.json` into the output directory.
pub fn cmd_bounds(config_path: &Path, opts: &GlobalOpts) -> Result<PathBuf, CliError> {
    let (cfg, _) = load_config(config_path)?;
    let seed = selected_seeds(&cfg, opts)?[0];
    let report = bounds_report(&cfg, seed)?;
    let path = out_dir(&cfg, opts).join(BOUNDS_FILE);
    write_json(&path, &report)?;
    Ok(path)
}

/// Client sizes and label distributions of one seed's dataset.
pub fn partition_stats(cfg: &ExperimentConfig, fd: &FederatedDataset, seed: u64) -> Value {
    let classes = fd.n_classes().max(cfg.dataset.n_classes());
    let clients: Vec<Value> = fd
        .clients
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut pooled = c.train.clone();
            pooled.extend(c.test.iter().cloned());
            json!({
                "client_id": i,
                "n_train": c.train.len(),
                "n_test": c.test.len(),
                "label_marginal": label_marginal(&pooled, classes),
            })
        })
        .collect();
    json!({
        "seed": seed,
        "dataset_hash": cfg.dataset_hash(seed),
        "n_clients": fd.n_clients(),
        "label_skew": label_skew(fd),
        "clients": clients,
    })
}

/// Partition statistics per selected seed; `export` also writes the
/// datasets under `seed_<s>/dataset/`.
pub fn cmd_partition_stats(
    config_path: &Path,
    opts: &GlobalOpts,
    export: bool,
) -> Result<Value, CliError> {
    let (cfg, _) = load_config(config_path)?;
    let out = out_dir(&cfg, opts);
    let mut all = Vec::new();
    for seed in selected_seeds(&cfg, opts)? {
        let fd = generate_dataset(&cfg, seed)?;
        if export {
            export_dataset(
                &fd,
                &seed_dir(&out, seed).join(DATASET_DIR),
                dataset_export_config(&cfg, seed),
            )?;
        }
        all.push(partition_stats(&cfg, &fd, seed));
    }
    Ok(Value::Array(all))
}
