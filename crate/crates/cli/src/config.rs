//! Experiment configuration: TOML with `[dataset]`, `[model]`, `[train]`,
//! `[metrics]` and `[output]` sections plus a top-level `seeds` list.
//!
//! Unknown keys are rejected. Every field is validated before any compute,
//! and each problem is reported with the line it comes from.

use std::fmt;
use std::path::Path;

use fairfl::fedsim::{Algorithm, TrainConfig};
use fairfl::model::Arch;
use fairfl::ScalarizerSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    GaussianMixture,
    AflFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub n_clients: usize,
    pub beta: f64,
    pub min_size: usize,
    pub max_retries: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            n_clients: 10,
            beta: 0.3,
            min_size: 10,
            max_retries: 100,
        }
    }
}

/// `n_per_class`, `classes`, `dim`, `separation` and `partition` apply to
/// the Gaussian mixture; `n_major` to the outlier scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub generator: Generator,
    pub n_per_class: usize,
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub train_frac: f64,
    pub n_major: usize,
    pub partition: PartitionConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            generator: Generator::GaussianMixture,
            n_per_class: 200,
            classes: 5,
            dim: 10,
            separation: 2.0,
            train_frac: 0.8,
            n_major: 2000,
            partition: PartitionConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn input_dim(&self) -> usize {
        match self.generator {
            Generator::GaussianMixture => self.dim,
            Generator::AflFailure => 2,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self.generator {
            Generator::GaussianMixture => self.classes,
            Generator::AflFailure => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    LinearSoftmax,
    Mlp1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: ArchKind,
    /// Hidden width of `mlp1`.
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: ArchKind::LinearSoftmax,
            hidden: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Fedavg,
    Qffl,
    Term,
    Propfair,
    Afl,
}

/// Training hyperparameters; only the ones used by `algorithm` matter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub algorithm: AlgorithmKind,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub participation_frac: f64,
    pub q: f64,
    pub alpha: f64,
    /// PropFair baseline `M`.
    pub baseline: f64,
    pub epsilon: f64,
    /// AFL local step size; `lr` when absent.
    pub gamma_w: Option<f64>,
    pub gamma_lambda: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            algorithm: AlgorithmKind::Fedavg,
            rounds: 200,
            local_epochs: 1,
            batch_size: 64,
            lr: 0.1,
            participation_frac: 1.0,
            q: 0.1,
            alpha: 0.5,
            baseline: 2.0,
            epsilon: 0.2,
            gamma_w: None,
            gamma_lambda: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub k_percent: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            k_percent: vec![10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub eval_every: usize,
    /// Also write the generated dataset (CSV + manifest) per seed.
    pub export_dataset: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            eval_every: 1,
            export_dataset: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// One problem found in a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

/// All problems found in one file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors {
    pub source: String,
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {issue}", self.source)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Line (1-based) of `key` inside `[section]`, or of the section header
/// when the key is absent. `section = ""` is the top level.
fn locate(raw: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, line) in raw.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.split(']').next()) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

fn line_of_offset(raw: &str, offset: usize) -> usize {
    raw[..offset.min(raw.len())].matches('\n').count() + 1
}

struct Checker<'a> {
    raw: &'a str,
    issues: Vec<ConfigIssue>,
}

impl Checker<'_> {
    fn check(&mut self, ok: bool, section: &str, key: &str, message: impl Into<String>) {
        if !ok {
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            self.issues.push(ConfigIssue {
                line: locate(self.raw, section, key),
                key: full,
                message: message.into(),
            });
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl ExperimentConfig {
    /// Parses and validates `raw`; `source` names the file in messages.
    pub fn parse(raw: &str, source: &str) -> Result<Self, ConfigErrors> {
        let cfg: ExperimentConfig = toml::from_str(raw).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(raw, s.start));
            ConfigErrors {
                source: source.to_string(),
                issues: vec![ConfigIssue {
                    line,
                    key: "toml".into(),
                    message: e.message().trim().to_string(),
                }],
            }
        })?;
        let issues = cfg.issues(raw);
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigErrors {
                source: source.to_string(),
                issues,
            })
        }
    }

    pub fn load(path: &Path) -> Result<(Self, String), ConfigErrors> {
        let source = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigErrors {
            source: source.clone(),
            issues: vec![ConfigIssue {
                line: None,
                key: "file".into(),
                message: e.to_string(),
            }],
        })?;
        let cfg = Self::parse(&raw, &source)?;
        Ok((cfg, raw))
    }

    fn issues(&self, raw: &str) -> Vec<ConfigIssue> {
        let mut c = Checker {
            raw,
            issues: Vec::new(),
        };
        c.check(
            !self.seeds.is_empty(),
            "",
            "seeds",
            "at least one seed is required",
        );

        let d = &self.dataset;
        c.check(
            d.train_frac > 0.0 && d.train_frac < 1.0,
            "dataset",
            "train_frac",
            "must lie in (0, 1)",
        );
        match d.generator {
            Generator::GaussianMixture => {
                c.check(
                    d.n_per_class >= 1,
                    "dataset",
                    "n_per_class",
                    "must be at least 1",
                );
                c.check(d.classes >= 2, "dataset", "classes", "must be at least 2");
                c.check(d.dim >= 1, "dataset", "dim", "must be at least 1");
                c.check(
                    d.separation >= 0.0 && d.separation.is_finite(),
                    "dataset",
                    "separation",
                    "must be nonnegative",
                );
                let p = &d.partition;
                c.check(
                    p.n_clients >= 1,
                    "dataset.partition",
                    "n_clients",
                    "must be at least 1",
                );
                c.check(
                    positive(p.beta),
                    "dataset.partition",
                    "beta",
                    "must be positive",
                );
                c.check(
                    p.min_size >= 2,
                    "dataset.partition",
                    "min_size",
                    "must be at least 2 for a train/test split",
                );
                c.check(
                    p.min_size * p.n_clients <= d.n_per_class * d.classes,
                    "dataset.partition",
                    "min_size",
                    format!(
                        "{} clients of at least {} samples need more than {} samples",
                        p.n_clients,
                        p.min_size,
                        d.n_per_class * d.classes
                    ),
                );
            }
            Generator::AflFailure => {
                c.check(
                    d.n_major >= 100,
                    "dataset",
                    "n_major",
                    "must be at least 100",
                );
            }
        }

        c.check(
            self.model.arch != ArchKind::Mlp1 || self.model.hidden >= 1,
            "model",
            "hidden",
            "must be at least 1",
        );

        let t = &self.train;
        c.check(t.rounds >= 1, "train", "rounds", "must be at least 1");
        c.check(
            t.local_epochs >= 1,
            "train",
            "local_epochs",
            "must be at least 1",
        );
        c.check(
            t.batch_size >= 1,
            "train",
            "batch_size",
            "must be at least 1",
        );
        c.check(
            t.lr >= 0.0 && t.lr.is_finite(),
            "train",
            "lr",
            "must be nonnegative",
        );
        c.check(
            t.participation_frac > 0.0 && t.participation_frac <= 1.0,
            "train",
            "participation_frac",
            "must lie in (0, 1]",
        );
        match t.algorithm {
            AlgorithmKind::Qffl => c.check(
                t.q >= 0.0 && t.q.is_finite(),
                "train",
                "q",
                "must be nonnegative",
            ),
            AlgorithmKind::Term => c.check(positive(t.alpha), "train", "alpha", "must be positive"),
            AlgorithmKind::Propfair => {
                c.check(
                    positive(t.baseline),
                    "train",
                    "baseline",
                    "must be positive",
                );
                c.check(
                    positive(t.epsilon) && t.epsilon < t.baseline,
                    "train",
                    "epsilon",
                    "must lie in (0, baseline)",
                );
            }
            AlgorithmKind::Afl => {
                if let Some(g) = t.gamma_w {
                    c.check(
                        g >= 0.0 && g.is_finite(),
                        "train",
                        "gamma_w",
                        "must be nonnegative",
                    );
                }
                c.check(
                    t.gamma_lambda >= 0.0 && t.gamma_lambda.is_finite(),
                    "train",
                    "gamma_lambda",
                    "must be nonnegative",
                );
            }
            AlgorithmKind::Fedavg => {}
        }

        c.check(
            !self.metrics.k_percent.is_empty(),
            "metrics",
            "k_percent",
            "needs at least one value",
        );
        c.check(
            self.metrics
                .k_percent
                .iter()
                .all(|&k| k > 0.0 && k <= 100.0),
            "metrics",
            "k_percent",
            "values must lie in (0, 100]",
        );
        c.check(
            !self.output.dir.is_empty(),
            "output",
            "dir",
            "must not be empty",
        );
        c.check(
            self.output.eval_every >= 1,
            "output",
            "eval_every",
            "must be at least 1",
        );
        c.issues
    }

    pub fn arch(&self) -> Arch {
        let d = self.dataset.input_dim();
        let classes = self.dataset.n_classes();
        match self.model.arch {
            ArchKind::LinearSoftmax => Arch::LinearSoftmax { d, classes },
            ArchKind::Mlp1 => Arch::Mlp1 {
                d,
                hidden: self.model.hidden,
                classes,
            },
        }
    }

    pub fn spec(&self) -> ScalarizerSpec {
        let t = &self.train;
        match t.algorithm {
            AlgorithmKind::Fedavg | AlgorithmKind::Afl => ScalarizerSpec::FedAvg,
            AlgorithmKind::Qffl => ScalarizerSpec::QFfl { q: t.q },
            AlgorithmKind::Term => ScalarizerSpec::Term { alpha: t.alpha },
            AlgorithmKind::Propfair => ScalarizerSpec::PropFair {
                baseline: t.baseline,
                epsilon: t.epsilon,
            },
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self.train.algorithm {
            AlgorithmKind::Afl => Algorithm::Afl {
                gamma_w: self.train.gamma_w.unwrap_or(self.train.lr),
                gamma_lambda: self.train.gamma_lambda,
            },
            _ => Algorithm::Scalarized(self.spec()),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            algorithm: self.algorithm(),
            arch: self.arch(),
            rounds: t.rounds,
            local_epochs: t.local_epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            participation_frac: t.participation_frac,
            seed,
            eval_every: self.output.eval_every,
        }
    }

    /// Effective objective with its parameters, as recorded in summaries.
    pub fn effective_spec(&self) -> serde_json::Value {
        let t = &self.train;
        match self.algorithm() {
            Algorithm::Afl {
                gamma_w,
                gamma_lambda,
            } => {
                serde_json::json!({"algorithm": "afl", "gamma_w": gamma_w, "gamma_lambda": gamma_lambda})
            }
            Algorithm::Scalarized(s) => match s {
                ScalarizerSpec::FedAvg => serde_json::json!({"algorithm": "fedavg"}),
                ScalarizerSpec::QFfl { q } => serde_json::json!({"algorithm": "qffl", "q": q}),
                ScalarizerSpec::Term { alpha } => {
                    serde_json::json!({"algorithm": "term", "alpha": alpha})
                }
                ScalarizerSpec::PropFair { .. } => {
                    serde_json::json!({"algorithm": "propfair", "M": t.baseline, "eps": t.epsilon})
                }
            },
        }
    }

    /// Hash of the validated configuration, independent of formatting and
    /// of the output directory.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir.clear();
        sha256_json(&serde_json::to_value(&c).expect("config serializes"))
    }

    /// Hash of the dataset inputs for one seed.
    pub fn dataset_hash(&self, seed: u64) -> String {
        sha256_json(&serde_json::json!({"dataset": self.dataset, "seed": seed}))
    }
}

pub fn sha256_json(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seeds = [1]\n";

    #[test]
    fn defaults_fill_missing_sections() {
        let c = ExperimentConfig::parse(MINIMAL, "t").unwrap();
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.epsilon, 0.2);
        assert_eq!(c.train.q, 0.1);
        assert_eq!(c.train.alpha, 0.5);
        assert_eq!(c.train.gamma_lambda, 0.1);
        assert_eq!(c.train.baseline, 2.0);
        assert_eq!(c.train.rounds, 200);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let raw = "seeds = [1]\n\n[train]\nlr = 0.1\nlearning_rate = 0.2\n";
        let err = ExperimentConfig::parse(raw, "cfg.toml").unwrap_err();
        assert_eq!(err.issues[0].line, Some(5));
        assert!(err.to_string().starts_with("cfg.toml: line 5"), "{err}");
    }

    #[test]
    fn invalid_values_are_line_addressed() {
        let raw = "seeds = [1]\n[train]\nalgorithm = \"propfair\"\nbaseline = 2.0\nepsilon = 3.0\n[output]\neval_every = 0\n";
        let err = ExperimentConfig::parse(raw, "c").unwrap_err();
        let lines: Vec<_> = err
            .issues
            .iter()
            .map(|i| (i.key.as_str(), i.line))
            .collect();
        assert_eq!(
            lines,
            vec![("train.epsilon", Some(5)), ("output.eval_every", Some(7))]
        );
        assert!(ExperimentConfig::parse("seeds = []\n", "c").is_err());
    }

    #[test]
    fn snapshot_reparses_identically() {
        let raw = "seeds = [3, 4]\n[dataset]\ngenerator = \"afl_failure\"\nn_major = 500\n[train]\nalgorithm = \"afl\"\n";
        let a = ExperimentConfig::parse(raw, "a").unwrap();
        let b = ExperimentConfig::parse(&toml::to_string(&a).unwrap(), "b").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.arch(), Arch::LinearSoftmax { d: 2, classes: 2 });
    }

    #[test]
    fn hashes_ignore_output_dir_but_not_seed() {
        let a = ExperimentConfig::parse(MINIMAL, "a").unwrap();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.dataset_hash(1), a.dataset_hash(2));
        assert_eq!(a.dataset_hash(1), b.dataset_hash(1));
    }

    #[test]
    fn propfair_effective_spec() {
        let raw = "seeds = [1]\n[train]\nalgorithm = \"propfair\"\nbaseline = 5.0\n";
        let c = ExperimentConfig::parse(raw, "c").unwrap();
        assert_eq!(
            c.effective_spec(),
            serde_json::json!({"algorithm": "propfair", "M": 5.0, "eps": 0.2})
        );
    }
}
