//! Synthetic federated datasets.
//!
//! * label-skewed partitions drawn from a symmetric Dirichlet per class,
//! * Gaussian class mixtures with simplex-vertex means,
//! * the two-rectangle mixture and the outlier-client scenario on which the
//!   minimax (AFL) objective generalizes poorly,
//! * per-client train/test splits and lossless CSV + JSON manifest export.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::Sample;

/// Local data of one client.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl ClientDataset {
    pub fn n_i(&self) -> usize {
        self.train.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FederatedDataset {
    pub clients: Vec<ClientDataset>,
    pub global_test: Option<Vec<Sample>>,
}

impl FederatedDataset {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.clients.iter().map(ClientDataset::n_i).collect()
    }

    /// `p_i = n_i / N`.
    pub fn weights(&self) -> Vec<f64> {
        let counts = self.counts();
        let total: usize = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    /// Feature dimension, taken from the first sample found.
    pub fn dim(&self) -> Option<usize> {
        self.clients
            .iter()
            .flat_map(|c| c.train.iter().chain(&c.test))
            .chain(self.global_test.iter().flatten())
            .map(|s| s.features.len())
            .next()
    }

    pub fn n_classes(&self) -> usize {
        self.clients
            .iter()
            .flat_map(|c| c.train.iter().chain(&c.test))
            .chain(self.global_test.iter().flatten())
            .map(|s| s.label + 1)
            .max()
            .unwrap_or(0)
    }

    /// Checks the invariants a training run relies on.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::Empty("federated dataset has no clients".into()));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.train.is_empty() {
                return Err(Error::TooFewSamples {
                    client: i,
                    count: 0,
                    needed: 1,
                });
            }
        }
        Ok(())
    }
}

/// Splits every class across clients by a fresh `Dir(beta)` draw.
///
/// If any client ends up with fewer than `min_size` samples the whole split
/// is redrawn, at most `max_retries` times. Returned clients hold training
/// samples only.
pub fn dirichlet_partition<R: Rng + ?Sized>(
    samples: &[Sample],
    n_clients: usize,
    beta: f64,
    min_size: usize,
    max_retries: usize,
    rng: &mut R,
) -> Result<FederatedDataset> {
    if n_clients == 0 {
        return domain("need at least one client");
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return domain(format!(
            "Dirichlet concentration must be positive, got {beta}"
        ));
    }
    if min_size.saturating_mul(n_clients) > samples.len() {
        return domain(format!(
            "{} samples cannot give {n_clients} clients at least {min_size} each",
            samples.len()
        ));
    }
    let n_classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let by_class: Vec<Vec<usize>> = (0..n_classes)
        .map(|k| {
            (0..samples.len())
                .filter(|&i| samples[i].label == k)
                .collect()
        })
        .collect();
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::Domain(e.to_string()))?;

    for _ in 0..=max_retries {
        let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(rng);
            let mut props: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
            let total: f64 = props.iter().sum();
            if total > 0.0 && total.is_finite() {
                props.iter_mut().for_each(|p| *p /= total);
            } else {
                // every gamma draw underflowed; the limit is a point mass
                props.iter_mut().for_each(|p| *p = 0.0);
                props[rng.random_range(0..n_clients)] = 1.0;
            }
            let n = members.len();
            let mut start = 0;
            let mut cum = 0.0;
            for (client, p) in props.iter().enumerate() {
                cum += p;
                let end = if client + 1 == n_clients {
                    n
                } else {
                    ((cum * n as f64).round() as usize).clamp(start, n)
                };
                assignment[client].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if assignment.iter().all(|a| a.len() >= min_size) {
            let clients = assignment
                .into_iter()
                .map(|idx| ClientDataset {
                    train: idx.into_iter().map(|i| samples[i].clone()).collect(),
                    test: Vec::new(),
                })
                .collect();
            return Ok(FederatedDataset {
                clients,
                global_test: None,
            });
        }
    }
    Err(Error::Exhausted {
        retries: max_retries,
        min_size,
    })
}

/// Means of norm `separation` placed at the vertices of a regular simplex.
///
/// Uses Helmert coordinates in the first `C - 1` dimensions when `d >= C - 1`.
/// With fewer dimensions the means fall back to equally spaced points on a
/// circle (`d >= 2`) or on the segment `[-separation, separation]` (`d = 1`).
pub fn class_means(classes: usize, d: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if d < 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    if classes < 2 {
        return domain("need at least two classes");
    }
    let c = classes as f64;
    let mut means = vec![vec![0.0; d]; classes];
    if d + 1 >= classes {
        let radius = ((c - 1.0) / c).sqrt();
        for (k, mean) in means.iter_mut().enumerate() {
            // coordinate j of e_k - 1/C against the Helmert basis vector h_j
            for j in 1..classes {
                let jf = j as f64;
                let norm = (jf * (jf + 1.0)).sqrt();
                let v = if k < j {
                    1.0 / norm
                } else if k == j {
                    -jf / norm
                } else {
                    0.0
                };
                mean[j - 1] = v / radius * separation;
            }
        }
    } else if d >= 2 {
        for (k, mean) in means.iter_mut().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / c;
            mean[0] = separation * angle.cos();
            mean[1] = separation * angle.sin();
        }
    } else {
        for (k, mean) in means.iter_mut().enumerate() {
            mean[0] = separation * (2.0 * k as f64 / (c - 1.0) - 1.0);
        }
    }
    Ok(means)
}

/// Unit-covariance Gaussian classes around [`class_means`], class-major order.
pub fn gaussian_mixture_data<R: Rng + ?Sized>(
    n_per_class: usize,
    classes: usize,
    d: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    if !(separation >= 0.0 && separation.is_finite()) {
        return domain(format!("separation must be nonnegative, got {separation}"));
    }
    let means = class_means(classes, d, separation)?;
    let mut out = Vec::with_capacity(n_per_class * classes);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            let x = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + z
                })
                .collect::<Vec<f64>>();
            out.push(Sample::new(x, k));
        }
    }
    Ok(out)
}

/// Binary label of the rectangle mixture; `Positive` is class 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryLabel {
    Positive,
    Negative,
}

impl BinaryLabel {
    pub fn class(self) -> usize {
        match self {
            BinaryLabel::Positive => 1,
            BinaryLabel::Negative => 0,
        }
    }
}

/// Draws `x | y` from `0.9 U([-1,0]x[-1,1]) + 0.1 U([0,1]x[-1,1])` for the
/// positive class, mirrored in `x_1` for the negative class.
pub fn rect_mixture_sample<R: Rng + ?Sized>(label: BinaryLabel, rng: &mut R) -> Sample {
    let majority_left = rng.random_bool(0.9);
    let left = match label {
        BinaryLabel::Positive => majority_left,
        BinaryLabel::Negative => !majority_left,
    };
    let u: f64 = rng.random();
    let x1 = if left { -u } else { u };
    let x2 = rng.random_range(-1.0..=1.0);
    Sample::new(vec![x1, x2], label.class())
}

fn rect_mixture_draws<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let label = if rng.random_bool(0.5) {
                BinaryLabel::Positive
            } else {
                BinaryLabel::Negative
            };
            rect_mixture_sample(label, rng)
        })
        .collect()
}

/// Size of the shared population test set of [`afl_failure_scenario`].
pub const AFL_GLOBAL_TEST: usize = 10_000;

/// A large client drawn from the rectangle mixture plus a four-point client
/// whose labels contradict the mixture's majority pattern.
///
/// Client 0 trains on `n_major` mixture draws (labels by fair coin); client 1
/// holds `{((0.5, +-0.5), +1), ((-0.5, +-0.5), -1)}`, which the Bayes
/// classifier `w = (-1, 0)` gets entirely wrong. Both clients are tested on
/// fresh mixture draws, and a shared population test set of
/// [`AFL_GLOBAL_TEST`] draws is attached.
pub fn afl_failure_scenario<R: Rng + ?Sized>(
    n_major: usize,
    rng: &mut R,
) -> Result<FederatedDataset> {
    if n_major < 100 {
        return domain(format!("n_major must be at least 100, got {n_major}"));
    }
    let major_train = rect_mixture_draws(n_major, rng);
    let major_test = rect_mixture_draws(n_major / 4, rng);
    let neg = BinaryLabel::Negative.class();
    let pos = BinaryLabel::Positive.class();
    let outlier_train = vec![
        Sample::new(vec![0.5, 0.5], pos),
        Sample::new(vec![0.5, -0.5], pos),
        Sample::new(vec![-0.5, 0.5], neg),
        Sample::new(vec![-0.5, -0.5], neg),
    ];
    let outlier_test = rect_mixture_draws(100, rng);
    let global = rect_mixture_draws(AFL_GLOBAL_TEST, rng);
    Ok(FederatedDataset {
        clients: vec![
            ClientDataset {
                train: major_train,
                test: major_test,
            },
            ClientDataset {
                train: outlier_train,
                test: outlier_test,
            },
        ],
        global_test: Some(global),
    })
}

/// Shuffles each client's pooled samples and splits them at `train_frac`.
///
/// The training share is rounded to nearest and clamped so that both sides
/// keep at least one sample.
pub fn split_train_test<R: Rng + ?Sized>(
    fd: &FederatedDataset,
    train_frac: f64,
    rng: &mut R,
) -> Result<FederatedDataset> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return domain(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        ));
    }
    let mut clients = Vec::with_capacity(fd.clients.len());
    for (i, c) in fd.clients.iter().enumerate() {
        let mut pool: Vec<Sample> = c.train.iter().chain(&c.test).cloned().collect();
        let n = pool.len();
        if n < 2 {
            return Err(Error::TooFewSamples {
                client: i,
                count: n,
                needed: 2,
            });
        }
        pool.shuffle(rng);
        let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
        let test = pool.split_off(n_train);
        clients.push(ClientDataset { train: pool, test });
    }
    Ok(FederatedDataset {
        clients,
        global_test: fd.global_test.clone(),
    })
}

/// Empirical label distribution over `classes` labels.
pub fn label_marginal(samples: &[Sample], classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; classes];
    for s in samples {
        if s.label < classes {
            counts[s.label] += 1.0;
        }
    }
    let n = samples.len().max(1) as f64;
    counts.iter().map(|c| c / n).collect()
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Mean total-variation distance between each client's training label
/// marginal and the pooled marginal.
pub fn label_skew(fd: &FederatedDataset) -> f64 {
    let classes = fd.n_classes();
    let all: Vec<Sample> = fd
        .clients
        .iter()
        .flat_map(|c| c.train.iter().cloned())
        .collect();
    let global = label_marginal(&all, classes);
    let total: f64 = fd
        .clients
        .iter()
        .map(|c| total_variation(&label_marginal(&c.train, classes), &global))
        .sum();
    total / fd.clients.len().max(1) as f64
}

/// Client entry of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClient {
    pub id: usize,
    pub train_file: String,
    pub test_file: String,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dim: usize,
    pub classes: usize,
    pub clients: Vec<ManifestClient>,
    pub global_test_file: Option<String>,
    pub n_global_test: usize,
    /// Generator configuration, carried verbatim.
    pub config: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_samples(path: &Path, samples: &[Sample], dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let mut header: Vec<String> = (0..dim).map(|j| format!("feature_{j}")).collect();
    header.push("label".into());
    w.write_record(&header)
        .map_err(|e| Error::Io(e.to_string()))?;
    for s in samples {
        if s.features.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.features.len(),
            });
        }
        // 17 significant digits round-trip every f64 exactly
        let mut row: Vec<String> = s.features.iter().map(|x| format!("{x:.16e}")).collect();
        row.push(s.label.to_string());
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_samples(path: &Path, dim: usize) -> Result<Vec<Sample>> {
    let mut r =
        csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let headers = r
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if headers.len() != dim + 1 {
        return Err(Error::Parse(format!(
            "{}: expected {} columns, found {}",
            path.display(),
            dim + 1,
            headers.len()
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let parse_err =
            |what: &str| Error::Parse(format!("{}: row {}: bad {what}", path.display(), line + 2));
        let features = (0..dim)
            .map(|j| rec[j].parse::<f64>().map_err(|_| parse_err("feature")))
            .collect::<Result<Vec<_>>>()?;
        let label = rec[dim].parse::<usize>().map_err(|_| parse_err("label"))?;
        out.push(Sample::new(features, label));
    }
    Ok(out)
}

/// Writes one CSV per client split plus `manifest.json` into `dir`.
pub fn export_dataset(
    fd: &FederatedDataset,
    dir: &Path,
    config: serde_json::Value,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let dim = fd
        .dim()
        .ok_or_else(|| Error::Empty("dataset has no samples".into()))?;
    let mut clients = Vec::with_capacity(fd.clients.len());
    for (i, c) in fd.clients.iter().enumerate() {
        let train_file = format!("client_{i:03}_train.csv");
        let test_file = format!("client_{i:03}_test.csv");
        write_samples(&dir.join(&train_file), &c.train, dim)?;
        write_samples(&dir.join(&test_file), &c.test, dim)?;
        clients.push(ManifestClient {
            id: i,
            train_file,
            test_file,
            n_train: c.train.len(),
            n_test: c.test.len(),
        });
    }
    let global_test_file = match &fd.global_test {
        Some(g) => {
            write_samples(&dir.join("global_test.csv"), g, dim)?;
            Some("global_test.csv".to_string())
        }
        None => None,
    };
    let manifest = DatasetManifest {
        dim,
        classes: fd.n_classes(),
        clients,
        global_test_file,
        n_global_test: fd.global_test.as_ref().map_or(0, Vec::len),
        config,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Reads a dataset written by [`export_dataset`].
pub fn import_dataset(dir: &Path) -> Result<(FederatedDataset, DatasetManifest)> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut clients = Vec::with_capacity(manifest.clients.len());
    for c in &manifest.clients {
        let train = read_samples(&dir.join(&c.train_file), manifest.dim)?;
        let test = read_samples(&dir.join(&c.test_file), manifest.dim)?;
        if train.len() != c.n_train || test.len() != c.n_test {
            return Err(Error::Parse(format!(
                "client {} sizes disagree with manifest",
                c.id
            )));
        }
        clients.push(ClientDataset { train, test });
    }
    let global_test = match &manifest.global_test_file {
        Some(f) => Some(read_samples(&dir.join(f), manifest.dim)?),
        None => None,
    };
    Ok((
        FederatedDataset {
            clients,
            global_test,
        },
        manifest,
    ))
}
