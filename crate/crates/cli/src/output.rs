//! Run artifacts: `rounds.csv`, `summary.json` and their readers.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use fairfl::fedsim::RunHistory;
use fairfl::metrics::ClientOutcome;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const PF_REPORT_FILE: &str = "pf_report.json";
pub const BOUNDS_FILE: &str = "bounds.json";

/// Writes `contents` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("json value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// One row of `rounds.csv`. `grad_norm_sq_est` is the squared norm of the
/// full-batch objective gradient, repeated on each client row of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub client_id: usize,
    pub n_i: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub lambda: f64,
    pub grad_norm_sq_est: f64,
}

pub fn round_rows(history: &RunHistory, counts: &[usize]) -> Vec<RoundRow> {
    let mut rows = Vec::with_capacity(history.records.len() * counts.len());
    for r in &history.records {
        for (i, &n_i) in counts.iter().enumerate() {
            rows.push(RoundRow {
                round: r.round,
                client_id: i,
                n_i,
                train_loss: r.train_loss[i],
                test_loss: r.test_loss[i],
                test_acc: r.test_accuracy[i],
                lambda: r.lambda[i],
                grad_norm_sq_est: r.grad_norm_sq,
            });
        }
    }
    rows
}

/// CSV text with floats in shortest round-trip form.
pub fn rounds_csv(rows: &[RoundRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

pub fn read_rounds(path: &Path) -> Result<Vec<RoundRow>, CliError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<RoundRow>, _>>()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Client outcomes at the last round present in `rows`.
pub fn final_outcomes(rows: &[RoundRow]) -> Vec<ClientOutcome> {
    let last = rows.iter().map(|r| r.round).max().unwrap_or(0);
    let mut out: Vec<ClientOutcome> = rows
        .iter()
        .filter(|r| r.round == last)
        .map(|r| ClientOutcome {
            client_id: r.client_id,
            n_i: r.n_i,
            test_accuracy: r.test_acc,
            test_loss: r.test_loss,
        })
        .collect();
    out.sort_by_key(|o| o.client_id);
    out
}

/// Formats a tail percentage as a JSON key: `10`, `12.5`.
pub fn k_key(k: f64) -> String {
    format!("{k}")
}

fn mean_std(xs: &[f64]) -> Value {
    if xs.is_empty() {
        return Value::Null;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    serde_json::json!({"mean": mean, "std": var.sqrt()})
}

/// Mean and population std across seeds of every numeric metric; nested
/// objects such as `worst_k` are aggregated per key, nulls are skipped.
pub fn aggregate_seeds(per_seed: &[Map<String, Value>]) -> Value {
    let mut numbers: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut nested: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for m in per_seed {
        for (k, v) in m {
            match v {
                Value::Number(x) => numbers
                    .entry(k.clone())
                    .or_default()
                    .push(x.as_f64().unwrap_or(f64::NAN)),
                Value::Object(inner) => {
                    let slot = nested.entry(k.clone()).or_default();
                    for (ik, iv) in inner {
                        let xs = slot.entry(ik.clone()).or_default();
                        if let Some(x) = iv.as_f64() {
                            xs.push(x);
                        }
                    }
                }
                Value::Null => {
                    numbers.entry(k.clone()).or_default();
                }
                _ => {}
            }
        }
    }
    let mut out = Map::new();
    for (k, xs) in numbers {
        out.insert(k, mean_std(&xs));
    }
    for (k, inner) in nested {
        let obj: Map<String, Value> = inner
            .into_iter()
            .map(|(ik, xs)| (ik, mean_std(&xs)))
            .collect();
        out.insert(k, Value::Object(obj));
    }
    Value::Object(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: usize, client_id: usize, acc: f64) -> RoundRow {
        RoundRow {
            round,
            client_id,
            n_i: 10 + client_id,
            train_loss: 0.1 + 0.2,
            test_loss: f64::NAN,
            test_acc: acc,
            lambda: 1.0 / 3.0,
            grad_norm_sq_est: 1e-300,
        }
    }

    #[test]
    fn rounds_csv_round_trips_exactly() {
        let rows = vec![
            row(0, 0, 0.5),
            row(0, 1, 0.25),
            row(3, 1, 0.75),
            row(3, 0, 1.0),
        ];
        let bytes = rounds_csv(&rows);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(
            "round,client_id,n_i,train_loss,test_loss,test_acc,lambda,grad_norm_sq_est\n"
        ));
        assert!(text.contains("0.30000000000000004"), "{text}");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(ROUNDS_FILE);
        write_atomic(&path, &bytes).unwrap();
        let back = read_rounds(&path).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
            assert!(b.test_loss.is_nan());
        }
        let fin = final_outcomes(&back);
        assert_eq!(
            fin.iter()
                .map(|o| (o.client_id, o.test_accuracy))
                .collect::<Vec<_>>(),
            vec![(0, 1.0), (1, 0.75)]
        );
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn aggregation_handles_nested_and_null() {
        let a: Map<String, Value> = serde_json::from_value(serde_json::json!({
            "worst": 0.2, "worst_k": {"10": 0.1}, "nash_product_losses": null
        }))
        .unwrap();
        let b: Map<String, Value> = serde_json::from_value(serde_json::json!({
            "worst": 0.4, "worst_k": {"10": 0.3}, "nash_product_losses": 1.0
        }))
        .unwrap();
        let agg = aggregate_seeds(&[a, b]);
        assert_eq!(agg["worst"]["mean"], 0.30000000000000004);
        assert_eq!(agg["worst"]["std"], 0.1);
        assert_eq!(agg["worst_k"]["10"]["mean"], 0.2);
        assert_eq!(agg["nash_product_losses"]["mean"], 1.0);
        assert_eq!(k_key(10.0), "10");
        assert_eq!(k_key(12.5), "12.5");
    }
}
