//! Model checkpoints: `meta.json` plus `params.txt` with one parameter per
//! line in 17 significant digits.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Arch;
use crate::ModelParams;

pub const META_FILE: &str = "meta.json";
pub const PARAMS_FILE: &str = "params.txt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: Arch,
    pub input_dim: usize,
    pub classes: usize,
    pub n_params: usize,
    pub round: usize,
    pub config_hash: String,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `model` into `dir`, creating the directory if needed.
pub fn save_checkpoint(
    dir: &Path,
    model: &ModelParams,
    round: usize,
    config_hash: &str,
) -> Result<CheckpointMeta> {
    fs::create_dir_all(dir)?;
    let arch = model.arch();
    let meta = CheckpointMeta {
        arch,
        input_dim: arch.input_dim(),
        classes: arch.classes(),
        n_params: arch.n_params(),
        round,
        config_hash: config_hash.to_string(),
    };
    let mut params = String::with_capacity(model.theta().len() * 25);
    for x in model.theta() {
        params.push_str(&format!("{x:.16e}\n"));
    }
    write_atomic(&dir.join(PARAMS_FILE), &params)?;
    write_atomic(&dir.join(META_FILE), &serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    let text = fs::read_to_string(dir.join(PARAMS_FILE))?;
    let theta = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{PARAMS_FILE} line {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<f64>>>()?;
    if theta.len() != meta.n_params || meta.arch.n_params() != meta.n_params {
        return Err(Error::DimensionMismatch {
            expected: meta.arch.n_params(),
            got: theta.len(),
        });
    }
    Ok((ModelParams::new(meta.arch, theta)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gaussian_mixture_data;
    use crate::fedsim::rng_stream;
    use crate::model::batch_loss;

    #[test]
    fn round_trip_reproduces_loss_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let arch = Arch::Mlp1 {
            d: 3,
            hidden: 5,
            classes: 4,
        };
        let model = ModelParams::init(arch, &mut rng_stream(1, 2, 3)).unwrap();
        let meta = save_checkpoint(dir.path(), &model, 17, "abc").unwrap();
        let (back, meta2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(back, model);
        let probe = gaussian_mixture_data(4, 4, 3, 1.0, &mut rng_stream(9, 9, 9)).unwrap();
        assert_eq!(
            batch_loss(&back, &probe).unwrap().to_bits(),
            batch_loss(&model, &probe).unwrap().to_bits()
        );
        assert!(!dir.path().join("params.txt.partial").exists());
    }

    #[test]
    fn truncated_params_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = ModelParams::zeros(Arch::LinearSoftmax { d: 2, classes: 2 }).unwrap();
        save_checkpoint(dir.path(), &model, 0, "h").unwrap();
        fs::write(dir.path().join(PARAMS_FILE), "0.0\n0.0\n").unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
        fs::write(dir.path().join(PARAMS_FILE), "0.0\nx\n0\n0\n0\n0\n").unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Parse(_))));
    }
}
