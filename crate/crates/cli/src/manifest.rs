use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use eikgcrl::error::{Error, Result};
use eikgcrl::mazeworld::{dataset_paths, DatasetManifest};
use eikgcrl::valuelearn::TrainConfig;

use crate::train::{effective_config, Algo, EvalPoint, RunOutputs, Trained};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub csv_sha256: String,
    pub json_sha256: String,
    pub manifest: DatasetManifest,
}

/// Record of one training run. `input_hash` covers everything that determines
/// the outputs; the timestamps are the only fields that vary between reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub version: String,
    pub algo: Algo,
    pub steps: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub dataset: DatasetRef,
    pub input_hash: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub outputs: RunOutputs,
    pub evals: Vec<EvalPoint>,
    pub best_eval: Option<EvalPoint>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Hash of the run inputs, each part length-prefixed so boundaries cannot shift.
pub fn input_hash(algo: Algo, steps: usize, config: &TrainConfig, dataset_csv: &[u8], dataset_json: &[u8]) -> String {
    let mut h = Sha256::new();
    let config_json = config.to_json();
    for part in [algo.name().as_bytes(), steps.to_string().as_bytes(), config_json.as_bytes(), dataset_csv, dataset_json] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn begin(config: &TrainConfig, algo: Algo, steps: usize, dataset: &Path, out: &Path) -> Result<Self> {
        let (csv_path, json_path) = dataset_paths(dataset);
        let csv = fs::read(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let json = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let manifest: DatasetManifest = serde_json::from_slice(&json)?;
        let config = effective_config(config, algo);
        Ok(Self {
            format: MANIFEST_FORMAT,
            version: env!("CARGO_PKG_VERSION").to_string(),
            algo,
            steps,
            seed: config.seed,
            input_hash: input_hash(algo, steps, &config, &csv, &json),
            dataset: DatasetRef {
                path: csv_path,
                csv_sha256: sha256_hex(&csv),
                json_sha256: sha256_hex(&json),
                manifest,
            },
            config,
            started_unix: now(),
            finished_unix: None,
            outputs: RunOutputs::in_dir(out),
            evals: Vec::new(),
            best_eval: None,
        })
    }

    pub fn finish(&mut self, trained: &Trained) {
        self.evals = trained.evals.clone();
        self.best_eval = trained.best;
        self.finished_unix = Some(now());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
