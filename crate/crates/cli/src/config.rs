//! Experiment configuration file.

use std::path::{Path, PathBuf};

use polarlab::eval::{BerStop, HistSpec};
use polarlab::models::ModelSpec;
use polarlab::polar::PolarCode;
use polarlab::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeConfig {
    pub n: usize,
    pub k: usize,
}

impl Default for CodeConfig {
    fn default() -> Self {
        Self { n: 16, k: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Test points for `ber` and `snr`.
    pub ebn0_db: Vec<f64>,
    pub min_bit_errors: u64,
    pub max_frames: u64,
    /// Frames per point for `snr` and `pdf`.
    pub frames: u64,
    pub bins: usize,
    pub range: f64,
    pub pdf_ebn0_db: Vec<f64>,
    pub bench_frames: u64,
    pub bench_batch: usize,
    pub bench_ebn0_db: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let stop = BerStop::default();
        let hist = HistSpec::default();
        Self {
            ebn0_db: (0..=7).map(f64::from).collect(),
            min_bit_errors: stop.min_bit_errors,
            max_frames: stop.max_frames,
            frames: 100_000,
            bins: hist.bins,
            range: hist.range,
            pdf_ebn0_db: vec![2.0, 5.0],
            bench_frames: 10_000,
            bench_batch: 1000,
            bench_ebn0_db: 3.0,
        }
    }
}

impl EvalConfig {
    pub fn stop(&self) -> BerStop {
        BerStop {
            min_bit_errors: self.min_bit_errors,
            max_frames: self.max_frames,
        }
    }

    pub fn hist(&self) -> HistSpec {
        HistSpec {
            bins: self.bins,
            range: self.range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub code: CodeConfig,
    pub arch: String,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            code: CodeConfig::default(),
            arch: "mlp-rnnd".into(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            out_dir: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Checks every field; nothing runs until this passes.
    pub fn validate(&self) -> Result<(PolarCode, ModelSpec), CliError> {
        let usage = |m: String| CliError::Usage(m);
        let code = PolarCode::construct(self.code.n, self.code.k).map_err(|e| usage(e.to_string()))?;
        let spec = ModelSpec::from_short_name(&self.arch, self.code.n, self.code.k).map_err(|e| usage(e.to_string()))?;
        spec.validate().map_err(|e| usage(e.to_string()))?;
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        let e = &self.eval;
        if e.ebn0_db.is_empty() || e.ebn0_db.iter().chain(&e.pdf_ebn0_db).any(|v| !v.is_finite()) {
            return Err(usage("eval.ebn0_db must be a non-empty list of finite values".into()));
        }
        if e.max_frames == 0 || e.frames == 0 || e.bench_frames == 0 || e.bench_batch == 0 {
            return Err(usage("eval frame counts and bench_batch must be at least 1".into()));
        }
        if e.bins < 10 || !(e.range > 0.0) || !e.range.is_finite() {
            return Err(usage("eval.bins must be at least 10 and eval.range positive".into()));
        }
        if !e.bench_ebn0_db.is_finite() {
            return Err(usage("eval.bench_ebn0_db must be finite".into()));
        }
        Ok((code, spec))
    }
}
