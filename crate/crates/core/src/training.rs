//! Training over the full codeword set with fresh channel noise on every
//! iteration.

use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{DecoderModel, LossBreakdown, ModelError};
use crate::nn::{Adam, AdamConfig, Parameterized, Tensor};
use crate::polar::{add_awgn, bpsk_modulate, ebn0_to_sigma, BitVector, PolarCode, PolarError, SignalVector};

/// Largest K for which every information pattern is enumerated.
pub const MAX_ENUMERABLE_K: usize = 16;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Polar(#[from] PolarError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("K={0} is too large to enumerate every codeword (limit {MAX_ENUMERABLE_K})")]
    TooManyCodewords(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is for ({data_n},{data_k}) but the model expects ({model_n},{model_k})")]
    CodeMismatch {
        data_n: usize,
        data_k: usize,
        model_n: usize,
        model_k: usize,
    },
    #[error("loss became non-finite at epoch {epoch}, step {step} (total={total}, denoise={denoise}, decode={decode})")]
    Diverged {
        epoch: usize,
        step: usize,
        total: f64,
        denoise: f64,
        decode: f64,
    },
    #[error("checkpoint hook failed: {0}")]
    Hook(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub train_ebn0_db: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs between checkpoint hook calls; `None` disables them.
    pub checkpoint_every: Option<usize>,
    /// Iterations averaged into each trace row.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 64,
            epochs: 1 << 16,
            train_ebn0_db: 0.0,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            checkpoint_every: None,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.log_every == 0 {
            return fail("log_every must be at least 1");
        }
        if self.checkpoint_every == Some(0) {
            return fail("checkpoint_every must be at least 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return fail("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if !self.train_ebn0_db.is_finite() {
            return fail("train_ebn0_db must be finite");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One transmitted codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub info: BitVector,
    pub bits: BitVector,
    pub symbols: SignalVector,
}

/// Every codeword of a code, in ascending order of the information pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub k: usize,
    pub entries: Vec<Codeword>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Enumerates all `2^K` information patterns, encodes and BPSK-modulates
/// each. No noise is applied here.
pub fn gen_dataset(code: &PolarCode) -> Result<Dataset, TrainError> {
    let k = code.k();
    if k > MAX_ENUMERABLE_K {
        return Err(TrainError::TooManyCodewords(k));
    }
    let entries = (0..1u64 << k)
        .map(|value| {
            let info = BitVector::from_integer(value, k);
            let bits = code.encode(&info)?;
            let symbols = bpsk_modulate(&bits);
            Ok(Codeword { info, bits, symbols })
        })
        .collect::<Result<Vec<_>, PolarError>>()?;
    Ok(Dataset {
        n: code.n(),
        k,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: usize,
    pub total_loss: f64,
    pub denoise_loss: f64,
    pub decode_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub epochs: usize,
    pub iterations: usize,
}

impl TrainTrace {
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(["epoch", "step", "total_loss", "denoise_loss", "decode_loss"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), TrainError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Vec<TraceRow>, TrainError> {
        let mut r = csv::Reader::from_reader(reader);
        Ok(r.deserialize().collect::<Result<Vec<TraceRow>, _>>()?)
    }
}

/// Noise generator for a training run. Weights are initialized from `seed`
/// directly; the noise uses a separate stream of the same seed.
pub fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Builds `spec` from `seed` and trains it on every codeword of `code`.
pub fn train_from_seed(
    spec: crate::models::ModelSpec,
    code: &PolarCode,
    config: &TrainConfig,
    seed: u64,
) -> Result<(DecoderModel, TrainTrace), TrainError> {
    let mut model = DecoderModel::build(spec, seed)?;
    let dataset = gen_dataset(code)?;
    let trace = train(&mut model, &dataset, config, &mut noise_rng(seed))?;
    Ok((model, trace))
}

/// Trains without a checkpoint hook.
pub fn train<R: Rng + ?Sized>(
    model: &mut DecoderModel,
    dataset: &Dataset,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainTrace, TrainError> {
    train_with_hook(model, dataset, config, rng, |_, _| Ok(()))
}

/// Batched Adam training. Each iteration takes the next `batch_size`
/// codewords in dataset order (wrapping around when the batch is larger
/// than what remains), adds fresh AWGN at the training Eb/N0, and takes one
/// optimizer step on the multi-task loss. An epoch is one pass over the
/// dataset. `hook(model, epoch)` runs after every `checkpoint_every` epochs.
pub fn train_with_hook<R, H>(
    model: &mut DecoderModel,
    dataset: &Dataset,
    config: &TrainConfig,
    rng: &mut R,
    mut hook: H,
) -> Result<TrainTrace, TrainError>
where
    R: Rng + ?Sized,
    H: FnMut(&DecoderModel, usize) -> Result<(), TrainError>,
{
    config.validate()?;
    let (n, k) = (model.spec().n, model.spec().k);
    if dataset.n != n || dataset.k != k {
        return Err(TrainError::CodeMismatch {
            data_n: dataset.n,
            data_k: dataset.k,
            model_n: n,
            model_k: k,
        });
    }
    if dataset.is_empty() {
        return Err(TrainError::Config("empty dataset".into()));
    }
    let sigma = ebn0_to_sigma(config.train_ebn0_db, k as f64 / n as f64)?;
    let batch = config.batch_size;
    let per_epoch = dataset.len().div_ceil(batch);
    let mut adam = Adam::new(config.adam());
    let mut trace = TrainTrace::default();
    let mut window = LossBreakdown::default();
    let mut window_len = 0usize;

    let mut s = vec![0.0; batch * n];
    let mut u = vec![0.0; batch * k];
    for epoch in 0..config.epochs {
        for it in 0..per_epoch {
            for slot in 0..batch {
                let entry = &dataset.entries[(it * batch + slot) % dataset.len()];
                s[slot * n..(slot + 1) * n].copy_from_slice(entry.symbols.as_slice());
                for (dst, &b) in u[slot * k..(slot + 1) * k].iter_mut().zip(entry.info.as_slice()) {
                    *dst = f64::from(b);
                }
            }
            let mut y = s.clone();
            add_awgn(&mut y, sigma, rng);
            let y = Tensor::new(vec![batch, n], y).expect("batch shape");
            let s_t = Tensor::new(vec![batch, n], s.clone()).expect("batch shape");
            let u_t = Tensor::new(vec![batch, k], u.clone()).expect("batch shape");

            let (loss, grads) = model.loss_and_grads(&y, &s_t, &u_t)?;
            let step = trace.iterations;
            if !loss.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    total: loss.total,
                    denoise: loss.denoise,
                    decode: loss.decode,
                });
            }
            adam.step(model.params_mut(), &grads);
            trace.iterations += 1;

            window.total += loss.total;
            window.denoise += loss.denoise;
            window.decode += loss.decode;
            window_len += 1;
            if window_len == config.log_every {
                let scale = 1.0 / window_len as f64;
                trace.rows.push(TraceRow {
                    epoch,
                    step,
                    total_loss: window.total * scale,
                    denoise_loss: window.denoise * scale,
                    decode_loss: window.decode * scale,
                });
                window = LossBreakdown::default();
                window_len = 0;
            }
        }
        trace.epochs = epoch + 1;
        if let Some(every) = config.checkpoint_every {
            if (epoch + 1) % every == 0 {
                hook(model, epoch + 1)?;
            }
        }
    }
    if window_len > 0 {
        let scale = 1.0 / window_len as f64;
        trace.rows.push(TraceRow {
            epoch: trace.epochs - 1,
            step: trace.iterations - 1,
            total_loss: window.total * scale,
            denoise_loss: window.denoise * scale,
            decode_loss: window.decode * scale,
        });
    }
    log::debug!(
        "trained {} for {} epochs ({} iterations)",
        model.spec(),
        trace.epochs,
        trace.iterations
    );
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Family, ModelSpec, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn tiny(variant: Variant) -> DecoderModel {
        let spec = ModelSpec::new(Family::Mlp, variant, 16, 8).with_dims(vec![8], vec![8]);
        DecoderModel::build(spec, 1).unwrap()
    }

    #[test]
    fn dataset_16_8() {
        let code = PolarCode::construct(16, 8).unwrap();
        let data = gen_dataset(&code).unwrap();
        assert_eq!(data.len(), 256);
        let distinct: HashSet<_> = data.entries.iter().map(|e| e.bits.clone()).collect();
        assert_eq!(distinct.len(), 256);
        assert!(data
            .entries
            .iter()
            .all(|e| e.symbols.as_slice().iter().all(|&v| v == 1.0 || v == -1.0)));
        assert_eq!(data.entries[1].info.as_slice(), &[0, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn dataset_2_1() {
        let data = gen_dataset(&PolarCode::construct(2, 1).unwrap()).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.entries[0].info.as_slice(), &[0]);
        assert_eq!(data.entries[1].info.as_slice(), &[1]);
    }

    #[test]
    fn dataset_rejects_large_k() {
        let code = PolarCode::construct(32, 17).unwrap();
        assert!(matches!(gen_dataset(&code), Err(TrainError::TooManyCodewords(17))));
    }

    #[test]
    fn iteration_bookkeeping() {
        let code = PolarCode::construct(16, 8).unwrap();
        let data = gen_dataset(&code).unwrap();
        let mut model = tiny(Variant::Rnnd);
        let config = TrainConfig {
            epochs: 3,
            log_every: 2,
            ..TrainConfig::default()
        };
        let trace = train(&mut model, &data, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(trace.iterations, 12);
        assert_eq!(trace.epochs, 3);
        assert_eq!(trace.rows.len(), 6);
        assert!(trace.rows.iter().all(|r| r.total_loss >= 0.0 && r.total_loss.is_finite()));
        assert!(trace.rows.iter().all(|r| (r.total_loss - r.denoise_loss - r.decode_loss).abs() < 1e-12));
    }

    #[test]
    fn checkpoint_hook_cadence() {
        let data = gen_dataset(&PolarCode::construct(16, 8).unwrap()).unwrap();
        let mut model = tiny(Variant::Nnd);
        let config = TrainConfig {
            epochs: 5,
            checkpoint_every: Some(2),
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        train_with_hook(&mut model, &data, &config, &mut ChaCha8Rng::seed_from_u64(0), |_, e| {
            seen.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, [2, 4]);
    }

    #[test]
    fn batch_larger_than_dataset_tiles() {
        let data = gen_dataset(&PolarCode::construct(4, 2).unwrap()).unwrap();
        let spec = ModelSpec::new(Family::Mlp, Variant::Rnnd, 4, 2).with_dims(vec![4], vec![4]);
        let mut model = DecoderModel::build(spec, 0).unwrap();
        let config = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let trace = train(&mut model, &data, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(trace.iterations, 2);
    }

    #[test]
    fn rejects_invalid_config_and_mismatched_data() {
        let data = gen_dataset(&PolarCode::construct(4, 2).unwrap()).unwrap();
        let mut model = tiny(Variant::Rnnd);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            train(&mut model, &data, &TrainConfig::default(), &mut rng),
            Err(TrainError::CodeMismatch { .. })
        ));
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let data = gen_dataset(&PolarCode::construct(16, 8).unwrap()).unwrap();
        let mut model = tiny(Variant::Rnnd);
        model.params_mut()[0].data_mut()[0] = f64::NAN;
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let err = train(&mut model, &data, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, TrainError::Diverged { epoch: 0, step: 0, .. }), "{err}");
    }

    #[test]
    fn trace_csv_round_trip() {
        let trace = TrainTrace {
            rows: vec![
                TraceRow {
                    epoch: 0,
                    step: 0,
                    total_loss: 0.1 + 0.2,
                    denoise_loss: 1e-17,
                    decode_loss: 0.30000000000000004 - 1e-17,
                },
                TraceRow {
                    epoch: 3,
                    step: 15,
                    total_loss: 2.0 / 3.0,
                    denoise_loss: 0.0,
                    decode_loss: 2.0 / 3.0,
                },
            ],
            epochs: 4,
            iterations: 16,
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("epoch,step,total_loss,denoise_loss,decode_loss\n"));
        assert_eq!(TrainTrace::read_csv(buf.as_slice()).unwrap(), trace.rows);
    }
}
