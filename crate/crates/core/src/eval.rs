//! Monte-Carlo evaluation: bit error rate, denoiser SNR gain, histograms of
//! received and denoised symbols, and decoding latency.
//!
//! Frames are simulated in fixed-size blocks. Block `b` of test point `p`
//! draws from its own ChaCha stream `(p << 32) | b` under the run seed, so
//! results do not depend on how many worker threads process the blocks.

use std::io;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{DecoderModel, ModelError};
use crate::nn::Tensor;
use crate::polar::{add_awgn, ebn0_to_sigma, BitVector, PolarCode, PolarError, SignalVector};

/// Frames per simulation block.
pub const BLOCK_FRAMES: u64 = 1000;

pub const BER_HEADER: [&str; 5] = ["decoder", "ebn0_db", "frames", "bit_errors", "ber"];
pub const SNR_HEADER: [&str; 3] = ["ebn0_db", "input_snr_db", "output_snr_db"];
pub const PDF_HEADER: [&str; 5] = ["ebn0_db", "bin_left", "bin_right", "density_received", "density_denoised"];
pub const TIMING_HEADER: [&str; 5] = ["decoder", "frames", "total_seconds", "seconds_per_frame", "batch"];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Polar(#[from] PolarError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("decoder {decoder} is built for ({dn},{dk}) but the code is ({cn},{ck})")]
    CodeMismatch {
        decoder: String,
        dn: usize,
        dk: usize,
        cn: usize,
        ck: usize,
    },
    #[error("invalid evaluation setting: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Anything that maps received frames to information-bit decisions.
pub trait FrameDecoder: Sync {
    fn name(&self) -> String;

    /// `(N, K)` the decoder expects.
    fn dims(&self) -> (usize, usize);

    /// Decodes `y` (`frames × N`, row-major) and returns `frames × K` bits.
    /// Neural decoders run `batch` frames per forward pass.
    fn decode_frames(&self, y: &[f64], sigma: f64, batch: usize) -> Vec<u8>;
}

/// Successive-cancellation baseline; decodes one frame at a time.
#[derive(Debug, Clone)]
pub struct ScDecoder {
    pub code: PolarCode,
}

impl FrameDecoder for ScDecoder {
    fn name(&self) -> String {
        "sc".into()
    }

    fn dims(&self) -> (usize, usize) {
        (self.code.n(), self.code.k())
    }

    fn decode_frames(&self, y: &[f64], sigma: f64, _batch: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(y.len() / self.code.n() * self.code.k());
        for frame in y.chunks_exact(self.code.n()) {
            let signal = SignalVector::new(frame.to_vec()).expect("channel output is finite");
            let bits = self.code.sc_decode(&signal, sigma).expect("sigma validated by caller");
            out.extend_from_slice(bits.as_slice());
        }
        out
    }
}

impl FrameDecoder for DecoderModel {
    fn name(&self) -> String {
        self.spec().short_name()
    }

    fn dims(&self) -> (usize, usize) {
        (self.spec().n, self.spec().k)
    }

    fn decode_frames(&self, y: &[f64], _sigma: f64, batch: usize) -> Vec<u8> {
        let n = self.spec().n;
        let mut out = Vec::with_capacity(y.len() / n * self.spec().k);
        for chunk in y.chunks(batch.max(1) * n) {
            let t = Tensor::new(vec![chunk.len() / n, n], chunk.to_vec()).expect("whole frames");
            out.extend(self.decode_batch(&t).expect("input width checked by caller"));
        }
        out
    }
}

/// Stopping rule per test point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerStop {
    pub min_bit_errors: u64,
    pub max_frames: u64,
}

impl Default for BerStop {
    fn default() -> Self {
        Self {
            min_bit_errors: 100,
            max_frames: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerRow {
    pub decoder: String,
    pub ebn0_db: f64,
    pub frames: u64,
    pub bit_errors: u64,
    pub ber: f64,
}

impl BerRow {
    /// Binomial standard error of the BER estimate.
    pub fn std_error(&self) -> f64 {
        let bits = self.frames as f64 * self.bit_count_per_frame();
        (self.ber * (1.0 - self.ber) / bits).sqrt()
    }

    fn bit_count_per_frame(&self) -> f64 {
        if self.frames == 0 || self.ber == 0.0 {
            1.0
        } else {
            self.bit_errors as f64 / (self.ber * self.frames as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub ebn0_db: f64,
    pub input_snr_db: f64,
    pub output_snr_db: f64,
}

impl SnrRow {
    pub fn gain_db(&self) -> f64 {
        self.output_snr_db - self.input_snr_db
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistRow {
    pub ebn0_db: f64,
    pub bin_left: f64,
    pub bin_right: f64,
    pub density_received: f64,
    pub density_denoised: f64,
}

/// Histogram plus pooled second moments of the symbols behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfReport {
    pub rows: Vec<HistRow>,
    /// Plain sample variance of all received components.
    pub received_variance: f64,
    pub denoised_variance: f64,
    /// Mean squared distance of each component from its transmitted ±1.
    pub received_mode_variance: f64,
    pub denoised_mode_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub decoder: String,
    pub frames: u64,
    pub total_seconds: f64,
    pub seconds_per_frame: f64,
    pub batch: usize,
}

/// Random information bits, their BPSK codewords and noisy observations.
#[derive(Debug, Clone)]
pub struct FrameBlock {
    pub frames: usize,
    /// `frames × K`
    pub info: Vec<u8>,
    /// `frames × N`
    pub transmitted: Vec<f64>,
    /// `frames × N`
    pub received: Vec<f64>,
}

/// Generates `frames` frames with uniformly random information bits.
pub fn simulate_frames<R: Rng + ?Sized>(code: &PolarCode, frames: usize, sigma: f64, rng: &mut R) -> FrameBlock {
    let (n, k) = (code.n(), code.k());
    let mut info = Vec::with_capacity(frames * k);
    let mut transmitted = Vec::with_capacity(frames * n);
    for _ in 0..frames {
        let u = BitVector::random(k, rng);
        let x = code.encode(&u).expect("length k");
        transmitted.extend(x.as_slice().iter().map(|&b| 1.0 - 2.0 * f64::from(b)));
        info.extend_from_slice(u.as_slice());
    }
    let mut received = transmitted.clone();
    add_awgn(&mut received, sigma, rng);
    FrameBlock {
        frames,
        info,
        transmitted,
        received,
    }
}

fn block_rng(seed: u64, point: usize, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 32) | block);
    rng
}

fn check_dims(decoder: &dyn FrameDecoder, code: &PolarCode) -> Result<(), EvalError> {
    let (dn, dk) = decoder.dims();
    if (dn, dk) != (code.n(), code.k()) {
        return Err(EvalError::CodeMismatch {
            decoder: decoder.name(),
            dn,
            dk,
            cn: code.n(),
            ck: code.k(),
        });
    }
    Ok(())
}

/// Bit error rate at each Eb/N0 point. Blocks are simulated until the
/// error floor or the frame cap is reached; errors are counted on the
/// information bits only.
pub fn ber_eval(
    decoder: &dyn FrameDecoder,
    code: &PolarCode,
    ebn0_db: &[f64],
    stop: BerStop,
    seed: u64,
) -> Result<Vec<BerRow>, EvalError> {
    check_dims(decoder, code)?;
    if stop.max_frames == 0 {
        return Err(EvalError::Config("max_frames must be at least 1".into()));
    }
    let k = code.k();
    let wave = rayon::current_num_threads().max(1) as u64;
    let mut rows = Vec::with_capacity(ebn0_db.len());
    for (point, &db) in ebn0_db.iter().enumerate() {
        let sigma = ebn0_to_sigma(db, code.rate())?;
        let total_blocks = stop.max_frames.div_ceil(BLOCK_FRAMES);
        let (mut frames, mut errors) = (0u64, 0u64);
        let mut next = 0u64;
        'point: while next < total_blocks {
            let upto = (next + wave).min(total_blocks);
            let results: Vec<(u64, u64)> = (next..upto)
                .into_par_iter()
                .map(|b| {
                    let len = BLOCK_FRAMES.min(stop.max_frames - b * BLOCK_FRAMES) as usize;
                    let mut rng = block_rng(seed, point, b);
                    let block = simulate_frames(code, len, sigma, &mut rng);
                    let decided = decoder.decode_frames(&block.received, sigma, len);
                    let errs = decided.iter().zip(&block.info).filter(|(a, b)| a != b).count();
                    (len as u64, errs as u64)
                })
                .collect();
            for (len, errs) in results {
                frames += len;
                errors += errs;
                if errors >= stop.min_bit_errors {
                    break 'point;
                }
            }
            next = upto;
        }
        let ber = errors as f64 / (frames as f64 * k as f64);
        log::info!("{} @ {db} dB: {errors} errors in {frames} frames, BER {ber:.3e}", decoder.name());
        rows.push(BerRow {
            decoder: decoder.name(),
            ebn0_db: db,
            frames,
            bit_errors: errors,
            ber,
        });
    }
    Ok(rows)
}

/// Energy sums over one block: `(|s|², |y - s|², |ŝ - s|²)`.
fn energy_block(model: &DecoderModel, block: &FrameBlock, n: usize) -> Result<(f64, f64, f64), EvalError> {
    let y = Tensor::new(vec![block.frames, n], block.received.clone()).expect("whole frames");
    let s_hat = model.denoise(&y)?;
    let mut sums = (0.0, 0.0, 0.0);
    for ((&s, &r), &d) in block.transmitted.iter().zip(&block.received).zip(s_hat.data()) {
        sums.0 += s * s;
        sums.1 += (r - s) * (r - s);
        sums.2 += (d - s) * (d - s);
    }
    Ok(sums)
}

/// Input and output SNR of the residual denoiser over `frames` frames per
/// point: `10·log10(Σ|s|² / Σ|y-s|²)` and `10·log10(Σ|s|² / Σ|ŝ-s|²)`.
pub fn snr_gain(
    model: &DecoderModel,
    code: &PolarCode,
    ebn0_db: &[f64],
    frames: u64,
    seed: u64,
) -> Result<Vec<SnrRow>, EvalError> {
    check_dims(model, code)?;
    if !model.spec().is_residual() {
        return Err(ModelError::NotResidual(model.spec().arch_name()).into());
    }
    if frames == 0 {
        return Err(EvalError::Config("frames must be at least 1".into()));
    }
    let n = code.n();
    let blocks = frames.div_ceil(BLOCK_FRAMES);
    ebn0_db
        .iter()
        .enumerate()
        .map(|(point, &db)| {
            let sigma = ebn0_to_sigma(db, code.rate())?;
            let sums = (0..blocks)
                .into_par_iter()
                .map(|b| {
                    let len = BLOCK_FRAMES.min(frames - b * BLOCK_FRAMES) as usize;
                    let block = simulate_frames(code, len, sigma, &mut block_rng(seed, point, b));
                    energy_block(model, &block, n)
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            let (signal, noise_in, noise_out) = sums
                .into_iter()
                .fold((0.0, 0.0, 0.0), |a, s| (a.0 + s.0, a.1 + s.1, a.2 + s.2));
            Ok(SnrRow {
                ebn0_db: db,
                input_snr_db: 10.0 * (signal / noise_in).log10(),
                output_snr_db: 10.0 * (signal / noise_out).log10(),
            })
        })
        .collect()
}

/// Histogram settings: `bins` equal bins over `[-range, range]`; values
/// outside land in the edge bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistSpec {
    pub bins: usize,
    pub range: f64,
}

impl Default for HistSpec {
    fn default() -> Self {
        Self { bins: 80, range: 4.0 }
    }
}

/// Normalized histograms of every component of `y` and `ŝ`, pooled over
/// `frames` frames at one Eb/N0.
pub fn pdf_hist(
    model: &DecoderModel,
    code: &PolarCode,
    ebn0_db: f64,
    frames: u64,
    hist: HistSpec,
    seed: u64,
) -> Result<PdfReport, EvalError> {
    check_dims(model, code)?;
    if !model.spec().is_residual() {
        return Err(ModelError::NotResidual(model.spec().arch_name()).into());
    }
    if hist.bins < 10 || !(hist.range > 0.0) {
        return Err(EvalError::Config("histograms need at least 10 bins and a positive range".into()));
    }
    if frames == 0 {
        return Err(EvalError::Config("frames must be at least 1".into()));
    }
    let n = code.n();
    let sigma = ebn0_to_sigma(ebn0_db, code.rate())?;
    let width = 2.0 * hist.range / hist.bins as f64;
    let bin_of = |v: f64| (((v + hist.range) / width).floor().max(0.0) as usize).min(hist.bins - 1);

    let mut counts_rx = vec![0u64; hist.bins];
    let mut counts_dn = vec![0u64; hist.bins];
    let (mut sum_rx, mut sq_rx, mut sum_dn, mut sq_dn) = (0.0, 0.0, 0.0, 0.0);
    let (mut mode_rx, mut mode_dn) = (0.0, 0.0);
    let blocks = frames.div_ceil(BLOCK_FRAMES);
    for b in 0..blocks {
        let len = BLOCK_FRAMES.min(frames - b * BLOCK_FRAMES) as usize;
        let block = simulate_frames(code, len, sigma, &mut block_rng(seed, 0, b));
        let y = Tensor::new(vec![len, n], block.received.clone()).expect("whole frames");
        let s_hat = model.denoise(&y)?;
        for ((&s, &r), &d) in block.transmitted.iter().zip(&block.received).zip(s_hat.data()) {
            counts_rx[bin_of(r)] += 1;
            counts_dn[bin_of(d)] += 1;
            sum_rx += r;
            sq_rx += r * r;
            sum_dn += d;
            sq_dn += d * d;
            mode_rx += (r - s) * (r - s);
            mode_dn += (d - s) * (d - s);
        }
    }
    let total = (frames * n as u64) as f64;
    let rows = (0..hist.bins)
        .map(|i| HistRow {
            ebn0_db,
            bin_left: -hist.range + i as f64 * width,
            bin_right: -hist.range + (i + 1) as f64 * width,
            density_received: counts_rx[i] as f64 / (total * width),
            density_denoised: counts_dn[i] as f64 / (total * width),
        })
        .collect();
    let variance = |sum: f64, sq: f64| sq / total - (sum / total).powi(2);
    Ok(PdfReport {
        rows,
        received_variance: variance(sum_rx, sq_rx),
        denoised_variance: variance(sum_dn, sq_dn),
        received_mode_variance: mode_rx / total,
        denoised_mode_variance: mode_dn / total,
    })
}

/// Wall-clock decoding time over one shared set of received frames.
/// Neural decoders run `batch` frames per forward pass; SC always decodes
/// frame by frame and reports batch 1.
pub fn timing_bench(
    decoders: &[&dyn FrameDecoder],
    code: &PolarCode,
    frames: u64,
    batch: usize,
    ebn0_db: f64,
    seed: u64,
) -> Result<Vec<TimingRow>, EvalError> {
    if frames == 0 || batch == 0 {
        return Err(EvalError::Config("frames and batch must be at least 1".into()));
    }
    let sigma = ebn0_to_sigma(ebn0_db, code.rate())?;
    let block = simulate_frames(code, frames as usize, sigma, &mut block_rng(seed, 0, 0));
    let warmup = &block.received[..code.n() * (frames as usize).min(batch)];
    decoders
        .iter()
        .map(|&decoder| {
            check_dims(decoder, code)?;
            let used_batch = if decoder.name() == "sc" { 1 } else { batch };
            std::hint::black_box(decoder.decode_frames(warmup, sigma, used_batch));
            let start = Instant::now();
            let bits = decoder.decode_frames(&block.received, sigma, used_batch);
            let total = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
            std::hint::black_box(bits);
            Ok(TimingRow {
                decoder: decoder.name(),
                frames,
                total_seconds: total,
                seconds_per_frame: total / frames as f64,
                batch: used_batch,
            })
        })
        .collect()
}

/// Writes `header` followed by one record per row.
pub fn write_csv<T: Serialize, W: io::Write>(rows: &[T], header: &[&str], writer: W) -> Result<(), EvalError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned, R: io::Read>(reader: R) -> Result<Vec<T>, EvalError> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}
