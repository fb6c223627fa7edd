use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use polarlab::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use polarlab::eval::{self, EvalError, FrameDecoder, ScDecoder};
use polarlab::models::{DecoderModel, ModelError, ModelSpec, ARCH_NAMES};
use polarlab::nn::Parameterized;
use polarlab::polar::PolarCode;
use polarlab::training::{gen_dataset, noise_rng, train_with_hook};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::{CliError, GlobalArgs};

/// Config file (or defaults) with command-line overrides applied.
fn resolve(g: &GlobalArgs) -> Result<ExperimentConfig, CliError> {
    let mut config = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &g.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Paths of the files a command will write, refused up front if any exists.
fn outputs(config: &ExperimentConfig, force: bool, names: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let paths: Vec<PathBuf> = names.iter().map(|n| config.out_dir.join(n)).collect();
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(CliError::Usage(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    fs::create_dir_all(&config.out_dir)?;
    Ok(paths)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), CliError> {
    eval::write_csv(rows, header, BufWriter::new(File::create(path)?))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Decoder/code and residual mismatches are the caller's mistake, not a
/// runtime failure.
fn classify(e: EvalError) -> CliError {
    match e {
        EvalError::CodeMismatch { .. } | EvalError::Model(ModelError::NotResidual(_)) => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.into()),
    }
}

fn load(path: &Path) -> Result<DecoderModel, CliError> {
    load_checkpoint(path)
        .map(|(model, _)| model)
        .map_err(|e: CheckpointError| CliError::Runtime(anyhow::anyhow!("checkpoint {}: {e}", path.display())))
}

pub fn params(arch: &str, n: usize, k: usize) -> Result<(), CliError> {
    let spec = ModelSpec::from_short_name(arch, n, k).map_err(|e| CliError::Usage(e.to_string()))?;
    let model = DecoderModel::build(spec, 0).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{}", model.param_count());
    Ok(())
}

pub fn train(g: &GlobalArgs, arch: Option<String>, epochs: Option<usize>) -> Result<(), CliError> {
    let mut config = resolve(g)?;
    if let Some(arch) = arch {
        config.arch = arch;
    }
    if let Some(epochs) = epochs {
        config.train.epochs = epochs;
    }
    let (code, spec) = config.validate()?;
    let paths = outputs(&config, g.force, &["checkpoint.json", "trace.csv"])?;

    let dataset = gen_dataset(&code)?;
    let mut model = DecoderModel::build(spec, config.seed)?;
    log::info!(
        "training {} ({} parameters) for {} epochs",
        model.spec(),
        model.param_count(),
        config.train.epochs
    );
    let seed = config.seed;
    let out_dir = config.out_dir.clone();
    let trace = train_with_hook(&mut model, &dataset, &config.train, &mut noise_rng(seed), |m, epoch| {
        let path = out_dir.join(format!("checkpoint-epoch-{epoch}.json"));
        save_checkpoint(m, seed, epoch as u64, &path).map_err(|e| polarlab::training::TrainError::Hook(e.to_string()))
    })?;
    save_checkpoint(&model, seed, trace.epochs as u64, &paths[0])?;
    trace.save_csv(&paths[1])?;
    if let Some(last) = trace.rows.last() {
        println!(
            "final loss {:.6} (denoise {:.6}, decode {:.6}) after {} iterations",
            last.total_loss, last.denoise_loss, last.decode_loss, trace.iterations
        );
    }
    println!("wrote {}", paths[0].display());
    println!("wrote {}", paths[1].display());
    Ok(())
}

pub fn ber(g: &GlobalArgs, checkpoints: &[PathBuf]) -> Result<(), CliError> {
    let config = resolve(g)?;
    let (code, _) = config.validate()?;
    let paths = outputs(&config, g.force, &["ber.csv"])?;
    let models = checkpoints.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
    let sc = ScDecoder { code: code.clone() };
    let mut decoders: Vec<&dyn FrameDecoder> = vec![&sc];
    decoders.extend(models.iter().map(|m| m as &dyn FrameDecoder));

    let mut rows = Vec::new();
    for decoder in decoders {
        rows.extend(eval::ber_eval(decoder, &code, &config.eval.ebn0_db, config.eval.stop(), config.seed).map_err(classify)?);
    }
    for r in &rows {
        println!("{:>10} {:>5.1} dB  BER {:.3e}  ({} errors / {} frames)", r.decoder, r.ebn0_db, r.ber, r.bit_errors, r.frames);
    }
    write_rows(&paths[0], &rows, &eval::BER_HEADER)
}

fn residual_model(path: &Path, code: &PolarCode) -> Result<DecoderModel, CliError> {
    let model = load(path)?;
    if !model.spec().is_residual() {
        return Err(CliError::Usage(ModelError::NotResidual(model.spec().arch_name()).to_string()));
    }
    if (model.spec().n, model.spec().k) != (code.n(), code.k()) {
        return Err(CliError::Usage(format!(
            "checkpoint is for {} but the config code is ({},{})",
            model.spec(),
            code.n(),
            code.k()
        )));
    }
    Ok(model)
}

pub fn snr(g: &GlobalArgs, checkpoint: &Path) -> Result<(), CliError> {
    let config = resolve(g)?;
    let (code, _) = config.validate()?;
    let model = residual_model(checkpoint, &code)?;
    let paths = outputs(&config, g.force, &["snr.csv"])?;
    let rows = eval::snr_gain(&model, &code, &config.eval.ebn0_db, config.eval.frames, config.seed).map_err(classify)?;
    for r in &rows {
        println!(
            "{:>5.1} dB  input {:.3} dB  output {:.3} dB  gain {:.3} dB",
            r.ebn0_db,
            r.input_snr_db,
            r.output_snr_db,
            r.gain_db()
        );
    }
    write_rows(&paths[0], &rows, &eval::SNR_HEADER)
}

pub fn pdf(g: &GlobalArgs, checkpoint: &Path) -> Result<(), CliError> {
    let config = resolve(g)?;
    let (code, _) = config.validate()?;
    let model = residual_model(checkpoint, &code)?;
    let paths = outputs(&config, g.force, &["pdf.csv"])?;
    let mut rows = Vec::new();
    for &db in &config.eval.pdf_ebn0_db {
        let report = eval::pdf_hist(&model, &code, db, config.eval.frames, config.eval.hist(), config.seed).map_err(classify)?;
        println!(
            "{db:>5.1} dB  variance about ±1: received {:.4}, denoised {:.4}",
            report.received_mode_variance, report.denoised_mode_variance
        );
        rows.extend(report.rows);
    }
    write_rows(&paths[0], &rows, &eval::PDF_HEADER)
}

pub fn bench(g: &GlobalArgs, checkpoints: &[PathBuf]) -> Result<(), CliError> {
    let config = resolve(g)?;
    let (code, _) = config.validate()?;
    let paths = outputs(&config, g.force, &["timing.csv"])?;
    let models = if checkpoints.is_empty() {
        ARCH_NAMES
            .iter()
            .map(|name| {
                let spec = ModelSpec::from_short_name(name, code.n(), code.k())?;
                DecoderModel::build(spec, config.seed)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Usage(e.to_string()))?
    } else {
        checkpoints.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?
    };
    let sc = ScDecoder { code: code.clone() };
    let mut decoders: Vec<&dyn FrameDecoder> = vec![&sc];
    decoders.extend(models.iter().map(|m| m as &dyn FrameDecoder));
    let e = &config.eval;
    let rows = eval::timing_bench(&decoders, &code, e.bench_frames, e.bench_batch, e.bench_ebn0_db, config.seed)
        .map_err(classify)?;
    for r in &rows {
        println!("{:>10}  {:.3e} s/frame  (batch {})", r.decoder, r.seconds_per_frame, r.batch);
    }
    write_rows(&paths[0], &rows, &eval::TIMING_HEADER)
}
