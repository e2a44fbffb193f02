use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hidflow_core::checkpoint::{self, Loaded};
use hidflow_core::config::Precision;
use hidflow_core::degradation::{add_gaussian, add_mixture};
use hidflow_core::io::{self, RawType};
use hidflow_core::metrics::MetricReport;
use hidflow_core::train::{self, Trainer};
use hidflow_core::verify::{self, Level};
use hidflow_core::{HidError, HidFlowNet, RunConfig};
use hidflow_tensor::Real;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(
    name = "hidflow",
    version,
    about = "Hyperspectral denoising with a conditional normalizing flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML run configuration.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resume from this checkpoint; its embedded configuration is used.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, instead of `output.dir`. Not stored in checkpoints.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the z = 0 estimate for each input cube, plus optional samples.
    Denoise {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Draw samples of the clean cube given a noisy one.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        input: PathBuf,
    },
    /// PSNR, SSIM and SAM for `ESTIMATE=REFERENCE` pairs, as CSV.
    Evaluate {
        /// CSV destination; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true, value_name = "ESTIMATE=REFERENCE")]
        pairs: Vec<String>,
    },
    /// Run the invertibility, log-determinant and gradient checks.
    Verify {
        #[arg(long, value_enum, default_value_t = VerifyLevel::Quick)]
        level: VerifyLevel,
        /// Also round-trip this trained model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a flat little-endian raster (H×W×B, band fastest) to a cube file.
    Import {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        bands: usize,
        /// u8, u16, f32 or f64.
        #[arg(long, default_value = "f32")]
        dtype: String,
        /// Values are divided by this, e.g. 65535 for 16-bit sources.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
        input: PathBuf,
    },
    /// Render three bands as an RGB PNG.
    ExportPng {
        /// Band indices as R,G,B.
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
        bands: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        input: PathBuf,
    },
    /// Add synthetic noise to a clean cube.
    Degrade {
        /// Gaussian σ on the 0–255 scale.
        #[arg(long, conflicts_with = "mixture")]
        sigma: Option<f64>,
        /// Mixed impulse/stripe/deadline noise with default ranges; the
        /// draw log is written next to the output as JSON.
        #[arg(long)]
        mixture: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyLevel {
    Quick,
    Full,
}

/// Exit code for an error chain: 2 config, 3 data, 4 verification, 1 other.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<HidError>() {
        Some(HidError::Config(_)) => 2,
        Some(HidError::Verification(_)) => 4,
        Some(
            HidError::Data(_)
            | HidError::Io { .. }
            | HidError::Divisibility { .. }
            | HidError::NonFinite { .. }
            | HidError::Tensor(_),
        ) => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("HIDFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        HidError::Config(format!(
            "HIDFLOW_THREADS must be a positive integer, got `{value}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            checkpoint,
            seed,
            out,
        } => cmd_train(config, checkpoint, seed, out),
        Command::Denoise {
            checkpoint,
            samples,
            temperature,
            seed,
            out,
            inputs,
        } => {
            check_temperature(temperature)?;
            match load_checkpoint(&checkpoint)? {
                AnyModel::F32(m) => {
                    denoise_all(&m.model, &inputs, samples, temperature, seed, &out)
                }
                AnyModel::F64(m) => {
                    denoise_all(&m.model, &inputs, samples, temperature, seed, &out)
                }
            }
        }
        Command::Sample {
            checkpoint,
            samples,
            temperature,
            seed,
            out,
            input,
        } => {
            check_temperature(temperature)?;
            if samples == 0 {
                return Err(HidError::Config("--samples must be positive".into()).into());
            }
            let cube = io::read_cube(&input)?;
            let drawn = match load_checkpoint(&checkpoint)? {
                AnyModel::F32(m) => m.model.sample(&cube, samples, temperature, seed)?,
                AnyModel::F64(m) => m.model.sample(&cube, samples, temperature, seed)?,
            };
            create_dir(&out)?;
            for (i, s) in drawn.iter().enumerate() {
                io::write_cube(&out.join(format!("{}-sample-{i}.hsic", stem(&input))), s)?;
            }
            println!("wrote {samples} samples to {}", out.display());
            Ok(())
        }
        Command::Evaluate { out, pairs } => cmd_evaluate(out, &pairs),
        Command::Verify {
            level,
            checkpoint,
            seed,
        } => cmd_verify(level, checkpoint, seed),
        Command::Import {
            height,
            width,
            bands,
            dtype,
            scale,
            out,
            input,
        } => {
            let cube =
                io::import_raw(&input, height, width, bands, RawType::parse(&dtype)?, scale)?;
            io::write_cube(&out, &cube)?;
            println!(
                "imported {height}×{width}×{bands} cube to {}",
                out.display()
            );
            Ok(())
        }
        Command::ExportPng { bands, out, input } => {
            let [r, g, b] = bands[..] else {
                return Err(HidError::Config(format!(
                    "--bands takes three indices, got {}",
                    bands.len()
                ))
                .into());
            };
            io::export_falsecolor(&io::read_cube(&input)?, [r, g, b], &out)?;
            Ok(())
        }
        Command::Degrade {
            sigma,
            mixture,
            seed,
            out,
            input,
        } => {
            let clean = io::read_cube(&input)?;
            if mixture {
                let (noisy, log) = add_mixture(&clean, &Default::default(), seed)?;
                io::write_atomic(
                    &out.with_extension("mixture.json"),
                    serde_json::to_string_pretty(&log)?.as_bytes(),
                )?;
                io::write_cube(&out, &noisy)?;
            } else {
                let sigma =
                    sigma.ok_or_else(|| HidError::Config("pass --sigma or --mixture".into()))?;
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(HidError::Config(format!(
                        "--sigma must be non-negative, got {sigma}"
                    ))
                    .into());
                }
                io::write_cube(&out, &add_gaussian(&clean, sigma, seed))?;
            }
            Ok(())
        }
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(
            HidError::Config(format!("--temperature must be non-negative, got {t}")).into(),
        );
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cube".into())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HidError::io(dir, e))?;
    Ok(())
}

enum AnyModel {
    F32(Loaded<f32>),
    F64(Loaded<f64>),
}

fn load_checkpoint(path: &Path) -> Result<AnyModel> {
    let bytes = std::fs::read(path).map_err(|e| HidError::io(path, e))?;
    let manifest = checkpoint::read_manifest(&bytes)?;
    Ok(match manifest.config.precision {
        Precision::F32 => AnyModel::F32(checkpoint::from_bytes(&bytes)?),
        Precision::F64 => AnyModel::F64(checkpoint::from_bytes(&bytes)?),
    })
}

fn denoise_all<T: Real>(
    model: &HidFlowNet<T>,
    inputs: &[PathBuf],
    samples: usize,
    temperature: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    create_dir(out)?;
    inputs.par_iter().try_for_each(|input| -> Result<()> {
        let noisy = io::read_cube(input).with_context(|| format!("reading {}", input.display()))?;
        let name = stem(input);
        io::write_cube(
            &out.join(format!("{name}-denoised.hsic")),
            &model.denoise(&noisy)?,
        )?;
        for (i, s) in model
            .sample(&noisy, samples, temperature, seed)?
            .iter()
            .enumerate()
        {
            io::write_cube(&out.join(format!("{name}-sample-{i}.hsic")), s)?;
        }
        log::info!("denoised {}", input.display());
        Ok(())
    })
}

fn cmd_train(
    config: Option<PathBuf>,
    resume: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    match resume {
        Some(path) => {
            if seed.is_some() {
                bail!(HidError::Config(
                    "--seed cannot change a resumed run".into()
                ));
            }
            match load_checkpoint(&path)? {
                AnyModel::F32(l) => resume_run(l, out),
                AnyModel::F64(l) => resume_run(l, out),
            }
        }
        None => {
            let path = config
                .ok_or_else(|| HidError::Config("train needs --config or --checkpoint".into()))?;
            let mut cfg = RunConfig::load(&path)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            let (cubes, validation) = train::load_data(&cfg)?;
            match cfg.precision {
                Precision::F32 => train_to_dir(Trainer::<f32>::new(cfg, &cubes, validation)?, &dir),
                Precision::F64 => train_to_dir(Trainer::<f64>::new(cfg, &cubes, validation)?, &dir),
            }
        }
    }
}

fn resume_run<T: Real>(loaded: Loaded<T>, out: Option<PathBuf>) -> Result<()> {
    let dir = out.unwrap_or_else(|| loaded.config.output.dir.clone());
    let (cubes, validation) = train::load_data(&loaded.config)?;
    train_to_dir(Trainer::resume(loaded, &cubes, validation)?, &dir)
}

fn train_to_dir<T: Real>(mut trainer: Trainer<T>, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    io::write_atomic(
        &dir.join("config.toml"),
        trainer.config.to_toml()?.as_bytes(),
    )?;
    log::info!(
        "{} patches, {} steps per epoch, {} steps in total",
        trainer.patch_count(),
        trainer.steps_per_epoch(),
        trainer.total_steps()
    );
    let start = Instant::now();
    let final_path = train::run_to_dir(&mut trainer, dir)?;
    let bytes = std::fs::read(&final_path).map_err(|e| HidError::io(&final_path, e))?;
    let digest: String = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    println!(
        "trained {} steps in {:.1} s ({} skipped); {} sha256 {digest}",
        trainer.state.batches,
        start.elapsed().as_secs_f64(),
        trainer.state.skipped,
        final_path.display()
    );
    Ok(())
}

fn cmd_evaluate(out: Option<PathBuf>, pairs: &[String]) -> Result<()> {
    let reports = pairs
        .iter()
        .map(|pair| {
            let (est, reference) = pair.split_once('=').ok_or_else(|| {
                HidError::Config(format!("expected ESTIMATE=REFERENCE, got `{pair}`"))
            })?;
            let (est, reference) = (Path::new(est), Path::new(reference));
            let report = MetricReport::compute(
                stem(est),
                &io::read_cube(est)?,
                &io::read_cube(reference)?,
            )?;
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;
    let csv = MetricReport::to_csv(&reports);
    match out {
        Some(path) => io::write_atomic(&path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_verify(level: VerifyLevel, checkpoint: Option<PathBuf>, seed: u64) -> Result<()> {
    let level = match level {
        VerifyLevel::Quick => Level::Quick,
        VerifyLevel::Full => Level::Full,
    };
    let trained = match checkpoint {
        Some(path) => {
            let loaded: Loaded<f64> = checkpoint::load(&path)?;
            let cfg = loaded.model.config().clone();
            let extent = (1..=1024)
                .find(|&e| cfg.check_spatial(e, e).is_ok())
                .ok_or_else(|| HidError::Config("no valid input extent up to 1024".into()))?;
            Some((loaded.model, extent))
        }
        None => None,
    };
    let start = Instant::now();
    let checks = verify::run(level, seed, trained.as_ref().map(|(m, e)| (m, *e)))?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!(
        "{} checks, {failed} failed, {:.1} s",
        checks.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        bail!(HidError::Verification(format!(
            "{failed} of {} checks failed",
            checks.len()
        )));
    }
    Ok(())
}
