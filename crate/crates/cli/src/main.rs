//! Command-line entry points: train a model from a config file, edit images
//! through a trained checkpoint, and produce evaluation reports.
//!
//! Exit codes: 0 success, 2 usage/config error, 1 runtime error.

mod grids;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mddae_core::checkpoint::{self, Checkpoint};
use mddae_core::config::{DataSource, RunConfig};
use mddae_core::data::{generate_synth, load_idx, split, Dataset, SynthFactorSpec};
use mddae_core::editing::{edit_image, intensity_sweep, reconstruct, EditRequest};
use mddae_core::error::Error;
use mddae_core::evalkit::{disentanglement_protocol, image_quality, quality_report, SvmConfig};
use mddae_core::nets::{Dims, Mode, ModelParams};
use mddae_core::optim::{fit, history_to_csv, TrainConfig};

#[derive(Parser)]
#[command(name = "mddae", about = "Disentangling autoencoder: train, edit, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key=value config file and write the best
    /// checkpoint plus a per-epoch history CSV.
    Train(TrainArgs),
    /// Reconstruct and edit images through a trained checkpoint, emitting a
    /// PNG grid and per-image PNGs.
    Edit(EditArgs),
    /// Produce reconstruction-quality and/or disentanglement-protocol CSV
    /// reports for a trained checkpoint.
    Eval(EvalArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the key=value run configuration.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct EditArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// IDX image file with the inputs to edit.
    #[arg(long)]
    images: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// How many images to process from the file.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Edit kind: "class-swap" or "attribute-set". Omit for a
    /// reconstruction-only grid.
    #[arg(long)]
    mode: Option<String>,
    /// Soft-target slot the edit touches.
    #[arg(long)]
    target: Option<usize>,
    /// Attribute intensity to write (attribute-set).
    #[arg(long)]
    intensity: Option<f64>,
    /// Comma-separated intensity sweep (attribute-set), e.g.
    /// 0.25,0.5,1.0,1.5,2.0.
    #[arg(long)]
    sweep: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// The run configuration that describes the dataset and split (defaults
    /// to the config echoed inside the checkpoint).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the CSV reports.
    #[arg(long)]
    out: PathBuf,
    /// Emit quality.csv (per-image RMSE/PSNR/SSIM on the test set).
    #[arg(long)]
    quality: bool,
    /// Run the classification protocol for one attribute, given as
    /// attribute=NAME.
    #[arg(long)]
    protocol: Option<String>,
    /// Comma-separated protocol intensities.
    #[arg(long, default_value = "0.25,0.5,1.0,1.5,2.0")]
    intensities: String,
    /// Classifier runs to average.
    #[arg(long, default_value_t = 5)]
    runs: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Edit(args) => cmd_edit(&args),
        Command::Eval(args) => cmd_eval(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Contract(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn load_dataset(config: &RunConfig) -> Result<Dataset, Error> {
    match &config.data {
        DataSource::Synth { samples, size } => generate_synth(
            &SynthFactorSpec {
                size: *size,
                samples: *samples,
            },
            config.seed,
        ),
        DataSource::Idx { images, labels } => load_idx(images, labels),
    }
}

fn split_dataset(config: &RunConfig) -> Result<(Dataset, Dataset, Dataset), Error> {
    let full = load_dataset(config)?;
    split(&full, config.split, config.seed)
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let mut config = RunConfig::load(&args.config)?;
    config.apply_env_seed()?;
    let (train_set, val_set, _test) = split_dataset(&config)?;
    if config.c_dim != train_set.label_width() {
        return Err(Error::Config(format!(
            "c_dim {} does not match the dataset's {} label columns",
            config.c_dim,
            train_set.label_width()
        )));
    }
    let (channels, height, width) = train_set.image_dims();
    let mut params = ModelParams::init(
        config.mode,
        Dims {
            c: config.c_dim,
            z: config.z_dim,
            channels,
            height,
            width,
        },
        config.arch,
        config.value_range,
        config.seed,
    )?;
    let train_config = TrainConfig {
        batch_size: config.batch_size,
        epochs: config.epochs,
        seed: config.seed,
        weights: config.weights.clone(),
        lr: config.lr,
        adam_beta1: config.adam_beta1,
        adam_beta2: config.adam_beta2,
    };
    std::fs::create_dir_all(&config.out_dir)?;
    let result = fit(&mut params, &train_set, &val_set, &train_config)?;
    let csv = history_to_csv(&result.history);
    std::fs::write(config.out_dir.join("history.csv"), csv)?;
    let ck = Checkpoint::from_model(&result.best, &config.raw_text, None);
    checkpoint::save(&ck, &config.out_dir.join("model.ckpt"))?;
    println!(
        "trained {} epochs; best epoch {} (val total {}); wrote {}",
        config.epochs,
        result.best_epoch,
        result
            .history
            .iter()
            .find(|r| r.epoch == result.best_epoch)
            .map(|r| r.val_total)
            .unwrap_or(f64::NAN),
        config.out_dir.join("model.ckpt").display()
    );
    Ok(())
}

fn parse_float_list(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid number '{p}' in list")))
        })
        .collect()
}

fn load_images_for_edit(
    path: &Path,
    params: &ModelParams,
    count: usize,
) -> Result<Vec<Vec<f64>>, Error> {
    let bytes = std::fs::read(path)?;
    let (n, rows, cols, pixels) = mddae_core::data::decode_idx_images(&bytes)?;
    let d = &params.dims;
    if d.channels != 1 || rows != d.height || cols != d.width {
        return Err(Error::Config(format!(
            "images are {rows}x{cols} but the checkpoint expects {}x{}",
            d.height, d.width
        )));
    }
    let take = count.min(n);
    Ok((0..take)
        .map(|i| {
            pixels[i * rows * cols..(i + 1) * rows * cols]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect()
        })
        .collect())
}

enum EditPlan {
    Swap { target: usize },
    Set { target: usize, intensity: f64 },
    Sweep { target: usize, intensities: Vec<f64> },
}

fn cmd_edit(args: &EditArgs) -> Result<(), Error> {
    let ck = checkpoint::load(&args.checkpoint)?;
    let params = ck.to_model()?;
    let request = match args.mode.as_deref() {
        None => None,
        Some("class-swap") => {
            let target = args
                .target
                .ok_or_else(|| Error::Config("--mode class-swap requires --target".to_string()))?;
            if params.mode != Mode::Class {
                return Err(Error::Config(
                    "class-swap edits require a class-mode checkpoint".to_string(),
                ));
            }
            Some(EditPlan::Swap { target })
        }
        Some("attribute-set") => {
            let target = args.target.ok_or_else(|| {
                Error::Config("--mode attribute-set requires --target".to_string())
            })?;
            if params.mode != Mode::Attribute {
                return Err(Error::Config(
                    "attribute-set edits require an attribute-mode checkpoint".to_string(),
                ));
            }
            match (&args.sweep, args.intensity) {
                (Some(sweep), _) => Some(EditPlan::Sweep {
                    target,
                    intensities: parse_float_list(sweep)?,
                }),
                (None, Some(intensity)) => Some(EditPlan::Set { target, intensity }),
                (None, None) => {
                    return Err(Error::Config(
                        "--mode attribute-set requires --intensity or --sweep".to_string(),
                    ))
                }
            }
        }
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown edit mode '{other}' (expected class-swap or attribute-set)"
            )))
        }
    };

    let images = load_images_for_edit(&args.images, &params, args.count)?;
    if images.is_empty() {
        return Err(Error::Contract("no input images to edit".to_string()));
    }
    std::fs::create_dir_all(&args.out)?;
    let d = params.dims;

    // One row per input: original, reconstruction, then the edit variants.
    let mut rows: Vec<Vec<Vec<f64>>> = Vec::new();
    for (i, x) in images.iter().enumerate() {
        let mut row = vec![x.clone(), reconstruct(&params, x)?];
        match &request {
            None => {}
            Some(EditPlan::Swap { target }) => {
                row.push(edit_image(
                    &params,
                    x,
                    &EditRequest::ClassSwap { target: *target },
                )?);
            }
            Some(EditPlan::Set { target, intensity }) => {
                row.push(edit_image(
                    &params,
                    x,
                    &EditRequest::AttributeSet {
                        target: *target,
                        intensity: *intensity,
                    },
                )?);
            }
            Some(EditPlan::Sweep { target, intensities }) => {
                row.extend(intensity_sweep(&params, x, *target, intensities)?);
            }
        }
        for (j, img) in row.iter().enumerate() {
            let tag = match j {
                0 => "original".to_string(),
                1 => "reconstruction".to_string(),
                j => format!("edit{}", j - 1),
            };
            grids::write_png(
                &args.out.join(format!("input{i:03}_{tag}.png")),
                img,
                d.channels,
                d.height,
                d.width,
                params.value_range,
            )?;
        }
        rows.push(row);
    }
    grids::write_grid_png(
        &args.out.join("grid.png"),
        &rows,
        d.channels,
        d.height,
        d.width,
        params.value_range,
    )?;
    println!(
        "wrote {} rows x {} columns to {}",
        rows.len(),
        rows[0].len(),
        args.out.join("grid.png").display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let ck = checkpoint::load(&args.checkpoint)?;
    let params = ck.to_model()?;
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            if ck.config_echo.trim().is_empty() {
                return Err(Error::Config(
                    "checkpoint has no embedded config; pass --config".to_string(),
                ));
            }
            RunConfig::parse(&ck.config_echo)?
        }
    };
    config.apply_env_seed()?;
    let (train_set, _val, test_set) = split_dataset(&config)?;
    if !args.quality && args.protocol.is_none() {
        return Err(Error::Config(
            "nothing to do: pass --quality and/or --protocol attribute=NAME".to_string(),
        ));
    }
    std::fs::create_dir_all(&args.out)?;
    let (channels, height, width) = test_set.image_dims();

    if args.quality {
        let mut records = Vec::with_capacity(test_set.len());
        let mut csv = String::from("image_id,rmse,psnr,ssim\n");
        for i in 0..test_set.len() {
            let x = test_set.image(i);
            let x_hat = reconstruct(&params, x)?;
            // Metrics are defined on [0, 1] data with peak 1.
            let (x01, x_hat01) = match params.value_range {
                mddae_core::nets::ValueRange::Unit => (x.to_vec(), x_hat),
                mddae_core::nets::ValueRange::Symmetric => (
                    x.iter().map(|v| (v + 1.0) / 2.0).collect(),
                    x_hat.iter().map(|v| (v + 1.0) / 2.0).collect(),
                ),
            };
            let q = image_quality(&x01, &x_hat01, channels, height, width, 1.0)?;
            csv.push_str(&format!("{i},{},{},{}\n", q.rmse, q.psnr, q.ssim));
            records.push(q);
        }
        let report = quality_report(records)?;
        csv.push_str(&format!(
            "mean,{},{},{}\n",
            report.mean.rmse, report.mean.psnr, report.mean.ssim
        ));
        csv.push_str(&format!(
            "std,{},{},{}\n",
            report.std.rmse, report.std.psnr, report.std.ssim
        ));
        std::fs::write(args.out.join("quality.csv"), csv)?;
        println!(
            "quality over {} images: rmse {:.4} (+/-{:.4}), psnr {:.2} dB, ssim {:.4}",
            test_set.len(),
            report.mean.rmse,
            report.std.rmse,
            report.mean.psnr,
            report.mean.ssim
        );
    }

    if let Some(spec) = &args.protocol {
        let name = spec
            .strip_prefix("attribute=")
            .ok_or_else(|| Error::Config(format!("--protocol expects attribute=NAME, got '{spec}'")))?
            .trim();
        let names = train_set.attr_names.clone().ok_or_else(|| {
            Error::Config("dataset has no named attributes for the protocol".to_string())
        })?;
        let attribute = names.iter().position(|n| n == name).ok_or_else(|| {
            Error::Config(format!(
                "unknown attribute '{name}' (available: {})",
                names.join(", ")
            ))
        })?;
        let intensities = parse_float_list(&args.intensities)?;
        let report = disentanglement_protocol(
            &params,
            &train_set,
            &test_set,
            attribute,
            &intensities,
            &SvmConfig {
                runs: args.runs,
                seed: config.seed,
                ..SvmConfig::default()
            },
        )?;
        let mut csv = String::from("attribute,intensity,run,error_rate\n");
        for (ii, &intensity) in report.intensities.iter().enumerate() {
            for (run, &rate) in report.error_rates[ii].iter().enumerate() {
                csv.push_str(&format!("{name},{intensity},{run},{rate}\n"));
            }
        }
        for (ii, &intensity) in report.intensities.iter().enumerate() {
            csv.push_str(&format!("{name},{intensity},mean,{}\n", report.means[ii]));
        }
        std::fs::write(args.out.join("protocol.csv"), csv)?;
        println!("protocol for '{name}': mean error rates {:?}", report.means);
    }
    Ok(())
}
