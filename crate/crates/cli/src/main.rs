use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rethined::bench::{bench, DEFAULT_RUNS, DEFAULT_WARMUP};
use rethined::masks::{coverage, generate_mask, MaskSpec};
use rethined::metrics::{l1, psnr, ssim};
use rethined::pipeline::{run_pipeline, InpaintModel, PipelineConfig};
use rethined::pnm::{read_image, write_image};
use rethined::spectral::{center_pad_pow2, focal_frequency_loss};
use rethined::weights::{load_weights, save_weights};
use serde_json::json;

#[derive(Parser)]
#[command(name = "rethined", version, about = "High-resolution image inpainting")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Working (low-resolution) height.
    #[arg(long, default_value_t = 256)]
    lr: usize,
    #[arg(long, default_value_t = 8)]
    patch: usize,
    #[arg(long, default_value_t = 64)]
    dk: usize,
    /// RTHD weights; a seeded random model is used when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl ModelArgs {
    fn config(&self, composite: bool) -> PipelineConfig {
        PipelineConfig {
            lr_size: self.lr,
            patch_size: self.patch,
            d_k: self.dk,
            composite,
            seed: self.seed,
        }
    }

    fn model(&self, config: &PipelineConfig) -> Result<InpaintModel> {
        let model = match &self.weights {
            Some(p) => load_weights(p).with_context(|| format!("loading {}", p.display()))?,
            None => InpaintModel::random(config),
        };
        Ok(if model.coarse.blocks.iter().any(|b| !b.is_fused()) {
            model.fused()?
        } else {
            model
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fill the masked region of an image.
    Inpaint {
        #[arg(long)]
        image: PathBuf,
        /// PGM mask, 255 = corrupted.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Keep the network output on known pixels too.
        #[arg(long)]
        no_composite: bool,
    },
    /// Fold batchnorm and skip branches into plain convolutions.
    Fuse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded free-form mask as PGM.
    Genmask {
        #[arg(long)]
        h: usize,
        #[arg(long)]
        w: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two images; prints JSON.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Latency per stage over square resolutions.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "512,1024,2048")]
        res: Vec<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: usize,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        #[command(flatten)]
        model: ModelArgs,
    },
}

fn read_mask(path: &Path) -> Result<rethined::Tensor> {
    let m = read_image(path).with_context(|| format!("reading {}", path.display()))?;
    if m.shape()[0] != 1 {
        bail!("{} is not a single-channel PGM", path.display());
    }
    Ok(m.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
}

fn ffl_padded(a: &rethined::Tensor, b: &rethined::Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        bail!("images differ in shape: {:?} vs {:?}", a.shape(), b.shape());
    }
    let (pa, pad) = center_pad_pow2(a)?;
    let (pb, _) = center_pad_pow2(b)?;
    if pa.shape() != a.shape() {
        eprintln!(
            "note: zero-padded {:?} to {}x{} (offset {},{}) for the frequency loss",
            a.shape(),
            pad.height,
            pad.width,
            pad.top,
            pad.left
        );
    }
    Ok(focal_frequency_loss(&pa, &pb, 1.0)?)
}

fn json_number(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Inpaint {
            image,
            mask,
            out,
            model,
            no_composite,
        } => {
            let x = read_image(&image).with_context(|| format!("reading {}", image.display()))?;
            if x.shape()[0] != 3 {
                bail!("{} is not an RGB PPM", image.display());
            }
            let m = read_mask(&mask)?;
            let config = model.config(!no_composite);
            let weights = model.model(&config)?;
            let xm = rethined::pipeline::apply_mask(&x, &m)?;
            let y = run_pipeline(&config, &weights, &xm, &m)?;
            write_image(&y, &out)?;
        }
        Command::Fuse { input, out } => {
            let model = load_weights(&input).with_context(|| format!("loading {}", input.display()))?;
            save_weights(&model.fused()?, &out)?;
        }
        Command::Genmask { h, w, seed, out } => {
            let m = generate_mask(&MaskSpec::with_seed(seed), h, w)?;
            write_image(&m, &out)?;
            eprintln!("coverage {:.4}", coverage(&m));
        }
        Command::Metrics { a, b } => {
            let a = read_image(&a).with_context(|| format!("reading {}", a.display()))?;
            let b = read_image(&b).with_context(|| format!("reading {}", b.display()))?;
            let v = json!({
                "l1": l1(&a, &b)?,
                "ssim": ssim(&a, &b)?,
                "psnr": json_number(psnr(&a, &b)?),
                "ffl": ffl_padded(&a, &b)?,
            });
            println!("{v}");
        }
        Command::Bench {
            res,
            report,
            warmup,
            runs,
            model,
        } => {
            let config = model.config(true);
            let weights = model.model(&config)?;
            let r = bench(&config, &weights, &res, warmup, runs)?;
            print!("{}", r.to_markdown());
            if let Some(path) = report {
                std::fs::write(&path, r.to_csv())?;
                std::fs::write(path.with_extension("md"), r.to_markdown())?;
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
