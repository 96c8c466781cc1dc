//! Warmup-then-measure latency harness over a set of output resolutions.

use std::fmt::Write as _;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::masks::{generate_mask, MaskSpec};
use crate::pipeline::{
    apply_mask, run_pipeline_traced, FlopEstimate, InpaintModel, PipelineConfig, StageTimings,
};
use crate::tensor::{upsample_nearest, Tensor};

pub const DEFAULT_WARMUP: usize = 5;
pub const DEFAULT_RUNS: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub resolution: usize,
    pub stage: &'static str,
    pub median_ms: f64,
    pub p90_ms: f64,
    pub flops: u64,
    pub n_patches: usize,
    pub d_k: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, resolution: usize, stage: &str) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.resolution == resolution && r.stage == stage)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("resolution,stage,median_ms,p90_ms,flops\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.4},{}",
                r.resolution, r.stage, r.median_ms, r.p90_ms, r.flops
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from(
            "| resolution | stage | median (ms) | p90 (ms) | FLOPs | N | d_k |\n|---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} | {:.3} | {} | {} | {} |",
                r.resolution, r.stage, r.median_ms, r.p90_ms, r.flops, r.n_patches, r.d_k
            );
        }
        s
    }
}

/// Nearest-rank percentile of an ascending slice, `q` in `(0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// A smooth deterministic test image with some texture.
pub fn synthetic_image(h: usize, w: usize, seed: u64) -> Tensor {
    let phase = (seed % 1000) as f32 * 0.001;
    Tensor::from_fn(&[3, h, w], |i| {
        let c = (i / (h * w)) as f32;
        let y = ((i / w) % h) as f32 / h as f32;
        let x = (i % w) as f32 / w as f32;
        let v = 0.5
            + 0.25 * (6.0 * x + 2.0 * c + phase).sin() * (5.0 * y - c).cos()
            + 0.15 * (40.0 * (x + y) + c).sin();
        v.clamp(0.0, 1.0)
    })
}

/// Seeded HR mask drawn at the working resolution and upsampled, so the LR
/// mask seen by the network is exactly the drawn one.
pub fn synthetic_mask(config: &PipelineConfig, h: usize, w: usize, seed: u64) -> Result<Tensor> {
    let geo = config.geometry(h, w)?;
    let m = generate_mask(&MaskSpec::with_seed(seed), geo.lr_h.max(64), geo.lr_w.max(64))?;
    let m = if (geo.lr_h, geo.lr_w) == (m.shape()[1], m.shape()[2]) {
        m
    } else {
        crate::tensor::max_pool(&m, m.shape()[1] / geo.lr_h)?
    };
    upsample_nearest(&m, geo.ratio)
}

/// Per-run timings for `runs` timed runs after `warmup` discarded ones.
pub fn time_runs(
    config: &PipelineConfig,
    model: &InpaintModel,
    x: &Tensor,
    m: &Tensor,
    warmup: usize,
    runs: usize,
) -> Result<Vec<StageTimings>> {
    for _ in 0..warmup {
        run_pipeline_traced(config, model, x, m)?;
    }
    (0..runs)
        .map(|_| run_pipeline_traced(config, model, x, m).map(|(_, t)| t.timings))
        .collect()
}

fn summarize(
    report: &mut BenchReport,
    resolution: usize,
    samples: &[StageTimings],
    flops: &FlopEstimate,
    d_k: usize,
) {
    for stage in StageTimings::STAGES {
        let mut ms: Vec<f64> = samples
            .iter()
            .map(|t| t.get(stage).unwrap_or(Duration::ZERO).as_secs_f64() * 1e3)
            .collect();
        ms.sort_by(f64::total_cmp);
        report.rows.push(BenchRow {
            resolution,
            stage,
            median_ms: median(&ms),
            p90_ms: percentile(&ms, 0.9),
            flops: flops.get(stage),
            n_patches: flops.n_patches as usize,
            d_k,
        });
    }
}

/// Benchmarks square `res x res` inputs for each resolution.
pub fn bench(
    config: &PipelineConfig,
    model: &InpaintModel,
    resolutions: &[usize],
    warmup: usize,
    runs: usize,
) -> Result<BenchReport> {
    if runs == 0 {
        return Err(Error::InvalidArgument("at least one timed run is needed".into()));
    }
    let mut report = BenchReport::default();
    for &res in resolutions {
        let geo = config.geometry(res, res)?;
        let m = synthetic_mask(config, res, res, config.seed)?;
        let x = apply_mask(&synthetic_image(res, res, config.seed), &m)?;
        let samples = time_runs(config, model, &x, &m, warmup, runs)?;
        summarize(
            &mut report,
            res,
            &samples,
            &FlopEstimate::new(config, model, &geo),
            config.d_k,
        );
    }
    Ok(report)
}
