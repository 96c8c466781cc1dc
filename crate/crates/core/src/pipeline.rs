//! End-to-end inpainting: low-pass and downsample, coarse completion, masked
//! patch attention at low resolution, attention upscaling to full size.

use std::time::{Duration, Instant};

use crate::attention::{
    attention_scores, coherence, mask_attention, token_mix, value_patches, AttentionMap,
    NpmWeights,
};
use crate::coarse::{coarse_forward, check_binary, fuse_model, CoarseModel, ENCODER_STRIDE};
use crate::error::{Error, Result};
use crate::patch::{embed_and_condition, img2col, pixel_shuffle, tokenize_mask};
use crate::tensor::{bilinear_resize, max_pool, Tensor};
use crate::upscale::{compose_from_split, frequency_split};

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Height of the working resolution.
    pub lr_size: usize,
    pub patch_size: usize,
    pub d_k: usize,
    pub composite: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lr_size: 256,
            patch_size: 8,
            d_k: 64,
            composite: true,
            seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_k == 0 {
            return Err(Error::InvalidArgument("d_k must be at least 1".into()));
        }
        if self.patch_size == 0 || self.patch_size % ENCODER_STRIDE != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch size {} must be a positive multiple of {ENCODER_STRIDE}",
                self.patch_size
            )));
        }
        if self.lr_size == 0 || self.lr_size % self.patch_size != 0 {
            return Err(Error::InvalidArgument(format!(
                "lr_size {} must be a positive multiple of the patch size {}",
                self.lr_size, self.patch_size
            )));
        }
        Ok(())
    }

    /// LR extents and the integer ratio for an `h x w` input.
    pub fn geometry(&self, h: usize, w: usize) -> Result<LrGeometry> {
        self.validate()?;
        if h < self.lr_size || h % self.lr_size != 0 {
            return Err(Error::Shape(format!(
                "height {h} is not a multiple of lr_size {}",
                self.lr_size
            )));
        }
        let ratio = h / self.lr_size;
        if w % ratio != 0 || (w / ratio) % self.patch_size != 0 {
            return Err(Error::Shape(format!(
                "width {w} does not reduce by {ratio} to a multiple of the patch size {}",
                self.patch_size
            )));
        }
        let (lr_h, lr_w) = (self.lr_size, w / ratio);
        Ok(LrGeometry {
            lr_h,
            lr_w,
            ratio,
            rows: lr_h / self.patch_size,
            cols: lr_w / self.patch_size,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LrGeometry {
    pub lr_h: usize,
    pub lr_w: usize,
    pub ratio: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LrGeometry {
    pub fn n_patches(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InpaintModel {
    pub coarse: CoarseModel,
    pub npm: NpmWeights,
}

impl InpaintModel {
    /// Seeded untrained model matching `config`, in training (unfused) form.
    pub fn random(config: &PipelineConfig) -> Self {
        let coarse = CoarseModel::random(config.seed);
        let npm = NpmWeights::random(
            config.patch_size,
            config.d_k,
            coarse.feature_channels(),
            config.seed.wrapping_add(1),
        );
        Self { coarse, npm }
    }

    pub fn fused(&self) -> Result<Self> {
        Ok(Self {
            coarse: fuse_model(&self.coarse)?,
            npm: self.npm.clone(),
        })
    }

    pub fn check(&self, config: &PipelineConfig) -> Result<()> {
        self.coarse.validate()?;
        self.npm.validate()?;
        if self.npm.d_k() != config.d_k || self.npm.patch_size() != Some(config.patch_size) {
            return Err(Error::Shape(format!(
                "weights are for d_k {} and patch {:?}, config asks for {} and {}",
                self.npm.d_k(),
                self.npm.patch_size(),
                config.d_k,
                config.patch_size
            )));
        }
        if self.npm.feature_channels() != self.coarse.feature_channels() {
            return Err(Error::Shape("attention and network feature widths differ".into()));
        }
        Ok(())
    }
}

/// Wall time of each stage of one run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub downsample: Duration,
    pub coarse: Duration,
    pub embed: Duration,
    pub attention: Duration,
    pub masking: Duration,
    pub mixing: Duration,
    pub upscale: Duration,
    pub total: Duration,
}

impl StageTimings {
    pub const STAGES: [&'static str; 8] = [
        "downsample",
        "coarse",
        "embed",
        "attention",
        "masking",
        "mixing",
        "upscale",
        "total",
    ];

    pub fn get(&self, stage: &str) -> Option<Duration> {
        Some(match stage {
            "downsample" => self.downsample,
            "coarse" => self.coarse,
            "embed" => self.embed,
            "attention" => self.attention,
            "masking" => self.masking,
            "mixing" => self.mixing,
            "upscale" => self.upscale,
            "total" => self.total,
            _ => return None,
        })
    }
}

/// Closed-form operation counts (one multiply-add = 2 FLOPs).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopEstimate {
    pub n_patches: u64,
    pub coarse: u64,
    pub embed: u64,
    /// `2 N² d_k`, the `Q Kᵀ` product.
    pub attention_scores: u64,
    /// Projections plus scores: `4 N (d_k + C) d_k + 2 N² d_k`.
    pub attention: u64,
    /// Dense LR mixing, `2 N² · 3P²`.
    pub mixing: u64,
    /// Dense HR mixing, `2 N² · 3(rP)²`.
    pub upscale: u64,
}

impl FlopEstimate {
    pub fn new(config: &PipelineConfig, model: &InpaintModel, geo: &LrGeometry) -> Self {
        let n = geo.n_patches() as u64;
        let dk = config.d_k as u64;
        let c = model.npm.feature_channels() as u64;
        let p2 = (config.patch_size * config.patch_size) as u64;
        let r2 = (geo.ratio * geo.ratio) as u64;
        let attention_scores = 2 * n * n * dk;
        Self {
            n_patches: n,
            coarse: 2 * model.coarse.macs(geo.lr_h, geo.lr_w),
            embed: 2 * n * 3 * p2 * dk,
            attention_scores,
            attention: 4 * n * (dk + c) * dk + attention_scores,
            mixing: 2 * n * n * 3 * p2,
            upscale: 2 * n * n * 3 * p2 * r2,
        }
    }

    pub fn get(&self, stage: &str) -> u64 {
        match stage {
            "coarse" => self.coarse,
            "embed" => self.embed,
            "attention" => self.attention,
            "mixing" => self.mixing,
            "upscale" => self.upscale,
            "total" => self.coarse + self.embed + self.attention + self.mixing + self.upscale,
            _ => 0,
        }
    }
}

/// Everything a run produces besides the output image.
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub geometry: LrGeometry,
    pub timings: StageTimings,
    pub x_lr_hat: Tensor,
    pub attention: AttentionMap,
}

fn lap(t: &mut Instant) -> Duration {
    let now = Instant::now();
    let d = now - *t;
    *t = now;
    d
}

/// [`run_pipeline`] with per-stage timings and intermediate results.
pub fn run_pipeline_traced(
    config: &PipelineConfig,
    model: &InpaintModel,
    x_hr_masked: &Tensor,
    m_hr: &Tensor,
) -> Result<(Tensor, RunTrace)> {
    model.check(config)?;
    let (c, h, w) = x_hr_masked.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected RGB input, got {c} channels")));
    }
    if m_hr.shape() != [1, h, w] {
        return Err(Error::Shape(format!(
            "mask {:?} does not match image {h}x{w}",
            m_hr.shape()
        )));
    }
    check_binary(m_hr)?;
    let geo = config.geometry(h, w)?;
    let p = config.patch_size;
    let mut timings = StageTimings::default();
    let start = Instant::now();
    let mut t = start;

    let split = frequency_split(x_hr_masked, geo.ratio as f64)?;
    let x_lr = bilinear_resize(&split.low, geo.lr_h, geo.lr_w)?;
    let m_lr = max_pool(m_hr, geo.ratio)?;
    timings.downsample = lap(&mut t);

    let (coarse, features) = coarse_forward(&model.coarse, &x_lr, &m_lr, p)?;
    timings.coarse = lap(&mut t);

    let coarse_seq = img2col(&coarse, p)?;
    let tokens = embed_and_condition(&coarse_seq, Some(&features), &model.npm.embed)?;
    timings.embed = lap(&mut t);

    let a = attention_scores(&tokens, &model.npm.projection)?;
    timings.attention = lap(&mut t);

    let m = tokenize_mask(&m_lr, p)?;
    let mt = mask_attention(&a, &m)?;
    drop(a);
    timings.masking = lap(&mut t);

    let values = value_patches(&img2col(&x_lr, p)?, &coarse_seq, &m)?;
    let x_lr_hat = coherence(&pixel_shuffle(&token_mix(&mt, &values)?)?, &m, p)?;
    timings.mixing = lap(&mut t);

    let out = compose_from_split(
        &split,
        x_hr_masked,
        &x_lr_hat,
        &mt,
        m_hr,
        p,
        config.composite,
    )?;
    timings.upscale = lap(&mut t);
    timings.total = start.elapsed();

    Ok((
        out,
        RunTrace {
            geometry: geo,
            timings,
            x_lr_hat,
            attention: mt,
        },
    ))
}

/// Inpaints `x_hr_masked` where `m_hr` is 1. Deterministic for fixed inputs.
pub fn run_pipeline(
    config: &PipelineConfig,
    model: &InpaintModel,
    x_hr_masked: &Tensor,
    m_hr: &Tensor,
) -> Result<Tensor> {
    run_pipeline_traced(config, model, x_hr_masked, m_hr).map(|(out, _)| out)
}

/// `x ⊙ (1 - m)` broadcast over channels.
pub fn apply_mask(x: &Tensor, m: &Tensor) -> Result<Tensor> {
    let (_, h, w) = x.dims3()?;
    if m.shape() != [1, h, w] {
        return Err(Error::Shape("mask does not match image".into()));
    }
    let mut out = x.clone();
    for plane in out.data_mut().chunks_exact_mut(h * w) {
        for (v, &mv) in plane.iter_mut().zip(m.data()) {
            *v *= 1.0 - mv;
        }
    }
    Ok(out)
}
