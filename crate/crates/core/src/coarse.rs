//! The coarse inpainting network: five reparametrizable depthwise/pointwise
//! blocks arranged as a small encoder-decoder, plus inference-time fusion of
//! convolution, batch normalization and identity skip branches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    avg_pool, batchnorm, bilinear_resize, conv2d, relu_inplace, upsample_nearest,
    BatchNormParams, ConvSpec, Tensor,
};

/// Input channels: masked RGB plus the binary mask.
pub const INPUT_CHANNELS: usize = 4;
/// Spatial stride of the feature tap relative to the LR input.
pub const TAP_STRIDE: usize = 8;
/// Spatial stride of the head output before the final bilinear upsample.
pub const HEAD_STRIDE: usize = 4;
/// Total downsampling of the encoder.
pub const ENCODER_STRIDE: usize = 8;

/// `(in, out, stride, upsample_before)` for each of the five blocks.
pub const STAGE_PLAN: [(usize, usize, usize, bool); 5] = [
    (4, 16, 2, false),
    (16, 32, 2, false),
    (32, 64, 2, false),
    (64, 32, 1, false),
    (32, 16, 1, true),
];
/// Index of the block whose output conditions the attention.
pub const DEFAULT_FEATURE_TAP: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub conv: ConvSpec,
    pub bn: BatchNormParams,
}

/// One stage of a block: either the training-time branches or their fused
/// single convolution.
#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    Branched {
        main: ConvBn,
        skip: Option<BatchNormParams>,
    },
    Fused(ConvSpec),
}

impl Stage {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = match self {
            Stage::Fused(conv) => conv2d(x, conv)?,
            Stage::Branched { main, skip } => {
                let mut y = batchnorm(&conv2d(x, &main.conv)?, &main.bn)?;
                if let Some(skip) = skip {
                    let s = batchnorm(x, skip)?;
                    for (a, b) in y.data_mut().iter_mut().zip(s.data()) {
                        *a += b;
                    }
                }
                y
            }
        };
        relu_inplace(&mut y);
        Ok(y)
    }

    pub fn conv(&self) -> &ConvSpec {
        match self {
            Stage::Fused(c) => c,
            Stage::Branched { main, .. } => &main.conv,
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Stage::Fused(c) => c.param_count(),
            Stage::Branched { main, skip } => {
                main.conv.param_count()
                    + main.bn.param_count()
                    + skip.as_ref().map_or(0, BatchNormParams::param_count)
            }
        }
    }

    fn batchnorm_param_count(&self) -> usize {
        match self {
            Stage::Fused(_) => 0,
            Stage::Branched { main, skip } => {
                main.bn.param_count() + skip.as_ref().map_or(0, BatchNormParams::param_count)
            }
        }
    }
}

/// Depthwise `S x S` conv + BN (with an optional BN identity skip), ReLU,
/// then pointwise 1x1 conv + BN, ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct RepBlock {
    pub upsample: bool,
    pub main: Stage,
    pub point: Stage,
}

impl RepBlock {
    pub fn new(
        upsample: bool,
        main: ConvBn,
        point: ConvBn,
        skip: Option<BatchNormParams>,
    ) -> Result<Self> {
        let block = Self {
            upsample,
            main: Stage::Branched { main, skip },
            point: Stage::Branched {
                main: point,
                skip: None,
            },
        };
        block.validate()?;
        Ok(block)
    }

    pub fn in_channels(&self) -> usize {
        self.main.conv().in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.point.conv().out_channels()
    }

    pub fn stride(&self) -> usize {
        self.main.conv().stride
    }

    pub fn is_fused(&self) -> bool {
        matches!(self.main, Stage::Fused(_))
    }

    pub fn validate(&self) -> Result<()> {
        let main = self.main.conv();
        let point = self.point.conv();
        main.validate()?;
        point.validate()?;
        let c = main.in_channels();
        if main.groups != c || main.out_channels() != c {
            return Err(Error::Shape("main stage must be a depthwise convolution".into()));
        }
        let s = main.kernel_size();
        if s % 2 == 0 || main.padding != s / 2 {
            return Err(Error::Shape(format!(
                "depthwise kernel {s} needs odd size and padding {}",
                s / 2
            )));
        }
        if point.kernel_size() != 1 || point.stride != 1 || point.groups != 1 {
            return Err(Error::Shape("point stage must be a 1x1 dense convolution".into()));
        }
        if point.in_channels() != c {
            return Err(Error::Shape(format!(
                "point stage expects {} channels, main stage yields {c}",
                point.in_channels()
            )));
        }
        for stage in [&self.main, &self.point] {
            if let Stage::Branched { main, skip } = stage {
                if main.bn.channels() != main.conv.out_channels() {
                    return Err(Error::Shape("batchnorm width differs from conv output".into()));
                }
                if let Some(skip) = skip {
                    if main.conv.stride != 1 || skip.channels() != main.conv.in_channels() {
                        return Err(Error::Shape(
                            "identity skip needs stride 1 and matching channels".into(),
                        ));
                    }
                }
            }
        }
        if self.is_fused() != matches!(self.point, Stage::Fused(_)) {
            return Err(Error::InvalidArgument("block stages disagree on fusion state".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let up;
        let x = if self.upsample {
            up = upsample_nearest(x, 2)?;
            &up
        } else {
            x
        };
        let y = self.main.forward(x)?;
        self.point.forward(&y)
    }

    pub fn param_count(&self) -> usize {
        self.main.param_count() + self.point.param_count()
    }

    pub fn batchnorm_param_count(&self) -> usize {
        self.main.batchnorm_param_count() + self.point.batchnorm_param_count()
    }
}

/// Folds `bn(conv(x))` into one convolution:
/// `W' = W γ/σ`, `b' = β - γμ/σ + (γ/σ) b`.
fn fold_batchnorm(conv: &ConvSpec, bn: &BatchNormParams) -> Result<(Vec<f64>, Vec<f64>)> {
    bn.validate()?;
    let c_out = conv.out_channels();
    if bn.channels() != c_out {
        return Err(Error::Shape("batchnorm width differs from conv output".into()));
    }
    let per_out = conv.weights.numel() / c_out;
    let mut weights = Vec::with_capacity(conv.weights.numel());
    let mut bias = Vec::with_capacity(c_out);
    for oc in 0..c_out {
        let gamma = bn.gamma.data()[oc] as f64;
        let sigma = bn.sigma.data()[oc] as f64;
        let mu = bn.mu.data()[oc] as f64;
        let beta = bn.beta.data()[oc] as f64;
        let t = gamma / sigma;
        weights.extend(
            conv.weights.data()[oc * per_out..(oc + 1) * per_out]
                .iter()
                .map(|&w| w as f64 * t),
        );
        let b = conv.bias.as_ref().map_or(0.0, |b| b.data()[oc] as f64);
        bias.push(beta - gamma * mu / sigma + t * b);
    }
    Ok((weights, bias))
}

fn fuse_stage(stage: &Stage) -> Result<ConvSpec> {
    let Stage::Branched { main, skip } = stage else {
        return Err(Error::AlreadyFused);
    };
    let (mut weights, mut bias) = fold_batchnorm(&main.conv, &main.bn)?;
    if let Some(skip) = skip {
        // A BN-scaled 1x1 identity, zero-padded to S x S, lands on the kernel
        // centre of each depthwise filter.
        skip.validate()?;
        let s = main.conv.kernel_size();
        let cin_g = main.conv.weights.shape()[1];
        let center = (s / 2) * s + s / 2;
        for c in 0..main.conv.out_channels() {
            let gamma = skip.gamma.data()[c] as f64;
            let sigma = skip.sigma.data()[c] as f64;
            let ic = if cin_g == 1 { 0 } else { c };
            weights[(c * cin_g + ic) * s * s + center] += gamma / sigma;
            bias[c] += skip.beta.data()[c] as f64 - gamma * skip.mu.data()[c] as f64 / sigma;
        }
    }
    let shape = main.conv.weights.shape().to_vec();
    ConvSpec::new(
        Tensor::new(&shape, weights.into_iter().map(|w| w as f32).collect())?,
        Some(Tensor::new(
            &[bias.len()],
            bias.into_iter().map(|b| b as f32).collect(),
        )?),
        main.conv.stride,
        main.conv.padding,
        main.conv.groups,
    )
}

/// Returns the single-convolution-per-stage equivalent of `block`.
pub fn fuse_block(block: &RepBlock) -> Result<RepBlock> {
    if block.is_fused() {
        return Err(Error::AlreadyFused);
    }
    Ok(RepBlock {
        upsample: block.upsample,
        main: Stage::Fused(fuse_stage(&block.main)?),
        point: Stage::Fused(fuse_stage(&block.point)?),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoarseModel {
    pub blocks: Vec<RepBlock>,
    /// 1x1 convolution to RGB, applied at `HEAD_STRIDE`.
    pub head: ConvSpec,
    pub feature_tap: usize,
}

/// He-uniform weights, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
fn he_uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Plausible running statistics for an untrained network.
pub fn random_batchnorm(channels: usize, rng: &mut ChaCha8Rng) -> BatchNormParams {
    BatchNormParams {
        mu: Tensor::from_fn(&[channels], |_| rng.gen_range(-0.1..0.1)),
        sigma: Tensor::from_fn(&[channels], |_| rng.gen_range(0.5..1.5)),
        gamma: Tensor::from_fn(&[channels], |_| rng.gen_range(0.5..1.5)),
        beta: Tensor::from_fn(&[channels], |_| rng.gen_range(-0.1..0.1)),
    }
}

/// A random unfused block; the depthwise stage gets an identity skip when
/// `skip` is set (requires stride 1).
pub fn random_block(
    c_in: usize,
    c_out: usize,
    stride: usize,
    upsample: bool,
    skip: bool,
    rng: &mut ChaCha8Rng,
) -> Result<RepBlock> {
    let main = ConvBn {
        conv: ConvSpec::new(he_uniform(&[c_in, 1, 3, 3], rng), None, stride, 1, c_in)?,
        bn: random_batchnorm(c_in, rng),
    };
    let point = ConvBn {
        conv: ConvSpec::new(he_uniform(&[c_out, c_in, 1, 1], rng), None, 1, 0, 1)?,
        bn: random_batchnorm(c_out, rng),
    };
    let skip = skip.then(|| random_batchnorm(c_in, rng));
    RepBlock::new(upsample, main, point, skip)
}

impl CoarseModel {
    /// Deterministic seeded initialization of the default five-block plan.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = STAGE_PLAN
            .iter()
            .map(|&(ci, co, s, up)| random_block(ci, co, s, up, s == 1, &mut rng))
            .collect::<Result<Vec<_>>>()
            .expect("stage plan is valid");
        let c_last = STAGE_PLAN[STAGE_PLAN.len() - 1].1;
        let head = ConvSpec::new(
            he_uniform(&[3, c_last, 1, 1], &mut rng),
            Some(Tensor::from_fn(&[3], |_| rng.gen_range(-0.05..0.05))),
            1,
            0,
            1,
        )
        .expect("head is valid");
        Self {
            blocks,
            head,
            feature_tap: DEFAULT_FEATURE_TAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() != STAGE_PLAN.len() {
            return Err(Error::Shape(format!(
                "expected {} blocks, got {}",
                STAGE_PLAN.len(),
                self.blocks.len()
            )));
        }
        let mut c = INPUT_CHANNELS;
        for (i, (b, &(_, _, stride, up))) in self.blocks.iter().zip(&STAGE_PLAN).enumerate() {
            b.validate()?;
            if b.in_channels() != c {
                return Err(Error::Shape(format!(
                    "block {i} expects {} channels, receives {c}",
                    b.in_channels()
                )));
            }
            if b.stride() != stride || b.upsample != up {
                return Err(Error::Shape(format!("block {i} deviates from the stage plan")));
            }
            c = b.out_channels();
        }
        self.head.validate()?;
        if self.head.in_channels() != c || self.head.out_channels() != 3 {
            return Err(Error::Shape("head must map the last block to RGB".into()));
        }
        if self.head.kernel_size() != 1 || self.head.stride != 1 {
            return Err(Error::Shape("head must be a 1x1 convolution".into()));
        }
        if self.feature_tap >= self.blocks.len() {
            return Err(Error::Shape("feature tap out of range".into()));
        }
        Ok(())
    }

    pub fn is_fused(&self) -> bool {
        self.blocks.iter().all(RepBlock::is_fused)
    }

    pub fn feature_channels(&self) -> usize {
        self.blocks[self.feature_tap].out_channels()
    }

    /// Downsampling factor of the tapped feature map.
    pub fn tap_stride(&self) -> usize {
        self.stride_after(self.feature_tap)
    }

    fn stride_after(&self, block: usize) -> usize {
        let mut stride = 1;
        for b in &self.blocks[..=block] {
            if b.upsample {
                stride /= 2;
            }
            stride *= b.stride();
        }
        stride
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(RepBlock::param_count).sum::<usize>() + self.head.param_count()
    }

    pub fn batchnorm_param_count(&self) -> usize {
        self.blocks.iter().map(RepBlock::batchnorm_param_count).sum()
    }

    /// Multiply-accumulate count of one forward pass on an `h x w` input.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (mut h, mut w) = (h, w);
        let mut total = 0u64;
        let tap = |conv: &ConvSpec, h: usize, w: usize| -> u64 {
            let k = conv.kernel_size();
            (conv.out_channels() * conv.weights.shape()[1] * k * k * h * w) as u64
        };
        for b in &self.blocks {
            if b.upsample {
                h *= 2;
                w *= 2;
            }
            h /= b.stride();
            w /= b.stride();
            total += tap(b.main.conv(), h, w);
            total += tap(b.point.conv(), h, w);
        }
        total + tap(&self.head, h, w)
    }

    /// Raw network: `[4,H,W]` in, `(rgb residual [3,H,W], tap features)` out.
    pub fn forward_raw(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let (c, h, w) = input.dims3()?;
        if c != INPUT_CHANNELS {
            return Err(Error::Shape(format!(
                "network input needs {INPUT_CHANNELS} channels, got {c}"
            )));
        }
        if h % ENCODER_STRIDE != 0 || w % ENCODER_STRIDE != 0 {
            return Err(Error::Shape(format!(
                "LR extents {h}x{w} must be divisible by {ENCODER_STRIDE}"
            )));
        }
        let mut x = input.clone();
        let mut tap = None;
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x)?;
            if i == self.feature_tap {
                tap = Some(x.clone());
            }
        }
        let rgb = conv2d(&x, &self.head)?;
        let rgb = bilinear_resize(&rgb, h, w)?;
        Ok((rgb, tap.expect("tap index validated")))
    }
}

/// Returns a model with every block fused; the input is left untouched.
pub fn fuse_model(model: &CoarseModel) -> Result<CoarseModel> {
    if model.blocks.iter().any(RepBlock::is_fused) {
        return Err(Error::AlreadyFused);
    }
    Ok(CoarseModel {
        blocks: model
            .blocks
            .iter()
            .map(fuse_block)
            .collect::<Result<Vec<_>>>()?,
        head: model.head.clone(),
        feature_tap: model.feature_tap,
    })
}

pub(crate) fn check_binary(mask: &Tensor) -> Result<()> {
    match mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(&v) => Err(Error::NonBinaryMask(v)),
        None => Ok(()),
    }
}

/// Coarse completion of a low-resolution image.
///
/// `mask_lr` is 1 on corrupted pixels. The network sees the masked RGB image
/// concatenated with the mask; its output only replaces corrupted pixels.
/// Returns the coarse image and the tapped features pooled to the
/// `H/P x W/P` patch grid.
pub fn coarse_forward(
    model: &CoarseModel,
    x_lr: &Tensor,
    mask_lr: &Tensor,
    patch_size: usize,
) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = x_lr.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected RGB input, got {c} channels")));
    }
    if mask_lr.shape() != [1, h, w] {
        return Err(Error::Shape(format!(
            "mask {:?} does not match image {h}x{w}",
            mask_lr.shape()
        )));
    }
    check_binary(mask_lr)?;
    let tap_stride = model.tap_stride();
    if patch_size == 0 || patch_size % tap_stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch_size} must be a multiple of the feature stride {tap_stride}"
        )));
    }
    if h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::Shape(format!(
            "LR extents {h}x{w} must be divisible by the patch size {patch_size}"
        )));
    }

    let m = mask_lr.channel(0);
    let mut masked = x_lr.clone();
    for plane in masked.data_mut().chunks_exact_mut(h * w) {
        for (v, &mv) in plane.iter_mut().zip(m) {
            *v *= 1.0 - mv;
        }
    }
    let input = Tensor::concat_channels(&[&masked, mask_lr])?;
    let (residual, tap) = model.forward_raw(&input)?;

    let mut coarse = masked;
    for (plane, rplane) in coarse
        .data_mut()
        .chunks_exact_mut(h * w)
        .zip(residual.data().chunks_exact(h * w))
    {
        for ((v, &r), &mv) in plane.iter_mut().zip(rplane).zip(m) {
            if mv != 0.0 {
                *v += r;
            }
        }
    }
    let features = avg_pool(&tap, patch_size / tap_stride)?;
    Ok((coarse, features))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_input(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut r = rng(seed);
        Tensor::from_fn(&[c, h, w], |_| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_bn_fusion_keeps_weights() {
        let mut r = rng(1);
        let w_main = he_uniform(&[3, 1, 3, 3], &mut r);
        let b_main = Tensor::from_fn(&[3], |_| r.gen_range(-1.0..1.0));
        let w_point = he_uniform(&[5, 3, 1, 1], &mut r);
        let block = RepBlock::new(
            false,
            ConvBn {
                conv: ConvSpec::new(w_main.clone(), Some(b_main.clone()), 1, 1, 3).unwrap(),
                bn: BatchNormParams::identity(3),
            },
            ConvBn {
                conv: ConvSpec::new(w_point.clone(), None, 1, 0, 1).unwrap(),
                bn: BatchNormParams::identity(5),
            },
            None,
        )
        .unwrap();
        let fused = fuse_block(&block).unwrap();
        let Stage::Fused(main) = &fused.main else { panic!() };
        assert_eq!(main.weights, w_main);
        assert_eq!(main.bias.as_ref().unwrap(), &b_main);
        let Stage::Fused(point) = &fused.point else { panic!() };
        assert_eq!(point.weights, w_point);
        assert!(point.bias.as_ref().unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_conv_with_identity_skip_fuses_to_center_one() {
        let c = 4;
        let block = RepBlock::new(
            false,
            ConvBn {
                conv: ConvSpec::new(Tensor::zeros(&[c, 1, 3, 3]), None, 1, 1, c).unwrap(),
                bn: BatchNormParams::identity(c),
            },
            ConvBn {
                conv: ConvSpec::new(Tensor::zeros(&[c, c, 1, 1]), None, 1, 0, 1).unwrap(),
                bn: BatchNormParams::identity(c),
            },
            Some(BatchNormParams::identity(c)),
        )
        .unwrap();
        let fused = fuse_block(&block).unwrap();
        let Stage::Fused(main) = &fused.main else { panic!() };
        for ch in 0..c {
            let k = &main.weights.data()[ch * 9..(ch + 1) * 9];
            assert_eq!(k, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        }
        assert!(main.bias.as_ref().unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn random_block_fusion_is_forward_equivalent() {
        let mut r = rng(2);
        for (ci, co, s, up, skip) in [(4, 6, 1, false, true), (3, 3, 2, false, false), (5, 2, 1, true, true)] {
            let block = random_block(ci, co, s, up, skip, &mut r).unwrap();
            let fused = fuse_block(&block).unwrap();
            for seed in 0..3 {
                let x = random_input(ci, 12, 10, seed);
                let a = block.forward(&x).unwrap();
                let b = fused.forward(&x).unwrap();
                assert!(a.max_abs_diff(&b) < 1e-5);
            }
        }
    }

    #[test]
    fn fusing_twice_is_rejected() {
        let model = CoarseModel::random(3);
        let fused = fuse_model(&model).unwrap();
        assert!(matches!(fuse_model(&fused), Err(Error::AlreadyFused)));
        assert!(matches!(fuse_block(&fused.blocks[0]), Err(Error::AlreadyFused)));
        assert!(fused.param_count() < model.param_count());
        assert_eq!(fused.batchnorm_param_count(), 0);
        assert!(model.batchnorm_param_count() > 0);
    }

    #[test]
    fn skip_requires_stride_one() {
        let mut r = rng(4);
        assert!(random_block(4, 4, 2, false, true, &mut r).is_err());
    }

    #[test]
    fn fusion_rejects_nonpositive_sigma() {
        let mut r = rng(5);
        let mut block = random_block(3, 3, 1, false, true, &mut r).unwrap();
        if let Stage::Branched { main, .. } = &mut block.main {
            main.bn.sigma.data_mut()[0] = -1.0;
        }
        assert!(matches!(fuse_block(&block), Err(Error::NonPositiveSigma { .. })));
    }

    #[test]
    fn forward_shapes() {
        let model = CoarseModel::random(6);
        model.validate().unwrap();
        assert_eq!(model.tap_stride(), 8);
        assert_eq!(model.feature_channels(), 32);
        let x = random_input(3, 64, 64, 1);
        let m = Tensor::zeros(&[1, 64, 64]);
        let (coarse, feats) = coarse_forward(&model, &x, &m, 8).unwrap();
        assert_eq!(coarse.shape(), &[3, 64, 64]);
        assert_eq!(feats.shape(), &[32, 8, 8]);
        let (_, feats16) = coarse_forward(&model, &x, &m, 16).unwrap();
        assert_eq!(feats16.shape(), &[32, 4, 4]);
    }

    #[test]
    fn zero_head_yields_bias_inside_holes() {
        let mut model = CoarseModel::random(7);
        model.head.weights = Tensor::zeros(&[3, 16, 1, 1]);
        model.head.bias = Some(Tensor::new(&[3], vec![0.25, -0.5, 0.75]).unwrap());
        let x = random_input(3, 32, 32, 2);
        let m = Tensor::full(&[1, 32, 32], 1.0);
        let (coarse, _) = coarse_forward(&model, &x, &m, 8).unwrap();
        for (c, want) in [0.25f32, -0.5, 0.75].into_iter().enumerate() {
            assert!(coarse.channel(c).iter().all(|&v| v == want));
        }
    }

    #[test]
    fn known_pixels_pass_through_coarse() {
        let model = CoarseModel::random(8);
        let x = random_input(3, 32, 32, 3);
        let mut m = Tensor::zeros(&[1, 32, 32]);
        m.data_mut()[100..300].fill(1.0);
        let (coarse, _) = coarse_forward(&model, &x, &m, 8).unwrap();
        for c in 0..3 {
            for i in 0..1024 {
                if m.data()[i] == 0.0 {
                    assert_eq!(coarse.channel(c)[i], x.channel(c)[i]);
                }
            }
        }
    }

    #[test]
    fn coarse_forward_rejects_bad_input() {
        let model = CoarseModel::random(9);
        let x = random_input(3, 36, 36, 4);
        let m = Tensor::zeros(&[1, 36, 36]);
        assert!(coarse_forward(&model, &x, &m, 8).is_err());
        let x = random_input(3, 32, 32, 4);
        let m = Tensor::full(&[1, 32, 32], 0.5);
        assert!(matches!(coarse_forward(&model, &x, &m, 8), Err(Error::NonBinaryMask(_))));
        let m = Tensor::zeros(&[1, 32, 32]);
        assert!(coarse_forward(&model, &x, &m, 4).is_err());
        let x4 = random_input(4, 32, 32, 4);
        assert!(coarse_forward(&model, &x4, &m, 8).is_err());
    }

    #[test]
    fn macs_count_is_positive_and_scales() {
        let model = CoarseModel::random(10);
        let a = model.macs(64, 64);
        assert!(a > 0);
        assert_eq!(model.macs(128, 128), 4 * a);
    }
}
