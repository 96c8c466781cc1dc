//! Attention upscaling transfer.
//!
//! The masked attention map learned on the low-resolution grid is reused to
//! mix the high-frequency residuals of the full-resolution patches. Only the
//! mixing cost grows with the output size; the `O(N²)` attention itself is
//! never recomputed.

use crate::attention::{token_mix, AttentionMap};
use crate::coarse::check_binary;
use crate::error::{Error, Result};
use crate::patch::{pixel_shuffle, PatchSequence};
use crate::tensor::{bilinear_resize, gaussian_blur, Tensor};

/// Smallest blur width; below it the Gaussian is a delta.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Anti-aliasing width for a downsampling factor `r`: `0.8 sqrt(r² - 1)`.
pub fn antialias_sigma(r: f64) -> f64 {
    (0.8 * (r * r - 1.0).max(0.0).sqrt()).max(SIGMA_FLOOR)
}

/// Gaussian low-pass / high-frequency split of an image.
///
/// The residual is kept in double precision: an `f32` pair cannot represent
/// `x` exactly once the low-pass value dwarfs the pixel, while the `f64`
/// difference of two `f32` values reconstructs `x` bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencySplit {
    pub low: Tensor,
    pub high: Vec<f64>,
    pub sigma: f64,
}

impl FrequencySplit {
    pub fn shape(&self) -> &[usize] {
        self.low.shape()
    }

    /// The residual rounded to `f32`.
    pub fn high_tensor(&self) -> Tensor {
        Tensor::new(self.low.shape(), self.high.iter().map(|&v| v as f32).collect())
            .expect("high matches low")
    }

    /// `low + high`, rounded once to `f32`.
    pub fn reconstruct(&self) -> Tensor {
        let data = self
            .low
            .data()
            .iter()
            .zip(&self.high)
            .map(|(&l, &h)| (l as f64 + h) as f32)
            .collect();
        Tensor::new(self.low.shape(), data).expect("high matches low")
    }
}

/// Splits `x` with a reflect-padded Gaussian of width [`antialias_sigma`]`(r)`.
pub fn frequency_split(x_hr: &Tensor, r: f64) -> Result<FrequencySplit> {
    x_hr.dims3()?;
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "downsampling factor must be >= 1, got {r}"
        )));
    }
    let sigma = antialias_sigma(r);
    let low = gaussian_blur(x_hr, sigma)?;
    let high = x_hr
        .data()
        .iter()
        .zip(low.data())
        .map(|(&x, &l)| x as f64 - l as f64)
        .collect();
    Ok(FrequencySplit { low, high, sigma })
}

/// High-resolution patches aligned with the low-resolution patch grid; each
/// tile is `ratio` times the LR patch size.
#[derive(Clone, Debug, PartialEq)]
pub struct HrPatchGrid {
    pub seq: PatchSequence,
    /// `(H_HR / H, W_HR / W)`
    pub ratio: (usize, usize),
}

/// Tiles the residual of `split` into the `rows x cols` grid of the LR
/// attention map.
pub fn hf_patches(split: &FrequencySplit, rows: usize, cols: usize) -> Result<HrPatchGrid> {
    let [c, h, w] = split.shape()[..] else {
        return Err(Error::Shape("frequency split must be [C,H,W]".into()));
    };
    if rows == 0 || cols == 0 || h % rows != 0 || w % cols != 0 {
        return Err(Error::Shape(format!(
            "{h}x{w} image cannot be tiled into a {rows}x{cols} grid"
        )));
    }
    let (ph, pw) = (h / rows, w / cols);
    let d = c * ph * pw;
    let mut out = vec![0.0f32; rows * cols * d];
    for ch in 0..c {
        let plane = &split.high[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let (r, dy) = (y / ph, y % ph);
            for col in 0..cols {
                let dst = (r * cols + col) * d + (ch * ph + dy) * pw;
                let src = &plane[y * w + col * pw..y * w + (col + 1) * pw];
                for (o, &v) in out[dst..dst + pw].iter_mut().zip(src) {
                    *o = v as f32;
                }
            }
        }
    }
    Ok(HrPatchGrid {
        seq: PatchSequence::new(Tensor::new(&[rows * cols, d], out)?, rows, cols, ph, pw, c)?,
        ratio: (0, 0),
    })
}

/// `q_i^HF = Σ_j M_T(i,j) p_j^HF`.
pub fn hf_token_mix(mt: &AttentionMap, hf: &HrPatchGrid) -> Result<HrPatchGrid> {
    Ok(HrPatchGrid {
        seq: token_mix(mt, &hf.seq)?,
        ratio: hf.ratio,
    })
}

/// Integer LR-to-HR ratio shared by both axes.
pub fn resolution_ratio(hr: (usize, usize), lr: (usize, usize)) -> Result<usize> {
    let (hh, hw) = hr;
    let (lh, lw) = lr;
    if lh == 0 || lw == 0 || hh % lh != 0 || hw % lw != 0 || hh / lh != hw / lw || hh < lh {
        return Err(Error::Shape(format!(
            "{hh}x{hw} is not an integer multiple of {lh}x{lw} with equal ratios"
        )));
    }
    Ok(hh / lh)
}

/// Final HR image from a precomputed split of `x_hr_masked`.
pub fn compose_from_split(
    split: &FrequencySplit,
    x_hr_masked: &Tensor,
    x_lr_hat: &Tensor,
    mt: &AttentionMap,
    m_hr: &Tensor,
    patch: usize,
    composite: bool,
) -> Result<Tensor> {
    let (c, hh, hw) = x_hr_masked.dims3()?;
    let (lc, lh, lw) = x_lr_hat.dims3()?;
    if c != lc || split.shape() != x_hr_masked.shape() {
        return Err(Error::Shape("HR image, split and LR result disagree".into()));
    }
    if m_hr.shape() != [1, hh, hw] {
        return Err(Error::Shape(format!(
            "mask {:?} does not match HR image {hh}x{hw}",
            m_hr.shape()
        )));
    }
    check_binary(m_hr)?;
    let ratio = resolution_ratio((hh, hw), (lh, lw))?;
    if patch == 0 || lh % patch != 0 || lw % patch != 0 || (lh / patch, lw / patch) != (mt.rows, mt.cols) {
        return Err(Error::Shape(format!(
            "{lh}x{lw} with patch {patch} does not match the {}x{} attention grid",
            mt.rows, mt.cols
        )));
    }

    let mut hf = hf_patches(split, mt.rows, mt.cols)?;
    hf.ratio = (ratio, ratio);
    let mixed = hf_token_mix(mt, &hf)?;
    drop(hf);
    let hf_img = pixel_shuffle(&mixed.seq)?;
    drop(mixed);
    let mut out = bilinear_resize(x_lr_hat, hh, hw)?;
    let m = m_hr.channel(0);
    let plane = hh * hw;
    for ((o, &f), (idx, &x)) in out
        .data_mut()
        .iter_mut()
        .zip(hf_img.data())
        .zip(x_hr_masked.data().iter().enumerate())
    {
        *o = if composite && m[idx % plane] == 0.0 {
            x
        } else {
            (*o + f).clamp(0.0, 1.0)
        };
    }
    Ok(out)
}

/// `upsample(x̂_LR) + pixel_shuffle(mix(M_T, HF patches))`, clamped to
/// `[0,1]`. With `composite`, every known pixel (`m_hr == 0`) is copied from
/// `x_hr_masked` verbatim.
pub fn compose_hr(
    x_hr_masked: &Tensor,
    x_lr_hat: &Tensor,
    mt: &AttentionMap,
    m_hr: &Tensor,
    patch: usize,
    composite: bool,
) -> Result<Tensor> {
    let (_, hh, hw) = x_hr_masked.dims3()?;
    let (_, lh, lw) = x_lr_hat.dims3()?;
    let ratio = resolution_ratio((hh, hw), (lh, lw))?;
    let split = frequency_split(x_hr_masked, ratio as f64)?;
    compose_from_split(&split, x_hr_masked, x_lr_hat, mt, m_hr, patch, composite)
}
