//! Radix-2 FFT and the focal frequency loss.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Complex 2-d spectrum with power-of-two extents.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_pow2(height)?;
        check_pow2(width)?;
        Ok(Self {
            height,
            width,
            re: vec![0.0; height * width],
            im: vec![0.0; height * width],
        })
    }

    pub fn magnitude(&self, i: usize) -> f64 {
        self.re[i].hypot(self.im[i])
    }
}

fn check_pow2(n: usize) -> Result<()> {
    if n.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::NotPowerOfTwo(n))
    }
}

/// In-place iterative Cooley-Tukey transform. `inverse` flips the twiddle
/// sign but does not scale.
fn fft_1d(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let twiddles: Vec<(f64, f64)> = (0..half)
            .map(|k| {
                let angle = sign * 2.0 * PI * k as f64 / len as f64;
                (angle.cos(), angle.sin())
            })
            .collect();
        for start in (0..n).step_by(len) {
            for (k, &(wr, wi)) in twiddles.iter().enumerate() {
                let a = start + k;
                let b = a + half;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

fn transform_2d(grid: &mut ComplexGrid, inverse: bool) {
    let (h, w) = (grid.height, grid.width);
    for y in 0..h {
        fft_1d(
            &mut grid.re[y * w..(y + 1) * w],
            &mut grid.im[y * w..(y + 1) * w],
            inverse,
        );
    }
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col_re[y] = grid.re[y * w + x];
            col_im[y] = grid.im[y * w + x];
        }
        fft_1d(&mut col_re, &mut col_im, inverse);
        for y in 0..h {
            grid.re[y * w + x] = col_re[y];
            grid.im[y * w + x] = col_im[y];
        }
    }
}

fn plane_dims(input: &Tensor) -> Result<(usize, usize)> {
    match input.shape() {
        [1, h, w] | [h, w] => Ok((*h, *w)),
        s => Err(Error::Shape(format!("expected a single plane, got {s:?}"))),
    }
}

/// Unnormalized forward DFT, `F(u,v) = Σ x(y,x) e^{-2πi(uy/H + vx/W)}`.
pub fn fft2d(input: &Tensor) -> Result<ComplexGrid> {
    let (h, w) = plane_dims(input)?;
    fft2d_plane(input.data(), h, w)
}

fn fft2d_plane(plane: &[f32], h: usize, w: usize) -> Result<ComplexGrid> {
    let mut grid = ComplexGrid::zeros(h, w)?;
    for (d, &s) in grid.re.iter_mut().zip(plane) {
        *d = s as f64;
    }
    transform_2d(&mut grid, false);
    Ok(grid)
}

/// Inverse of [`fft2d`], scaled by `1/(HW)`; returns the real part as `[1,H,W]`.
pub fn ifft2d(input: &ComplexGrid) -> Result<Tensor> {
    check_pow2(input.height)?;
    check_pow2(input.width)?;
    let n = input.height * input.width;
    if input.re.len() != n || input.im.len() != n {
        return Err(Error::Shape("complex grid buffers do not match extents".into()));
    }
    let mut grid = input.clone();
    transform_2d(&mut grid, true);
    let scale = 1.0 / n as f64;
    let data = grid.re.iter().map(|&v| (v * scale) as f32).collect();
    Tensor::new(&[1, input.height, input.width], data)
}

/// Focal frequency loss between two spectra sets (one grid per channel).
///
/// Per channel, `d = |F_pred - F_target|` and the focal weight is
/// `d^alpha / max(d^alpha)`; the loss is the mean of `w d²` over channels and
/// frequencies.
pub fn focal_frequency_loss_spectra(
    pred: &[ComplexGrid],
    target: &[ComplexGrid],
    alpha: f64,
) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape("spectra channel counts differ".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if (p.height, p.width) != (t.height, t.width) {
            return Err(Error::Shape("spectra extents differ".into()));
        }
        let dist: Vec<f64> = p
            .re
            .iter()
            .zip(&p.im)
            .zip(t.re.iter().zip(&t.im))
            .map(|((pr, pi), (tr, ti))| (pr - tr).hypot(pi - ti))
            .collect();
        let max_weight = dist.iter().map(|d| d.powf(alpha)).fold(0.0, f64::max);
        if max_weight > 0.0 {
            total += dist
                .iter()
                .map(|&d| d.powf(alpha) / max_weight * d * d)
                .sum::<f64>();
        }
        count += dist.len();
    }
    Ok(total / count as f64)
}

/// Focal frequency loss between two `[C,H,W]` images with power-of-two extents.
pub fn focal_frequency_loss(pred: &Tensor, target: &Tensor, alpha: f64) -> Result<f64> {
    let (c, h, w) = pred.dims3()?;
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    check_pow2(h)?;
    check_pow2(w)?;
    let mut ps = Vec::with_capacity(c);
    let mut ts = Vec::with_capacity(c);
    for ch in 0..c {
        ps.push(fft2d_plane(pred.channel(ch), h, w)?);
        ts.push(fft2d_plane(target.channel(ch), h, w)?);
    }
    focal_frequency_loss_spectra(&ps, &ts, alpha)
}

/// Offsets of the original content inside a zero-padded power-of-two canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PowerOfTwoPadding {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Centers a `[C,H,W]` image on a zero canvas whose extents are the next powers of two.
pub fn center_pad_pow2(input: &Tensor) -> Result<(Tensor, PowerOfTwoPadding)> {
    let (c, h, w) = input.dims3()?;
    let (ph, pw) = (h.next_power_of_two(), w.next_power_of_two());
    let pad = PowerOfTwoPadding {
        top: (ph - h) / 2,
        left: (pw - w) / 2,
        height: ph,
        width: pw,
    };
    let mut out = Tensor::zeros(&[c, ph, pw]);
    for ch in 0..c {
        let src = input.channel(ch);
        for y in 0..h {
            let dst = ((ch * ph) + y + pad.top) * pw + pad.left;
            out.data_mut()[dst..dst + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    Ok((out, pad))
}
