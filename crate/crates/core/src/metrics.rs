//! Image quality metrics. All accumulate in `f64`.

use crate::error::{Error, Result};
use crate::tensor::{gaussian_taps, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(s / a.numel() as f64)
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(s / a.numel() as f64)
}

/// `10 log10(1 / MSE)` on unit range; `+inf` for identical inputs.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (t, &tap) in taps.iter().enumerate() {
            let src = &rows[(y + t) * ow..(y + t + 1) * ow];
            for (o, &v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += tap * v;
            }
        }
    }
    out
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), evaluated
/// at every position where the window fits and averaged over channels.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    let (c, h, w) = a.dims3()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let taps = gaussian_taps(SSIM_SIGMA)?;
    debug_assert_eq!(taps.len(), SSIM_WINDOW);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x: Vec<f64> = a.channel(ch).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.channel(ch).iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] =
            [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &taps));
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_analytic() {
        let z = Tensor::zeros(&[3, 4, 4]);
        let o = Tensor::full(&[3, 4, 4], 1.0);
        assert_eq!(l1(&z, &z).unwrap(), 0.0);
        assert_eq!(l1(&z, &o).unwrap(), 1.0);
        assert!(l1(&z, &Tensor::zeros(&[3, 4, 5])).is_err());
    }

    #[test]
    fn psnr_analytic() {
        let a = Tensor::zeros(&[1, 10, 10]);
        let b = Tensor::full(&[1, 10, 10], 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-6);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_extremes() {
        let z = Tensor::zeros(&[3, 16, 16]);
        let o = Tensor::full(&[3, 16, 16], 1.0);
        assert!((ssim(&o, &o).unwrap() - 1.0).abs() < 1e-9);
        let floor = ssim(&z, &o).unwrap();
        assert!((floor - SSIM_C1 / (1.0 + SSIM_C1)).abs() < 1e-12);
        assert!(floor < 0.05);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = Tensor::zeros(&[3, 10, 20]);
        assert!(ssim(&x, &x).is_err());
    }
}
