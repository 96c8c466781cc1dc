//! Independent reference implementations used as test oracles. These are
//! deliberately naive: direct loops, no shared code with the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rethined::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

pub fn binary(shape: &[usize], p_one: f64, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| if r.gen_bool(p_one) { 1.0 } else { 0.0 })
}

/// Direct `O(H²W²)` DFT, `F(u,v) = Σ x(y,x) e^{-2πi(uy/H + vx/W)}`.
pub fn naive_dft(plane: &[f32], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    let val = plane[y * w + x] as f64;
                    sr += val * phase.cos();
                    si += val * phase.sin();
                }
            }
            re[u * w + v] = sr;
            im[u * w + v] = si;
        }
    }
    (re, im)
}

/// Focal frequency loss written straight from its definition.
pub fn ffl_direct(pred: &Tensor, target: &Tensor, alpha: f64) -> f64 {
    let (c, h, w) = pred.dims3().unwrap();
    let mut total = 0.0;
    for ch in 0..c {
        let (pr, pi) = naive_dft(pred.channel(ch), h, w);
        let (tr, ti) = naive_dft(target.channel(ch), h, w);
        let d: Vec<f64> = (0..h * w)
            .map(|i| ((pr[i] - tr[i]).powi(2) + (pi[i] - ti[i]).powi(2)).sqrt())
            .collect();
        let max = d.iter().map(|v| v.powf(alpha)).fold(0.0, f64::max);
        if max > 0.0 {
            for v in &d {
                total += v.powf(alpha) / max * v * v;
            }
        }
    }
    total / (c * h * w) as f64
}

/// Patches by direct slicing, `[N, C·P²]`, channel-major inside a patch.
pub fn naive_patches(image: &Tensor, p: usize) -> Vec<f32> {
    let (c, h, w) = image.dims3().unwrap();
    let mut out = Vec::new();
    for r in 0..h / p {
        for col in 0..w / p {
            for ch in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        out.push(image.data()[(ch * h + r * p + dy) * w + col * p + dx]);
                    }
                }
            }
        }
    }
    out
}

/// SSIM with an explicit 11x11 Gaussian window at every valid position.
pub fn ssim_direct(a: &Tensor, b: &Tensor) -> f64 {
    let (c, h, w) = a.dims3().unwrap();
    let k = 11;
    let g: Vec<f64> = (0..k)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
        .collect();
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            win[i * k + j] = g[i] * g[j];
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut n = 0;
    for ch in 0..c {
        let (pa, pb) = (a.channel(ch), b.channel(ch));
        for y in 0..=h - k {
            for x in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wv = win[i * k + j];
                        ma += wv * pa[(y + i) * w + x + j] as f64;
                        mb += wv * pb[(y + i) * w + x + j] as f64;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wv = win[i * k + j];
                        let da = pa[(y + i) * w + x + j] as f64 - ma;
                        let db = pb[(y + i) * w + x + j] as f64 - mb;
                        va += wv * da * da;
                        vb += wv * db * db;
                        cov += wv * da * db;
                    }
                }
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
        }
    }
    total / n as f64
}

/// Per-block "any corrupted pixel" count.
pub fn count_corrupted_blocks(mask: &Tensor, p: usize) -> usize {
    let (_, h, w) = mask.dims3().unwrap();
    let mut n = 0;
    for r in 0..h / p {
        for c in 0..w / p {
            let hit = (0..p).any(|dy| (0..p).any(|dx| mask.data()[(r * p + dy) * w + c * p + dx] != 0.0));
            n += hit as usize;
        }
    }
    n
}
