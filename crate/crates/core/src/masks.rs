//! Free-form brush-stroke masks. 1 marks a corrupted pixel.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length at which the pixel ranges below are expressed; other sizes
/// scale them by `sqrt(H W) / REFERENCE_SIZE`.
pub const REFERENCE_SIZE: f64 = 256.0;
pub const MIN_EXTENT: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    pub seed: u64,
    pub num_strokes: RangeInclusive<usize>,
    /// Brush radius in pixels at [`REFERENCE_SIZE`].
    pub brush_radius: RangeInclusive<f64>,
    /// Segments per stroke.
    pub walk_length: RangeInclusive<usize>,
    /// Segment length in pixels at [`REFERENCE_SIZE`].
    pub segment_length: RangeInclusive<f64>,
    /// Maximum heading change between segments, radians.
    pub angle_jitter: f64,
    pub target_coverage: RangeInclusive<f64>,
    pub max_attempts: usize,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_strokes: 1..=6,
            brush_radius: 8.0..=40.0,
            walk_length: 4..=12,
            segment_length: 10.0..=60.0,
            angle_jitter: 0.8,
            target_coverage: 0.30..=0.50,
            max_attempts: 64,
        }
    }
}

impl MaskSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = (*self.target_coverage.start(), *self.target_coverage.end());
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!("coverage band [{lo}, {hi}]")));
        }
        if self.num_strokes.is_empty() || *self.num_strokes.start() == 0 {
            return Err(Error::InvalidArgument("stroke count range".into()));
        }
        if self.walk_length.is_empty() || *self.walk_length.start() == 0 {
            return Err(Error::InvalidArgument("walk length range".into()));
        }
        for (name, r) in [("brush radius", &self.brush_radius), ("segment length", &self.segment_length)] {
            if !(*r.start() > 0.0 && r.start() <= r.end()) {
                return Err(Error::InvalidArgument(format!("{name} range")));
            }
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidArgument("attempt budget must be positive".into()));
        }
        Ok(())
    }
}

/// Fraction of pixels set to 1.
pub fn coverage(mask: &Tensor) -> f64 {
    mask.data().iter().filter(|&&v| v != 0.0).count() as f64 / mask.numel() as f64
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<bool>,
    set: usize,
}

impl Canvas {
    fn disc(&mut self, cy: f64, cx: f64, r: f64) {
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as isize).min(self.h as isize - 1);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as isize).min(self.w as isize - 1);
        for y in y0 as isize..=y1 {
            for x in x0 as isize..=x1 {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let i = y as usize * self.w + x as usize;
                if dy * dy + dx * dx <= r * r && !self.px[i] {
                    self.px[i] = true;
                    self.set += 1;
                }
            }
        }
    }

    fn coverage(&self) -> f64 {
        self.set as f64 / self.px.len() as f64
    }
}

/// One attempt: strokes are stamped disc by disc until coverage reaches a
/// target drawn from the band. `None` when the strokes run out first or the
/// last disc overshoots the band.
fn attempt(spec: &MaskSpec, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Option<Vec<bool>> {
    let scale = ((h * w) as f64).sqrt() / REFERENCE_SIZE;
    let (lo, hi) = (*spec.target_coverage.start(), *spec.target_coverage.end());
    let target = if lo < hi { rng.gen_range(lo..hi) } else { lo };
    let mut canvas = Canvas {
        h,
        w,
        px: vec![false; h * w],
        set: 0,
    };
    let strokes = rng.gen_range(spec.num_strokes.clone());
    for _ in 0..strokes {
        let radius = rng.gen_range(spec.brush_radius.clone()) * scale;
        let mut y = rng.gen_range(0.0..h as f64);
        let mut x = rng.gen_range(0.0..w as f64);
        let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let segments = rng.gen_range(spec.walk_length.clone());
        canvas.disc(y, x, radius);
        for _ in 0..segments {
            heading += rng.gen_range(-spec.angle_jitter..=spec.angle_jitter);
            let len = rng.gen_range(spec.segment_length.clone()) * scale;
            let ny = (y + len * heading.sin()).clamp(0.0, (h - 1) as f64);
            let nx = (x + len * heading.cos()).clamp(0.0, (w - 1) as f64);
            let step = (radius / 2.0).max(1.0);
            let n = ((ny - y).hypot(nx - x) / step).ceil().max(1.0) as usize;
            for k in 1..=n {
                let t = k as f64 / n as f64;
                canvas.disc(y + t * (ny - y), x + t * (nx - x), radius);
                if canvas.coverage() >= target {
                    return (canvas.coverage() <= hi).then_some(canvas.px);
                }
            }
            (y, x) = (ny, nx);
        }
    }
    None
}

/// Random-walk brush strokes whose coverage lies in `spec.target_coverage`.
/// Failed attempts are retried with a fresh stream of the same seed.
pub fn generate_mask(spec: &MaskSpec, h: usize, w: usize) -> Result<Tensor> {
    spec.validate()?;
    if h < MIN_EXTENT || w < MIN_EXTENT {
        return Err(Error::InvalidArgument(format!(
            "masks need at least {MIN_EXTENT}x{MIN_EXTENT} pixels, got {h}x{w}"
        )));
    }
    for k in 0..spec.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(k as u64);
        if let Some(px) = attempt(spec, h, w, &mut rng) {
            let data = px.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
            return Tensor::new(&[1, h, w], data);
        }
    }
    Err(Error::CoverageBudget {
        attempts: spec.max_attempts,
    })
}
