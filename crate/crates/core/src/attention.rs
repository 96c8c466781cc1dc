//! Masked patch self-attention ("neural patch match").
//!
//! Tokens are projected to queries and keys, scored with a scaled dot product
//! and row softmax, and the resulting map is masked so that known patches
//! keep themselves and corrupted patches only draw from known ones. Mixing
//! the patch values with the masked map fills the holes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::patch::{
    embed_and_condition, img2col, pixel_shuffle, tokenize_mask, MaskVector, PatchSequence,
    TokenMatrix,
};
use crate::tensor::{matmul, matmul_transposed, reflect_index, softmax_rows, Tensor};

/// `N x N` attention weights over the patch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub a: Tensor,
    pub masked: bool,
    /// Corrupted rows were rescaled to sum to one after masking.
    pub renormalized: bool,
    pub rows: usize,
    pub cols: usize,
}

impl AttentionMap {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.a.row(i)
    }

    /// A masked identity map (every patch keeps itself).
    pub fn identity(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        let mut a = Tensor::zeros(&[n, n]);
        for i in 0..n {
            a.data_mut()[i * n + i] = 1.0;
        }
        Self {
            a,
            masked: true,
            renormalized: true,
            rows,
            cols,
        }
    }
}

/// Query/key projections, each `[d_k + C, d_k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionWeights {
    pub query: Tensor,
    pub key: Tensor,
}

impl ProjectionWeights {
    pub fn d_k(&self) -> usize {
        self.query.shape()[1]
    }

    pub fn token_width(&self) -> usize {
        self.query.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.query.dims2()?;
        let k = self.key.dims2()?;
        if q != k {
            return Err(Error::Shape(format!("query {q:?} and key {k:?} projections differ")));
        }
        if !self.query.is_finite() || !self.key.is_finite() {
            return Err(Error::NonFinite("projection weights"));
        }
        Ok(())
    }
}

/// All learned parameters of the patch-attention stage.
#[derive(Clone, Debug, PartialEq)]
pub struct NpmWeights {
    /// `[3P², d_k]` patch embedding.
    pub embed: Tensor,
    pub projection: ProjectionWeights,
}

impl NpmWeights {
    /// Seeded uniform initialization with unit-variance-preserving bounds.
    pub fn random(patch: usize, d_k: usize, feature_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |rows: usize, cols: usize| {
            let bound = (3.0 / rows as f64).sqrt() as f32;
            Tensor::from_fn(&[rows, cols], |_| rng.gen_range(-bound..bound))
        };
        let embed = init(3 * patch * patch, d_k);
        let query = init(d_k + feature_channels, d_k);
        let key = init(d_k + feature_channels, d_k);
        Self {
            embed,
            projection: ProjectionWeights { query, key },
        }
    }

    pub fn d_k(&self) -> usize {
        self.embed.shape()[1]
    }

    /// Patch side implied by the embedding input width `3P²`.
    pub fn patch_size(&self) -> Option<usize> {
        let p2 = self.embed.shape()[0] / 3;
        let p = (p2 as f64).sqrt().round() as usize;
        (p * p * 3 == self.embed.shape()[0]).then_some(p)
    }

    pub fn feature_channels(&self) -> usize {
        self.projection.token_width() - self.d_k()
    }

    pub fn validate(&self) -> Result<()> {
        self.projection.validate()?;
        let d_k = self.embed.dims2()?.1;
        if self.projection.d_k() != d_k || self.projection.token_width() < d_k {
            return Err(Error::Shape(format!(
                "projection {:?} incompatible with embedding width {d_k}",
                self.projection.query.shape()
            )));
        }
        if self.patch_size().is_none() {
            return Err(Error::Shape("embedding input width is not 3P²".into()));
        }
        Ok(())
    }
}

/// `A = softmax(Q Kᵀ / sqrt(d_k))` with `Q = X M_Q`, `K = X M_K`.
pub fn attention_scores(tokens: &TokenMatrix, w: &ProjectionWeights) -> Result<AttentionMap> {
    w.validate()?;
    let (n, width) = tokens.x.dims2()?;
    if width != w.token_width() {
        return Err(Error::Shape(format!(
            "tokens are {width} wide, projections expect {}",
            w.token_width()
        )));
    }
    if n != tokens.rows * tokens.cols {
        return Err(Error::Shape("token count does not match its grid".into()));
    }
    if !tokens.x.is_finite() {
        return Err(Error::NonFinite("tokens"));
    }
    let q = matmul(&tokens.x, &w.query)?;
    let k = matmul(&tokens.x, &w.key)?;
    let mut logits = matmul_transposed(&q, &k)?;
    let scale = 1.0 / (w.d_k() as f32).sqrt();
    for v in logits.data_mut() {
        *v *= scale;
    }
    Ok(AttentionMap {
        a: softmax_rows(&logits)?,
        masked: false,
        renormalized: false,
        rows: tokens.rows,
        cols: tokens.cols,
    })
}

/// Applies `M_T = A ⊙ M_D`.
///
/// Known rows become exact one-hots `e_i`. Corrupted rows lose their mass on
/// corrupted columns and are rescaled to sum to one; if every remaining entry
/// underflowed to zero the row falls back to uniform weights over the known
/// patches.
pub fn mask_attention(a: &AttentionMap, m: &MaskVector) -> Result<AttentionMap> {
    let n = a.len();
    if a.masked {
        return Err(Error::InvalidArgument("attention map is already masked".into()));
    }
    if m.len() != n || a.a.shape() != [n, n] {
        return Err(Error::Shape(format!(
            "mask has {} entries for a {n}-patch attention map",
            m.len()
        )));
    }
    let known = n - m.corrupted_count();
    if known == 0 {
        return Err(Error::AllCorrupted);
    }
    let mut out = vec![0.0f32; n * n];
    for (i, dst) in out.chunks_exact_mut(n).enumerate() {
        if !m.is_corrupted(i) {
            dst[i] = 1.0;
            continue;
        }
        let src = a.row(i);
        let sum: f64 = src
            .iter()
            .zip(&m.0)
            .filter(|(_, &c)| !c)
            .map(|(&v, _)| v as f64)
            .sum();
        for (j, d) in dst.iter_mut().enumerate() {
            if !m.is_corrupted(j) {
                *d = if sum > 0.0 {
                    (src[j] as f64 / sum) as f32
                } else {
                    (1.0 / known as f64) as f32
                };
            }
        }
    }
    Ok(AttentionMap {
        a: Tensor::new(&[n, n], out)?,
        masked: true,
        renormalized: true,
        rows: a.rows,
        cols: a.cols,
    })
}

/// `p̂_i = Σ_j M_T(i,j) q_j`.
///
/// Rows that are exact one-hots copy their source patch verbatim; the
/// remaining rows are mixed with one matrix product over the columns they
/// actually reference.
pub fn token_mix(mt: &AttentionMap, values: &PatchSequence) -> Result<PatchSequence> {
    let n = mt.len();
    if values.len() != n || mt.a.shape() != [n, n] {
        return Err(Error::Shape(format!(
            "{} value patches for a {n}-patch attention map",
            values.len()
        )));
    }
    if (values.rows, values.cols) != (mt.rows, mt.cols) {
        return Err(Error::Shape("value grid differs from attention grid".into()));
    }
    let d = values.dim();
    let src = values.patches.data();
    let mut out = vec![0.0f32; n * d];
    let mut mixed_rows = Vec::new();
    let mut used = vec![false; n];
    for i in 0..n {
        let row = mt.row(i);
        let mut nonzero = row.iter().enumerate().filter(|(_, &v)| v != 0.0);
        match (nonzero.next(), nonzero.next()) {
            (None, _) => {}
            (Some((j, &w)), None) if w == 1.0 => {
                out[i * d..(i + 1) * d].copy_from_slice(&src[j * d..(j + 1) * d]);
            }
            _ => {
                mixed_rows.push(i);
                for (j, &v) in row.iter().enumerate() {
                    used[j] |= v != 0.0;
                }
            }
        }
    }
    if !mixed_rows.is_empty() {
        let cols: Vec<usize> = (0..n).filter(|&j| used[j]).collect();
        let weights = Tensor::from_fn(&[mixed_rows.len(), cols.len()], |k| {
            mt.row(mixed_rows[k / cols.len()])[cols[k % cols.len()]]
        });
        let gathered;
        let basis = if cols.len() == n {
            &values.patches
        } else {
            let mut g = Vec::with_capacity(cols.len() * d);
            for &j in &cols {
                g.extend_from_slice(&src[j * d..(j + 1) * d]);
            }
            gathered = Tensor::new(&[cols.len(), d], g)?;
            &gathered
        };
        let mixed = matmul(&weights, basis)?;
        for (k, &i) in mixed_rows.iter().enumerate() {
            out[i * d..(i + 1) * d].copy_from_slice(mixed.row(k));
        }
    }
    PatchSequence::new(
        Tensor::new(&[n, d], out)?,
        values.rows,
        values.cols,
        values.patch_h,
        values.patch_w,
        values.channels,
    )
}

/// Width of the smoothed band on each side of a corrupted patch edge.
pub const COHERENCE_BAND: usize = 2;
pub const COHERENCE_SIGMA: f64 = 0.8;

fn coherence_kernel() -> [f64; 9] {
    let mut k = [0.0; 9];
    for dy in -1i32..=1 {
        for dx in -1i32..=1 {
            k[((dy + 1) * 3 + dx + 1) as usize] =
                (-((dy * dy + dx * dx) as f64) / (2.0 * COHERENCE_SIGMA * COHERENCE_SIGMA)).exp();
        }
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Whether pixel `(y, x)` lies within the band around an interior patch edge
/// that touches at least one corrupted patch.
pub fn in_coherence_band(y: usize, x: usize, m: &MaskVector, rows: usize, cols: usize, patch: usize) -> bool {
    let (r, c) = (y / patch, x / patch);
    let (dy, dx) = (y % patch, x % patch);
    let bad = |rr: usize, cc: usize| m.is_corrupted(rr * cols + cc);
    let b = COHERENCE_BAND;
    (dx < b && c > 0 && (bad(r, c - 1) || bad(r, c)))
        || (dx + b >= patch && c + 1 < cols && (bad(r, c) || bad(r, c + 1)))
        || (dy < b && r > 0 && (bad(r - 1, c) || bad(r, c)))
        || (dy + b >= patch && r + 1 < rows && (bad(r, c) || bad(r + 1, c)))
}

/// Seam suppression: a fixed 3x3 Gaussian (σ = 0.8, reflect padding) applied
/// only to pixels within two pixels of an edge of a corrupted patch. All other
/// pixels are returned unchanged.
pub fn coherence(image: &Tensor, m: &MaskVector, patch: usize) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Shape(format!("{h}x{w} not divisible by patch {patch}")));
    }
    let (rows, cols) = (h / patch, w / patch);
    if m.len() != rows * cols {
        return Err(Error::Shape("mask vector does not match patch grid".into()));
    }
    let mut out = image.clone();
    if m.corrupted_count() == 0 {
        return Ok(out);
    }
    let k = coherence_kernel();
    let band: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| in_coherence_band(y, x, m, rows, cols, patch))
        .collect();
    for ch in 0..c {
        let src = image.channel(ch);
        let dst = &mut out.data_mut()[ch * h * w..(ch + 1) * h * w];
        for &(y, x) in &band {
            let mut acc = 0.0f64;
            for ky in 0..3 {
                let sy = reflect_index(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let sx = reflect_index(x as isize + kx as isize - 1, w);
                    acc += k[ky * 3 + kx] * src[sy * w + sx] as f64;
                }
            }
            dst[y * w + x] = acc as f32;
        }
    }
    Ok(out)
}

/// Value patches for LR mixing: known patches come from the observed image,
/// corrupted ones from the coarse prediction.
pub fn value_patches(
    x_lr: &PatchSequence,
    coarse: &PatchSequence,
    m: &MaskVector,
) -> Result<PatchSequence> {
    if x_lr.patches.shape() != coarse.patches.shape() || m.len() != x_lr.len() {
        return Err(Error::Shape("value sources disagree in shape".into()));
    }
    let d = x_lr.dim();
    let mut v = x_lr.clone();
    let data = v.patches.data_mut();
    for i in 0..m.len() {
        if m.is_corrupted(i) {
            data[i * d..(i + 1) * d].copy_from_slice(coarse.patch(i));
        }
    }
    Ok(v)
}

/// Full LR refinement: patches of the coarse image are embedded,
/// conditioned, scored and masked; the masked map mixes value patches,
/// which are reassembled and passed through the coherence layer.
pub fn npm_refine(
    coarse: &Tensor,
    x_lr: &Tensor,
    features: Option<&Tensor>,
    weights: &NpmWeights,
    m_pixels: &Tensor,
    patch: usize,
) -> Result<(Tensor, AttentionMap)> {
    weights.validate()?;
    if coarse.shape() != x_lr.shape() {
        return Err(Error::Shape("coarse and LR images differ in shape".into()));
    }
    let coarse_seq = img2col(coarse, patch)?;
    let m = tokenize_mask(m_pixels, patch)?;
    if m.len() != coarse_seq.len() {
        return Err(Error::Shape("mask and image grids differ".into()));
    }
    let tokens = embed_and_condition(&coarse_seq, features, &weights.embed)?;
    let a = attention_scores(&tokens, &weights.projection)?;
    let mt = mask_attention(&a, &m)?;
    let values = value_patches(&img2col(x_lr, patch)?, &coarse_seq, &m)?;
    let mixed = token_mix(&mt, &values)?;
    let refined = coherence(&pixel_shuffle(&mixed)?, &m, patch)?;
    Ok((refined, mt))
}
