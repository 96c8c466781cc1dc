//! Patch extraction and reassembly.
//!
//! [`img2col`] splits an image into non-overlapping patches with a single
//! strided grouped convolution whose kernels are identity selectors, so no
//! permute/reshape pass over the image is needed. [`pixel_shuffle`] is its
//! exact inverse.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, matmul, ConvSpec, Tensor};

/// Flattened non-overlapping patches, one per row, channel-major within a
/// patch (all of channel 0 row-major, then channel 1, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    /// `[N, channels * patch_h * patch_w]`
    pub patches: Tensor,
    pub rows: usize,
    pub cols: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub channels: usize,
}

impl PatchSequence {
    pub fn new(
        patches: Tensor,
        rows: usize,
        cols: usize,
        patch_h: usize,
        patch_w: usize,
        channels: usize,
    ) -> Result<Self> {
        let seq = Self {
            patches,
            rows,
            cols,
            patch_h,
            patch_w,
            channels,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.patches.dims2()?;
        if n != self.rows * self.cols || d != self.channels * self.patch_h * self.patch_w {
            return Err(Error::Shape(format!(
                "patch matrix [{n},{d}] does not match a {}x{} grid of {}x{}x{} patches",
                self.rows, self.cols, self.channels, self.patch_h, self.patch_w
            )));
        }
        Ok(())
    }

    /// Number of patches, `N = HW / P²`.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.channels * self.patch_h * self.patch_w
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        self.patches.row(i)
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.rows * self.patch_h, self.cols * self.patch_w)
    }
}

/// Per-patch corruption flags, `true` when any pixel of the patch is corrupted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskVector(pub Vec<bool>);

impl MaskVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn corrupted_count(&self) -> usize {
        self.0.iter().filter(|&&m| m).count()
    }

    pub fn is_corrupted(&self, i: usize) -> bool {
        self.0[i]
    }
}

/// Patch embeddings with the conditioning features appended column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    /// `[N, d_k + C]`
    pub x: Tensor,
    pub d_k: usize,
    pub feature_channels: usize,
    pub rows: usize,
    pub cols: usize,
}

fn check_divisible(h: usize, w: usize, ph: usize, pw: usize) -> Result<()> {
    if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Shape(format!(
            "{h}x{w} image is not divisible into {ph}x{pw} patches"
        )));
    }
    Ok(())
}

/// The identity-selector kernels: output channel `k` of each group picks
/// kernel position `(k / P, k % P)`, repeated once per input channel.
pub fn img2col_weights(channels: usize, patch: usize) -> Result<Tensor> {
    let p2 = patch * patch;
    let mut w = vec![0.0f32; channels * p2 * p2];
    for c in 0..channels {
        for k in 0..p2 {
            w[(c * p2 + k) * p2 + k] = 1.0;
        }
    }
    Tensor::new(&[channels * p2, 1, patch, patch], w)
}

/// Splits a `[C,H,W]` image into `P x P` patches via a stride-`P` grouped
/// convolution with identity-selector weights.
pub fn img2col(image: &Tensor, patch: usize) -> Result<PatchSequence> {
    let (c, h, w) = image.dims3()?;
    check_divisible(h, w, patch, patch)?;
    let spec = ConvSpec::new(img2col_weights(c, patch)?, None, patch, 0, c)?;
    let cols_img = conv2d(image, &spec)?;
    let (rows, cols) = (h / patch, w / patch);
    let n = rows * cols;
    let d = c * patch * patch;
    // [d, rows, cols] -> [n, d]
    let src = cols_img.data();
    let mut out = vec![0.0f32; n * d];
    for k in 0..d {
        for i in 0..n {
            out[i * d + k] = src[k * n + i];
        }
    }
    PatchSequence::new(Tensor::new(&[n, d], out)?, rows, cols, patch, patch, c)
}

/// Block-copy extraction of rectangular `patch_h x patch_w` patches. Produces
/// the same layout as [`img2col`]; used for the large high-resolution tiles
/// where a dense selector convolution would cost `O(P⁴)` per patch.
pub fn extract_patches(image: &Tensor, patch_h: usize, patch_w: usize) -> Result<PatchSequence> {
    let (c, h, w) = image.dims3()?;
    check_divisible(h, w, patch_h, patch_w)?;
    let (rows, cols) = (h / patch_h, w / patch_w);
    let d = c * patch_h * patch_w;
    let mut out = vec![0.0f32; rows * cols * d];
    for ch in 0..c {
        let plane = image.channel(ch);
        for y in 0..h {
            let (r, dy) = (y / patch_h, y % patch_h);
            for col in 0..cols {
                let i = r * cols + col;
                let dst = i * d + (ch * patch_h + dy) * patch_w;
                let src = y * w + col * patch_w;
                out[dst..dst + patch_w].copy_from_slice(&plane[src..src + patch_w]);
            }
        }
    }
    PatchSequence::new(Tensor::new(&[rows * cols, d], out)?, rows, cols, patch_h, patch_w, c)
}

/// Rearranges a patch sequence back into a `[C,H,W]` image.
pub fn pixel_shuffle(seq: &PatchSequence) -> Result<Tensor> {
    seq.validate()?;
    let (ph, pw, c) = (seq.patch_h, seq.patch_w, seq.channels);
    let (h, w) = seq.image_dims();
    let d = seq.dim();
    let src = seq.patches.data();
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let (r, dy) = (y / ph, y % ph);
            for col in 0..seq.cols {
                let i = r * seq.cols + col;
                let s = i * d + (ch * ph + dy) * pw;
                let dst = y * w + col * pw;
                plane[dst..dst + pw].copy_from_slice(&src[s..s + pw]);
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// OR-reduces a binary `[1,H,W]` mask (1 = corrupted) over each `P x P` patch.
pub fn tokenize_mask(mask: &Tensor, patch: usize) -> Result<MaskVector> {
    let (c, h, w) = mask.dims3()?;
    if c != 1 {
        return Err(Error::Shape(format!("mask must have one channel, got {c}")));
    }
    check_divisible(h, w, patch, patch)?;
    let cols = w / patch;
    let mut m = vec![false; (h / patch) * cols];
    for (idx, &v) in mask.data().iter().enumerate() {
        if v == 1.0 {
            let (y, x) = (idx / w, idx % w);
            m[(y / patch) * cols + x / patch] = true;
        } else if v != 0.0 {
            return Err(Error::NonBinaryMask(v));
        }
    }
    Ok(MaskVector(m))
}

/// `X[i] = concat(p_i · E, F[:, r_i, c_i])`.
///
/// `embed` is `[C·P², d_k]`; `features` is `[C_f, rows, cols]` or `None` for
/// unconditioned tokens.
pub fn embed_and_condition(
    seq: &PatchSequence,
    features: Option<&Tensor>,
    embed: &Tensor,
) -> Result<TokenMatrix> {
    let (d_in, d_k) = embed.dims2()?;
    if d_in != seq.dim() {
        return Err(Error::Shape(format!(
            "embedding expects {d_in}-wide patches, got {}",
            seq.dim()
        )));
    }
    let emb = matmul(&seq.patches, embed)?;
    let Some(features) = features else {
        return Ok(TokenMatrix {
            x: emb,
            d_k,
            feature_channels: 0,
            rows: seq.rows,
            cols: seq.cols,
        });
    };
    let (cf, fr, fc) = features.dims3()?;
    if (fr, fc) != (seq.rows, seq.cols) {
        return Err(Error::Shape(format!(
            "features {fr}x{fc} do not match the {}x{} patch grid",
            seq.rows, seq.cols
        )));
    }
    let n = seq.len();
    let width = d_k + cf;
    let mut x = vec![0.0f32; n * width];
    for i in 0..n {
        x[i * width..i * width + d_k].copy_from_slice(emb.row(i));
        for c in 0..cf {
            x[i * width + d_k + c] = features.data()[c * n + i];
        }
    }
    Ok(TokenMatrix {
        x: Tensor::new(&[n, width], x)?,
        d_k,
        feature_channels: cf,
        rows: seq.rows,
        cols: seq.cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[c, h, w], |_| rng.gen_range(0.0..1.0))
    }

    fn naive_slices(img: &Tensor, p: usize) -> Vec<Vec<f32>> {
        let (c, h, w) = img.dims3().unwrap();
        let mut out = vec![];
        for r in 0..h / p {
            for col in 0..w / p {
                let mut v = vec![];
                for ch in 0..c {
                    for dy in 0..p {
                        for dx in 0..p {
                            v.push(img.data()[(ch * h + r * p + dy) * w + col * p + dx]);
                        }
                    }
                }
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn whole_image_patch() {
        let img = random_image(3, 4, 4, 1);
        let seq = img2col(&img, 4).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.patch(0), img.data());
    }

    #[test]
    fn small_image_matches_slicing() {
        let img = random_image(3, 4, 4, 2);
        let seq = img2col(&img, 2).unwrap();
        assert_eq!(seq.len(), 4);
        for (i, want) in naive_slices(&img, 2).iter().enumerate() {
            assert_eq!(seq.patch(i), &want[..]);
        }
    }

    #[test]
    fn constant_image_gives_constant_patches() {
        let img = Tensor::full(&[3, 8, 16], 0.4);
        let seq = img2col(&img, 4).unwrap();
        assert!(seq.patches.data().iter().all(|&v| v == 0.4));
    }

    #[test]
    fn round_trip_and_block_copy_agree() {
        let img = random_image(3, 16, 16, 3);
        let seq = img2col(&img, 8).unwrap();
        assert_eq!(pixel_shuffle(&seq).unwrap(), img);
        assert_eq!(extract_patches(&img, 8, 8).unwrap(), seq);
    }

    #[test]
    fn swapped_patches_swap_blocks() {
        let img = random_image(3, 8, 12, 4);
        let mut seq = img2col(&img, 4).unwrap();
        let d = seq.dim();
        let (a, b) = (0usize, 4usize);
        let data = seq.patches.data_mut();
        for k in 0..d {
            data.swap(a * d + k, b * d + k);
        }
        let out = pixel_shuffle(&seq).unwrap();
        // patch 0 = grid (0,0), patch 4 = grid (1,1); manual block swap
        let mut want = img.clone();
        for ch in 0..3 {
            for dy in 0..4 {
                for dx in 0..4 {
                    let p0 = (ch * 8 + dy) * 12 + dx;
                    let p4 = (ch * 8 + 4 + dy) * 12 + 4 + dx;
                    want.data_mut()[p0] = img.data()[p4];
                    want.data_mut()[p4] = img.data()[p0];
                }
            }
        }
        assert_eq!(out, want);
    }

    #[test]
    fn zero_sequence_gives_zero_image() {
        let seq = PatchSequence::new(Tensor::zeros(&[6, 12]), 2, 3, 2, 2, 3).unwrap();
        let img = pixel_shuffle(&seq).unwrap();
        assert_eq!(img.shape(), &[3, 4, 6]);
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divisibility_is_enforced() {
        let img = random_image(3, 10, 8, 5);
        assert!(img2col(&img, 4).is_err());
        assert!(extract_patches(&img, 3, 3).is_err());
        assert!(tokenize_mask(&Tensor::zeros(&[1, 10, 8]), 4).is_err());
    }

    #[test]
    fn mask_tokenization() {
        let m = Tensor::zeros(&[1, 8, 8]);
        assert_eq!(tokenize_mask(&m, 4).unwrap(), MaskVector(vec![false; 4]));

        let mut m = Tensor::zeros(&[1, 8, 8]);
        m.data_mut()[5 * 8 + 6] = 1.0;
        assert_eq!(
            tokenize_mask(&m, 4).unwrap(),
            MaskVector(vec![false, false, false, true])
        );

        m.data_mut()[0] = 0.3;
        assert!(matches!(tokenize_mask(&m, 4), Err(Error::NonBinaryMask(_))));
    }

    #[test]
    fn embedding_cases() {
        let img = random_image(3, 8, 8, 6);
        let seq = img2col(&img, 4).unwrap();
        let feats = random_image(2, 2, 2, 7);

        let zero = embed_and_condition(&seq, Some(&feats), &Tensor::zeros(&[48, 5])).unwrap();
        assert_eq!(zero.x.shape(), &[4, 7]);
        for i in 0..4 {
            assert!(zero.x.row(i)[..5].iter().all(|&v| v == 0.0));
            assert_eq!(zero.x.row(i)[5..], [feats.data()[i], feats.data()[4 + i]]);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = Tensor::from_fn(&[48, 5], |_| rng.gen_range(-1.0..1.0));
        let plain = embed_and_condition(&seq, None, &e).unwrap();
        assert_eq!(plain.x, matmul(&seq.patches, &e).unwrap());
        assert_eq!(plain.feature_channels, 0);

        let full = embed_and_condition(&seq, Some(&feats), &e).unwrap();
        for i in 0..4 {
            for k in 0..5 {
                let want: f64 = (0..48)
                    .map(|j| seq.patch(i)[j] as f64 * e.data()[j * 5 + k] as f64)
                    .sum();
                assert!((full.x.row(i)[k] as f64 - want).abs() < 1e-6);
            }
            let (r, c) = (i / 2, i % 2);
            assert_eq!(full.x.row(i)[5], feats.data()[r * 2 + c]);
            assert_eq!(full.x.row(i)[6], feats.data()[4 + r * 2 + c]);
        }

        assert!(embed_and_condition(&seq, Some(&random_image(2, 3, 2, 9)), &e).is_err());
        assert!(embed_and_condition(&seq, None, &Tensor::zeros(&[12, 5])).is_err());
    }
}
