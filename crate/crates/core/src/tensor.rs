//! Dense row-major tensors and the handful of kernels the pipeline needs:
//! grouped convolution, batch normalization, activations, row softmax,
//! bilinear resampling and Gaussian filtering.

use crate::error::{Error, Result};

/// Dense row-major `f32` array with up to four extents. The innermost extent
/// is the image width.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::Shape(format!(
                "tensors have 1 to 4 extents, got {}",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero extent in {shape:?}")));
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("element count of {shape:?} overflows")))?;
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel]).expect("valid shape")
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let numel: usize = shape.iter().product();
        Self::new(shape, (0..numel).map(&mut f).collect()).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// `(C, H, W)` of a 3-d tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Shape(format!("expected [C,H,W], got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!("expected 2-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(Error::Shape(format!("expected 4-d tensor, got {:?}", self.shape))),
        }
    }

    /// Plane `c` of a `[C,H,W]` tensor.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape[self.shape.len() - 2] * self.shape[self.shape.len() - 1];
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Row `r` of a 2-d tensor.
    pub fn row(&self, r: usize) -> &[f32] {
        let w = self.shape[self.shape.len() - 1];
        &self.data[r * w..(r + 1) * w]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates `[C_i,H,W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let (_, h, w) = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?
            .dims3()?;
        let mut data = Vec::new();
        let mut c_total = 0;
        for p in parts {
            let (c, ph, pw) = p.dims3()?;
            if (ph, pw) != (h, w) {
                return Err(Error::Shape(format!(
                    "cannot concatenate {ph}x{pw} onto {h}x{w}"
                )));
            }
            c_total += c;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(&[c_total, h, w], data)
    }
}

/// Convolution weights and hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    /// `[C_out, C_in / groups, S, S]`
    pub weights: Tensor,
    /// `[C_out]`
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(
        weights: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        let spec = Self {
            weights,
            bias,
            stride,
            padding,
            groups,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (c_out, _, kh, kw) = self.weights.dims4()?;
        if kh != kw {
            return Err(Error::Shape(format!("kernel must be square, got {kh}x{kw}")));
        }
        if self.stride == 0 || self.groups == 0 {
            return Err(Error::InvalidArgument("stride and groups must be positive".into()));
        }
        if c_out % self.groups != 0 {
            return Err(Error::Shape(format!(
                "C_out {c_out} not divisible by groups {}",
                self.groups
            )));
        }
        if kh % 2 == 0 && self.stride != kh {
            return Err(Error::Shape(format!(
                "even kernel size {kh} is only allowed for patching convolutions (stride == size)"
            )));
        }
        if let Some(b) = &self.bias {
            if b.shape() != [c_out] {
                return Err(Error::Shape(format!(
                    "bias shape {:?} does not match C_out {c_out}",
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1] * self.groups
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn output_extent(&self, extent: usize) -> Result<usize> {
        let s = self.kernel_size();
        let padded = extent + 2 * self.padding;
        if padded < s {
            return Err(Error::Shape(format!(
                "input extent {extent} (padding {}) smaller than kernel {s}",
                self.padding
            )));
        }
        Ok((padded - s) / self.stride + 1)
    }

    pub fn param_count(&self) -> usize {
        self.weights.numel() + self.bias.as_ref().map_or(0, Tensor::numel)
    }
}

/// Inference-time batch normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub mu: Tensor,
    /// Running standard deviation, epsilon already folded in.
    pub sigma: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl BatchNormParams {
    pub fn identity(channels: usize) -> Self {
        Self {
            mu: Tensor::zeros(&[channels]),
            sigma: Tensor::full(&[channels], 1.0),
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.mu.numel()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for t in [&self.sigma, &self.gamma, &self.beta] {
            if t.numel() != c {
                return Err(Error::Shape("batchnorm parameter lengths differ".into()));
            }
        }
        for (channel, &value) in self.sigma.data().iter().enumerate() {
            // also rejects NaN
            if !(value > 0.0) {
                return Err(Error::NonPositiveSigma { channel, value });
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels()
    }
}

pub fn conv2d(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    let (c_in, h, w) = input.dims3()?;
    let (c_out, cin_g, s, _) = spec.weights.dims4()?;
    if c_in != cin_g * spec.groups {
        return Err(Error::Shape(format!(
            "input has {c_in} channels, convolution expects {}",
            cin_g * spec.groups
        )));
    }
    let ho = spec.output_extent(h)?;
    let wo = spec.output_extent(w)?;
    let cout_g = c_out / spec.groups;
    let (stride, pad) = (spec.stride, spec.padding as isize);
    let weights = spec.weights.data();
    let src = input.data();

    let mut out = vec![0.0f32; c_out * ho * wo];
    for (oc, plane) in out.chunks_exact_mut(ho * wo).enumerate() {
        if let Some(b) = &spec.bias {
            plane.fill(b.data()[oc]);
        }
        let g = oc / cout_g;
        for icg in 0..cin_g {
            let ic = g * cin_g + icg;
            let in_plane = &src[ic * h * w..(ic + 1) * h * w];
            for ky in 0..s {
                for kx in 0..s {
                    let wv = weights[((oc * cin_g + icg) * s + ky) * s + kx];
                    // valid output columns: 0 <= ox*stride + kx - pad < w
                    let off = kx as isize - pad;
                    let ox_lo = if off < 0 {
                        ((-off) as usize).div_ceil(stride)
                    } else {
                        0
                    };
                    let last = w as isize - 1 - off;
                    if last < 0 {
                        continue;
                    }
                    let ox_hi = (last as usize / stride + 1).min(wo);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut plane[oy * wo..(oy + 1) * wo];
                        if stride == 1 {
                            let start = (ox_lo as isize + off) as usize;
                            let src_row = &in_row[start..start + (ox_hi - ox_lo)];
                            for (o, &x) in out_row[ox_lo..ox_hi].iter_mut().zip(src_row) {
                                *o += wv * x;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = (ox * stride) as isize + off;
                                out_row[ox] += wv * in_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[c_out, ho, wo], out)
}

pub fn batchnorm(input: &Tensor, p: &BatchNormParams) -> Result<Tensor> {
    p.validate()?;
    let (c, h, w) = input.dims3()?;
    if c != p.channels() {
        return Err(Error::Shape(format!(
            "batchnorm has {} channels, input has {c}",
            p.channels()
        )));
    }
    let mut out = input.clone();
    for (ch, plane) in out.data_mut().chunks_exact_mut(h * w).enumerate() {
        let (mu, sigma) = (p.mu.data()[ch], p.sigma.data()[ch]);
        let (gamma, beta) = (p.gamma.data()[ch], p.beta.data()[ch]);
        for v in plane {
            *v = gamma * (*v - mu) / sigma + beta;
        }
    }
    Ok(out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = v.max(0.0);
    }
}

/// Numerically stable softmax over each row of a 2-d tensor.
pub fn softmax_rows(input: &Tensor) -> Result<Tensor> {
    let (rows, cols) = input.dims2()?;
    let mut out = input.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("softmax input"));
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v as f64;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v = (*v as f64 * inv) as f32;
        }
    }
    Ok(out)
}

/// Source index pair and interpolation weight for align-corners-false sampling.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i0 == i1 { 0.0 } else { (src - i0 as f64) as f32 };
            (i0, i1, frac)
        })
        .collect()
}

/// Bilinear resampling with align-corners-false geometry.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("output extents must be positive".into()));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(input.clone());
    }
    let xs = bilinear_taps(w, out_w);
    let ys = bilinear_taps(h, out_h);
    let mut out = vec![0.0f32; c * out_h * out_w];
    let mut tmp = vec![0.0f32; h * out_w];
    for ch in 0..c {
        let plane = input.channel(ch);
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            let dst = &mut tmp[y * out_w..(y + 1) * out_w];
            for (d, &(i0, i1, f)) in dst.iter_mut().zip(&xs) {
                let a = src[i0];
                *d = a + (src[i1] - a) * f;
            }
        }
        let out_plane = &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for (oy, &(i0, i1, f)) in ys.iter().enumerate() {
            let r0 = &tmp[i0 * out_w..(i0 + 1) * out_w];
            let r1 = &tmp[i1 * out_w..(i1 + 1) * out_w];
            let dst = &mut out_plane[oy * out_w..(oy + 1) * out_w];
            for ((d, &a), &b) in dst.iter_mut().zip(r0).zip(r1) {
                *d = a + (b - a) * f;
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Half-width of the discrete Gaussian support, `ceil(3 sigma)`.
pub fn gaussian_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Normalized 1-d Gaussian taps of length `2 ceil(3 sigma) + 1`.
pub fn gaussian_taps(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let r = gaussian_radius(sigma) as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// 2-d Gaussian kernel `[1,1,k,k]`, `k = 2 ceil(3 sigma) + 1`, entries summing to one.
pub fn gaussian_kernel(sigma: f64) -> Result<Tensor> {
    let taps = gaussian_taps(sigma)?;
    let k = taps.len();
    let data = (0..k * k)
        .map(|i| (taps[i / k] * taps[i % k]) as f32)
        .collect();
    Tensor::new(&[1, 1, k, k], data)
}

/// Reflect (mirror without edge repeat) an out-of-range index into `0..n`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Separable blur of every channel with symmetric taps and reflect padding.
/// Accumulates in `f64`, so constant planes come back bit-identical.
pub fn separable_blur(input: &Tensor, taps: &[f64]) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if taps.len() % 2 == 0 {
        return Err(Error::InvalidArgument("blur taps must have odd length".into()));
    }
    let r = taps.len() / 2;
    let center = taps[r];
    let mut out = vec![0.0f32; c * h * w];
    let mut vert = vec![0.0f32; h * w];
    let mut acc = vec![0.0f64; w.max(h)];
    let mut padded = vec![0.0f32; w + 2 * r];
    for ch in 0..c {
        let plane = input.channel(ch);
        // vertical pass
        for y in 0..h {
            let acc = &mut acc[..w];
            let row = &plane[y * w..(y + 1) * w];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a = center * v as f64;
            }
            for t in 1..=r {
                let wt = taps[r + t];
                let up = &plane[reflect_index(y as isize - t as isize, h) * w..][..w];
                let dn = &plane[reflect_index((y + t) as isize, h) * w..][..w];
                for ((a, &u), &d) in acc.iter_mut().zip(up).zip(dn) {
                    *a += wt * (u as f64 + d as f64);
                }
            }
            for (o, &a) in vert[y * w..(y + 1) * w].iter_mut().zip(acc.iter()) {
                *o = a as f32;
            }
        }
        // horizontal pass
        let out_plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let row = &vert[y * w..(y + 1) * w];
            for (i, p) in padded.iter_mut().enumerate() {
                *p = row[reflect_index(i as isize - r as isize, w)];
            }
            let acc = &mut acc[..w];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a = center * v as f64;
            }
            for t in 1..=r {
                let wt = taps[r + t];
                let left = &padded[r - t..r - t + w];
                let right = &padded[r + t..r + t + w];
                for ((a, &l), &rr) in acc.iter_mut().zip(left).zip(right) {
                    *a += wt * (l as f64 + rr as f64);
                }
            }
            for (o, &a) in out_plane[y * w..(y + 1) * w].iter_mut().zip(acc.iter()) {
                *o = a as f32;
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// Gaussian low-pass with reflect padding.
pub fn gaussian_blur(input: &Tensor, sigma: f64) -> Result<Tensor> {
    separable_blur(input, &gaussian_taps(sigma)?)
}

/// `a · b` for 2-d tensors `[m,k] x [k,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul [{m},{k}] x [{k2},{n}]")));
    }
    let mut out = vec![0.0f32; m * n];
    // SAFETY: slices are sized m*k, k*n and m*n with row-major strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            k as isize,
            1,
            b.data().as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Tensor::new(&[m, n], out)
}

/// `a · bᵀ` for `[m,k]` and `[n,k]`.
pub fn matmul_transposed(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul [{m},{k}] x [{n},{k2}]ᵀ")));
    }
    let mut out = vec![0.0f32; m * n];
    // SAFETY: b is read as a k x n matrix through transposed strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            k as isize,
            1,
            b.data().as_ptr(),
            1,
            k as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Tensor::new(&[m, n], out)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if factor == 0 {
        return Err(Error::InvalidArgument("upsampling factor must be positive".into()));
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = input.channel(ch);
        for y in 0..oh {
            let row = &plane[(y / factor) * w..(y / factor + 1) * w];
            out.extend(row.iter().flat_map(|&v| std::iter::repeat_n(v, factor)));
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

fn pool(input: &Tensor, k: usize, reduce: impl Fn(&mut dyn Iterator<Item = f32>) -> f32) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::Shape(format!("{h}x{w} is not divisible by pooling window {k}")));
    }
    let (oh, ow) = (h / k, w / k);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = input.channel(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut it = (0..k).flat_map(|dy| {
                    let start = (oy * k + dy) * w + ox * k;
                    plane[start..start + k].iter().copied()
                });
                out.push(reduce(&mut it));
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

/// Non-overlapping `k x k` average pooling.
pub fn avg_pool(input: &Tensor, k: usize) -> Result<Tensor> {
    if k == 1 {
        return Ok(input.clone());
    }
    let n = (k * k) as f64;
    pool(input, k, |it| (it.map(|v| v as f64).sum::<f64>() / n) as f32)
}

/// Non-overlapping `k x k` max pooling.
pub fn max_pool(input: &Tensor, k: usize) -> Result<Tensor> {
    if k == 1 {
        return Ok(input.clone());
    }
    pool(input, k, |it| it.fold(f32::NEG_INFINITY, f32::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn naive_conv(input: &Tensor, spec: &ConvSpec) -> Tensor {
        let (_, h, w) = input.dims3().unwrap();
        let (c_out, cin_g, s, _) = spec.weights.dims4().unwrap();
        let ho = (h + 2 * spec.padding - s) / spec.stride + 1;
        let wo = (w + 2 * spec.padding - s) / spec.stride + 1;
        let cout_g = c_out / spec.groups;
        let mut out = Tensor::zeros(&[c_out, ho, wo]);
        for oc in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = spec.bias.as_ref().map_or(0.0, |b| b.data()[oc] as f64);
                    for icg in 0..cin_g {
                        let ic = (oc / cout_g) * cin_g + icg;
                        for ky in 0..s {
                            for kx in 0..s {
                                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let wv = spec.weights.data()[((oc * cin_g + icg) * s + ky) * s + kx];
                                let xv = input.data()[(ic * h + iy as usize) * w + ix as usize];
                                acc += wv as f64 * xv as f64;
                            }
                        }
                    }
                    out.data_mut()[(oc * ho + oy) * wo + ox] = acc as f32;
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_1x1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 5, 7], &mut rng);
        let spec = ConvSpec::new(Tensor::full(&[1, 1, 1, 1], 1.0), None, 1, 0, 1).unwrap();
        assert_eq!(conv2d(&x, &spec).unwrap(), x);
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 4, 4], &mut rng);
        let spec = ConvSpec::new(random(&[1, 1, 3, 3], &mut rng), None, 1, 0, 1).unwrap();
        let got = conv2d(&x, &spec).unwrap();
        assert_eq!(got.shape(), &[1, 2, 2]);
        assert!(got.max_abs_diff(&naive_conv(&x, &spec)) < 1e-6);
    }

    #[test]
    fn conv_grouped_strided_padded_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, pad, groups, h, w) in [(2, 1, 2, 8, 8), (1, 1, 4, 5, 6), (2, 1, 1, 7, 9)] {
            let x = random(&[4, h, w], &mut rng);
            let spec = ConvSpec::new(
                random(&[8, 4 / groups, 3, 3], &mut rng),
                Some(random(&[8], &mut rng)),
                stride,
                pad,
                groups,
            )
            .unwrap();
            let got = conv2d(&x, &spec).unwrap();
            assert!(got.max_abs_diff(&naive_conv(&x, &spec)) < 1e-5);
        }
    }

    #[test]
    fn conv_zero_weights_give_zero_output() {
        let x = Tensor::full(&[2, 6, 6], 3.0);
        let spec = ConvSpec::new(Tensor::zeros(&[3, 2, 3, 3]), None, 1, 1, 1).unwrap();
        let y = conv2d(&x, &spec).unwrap();
        assert_eq!(y.shape(), &[3, 6, 6]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_depthwise_identity_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[3, 6, 5], &mut rng);
        let mut w = Tensor::zeros(&[3, 1, 3, 3]);
        for c in 0..3 {
            w.data_mut()[c * 9 + 4] = 1.0;
        }
        let spec = ConvSpec::new(w, None, 1, 1, 3).unwrap();
        assert_eq!(conv2d(&x, &spec).unwrap(), x);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Tensor::zeros(&[3, 4, 4]);
        let spec = ConvSpec::new(Tensor::zeros(&[2, 2, 3, 3]), None, 1, 0, 1).unwrap();
        assert!(matches!(conv2d(&x, &spec), Err(Error::Shape(_))));
        let spec = ConvSpec::new(Tensor::zeros(&[1, 3, 5, 5]), None, 1, 0, 1).unwrap();
        assert!(conv2d(&x, &spec).is_err());
        assert!(ConvSpec::new(Tensor::zeros(&[1, 3, 2, 2]), None, 1, 0, 1).is_err());
        assert!(ConvSpec::new(Tensor::zeros(&[3, 1, 2, 2]), None, 2, 0, 3).is_ok());
    }

    #[test]
    fn batchnorm_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 3, 3], &mut rng);
        assert_eq!(batchnorm(&x, &BatchNormParams::identity(2)).unwrap(), x);

        let mut p = BatchNormParams::identity(2);
        p.gamma = Tensor::zeros(&[2]);
        p.beta = Tensor::full(&[2], 5.0);
        assert!(batchnorm(&x, &p).unwrap().data().iter().all(|&v| v == 5.0));

        let p = BatchNormParams {
            mu: random(&[2], &mut rng),
            sigma: Tensor::from_fn(&[2], |_| rng.gen_range(0.5..2.0)),
            gamma: random(&[2], &mut rng),
            beta: random(&[2], &mut rng),
        };
        let y = batchnorm(&x, &p).unwrap();
        for c in 0..2 {
            for i in 0..9 {
                let v = x.data()[c * 9 + i] as f64;
                let want = p.gamma.data()[c] as f64 * (v - p.mu.data()[c] as f64)
                    / p.sigma.data()[c] as f64
                    + p.beta.data()[c] as f64;
                assert!((y.data()[c * 9 + i] as f64 - want).abs() < 1e-6);
            }
        }

        let mut bad = BatchNormParams::identity(2);
        bad.sigma.data_mut()[1] = 0.0;
        assert!(matches!(
            batchnorm(&x, &bad),
            Err(Error::NonPositiveSigma { channel: 1, .. })
        ));
    }

    #[test]
    fn relu_cases() {
        let t = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(&[4], -0.5);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::full(&[4], 0.5);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn softmax_cases() {
        let t = Tensor::full(&[3, 4], 7.0);
        let s = softmax_rows(&t).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));

        let t = Tensor::new(&[1, 2], vec![0.0, 2f32.ln()]).unwrap();
        let s = softmax_rows(&t).unwrap();
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-6);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-6);

        let t = Tensor::new(&[1, 2], vec![f32::NAN, 0.0]).unwrap();
        assert!(matches!(softmax_rows(&t), Err(Error::NonFinite(_))));
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[2, 5, 7], &mut rng);
        assert_eq!(bilinear_resize(&x, 5, 7).unwrap(), x);
        let c = Tensor::full(&[1, 4, 6], 0.3);
        for (h, w) in [(1, 1), (8, 12), (3, 17)] {
            let y = bilinear_resize(&c, h, w).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.3));
        }
    }

    #[test]
    fn bilinear_upsample_matches_sampling_formula() {
        let x = Tensor::new(&[1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_resize(&x, 4, 4).unwrap();
        let sample = |v: f64| -> (usize, usize, f64) {
            let s = ((v + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
            let i0 = s.floor() as usize;
            (i0, (i0 + 1).min(1), s - i0 as f64)
        };
        for oy in 0..4 {
            for ox in 0..4 {
                let (y0, y1, fy) = sample(oy as f64);
                let (x0, x1, fx) = sample(ox as f64);
                let at = |yy: usize, xx: usize| x.data()[yy * 2 + xx] as f64;
                let want = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                    + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
                assert!((y.data()[oy * 4 + ox] as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gaussian_kernel_properties() {
        for sigma in [0.3, 0.8, 1.5, 4.0, 12.7] {
            let k = gaussian_kernel(sigma).unwrap();
            let size = 2 * (3.0f64 * sigma).ceil() as usize + 1;
            assert_eq!(k.shape(), &[1, 1, size, size]);
            let sum: f64 = k.data().iter().map(|&v| v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        assert!(gaussian_kernel(0.0).is_err());
        assert!(gaussian_kernel(-1.0).is_err());
    }

    #[test]
    fn narrow_gaussian_is_near_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::from_fn(&[1, 16, 16], |_| rng.gen_range(0.0..1.0));
        // direct 2-d convolution with the computed kernel
        let k = gaussian_kernel(0.3).unwrap();
        let ks = k.shape()[2];
        let r = ks / 2;
        let mut y = Tensor::zeros(&[1, 16, 16]);
        for yy in 0..16 {
            for xx in 0..16 {
                let mut acc = 0.0f64;
                for ky in 0..ks {
                    for kx in 0..ks {
                        let sy = reflect_index(yy as isize + ky as isize - r as isize, 16);
                        let sx = reflect_index(xx as isize + kx as isize - r as isize, 16);
                        acc += k.data()[ky * ks + kx] as f64 * x.data()[sy * 16 + sx] as f64;
                    }
                }
                y.data_mut()[yy * 16 + xx] = acc as f32;
            }
        }
        assert!(y.max_abs_diff(&x) < 0.05);
        assert!(gaussian_blur(&x, 0.3).unwrap().max_abs_diff(&y) < 1e-6);
    }

    #[test]
    fn blur_preserves_constants() {
        let c = Tensor::full(&[3, 9, 13], 0.731);
        for sigma in [0.5, 1.0, 3.3, 10.0] {
            assert_eq!(gaussian_blur(&c, sigma).unwrap(), c);
        }
    }

    #[test]
    fn reflect_index_mirrors() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(9, 5), 1);
        assert_eq!(reflect_index(-7, 3), 1);
        assert_eq!(reflect_index(4, 1), 0);
    }

    #[test]
    fn matmul_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random(&[5, 7], &mut rng);
        let b = random(&[7, 3], &mut rng);
        let c = matmul(&a, &b).unwrap();
        let bt = Tensor::from_fn(&[3, 7], |i| b.data()[(i % 7) * 3 + i / 7]);
        let c2 = matmul_transposed(&a, &bt).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let want: f32 = (0..7).map(|k| a.data()[i * 7 + k] * b.data()[k * 3 + j]).sum();
                assert!((c.data()[i * 3 + j] - want).abs() < 1e-5);
                assert!((c2.data()[i * 3 + j] - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn pooling_and_upsampling() {
        let x = Tensor::new(&[1, 2, 4], vec![1.0, 2.0, 0.0, 0.0, 3.0, 4.0, 0.0, 1.0]).unwrap();
        assert_eq!(avg_pool(&x, 2).unwrap().data(), &[2.5, 0.25]);
        assert_eq!(max_pool(&x, 2).unwrap().data(), &[4.0, 1.0]);
        assert!(avg_pool(&x, 3).is_err());
        let up = upsample_nearest(&x, 2).unwrap();
        assert_eq!(up.shape(), &[1, 4, 8]);
        assert_eq!(max_pool(&up, 2).unwrap(), x);
        assert_eq!(avg_pool(&up, 2).unwrap(), x);
    }

    #[test]
    fn tensor_rejects_invalid_shapes() {
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(&[0, 2], vec![]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
    }
}
