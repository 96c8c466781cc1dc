//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

fn header_int(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format(format!("missing {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("{what} out of range")))
}

/// Decodes a P6 image to `[3,H,W]` or a P5 image to `[1,H,W]`, values `/255`.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::Format("not a PNM file".into()));
    }
    let channels = match bytes[1] {
        b'6' => 3,
        b'5' => 1,
        d @ b'1'..=b'4' => {
            return Err(Error::UnsupportedFormat(format!("P{}", d as char)));
        }
        _ => return Err(Error::Format("not a PNM file".into())),
    };
    let mut pos = 2;
    let w = header_int(bytes, &mut pos, "width")?;
    let h = header_int(bytes, &mut pos, "height")?;
    let maxval = header_int(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("empty image {w}x{h}")));
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing separator after header".into())),
    }
    let n = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let body = &bytes[pos..];
    if body.len() != n {
        return Err(Error::Format(format!(
            "expected {n} data bytes, found {}",
            body.len()
        )));
    }
    let plane = w * h;
    let mut data = vec![0.0f32; n];
    for (i, &b) in body.iter().enumerate() {
        data[(i % channels) * plane + i / channels] = b as f32 / 255.0;
    }
    Tensor::new(&[channels, h, w], data)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes `[3,H,W]` as P6 or `[1,H,W]` as P5, clamping and rounding half up.
pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = t.dims3()?;
    let magic = match c {
        3 => "P6",
        1 => "P5",
        _ => return Err(Error::Shape(format!("cannot encode {c} channels"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    out.reserve(plane * c);
    let d = t.data();
    for i in 0..plane {
        for ch in 0..c {
            out.push(quantize(d[ch * plane + i]));
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&std::fs::read(path)?)
}

pub fn write_image(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(t)?)?;
    Ok(())
}
