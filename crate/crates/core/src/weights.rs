//! The RTHD weight container and the mapping between models and named
//! tensors.
//!
//! Layout, all integers `u32` little-endian:
//! `"RTHD" | version | count | count x (name_len | name | ndim | dims.. | f32 data..)`.

use std::path::Path;

use crate::attention::{NpmWeights, ProjectionWeights};
use crate::coarse::{ConvBn, CoarseModel, RepBlock, Stage, DEFAULT_FEATURE_TAP, STAGE_PLAN};
use crate::error::{Error, Result};
use crate::pipeline::InpaintModel;
use crate::tensor::{BatchNormParams, ConvSpec, Tensor};

pub const MAGIC: &[u8; 4] = b"RTHD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightContainer {
    pub tensors: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl WeightContainer {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("bad magic, expected RTHD".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedFormat(format!("RTHD version {version}")));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_owned();
            let ndim = r.u32("rank")? as usize;
            if !(1..=4).contains(&ndim) {
                return Err(Error::Format(format!("{name}: rank {ndim} outside 1..=4")));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32("dims")? as usize);
            }
            let bytes_needed = dims
                .iter()
                .try_fold(4usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("{name}: dims {dims:?} overflow")))?;
            let raw = r.take(bytes_needed, &name)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(&dims, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { tensors })
    }
}

fn push_bn(c: &mut WeightContainer, prefix: &str, bn: &BatchNormParams) {
    c.push(format!("{prefix}.mu"), bn.mu.clone());
    c.push(format!("{prefix}.sigma"), bn.sigma.clone());
    c.push(format!("{prefix}.gamma"), bn.gamma.clone());
    c.push(format!("{prefix}.beta"), bn.beta.clone());
}

fn push_conv(c: &mut WeightContainer, prefix: &str, conv: &ConvSpec) {
    c.push(format!("{prefix}.w"), conv.weights.clone());
    if let Some(b) = &conv.bias {
        c.push(format!("{prefix}.b"), b.clone());
    }
}

fn push_stage(c: &mut WeightContainer, block: usize, name: &str, stage: &Stage) {
    let prefix = format!("b{block}.{name}");
    match stage {
        Stage::Fused(conv) => push_conv(c, &prefix, conv),
        Stage::Branched { main, skip } => {
            push_conv(c, &prefix, &main.conv);
            push_bn(c, &format!("{prefix}.bn"), &main.bn);
            if let Some(skip) = skip {
                push_bn(c, &format!("b{block}.skip.bn"), skip);
            }
        }
    }
}

impl From<&InpaintModel> for WeightContainer {
    fn from(model: &InpaintModel) -> Self {
        let mut c = WeightContainer::default();
        for (i, b) in model.coarse.blocks.iter().enumerate() {
            push_stage(&mut c, i, "main", &b.main);
            push_stage(&mut c, i, "point", &b.point);
        }
        push_conv(&mut c, "head", &model.coarse.head);
        c.push("npm.embed", model.npm.embed.clone());
        c.push("npm.wq", model.npm.projection.query.clone());
        c.push("npm.wk", model.npm.projection.key.clone());
        c
    }
}

fn read_bn(c: &WeightContainer, prefix: &str) -> Result<BatchNormParams> {
    Ok(BatchNormParams {
        mu: c.require(&format!("{prefix}.mu"))?.clone(),
        sigma: c.require(&format!("{prefix}.sigma"))?.clone(),
        gamma: c.require(&format!("{prefix}.gamma"))?.clone(),
        beta: c.require(&format!("{prefix}.beta"))?.clone(),
    })
}

fn read_conv(
    c: &WeightContainer,
    prefix: &str,
    stride: usize,
    depthwise: bool,
) -> Result<ConvSpec> {
    let w = c.require(&format!("{prefix}.w"))?.clone();
    let (c_out, _, k, _) = w.dims4()?;
    let bias = c.get(&format!("{prefix}.b")).cloned();
    let groups = if depthwise { c_out } else { 1 };
    ConvSpec::new(w, bias, stride, k / 2, groups)
}

fn read_stage(
    c: &WeightContainer,
    block: usize,
    name: &str,
    stride: usize,
    depthwise: bool,
) -> Result<Stage> {
    let prefix = format!("b{block}.{name}");
    let conv = read_conv(c, &prefix, stride, depthwise)?;
    if !c.contains(&format!("{prefix}.bn.mu")) {
        return Ok(Stage::Fused(conv));
    }
    let bn = read_bn(c, &format!("{prefix}.bn"))?;
    let skip_prefix = format!("b{block}.skip.bn");
    let skip = if depthwise && c.contains(&format!("{skip_prefix}.mu")) {
        Some(read_bn(c, &skip_prefix)?)
    } else {
        None
    };
    Ok(Stage::Branched {
        main: ConvBn { conv, bn },
        skip,
    })
}

impl TryFrom<&WeightContainer> for InpaintModel {
    type Error = Error;

    fn try_from(c: &WeightContainer) -> Result<Self> {
        let blocks = STAGE_PLAN
            .iter()
            .enumerate()
            .map(|(i, &(_, _, stride, upsample))| {
                let block = RepBlock {
                    upsample,
                    main: read_stage(c, i, "main", stride, true)?,
                    point: read_stage(c, i, "point", 1, false)?,
                };
                block.validate()?;
                Ok(block)
            })
            .collect::<Result<Vec<_>>>()?;
        let coarse = CoarseModel {
            blocks,
            head: read_conv(c, "head", 1, false)?,
            feature_tap: DEFAULT_FEATURE_TAP,
        };
        coarse.validate()?;
        let npm = NpmWeights {
            embed: c.require("npm.embed")?.clone(),
            projection: ProjectionWeights {
                query: c.require("npm.wq")?.clone(),
                key: c.require("npm.wk")?.clone(),
            },
        };
        npm.validate()?;
        if npm.feature_channels() != coarse.feature_channels() {
            return Err(Error::Shape(format!(
                "attention expects {} feature channels, network taps {}",
                npm.feature_channels(),
                coarse.feature_channels()
            )));
        }
        Ok(InpaintModel { coarse, npm })
    }
}

pub fn save_weights(model: &InpaintModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, WeightContainer::from(model).to_bytes())?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<InpaintModel> {
    InpaintModel::try_from(&WeightContainer::from_bytes(&std::fs::read(path)?)?)
}
