//! Declarative network descriptions and their text manifest.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::HeadKind;

/// Model size. Each version has a weighted-layer budget that is divided by
/// the desk-scale factor at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Version {
    V1,
    V2,
    V3,
    V4,
}

impl Version {
    pub const ALL: [Version; 4] = [Version::V1, Version::V2, Version::V3, Version::V4];

    /// Full-size weighted-layer budget.
    pub fn layer_budget(self) -> usize {
        match self {
            Version::V1 => 128,
            Version::V2 => 256,
            Version::V3 => 512,
            Version::V4 => 1024,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Version::V1 => "v1",
            Version::V2 => "v2",
            Version::V3 => "v3",
            Version::V4 => "v4",
        }
    }

    /// Weighted layers after dividing the budget by `desk_scale`.
    pub fn desk_layers(self, desk_scale: usize) -> Result<usize> {
        let budget = self.layer_budget();
        if desk_scale == 0 || budget % desk_scale != 0 {
            return Err(Error::Config(format!(
                "desk_scale {desk_scale} does not divide the {} budget of {budget} layers",
                self.as_str()
            )));
        }
        let layers = budget / desk_scale;
        if layers < 8 {
            return Err(Error::Config(format!(
                "{} at desk_scale {desk_scale} leaves {layers} weighted layers; at least 8 are required",
                self.as_str()
            )));
        }
        Ok(layers)
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Version {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Version::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown version `{s}` (expected v1..v4)")))
    }
}

/// Block structure compared across architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// Stacked conv-BN-ReLU layers without skips.
    Plain,
    /// Pre-activation residual blocks with identity skips.
    Residual,
    /// Residual blocks with combined kernels, stochastic pooling, gated
    /// stochastic connectivity and auxiliary heads.
    Alpha,
}

impl Structure {
    pub const ALL: [Structure; 3] = [Structure::Plain, Structure::Residual, Structure::Alpha];

    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Plain => "plain",
            Structure::Residual => "residual",
            Structure::Alpha => "alpha",
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Structure::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown structure `{s}`")))
    }
}

/// How alpha blocks shrink the map at a stage transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Downsampling {
    /// Strided convolution followed by 2×2 stochastic pooling.
    Pool,
    /// Strided convolution only (what residual blocks do).
    Stride,
}

impl fmt::Display for Downsampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Downsampling::Pool => "pool",
            Downsampling::Stride => "stride",
        })
    }
}

impl FromStr for Downsampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pool" => Ok(Downsampling::Pool),
            "stride" => Ok(Downsampling::Stride),
            other => Err(Error::Config(format!("unknown downsampling `{other}`"))),
        }
    }
}

/// Knobs that shape a network besides version and structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetOptions {
    pub in_channels: usize,
    /// Channels of the first stage; each later stage doubles it.
    pub width: usize,
    /// Probability of each optional same-stage edge (alpha only).
    pub p_extra: f64,
    pub downsample_stride: usize,
    /// Kernel sizes of the combined convolution (alpha only).
    pub kernel_pair: (usize, usize),
    pub downsampling: Downsampling,
    /// Auxiliary heads on the last block of every stage but the final one
    /// (alpha only).
    pub aux_heads: bool,
    pub head: HeadKind,
}

impl Default for NetOptions {
    fn default() -> Self {
        NetOptions {
            in_channels: 3,
            width: 8,
            p_extra: 0.5,
            downsample_stride: 2,
            kernel_pair: (5, 10),
            downsampling: Downsampling::Pool,
            aux_heads: true,
            head: HeadKind::Cosine,
        }
    }
}

/// One block in execution order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub index: usize,
    pub structure: Structure,
    pub stage: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub downsample: bool,
    pub has_aux_head: bool,
}

/// A directed edge between blocks with its (initial) gate logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeGate {
    pub source: usize,
    pub target: usize,
    pub gate_logit: f64,
}

/// Blocks per stage and the channel width of each stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub blocks_per_stage: Vec<usize>,
    pub channels: Vec<usize>,
}

impl StagePlan {
    /// Spreads `blocks` over at most four stages, earlier stages taking the
    /// remainder; channels double per stage.
    pub fn new(blocks: usize, width: usize) -> Self {
        let stages = blocks.clamp(1, 4);
        let blocks_per_stage = (0..stages)
            .map(|s| blocks / stages + usize::from(s < blocks % stages))
            .collect();
        let channels = (0..stages).map(|s| width << s).collect();
        StagePlan {
            blocks_per_stage,
            channels,
        }
    }

    pub fn stages(&self) -> usize {
        self.blocks_per_stage.len()
    }

    /// Stage index of every block, in order.
    pub fn block_stages(&self) -> Vec<usize> {
        self.blocks_per_stage
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| std::iter::repeat(s).take(n))
            .collect()
    }
}

/// Complete, seed-determined description of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub version: Version,
    pub structure: Structure,
    pub desk_scale: usize,
    pub seed: u64,
    pub num_classes: usize,
    pub options: NetOptions,
    pub weighted_layers: usize,
    pub stages: StagePlan,
    pub blocks: Vec<BlockSpec>,
    pub edges: Vec<EdgeGate>,
}

impl NetworkSpec {
    /// Incoming edges of `target`, sources ascending.
    pub fn incoming(&self, target: usize) -> impl Iterator<Item = &EdgeGate> {
        self.edges.iter().filter(move |e| e.target == target)
    }

    /// Smallest square input the stage plan accepts: one pixel per strided
    /// transition. Pooling clips partial regions, so it imposes no extra bound.
    pub fn min_input_size(&self) -> usize {
        let transitions = self.blocks.iter().filter(|b| b.downsample).count() as u32;
        self.options.downsample_stride.pow(transitions).max(1)
    }

    /// Text manifest: configuration, blocks, edges. Parameter shapes are
    /// appended by [`Network::manifest`](crate::net::Network::manifest).
    pub fn to_manifest(&self) -> String {
        let o = &self.options;
        let mut s = String::new();
        let _ = writeln!(s, "alphanet-manifest 1");
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "structure = {}", self.structure);
        let _ = writeln!(s, "desk_scale = {}", self.desk_scale);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "in_channels = {}", o.in_channels);
        let _ = writeln!(s, "width = {}", o.width);
        let _ = writeln!(s, "p_extra = {}", o.p_extra);
        let _ = writeln!(s, "downsample_stride = {}", o.downsample_stride);
        let _ = writeln!(s, "kernel_pair = {},{}", o.kernel_pair.0, o.kernel_pair.1);
        let _ = writeln!(s, "downsampling = {}", o.downsampling);
        let _ = writeln!(s, "aux_heads = {}", o.aux_heads);
        let head = match o.head {
            HeadKind::Affine => "affine",
            HeadKind::Cosine => "cosine",
        };
        let _ = writeln!(s, "head = {head}");
        let _ = writeln!(s, "weighted_layers = {}", self.weighted_layers);
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "stage_blocks = {}", join(&self.stages.blocks_per_stage));
        let _ = writeln!(s, "stage_channels = {}", join(&self.stages.channels));
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "block {} {} stage={} in={} out={} downsample={} aux={}",
                b.index, b.structure, b.stage, b.in_ch, b.out_ch, b.downsample, b.has_aux_head
            );
        }
        for e in &self.edges {
            let _ = writeln!(s, "edge {} -> {} logit={:e}", e.source, e.target, e.gate_logit);
        }
        s
    }

    /// Parses the lines written by [`to_manifest`](Self::to_manifest).
    /// Lines it does not know (parameter shapes) are ignored.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format(format!("manifest: {msg}"));
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("alphanet-manifest 1") {
            return Err(bad("missing `alphanet-manifest 1` header".into()));
        }
        let mut kv = std::collections::BTreeMap::new();
        let mut blocks = Vec::new();
        let mut edges = Vec::new();
        for line in lines {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("block ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 7 {
                    return Err(bad(format!("malformed block line `{line}`")));
                }
                let field = |i: usize, key: &str| -> Result<&str> {
                    f[i].strip_prefix(key)
                        .ok_or_else(|| bad(format!("expected `{key}` in `{line}`")))
                };
                let num = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{e} in `{line}`")));
                let flag = |v: &str| v.parse::<bool>().map_err(|e| bad(format!("{e} in `{line}`")));
                blocks.push(BlockSpec {
                    index: num(f[0])?,
                    structure: f[1].parse()?,
                    stage: num(field(2, "stage=")?)?,
                    in_ch: num(field(3, "in=")?)?,
                    out_ch: num(field(4, "out=")?)?,
                    downsample: flag(field(5, "downsample=")?)?,
                    has_aux_head: flag(field(6, "aux=")?)?,
                });
            } else if let Some(rest) = line.strip_prefix("edge ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                let parsed = (|| -> Option<EdgeGate> {
                    if f.len() != 4 || f[1] != "->" {
                        return None;
                    }
                    Some(EdgeGate {
                        source: f[0].parse().ok()?,
                        target: f[2].parse().ok()?,
                        gate_logit: f[3].strip_prefix("logit=")?.parse().ok()?,
                    })
                })();
                edges.push(parsed.ok_or_else(|| bad(format!("malformed edge line `{line}`")))?);
            } else if let Some((k, v)) = line.split_once(" = ") {
                kv.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| bad(format!("missing `{k}`")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| bad(format!("{k}: {e}"))) };
        let list = |k: &str| -> Result<Vec<usize>> {
            get(k)?
                .split(',')
                .map(|x| x.parse().map_err(|e| bad(format!("{k}: {e}"))))
                .collect()
        };
        let pair = list("kernel_pair")?;
        if pair.len() != 2 {
            return Err(bad("kernel_pair needs two sizes".into()));
        }
        let head = match get("head")? {
            "affine" => HeadKind::Affine,
            "cosine" => HeadKind::Cosine,
            other => return Err(bad(format!("unknown head `{other}`"))),
        };
        Ok(NetworkSpec {
            version: get("version")?.parse()?,
            structure: get("structure")?.parse()?,
            desk_scale: num("desk_scale")?,
            seed: get("seed")?.parse().map_err(|e| bad(format!("seed: {e}")))?,
            num_classes: num("num_classes")?,
            options: NetOptions {
                in_channels: num("in_channels")?,
                width: num("width")?,
                p_extra: get("p_extra")?.parse().map_err(|e| bad(format!("p_extra: {e}")))?,
                downsample_stride: num("downsample_stride")?,
                kernel_pair: (pair[0], pair[1]),
                downsampling: get("downsampling")?.parse()?,
                aux_heads: get("aux_heads")?.parse().map_err(|e| bad(format!("aux_heads: {e}")))?,
                head,
            },
            weighted_layers: num("weighted_layers")?,
            stages: StagePlan {
                blocks_per_stage: list("stage_blocks")?,
                channels: list("stage_channels")?,
            },
            blocks,
            edges,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_layer_arithmetic() {
        assert_eq!(Version::V1.desk_layers(16).unwrap(), 8);
        assert_eq!(Version::V3.desk_layers(16).unwrap(), 32);
        assert_eq!(Version::V4.desk_layers(1).unwrap(), 1024);
        assert!(Version::V1.desk_layers(32).is_err());
        assert!(Version::V1.desk_layers(3).is_err());
        assert!(Version::V1.desk_layers(0).is_err());
    }

    #[test]
    fn stage_plan_distribution() {
        let p = StagePlan::new(3, 8);
        assert_eq!(p.blocks_per_stage, vec![1, 1, 1]);
        assert_eq!(p.channels, vec![8, 16, 32]);
        let p = StagePlan::new(15, 4);
        assert_eq!(p.blocks_per_stage, vec![4, 4, 4, 3]);
        assert_eq!(p.block_stages().len(), 15);
        assert_eq!(p.channels, vec![4, 8, 16, 32]);
    }

    #[test]
    fn enum_strings_round_trip() {
        for v in Version::ALL {
            assert_eq!(v.to_string().parse::<Version>().unwrap(), v);
        }
        for s in Structure::ALL {
            assert_eq!(s.to_string().parse::<Structure>().unwrap(), s);
        }
        assert!("v5".parse::<Version>().is_err());
        assert!("dense".parse::<Structure>().is_err());
    }
}
