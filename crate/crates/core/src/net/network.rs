//! Network construction and execution over the block DAG.

use std::fmt::Write as _;

use super::block::{Block, ConvUnit};
use super::connectivity::{gate_weights, sample_connectivity};
use super::spec::{BlockSpec, NetOptions, NetworkSpec, StagePlan, Structure, Version};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, ClassifierHead, Conv2d, ConvParams, Layer, Mode, Padding, Param, Relu};
use crate::rng::PrngStream;
use crate::tensor::{Scalar, Tensor};

/// Root label of the stream every network draws from.
const ROOT_LABEL: &str = "alphanet";

impl NetworkSpec {
    /// Resolves `(version, structure, desk_scale)` into a block plan.
    ///
    /// Weighted layers are the stem convolution, two convolutions per block
    /// and the classifier, so `layers = 2·blocks + 2`.
    pub fn new(
        version: Version,
        structure: Structure,
        desk_scale: usize,
        num_classes: usize,
        seed: u64,
        options: NetOptions,
    ) -> Result<Self> {
        let layers = version.desk_layers(desk_scale)?;
        if layers % 2 != 0 {
            return Err(Error::Config(format!("{layers} weighted layers cannot be split into blocks")));
        }
        let plan = StagePlan::new((layers - 2) / 2, options.width);
        Self::from_plan(version, structure, desk_scale, num_classes, seed, options, plan)
    }

    /// Network with an explicit block count per stage. `desk_scale` is
    /// recorded as 0 to mark it as outside the versioned family.
    pub fn micro(
        structure: Structure,
        blocks_per_stage: &[usize],
        num_classes: usize,
        seed: u64,
        options: NetOptions,
    ) -> Result<Self> {
        if blocks_per_stage.is_empty() || blocks_per_stage.contains(&0) {
            return Err(Error::Config("every stage needs at least one block".into()));
        }
        let plan = StagePlan {
            blocks_per_stage: blocks_per_stage.to_vec(),
            channels: (0..blocks_per_stage.len()).map(|s| options.width << s).collect(),
        };
        Self::from_plan(Version::V1, structure, 0, num_classes, seed, options, plan)
    }

    fn from_plan(
        version: Version,
        structure: Structure,
        desk_scale: usize,
        num_classes: usize,
        seed: u64,
        options: NetOptions,
        stages: StagePlan,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if options.width == 0 || options.in_channels == 0 || options.downsample_stride == 0 {
            return Err(Error::Config("width, in_channels and downsample_stride must be positive".into()));
        }
        let (k1, k2) = options.kernel_pair;
        if k1 == 0 || k2 == 0 {
            return Err(Error::Config("kernel sizes must be positive".into()));
        }
        let block_stages = stages.block_stages();
        let last_stage = stages.stages() - 1;
        let blocks: Vec<BlockSpec> = block_stages
            .iter()
            .enumerate()
            .map(|(index, &stage)| {
                let first_in_stage = index == 0 || block_stages[index - 1] != stage;
                let last_in_stage = block_stages.get(index + 1) != Some(&stage);
                let downsample = first_in_stage && stage > 0;
                BlockSpec {
                    index,
                    structure,
                    stage,
                    in_ch: if downsample { stages.channels[stage - 1] } else { stages.channels[stage] },
                    out_ch: stages.channels[stage],
                    downsample,
                    has_aux_head: structure == Structure::Alpha
                        && options.aux_heads
                        && last_in_stage
                        && stage < last_stage,
                }
            })
            .collect();
        let edges = if structure == Structure::Alpha {
            sample_connectivity(&block_stages, options.p_extra, &PrngStream::new(seed, ROOT_LABEL))?
        } else {
            Vec::new()
        };
        Ok(NetworkSpec {
            version,
            structure,
            desk_scale,
            seed,
            num_classes,
            options,
            weighted_layers: 2 * blocks.len() + 2,
            stages,
            blocks,
            edges,
        })
    }
}

#[derive(Debug, Clone)]
enum Stem<T> {
    Plain(ConvUnit<T>),
    /// Bare convolution; the first block normalises its input.
    PreAct(Conv2d<T>),
}

/// Scores of one forward pass.
#[derive(Debug, Clone)]
pub struct NetOutput<T> {
    /// Pooled final features, `N×C`.
    pub features: Tensor<T>,
    /// Main head scores: logits (affine) or cosines.
    pub scores: Tensor<T>,
    /// One entry per auxiliary head, in block order.
    pub aux_scores: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    outputs: Vec<Tensor<T>>,
    weights: Vec<Vec<T>>,
}

/// A built network: spec plus initialised parameters.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    stem: Stem<T>,
    blocks: Vec<Block<T>>,
    /// Incoming gate logits per block, ordered like [`NetworkSpec::incoming`].
    gates: Vec<Option<Param<T>>>,
    final_bn: Option<(BatchNorm<T>, Relu<T>)>,
    head: ClassifierHead<T>,
    cache: Option<Cache<T>>,
}

/// Builds a network with default options.
pub fn build_network<T: Scalar>(
    version: Version,
    structure: Structure,
    num_classes: usize,
    seed: u64,
    desk_scale: usize,
) -> Result<Network<T>> {
    let spec = NetworkSpec::new(version, structure, desk_scale, num_classes, seed, NetOptions::default())?;
    Network::build(spec)
}

impl<T: Scalar> Network<T> {
    /// Initialises parameters from forks of the `NetworkSpec` seed. The same `NetworkSpec`
    /// always yields bit-identical parameters.
    pub fn build(spec: NetworkSpec) -> Result<Self> {
        let root = PrngStream::new(spec.seed, ROOT_LABEL);
        let init = root.fork("init");
        let o = &spec.options;
        let width = spec.stages.channels[0];
        let stem = match spec.structure {
            Structure::Plain => Stem::Plain(ConvUnit::init(o.in_channels, width, 1, &mut init.fork("stem"))?),
            _ => Stem::PreAct(Conv2d::new(ConvParams::init(
                o.in_channels,
                width,
                3,
                1,
                Padding::Same,
                &mut init.fork("stem"),
            )?)),
        };
        let blocks = spec
            .blocks
            .iter()
            .map(|b| Block::init(b.clone(), o, spec.num_classes, &init.fork(&format!("block{}", b.index))))
            .collect::<Result<Vec<_>>>()?;
        let gates = (0..spec.blocks.len())
            .map(|i| {
                let logits: Vec<f64> = spec.incoming(i).map(|e| e.gate_logit).collect();
                (!logits.is_empty()).then(|| {
                    let n = logits.len();
                    Param::new("gates", Tensor::from_parts(vec![n], logits.into_iter().map(T::c).collect()), false)
                })
            })
            .collect();
        let last = *spec.stages.channels.last().expect("at least one stage");
        let final_bn = (spec.structure != Structure::Plain).then(|| (BatchNorm::new(last), Relu::new()));
        let head = ClassifierHead::init(o.head, last, spec.num_classes, &mut init.fork("head"));
        Ok(Network {
            spec,
            stem,
            blocks,
            gates,
            final_bn,
            head,
            cache: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block<T>] {
        &mut self.blocks
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn weighted_layers(&self) -> usize {
        self.spec.weighted_layers
    }

    /// Total learned scalars, gate logits and BN affine terms included.
    pub fn parameter_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Softmax weights of each block's incoming edges (empty for block 0 and
    /// edge-free structures).
    pub fn gate_weights(&self) -> Vec<Vec<f64>> {
        self.gates
            .iter()
            .map(|g| g.as_ref().map(|p| gate_weights(&p.value.to_f64_vec())).unwrap_or_default())
            .collect()
    }

    /// Every learned tensor with a stable hierarchical name.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = Vec::new();
        match &mut self.stem {
            Stem::Plain(u) => v.extend(u.named_params_mut("stem")),
            Stem::PreAct(c) => {
                v.push(("stem/conv/kernel".to_string(), &mut c.params.kernel));
                v.push(("stem/conv/bias".to_string(), &mut c.params.bias));
            }
        }
        for (b, g) in self.blocks.iter_mut().zip(&mut self.gates) {
            let prefix = format!("block{}", b.spec.index);
            if let Some(g) = g {
                v.push((format!("{prefix}/gates"), g));
            }
            v.extend(b.named_params_mut(&prefix));
        }
        if let Some((bn, _)) = &mut self.final_bn {
            v.push(("final_bn/gamma".to_string(), &mut bn.params.gamma));
            v.push(("final_bn/beta".to_string(), &mut bn.params.beta));
        }
        v.push(("head/weight".to_string(), &mut self.head.weight));
        if let Some(b) = &mut self.head.bias {
            v.push(("head/bias".to_string(), b));
        }
        v
    }

    /// Non-learned state saved with checkpoints (BN running statistics).
    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = Vec::new();
        if let Stem::Plain(u) = &mut self.stem {
            v.extend(u.named_buffers_mut("stem"));
        }
        for b in &mut self.blocks {
            let prefix = format!("block{}", b.spec.index);
            v.extend(b.named_buffers_mut(&prefix));
        }
        if let Some((bn, _)) = &mut self.final_bn {
            let p = &mut bn.params;
            v.push(("final_bn/running_mean".to_string(), &mut p.running_mean));
            v.push(("final_bn/running_var".to_string(), &mut p.running_var));
            v.push(("final_bn/batches_tracked".to_string(), &mut p.batches_tracked));
        }
        v
    }

    /// Names and shapes of all parameters, in [`named_params_mut`](Self::named_params_mut) order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        // shapes never change after construction; a clone keeps this `&self`
        let mut copy = self.clone();
        copy.cache = None;
        copy.named_params_mut()
            .into_iter()
            .map(|(n, p)| (n, p.value.shape().to_vec()))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    /// Toggles reuse of sampled stochastic-pooling indices in train mode.
    pub fn freeze_pools(&mut self, frozen: bool) {
        for b in &mut self.blocks {
            b.freeze_pool(frozen);
        }
    }

    /// Spec text followed by one `param <name> <shape>` line per tensor.
    /// Edge logits reflect the current gate values.
    pub fn manifest(&self) -> String {
        let mut spec = self.spec.clone();
        for (target, g) in self.gates.iter().enumerate() {
            if let Some(g) = g {
                let mut logits = g.value.data().iter();
                for e in spec.edges.iter_mut().filter(|e| e.target == target) {
                    e.gate_logit = logits.next().map_or(e.gate_logit, |v| v.as_f64());
                }
            }
        }
        let mut s = spec.to_manifest();
        for (name, shape) in self.param_shapes() {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(s, "param {name} {}", dims.join("x"));
        }
        s
    }

    /// Runs the stem, the blocks in index order and the head.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut PrngStream) -> Result<NetOutput<T>> {
        let o = &self.spec.options;
        if x.ndim() != 4 || x.dim(1) != o.in_channels {
            return Err(Error::ShapeMismatch {
                op: "network input",
                left: x.shape().to_vec(),
                right: vec![0, o.in_channels, 0, 0],
            });
        }
        let min = self.spec.min_input_size();
        if x.dim(2) < min || x.dim(3) < min {
            return Err(Error::InvalidArgument(format!(
                "input {}×{} is below the network minimum {min}×{min}",
                x.dim(2),
                x.dim(3)
            )));
        }
        let stem_out = match &mut self.stem {
            Stem::Plain(u) => u.forward(x, mode, &mut rng.fork("stem"))?,
            Stem::PreAct(c) => c.forward(x, mode, rng)?,
        };
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.blocks.len() + 1);
        outputs.push(stem_out);
        let mut weights = Vec::with_capacity(self.blocks.len());
        let mut aux_scores = Vec::new();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let (x_agg, w) = match &self.gates[i] {
                None => (outputs[i].clone(), Vec::new()),
                Some(g) => {
                    let w: Vec<T> = gate_weights(&g.value.to_f64_vec()).into_iter().map(T::c).collect();
                    let mut agg: Option<Tensor<T>> = None;
                    for (e, &wk) in self.spec.edges.iter().filter(|e| e.target == i).zip(&w) {
                        let src = &outputs[e.source + 1];
                        match &mut agg {
                            None => agg = Some(src.scale(wk)),
                            Some(a) => a.axpy(wk, src)?,
                        }
                    }
                    (agg.ok_or(Error::Uninitialized("gate edges"))?, w)
                }
            };
            let (out, aux) = block.forward(&x_agg, mode, &mut rng.fork(&format!("block{i}")))?;
            aux_scores.extend(aux);
            outputs.push(out);
            weights.push(w);
        }
        let last = outputs.last().expect("stem output present");
        let pre_head = match &mut self.final_bn {
            Some((bn, relu)) => {
                let y = bn.forward(last, mode, rng)?;
                relu.forward(&y, mode, rng)?
            }
            None => last.clone(),
        };
        let scores = self.head.forward(&pre_head, mode, rng)?;
        let features = self.head.features().cloned().ok_or(Error::MissingCache("head"))?;
        self.cache = Some(Cache { outputs, weights });
        Ok(NetOutput {
            features,
            scores,
            aux_scores,
        })
    }

    /// Backpropagates score gradients through heads, blocks and gates,
    /// accumulating into every parameter's `grad`. Returns the input gradient.
    pub fn backward(&mut self, d_scores: &Tensor<T>, d_aux: &[Tensor<T>]) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::MissingCache("network"))?;
        let n_aux = self.blocks.iter().filter(|b| b.aux.is_some()).count();
        if d_aux.len() != n_aux {
            return Err(Error::InvalidArgument(format!(
                "expected {n_aux} auxiliary gradients, got {}",
                d_aux.len()
            )));
        }
        let mut d_outputs: Vec<Option<Tensor<T>>> = vec![None; cache.outputs.len()];
        let add = |slot: &mut Option<Tensor<T>>, k: T, g: &Tensor<T>| -> Result<()> {
            match slot {
                Some(s) => s.axpy(k, g),
                None => {
                    *slot = Some(if k == T::one() { g.clone() } else { g.scale(k) });
                    Ok(())
                }
            }
        };
        let g = self.head.backward(d_scores)?;
        self.head.accumulate(&g)?;
        let mut d_last = g.input;
        if let Some((bn, relu)) = &mut self.final_bn {
            let g = relu.backward(&d_last)?;
            let g = bn.backward(&g.input).and_then(|gb| bn.accumulate(&gb).map(|_| gb))?;
            d_last = g.input;
        }
        let last = d_outputs.len() - 1;
        d_outputs[last] = Some(d_last);
        let mut aux_iter = d_aux.iter().rev();
        for i in (0..self.blocks.len()).rev() {
            let d_out = d_outputs[i + 1]
                .take()
                .unwrap_or_else(|| Tensor::zeros(cache.outputs[i + 1].shape().to_vec()));
            let da = if self.blocks[i].aux.is_some() { aux_iter.next() } else { None };
            let d_agg = self.blocks[i].backward(&d_out, da)?;
            match &mut self.gates[i] {
                None => add(&mut d_outputs[i], T::one(), &d_agg)?,
                Some(gate) => {
                    let w = &cache.weights[i];
                    let sources: Vec<usize> =
                        self.spec.edges.iter().filter(|e| e.target == i).map(|e| e.source + 1).collect();
                    let mut dw = Vec::with_capacity(w.len());
                    for (&src, &wk) in sources.iter().zip(w) {
                        dw.push(d_agg.dot(&cache.outputs[src])?);
                        add(&mut d_outputs[src], wk, &d_agg)?;
                    }
                    // softmax Jacobian: dl_k = w_k (dw_k − Σ_j w_j dw_j)
                    let mean: T = w.iter().zip(&dw).map(|(&a, &b)| a * b).sum();
                    let dl: Vec<T> = w.iter().zip(&dw).map(|(&wk, &d)| wk * (d - mean)).collect();
                    gate.accumulate(&Tensor::from_parts(vec![dl.len()], dl))?;
                }
            }
        }
        let d_stem = d_outputs[0]
            .take()
            .ok_or(Error::MissingCache("stem gradient"))?;
        match &mut self.stem {
            Stem::Plain(u) => u.backward(&d_stem),
            Stem::PreAct(c) => {
                let g = c.backward(&d_stem)?;
                c.accumulate(&g)?;
                Ok(g.input)
            }
        }
    }
}
