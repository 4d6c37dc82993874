//! Plain, residual and alpha blocks.

use super::spec::{BlockSpec, Downsampling, NetOptions, Structure};
use crate::error::{Error, Result};
use crate::layers::{
    BatchNorm, ClassifierHead, CombinedConv, Conv2d, ConvParams, Layer, Mode, Padding, Param, PoolWindow, Relu,
    StochasticPool,
};
use crate::rng::PrngStream;
use crate::tensor::{Scalar, Tensor};

/// Second convolution of a pre-activation block.
#[derive(Debug, Clone)]
pub enum SecondConv<T> {
    Single(Conv2d<T>),
    Combined(CombinedConv<T>),
}

impl<T: Scalar> SecondConv<T> {
    fn layer(&mut self) -> &mut dyn Layer<T> {
        match self {
            SecondConv::Single(c) => c,
            SecondConv::Combined(c) => c,
        }
    }

    fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Param<T>)> {
        match self {
            SecondConv::Single(c) => conv_named(prefix, &mut c.params),
            SecondConv::Combined(c) => {
                let mut v = conv_named(&format!("{prefix}/k1"), &mut c.first);
                v.extend(conv_named(&format!("{prefix}/k2"), &mut c.second));
                v
            }
        }
    }
}

fn conv_named<'a, T>(prefix: &str, p: &'a mut ConvParams<T>) -> Vec<(String, &'a mut Param<T>)> {
    vec![
        (format!("{prefix}/kernel"), &mut p.kernel),
        (format!("{prefix}/bias"), &mut p.bias),
    ]
}

fn bn_named<'a, T>(prefix: &str, bn: &'a mut BatchNorm<T>) -> Vec<(String, &'a mut Param<T>)> {
    vec![
        (format!("{prefix}/gamma"), &mut bn.params.gamma),
        (format!("{prefix}/beta"), &mut bn.params.beta),
    ]
}

fn bn_buffers<'a, T>(prefix: &str, bn: &'a mut BatchNorm<T>) -> Vec<(String, &'a mut Tensor<T>)> {
    let p = &mut bn.params;
    vec![
        (format!("{prefix}/running_mean"), &mut p.running_mean),
        (format!("{prefix}/running_var"), &mut p.running_var),
        (format!("{prefix}/batches_tracked"), &mut p.batches_tracked),
    ]
}

/// Runs `layer` backward and folds its parameter gradients in.
fn back<T: Scalar>(layer: &mut dyn Layer<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let g = layer.backward(dy)?;
    layer.accumulate(&g)?;
    Ok(g.input)
}

/// conv → BN → ReLU, the unit of plain networks and of the stem.
#[derive(Debug, Clone)]
pub struct ConvUnit<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
    relu: Relu<T>,
}

impl<T: Scalar> ConvUnit<T> {
    pub fn init(in_ch: usize, out_ch: usize, stride: usize, rng: &mut PrngStream) -> Result<Self> {
        Ok(ConvUnit {
            conv: Conv2d::new(ConvParams::init(in_ch, out_ch, 3, stride, Padding::Same, rng)?),
            bn: BatchNorm::new(out_ch),
            relu: Relu::new(),
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut PrngStream) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, mode, rng)?;
        let y = self.bn.forward(&y, mode, rng)?;
        self.relu.forward(&y, mode, rng)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = back(&mut self.relu, dy)?;
        let d = back(&mut self.bn, &d)?;
        back(&mut self.conv, &d)
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Param<T>)> {
        let mut v = conv_named(&format!("{prefix}/conv"), &mut self.conv.params);
        v.extend(bn_named(&format!("{prefix}/bn"), &mut self.bn));
        v
    }

    pub fn named_buffers_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        bn_buffers(&format!("{prefix}/bn"), &mut self.bn)
    }
}

/// Full pre-activation body shared by residual and alpha blocks.
#[derive(Debug, Clone)]
pub struct PreActBody<T> {
    pub bn1: BatchNorm<T>,
    relu1: Relu<T>,
    pub conv1: Conv2d<T>,
    pub bn2: BatchNorm<T>,
    relu2: Relu<T>,
    pub conv2: SecondConv<T>,
    /// 1×1 strided projection of the skip path at stage transitions.
    pub proj: Option<Conv2d<T>>,
    /// ReLU + stochastic pooling after the addition (alpha downsampling).
    pool: Option<(Relu<T>, StochasticPool<T>)>,
}

#[derive(Debug, Clone)]
enum Body<T> {
    Plain(ConvUnit<T>, ConvUnit<T>),
    PreAct(Box<PreActBody<T>>),
}

/// One block with its optional auxiliary head.
#[derive(Debug, Clone)]
pub struct Block<T> {
    pub spec: BlockSpec,
    body: Body<T>,
    pub aux: Option<ClassifierHead<T>>,
    out_shape: Option<Vec<usize>>,
}

impl<T: Scalar> Block<T> {
    /// Builds block `spec` with parameters drawn from `rng` forks.
    pub fn init(spec: BlockSpec, opts: &NetOptions, num_classes: usize, rng: &PrngStream) -> Result<Self> {
        let stride = if spec.downsample { opts.downsample_stride } else { 1 };
        let (cin, cout) = (spec.in_ch, spec.out_ch);
        let body = match spec.structure {
            Structure::Plain => Body::Plain(
                ConvUnit::init(cin, cout, stride, &mut rng.fork("conv1"))?,
                ConvUnit::init(cout, cout, 1, &mut rng.fork("conv2"))?,
            ),
            Structure::Residual | Structure::Alpha => {
                let conv1 = Conv2d::new(ConvParams::init(cin, cout, 3, stride, Padding::Same, &mut rng.fork("conv1"))?);
                let conv2 = if spec.structure == Structure::Alpha {
                    SecondConv::Combined(CombinedConv::init(cout, cout, opts.kernel_pair, 1, &mut rng.fork("conv2"))?)
                } else {
                    SecondConv::Single(Conv2d::new(ConvParams::init(
                        cout,
                        cout,
                        3,
                        1,
                        Padding::Same,
                        &mut rng.fork("conv2"),
                    )?))
                };
                let proj = if spec.downsample || cin != cout {
                    let p = ConvParams::init(cin, cout, 1, stride, Padding::Same, &mut rng.fork("proj"))?;
                    Some(Conv2d::new(p))
                } else {
                    None
                };
                let pool = (spec.structure == Structure::Alpha
                    && spec.downsample
                    && opts.downsampling == Downsampling::Pool)
                    .then(|| (Relu::new(), StochasticPool::new(PoolWindow::default())));
                Body::PreAct(Box::new(PreActBody {
                    bn1: BatchNorm::new(cin),
                    relu1: Relu::new(),
                    conv1,
                    bn2: BatchNorm::new(cout),
                    relu2: Relu::new(),
                    conv2,
                    proj,
                    pool,
                }))
            }
        };
        let aux = spec
            .has_aux_head
            .then(|| ClassifierHead::init(opts.head, cout, num_classes, &mut rng.fork("aux")));
        Ok(Block {
            spec,
            body,
            aux,
            out_shape: None,
        })
    }

    /// Pre-activation body, absent for plain blocks.
    pub fn preact(&self) -> Option<&PreActBody<T>> {
        match &self.body {
            Body::PreAct(b) => Some(b),
            Body::Plain(..) => None,
        }
    }

    pub fn preact_mut(&mut self) -> Option<&mut PreActBody<T>> {
        match &mut self.body {
            Body::PreAct(b) => Some(b),
            Body::Plain(..) => None,
        }
    }

    /// Returns the block output and, when the block has a head, its scores.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut PrngStream) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        if x.ndim() != 4 || x.dim(1) != self.spec.in_ch {
            return Err(Error::ShapeMismatch {
                op: "block input",
                left: x.shape().to_vec(),
                right: vec![0, self.spec.in_ch, 0, 0],
            });
        }
        let out = match &mut self.body {
            Body::Plain(a, b) => {
                let y = a.forward(x, mode, rng)?;
                b.forward(&y, mode, rng)?
            }
            Body::PreAct(b) => {
                let a = b.bn1.forward(x, mode, rng)?;
                let a = b.relu1.forward(&a, mode, rng)?;
                let y = b.conv1.forward(&a, mode, rng)?;
                let y = b.bn2.forward(&y, mode, rng)?;
                let y = b.relu2.forward(&y, mode, rng)?;
                let z = b.conv2.layer().forward(&y, mode, rng)?;
                let skip = match &mut b.proj {
                    Some(p) => p.forward(x, mode, rng)?,
                    None => x.clone(),
                };
                let sum = skip.add(&z)?;
                match &mut b.pool {
                    Some((relu, pool)) => {
                        let r = relu.forward(&sum, mode, rng)?;
                        pool.forward(&r, mode, &mut rng.fork("pool"))?
                    }
                    None => sum,
                }
            }
        };
        let aux = match &mut self.aux {
            Some(h) => Some(h.forward(&out, mode, rng)?),
            None => None,
        };
        self.out_shape = Some(out.shape().to_vec());
        Ok((out, aux))
    }

    /// Backward from the output gradient and the head's score gradient.
    /// Parameter gradients are accumulated; the input gradient is returned.
    pub fn backward(&mut self, d_out: &Tensor<T>, d_aux: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let shape = self.out_shape.as_ref().ok_or(Error::MissingCache("block"))?;
        if d_out.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "block backward",
                left: d_out.shape().to_vec(),
                right: shape.clone(),
            });
        }
        let mut d = d_out.clone();
        if let (Some(h), Some(da)) = (&mut self.aux, d_aux) {
            d.axpy(T::one(), &back(h, da)?)?;
        }
        match &mut self.body {
            Body::Plain(a, b) => {
                let d = b.backward(&d)?;
                a.backward(&d)
            }
            Body::PreAct(b) => {
                let d_sum = match &mut b.pool {
                    Some((relu, pool)) => {
                        let d = back(pool, &d)?;
                        back(relu, &d)?
                    }
                    None => d,
                };
                let dz = back(b.conv2.layer(), &d_sum)?;
                let dy = back(&mut b.relu2, &dz)?;
                let dy = back(&mut b.bn2, &dy)?;
                let da = back(&mut b.conv1, &dy)?;
                let da = back(&mut b.relu1, &da)?;
                let mut dx = back(&mut b.bn1, &da)?;
                let d_skip = match &mut b.proj {
                    Some(p) => back(p, &d_sum)?,
                    None => d_sum,
                };
                dx.axpy(T::one(), &d_skip)?;
                Ok(dx)
            }
        }
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Param<T>)> {
        let mut v = Vec::new();
        match &mut self.body {
            Body::Plain(a, b) => {
                v.extend(a.named_params_mut(&format!("{prefix}/unit1")));
                v.extend(b.named_params_mut(&format!("{prefix}/unit2")));
            }
            Body::PreAct(b) => {
                v.extend(bn_named(&format!("{prefix}/bn1"), &mut b.bn1));
                v.extend(conv_named(&format!("{prefix}/conv1"), &mut b.conv1.params));
                v.extend(bn_named(&format!("{prefix}/bn2"), &mut b.bn2));
                v.extend(b.conv2.named_params_mut(&format!("{prefix}/conv2")));
                if let Some(p) = &mut b.proj {
                    v.extend(conv_named(&format!("{prefix}/proj"), &mut p.params));
                }
            }
        }
        if let Some(h) = &mut self.aux {
            v.push((format!("{prefix}/aux/weight"), &mut h.weight));
            if let Some(b) = &mut h.bias {
                v.push((format!("{prefix}/aux/bias"), b));
            }
        }
        v
    }

    pub fn named_buffers_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        match &mut self.body {
            Body::Plain(a, b) => {
                let mut v = a.named_buffers_mut(&format!("{prefix}/unit1"));
                v.extend(b.named_buffers_mut(&format!("{prefix}/unit2")));
                v
            }
            Body::PreAct(b) => {
                let mut v = bn_buffers(&format!("{prefix}/bn1"), &mut b.bn1);
                v.extend(bn_buffers(&format!("{prefix}/bn2"), &mut b.bn2));
                v
            }
        }
    }

    /// Reuses the last sampled pooling indices in later train passes.
    pub fn freeze_pool(&mut self, frozen: bool) {
        if let Body::PreAct(b) = &mut self.body {
            if let Some((_, pool)) = &mut b.pool {
                pool.freeze(frozen);
            }
        }
    }

    pub fn has_pool(&self) -> bool {
        matches!(&self.body, Body::PreAct(b) if b.pool.is_some())
    }
}
