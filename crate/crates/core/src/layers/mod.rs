//! Differentiable layer primitives.
//!
//! Each layer caches what its backward pass needs during `forward` and
//! returns analytic gradients from `backward` without touching its own
//! parameters; callers decide when to fold them into [`Param::grad`].

mod activation;
mod batchnorm;
mod conv;
mod head;
mod pool;

pub use activation::{relu, Relu};
pub use batchnorm::{batch_norm, BatchNorm, BatchNormParams};
pub use conv::{combined_conv, conv2d, CombinedConv, Conv2d, ConvParams, Padding};
pub use head::{classifier_head, global_avg_pool, global_avg_pool_backward, ClassifierHead, HeadKind};
pub use pool::{stochastic_pool, PoolWindow, StochasticPool};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::PrngStream;
use crate::tensor::{Scalar, Tensor};

/// Whether a forward pass is part of training or evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A learned tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Whether weight decay applies (false for BN affine terms and gate logits).
    pub decay: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Param {
            name: name.into(),
            value,
            grad,
            decay,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn accumulate(&mut self, g: &Tensor<T>) -> Result<()> {
        self.grad.axpy(T::one(), g)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Gradients produced by one backward call. `params` follows the order of
/// [`Layer::params`].
#[derive(Debug, Clone)]
pub struct LayerGradients<T> {
    pub input: Tensor<T>,
    pub params: Vec<Tensor<T>>,
}

/// Common interface of the trainable building blocks.
pub trait Layer<T: Scalar> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut PrngStream) -> Result<Tensor<T>>;

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<LayerGradients<T>>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Non-learned state that must survive a checkpoint (BN running stats).
    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        Vec::new()
    }

    /// Folds the parameter part of `grads` into the gradient accumulators.
    fn accumulate(&mut self, grads: &LayerGradients<T>) -> Result<()> {
        let params = self.params_mut();
        if params.len() != grads.params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter gradients, got {}",
                params.len(),
                grads.params.len()
            )));
        }
        for (p, g) in params.into_iter().zip(&grads.params) {
            p.accumulate(g)?;
        }
        Ok(())
    }
}

/// He-normal initialisation: `N(0, 2 / fan_in)`.
pub(crate) fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut PrngStream) -> Tensor<T> {
    rng.normal_tensor(shape, (2.0 / fan_in as f64).sqrt())
}

pub(crate) fn expect_rank4<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::ShapeMismatch {
            op,
            left: x.shape().to_vec(),
            right: vec![0; 4],
        }),
    }
}
