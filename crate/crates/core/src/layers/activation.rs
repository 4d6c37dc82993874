use super::{Layer, LayerGradients, Mode};
use crate::error::{Error, Result};
use crate::rng::PrngStream;
use crate::tensor::{Scalar, Tensor};

/// Elementwise `max(0, x)`.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// ReLU with a cached input; the subgradient at zero is zero.
#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { input: None }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode, _rng: &mut PrngStream) -> Result<Tensor<T>> {
        self.input = Some(x.clone());
        Ok(relu(x))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<LayerGradients<T>> {
        let x = self.input.as_ref().ok_or(Error::MissingCache("relu"))?;
        let input = x.zip_map(grad_out, "relu backward", |xv, g| {
            if xv > T::zero() {
                g
            } else {
                T::zero()
            }
        })?;
        Ok(LayerGradients {
            input,
            params: Vec::new(),
        })
    }
}
