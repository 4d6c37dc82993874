use serde::{Deserialize, Serialize};

use super::{expect_rank4, Layer, LayerGradients, Mode, Param};
use crate::error::{Error, Result};
use crate::losses::{cosine_backward, cosine_forward, CosineCache};
use crate::rng::PrngStream;
use crate::tensor::{Scalar, Tensor};

/// How pooled features become class scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// `W·f + b`, used with plain softmax cross-entropy.
    Affine,
    /// Cosine between `f` and each class weight row, used with the margin losses.
    Cosine,
}

/// Spatial mean per channel: `N×C×H×W → N×C`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = expect_rank4(x, "global_avg_pool")?;
    let hw = h * w;
    let inv = T::c(1.0 / hw as f64);
    let data = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], data))
}

/// Spreads `N×C` feature gradients evenly back over `shape = [N, C, H, W]`.
pub fn global_avg_pool_backward<T: Scalar>(df: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if shape.len() != 4 || df.shape() != [shape[0], shape[1]] {
        return Err(Error::ShapeMismatch {
            op: "global_avg_pool backward",
            left: df.shape().to_vec(),
            right: shape.to_vec(),
        });
    }
    let hw = shape[2] * shape[3];
    let inv = T::c(1.0 / hw as f64);
    let mut dx = Vec::with_capacity(df.len() * hw);
    for &g in df.data() {
        dx.extend(std::iter::repeat(g * inv).take(hw));
    }
    Ok(Tensor::from_parts(shape.to_vec(), dx))
}

fn affine<T: Scalar>(f: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if w.ndim() != 2 || f.dim(1) != w.dim(1) || b.shape() != [w.dim(0)] {
        return Err(Error::ShapeMismatch {
            op: "classifier_head",
            left: f.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let (n, classes, c) = (f.dim(0), w.dim(0), w.dim(1));
    let mut out = vec![T::zero(); n * classes];
    for row in out.chunks_mut(classes) {
        row.copy_from_slice(b.data());
    }
    T::gemm(false, true, n, c, classes, f.data(), w.data(), T::one(), &mut out);
    Ok(Tensor::from_parts(vec![n, classes], out))
}

/// Global average pooling followed by an affine map.
pub fn classifier_head<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    affine(&global_avg_pool(x)?, weight, bias)
}

#[derive(Debug, Clone)]
struct Cache<T> {
    input_shape: Vec<usize>,
    features: Tensor<T>,
    cosine: Option<CosineCache<T>>,
}

/// Pooling + scoring head producing `N×classes` logits (affine) or cosines.
#[derive(Debug, Clone)]
pub struct ClassifierHead<T> {
    pub kind: HeadKind,
    pub weight: Param<T>,
    /// Present only for [`HeadKind::Affine`].
    pub bias: Option<Param<T>>,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn init(kind: HeadKind, channels: usize, classes: usize, rng: &mut PrngStream) -> Self {
        let weight = rng.normal_tensor(&[classes, channels], (1.0 / channels as f64).sqrt());
        let bias = match kind {
            HeadKind::Affine => Some(Param::new("bias", Tensor::zeros([classes]), false)),
            HeadKind::Cosine => None,
        };
        ClassifierHead {
            kind,
            weight: Param::new("weight", weight, true),
            bias,
            cache: None,
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.value.dim(0)
    }

    /// Pooled features from the most recent forward pass.
    pub fn features(&self) -> Option<&Tensor<T>> {
        self.cache.as_ref().map(|c| &c.features)
    }
}

impl<T: Scalar> Layer<T> for ClassifierHead<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode, _rng: &mut PrngStream) -> Result<Tensor<T>> {
        let features = global_avg_pool(x)?;
        let (scores, cosine) = match (&self.kind, &self.bias) {
            (HeadKind::Affine, Some(b)) => (affine(&features, &self.weight.value, &b.value)?, None),
            (HeadKind::Affine, None) => {
                return Err(Error::InvalidArgument("affine head without bias".into()))
            }
            (HeadKind::Cosine, _) => {
                let (cos, cache) = cosine_forward(&features, &self.weight.value)?;
                (cos.into_tensor(), Some(cache))
            }
        };
        self.cache = Some(Cache {
            input_shape: x.shape().to_vec(),
            features,
            cosine,
        });
        Ok(scores)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<LayerGradients<T>> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache("classifier_head"))?;
        let f = &cache.features;
        let (n, c, classes) = (f.dim(0), f.dim(1), self.classes());
        if grad_out.shape() != [n, classes] {
            return Err(Error::ShapeMismatch {
                op: "classifier_head backward",
                left: grad_out.shape().to_vec(),
                right: vec![n, classes],
            });
        }
        let (df, mut params) = match &cache.cosine {
            None => {
                let mut dw = vec![T::zero(); classes * c];
                T::gemm(true, false, classes, n, c, grad_out.data(), f.data(), T::zero(), &mut dw);
                let mut db = vec![T::zero(); classes];
                for row in grad_out.data().chunks(classes) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                let mut df = vec![T::zero(); n * c];
                T::gemm(false, false, n, classes, c, grad_out.data(), self.weight.value.data(), T::zero(), &mut df);
                (
                    Tensor::from_parts(vec![n, c], df),
                    vec![
                        Tensor::from_parts(vec![classes, c], dw),
                        Tensor::from_parts(vec![classes], db),
                    ],
                )
            }
            Some(cc) => {
                let (df, dw) = cosine_backward(cc, grad_out)?;
                (df, vec![dw])
            }
        };
        let input = global_avg_pool_backward(&df, &cache.input_shape)?;
        params.truncate(self.params().len());
        Ok(LayerGradients { input, params })
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }
}
