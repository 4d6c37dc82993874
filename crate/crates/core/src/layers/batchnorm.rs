use super::{expect_rank4, Layer, LayerGradients, Mode, Param};
use crate::error::{Error, Result};
use crate::rng::PrngStream;
use crate::tensor::{Scalar, Tensor};

/// Per-channel affine terms and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNormParams<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Number of training batches folded into the running statistics,
    /// stored as a one-element tensor so it travels with checkpoints.
    pub batches_tracked: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormParams<T> {
    /// `gamma = 1`, `beta = 0`, no statistics yet.
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: Param::new("gamma", Tensor::full([channels], T::one()), false),
            beta: Param::new("beta", Tensor::zeros([channels]), false),
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::full([channels], T::one()),
            batches_tracked: Tensor::zeros([1]),
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.batches_tracked.data()[0] > T::zero()
    }
}

struct Cache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
    shape: Vec<usize>,
}

/// Batch normalisation over the `N, H, W` axes of an `N×C×H×W` tensor.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub params: BatchNormParams<T>,
    cache: Option<Cache<T>>,
}

impl<T> std::fmt::Debug for Cache<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cache").field("mode", &self.mode).finish_non_exhaustive()
    }
}

impl<T: Clone> Clone for Cache<T> {
    fn clone(&self) -> Self {
        Cache {
            x_hat: self.x_hat.clone(),
            inv_std: self.inv_std.clone(),
            mode: self.mode,
            shape: self.shape.clone(),
        }
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            params: BatchNormParams::new(channels),
            cache: None,
        }
    }

    fn run(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Cache<T>)> {
        let [n, c, h, w] = expect_rank4(x, "batch_norm")?;
        let p = &mut self.params;
        if c != p.channels() {
            return Err(Error::ShapeMismatch {
                op: "batch_norm channels",
                left: x.shape().to_vec(),
                right: vec![p.channels()],
            });
        }
        let hw = h * w;
        let count = n * hw;
        let eps = T::c(p.epsilon);
        let (mean, var) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::InvalidArgument(
                        "batch_norm in train mode needs at least two values per channel".into(),
                    ));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        let base = (b * c + ch) * hw;
                        s += x.data()[base..base + hw].iter().copied().sum::<T>();
                    }
                    let m = s / T::c(count as f64);
                    let mut v = T::zero();
                    for b in 0..n {
                        let base = (b * c + ch) * hw;
                        for &xv in &x.data()[base..base + hw] {
                            v += (xv - m) * (xv - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = v / T::c(count as f64);
                }
                let mom = T::c(p.momentum);
                let unbias = T::c(count as f64 / (count - 1) as f64);
                for ch in 0..c {
                    let rm = &mut p.running_mean.data_mut()[ch];
                    *rm = (T::one() - mom) * *rm + mom * mean[ch];
                    let rv = &mut p.running_var.data_mut()[ch];
                    *rv = (T::one() - mom) * *rv + mom * var[ch] * unbias;
                }
                p.batches_tracked.data_mut()[0] += T::one();
                (mean, var)
            }
            Mode::Eval => {
                if !p.is_initialized() {
                    return Err(Error::Uninitialized("batch_norm"));
                }
                (
                    p.running_mean.data().to_vec(),
                    p.running_var.data().to_vec(),
                )
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v.max(T::zero()) + eps).sqrt()).collect();
        let mut x_hat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let (gamma, beta) = (p.gamma.value.data(), p.beta.value.data());
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x.data()[i] - mean[ch]) * inv_std[ch];
                    x_hat[i] = xh;
                    out[i] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        Ok((
            Tensor::from_parts(x.shape().to_vec(), out),
            Cache {
                x_hat,
                inv_std,
                mode,
                shape: x.shape().to_vec(),
            },
        ))
    }
}

/// Stateless entry point: normalises `x` with `p`, updating running
/// statistics in train mode.
pub fn batch_norm<T: Scalar>(x: &Tensor<T>, p: &mut BatchNormParams<T>, mode: Mode) -> Result<Tensor<T>> {
    let mut layer = BatchNorm {
        params: p.clone(),
        cache: None,
    };
    let (y, _) = layer.run(x, mode)?;
    *p = layer.params;
    Ok(y)
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode, _rng: &mut PrngStream) -> Result<Tensor<T>> {
        let (y, cache) = self.run(x, mode)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<LayerGradients<T>> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache("batch_norm"))?;
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "batch_norm backward",
                left: grad_out.shape().to_vec(),
                right: cache.shape.clone(),
            });
        }
        let (n, c, hw) = (cache.shape[0], cache.shape[1], cache.shape[2] * cache.shape[3]);
        let count = T::c((n * hw) as f64);
        let gamma = self.params.gamma.value.data();
        let dy = grad_out.data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    dgamma[ch] += dy[i] * cache.x_hat[i];
                    dbeta[ch] += dy[i];
                }
            }
        }
        let mut dx = vec![T::zero(); dy.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let g = gamma[ch] * cache.inv_std[ch];
                for i in base..base + hw {
                    dx[i] = match cache.mode {
                        Mode::Eval => g * dy[i],
                        // batch statistics depend on every input of the channel
                        Mode::Train => {
                            g * (dy[i] - dbeta[ch] / count - cache.x_hat[i] * dgamma[ch] / count)
                        }
                    };
                }
            }
        }
        Ok(LayerGradients {
            input: Tensor::from_parts(cache.shape.clone(), dx),
            params: vec![Tensor::from_parts(vec![c], dgamma), Tensor::from_parts(vec![c], dbeta)],
        })
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.params.gamma, &self.params.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.params.gamma, &mut self.params.beta]
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("running_mean", &mut self.params.running_mean),
            ("running_var", &mut self.params.running_var),
            ("batches_tracked", &mut self.params.batches_tracked),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_outputs_beta() {
        let x = Tensor::<f64>::full([2, 1, 3, 3], 4.2);
        let mut p = BatchNormParams::new(1);
        p.beta.value = Tensor::full([1], 0.7);
        let y = batch_norm(&x, &mut p, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn two_values_normalise_to_unit() {
        let x = Tensor::<f64>::from_f64([2, 1, 1, 1], &[1.0, 3.0]).unwrap();
        let mut p = BatchNormParams::new(1);
        p.epsilon = 1e-14;
        let y = batch_norm(&x, &mut p, Mode::Train).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
        // default epsilon floor shifts the result only slightly
        let mut p = BatchNormParams::new(1);
        let y = batch_norm(&x, &mut p, Mode::Train).unwrap();
        assert!((y.data()[1] - 1.0 / (1.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let mut rng = PrngStream::new(2, "bn");
        let x: Tensor<f64> = rng.uniform_tensor(&[3, 2, 2, 2]);
        let mut p = BatchNormParams::new(2);
        p.gamma.value = Tensor::zeros([2]);
        p.beta.value = Tensor::from_f64([2], &[0.3, -1.5]).unwrap();
        let y = batch_norm(&x, &mut p, Mode::Train).unwrap();
        for b in 0..3 {
            for ch in 0..2 {
                for i in 0..4 {
                    assert_eq!(y.data()[(b * 2 + ch) * 4 + i], [0.3, -1.5][ch]);
                }
            }
        }
    }

    #[test]
    fn eval_before_statistics_fails() {
        let x = Tensor::<f32>::zeros([1, 1, 2, 2]);
        let mut p = BatchNormParams::new(1);
        assert!(matches!(batch_norm(&x, &mut p, Mode::Eval), Err(Error::Uninitialized(_))));
    }

    #[test]
    fn train_requires_two_values() {
        let x = Tensor::<f32>::zeros([1, 1, 1, 1]);
        assert!(batch_norm(&x, &mut BatchNormParams::new(1), Mode::Train).is_err());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::<f64>::from_f64([4, 1, 1, 1], &[1.0, 2.0, 3.0, 6.0]).unwrap();
        let mut p = BatchNormParams::new(1);
        batch_norm(&x, &mut p, Mode::Train).unwrap();
        // mean 3, unbiased var (4+1+0+9)/3
        assert!((p.running_mean.data()[0] - 0.3).abs() < 1e-12);
        assert!((p.running_var.data()[0] - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-12);
        assert!(p.is_initialized());
    }

    #[test]
    fn eval_is_affine_in_running_stats() {
        let mut rng = PrngStream::new(7, "eval");
        let mut p = BatchNormParams::<f64>::new(2);
        p.running_mean = Tensor::from_f64([2], &[0.5, -1.0]).unwrap();
        p.running_var = Tensor::from_f64([2], &[4.0, 0.25]).unwrap();
        p.batches_tracked = Tensor::full([1], 1.0);
        p.gamma.value = Tensor::from_f64([2], &[2.0, -0.5]).unwrap();
        p.beta.value = Tensor::from_f64([2], &[0.1, 0.2]).unwrap();
        let x: Tensor<f64> = rng.uniform_tensor(&[2, 2, 3, 1]);
        let y = batch_norm(&x, &mut p.clone(), Mode::Eval).unwrap();
        for (i, (&xv, &yv)) in x.data().iter().zip(y.data()).enumerate() {
            let ch = (i / 3) % 2;
            let (m, v, g, b) = ([0.5, -1.0][ch], [4.0, 0.25][ch], [2.0, -0.5][ch], [0.1, 0.2][ch]);
            let want = g * (xv - m) / (v + 1e-5f64).sqrt() + b;
            assert!((yv - want).abs() < 1e-12);
        }
        // scaling the input scales the centred output: y(αx) − β = α·(y(x) − β) + (1 − α)·(−γm/σ)
        let alpha = 3.0;
        let y2 = batch_norm(&x.scale(alpha), &mut p.clone(), Mode::Eval).unwrap();
        for (i, (&a, &b)) in y.data().iter().zip(y2.data()).enumerate() {
            let ch = (i / 3) % 2;
            let (m, v, g, be) = ([0.5, -1.0][ch], [4.0, 0.25][ch], [2.0, -0.5][ch], [0.1, 0.2][ch]);
            let shift = (1.0 - alpha) * (-g * m / (v + 1e-5f64).sqrt());
            assert!(((b - be) - (alpha * (a - be) + shift)).abs() < 1e-12);
        }
    }
}
