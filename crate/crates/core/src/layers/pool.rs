//! Stochastic pooling.
//!
//! Within each pooling region with non-negative activations `a_i`, the
//! selection probabilities are `p_i = a_i / Σ a_j` (uniform when the sum is
//! zero). Training samples one activation per region; evaluation returns the
//! expectation `Σ p_i a_i`.
//!
//! Regions that run past the border are clipped, which is equivalent to zero
//! padding: padded zeros carry zero probability mass.

use serde::{Deserialize, Serialize};

use super::{expect_rank4, Layer, LayerGradients, Mode};
use crate::error::{Error, Result};
use crate::rng::PrngStream;
use crate::tensor::{Scalar, Tensor};

/// Region size and stride of a pooling layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolWindow {
    pub region: (usize, usize),
    pub stride: (usize, usize),
}

impl Default for PoolWindow {
    fn default() -> Self {
        PoolWindow {
            region: (2, 2),
            stride: (2, 2),
        }
    }
}

impl PoolWindow {
    fn out_extent(extent: usize, region: usize, stride: usize) -> usize {
        if extent <= region {
            1
        } else {
            (extent - region).div_ceil(stride) + 1
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            Self::out_extent(h, self.region.0, self.stride.0),
            Self::out_extent(w, self.region.1, self.stride.1),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.region.0 == 0 || self.region.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::InvalidArgument("pool region and stride must be positive".into()));
        }
        Ok(())
    }

    /// Flat input indices (within one `h×w` plane) of region `(oy, ox)`.
    fn region_indices(&self, oy: usize, ox: usize, h: usize, w: usize, out: &mut Vec<usize>) {
        out.clear();
        let (y0, x0) = (oy * self.stride.0, ox * self.stride.1);
        for y in y0..(y0 + self.region.0).min(h) {
            for x in x0..(x0 + self.region.1).min(w) {
                out.push(y * w + x);
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Cache<T> {
    /// Flat input index selected for every output element.
    Train { shape: Vec<usize>, picks: Vec<usize> },
    Eval { input: Tensor<T>, output: Tensor<T> },
}

/// Stochastic pooling layer.
///
/// When [`frozen`](StochasticPool::freeze), train-mode passes reuse the
/// previously sampled indices instead of drawing new ones, which makes the
/// layer a deterministic function for finite-difference checks.
#[derive(Debug, Clone)]
pub struct StochasticPool<T> {
    pub window: PoolWindow,
    frozen: bool,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> StochasticPool<T> {
    pub fn new(window: PoolWindow) -> Self {
        StochasticPool {
            window,
            frozen: false,
            cache: None,
        }
    }

    pub fn freeze(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Flat input indices chosen by the last train-mode pass.
    pub fn sampled_indices(&self) -> Option<&[usize]> {
        match &self.cache {
            Some(Cache::Train { picks, .. }) => Some(picks),
            _ => None,
        }
    }

    fn run(&self, x: &Tensor<T>, mode: Mode, rng: &mut PrngStream) -> Result<(Tensor<T>, Cache<T>)> {
        self.window.validate()?;
        let [n, c, h, w] = expect_rank4(x, "stochastic_pool")?;
        if let Some(v) = x.data().iter().find(|v| **v < T::zero()) {
            return Err(Error::NegativeInput {
                op: "stochastic_pool",
                value: v.as_f64(),
            });
        }
        let (oh, ow) = self.window.output_hw(h, w);
        let out_shape = vec![n, c, oh, ow];
        let mut out = vec![T::zero(); n * c * oh * ow];
        let reuse = match (&self.cache, self.frozen, mode) {
            (Some(Cache::Train { shape, picks }), true, Mode::Train) if shape == x.shape() => {
                Some(picks.clone())
            }
            _ => None,
        };
        let mut picks = Vec::with_capacity(out.len());
        let mut region = Vec::with_capacity(self.window.region.0 * self.window.region.1);
        let data = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (plane * oh + oy) * ow + ox;
                    self.window.region_indices(oy, ox, h, w, &mut region);
                    let sum: T = region.iter().map(|&i| data[base + i]).sum();
                    match mode {
                        Mode::Eval => {
                            if sum > T::zero() {
                                let sq: T = region.iter().map(|&i| data[base + i] * data[base + i]).sum();
                                out[o] = sq / sum;
                            }
                        }
                        Mode::Train => {
                            let pick = match &reuse {
                                Some(prev) => prev[o],
                                None => base + sample(&region, data, base, sum, rng),
                            };
                            out[o] = data[pick];
                            picks.push(pick);
                        }
                    }
                }
            }
        }
        let y = Tensor::from_parts(out_shape, out);
        let cache = match mode {
            Mode::Train => Cache::Train {
                shape: x.shape().to_vec(),
                picks,
            },
            Mode::Eval => Cache::Eval {
                input: x.clone(),
                output: y.clone(),
            },
        };
        Ok((y, cache))
    }
}

/// Draws one index of `region` with probability proportional to its value.
fn sample<T: Scalar>(region: &[usize], data: &[T], base: usize, sum: T, rng: &mut PrngStream) -> usize {
    let u = rng.uniform();
    if sum <= T::zero() {
        return region[((u * region.len() as f64) as usize).min(region.len() - 1)];
    }
    let threshold = u * sum.as_f64();
    let mut acc = 0.0;
    let mut last_positive = region[0];
    for &i in region {
        let v = data[base + i].as_f64();
        if v > 0.0 {
            acc += v;
            last_positive = i;
            if threshold < acc {
                return i;
            }
        }
    }
    // accumulated rounding can leave the threshold just above the total
    last_positive
}

/// Stateless entry point.
pub fn stochastic_pool<T: Scalar>(
    x: &Tensor<T>,
    window: PoolWindow,
    mode: Mode,
    rng: &mut PrngStream,
) -> Result<Tensor<T>> {
    StochasticPool::new(window).run(x, mode, rng).map(|(y, _)| y)
}

impl<T: Scalar> Layer<T> for StochasticPool<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut PrngStream) -> Result<Tensor<T>> {
        let (y, cache) = self.run(x, mode, rng)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<LayerGradients<T>> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache("stochastic_pool"))?;
        let input = match cache {
            Cache::Train { shape, picks } => {
                if grad_out.len() != picks.len() {
                    return Err(Error::ShapeMismatch {
                        op: "stochastic_pool backward",
                        left: grad_out.shape().to_vec(),
                        right: shape.clone(),
                    });
                }
                let mut dx = Tensor::zeros(shape.clone());
                for (&pick, &g) in picks.iter().zip(grad_out.data()) {
                    dx.data_mut()[pick] += g;
                }
                dx
            }
            Cache::Eval { input, output } => {
                output.same_shape(grad_out, "stochastic_pool backward")?;
                let [_, _, h, w] = expect_rank4(input, "stochastic_pool")?;
                let (oh, ow) = (output.dim(2), output.dim(3));
                let mut dx = Tensor::zeros(input.shape().to_vec());
                let mut region = Vec::new();
                let data = input.data();
                for plane in 0..input.dim(0) * input.dim(1) {
                    let base = plane * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let o = (plane * oh + oy) * ow + ox;
                            self.window.region_indices(oy, ox, h, w, &mut region);
                            let sum: T = region.iter().map(|&i| data[base + i]).sum();
                            if sum <= T::zero() {
                                continue;
                            }
                            // ∂(Σa²/Σa)/∂a_k = (2a_k − out) / Σa
                            let (g, y) = (grad_out.data()[o], output.data()[o]);
                            for &i in &region {
                                dx.data_mut()[base + i] += g * (T::c(2.0) * data[base + i] - y) / sum;
                            }
                        }
                    }
                }
                dx
            }
        };
        Ok(LayerGradients {
            input,
            params: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(values: &[f64]) -> Tensor<f64> {
        Tensor::from_f64([1, 1, 1, values.len()], values).unwrap()
    }

    fn window(n: usize) -> PoolWindow {
        PoolWindow {
            region: (1, n),
            stride: (1, n),
        }
    }

    #[test]
    fn eval_is_probability_weighted_mean() {
        // outcomes 1 (p = 1/4) and 3 (p = 3/4)
        let expected = 0.25 * 1.0 + 0.75 * 3.0;
        let mut rng = PrngStream::new(0, "p");
        let y = stochastic_pool(&region(&[1.0, 3.0]), window(2), Mode::Eval, &mut rng).unwrap();
        assert_eq!(y.data()[0], expected);
        assert_eq!(expected, 2.5);
    }

    #[test]
    fn equal_values_always_sample_that_value() {
        let x = Tensor::<f64>::full([1, 1, 2, 2], 2.0);
        let mut rng = PrngStream::new(1, "eq");
        for _ in 0..50 {
            let y = stochastic_pool(&x, PoolWindow::default(), Mode::Train, &mut rng).unwrap();
            assert_eq!(y.data(), &[2.0]);
        }
        assert_eq!(stochastic_pool(&x, PoolWindow::default(), Mode::Eval, &mut rng).unwrap().data(), &[2.0]);
    }

    #[test]
    fn all_zero_region_is_zero_and_uniform() {
        let x = Tensor::<f64>::zeros([1, 1, 2, 2]);
        let mut rng = PrngStream::new(2, "zero");
        let mut counts = [0usize; 4];
        let mut layer = StochasticPool::new(PoolWindow::default());
        for _ in 0..4000 {
            let y = layer.forward(&x, Mode::Train, &mut rng).unwrap();
            assert_eq!(y.data(), &[0.0]);
            counts[layer.sampled_indices().unwrap()[0]] += 1;
        }
        assert!(counts.iter().all(|&c| (850..1150).contains(&c)), "{counts:?}");
        assert_eq!(stochastic_pool(&x, PoolWindow::default(), Mode::Eval, &mut rng).unwrap().data(), &[0.0]);
    }

    #[test]
    fn rejects_negative_input() {
        let mut rng = PrngStream::new(0, "neg");
        let err = stochastic_pool(&region(&[1.0, -0.5]), window(2), Mode::Eval, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NegativeInput { .. }));
    }

    #[test]
    fn train_backward_routes_to_sampled_index() {
        let mut rng = PrngStream::new(3, "route");
        let mut layer = StochasticPool::<f64>::new(PoolWindow::default());
        let x = rng.uniform_tensor(&[1, 2, 4, 4]);
        let y = layer.forward(&x, Mode::Train, &mut rng).unwrap();
        let g = layer.backward(&Tensor::full(y.shape().to_vec(), 1.0)).unwrap();
        let picks = layer.sampled_indices().unwrap().to_vec();
        for (i, &v) in g.input.data().iter().enumerate() {
            assert_eq!(v, if picks.contains(&i) { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn frozen_layer_reuses_indices() {
        let mut rng = PrngStream::new(4, "frozen");
        let mut layer = StochasticPool::<f64>::new(PoolWindow::default());
        let x = rng.uniform_tensor(&[1, 1, 4, 4]);
        layer.forward(&x, Mode::Train, &mut rng).unwrap();
        let first = layer.sampled_indices().unwrap().to_vec();
        layer.freeze(true);
        for _ in 0..20 {
            layer.forward(&x, Mode::Train, &mut rng).unwrap();
            assert_eq!(layer.sampled_indices().unwrap(), first.as_slice());
        }
    }

    #[test]
    fn border_regions_are_clipped() {
        let x = Tensor::<f64>::full([1, 1, 5, 3], 1.0);
        let mut rng = PrngStream::new(0, "clip");
        let y = stochastic_pool(&x, PoolWindow::default(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn same_stream_same_samples() {
        let mut rng = PrngStream::new(6, "replay");
        let x: Tensor<f32> = rng.uniform_tensor(&[2, 3, 6, 6]);
        let s = PrngStream::new(6, "pool");
        let a = stochastic_pool(&x, PoolWindow::default(), Mode::Train, &mut s.clone()).unwrap();
        let b = stochastic_pool(&x, PoolWindow::default(), Mode::Train, &mut s.clone()).unwrap();
        assert_eq!(a, b);
    }
}
