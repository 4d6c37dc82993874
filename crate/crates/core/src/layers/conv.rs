use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::{expect_rank4, he_normal, Layer, LayerGradients, Mode, Param};
use crate::error::{Error, Result};
use crate::rng::PrngStream;
use crate::tensor::{Scalar, Tensor};

/// Spatial padding of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Keeps the extent at stride 1. Even kernels pad
    /// `floor((k-1)/2)` before and `ceil((k-1)/2)` after.
    Same,
    Explicit {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
}

impl Padding {
    /// `(top, bottom, left, right)` for a `kh×kw` kernel.
    pub fn resolve(self, kh: usize, kw: usize) -> (usize, usize, usize, usize) {
        match self {
            Padding::Same => ((kh - 1) / 2, kh / 2, (kw - 1) / 2, kw / 2),
            Padding::Explicit {
                top,
                bottom,
                left,
                right,
            } => (top, bottom, left, right),
        }
    }
}

/// Kernel `[out_ch, in_ch, kh, kw]`, bias `[out_ch]`, stride and padding.
#[derive(Debug, Clone)]
pub struct ConvParams<T> {
    pub kernel: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: Padding,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>, stride: usize, padding: Padding) -> Result<Self> {
        if kernel.ndim() != 4 || bias.shape() != [kernel.dim(0)] {
            return Err(Error::ShapeMismatch {
                op: "conv params",
                left: kernel.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be ≥ 1".into()));
        }
        Ok(ConvParams {
            kernel: Param::new("kernel", kernel, true),
            bias: Param::new("bias", bias, false),
            stride,
            padding,
        })
    }

    /// He-normal kernel, zero bias.
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: Padding,
        rng: &mut PrngStream,
    ) -> Result<Self> {
        let kernel = he_normal(&[out_ch, in_ch, k, k], in_ch * k * k, rng);
        Self::new(kernel, Tensor::zeros([out_ch]), stride, padding)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.value.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.value.dim(1)
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.value.dim(2), self.kernel.value.dim(3))
    }

    /// Output spatial extent for an `h×w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        let (pt, pb, pl, pr) = self.padding.resolve(kh, kw);
        if h + pt + pb < kh || w + pl + pr < kw {
            return Err(Error::InvalidArgument(format!(
                "conv kernel {kh}×{kw} larger than padded input {}×{}",
                h + pt + pb,
                w + pl + pr
            )));
        }
        Ok((
            (h + pt + pb - kh) / self.stride + 1,
            (w + pl + pr - kw) / self.stride + 1,
        ))
    }
}

/// Convolution extents. Only kernel taps in `ky0..ky1 × kx0..kx1` can
/// reach real input; the others only ever see padding and are skipped.
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pt: usize,
    pl: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    ky0: usize,
    ky1: usize,
    kx0: usize,
    kx1: usize,
}

impl Geometry {
    fn new<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<(usize, Self)> {
        let [n, c, h, w] = expect_rank4(x, "conv2d")?;
        if c != p.in_channels() {
            return Err(Error::ShapeMismatch {
                op: "conv2d channels",
                left: x.shape().to_vec(),
                right: p.kernel.value.shape().to_vec(),
            });
        }
        let (kh, kw) = p.kernel_size();
        let (pt, _, pl, _) = p.padding.resolve(kh, kw);
        let (oh, ow) = p.output_hw(h, w)?;
        // tap k touches input iff o·stride + k − pad ∈ [0, extent) for some o
        let reach = |k: usize, pad: usize, extent: usize, o: usize| {
            let lo = pad.saturating_sub((o - 1) * p.stride).min(k);
            (lo, (pad + extent).min(k).max(lo))
        };
        let (ky0, ky1) = reach(kh, pt, h, oh);
        let (kx0, kx1) = reach(kw, pl, w, ow);
        Ok((
            n,
            Geometry {
                c,
                h,
                w,
                kh,
                kw,
                pt,
                pl,
                stride: p.stride,
                oh,
                ow,
                ky0,
                ky1,
                kx0,
                kx1,
            },
        ))
    }

    fn taps(&self) -> usize {
        (self.ky1 - self.ky0) * (self.kx1 - self.kx0)
    }

    fn rows(&self) -> usize {
        self.c * self.taps()
    }

    fn row(&self, c: usize, ky: usize, kx: usize) -> usize {
        (c * (self.ky1 - self.ky0) + ky - self.ky0) * (self.kx1 - self.kx0) + kx - self.kx0
    }

    fn is_full(&self) -> bool {
        self.taps() == self.kh * self.kw
    }

    /// `oc × rows` kernel matrix restricted to the reachable taps.
    fn kernel_matrix<'a, T: Scalar>(&self, k: &'a [T]) -> Cow<'a, [T]> {
        if self.is_full() {
            return Cow::Borrowed(k);
        }
        let mut m = Vec::with_capacity(k.len() / (self.kh * self.kw) * self.taps());
        for plane in k.chunks(self.kh * self.kw) {
            for ky in self.ky0..self.ky1 {
                m.extend_from_slice(&plane[ky * self.kw + self.kx0..ky * self.kw + self.kx1]);
            }
        }
        Cow::Owned(m)
    }

    /// Scatters a restricted kernel gradient back into the full layout.
    fn expand_kernel_grad<T: Scalar>(&self, dk: Vec<T>, oc: usize) -> Vec<T> {
        if self.is_full() {
            return dk;
        }
        let mut full = vec![T::zero(); oc * self.c * self.kh * self.kw];
        if self.taps() == 0 {
            return full;
        }
        let ekw = self.kx1 - self.kx0;
        for (dst, src) in full.chunks_mut(self.kh * self.kw).zip(dk.chunks(self.taps())) {
            for (i, ky) in (self.ky0..self.ky1).enumerate() {
                dst[ky * self.kw + self.kx0..ky * self.kw + self.kx1].copy_from_slice(&src[i * ekw..(i + 1) * ekw]);
            }
        }
        full
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source pixel index for output position `o` and kernel offset `k`,
    /// or `None` when it falls in the padding.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }

    /// Output positions `lo..hi` whose source for offset `k` is in bounds.
    fn valid(&self, k: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pl > k { (self.pl - k).div_ceil(s) } else { 0 };
        let hi = if self.w + self.pl > k {
            ((self.w + self.pl - k - 1) / s + 1).min(self.ow)
        } else {
            0
        };
        (lo.min(self.ow), hi.max(lo.min(self.ow)))
    }

    /// Writes one image's patches into columns `off..off + cols()` of a
    /// matrix with row length `ld`.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T], ld: usize, off: usize) {
        let (s, ow) = (self.stride, self.ow);
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in self.ky0..self.ky1 {
                for kx in self.kx0..self.kx1 {
                    let row = self.row(c, ky, kx);
                    let (lo, hi) = self.valid(kx);
                    for oy in 0..self.oh {
                        let at = row * ld + off + oy * ow;
                        let line = &mut cols[at..at + ow];
                        let Some(iy) = Self::src(oy, ky, s, self.pt, self.h) else {
                            line.fill(T::zero());
                            continue;
                        };
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if lo < hi {
                            let base = iy * self.w + lo * s + kx - self.pl;
                            if s == 1 {
                                line[lo..hi].copy_from_slice(&plane[base..base + hi - lo]);
                            } else {
                                for (i, v) in line[lo..hi].iter_mut().enumerate() {
                                    *v = plane[base + i * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back onto `dx`.
    fn col2im<T: Scalar>(&self, cols: &[T], ld: usize, off: usize, dx: &mut [T]) {
        let (s, ow) = (self.stride, self.ow);
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in self.ky0..self.ky1 {
                for kx in self.kx0..self.kx1 {
                    let row = self.row(c, ky, kx);
                    let (lo, hi) = self.valid(kx);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..self.oh {
                        let Some(iy) = Self::src(oy, ky, s, self.pt, self.h) else {
                            continue;
                        };
                        let at = row * ld + off + oy * ow;
                        let line = &cols[at + lo..at + hi];
                        let base = iy * self.w + lo * s + kx - self.pl;
                        if s == 1 {
                            for (d, &v) in plane[base..base + hi - lo].iter_mut().zip(line) {
                                *d += v;
                            }
                        } else {
                            for (i, &v) in line.iter().enumerate() {
                                plane[base + i * s] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Images per GEMM so the column buffer stays near [`COL_BUDGET`].
    fn chunk(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.cols()).max(1)).max(1)
    }
}

/// Soft cap on column-buffer elements; small images share one GEMM.
const COL_BUDGET: usize = 1 << 20;

fn conv_forward<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let (n, g) = Geometry::new(x, p)?;
    let oc = p.out_channels();
    let (rows, ncols) = (g.rows(), g.cols());
    let in_len = g.c * g.h * g.w;
    let chunk = g.chunk().min(n.max(1));
    let mut cols = vec![T::zero(); rows * ncols * chunk];
    let mut ybuf = vec![T::zero(); oc * ncols * chunk];
    let mut out = vec![T::zero(); n * oc * ncols];
    let bias = p.bias.value.data();
    let kmat = g.kernel_matrix(p.kernel.value.data());
    for start in (0..n).step_by(chunk) {
        let nb = chunk.min(n - start);
        let ld = nb * ncols;
        for i in 0..nb {
            let b = start + i;
            g.im2col(&x.data()[b * in_len..(b + 1) * in_len], &mut cols, ld, i * ncols);
        }
        let y = &mut ybuf[..oc * ld];
        T::gemm(false, false, oc, rows, ld, &kmat, &cols[..rows * ld], T::zero(), y);
        for i in 0..nb {
            let dst = &mut out[(start + i) * oc * ncols..(start + i + 1) * oc * ncols];
            for (o, line) in dst.chunks_mut(ncols).enumerate() {
                let src = &y[o * ld + i * ncols..o * ld + (i + 1) * ncols];
                for (d, &v) in line.iter_mut().zip(src) {
                    *d = v + bias[o];
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, oc, g.oh, g.ow], out))
}

fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    dy: &Tensor<T>,
) -> Result<LayerGradients<T>> {
    let (n, g) = Geometry::new(x, p)?;
    let oc = p.out_channels();
    let expected = [n, oc, g.oh, g.ow];
    if dy.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d backward",
            left: dy.shape().to_vec(),
            right: expected.to_vec(),
        });
    }
    let (rows, ncols) = (g.rows(), g.cols());
    let in_len = g.c * g.h * g.w;
    let chunk = g.chunk().min(n.max(1));
    let mut cols = vec![T::zero(); rows * ncols * chunk];
    let mut dcols = vec![T::zero(); rows * ncols * chunk];
    let mut dyall = vec![T::zero(); oc * ncols * chunk];
    let mut dk = vec![T::zero(); oc * rows];
    let mut db = vec![T::zero(); oc];
    let mut dx = vec![T::zero(); x.len()];
    let kmat = g.kernel_matrix(p.kernel.value.data());
    for start in (0..n).step_by(chunk) {
        let nb = chunk.min(n - start);
        let ld = nb * ncols;
        for i in 0..nb {
            let b = start + i;
            g.im2col(&x.data()[b * in_len..(b + 1) * in_len], &mut cols, ld, i * ncols);
            let dyb = &dy.data()[b * oc * ncols..(b + 1) * oc * ncols];
            for (o, line) in dyb.chunks(ncols).enumerate() {
                dyall[o * ld + i * ncols..o * ld + (i + 1) * ncols].copy_from_slice(line);
                db[o] += line.iter().copied().sum::<T>();
            }
        }
        let (cols_b, dy_b) = (&cols[..rows * ld], &dyall[..oc * ld]);
        // dK += dY · colsᵀ
        T::gemm(false, true, oc, ld, rows, dy_b, cols_b, T::one(), &mut dk);
        // dcols = Kᵀ · dY
        T::gemm(true, false, rows, oc, ld, &kmat, dy_b, T::zero(), &mut dcols[..rows * ld]);
        for i in 0..nb {
            let b = start + i;
            g.col2im(&dcols, ld, i * ncols, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    Ok(LayerGradients {
        input: Tensor::from_parts(x.shape().to_vec(), dx),
        params: vec![
            Tensor::from_parts(p.kernel.value.shape().to_vec(), g.expand_kernel_grad(dk, oc)),
            Tensor::from_parts(vec![oc], db),
        ],
    })
}

/// Cross-correlation of an `N×C×H×W` batch with bias.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    conv_forward(x, p)
}

/// Average of two parallel convolutions: `0.5·(conv(x,p1) + conv(x,p2))`.
pub fn combined_conv<T: Scalar>(x: &Tensor<T>, p1: &ConvParams<T>, p2: &ConvParams<T>) -> Result<Tensor<T>> {
    let a = conv_forward(x, p1)?;
    let b = conv_forward(x, p2)?;
    average(&a, &b)
}

fn average<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let half = T::c(0.5);
    a.zip_map(b, "combined_conv branches", |u, v| half * (u + v))
}

/// Convolution layer with a forward cache.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub params: ConvParams<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(params: ConvParams<T>) -> Self {
        Conv2d {
            params,
            input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode, _rng: &mut PrngStream) -> Result<Tensor<T>> {
        let y = conv_forward(x, &self.params)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<LayerGradients<T>> {
        let x = self.input.as_ref().ok_or(Error::MissingCache("conv2d"))?;
        conv_backward(x, &self.params, grad_out)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.params.kernel, &self.params.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.params.kernel, &mut self.params.bias]
    }
}

/// Two same-padded convolutions with different kernel sizes whose outputs
/// are averaged.
#[derive(Debug, Clone)]
pub struct CombinedConv<T> {
    pub first: ConvParams<T>,
    pub second: ConvParams<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> CombinedConv<T> {
    pub fn new(first: ConvParams<T>, second: ConvParams<T>) -> Result<Self> {
        if first.out_channels() != second.out_channels()
            || first.in_channels() != second.in_channels()
            || first.stride != second.stride
        {
            return Err(Error::ShapeMismatch {
                op: "combined_conv",
                left: first.kernel.value.shape().to_vec(),
                right: second.kernel.value.shape().to_vec(),
            });
        }
        Ok(CombinedConv {
            first,
            second,
            input: None,
        })
    }

    /// Two He-initialised "same" branches with kernel sizes `k1` and `k2`.
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        (k1, k2): (usize, usize),
        stride: usize,
        rng: &mut PrngStream,
    ) -> Result<Self> {
        let first = ConvParams::init(in_ch, out_ch, k1, stride, Padding::Same, &mut rng.fork("k1"))?;
        let second = ConvParams::init(in_ch, out_ch, k2, stride, Padding::Same, &mut rng.fork("k2"))?;
        Self::new(first, second)
    }
}

impl<T: Scalar> Layer<T> for CombinedConv<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode, _rng: &mut PrngStream) -> Result<Tensor<T>> {
        let y = combined_conv(x, &self.first, &self.second)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<LayerGradients<T>> {
        let x = self.input.as_ref().ok_or(Error::MissingCache("combined_conv"))?;
        let half = grad_out.scale(T::c(0.5));
        let a = conv_backward(x, &self.first, &half)?;
        let b = conv_backward(x, &self.second, &half)?;
        let mut params = a.params;
        params.extend(b.params);
        Ok(LayerGradients {
            input: a.input.add(&b.input)?,
            params,
        })
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![
            &self.first.kernel,
            &self.first.bias,
            &self.second.kernel,
            &self.second.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.first.kernel,
            &mut self.first.bias,
            &mut self.second.kernel,
            &mut self.second.bias,
        ]
    }
}
