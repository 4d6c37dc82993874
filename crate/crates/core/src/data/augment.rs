//! Training-time augmentation and evaluation-time crops.
//!
//! Resizing is bilinear with half-pixel centres (`align_corners = false`):
//! output pixel `d` samples input coordinate `(d + 0.5) · in / out − 0.5`,
//! clamped to the valid range. Resizing to the same size is the identity.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::PrngStream;
use crate::tensor::Tensor;

/// Principal axes of per-pixel colour, used for lighting noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    /// Eigenvalues of the channel covariance, in pixel² units.
    pub eigenvalues: Vec<f64>,
    /// Column-major `C×C` eigenvectors; column `j` pairs with eigenvalue `j`.
    pub eigenvectors: Vec<f64>,
}

impl Lighting {
    /// Channel covariance over every pixel of every image in `ds`.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let c = ds.channels().ok_or_else(|| Error::Dataset("no samples for lighting basis".into()))?;
        let mut sum = vec![0.0; c];
        let mut outer = DMatrix::<f64>::zeros(c, c);
        let mut count = 0usize;
        for s in &ds.samples {
            if s.image.dim(0) != c {
                return Err(Error::Dataset("mixed channel counts".into()));
            }
            let plane = s.image.dim(1) * s.image.dim(2);
            let d = s.image.data();
            for p in 0..plane {
                for a in 0..c {
                    let va = f64::from(d[a * plane + p]);
                    sum[a] += va;
                    for b in 0..=a {
                        outer[(a, b)] += va * f64::from(d[b * plane + p]);
                    }
                }
            }
            count += plane;
        }
        let n = count as f64;
        let mut cov = DMatrix::<f64>::zeros(c, c);
        for a in 0..c {
            for b in 0..=a {
                let v = outer[(a, b)] / n - sum[a] * sum[b] / (n * n);
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        Ok(Lighting {
            eigenvalues: eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect(),
            eigenvectors: eig.eigenvectors.as_slice().to_vec(),
        })
    }

    fn channels(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Per-channel offset `Σ_j V[c, j] · α_j · sqrt(λ_j)`.
    fn offsets(&self, alphas: &[f64]) -> Vec<f64> {
        let c = self.channels();
        (0..c)
            .map(|ch| {
                (0..c)
                    .map(|j| self.eigenvectors[j * c + ch] * alphas[j] * self.eigenvalues[j].sqrt())
                    .sum()
            })
            .collect()
    }
}

/// Random resize, crop, flip and colour noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Inclusive range for the shorter side after resizing.
    pub resize_range: (usize, usize),
    pub crop_size: usize,
    pub hflip_prob: f64,
    /// Standard deviation of the colour noise draw. Without `pca` each
    /// channel shifts by `255 · strength · z`.
    pub jitter: f64,
    pub pca: Option<Lighting>,
}

impl AugmentConfig {
    /// Scales the 224-crop / [256, 480] protocol down to `crop`.
    ///
    /// ```
    /// # use alphanet::data::AugmentConfig;
    /// assert_eq!(AugmentConfig::desk(32).resize_range, (36, 68));
    /// ```
    pub fn desk(crop: usize) -> Self {
        AugmentConfig {
            resize_range: (crop * 256 / 224, crop * 480 / 224),
            crop_size: crop,
            hflip_prob: 0.5,
            jitter: 0.1,
            pca: None,
        }
    }

    /// Deterministic pipeline: resize to `crop`, no flips, no noise.
    pub fn identity(crop: usize) -> Self {
        AugmentConfig {
            resize_range: (crop, crop),
            crop_size: crop,
            hflip_prob: 0.0,
            jitter: 0.0,
            pca: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.resize_range;
        if self.crop_size == 0 || lo < self.crop_size || hi < lo {
            return Err(Error::Config(format!(
                "resize_range {:?} must satisfy crop_size ({}) <= min <= max",
                self.resize_range, self.crop_size
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!("hflip_prob {} outside [0, 1]", self.hflip_prob)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config(format!("jitter {} must be a finite non-negative number", self.jitter)));
        }
        Ok(())
    }

    /// Augments one `C×H×W` image. Every draw comes from forks of `stream`,
    /// so callers fork per epoch and sample id.
    pub fn apply(&self, img: &Tensor<f32>, stream: &PrngStream) -> Result<Tensor<f32>> {
        self.validate()?;
        let side = stream.fork("resize").int_inclusive(self.resize_range.0, self.resize_range.1);
        let resized = resize_shorter(img, side)?;
        let (rh, rw) = (resized.dim(1), resized.dim(2));
        let k = self.crop_size;
        let mut pos = stream.fork("crop");
        let (top, left) = (pos.below(rh - k + 1), pos.below(rw - k + 1));
        let mut out = crop(&resized, top, left, k)?;
        if stream.fork("flip").bernoulli(self.hflip_prob) {
            out = flip_horizontal(&out);
        }
        if self.jitter > 0.0 {
            let c = out.dim(0);
            let mut noise = stream.fork("lighting");
            let alphas: Vec<f64> = (0..c).map(|_| self.jitter * noise.normal()).collect();
            let offsets = match &self.pca {
                Some(l) if l.channels() == c => l.offsets(&alphas),
                Some(l) => {
                    return Err(Error::Config(format!(
                        "lighting basis has {} channels, image has {c}",
                        l.channels()
                    )))
                }
                None => alphas.iter().map(|a| 255.0 * a).collect(),
            };
            let plane = k * k;
            for (ch, off) in offsets.iter().enumerate() {
                for v in &mut out.data_mut()[ch * plane..(ch + 1) * plane] {
                    *v += *off as f32;
                }
            }
        }
        Ok(out)
    }
}

/// Target size when the shorter of `h`, `w` becomes `side`.
fn shorter_side_to(h: usize, w: usize, side: usize) -> (usize, usize) {
    let scale = |long: usize, short: usize| ((long * side) as f64 / short as f64).round() as usize;
    if h <= w {
        (side, scale(w, h).max(side))
    } else {
        (scale(h, w).max(side), side)
    }
}

fn source_taps(out: usize, inp: usize) -> Vec<(usize, usize, f32)> {
    let ratio = inp as f64 / out as f64;
    (0..out)
        .map(|d| {
            let s = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (inp - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

/// Resizes so the shorter side becomes `side`, keeping the aspect ratio.
pub fn resize_shorter(img: &Tensor<f32>, side: usize) -> Result<Tensor<f32>> {
    if img.ndim() != 3 {
        return Err(Error::InvalidArgument(format!("expected C×H×W, got {:?}", img.shape())));
    }
    let (oh, ow) = shorter_side_to(img.dim(1), img.dim(2), side);
    resize_bilinear(img, oh, ow)
}

/// Bilinear resize of a `C×H×W` image to `C×oh×ow`.
pub fn resize_bilinear(img: &Tensor<f32>, oh: usize, ow: usize) -> Result<Tensor<f32>> {
    if img.ndim() != 3 {
        return Err(Error::InvalidArgument(format!("expected C×H×W, got {:?}", img.shape())));
    }
    let (c, h, w) = (img.dim(0), img.dim(1), img.dim(2));
    if h == 0 || w == 0 || oh == 0 || ow == 0 {
        return Err(Error::InvalidArgument("resize extents must be positive".into()));
    }
    if (oh, ow) == (h, w) {
        return Ok(img.clone());
    }
    let (ty, tx) = (source_taps(oh, h), source_taps(ow, w));
    let d = img.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = &d[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = base[y0 * w + x0] * (1.0 - fx) + base[y0 * w + x1] * fx;
                let bottom = base[y1 * w + x0] * (1.0 - fx) + base[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new([c, oh, ow], out)
}

/// Square `size×size` window with top-left corner at (`top`, `left`).
pub fn crop(img: &Tensor<f32>, top: usize, left: usize, size: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = (img.dim(0), img.dim(1), img.dim(2));
    if top + size > h || left + size > w {
        return Err(Error::InvalidArgument(format!(
            "crop {size}×{size} at ({top}, {left}) exceeds {h}×{w} image"
        )));
    }
    let d = img.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in top..top + size {
            let row = ch * h * w + y * w;
            out.extend_from_slice(&d[row + left..row + left + size]);
        }
    }
    Tensor::new([c, size, size], out)
}

/// Mirrors the last axis.
pub fn flip_horizontal(img: &Tensor<f32>) -> Tensor<f32> {
    let w = img.dim(img.ndim() - 1);
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

/// Four corners and the centre, then the mirrored five, in that order.
/// The centre offset rounds down.
pub fn ten_crop(img: &Tensor<f32>, size: usize) -> Result<Vec<Tensor<f32>>> {
    if img.ndim() != 3 {
        return Err(Error::InvalidArgument(format!("expected C×H×W, got {:?}", img.shape())));
    }
    let (h, w) = (img.dim(1), img.dim(2));
    if size == 0 || h < size || w < size {
        return Err(Error::InvalidArgument(format!("{h}×{w} image is smaller than crop {size}")));
    }
    let (b, r) = (h - size, w - size);
    let origins = [(0, 0), (0, r), (b, 0), (b, r), (b / 2, r / 2)];
    let mut crops = origins
        .iter()
        .map(|&(t, l)| crop(img, t, l, size))
        .collect::<Result<Vec<_>>>()?;
    let flipped: Vec<_> = crops.iter().map(flip_horizontal).collect();
    crops.extend(flipped);
    Ok(crops)
}
