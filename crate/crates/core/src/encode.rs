//! Input normalizations and the compact alpha-encoding codec.
//!
//! Alpha-encoding stores an image as a per-image affine map plus an 8-bit
//! payload: `x ≈ offset + scale · q / 255` with `q = round(255 (x − offset) / scale)`.
//! Used as a normalization, the network sees `q / 255`, i.e. the quantized
//! per-image min-max rescaling into `[0, 1]`.
//!
//! File layout, little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `AENC` |
//! | 1 | format version, `1` |
//! | 12 | `C`, `H`, `W` as `u32` |
//! | 4 | offset, `f32` |
//! | 4 | scale, `f32` |
//! | `C·H·W` | payload |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"AENC";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 4 + 1 + 12 + 4 + 4;
/// Lower bound on per-channel standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

/// Input normalization applied before training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `ln(1 + x) / ln(1 + 255)` per pixel.
    Log,
    /// Per-channel standardization with training-split statistics.
    Zscore,
    /// Quantized per-image min-max rescaling.
    Alpha,
}

impl Normalization {
    pub const ALL: [Normalization; 3] = [Normalization::Log, Normalization::Zscore, Normalization::Alpha];

    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::Log => "log",
            Normalization::Zscore => "zscore",
            Normalization::Alpha => "alpha",
        }
    }

    /// Applies the normalization to one `C×H×W` image of raw pixel values.
    /// `stats` is required for z-score only.
    pub fn apply<T: Scalar>(self, img: &Tensor<T>, stats: Option<&DatasetStats>) -> Result<Tensor<T>> {
        match self {
            Normalization::Log => log_scale(img, 255.0),
            Normalization::Zscore => {
                z_score(img, stats.ok_or_else(|| Error::Config("z-score needs dataset statistics".into()))?)
            }
            Normalization::Alpha => Ok(alpha_encode(img)?.unit_tensor()),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Normalization::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown normalization `{s}` (expected log, zscore or alpha)")))
    }
}

/// `ln(1 + x) / ln(1 + max_value)`; maps `[0, max_value]` onto `[0, 1]`.
pub fn log_scale<T: Scalar>(img: &Tensor<T>, max_value: f64) -> Result<Tensor<T>> {
    if let Some(v) = img.data().iter().find(|v| **v < T::zero()) {
        return Err(Error::NegativeInput {
            op: "log_scale",
            value: v.as_f64(),
        });
    }
    let denom = max_value.ln_1p();
    Ok(img.map(|x| T::c(x.as_f64().ln_1p() / denom)))
}

/// Per-channel mean and standard deviation of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DatasetStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Exactly rounded sum (Shewchuk's partials), so the result does not depend
/// on the order values arrive in.
#[derive(Debug, Default, Clone)]
struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    fn value(&self) -> f64 {
        // partials are non-overlapping and ascending; fold from the top with
        // a half-even correction, as Python's math.fsum does
        let p = &self.partials;
        let Some(mut n) = p.len().checked_sub(1) else { return 0.0 };
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            n -= 1;
            let x = hi;
            hi = x + p[n];
            lo = p[n] - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

/// Population mean and standard deviation per channel over `images`
/// (each `C×H×W`), with the standard deviation floored at [`STD_FLOOR`].
pub fn compute_dataset_stats<'a, T: Scalar>(images: impl IntoIterator<Item = &'a Tensor<T>>) -> Result<DatasetStats> {
    let images: Vec<&Tensor<T>> = images.into_iter().collect();
    let first = images.first().ok_or_else(|| Error::Dataset("cannot compute statistics of an empty split".into()))?;
    if first.ndim() != 3 {
        return Err(Error::InvalidArgument(format!("expected C×H×W images, got {:?}", first.shape())));
    }
    let c = first.dim(0);
    for img in &images {
        if img.ndim() != 3 || img.dim(0) != c {
            return Err(Error::ShapeMismatch {
                op: "dataset statistics",
                left: first.shape().to_vec(),
                right: img.shape().to_vec(),
            });
        }
    }
    let planes = |ch: usize| {
        images.iter().flat_map(move |img| {
            let hw = img.dim(1) * img.dim(2);
            img.data()[ch * hw..(ch + 1) * hw].iter().map(|v| v.as_f64())
        })
    };
    let mut mean = Vec::with_capacity(c);
    let mut std = Vec::with_capacity(c);
    for ch in 0..c {
        let mut sum = ExactSum::default();
        let mut n = 0usize;
        for v in planes(ch) {
            sum.add(v);
            n += 1;
        }
        let mu = sum.value() / n as f64;
        let mut sq = ExactSum::default();
        for v in planes(ch) {
            sq.add((v - mu) * (v - mu));
        }
        mean.push(mu);
        std.push((sq.value() / n as f64).sqrt().max(STD_FLOOR));
    }
    Ok(DatasetStats { mean, std })
}

/// `(x − mean_c) / std_c` per channel of a `C×H×W` image.
pub fn z_score<T: Scalar>(img: &Tensor<T>, stats: &DatasetStats) -> Result<Tensor<T>> {
    if img.ndim() != 3 || img.dim(0) != stats.channels() {
        return Err(Error::ShapeMismatch {
            op: "z_score",
            left: img.shape().to_vec(),
            right: vec![stats.channels()],
        });
    }
    let hw = img.dim(1) * img.dim(2);
    let mut out = img.clone();
    for (ch, plane) in out.data_mut().chunks_mut(hw).enumerate() {
        let (m, s) = (stats.mean[ch], stats.std[ch]);
        plane.iter_mut().for_each(|v| *v = T::c((v.as_f64() - m) / s));
    }
    Ok(out)
}

/// An alpha-encoded image.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    /// `(C, H, W)`.
    pub dims: (u32, u32, u32),
    pub offset: f32,
    pub scale: f32,
    pub payload: Vec<u8>,
}

impl EncodedImage {
    fn shape(&self) -> Vec<usize> {
        vec![self.dims.0 as usize, self.dims.1 as usize, self.dims.2 as usize]
    }

    /// Payload rescaled to `[0, 1]`.
    pub fn unit_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.payload.iter().map(|&q| T::c(f64::from(q) / 255.0)).collect();
        Tensor::from_parts(self.shape(), data)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        for d in [self.dims.0, self.dims.1, self.dims.2] {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.offset.to_le_bytes());
        out.extend_from_slice(&self.scale.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("AENC: {m}"));
        if bytes.len() < HEADER_BYTES {
            return Err(bad("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {}", bytes[4])));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let f32_at = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let dims = (u32_at(5), u32_at(9), u32_at(13));
        let len = dims.0 as usize * dims.1 as usize * dims.2 as usize;
        if len == 0 {
            return Err(bad("zero extent"));
        }
        if bytes.len() != HEADER_BYTES + len {
            return Err(bad(&format!("payload is {} bytes, dims need {len}", bytes.len() - HEADER_BYTES)));
        }
        Ok(EncodedImage {
            dims,
            offset: f32_at(17),
            scale: f32_at(21),
            payload: bytes[HEADER_BYTES..].to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Encodes a finite `C×H×W` image.
pub fn alpha_encode<T: Scalar>(img: &Tensor<T>) -> Result<EncodedImage> {
    if img.ndim() != 3 {
        return Err(Error::InvalidArgument(format!("expected a C×H×W image, got {:?}", img.shape())));
    }
    img.check_finite("alpha_encode input")?;
    let as32: Vec<f32> = img.data().iter().map(|v| v.as_f64() as f32).collect();
    let lo = as32.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = as32.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    let scale = if range > 0.0 && range.is_finite() { range } else { 1.0 };
    let payload = as32
        .iter()
        .map(|&x| (255.0 * f64::from(x - lo) / f64::from(scale)).round().clamp(0.0, 255.0) as u8)
        .collect();
    let dim = |i: usize| u32::try_from(img.dim(i)).map_err(|_| Error::InvalidArgument("image extent exceeds u32".into()));
    Ok(EncodedImage {
        dims: (dim(0)?, dim(1)?, dim(2)?),
        offset: lo,
        scale,
        payload,
    })
}

/// Inverts [`alpha_encode`] up to quantization.
pub fn alpha_decode<T: Scalar>(e: &EncodedImage) -> Result<Tensor<T>> {
    let len = e.dims.0 as usize * e.dims.1 as usize * e.dims.2 as usize;
    if e.payload.len() != len {
        return Err(Error::Format(format!("payload length {} does not match dims {:?}", e.payload.len(), e.dims)));
    }
    let (o, s) = (f64::from(e.offset), f64::from(e.scale));
    let data = e.payload.iter().map(|&q| T::c(o + s * f64::from(q) / 255.0)).collect();
    Tensor::new(e.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PrngStream;

    fn img(c: usize, h: usize, w: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64([c, h, w], v).unwrap()
    }

    #[test]
    fn log_scale_points() {
        let y = log_scale(&img(1, 1, 3, &[0.0, 255.0, 15.0]), 255.0).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 1.0).abs() < 1e-15);
        assert!((y.data()[2] - 0.5).abs() < 1e-15);
        assert!(matches!(
            log_scale(&img(1, 1, 1, &[-1.0]), 255.0),
            Err(Error::NegativeInput { .. })
        ));
    }

    #[test]
    fn z_score_points() {
        let stats = DatasetStats {
            mean: vec![1.0],
            std: vec![1.0],
        };
        assert_eq!(z_score(&img(1, 1, 2, &[0.0, 2.0]), &stats).unwrap().to_f64_vec(), vec![-1.0, 1.0]);
        let flat = img(1, 2, 2, &[3.0; 4]);
        let s = compute_dataset_stats([&flat]).unwrap();
        assert_eq!(s.mean, vec![3.0]);
        assert_eq!(s.std, vec![STD_FLOOR]);
        assert!(z_score(&flat, &s).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(z_score(&img(2, 1, 1, &[0.0, 0.0]), &stats).is_err());
    }

    #[test]
    fn stats_of_two_images() {
        let a = img(1, 2, 2, &[0.0; 4]);
        let b = img(1, 2, 2, &[2.0; 4]);
        let s = compute_dataset_stats([&a, &b]).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.std, vec![1.0]);
        assert!(compute_dataset_stats::<f64>([]).is_err());
    }

    #[test]
    fn stats_are_order_independent() {
        let mut rng = PrngStream::new(2, "stats");
        let imgs: Vec<Tensor<f64>> = (0..7).map(|_| rng.normal_tensor(&[3, 4, 5], 1e3).map(|v| v + 1e-3)).collect();
        let fwd = compute_dataset_stats(imgs.iter()).unwrap();
        let rev = compute_dataset_stats(imgs.iter().rev()).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn z_score_twice_is_standard() {
        let mut rng = PrngStream::new(3, "z");
        let imgs: Vec<Tensor<f64>> = (0..5).map(|_| rng.normal_tensor(&[2, 3, 3], 4.0)).collect();
        let s = compute_dataset_stats(imgs.iter()).unwrap();
        let z: Vec<_> = imgs.iter().map(|i| z_score(i, &s).unwrap()).collect();
        let s2 = compute_dataset_stats(z.iter()).unwrap();
        for ch in 0..2 {
            assert!(s2.mean[ch].abs() < 1e-12);
            assert!((s2.std[ch] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_sum_cancels() {
        let mut s = ExactSum::default();
        for v in [1e100, 1.0, -1e100, 1e-100] {
            s.add(v);
        }
        assert_eq!(s.value(), 1.0 + 1e-100);
    }

    #[test]
    fn constant_image_round_trip() {
        let x = img(1, 2, 2, &[7.5; 4]);
        let e = alpha_encode(&x).unwrap();
        assert_eq!(e.scale, 1.0);
        assert!(e.payload.iter().all(|&q| q == 0));
        assert_eq!(alpha_decode::<f64>(&e).unwrap(), x);
    }

    #[test]
    fn header_layout() {
        let x = img(1, 1, 2, &[1.0, 3.0]);
        let bytes = alpha_encode(&x).unwrap().to_bytes();
        let mut expect = b"AENC".to_vec();
        expect.push(1);
        for d in [1u32, 1, 2] {
            expect.extend_from_slice(&d.to_le_bytes());
        }
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&2.0f32.to_le_bytes());
        expect.extend_from_slice(&[0, 255]);
        assert_eq!(bytes, expect);
        assert_eq!(EncodedImage::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn rejects_corrupt_files() {
        let good = alpha_encode(&img(1, 1, 2, &[1.0, 3.0])).unwrap().to_bytes();
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(EncodedImage::from_bytes(&magic).is_err());
        let mut version = good.clone();
        version[4] = 2;
        assert!(EncodedImage::from_bytes(&version).is_err());
        assert!(EncodedImage::from_bytes(&good[..good.len() - 1]).is_err());
        assert!(EncodedImage::from_bytes(&good[..10]).is_err());
    }

    #[test]
    fn size_arithmetic() {
        let x = Tensor::<f32>::zeros([3, 64, 64]);
        let e = alpha_encode(&x).unwrap();
        assert_eq!(e.payload.len(), 12288);
        let raw = 3 * 64 * 64 * 4;
        assert_eq!(raw, 49152);
        assert!(raw as f64 / e.encoded_len() as f64 >= 3.9);
    }

    #[test]
    fn normalization_names() {
        for n in Normalization::ALL {
            assert_eq!(n.to_string().parse::<Normalization>().unwrap(), n);
        }
        assert!("minmax".parse::<Normalization>().is_err());
    }
}
