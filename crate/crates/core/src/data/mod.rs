//! Labeled image collections, on-disk formats, augmentation and
//! evaluation-time crops.

mod augment;
mod formats;

pub use augment::{crop, flip_horizontal, resize_bilinear, resize_shorter, ten_crop, AugmentConfig, Lighting};
pub use formats::{load_dataset, read_image, write_idx, write_image_dir, DataFormat};

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::PrngStream;
use crate::tensor::Tensor;

/// Which part of a corpus a dataset holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// One image (`C×H×W`, raw pixel values) and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub label: usize,
}

/// Samples sorted by id, with the class-name table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    /// Where the samples were read from (empty for generated data).
    pub source: PathBuf,
}

impl Dataset {
    /// Validates labels and ids, then sorts samples by id.
    pub fn new(split: Split, mut samples: Vec<Sample>, class_names: Vec<String>, source: PathBuf) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Dataset("dataset declares no classes".into()));
        }
        let mut seen = HashSet::new();
        for s in &samples {
            if s.label >= class_names.len() {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes: class_names.len(),
                });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate sample id `{}`", s.id)));
            }
            if s.image.ndim() != 3 {
                return Err(Error::Dataset(format!("sample `{}` is not C×H×W", s.id)));
            }
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Dataset {
            split,
            samples,
            class_names,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn channels(&self) -> Option<usize> {
        self.samples.first().map(|s| s.image.dim(0))
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Applies `f` to every image, keeping ids and labels.
    pub fn map_images(&self, mut f: impl FnMut(&Tensor<f32>) -> Result<Tensor<f32>>) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    id: s.id.clone(),
                    image: f(&s.image)?,
                    label: s.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            samples,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            split: self.split,
            samples: Vec::new(),
            class_names: self.class_names.clone(),
            source: self.source.clone(),
        }
    }

    /// Deterministic split by hashing ids into `[0, 1)`: ids below
    /// `val_fraction` go to the validation part. Both parts are disjoint by
    /// construction and independent of sample order.
    pub fn partition(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&val_fraction) {
            return Err(Error::Config(format!("val_fraction must lie in [0, 1], got {val_fraction}")));
        }
        let root = PrngStream::new(seed, "partition");
        let (mut train, mut val) = (self.clone_meta(), self.clone_meta());
        train.split = Split::Train;
        val.split = Split::Val;
        for s in &self.samples {
            if root.fork(&s.id).uniform() < val_fraction {
                val.samples.push(s.clone());
            } else {
                train.samples.push(s.clone());
            }
        }
        Ok((train, val))
    }

    /// Samples at `indices`, stacked into an `N×C×H×W` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let images: Vec<Tensor<f32>> = indices.iter().map(|&i| self.samples[i].image.clone()).collect();
        let labels = indices.iter().map(|&i| self.samples[i].label).collect();
        Ok((Tensor::stack(&images)?, labels))
    }
}

/// Shape of a generated toy corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub size: usize,
    /// Pixel noise standard deviation, in pixel units.
    pub noise: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            classes: 10,
            per_class: 50,
            channels: 3,
            size: 32,
            noise: 24.0,
        }
    }
}

/// Generates a toy corpus of integer-valued pixels in `[0, 255]`.
///
/// Each class has a prototype: a per-channel colour plus an oriented
/// sinusoidal grating with class-specific frequency and phase. Samples add
/// a random shift of the grating and Gaussian pixel noise.
pub fn synthetic_dataset(spec: ToySpec, seed: u64) -> Result<Dataset> {
    if spec.classes == 0 || spec.per_class == 0 || spec.channels == 0 || spec.size == 0 {
        return Err(Error::Config("toy dataset extents must be positive".into()));
    }
    let root = PrngStream::new(seed, "toy");
    let (c, n) = (spec.channels, spec.size);
    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for k in 0..spec.classes {
        let mut proto = root.fork(&format!("class{k}"));
        let colour: Vec<f64> = (0..c).map(|_| proto.uniform_range(60.0, 196.0)).collect();
        let angle = proto.uniform_range(0.0, std::f64::consts::PI);
        let freq = proto.uniform_range(1.0, 4.0) * std::f64::consts::TAU / n as f64;
        let amp: Vec<f64> = (0..c).map(|_| proto.uniform_range(20.0, 50.0)).collect();
        let (dy, dx) = (angle.sin() * freq, angle.cos() * freq);
        for j in 0..spec.per_class {
            let id = format!("k{k:03}_{j:04}");
            let mut rng = root.fork(&format!("sample/{id}"));
            let phase = proto.uniform_range(0.0, 0.6) + rng.uniform_range(-0.3, 0.3);
            let mut data = Vec::with_capacity(c * n * n);
            for ch in 0..c {
                for y in 0..n {
                    for x in 0..n {
                        let wave = (dy * y as f64 + dx * x as f64 + phase).sin();
                        let v = colour[ch] + amp[ch] * wave + spec.noise * rng.normal();
                        data.push(v.round().clamp(0.0, 255.0) as f32);
                    }
                }
            }
            samples.push(Sample {
                id,
                image: Tensor::new([c, n, n], data)?,
                label: k,
            });
        }
    }
    let names = (0..spec.classes).map(|k| format!("class{k:02}")).collect();
    Dataset::new(Split::Train, samples, names, PathBuf::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        synthetic_dataset(
            ToySpec {
                classes: 3,
                per_class: 4,
                channels: 1,
                size: 6,
                noise: 5.0,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn synthetic_is_deterministic_and_sorted() {
        let a = tiny();
        assert_eq!(a, tiny());
        assert_eq!(a.len(), 12);
        assert!(a.samples.windows(2).all(|w| w[0].id < w[1].id));
        assert!(a.samples.iter().all(|s| s.image.data().iter().all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0)));
    }

    #[test]
    fn partition_is_disjoint_and_total() {
        let d = synthetic_dataset(ToySpec::default(), 0).unwrap();
        let (t, v) = d.partition(0.2, 5).unwrap();
        assert_eq!(t.len() + v.len(), d.len());
        let ids: HashSet<_> = t.samples.iter().map(|s| &s.id).collect();
        assert!(v.samples.iter().all(|s| !ids.contains(&s.id)));
        assert!(v.len() > 50 && v.len() < 150);
    }

    #[test]
    fn rejects_bad_labels_and_duplicates() {
        let img = Tensor::<f32>::zeros([1, 2, 2]);
        let s = |id: &str, label| Sample {
            id: id.into(),
            image: img.clone(),
            label,
        };
        let names = vec!["a".to_string()];
        assert!(Dataset::new(Split::Train, vec![s("x", 1)], names.clone(), PathBuf::new()).is_err());
        assert!(Dataset::new(Split::Train, vec![s("x", 0), s("x", 0)], names, PathBuf::new()).is_err());
    }

    #[test]
    fn batch_stacks() {
        let d = tiny();
        let (x, y) = d.batch(&[0, 5]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 6, 6]);
        assert_eq!(y, vec![d.samples[0].label, d.samples[5].label]);
    }
}
