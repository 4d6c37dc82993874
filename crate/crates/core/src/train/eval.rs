//! Input preparation and Top-1 evaluation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{resize_shorter, ten_crop, Dataset};
use crate::encode::{compute_dataset_stats, DatasetStats, Normalization};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::losses::LossConfig;
use crate::net::Network;
use crate::rng::PrngStream;
use crate::tensor::{Scalar, Tensor};

const EVAL_BATCH: usize = 64;

/// Raw pixels to network input: normalisation plus cast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPipeline {
    pub normalization: Normalization,
    /// Per-channel statistics of the training split (z-score only).
    pub stats: Option<DatasetStats>,
}

impl InputPipeline {
    /// Fits any statistics the normalisation needs on `train`.
    pub fn fit(normalization: Normalization, train: &Dataset) -> Result<Self> {
        let stats = match normalization {
            Normalization::Zscore => Some(compute_dataset_stats(train.samples.iter().map(|s| &s.image))?),
            _ => None,
        };
        Ok(InputPipeline { normalization, stats })
    }

    pub fn prepare<T: Scalar>(&self, img: &Tensor<f32>) -> Result<Tensor<T>> {
        Ok(self.normalization.apply(img, self.stats.as_ref())?.cast())
    }

    /// Prepares and stacks images into `N×C×H×W`.
    pub fn prepare_batch<T: Scalar>(&self, images: &[Tensor<f32>]) -> Result<Tensor<T>> {
        let prepared = images.iter().map(|i| self.prepare(i)).collect::<Result<Vec<Tensor<T>>>>()?;
        Tensor::stack(&prepared)
    }
}

/// How test images become score vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// The whole image, once.
    Single,
    /// Mean over corners, centre and their mirrors at this crop size.
    TenCrop(usize),
    /// Mean over these shorter-side sizes.
    MultiScale(Vec<usize>),
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalMode::Single => f.write_str("single"),
            EvalMode::TenCrop(c) => write!(f, "ten_crop:{c}"),
            EvalMode::MultiScale(s) => {
                let s: Vec<String> = s.iter().map(|v| v.to_string()).collect();
                write!(f, "multi_scale:{}", s.join("/"))
            }
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    /// `single`, `ten_crop:<crop>` or `multi_scale:<s1>/<s2>/...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown eval mode `{s}` (single, ten_crop:<n>, multi_scale:<a>/<b>)"));
        let num = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
        match s.split_once(':') {
            None if s == "single" => Ok(EvalMode::Single),
            Some(("ten_crop", c)) => Ok(EvalMode::TenCrop(num(c)?)),
            Some(("multi_scale", list)) => {
                let scales = list.split('/').map(num).collect::<Result<Vec<_>>>()?;
                Ok(EvalMode::MultiScale(scales))
            }
            _ => Err(bad()),
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax_rows(logits: &[f64], classes: usize) -> Vec<Vec<f64>> {
    logits
        .chunks(classes)
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Softmax of prediction logits for an already prepared batch.
fn batch_probs<T: Scalar>(net: &mut Network<T>, x: &Tensor<T>, loss: &LossConfig) -> Result<Vec<Vec<f64>>> {
    let out = net.forward(x, Mode::Eval, &mut PrngStream::new(0, "eval"))?;
    let logits = loss.prediction_logits(&out.scores).to_f64_vec();
    Ok(softmax_rows(&logits, net.num_classes()))
}

fn mean_rows(parts: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let k = parts.len() as f64;
    (0..parts[0].len())
        .map(|i| {
            let mut acc = vec![0.0; parts[0][i].len()];
            for p in parts {
                for (a, v) in acc.iter_mut().zip(&p[i]) {
                    *a += v;
                }
            }
            acc.into_iter().map(|a| a / k).collect()
        })
        .collect()
}

fn check_scales<T: Scalar>(net: &Network<T>, scales: &[usize]) -> Result<()> {
    let min = net.spec().min_input_size();
    if scales.is_empty() {
        return Err(Error::Config("multi-scale evaluation needs at least one scale".into()));
    }
    if let Some(s) = scales.iter().find(|&&s| s < min) {
        return Err(Error::InvalidArgument(format!("scale {s} is below the network minimum {min}")));
    }
    Ok(())
}

/// Class-probability vectors for `images` under `mode`. Crop and scale
/// variants are averaged as probabilities.
pub fn predict<T: Scalar>(
    net: &mut Network<T>,
    images: &[Tensor<f32>],
    pipeline: &InputPipeline,
    mode: &EvalMode,
    loss: &LossConfig,
) -> Result<Vec<Vec<f64>>> {
    if let EvalMode::MultiScale(scales) = mode {
        check_scales(net, scales)?;
    }
    let mut probs = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let views: Vec<Vec<Tensor<f32>>> = match mode {
            EvalMode::Single => vec![chunk.to_vec()],
            EvalMode::TenCrop(size) => {
                let crops = chunk.iter().map(|i| ten_crop(i, *size)).collect::<Result<Vec<_>>>()?;
                (0..10).map(|k| crops.iter().map(|c| c[k].clone()).collect()).collect()
            }
            EvalMode::MultiScale(scales) => scales
                .iter()
                .map(|&s| chunk.iter().map(|i| resize_shorter(i, s)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?,
        };
        let parts = views
            .iter()
            .map(|v| batch_probs(net, &pipeline.prepare_batch(v)?, loss))
            .collect::<Result<Vec<_>>>()?;
        probs.extend(mean_rows(&parts));
    }
    Ok(probs)
}

/// Mean per-scale softmax vector for one raw image.
pub fn multi_scale_scores<T: Scalar>(
    net: &mut Network<T>,
    img: &Tensor<f32>,
    scales: &[usize],
    pipeline: &InputPipeline,
    loss: &LossConfig,
) -> Result<Vec<f64>> {
    let mode = EvalMode::MultiScale(scales.to_vec());
    Ok(predict(net, std::slice::from_ref(img), pipeline, &mode, loss)?.remove(0))
}

/// Fraction of samples whose arg-max class matches the label.
pub fn evaluate_top1<T: Scalar>(
    net: &mut Network<T>,
    ds: &Dataset,
    pipeline: &InputPipeline,
    mode: &EvalMode,
    loss: &LossConfig,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    let images: Vec<Tensor<f32>> = ds.samples.iter().map(|s| s.image.clone()).collect();
    let probs = predict(net, &images, pipeline, mode, loss)?;
    Ok(top1(&probs, &ds.labels()))
}

/// Fraction of rows whose arg-max equals the label.
pub fn top1(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    let correct = scores.iter().zip(labels).filter(|(s, &l)| argmax(s) == l).count();
    correct as f64 / labels.len().max(1) as f64
}
