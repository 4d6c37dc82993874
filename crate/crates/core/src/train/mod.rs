//! Training loop, optimiser, evaluation and checkpoints.

mod checkpoint;
mod eval;
mod optim;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, network_from_bytes, save_checkpoint};
pub use eval::{argmax, evaluate_top1, multi_scale_scores, predict, top1, EvalMode, InputPipeline};
pub use optim::{lr_schedule_update, sgd_step, EpochRecord, Plateau, TrainConfig, TrainState};

use std::fs;
use std::path::PathBuf;

use log::{info, warn};

use crate::data::{AugmentConfig, Dataset};
use crate::error::{Error, Result};
use crate::layers::{Mode, Param};
use crate::losses::total_loss;
use crate::net::Network;
use crate::rng::PrngStream;
use crate::tensor::{Scalar, Tensor};

/// Optional side effects of [`train`].
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Applied to every training image; `None` feeds images unchanged.
    pub augment: Option<AugmentConfig>,
    /// Rewritten after every epoch.
    pub history_csv: Option<PathBuf>,
    /// Rewritten after every epoch that finishes with finite values.
    pub checkpoint: Option<PathBuf>,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    /// Train Top-1 after the last epoch, when it was measured.
    pub train_top1: Option<f64>,
    pub reached_target: bool,
}

impl<T> TrainOutcome<T> {
    pub fn epochs(&self) -> usize {
        self.state.history.len()
    }
}

/// `items` in chunks of `size`, except that a lone trailing item joins the
/// chunk before it: batch norm cannot train on one sample of a 1×1 map.
fn batches(items: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = items.chunks(size).collect();
    if out.len() > 1 && out[out.len() - 1].len() == 1 {
        out.pop();
        let start = items.len() - 1 - out[out.len() - 1].len();
        *out.last_mut().expect("more than one chunk") = &items[start..];
    }
    out
}

/// Runs the epoch loop: augment, forward, loss, backward and update per
/// batch, then evaluation and the plateau rule per epoch.
///
/// Validation error comes from `val` when given, else from the
/// un-augmented training split. All randomness derives from `cfg.seed`.
///
/// A non-finite loss or gradient restores the network to its state at the
/// start of the failing epoch and returns [`Error::NonFinite`].
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    pipeline: &InputPipeline,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("training split has no samples".into()));
    }
    if let Some(a) = &opts.augment {
        a.validate()?;
    }
    let root = PrngStream::new(cfg.seed, "train");
    let mut state = TrainState::new(cfg);
    let mut train_top1 = None;
    let mut reached_target = false;
    let single = EvalMode::Single;
    let n = train_set.len();
    let micro = cfg.batch_size / cfg.accumulation;

    for epoch in 0..cfg.max_epochs {
        let ep = root.fork(&format!("epoch{epoch}"));
        let order = ep.fork("shuffle").permutation(n);
        let last_good = net.clone();
        let mut loss_sum = 0.0;

        for (b, batch) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            net.zero_grad();
            for (m, mb) in batches(batch, micro).into_iter().enumerate() {
                let images = mb
                    .iter()
                    .map(|&i| {
                        let s = &train_set.samples[i];
                        match &opts.augment {
                            Some(a) => a.apply(&s.image, &ep.fork("augment").fork(&s.id)),
                            None => Ok(s.image.clone()),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let labels: Vec<usize> = mb.iter().map(|&i| train_set.samples[i].label).collect();
                let x = pipeline.prepare_batch::<T>(&images)?;
                let out = net.forward(&x, Mode::Train, &mut ep.fork(&format!("forward/{b}/{m}")))?;
                let main = cfg.loss.evaluate(&out.scores, &labels)?;
                let aux = if cfg.lambda_aux > 0.0 {
                    out.aux_scores
                        .iter()
                        .map(|s| cfg.loss.evaluate(s, &labels))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    Vec::new()
                };
                let aux_losses: Vec<f64> = aux.iter().map(|a| a.loss.as_f64()).collect();
                let total = total_loss(main.loss.as_f64(), &aux_losses, cfg.lambda_aux);
                if !total.is_finite() {
                    *net = last_good;
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
                }
                loss_sum += total * mb.len() as f64;
                // scale micro-batch means so accumulated grads equal the batch mean
                let w = mb.len() as f64 / batch.len() as f64;
                let d_aux: Vec<Tensor<T>> = if aux.is_empty() {
                    out.aux_scores.iter().map(|s| Tensor::zeros(s.shape().to_vec())).collect()
                } else {
                    let k = T::c(w * cfg.lambda_aux / aux.len() as f64);
                    aux.iter().map(|a| a.grad.scale(k)).collect()
                };
                net.backward(&main.grad.scale(T::c(w)), &d_aux)?;
            }
            let mut params: Vec<&mut Param<T>> = net.named_params_mut().into_iter().map(|(_, p)| p).collect();
            if let Err(e) = sgd_step(&mut params, &mut state, cfg) {
                drop(params);
                *net = last_good;
                return Err(e);
            }
        }

        let wants_train_top1 = cfg.target_train_top1.is_some() || val_set.is_none();
        train_top1 = if wants_train_top1 {
            Some(evaluate_top1(net, train_set, pipeline, &single, &cfg.loss)?)
        } else {
            None
        };
        let val_error = match (val_set, train_top1) {
            (Some(v), _) if !v.is_empty() => 1.0 - evaluate_top1(net, v, pipeline, &single, &cfg.loss)?,
            (_, Some(t)) => 1.0 - t,
            _ => 1.0 - evaluate_top1(net, train_set, pipeline, &single, &cfg.loss)?,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_error,
            lr: state.lr,
        };
        info!(
            "epoch {epoch}: loss {:.5} val_error {:.4} lr {:e}",
            record.train_loss, record.val_error, record.lr
        );
        state.history.push(record);
        state.epoch = epoch + 1;
        if lr_schedule_update(&mut state, val_error, cfg) {
            info!("plateau: lr reduced to {:e}", state.lr);
        }
        if let Some(p) = &opts.history_csv {
            fs::write(p, state.history_csv()).map_err(|e| Error::io(p, e))?;
        }
        if let Some(p) = &opts.checkpoint {
            save_checkpoint(net, p)?;
        }
        if let (Some(target), Some(t)) = (cfg.target_train_top1, train_top1) {
            if t >= target {
                reached_target = true;
                break;
            }
        }
    }
    if cfg.target_train_top1.is_some() && !reached_target {
        warn!("target train Top-1 not reached in {} epochs", cfg.max_epochs);
    }
    Ok(TrainOutcome {
        state,
        train_top1,
        reached_target,
    })
}
