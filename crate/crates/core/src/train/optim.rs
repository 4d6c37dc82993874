//! Momentum SGD and the plateau learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::losses::LossConfig;
use crate::tensor::{Precision, Scalar, Tensor};

/// When validation error stops improving, divide the rate by 10.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    /// Minimum absolute drop in error that counts as improvement.
    pub epsilon: f64,
    /// Epochs without improvement before a reduction.
    pub patience: usize,
    pub max_reductions: usize,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau {
            epsilon: 1e-3,
            patience: 5,
            max_reductions: 3,
        }
    }
}

/// Optimiser, schedule and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Micro-batches per optimiser step; must divide `batch_size`.
    pub accumulation: usize,
    pub max_epochs: usize,
    pub plateau: Plateau,
    pub lambda_aux: f64,
    pub loss: LossConfig,
    pub seed: u64,
    /// Stop once train Top-1 (eval mode, un-augmented) reaches this value.
    pub target_train_top1: Option<f64>,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            accumulation: 1,
            max_epochs: 30,
            plateau: Plateau::default(),
            lambda_aux: 0.3,
            loss: LossConfig::default(),
            seed: 0,
            target_train_top1: None,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return bad(format!("lr0 must be finite and non-negative, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.accumulation == 0 || self.batch_size % self.accumulation != 0 {
            return bad(format!(
                "accumulation ({}) must divide batch_size ({})",
                self.accumulation, self.batch_size
            ));
        }
        if !(self.lambda_aux.is_finite() && self.lambda_aux >= 0.0) {
            return bad(format!("lambda_aux must be non-negative, got {}", self.lambda_aux));
        }
        if self.plateau.patience == 0 || !(self.plateau.epsilon >= 0.0) {
            return bad("plateau patience must be positive and epsilon non-negative".into());
        }
        if let Some(t) = self.target_train_top1 {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("target_train_top1 must lie in [0, 1], got {t}"));
            }
        }
        self.loss.validate()
    }
}

/// One row of training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_error: f64,
    pub lr: f64,
}

/// Velocities, schedule position and history.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub velocity: BTreeMap<String, Tensor<T>>,
    pub lr: f64,
    pub reductions_done: usize,
    pub best_val_error: f64,
    pub epochs_since_improvement: usize,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainState {
            velocity: BTreeMap::new(),
            lr: cfg.lr0,
            reductions_done: 0,
            best_val_error: f64::INFINITY,
            epochs_since_improvement: 0,
            epoch: 0,
            history: Vec::new(),
        }
    }

    /// History as CSV with header `epoch,train_loss,val_error,lr`.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_error,lr\n");
        for r in &self.history {
            s.push_str(&format!("{},{:?},{:?},{:?}\n", r.epoch, r.train_loss, r.val_error, r.lr));
        }
        s
    }
}

/// `v ← μ·v + g + wd·p`, then `p ← p − lr·v`. Decay is skipped for
/// parameters with `decay == false`.
///
/// ```
/// # use alphanet::layers::Param;
/// # use alphanet::tensor::Tensor;
/// # use alphanet::train::{sgd_step, TrainConfig, TrainState};
/// let cfg = TrainConfig::default();
/// let mut state = TrainState::<f64>::new(&cfg);
/// let mut p = Param::new("w", Tensor::from_f64([1], &[1.0]).unwrap(), true);
/// sgd_step(&mut [&mut p], &mut state, &cfg).unwrap();
/// assert!((p.value.data()[0] - 0.999999).abs() < 1e-15);
/// ```
pub fn sgd_step<T: Scalar>(params: &mut [&mut Param<T>], state: &mut TrainState<T>, cfg: &TrainConfig) -> Result<()> {
    for p in params.iter() {
        p.value.same_shape(&p.grad, "sgd_step")?;
        if p.grad.data().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
    }
    let (mu, lr) = (T::c(cfg.momentum), T::c(state.lr));
    for p in params.iter_mut() {
        let wd = if p.decay { T::c(cfg.weight_decay) } else { T::zero() };
        let v = state
            .velocity
            .entry(p.name.clone())
            .or_insert_with(|| Tensor::zeros(p.value.shape().to_vec()));
        for ((vi, &gi), pi) in v.data_mut().iter_mut().zip(p.grad.data()).zip(p.value.data_mut()) {
            *vi = mu * *vi + gi + wd * *pi;
            *pi = *pi - lr * *vi;
        }
    }
    Ok(())
}

/// Plateau rule, called once per epoch with the validation error.
/// Returns true when the rate was reduced.
pub fn lr_schedule_update<T>(state: &mut TrainState<T>, val_error: f64, cfg: &TrainConfig) -> bool {
    if val_error < state.best_val_error - cfg.plateau.epsilon {
        state.best_val_error = val_error;
        state.epochs_since_improvement = 0;
        return false;
    }
    state.epochs_since_improvement += 1;
    if state.epochs_since_improvement >= cfg.plateau.patience && state.reductions_done < cfg.plateau.max_reductions {
        state.reductions_done += 1;
        // lr0 / 10^k with an exact power of ten
        state.lr = cfg.lr0 / 10f64.powi(state.reductions_done as i32);
        state.epochs_since_improvement = 0;
        return true;
    }
    false
}
