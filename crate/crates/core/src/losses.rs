//! Classification losses with analytic gradients.
//!
//! Three losses share one output type:
//!
//! * [`softmax_ce`] on raw logits,
//! * [`am_softmax`], the additive-margin softmax on cosine logits
//!   `L_i = −log(e^{s(cosθ_y − m)} / (e^{s(cosθ_y − m)} + Σ_{j≠y} e^{s cosθ_j}))`,
//! * [`am_softmax_linear`], which switches on `ψ = cosθ_y − m`: the margin
//!   softmax (with an extra `c` in the target term of the denominator) while
//!   `ψ > 0`, and the linear penalty `a·ψ + c` once `ψ ≤ 0`.
//!
//! All reductions are means over the batch and gradients are taken with
//! respect to the matrix the loss consumes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const NORM_FLOOR: f64 = 1e-12;

/// Which loss a run optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Softmax,
    AmSoftmax,
    AmSoftmaxLinear,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Softmax, LossKind::AmSoftmax, LossKind::AmSoftmaxLinear];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Softmax => "softmax",
            LossKind::AmSoftmax => "am_softmax",
            LossKind::AmSoftmaxLinear => "am_softmax_linear",
        }
    }

    /// Margin losses score with cosines rather than affine logits.
    pub fn uses_cosine(self) -> bool {
        !matches!(self, LossKind::Softmax)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss `{s}`")))
    }
}

/// How the linear branch obtains its coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearMode {
    /// One shared `(a, c)` pair taken from the config.
    Fixed,
    /// Per-sample `(a_i, c_i)` matching the margin branch's value and slope
    /// at `ψ = 0`, so the loss is C¹ across the switch.
    Calibrated,
}

impl fmt::Display for LinearMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinearMode::Fixed => "fixed",
            LinearMode::Calibrated => "calibrated",
        })
    }
}

impl FromStr for LinearMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(LinearMode::Fixed),
            "calibrated" => Ok(LinearMode::Calibrated),
            other => Err(Error::Config(format!("unknown linear mode `{other}`"))),
        }
    }
}

/// Loss selector and its coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Cosine scale.
    pub s: f64,
    /// Additive margin.
    pub m: f64,
    /// Linear-branch slope (fixed mode).
    pub a: f64,
    /// Linear-branch offset (fixed mode).
    pub c: f64,
    pub linear_mode: LinearMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::new(LossKind::AmSoftmaxLinear)
    }
}

impl LossConfig {
    /// Defaults: `s = 30`, `m = 0.35`, calibrated linear branch, and for
    /// fixed mode `a = −s`, `c = 0`.
    pub fn new(kind: LossKind) -> Self {
        LossConfig {
            kind,
            s: 30.0,
            m: 0.35,
            a: -30.0,
            c: 0.0,
            linear_mode: LinearMode::Calibrated,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::Config(format!("loss scale s must be positive, got {}", self.s)));
        }
        if !(0.0..1.0).contains(&self.m) {
            return Err(Error::Config(format!("margin m must lie in [0, 1), got {}", self.m)));
        }
        if self.kind == LossKind::AmSoftmaxLinear && self.linear_mode == LinearMode::Fixed {
            if !self.a.is_finite() || !self.c.is_finite() {
                return Err(Error::Config("fixed linear mode needs finite a and c".into()));
            }
            if self.a >= 0.0 {
                return Err(Error::Config(format!(
                    "linear slope a must be negative so the loss grows with the margin violation, got {}",
                    self.a
                )));
            }
        }
        Ok(())
    }

    /// Evaluates the configured loss on `scores` (logits or cosines).
    pub fn evaluate<T: Scalar>(&self, scores: &Tensor<T>, labels: &[usize]) -> Result<LossOutput<T>> {
        self.validate()?;
        match self.kind {
            LossKind::Softmax => softmax_ce(scores, labels),
            LossKind::AmSoftmax => am_softmax(&CosineLogits::new(scores.clone())?, labels, self.s, self.m),
            LossKind::AmSoftmaxLinear => am_softmax_linear(&CosineLogits::new(scores.clone())?, labels, self),
        }
    }

    /// Logits used for prediction: raw logits, or `s·cosθ` for margin losses.
    pub fn prediction_logits<T: Scalar>(&self, scores: &Tensor<T>) -> Tensor<T> {
        if self.kind.uses_cosine() {
            scores.scale(T::c(self.s))
        } else {
            scores.clone()
        }
    }
}

/// Batch loss, its gradient with respect to the input matrix, and the
/// per-sample terms.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    pub grad: Tensor<T>,
    pub per_sample: Vec<T>,
}

/// `N×classes` cosines, each within `[−1, 1]` up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineLogits<T>(Tensor<T>);

impl<T: Scalar> CosineLogits<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.ndim() != 2 {
            return Err(Error::InvalidArgument(format!(
                "cosine logits must be a matrix, got {:?}",
                values.shape()
            )));
        }
        let tol = T::c(1.0 + 1e-6);
        if let Some(v) = values.data().iter().find(|v| v.abs() > tol || v.is_nan()) {
            return Err(Error::InvalidArgument(format!("cosine value {v} outside [-1, 1]")));
        }
        Ok(CosineLogits(values))
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

/// What the cosine backward pass needs.
#[derive(Debug, Clone)]
pub struct CosineCache<T> {
    f_hat: Tensor<T>,
    w_hat: Tensor<T>,
    f_norm: Vec<T>,
    w_norm: Vec<T>,
    cos: Tensor<T>,
}

fn normalize_rows<T: Scalar>(m: &Tensor<T>, what: &'static str) -> Result<(Tensor<T>, Vec<T>)> {
    let d = m.dim(1);
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.dim(0));
    for (i, row) in out.data_mut().chunks_mut(d).enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm.as_f64() < NORM_FLOOR {
            return Err(Error::ZeroNorm(what, i));
        }
        row.iter_mut().for_each(|v| *v = *v / norm);
        norms.push(norm);
    }
    Ok((out, norms))
}

pub(crate) fn cosine_forward<T: Scalar>(
    features: &Tensor<T>,
    class_weights: &Tensor<T>,
) -> Result<(CosineLogits<T>, CosineCache<T>)> {
    if features.ndim() != 2 || class_weights.ndim() != 2 || features.dim(1) != class_weights.dim(1) {
        return Err(Error::ShapeMismatch {
            op: "cosine_logits",
            left: features.shape().to_vec(),
            right: class_weights.shape().to_vec(),
        });
    }
    let (f_hat, f_norm) = normalize_rows(features, "cosine_logits features")?;
    let (w_hat, w_norm) = normalize_rows(class_weights, "cosine_logits class weights")?;
    let cos = f_hat.matmul(&w_hat.transpose()?)?;
    Ok((
        CosineLogits(cos.clone()),
        CosineCache {
            f_hat,
            w_hat,
            f_norm,
            w_norm,
            cos,
        },
    ))
}

/// Cosine similarity between every feature row and every class-weight row.
pub fn cosine_logits<T: Scalar>(features: &Tensor<T>, class_weights: &Tensor<T>) -> Result<CosineLogits<T>> {
    cosine_forward(features, class_weights).map(|(c, _)| c)
}

/// Gradients of the cosine matrix with respect to features and class weights.
pub(crate) fn cosine_backward<T: Scalar>(cache: &CosineCache<T>, dcos: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    cache.cos.same_shape(dcos, "cosine backward")?;
    let (n, classes) = (cache.cos.dim(0), cache.cos.dim(1));
    let d = cache.f_hat.dim(1);
    // dF = (dC·Ŵ − diag(Σ_j dC⊙C)·F̂) / ‖f‖
    let mut df = dcos.matmul(&cache.w_hat)?;
    for i in 0..n {
        let proj: T = (0..classes)
            .map(|j| dcos.data()[i * classes + j] * cache.cos.data()[i * classes + j])
            .sum();
        for k in 0..d {
            let v = &mut df.data_mut()[i * d + k];
            *v = (*v - proj * cache.f_hat.data()[i * d + k]) / cache.f_norm[i];
        }
    }
    let mut dw = dcos.transpose()?.matmul(&cache.f_hat)?;
    for j in 0..classes {
        let proj: T = (0..n)
            .map(|i| dcos.data()[i * classes + j] * cache.cos.data()[i * classes + j])
            .sum();
        for k in 0..d {
            let v = &mut dw.data_mut()[j * d + k];
            *v = (*v - proj * cache.w_hat.data()[j * d + k]) / cache.w_norm[j];
        }
    }
    Ok((df, dw))
}

fn check_labels(n: usize, classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

fn matrix_dims<T: Scalar>(m: &Tensor<T>) -> Result<(usize, usize)> {
    match *m.shape() {
        [n, c] => Ok((n, c)),
        _ => Err(Error::InvalidArgument(format!("expected a matrix, got {:?}", m.shape()))),
    }
}

/// Cross-entropy of `softmax(z)` against `target`, written into `grad_row`
/// as `softmax(z) − onehot`. Returns the loss.
fn cross_entropy_row<T: Scalar>(z: &[T], target: usize, grad_row: &mut [T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut denom = T::zero();
    for (g, &v) in grad_row.iter_mut().zip(z) {
        *g = (v - max).exp();
        denom += *g;
    }
    for g in grad_row.iter_mut() {
        *g = *g / denom;
    }
    grad_row[target] -= T::one();
    denom.ln() + (max - z[target])
}

fn finish<T: Scalar>(per_sample: Vec<T>, mut grad: Tensor<T>) -> LossOutput<T> {
    let n = T::c(per_sample.len() as f64);
    let loss = per_sample.iter().copied().sum::<T>() / n;
    grad.data_mut().iter_mut().for_each(|g| *g = *g / n);
    LossOutput { loss, grad, per_sample }
}

/// Mean softmax cross-entropy; gradient `(softmax − onehot) / N`.
pub fn softmax_ce<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<LossOutput<T>> {
    let (n, classes) = matrix_dims(logits)?;
    check_labels(n, classes, labels)?;
    let mut grad = Tensor::zeros([n, classes]);
    let per_sample = logits
        .data()
        .chunks(classes)
        .zip(grad.data_mut().chunks_mut(classes))
        .zip(labels)
        .map(|((z, g), &y)| cross_entropy_row(z, y, g))
        .collect();
    Ok(finish(per_sample, grad))
}

/// Margin branch for one row: `log(e^{sψ+c} + Σ_{j≠y} e^{s cos_j}) − sψ`,
/// with its gradient (w.r.t. the cosines) written into `grad_row`.
fn margin_row<T: Scalar>(cos: &[T], y: usize, s: T, m: T, c: T, z: &mut [T], grad_row: &mut [T]) -> T {
    for (zj, &cj) in z.iter_mut().zip(cos) {
        *zj = s * cj;
    }
    let psi = cos[y] - m;
    z[y] = s * psi + c;
    // CE over z gives log Σe^z − z_y = L + c; the c shift cancels in the gradient.
    let ce = cross_entropy_row(z, y, grad_row);
    grad_row.iter_mut().for_each(|g| *g *= s);
    ce + c
}

/// Additive-margin softmax over cosine logits with scale `s` and margin `m`.
pub fn am_softmax<T: Scalar>(cos: &CosineLogits<T>, labels: &[usize], s: f64, m: f64) -> Result<LossOutput<T>> {
    let cfg = LossConfig {
        s,
        m,
        ..LossConfig::new(LossKind::AmSoftmax)
    };
    cfg.validate()?;
    let values = cos.values();
    let (n, classes) = matrix_dims(values)?;
    check_labels(n, classes, labels)?;
    let mut grad = Tensor::zeros([n, classes]);
    let mut z = vec![T::zero(); classes];
    let per_sample = values
        .data()
        .chunks(classes)
        .zip(grad.data_mut().chunks_mut(classes))
        .zip(labels)
        .map(|((row, g), &y)| margin_row(row, y, T::c(s), T::c(m), T::zero(), &mut z, g))
        .collect();
    Ok(finish(per_sample, grad))
}

/// Linear branch with per-sample calibration: `L = a_i ψ + c_i` where
/// `c_i = log(1 + S)`, `a_i = −s·S/(1 + S)`, `S = Σ_{j≠y} e^{s cos_j}`.
fn calibrated_row<T: Scalar>(cos: &[T], y: usize, s: T, psi: T, grad_row: &mut [T]) -> T {
    // log(1 + S) via a shifted log-sum-exp over {0} ∪ {s cos_j}
    let mut max = T::zero();
    for (j, &cj) in cos.iter().enumerate() {
        if j != y {
            max = max.max(s * cj);
        }
    }
    let mut total = (-max).exp();
    for (j, &cj) in cos.iter().enumerate() {
        if j != y {
            total += (s * cj - max).exp();
        }
    }
    let log1p_s = total.ln() + max;
    // q0 = 1/(1+S), q_j = e^{s cos_j}/(1+S)
    let q0 = (-log1p_s).exp();
    let a = -s * (T::one() - q0);
    for (j, (g, &cj)) in grad_row.iter_mut().zip(cos).enumerate() {
        *g = if j == y {
            a
        } else {
            // ∂/∂cos_j of a(S)ψ + c(S) = s q_j (1 − s ψ q0)
            let q = (s * cj - log1p_s).exp();
            s * q * (T::one() - s * psi * q0)
        };
    }
    a * psi + log1p_s
}

/// Margin softmax with the piecewise linear extension for `ψ = cosθ_y − m ≤ 0`.
pub fn am_softmax_linear<T: Scalar>(
    cos: &CosineLogits<T>,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossOutput<T>> {
    cfg.validate()?;
    let values = cos.values();
    let (n, classes) = matrix_dims(values)?;
    check_labels(n, classes, labels)?;
    let (s, m) = (T::c(cfg.s), T::c(cfg.m));
    let c_margin = match cfg.linear_mode {
        LinearMode::Fixed => T::c(cfg.c),
        LinearMode::Calibrated => T::zero(),
    };
    let mut grad = Tensor::zeros([n, classes]);
    let mut z = vec![T::zero(); classes];
    let per_sample = values
        .data()
        .chunks(classes)
        .zip(grad.data_mut().chunks_mut(classes))
        .zip(labels)
        .map(|((row, g), &y)| {
            let psi = row[y] - m;
            if psi > T::zero() {
                return margin_row(row, y, s, m, c_margin, &mut z, g);
            }
            match cfg.linear_mode {
                LinearMode::Fixed => {
                    g.fill(T::zero());
                    g[y] = T::c(cfg.a);
                    T::c(cfg.a) * psi + T::c(cfg.c)
                }
                LinearMode::Calibrated => calibrated_row(row, y, s, psi, g),
            }
        })
        .collect();
    Ok(finish(per_sample, grad))
}

/// `main + λ·mean(aux)`; an empty aux list contributes nothing.
pub fn total_loss(main: f64, aux: &[f64], lambda_aux: f64) -> f64 {
    if aux.is_empty() || lambda_aux == 0.0 {
        return main;
    }
    main + lambda_aux * aux.iter().sum::<f64>() / aux.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64([rows, cols], v).unwrap()
    }

    fn cos(rows: usize, cols: usize, v: &[f64]) -> CosineLogits<f64> {
        CosineLogits::new(m(rows, cols, v)).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let w = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let c = cosine_logits(&m(1, 2, &[3.0, 0.0]), &w).unwrap();
        assert!((c.values().data()[0] - 1.0).abs() < 1e-15);
        assert_eq!(c.values().data()[1], 0.0);
        let c = cosine_logits(&m(1, 2, &[3.0, 4.0]), &m(1, 2, &[1.0, 0.0])).unwrap();
        assert!((c.values().data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_rows() {
        let w = m(1, 2, &[1.0, 0.0]);
        assert!(matches!(cosine_logits(&m(1, 2, &[0.0, 0.0]), &w), Err(Error::ZeroNorm(..))));
        assert!(matches!(cosine_logits(&w, &m(1, 2, &[0.0, 0.0])), Err(Error::ZeroNorm(..))));
    }

    #[test]
    fn softmax_examples() {
        let l = softmax_ce(&m(1, 2, &[0.0, 0.0]), &[0]).unwrap().loss;
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let l = softmax_ce(&m(1, 2, &[2.0, 0.0]), &[0]).unwrap().loss;
        assert!((l - (1.0 + (-2f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.1269).abs() < 1e-4);
        let l = softmax_ce(&m(1, 3, &[1.0, 1.0, 1.0]), &[2]).unwrap().loss;
        assert!((l - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_gradient_formula() {
        let out = softmax_ce(&m(2, 2, &[0.0, 0.0, 0.0, 0.0]), &[0, 1]).unwrap();
        assert_eq!(out.grad.to_f64_vec(), vec![-0.25, 0.25, 0.25, -0.25]);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            softmax_ce(&m(1, 2, &[0.0, 0.0]), &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        assert!(am_softmax(&cos(1, 2, &[0.1, 0.2]), &[5], 30.0, 0.35).is_err());
        assert!(am_softmax_linear(&cos(1, 2, &[0.1, 0.2]), &[5], &LossConfig::default()).is_err());
    }

    #[test]
    fn am_softmax_examples() {
        let l = am_softmax(&cos(1, 2, &[0.8, 0.2]), &[0], 1.0, 0.0).unwrap().loss;
        assert!((l - (1.0 + (-0.6f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.4375).abs() < 1e-4);
        let l = am_softmax(&cos(1, 2, &[0.9, 0.1]), &[0], 30.0, 0.35).unwrap().loss;
        let want = (1.0 + (3.0f64 - 16.5).exp()).ln();
        assert!((l - want).abs() < 1e-18);
        assert!((l - 1.37e-6).abs() < 1e-8);
    }

    #[test]
    fn am_softmax_reduces_to_softmax() {
        let v = [0.3, -0.2, 0.9, 0.1, 0.5, -0.7];
        let a = am_softmax(&cos(2, 3, &v), &[2, 0], 1.0, 0.0).unwrap();
        let b = softmax_ce(&m(2, 3, &v), &[2, 0]).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        assert!(a.grad.sub(&b.grad).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn linear_fixed_branch_direct() {
        // cos_y = 0.1, m = 0.35 → ψ = −0.25
        let cfg = LossConfig {
            a: -1.0,
            c: 0.0,
            linear_mode: LinearMode::Fixed,
            ..LossConfig::new(LossKind::AmSoftmaxLinear)
        };
        let out = am_softmax_linear(&cos(1, 2, &[0.1, 0.5]), &[0], &cfg).unwrap();
        assert!((out.loss - 0.25).abs() < 1e-15);
        assert_eq!(out.grad.to_f64_vec(), vec![-1.0, 0.0]);
    }

    #[test]
    fn linear_fixed_rejects_non_negative_slope() {
        let cfg = LossConfig {
            a: 0.0,
            linear_mode: LinearMode::Fixed,
            ..LossConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        // calibrated mode ignores a and c
        let cfg = LossConfig { a: 5.0, ..LossConfig::default() };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig { s: 0.0, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig { m: 1.0, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig { m: -0.1, ..LossConfig::default() }.validate().is_err());
    }

    #[test]
    fn linear_positive_branch_matches_am_softmax() {
        let v = [0.9, 0.1, -0.3, 0.2, 0.8, 0.4];
        for mode in [LinearMode::Calibrated, LinearMode::Fixed] {
            let cfg = LossConfig {
                linear_mode: mode,
                ..LossConfig::default()
            };
            let a = am_softmax_linear(&cos(2, 3, &v), &[0, 1], &cfg).unwrap();
            let b = am_softmax(&cos(2, 3, &v), &[0, 1], cfg.s, cfg.m).unwrap();
            assert!((a.loss - b.loss).abs() < 1e-12);
            assert!(a.grad.sub(&b.grad).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn calibrated_is_continuous_at_switch() {
        let cfg = LossConfig::default();
        let eval = |psi: f64| {
            let v = [cfg.m + psi, 0.3, -0.1];
            am_softmax_linear(&cos(1, 3, &v), &[0], &cfg).unwrap().loss
        };
        assert!((eval(1e-6) - eval(-1e-6)).abs() < 1e-4);
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(2.0, &[1.0, 3.0], 0.0), 2.0);
        assert_eq!(total_loss(2.0, &[], 0.3), 2.0);
        assert!((total_loss(1.0, &[0.5, 1.5], 0.1) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn kinds_round_trip_through_strings() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
        assert!("focal".parse::<LossKind>().is_err());
    }
}
