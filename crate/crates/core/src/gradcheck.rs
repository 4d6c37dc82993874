//! Finite-difference verification of every analytic gradient.
//!
//! Each check contracts the output with a fixed random tensor `r` so the
//! objective `Σ r⊙y` is a scalar, then compares the analytic gradient with
//! central differences in 64-bit arithmetic.
//!
//! Relative error per coordinate is `|a − n| / max(|a|, |n|, 1e-4)`. The
//! floor keeps coordinates whose true gradient is zero from dividing
//! rounding noise by rounding noise.
//!
//! Piecewise-linear ops (ReLU, and the loss switch) make a few coordinates
//! straddle a kink. When the forward and backward one-sided differences
//! disagree, the stencil is repeated at a tenth of the step: smooth
//! curvature shrinks the gap with the step and the finer central difference
//! is used, while a gap that persists marks a kink and the coordinate is
//! skipped. The count is reported and capped at 1% of coordinates.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{
    BatchNorm, ClassifierHead, CombinedConv, Conv2d, ConvParams, HeadKind, Layer, Mode, Padding, PoolWindow, Relu,
    StochasticPool,
};
use crate::losses::{
    am_softmax, am_softmax_linear, softmax_ce, CosineLogits, LinearMode, LossConfig, LossKind, LossOutput,
};
use crate::net::{NetOptions, Network, NetworkSpec, Structure};
use crate::rng::PrngStream;
use crate::tensor::Tensor;

/// Step of the central difference.
pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-4;
/// Tolerance for single layers and losses.
pub const LAYER_TOL: f64 = 1e-4;
/// Tolerance for whole networks.
pub const NETWORK_TOL: f64 = 1e-3;
/// Largest share of coordinates that may be skipped as kinks.
pub const MAX_KINK_SHARE: f64 = 0.01;

/// Which family of checks to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    Layer,
    Loss,
    Network,
    All,
}

impl Scope {
    fn includes(self, other: Scope) -> bool {
        self == Scope::All || self == other
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Layer => "layer",
            Scope::Loss => "loss",
            Scope::Network => "network",
            Scope::All => "all",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" | "layers" => Ok(Scope::Layer),
            "loss" | "losses" => Ok(Scope::Loss),
            "network" => Ok(Scope::Network),
            "all" => Ok(Scope::All),
            other => Err(Error::Config(format!("unknown gradcheck scope `{other}`"))),
        }
    }
}

/// Suite settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    pub step: f64,
    /// Negative control: perturbs one analytic gradient so the check must fail.
    pub corrupt: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            seed: 0,
            step: STEP,
            corrupt: false,
        }
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub scope: Scope,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub kinks: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance && (self.kinks as f64) <= MAX_KINK_SHARE * (self.checked + self.kinks) as f64
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<34} max_rel_err={:.3e} tol={:.0e} coords={} kinks={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.tolerance,
            self.checked,
            self.kinks
        )
    }
}

/// Relative error with the documented floor.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Running comparison of analytic and numeric derivatives.
#[derive(Debug, Default)]
struct Tally {
    max: f64,
    checked: usize,
    kinks: usize,
}

impl Tally {
    /// `eval(delta)` evaluates the objective with one coordinate shifted by
    /// `delta`; `base` is the unshifted value.
    fn coord(&mut self, analytic: f64, base: f64, h: f64, mut eval: impl FnMut(f64) -> Result<f64>) -> Result<()> {
        let plus = eval(h)?;
        let minus = eval(-h)?;
        let mut numeric = (plus - minus) / (2.0 * h);
        let gap = (plus - base) / h - (base - minus) / h;
        if gap.abs() > 1e-2 * numeric.abs().max(REL_FLOOR * 10.0) {
            // curvature shrinks the one-sided gap with the step, a kink does not
            let (p2, m2) = (eval(h / 10.0)?, eval(-h / 10.0)?);
            let gap2 = (p2 - base) / (h / 10.0) - (base - m2) / (h / 10.0);
            if gap2.abs() > 0.2 * gap.abs() {
                self.kinks += 1;
                return Ok(());
            }
            numeric = (p2 - m2) / (2.0 * h / 10.0);
        }
        self.max = self.max.max(relative_error(analytic, numeric));
        self.checked += 1;
        Ok(())
    }

    fn report(self, name: &str, scope: Scope, tolerance: f64) -> CheckReport {
        CheckReport {
            name: name.to_string(),
            scope,
            max_rel_err: self.max,
            tolerance,
            checked: self.checked,
            kinks: self.kinks,
        }
    }
}

fn corrupt_first(grads: &mut [f64], on: bool) {
    if on {
        if let Some(g) = grads.first_mut() {
            *g = *g * 1.5 + 0.1;
        }
    }
}

fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> Result<f64> {
    y.dot(r)
}

/// Checks input and parameter gradients of one layer at `x`.
///
/// The layer's forward is replayed with a clone of `rng` each time, so any
/// randomness must be frozen or replayable.
pub fn check_layer(
    name: &str,
    layer: &mut dyn Layer<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    rng: &PrngStream,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    let y = layer.forward(x, mode, &mut rng.clone())?;
    let r: Tensor<f64> = PrngStream::new(opts.seed, "gradcheck/projection").normal_tensor(y.shape(), 1.0);
    let base = project(&y, &r)?;
    let grads = layer.backward(&r)?;
    let h = opts.step;
    let mut tally = Tally::default();

    let mut dx = grads.input.to_f64_vec();
    corrupt_first(&mut dx, opts.corrupt);
    let mut xp = x.clone();
    for (i, &a) in dx.iter().enumerate() {
        let x0 = x.data()[i];
        tally.coord(a, base, h, |d| {
            xp.data_mut()[i] = x0 + d;
            let v = project(&layer.forward(&xp, mode, &mut rng.clone())?, &r);
            xp.data_mut()[i] = x0;
            v
        })?;
    }
    for (k, g) in grads.params.iter().enumerate() {
        for (i, &a) in g.data().iter().enumerate() {
            let p0 = layer.params()[k].value.data()[i];
            tally.coord(a, base, h, |d| {
                layer.params_mut()[k].value.data_mut()[i] = p0 + d;
                let v = project(&layer.forward(x, mode, &mut rng.clone())?, &r);
                layer.params_mut()[k].value.data_mut()[i] = p0;
                v
            })?;
        }
    }
    Ok(tally.report(name, Scope::Layer, LAYER_TOL))
}

/// Checks a loss gradient with respect to its input matrix.
pub fn check_loss(
    name: &str,
    scores: &Tensor<f64>,
    loss: impl Fn(&Tensor<f64>) -> Result<LossOutput<f64>>,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    let out = loss(scores)?;
    let mut grad = out.grad.to_f64_vec();
    corrupt_first(&mut grad, opts.corrupt);
    let mut tally = Tally::default();
    let mut s = scores.clone();
    for (i, &a) in grad.iter().enumerate() {
        let v0 = scores.data()[i];
        tally.coord(a, out.loss, opts.step, |d| {
            s.data_mut()[i] = v0 + d;
            let v = loss(&s).map(|o| o.loss);
            s.data_mut()[i] = v0;
            v
        })?;
    }
    Ok(tally.report(name, Scope::Loss, LAYER_TOL))
}

/// End-to-end check of a network in train mode with pooling indices frozen.
/// Covers the input, every parameter and the gate logits.
pub fn check_network(name: &str, net: &mut Network<f64>, x: &Tensor<f64>, opts: &CheckOptions) -> Result<CheckReport> {
    let rng = PrngStream::new(opts.seed, "gradcheck/network");
    net.freeze_pools(false);
    let out = net.forward(x, Mode::Train, &mut rng.clone())?;
    net.freeze_pools(true);
    let mut proj = PrngStream::new(opts.seed, "gradcheck/projection");
    let r: Tensor<f64> = proj.normal_tensor(out.scores.shape(), 1.0);
    let r_aux: Vec<Tensor<f64>> = out.aux_scores.iter().map(|a| proj.normal_tensor(a.shape(), 1.0)).collect();
    let objective = |net: &mut Network<f64>, x: &Tensor<f64>| -> Result<f64> {
        let o = net.forward(x, Mode::Train, &mut rng.clone())?;
        let mut v = project(&o.scores, &r)?;
        for (a, ra) in o.aux_scores.iter().zip(&r_aux) {
            v += project(a, ra)?;
        }
        Ok(v)
    };
    let base = objective(net, x)?;
    net.zero_grad();
    let mut dx = net.backward(&r, &r_aux)?.to_f64_vec();
    corrupt_first(&mut dx, opts.corrupt);
    let h = opts.step;
    let mut tally = Tally::default();

    let mut xp = x.clone();
    for (i, &a) in dx.iter().enumerate() {
        let x0 = x.data()[i];
        tally.coord(a, base, h, |d| {
            xp.data_mut()[i] = x0 + d;
            let v = objective(net, &xp);
            xp.data_mut()[i] = x0;
            v
        })?;
    }
    let grads: Vec<Vec<f64>> = net.named_params_mut().into_iter().map(|(_, p)| p.grad.to_f64_vec()).collect();
    for (k, g) in grads.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let set = |net: &mut Network<f64>, v: f64| {
                if let Some((_, p)) = net.named_params_mut().into_iter().nth(k) {
                    p.value.data_mut()[i] = v;
                }
            };
            let p0 = net.named_params_mut()[k].1.value.data()[i];
            tally.coord(a, base, h, |d| {
                set(net, p0 + d);
                let v = objective(net, x);
                set(net, p0);
                v
            })?;
        }
    }
    net.freeze_pools(false);
    Ok(tally.report(name, Scope::Network, NETWORK_TOL))
}

fn layer_suite(opts: &CheckOptions) -> Result<Vec<CheckReport>> {
    let mut rng = PrngStream::new(opts.seed, "gradcheck/layers");
    let replay = rng.fork("replay");
    let mut out = Vec::new();

    let x: Tensor<f64> = rng.normal_tensor(&[2, 3, 7, 6], 1.0);
    let pad = Padding::Explicit {
        top: 1,
        bottom: 2,
        left: 0,
        right: 1,
    };
    let mut conv = Conv2d::new(ConvParams::init(3, 4, 3, 2, pad, &mut rng)?);
    conv.params.bias.value = rng.normal_tensor(&[4], 0.5);
    out.push(check_layer("conv2d", &mut conv, &x, Mode::Train, &replay, opts)?);

    let mut comb = CombinedConv::init(3, 2, (3, 4), 1, &mut rng)?;
    out.push(check_layer("combined_conv", &mut comb, &x, Mode::Train, &replay, opts)?);

    let mut bn = BatchNorm::new(3);
    bn.params.gamma.value = rng.normal_tensor(&[3], 1.0);
    bn.params.beta.value = rng.normal_tensor(&[3], 1.0);
    out.push(check_layer("batch_norm/train", &mut bn, &x, Mode::Train, &replay, opts)?);
    out.push(check_layer("batch_norm/eval", &mut bn, &x, Mode::Eval, &replay, opts)?);

    // keep inputs away from the kink at zero
    let xr = x.map(|v| if v.abs() < 0.1 { v + 0.2f64.copysign(v) } else { v });
    out.push(check_layer("relu", &mut Relu::new(), &xr, Mode::Train, &replay, opts)?);

    let xp: Tensor<f64> = rng.uniform_tensor::<f64>(&[2, 2, 5, 6]).map(|v| v + 0.05);
    let mut pool = StochasticPool::new(PoolWindow::default());
    pool.forward(&xp, Mode::Train, &mut replay.clone())?;
    pool.freeze(true);
    out.push(check_layer("stochastic_pool/train_frozen", &mut pool, &xp, Mode::Train, &replay, opts)?);
    out.push(check_layer("stochastic_pool/eval", &mut pool, &xp, Mode::Eval, &replay, opts)?);

    let mut affine = ClassifierHead::init(HeadKind::Affine, 3, 5, &mut rng);
    if let Some(b) = &mut affine.bias {
        b.value = rng.normal_tensor(&[5], 0.5);
    }
    out.push(check_layer("classifier_head/affine", &mut affine, &x, Mode::Train, &replay, opts)?);
    let mut cosine = ClassifierHead::init(HeadKind::Cosine, 3, 5, &mut rng);
    out.push(check_layer("classifier_head/cosine", &mut cosine, &x, Mode::Train, &replay, opts)?);
    Ok(out)
}

/// Random cosines with targets placed on a chosen side of the margin switch.
fn cosines(rng: &mut PrngStream, n: usize, classes: usize, m: f64, positive: Option<bool>) -> (Tensor<f64>, Vec<usize>) {
    let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
    let mut data: Vec<f64> = (0..n * classes).map(|_| rng.uniform_range(-0.95, 0.95)).collect();
    for (i, &y) in labels.iter().enumerate() {
        let v = &mut data[i * classes + y];
        *v = match positive {
            Some(true) => rng.uniform_range(m + 0.05, 0.95),
            Some(false) => rng.uniform_range(-0.95, m - 0.05),
            None if (*v - m).abs() < 0.01 => m + 0.02,
            None => *v,
        };
    }
    (Tensor::from_parts(vec![n, classes], data), labels)
}

fn loss_suite(opts: &CheckOptions) -> Result<Vec<CheckReport>> {
    let mut rng = PrngStream::new(opts.seed, "gradcheck/losses");
    let mut out = Vec::new();
    let (n, classes) = (8, 10);

    let logits: Tensor<f64> = rng.normal_tensor(&[n, classes], 2.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
    out.push(check_loss("softmax_ce", &logits, |z| softmax_ce(z, &labels), opts)?);

    let (cos, labels) = cosines(&mut rng, n, classes, 0.35, None);
    out.push(check_loss(
        "am_softmax",
        &cos,
        |c| am_softmax(&CosineLogits::new(c.clone())?, &labels, 30.0, 0.35),
        opts,
    )?);

    for mode in [LinearMode::Fixed, LinearMode::Calibrated] {
        let cfg = LossConfig {
            linear_mode: mode,
            c: if mode == LinearMode::Fixed { 0.3 } else { 0.0 },
            ..LossConfig::new(LossKind::AmSoftmaxLinear)
        };
        for (side, positive) in [("positive", true), ("negative", false)] {
            let (cos, labels) = cosines(&mut rng, n, classes, cfg.m, Some(positive));
            out.push(check_loss(
                &format!("am_softmax_linear/{mode}/{side}"),
                &cos,
                |c| am_softmax_linear(&CosineLogits::new(c.clone())?, &labels, &cfg),
                opts,
            )?);
        }
    }
    Ok(out)
}

fn micro_options(p_extra: f64) -> NetOptions {
    NetOptions {
        width: 2,
        p_extra,
        ..NetOptions::default()
    }
}

fn network_suite(opts: &CheckOptions) -> Result<Vec<CheckReport>> {
    let mut rng = PrngStream::new(opts.seed, "gradcheck/network-input");
    let x: Tensor<f64> = rng.normal_tensor(&[4, 3, 8, 8], 1.0);
    let cases: [(&str, Structure, &[usize], f64); 4] = [
        ("network/alpha_2_blocks", Structure::Alpha, &[1, 1], 0.0),
        ("network/alpha_3_blocks_gated", Structure::Alpha, &[2, 1], 1.0),
        ("network/residual_2_blocks", Structure::Residual, &[1, 1], 0.0),
        ("network/plain_2_blocks", Structure::Plain, &[1, 1], 0.0),
    ];
    let mut out = Vec::new();
    for (name, structure, stages, p) in cases {
        let spec = NetworkSpec::micro(structure, stages, 3, opts.seed, micro_options(p))?;
        let mut net = Network::build(spec)?;
        out.push(check_network(name, &mut net, &x, opts)?);
    }
    Ok(out)
}

/// Runs every check in `scope`.
pub fn run_suite(scope: Scope, opts: &CheckOptions) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    if scope.includes(Scope::Layer) {
        out.extend(layer_suite(opts)?);
    }
    if scope.includes(Scope::Loss) {
        out.extend(loss_suite(opts)?);
    }
    if scope.includes(Scope::Network) {
        out.extend(network_suite(opts)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn loss_suite_passes_and_corruption_is_caught() {
        let good = run_suite(Scope::Loss, &CheckOptions::default()).unwrap();
        assert!(good.iter().all(CheckReport::passed), "{good:#?}");
        assert!(good.iter().all(|r| r.scope == Scope::Loss));
        let bad = run_suite(
            Scope::Loss,
            &CheckOptions {
                corrupt: true,
                ..CheckOptions::default()
            },
        )
        .unwrap();
        assert!(bad.iter().all(|r| !r.passed()));
    }

    #[test]
    fn layer_suite_passes() {
        let reports = run_suite(Scope::Layer, &CheckOptions::default()).unwrap();
        for r in &reports {
            assert!(r.passed(), "{r}");
        }
        assert_eq!(reports.len(), 9);
    }
}
