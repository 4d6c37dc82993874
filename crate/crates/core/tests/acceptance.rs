//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any fails.
//!
//! `ALPHANET_BLESS=1` rewrites the connectivity golden file instead of
//! comparing against it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use alphanet::data::{synthetic_dataset, ToySpec};
use alphanet::encode::{alpha_decode, alpha_encode, EncodedImage, Normalization, HEADER_BYTES};
use alphanet::experiment::{run_experiment, sweep, ExperimentConfig, SweepKind};
use alphanet::gradcheck::{run_suite, CheckOptions, Scope};
use alphanet::layers::{stochastic_pool, Mode, Param, PoolWindow};
use alphanet::losses::{am_softmax, am_softmax_linear, softmax_ce, CosineLogits, LinearMode, LossConfig, LossKind};
use alphanet::net::{gate_weights, sample_connectivity, Downsampling, NetOptions, Network, NetworkSpec, StagePlan, Structure, Version};
use alphanet::train::{lr_schedule_update, sgd_step, train, InputPipeline, TrainConfig, TrainOptions, TrainState};
use alphanet::{PrngStream, Precision, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

// 1 ---------------------------------------------------------------------

fn gradient_checks() -> Outcome {
    let t = Instant::now();
    let reports = run_suite(Scope::All, &CheckOptions::default()).map_err(err)?;
    let elapsed = t.elapsed();
    let mut worst_local: f64 = 0.0;
    let mut worst_net: f64 = 0.0;
    for r in &reports {
        let limit = if r.scope == Scope::Network { 1e-3 } else { 1e-4 };
        ensure(r.passed() && r.max_rel_err < limit, || format!("{r}"))?;
        if r.scope == Scope::Network {
            worst_net = worst_net.max(r.max_rel_err);
        } else {
            worst_local = worst_local.max(r.max_rel_err);
        }
    }
    let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    for want in [
        "conv2d",
        "combined_conv",
        "batch_norm",
        "relu",
        "stochastic_pool/train_frozen",
        "classifier_head",
        "softmax_ce",
        "am_softmax",
        "am_softmax_linear/fixed/positive",
        "am_softmax_linear/fixed/negative",
        "am_softmax_linear/calibrated/positive",
        "am_softmax_linear/calibrated/negative",
        "network/alpha_2_blocks",
    ] {
        ensure(names.iter().any(|n| n.starts_with(want)), || format!("no check named {want}"))?;
    }
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} checks, layer/loss max rel err {worst_local:.2e}, network {worst_net:.2e}, {:.1}s",
        reports.len(),
        elapsed.as_secs_f64()
    ))
}

// 2 ---------------------------------------------------------------------

/// Plain log-sum-exp cross-entropy, averaged over rows.
fn reference_ce(logits: &[f64], classes: usize, labels: &[usize]) -> (f64, Vec<f64>) {
    let n = labels.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += (lse - row[y]) / n as f64;
        for j in 0..classes {
            let p = (row[j] - lse).exp();
            grad[i * classes + j] = (p - f64::from(u8::from(j == y))) / n as f64;
        }
    }
    (loss, grad)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn loss_identities() -> Outcome {
    let mut rng = PrngStream::new(2, "acceptance/losses");
    let (n, classes) = (16, 7);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
    let cos: Vec<f64> = (0..n * classes).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let cos_t = Tensor::<f64>::from_f64([n, classes], &cos).map_err(err)?;

    let (ref_loss, ref_grad) = reference_ce(&cos, classes, &labels);
    let ce = softmax_ce(&cos_t, &labels).map_err(err)?;
    let am = am_softmax(&CosineLogits::new(cos_t.clone()).map_err(err)?, &labels, 1.0, 0.0).map_err(err)?;
    let d1 = [
        (ce.loss - ref_loss).abs(),
        (am.loss - ce.loss).abs(),
        max_diff(&am.grad.to_f64_vec(), &ce.grad.to_f64_vec()),
        max_diff(&ce.grad.to_f64_vec(), &ref_grad),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    ensure(d1 < 1e-12, || format!("am_softmax(m=0, s=1) vs softmax_ce differ by {d1:e}"))?;

    // every target cosine above the margin
    let m = 0.35;
    let mut pos = cos.clone();
    for (i, &y) in labels.iter().enumerate() {
        pos[i * classes + y] = rng.uniform_range(m + 0.01, 1.0);
    }
    let pos_t = CosineLogits::new(Tensor::<f64>::from_f64([n, classes], &pos).map_err(err)?).map_err(err)?;
    let am = am_softmax(&pos_t, &labels, 30.0, m).map_err(err)?;
    let mut d2: f64 = 0.0;
    for mode in [LinearMode::Fixed, LinearMode::Calibrated] {
        let cfg = LossConfig {
            c: 0.0,
            linear_mode: mode,
            ..LossConfig::new(LossKind::AmSoftmaxLinear)
        };
        let lin = am_softmax_linear(&pos_t, &labels, &cfg).map_err(err)?;
        d2 = d2
            .max((lin.loss - am.loss).abs())
            .max(max_diff(&lin.grad.to_f64_vec(), &am.grad.to_f64_vec()));
    }
    ensure(d2 < 1e-12, || format!("linear branch with c=0 and psi>0 differs from am_softmax by {d2:e}"))?;

    let cfg = LossConfig::new(LossKind::AmSoftmaxLinear);
    let mut jump: f64 = 0.0;
    for _ in 0..200 {
        let mut row: Vec<f64> = (0..classes).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let mut at = |psi: f64| {
            row[0] = cfg.m + psi;
            let c = CosineLogits::new(Tensor::<f64>::from_f64([1, classes], &row).unwrap()).unwrap();
            am_softmax_linear(&c, &[0], &cfg).unwrap().loss
        };
        jump = jump.max((at(1e-9) - at(-1e-9)).abs());
    }
    ensure(jump < 1e-4, || format!("calibrated loss jumps by {jump:e} across psi = 0"))?;
    Ok(format!("identities within {:.1e}, continuity gap {jump:.1e}", d1.max(d2)))
}

// 3 ---------------------------------------------------------------------

fn pooling_expectation() -> Outcome {
    const REGIONS: usize = 100;
    const COPIES: usize = 1000;
    const ROUNDS: usize = 100;
    let mut rng = PrngStream::new(3, "acceptance/pool");
    let regions: Vec<[f64; 4]> = (0..REGIONS)
        .map(|_| std::array::from_fn(|_| rng.uniform()))
        .collect();
    let one: Vec<f64> = regions.iter().flatten().copied().collect();
    let x1 = Tensor::<f64>::from_f64([1, REGIONS, 2, 2], &one).map_err(err)?;
    let many: Vec<f64> = (0..COPIES).flat_map(|_| one.iter().copied()).collect();
    let x = Tensor::<f64>::from_f64([COPIES, REGIONS, 2, 2], &many).map_err(err)?;

    let window = PoolWindow::default();
    let eval_a = stochastic_pool(&x1, window, Mode::Eval, &mut rng.fork("eval-a")).map_err(err)?;
    let eval_b = stochastic_pool(&x1, window, Mode::Eval, &mut rng.fork("eval-b")).map_err(err)?;
    ensure(eval_a.data() == eval_b.data(), || "eval mode depends on the random stream".into())?;

    let mut sum = vec![0.0; REGIONS];
    let mut sum_sq = vec![0.0; REGIONS];
    let mut train_rng = rng.fork("train");
    for _ in 0..ROUNDS {
        let y = stochastic_pool(&x, window, Mode::Train, &mut train_rng).map_err(err)?;
        for (k, &v) in y.data().iter().enumerate() {
            sum[k % REGIONS] += v;
            sum_sq[k % REGIONS] += v * v;
        }
    }
    let samples = (COPIES * ROUNDS) as f64;
    let mut worst: f64 = 0.0;
    for (r, region) in regions.iter().enumerate() {
        let total: f64 = region.iter().sum();
        let expected: f64 = region.iter().map(|a| a * a).sum::<f64>() / total;
        ensure((eval_a.data()[r] - expected).abs() < 1e-12, || format!("region {r}: eval output is not the expectation"))?;
        let mean = sum[r] / samples;
        let var = (sum_sq[r] / samples - mean * mean) * samples / (samples - 1.0);
        let se = (var / samples).sqrt();
        let z = (mean - eval_a.data()[r]).abs() / se;
        worst = worst.max(z);
        ensure(z <= 3.0, || format!("region {r}: mean {mean} is {z:.2} standard errors from {}", eval_a.data()[r]))?;
    }
    Ok(format!("{REGIONS} regions × {} samples, worst |z| = {worst:.2}", samples as usize))
}

// 4 ---------------------------------------------------------------------

fn reduction_nets() -> alphanet::Result<(Network<f64>, Network<f64>)> {
    let base = NetOptions {
        width: 4,
        p_extra: 0.0,
        downsampling: Downsampling::Stride,
        kernel_pair: (3, 5),
        ..NetOptions::default()
    };
    let residual = Network::build(NetworkSpec::micro(Structure::Residual, &[2, 2, 1], 5, 11, base)?)?;
    let alpha = Network::build(NetworkSpec::micro(Structure::Alpha, &[2, 2, 1], 5, 12, base)?)?;
    Ok((residual, alpha))
}

/// Copies residual parameters into the alpha net. The combined convolution
/// averages its two branches, so with the second one zeroed the first
/// carries twice the residual kernel.
fn share_parameters(residual: &mut Network<f64>, alpha: &mut Network<f64>) -> Result<Vec<String>, String> {
    let source: BTreeMap<String, Tensor<f64>> =
        residual.named_params_mut().into_iter().map(|(n, p)| (n, p.value.clone())).collect();
    let mut used = Vec::new();
    let mut untouched = Vec::new();
    for (name, p) in alpha.named_params_mut() {
        if name.contains("/conv2/k2/") {
            p.value.fill(0.0);
            continue;
        }
        let (from, factor) = match name.contains("/conv2/k1/") {
            true => (name.replace("/conv2/k1/", "/conv2/"), 2.0),
            false => (name.clone(), 1.0),
        };
        match source.get(&from) {
            Some(v) => {
                ensure(v.shape() == p.value.shape(), || format!("{name}: shape {:?} vs {:?}", p.value.shape(), v.shape()))?;
                p.value = v.scale(factor);
                used.push(from);
            }
            None => untouched.push(name),
        }
    }
    let missing: Vec<&String> = source.keys().filter(|k| !used.contains(k)).collect();
    ensure(missing.is_empty(), || format!("residual parameters without a counterpart: {missing:?}"))?;
    Ok(untouched)
}

fn architecture_reduction() -> Outcome {
    let (mut residual, mut alpha) = reduction_nets().map_err(err)?;
    let untouched = share_parameters(&mut residual, &mut alpha)?;
    // aux heads do not feed the scores; single-edge gates soften to exactly 1
    ensure(untouched.iter().all(|n| n.contains("/aux/") || n.ends_with("/gates")), || format!("unshared alpha parameters: {untouched:?}"))?;

    let x: Tensor<f64> = PrngStream::new(4, "acceptance/reduction").normal_tensor(&[6, 3, 16, 16], 1.0);
    let rng = PrngStream::new(4, "forward");
    let r = residual.forward(&x, Mode::Train, &mut rng.clone()).map_err(err)?;
    let a = alpha.forward(&x, Mode::Train, &mut rng.clone()).map_err(err)?;
    let train_gap = max_diff(&r.scores.to_f64_vec(), &a.scores.to_f64_vec());
    ensure(train_gap < 1e-6, || format!("train-mode scores differ by {train_gap:e}"))?;

    // both nets saw the same batch, so their running statistics agree
    let r_eval = residual.forward(&x, Mode::Eval, &mut rng.clone()).map_err(err)?;
    let a_eval = alpha.forward(&x, Mode::Eval, &mut rng.clone()).map_err(err)?;
    let eval_gap = max_diff(&r_eval.scores.to_f64_vec(), &a_eval.scores.to_f64_vec());
    ensure(eval_gap < 1e-6, || format!("eval-mode scores differ by {eval_gap:e}"))?;

    // control: a live second branch has to break the match
    for (name, p) in alpha.named_params_mut() {
        if name == "block1/conv2/k2/kernel" {
            p.value.fill(0.05);
        }
    }
    let live = alpha.forward(&x, Mode::Eval, &mut rng.clone()).map_err(err)?;
    let control = max_diff(&r_eval.scores.to_f64_vec(), &live.scores.to_f64_vec());
    ensure(control > 1e-6, || format!("a non-zero second kernel left the scores unchanged ({control:e})"))?;
    Ok(format!("max score gap train {train_gap:.1e}, eval {eval_gap:.1e}; live second branch moves scores by {control:.1e}"))
}

// 5 ---------------------------------------------------------------------

fn connectivity_dump() -> alphanet::Result<String> {
    let mut s = String::new();
    for version in Version::ALL {
        let blocks = (version.desk_layers(16)? - 2) / 2;
        let stages = StagePlan::new(blocks, 8).block_stages();
        for seed in [0u64, 1, 2024] {
            s.push_str(&format!("# {version} desk 16 seed {seed} p_extra 0.5\n"));
            let edges = sample_connectivity(&stages, 0.5, &PrngStream::new(seed, "connectivity"))?;
            for e in edges {
                s.push_str(&format!("{} {} {:?}\n", e.source, e.target, e.gate_logit));
            }
        }
    }
    Ok(s)
}

fn gates_after_training() -> Result<(usize, f64, f64), String> {
    let toy = ToySpec {
        classes: 2,
        per_class: 20,
        channels: 3,
        size: 16,
        noise: 16.0,
    };
    let ds = synthetic_dataset(toy, 5).map_err(err)?;
    let opts = NetOptions {
        width: 4,
        p_extra: 1.0,
        kernel_pair: (3, 5),
        ..NetOptions::default()
    };
    let mut net = Network::<f64>::build(NetworkSpec::micro(Structure::Alpha, &[4, 3], 2, 5, opts).map_err(err)?).map_err(err)?;
    let before = net.gate_weights();
    let cfg = TrainConfig {
        batch_size: 4,
        max_epochs: 10,
        precision: Precision::F64,
        ..TrainConfig::default()
    };
    let pipe = InputPipeline::fit(Normalization::Zscore, &ds).map_err(err)?;
    let out = train(&mut net, &ds, None, &pipe, &cfg, &TrainOptions::default()).map_err(err)?;
    let steps = out.epochs() * ds.len().div_ceil(cfg.batch_size);
    ensure(steps >= 100, || format!("only {steps} optimiser steps"))?;
    let after = net.gate_weights();
    let mut worst: f64 = 0.0;
    let mut moved: f64 = 0.0;
    for (b, a) in before.iter().zip(&after) {
        if a.is_empty() {
            continue;
        }
        worst = worst.max((a.iter().sum::<f64>() - 1.0).abs());
        moved = moved.max(max_diff(a, b));
    }
    ensure(after.iter().any(|g| g.len() > 1), || "no block has more than one incoming edge".into())?;
    ensure(worst < 1e-6, || format!("a gate softmax sums to 1 ± {worst:e}"))?;
    Ok((steps, worst, moved))
}

fn connectivity() -> Outcome {
    let golden = data_dir().join("connectivity_golden.txt");
    let dump = connectivity_dump().map_err(err)?;
    ensure(dump == connectivity_dump().map_err(err)?, || "two samplings differ".into())?;
    if std::env::var_os("ALPHANET_BLESS").is_some() {
        fs::write(&golden, &dump).map_err(err)?;
    }
    let expected = fs::read_to_string(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    ensure(dump == expected, || format!("sampled edges differ from {}", golden.display()))?;

    for version in Version::ALL {
        let spec = NetworkSpec::new(
            version,
            Structure::Alpha,
            16,
            10,
            9,
            NetOptions {
                p_extra: 0.0,
                ..NetOptions::default()
            },
        )
        .map_err(err)?;
        let pairs: Vec<(usize, usize)> = spec.edges.iter().map(|e| (e.source, e.target)).collect();
        let chain: Vec<(usize, usize)> = (1..spec.blocks.len()).map(|i| (i - 1, i)).collect();
        ensure(pairs == chain, || format!("{version}: p_extra=0 gives {pairs:?}"))?;
    }
    let sums: f64 = (0..50)
        .map(|k| {
            let logits: Vec<f64> = (0..=k % 7).map(|i| (i as f64 * 1.7 - 3.0) * k as f64).collect();
            (gate_weights(&logits).iter().sum::<f64>() - 1.0).abs()
        })
        .fold(0.0, f64::max);
    ensure(sums < 1e-6, || format!("gate_weights sums off by {sums:e}"))?;

    let (steps, worst, moved) = gates_after_training()?;
    Ok(format!(
        "golden file matches, chain at p_extra=0, gate sums within {worst:.1e} after {steps} steps (weights moved {moved:.1e})"
    ))
}

// 6 and 9 ---------------------------------------------------------------

fn overfit_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.toy = ToySpec::default();
    cfg.version = Version::V1;
    cfg.structure = Structure::Alpha;
    cfg.desk_scale = 16;
    cfg.normalization = Normalization::Zscore;
    cfg.train.loss = LossConfig::new(LossKind::AmSoftmaxLinear);
    cfg.val_fraction = 0.0;
    cfg.train.batch_size = 16;
    cfg.train.max_epochs = 200;
    cfg.train.target_train_top1 = Some(0.99);
    cfg.train.precision = Precision::F64;
    cfg.train.seed = 0;
    cfg.out = out.to_path_buf();
    cfg
}

struct OverfitRun {
    history: String,
    epochs: usize,
    train_top1: Option<f64>,
    layers: usize,
    wall: Duration,
}

fn overfit_run(out: &Path) -> Result<OverfitRun, String> {
    let cfg = overfit_config(out);
    let t = Instant::now();
    let report = run_experiment(&cfg).map_err(err)?;
    let wall = t.elapsed();
    let spec = NetworkSpec::new(cfg.version, cfg.structure, cfg.desk_scale, 10, 0, cfg.net_options(3)).map_err(err)?;
    Ok(OverfitRun {
        history: fs::read_to_string(&report.files.history).map_err(err)?,
        epochs: report.history.len(),
        train_top1: report.train_top1,
        layers: spec.weighted_layers,
        wall,
    })
}

fn overfit(run: &OverfitRun) -> Outcome {
    ensure(run.layers == 8, || format!("desk v1 has {} weighted layers", run.layers))?;
    let top1 = run.train_top1.ok_or("train Top-1 was never measured")?;
    ensure(top1 >= 0.99, || format!("train Top-1 {:.2}% after {} epochs", 100.0 * top1, run.epochs))?;
    ensure(run.epochs <= 200, || format!("{} epochs", run.epochs))?;
    ensure(run.wall < Duration::from_secs(15 * 60), || format!("took {:?}", run.wall))?;
    Ok(format!(
        "train Top-1 {:.1}% after {} epochs, {:.0}s",
        100.0 * top1,
        run.epochs,
        run.wall.as_secs_f64()
    ))
}

fn determinism(first: &OverfitRun, dir: &Path) -> Outcome {
    let second = overfit_run(dir)?;
    ensure(!first.history.is_empty() && first.history == second.history, || {
        "history CSVs of two identical runs differ".into()
    })?;
    Ok(format!("{} history lines identical", first.history.lines().count()))
}

// 7 ---------------------------------------------------------------------

/// Rows as printed in the published tables, `v1..v4`.
const PRINTED: [(SweepKind, [&str; 4]); 3] = [
    (SweepKind::LayerStructure, ["75.1 78.2 79.0", "76.2 76.3 79.2", "76.3 76.5 79.5", "72.1 76.1 77.5"]),
    (SweepKind::Loss, ["72.1 74.3 76.2", "71.3 74.3 77.1", "72.1 74.3 77.2", "71.2 73.1 75.1"]),
    (SweepKind::Normalization, ["69.2 71.2 71.0", "69.5 70.1 71.2", "70.1 70.1 71.5", "71.2 69.5 70.5"]),
];

fn sweep_structure(dir: &Path) -> Outcome {
    // 64 px keeps v4's last alpha stage above 1×1 after three pooled transitions
    let mut base = ExperimentConfig::default();
    base.toy = ToySpec {
        classes: 2,
        per_class: 4,
        channels: 3,
        size: 64,
        noise: 8.0,
    };
    base.width = 4;
    base.val_fraction = 0.25;
    base.train.batch_size = 3;
    base.train.max_epochs = 1;
    base.train.precision = Precision::F64;
    base.out = dir.to_path_buf();
    let mut measured = 0;
    for (kind, rows) in PRINTED {
        base.sweep.kind = Some(kind);
        let (table, path) = sweep(&base).map_err(err)?;
        ensure(table.versions == Version::ALL.to_vec(), || format!("{kind}: versions {:?}", table.versions))?;
        ensure(table.variants.len() == 3 && table.cells.len() == 12, || format!("{kind}: not a 4×3 grid"))?;
        let text = fs::read_to_string(&path).map_err(err)?;
        let lines: Vec<&str> = text.lines().collect();
        ensure(lines.len() == 5, || format!("{kind}: {} lines in {}", lines.len(), path.display()))?;
        for (line, printed) in lines[1..].iter().zip(rows) {
            let f: Vec<&str> = line.split(',').collect();
            ensure(f.len() == 7, || format!("{kind}: row `{line}`"))?;
            ensure(f[4..].join(" ") == printed, || format!("{kind}: reference cells `{}` vs printed `{printed}`", f[4..].join(" ")))?;
            for cell in &f[1..4] {
                let v: f64 = cell.parse().map_err(|_| format!("{kind}: measured cell `{cell}`"))?;
                ensure((0.0..=100.0).contains(&v), || format!("{kind}: measured {v}"))?;
                measured += 1;
            }
        }
    }
    Ok(format!("3 grids of 4×3, references match the printed tables, {measured} desk cells measured"))
}

// 8 ---------------------------------------------------------------------

fn codec(dir: &Path) -> Outcome {
    // hand-assembled file for a 1×1×2 image [2, 6]
    let mut expected = b"AENC".to_vec();
    expected.push(1);
    for d in [1u32, 1, 2] {
        expected.extend_from_slice(&d.to_le_bytes());
    }
    expected.extend_from_slice(&2.0f32.to_le_bytes());
    expected.extend_from_slice(&4.0f32.to_le_bytes());
    expected.extend_from_slice(&[0, 255]);
    let tiny = alpha_encode(&Tensor::<f64>::from_f64([1, 1, 2], &[2.0, 6.0]).map_err(err)?).map_err(err)?;
    ensure(tiny.to_bytes() == expected, || format!("bytes {:?}", tiny.to_bytes()))?;
    ensure(EncodedImage::from_bytes(&expected).map_err(err)? == tiny, || "header does not parse back".into())?;
    ensure(HEADER_BYTES == 25, || format!("header is {HEADER_BYTES} bytes"))?;

    let mut rng = PrngStream::new(8, "acceptance/codec");
    let (mut raw, mut encoded) = (0u64, 0u64);
    let mut worst_ratio = f64::INFINITY;
    let mut worst_bound: f64 = 0.0;
    for i in 0..1000 {
        let c = if rng.bernoulli(0.5) { 3 } else { 1 };
        let (h, w) = (rng.int_inclusive(32, 64), rng.int_inclusive(32, 64));
        let offset = rng.uniform_range(-1000.0, 1000.0);
        let spread = 10f64.powf(rng.uniform_range(-3.0, 3.0));
        let values: Vec<f64> = (0..c * h * w).map(|_| offset + spread * rng.uniform()).collect();
        let img = Tensor::<f64>::from_f64([c, h, w], &values).map_err(err)?;
        let enc = alpha_encode(&img).map_err(err)?;
        let path = dir.join(format!("{i}.aenc"));
        enc.write(&path).map_err(err)?;
        let file_len = fs::metadata(&path).map_err(err)?.len();
        let back: Tensor<f64> = alpha_decode(&EncodedImage::read(&path).map_err(err)?).map_err(err)?;
        let (o, s) = (f64::from(enc.offset), f64::from(enc.scale));
        let bound = s / 510.0 + 4.0 * f64::from(f32::EPSILON) * (o.abs() + s);
        let e = max_diff(&values, &back.to_f64_vec());
        ensure(e <= bound, || format!("image {i}: error {e:e} above {bound:e}"))?;
        worst_bound = worst_bound.max(e / bound);
        let n = (c * h * w) as u64;
        worst_ratio = worst_ratio.min((4 * n) as f64 / file_len as f64);
        raw += 4 * n;
        encoded += file_len;
    }
    ensure(worst_ratio >= 3.9, || format!("smallest size ratio {worst_ratio:.3}"))?;
    Ok(format!(
        "1000 images, error at most {:.3} of the bound, size ratio {:.3} overall, {worst_ratio:.3} worst",
        worst_bound,
        raw as f64 / encoded as f64
    ))
}

// 10 --------------------------------------------------------------------

fn training_protocol() -> Outcome {
    let cfg = TrainConfig::default();
    ensure(cfg.momentum == 0.9 && cfg.weight_decay == 1e-4 && cfg.lr0 == 0.01, || format!("{cfg:?}"))?;
    let mut state = TrainState::<f64>::new(&cfg);
    let one = |v: f64| Tensor::<f64>::from_f64([1], &[v]).unwrap();
    let mut w = Param::new("w", one(1.0), true);
    let mut b = Param::new("b", one(1.0), false);
    // step 1: v = 0.5 + 1e-4·1 = 0.5001, p = 1 − 0.01·0.5001 = 0.994999
    // step 2: v = 0.9·0.5001 + 0.5 + 1e-4·0.994999 = 0.9501894999
    //         p = 0.994999 − 0.009501894999 = 0.985497105001
    // bias (no decay): v = 0.5 then 0.95, p = 0.995 then 0.9855
    let hand = [(0.994999, 0.995), (0.985497105001, 0.9855)];
    for (wp, bp) in hand {
        w.grad = one(0.5);
        b.grad = one(0.5);
        sgd_step(&mut [&mut w, &mut b], &mut state, &cfg).map_err(err)?;
        let (gw, gb) = (w.value.data()[0], b.value.data()[0]);
        ensure((gw - wp).abs() < 1e-14 && (gb - bp).abs() < 1e-14, || format!("got ({gw}, {gb}), want ({wp}, {bp})"))?;
    }
    ensure((state.velocity["w"].data()[0] - 0.9501894999).abs() < 1e-14, || "velocity of w".into())?;

    let mut state = TrainState::<f64>::new(&cfg);
    let mut rates = vec![state.lr];
    lr_schedule_update(&mut state, 0.5, &cfg);
    for _ in 0..100 {
        if lr_schedule_update(&mut state, 0.5, &cfg) {
            rates.push(state.lr);
        }
    }
    ensure(rates.len() == 4, || format!("rates {rates:?}"))?;
    for pair in rates.windows(2) {
        ensure((pair[0] / pair[1] - 10.0).abs() < 1e-12, || format!("rates {rates:?}"))?;
    }
    ensure(state.lr == cfg.lr0 / 1000.0, || format!("final rate {}", state.lr))?;
    Ok(format!("two hand-computed steps match, rates {rates:?}"))
}

// -----------------------------------------------------------------------

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("temporary directory");
    let sub = |name: &str| {
        let p = scratch.path().join(name);
        fs::create_dir_all(&p).expect("scratch directory");
        p
    };
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut record = |n: u8, name: &'static str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("PASS criterion {n:>2} {name}: {detail}"),
            Err(why) => println!("FAIL criterion {n:>2} {name}: {why}"),
        }
        results.push((n, name, outcome));
    };

    record(1, "gradient checks", gradient_checks());
    record(2, "loss identities", loss_identities());
    record(3, "stochastic pooling expectation", pooling_expectation());
    record(4, "architecture reduction", architecture_reduction());
    record(5, "connectivity determinism", connectivity());
    let first = overfit_run(&sub("overfit-a"));
    match &first {
        Ok(run) => record(6, "overfit smoke test", overfit(run)),
        Err(e) => record(6, "overfit smoke test", Err(e.clone())),
    }
    record(7, "sweep structure", sweep_structure(&sub("sweeps")));
    record(8, "alpha-encoding codec", codec(&sub("codec")));
    match &first {
        Ok(run) => record(9, "determinism", determinism(run, &sub("overfit-b"))),
        Err(e) => record(9, "determinism", Err(format!("first run failed: {e}"))),
    }
    record(10, "training protocol", training_protocol());

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
