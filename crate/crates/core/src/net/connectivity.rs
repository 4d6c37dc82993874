//! Seeded random wiring between blocks of the same stage.

use super::spec::EdgeGate;
use crate::error::{Error, Result};
use crate::rng::PrngStream;

/// Range of the initial gate logits.
const GATE_INIT: (f64, f64) = (-0.5, 0.5);

/// Whether an edge `source -> target` joins tensors of equal shape.
///
/// Block `target` consumes what block `target - 1` produced, so any source
/// whose output lives in the same stage as `target - 1` is compatible.
pub fn edge_allowed(block_stages: &[usize], source: usize, target: usize) -> bool {
    source < target && target < block_stages.len() && block_stages[source] == block_stages[target - 1]
}

/// Samples the edge list for blocks whose output stages are `block_stages`.
///
/// The chain edge `i-1 -> i` is always present. Every other compatible pair
/// `j -> i` with `j < i - 1` is kept with probability `p_extra`, drawn from
/// `stream.fork("edges")` in `(target, source)` order. Gate logits come from
/// `stream.fork("init/gates")`, one per edge in list order.
pub fn sample_connectivity(block_stages: &[usize], p_extra: f64, stream: &PrngStream) -> Result<Vec<EdgeGate>> {
    if !(0.0..=1.0).contains(&p_extra) {
        return Err(Error::Config(format!("p_extra must lie in [0, 1], got {p_extra}")));
    }
    let mut picks = stream.fork("edges");
    let mut gates = stream.fork("init/gates");
    let mut edges = Vec::new();
    for target in 1..block_stages.len() {
        for source in 0..target {
            let keep = if source + 1 == target {
                true
            } else if edge_allowed(block_stages, source, target) {
                picks.bernoulli(p_extra)
            } else {
                false
            };
            if keep {
                edges.push(EdgeGate {
                    source,
                    target,
                    gate_logit: gates.uniform_range(GATE_INIT.0, GATE_INIT.1),
                });
            }
        }
    }
    Ok(edges)
}

/// Softmax over one block's incoming gate logits.
pub fn gate_weights(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}
