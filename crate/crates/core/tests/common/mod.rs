//! Shared helpers for the integration suites: random model probes and the
//! central finite-difference gradient oracle.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use arsq_core::autodiff::Activation;
use arsq_core::codec::{ActionSpec, DiscreteAction};
use arsq_core::model::{ArsqModel, ConditioningOrder, ModelConfig};

pub const FD_STEP: f64 = 1e-4;

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Central finite difference of `loss` with respect to one parameter
/// coordinate of the model's online set.
pub fn numeric_grad(
    model: &ArsqModel,
    loss: &dyn Fn(&ArsqModel) -> f64,
    param_idx: usize,
    coord: usize,
) -> f64 {
    let mut plus = model.clone();
    plus.params.get_mut(param_idx).tensor.data[coord] += FD_STEP;
    let fp = loss(&plus);
    let mut minus = model.clone();
    minus.params.get_mut(param_idx).tensor.data[coord] -= FD_STEP;
    let fm = loss(&minus);
    (fp - fm) / (2.0 * FD_STEP)
}

pub fn random_order(rng: &mut ChaCha12Rng) -> ConditioningOrder {
    match rng.gen_range(0..6) {
        0 => ConditioningOrder::CoarseOuterDimInner,
        1 => ConditioningOrder::DimOuterCoarseInner,
        2 => ConditioningOrder::NoCfCond,
        3 => ConditioningOrder::NoDimCond,
        4 => ConditioningOrder::NoCf,
        _ => ConditioningOrder::Plain,
    }
}

/// A small random model with non-degenerate heads, plus a random state and
/// complete action for probing.
pub fn random_probe(seed: u64) -> (ArsqModel, Vec<f64>, DiscreteAction) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dims = rng.gen_range(1..=2);
    let bins = rng.gen_range(2..=3);
    let levels = rng.gen_range(1..=2);
    let obs_width = rng.gen_range(1..=3);
    let cfg = ModelConfig {
        obs_width,
        action_spec: ActionSpec::symmetric(dims, 1.0, bins, levels).unwrap(),
        order: random_order(&mut rng),
        alpha: rng.gen_range(0.05..1.0),
        backbone_widths: vec![rng.gen_range(4..8), rng.gen_range(4..8)],
        activation: if rng.gen_bool(0.5) {
            Activation::Tanh
        } else {
            Activation::SiluLayerNorm
        },
        use_bias: rng.gen_bool(0.8),
    };
    let mut model = ArsqModel::new(&cfg, rng.gen()).unwrap();
    // heads and value outputs are zero-initialized; perturb every parameter
    // so gradients flow everywhere
    for idx in 0..model.params.len() {
        for v in &mut model.params.get_mut(idx).tensor.data {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    // nudge targets apart from online params so the TD min is non-trivial
    for idx in 0..model.targets.len() {
        for v in &mut model.targets.get_mut(idx).tensor.data {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let state: Vec<f64> = (0..obs_width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let action = DiscreteAction::new(
        (0..dims)
            .map(|_| (0..levels).map(|_| rng.gen_range(0..bins)).collect())
            .collect(),
    );
    (model, state, action)
}
