//! The ARSQ optimization objectives: TD regression of V + A toward the
//! double-target, the margin behavior-cloning loss, its log-sum-exp variant,
//! and their weighted combination over mixed mini-batches.

use crate::autodiff::{NodeId, ParamSet, Tape};
use crate::codec::DiscreteAction;
use crate::error::{ArsqError, Result};
use crate::model::{AdvantageNetwork, ArsqModel, Prefix, ValueSelector};
use crate::replay::Transition;

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub gamma: f64,
    pub alpha: f64,
    /// margin C_m; expert advantages are pushed at least |C_m| above the rest
    pub bc_margin: f64,
    /// behavior-cloning weight beta
    pub bc_weight: f64,
    /// switch from the per-bin margin sum to the log-sum-exp variant
    pub bc_variant: bool,
    /// drop the RL term entirely (the behavior-cloning baseline)
    pub bc_only: bool,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ArsqError::InvalidConfig(format!(
                "gamma must be in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.alpha <= 0.0 {
            return Err(ArsqError::InvalidConfig("alpha must be positive".into()));
        }
        if self.bc_weight < 0.0 {
            return Err(ArsqError::InvalidConfig("bc_weight must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `y = r + gamma * min(target V1, target V2)(s')`, with the bootstrap
/// removed on terminal transitions. Evaluated against the target parameters
/// outside any tape, so no gradient can reach them.
pub fn td_target(
    model: &ArsqModel,
    reward: f64,
    done: bool,
    next_state: &[f64],
    gamma: f64,
) -> Result<f64> {
    if done {
        return Ok(reward);
    }
    Ok(reward + gamma * model.soft_value(next_state, ValueSelector::TargetMin)?)
}

/// `0.5 * (V + A - y)^2` as a graph node over existing V and A nodes.
pub fn rl_pair_loss(tape: &mut Tape, v: NodeId, a: NodeId, y: f64) -> Result<NodeId> {
    let va = tape.add(v, a)?;
    let target = tape.constant(vec![y]);
    let resid = tape.sub(va, target)?;
    let sq = tape.mul(resid, resid)?;
    Ok(tape.scale(sq, 0.5))
}

/// RL loss of one transition summed over both network pairs (i = 1, 2),
/// built on a fresh tape; gradients flow into all four online networks.
pub fn rl_loss_graph(
    tape: &mut Tape,
    model: &ArsqModel,
    state: &[f64],
    action: &DiscreteAction,
    y: f64,
) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for (adv, vnet) in [(&model.adv1, &model.value.v1), (&model.adv2, &model.value.v2)] {
        let a = adv.joint_advantage_graph(tape, &model.params, state, action)?;
        let s = tape.constant(state.to_vec());
        let v = vnet.forward(tape, &model.params, s)?;
        let l = rl_pair_loss(tape, v, a, y)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("two pairs"))
}

/// Convenience scalar wrapper around [`rl_loss_graph`].
pub fn rl_loss(model: &ArsqModel, state: &[f64], action: &DiscreteAction, y: f64) -> Result<f64> {
    let mut tape = Tape::new(&model.params);
    let node = rl_loss_graph(&mut tape, model, state, action, y)?;
    Ok(tape.scalar(node))
}

/// One head's margin term: `sum_a max(A(a) - A(a_e), C_m)` over an existing
/// normalized-advantage node.
fn bc_margin_head(tape: &mut Tape, adv: NodeId, expert_digit: usize, c_m: f64) -> Result<NodeId> {
    let picked = tape.gather(adv, expert_digit)?;
    let gaps = tape.sub_broadcast(adv, picked)?;
    let clamped = tape.max_const(gaps, c_m);
    Ok(tape.sum(clamped))
}

/// One head's log-sum-exp variant:
/// `max(log sum_{a != a_e} exp(A(a)) - A(a_e), C_m)`, with the exponentials
/// taken on the normalized advantages directly (no 1/alpha factor).
fn bc_variant_head(tape: &mut Tape, adv: NodeId, expert_digit: usize, c_m: f64) -> Result<NodeId> {
    let others = tape.exclude_index(adv, expert_digit)?;
    let lse = tape.log_sum_exp(others);
    let picked = tape.gather(adv, expert_digit)?;
    let diff = tape.sub(lse, picked)?;
    Ok(tape.max_const(diff, c_m))
}

/// Behavior-cloning loss of one network for one expert action: the sum over
/// every head, each evaluated under the expert prefix.
pub fn bc_loss_graph(
    tape: &mut Tape,
    adv: &AdvantageNetwork,
    params: &ParamSet,
    state: &[f64],
    expert: &DiscreteAction,
    c_m: f64,
    variant: bool,
) -> Result<NodeId> {
    let digits = adv.layout.action_digits(expert)?;
    let prefix = Prefix::from_action(&adv.layout, expert)?;
    let mut total: Option<NodeId> = None;
    for (slot_idx, &digit) in digits.iter().enumerate() {
        let a = adv.head_advantages_graph(tape, params, state, &prefix, slot_idx)?;
        let term = if variant {
            bc_variant_head(tape, a, digit, c_m)?
        } else {
            bc_margin_head(tape, a, digit, c_m)?
        };
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one slot"))
}

/// Scalar margin BC loss (single network).
pub fn bc_margin_loss(
    adv: &AdvantageNetwork,
    params: &ParamSet,
    state: &[f64],
    expert: &DiscreteAction,
    c_m: f64,
) -> Result<f64> {
    let mut tape = Tape::new(params);
    let node = bc_loss_graph(&mut tape, adv, params, state, expert, c_m, false)?;
    Ok(tape.scalar(node))
}

/// Scalar log-sum-exp variant BC loss (single network).
pub fn bc_variant_loss(
    adv: &AdvantageNetwork,
    params: &ParamSet,
    state: &[f64],
    expert: &DiscreteAction,
    c_m: f64,
) -> Result<f64> {
    let mut tape = Tape::new(params);
    let node = bc_loss_graph(&mut tape, adv, params, state, expert, c_m, true)?;
    Ok(tape.scalar(node))
}

/// Scalar values of the pieces of a combined loss, for telemetry.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub rl: f64,
    pub bc: f64,
}

/// Algorithm-level combined objective:
/// `mean over b_D of (L_RL + beta * L_BC) + mean over b_R of L_RL`, with the
/// BC term only on the demonstration batch. Either batch may be empty (pure
/// offline or pure online), but not both. With `bc_only` the RL terms are
/// dropped.
///
/// For demonstration samples the per-head advantage nodes are shared between
/// the RL and BC terms, since both are evaluated under the expert prefix.
pub fn combined_loss_graph(
    tape: &mut Tape,
    model: &ArsqModel,
    batch_d: &[&Transition],
    batch_r: &[&Transition],
    cfg: &LossConfig,
) -> Result<(NodeId, LossBreakdown)> {
    if batch_d.is_empty() && batch_r.is_empty() {
        return Err(ArsqError::EmptyBatch);
    }
    let mut total: Option<NodeId> = None;
    let mut rl_value = 0.0;
    let mut bc_value = 0.0;
    let add_term = |tape: &mut Tape, total: &mut Option<NodeId>, node: NodeId, w: f64| {
        let scaled = tape.scale(node, w);
        *total = Some(match *total {
            Some(t) => tape.add(t, scaled).expect("scalar add"),
            None => scaled,
        });
    };

    for (batch, with_bc) in [(batch_d, true), (batch_r, false)] {
        if batch.is_empty() {
            continue;
        }
        let w = 1.0 / batch.len() as f64;
        for t in batch {
            let y = td_target(model, t.reward, t.done, &t.next_obs, cfg.gamma)?;
            for (adv, vnet) in [(&model.adv1, &model.value.v1), (&model.adv2, &model.value.v2)] {
                // teacher-forced head nodes, shared by the RL gather and the
                // BC margin on this sample
                let digits = adv.layout.action_digits(&t.action_discrete)?;
                let prefix = Prefix::from_action(&adv.layout, &t.action_discrete)?;
                let mut joint: Option<NodeId> = None;
                let mut bc: Option<NodeId> = None;
                for (slot_idx, &digit) in digits.iter().enumerate() {
                    let a =
                        adv.head_advantages_graph(tape, &model.params, &t.obs, &prefix, slot_idx)?;
                    let picked = tape.gather(a, digit)?;
                    joint = Some(match joint {
                        Some(j) => tape.add(j, picked)?,
                        None => picked,
                    });
                    if with_bc && cfg.bc_weight > 0.0 {
                        let term = if cfg.bc_variant {
                            bc_variant_head(tape, a, digit, cfg.bc_margin)?
                        } else {
                            bc_margin_head(tape, a, digit, cfg.bc_margin)?
                        };
                        bc = Some(match bc {
                            Some(b) => tape.add(b, term)?,
                            None => term,
                        });
                    }
                }
                if !cfg.bc_only {
                    let s = tape.constant(t.obs.clone());
                    let v = vnet.forward(tape, &model.params, s)?;
                    let rl = rl_pair_loss(tape, v, joint.expect("slots"), y)?;
                    rl_value += w * tape.scalar(rl);
                    add_term(tape, &mut total, rl, w);
                }
                if let Some(b) = bc {
                    bc_value += w * tape.scalar(b);
                    add_term(tape, &mut total, b, w * cfg.bc_weight);
                }
            }
        }
    }
    let total = total.ok_or(ArsqError::EmptyBatch)?;
    Ok((
        total,
        LossBreakdown {
            total: tape.scalar(total),
            rl: rl_value,
            bc: bc_value,
        },
    ))
}

/// Scalar wrapper around [`combined_loss_graph`].
pub fn combined_loss(
    model: &ArsqModel,
    batch_d: &[&Transition],
    batch_r: &[&Transition],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new(&model.params);
    let (_, breakdown) = combined_loss_graph(&mut tape, model, batch_d, batch_r, cfg)?;
    Ok(breakdown)
}
