//! The ARSQ policy/value machinery: a shared-backbone advantage network with
//! one head per (level, dimension) slot, log-sum-exp normalization of every
//! head, auto-regressive conditioning over the slots, twin soft-value
//! networks with EMA targets, and double-network action selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{
    Activation, DenseNetworkConfig, Mlp, NodeId, ParamSet, Tape,
};
use crate::codec::{ActionSpec, DiscreteAction};
use crate::error::{ArsqError, Result};

/// Visitation sequence over (level, dimension) heads and which previously
/// chosen entries each head is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditioningOrder {
    /// default: coarse-to-fine outer, dimension inner
    CoarseOuterDimInner,
    /// ablation "Swap": dimension outer, coarse-to-fine inner
    DimOuterCoarseInner,
    /// ablation "w/o CF Cond.": all levels of a dimension emitted at once
    NoCfCond,
    /// ablation "w/o Dim Cond.": all dimensions of a level emitted at once
    NoDimCond,
    /// ablation "w/o CF": flat B^L bins per dimension, dimension conditioning kept
    NoCf,
    /// ablation "Plain": flat bins, no conditioning at all
    Plain,
}

impl ConditioningOrder {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "coarse_outer_dim_inner" => Self::CoarseOuterDimInner,
            "dim_outer_coarse_inner" | "swap" => Self::DimOuterCoarseInner,
            "no_cf_cond" => Self::NoCfCond,
            "no_dim_cond" => Self::NoDimCond,
            "no_cf" => Self::NoCf,
            "plain" => Self::Plain,
            other => {
                return Err(ArsqError::InvalidConfig(format!(
                    "unknown conditioning mode '{other}'"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::CoarseOuterDimInner => "coarse_outer_dim_inner",
            Self::DimOuterCoarseInner => "dim_outer_coarse_inner",
            Self::NoCfCond => "no_cf_cond",
            Self::NoDimCond => "no_dim_cond",
            Self::NoCf => "no_cf",
            Self::Plain => "plain",
        }
    }

    /// Flat modes collapse the level hierarchy into `B^L` bins per dimension.
    pub fn is_flat(&self) -> bool {
        matches!(self, Self::NoCf | Self::Plain)
    }

    fn visible(&self, current: Slot, other: Slot) -> bool {
        match self {
            Self::CoarseOuterDimInner => {
                other.level < current.level
                    || (other.level == current.level && other.dim < current.dim)
            }
            Self::DimOuterCoarseInner => {
                other.dim < current.dim
                    || (other.dim == current.dim && other.level < current.level)
            }
            Self::NoCfCond | Self::NoCf => other.dim < current.dim,
            Self::NoDimCond => other.level < current.level,
            Self::Plain => false,
        }
    }
}

/// One output head position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub level: usize,
    pub dim: usize,
}

/// Slot sequence, head width and prefix geometry for a (spec, order) pair.
#[derive(Debug, Clone)]
pub struct SlotLayout {
    pub spec: ActionSpec,
    pub order: ConditioningOrder,
    pub slots: Vec<Slot>,
    pub head_width: usize,
    pub obs_width: usize,
}

impl SlotLayout {
    pub fn new(spec: ActionSpec, order: ConditioningOrder, obs_width: usize) -> Self {
        let mut slots = Vec::new();
        if order.is_flat() {
            for dim in 0..spec.dims {
                slots.push(Slot { level: 0, dim });
            }
        } else {
            match order {
                ConditioningOrder::DimOuterCoarseInner | ConditioningOrder::NoCfCond => {
                    for dim in 0..spec.dims {
                        for level in 0..spec.levels {
                            slots.push(Slot { level, dim });
                        }
                    }
                }
                _ => {
                    for level in 0..spec.levels {
                        for dim in 0..spec.dims {
                            slots.push(Slot { level, dim });
                        }
                    }
                }
            }
        }
        let head_width = if order.is_flat() {
            spec.fine_bins()
        } else {
            spec.bins_per_level
        };
        Self {
            spec,
            order,
            slots,
            head_width,
            obs_width,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    /// Encoder input width: observation plus, per slot, a one-hot of the
    /// digit, the decoded center of the selection, and a validity flag.
    pub fn encoder_width(&self) -> usize {
        self.obs_width + self.n_slots() * (self.head_width + 2)
    }

    pub fn slot_index(&self, level: usize, dim: usize) -> Result<usize> {
        self.slots
            .iter()
            .position(|s| s.level == level && s.dim == dim)
            .ok_or_else(|| {
                ArsqError::IndexOutOfRange {
                    what: "slot (level, dim)",
                    got: level * self.spec.dims + dim,
                    limit: self.n_slots(),
                }
            })
    }

    pub fn visible(&self, current: usize, other: usize) -> bool {
        self.order.visible(self.slots[current], self.slots[other])
    }

    /// Per-slot digits of a complete discrete action.
    pub fn action_digits(&self, action: &DiscreteAction) -> Result<Vec<usize>> {
        action.validate(&self.spec)?;
        self.slots
            .iter()
            .map(|s| {
                if self.order.is_flat() {
                    self.spec.level_recompose(&action.indices[s.dim])
                } else {
                    Ok(action.indices[s.dim][s.level])
                }
            })
            .collect()
    }

    /// Rebuild a discrete action from per-slot digits.
    pub fn digits_to_action(&self, digits: &[usize]) -> Result<DiscreteAction> {
        if digits.len() != self.n_slots() {
            return Err(ArsqError::DimensionMismatch {
                expected: self.n_slots(),
                got: digits.len(),
            });
        }
        let mut indices = vec![vec![0usize; self.spec.levels]; self.spec.dims];
        for (slot, &g) in self.slots.iter().zip(digits) {
            if self.order.is_flat() {
                indices[slot.dim] = self.spec.level_decompose(g)?;
            } else {
                indices[slot.dim][slot.level] = g;
            }
        }
        Ok(DiscreteAction::new(indices))
    }

    /// Continuous center of the cell selected by `slot`'s digit, given the
    /// digits of the coarser levels of the same dimension.
    fn slot_center(&self, slot_idx: usize, digits: &[Option<usize>]) -> Result<f64> {
        let slot = self.slots[slot_idx];
        if self.order.is_flat() {
            let g = digits[slot_idx].expect("caller checked");
            return Ok(self.spec.fine_center(slot.dim, g));
        }
        let mut chain = Vec::with_capacity(slot.level + 1);
        for l in 0..=slot.level {
            let idx = self.slot_index(l, slot.dim)?;
            chain.push(digits[idx].ok_or_else(|| {
                ArsqError::PrefixMismatch(format!(
                    "level {l} of dimension {} required for the center of (l{}, d{}) is unset",
                    slot.dim, slot.level, slot.dim
                ))
            })?);
        }
        Ok(self.spec.partial_center(slot.dim, &chain))
    }
}

/// Partially chosen action, aligned with the slot order of a layout.
#[derive(Debug, Clone)]
pub struct Prefix {
    digits: Vec<Option<usize>>,
}

impl Prefix {
    pub fn empty(layout: &SlotLayout) -> Self {
        Self {
            digits: vec![None; layout.n_slots()],
        }
    }

    /// A complete prefix holding every digit of `action` (used for teacher
    /// forcing during loss evaluation).
    pub fn from_action(layout: &SlotLayout, action: &DiscreteAction) -> Result<Self> {
        Ok(Self {
            digits: layout.action_digits(action)?.into_iter().map(Some).collect(),
        })
    }

    pub fn set_slot(&mut self, layout: &SlotLayout, slot_idx: usize, digit: usize) -> Result<()> {
        if digit >= layout.head_width {
            return Err(ArsqError::IndexOutOfRange {
                what: "prefix digit",
                got: digit,
                limit: layout.head_width,
            });
        }
        self.digits[slot_idx] = Some(digit);
        Ok(())
    }

    pub fn set(&mut self, layout: &SlotLayout, level: usize, dim: usize, digit: usize) -> Result<()> {
        let idx = layout.slot_index(level, dim)?;
        self.set_slot(layout, idx, digit)
    }

    pub fn get_slot(&self, slot_idx: usize) -> Option<usize> {
        self.digits[slot_idx]
    }
}

/// `A_i = u_i - alpha * log(sum_j exp(u_j / alpha))`, computed with max
/// subtraction; `sum_i exp(A_i / alpha) = 1` up to floating error.
pub fn normalize_head(u: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(ArsqError::InvalidConfig(format!(
            "temperature must be positive and finite, got {alpha}"
        )));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(ArsqError::Divergence(
            "non-finite head output in normalize_head".into(),
        ));
    }
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + alpha * u.iter().map(|&x| ((x - m) / alpha).exp()).sum::<f64>().ln();
    Ok(u.iter().map(|&x| x - lse).collect())
}

/// Graph version of [`normalize_head`].
pub fn normalize_head_node(tape: &mut Tape, u: NodeId, alpha: f64) -> Result<NodeId> {
    let scaled = tape.scale(u, 1.0 / alpha);
    let lse = tape.log_sum_exp(scaled);
    let lse_alpha = tape.scale(lse, alpha);
    tape.sub_broadcast(u, lse_alpha)
}

/// Elementwise min of two normalized advantage vectors followed by a softmax
/// at temperature `alpha` (the double-network action-selection rule).
pub fn combine_min_softmax(a1: &[f64], a2: &[f64], alpha: f64) -> Vec<f64> {
    let m: Vec<f64> = a1.iter().zip(a2).map(|(&x, &y)| x.min(y)).collect();
    let top = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = m.iter().map(|&x| ((x - top) / alpha).exp()).collect();
    let z: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= z;
    }
    probs
}

/// Advantage network: shared backbone over the conditioning encoder output,
/// one (hidden + output) head per slot. Heads are named `adv/l{level}/d{dim}`
/// so checkpoints carry the slot identity.
#[derive(Debug, Clone)]
pub struct AdvantageNetwork {
    pub layout: SlotLayout,
    pub alpha: f64,
    backbone: Mlp,
    heads: Vec<Mlp>,
}

impl AdvantageNetwork {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        layout: SlotLayout,
        alpha: f64,
        backbone_widths: &[usize],
        activation: Activation,
        use_bias: bool,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        if backbone_widths.is_empty() {
            return Err(ArsqError::InvalidConfig("backbone_widths must be nonempty".into()));
        }
        let feature_width = *backbone_widths.last().unwrap();
        let backbone = Mlp::new(
            params,
            &format!("{prefix}/backbone"),
            DenseNetworkConfig {
                input_width: layout.encoder_width(),
                hidden_widths: backbone_widths[..backbone_widths.len() - 1].to_vec(),
                output_width: feature_width,
                activation,
                use_bias,
                activate_output: true,
                zero_init_output: false,
            },
            rng,
        )?;
        let mut heads = Vec::with_capacity(layout.n_slots());
        for slot in &layout.slots {
            heads.push(Mlp::new(
                params,
                &format!("{prefix}/adv/l{}/d{}", slot.level, slot.dim),
                DenseNetworkConfig {
                    input_width: feature_width,
                    hidden_widths: vec![feature_width],
                    output_width: layout.head_width,
                    activation,
                    use_bias,
                    activate_output: false,
                    zero_init_output: true,
                },
                rng,
            )?);
        }
        Ok(Self {
            layout,
            alpha,
            backbone,
            heads,
        })
    }

    /// Validate that every slot visible from `slot_idx` is set, and encode
    /// (state, prefix) into the backbone input. Entries outside the visible
    /// set are ignored (they are zeroed in the encoding), so a fuller prefix
    /// than necessary is accepted.
    fn encode_input(&self, state: &[f64], prefix: &Prefix, slot_idx: usize) -> Result<Vec<f64>> {
        if state.len() != self.layout.obs_width {
            return Err(ArsqError::DimensionMismatch {
                expected: self.layout.obs_width,
                got: state.len(),
            });
        }
        let w = self.layout.head_width;
        let mut input = Vec::with_capacity(self.layout.encoder_width());
        input.extend_from_slice(state);
        for j in 0..self.layout.n_slots() {
            let visible = self.layout.visible(slot_idx, j);
            let digit = prefix.get_slot(j);
            if visible && digit.is_none() {
                let s = self.layout.slots[j];
                return Err(ArsqError::PrefixMismatch(format!(
                    "slot (l{}, d{}) precedes (l{}, d{}) under {} but is unset",
                    s.level,
                    s.dim,
                    self.layout.slots[slot_idx].level,
                    self.layout.slots[slot_idx].dim,
                    self.layout.order.name()
                )));
            }
            if visible {
                let g = digit.unwrap();
                if g >= w {
                    return Err(ArsqError::IndexOutOfRange {
                        what: "prefix digit",
                        got: g,
                        limit: w,
                    });
                }
                let start = input.len();
                input.resize(start + w, 0.0);
                input[start + g] = 1.0;
                input.push(self.layout.slot_center(j, &prefix.digits)?);
                input.push(1.0);
            } else {
                input.resize(input.len() + w + 2, 0.0);
            }
        }
        Ok(input)
    }

    /// Normalized dimensional soft advantages of one head (no graph).
    pub fn head_advantages(
        &self,
        params: &ParamSet,
        state: &[f64],
        prefix: &Prefix,
        slot_idx: usize,
    ) -> Result<Vec<f64>> {
        let input = self.encode_input(state, prefix, slot_idx)?;
        let feat = self.backbone.eval(params, &input)?;
        let u = self.heads[slot_idx].eval(params, &feat)?;
        normalize_head(&u, self.alpha)
    }

    /// Graph-recording version of [`head_advantages`][Self::head_advantages].
    pub fn head_advantages_graph(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        state: &[f64],
        prefix: &Prefix,
        slot_idx: usize,
    ) -> Result<NodeId> {
        let input = self.encode_input(state, prefix, slot_idx)?;
        let x = tape.constant(input);
        let feat = self.backbone.forward(tape, params, x)?;
        let u = self.heads[slot_idx].forward(tape, params, feat)?;
        normalize_head_node(tape, u, self.alpha)
    }

    /// Normalized advantages for the head at (level, dim); the prefix must
    /// contain every entry that conditions this head under the active order.
    pub fn dimensional_advantages(
        &self,
        params: &ParamSet,
        state: &[f64],
        prefix: &Prefix,
        level: usize,
        dim: usize,
    ) -> Result<Vec<f64>> {
        let idx = self.layout.slot_index(level, dim)?;
        self.head_advantages(params, state, prefix, idx)
    }

    /// Joint soft advantage of a complete action: the sum over slots of the
    /// selected normalized entry, teacher-forced on the action's own digits.
    pub fn joint_advantage(
        &self,
        params: &ParamSet,
        state: &[f64],
        action: &DiscreteAction,
    ) -> Result<f64> {
        let digits = self.layout.action_digits(action)?;
        let prefix = Prefix::from_action(&self.layout, action)?;
        let mut total = 0.0;
        for (slot_idx, &digit) in digits.iter().enumerate() {
            let adv = self.head_advantages(params, state, &prefix, slot_idx)?;
            total += adv[digit];
        }
        Ok(total)
    }

    /// Graph version of [`joint_advantage`][Self::joint_advantage].
    pub fn joint_advantage_graph(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        state: &[f64],
        action: &DiscreteAction,
    ) -> Result<NodeId> {
        let digits = self.layout.action_digits(action)?;
        let prefix = Prefix::from_action(&self.layout, action)?;
        let mut total: Option<NodeId> = None;
        for (slot_idx, &digit) in digits.iter().enumerate() {
            let adv = self.head_advantages_graph(tape, params, state, &prefix, slot_idx)?;
            let picked = tape.gather(adv, digit)?;
            total = Some(match total {
                Some(t) => tape.add(t, picked)?,
                None => picked,
            });
        }
        Ok(total.expect("at least one slot"))
    }
}

/// Which parameter snapshot action selection reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutNet {
    Current,
    Target,
}

impl RolloutNet {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Self::Current),
            "target" => Ok(Self::Target),
            other => Err(ArsqError::InvalidConfig(format!(
                "unknown rollout net '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Sample,
    Greedy,
}

/// Twin soft-value networks; the online pair is trained, the target pair is
/// an EMA copy whose minimum forms TD targets.
#[derive(Debug, Clone)]
pub struct ValueNetworkPair {
    pub v1: Mlp,
    pub v2: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueSelector {
    Online1,
    Online2,
    TargetMin,
}

/// The full ARSQ model: two advantage networks, two value networks, and an
/// EMA target copy of everything.
#[derive(Debug, Clone)]
pub struct ArsqModel {
    pub layout: SlotLayout,
    pub alpha: f64,
    pub params: ParamSet,
    pub targets: ParamSet,
    pub adv1: AdvantageNetwork,
    pub adv2: AdvantageNetwork,
    pub value: ValueNetworkPair,
}

/// Everything needed to build an [`ArsqModel`].
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub obs_width: usize,
    pub action_spec: ActionSpec,
    pub order: ConditioningOrder,
    pub alpha: f64,
    pub backbone_widths: Vec<usize>,
    pub activation: Activation,
    pub use_bias: bool,
}

impl ArsqModel {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if cfg.alpha <= 0.0 {
            return Err(ArsqError::InvalidConfig("alpha must be positive".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let layout = SlotLayout::new(cfg.action_spec.clone(), cfg.order, cfg.obs_width);
        let mut params = ParamSet::new();
        let adv1 = AdvantageNetwork::new(
            &mut params,
            "theta1",
            layout.clone(),
            cfg.alpha,
            &cfg.backbone_widths,
            cfg.activation,
            cfg.use_bias,
            &mut rng,
        )?;
        let adv2 = AdvantageNetwork::new(
            &mut params,
            "theta2",
            layout.clone(),
            cfg.alpha,
            &cfg.backbone_widths,
            cfg.activation,
            cfg.use_bias,
            &mut rng,
        )?;
        let value_cfg = DenseNetworkConfig {
            input_width: cfg.obs_width,
            hidden_widths: cfg.backbone_widths.clone(),
            output_width: 1,
            activation: cfg.activation,
            use_bias: cfg.use_bias,
            activate_output: false,
            zero_init_output: true,
        };
        let v1 = Mlp::new(&mut params, "phi1", value_cfg.clone(), &mut rng)?;
        let v2 = Mlp::new(&mut params, "phi2", value_cfg, &mut rng)?;
        let targets = params.clone();
        Ok(Self {
            layout,
            alpha: cfg.alpha,
            params,
            targets,
            adv1,
            adv2,
            value: ValueNetworkPair { v1, v2 },
        })
    }

    fn rollout_params(&self, net: RolloutNet) -> &ParamSet {
        match net {
            RolloutNet::Current => &self.params,
            RolloutNet::Target => &self.targets,
        }
    }

    /// Algorithm: walk the slots in conditioning order; at each head take the
    /// elementwise min of the two networks' normalized advantages, soften at
    /// temperature alpha, then sample or take the argmax.
    pub fn select_action(
        &self,
        net: RolloutNet,
        state: &[f64],
        mode: SelectMode,
        rng: &mut ChaCha12Rng,
    ) -> Result<DiscreteAction> {
        let params = self.rollout_params(net);
        let mut prefix = Prefix::empty(&self.layout);
        let mut digits = Vec::with_capacity(self.layout.n_slots());
        for slot_idx in 0..self.layout.n_slots() {
            let a1 = self.adv1.head_advantages(params, state, &prefix, slot_idx)?;
            let a2 = self.adv2.head_advantages(params, state, &prefix, slot_idx)?;
            let probs = combine_min_softmax(&a1, &a2, self.alpha);
            let digit = match mode {
                SelectMode::Greedy => argmax(&probs),
                SelectMode::Sample => sample_categorical(&probs, rng),
            };
            prefix.set_slot(&self.layout, slot_idx, digit)?;
            digits.push(digit);
        }
        self.layout.digits_to_action(&digits)
    }

    /// Soft state value from the requested network(s).
    pub fn soft_value(&self, state: &[f64], sel: ValueSelector) -> Result<f64> {
        match sel {
            ValueSelector::Online1 => Ok(self.value.v1.eval(&self.params, state)?[0]),
            ValueSelector::Online2 => Ok(self.value.v2.eval(&self.params, state)?[0]),
            ValueSelector::TargetMin => {
                let t1 = self.value.v1.eval(&self.targets, state)?[0];
                let t2 = self.value.v2.eval(&self.targets, state)?[0];
                Ok(t1.min(t2))
            }
        }
    }

    /// Mean per-head entropy of the behavior policy at `state`, summed over
    /// slots (the entropy estimate logged as telemetry).
    pub fn policy_entropy(&self, net: RolloutNet, state: &[f64], action: &DiscreteAction) -> Result<f64> {
        let params = self.rollout_params(net);
        let prefix = Prefix::from_action(&self.layout, action)?;
        let mut total = 0.0;
        for slot_idx in 0..self.layout.n_slots() {
            let a1 = self.adv1.head_advantages(params, state, &prefix, slot_idx)?;
            let a2 = self.adv2.head_advantages(params, state, &prefix, slot_idx)?;
            let probs = combine_min_softmax(&a1, &a2, self.alpha);
            total -= probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>();
        }
        Ok(total)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
