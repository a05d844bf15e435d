//! End-to-end training: environment interaction with double-network action
//! selection, mixed demonstration/replay gradient steps, EMA target updates,
//! periodic greedy evaluation, metrics emission and checkpointing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{ema_update, restore_section, OptimizerState, Tape};
use crate::codec::decode;
use crate::config::TrainConfig;
use crate::envs::{make_env, Environment, RewardKind};
use crate::error::{ArsqError, Result};
use crate::losses::{combined_loss_graph, LossConfig};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::model::{ArsqModel, ModelConfig, RolloutNet, SelectMode};
use crate::replay::{
    load_dataset, rank_filter, sample, OfflineDataset, ReplayBuffer, Transition,
};

/// Greedy evaluation statistics.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalStats {
    pub mean_return: f64,
    pub std_return: f64,
    pub success_rate: f64,
    pub episodes: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub final_eval: EvalStats,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub steps: usize,
}

fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix-style mix so nearby streams decorrelate
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn model_config_for(config: &TrainConfig, env: &dyn Environment) -> Result<ModelConfig> {
    Ok(ModelConfig {
        obs_width: env.spec().obs_width,
        action_spec: env.spec().action_spec(config.bins_per_level, config.levels)?,
        order: config.conditioning,
        alpha: config.alpha,
        backbone_widths: config.backbone_widths.clone(),
        activation: config.activation,
        use_bias: config.use_bias,
    })
}

/// Run `n_episodes` greedy episodes on a fresh copy of the environment.
pub fn evaluate_model(
    model: &ArsqModel,
    env: &mut dyn Environment,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    if n_episodes == 0 {
        return Err(ArsqError::InvalidConfig("evaluation needs n_episodes >= 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x45564)); // unused by greedy
    let mut returns = Vec::with_capacity(n_episodes);
    let mut successes = 0usize;
    for episode in 0..n_episodes {
        let mut obs = env.reset(derive_seed(seed, episode as u64));
        let mut total = 0.0;
        loop {
            let action = model.select_action(RolloutNet::Current, &obs, SelectMode::Greedy, &mut rng)?;
            let continuous = decode(&model.layout.spec, &action)?;
            let out = env.step(&continuous.values)?;
            total += out.reward;
            obs = out.obs;
            if out.terminated {
                successes += 1;
                break;
            }
            if out.truncated {
                break;
            }
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / returns.len() as f64;
    Ok(EvalStats {
        mean_return: mean,
        std_return: var.sqrt(),
        success_rate: successes as f64 / n_episodes as f64,
        episodes: n_episodes,
    })
}

/// Mean summed per-head policy entropy and worst per-head normalization
/// deviation over a probe batch.
fn probe_batch(model: &ArsqModel, batch: &[&Transition], limit: usize) -> Result<(f64, f64)> {
    use crate::model::Prefix;
    let mut entropy = 0.0;
    let mut worst_dev: f64 = 0.0;
    let n = batch.len().min(limit);
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    for t in &batch[..n] {
        entropy += model.policy_entropy(RolloutNet::Current, &t.obs, &t.action_discrete)?;
        let prefix = Prefix::from_action(&model.layout, &t.action_discrete)?;
        for slot_idx in 0..model.layout.n_slots() {
            for adv in [&model.adv1, &model.adv2] {
                let a = adv.head_advantages(&model.params, &t.obs, &prefix, slot_idx)?;
                let total: f64 = a.iter().map(|&x| (x / model.alpha).exp()).sum();
                worst_dev = worst_dev.max((total - 1.0).abs());
            }
        }
    }
    Ok((entropy / n as f64, worst_dev))
}

struct Runner {
    config: TrainConfig,
    model: ArsqModel,
    optimizer: OptimizerState,
    dataset: OfflineDataset,
    buffer: ReplayBuffer,
    loss_cfg: LossConfig,
    sample_rng: ChaCha12Rng,
    select_rng: ChaCha12Rng,
    rl_acc: f64,
    bc_acc: f64,
    acc_count: usize,
    last_batch_first: Vec<Transition>,
    norm_worst: f64,
}

impl Runner {
    fn gradient_step(&mut self) -> Result<()> {
        let batch_d: Vec<&Transition> = if self.dataset.is_empty() {
            Vec::new()
        } else {
            sample(&self.dataset, self.config.batch_size, &mut self.sample_rng)?
        };
        let batch_r: Vec<&Transition> = if self.config.bc_only || self.buffer.is_empty() {
            Vec::new()
        } else {
            sample(&self.buffer, self.config.batch_size, &mut self.sample_rng)?
        };
        let mut tape = Tape::new(&self.model.params);
        let (node, breakdown) =
            combined_loss_graph(&mut tape, &self.model, &batch_d, &batch_r, &self.loss_cfg)?;
        if !breakdown.total.is_finite() {
            return Err(ArsqError::Divergence(format!(
                "loss became non-finite at optimizer step {}",
                self.optimizer.step_count()
            )));
        }
        tape.backward(node, &mut self.model.params)?;
        self.optimizer.step(&mut self.model.params)?;
        ema_update(&mut self.model.targets, &self.model.params, 1.0 - self.config.tau)?;
        self.rl_acc += breakdown.rl;
        self.bc_acc += breakdown.bc;
        self.acc_count += 1;
        self.last_batch_first = batch_d
            .iter()
            .chain(batch_r.iter())
            .take(8)
            .map(|t| (*t).clone())
            .collect();
        Ok(())
    }

    fn log_row(
        &mut self,
        writer: &mut MetricsWriter,
        step: usize,
        started: &Instant,
    ) -> Result<EvalStats> {
        let mut eval_env = make_env(&self.config.env)?;
        let stats = evaluate_model(
            &self.model,
            eval_env.as_mut(),
            self.config.eval_episodes,
            derive_seed(self.config.seed, 0xE7A1 ^ step as u64),
        )?;
        let probe_refs: Vec<&Transition> = self.last_batch_first.iter().collect();
        let (entropy, norm_dev) = if probe_refs.is_empty() {
            (0.0, 0.0)
        } else {
            probe_batch(&self.model, &probe_refs, 8)?
        };
        self.norm_worst = self.norm_worst.max(norm_dev);
        if norm_dev > 1e-6 {
            return Err(ArsqError::Divergence(format!(
                "head normalization deviated by {norm_dev:.3e} at step {step}"
            )));
        }
        let denom = self.acc_count.max(1) as f64;
        let v_mean = if let Some(t) = self.last_batch_first.first() {
            self.model.soft_value(&t.obs, crate::model::ValueSelector::Online1)?
        } else {
            0.0
        };
        writer.write(&MetricsRow {
            step,
            episode_return_mean: stats.mean_return,
            episode_return_std: stats.std_return,
            success_rate: stats.success_rate,
            rl_loss: self.rl_acc / denom,
            bc_loss: self.bc_acc / denom,
            v_mean,
            policy_entropy_mean: entropy,
            wall_ms: if self.config.timing_in_metrics {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        })?;
        self.rl_acc = 0.0;
        self.bc_acc = 0.0;
        self.acc_count = 0;
        Ok(stats)
    }
}

/// Execute one full training run and write `metrics.csv`, `checkpoint.bin`
/// and `config_resolved.txt` into `out_dir`.
pub fn train(config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let started = Instant::now();

    let mut env = make_env(&config.env)?;
    let model_cfg = model_config_for(config, env.as_ref())?;
    let model = ArsqModel::new(&model_cfg, derive_seed(config.seed, 0x1217))?;

    let mut dataset = match &config.offline_data {
        Some(path) => {
            let full = load_dataset(path, &model_cfg.action_spec, env.spec().obs_width)?;
            match config.demo_filter {
                Some((segment, fraction)) => rank_filter(&full, segment, fraction)?,
                None => full,
            }
        }
        None => OfflineDataset::default(),
    };
    let buffer = ReplayBuffer::seeded_from(&dataset, config.buffer_capacity);

    let optimizer = OptimizerState::new(&model.params, config.learning_rate, config.weight_decay);
    let loss_cfg = LossConfig {
        gamma: config.gamma,
        alpha: config.alpha,
        bc_margin: config.bc_margin,
        bc_weight: config.bc_weight,
        bc_variant: config.bc_variant,
        bc_only: config.bc_only,
    };
    loss_cfg.validate()?;
    let bc_online_success = config
        .bc_online_success
        .unwrap_or(env.spec().reward_kind == RewardKind::Sparse);

    let mut runner = Runner {
        config: config.clone(),
        model,
        optimizer,
        dataset: OfflineDataset::default(),
        buffer,
        loss_cfg,
        sample_rng: ChaCha12Rng::seed_from_u64(derive_seed(config.seed, 0x5A11)),
        select_rng: ChaCha12Rng::seed_from_u64(derive_seed(config.seed, 0xAC7)),
        rl_acc: 0.0,
        bc_acc: 0.0,
        acc_count: 0,
        last_batch_first: Vec::new(),
        norm_worst: 0.0,
    };
    std::mem::swap(&mut runner.dataset, &mut dataset);

    let metrics_path = out_dir.join("metrics.csv");
    let mut writer = MetricsWriter::create(&metrics_path)?;
    let mut final_eval = EvalStats::default();

    let online = config.total_env_steps > 0;
    let total_steps = if online { config.total_env_steps } else { config.offline_steps };

    if online {
        let mut obs = env.reset(derive_seed(config.seed, 0xEB0));
        let mut episode_counter: u64 = 1;
        let mut episode_buf: Vec<Transition> = Vec::new();
        for step in 1..=total_steps {
            let action = runner.model.select_action(
                config.rollout_net,
                &obs,
                SelectMode::Sample,
                &mut runner.select_rng,
            )?;
            let continuous = decode(&runner.model.layout.spec, &action)?;
            let out = env.step(&continuous.values)?;
            let t = Transition {
                obs: obs.clone(),
                action_continuous: continuous.values.clone(),
                action_discrete: action,
                reward: out.reward,
                next_obs: out.obs.clone(),
                done: out.terminated,
                episode_id: episode_counter as usize,
                is_demo: false,
            };
            episode_buf.push(t.clone());
            runner.buffer.push(t);
            obs = out.obs;
            if out.terminated || out.truncated {
                if out.terminated && bc_online_success && !runner.config.bc_only {
                    runner.dataset.append_episode(std::mem::take(&mut episode_buf));
                } else {
                    episode_buf.clear();
                }
                episode_counter += 1;
                obs = env.reset(derive_seed(config.seed, 0xEB0 ^ episode_counter));
            }
            for _ in 0..config.grad_steps_per_env_step {
                runner.gradient_step()?;
            }
            if step % config.eval_every == 0 || step == total_steps {
                final_eval = runner.log_row(&mut writer, step, &started)?;
            }
        }
    } else {
        for step in 1..=total_steps {
            runner.gradient_step()?;
            if step % config.eval_every == 0 || step == total_steps {
                final_eval = runner.log_row(&mut writer, step, &started)?;
            }
        }
    }
    writer.flush()?;

    let checkpoint_path = out_dir.join("checkpoint.bin");
    crate::autodiff::save_checkpoint(
        &checkpoint_path,
        &[("online", &runner.model.params), ("target", &runner.model.targets)],
    )?;
    std::fs::write(out_dir.join("config_resolved.txt"), config.to_file_string())?;

    Ok(TrainOutcome {
        final_eval,
        metrics_path,
        checkpoint_path,
        steps: total_steps,
    })
}

/// Rebuild a model from a resolved config and a checkpoint.
pub fn load_model(config: &TrainConfig, checkpoint: &Path) -> Result<ArsqModel> {
    let env = make_env(&config.env)?;
    let model_cfg = model_config_for(config, env.as_ref())?;
    let mut model = ArsqModel::new(&model_cfg, derive_seed(config.seed, 0x1217))?;
    let entries = crate::autodiff::load_checkpoint(checkpoint)?;
    restore_section(&entries, "online", &mut model.params)?;
    restore_section(&entries, "target", &mut model.targets)?;
    Ok(model)
}

/// Evaluate a stored checkpoint with greedy rollouts.
pub fn evaluate_checkpoint(
    config: &TrainConfig,
    checkpoint: &Path,
    env_name: Option<&str>,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    let model = load_model(config, checkpoint)?;
    let mut env = make_env(env_name.unwrap_or(&config.env))?;
    if env.spec().obs_width != model.layout.obs_width
        || env.spec().action_dims != model.layout.spec.dims
    {
        return Err(ArsqError::InvalidConfig(format!(
            "env '{}' does not match the checkpoint's observation/action widths",
            env_name.unwrap_or(&config.env)
        )));
    }
    evaluate_model(&model, env.as_mut(), n_episodes, seed)
}
