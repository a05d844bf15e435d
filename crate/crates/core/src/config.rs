//! Experiment configuration: a flat `key = value` text format with `#`
//! comments, one pair per line. Defaults target the desk-scale tasks;
//! temperature, target update rate, learning rate and margin follow the
//! state-input presets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::Activation;
use crate::error::{ArsqError, Result};
use crate::model::{ConditioningOrder, RolloutNet};
use crate::replay::RankSegment;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub env: String,
    pub bins_per_level: usize,
    pub levels: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// target update rate tau; targets move by `tau` toward the online
    /// params each step (EMA keep-rate rho = 1 - tau)
    pub tau: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub bc_margin: f64,
    pub bc_weight: f64,
    pub bc_variant: bool,
    pub conditioning: ConditioningOrder,
    pub backbone_widths: Vec<usize>,
    pub activation: Activation,
    pub use_bias: bool,
    pub rollout_net: RolloutNet,
    pub grad_steps_per_env_step: usize,
    pub total_env_steps: usize,
    /// gradient steps in the fully offline mode (total_env_steps = 0)
    pub offline_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub offline_data: Option<PathBuf>,
    pub demo_filter: Option<(RankSegment, f64)>,
    pub buffer_capacity: usize,
    /// train with the behavior-cloning term only (the BC baseline)
    pub bc_only: bool,
    /// fold successful online episodes into the BC source on sparse tasks
    pub bc_online_success: Option<bool>,
    /// write real wall-clock times into the metrics rows; off by default so
    /// identical seeds produce byte-identical metrics files
    pub timing_in_metrics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: "point-mass".into(),
            bins_per_level: 5,
            levels: 2,
            alpha: 0.01,
            gamma: 0.99,
            tau: 0.005,
            learning_rate: 3e-4,
            weight_decay: 0.0,
            batch_size: 32,
            bc_margin: -1.0,
            bc_weight: 1.0,
            bc_variant: false,
            conditioning: ConditioningOrder::CoarseOuterDimInner,
            backbone_widths: vec![32, 32],
            activation: Activation::Tanh,
            use_bias: true,
            rollout_net: RolloutNet::Current,
            grad_steps_per_env_step: 1,
            total_env_steps: 20_000,
            offline_steps: 5_000,
            eval_every: 1_000,
            eval_episodes: 10,
            seed: 1,
            offline_data: None,
            demo_filter: None,
            buffer_capacity: 1_000_000,
            bc_only: false,
            bc_online_success: None,
            timing_in_metrics: false,
        }
    }
}

impl TrainConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        let mut filter_segment: Option<RankSegment> = None;
        let mut filter_fraction: Option<f64> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ArsqError::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim(), &mut filter_segment, &mut filter_fraction)
                .map_err(|e| ArsqError::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        match (filter_segment, filter_fraction) {
            (Some(seg), Some(frac)) => cfg.demo_filter = Some((seg, frac)),
            (None, None) => {}
            _ => {
                return Err(ArsqError::InvalidConfig(
                    "demo_filter_segment and demo_filter_fraction must be set together".into(),
                ))
            }
        }
        Ok(cfg)
    }

    fn apply(
        &mut self,
        key: &str,
        value: &str,
        filter_segment: &mut Option<RankSegment>,
        filter_fraction: &mut Option<f64>,
    ) -> Result<()> {
        let bad =
            |what: &str| ArsqError::InvalidConfig(format!("bad value '{value}' for {what}"));
        match key {
            "env" => self.env = value.to_string(),
            "bins_per_level" => self.bins_per_level = value.parse().map_err(|_| bad(key))?,
            "levels" => self.levels = value.parse().map_err(|_| bad(key))?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad(key))?,
            "gamma" => self.gamma = value.parse().map_err(|_| bad(key))?,
            "tau" => self.tau = value.parse().map_err(|_| bad(key))?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad(key))?,
            "weight_decay" => self.weight_decay = value.parse().map_err(|_| bad(key))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key))?,
            "bc_margin" => self.bc_margin = value.parse().map_err(|_| bad(key))?,
            "bc_weight" => self.bc_weight = value.parse().map_err(|_| bad(key))?,
            "bc_variant" => self.bc_variant = parse_bool(value).ok_or_else(|| bad(key))?,
            "conditioning" => self.conditioning = ConditioningOrder::parse(value)?,
            "backbone_widths" => {
                self.backbone_widths = value
                    .split(',')
                    .map(|w| w.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(key))?;
            }
            "activation" => {
                self.activation = match value {
                    "tanh" => Activation::Tanh,
                    "silu_layernorm" => Activation::SiluLayerNorm,
                    _ => return Err(bad(key)),
                }
            }
            "use_bias" => self.use_bias = parse_bool(value).ok_or_else(|| bad(key))?,
            "rollout_net" => self.rollout_net = RolloutNet::parse(value)?,
            "grad_steps_per_env_step" => {
                self.grad_steps_per_env_step = value.parse().map_err(|_| bad(key))?
            }
            "total_env_steps" => self.total_env_steps = value.parse().map_err(|_| bad(key))?,
            "offline_steps" => self.offline_steps = value.parse().map_err(|_| bad(key))?,
            "eval_every" => self.eval_every = value.parse().map_err(|_| bad(key))?,
            "eval_episodes" => self.eval_episodes = value.parse().map_err(|_| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "offline_data" => {
                self.offline_data = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "demo_filter_segment" => *filter_segment = Some(RankSegment::parse(value)?),
            "demo_filter_fraction" => {
                *filter_fraction = Some(value.parse().map_err(|_| bad(key))?)
            }
            "buffer_capacity" => self.buffer_capacity = value.parse().map_err(|_| bad(key))?,
            "bc_only" => self.bc_only = parse_bool(value).ok_or_else(|| bad(key))?,
            "bc_online_success" => {
                self.bc_online_success = Some(parse_bool(value).ok_or_else(|| bad(key))?)
            }
            "timing_in_metrics" => {
                self.timing_in_metrics = parse_bool(value).ok_or_else(|| bad(key))?
            }
            other => {
                return Err(ArsqError::InvalidConfig(format!("unknown key '{other}'")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins_per_level < 2 {
            return Err(ArsqError::InvalidConfig("bins_per_level must be >= 2".into()));
        }
        if self.levels < 1 {
            return Err(ArsqError::InvalidConfig("levels must be >= 1".into()));
        }
        if self.alpha <= 0.0 {
            return Err(ArsqError::InvalidConfig("alpha must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ArsqError::InvalidConfig("gamma must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(ArsqError::InvalidConfig("tau must be in [0, 1]".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(ArsqError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(ArsqError::InvalidConfig("weight_decay must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(ArsqError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.bc_weight < 0.0 {
            return Err(ArsqError::InvalidConfig("bc_weight must be nonnegative".into()));
        }
        if self.backbone_widths.is_empty() || self.backbone_widths.contains(&0) {
            return Err(ArsqError::InvalidConfig(
                "backbone_widths must be nonempty and positive".into(),
            ));
        }
        if self.grad_steps_per_env_step == 0 {
            return Err(ArsqError::InvalidConfig(
                "grad_steps_per_env_step must be >= 1".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(ArsqError::InvalidConfig("eval_every must be >= 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(ArsqError::InvalidConfig("eval_episodes must be >= 1".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(ArsqError::InvalidConfig("buffer_capacity must be >= 1".into()));
        }
        if self.total_env_steps == 0 && self.offline_data.is_none() {
            return Err(ArsqError::InvalidConfig(
                "fully offline training (total_env_steps = 0) requires offline_data".into(),
            ));
        }
        if self.bc_only && self.offline_data.is_none() {
            return Err(ArsqError::InvalidConfig("bc_only requires offline_data".into()));
        }
        if self.bc_only && self.bc_weight == 0.0 {
            return Err(ArsqError::InvalidConfig(
                "bc_only with bc_weight = 0 leaves nothing to optimize".into(),
            ));
        }
        if let Some((_, frac)) = self.demo_filter {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(ArsqError::InvalidConfig(
                    "demo_filter_fraction must be in (0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Serialize every field in the same `key = value` format, suitable for
    /// re-reading with [`from_file`][Self::from_file].
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "env = {}", self.env);
        let _ = writeln!(s, "bins_per_level = {}", self.bins_per_level);
        let _ = writeln!(s, "levels = {}", self.levels);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "bc_margin = {}", self.bc_margin);
        let _ = writeln!(s, "bc_weight = {}", self.bc_weight);
        let _ = writeln!(s, "bc_variant = {}", self.bc_variant);
        let _ = writeln!(s, "conditioning = {}", self.conditioning.name());
        let widths: Vec<String> = self.backbone_widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "backbone_widths = {}", widths.join(","));
        let _ = writeln!(
            s,
            "activation = {}",
            match self.activation {
                Activation::Tanh => "tanh",
                Activation::SiluLayerNorm => "silu_layernorm",
            }
        );
        let _ = writeln!(s, "use_bias = {}", self.use_bias);
        let _ = writeln!(
            s,
            "rollout_net = {}",
            match self.rollout_net {
                RolloutNet::Current => "current",
                RolloutNet::Target => "target",
            }
        );
        let _ = writeln!(s, "grad_steps_per_env_step = {}", self.grad_steps_per_env_step);
        let _ = writeln!(s, "total_env_steps = {}", self.total_env_steps);
        let _ = writeln!(s, "offline_steps = {}", self.offline_steps);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "eval_episodes = {}", self.eval_episodes);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(p) = &self.offline_data {
            let _ = writeln!(s, "offline_data = {}", p.display());
        }
        if let Some((seg, frac)) = &self.demo_filter {
            let seg = match seg {
                RankSegment::Top => "top",
                RankSegment::Middle => "middle",
                RankSegment::Bottom => "bottom",
            };
            let _ = writeln!(s, "demo_filter_segment = {seg}");
            let _ = writeln!(s, "demo_filter_fraction = {frac}");
        }
        let _ = writeln!(s, "buffer_capacity = {}", self.buffer_capacity);
        let _ = writeln!(s, "bc_only = {}", self.bc_only);
        if let Some(b) = self.bc_online_success {
            let _ = writeln!(s, "bc_online_success = {b}");
        }
        let _ = writeln!(s, "timing_in_metrics = {}", self.timing_in_metrics);
        s
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trip_through_text() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = TrainConfig::default();
        cfg.env = "one-step-toy".into();
        cfg.backbone_widths = vec![16, 8];
        cfg.demo_filter = Some((RankSegment::Bottom, 0.3));
        cfg.offline_data = Some(PathBuf::from("/tmp/demos.jsonl"));
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, cfg.to_file_string()).unwrap();
        let back = TrainConfig::from_file(&path).unwrap();
        assert_eq!(back.env, "one-step-toy");
        assert_eq!(back.backbone_widths, vec![16, 8]);
        assert!(matches!(back.demo_filter, Some((RankSegment::Bottom, f)) if (f - 0.3).abs() < 1e-12));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "# header\n\nalpha = 0.02  # inline\n").unwrap();
        let cfg = TrainConfig::from_file(&path).unwrap();
        assert_eq!(cfg.alpha, 0.02);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "nonsense = 1\n").unwrap();
        assert!(TrainConfig::from_file(&path).is_err());
        std::fs::write(&path, "alpha = fast\n").unwrap();
        assert!(TrainConfig::from_file(&path).is_err());
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut cfg = TrainConfig::default();
        cfg.gamma = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.tau = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.total_env_steps = 0;
        assert!(cfg.validate().is_err(), "offline mode without data");
    }
}
