//! Native desk-scale environments: one-step mode-landscape tasks and a
//! multi-step point-mass task, plus demonstration generators of controllable
//! quality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::codec::{encode, ActionSpec, ContinuousAction};
use crate::error::{ArsqError, Result};
use crate::replay::{OfflineDataset, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    Dense,
    Sparse,
}

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub obs_width: usize,
    pub action_dims: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
    pub reward_kind: RewardKind,
}

impl EnvSpec {
    /// Build the discretization lattice for this environment's bounds.
    pub fn action_spec(&self, bins_per_level: usize, levels: usize) -> Result<ActionSpec> {
        ActionSpec::new(
            self.action_low.clone(),
            self.action_high.clone(),
            bins_per_level,
            levels,
        )
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    /// Scripted optimal controller, the source of expert demonstrations.
    fn expert_action(&self, obs: &[f64]) -> Vec<f64>;
    /// Mode geometry for one-step landscape tasks, if any.
    fn landscape(&self) -> Option<&ModeLandscape> {
        None
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Mode {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub sigma: f64,
}

/// Sum-of-Gaussians reward surface over the action square.
#[derive(Debug, Clone)]
pub struct ModeLandscape {
    pub modes: Vec<Mode>,
}

impl ModeLandscape {
    pub fn reward(&self, a: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let dx = a[0] - m.center[0];
                let dy = a[1] - m.center[1];
                m.amplitude * (-(dx * dx + dy * dy) / (2.0 * m.sigma * m.sigma)).exp()
            })
            .sum()
    }

    /// The motivating one-step task: one optimal, one suboptimal and one
    /// negative mode.
    pub fn motivating() -> Self {
        Self {
            modes: vec![
                Mode { center: [0.6, 0.6], amplitude: 1.0, sigma: 0.15 },
                Mode { center: [-0.6, 0.6], amplitude: 0.1, sigma: 0.15 },
                Mode { center: [0.6, -0.6], amplitude: -1.0, sigma: 0.15 },
            ],
        }
    }

    /// The five-mode error-analysis surface: one optimal, two suboptimal and
    /// two negative modes, placed so that per-dimension marginals carry no
    /// information about the sign of a mode (sub and negative modes share
    /// rows and columns).
    pub fn five_mode() -> Self {
        Self {
            modes: vec![
                Mode { center: [0.0, 0.0], amplitude: 1.0, sigma: 0.35 },
                Mode { center: [-0.65, 0.65], amplitude: 0.4, sigma: 0.35 },
                Mode { center: [0.65, -0.65], amplitude: 0.4, sigma: 0.35 },
                Mode { center: [-0.65, -0.65], amplitude: -1.0, sigma: 0.35 },
                Mode { center: [0.65, 0.65], amplitude: -1.0, sigma: 0.35 },
            ],
        }
    }

    pub fn optimal_mode(&self) -> &Mode {
        self.modes
            .iter()
            .max_by(|a, b| a.amplitude.partial_cmp(&b.amplitude).unwrap())
            .expect("landscape has modes")
    }

    pub fn amplitude_bound(&self) -> f64 {
        self.modes.iter().map(|m| m.amplitude.abs()).sum()
    }
}

/// Evaluate the landscape on a uniform grid over the action square,
/// endpoints included; `resolution = 2` yields the four corners. Rows are
/// emitted row-major, first axis outer.
pub fn landscape_ground_truth(
    landscape: &ModeLandscape,
    resolution: usize,
) -> Result<Vec<(f64, f64, f64)>> {
    if resolution < 2 {
        return Err(ArsqError::InvalidConfig("grid resolution must be >= 2".into()));
    }
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (resolution - 1) as f64;
    let mut grid = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let (a1, a2) = (coord(i), coord(j));
            grid.push((a1, a2, landscape.reward(&[a1, a2])));
        }
    }
    Ok(grid)
}

/// Write a Q/reward grid as `a1,a2,q` CSV rows.
pub fn write_grid_csv(path: &std::path::Path, grid: &[(f64, f64, f64)]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "a1,a2,q")?;
    for (a1, a2, q) in grid {
        writeln!(w, "{a1:.6},{a2:.6},{q:.6}")?;
    }
    Ok(())
}

/// Single-decision environment: constant zero observation, the landscape
/// value as reward, termination after one step.
pub struct OneStepEnv {
    spec: EnvSpec,
    landscape: ModeLandscape,
    done: bool,
}

impl OneStepEnv {
    pub fn new(landscape: ModeLandscape) -> Self {
        Self {
            spec: EnvSpec {
                obs_width: 2,
                action_dims: 2,
                action_low: vec![-1.0, -1.0],
                action_high: vec![1.0, 1.0],
                horizon: 1,
                reward_kind: RewardKind::Dense,
            },
            landscape,
            done: true,
        }
    }
}

impl Environment for OneStepEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.done = false;
        vec![0.0, 0.0]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(ArsqError::StepAfterDone);
        }
        self.done = true;
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        Ok(StepOutcome {
            obs: vec![0.0, 0.0],
            reward: self.landscape.reward(&a),
            terminated: true,
            truncated: false,
        })
    }

    fn expert_action(&self, _obs: &[f64]) -> Vec<f64> {
        self.landscape.optimal_mode().center.to_vec()
    }

    fn landscape(&self) -> Option<&ModeLandscape> {
        Some(&self.landscape)
    }
}

const POINT_MASS_GAIN: f64 = 0.05;
const POINT_MASS_GOAL_RADIUS: f64 = 0.1;
const POINT_MASS_HORIZON: usize = 100;
/// spawn boxes: start in [-0.9, -0.3]^2, goal in [0.3, 0.9]^2
const POINT_MASS_START: (f64, f64) = (-0.9, -0.3);
const POINT_MASS_GOAL: (f64, f64) = (0.3, 0.9);

/// Velocity-command navigation to a goal: `pos += k * a`, dense reward
/// `-dist` per step with a terminal bonus, or a sparse success-only reward.
pub struct PointMassEnv {
    spec: EnvSpec,
    pos: [f64; 2],
    goal: [f64; 2],
    steps: usize,
    done: bool,
    sparse: bool,
}

impl PointMassEnv {
    pub fn new(sparse: bool) -> Self {
        Self {
            spec: EnvSpec {
                obs_width: 4,
                action_dims: 2,
                action_low: vec![-1.0, -1.0],
                action_high: vec![1.0, 1.0],
                horizon: POINT_MASS_HORIZON,
                reward_kind: if sparse { RewardKind::Sparse } else { RewardKind::Dense },
            },
            pos: [0.0, 0.0],
            goal: [0.0, 0.0],
            steps: 0,
            done: true,
            sparse,
        }
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.goal[0], self.goal[1]]
    }

    fn dist(&self) -> f64 {
        let dx = self.pos[0] - self.goal[0];
        let dy = self.pos[1] - self.goal[1];
        (dx * dx + dy * dy).sqrt()
    }
}

impl Environment for PointMassEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        self.pos = [
            rng.gen_range(POINT_MASS_START.0..POINT_MASS_START.1),
            rng.gen_range(POINT_MASS_START.0..POINT_MASS_START.1),
        ];
        self.goal = [
            rng.gen_range(POINT_MASS_GOAL.0..POINT_MASS_GOAL.1),
            rng.gen_range(POINT_MASS_GOAL.0..POINT_MASS_GOAL.1),
        ];
        self.steps = 0;
        self.done = false;
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(ArsqError::StepAfterDone);
        }
        let ax = action[0].clamp(-1.0, 1.0);
        let ay = action[1].clamp(-1.0, 1.0);
        self.pos[0] = (self.pos[0] + POINT_MASS_GAIN * ax).clamp(-1.0, 1.0);
        self.pos[1] = (self.pos[1] + POINT_MASS_GAIN * ay).clamp(-1.0, 1.0);
        self.steps += 1;
        let d = self.dist();
        let terminated = d <= POINT_MASS_GOAL_RADIUS;
        let truncated = !terminated && self.steps >= self.spec.horizon;
        let reward = if self.sparse {
            if terminated { 1.0 } else { 0.0 }
        } else {
            -d + if terminated { 1.0 } else { 0.0 }
        };
        self.done = terminated || truncated;
        Ok(StepOutcome {
            obs: self.obs(),
            reward,
            terminated,
            truncated,
        })
    }

    fn expert_action(&self, obs: &[f64]) -> Vec<f64> {
        let dx = obs[2] - obs[0];
        let dy = obs[3] - obs[1];
        let n = (dx * dx + dy * dy).sqrt();
        if n <= POINT_MASS_GAIN {
            // land exactly on the goal
            vec![dx / POINT_MASS_GAIN, dy / POINT_MASS_GAIN]
        } else {
            vec![dx / n, dy / n]
        }
    }
}

/// Environment registry used by the CLI and the config file.
pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "one-step-toy" => Ok(Box::new(OneStepEnv::new(ModeLandscape::motivating()))),
        "one-step-landscape" => Ok(Box::new(OneStepEnv::new(ModeLandscape::five_mode()))),
        "point-mass" => Ok(Box::new(PointMassEnv::new(false))),
        "point-mass-sparse" => Ok(Box::new(PointMassEnv::new(true))),
        other => Err(ArsqError::InvalidConfig(format!("unknown env '{other}'"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoKind {
    Expert,
    /// expert with per-axis noise (sigma 0.3) and 20% uniform random actions
    Medium,
    Noisy,
    /// one-step envs only: samples concentrated near the mode centers with
    /// frequencies 10% optimal / 30% suboptimal / 60% negative
    ModeMix,
}

impl DemoKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(Self::Expert),
            "medium" => Ok(Self::Medium),
            "noisy" => Ok(Self::Noisy),
            "mode_mix" | "mode-mix" => Ok(Self::ModeMix),
            other => Err(ArsqError::InvalidConfig(format!("unknown demo kind '{other}'"))),
        }
    }
}

const MODE_MIX_FREQ: (f64, f64, f64) = (0.10, 0.30, 0.60);
const MODE_MIX_JITTER: f64 = 0.05;

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream aligned
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn mode_mix_action(landscape: &ModeLandscape, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let optimal = landscape.optimal_mode();
    let suboptimal: Vec<&Mode> = landscape
        .modes
        .iter()
        .filter(|m| m.amplitude >= 0.0 && !std::ptr::eq(*m, optimal))
        .collect();
    let negative: Vec<&Mode> = landscape.modes.iter().filter(|m| m.amplitude < 0.0).collect();
    let u: f64 = rng.gen();
    let group: &[&Mode] = if u < MODE_MIX_FREQ.0 || (suboptimal.is_empty() && negative.is_empty()) {
        std::slice::from_ref(&optimal)
    } else if u < MODE_MIX_FREQ.0 + MODE_MIX_FREQ.1 && !suboptimal.is_empty() {
        &suboptimal
    } else {
        &negative
    };
    let mode = group[rng.gen_range(0..group.len())];
    vec![
        (mode.center[0] + MODE_MIX_JITTER * standard_normal(rng)).clamp(-1.0, 1.0),
        (mode.center[1] + MODE_MIX_JITTER * standard_normal(rng)).clamp(-1.0, 1.0),
    ]
}

/// Roll out `n_episodes` with a scripted policy of the requested quality and
/// return them as a demonstration dataset, actions discretized through
/// `spec`.
pub fn generate_demos(
    env: &mut dyn Environment,
    spec: &ActionSpec,
    kind: DemoKind,
    n_episodes: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n_episodes == 0 {
        return Err(ArsqError::InvalidConfig("n_episodes must be >= 1".into()));
    }
    if kind == DemoKind::ModeMix && env.landscape().is_none() {
        return Err(ArsqError::InvalidConfig(
            "mode_mix demonstrations require a one-step landscape env".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut transitions = Vec::new();
    for episode in 0..n_episodes {
        let mut obs = env.reset(seed.wrapping_add(1).wrapping_mul(1_000_003).wrapping_add(episode as u64));
        loop {
            let raw = match kind {
                DemoKind::Expert => env.expert_action(&obs),
                DemoKind::Medium => {
                    if rng.gen_bool(0.2) {
                        (0..env.spec().action_dims)
                            .map(|d| {
                                rng.gen_range(env.spec().action_low[d]..env.spec().action_high[d])
                            })
                            .collect()
                    } else {
                        env.expert_action(&obs)
                            .iter()
                            .map(|a| a + 0.3 * standard_normal(&mut rng))
                            .collect()
                    }
                }
                DemoKind::Noisy => (0..env.spec().action_dims)
                    .map(|d| rng.gen_range(env.spec().action_low[d]..env.spec().action_high[d]))
                    .collect(),
                DemoKind::ModeMix => mode_mix_action(env.landscape().unwrap(), &mut rng),
            };
            let executed: Vec<f64> = raw
                .iter()
                .enumerate()
                .map(|(d, &a)| a.clamp(env.spec().action_low[d], env.spec().action_high[d]))
                .collect();
            let out = env.step(&executed)?;
            transitions.push(Transition {
                obs: obs.clone(),
                action_continuous: executed.clone(),
                action_discrete: encode(spec, &ContinuousAction::new(executed))?,
                reward: out.reward,
                next_obs: out.obs.clone(),
                done: out.terminated,
                episode_id: episode,
                is_demo: true,
            });
            obs = out.obs;
            if out.terminated || out.truncated {
                break;
            }
        }
    }
    OfflineDataset::from_transitions(transitions)
}
