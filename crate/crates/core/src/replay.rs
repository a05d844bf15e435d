//! Offline dataset ingestion (JSON-lines wire format), the replay buffer
//! seeded from it, uniform mini-batch sampling, and the demonstration
//! quality-ranking filter.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{encode, ActionSpec, ContinuousAction, DiscreteAction};
use crate::error::{ArsqError, Result};

/// One experience record. Continuous actions are discretized once at load
/// time; losses consume the discrete indices.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action_continuous: Vec<f64>,
    pub action_discrete: DiscreteAction,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub episode_id: usize,
    pub is_demo: bool,
}

/// JSON-lines schema: one object per line with keys
/// obs, action, reward, next_obs, done, episode.
#[derive(Debug, Serialize, Deserialize)]
struct WireTransition {
    obs: Vec<f64>,
    action: Vec<f64>,
    reward: f64,
    next_obs: Vec<f64>,
    done: bool,
    episode: u64,
}

/// An immutable demonstration set with contiguous episode boundaries.
#[derive(Debug, Clone, Default)]
pub struct OfflineDataset {
    pub transitions: Vec<Transition>,
    /// half-open index ranges, one per episode
    pub episodes: Vec<(usize, usize)>,
    /// how many loaded actions had to be clamped into bounds
    pub clamp_warnings: usize,
}

impl OfflineDataset {
    pub fn from_transitions(transitions: Vec<Transition>) -> Result<Self> {
        let episodes = index_episodes(&transitions)?;
        Ok(Self {
            transitions,
            episodes,
            clamp_warnings: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episode_return(&self, episode: usize) -> f64 {
        let (a, b) = self.episodes[episode];
        self.transitions[a..b].iter().map(|t| t.reward).sum()
    }

    /// Append all transitions of another episode (used to fold successful
    /// online trajectories into the behavior-cloning source).
    pub fn append_episode(&mut self, mut transitions: Vec<Transition>) {
        if transitions.is_empty() {
            return;
        }
        let id = self.episodes.len();
        let start = self.transitions.len();
        for t in &mut transitions {
            t.episode_id = id;
            t.is_demo = true;
        }
        self.transitions.extend(transitions);
        self.episodes.push((start, self.transitions.len()));
    }
}

fn index_episodes(transitions: &[Transition]) -> Result<Vec<(usize, usize)>> {
    let mut episodes: Vec<(usize, usize)> = Vec::new();
    let mut seen: Vec<usize> = Vec::new();
    let mut current: Option<usize> = None;
    for (i, t) in transitions.iter().enumerate() {
        if current != Some(t.episode_id) {
            if seen.contains(&t.episode_id) {
                return Err(ArsqError::MalformedDataset {
                    line: i + 1,
                    message: format!("episode id {} is not contiguous", t.episode_id),
                });
            }
            seen.push(t.episode_id);
            if let Some(last) = episodes.last_mut() {
                last.1 = i;
            }
            episodes.push((i, transitions.len()));
            current = Some(t.episode_id);
        }
    }
    Ok(episodes)
}

/// Parse a JSON-lines demonstration file, discretizing actions through the
/// codec. Malformed lines are reported with their line number; out-of-bounds
/// actions are clamped and counted.
pub fn load_dataset(path: &Path, spec: &ActionSpec, obs_width: usize) -> Result<OfflineDataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut transitions = Vec::new();
    let mut clamp_warnings = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireTransition =
            serde_json::from_str(&line).map_err(|e| ArsqError::MalformedDataset {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        if wire.obs.len() != obs_width || wire.next_obs.len() != obs_width {
            return Err(ArsqError::MalformedDataset {
                line: lineno + 1,
                message: format!(
                    "observation width {} does not match the environment ({obs_width})",
                    wire.obs.len()
                ),
            });
        }
        if wire.action.len() != spec.dims {
            return Err(ArsqError::MalformedDataset {
                line: lineno + 1,
                message: format!(
                    "action width {} does not match the action spec ({})",
                    wire.action.len(),
                    spec.dims
                ),
            });
        }
        let out_of_bounds = wire
            .action
            .iter()
            .enumerate()
            .any(|(d, &a)| a < spec.low[d] || a > spec.high[d]);
        if out_of_bounds {
            clamp_warnings += 1;
        }
        let action_discrete = encode(spec, &ContinuousAction::new(wire.action.clone()))?;
        transitions.push(Transition {
            obs: wire.obs,
            action_continuous: wire.action,
            action_discrete,
            reward: wire.reward,
            next_obs: wire.next_obs,
            done: wire.done,
            episode_id: wire.episode as usize,
            is_demo: true,
        });
    }
    let mut ds = OfflineDataset::from_transitions(transitions)?;
    ds.clamp_warnings = clamp_warnings;
    Ok(ds)
}

/// Write a dataset in the JSON-lines wire format.
pub fn write_dataset(path: &Path, dataset: &OfflineDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in &dataset.transitions {
        let wire = WireTransition {
            obs: t.obs.clone(),
            action: t.action_continuous.clone(),
            reward: t.reward,
            next_obs: t.next_obs.clone(),
            done: t.done,
            episode: t.episode_id as u64,
        };
        serde_json::to_writer(&mut w, &wire)
            .map_err(|e| ArsqError::InvalidConfig(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankSegment {
    Top,
    Middle,
    Bottom,
}

impl RankSegment {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(Self::Top),
            "middle" => Ok(Self::Middle),
            "bottom" => Ok(Self::Bottom),
            other => Err(ArsqError::InvalidConfig(format!(
                "unknown rank segment '{other}'"
            ))),
        }
    }
}

/// Rank episodes by return (descending, ties stable) and keep the requested
/// segment. The middle segment is the centered window around the median
/// rank. `fraction = 1.0` keeps everything.
pub fn rank_filter(
    dataset: &OfflineDataset,
    segment: RankSegment,
    fraction: f64,
) -> Result<OfflineDataset> {
    if dataset.is_empty() {
        return Err(ArsqError::EmptySource);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ArsqError::InvalidConfig(format!(
            "rank fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = dataset.n_episodes();
    let k = ((n as f64) * fraction).floor() as usize;
    if k == 0 {
        return Err(ArsqError::InvalidConfig(format!(
            "fraction {fraction} keeps zero of {n} episodes"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dataset
            .episode_return(b)
            .partial_cmp(&dataset.episode_return(a))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let selected: &[usize] = match segment {
        RankSegment::Top => &order[..k],
        RankSegment::Bottom => &order[n - k..],
        RankSegment::Middle => {
            let start = (n - k) / 2;
            &order[start..start + k]
        }
    };
    let mut sorted_selected = selected.to_vec();
    sorted_selected.sort_unstable();
    let mut transitions = Vec::new();
    for (new_id, &ep) in sorted_selected.iter().enumerate() {
        let (a, b) = dataset.episodes[ep];
        for t in &dataset.transitions[a..b] {
            let mut t = t.clone();
            t.episode_id = new_id;
            transitions.push(t);
        }
    }
    OfflineDataset::from_transitions(transitions)
}

/// Ring buffer over online experience with eviction-protected demonstration
/// entries: the seed demos stay put, online entries cycle FIFO.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    demos: Vec<Transition>,
    online: std::collections::VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            demos: Vec::new(),
            online: std::collections::VecDeque::new(),
            capacity,
        }
    }

    /// `R <- D`: a buffer seeded with the offline dataset.
    pub fn seeded_from(dataset: &OfflineDataset, capacity: usize) -> Self {
        let mut buf = Self::new(capacity);
        for t in &dataset.transitions {
            buf.push(t.clone());
        }
        buf
    }

    pub fn len(&self) -> usize {
        self.demos.len() + self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Append a transition; at capacity the oldest non-demo entry goes
    /// first, and demos are evicted only when nothing else remains.
    pub fn push(&mut self, t: Transition) {
        if self.len() >= self.capacity
            && self.online.pop_front().is_none()
            && !self.demos.is_empty()
        {
            self.demos.remove(0);
        }
        if t.is_demo {
            self.demos.push(t);
        } else {
            self.online.push_back(t);
        }
    }

    pub fn get(&self, idx: usize) -> &Transition {
        if idx < self.demos.len() {
            &self.demos[idx]
        } else {
            &self.online[idx - self.demos.len()]
        }
    }
}

/// Uniform-with-replacement sampling shared by the dataset and the buffer.
pub trait SampleSource {
    fn size(&self) -> usize;
    fn item(&self, idx: usize) -> &Transition;
}

impl SampleSource for OfflineDataset {
    fn size(&self) -> usize {
        self.len()
    }
    fn item(&self, idx: usize) -> &Transition {
        &self.transitions[idx]
    }
}

impl SampleSource for ReplayBuffer {
    fn size(&self) -> usize {
        self.len()
    }
    fn item(&self, idx: usize) -> &Transition {
        self.get(idx)
    }
}

pub fn sample<'a, S: SampleSource>(
    source: &'a S,
    batch_size: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<&'a Transition>> {
    if source.size() == 0 {
        return Err(ArsqError::EmptySource);
    }
    Ok((0..batch_size)
        .map(|_| source.item(rng.gen_range(0..source.size())))
        .collect())
}
