//! Desk-scale reproductions of the two one-step case studies: the tabular
//! motivating example (auto-regressive vs independent decomposition on a
//! mode-mixture dataset) and the Q-prediction-error comparison of three
//! function-approximation variants on the five-mode landscape.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{Activation, DenseNetworkConfig, Mlp, OptimizerState, ParamSet, Tape};
use crate::codec::{encode, ActionSpec, ContinuousAction};
use crate::envs::{
    generate_demos, landscape_ground_truth, make_env, write_grid_csv, DemoKind, ModeLandscape,
};
use crate::error::{ArsqError, Result};
use crate::losses::rl_pair_loss;
use crate::model::{AdvantageNetwork, ConditioningOrder, SlotLayout};
use crate::oracle::{q_landscape_error, TabularArsq, TabularIndependent};
use crate::replay::OfflineDataset;

const TOY_SAMPLES: usize = 1000;
const TOY_ALPHA: f64 = 0.05;
const TOY_LR: f64 = 0.1;
const TOY_STEPS: usize = 20_000;

#[derive(Debug, Clone)]
pub struct ToyVerdict {
    pub optimal_cell: Vec<usize>,
    pub arsq_cell: Vec<usize>,
    pub independent_cell: Vec<usize>,
    pub arsq_is_optimal: bool,
    pub independent_is_optimal: bool,
}

fn one_step_samples(spec: &ActionSpec, ds: &OfflineDataset) -> Result<Vec<(usize, Vec<usize>, f64)>> {
    ds.transitions
        .iter()
        .map(|t| {
            let digits = (0..spec.dims)
                .map(|d| t.action_discrete.fine_index(spec, d))
                .collect::<Result<Vec<usize>>>()?;
            Ok((0usize, digits, t.reward))
        })
        .collect()
}

/// Fit the tabular auto-regressive and independent models on a mode-mixture
/// dataset (two bins per dimension) and report each greedy cell against the
/// optimal-mode cell.
pub fn case_study_toy(out_dir: &Path, seed: u64) -> Result<ToyVerdict> {
    std::fs::create_dir_all(out_dir)?;
    let mut env = make_env("one-step-toy")?;
    let spec = env.spec().action_spec(2, 1)?;
    let dataset = generate_demos(env.as_mut(), &spec, DemoKind::ModeMix, TOY_SAMPLES, seed)?;
    let samples = one_step_samples(&spec, &dataset)?;

    let arsq = TabularArsq::fit_dataset(&samples, 1, 2, 2, TOY_ALPHA, TOY_LR, TOY_STEPS)?;
    let independent = TabularIndependent::fit_dataset(&samples, 1, 2, 2, TOY_LR, TOY_STEPS)?;

    let landscape = env.landscape().expect("one-step env");
    let optimal_center = landscape.optimal_mode().center;
    let optimal_cell: Vec<usize> = (0..2)
        .map(|d| spec.fine_index(d, optimal_center[d]))
        .collect();
    let arsq_cell = arsq.greedy(0);
    let independent_cell = independent.greedy(0);

    // 2x2 Q grids at the cell centers
    let grid_of = |q: &dyn Fn(&[usize]) -> f64| -> Vec<(f64, f64, f64)> {
        let mut rows = Vec::with_capacity(4);
        for i in 0..2 {
            for j in 0..2 {
                rows.push((spec.fine_center(0, i), spec.fine_center(1, j), q(&[i, j])));
            }
        }
        rows
    };
    write_grid_csv(&out_dir.join("toy_q_arsq.csv"), &grid_of(&|d| arsq.joint_q(0, d)))?;
    write_grid_csv(
        &out_dir.join("toy_q_independent.csv"),
        &grid_of(&|d| independent.joint_estimate(0, d)),
    )?;

    let verdict = ToyVerdict {
        arsq_is_optimal: arsq_cell == optimal_cell,
        independent_is_optimal: independent_cell == optimal_cell,
        optimal_cell,
        arsq_cell,
        independent_cell,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(out_dir.join("toy_verdict.csv"))?);
    writeln!(w, "method,cell_d1,cell_d2,optimal_d1,optimal_d2,is_optimal")?;
    writeln!(
        w,
        "arsq,{},{},{},{},{}",
        verdict.arsq_cell[0],
        verdict.arsq_cell[1],
        verdict.optimal_cell[0],
        verdict.optimal_cell[1],
        verdict.arsq_is_optimal
    )?;
    writeln!(
        w,
        "independent,{},{},{},{},{}",
        verdict.independent_cell[0],
        verdict.independent_cell[1],
        verdict.optimal_cell[0],
        verdict.optimal_cell[1],
        verdict.independent_is_optimal
    )?;
    Ok(verdict)
}

const LANDSCAPE_TRAIN_SAMPLES: usize = 2000;
const LANDSCAPE_EVAL_SAMPLES: usize = 1000;
const LANDSCAPE_BINS: usize = 5;
const LANDSCAPE_LEVELS: usize = 2;
const LANDSCAPE_ALPHA: f64 = 0.05;
const LANDSCAPE_WIDTHS: [usize; 2] = [48, 48];
const LANDSCAPE_BATCH: usize = 128;
const LANDSCAPE_STEPS: usize = 6000;
const LANDSCAPE_LR: f64 = 1e-3;
const LANDSCAPE_GRID: usize = 50;

#[derive(Debug, Clone)]
pub struct LandscapeRow {
    pub method: &'static str,
    pub seed: u64,
    pub mae: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LandscapeSummary {
    pub rows: Vec<LandscapeRow>,
    pub mean_independent: f64,
    pub mean_no_cf: f64,
    pub mean_arsq: f64,
}

fn uniform_actions(n: usize, rng: &mut ChaCha12Rng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect()
}

/// Independent-decomposition regressor: one trunk over the constant
/// observation with a `B^L`-wide head per dimension, each head regressed
/// toward the reward on its own; predictions combine as the per-dimension
/// mean.
struct IndependentNet {
    params: ParamSet,
    trunk: Mlp,
    heads: Vec<Mlp>,
    spec: ActionSpec,
}

impl IndependentNet {
    fn new(spec: &ActionSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let feature = *LANDSCAPE_WIDTHS.last().unwrap();
        let trunk = Mlp::new(
            &mut params,
            "trunk",
            DenseNetworkConfig {
                input_width: 2,
                hidden_widths: LANDSCAPE_WIDTHS[..LANDSCAPE_WIDTHS.len() - 1].to_vec(),
                output_width: feature,
                activation: Activation::Tanh,
                use_bias: true,
                activate_output: true,
                zero_init_output: false,
            },
            &mut rng,
        )?;
        let heads = (0..spec.dims)
            .map(|d| {
                Mlp::new(
                    &mut params,
                    &format!("q/d{d}"),
                    DenseNetworkConfig {
                        input_width: feature,
                        hidden_widths: vec![feature],
                        output_width: spec.fine_bins(),
                        activation: Activation::Tanh,
                        use_bias: true,
                        activate_output: false,
                        zero_init_output: true,
                    },
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            trunk,
            heads,
            spec: spec.clone(),
        })
    }

    fn fit(&mut self, data: &[([f64; 2], f64)]) -> Result<()> {
        let mut opt = OptimizerState::new(&self.params, LANDSCAPE_LR, 0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(0x1DEE);
        for step in 0..LANDSCAPE_STEPS {
            let mut tape = Tape::new(&self.params);
            let mut total: Option<usize> = None;
            for _ in 0..LANDSCAPE_BATCH {
                let (a, r) = data[rng.gen_range(0..data.len())];
                let x = tape.constant(vec![0.0, 0.0]);
                let feat = self.trunk.forward(&mut tape, &self.params, x)?;
                for (d, head) in self.heads.iter().enumerate() {
                    let q = head.forward(&mut tape, &self.params, feat)?;
                    let bin = self.spec.fine_index(d, a[d]);
                    let picked = tape.gather(q, bin)?;
                    let target = tape.constant(vec![r]);
                    let resid = tape.sub(picked, target)?;
                    let sq = tape.mul(resid, resid)?;
                    let half = tape.scale(sq, 0.5 / LANDSCAPE_BATCH as f64);
                    total = Some(match total {
                        Some(t) => tape.add(t, half)?,
                        None => half,
                    });
                }
            }
            let node = total.expect("nonempty batch");
            if !tape.scalar(node).is_finite() {
                return Err(ArsqError::Divergence(format!(
                    "independent fit diverged at step {step}"
                )));
            }
            tape.backward(node, &mut self.params)?;
            opt.step(&mut self.params)?;
        }
        Ok(())
    }

    fn predict(&self, a: &[f64]) -> Result<f64> {
        let feat = self.trunk.eval(&self.params, &[0.0, 0.0])?;
        let mut total = 0.0;
        for (d, head) in self.heads.iter().enumerate() {
            let q = head.eval(&self.params, &feat)?;
            total += q[self.spec.fine_index(d, a[d])];
        }
        Ok(total / self.spec.dims as f64)
    }
}

/// Auto-regressive regressor used by the landscape study: one advantage
/// network plus a scalar value head, trained on `0.5 (V + sum A - r)^2`.
struct ArsqRegressor {
    params: ParamSet,
    adv: AdvantageNetwork,
    value: Mlp,
    spec: ActionSpec,
}

impl ArsqRegressor {
    fn new(spec: &ActionSpec, order: ConditioningOrder, seed: u64) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let layout = SlotLayout::new(spec.clone(), order, 2);
        let adv = AdvantageNetwork::new(
            &mut params,
            "theta",
            layout,
            LANDSCAPE_ALPHA,
            &LANDSCAPE_WIDTHS,
            Activation::Tanh,
            true,
            &mut rng,
        )?;
        let value = Mlp::new(
            &mut params,
            "phi",
            DenseNetworkConfig {
                input_width: 2,
                hidden_widths: LANDSCAPE_WIDTHS.to_vec(),
                output_width: 1,
                activation: Activation::Tanh,
                use_bias: true,
                activate_output: false,
                zero_init_output: true,
            },
            &mut rng,
        )?;
        Ok(Self {
            params,
            adv,
            value,
            spec: spec.clone(),
        })
    }

    fn fit(&mut self, data: &[([f64; 2], f64)]) -> Result<()> {
        let mut opt = OptimizerState::new(&self.params, LANDSCAPE_LR, 0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(0xA55);
        let state = [0.0, 0.0];
        for step in 0..LANDSCAPE_STEPS {
            let mut tape = Tape::new(&self.params);
            let mut total: Option<usize> = None;
            for _ in 0..LANDSCAPE_BATCH {
                let (a, r) = data[rng.gen_range(0..data.len())];
                let action = encode(&self.spec, &ContinuousAction::new(a.to_vec()))?;
                let adv_sum =
                    self.adv
                        .joint_advantage_graph(&mut tape, &self.params, &state, &action)?;
                let s = tape.constant(state.to_vec());
                let v = self.value.forward(&mut tape, &self.params, s)?;
                let loss = rl_pair_loss(&mut tape, v, adv_sum, r)?;
                let scaled = tape.scale(loss, 1.0 / LANDSCAPE_BATCH as f64);
                total = Some(match total {
                    Some(t) => tape.add(t, scaled)?,
                    None => scaled,
                });
            }
            let node = total.expect("nonempty batch");
            if !tape.scalar(node).is_finite() {
                return Err(ArsqError::Divergence(format!(
                    "regressor diverged at step {step}"
                )));
            }
            tape.backward(node, &mut self.params)?;
            opt.step(&mut self.params)?;
        }
        Ok(())
    }

    fn predict(&self, a: &[f64]) -> Result<f64> {
        let state = [0.0, 0.0];
        let action = encode(&self.spec, &ContinuousAction::new(a.to_vec()))?;
        let adv_sum = self.adv.joint_advantage(&self.params, &state, &action)?;
        let v = self.value.eval(&self.params, &state)?[0];
        Ok(v + adv_sum)
    }
}

fn write_prediction_grid(
    path: &Path,
    predict: &dyn Fn(&[f64]) -> f64,
    resolution: usize,
) -> Result<()> {
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (resolution - 1) as f64;
    let mut grid = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let a = [coord(i), coord(j)];
            grid.push((a[0], a[1], predict(&a)));
        }
    }
    write_grid_csv(path, &grid)
}

/// Train the three decomposition variants per seed, score each against the
/// analytic landscape on fresh samples, and write the MAE table plus the
/// predicted grids (for the first seed).
pub fn case_study_landscape(out_dir: &Path, seeds: &[u64]) -> Result<LandscapeSummary> {
    if seeds.is_empty() {
        return Err(ArsqError::InvalidConfig("need at least one seed".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let landscape = ModeLandscape::five_mode();
    let spec = ActionSpec::symmetric(2, 1.0, LANDSCAPE_BINS, LANDSCAPE_LEVELS)?;
    let flat_spec = spec.clone();

    let mut summary = LandscapeSummary::default();
    let mut failures: Vec<String> = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let train_actions = uniform_actions(LANDSCAPE_TRAIN_SAMPLES, &mut rng);
        let data: Vec<([f64; 2], f64)> = train_actions
            .into_iter()
            .map(|a| (a, landscape.reward(&a)))
            .collect();
        let eval_seed = seed ^ 0x5EED;

        // each variant is scored even if another diverges
        let mut run = |method: &'static str, predict: Result<Box<dyn Fn(&[f64]) -> f64>>| {
            match predict {
                Ok(p) => {
                    let mae =
                        q_landscape_error(p.as_ref(), &landscape, LANDSCAPE_EVAL_SAMPLES, eval_seed);
                    summary.rows.push(LandscapeRow { method, seed, mae });
                    if i == 0 {
                        let _ = write_prediction_grid(
                            &out_dir.join(format!("landscape_q_{method}.csv")),
                            p.as_ref(),
                            LANDSCAPE_GRID,
                        );
                    }
                }
                Err(e) => failures.push(format!("{method} (seed {seed}): {e}")),
            }
        };

        let independent = IndependentNet::new(&flat_spec, seed ^ 0x11).and_then(|mut net| {
            net.fit(&data)?;
            Ok(Box::new(move |a: &[f64]| net.predict(a).unwrap_or(f64::NAN))
                as Box<dyn Fn(&[f64]) -> f64>)
        });
        run("independent", independent);

        let no_cf = ArsqRegressor::new(&flat_spec, ConditioningOrder::NoCf, seed ^ 0x22)
            .and_then(|mut net| {
                net.fit(&data)?;
                Ok(Box::new(move |a: &[f64]| net.predict(a).unwrap_or(f64::NAN))
                    as Box<dyn Fn(&[f64]) -> f64>)
            });
        run("no_cf", no_cf);

        let arsq = ArsqRegressor::new(&spec, ConditioningOrder::CoarseOuterDimInner, seed ^ 0x33)
            .and_then(|mut net| {
                net.fit(&data)?;
                Ok(Box::new(move |a: &[f64]| net.predict(a).unwrap_or(f64::NAN))
                    as Box<dyn Fn(&[f64]) -> f64>)
            });
        run("arsq", arsq);
    }

    let mean_of = |method: &str| {
        let xs: Vec<f64> = summary
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.mae)
            .collect();
        if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    summary.mean_independent = mean_of("independent");
    summary.mean_no_cf = mean_of("no_cf");
    summary.mean_arsq = mean_of("arsq");

    let mut w = std::io::BufWriter::new(std::fs::File::create(out_dir.join("landscape_mae.csv"))?);
    writeln!(w, "method,seed,mae")?;
    for row in &summary.rows {
        writeln!(w, "{},{},{:.6}", row.method, row.seed, row.mae)?;
    }
    for f in &failures {
        writeln!(w, "# diverged: {f}")?;
    }
    write_grid_csv(
        &out_dir.join("landscape_truth.csv"),
        &landscape_ground_truth(&landscape, LANDSCAPE_GRID)?,
    )?;
    Ok(summary)
}
