//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

mod common;

use std::path::Path;

use common::{numeric_grad, random_probe, rel_err};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use arsq_core::autodiff::{ema_update, OptimizerState, Tape};
use arsq_core::case_studies::{case_study_landscape, case_study_toy};
use arsq_core::codec::{decode, encode, ActionSpec, ContinuousAction};
use arsq_core::config::TrainConfig;
use arsq_core::envs::{generate_demos, make_env, DemoKind};
use arsq_core::losses::{bc_loss_graph, combined_loss_graph, rl_loss, td_target, LossConfig};
use arsq_core::model::Prefix;
use arsq_core::oracle::{soft_value_iteration, TabularArsq, TabularMdp};
use arsq_core::replay::{rank_filter, write_dataset, OfflineDataset, RankSegment, Transition};
use arsq_core::trainer::train;

fn report(criterion: usize, ok: bool, detail: &str) {
    println!(
        "[{}] criterion {criterion}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

/// Criterion 1: per-head normalization. Over 1000 random (params, state,
/// prefix, head) probes, `|sum_a exp(A(a)/alpha) - 1| < 1e-6`.
#[test]
fn criterion_01_normalization_invariant() {
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    let mut seed = 0u64;
    while probes < 1000 {
        let (model, state, _) = random_probe(31_000 + seed);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for _ in 0..25 {
            let slot_idx = rng.gen_range(0..model.layout.n_slots());
            let mut prefix = Prefix::empty(&model.layout);
            for j in 0..model.layout.n_slots() {
                if model.layout.visible(slot_idx, j) {
                    prefix
                        .set_slot(&model.layout, j, rng.gen_range(0..model.layout.head_width))
                        .unwrap();
                }
            }
            for adv in [&model.adv1, &model.adv2] {
                let a = adv
                    .head_advantages(&model.params, &state, &prefix, slot_idx)
                    .unwrap();
                let total: f64 = a.iter().map(|&x| (x / model.alpha).exp()).sum();
                worst = worst.max((total - 1.0).abs());
                probes += 1;
            }
        }
        seed += 1;
    }
    report(1, worst < 1e-6, &format!("max |sum exp(A/alpha) - 1| = {worst:.2e} over {probes} probes"));
}

/// Criterion 2: converged tabular decomposition matches brute-force soft
/// value iteration on the seeded 3-state / 2-dim / 3-bin MDP within 1e-3.
#[test]
fn criterion_02_decomposition_identity() {
    let mdp = TabularMdp::random(3, 2, 3, 42);
    let vi = soft_value_iteration(&mdp, 0.05, 0.9, 1e-12, 100_000).unwrap();
    let fit = TabularArsq::fit_mdp(&mdp, 0.05, 0.9, 0.1, 20_000).unwrap();
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_joint_actions() {
            let digits = mdp.digits(a);
            worst = worst.max((fit.advantage_sum(s, &digits) - (vi.q[s][a] - vi.v[s])).abs());
        }
    }
    report(2, worst < 1e-3, &format!("max |sum A - (Q - V)| = {worst:.2e}"));
}

/// Criterion 3: on the mode-mixture dataset the tabular auto-regressive
/// model's greedy action lands in the optimal-mode cell and the independent
/// decomposition's does not, for 3/3 seeds.
#[test]
fn criterion_03_motivating_example() {
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut details = Vec::new();
    for seed in [1u64, 2, 3] {
        let v = case_study_toy(&dir.path().join(format!("seed{seed}")), seed).unwrap();
        ok &= v.arsq_is_optimal && !v.independent_is_optimal;
        details.push(format!(
            "seed {seed}: arsq {:?} ({}), independent {:?} ({})",
            v.arsq_cell, v.arsq_is_optimal, v.independent_cell, v.independent_is_optimal
        ));
    }
    report(3, ok, &details.join("; "));
}

/// Criterion 4: landscape Q-error ordering independent > no_cf > arsq in the
/// mean and in at least 2 of 3 seeds, with MAE(independent) >= 10x MAE(arsq).
#[test]
fn criterion_04_landscape_error_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = [1u64, 2, 3];
    let summary = case_study_landscape(dir.path(), &seeds).unwrap();
    let mut per_seed_ok = 0;
    for &seed in &seeds {
        let get = |m: &str| {
            summary
                .rows
                .iter()
                .find(|r| r.method == m && r.seed == seed)
                .map(|r| r.mae)
                .unwrap_or(f64::NAN)
        };
        if get("independent") > get("no_cf") && get("no_cf") > get("arsq") {
            per_seed_ok += 1;
        }
    }
    let mean_ok = summary.mean_independent > summary.mean_no_cf
        && summary.mean_no_cf > summary.mean_arsq;
    let ratio = summary.mean_independent / summary.mean_arsq;
    let ok = mean_ok && per_seed_ok >= 2 && ratio >= 10.0;
    report(
        4,
        ok,
        &format!(
            "mean MAE independent {:.4} > no_cf {:.4} > arsq {:.4} ({} / 3 seeds ordered, ratio {:.1}x)",
            summary.mean_independent, summary.mean_no_cf, summary.mean_arsq, per_seed_ok, ratio
        ),
    );
}

/// Criterion 5: every loss gradient matches central finite differences with
/// relative error < 1e-4 over 100 random small-network probes.
#[test]
fn criterion_05_gradient_correctness() {
    let mut worst: f64 = 0.0;
    for seed in 0..25u64 {
        for kind in 0..4 {
            let (mut model, state, action) = random_probe(21_000 + seed * 7 + kind);
            let mut rng = ChaCha12Rng::seed_from_u64(seed * 4 + kind);
            let c_m = rng.gen_range(-2.0..-0.5);
            let gamma = 0.9;
            let y = td_target(&model, rng.gen_range(-1.0..1.0), false, &state, gamma).unwrap();
            let cfg = LossConfig {
                gamma,
                alpha: model.alpha,
                bc_margin: c_m,
                bc_weight: 1.0,
                bc_variant: kind == 2,
                bc_only: false,
            };
            let transition = Transition {
                obs: state.clone(),
                action_continuous: vec![0.0; model.layout.spec.dims],
                action_discrete: action.clone(),
                reward: rng.gen_range(-1.0..1.0),
                next_obs: state.iter().map(|v| v * 0.5).collect(),
                done: false,
                episode_id: 0,
                is_demo: true,
            };
            let mut tape = Tape::new(&model.params);
            let node = match kind {
                0 => arsq_core::losses::rl_loss_graph(&mut tape, &model, &state, &action, y)
                    .unwrap(),
                1 | 2 => bc_loss_graph(
                    &mut tape,
                    &model.adv1,
                    &model.params,
                    &state,
                    &action,
                    c_m,
                    kind == 2,
                )
                .unwrap(),
                _ => {
                    combined_loss_graph(&mut tape, &model, &[&transition], &[&transition], &cfg)
                        .unwrap()
                        .0
                }
            };
            let mut probed = model.clone();
            tape.backward(node, &mut probed.params).unwrap();
            model.params.clear_grads();
            let eval = |m: &arsq_core::model::ArsqModel| -> f64 {
                match kind {
                    0 => rl_loss(m, &state, &action, y).unwrap(),
                    1 => arsq_core::losses::bc_margin_loss(&m.adv1, &m.params, &state, &action, c_m)
                        .unwrap(),
                    2 => arsq_core::losses::bc_variant_loss(&m.adv1, &m.params, &state, &action, c_m)
                        .unwrap(),
                    _ => arsq_core::losses::combined_loss(m, &[&transition], &[&transition], &cfg)
                        .unwrap()
                        .total,
                }
            };
            for _ in 0..5 {
                let idx = rng.gen_range(0..model.params.len());
                let coord = rng.gen_range(0..model.params.get(idx).tensor.len());
                let analytic = probed
                    .params
                    .get(idx)
                    .tensor
                    .grad
                    .as_ref()
                    .map(|g| g[coord])
                    .unwrap_or(0.0);
                let fd = numeric_grad(&model, &eval, idx, coord);
                worst = worst.max(rel_err(analytic, fd));
            }
        }
    }
    report(5, worst < 1e-4, &format!("worst relative error {worst:.2e} over 100 probes"));
}

/// Criterion 6: exhaustive digit round-trip for B in {2,3,5,7}, L in
/// {1,2,3}, and quantization error at most half a fine bin on 10k random
/// continuous actions.
#[test]
fn criterion_06_discretization_round_trip() {
    for b in [2usize, 3, 5, 7] {
        for l in [1usize, 2, 3] {
            let spec = ActionSpec::symmetric(1, 1.0, b, l).unwrap();
            for k in 0..spec.fine_bins() {
                let digits = spec.level_decompose(k).unwrap();
                assert_eq!(spec.level_recompose(&digits).unwrap(), k, "B={b} L={l} k={k}");
            }
        }
    }
    let spec = ActionSpec::new(vec![-1.0, -2.5], vec![1.0, 0.5], 5, 2).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(66);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let a = ContinuousAction::new(vec![rng.gen_range(-1.4..1.4), rng.gen_range(-3.0..1.0)]);
        let c = decode(&spec, &encode(&spec, &a).unwrap()).unwrap();
        for d in 0..2 {
            let clamped = a.values[d].clamp(spec.low[d], spec.high[d]);
            let half = (spec.high[d] - spec.low[d]) / (2.0 * spec.fine_bins() as f64);
            worst = worst.max((c.values[d] - clamped).abs() - half);
        }
    }
    report(6, worst <= 1e-12, &format!("round-trip exact; worst excess quantization error {worst:.1e}"));
}

/// Criterion 7: EMA limit cases are exact and the TD target carries no
/// gradient into target parameters.
#[test]
fn criterion_07_ema_and_target_contracts() {
    // rho limit cases on a real model's parameter sets
    let (model, state, action) = random_probe(777);
    let mut frozen = model.targets.clone();
    ema_update(&mut frozen, &model.params, 1.0).unwrap();
    let mut copied = model.targets.clone();
    ema_update(&mut copied, &model.params, 0.0).unwrap();
    let mut exact = true;
    for idx in 0..model.params.len() {
        exact &= frozen.data(idx) == model.targets.data(idx);
        exact &= copied.data(idx) == model.params.data(idx);
    }

    // full gradient step: targets keep their values and receive no grads
    let mut m = model.clone();
    let before = m.targets.clone();
    let t = Transition {
        obs: state.clone(),
        action_continuous: vec![0.0; m.layout.spec.dims],
        action_discrete: action,
        reward: 0.3,
        next_obs: state,
        done: false,
        episode_id: 0,
        is_demo: true,
    };
    let cfg = LossConfig {
        gamma: 0.9,
        alpha: m.alpha,
        bc_margin: -1.0,
        bc_weight: 1.0,
        bc_variant: false,
        bc_only: false,
    };
    let mut tape = Tape::new(&m.params);
    let (node, _) = combined_loss_graph(&mut tape, &m, &[&t], &[&t], &cfg).unwrap();
    tape.backward(node, &mut m.params).unwrap();
    let mut opt = OptimizerState::new(&m.params, 1e-3, 0.0);
    opt.step(&mut m.params).unwrap();
    let mut untouched = true;
    for idx in 0..m.targets.len() {
        untouched &= m.targets.get(idx).tensor.grad.is_none();
        untouched &= m.targets.data(idx) == before.data(idx);
    }
    report(7, exact && untouched, "rho=1 freezes, rho=0 copies, targets gradient-free");
}

fn medium_demo_file(dir: &Path, episodes: usize, seed: u64) -> std::path::PathBuf {
    let mut env = make_env("point-mass").unwrap();
    let cfg = TrainConfig::default();
    let spec = env
        .spec()
        .action_spec(cfg.bins_per_level, cfg.levels)
        .unwrap();
    let demos = generate_demos(env.as_mut(), &spec, DemoKind::Medium, episodes, seed).unwrap();
    let path = dir.join(format!("medium_{episodes}_{seed}.jsonl"));
    write_dataset(&path, &demos).unwrap();
    path
}

/// Criterion 8: point-mass with 50 medium demos, default config, 20k env
/// steps, 3 seeds: mean final greedy success >= 0.8 and strictly above the
/// BC-only baseline trained on the same demonstrations.
#[test]
fn criterion_08_end_to_end_training() {
    let dir = tempfile::tempdir().unwrap();
    let demos = medium_demo_file(dir.path(), 50, 1001);
    let seeds = [11u64, 12, 13];
    let mut arsq_success = 0.0;
    let mut bc_success = 0.0;
    let mut details = Vec::new();
    for &seed in &seeds {
        let mut cfg = TrainConfig::default();
        cfg.offline_data = Some(demos.clone());
        cfg.seed = seed;
        let out = train(&cfg, &dir.path().join(format!("arsq{seed}"))).unwrap();
        arsq_success += out.final_eval.success_rate;

        let mut bc = TrainConfig::default();
        bc.offline_data = Some(demos.clone());
        bc.seed = seed;
        bc.bc_only = true;
        bc.total_env_steps = 0;
        bc.offline_steps = 5_000;
        let out = train(&bc, &dir.path().join(format!("bc{seed}"))).unwrap();
        bc_success += out.final_eval.success_rate;
        details.push(format!("seed {seed}"));
    }
    arsq_success /= seeds.len() as f64;
    bc_success /= seeds.len() as f64;
    let ok = arsq_success >= 0.8 && arsq_success > bc_success;
    report(
        8,
        ok,
        &format!("mean success arsq {arsq_success:.2} (>= 0.8), bc-only {bc_success:.2} (strictly below)"),
    );
}

/// Criterion 9: rank-filter segments are disjoint and near-covering on
/// synthetic return distributions, and training on the bottom segment still
/// reaches success >= 0.5.
#[test]
fn criterion_09_quality_ranking() {
    // synthetic distributions
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    for n in [3usize, 5, 9, 10, 30, 101] {
        let spec = ActionSpec::symmetric(1, 1.0, 2, 1).unwrap();
        let transitions: Vec<Transition> = (0..n)
            .map(|i| Transition {
                obs: vec![0.0],
                action_continuous: vec![0.0],
                action_discrete: encode(&spec, &ContinuousAction::new(vec![0.0])).unwrap(),
                reward: rng.gen_range(-5.0..5.0),
                next_obs: vec![0.0],
                done: true,
                episode_id: i,
                is_demo: true,
            })
            .collect();
        let ds = OfflineDataset::from_transitions(transitions).unwrap();
        let mut kept = 0;
        let mut seen = std::collections::HashSet::new();
        for seg in [RankSegment::Top, RankSegment::Middle, RankSegment::Bottom] {
            let out = rank_filter(&ds, seg, 1.0 / 3.0).unwrap();
            for e in 0..out.n_episodes() {
                let key = format!("{:.9}", out.episode_return(e));
                assert!(seen.insert(key), "overlapping segments at n={n}");
                kept += 1;
            }
        }
        assert!(kept >= n - 2, "coverage {kept} < {} at n={n}", n - 2);
    }

    // bottom-segment demos still train
    let dir = tempfile::tempdir().unwrap();
    let demos = medium_demo_file(dir.path(), 150, 1002);
    let mut cfg = TrainConfig::default();
    cfg.offline_data = Some(demos);
    cfg.demo_filter = Some((RankSegment::Bottom, 1.0 / 3.0));
    cfg.seed = 21;
    let out = train(&cfg, &dir.path().join("bottom")).unwrap();
    let ok = out.final_eval.success_rate >= 0.5;
    report(
        9,
        ok,
        &format!(
            "segments disjoint and covering; bottom-30% training success {:.2} (>= 0.5)",
            out.final_eval.success_rate
        ),
    );
}

/// Criterion 10: two CLI `train` runs with identical config and seed produce
/// byte-identical metrics files.
#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_arsq");
    let demo_status = std::process::Command::new(bin)
        .args([
            "gen-demos",
            "--env",
            "point-mass",
            "--kind",
            "medium",
            "--episodes",
            "5",
            "--seed",
            "3",
            "--out",
        ])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(demo_status.success());
    let cfg_path = dir.path().join("cfg.txt");
    std::fs::write(
        &cfg_path,
        "backbone_widths = 16,16\nbatch_size = 8\ntotal_env_steps = 400\neval_every = 100\neval_episodes = 3\n",
    )
    .unwrap();
    let run = |out: &Path| {
        let status = std::process::Command::new(bin)
            .args(["train", "--config"])
            .arg(&cfg_path)
            .args(["--seed", "7", "--offline-data"])
            .arg(dir.path().join("demos.jsonl"))
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    run(&dir.path().join("a"));
    run(&dir.path().join("b"));
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    let metrics_equal = a == b;
    let ca = std::fs::read(dir.path().join("a/checkpoint.bin")).unwrap();
    let cb = std::fs::read(dir.path().join("b/checkpoint.bin")).unwrap();
    let ckpt_equal = ca == cb;
    report(
        10,
        metrics_equal && ckpt_equal,
        "identical seeds give byte-identical metrics and checkpoints",
    );
}
