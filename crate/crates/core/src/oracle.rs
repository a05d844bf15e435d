//! Exact tabular references: brute-force soft value iteration over joint
//! discrete actions, a tabular auto-regressive advantage decomposition
//! trained by projected gradient descent, and the tabular independent
//! (per-dimension) baseline. These are the ground truth for the equivalence
//! and case-study tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{ArsqError, Result};

/// Finite MDP over joint discrete actions (`bins^dims` per state). A
/// transition row of all zeros means the episode ends there (no bootstrap).
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub dims: usize,
    pub bins: usize,
    /// `reward[s][a]` over joint action indices
    pub reward: Vec<Vec<f64>>,
    /// `transition[s][a][s']` probabilities
    pub transition: Vec<Vec<Vec<f64>>>,
}

impl TabularMdp {
    pub fn n_joint_actions(&self) -> usize {
        self.bins.pow(self.dims as u32)
    }

    /// Per-dimension digits of a joint action index (first dimension is the
    /// most significant digit).
    pub fn digits(&self, joint: usize) -> Vec<usize> {
        let mut digits = vec![0usize; self.dims];
        let mut rest = joint;
        for d in (0..self.dims).rev() {
            digits[d] = rest % self.bins;
            rest /= self.bins;
        }
        digits
    }

    pub fn joint_index(&self, digits: &[usize]) -> usize {
        digits.iter().fold(0, |acc, &g| acc * self.bins + g)
    }

    /// Seeded random MDP used by the equivalence tests: uniform rewards,
    /// dense random transitions.
    pub fn random(n_states: usize, dims: usize, bins: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n_actions = bins.pow(dims as u32);
        let reward = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let transition = (0..n_states)
            .map(|_| {
                (0..n_actions)
                    .map(|_| {
                        let mut row: Vec<f64> =
                            (0..n_states).map(|_| rng.gen_range(0.01..1.0)).collect();
                        let z: f64 = row.iter().sum();
                        for p in &mut row {
                            *p /= z;
                        }
                        row
                    })
                    .collect()
            })
            .collect();
        Self {
            n_states,
            dims,
            bins,
            reward,
            transition,
        }
    }

    /// One-step MDP over a single state where every action ends the episode.
    pub fn one_step(dims: usize, bins: usize, reward: Vec<f64>) -> Self {
        let n_actions = bins.pow(dims as u32);
        assert_eq!(reward.len(), n_actions);
        Self {
            n_states: 1,
            dims,
            bins,
            reward: vec![reward],
            transition: vec![vec![vec![0.0; 1]; n_actions]],
        }
    }
}

/// Converged output of soft value iteration.
#[derive(Debug, Clone)]
pub struct TabularSoftModel {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

impl TabularSoftModel {
    /// `pi(a|s) = exp((Q - V) / alpha)`
    pub fn policy(&self, state: usize) -> Vec<f64> {
        self.q[state]
            .iter()
            .map(|&q| ((q - self.v[state]) / self.alpha).exp())
            .collect()
    }
}

fn lse_scaled(xs: &[f64], alpha: f64) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + alpha * xs.iter().map(|&x| ((x - m) / alpha).exp()).sum::<f64>().ln()
}

/// Iterate `Q <- r + gamma * E[V(s')]`, `V <- alpha * lse(Q / alpha)` until
/// the sup-norm change of V drops below `tol`.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    alpha: f64,
    gamma: f64,
    tol: f64,
    max_iters: usize,
) -> Result<TabularSoftModel> {
    let n_actions = mdp.n_joint_actions();
    let mut v = vec![0.0; mdp.n_states];
    let mut q = vec![vec![0.0; n_actions]; mdp.n_states];
    let mut residuals = Vec::new();
    let refresh_q = |q: &mut Vec<Vec<f64>>, v: &[f64]| {
        for (s, qrow) in q.iter_mut().enumerate() {
            for (a, qa) in qrow.iter_mut().enumerate() {
                let bootstrap: f64 = mdp.transition[s][a]
                    .iter()
                    .zip(v)
                    .map(|(&p, &vs)| p * vs)
                    .sum();
                *qa = mdp.reward[s][a] + gamma * bootstrap;
            }
        }
    };
    for iter in 0..max_iters {
        let mut residual: f64 = 0.0;
        refresh_q(&mut q, &v);
        let mut new_v = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            new_v[s] = lse_scaled(&q[s], alpha);
            residual = residual.max((new_v[s] - v[s]).abs());
        }
        v = new_v;
        residuals.push(residual);
        if residual < tol {
            // one more Q refresh against the converged V
            refresh_q(&mut q, &v);
            return Ok(TabularSoftModel {
                q,
                v,
                alpha,
                gamma,
                iterations: iter + 1,
                residuals,
            });
        }
    }
    Err(ArsqError::NonConvergence {
        iterations: max_iters,
        residual: *residuals.last().unwrap_or(&f64::INFINITY),
    })
}

/// Tabular auto-regressive decomposition: per-dimension advantage tables
/// conditioned on the previously chosen digits, plus a value table, trained
/// by projected gradient descent with the per-head normalization enforced
/// after every step.
#[derive(Debug, Clone)]
pub struct TabularArsq {
    pub n_states: usize,
    pub dims: usize,
    pub bins: usize,
    pub alpha: f64,
    /// `tables[d][(s * bins^d + prefix) * bins + a_d]`
    pub tables: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

impl TabularArsq {
    pub fn new(n_states: usize, dims: usize, bins: usize, alpha: f64) -> Self {
        let tables = (0..dims)
            .map(|d| vec![0.0; n_states * bins.pow(d as u32) * bins])
            .collect();
        let mut out = Self {
            n_states,
            dims,
            bins,
            alpha,
            tables,
            v: vec![0.0; n_states],
        };
        out.project();
        out
    }

    fn prefix_index(&self, digits: &[usize], upto: usize) -> usize {
        digits[..upto].iter().fold(0, |acc, &g| acc * self.bins + g)
    }

    fn entry(&self, d: usize, state: usize, digits: &[usize]) -> usize {
        let prefix = self.prefix_index(digits, d);
        (state * self.bins.pow(d as u32) + prefix) * self.bins + digits[d]
    }

    /// Sum of the dimensional advantages along the digit chain.
    pub fn advantage_sum(&self, state: usize, digits: &[usize]) -> f64 {
        (0..self.dims)
            .map(|d| self.tables[d][self.entry(d, state, digits)])
            .sum()
    }

    /// `Q(s, a) = V(s) + sum_d A^d`
    pub fn joint_q(&self, state: usize, digits: &[usize]) -> f64 {
        self.v[state] + self.advantage_sum(state, digits)
    }

    pub fn greedy(&self, state: usize) -> Vec<usize> {
        let n_actions = self.bins.pow(self.dims as u32);
        let mut best = 0usize;
        let mut best_q = f64::NEG_INFINITY;
        for joint in 0..n_actions {
            let digits = joint_digits(joint, self.dims, self.bins);
            let q = self.joint_q(state, &digits);
            if q > best_q {
                best_q = q;
                best = joint;
            }
        }
        joint_digits(best, self.dims, self.bins)
    }

    /// Renormalize every head row: `A <- A - alpha * lse(A / alpha)`.
    fn project(&mut self) {
        for table in &mut self.tables {
            for row in table.chunks_mut(self.bins) {
                let shift = lse_scaled(row, self.alpha);
                for a in row {
                    *a -= shift;
                }
            }
        }
    }

    /// Largest deviation of any head row from the normalization constraint.
    pub fn normalization_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for table in &self.tables {
            for row in table.chunks(self.bins) {
                let total: f64 = row.iter().map(|&a| (a / self.alpha).exp()).sum();
                worst = worst.max((total - 1.0).abs());
            }
        }
        worst
    }

    fn descend(
        &mut self,
        cells: &[(usize, Vec<usize>, f64, f64)],
        bootstrap: impl Fn(usize, usize) -> f64,
        lr: f64,
    ) -> f64 {
        // full-batch projected gradient step; returns the batch loss
        let mut grad_v = vec![0.0; self.n_states];
        let mut grads: Vec<Vec<f64>> = self.tables.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut loss = 0.0;
        let mut weight_total = 0.0;
        for (cell_idx, (s, digits, w, y_reward)) in cells.iter().enumerate() {
            let y = y_reward + bootstrap(cell_idx, *s);
            let err = self.joint_q(*s, digits) - y;
            loss += w * 0.5 * err * err;
            weight_total += w;
            grad_v[*s] += w * err;
            for d in 0..self.dims {
                grads[d][self.entry(d, *s, digits)] += w * err;
            }
        }
        if weight_total > 0.0 {
            let inv = 1.0 / weight_total;
            for (v, g) in self.v.iter_mut().zip(&grad_v) {
                *v -= lr * g * inv;
            }
            for (table, g) in self.tables.iter_mut().zip(&grads) {
                for (t, gi) in table.iter_mut().zip(g) {
                    *t -= lr * gi * inv;
                }
            }
            loss *= inv;
        }
        self.project();
        loss
    }

    /// Fit against a full MDP with bootstrapped targets
    /// `y = r + gamma * E[V(s')]` recomputed from the current value table
    /// each sweep (the targets carry no gradient).
    pub fn fit_mdp(
        mdp: &TabularMdp,
        alpha: f64,
        gamma: f64,
        lr: f64,
        steps: usize,
    ) -> Result<Self> {
        let mut model = Self::new(mdp.n_states, mdp.dims, mdp.bins, alpha);
        let cells: Vec<(usize, Vec<usize>, f64, f64)> = (0..mdp.n_states)
            .flat_map(|s| {
                (0..mdp.n_joint_actions())
                    .map(move |a| (s, a))
                    .collect::<Vec<_>>()
            })
            .map(|(s, a)| (s, mdp.digits(a), 1.0, mdp.reward[s][a]))
            .collect();
        let joint: Vec<usize> = cells
            .iter()
            .map(|(s, digits, _, _)| {
                let _ = s;
                mdp.joint_index(digits)
            })
            .collect();
        for step in 0..steps {
            let v_snapshot = model.v.clone();
            let loss = model.descend(
                &cells,
                |cell_idx, s| {
                    let a = joint[cell_idx];
                    gamma
                        * mdp.transition[s][a]
                            .iter()
                            .zip(&v_snapshot)
                            .map(|(&p, &vs)| p * vs)
                            .sum::<f64>()
                },
                lr,
            );
            if !loss.is_finite() {
                return Err(ArsqError::Divergence(format!(
                    "tabular fit diverged at step {step}"
                )));
            }
        }
        Ok(model)
    }

    /// Fit one-step data: regression of `V + sum A` toward the observed
    /// rewards. Samples are grouped by (state, joint action) first, which
    /// leaves the full-batch gradient unchanged.
    pub fn fit_dataset(
        samples: &[(usize, Vec<usize>, f64)],
        n_states: usize,
        dims: usize,
        bins: usize,
        alpha: f64,
        lr: f64,
        steps: usize,
    ) -> Result<Self> {
        let mut model = Self::new(n_states, dims, bins, alpha);
        let cells = group_cells(samples, dims, bins);
        for step in 0..steps {
            let loss = model.descend(&cells, |_, _| 0.0, lr);
            if !loss.is_finite() {
                return Err(ArsqError::Divergence(format!(
                    "tabular fit diverged at step {step}"
                )));
            }
        }
        Ok(model)
    }
}

fn joint_digits(joint: usize, dims: usize, bins: usize) -> Vec<usize> {
    let mut digits = vec![0usize; dims];
    let mut rest = joint;
    for d in (0..dims).rev() {
        digits[d] = rest % bins;
        rest /= bins;
    }
    digits
}

/// Collapse samples into `(state, digits, weight, mean reward)` cells; the
/// squared-error gradient over the cells matches the per-sample gradient.
fn group_cells(
    samples: &[(usize, Vec<usize>, f64)],
    dims: usize,
    bins: usize,
) -> Vec<(usize, Vec<usize>, f64, f64)> {
    use std::collections::BTreeMap;
    let mut acc: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for (s, digits, r) in samples {
        let joint = digits.iter().fold(0, |a, &g| a * bins + g);
        let e = acc.entry((*s, joint)).or_insert((0.0, 0.0));
        e.0 += 1.0;
        e.1 += r;
    }
    acc.into_iter()
        .map(|((s, joint), (count, total))| {
            (s, joint_digits(joint, dims, bins), count, total / count)
        })
        .collect()
}

/// Independent per-dimension baseline: `q[s][d][b]` regressed toward the
/// observed rewards, combined as the mean over dimensions.
#[derive(Debug, Clone)]
pub struct TabularIndependent {
    pub n_states: usize,
    pub dims: usize,
    pub bins: usize,
    q: Vec<f64>,
}

impl TabularIndependent {
    pub fn new(n_states: usize, dims: usize, bins: usize) -> Self {
        Self {
            n_states,
            dims,
            bins,
            q: vec![0.0; n_states * dims * bins],
        }
    }

    fn idx(&self, s: usize, d: usize, b: usize) -> usize {
        (s * self.dims + d) * self.bins + b
    }

    pub fn q_entry(&self, s: usize, d: usize, b: usize) -> f64 {
        self.q[self.idx(s, d, b)]
    }

    /// `Q(s, a) = mean_d q(s, d, a^d)`
    pub fn joint_estimate(&self, state: usize, digits: &[usize]) -> f64 {
        digits
            .iter()
            .enumerate()
            .map(|(d, &b)| self.q[self.idx(state, d, b)])
            .sum::<f64>()
            / self.dims as f64
    }

    pub fn greedy(&self, state: usize) -> Vec<usize> {
        // the mean combiner maximizes dimension-wise
        (0..self.dims)
            .map(|d| {
                (0..self.bins)
                    .max_by(|&a, &b| {
                        self.q[self.idx(state, d, a)]
                            .partial_cmp(&self.q[self.idx(state, d, b)])
                            .unwrap()
                    })
                    .unwrap()
            })
            .collect()
    }

    /// Per-dimension regression toward the observed rewards by full-batch
    /// gradient descent.
    pub fn fit_dataset(
        samples: &[(usize, Vec<usize>, f64)],
        n_states: usize,
        dims: usize,
        bins: usize,
        lr: f64,
        steps: usize,
    ) -> Result<Self> {
        let mut model = Self::new(n_states, dims, bins);
        // group per (s, d, bin)
        let mut weight = vec![0.0; model.q.len()];
        let mut target = vec![0.0; model.q.len()];
        for (s, digits, r) in samples {
            for (d, &b) in digits.iter().enumerate() {
                let i = model.idx(*s, d, b);
                weight[i] += 1.0;
                target[i] += r;
            }
        }
        let n = samples.len() as f64;
        for i in 0..model.q.len() {
            if weight[i] > 0.0 {
                target[i] /= weight[i];
            }
        }
        for step in 0..steps {
            let mut worst: f64 = 0.0;
            for i in 0..model.q.len() {
                if weight[i] > 0.0 {
                    let g = weight[i] / n * (model.q[i] - target[i]);
                    model.q[i] -= lr * g;
                    worst = worst.max(g.abs());
                }
            }
            if !worst.is_finite() {
                return Err(ArsqError::Divergence(format!(
                    "independent fit diverged at step {step}"
                )));
            }
        }
        Ok(model)
    }
}

/// Mean absolute error of a continuous-action Q predictor against the
/// analytic landscape over uniform samples.
pub fn q_landscape_error(
    predict: &dyn Fn(&[f64]) -> f64,
    landscape: &crate::envs::ModeLandscape,
    n_samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_samples {
        let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        total += (predict(&a) - landscape.reward(&a)).abs();
    }
    total / n_samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_vi_single_terminal_state_closed_form() {
        let mdp = TabularMdp::one_step(1, 2, vec![1.0, 0.0]);
        let model = soft_value_iteration(&mdp, 1.0, 0.9, 1e-12, 100).unwrap();
        let expected_v = (1.0f64.exp() + 1.0).ln();
        assert!((model.v[0] - expected_v).abs() < 1e-12);
        assert!((expected_v - 1.31326).abs() < 1e-5);
        let pi = model.policy(0);
        assert!((pi[0] - 0.7311).abs() < 1e-4);
        assert!((pi[1] - 0.2689).abs() < 1e-4);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn soft_vi_low_temperature_limit() {
        let mdp = TabularMdp::one_step(1, 2, vec![1.0, 0.0]);
        let model = soft_value_iteration(&mdp, 0.001, 0.9, 1e-12, 100).unwrap();
        assert!((model.v[0] - 1.0).abs() < 1e-3);
        let pi = model.policy(0);
        assert!(pi[0] > 0.999 && pi[1] < 0.001);
    }

    #[test]
    fn soft_vi_uniform_rewards_symmetry() {
        let c = 0.37;
        let mdp = TabularMdp::one_step(2, 2, vec![c; 4]);
        let alpha = 0.2;
        let model = soft_value_iteration(&mdp, alpha, 0.9, 1e-12, 100).unwrap();
        assert!((model.v[0] - (c + alpha * 4.0f64.ln())).abs() < 1e-12);
        for p in model.policy(0) {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_vi_residuals_contract() {
        let mdp = TabularMdp::random(3, 2, 3, 42);
        let model = soft_value_iteration(&mdp, 0.05, 0.9, 1e-10, 10_000).unwrap();
        for w in model.residuals.windows(2).skip(1) {
            assert!(w[1] <= w[0] + 1e-12, "residuals must not increase");
        }
    }

    #[test]
    fn soft_vi_nonconvergence_reports_residual() {
        let mdp = TabularMdp::random(3, 2, 3, 42);
        match soft_value_iteration(&mdp, 0.05, 0.9, 1e-12, 3) {
            Err(ArsqError::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn tabular_arsq_matches_soft_vi_on_small_mdp() {
        let mdp = TabularMdp::random(3, 2, 3, 42);
        let vi = soft_value_iteration(&mdp, 0.05, 0.9, 1e-12, 100_000).unwrap();
        let fit = TabularArsq::fit_mdp(&mdp, 0.05, 0.9, 0.1, 20_000).unwrap();
        let mut worst: f64 = 0.0;
        for s in 0..3 {
            for a in 0..mdp.n_joint_actions() {
                let digits = mdp.digits(a);
                let gap = (fit.advantage_sum(s, &digits) - (vi.q[s][a] - vi.v[s])).abs();
                worst = worst.max(gap);
                let qgap = (fit.joint_q(s, &digits) - vi.q[s][a]).abs();
                worst = worst.max(qgap);
            }
        }
        assert!(worst < 1e-3, "decomposition gap {worst:.2e}");
        assert!(fit.normalization_deviation() < 1e-6);
    }

    #[test]
    fn tabular_arsq_regresses_to_rewards_on_one_step_data() {
        // dataset covering all four cells of a 2x2 lattice
        let mut samples = Vec::new();
        let rewards = [0.2, -0.4, 0.9, 0.1];
        for (joint, &r) in rewards.iter().enumerate() {
            for _ in 0..10 {
                samples.push((0usize, joint_digits(joint, 2, 2), r));
            }
        }
        let fit = TabularArsq::fit_dataset(&samples, 1, 2, 2, 0.05, 0.1, 20_000).unwrap();
        for (joint, &r) in rewards.iter().enumerate() {
            let digits = joint_digits(joint, 2, 2);
            assert!(
                (fit.joint_q(0, &digits) - r).abs() < 0.05,
                "cell {joint}: {} vs {r}",
                fit.joint_q(0, &digits)
            );
        }
        assert!(fit.normalization_deviation() < 1e-6);
    }

    #[test]
    fn converged_tabular_advantages_form_a_distribution_over_joint_actions() {
        let mut samples = Vec::new();
        let rewards = [0.9, 0.1, -1.0, 0.3];
        for (joint, &r) in rewards.iter().enumerate() {
            for _ in 0..5 {
                samples.push((0usize, joint_digits(joint, 2, 2), r));
            }
        }
        let fit = TabularArsq::fit_dataset(&samples, 1, 2, 2, 0.05, 0.1, 20_000).unwrap();
        let total: f64 = (0..4)
            .map(|joint| (fit.advantage_sum(0, &joint_digits(joint, 2, 2)) / 0.05).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-3, "sum exp(A/alpha) = {total}");
    }

    #[test]
    fn independent_fit_reproduces_diagonal_separable_rewards() {
        // reward depends only on dimension 1; the sampling couples the two
        // dimensions (digits equal), so the conditional means agree with the
        // rewards on the dataset support
        let f = [-1.0, 0.0, 1.0];
        let mut samples = Vec::new();
        for (b, &r) in f.iter().enumerate() {
            for _ in 0..7 {
                samples.push((0usize, vec![b, b], r));
            }
        }
        let fit = TabularIndependent::fit_dataset(&samples, 1, 2, 3, 0.5, 20_000).unwrap();
        for (b, &r) in f.iter().enumerate() {
            assert!((fit.joint_estimate(0, &[b, b]) - r).abs() < 0.05);
        }
    }

    #[test]
    fn independent_fit_constant_rewards_are_flat() {
        let mut samples = Vec::new();
        for joint in 0..4 {
            samples.push((0usize, joint_digits(joint, 2, 2), 0.75));
        }
        let fit = TabularIndependent::fit_dataset(&samples, 1, 2, 2, 0.5, 20_000).unwrap();
        for joint in 0..4 {
            let digits = joint_digits(joint, 2, 2);
            assert!((fit.joint_estimate(0, &digits) - 0.75).abs() < 1e-3);
        }
    }

    #[test]
    fn q_landscape_error_identity_and_offset() {
        let ls = crate::envs::ModeLandscape::five_mode();
        let exact = |a: &[f64]| ls.reward(a);
        assert_eq!(q_landscape_error(&exact, &ls, 500, 9), 0.0);
        let offset = |a: &[f64]| ls.reward(a) + 0.1;
        let err = q_landscape_error(&offset, &ls, 500, 9);
        assert!((err - 0.1).abs() < 1e-12);
    }
}
