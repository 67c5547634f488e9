//! Contrastive reward learning: turn demonstrations into time-weighted
//! labels and fit a scalar reward network by mean-squared-error regression.
//!
//! Every visited state `s_t` of a demonstration receives the label `+w(t)` if
//! the trajectory succeeded and `-w(t)` if it failed, with the weight anchored
//! to that trajectory's own length so the final state always carries
//! magnitude 1. The reward network has a linear head: labels bound the
//! regression targets, and the minimizer at a repeated input is the mean of
//! its labels.

use crate::error::{Error, Result};
use crate::mdp::{DemoSet, Outcome};
use crate::nn::{Activation, AdamState, DenseNet, Gradients};
use crate::rng::stream;
use crate::timeweight::{time_weight_w, TimeWeightParams};
use crate::Real;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One regression sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledState {
    pub observation: Vec<Real>,
    pub label: Real,
    pub source: Outcome,
    pub t: u32,
    pub horizon: u32,
}

/// Label every visited state of every trajectory.
///
/// The weight anchor `T` is the trajectory's own length, so the final state
/// of a shorter-than-horizon trajectory still gets `|label| = 1`.
pub fn label_dataset(demos: &DemoSet, params: &TimeWeightParams) -> Result<Vec<LabeledState>> {
    if demos.is_empty() {
        return Err(Error::NoData("no demonstrations to label".into()));
    }
    let mut out = Vec::with_capacity(demos.total_states());
    for traj in demos.all() {
        let anchor = traj.len() as u32;
        if anchor > params.horizon {
            return Err(Error::OutOfRange(format!(
                "trajectory length {anchor} exceeds labeling horizon {}",
                params.horizon
            )));
        }
        let local = TimeWeightParams::new(params.alpha, anchor)?;
        let sign = match traj.outcome() {
            Outcome::Success => 1.0,
            Outcome::Failure => -1.0,
        };
        for t in 0..=anchor {
            let w = time_weight_w(t, &local)?;
            out.push(LabeledState {
                observation: traj.state_at(t as usize).to_vec(),
                label: sign * w,
                source: traj.outcome(),
                t,
                horizon: anchor,
            });
        }
    }
    Ok(out)
}

/// Mean squared error between predictions and labels.
pub fn crl_loss(predictions: &[Real], labels: &[Real]) -> Result<Real> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: predictions.len() });
    }
    if predictions.is_empty() {
        return Err(Error::NoData("loss over an empty set".into()));
    }
    let sum: Real = predictions.iter().zip(labels).map(|(p, l)| (p - l) * (p - l)).sum();
    Ok(sum / predictions.len() as Real)
}

/// Scalar reward regressor with its labeling parameters and training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    net: DenseNet,
    pub params: TimeWeightParams,
    pub learning_rate: Real,
    pub observation: Vec<String>,
    pub training_log: Vec<(u32, Real)>,
}

/// On-disk reward checkpoint: network plus a header describing the labeling
/// parameters and observation layout.
#[derive(Serialize, Deserialize)]
struct RewardCheckpoint {
    alpha: Real,
    horizon: u32,
    learning_rate: Real,
    observation: Vec<String>,
    net: DenseNet,
}

impl RewardModel {
    /// Fresh model with the given hidden sizes and a linear scalar head.
    pub fn new<R: rand::Rng>(
        obs_dim: usize,
        hidden: &[usize],
        params: TimeWeightParams,
        learning_rate: Real,
        observation: Vec<String>,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = DenseNet::new(&sizes, Activation::Linear, rng);
        let observation = if observation.is_empty() {
            (0..obs_dim).map(|i| format!("x{i}")).collect()
        } else {
            observation
        };
        Self { net, params, learning_rate, observation, training_log: Vec::new() }
    }

    pub fn zeros(obs_dim: usize, hidden: &[usize], params: TimeWeightParams) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            net: DenseNet::zeros(&sizes, Activation::Linear),
            params,
            learning_rate: 1e-3,
            observation: (0..obs_dim).map(|i| format!("x{i}")).collect(),
            training_log: Vec::new(),
        }
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Predicted reward for one observation.
    pub fn score(&self, observation: &[Real]) -> Result<Real> {
        Ok(self.net.forward(observation)?[0])
    }

    /// Scorer closure for rollout workers; the model is cloned, so scoring is
    /// safe to call while a new model trains elsewhere.
    pub fn scorer(&self) -> impl Fn(&[Real]) -> Real {
        let net = self.net.clone();
        move |obs| net.forward(obs).expect("observation dimension")[0]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = RewardCheckpoint {
            alpha: self.params.alpha,
            horizon: self.params.horizon,
            learning_rate: self.learning_rate,
            observation: self.observation.clone(),
            net: self.net.clone(),
        };
        std::fs::write(path, serde_json::to_string(&ckpt)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: RewardCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ckpt.net.validate()?;
        Ok(Self {
            net: ckpt.net,
            params: TimeWeightParams::new(ckpt.alpha, ckpt.horizon)?,
            learning_rate: ckpt.learning_rate,
            observation: ckpt.observation,
            training_log: Vec::new(),
        })
    }
}

/// Minibatch Adam on the contrastive loss over an already-labeled dataset.
/// Deterministic given the seed; a fresh optimizer is used per call.
pub fn train_on_labels(
    model: &mut RewardModel,
    dataset: &[LabeledState],
    epochs: u32,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::NoData("empty labeled dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut opt = AdamState::new(model.learning_rate, &model.net);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = stream(seed, "reward-train", 0);
    let epoch_base = model.training_log.len() as u32;
    // Post-epoch loss is measured at a fixed parameter point; beyond 2048
    // states a deterministic stride subsample keeps the monitor cheap.
    let monitor_stride = dataset.len().div_ceil(2048).max(1);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let mut grads = Gradients::zeros_like(&model.net);
            for &i in chunk {
                let sample = &dataset[i];
                let trace = model.net.forward_trace(&sample.observation)?;
                let pred = trace.post.last().unwrap()[0];
                let err = pred - sample.label;
                let upstream = [2.0 * err / chunk.len() as Real];
                let (g, _) = model.net.backward(&trace, &upstream)?;
                grads.add_assign(&g);
            }
            opt.step(&mut model.net, &grads)?;
        }
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for sample in dataset.iter().step_by(monitor_stride) {
            let err = model.net.forward(&sample.observation)?[0] - sample.label;
            sq_sum += err * err;
            count += 1;
        }
        let epoch_loss = sq_sum / count as Real;
        if !epoch_loss.is_finite() {
            return Err(Error::OptimDiverged(format!("epoch {epoch}: loss {epoch_loss}")));
        }
        model.training_log.push((epoch_base + epoch, epoch_loss));
    }
    Ok(())
}

/// Label `demos` with the model's own parameters and fit.
pub fn train_reward(
    model: &mut RewardModel,
    demos: &DemoSet,
    epochs: u32,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    let dataset = label_dataset(demos, &model.params)?;
    train_on_labels(model, &dataset, epochs, batch_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{builtin_map, builtin_waypoints, parse_map, scripted_expert, MazeEnv};
    use crate::mdp::{swap_outcomes, ClassificationRule, Trajectory};
    use crate::rng::stream;
    use rand::Rng;

    /// One-hot trajectory of length 1 ending in state `idx` (dimension `dim`).
    fn one_hot_traj(dim: usize, idx: usize, outcome: Outcome) -> Trajectory {
        let mut start = vec![0.0; dim];
        start[0] = 1.0;
        let mut end = vec![0.0; dim];
        end[idx] = 1.0;
        let rule = ClassificationRule::ReturnThreshold(if outcome == Outcome::Success {
            0.0
        } else {
            1.0
        });
        Trajectory::from_steps(vec![start, end], vec![vec![0.0]], vec![0.0], 4, &rule).unwrap()
    }

    fn tabular_demos(dim: usize, idx: usize, n_goal: usize, n_trap: usize) -> DemoSet {
        let mut demos = DemoSet::new();
        for _ in 0..n_goal {
            demos.push(one_hot_traj(dim, idx, Outcome::Success));
        }
        for _ in 0..n_trap {
            demos.push(one_hot_traj(dim, idx, Outcome::Failure));
        }
        demos
    }

    #[test]
    fn labels_hit_the_endpoints() {
        let demos = tabular_demos(3, 1, 1, 1);
        let params = TimeWeightParams::new(2.0, 300).unwrap();
        let labels = label_dataset(&demos, &params).unwrap();
        // Each trajectory contributes states t = 0 (label 0) and t = 1 (label +-1).
        assert_eq!(labels.len(), 4);
        assert_eq!(labels[0].label, 0.0);
        assert_eq!(labels[1].label, 1.0);
        assert_eq!(labels[2].label, 0.0);
        assert_eq!(labels[3].label, -1.0);
    }

    #[test]
    fn labels_bounded_and_signed() {
        let spec = parse_map(builtin_map("umaze").unwrap()).unwrap();
        let mut demos = DemoSet::new();
        for seed in 0..3 {
            demos.push(scripted_expert(&spec, seed, &builtin_waypoints("umaze").unwrap()).unwrap());
        }
        let params = TimeWeightParams::new(0.02, 300).unwrap();
        let labels = label_dataset(&demos, &params).unwrap();
        assert_eq!(labels.len(), demos.total_states());
        for l in &labels {
            assert!(l.label >= 0.0 && l.label <= 1.0);
        }
    }

    #[test]
    fn swapping_outcomes_negates_labels_exactly() {
        let spec = parse_map(builtin_map("umaze").unwrap()).unwrap();
        let mut demos = DemoSet::new();
        demos.push(scripted_expert(&spec, 0, &builtin_waypoints("umaze").unwrap()).unwrap());
        let params = TimeWeightParams::new(0.05, 300).unwrap();
        let labels = label_dataset(&demos, &params).unwrap();
        let swapped = label_dataset(&swap_outcomes(&demos), &params).unwrap();
        assert_eq!(labels.len(), swapped.len());
        for (a, b) in labels.iter().zip(&swapped) {
            assert_eq!(a.label, -b.label);
            assert_eq!(a.observation, b.observation);
        }
    }

    #[test]
    fn labeling_rejects_empty_and_overlong() {
        let params = TimeWeightParams::new(2.0, 300).unwrap();
        assert!(matches!(label_dataset(&DemoSet::new(), &params), Err(Error::NoData(_))));
        let demos = tabular_demos(2, 1, 1, 0);
        let tight = TimeWeightParams::new(2.0, 1).unwrap();
        assert!(label_dataset(&demos, &tight).is_ok());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(crl_loss(&[1.0, -1.0], &[1.0, -1.0]).unwrap(), 0.0);
        assert_eq!(crl_loss(&[0.0; 4], &[1.0, -1.0, 1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(crl_loss(&[0.5, -0.5], &[1.0, -1.0]).unwrap(), 0.25);
        assert!(crl_loss(&[0.0], &[0.0, 1.0]).is_err());
        assert!(crl_loss(&[], &[]).is_err());
    }

    #[test]
    fn zero_model_scores_zero_and_epochs_zero_is_noop() {
        let params = TimeWeightParams::new(2.0, 300).unwrap();
        let mut model = RewardModel::zeros(3, &[16], params);
        assert_eq!(model.score(&[0.2, 0.4, -0.1]).unwrap(), 0.0);
        let before = model.clone();
        let demos = tabular_demos(3, 1, 2, 1);
        train_reward(&mut model, &demos, 0, 8, 1).unwrap();
        assert_eq!(model.net(), before.net());
    }

    #[test]
    fn tabular_fixed_point_matches_label_mean() {
        // A state seen n+ times at +1 and n- times at -1 converges to the mean.
        let cases = [(1usize, 1usize, 0.0), (3, 1, 0.5)];
        for (n_goal, n_trap, target) in cases {
            let dim = 4;
            let demos = tabular_demos(dim, 2, n_goal, n_trap);
            let params = TimeWeightParams::new(2.0, 300).unwrap();
            let mut model = RewardModel::new(
                dim,
                &[32, 32],
                params,
                1e-3,
                Vec::new(),
                &mut stream(3, "reward-init", 0),
            );
            train_reward(&mut model, &demos, 2000, 64, 9).unwrap();
            let mut obs = vec![0.0; dim];
            obs[2] = 1.0;
            let got = model.score(&obs).unwrap();
            assert!(
                (got - target).abs() <= 0.02,
                "(n+ {n_goal}, n- {n_trap}): fitted {got}, want {target}"
            );
        }
    }

    #[test]
    fn trained_sign_agrees_with_label_mean() {
        let dim = 4;
        let mut demos = tabular_demos(dim, 1, 3, 1); // state 1 net-positive
        for t in tabular_demos(dim, 3, 1, 3).all() {
            demos.push(t.clone()); // state 3 net-negative
        }
        let params = TimeWeightParams::new(2.0, 300).unwrap();
        let mut model = RewardModel::new(
            dim,
            &[32, 32],
            params,
            1e-3,
            Vec::new(),
            &mut stream(8, "reward-sign", 0),
        );
        train_reward(&mut model, &demos, 1500, 64, 4).unwrap();
        let mut pos = vec![0.0; dim];
        pos[1] = 1.0;
        let mut neg = vec![0.0; dim];
        neg[3] = 1.0;
        assert!(model.score(&pos).unwrap() > 0.0);
        assert!(model.score(&neg).unwrap() < 0.0);
    }

    #[test]
    fn batch_scoring_equals_per_state() {
        let params = TimeWeightParams::new(2.0, 300).unwrap();
        let mut rng = stream(5, "reward-batch", 0);
        let model = RewardModel::new(4, &[16], params, 1e-3, Vec::new(), &mut rng);
        let batch: Vec<Vec<f64>> =
            (0..10).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let scores: Vec<f64> = batch.iter().map(|o| model.score(o).unwrap()).collect();
        for (obs, s) in batch.iter().zip(&scores) {
            assert_eq!(model.score(obs).unwrap(), *s);
        }
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let demos = tabular_demos(3, 1, 2, 2);
        let params = TimeWeightParams::new(2.0, 300).unwrap();
        let build = || {
            let mut model = RewardModel::new(
                3,
                &[16],
                params,
                1e-3,
                Vec::new(),
                &mut stream(11, "det", 0),
            );
            train_reward(&mut model, &demos, 50, 4, 13).unwrap();
            model
        };
        let (a, b) = (build(), build());
        assert_eq!(a.net(), b.net());
        assert_eq!(a.training_log, b.training_log);
    }

    #[test]
    fn loss_log_mostly_non_increasing() {
        let spec = parse_map(builtin_map("umaze").unwrap()).unwrap();
        let mut demos = DemoSet::new();
        for seed in 0..3 {
            demos.push(scripted_expert(&spec, seed, &builtin_waypoints("umaze").unwrap()).unwrap());
        }
        let params = TimeWeightParams::new(0.02, 300).unwrap();
        let mut model = RewardModel::new(
            4,
            &[32, 32],
            params,
            1e-3,
            Vec::new(),
            &mut stream(21, "loss-log", 0),
        );
        train_reward(&mut model, &demos, 80, 128, 2).unwrap();
        let log = &model.training_log;
        assert!(log.iter().all(|(_, l)| l.is_finite()));
        // Non-increasing up to the minibatch noise band at the loss floor.
        let warmup = 5;
        let pairs = log.len() - warmup - 1;
        let ok = (warmup..log.len() - 1).filter(|&i| log[i + 1].1 <= log[i].1 * 1.02).count();
        assert!(
            ok as f64 >= 0.9 * pairs as f64,
            "only {ok}/{pairs} non-increasing epoch pairs"
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = TimeWeightParams::new(0.02, 300).unwrap();
        let mut rng = stream(31, "ckpt", 0);
        let model = RewardModel::new(
            4,
            &[8],
            params,
            1e-3,
            vec!["x".into(), "y".into(), "gx".into(), "gy".into()],
            &mut rng,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reward.json");
        model.save(&path).unwrap();
        let back = RewardModel::load(&path).unwrap();
        assert_eq!(model.net(), back.net());
        assert_eq!(model.params, back.params);
        assert_eq!(model.observation, back.observation);
    }

    #[test]
    fn late_state_contrast_on_trap_maze() {
        // Successes follow the main path; failures walk into the nearest trap.
        let spec = parse_map(builtin_map("trapmaze1").unwrap()).unwrap();
        let mut demos = DemoSet::new();
        for seed in 0..8 {
            demos
                .push(scripted_expert(&spec, seed, &builtin_waypoints("trapmaze1").unwrap()).unwrap());
        }
        let radius = spec.goal_radius;
        let pred = move |s: &[f64]| crate::maze::goal_reached(s, radius);
        let rule = ClassificationRule::TerminalGoal(&pred);
        for seed in 100..108 {
            let mut env = MazeEnv::new(spec.clone()).unwrap();
            let mut rng = stream(seed, "fail-ep", 0);
            let mut states = vec![env.reset(&mut rng)];
            let mut actions = Vec::new();
            let mut rewards = Vec::new();
            let trap = spec.cell_center((2, 3));
            loop {
                let (x, y) = env.state().position;
                let a = [
                    ((trap.0 - x) / crate::maze::STEP_SCALE).clamp(-1.0, 1.0),
                    ((trap.1 - y) / crate::maze::STEP_SCALE).clamp(-1.0, 1.0),
                ];
                let (obs, r, truncated) = env.step(a);
                states.push(obs);
                actions.push(a.to_vec());
                rewards.push(r);
                if truncated {
                    break;
                }
            }
            let traj =
                Trajectory::from_steps(states, actions, rewards, spec.horizon, &rule).unwrap();
            assert_eq!(traj.outcome(), Outcome::Failure);
            demos.push(traj);
        }

        let params = TimeWeightParams::new(0.02, 300).unwrap();
        let mut model = RewardModel::new(
            4,
            &[64, 64],
            params,
            1e-3,
            Vec::new(),
            &mut stream(77, "contrast", 0),
        );
        train_reward(&mut model, &demos, 60, 128, 5).unwrap();

        let late = |traj: &Trajectory| -> Vec<f64> {
            let from = (0.9 * traj.len() as f64) as usize;
            (from..=traj.len()).map(|t| model.score(traj.state_at(t)).unwrap()).collect()
        };
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let succ: Vec<f64> = demos.successes().iter().flat_map(|t| late(t)).collect();
        let fail: Vec<f64> = demos.failures().iter().flat_map(|t| late(t)).collect();
        let gap = mean(&succ) - mean(&fail);
        assert!(gap >= 1.0, "late-state contrast {gap} < 1.0");
    }
}
