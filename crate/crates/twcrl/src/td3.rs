//! Twin-critic off-policy actor-critic with delayed policy updates and
//! target policy smoothing.
//!
//! The actor is deterministic with a bound-scaled tanh head; two critics are
//! trained on the clipped double-Q target
//!
//! ```text
//! y = r + gamma * (1 - done) * min(Q1'(s', a~), Q2'(s', a~))
//! a~ = clip(actor'(s') + clip(noise, +-noise_clip), +-1)
//! ```
//!
//! and the actor maximizes `Q1(s, actor(s))` every `policy_delay` updates,
//! followed by a soft update of all three target networks. Transitions are
//! stored in a uniform ring-buffer replay. The whole state (networks,
//! optimizer moments, replay, counters) serializes to JSON so runs can resume
//! bit-exactly.

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, DenseNet, Gradients};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Which observation the learned reward is evaluated at when a transition is
/// stored: the successor state (arrival credit) or the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RewardOn {
    #[default]
    Next,
    Current,
}

/// Environments the trainer can drive.
pub trait Environment {
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Returns `(next_observation, env_reward, truncated)`.
    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool);
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
}

impl Environment for crate::maze::MazeEnv {
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        crate::maze::MazeEnv::reset(self, rng)
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        crate::maze::MazeEnv::step(self, [action[0], action[1]])
    }

    fn obs_dim(&self) -> usize {
        crate::maze::MazeEnv::obs_dim()
    }

    fn action_dim(&self) -> usize {
        crate::maze::MazeEnv::action_dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Hyper {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    pub noise_std: f64,
    pub noise_clip: f64,
    pub batch: usize,
    pub start_steps: u64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    /// Mark transitions that enter an absorbing state as terminal. Off by
    /// default: the maze episodes keep paying the absorbing-state reward
    /// until the horizon, so bootstrapping through the self-loop is what
    /// values sitting at the goal correctly.
    pub done_at_absorption: bool,
}

impl Td3Hyper {
    /// Small networks and batch for desk-scale runs.
    pub fn desk() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            noise_std: 0.2,
            noise_clip: 0.5,
            batch: 128,
            start_steps: 100,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            replay_capacity: 1_000_000,
            hidden: vec![64, 64],
            done_at_absorption: false,
        }
    }

    /// Full-size configuration: three 256-wide hidden layers, batch 512.
    pub fn paper() -> Self {
        Self { batch: 512, hidden: vec![256, 256, 256], ..Self::desk() }
    }
}

impl Default for Td3Hyper {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySample {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Uniform-sampling ring buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    data: Vec<ReplaySample>,
    capacity: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { data: Vec::new(), capacity, head: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, sample: ReplaySample) {
        if self.data.len() < self.capacity {
            self.data.push(sample);
        } else {
            self.data[self.head] = sample;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReplaySample> {
        self.data.iter()
    }

    fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.data.len())).collect()
    }

    /// Re-score every stored transition with a new reward function.
    pub fn relabel<F: Fn(&[f64]) -> f64>(&mut self, scorer: F, reward_on: RewardOn) {
        for sample in &mut self.data {
            sample.reward = match reward_on {
                RewardOn::Next => scorer(&sample.next_obs),
                RewardOn::Current => scorer(&sample.obs),
            };
        }
    }
}

/// Arrays for one sampled minibatch, aligned by index.
pub struct ReplayBatch {
    pub obs: Vec<Vec<f64>>,
    pub action: Vec<Vec<f64>>,
    pub reward: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub done: Vec<bool>,
}

/// Per-update losses; the actor entry is present only on delayed updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: Option<f64>,
}

/// One episode of training interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub env_return: f64,
    pub learned_return: f64,
    pub final_obs: Vec<f64>,
    pub episode_steps: u64,
    pub total_steps: u64,
}

/// Actor, twin critics, their targets, optimizers, and the replay buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3State {
    pub hyper: Td3Hyper,
    actor: DenseNet,
    critic1: DenseNet,
    critic2: DenseNet,
    target_actor: DenseNet,
    target_critic1: DenseNet,
    target_critic2: DenseNet,
    opt_actor: AdamState,
    opt_critic1: AdamState,
    opt_critic2: AdamState,
    pub replay: ReplayBuffer,
    update_count: u64,
    pub env_steps: u64,
}

impl Td3State {
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, hyper: Td3Hyper, rng: &mut R) -> Self {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(&hyper.hidden);
        actor_sizes.push(act_dim);
        let mut critic_sizes = vec![obs_dim + act_dim];
        critic_sizes.extend_from_slice(&hyper.hidden);
        critic_sizes.push(1);
        let actor = DenseNet::new(&actor_sizes, Activation::TanhScaled(1.0), rng);
        let critic1 = DenseNet::new(&critic_sizes, Activation::Linear, rng);
        let critic2 = DenseNet::new(&critic_sizes, Activation::Linear, rng);
        Self {
            target_actor: actor.clone(),
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            opt_actor: AdamState::new(hyper.actor_lr, &actor),
            opt_critic1: AdamState::new(hyper.critic_lr, &critic1),
            opt_critic2: AdamState::new(hyper.critic_lr, &critic2),
            replay: ReplayBuffer::new(hyper.replay_capacity),
            update_count: 0,
            env_steps: 0,
            hyper,
            actor,
            critic1,
            critic2,
        }
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn critics(&self) -> (&DenseNet, &DenseNet) {
        (&self.critic1, &self.critic2)
    }

    pub fn targets(&self) -> (&DenseNet, &DenseNet, &DenseNet) {
        (&self.target_actor, &self.target_critic1, &self.target_critic2)
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// Deterministic actor output, optionally with exploration noise,
    /// clipped to the action bound.
    pub fn select_action<R: Rng>(&self, obs: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        let mut action = self.actor.forward(obs)?;
        if explore {
            let normal = Normal::new(0.0, self.hyper.noise_std).expect("valid noise std");
            for a in action.iter_mut() {
                *a = (*a + normal.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(action)
    }

    /// Clipped double-Q regression targets for a batch.
    pub fn critic_target<R: Rng>(&self, batch: &ReplayBatch, rng: &mut R) -> Result<Vec<f64>> {
        let normal = Normal::new(0.0, self.hyper.noise_std).expect("valid noise std");
        let clip = self.hyper.noise_clip;
        let mut targets = Vec::with_capacity(batch.reward.len());
        for i in 0..batch.reward.len() {
            let mut next_action = self.target_actor.forward(&batch.next_obs[i])?;
            for a in next_action.iter_mut() {
                let eps = if self.hyper.noise_std > 0.0 {
                    normal.sample(rng).clamp(-clip, clip)
                } else {
                    0.0
                };
                *a = (*a + eps).clamp(-1.0, 1.0);
            }
            let mut input = batch.next_obs[i].clone();
            input.extend_from_slice(&next_action);
            let q1 = self.target_critic1.forward(&input)?[0];
            let q2 = self.target_critic2.forward(&input)?[0];
            let not_done = if batch.done[i] { 0.0 } else { 1.0 };
            targets.push(batch.reward[i] + self.hyper.gamma * not_done * q1.min(q2));
        }
        Ok(targets)
    }

    pub fn sample_batch<R: Rng>(&self, rng: &mut R) -> ReplayBatch {
        let indices = self.replay.sample_indices(self.hyper.batch, rng);
        let mut batch = ReplayBatch {
            obs: Vec::with_capacity(indices.len()),
            action: Vec::with_capacity(indices.len()),
            reward: Vec::with_capacity(indices.len()),
            next_obs: Vec::with_capacity(indices.len()),
            done: Vec::with_capacity(indices.len()),
        };
        for i in indices {
            let s = &self.replay.data[i];
            batch.obs.push(s.obs.clone());
            batch.action.push(s.action.clone());
            batch.reward.push(s.reward);
            batch.next_obs.push(s.next_obs.clone());
            batch.done.push(s.done);
        }
        batch
    }

    /// One critic step on both critics; every `policy_delay`-th call also
    /// steps the actor and soft-updates the targets.
    pub fn update<R: Rng>(&mut self, rng: &mut R) -> Result<LossReport> {
        if self.replay.len() < self.hyper.batch {
            return Err(Error::NoData(format!(
                "replay holds {} transitions, batch needs {}",
                self.replay.len(),
                self.hyper.batch
            )));
        }
        let batch = self.sample_batch(rng);
        let targets = self.critic_target(&batch, rng)?;
        let n = batch.reward.len() as f64;

        let mut c1_loss = 0.0;
        let mut c2_loss = 0.0;
        for (critic, opt, loss_acc) in [
            (&mut self.critic1, &mut self.opt_critic1, &mut c1_loss),
            (&mut self.critic2, &mut self.opt_critic2, &mut c2_loss),
        ] {
            let mut grads = Gradients::zeros_like(critic);
            for i in 0..batch.reward.len() {
                let mut input = batch.obs[i].clone();
                input.extend_from_slice(&batch.action[i]);
                let trace = critic.forward_trace(&input)?;
                let q = trace.post.last().unwrap()[0];
                let err = q - targets[i];
                *loss_acc += err * err / n;
                let (g, _) = critic.backward(&trace, &[2.0 * err / n])?;
                grads.add_assign(&g);
            }
            opt.step(critic, &grads)?;
        }

        self.update_count += 1;
        let mut actor_loss = None;
        if self.update_count % self.hyper.policy_delay == 0 {
            let mut grads = Gradients::zeros_like(&self.actor);
            let mut loss = 0.0;
            let obs_dim = self.actor.input_dim();
            for obs in &batch.obs {
                let a_trace = self.actor.forward_trace(obs)?;
                let action = a_trace.post.last().unwrap().clone();
                let mut input = obs.clone();
                input.extend_from_slice(&action);
                let q_trace = self.critic1.forward_trace(&input)?;
                let q = q_trace.post.last().unwrap()[0];
                loss -= q / n;
                // d(-Q/n)/da through the critic, then into the actor.
                let (_, input_grad) = self.critic1.backward(&q_trace, &[-1.0 / n])?;
                let (g, _) = self.actor.backward(&a_trace, &input_grad[obs_dim..])?;
                grads.add_assign(&g);
            }
            self.opt_actor.step(&mut self.actor, &grads)?;
            self.target_actor.soft_update_from(&self.actor, self.hyper.tau);
            self.target_critic1.soft_update_from(&self.critic1, self.hyper.tau);
            self.target_critic2.soft_update_from(&self.critic2, self.hyper.tau);
            actor_loss = Some(loss);
        }
        Ok(LossReport { critic1_loss: c1_loss, critic2_loss: c2_loss, actor_loss })
    }

    /// Standard off-policy loop: uniform random actions for the first
    /// `start_steps` environment steps of the run, then noisy policy actions;
    /// one update per environment step once the replay can fill a batch.
    ///
    /// Rewards written to the replay come from `scorer` evaluated at the
    /// observation selected by `reward_on`, or from the environment when
    /// `scorer` is `None`. Runs whole episodes until at least `total_steps`
    /// steps have been taken.
    pub fn train_policy<E: Environment, F: Fn(&[f64]) -> f64>(
        &mut self,
        env: &mut E,
        scorer: Option<&F>,
        reward_on: RewardOn,
        total_steps: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<EpisodeRecord>> {
        let mut episodes = Vec::new();
        let mut steps_this_call = 0u64;
        while steps_this_call < total_steps {
            let mut obs = env.reset(rng);
            let mut env_return = 0.0;
            let mut learned_return = 0.0;
            let mut episode_steps = 0u64;
            loop {
                let action = if self.env_steps < self.hyper.start_steps {
                    (0..env.action_dim()).map(|_| rng.gen_range(-1.0..=1.0)).collect()
                } else {
                    self.select_action(&obs, true, rng)?
                };
                let (next_obs, env_reward, truncated) = env.step(&action);
                let reward = match scorer {
                    Some(f) => match reward_on {
                        RewardOn::Next => f(&next_obs),
                        RewardOn::Current => f(&obs),
                    },
                    None => env_reward,
                };
                self.replay.push(ReplaySample {
                    obs: obs.clone(),
                    action: action.clone(),
                    reward,
                    next_obs: next_obs.clone(),
                    done: false,
                });
                env_return += env_reward;
                learned_return += reward;
                self.env_steps += 1;
                steps_this_call += 1;
                episode_steps += 1;
                if self.replay.len() >= self.hyper.batch {
                    self.update(rng)?;
                }
                obs = next_obs;
                if truncated {
                    break;
                }
            }
            episodes.push(EpisodeRecord {
                env_return,
                learned_return,
                final_obs: obs,
                episode_steps,
                total_steps: self.env_steps,
            });
        }
        Ok(episodes)
    }
}
