//! The iterative training loop: fit a reward on the demo set, train the
//! policy against it, collect and classify fresh rollouts, grow the demo
//! set, and repeat.
//!
//! Artifacts land in the run's output directory:
//!
//! * `demos.jsonl` — append-only demonstration set (expert demos first)
//! * `metrics.csv` — one row per training/collection episode
//! * `eval.csv` — per-iteration noise-free evaluation statistics
//! * `reward_iter<k>.json`, `policy_iter<k>.json`, `heatmap_iter<k>.csv`
//! * `state_latest.json` — full state for bit-exact resume
//!
//! All randomness derives from the config seed through named per-iteration
//! streams, so a run resumed from `state_latest.json` reproduces the next
//! iteration exactly.

use crate::error::{Error, Result};
use crate::maze::{
    builtin_map, goal_reached, parse_map, reward_heatmap, write_heatmap_csv, GoalMode, MazeEnv,
    MazeSpec,
};
use crate::mdp::{
    append_demos, load_demos, save_demos, ClassificationRule, DemoSet, Outcome, Trajectory,
};
use crate::nn::DenseNet;
use crate::reward::{label_dataset, train_on_labels, LabeledState, RewardModel};
use crate::rng::{derive_seed, stream};
use crate::td3::{EpisodeRecord, RewardOn, Td3Hyper, Td3State};
use crate::timeweight::TimeWeightParams;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Reward-learning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardHyper {
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch: usize,
    /// Collected episodes between reward refits during the collection stage.
    pub update_interval: u32,
    /// Reinitialize the network before each refit instead of fine-tuning.
    pub reset: bool,
    pub hidden: Vec<usize>,
}

impl RewardHyper {
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch: 128,
            update_interval: 10,
            reset: false,
            hidden: vec![64, 64],
        }
    }

    /// Full-size configuration: 128-wide layers, 200 epochs, batch 512.
    pub fn paper() -> Self {
        Self { epochs: 200, batch: 512, hidden: vec![128, 128, 128], ..Self::desk() }
    }
}

impl Default for RewardHyper {
    fn default() -> Self {
        Self::desk()
    }
}

/// Label-source ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Label every state +1 (success) or -1 (failure) instead of +-w(t).
    pub constant_labels: bool,
    pub use_success_only: bool,
    pub use_failure_only: bool,
    /// Skip reward learning entirely; train on the sparse env reward.
    pub vanilla_td3: bool,
}

/// Episode classification rule, in config form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum RuleConfig {
    TerminalGoal,
    ReturnThreshold { r_theta: f64 },
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self::TerminalGoal
    }
}

/// Full run description. Unset fields take desk-scale defaults, or the
/// full-size table defaults when `paper_hparams` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Map file path, or a built-in name (`umaze`, `trapmaze1`, `trapmaze2`).
    pub map: String,
    pub goal_mode: GoalMode,
    pub horizon: u32,
    /// Time-weight steepness; defaults to 2 (0.02 suits horizon-300 mazes
    /// where most of an episode is spent absorbed).
    pub alpha: Option<f64>,
    /// Expert demonstration file; required unless `ablation.vanilla_td3`.
    pub demos: Option<String>,
    pub rule: RuleConfig,
    pub iterations: u32,
    pub steps_per_iter: u32,
    pub rollouts_per_iter: u32,
    pub eval_episodes: u32,
    pub reward: Option<RewardHyper>,
    pub td3: Option<Td3Hyper>,
    pub paper_hparams: bool,
    pub seed: u64,
    pub out_dir: String,
    pub ablation: AblationFlags,
    /// Re-score stored replay transitions after each reward refit.
    pub relabel_replay: bool,
    pub reward_on: RewardOn,
    pub threads: usize,
    /// Heatmap export resolution; 0 disables the export.
    pub heatmap_res: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            map: "umaze".into(),
            goal_mode: GoalMode::One,
            horizon: 300,
            alpha: None,
            demos: None,
            rule: RuleConfig::TerminalGoal,
            iterations: 10,
            steps_per_iter: 10_000,
            rollouts_per_iter: 20,
            eval_episodes: 20,
            reward: None,
            td3: None,
            paper_hparams: false,
            seed: 0,
            out_dir: "run".into(),
            ablation: AblationFlags::default(),
            relabel_replay: true,
            reward_on: RewardOn::Next,
            threads: 1,
            heatmap_res: 64,
        }
    }
}

impl RunConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(2.0)
    }

    pub fn reward_hyper(&self) -> RewardHyper {
        self.reward.clone().unwrap_or_else(|| {
            if self.paper_hparams {
                RewardHyper::paper()
            } else {
                RewardHyper::desk()
            }
        })
    }

    pub fn td3_hyper(&self) -> Td3Hyper {
        self.td3.clone().unwrap_or_else(|| {
            if self.paper_hparams {
                Td3Hyper::paper()
            } else {
                Td3Hyper::desk()
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ab = self.ablation;
        if ab.vanilla_td3 && (ab.constant_labels || ab.use_success_only || ab.use_failure_only) {
            return Err(Error::Config(
                "vanilla_td3 excludes reward learning; other ablation flags conflict".into(),
            ));
        }
        if ab.use_success_only && ab.use_failure_only {
            return Err(Error::Config("use_success_only and use_failure_only conflict".into()));
        }
        if !ab.vanilla_td3 && self.demos.is_none() {
            return Err(Error::Config("expert demo file required (set `demos`)".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidHorizon("horizon must be >= 1".into()));
        }
        TimeWeightParams::new(self.alpha(), self.horizon)?;
        Ok(())
    }

    /// Load the maze named or referenced by `map`, applying horizon and mode.
    pub fn load_spec(&self) -> Result<MazeSpec> {
        let text = match builtin_map(&self.map) {
            Some(t) => t.to_string(),
            None => fs::read_to_string(&self.map).map_err(|e| {
                Error::Config(format!("cannot read map file {}: {e}", self.map))
            })?,
        };
        parse_map(&text)?.with_horizon(self.horizon)?.with_goal_mode(self.goal_mode)
    }
}

/// Noise-free evaluation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean_env_return: f64,
    pub std_env_return: f64,
    pub success_rate: f64,
}

/// One evaluation snapshot in a run's history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: u32,
    pub env_steps: u64,
    pub stats: EvalStats,
}

/// Where a finished run left its artifacts, plus a summary.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub iterations_run: u32,
    pub converged: bool,
    pub eval_history: Vec<EvalRecord>,
    pub demo_counts: (usize, usize),
    pub env_interactions: u64,
}

#[derive(Serialize, Deserialize)]
struct PipelineState {
    iteration: u32,
    td3: Td3State,
    reward: Option<RewardModel>,
    episodes_logged: u64,
    env_interactions: u64,
    consecutive_high: u32,
    converged: bool,
    eval_history: Vec<EvalRecord>,
}

#[derive(Serialize, Deserialize)]
struct ActorCheckpoint {
    obs_dim: usize,
    act_dim: usize,
    actor: DenseNet,
}

/// Write the actor of a TD3 state as a policy checkpoint.
pub fn save_actor_checkpoint(td3: &Td3State, path: &Path) -> Result<()> {
    let ckpt = ActorCheckpoint {
        obs_dim: td3.actor().input_dim(),
        act_dim: td3.actor().output_dim(),
        actor: td3.actor().clone(),
    };
    fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

pub fn load_actor_checkpoint(path: &Path) -> Result<DenseNet> {
    let ckpt: ActorCheckpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    ckpt.actor.validate()?;
    Ok(ckpt.actor)
}

/// Run one episode under `policy` and classify it with `rule`.
pub fn run_episode<F>(
    env: &mut MazeEnv,
    mut policy: F,
    rng: &mut ChaCha8Rng,
    rule: &ClassificationRule,
) -> Result<Trajectory>
where
    F: FnMut(&[f64], &mut ChaCha8Rng) -> Vec<f64>,
{
    let mut states = vec![env.reset(rng)];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    loop {
        let action = policy(states.last().unwrap(), rng);
        let (obs, reward, truncated) = env.step([action[0], action[1]]);
        states.push(obs);
        actions.push(action);
        rewards.push(reward);
        if truncated {
            break;
        }
    }
    Trajectory::from_steps(states, actions, rewards, env.spec().horizon, rule)
}

fn indexed_episodes<F>(
    spec: &MazeSpec,
    n: u32,
    seed: u64,
    tag: &str,
    threads: usize,
    rule: &ClassificationRule,
    policy: F,
) -> Result<Vec<Trajectory>>
where
    F: Fn(&[f64], &mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    let run_one = |i: u32| -> Result<Trajectory> {
        let mut env = MazeEnv::new(spec.clone())?;
        let mut rng = stream(seed, tag, i as u64);
        run_episode(&mut env, |obs, r| policy(obs, r), &mut rng, rule)
    };
    if threads <= 1 || n <= 1 {
        (0..n).map(run_one).collect()
    } else {
        // Episodes use per-index streams, so any thread split is bit-identical
        // to the sequential order.
        let workers = threads.min(n as usize);
        let results: Vec<Result<Vec<(u32, Trajectory)>>> = std::thread::scope(|scope| {
            let run_one = &run_one;
            (0..workers)
                .map(|w| {
                    scope.spawn(move || {
                        (w as u32..n)
                            .step_by(workers)
                            .map(|i| Ok((i, run_one(i)?)))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect::<Vec<_>>()
                .into_iter()
                .map(|h| h.join().expect("episode worker panicked"))
                .collect()
        });
        let mut indexed = Vec::with_capacity(n as usize);
        for r in results {
            indexed.extend(r?);
        }
        indexed.sort_by_key(|(i, _)| *i);
        Ok(indexed.into_iter().map(|(_, t)| t).collect())
    }
}

/// Collect `n` exploration-noise episodes under the current policy and split
/// them into successes and failures by `rule`. Deterministic given the seed,
/// regardless of the thread count.
pub fn collect_rollouts(
    td3: &Td3State,
    spec: &MazeSpec,
    n: u32,
    rule: &ClassificationRule,
    seed: u64,
    threads: usize,
) -> Result<DemoSet> {
    let trajectories = indexed_episodes(spec, n, seed, "collect-ep", threads, rule, |obs, rng| {
        td3.select_action(obs, true, rng).expect("observation dimension")
    })?;
    let mut demos = DemoSet::new();
    for t in trajectories {
        demos.push(t);
    }
    Ok(demos)
}

/// Noise-free policy evaluation over `n` episodes.
pub fn evaluate(
    actor: &DenseNet,
    spec: &MazeSpec,
    n: u32,
    rule: &ClassificationRule,
    seed: u64,
    threads: usize,
) -> Result<EvalStats> {
    if n == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let trajectories = indexed_episodes(spec, n, seed, "eval-ep", threads, rule, |obs, _| {
        actor.forward(obs).expect("observation dimension")
    })?;
    let returns: Vec<f64> = trajectories.iter().map(|t| t.episodic_return()).collect();
    let successes = trajectories.iter().filter(|t| t.outcome() == Outcome::Success).count();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    Ok(EvalStats {
        mean_env_return: mean,
        std_env_return: var.sqrt(),
        success_rate: successes as f64 / n as f64,
    })
}

/// Apply ablation flags to produce the regression dataset for a refit.
fn labeled_for_fit(
    demos: &DemoSet,
    params: &TimeWeightParams,
    ablation: &AblationFlags,
) -> Result<Vec<LabeledState>> {
    let mut filtered = DemoSet::new();
    for traj in demos.all() {
        let keep = match traj.outcome() {
            Outcome::Success => !ablation.use_failure_only,
            Outcome::Failure => !ablation.use_success_only,
        };
        if keep {
            filtered.push(traj.clone());
        }
    }
    if filtered.is_empty() {
        return Ok(Vec::new());
    }
    let mut labels = label_dataset(&filtered, params)?;
    if ablation.constant_labels {
        for l in labels.iter_mut() {
            l.label = match l.source {
                Outcome::Success => 1.0,
                Outcome::Failure => -1.0,
            };
        }
    }
    Ok(labels)
}

fn success_of(record: &EpisodeRecord, rule: &ClassificationRule) -> bool {
    match rule {
        ClassificationRule::TerminalGoal(pred) => pred(&record.final_obs),
        ClassificationRule::ReturnThreshold(r) => record.env_return >= *r,
    }
}

struct CsvSinks {
    metrics: fs::File,
    eval: fs::File,
}

impl CsvSinks {
    fn open(dir: &Path, fresh: bool) -> Result<Self> {
        let metrics_path = dir.join("metrics.csv");
        let eval_path = dir.join("eval.csv");
        if fresh {
            fs::write(&metrics_path, "iteration,episode,env_return,learned_return,success,steps\n")?;
            fs::write(&eval_path, "iteration,steps,mean_env_return,std_env_return,success_rate\n")?;
        }
        Ok(Self {
            metrics: fs::OpenOptions::new().append(true).open(&metrics_path)?,
            eval: fs::OpenOptions::new().append(true).open(&eval_path)?,
        })
    }

    fn episode(
        &mut self,
        iteration: u32,
        episode: u64,
        env_return: f64,
        learned_return: f64,
        success: bool,
        steps: u64,
    ) -> Result<()> {
        writeln!(
            self.metrics,
            "{iteration},{episode},{env_return},{learned_return},{},{steps}",
            u8::from(success)
        )?;
        Ok(())
    }

    fn eval(&mut self, record: &EvalRecord) -> Result<()> {
        writeln!(
            self.eval,
            "{},{},{},{},{}",
            record.iteration,
            record.env_steps,
            record.stats.mean_env_return,
            record.stats.std_env_return,
            record.stats.success_rate
        )?;
        Ok(())
    }
}

/// Execute the iterative loop for `config.iterations` iterations (or until
/// the evaluation success rate stays at or above 0.95 for three consecutive
/// iterations). With `resume`, continue from `state_latest.json` in the
/// output directory.
pub fn run_twcrl(config: &RunConfig, resume: bool) -> Result<RunArtifacts> {
    config.validate()?;
    let spec = config.load_spec()?;
    let out_dir = PathBuf::from(&config.out_dir);
    let goal_radius = spec.goal_radius;
    let pred = move |obs: &[f64]| goal_reached(obs, goal_radius);
    let rule = match config.rule {
        RuleConfig::TerminalGoal => ClassificationRule::TerminalGoal(&pred),
        RuleConfig::ReturnThreshold { r_theta } => ClassificationRule::ReturnThreshold(r_theta),
    };
    let tw_params = TimeWeightParams::new(config.alpha(), config.horizon)?;
    let reward_hyper = config.reward_hyper();
    let td3_hyper = config.td3_hyper();
    let vanilla = config.ablation.vanilla_td3;
    let state_path = out_dir.join("state_latest.json");
    let demo_path = out_dir.join("demos.jsonl");

    let (mut st, mut demos, mut sinks);
    if resume {
        let text = fs::read_to_string(&state_path).map_err(|e| {
            Error::Config(format!("cannot resume: {} unreadable: {e}", state_path.display()))
        })?;
        st = serde_json::from_str::<PipelineState>(&text)?;
        demos = if demo_path.exists() { load_demos(&demo_path)? } else { DemoSet::new() };
        sinks = CsvSinks::open(&out_dir, false)?;
    } else {
        fs::create_dir_all(&out_dir)?;
        demos = DemoSet::new();
        if let Some(demo_file) = &config.demos {
            demos = load_demos(Path::new(demo_file))?;
            if demos.successes().is_empty() && !vanilla {
                return Err(Error::Validation(format!(
                    "expert demo file {demo_file} holds no successful trajectory"
                )));
            }
        }
        save_demos(&demos, &demo_path)?;
        sinks = CsvSinks::open(&out_dir, true)?;

        let reward = if vanilla {
            None
        } else {
            let mut model = RewardModel::new(
                MazeEnv::obs_dim(),
                &reward_hyper.hidden,
                tw_params,
                reward_hyper.learning_rate,
                vec!["x".into(), "y".into(), "gx".into(), "gy".into()],
                &mut stream(config.seed, "reward-init", 0),
            );
            let labels = labeled_for_fit(&demos, &tw_params, &config.ablation)?;
            if !labels.is_empty() {
                train_on_labels(
                    &mut model,
                    &labels,
                    reward_hyper.epochs,
                    reward_hyper.batch,
                    derive_seed(config.seed, "reward-fit", 0),
                )?;
            }
            model.save(&out_dir.join("reward_iter0.json"))?;
            Some(model)
        };
        let td3 = Td3State::new(
            MazeEnv::obs_dim(),
            MazeEnv::action_dim(),
            td3_hyper.clone(),
            &mut stream(config.seed, "td3-init", 0),
        );
        st = PipelineState {
            iteration: 0,
            td3,
            reward,
            episodes_logged: 0,
            env_interactions: 0,
            consecutive_high: 0,
            converged: false,
            eval_history: Vec::new(),
        };
        if let Some(model) = &st.reward {
            export_heatmap(&spec, model, config.heatmap_res, &out_dir, 0)?;
        }
        fs::write(&state_path, serde_json::to_string(&st)?)?;
    }

    while st.iteration < config.iterations && !st.converged {
        let k = st.iteration + 1;

        // Policy optimization against the current reward.
        let mut env = MazeEnv::new(spec.clone())?;
        let mut train_rng = stream(config.seed, "train", k as u64);
        let scorer = st.reward.as_ref().map(|m| m.scorer());
        let records = st.td3.train_policy(
            &mut env,
            scorer.as_ref(),
            config.reward_on,
            config.steps_per_iter as u64,
            &mut train_rng,
        )?;
        for rec in &records {
            st.env_interactions += rec.episode_steps;
            st.episodes_logged += 1;
            sinks.episode(
                k,
                st.episodes_logged,
                rec.env_return,
                rec.learned_return,
                success_of(rec, &rule),
                st.env_interactions,
            )?;
        }

        // Collect fresh rollouts, growing the dataset; refit the reward every
        // `update_interval` collected episodes.
        if config.rollouts_per_iter > 0 && !vanilla {
            let mut collected = 0u32;
            let mut chunk_idx = 0u64;
            while collected < config.rollouts_per_iter {
                let chunk = reward_hyper
                    .update_interval
                    .max(1)
                    .min(config.rollouts_per_iter - collected);
                let batch = collect_rollouts(
                    &st.td3,
                    &spec,
                    chunk,
                    &rule,
                    derive_seed(config.seed, "collect", (k as u64) << 16 | chunk_idx),
                    config.threads,
                )?;
                for traj in batch.all() {
                    st.env_interactions += traj.len() as u64;
                    st.episodes_logged += 1;
                    let learned: f64 = match &st.reward {
                        Some(model) => traj
                            .states()
                            .skip(1)
                            .map(|s| model.score(s).expect("observation dimension"))
                            .sum(),
                        None => traj.episodic_return(),
                    };
                    sinks.episode(
                        k,
                        st.episodes_logged,
                        traj.episodic_return(),
                        learned,
                        traj.outcome() == Outcome::Success,
                        st.env_interactions,
                    )?;
                }
                append_demos(&batch, &demo_path)?;
                demos.extend(batch);
                collected += chunk;
                chunk_idx += 1;

                if let Some(model) = &mut st.reward {
                    if reward_hyper.reset {
                        *model = RewardModel::new(
                            MazeEnv::obs_dim(),
                            &reward_hyper.hidden,
                            tw_params,
                            reward_hyper.learning_rate,
                            model.observation.clone(),
                            &mut stream(config.seed, "reward-init", k as u64),
                        );
                    }
                    let labels = labeled_for_fit(&demos, &tw_params, &config.ablation)?;
                    if !labels.is_empty() {
                        train_on_labels(
                            model,
                            &labels,
                            reward_hyper.epochs,
                            reward_hyper.batch,
                            derive_seed(config.seed, "reward-fit", (k as u64) << 16 | chunk_idx),
                        )?;
                    }
                }
            }
            if let Some(model) = &st.reward {
                if config.relabel_replay {
                    let scorer = model.scorer();
                    st.td3.replay.relabel(scorer, config.reward_on);
                }
                model.save(&out_dir.join(format!("reward_iter{k}.json")))?;
                export_heatmap(&spec, model, config.heatmap_res, &out_dir, k)?;
            }
        }

        // Noise-free evaluation and the convergence short-circuit.
        let stats = evaluate(
            st.td3.actor(),
            &spec,
            config.eval_episodes,
            &rule,
            derive_seed(config.seed, "eval", k as u64),
            config.threads,
        )?;
        let record = EvalRecord { iteration: k, env_steps: st.env_interactions, stats };
        st.eval_history.push(record);
        sinks.eval(&record)?;
        if stats.success_rate >= 0.95 {
            st.consecutive_high += 1;
        } else {
            st.consecutive_high = 0;
        }
        if st.consecutive_high >= 3 {
            st.converged = true;
        }

        save_actor_checkpoint(&st.td3, &out_dir.join(format!("policy_iter{k}.json")))?;
        st.iteration = k;
        fs::write(&state_path, serde_json::to_string(&st)?)?;
    }

    Ok(RunArtifacts {
        out_dir,
        iterations_run: st.iteration,
        converged: st.converged,
        eval_history: st.eval_history,
        demo_counts: (demos.successes().len(), demos.failures().len()),
        env_interactions: st.env_interactions,
    })
}

fn export_heatmap(
    spec: &MazeSpec,
    model: &RewardModel,
    resolution: u32,
    out_dir: &Path,
    iteration: u32,
) -> Result<()> {
    if resolution == 0 {
        return Ok(());
    }
    let goal = spec.cell_center(spec.goal_cells()[0]);
    let scorer = model.scorer();
    let grid = reward_heatmap(spec, scorer, resolution, goal)?;
    let file = fs::File::create(out_dir.join(format!("heatmap_iter{iteration}.csv")))?;
    write_heatmap_csv(&grid, file)?;
    Ok(())
}

/// Generate expert demonstrations with the scripted controller and save them.
pub fn generate_demos(
    spec: &MazeSpec,
    waypoints: &[(usize, usize)],
    n: u32,
    seed: u64,
    path: &Path,
) -> Result<DemoSet> {
    let mut demos = DemoSet::new();
    for i in 0..n {
        let traj =
            crate::maze::scripted_expert(spec, derive_seed(seed, "demo-gen", i as u64), waypoints)?;
        demos.push(traj);
    }
    save_demos(&demos, path)?;
    Ok(demos)
}
