//! Core domain types: transitions, trajectories, demonstration sets, and
//! finite tabular MDPs.
//!
//! Demonstration sets are stored as JSON lines, one trajectory per line:
//!
//! ```text
//! {"states": [[x,y,..],..], "actions": [[dx,dy],..], "env_rewards": [r,..],
//!  "outcome": "success", "episodic_return": r, "horizon": T}
//! ```
//!
//! with `len(actions) == len(env_rewards) == len(states) - 1`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const ACTION_BOUND_TOL: f64 = 1e-12;

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub env_reward: f64,
    pub step_index: u32,
}

/// Episode outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

/// How an episode gets its outcome label.
#[derive(Clone, Copy)]
pub enum ClassificationRule<'a> {
    /// Success iff the final state satisfies the goal predicate.
    TerminalGoal(&'a (dyn Fn(&[f64]) -> bool + Sync)),
    /// Success iff the episodic return is at least the threshold (inclusive).
    ReturnThreshold(f64),
}

impl std::fmt::Debug for ClassificationRule<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TerminalGoal(_) => write!(f, "TerminalGoal(..)"),
            Self::ReturnThreshold(r) => write!(f, "ReturnThreshold({r})"),
        }
    }
}

/// An ordered state/action sequence with outcome label and episodic return.
///
/// A trajectory of length `n` holds `n` transitions and visits `n + 1` states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    transitions: Vec<Transition>,
    outcome: Outcome,
    episodic_return: f64,
    horizon: u32,
}

impl Trajectory {
    /// Build and validate a trajectory. The episodic return is the sum of the
    /// per-step environment rewards, in step order.
    pub fn new(transitions: Vec<Transition>, outcome: Outcome, horizon: u32) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::InvalidTrajectory("trajectory has no transitions".into()));
        }
        if transitions.len() as u32 > horizon {
            return Err(Error::InvalidTrajectory(format!(
                "length {} exceeds horizon {horizon}",
                transitions.len()
            )));
        }
        let dim = transitions[0].state.len();
        let act_dim = transitions[0].action.len();
        for (i, tr) in transitions.iter().enumerate() {
            if tr.step_index as usize != i {
                return Err(Error::InvalidTrajectory(format!(
                    "step_index {} at position {i}",
                    tr.step_index
                )));
            }
            if tr.state.len() != dim || tr.next_state.len() != dim {
                return Err(Error::InvalidTrajectory("inconsistent state dimension".into()));
            }
            if tr.action.len() != act_dim {
                return Err(Error::InvalidTrajectory("inconsistent action dimension".into()));
            }
            for &a in &tr.action {
                if !(a >= -1.0 - ACTION_BOUND_TOL && a <= 1.0 + ACTION_BOUND_TOL) {
                    return Err(Error::Validation(format!("action component {a} outside [-1, 1]")));
                }
            }
            if i > 0 && transitions[i - 1].next_state != tr.state {
                return Err(Error::InvalidTrajectory(format!("broken state chain at step {i}")));
            }
        }
        let episodic_return = transitions.iter().map(|t| t.env_reward).sum();
        Ok(Self { transitions, outcome, episodic_return, horizon })
    }

    /// Build from raw step arrays: `states` has one more entry than `actions`
    /// and `env_rewards`; the outcome is derived from `rule`.
    pub fn from_steps(
        states: Vec<Vec<f64>>,
        actions: Vec<Vec<f64>>,
        env_rewards: Vec<f64>,
        horizon: u32,
        rule: &ClassificationRule,
    ) -> Result<Self> {
        if states.len() != actions.len() + 1 || actions.len() != env_rewards.len() {
            return Err(Error::InvalidTrajectory(format!(
                "expected len(states) = len(actions) + 1 = len(env_rewards) + 1, got {}/{}/{}",
                states.len(),
                actions.len(),
                env_rewards.len()
            )));
        }
        let transitions: Vec<Transition> = (0..actions.len())
            .map(|i| Transition {
                state: states[i].clone(),
                action: actions[i].clone(),
                next_state: states[i + 1].clone(),
                env_reward: env_rewards[i],
                step_index: i as u32,
            })
            .collect();
        let mut traj = Self::new(transitions, Outcome::Failure, horizon)?;
        traj.outcome = classify_trajectory(&traj, rule)?;
        Ok(traj)
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Number of transitions (actions taken).
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn episodic_return(&self) -> f64 {
        self.episodic_return
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    /// The state visited at step `t`, for `t` in `0..=len()`.
    pub fn state_at(&self, t: usize) -> &[f64] {
        if t < self.transitions.len() {
            &self.transitions[t].state
        } else {
            &self.transitions[self.transitions.len() - 1].next_state
        }
    }

    pub fn final_state(&self) -> &[f64] {
        self.state_at(self.transitions.len())
    }

    /// All visited states `s_0 ..= s_len`.
    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        (0..=self.transitions.len()).map(|t| self.state_at(t))
    }

    fn with_outcome(mut self, outcome: Outcome) -> Self {
        self.outcome = outcome;
        self
    }
}

/// Apply a classification rule to a trajectory.
pub fn classify_trajectory(traj: &Trajectory, rule: &ClassificationRule) -> Result<Outcome> {
    if traj.transitions.is_empty() {
        return Err(Error::InvalidTrajectory("cannot classify an empty trajectory".into()));
    }
    let success = match rule {
        ClassificationRule::TerminalGoal(pred) => pred(traj.final_state()),
        ClassificationRule::ReturnThreshold(r_theta) => traj.episodic_return >= *r_theta,
    };
    Ok(if success { Outcome::Success } else { Outcome::Failure })
}

/// Keep the first `max_len` transitions and re-classify the result.
pub fn truncate_trajectory(
    traj: &Trajectory,
    max_len: u32,
    rule: &ClassificationRule,
) -> Result<Trajectory> {
    if max_len < 1 {
        return Err(Error::InvalidHorizon("truncation length must be >= 1".into()));
    }
    let keep = (max_len as usize).min(traj.transitions.len());
    let mut out =
        Trajectory::new(traj.transitions[..keep].to_vec(), traj.outcome, traj.horizon.min(max_len))?;
    out.outcome = classify_trajectory(&out, rule)?;
    Ok(out)
}

/// Demonstrations split into successes and failures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoSet {
    successes: Vec<Trajectory>,
    failures: Vec<Trajectory>,
}

impl DemoSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// File a trajectory under its outcome label.
    pub fn push(&mut self, traj: Trajectory) {
        match traj.outcome() {
            Outcome::Success => self.successes.push(traj),
            Outcome::Failure => self.failures.push(traj),
        }
    }

    pub fn extend(&mut self, other: DemoSet) {
        self.successes.extend(other.successes);
        self.failures.extend(other.failures);
    }

    pub fn successes(&self) -> &[Trajectory] {
        &self.successes
    }

    pub fn failures(&self) -> &[Trajectory] {
        &self.failures
    }

    pub fn all(&self) -> impl Iterator<Item = &Trajectory> {
        self.successes.iter().chain(self.failures.iter())
    }

    pub fn len(&self) -> usize {
        self.successes.len() + self.failures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of visited states across all trajectories
    /// (each trajectory of length `n` contributes `n + 1` states).
    pub fn total_states(&self) -> usize {
        self.all().map(|t| t.len() + 1).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct DemoRecord {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    env_rewards: Vec<f64>,
    outcome: Outcome,
    episodic_return: f64,
    horizon: u32,
}

/// Write a demo set as JSON lines (successes first, then failures).
pub fn write_demos<W: Write>(demos: &DemoSet, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for traj in demos.all() {
        write_demo_line(traj, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn write_demo_line<W: Write>(traj: &Trajectory, w: &mut W) -> Result<()> {
    let record = DemoRecord {
        states: traj.states().map(|s| s.to_vec()).collect(),
        actions: traj.transitions().iter().map(|t| t.action.clone()).collect(),
        env_rewards: traj.transitions().iter().map(|t| t.env_reward).collect(),
        outcome: traj.outcome(),
        episodic_return: traj.episodic_return(),
        horizon: traj.horizon(),
    };
    serde_json::to_writer(&mut *w, &record)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Append trajectories to an existing demo file.
pub fn append_demos(demos: &DemoSet, path: &Path) -> Result<()> {
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(file);
    for traj in demos.all() {
        write_demo_line(traj, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_demos(demos: &DemoSet, path: &Path) -> Result<()> {
    write_demos(demos, std::fs::File::create(path)?)
}

/// Read a demo set, validating structure: array lengths, action bounds, the
/// state chain, and that the stored episodic return equals the reward sum.
pub fn read_demos<R: Read>(reader: R) -> Result<DemoSet> {
    let mut demos = DemoSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DemoRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: idx + 1, msg: e.to_string() })?;
        let traj = record_to_trajectory(record, idx + 1)?;
        demos.push(traj);
    }
    Ok(demos)
}

fn record_to_trajectory(record: DemoRecord, line: usize) -> Result<Trajectory> {
    if record.states.len() != record.actions.len() + 1
        || record.actions.len() != record.env_rewards.len()
    {
        return Err(Error::Parse {
            line,
            msg: format!(
                "expected len(states) = len(actions) + 1 = len(env_rewards) + 1, got {}/{}/{}",
                record.states.len(),
                record.actions.len(),
                record.env_rewards.len()
            ),
        });
    }
    let n = record.actions.len();
    let transitions: Vec<Transition> = (0..n)
        .map(|i| Transition {
            state: record.states[i].clone(),
            action: record.actions[i].clone(),
            next_state: record.states[i + 1].clone(),
            env_reward: record.env_rewards[i],
            step_index: i as u32,
        })
        .collect();
    let traj = Trajectory::new(transitions, record.outcome, record.horizon)
        .map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
    let sum: f64 = record.env_rewards.iter().sum();
    if sum != record.episodic_return {
        return Err(Error::Validation(format!(
            "line {line}: episodic_return {} does not equal reward sum {sum}",
            record.episodic_return
        )));
    }
    Ok(traj)
}

pub fn load_demos(path: &Path) -> Result<DemoSet> {
    read_demos(std::fs::File::open(path)?)
}

/// Load and additionally re-derive each outcome with `rule`, rejecting any
/// trajectory whose stored label disagrees.
pub fn load_demos_checked(path: &Path, rule: &ClassificationRule) -> Result<DemoSet> {
    let demos = load_demos(path)?;
    for (i, traj) in demos.all().enumerate() {
        let derived = classify_trajectory(traj, rule)?;
        if derived != traj.outcome() {
            return Err(Error::Validation(format!(
                "trajectory {i}: stored outcome {:?} but rule derives {derived:?}",
                traj.outcome()
            )));
        }
    }
    Ok(demos)
}

/// Flip every outcome label (used by label-symmetry tests and ablations).
pub fn swap_outcomes(demos: &DemoSet) -> DemoSet {
    let mut out = DemoSet::new();
    for traj in demos.successes() {
        out.push(traj.clone().with_outcome(Outcome::Failure));
    }
    for traj in demos.failures() {
        out.push(traj.clone().with_outcome(Outcome::Success));
    }
    out
}

/// Finite MDP: `transitions[s][a]` is a probability vector over next states.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub goals: BTreeSet<usize>,
    pub initial_dist: Vec<f64>,
}

const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Serialize, Deserialize)]
struct TabularMdpRecord {
    n_states: usize,
    n_actions: usize,
    goals: Vec<usize>,
    transitions: Vec<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_dist: Option<Vec<f64>>,
}

impl TabularMdp {
    pub fn new(
        transitions: Vec<Vec<Vec<f64>>>,
        goals: impl IntoIterator<Item = usize>,
        initial_dist: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n_states = transitions.len();
        if n_states == 0 {
            return Err(Error::Validation("MDP must have at least one state".into()));
        }
        let n_actions = transitions[0].len();
        if n_actions == 0 {
            return Err(Error::Validation("MDP must have at least one action".into()));
        }
        let initial_dist =
            initial_dist.unwrap_or_else(|| vec![1.0 / n_states as f64; n_states]);
        let mdp = Self {
            n_states,
            n_actions,
            transitions,
            goals: goals.into_iter().collect(),
            initial_dist,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.transitions.len() != self.n_states {
            return Err(Error::Validation("transition table row count mismatch".into()));
        }
        for (s, per_action) in self.transitions.iter().enumerate() {
            if per_action.len() != self.n_actions {
                return Err(Error::Validation(format!("state {s}: action count mismatch")));
            }
            for (a, probs) in per_action.iter().enumerate() {
                if probs.len() != self.n_states {
                    return Err(Error::Validation(format!("({s},{a}): probability vector length")));
                }
                if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(Error::Validation(format!("({s},{a}): probability outside [0,1]")));
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    return Err(Error::Validation(format!("({s},{a}): probabilities sum to {sum}")));
                }
            }
        }
        for &g in &self.goals {
            if g >= self.n_states {
                return Err(Error::Validation(format!("goal state {g} out of range")));
            }
        }
        let init_sum: f64 = self.initial_dist.iter().sum();
        if self.initial_dist.len() != self.n_states || (init_sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Validation("initial distribution invalid".into()));
        }
        Ok(())
    }

    /// States reachable in one step from `(s, a)` with positive probability.
    pub fn support(&self, s: usize, a: usize) -> impl Iterator<Item = usize> + '_ {
        self.transitions[s][a]
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
    }

    /// Sample a successor state.
    pub fn sample_next<R: rand::Rng>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in self.transitions[s][a].iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.n_states - 1
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: TabularMdpRecord = serde_json::from_str(text)?;
        if record.transitions.len() != record.n_states
            || record.transitions.iter().any(|row| row.len() != record.n_actions)
        {
            return Err(Error::Validation("declared sizes disagree with transition table".into()));
        }
        Self::new(record.transitions, record.goals, record.initial_dist)
    }

    pub fn to_json(&self) -> String {
        let record = TabularMdpRecord {
            n_states: self.n_states,
            n_actions: self.n_actions,
            goals: self.goals.iter().copied().collect(),
            transitions: self.transitions.clone(),
            initial_dist: Some(self.initial_dist.clone()),
        };
        serde_json::to_string_pretty(&record).expect("serializing a validated MDP")
    }

    /// Random MDP generator used by oracle-equivalence tests: each `(s, a)` is
    /// deterministic with probability 1/2, otherwise stochastic over a small
    /// random support. Goal set is a random non-empty subset.
    pub fn random<R: rand::Rng>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        assert!(n_states >= 2);
        let mut transitions = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
        for s in 0..n_states {
            for a in 0..n_actions {
                if rng.gen_bool(0.5) {
                    let target = rng.gen_range(0..n_states);
                    transitions[s][a][target] = 1.0;
                } else {
                    let support = rng.gen_range(2..=3.min(n_states));
                    let mut weights = vec![0.0; support];
                    let mut total = 0.0;
                    for w in weights.iter_mut() {
                        *w = rng.gen_range(0.1..1.0);
                        total += *w;
                    }
                    for (i, w) in weights.iter().enumerate() {
                        let target = (rng.gen_range(0..n_states) + i) % n_states;
                        transitions[s][a][target] += w / total;
                    }
                    // Renormalize exactly in case two draws hit the same target.
                    let sum: f64 = transitions[s][a].iter().sum();
                    for p in transitions[s][a].iter_mut() {
                        *p /= sum;
                    }
                }
            }
        }
        let n_goals = rng.gen_range(1..=2.min(n_states - 1));
        let mut goals = BTreeSet::new();
        while goals.len() < n_goals {
            goals.insert(rng.gen_range(0..n_states));
        }
        Self::new(transitions, goals, None).expect("generated MDP is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_traj(rewards: &[f64], outcome: Outcome, horizon: u32) -> Trajectory {
        let transitions: Vec<Transition> = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| Transition {
                state: vec![i as f64],
                action: vec![0.5],
                next_state: vec![(i + 1) as f64],
                env_reward: r,
                step_index: i as u32,
            })
            .collect();
        Trajectory::new(transitions, outcome, horizon).unwrap()
    }

    #[test]
    fn threshold_rule_is_inclusive() {
        let traj = unit_traj(&[2.0, 3.0], Outcome::Success, 10);
        assert_eq!(traj.episodic_return(), 5.0);
        let rule = ClassificationRule::ReturnThreshold(5.0);
        assert_eq!(classify_trajectory(&traj, &rule).unwrap(), Outcome::Success);
        let rule = ClassificationRule::ReturnThreshold(5.01);
        assert_eq!(classify_trajectory(&traj, &rule).unwrap(), Outcome::Failure);
    }

    #[test]
    fn terminal_goal_rule_checks_final_state() {
        let traj = unit_traj(&[0.0, 0.0, 0.0], Outcome::Failure, 10);
        let in_goal = ClassificationRule::TerminalGoal(&|s: &[f64]| s[0] >= 3.0);
        assert_eq!(classify_trajectory(&traj, &in_goal).unwrap(), Outcome::Success);
        let not_goal = ClassificationRule::TerminalGoal(&|s: &[f64]| s[0] >= 4.0);
        assert_eq!(classify_trajectory(&traj, &not_goal).unwrap(), Outcome::Failure);
    }

    #[test]
    fn empty_trajectory_rejected() {
        assert!(matches!(
            Trajectory::new(vec![], Outcome::Success, 10),
            Err(Error::InvalidTrajectory(_))
        ));
    }

    #[test]
    fn truncation_prefix_and_min_rule() {
        let traj = unit_traj(&[1.0; 30], Outcome::Success, 30);
        let rule = ClassificationRule::ReturnThreshold(10.0);
        let same = truncate_trajectory(&traj, 30, &rule).unwrap();
        assert_eq!(same.len(), 30);
        assert_eq!(same.transitions(), traj.transitions());
        let cut = truncate_trajectory(&traj, 10, &rule).unwrap();
        assert_eq!(cut.len(), 10);
        assert_eq!(cut.episodic_return(), 10.0);
        assert_eq!(cut.outcome(), Outcome::Success);
        let shorter = truncate_trajectory(&traj, 100, &rule).unwrap();
        assert_eq!(shorter.len(), 30);
        assert!(matches!(truncate_trajectory(&traj, 0, &rule), Err(Error::InvalidHorizon(_))));
    }

    #[test]
    fn truncation_is_idempotent() {
        let traj = unit_traj(&[1.0; 25], Outcome::Success, 25);
        let rule = ClassificationRule::ReturnThreshold(7.0);
        let once = truncate_trajectory(&traj, 7, &rule).unwrap();
        let twice = truncate_trajectory(&once, 7, &rule).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn truncation_reclassifies() {
        let traj = unit_traj(&[1.0; 20], Outcome::Success, 20);
        let rule = ClassificationRule::ReturnThreshold(15.0);
        assert_eq!(classify_trajectory(&traj, &rule).unwrap(), Outcome::Success);
        let cut = truncate_trajectory(&traj, 5, &rule).unwrap();
        assert_eq!(cut.outcome(), Outcome::Failure);
    }

    #[test]
    fn action_bound_enforced() {
        let t = Transition {
            state: vec![0.0],
            action: vec![1.5],
            next_state: vec![1.0],
            env_reward: 0.0,
            step_index: 0,
        };
        assert!(matches!(Trajectory::new(vec![t], Outcome::Failure, 5), Err(Error::Validation(_))));
    }

    #[test]
    fn jsonl_round_trip_and_validation() {
        let mut demos = DemoSet::new();
        demos.push(unit_traj(&[1.0, 0.0], Outcome::Success, 5));
        demos.push(unit_traj(&[0.0], Outcome::Failure, 5));
        let mut buf = Vec::new();
        write_demos(&demos, &mut buf).unwrap();
        let back = read_demos(buf.as_slice()).unwrap();
        assert_eq!(demos, back);

        // Empty input is an empty demo set.
        assert!(read_demos(&b""[..]).unwrap().is_empty());

        // Action bound violations are rejected with a validation error.
        let bad = br#"{"states":[[0.0],[1.0]],"actions":[[1.5]],"env_rewards":[0.0],"outcome":"failure","episodic_return":0.0,"horizon":5}"#;
        assert!(matches!(read_demos(&bad[..]), Err(Error::Validation(_))));

        // Malformed JSON reports the line number.
        let garbled = b"{\"states\": oops\n";
        match read_demos(&garbled[..]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }

        // Stored return must match the reward sum.
        let skewed = br#"{"states":[[0.0],[1.0]],"actions":[[0.1]],"env_rewards":[1.0],"outcome":"success","episodic_return":2.0,"horizon":5}"#;
        assert!(matches!(read_demos(&skewed[..]), Err(Error::Validation(_))));
    }

    #[test]
    fn checked_load_rejects_outcome_mismatch() {
        let mut demos = DemoSet::new();
        demos.push(unit_traj(&[0.0, 0.0], Outcome::Success, 5));
        let dir = std::env::temp_dir().join(format!("twcrl-mdp-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("demos.jsonl");
        save_demos(&demos, &path).unwrap();
        let rule = ClassificationRule::ReturnThreshold(1.0);
        assert!(matches!(load_demos_checked(&path, &rule), Err(Error::Validation(_))));
        let rule_ok = ClassificationRule::ReturnThreshold(0.0);
        assert_eq!(load_demos_checked(&path, &rule_ok).unwrap(), demos);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn demo_set_partitions_and_counts_states() {
        let mut demos = DemoSet::new();
        demos.push(unit_traj(&[1.0], Outcome::Success, 5));
        demos.push(unit_traj(&[0.0, 0.0], Outcome::Failure, 5));
        assert_eq!(demos.successes().len(), 1);
        assert_eq!(demos.failures().len(), 1);
        assert_eq!(demos.total_states(), 2 + 3);
    }

    #[test]
    fn tabular_mdp_json_round_trip() {
        let mdp = TabularMdp::new(
            vec![
                vec![vec![0.0, 1.0, 0.0]],
                vec![vec![0.0, 1.0, 0.0]],
                vec![vec![0.0, 0.0, 1.0]],
            ],
            [2],
            None,
        )
        .unwrap();
        let back = TabularMdp::from_json(&mdp.to_json()).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn tabular_mdp_validation() {
        // Probabilities must sum to one.
        let bad = TabularMdp::new(vec![vec![vec![0.5, 0.4]], vec![vec![0.0, 1.0]]], [1], None);
        assert!(bad.is_err());
        // Goal index must be in range.
        let bad = TabularMdp::new(vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]], [7], None);
        assert!(bad.is_err());
    }
}
