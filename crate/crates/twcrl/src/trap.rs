//! Trap-state analysis for finite MDPs.
//!
//! A trap state is a non-goal state from which every action keeps all
//! transition mass inside the trap set, so the goal is unreachable forever.
//! [`compute_trap_set`] finds the maximal such set by iterative removal;
//! [`brute_force_trap_check`] answers the same question per state by graph
//! search over the support graph and serves as the oracle.

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use std::collections::BTreeSet;

/// Method used to produce a [`TrapReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrapMethod {
    FixedPoint,
    BruteForce,
}

/// Result of a trap-set computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrapReport {
    pub trap_states: BTreeSet<usize>,
    pub iterations: usize,
    pub method: TrapMethod,
}

/// Maximal set `C` of non-goal states with `support(P(.|s,a))` contained in
/// `C` for every `s` in `C` and every action.
///
/// Starts from all non-goal states and repeatedly removes any state with an
/// escaping edge; the fixed point is reached in at most `|S|` sweeps.
pub fn compute_trap_set(mdp: &TabularMdp) -> Result<TrapReport> {
    if mdp.goals.is_empty() {
        return Err(Error::MissingGoals);
    }
    mdp.validate()?;
    let mut in_set = vec![true; mdp.n_states];
    for &g in &mdp.goals {
        in_set[g] = false;
    }
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut changed = false;
        for s in 0..mdp.n_states {
            if !in_set[s] {
                continue;
            }
            let escapes = (0..mdp.n_actions)
                .any(|a| mdp.support(s, a).any(|next| !in_set[next]));
            if escapes {
                in_set[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let trap_states = in_set
        .iter()
        .enumerate()
        .filter(|(_, &keep)| keep)
        .map(|(s, _)| s)
        .collect();
    Ok(TrapReport { trap_states, iterations: sweeps, method: TrapMethod::FixedPoint })
}

/// True iff no goal state is reachable from `s` under any action sequence,
/// decided by breadth-first search over the support graph.
pub fn brute_force_trap_check(mdp: &TabularMdp, s: usize) -> Result<bool> {
    if s >= mdp.n_states {
        return Err(Error::OutOfRange(format!("state {s} >= n_states {}", mdp.n_states)));
    }
    if mdp.goals.is_empty() {
        return Err(Error::MissingGoals);
    }
    if mdp.goals.contains(&s) {
        return Ok(false);
    }
    let mut visited = vec![false; mdp.n_states];
    let mut queue = std::collections::VecDeque::new();
    visited[s] = true;
    queue.push_back(s);
    while let Some(cur) = queue.pop_front() {
        for a in 0..mdp.n_actions {
            for next in mdp.support(cur, a) {
                if mdp.goals.contains(&next) {
                    return Ok(false);
                }
                if !visited[next] {
                    visited[next] = true;
                    queue.push_back(next);
                }
            }
        }
    }
    Ok(true)
}

/// Full brute-force report, for cross-checking the fixed point.
pub fn brute_force_trap_set(mdp: &TabularMdp) -> Result<TrapReport> {
    let mut trap_states = BTreeSet::new();
    for s in 0..mdp.n_states {
        if brute_force_trap_check(mdp, s)? {
            trap_states.insert(s);
        }
    }
    Ok(TrapReport { trap_states, iterations: mdp.n_states, method: TrapMethod::BruteForce })
}
