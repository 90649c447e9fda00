//! Reset (synchronizing) sequences over hits to resident blocks.

use std::collections::{HashSet, VecDeque};

use super::{initial_configs, sorted_distinct};
use crate::error::{Error, Result};
use crate::policy::{enumerate_control_states, BlockId, CacheSetState, ControlState, PolicyConfig};

fn check_resident(content: &[BlockId], seq: &[BlockId]) -> Result<()> {
    match seq.iter().find(|b| !content.contains(b)) {
        Some(b) => Err(Error::InvalidContent(format!(
            "{b} is not resident; reset sequences only hit resident blocks"
        ))),
        None => Ok(()),
    }
}

/// The control state every valid initial state converges to under `seq`,
/// or `None` if they do not all converge.
pub fn synchronized_state(
    policy: PolicyConfig,
    content: &[BlockId],
    seq: &[BlockId],
) -> Result<Option<ControlState>> {
    check_resident(content, seq)?;
    let states = enumerate_control_states(policy)?;
    let mut ends = initial_configs(policy, content, &states)?
        .into_iter()
        .map(|c| c.run_sequence(seq).0.control().clone());
    let first = ends.next().expect("at least one control state");
    Ok(if ends.all(|e| e == first) {
        Some(first)
    } else {
        None
    })
}

pub fn verify_reset_sequence(
    policy: PolicyConfig,
    content: &[BlockId],
    seq: &[BlockId],
) -> Result<bool> {
    Ok(synchronized_state(policy, content, seq)?.is_some())
}

/// Shortest hit-only sequence (lexicographically least among the shortest)
/// that synchronizes every valid control state.
pub fn find_reset_sequence(
    policy: PolicyConfig,
    content: &[BlockId],
    max_len: usize,
) -> Result<Option<Vec<BlockId>>> {
    subset_search(policy, content, max_len, |set| set.len() == 1)
}

/// Shortest hit-only sequence driving every valid control state to `target`.
pub fn find_homing_sequence(
    policy: PolicyConfig,
    content: &[BlockId],
    target: &ControlState,
    max_len: usize,
) -> Result<Option<Vec<BlockId>>> {
    subset_search(policy, content, max_len, |set| {
        set.len() == 1 && set[0].control() == target
    })
}

fn subset_search(
    policy: PolicyConfig,
    content: &[BlockId],
    max_len: usize,
    goal: impl Fn(&[CacheSetState]) -> bool,
) -> Result<Option<Vec<BlockId>>> {
    let states = enumerate_control_states(policy)?;
    let start = sorted_distinct(initial_configs(policy, content, &states)?);
    if goal(&start) {
        return Ok(Some(Vec::new()));
    }
    let mut alphabet = content.to_vec();
    alphabet.sort_unstable();
    let mut visited: HashSet<Vec<CacheSetState>> = HashSet::new();
    let mut queue = VecDeque::new();
    visited.insert(start.clone());
    queue.push_back((start, Vec::new()));
    while let Some((set, path)) = queue.pop_front() {
        if path.len() >= max_len {
            continue;
        }
        for &b in &alphabet {
            let next = sorted_distinct(set.iter().map(|c| c.access(b).0).collect());
            let mut seq: Vec<BlockId> = path.clone();
            seq.push(b);
            if goal(&next) {
                return Ok(Some(seq));
            }
            if visited.insert(next.clone()) {
                queue.push_back((next, seq));
            }
        }
    }
    Ok(None)
}
