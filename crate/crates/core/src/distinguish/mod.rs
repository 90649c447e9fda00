//! Probing the control state through hit/miss observations.
//!
//! A probe sequence induces a [`Partition`] of candidate initial control
//! states by their observed traces. The submodules search for the finest
//! such partitions ([`preset`], [`adaptive`]), identify a hidden state by
//! destructive elimination ([`identify`]), and look for reset sequences that
//! synchronize every state ([`reset`]).

pub mod adaptive;
pub mod identify;
pub mod preset;
pub mod reset;

use std::collections::{HashSet, VecDeque};

use serde::Serialize;

use crate::error::Result;
use crate::policy::{AccessOutcome, BlockId, CacheSetState, ControlState, PolicyConfig};

pub use adaptive::{best_adaptive_tree, best_adaptive_tree_capped, DistinguishTree};
pub use identify::{
    identify_state, HiddenStateOracle, Identification, IdentifyOptions, IdentifyStats,
    ProbeStrategy, SimulatedOracle,
};
pub use preset::{best_preset_sequence, best_preset_sequence_capped};
pub use reset::{
    find_homing_sequence, find_reset_sequence, synchronized_state, verify_reset_sequence,
};

/// Default bound on simulated (sequence, state) pairs for the searches.
pub const DEFAULT_SEARCH_CAP: u64 = 10_000_000;

/// Content blocks (ascending) followed by `fresh` blocks numbered past the
/// largest content id.
pub fn default_alphabet(content: &[BlockId], fresh: usize) -> Vec<BlockId> {
    let mut alphabet = content.to_vec();
    alphabet.sort_unstable();
    let next = alphabet.last().map_or(0, |b| b.0 + 1);
    alphabet.extend(BlockId::range(next, fresh));
    alphabet
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub trace: Vec<AccessOutcome>,
    pub states: Vec<ControlState>,
}

/// States grouped by the trace a probe sequence produces from them. Cells
/// are ordered by trace; states within a cell by encoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub cells: Vec<Cell>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cell sizes, ascending.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.cells.iter().map(|c| c.states.len()).collect();
        sizes.sort_unstable();
        sizes
    }

    pub fn cell_of(&self, state: &ControlState) -> Option<usize> {
        self.cells.iter().position(|c| c.states.contains(state))
    }

    /// True when every cell of `self` lies inside a single cell of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        self.cells.iter().all(|cell| {
            let first = coarser.cell_of(&cell.states[0]);
            first.is_some() && cell.states.iter().all(|s| coarser.cell_of(s) == first)
        })
    }

    fn from_traces(states: &[ControlState], traces: Vec<Vec<AccessOutcome>>) -> Partition {
        let mut pairs: Vec<(Vec<AccessOutcome>, ControlState)> =
            traces.into_iter().zip(states.iter().cloned()).collect();
        pairs.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| a.1.to_string().cmp(&b.1.to_string()))
        });
        let mut cells: Vec<Cell> = Vec::new();
        for (trace, state) in pairs {
            match cells.last_mut() {
                Some(cell) if cell.trace == trace => cell.states.push(state),
                _ => cells.push(Cell {
                    trace,
                    states: vec![state],
                }),
            }
        }
        Partition { cells }
    }
}

/// Full sets holding `content` with each of `states` as control.
pub(crate) fn initial_configs(
    policy: PolicyConfig,
    content: &[BlockId],
    states: &[ControlState],
) -> Result<Vec<CacheSetState>> {
    states
        .iter()
        .map(|s| CacheSetState::filled(policy, content, s.clone()))
        .collect()
}

/// Groups `states` by the trace that `seq` produces from the set holding
/// `content`. Fresh blocks in `seq` cause real evictions.
pub fn partition_by_sequence(
    policy: PolicyConfig,
    content: &[BlockId],
    states: &[ControlState],
    seq: &[BlockId],
) -> Result<Partition> {
    let traces = initial_configs(policy, content, states)?
        .into_iter()
        .map(|c| c.run_sequence(seq).1)
        .collect();
    Ok(Partition::from_traces(states, traces))
}

pub(crate) fn sorted_distinct(mut configs: Vec<CacheSetState>) -> Vec<CacheSetState> {
    configs.sort_unstable();
    configs.dedup();
    configs
}

/// Shortest sequence over `alphabet` (at most `max_depth` long) on which
/// not all of `configs` produce the same trace, or `None` if they are
/// trace-equivalent up to that depth.
pub fn distinguishing_sequence(
    configs: &[CacheSetState],
    alphabet: &[BlockId],
    max_depth: usize,
) -> Option<Vec<BlockId>> {
    let start = sorted_distinct(configs.to_vec());
    if start.len() <= 1 {
        return None;
    }
    let mut visited: HashSet<Vec<CacheSetState>> = HashSet::new();
    let mut queue = VecDeque::new();
    visited.insert(start.clone());
    queue.push_back((start, Vec::new()));
    while let Some((set, path)) = queue.pop_front() {
        if path.len() >= max_depth {
            continue;
        }
        for &b in alphabet {
            let mut hit = false;
            let mut miss = false;
            let mut next = Vec::with_capacity(set.len());
            for c in &set {
                let (n, o) = c.access(b);
                match o {
                    AccessOutcome::Hit => hit = true,
                    AccessOutcome::Miss => miss = true,
                }
                next.push(n);
            }
            let mut seq = path.clone();
            seq.push(b);
            if hit && miss {
                return Some(seq);
            }
            let next = sorted_distinct(next);
            if next.len() > 1 && visited.insert(next.clone()) {
                queue.push_back((next, seq));
            }
        }
    }
    None
}

/// Whether two configurations agree on every trace up to `max_depth`.
pub fn trace_equivalent(
    a: &CacheSetState,
    b: &CacheSetState,
    alphabet: &[BlockId],
    max_depth: usize,
) -> bool {
    distinguishing_sequence(&[a.clone(), b.clone()], alphabet, max_depth).is_none()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::enumerate_control_states;

    #[test]
    fn fresh_probe_partition_shape() {
        let p = PolicyConfig::plru(4).unwrap();
        let content = BlockId::range(0, 4);
        let states = enumerate_control_states(p).unwrap();
        let seq = [BlockId(4), BlockId(0), BlockId(1), BlockId(2)];
        let part = partition_by_sequence(p, &content, &states, &seq).unwrap();
        assert_eq!(part.len(), 6);
        assert_eq!(part.sizes(), vec![1, 1, 1, 1, 2, 2]);
    }

    #[test]
    fn trivial_partitions() {
        let p = PolicyConfig::plru(4).unwrap();
        let content = BlockId::range(0, 4);
        let states = enumerate_control_states(p).unwrap();
        assert_eq!(
            partition_by_sequence(p, &content, &states, &[])
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            partition_by_sequence(p, &content, &states, &[BlockId(0)])
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn alphabet_adds_fresh_blocks() {
        assert_eq!(
            default_alphabet(&[BlockId(3), BlockId(1)], 2),
            vec![BlockId(1), BlockId(3), BlockId(4), BlockId(5)]
        );
    }

    #[test]
    fn distinct_plru_states_are_distinguishable() {
        let p = PolicyConfig::plru(8).unwrap();
        let content = BlockId::range(0, 8);
        let states = enumerate_control_states(p).unwrap();
        let configs = initial_configs(p, &content, &states[..2]).unwrap();
        let seq = distinguishing_sequence(&configs, &default_alphabet(&content, 1), 16).unwrap();
        let t0 = configs[0].run_sequence(&seq).1;
        let t1 = configs[1].run_sequence(&seq).1;
        assert_ne!(t0, t1);
        assert!(trace_equivalent(&configs[0], &configs[0], &content, 4));
    }
}
