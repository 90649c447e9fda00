//! Exhaustive search for the preset (non-adaptive) probe sequence that
//! induces the finest partition.

use std::cmp::Ordering;

use super::{initial_configs, partition_by_sequence, Partition, DEFAULT_SEARCH_CAP};
use crate::error::{Error, Result};
use crate::policy::{AccessOutcome, BlockId, CacheSetState, ControlState, PolicyConfig};

pub fn best_preset_sequence(
    policy: PolicyConfig,
    content: &[BlockId],
    states: &[ControlState],
    alphabet: &[BlockId],
    max_len: usize,
) -> Result<(Vec<BlockId>, Partition)> {
    best_preset_sequence_capped(
        policy,
        content,
        states,
        alphabet,
        max_len,
        DEFAULT_SEARCH_CAP,
    )
}

/// Returns the sequence of length `1..=max_len` maximizing the number of
/// cells; ties go to the shorter, then lexicographically smaller sequence.
/// `cap` bounds the number of simulated (prefix, state) steps.
pub fn best_preset_sequence_capped(
    policy: PolicyConfig,
    content: &[BlockId],
    states: &[ControlState],
    alphabet: &[BlockId],
    max_len: usize,
    cap: u64,
) -> Result<(Vec<BlockId>, Partition)> {
    let mut alphabet = alphabet.to_vec();
    alphabet.sort_unstable();
    alphabet.dedup();
    let configs = initial_configs(policy, content, states)?;
    let mut search = Search {
        alphabet,
        max_len,
        cap,
        steps: 0,
        best: Best {
            cells: 1,
            seq: Vec::new(),
        },
        found_any: false,
    };
    let labels = vec![0u32; configs.len()];
    let mut prefix = Vec::with_capacity(max_len);
    if max_len > 0 && configs.len() > 1 {
        search.descend(&configs, &labels, 1, &mut prefix)?;
    }
    let seq = search.best.seq;
    let partition = partition_by_sequence(policy, content, states, &seq)?;
    Ok((seq, partition))
}

struct Best {
    cells: usize,
    seq: Vec<BlockId>,
}

struct Search {
    alphabet: Vec<BlockId>,
    max_len: usize,
    cap: u64,
    steps: u64,
    best: Best,
    found_any: bool,
}

impl Search {
    fn consider(&mut self, cells: usize, seq: &[BlockId]) {
        let better = if !self.found_any {
            true
        } else {
            match cells.cmp(&self.best.cells) {
                Ordering::Greater => true,
                Ordering::Less => false,
                // Preorder visits sequences in lexicographic order, so an
                // equal-length tie never displaces the earlier one.
                Ordering::Equal => seq.len() < self.best.seq.len(),
            }
        };
        if better {
            self.found_any = true;
            self.best = Best {
                cells,
                seq: seq.to_vec(),
            };
        }
    }

    fn descend(
        &mut self,
        configs: &[CacheSetState],
        labels: &[u32],
        cells: usize,
        prefix: &mut Vec<BlockId>,
    ) -> Result<()> {
        for i in 0..self.alphabet.len() {
            let block = self.alphabet[i];
            self.steps += configs.len() as u64;
            if self.steps > self.cap {
                return Err(Error::SearchCapExceeded { cap: self.cap });
            }
            let mut next = Vec::with_capacity(configs.len());
            let mut raw = Vec::with_capacity(configs.len());
            for (c, &l) in configs.iter().zip(labels) {
                let (n, o) = c.access(block);
                raw.push(l * 2 + u32::from(o == AccessOutcome::Miss));
                next.push(n);
            }
            let (next_labels, next_cells) = compact(&raw, cells * 2);
            prefix.push(block);
            self.consider(next_cells, prefix);

            let remaining = self.max_len - prefix.len();
            if remaining > 0 {
                let bound = upper_bound(&next, &next_labels, next_cells, remaining);
                let worth = bound > self.best.cells
                    || (bound == self.best.cells && prefix.len() + 1 < self.best.seq.len());
                if worth && refinable(&next, &next_labels) {
                    self.descend(&next, &next_labels, next_cells, prefix)?;
                }
            }
            prefix.pop();
        }
        Ok(())
    }
}

fn compact(raw: &[u32], range: usize) -> (Vec<u32>, usize) {
    let mut map = vec![u32::MAX; range];
    let mut next_id = 0u32;
    let labels = raw
        .iter()
        .map(|&r| {
            let slot = &mut map[r as usize];
            if *slot == u32::MAX {
                *slot = next_id;
                next_id += 1;
            }
            *slot
        })
        .collect();
    (labels, next_id as usize)
}

/// Some cell holds two different configurations, so a longer sequence might
/// still split it.
fn refinable(configs: &[CacheSetState], labels: &[u32]) -> bool {
    let mut pairs: Vec<(u32, &CacheSetState)> = labels.iter().copied().zip(configs).collect();
    pairs.sort_unstable();
    pairs
        .windows(2)
        .any(|w| w[0].0 == w[1].0 && w[0].1 != w[1].1)
}

fn upper_bound(configs: &[CacheSetState], labels: &[u32], cells: usize, remaining: usize) -> usize {
    let mut pairs: Vec<(u32, &CacheSetState)> = labels.iter().copied().zip(configs).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let growth = cells.saturating_mul(1usize.checked_shl(remaining as u32).unwrap_or(usize::MAX));
    pairs.len().min(growth)
}
