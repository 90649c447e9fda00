//! Exact search for adaptive probing strategies.
//!
//! A node is characterized by the distinct current configurations of its
//! candidate states: states whose configurations coincide can never be
//! separated again. The value of a node is the largest number of leaves any
//! strategy reaches within the remaining depth.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::{initial_configs, sorted_distinct, DEFAULT_SEARCH_CAP};
use crate::error::{Error, Result};
use crate::policy::{AccessOutcome, BlockId, CacheSetState, ControlState, PolicyConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum DistinguishTree {
    Leaf {
        states: Vec<ControlState>,
    },
    Inner {
        states: Vec<ControlState>,
        access: BlockId,
        #[serde(skip_serializing_if = "Option::is_none")]
        on_hit: Option<Box<DistinguishTree>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        on_miss: Option<Box<DistinguishTree>>,
    },
}

impl DistinguishTree {
    pub fn states(&self) -> &[ControlState] {
        match self {
            DistinguishTree::Leaf { states } | DistinguishTree::Inner { states, .. } => states,
        }
    }

    pub fn leaves(&self) -> Vec<&[ControlState]> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a [ControlState]>) {
        match self {
            DistinguishTree::Leaf { states } => out.push(states),
            DistinguishTree::Inner {
                on_hit, on_miss, ..
            } => {
                for child in [on_hit, on_miss].into_iter().flatten() {
                    child.collect_leaves(out);
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn depth(&self) -> usize {
        match self {
            DistinguishTree::Leaf { .. } => 0,
            DistinguishTree::Inner {
                on_hit, on_miss, ..
            } => {
                1 + [on_hit, on_miss]
                    .into_iter()
                    .flatten()
                    .map(|c| c.depth())
                    .max()
                    .unwrap_or(0)
            }
        }
    }

    /// Leaf sizes, ascending.
    pub fn leaf_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.leaves().iter().map(|l| l.len()).collect();
        sizes.sort_unstable();
        sizes
    }

    /// Indented rendering: inner nodes show their access, edges are `H`/`M`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out, 0, None);
        out
    }

    fn render_into(&self, out: &mut String, indent: usize, edge: Option<char>) {
        let pad = "  ".repeat(indent);
        let label = edge.map(|e| format!("{e}: ")).unwrap_or_default();
        let set = format!(
            "{{{}}}",
            self.states()
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        );
        match self {
            DistinguishTree::Leaf { .. } => {
                let _ = writeln!(out, "{pad}{label}{set}");
            }
            DistinguishTree::Inner {
                access,
                on_hit,
                on_miss,
                ..
            } => {
                let _ = writeln!(out, "{pad}{label}{set} ? {access}");
                if let Some(c) = on_hit {
                    c.render_into(out, indent + 1, Some('H'));
                }
                if let Some(c) = on_miss {
                    c.render_into(out, indent + 1, Some('M'));
                }
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }
}

pub fn best_adaptive_tree(
    policy: PolicyConfig,
    content: &[BlockId],
    states: &[ControlState],
    alphabet: &[BlockId],
    max_depth: usize,
) -> Result<DistinguishTree> {
    best_adaptive_tree_capped(
        policy,
        content,
        states,
        alphabet,
        max_depth,
        DEFAULT_SEARCH_CAP,
    )
}

/// Builds a tree of depth at most `max_depth` with the largest possible
/// number of leaves. At every node the first access (in ascending block
/// order) achieving the optimum is chosen; nodes that cannot be split
/// become leaves.
pub fn best_adaptive_tree_capped(
    policy: PolicyConfig,
    content: &[BlockId],
    states: &[ControlState],
    alphabet: &[BlockId],
    max_depth: usize,
    cap: u64,
) -> Result<DistinguishTree> {
    let mut alphabet = alphabet.to_vec();
    alphabet.sort_unstable();
    alphabet.dedup();
    let configs = initial_configs(policy, content, states)?;
    let members: Vec<(ControlState, CacheSetState)> = states.iter().cloned().zip(configs).collect();
    let mut search = Solver {
        alphabet,
        memo: HashMap::new(),
        steps: 0,
        cap,
    };
    search.build(members, max_depth)
}

struct Solver {
    alphabet: Vec<BlockId>,
    memo: HashMap<(Vec<CacheSetState>, usize), usize>,
    steps: u64,
    cap: u64,
}

type Split = (Vec<CacheSetState>, Vec<CacheSetState>);

impl Solver {
    fn split(&mut self, configs: &[CacheSetState], block: BlockId) -> Result<Split> {
        self.steps += configs.len() as u64;
        if self.steps > self.cap {
            return Err(Error::SearchCapExceeded { cap: self.cap });
        }
        let mut hit = Vec::new();
        let mut miss = Vec::new();
        for c in configs {
            let (n, o) = c.access(block);
            match o {
                AccessOutcome::Hit => hit.push(n),
                AccessOutcome::Miss => miss.push(n),
            }
        }
        Ok((sorted_distinct(hit), sorted_distinct(miss)))
    }

    fn value_after(
        &mut self,
        configs: &[CacheSetState],
        block: BlockId,
        depth: usize,
    ) -> Result<usize> {
        let (hit, miss) = self.split(configs, block)?;
        let mut v = 0;
        if !hit.is_empty() {
            v += self.value(&hit, depth - 1)?;
        }
        if !miss.is_empty() {
            v += self.value(&miss, depth - 1)?;
        }
        Ok(v)
    }

    /// `configs` must be sorted and distinct.
    fn value(&mut self, configs: &[CacheSetState], depth: usize) -> Result<usize> {
        if depth == 0 || configs.len() <= 1 {
            return Ok(1);
        }
        let key = (configs.to_vec(), depth);
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let mut best = 1;
        for i in 0..self.alphabet.len() {
            let v = self.value_after(configs, self.alphabet[i], depth)?;
            if v > best {
                best = v;
                if best == configs.len() {
                    break;
                }
            }
        }
        self.memo.insert(key, best);
        Ok(best)
    }

    fn build(
        &mut self,
        members: Vec<(ControlState, CacheSetState)>,
        depth: usize,
    ) -> Result<DistinguishTree> {
        let mut states: Vec<ControlState> = members.iter().map(|(s, _)| s.clone()).collect();
        states.sort_by_key(|s| s.to_string());
        let distinct = sorted_distinct(members.iter().map(|(_, c)| c.clone()).collect());
        let target = self.value(&distinct, depth)?;
        if target <= 1 {
            return Ok(DistinguishTree::Leaf { states });
        }
        for i in 0..self.alphabet.len() {
            let block = self.alphabet[i];
            if self.value_after(&distinct, block, depth)? != target {
                continue;
            }
            let mut hit = Vec::new();
            let mut miss = Vec::new();
            for (s, c) in members {
                let (n, o) = c.access(block);
                match o {
                    AccessOutcome::Hit => hit.push((s, n)),
                    AccessOutcome::Miss => miss.push((s, n)),
                }
            }
            let on_hit = if hit.is_empty() {
                None
            } else {
                Some(Box::new(self.build(hit, depth - 1)?))
            };
            let on_miss = if miss.is_empty() {
                None
            } else {
                Some(Box::new(self.build(miss, depth - 1)?))
            };
            return Ok(DistinguishTree::Inner {
                states,
                access: block,
                on_hit,
                on_miss,
            });
        }
        Err(Error::Invariant(
            "no access attains the memoized node value".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distinguish::{best_preset_sequence, default_alphabet};
    use crate::policy::enumerate_control_states;

    #[test]
    fn plru4_matches_preset() {
        let p = PolicyConfig::plru(4).unwrap();
        let content = BlockId::range(0, 4);
        let states = enumerate_control_states(p).unwrap();
        let alphabet = default_alphabet(&content, 1);
        let tree = best_adaptive_tree(p, &content, &states, &alphabet, 4).unwrap();
        assert_eq!(tree.leaf_count(), 6);
        assert!(tree.depth() <= 4);
        let (_, part) = best_preset_sequence(p, &content, &states, &alphabet, 4).unwrap();
        assert_eq!(part.len(), tree.leaf_count());
    }

    #[test]
    fn depth_zero_is_a_leaf() {
        let p = PolicyConfig::plru(4).unwrap();
        let content = BlockId::range(0, 4);
        let states = enumerate_control_states(p).unwrap();
        let tree =
            best_adaptive_tree(p, &content, &states, &default_alphabet(&content, 1), 0).unwrap();
        assert_eq!(
            tree,
            DistinguishTree::Leaf {
                states: states.clone()
            }
        );
    }

    #[test]
    fn leaves_partition_the_input() {
        let p = PolicyConfig::qlru(4).unwrap();
        let content = BlockId::range(0, 4);
        let states = enumerate_control_states(p).unwrap();
        let tree =
            best_adaptive_tree(p, &content, &states, &default_alphabet(&content, 1), 3).unwrap();
        let mut all: Vec<ControlState> = tree.leaves().concat();
        all.sort();
        let mut expected = states.clone();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn renders_text_and_json() {
        let p = PolicyConfig::plru(2).unwrap();
        let content = BlockId::range(0, 2);
        let states = enumerate_control_states(p).unwrap();
        let tree =
            best_adaptive_tree(p, &content, &states, &default_alphabet(&content, 1), 2).unwrap();
        let text = tree.render_text();
        assert!(
            text.starts_with("{0 1} ? I0") || text.contains("? I2"),
            "{text}"
        );
        let json: serde_json::Value = serde_json::from_str(&tree.to_json()).unwrap();
        assert_eq!(json["node"], "inner");
    }
}
