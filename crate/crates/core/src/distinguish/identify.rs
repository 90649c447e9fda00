//! Identifying a hidden control state through destructive probing.
//!
//! Every access mutates the probed set, so once the candidates' simulated
//! futures collapse the session is useless and the oracle has to re-establish
//! the hidden state. Eliminated candidates stay eliminated across sessions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{default_alphabet, distinguishing_sequence, initial_configs, sorted_distinct};
use crate::error::{Error, Result};
use crate::policy::{
    enumerate_control_states, AccessOutcome, BlockId, CacheSetState, ControlState, PolicyConfig,
};

/// Black-box access to a set whose initial control state is unknown.
pub trait HiddenStateOracle {
    /// Re-establishes the same hidden state on the canonically filled set.
    fn reset_to_hidden(&mut self);
    fn access(&mut self, block: BlockId) -> AccessOutcome;
    fn resets(&self) -> usize;
    fn queries(&self) -> usize;
}

/// Oracle backed by the simulator, seeded with a known hidden state.
#[derive(Clone, Debug)]
pub struct SimulatedOracle {
    hidden: CacheSetState,
    current: CacheSetState,
    resets: usize,
    queries: usize,
}

impl SimulatedOracle {
    pub fn new(policy: PolicyConfig, content: &[BlockId], hidden: ControlState) -> Result<Self> {
        let hidden = CacheSetState::filled(policy, content, hidden)?;
        Ok(SimulatedOracle {
            current: hidden.clone(),
            hidden,
            resets: 0,
            queries: 0,
        })
    }

    pub fn hidden(&self) -> &ControlState {
        self.hidden.control()
    }
}

impl HiddenStateOracle for SimulatedOracle {
    fn reset_to_hidden(&mut self) {
        self.current = self.hidden.clone();
        self.resets += 1;
    }

    fn access(&mut self, block: BlockId) -> AccessOutcome {
        self.queries += 1;
        self.current.access_mut(block)
    }

    fn resets(&self) -> usize {
        self.resets
    }

    fn queries(&self) -> usize {
        self.queries
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeStrategy {
    /// Uniformly random accesses from the alphabet.
    Random,
    /// The access that splits the candidates most evenly; when no single
    /// access splits them, the first step of a shortest splitting sequence.
    Adaptive,
}

#[derive(Clone, Debug)]
pub struct IdentifyOptions {
    pub strategy: ProbeStrategy,
    pub seed: u64,
    /// Probe alphabet; defaults to the content plus one fresh block.
    pub alphabet: Option<Vec<BlockId>>,
    /// Depth up to which candidates must be trace-equivalent to be reported
    /// together; defaults to twice the associativity.
    pub exploration_depth: Option<usize>,
    /// Initial candidate set; defaults to every valid control state.
    pub candidates: Option<Vec<ControlState>>,
    pub max_queries: usize,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            strategy: ProbeStrategy::Adaptive,
            seed: 0,
            alphabet: None,
            exploration_depth: None,
            candidates: None,
            max_queries: 1_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IdentifyStats {
    pub resets: usize,
    pub queries: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Identification {
    /// Lexicographically least encoding among the surviving candidates.
    pub state: ControlState,
    /// All surviving candidates; pairwise trace-equivalent.
    pub class: Vec<ControlState>,
    pub stats: IdentifyStats,
}

pub fn identify_state<O: HiddenStateOracle + ?Sized>(
    oracle: &mut O,
    policy: PolicyConfig,
    content: &[BlockId],
    opts: &IdentifyOptions,
) -> Result<Identification> {
    let alphabet = opts
        .alphabet
        .clone()
        .unwrap_or_else(|| default_alphabet(content, 1));
    let depth = opts.exploration_depth.unwrap_or(2 * policy.assoc());
    let mut candidates = match &opts.candidates {
        Some(c) => c.clone(),
        None => enumerate_control_states(policy)?,
    };
    if candidates.is_empty() {
        return Err(Error::InvalidContent("empty candidate set".into()));
    }
    let start = (oracle.resets(), oracle.queries());
    let stats = |o: &O| IdentifyStats {
        resets: o.resets() - start.0,
        queries: o.queries() - start.1,
    };
    let finish = |candidates: Vec<ControlState>, stats: IdentifyStats| {
        let state = candidates
            .iter()
            .min_by_key(|c| c.to_string())
            .cloned()
            .expect("nonempty");
        Identification {
            state,
            class: candidates,
            stats,
        }
    };
    if candidates.len() == 1 {
        return Ok(finish(candidates, stats(oracle)));
    }

    let mut initial = initial_configs(policy, content, &candidates)?;
    let mut current = initial.clone();
    let mut session_len = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    oracle.reset_to_hidden();

    while candidates.len() > 1 {
        let distinct = sorted_distinct(current.clone());
        let splitter = if distinct.len() > 1 {
            distinguishing_sequence(&distinct, &alphabet, depth)
        } else {
            None
        };
        let Some(splitter) = splitter else {
            if session_len == 0 {
                // The remaining candidates cannot be told apart at all.
                break;
            }
            oracle.reset_to_hidden();
            current = initial.clone();
            session_len = 0;
            continue;
        };

        let block = match opts.strategy {
            ProbeStrategy::Random => alphabet[rng.gen_range(0..alphabet.len())],
            ProbeStrategy::Adaptive => most_even_split(&current, &alphabet).unwrap_or(splitter[0]),
        };
        if stats(oracle).queries >= opts.max_queries {
            return Err(Error::QueryBudgetExhausted(opts.max_queries));
        }
        let observed = oracle.access(block);
        session_len += 1;

        let mut keep_c = Vec::with_capacity(candidates.len());
        let mut keep_i = Vec::with_capacity(candidates.len());
        let mut keep_cur = Vec::with_capacity(candidates.len());
        for ((cand, init), mut cur) in candidates.into_iter().zip(initial).zip(current) {
            if cur.access_mut(block) == observed {
                keep_c.push(cand);
                keep_i.push(init);
                keep_cur.push(cur);
            }
        }
        if keep_c.is_empty() {
            return Err(Error::OracleMismatch);
        }
        candidates = keep_c;
        initial = keep_i;
        current = keep_cur;
    }
    Ok(finish(candidates, stats(oracle)))
}

/// The access maximizing the smaller side of the hit/miss split, if any
/// access splits at all.
fn most_even_split(current: &[CacheSetState], alphabet: &[BlockId]) -> Option<BlockId> {
    let mut best: Option<(usize, BlockId)> = None;
    for &b in alphabet {
        let hits = current.iter().filter(|c| c.way_of(b).is_some()).count();
        let smaller = hits.min(current.len() - hits);
        if smaller > 0 && best.is_none_or(|(s, _)| smaller > s) {
            best = Some((smaller, b));
        }
    }
    best.map(|(_, b)| b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_plru4_states() {
        let p = PolicyConfig::plru(4).unwrap();
        let content = BlockId::range(0, 4);
        for hidden in enumerate_control_states(p).unwrap() {
            for strategy in [ProbeStrategy::Adaptive, ProbeStrategy::Random] {
                let mut oracle = SimulatedOracle::new(p, &content, hidden.clone()).unwrap();
                let opts = IdentifyOptions {
                    strategy,
                    seed: 7,
                    ..Default::default()
                };
                let id = identify_state(&mut oracle, p, &content, &opts).unwrap();
                assert_eq!(id.state, hidden);
                assert_eq!(id.class.len(), 1);
                assert!(id.stats.resets >= 1);
            }
        }
    }

    #[test]
    fn singleton_prior_needs_no_queries() {
        let p = PolicyConfig::plru(8).unwrap();
        let content = BlockId::range(0, 8);
        let hidden = ControlState::parse(p, "1111111").unwrap();
        let mut oracle = SimulatedOracle::new(p, &content, hidden.clone()).unwrap();
        let opts = IdentifyOptions {
            candidates: Some(vec![hidden.clone()]),
            ..Default::default()
        };
        let id = identify_state(&mut oracle, p, &content, &opts).unwrap();
        assert_eq!(id.state, hidden);
        assert_eq!(id.stats, IdentifyStats::default());
    }

    /// Probing a set whose content is absent never hits.
    struct AlwaysMiss;

    impl HiddenStateOracle for AlwaysMiss {
        fn reset_to_hidden(&mut self) {}
        fn access(&mut self, _: BlockId) -> AccessOutcome {
            AccessOutcome::Miss
        }
        fn resets(&self) -> usize {
            0
        }
        fn queries(&self) -> usize {
            0
        }
    }

    #[test]
    fn mismatched_oracle_is_reported() {
        // A fresh session that probes resident content must see a hit under
        // every candidate; elimination only notices once that happens.
        let p = PolicyConfig::plru(4).unwrap();
        let content = BlockId::range(0, 4);
        let opts = IdentifyOptions {
            strategy: ProbeStrategy::Random,
            ..Default::default()
        };
        let r = identify_state(&mut AlwaysMiss, p, &content, &opts);
        assert_eq!(r, Err(Error::OracleMismatch));
    }

    #[test]
    fn works_through_trait_objects() {
        let p = PolicyConfig::qlru(4).unwrap();
        let content = BlockId::range(0, 4);
        let hidden = ControlState::parse(p, "1,3,3,3").unwrap();
        let mut sim = SimulatedOracle::new(p, &content, hidden.clone()).unwrap();
        let oracle: &mut dyn HiddenStateOracle = &mut sim;
        let id = identify_state(oracle, p, &content, &IdentifyOptions::default()).unwrap();
        assert!(id.class.contains(&hidden));
        assert!(id.stats.queries > 0);
    }
}
