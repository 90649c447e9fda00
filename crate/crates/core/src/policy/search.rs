use std::collections::{HashMap, HashSet, VecDeque};

use super::{
    BlockId, CacheSetState, ControlState, PlruControl, PolicyConfig, PolicyKind, QlruControl,
};
use crate::error::{Error, Result};

/// Default bound on the number of control states a routine may enumerate.
pub const DEFAULT_STATE_CAP: u128 = 1 << 20;

/// Size of the raw space an enumeration has to walk: `2^(n-1)` PLRU bit
/// vectors, `4^n` QLRU age vectors, or 1.
pub fn state_space_size(policy: PolicyConfig) -> u128 {
    let n = policy.assoc() as u32;
    match policy.kind() {
        PolicyKind::Plru => 1u128 << (n - 1),
        PolicyKind::QlruNew1 => 4u128.checked_pow(n).unwrap_or(u128::MAX),
        PolicyKind::Opaque => 1,
    }
}

/// Number of valid control states: `2^(n-1)` for PLRU and
/// `4^n - 3^n - 2^n + 1` for QLRU (full sets with an age-3 way and a way of
/// age 0 or 1).
pub fn count_valid_states_closed_form(policy: PolicyConfig) -> u128 {
    let n = policy.assoc() as u32;
    match policy.kind() {
        PolicyKind::Plru => 1u128 << (n - 1),
        PolicyKind::QlruNew1 => {
            // n <= 255 so 4^n may overflow; saturate like state_space_size.
            match (
                4u128.checked_pow(n),
                3u128.checked_pow(n),
                2u128.checked_pow(n),
            ) {
                (Some(a), Some(b), Some(c)) => a - b - c + 1,
                _ => u128::MAX,
            }
        }
        PolicyKind::Opaque => 1,
    }
}

pub fn enumerate_control_states(policy: PolicyConfig) -> Result<Vec<ControlState>> {
    enumerate_control_states_capped(policy, DEFAULT_STATE_CAP)
}

/// All valid control states of a full set, in ascending order of their
/// canonical encoding.
pub fn enumerate_control_states_capped(
    policy: PolicyConfig,
    cap: u128,
) -> Result<Vec<ControlState>> {
    let size = state_space_size(policy);
    if size > cap {
        return Err(Error::StateSpaceTooLarge { size, cap });
    }
    let n = policy.assoc();
    Ok(match policy.kind() {
        PolicyKind::Plru => (0..size as u64)
            .map(|i| ControlState::Plru(PlruControl::from_index(n, i)))
            .collect(),
        PolicyKind::QlruNew1 => {
            let mut out = Vec::new();
            let mut ages = vec![0u8; n];
            for mut i in 0..size as u64 {
                for slot in ages.iter_mut().rev() {
                    *slot = (i % 4) as u8;
                    i /= 4;
                }
                let has3 = ages.contains(&3);
                let has_young = ages.iter().any(|&a| a <= 1);
                if has3 && has_young {
                    out.push(ControlState::Qlru(QlruControl::from_ages(&ages).unwrap()));
                }
            }
            out
        }
        PolicyKind::Opaque => vec![ControlState::Opaque],
    })
}

/// Control states reachable from a freshly filled set (`I0..I<n-1>` at
/// ways `0..n-1`) by arbitrary accesses over `I0..I<n+extra_blocks-1>`.
/// `cap` bounds the number of full set configurations visited.
pub fn reachable_control_states(
    policy: PolicyConfig,
    extra_blocks: usize,
    cap: usize,
) -> Result<Vec<ControlState>> {
    let start = CacheSetState::filled_from_empty(policy, &policy.canonical_content())?;
    let alphabet = BlockId::range(0, policy.assoc() + extra_blocks);
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start.clone());
    queue.push_back(start);
    while let Some(state) = queue.pop_front() {
        for &b in &alphabet {
            let (next, _) = state.access(b);
            if !seen.contains(&next) {
                if seen.len() >= cap {
                    return Err(Error::SearchCapExceeded { cap: cap as u64 });
                }
                seen.insert(next.clone());
                queue.push_back(next);
            }
        }
    }
    let mut controls: Vec<ControlState> = seen.into_iter().map(|s| s.control).collect();
    controls.sort_by_key(|c| c.to_string());
    controls.dedup();
    Ok(controls)
}

/// Control states reachable from `start` using hits on its resident blocks.
pub fn hit_reachable_controls(start: &CacheSetState) -> Vec<ControlState> {
    let alphabet = start.resident_blocks();
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start.control.clone());
    queue.push_back(start.clone());
    while let Some(state) = queue.pop_front() {
        for &b in &alphabet {
            let (next, _) = state.access(b);
            if seen.insert(next.control.clone()) {
                queue.push_back(next);
            }
        }
    }
    let mut out: Vec<_> = seen.into_iter().collect();
    out.sort_by_key(|c| c.to_string());
    out
}

/// Shortest hit-only access sequence that drives the freshly filled set
/// (content placed at ways in order) to `target`.
pub fn find_setup_sequence(
    policy: PolicyConfig,
    content: &[BlockId],
    target: &ControlState,
    max_len: usize,
) -> Result<Option<Vec<BlockId>>> {
    let start = CacheSetState::filled_from_empty(policy, content)?;
    Ok(find_setup_sequence_from(&start, target, max_len))
}

/// Breadth-first search over hits to resident blocks; among the shortest
/// sequences the lexicographically least (by block id) is returned.
pub fn find_setup_sequence_from(
    start: &CacheSetState,
    target: &ControlState,
    max_len: usize,
) -> Option<Vec<BlockId>> {
    let mut alphabet = start.resident_blocks();
    alphabet.sort_unstable();
    // parent pointers: control -> (previous control, block)
    let mut parent: HashMap<ControlState, Option<(ControlState, BlockId)>> = HashMap::new();
    parent.insert(start.control.clone(), None);
    let mut frontier = vec![start.clone()];
    let mut depth = 0;
    let mut found = start.control == *target;
    while !found && depth < max_len && !frontier.is_empty() {
        let mut next_frontier = Vec::new();
        'outer: for state in &frontier {
            for &b in &alphabet {
                let (next, _) = state.access(b);
                if parent.contains_key(&next.control) {
                    continue;
                }
                parent.insert(next.control.clone(), Some((state.control.clone(), b)));
                if next.control == *target {
                    found = true;
                    break 'outer;
                }
                next_frontier.push(next);
            }
        }
        frontier = next_frontier;
        depth += 1;
    }
    if !found {
        return None;
    }
    let mut seq = Vec::new();
    let mut cur = target.clone();
    while let Some(Some((prev, b))) = parent.get(&cur) {
        seq.push(*b);
        cur = prev.clone();
    }
    seq.reverse();
    Some(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let plru8 = PolicyConfig::plru(8).unwrap();
        let qlru4 = PolicyConfig::qlru(4).unwrap();
        assert_eq!(enumerate_control_states(plru8).unwrap().len(), 128);
        assert_eq!(enumerate_control_states(qlru4).unwrap().len(), 160);
        assert_eq!(
            enumerate_control_states(PolicyConfig::plru(2).unwrap())
                .unwrap()
                .len(),
            2
        );
        assert_eq!(count_valid_states_closed_form(qlru4), 160);
        assert_eq!(
            count_valid_states_closed_form(PolicyConfig::qlru(2).unwrap()),
            4
        );
        assert_eq!(count_valid_states_closed_form(plru8), 128);
    }

    #[test]
    fn enumeration_is_sorted_by_encoding() {
        let states = enumerate_control_states(PolicyConfig::plru(4).unwrap()).unwrap();
        let strings: Vec<String> = states.iter().map(|s| s.to_string()).collect();
        let mut sorted = strings.clone();
        sorted.sort();
        assert_eq!(strings, sorted);
        assert_eq!(strings[0], "000");
        assert_eq!(strings[7], "111");
    }

    #[test]
    fn cap_is_enforced() {
        let q = PolicyConfig::qlru(11).unwrap();
        assert!(matches!(
            enumerate_control_states(q),
            Err(Error::StateSpaceTooLarge { .. })
        ));
        assert!(enumerate_control_states_capped(PolicyConfig::plru(8).unwrap(), 100).is_err());
    }

    #[test]
    fn setup_sequence_reaches_target() {
        let p = PolicyConfig::plru(8).unwrap();
        let content = BlockId::range(0, 8);
        let target = ControlState::parse(p, "1111111").unwrap();
        let seq = find_setup_sequence(p, &content, &target, 8)
            .unwrap()
            .unwrap();
        let start = CacheSetState::filled_from_empty(p, &content).unwrap();
        let (end, trace) = start.run_sequence(&seq);
        assert_eq!(end.control(), &target);
        assert!(trace.iter().all(|&o| o == super::super::AccessOutcome::Hit));

        let here = start.control().clone();
        assert_eq!(find_setup_sequence_from(&start, &here, 0), Some(vec![]));
    }

    #[test]
    fn setup_sequence_none_when_too_short() {
        let p = PolicyConfig::plru(8).unwrap();
        let content = BlockId::range(0, 8);
        let target = ControlState::parse(p, "1111111").unwrap();
        assert_eq!(find_setup_sequence(p, &content, &target, 1).unwrap(), None);
    }
}
