//! Prime+Probe that survives a full flush of the set.
//!
//! The attacker primes the set and drives its control state to one whose
//! next victim is a known way. After the victim runs and the set is flushed,
//! the attacker refills with its own blocks, forces one eviction and checks
//! whether the block in that way survived: a hit means the victim moved the
//! control state.

use std::io;

use serde::Serialize;

use crate::distinguish::find_homing_sequence;
use crate::error::{Error, Result};
use crate::flush::{flush, FlushBehavior, FlushKind};
use crate::par::{self, Execution};
use crate::policy::{
    AccessOutcome, BlockId, CacheSetState, ControlState, PlruControl, PolicyConfig, PolicyKind,
    QlruControl,
};

/// Default bound on the number of enumerated victim sequences.
pub const DEFAULT_SEQUENCE_CAP: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackScenario {
    pub policy: PolicyConfig,
    pub victim_blocks: Vec<BlockId>,
    pub victim_sequence: Vec<BlockId>,
    pub invalidate_before_victim: bool,
    pub flush: FlushKind,
}

impl AttackScenario {
    /// `victim_count` victim blocks numbered after the attacker's eviction
    /// block, an idle victim, and a wbinvd after the victim.
    pub fn new(policy: PolicyConfig, victim_count: usize) -> Self {
        AttackScenario {
            policy,
            victim_blocks: BlockId::range(policy.assoc() as u32 + 1, victim_count),
            victim_sequence: Vec::new(),
            invalidate_before_victim: false,
            flush: FlushKind::Wbinvd,
        }
    }

    pub fn with_sequence(mut self, seq: Vec<BlockId>) -> Self {
        self.victim_sequence = seq;
        self
    }

    pub fn attacker_blocks(&self) -> Vec<BlockId> {
        self.policy.canonical_content()
    }

    pub fn eviction_block(&self) -> BlockId {
        BlockId(self.policy.assoc() as u32)
    }

    fn validate(&self) -> Result<()> {
        let attacker = self.attacker_blocks();
        let eviction = self.eviction_block();
        if self
            .victim_blocks
            .iter()
            .any(|b| attacker.contains(b) || *b == eviction)
        {
            return Err(Error::InvalidScenario(
                "victim blocks overlap the attacker's blocks".into(),
            ));
        }
        if let Some(b) = self
            .victim_sequence
            .iter()
            .find(|b| !self.victim_blocks.contains(b))
        {
            return Err(Error::InvalidScenario(format!(
                "victim accesses {b}, which is not one of its blocks"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    VictimActive,
    VictimInactive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Classification {
    TruePositive,
    TrueNegative,
    /// Victim was active but restored the primed control state.
    Evasion,
    SpuriousDetection,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackResult {
    pub verdict: Verdict,
    pub probe_outcome: AccessOutcome,
    pub ground_truth_active: bool,
    pub classification: Classification,
    pub probe_block: BlockId,
    /// Control state right before the post-victim flush.
    pub control_at_flush: ControlState,
}

/// Control state whose next victim is the last way: PLRU all arrows right,
/// QLRU ages `0,..,0,3`.
pub fn primed_control(policy: PolicyConfig) -> Result<ControlState> {
    let n = policy.assoc();
    match policy.kind() {
        PolicyKind::Plru => Ok(ControlState::Plru(
            PlruControl::from_bits(n, &vec![true; n - 1]).expect("valid PLRU associativity"),
        )),
        PolicyKind::QlruNew1 => {
            let mut ages = vec![0u8; n];
            ages[n - 1] = 3;
            Ok(ControlState::Qlru(
                QlruControl::from_ages(&ages).expect("ages in range"),
            ))
        }
        PolicyKind::Opaque => Err(Error::InvalidScenario(
            "opaque sets have no control state to prime".into(),
        )),
    }
}

/// Attacker-side work that does not depend on the victim: the priming
/// sequence and the block whose survival is probed.
#[derive(Clone, Debug)]
pub struct PreparedAttack {
    policy: PolicyConfig,
    flush: FlushKind,
    primed: CacheSetState,
    prime_sequence: Vec<BlockId>,
    refill: Vec<BlockId>,
    eviction: BlockId,
    probe_block: BlockId,
}

impl PreparedAttack {
    pub fn new(policy: PolicyConfig, flush_kind: FlushKind) -> Result<Self> {
        let content = policy.canonical_content();
        let target = primed_control(policy)?;
        let homing = find_homing_sequence(policy, &content, &target, 4 * policy.assoc())?
            .ok_or_else(|| {
                Error::InvalidScenario(format!("no hit sequence reaches {target} from every state"))
            })?;
        let mut prime_sequence = policy.fill_order(&content);
        prime_sequence.extend(&homing);
        let mut primed = CacheSetState::new_empty(policy);
        primed.run_mut(&prime_sequence);
        debug_assert_eq!(primed.control(), &target);

        let refill = policy.fill_order(&content);
        let eviction = BlockId(policy.assoc() as u32);
        // Which block the idle baseline evicts; its survival signals activity.
        let mut idle = flush(&primed, flush_kind, FlushBehavior::PreservesControl);
        idle.run_mut(&refill);
        let way = idle
            .victim_way()
            .ok_or_else(|| Error::Invariant("refilled set has no victim".into()))?;
        let probe_block = idle
            .block_at(way)
            .ok_or_else(|| Error::Invariant("refilled set has an invalid way".into()))?;

        Ok(PreparedAttack {
            policy,
            flush: flush_kind,
            primed,
            prime_sequence,
            refill,
            eviction,
            probe_block,
        })
    }

    pub fn prime_sequence(&self) -> &[BlockId] {
        &self.prime_sequence
    }

    pub fn probe_block(&self) -> BlockId {
        self.probe_block
    }

    pub fn run(&self, victim_sequence: &[BlockId], invalidate_before_victim: bool) -> AttackResult {
        let mut s = self.primed.clone();
        if invalidate_before_victim {
            s = flush(&s, self.flush, FlushBehavior::PreservesControl);
        }
        s.run_mut(victim_sequence);
        let control_at_flush = s.control().clone();
        let mut s = flush(&s, self.flush, FlushBehavior::PreservesControl);
        s.run_mut(&self.refill);
        s.access_mut(self.eviction);
        let probe_outcome = s.access_mut(self.probe_block);

        let active = !victim_sequence.is_empty();
        let verdict = match probe_outcome {
            AccessOutcome::Hit => Verdict::VictimActive,
            AccessOutcome::Miss => Verdict::VictimInactive,
        };
        let classification = match (active, probe_outcome) {
            (true, AccessOutcome::Hit) => Classification::TruePositive,
            (false, AccessOutcome::Miss) => Classification::TrueNegative,
            (true, AccessOutcome::Miss) => Classification::Evasion,
            (false, AccessOutcome::Hit) => Classification::SpuriousDetection,
        };
        AttackResult {
            verdict,
            probe_outcome,
            ground_truth_active: active,
            classification,
            probe_block: self.probe_block,
            control_at_flush,
        }
    }

    pub fn policy(&self) -> PolicyConfig {
        self.policy
    }
}

pub fn simulate_prime_probe(scenario: &AttackScenario) -> Result<AttackResult> {
    scenario.validate()?;
    let prepared = PreparedAttack::new(scenario.policy, scenario.flush)?;
    Ok(prepared.run(&scenario.victim_sequence, scenario.invalidate_before_victim))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionRow {
    pub length: usize,
    pub total: u64,
    pub detected: u64,
    pub evasions: u64,
    pub true_negatives: u64,
    pub spurious: u64,
    pub evasion_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionReport {
    pub rows: Vec<DetectionRow>,
}

impl DetectionReport {
    /// CSV with header `length,total,detected,evasions,evasion_fraction`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record([
            "length",
            "total",
            "detected",
            "evasions",
            "evasion_fraction",
        ])
        .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.length.to_string(),
                r.total.to_string(),
                r.detected.to_string(),
                r.evasions.to_string(),
                format!("{:.6}", r.evasion_fraction),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }
}

/// The `index`-th sequence of length `len` over `blocks`, lexicographic
/// with the first access most significant.
pub fn victim_sequence_at(blocks: &[BlockId], len: usize, mut index: u64) -> Vec<BlockId> {
    let m = blocks.len() as u64;
    let mut seq = vec![BlockId(0); len];
    for slot in seq.iter_mut().rev() {
        *slot = blocks[(index % m) as usize];
        index /= m;
    }
    seq
}

pub fn analyze_detection(
    policy: PolicyConfig,
    victim_count: usize,
    max_k: usize,
    invalidate_before_victim: bool,
) -> Result<DetectionReport> {
    analyze_detection_with(
        policy,
        victim_count,
        max_k,
        invalidate_before_victim,
        DEFAULT_SEQUENCE_CAP,
        Execution::default(),
    )
}

/// Runs the attack against every victim sequence of length `0..=max_k`
/// over `victim_count` blocks.
pub fn analyze_detection_with(
    policy: PolicyConfig,
    victim_count: usize,
    max_k: usize,
    invalidate_before_victim: bool,
    cap: u64,
    exec: Execution,
) -> Result<DetectionReport> {
    if victim_count == 0 {
        return Err(Error::InvalidScenario(
            "at least one victim block is required".into(),
        ));
    }
    let m = victim_count as u64;
    let mut total: u64 = 0;
    for k in 0..=max_k {
        let count = m
            .checked_pow(k as u32)
            .ok_or(Error::SearchCapExceeded { cap })?;
        total = total.saturating_add(count);
    }
    if total > cap {
        return Err(Error::SearchCapExceeded { cap });
    }

    let scenario = AttackScenario::new(policy, victim_count);
    scenario.validate()?;
    let prepared = PreparedAttack::new(policy, scenario.flush)?;
    let blocks = scenario.victim_blocks;

    let mut rows = Vec::with_capacity(max_k + 1);
    for k in 0..=max_k {
        let count = m.pow(k as u32);
        let classes = par::map_range(exec, 0..count, |i| {
            let seq = victim_sequence_at(&blocks, k, i);
            prepared.run(&seq, invalidate_before_victim).classification
        });
        let tally = |c: Classification| classes.iter().filter(|&&x| x == c).count() as u64;
        let detected =
            tally(Classification::TruePositive) + tally(Classification::SpuriousDetection);
        let evasions = tally(Classification::Evasion);
        rows.push(DetectionRow {
            length: k,
            total: count,
            detected,
            evasions,
            true_negatives: tally(Classification::TrueNegative),
            spurious: tally(Classification::SpuriousDetection),
            evasion_fraction: if k == 0 {
                0.0
            } else {
                evasions as f64 / count as f64
            },
        });
    }
    Ok(DetectionReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plru8() -> PolicyConfig {
        PolicyConfig::plru(8).unwrap()
    }

    #[test]
    fn priming_marks_last_way() {
        let prepared = PreparedAttack::new(plru8(), FlushKind::Wbinvd).unwrap();
        assert_eq!(prepared.probe_block(), BlockId(7));
        let homing = &prepared.prime_sequence()[8..];
        assert!(homing.len() <= 6);
    }

    #[test]
    fn idle_victim_is_not_detected() {
        let r = simulate_prime_probe(&AttackScenario::new(plru8(), 2)).unwrap();
        assert_eq!(r.probe_outcome, AccessOutcome::Miss);
        assert_eq!(r.verdict, Verdict::VictimInactive);
        assert_eq!(r.classification, Classification::TrueNegative);
    }

    #[test]
    fn single_access_is_detected() {
        let s = AttackScenario::new(plru8(), 3);
        for &b in &s.victim_blocks.clone() {
            let r = simulate_prime_probe(&s.clone().with_sequence(vec![b])).unwrap();
            assert_eq!(r.classification, Classification::TruePositive);
        }
    }

    #[test]
    fn overlapping_blocks_rejected() {
        let mut s = AttackScenario::new(plru8(), 1);
        s.victim_blocks = vec![BlockId(3)];
        assert!(simulate_prime_probe(&s).is_err());
        let s = AttackScenario::new(plru8(), 1).with_sequence(vec![BlockId(0)]);
        assert!(simulate_prime_probe(&s).is_err());
    }

    #[test]
    fn sequence_indexing() {
        let blocks = [BlockId(10), BlockId(11)];
        assert_eq!(victim_sequence_at(&blocks, 3, 0), vec![BlockId(10); 3]);
        assert_eq!(
            victim_sequence_at(&blocks, 3, 1),
            vec![BlockId(10), BlockId(10), BlockId(11)]
        );
        assert!(victim_sequence_at(&blocks, 0, 0).is_empty());
    }

    #[test]
    fn report_and_csv() {
        let r = analyze_detection(plru8(), 1, 1, false).unwrap();
        assert_eq!(r.rows[1].evasions, 0);
        assert_eq!(r.rows[0].true_negatives, 1);
        let csv = r.to_csv_string();
        assert!(csv.starts_with("length,total,detected,evasions,evasion_fraction\n"));
        assert!(analyze_detection(plru8(), 0, 1, false).is_err());
        assert!(
            analyze_detection_with(plru8(), 10, 8, false, 1000, Execution::Sequential).is_err()
        );
    }

    #[test]
    fn opaque_cannot_be_primed() {
        assert!(PreparedAttack::new(PolicyConfig::opaque(8).unwrap(), FlushKind::Wbinvd).is_err());
    }
}
