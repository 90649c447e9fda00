//! Flush-resistant Prime+Probe against exhaustively enumerated victims.

use flushleak::attack::{
    analyze_detection, analyze_detection_with, simulate_prime_probe, victim_sequence_at,
    AttackScenario, Classification, PreparedAttack, DEFAULT_SEQUENCE_CAP,
};
use flushleak::flush::FlushKind;
use flushleak::policy::PlruControl;
use flushleak::{AccessOutcome, BlockId, ControlState, Execution, PolicyConfig};

fn plru8() -> PolicyConfig {
    PolicyConfig::plru(8).unwrap()
}

/// Outcome predicted from the arrows guarding the last way: the probe hits
/// unless root, its right child and that node's right child all still point
/// right.
fn predicted(control: &ControlState) -> AccessOutcome {
    let ControlState::Plru(c) = control else {
        unreachable!()
    };
    assert_eq!(PlruControl::ancestors(8, 7), vec![0, 2, 6]);
    if c.bit(0) && c.bit(2) && c.bit(6) {
        AccessOutcome::Miss
    } else {
        AccessOutcome::Hit
    }
}

#[test]
fn ancestor_bits_decide_the_probe() {
    let prepared = PreparedAttack::new(plru8(), FlushKind::Wbinvd).unwrap();
    for m in 1..=4usize {
        let blocks = BlockId::range(9, m);
        for k in 0..=5usize {
            for i in 0..(m as u64).pow(k as u32) {
                let seq = victim_sequence_at(&blocks, k, i);
                for invalidate in [false, true] {
                    let r = prepared.run(&seq, invalidate);
                    assert_eq!(r.probe_outcome, predicted(&r.control_at_flush), "{seq:?}");
                    assert_ne!(r.classification, Classification::SpuriousDetection);
                }
            }
        }
    }
}

#[test]
fn shortest_evasions() {
    // Below seven accesses, or with fewer than four blocks, nothing evades.
    for m in 1..=3 {
        let r = analyze_detection(plru8(), m, 7, false).unwrap();
        assert!(r.rows.iter().all(|row| row.evasions == 0), "m = {m}");
    }
    let r = analyze_detection(plru8(), 4, 7, false).unwrap();
    let evasions: Vec<u64> = r.rows.iter().map(|row| row.evasions).collect();
    assert_eq!(evasions, vec![0, 0, 0, 0, 0, 0, 0, 24]);
    assert_eq!(r.rows[7].total, 16384);

    let witness: Vec<BlockId> = [9, 10, 11, 10, 12, 11, 10].map(BlockId).to_vec();
    let s = AttackScenario::new(plru8(), 4).with_sequence(witness);
    let res = simulate_prime_probe(&s).unwrap();
    assert_eq!(res.classification, Classification::Evasion);
    assert_eq!(predicted(&res.control_at_flush), AccessOutcome::Miss);
}

#[test]
fn small_victims_always_detected() {
    let r = analyze_detection(plru8(), 2, 3, false).unwrap();
    let detected: Vec<(u64, u64)> = r.rows.iter().map(|row| (row.total, row.detected)).collect();
    assert_eq!(detected, vec![(1, 0), (2, 2), (4, 4), (8, 8)]);
    assert_eq!(r.rows[0].true_negatives, 1);
}

#[test]
fn invalid_fills_go_unnoticed() {
    // After an early flush the victim only fills invalid lines, which leaves
    // the arrows untouched.
    let r = analyze_detection(plru8(), 8, 3, true).unwrap();
    for row in &r.rows[1..] {
        assert_eq!(row.detected, 0);
        assert_eq!(row.evasions, row.total);
    }
    let s = AttackScenario {
        invalidate_before_victim: true,
        ..AttackScenario::new(plru8(), 8)
    };
    let seq = s.victim_blocks.clone();
    let res = simulate_prime_probe(&s.with_sequence(seq)).unwrap();
    assert_eq!(res.probe_outcome, AccessOutcome::Miss);
}

#[test]
fn victim_names_do_not_matter() {
    let prepared = PreparedAttack::new(plru8(), FlushKind::Wbinvd).unwrap();
    let a = BlockId::range(9, 4);
    let b: Vec<BlockId> = [1000, 77, 31, 500].map(BlockId).to_vec();
    for k in 0..=6 {
        for i in 0..4u64.pow(k as u32) {
            let ra = prepared.run(&victim_sequence_at(&a, k, i), false);
            let rb = prepared.run(&victim_sequence_at(&b, k, i), false);
            assert_eq!(ra.classification, rb.classification);
        }
    }
}

#[test]
fn qlru_attack_and_parallel_agreement() {
    let p = PolicyConfig::qlru(4).unwrap();
    let seq = analyze_detection_with(p, 3, 5, false, DEFAULT_SEQUENCE_CAP, Execution::Sequential)
        .unwrap();
    let par =
        analyze_detection_with(p, 3, 5, false, DEFAULT_SEQUENCE_CAP, Execution::Parallel).unwrap();
    assert_eq!(seq, par);
    assert_eq!(seq.rows[0].true_negatives, 1);
}

#[test]
fn other_flush_kinds_behave_alike() {
    for kind in [FlushKind::ClflushEach, FlushKind::FlushCmd] {
        let s = AttackScenario {
            flush: kind,
            ..AttackScenario::new(plru8(), 2)
        };
        assert_eq!(
            simulate_prime_probe(&s).unwrap().classification,
            Classification::TrueNegative
        );
        let s = s.with_sequence(vec![BlockId(9)]);
        assert_eq!(
            simulate_prime_probe(&s).unwrap().classification,
            Classification::TruePositive
        );
    }
}
