//! Flush semantics, refills, and the pre-flush to post-refill channel.

use std::fmt;
use std::io;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::policy::{
    check_content, enumerate_control_states_capped, BlockId, CacheSetState, ControlState,
    PolicyConfig, DEFAULT_STATE_CAP,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlushKind {
    /// Invalidate the whole cache at once.
    Wbinvd,
    /// One clflush per resident block, in ascending way order.
    ClflushEach,
    /// The L1D flush command MSR. Identical to `Wbinvd` on a single set.
    FlushCmd,
}

impl FlushKind {
    pub fn name(self) -> &'static str {
        match self {
            FlushKind::Wbinvd => "wbinvd",
            FlushKind::ClflushEach => "clflush-each",
            FlushKind::FlushCmd => "flushcmd",
        }
    }
}

impl fmt::Display for FlushKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlushKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "wbinvd" => Ok(FlushKind::Wbinvd),
            "clflush-each" | "clflush" => Ok(FlushKind::ClflushEach),
            "flushcmd" | "flush-cmd" => Ok(FlushKind::FlushCmd),
            other => Err(format!("unknown flush kind {other:?}")),
        }
    }
}

/// Whether a flush leaves the replacement control state in place.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlushBehavior {
    PreservesControl,
    ResetsControl,
}

impl FlushBehavior {
    pub fn from_preserves(preserves: bool) -> Self {
        if preserves {
            FlushBehavior::PreservesControl
        } else {
            FlushBehavior::ResetsControl
        }
    }

    pub fn preserves(self) -> bool {
        self == FlushBehavior::PreservesControl
    }
}

impl FromStr for FlushBehavior {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "preserve" | "true" => Ok(FlushBehavior::PreservesControl),
            "reset" | "false" => Ok(FlushBehavior::ResetsControl),
            other => Err(format!("unknown flush behavior {other:?} (preserve|reset)")),
        }
    }
}

impl fmt::Display for FlushBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlushBehavior::PreservesControl => "preserve",
            FlushBehavior::ResetsControl => "reset",
        })
    }
}

/// Invalidates every line of the set.
pub fn flush(state: &CacheSetState, kind: FlushKind, behavior: FlushBehavior) -> CacheSetState {
    let mut next = state.clone();
    match kind {
        FlushKind::Wbinvd | FlushKind::FlushCmd => {
            for way in 0..next.lines().len() {
                next.invalidate_way(way);
            }
        }
        FlushKind::ClflushEach => {
            for block in state.resident_blocks() {
                clflush_mut(&mut next, block);
            }
        }
    }
    if behavior == FlushBehavior::ResetsControl {
        return CacheSetState::new_empty(state.policy());
    }
    next
}

/// Invalidates the line holding `block`; a no-op for non-resident blocks.
/// Control state is never touched.
pub fn clflush(state: &CacheSetState, block: BlockId) -> CacheSetState {
    let mut next = state.clone();
    clflush_mut(&mut next, block);
    next
}

fn clflush_mut(state: &mut CacheSetState, block: BlockId) {
    if let Some(way) = state.way_of(block) {
        state.invalidate_way(way.0);
    }
}

/// Accesses `blocks` on a fully invalid set; all accesses miss and fill.
pub fn refill(state: &CacheSetState, blocks: &[BlockId]) -> Result<CacheSetState> {
    if !state.is_fully_invalid() {
        return Err(Error::Refill("set is not fully invalid".into()));
    }
    check_content(state.policy(), blocks).map_err(|e| Error::Refill(e.to_string()))?;
    Ok(state.run_sequence(blocks).0)
}

/// Order of the refill blocks `I<n>..I<2n-1>`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum RefillOrder {
    /// Ascending for PLRU and opaque sets, descending for QLRU: the order in
    /// which a fresh set places the blocks left to right.
    #[default]
    PolicyDefault,
    Ascending,
    Descending,
    Explicit(Vec<BlockId>),
}

impl RefillOrder {
    pub fn blocks(&self, policy: PolicyConfig) -> Vec<BlockId> {
        let n = policy.assoc();
        let fresh = BlockId::range(n as u32, n);
        match self {
            RefillOrder::PolicyDefault => policy.fill_order(&fresh),
            RefillOrder::Ascending => fresh,
            RefillOrder::Descending => fresh.into_iter().rev().collect(),
            RefillOrder::Explicit(blocks) => blocks.clone(),
        }
    }
}

impl FromStr for RefillOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "default" => Ok(RefillOrder::PolicyDefault),
            "asc" => Ok(RefillOrder::Ascending),
            "desc" => Ok(RefillOrder::Descending),
            list => crate::policy::parse_blocks(list).map(RefillOrder::Explicit),
        }
    }
}

/// Deterministic map from each valid pre-flush control state to the control
/// state left after flushing and refilling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelMap {
    pub policy: PolicyConfig,
    pub refill: Vec<BlockId>,
    pub flush: FlushKind,
    pub behavior: FlushBehavior,
    /// One `(initial, final)` pair per enumerated state, in enumeration order.
    pub entries: Vec<(ControlState, ControlState)>,
}

impl ChannelMap {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, initial: &ControlState) -> Option<&ControlState> {
        self.entries
            .iter()
            .find(|(i, _)| i == initial)
            .map(|(_, o)| o)
    }

    /// Distinct output states, sorted by encoding.
    pub fn image(&self) -> Vec<ControlState> {
        let mut out: Vec<ControlState> = self.entries.iter().map(|(_, o)| o.clone()).collect();
        out.sort_by_key(|c| c.to_string());
        out.dedup();
        out
    }

    /// CSV with header `initial,final`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io_err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["initial", "final"]).map_err(io_err)?;
        for (i, o) in &self.entries {
            w.write_record([i.to_string(), o.to_string()])
                .map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }
}

/// Post-flush, post-refill control state for one initial control state on the
/// canonically filled set.
pub fn flush_refill_control(
    policy: PolicyConfig,
    initial: &ControlState,
    kind: FlushKind,
    behavior: FlushBehavior,
    refill_blocks: &[BlockId],
) -> Result<ControlState> {
    let filled = CacheSetState::filled(policy, &policy.canonical_content(), initial.clone())?;
    let flushed = flush(&filled, kind, behavior);
    Ok(refill(&flushed, refill_blocks)?.control().clone())
}

pub fn flush_refill_map(
    policy: PolicyConfig,
    kind: FlushKind,
    behavior: FlushBehavior,
    refill_blocks: &[BlockId],
) -> Result<ChannelMap> {
    flush_refill_map_with(
        policy,
        kind,
        behavior,
        refill_blocks,
        DEFAULT_STATE_CAP,
        Execution::default(),
    )
}

/// Builds the channel over every enumerated control state.
pub fn flush_refill_map_with(
    policy: PolicyConfig,
    kind: FlushKind,
    behavior: FlushBehavior,
    refill_blocks: &[BlockId],
    cap: u128,
    exec: Execution,
) -> Result<ChannelMap> {
    check_content(policy, refill_blocks).map_err(|e| Error::Refill(e.to_string()))?;
    let states = enumerate_control_states_capped(policy, cap)?;
    let outputs = par::map_slice(exec, &states, |s| {
        flush_refill_control(policy, s, kind, behavior, refill_blocks)
    });
    let entries = states
        .into_iter()
        .zip(outputs)
        .map(|(s, o)| o.map(|o| (s, o)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelMap {
        policy,
        refill: refill_blocks.to_vec(),
        flush: kind,
        behavior,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qlru4() -> PolicyConfig {
        PolicyConfig::qlru(4).unwrap()
    }

    fn filled(policy: PolicyConfig, control: &str) -> CacheSetState {
        CacheSetState::filled(
            policy,
            &policy.canonical_content(),
            ControlState::parse(policy, control).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn wbinvd_preserves_control() {
        let p = PolicyConfig::plru(8).unwrap();
        let s = flush(
            &filled(p, "1111111"),
            FlushKind::Wbinvd,
            FlushBehavior::PreservesControl,
        );
        assert!(s.is_fully_invalid());
        assert_eq!(s.encode_control(), "1111111");

        let q = flush(
            &filled(qlru4(), "3,0,3,0"),
            FlushKind::Wbinvd,
            FlushBehavior::PreservesControl,
        );
        assert_eq!(q.encode_control(), "3*,0*,3*,0*");
    }

    #[test]
    fn reset_flush_is_empty_set() {
        let p = PolicyConfig::plru(8).unwrap();
        let s = flush(
            &filled(p, "1011001"),
            FlushKind::Wbinvd,
            FlushBehavior::ResetsControl,
        );
        assert_eq!(s, CacheSetState::new_empty(p));
    }

    #[test]
    fn refill_reproduces_post_flush_states() {
        let q = qlru4();
        let refill_blocks = RefillOrder::PolicyDefault.blocks(q);
        assert_eq!(crate::policy::format_blocks(&refill_blocks), "I7 I6 I5 I4");
        for (pre, post) in [("0,0,0,3", "1,3,3,3"), ("3,0,3,0", "1,2,3,2")] {
            let flushed = flush(
                &filled(q, pre),
                FlushKind::Wbinvd,
                FlushBehavior::PreservesControl,
            );
            let s = refill(&flushed, &refill_blocks).unwrap();
            assert_eq!(s.encode_control(), post);
            assert_eq!(s.resident_blocks(), BlockId::range(4, 4));
        }
    }

    #[test]
    fn refill_preconditions() {
        let q = qlru4();
        let s = filled(q, "0,0,0,3");
        assert!(refill(&s, &BlockId::range(4, 4)).is_err());
        let flushed = flush(&s, FlushKind::Wbinvd, FlushBehavior::PreservesControl);
        assert!(refill(&flushed, &BlockId::range(4, 3)).is_err());
        assert!(refill(&flushed, &[BlockId(4), BlockId(4), BlockId(5), BlockId(6)]).is_err());
    }

    #[test]
    fn clflush_of_absent_block_is_noop() {
        let s = filled(qlru4(), "0,0,0,3");
        assert_eq!(clflush(&s, BlockId(99)), s);
        let t = clflush(&s, BlockId(2));
        assert_eq!(t.encode_control(), "0,0,0*,3");
    }

    #[test]
    fn plru_channel_is_identity() {
        let p = PolicyConfig::plru(8).unwrap();
        let map = flush_refill_map(
            p,
            FlushKind::Wbinvd,
            FlushBehavior::PreservesControl,
            &RefillOrder::PolicyDefault.blocks(p),
        )
        .unwrap();
        assert_eq!(map.len(), 128);
        assert!(map.entries.iter().all(|(i, o)| i == o));
    }

    #[test]
    fn csv_quotes_qlru_encodings() {
        let q = qlru4();
        let map = flush_refill_map(
            q,
            FlushKind::Wbinvd,
            FlushBehavior::PreservesControl,
            &RefillOrder::PolicyDefault.blocks(q),
        )
        .unwrap();
        let csv = map.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("initial,final"));
        assert_eq!(lines.count(), 160);
        assert!(csv.contains("\"0,0,0,3\",\"1,3,3,3\""));
    }

    #[test]
    fn refill_order_parsing() {
        assert_eq!(
            "asc".parse::<RefillOrder>().unwrap(),
            RefillOrder::Ascending
        );
        assert_eq!(
            "I7 I6".parse::<RefillOrder>().unwrap(),
            RefillOrder::Explicit(vec![BlockId(7), BlockId(6)])
        );
        assert!("I7 J6".parse::<RefillOrder>().is_err());
    }
}
