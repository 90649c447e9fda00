//! Cache-set state and the replacement-policy automata.
//!
//! A [`CacheSetState`] is one set of a set-associative cache: a line per way,
//! each either holding a block or invalid, plus the policy's control state.
//! Control state lives apart from the lines so that invalidating a line never
//! touches it; flushing is modeled in [`crate::flush`].
//!
//! Transitions are pure: [`CacheSetState::access`] returns a new state, and
//! [`CacheSetState::access_mut`] is the in-place variant the searches use.

mod plru;
mod qlru;
mod search;

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub use plru::PlruControl;
pub use qlru::QlruControl;
pub use search::{
    count_valid_states_closed_form, enumerate_control_states, enumerate_control_states_capped,
    find_setup_sequence, find_setup_sequence_from, hit_reachable_controls,
    reachable_control_states, state_space_size, DEFAULT_STATE_CAP,
};

/// Abstract memory-block tag, displayed as `I<id>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u32);

impl BlockId {
    /// `I<start>, I<start+1>, ...` — `count` consecutive blocks.
    pub fn range(start: u32, count: usize) -> Vec<BlockId> {
        (0..count as u32).map(|i| BlockId(start + i)).collect()
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "I{}", self.0)
    }
}

impl FromStr for BlockId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let digits = s
            .strip_prefix('I')
            .ok_or_else(|| format!("block {s:?} must look like I<digits>"))?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("block {s:?} must look like I<digits>"));
        }
        digits
            .parse()
            .map(BlockId)
            .map_err(|_| format!("block id {s:?} out of range"))
    }
}

impl Serialize for BlockId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Parses a whitespace- or `·`-separated block list such as `"I0 I2 I4 I6"`.
pub fn parse_blocks(text: &str) -> std::result::Result<Vec<BlockId>, String> {
    text.split(|c: char| c.is_whitespace() || c == '·' || c == ',')
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect()
}

/// Joins blocks with single spaces.
pub fn format_blocks(blocks: &[BlockId]) -> String {
    blocks
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Way(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LineOccupancy {
    Valid(BlockId),
    Invalid,
}

impl LineOccupancy {
    pub fn block(self) -> Option<BlockId> {
        match self {
            LineOccupancy::Valid(b) => Some(b),
            LineOccupancy::Invalid => None,
        }
    }

    pub fn is_valid(self) -> bool {
        matches!(self, LineOccupancy::Valid(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum AccessOutcome {
    Hit,
    Miss,
}

impl AccessOutcome {
    pub fn letter(self) -> char {
        match self {
            AccessOutcome::Hit => 'H',
            AccessOutcome::Miss => 'M',
        }
    }
}

impl fmt::Display for AccessOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessOutcome::Hit => "Hit",
            AccessOutcome::Miss => "Miss",
        })
    }
}

/// Renders a trace as `"M M M H H H"`.
pub fn format_trace(trace: &[AccessOutcome]) -> String {
    let mut out = String::with_capacity(trace.len() * 2);
    for (i, o) in trace.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push(o.letter());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    /// Tree-based pseudo-LRU.
    Plru,
    /// Quad-age LRU, the "New1" / QLRU_H00_M1_R2_U1 variant.
    QlruNew1,
    /// A cache whose control state is unobservable after a flush; exactly one
    /// control state.
    Opaque,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Plru => "plru",
            PolicyKind::QlruNew1 => "qlru_h00_m1_r2_u1",
            PolicyKind::Opaque => "opaque",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "plru" | "tree-plru" => Ok(PolicyKind::Plru),
            "qlru_h00_m1_r2_u1" | "qlru" | "new1" => Ok(PolicyKind::QlruNew1),
            "opaque" => Ok(PolicyKind::Opaque),
            other => Err(format!(
                "unknown policy {other:?} (expected plru, qlru_h00_m1_r2_u1 or opaque)"
            )),
        }
    }
}

/// Which automaton governs a set, and its associativity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PolicyConfig {
    kind: PolicyKind,
    assoc: usize,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind, assoc: usize) -> Result<Self> {
        let bad = |reason| {
            Err(Error::InvalidAssociativity {
                kind,
                assoc,
                reason,
            })
        };
        if assoc < 2 {
            return bad("associativity must be at least 2");
        }
        if assoc > 255 {
            return bad("associativity above 255 is not modeled");
        }
        if kind == PolicyKind::Plru {
            if !assoc.is_power_of_two() {
                return bad("associativity not a power of two");
            }
            if assoc > 64 {
                return bad("PLRU trees wider than 64 ways are not modeled");
            }
        }
        Ok(PolicyConfig { kind, assoc })
    }

    pub fn plru(assoc: usize) -> Result<Self> {
        Self::new(PolicyKind::Plru, assoc)
    }

    pub fn qlru(assoc: usize) -> Result<Self> {
        Self::new(PolicyKind::QlruNew1, assoc)
    }

    pub fn opaque(assoc: usize) -> Result<Self> {
        Self::new(PolicyKind::Opaque, assoc)
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn assoc(&self) -> usize {
        self.assoc
    }

    /// Control state of a never-used set: PLRU all zero, QLRU all age 3.
    pub fn initial_control(&self) -> ControlState {
        match self.kind {
            PolicyKind::Plru => ControlState::Plru(PlruControl::zero(self.assoc)),
            PolicyKind::QlruNew1 => ControlState::Qlru(QlruControl::uniform(self.assoc, 3)),
            PolicyKind::Opaque => ControlState::Opaque,
        }
    }

    /// The canonical content `I0..I<n-1>`, with `I<w>` placed at way `w`.
    pub fn canonical_content(&self) -> Vec<BlockId> {
        BlockId::range(0, self.assoc)
    }

    /// Order in which blocks must be accessed so that, from a fully invalid
    /// set, `content[w]` lands in way `w`.
    pub fn fill_order(&self, content: &[BlockId]) -> Vec<BlockId> {
        match self.kind {
            PolicyKind::QlruNew1 => content.iter().rev().copied().collect(),
            PolicyKind::Plru | PolicyKind::Opaque => content.to_vec(),
        }
    }
}

impl fmt::Display for PolicyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind, self.assoc)
    }
}

/// Policy-specific control state.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ControlState {
    Plru(PlruControl),
    Qlru(QlruControl),
    Opaque,
}

impl ControlState {
    /// Parses a canonical encoding for `policy`: a PLRU bit string root
    /// first, comma-joined QLRU ages (a `*` suffix is tolerated), or `-`.
    pub fn parse(policy: PolicyConfig, text: &str) -> Result<Self> {
        let text = text.trim();
        let err = |reason: String| Error::ParseControl {
            input: text.to_string(),
            reason,
        };
        match policy.kind() {
            PolicyKind::Plru => PlruControl::parse(policy.assoc(), text)
                .map(ControlState::Plru)
                .map_err(err),
            PolicyKind::QlruNew1 => QlruControl::parse(policy.assoc(), text)
                .map(|(c, _)| ControlState::Qlru(c))
                .map_err(err),
            PolicyKind::Opaque => {
                if text == "-" || text.is_empty() {
                    Ok(ControlState::Opaque)
                } else {
                    Err(err("opaque control state is written as -".into()))
                }
            }
        }
    }

    fn matches(&self, policy: PolicyConfig) -> bool {
        match (self, policy.kind()) {
            (ControlState::Plru(c), PolicyKind::Plru) => c.assoc() == policy.assoc(),
            (ControlState::Qlru(c), PolicyKind::QlruNew1) => c.assoc() == policy.assoc(),
            (ControlState::Opaque, PolicyKind::Opaque) => true,
            _ => false,
        }
    }
}

impl fmt::Display for ControlState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlState::Plru(c) => c.fmt(f),
            ControlState::Qlru(c) => c.fmt(f),
            ControlState::Opaque => f.write_str("-"),
        }
    }
}

impl Serialize for ControlState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

type Lines = SmallVec<[LineOccupancy; 16]>;

/// One cache set: occupancy per way plus control state.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CacheSetState {
    policy: PolicyConfig,
    lines: Lines,
    control: ControlState,
    // Round-robin pointer for Opaque replacement; not part of the control state.
    cursor: usize,
}

impl CacheSetState {
    /// All lines invalid, control at the policy's initial value.
    pub fn new_empty(policy: PolicyConfig) -> Self {
        CacheSetState {
            policy,
            lines: SmallVec::from_elem(LineOccupancy::Invalid, policy.assoc()),
            control: policy.initial_control(),
            cursor: 0,
        }
    }

    /// Builds a state from explicit parts, checking every invariant.
    pub fn with_control(
        policy: PolicyConfig,
        lines: &[LineOccupancy],
        control: ControlState,
    ) -> Result<Self> {
        if lines.len() != policy.assoc() {
            return Err(Error::MalformedState(format!(
                "{} lines for associativity {}",
                lines.len(),
                policy.assoc()
            )));
        }
        if !control.matches(policy) {
            return Err(Error::MalformedState(format!(
                "control state {control} does not match policy {policy}"
            )));
        }
        let mut seen: Vec<BlockId> = lines.iter().filter_map(|l| l.block()).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::MalformedState(
                "a block occupies more than one way".into(),
            ));
        }
        if let ControlState::Qlru(q) = &control {
            if q.ages().iter().any(|&a| a > 3) {
                return Err(Error::MalformedState("QLRU age above 3".into()));
            }
            let full = lines.iter().all(|l| l.is_valid());
            if full && !q.ages().contains(&3) {
                return Err(Error::MalformedState(
                    "full QLRU set without an age-3 way".into(),
                ));
            }
        }
        Ok(CacheSetState {
            policy,
            lines: lines.iter().copied().collect(),
            control,
            cursor: 0,
        })
    }

    /// A full set with `content[w]` at way `w` and the given control state.
    pub fn filled(
        policy: PolicyConfig,
        content: &[BlockId],
        control: ControlState,
    ) -> Result<Self> {
        check_content(policy, content)?;
        let lines: Lines = content.iter().map(|&b| LineOccupancy::Valid(b)).collect();
        Self::with_control(policy, &lines, control)
    }

    /// Fills a fresh set by accessing `content` in the policy's fill order,
    /// so `content[w]` ends up at way `w`.
    pub fn filled_from_empty(policy: PolicyConfig, content: &[BlockId]) -> Result<Self> {
        check_content(policy, content)?;
        let mut state = Self::new_empty(policy);
        for b in policy.fill_order(content) {
            state.access_mut(b);
        }
        Ok(state)
    }

    pub fn policy(&self) -> PolicyConfig {
        self.policy
    }

    pub fn lines(&self) -> &[LineOccupancy] {
        &self.lines
    }

    pub fn control(&self) -> &ControlState {
        &self.control
    }

    pub fn is_full(&self) -> bool {
        self.lines.iter().all(|l| l.is_valid())
    }

    pub fn is_fully_invalid(&self) -> bool {
        self.lines.iter().all(|l| !l.is_valid())
    }

    pub fn way_of(&self, block: BlockId) -> Option<Way> {
        self.lines
            .iter()
            .position(|&l| l == LineOccupancy::Valid(block))
            .map(Way)
    }

    pub fn block_at(&self, way: Way) -> Option<BlockId> {
        self.lines.get(way.0).and_then(|l| l.block())
    }

    pub fn resident_blocks(&self) -> Vec<BlockId> {
        self.lines.iter().filter_map(|l| l.block()).collect()
    }

    /// Applies one access in place.
    pub fn access_mut(&mut self, block: BlockId) -> AccessOutcome {
        let hit_way = self.way_of(block).map(|w| w.0);
        match &mut self.control {
            ControlState::Plru(bits) => match hit_way {
                Some(w) => {
                    bits.touch(w);
                    AccessOutcome::Hit
                }
                None => {
                    if let Some(w) = self.lines.iter().position(|l| !l.is_valid()) {
                        // Filling an invalid line leaves the tree untouched.
                        self.lines[w] = LineOccupancy::Valid(block);
                    } else {
                        let w = bits.victim();
                        self.lines[w] = LineOccupancy::Valid(block);
                        bits.touch(w);
                    }
                    AccessOutcome::Miss
                }
            },
            ControlState::Qlru(ages) => match hit_way {
                Some(w) => {
                    ages.hit(w);
                    AccessOutcome::Hit
                }
                None => {
                    let w = match self.lines.iter().rposition(|l| !l.is_valid()) {
                        Some(w) => {
                            ages.fill_invalid(w);
                            w
                        }
                        None => {
                            let w = ages
                                .first_age3()
                                .expect("normalization guarantees an age-3 way in a full set");
                            ages.replace(w);
                            w
                        }
                    };
                    self.lines[w] = LineOccupancy::Valid(block);
                    AccessOutcome::Miss
                }
            },
            ControlState::Opaque => match hit_way {
                Some(_) => AccessOutcome::Hit,
                None => {
                    let w = match self.lines.iter().position(|l| !l.is_valid()) {
                        Some(w) => w,
                        None => {
                            let w = self.cursor;
                            self.cursor = (self.cursor + 1) % self.lines.len();
                            w
                        }
                    };
                    self.lines[w] = LineOccupancy::Valid(block);
                    AccessOutcome::Miss
                }
            },
        }
    }

    pub fn access(&self, block: BlockId) -> (CacheSetState, AccessOutcome) {
        let mut next = self.clone();
        let outcome = next.access_mut(block);
        (next, outcome)
    }

    /// Folds `access` left to right.
    pub fn run_sequence(&self, blocks: &[BlockId]) -> (CacheSetState, Vec<AccessOutcome>) {
        let mut next = self.clone();
        let trace = next.run_mut(blocks);
        (next, trace)
    }

    pub fn run_mut(&mut self, blocks: &[BlockId]) -> Vec<AccessOutcome> {
        blocks.iter().map(|&b| self.access_mut(b)).collect()
    }

    /// The way the next miss would fill, or `None` for a full QLRU set with
    /// no age-3 way (unreachable for states built through this API).
    pub fn victim_way(&self) -> Option<Way> {
        match &self.control {
            ControlState::Plru(bits) => Some(Way(self
                .lines
                .iter()
                .position(|l| !l.is_valid())
                .unwrap_or_else(|| bits.victim()))),
            ControlState::Qlru(ages) => match self.lines.iter().rposition(|l| !l.is_valid()) {
                Some(w) => Some(Way(w)),
                None => ages.first_age3().map(Way),
            },
            ControlState::Opaque => Some(Way(self
                .lines
                .iter()
                .position(|l| !l.is_valid())
                .unwrap_or(self.cursor))),
        }
    }

    /// Canonical control encoding; QLRU ways that are invalid carry a `*`.
    pub fn encode_control(&self) -> String {
        match &self.control {
            ControlState::Qlru(q) => q
                .ages()
                .iter()
                .zip(&self.lines)
                .map(|(a, l)| {
                    if l.is_valid() {
                        a.to_string()
                    } else {
                        format!("{a}*")
                    }
                })
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        }
    }

    pub(crate) fn invalidate_way(&mut self, way: usize) {
        self.lines[way] = LineOccupancy::Invalid;
    }
}

impl fmt::Display for CacheSetState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.lines.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match l {
                LineOccupancy::Valid(b) => write!(f, "{b}")?,
                LineOccupancy::Invalid => f.write_str("-")?,
            }
        }
        write!(f, " | {}", self.encode_control())
    }
}

/// Content must be `assoc` distinct blocks.
pub fn check_content(policy: PolicyConfig, content: &[BlockId]) -> Result<()> {
    if content.len() != policy.assoc() {
        return Err(Error::InvalidContent(format!(
            "{} blocks given for associativity {}",
            content.len(),
            policy.assoc()
        )));
    }
    let mut sorted = content.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidContent("blocks must be distinct".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks(ids: &[u32]) -> Vec<BlockId> {
        ids.iter().map(|&i| BlockId(i)).collect()
    }

    #[test]
    fn empty_sets() {
        let s = CacheSetState::new_empty(PolicyConfig::plru(8).unwrap());
        assert!(s.is_fully_invalid());
        assert_eq!(s.encode_control(), "0000000");

        let q = CacheSetState::new_empty(PolicyConfig::qlru(4).unwrap());
        assert_eq!(q.encode_control(), "3*,3*,3*,3*");

        assert!(matches!(
            PolicyConfig::plru(6),
            Err(Error::InvalidAssociativity { assoc: 6, .. })
        ));
        assert!(PolicyConfig::qlru(1).is_err());
        assert!(PolicyConfig::opaque(12).is_ok());
    }

    #[test]
    fn plru_reset_and_mark_lru() {
        let p = PolicyConfig::plru(8).unwrap();
        let s = CacheSetState::filled_from_empty(p, &BlockId::range(0, 8)).unwrap();
        let (s, _) = s.run_sequence(&blocks(&[0, 2, 4, 6]));
        assert_eq!(s.encode_control(), "0001111");
        assert_eq!(s.victim_way(), Some(Way(1)));
        let (s, trace) = s.run_sequence(&blocks(&[4, 0]));
        assert_eq!(trace, vec![AccessOutcome::Hit; 2]);
        assert_eq!(s.encode_control(), "1111111");
        assert_eq!(s.victim_way(), Some(Way(7)));
    }

    #[test]
    fn plru_eviction_probe() {
        let p = PolicyConfig::plru(8).unwrap();
        let s = CacheSetState::filled_from_empty(p, &BlockId::range(0, 8)).unwrap();
        let (s, _) = s.run_sequence(&blocks(&[0, 2, 4, 6]));
        let (_, trace) = s.run_sequence(&blocks(&[8, 1]));
        assert_eq!(trace, vec![AccessOutcome::Miss, AccessOutcome::Miss]);
    }

    #[test]
    fn cachequery_style_trace() {
        let s = CacheSetState::new_empty(PolicyConfig::plru(8).unwrap());
        let (_, trace) = s.run_sequence(&blocks(&[0, 1, 2, 0, 1, 2]));
        assert_eq!(format_trace(&trace), "M M M H H H");
        let (same, empty) = s.run_sequence(&[]);
        assert_eq!(same, s);
        assert!(empty.is_empty());
    }

    #[test]
    fn qlru_hit_normalizes() {
        let p = PolicyConfig::qlru(4).unwrap();
        let content = BlockId::range(0, 4);
        let s =
            CacheSetState::filled(p, &content, ControlState::parse(p, "0,0,0,3").unwrap()).unwrap();
        let (s, o) = s.access(BlockId(3));
        assert_eq!(o, AccessOutcome::Hit);
        assert_eq!(s.encode_control(), "3,3,3,0");
    }

    #[test]
    fn qlru_fill_right_to_left() {
        let p = PolicyConfig::qlru(4).unwrap();
        let s = CacheSetState::new_empty(p);
        let (s, trace) = s.run_sequence(&blocks(&[3, 2, 1, 0]));
        assert!(trace.iter().all(|&o| o == AccessOutcome::Miss));
        assert_eq!(s.resident_blocks(), blocks(&[0, 1, 2, 3]));
        assert_eq!(s.encode_control(), "1,3,3,3");
    }

    #[test]
    fn qlru_victims() {
        let p = PolicyConfig::qlru(4).unwrap();
        let content = BlockId::range(4, 4);
        for (ages, way) in [("1,3,3,3", 1), ("1,2,3,2", 2)] {
            let s =
                CacheSetState::filled(p, &content, ControlState::parse(p, ages).unwrap()).unwrap();
            assert_eq!(s.victim_way(), Some(Way(way)));
        }
    }

    #[test]
    fn rejects_malformed_states() {
        let p = PolicyConfig::qlru(4).unwrap();
        let content = BlockId::range(0, 4);
        assert!(
            CacheSetState::filled(p, &content, ControlState::parse(p, "0,1,2,2").unwrap()).is_err()
        );
        assert!(CacheSetState::filled(p, &blocks(&[0, 0, 1, 2]), p.initial_control()).is_err());
        let plru = PolicyConfig::plru(4).unwrap();
        assert!(CacheSetState::filled(plru, &content, p.initial_control()).is_err());
    }

    #[test]
    fn opaque_round_robin() {
        let p = PolicyConfig::opaque(2).unwrap();
        let s = CacheSetState::new_empty(p);
        let (s, _) = s.run_sequence(&blocks(&[0, 1, 2, 3]));
        assert_eq!(s.resident_blocks(), blocks(&[2, 3]));
        assert_eq!(s.control(), &ControlState::Opaque);
    }

    #[test]
    fn block_parsing() {
        assert_eq!(parse_blocks("I0 I2·I4, I6").unwrap(), blocks(&[0, 2, 4, 6]));
        assert!(parse_blocks("I0 X2").is_err());
        assert!("I".parse::<BlockId>().is_err());
        assert_eq!(format_blocks(&blocks(&[8, 9])), "I8 I9");
    }
}
