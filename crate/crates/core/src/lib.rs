//! Simulation and analysis of cache replacement-policy control state that
//! survives flush instructions.
//!
//! The crate models tree-PLRU and quad-age LRU ("New1") sets as pure
//! automata ([`policy`]), applies control-preserving or control-resetting
//! flushes and refills ([`flush`]), measures the resulting leakage in bits
//! ([`leakage`]), synthesizes distinguishing and reset sequences
//! ([`distinguish`]), simulates a flush-resistant Prime+Probe
//! ([`attack`]) and evaluates small access scripts ([`script`]).

pub mod attack;
pub mod distinguish;
pub mod error;
pub mod flush;
pub mod leakage;
pub mod par;
pub mod policy;
pub mod script;

pub use error::{Error, Result};
pub use par::Execution;
pub use policy::{
    AccessOutcome, BlockId, CacheSetState, ControlState, LineOccupancy, PolicyConfig, PolicyKind,
    Way,
};
