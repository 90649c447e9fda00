//! Data-parallel helpers with a sequential fallback.
//!
//! Every embarrassingly parallel loop in the crate (channel construction over
//! initial states, victim-sequence enumeration, per-config table rows) goes
//! through [`map_slice`] or [`map_range`]. With the `rayon` feature disabled,
//! [`Execution::Parallel`] silently runs sequentially, so results never depend
//! on the feature set.

use std::ops::Range;

/// How a batch of independent work items is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "rayon") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// True when this mode actually fans out across threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "rayon") && self == Execution::Parallel
    }
}

/// Order-preserving map over a slice.
pub fn map_slice<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "rayon")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Order-preserving map over an index range.
pub fn map_range<R, F>(exec: Execution, range: Range<u64>, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync + Send,
{
    #[cfg(feature = "rayon")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return range.into_par_iter().map(f).collect();
    }
    let _ = exec;
    range.map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let items: Vec<u32> = (0..1000).collect();
        let seq = map_slice(Execution::Sequential, &items, |x| x * 3);
        let par = map_slice(Execution::Parallel, &items, |x| x * 3);
        assert_eq!(seq, par);
        assert_eq!(
            map_range(Execution::Sequential, 0..500, |i| i + 1),
            map_range(Execution::Parallel, 0..500, |i| i + 1)
        );
    }
}
