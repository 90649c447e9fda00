use std::fmt;

/// Tree-PLRU arrow bits, breadth-first: node 0 is the root and node `i` has
/// children `2i+1` and `2i+2`. A 0 bit points left, a 1 bit points right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlruControl {
    assoc: u8,
    bits: u64,
}

impl PlruControl {
    pub(crate) fn zero(assoc: usize) -> Self {
        debug_assert!(assoc.is_power_of_two() && (2..=64).contains(&assoc));
        PlruControl {
            assoc: assoc as u8,
            bits: 0,
        }
    }

    /// Builds the state whose canonical string, read as a binary number with
    /// the root as most significant digit, equals `index`.
    pub fn from_index(assoc: usize, index: u64) -> Self {
        let nodes = assoc - 1;
        let mut c = Self::zero(assoc);
        for node in 0..nodes {
            if (index >> (nodes - 1 - node)) & 1 == 1 {
                c.bits |= 1 << node;
            }
        }
        c
    }

    pub fn from_bits(assoc: usize, bits: &[bool]) -> Option<Self> {
        if !assoc.is_power_of_two() || !(2..=64).contains(&assoc) || bits.len() != assoc - 1 {
            return None;
        }
        let mut c = Self::zero(assoc);
        for (node, &b) in bits.iter().enumerate() {
            if b {
                c.bits |= 1 << node;
            }
        }
        Some(c)
    }

    pub(crate) fn parse(assoc: usize, text: &str) -> Result<Self, String> {
        let bits: Vec<bool> = text
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(format!("unexpected character {other:?} in PLRU bits")),
            })
            .collect::<Result<_, _>>()?;
        Self::from_bits(assoc, &bits)
            .ok_or_else(|| format!("expected {} bits for associativity {assoc}", assoc - 1))
    }

    pub fn assoc(&self) -> usize {
        self.assoc as usize
    }

    pub fn bit(&self, node: usize) -> bool {
        (self.bits >> node) & 1 == 1
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.assoc() - 1).map(|n| self.bit(n)).collect()
    }

    /// Tree nodes on the path from the root to the leaf of `way`, root first.
    pub fn ancestors(assoc: usize, way: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let (mut node, mut lo, mut size) = (0usize, 0usize, assoc);
        while size > 1 {
            path.push(node);
            let half = size / 2;
            if way < lo + half {
                node = 2 * node + 1;
            } else {
                node = 2 * node + 2;
                lo += half;
            }
            size = half;
        }
        path
    }

    /// Points every ancestor of `way` away from it.
    pub(crate) fn touch(&mut self, way: usize) {
        let (mut node, mut lo, mut size) = (0usize, 0usize, self.assoc());
        while size > 1 {
            let half = size / 2;
            if way < lo + half {
                self.bits |= 1 << node;
                node = 2 * node + 1;
            } else {
                self.bits &= !(1 << node);
                node = 2 * node + 2;
                lo += half;
            }
            size = half;
        }
    }

    /// Leaf reached by following the arrows from the root.
    pub(crate) fn victim(&self) -> usize {
        let (mut node, mut lo, mut size) = (0usize, 0usize, self.assoc());
        while size > 1 {
            let half = size / 2;
            if self.bit(node) {
                node = 2 * node + 2;
                lo += half;
            } else {
                node = 2 * node + 1;
            }
            size = half;
        }
        lo
    }
}

impl fmt::Display for PlruControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for node in 0..self.assoc() - 1 {
            f.write_str(if self.bit(node) { "1" } else { "0" })?;
        }
        Ok(())
    }
}
