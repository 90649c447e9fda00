use std::fmt;

use smallvec::SmallVec;

/// Per-way ages of quad-age LRU, left to right. Ages survive invalidation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QlruControl {
    ages: SmallVec<[u8; 16]>,
}

impl QlruControl {
    pub(crate) fn uniform(assoc: usize, age: u8) -> Self {
        QlruControl {
            ages: SmallVec::from_elem(age, assoc),
        }
    }

    /// Returns `None` if any age exceeds 3.
    pub fn from_ages(ages: &[u8]) -> Option<Self> {
        if ages.len() < 2 || ages.iter().any(|&a| a > 3) {
            return None;
        }
        Some(QlruControl {
            ages: ages.iter().copied().collect(),
        })
    }

    /// Parses `"1,3,3,3"` (or `"1,3*,3*,3*"`), returning the ages and which
    /// ways were marked invalid.
    pub(crate) fn parse(assoc: usize, text: &str) -> Result<(Self, Vec<bool>), String> {
        let mut ages = Vec::with_capacity(assoc);
        let mut invalid = Vec::with_capacity(assoc);
        for part in text.split(',') {
            let part = part.trim();
            let (digits, star) = match part.strip_suffix('*') {
                Some(d) => (d, true),
                None => (part, false),
            };
            let age: u8 = digits.parse().map_err(|_| format!("bad age {part:?}"))?;
            if age > 3 {
                return Err(format!("age {age} out of range 0..=3"));
            }
            ages.push(age);
            invalid.push(star);
        }
        if ages.len() != assoc {
            return Err(format!("expected {assoc} ages, found {}", ages.len()));
        }
        Ok((QlruControl::from_ages(&ages).ok_or("bad ages")?, invalid))
    }

    pub fn assoc(&self) -> usize {
        self.ages.len()
    }

    pub fn ages(&self) -> &[u8] {
        &self.ages
    }

    pub(crate) fn first_age3(&self) -> Option<usize> {
        self.ages.iter().position(|&a| a == 3)
    }

    pub(crate) fn hit(&mut self, way: usize) {
        self.ages[way] = 0;
        self.normalize(way);
    }

    /// Insertion into an invalid way keeps a persisted age of 0, otherwise
    /// starts at 1.
    pub(crate) fn fill_invalid(&mut self, way: usize) {
        if self.ages[way] != 0 {
            self.ages[way] = 1;
        }
        self.normalize(way);
    }

    pub(crate) fn replace(&mut self, way: usize) {
        self.ages[way] = 1;
        self.normalize(way);
    }

    /// While no way has age 3, age every way except `touched`. Valid and
    /// invalid ways are treated alike.
    fn normalize(&mut self, touched: usize) {
        while !self.ages.contains(&3) {
            for (w, age) in self.ages.iter_mut().enumerate() {
                if w != touched {
                    *age += 1;
                }
            }
        }
    }
}

impl fmt::Display for QlruControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.ages.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_loops_until_age3() {
        let mut q = QlruControl::from_ages(&[0, 0, 0, 0]).unwrap();
        q.normalize(3);
        assert_eq!(q.ages(), &[3, 3, 3, 0]);
    }

    #[test]
    fn fill_keeps_zero_age() {
        let mut q = QlruControl::from_ages(&[3, 0, 3, 0]).unwrap();
        q.fill_invalid(3);
        assert_eq!(q.ages(), &[3, 0, 3, 0]);
        q.fill_invalid(2);
        assert_eq!(q.ages(), &[3, 0, 1, 0]);
    }

    #[test]
    fn parse_with_stars() {
        let (q, inv) = QlruControl::parse(4, "3*,0*,3*,0*").unwrap();
        assert_eq!(q.ages(), &[3, 0, 3, 0]);
        assert!(inv.iter().all(|&i| i));
        assert!(QlruControl::parse(4, "1,2,3").is_err());
        assert!(QlruControl::parse(4, "1,2,3,4").is_err());
    }
}
