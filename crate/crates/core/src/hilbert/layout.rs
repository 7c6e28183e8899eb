use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{QrealError, Result};
use crate::tolerance::max_total_dim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Object,
    Instrument,
    Record,
    Environment,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Object => "object",
            Role::Instrument => "instrument",
            Role::Record => "record",
            Role::Environment => "environment",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Subsystem {
    pub label: String,
    pub dim: usize,
    pub role: Role,
}

impl Subsystem {
    pub fn new(label: impl Into<String>, dim: usize, role: Role) -> Self {
        Self {
            label: label.into(),
            dim,
            role,
        }
    }
}

/// Ordered tensor factorization of a composite space.
///
/// Basis indices are mixed-radix with subsystem 0 most significant, so for
/// two qubits the index of `|a b>` is `2 a + b`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubsystemLayout {
    subsystems: Vec<Subsystem>,
    strides: Vec<usize>,
    total: usize,
}

impl SubsystemLayout {
    pub fn new(subsystems: Vec<Subsystem>) -> Result<Self> {
        Self::with_limit(subsystems, max_total_dim())
    }

    pub fn with_limit(subsystems: Vec<Subsystem>, limit: usize) -> Result<Self> {
        let mut total: usize = 1;
        for s in &subsystems {
            if s.dim == 0 {
                return Err(QrealError::InvalidParameter(format!(
                    "subsystem '{}' has dimension 0",
                    s.label
                )));
            }
            total = total.checked_mul(s.dim).ok_or(QrealError::CapacityExceeded {
                requested: usize::MAX,
                limit,
            })?;
        }
        if total > limit {
            return Err(QrealError::CapacityExceeded {
                requested: total,
                limit,
            });
        }
        let mut strides = vec![1; subsystems.len()];
        for i in (0..subsystems.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * subsystems[i + 1].dim;
        }
        Ok(Self {
            subsystems,
            strides,
            total,
        })
    }

    /// Layout with no factors; its single basis state is the scalar.
    pub fn scalar() -> Self {
        Self {
            subsystems: Vec::new(),
            strides: Vec::new(),
            total: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn subsystem(&self, i: usize) -> &Subsystem {
        &self.subsystems[i]
    }

    pub fn dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.dim).collect()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.subsystems[i].dim
    }

    pub fn role(&self, i: usize) -> Role {
        self.subsystems[i].role
    }

    pub fn label(&self, i: usize) -> &str {
        &self.subsystems[i].label
    }

    pub fn stride(&self, i: usize) -> usize {
        self.strides[i]
    }

    /// Position of the subsystem with the given label.
    pub fn find(&self, label: &str) -> Option<usize> {
        self.subsystems.iter().position(|s| s.label == label)
    }

    /// Indices of all subsystems carrying `role`.
    pub fn with_role(&self, role: Role) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.role(i) == role).collect()
    }

    #[inline]
    pub fn digit(&self, index: usize, subsystem: usize) -> usize {
        (index / self.strides[subsystem]) % self.subsystems[subsystem].dim
    }

    pub fn digits(&self, index: usize) -> Vec<usize> {
        (0..self.len()).map(|s| self.digit(index, s)).collect()
    }

    pub fn index_of(&self, digits: &[usize]) -> Result<usize> {
        if digits.len() != self.len() {
            return Err(QrealError::DimensionMismatch {
                expected: self.len(),
                got: digits.len(),
            });
        }
        let mut idx = 0;
        for (s, &d) in digits.iter().enumerate() {
            if d >= self.dim(s) {
                return Err(QrealError::IndexError(format!(
                    "basis index {d} out of range for subsystem {s} of dimension {}",
                    self.dim(s)
                )));
            }
            idx += d * self.strides[s];
        }
        Ok(idx)
    }

    /// Layout of the listed subsystems, in the listed order.
    pub fn sub_layout(&self, indices: &[usize]) -> Result<SubsystemLayout> {
        self.check_indices(indices)?;
        let subs = indices.iter().map(|&i| self.subsystems[i].clone()).collect();
        SubsystemLayout::with_limit(subs, usize::MAX)
    }

    /// Concatenation of two layouts.
    pub fn concat(&self, other: &SubsystemLayout) -> Result<SubsystemLayout> {
        let mut subs = self.subsystems.clone();
        subs.extend(other.subsystems.iter().cloned());
        SubsystemLayout::new(subs)
    }

    /// Ascending indices not in `indices`.
    pub fn complement(&self, indices: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|i| !indices.contains(i)).collect()
    }

    /// Flat offsets, relative to a base index whose listed digits are zero,
    /// of every joint configuration of `indices` (mixed radix, first listed
    /// subsystem most significant).
    pub fn offsets(&self, indices: &[usize]) -> Vec<usize> {
        let mut offsets = vec![0usize];
        for &s in indices {
            let mut next = Vec::with_capacity(offsets.len() * self.dim(s));
            for &o in &offsets {
                for d in 0..self.dim(s) {
                    next.push(o + d * self.strides[s]);
                }
            }
            offsets = next;
        }
        offsets
    }

    pub(crate) fn check_indices(&self, indices: &[usize]) -> Result<()> {
        for (k, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(QrealError::IndexError(format!(
                    "subsystem {i} not in layout of {} subsystems",
                    self.len()
                )));
            }
            if indices[..k].contains(&i) {
                return Err(QrealError::IndexError(format!(
                    "subsystem {i} listed twice"
                )));
            }
        }
        Ok(())
    }
}

/// Partition of a layout's subsystems into two sides.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BipartiteSplit {
    side_a: Vec<usize>,
    side_b: Vec<usize>,
}

impl BipartiteSplit {
    /// `side_b` is the ascending complement of `side_a` in `0..n_subsystems`.
    pub fn new(side_a: Vec<usize>, n_subsystems: usize) -> Result<Self> {
        if side_a.is_empty() {
            return Err(QrealError::InvalidSplit("side_a is empty".into()));
        }
        for (k, &i) in side_a.iter().enumerate() {
            if i >= n_subsystems {
                return Err(QrealError::InvalidSplit(format!(
                    "subsystem {i} out of range ({n_subsystems} subsystems)"
                )));
            }
            if side_a[..k].contains(&i) {
                return Err(QrealError::InvalidSplit(format!("subsystem {i} repeated")));
            }
        }
        let side_b = (0..n_subsystems).filter(|i| !side_a.contains(i)).collect();
        Ok(Self { side_a, side_b })
    }

    pub fn side_a(&self) -> &[usize] {
        &self.side_a
    }

    pub fn side_b(&self) -> &[usize] {
        &self.side_b
    }

    pub fn n_subsystems(&self) -> usize {
        self.side_a.len() + self.side_b.len()
    }

    /// Re-express the split on a view that keeps only `kept` (ascending
    /// original indices), renumbering subsystems by their position in `kept`.
    pub fn restricted_to(&self, kept: &[usize]) -> Result<BipartiteSplit> {
        let side_a: Vec<usize> = self
            .side_a
            .iter()
            .filter_map(|i| kept.iter().position(|k| k == i))
            .collect();
        if side_a.is_empty() {
            return Err(QrealError::InvalidSplit(
                "side_a is fully conditioned away".into(),
            ));
        }
        let side_b: Vec<usize> = self
            .side_b
            .iter()
            .filter_map(|i| kept.iter().position(|k| k == i))
            .collect();
        Ok(BipartiteSplit { side_a, side_b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qubits(n: usize) -> SubsystemLayout {
        SubsystemLayout::new(
            (0..n)
                .map(|i| Subsystem::new(format!("q{i}"), 2, Role::Object))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mixed_radix_is_big_endian() {
        let layout = SubsystemLayout::new(vec![
            Subsystem::new("a", 2, Role::Object),
            Subsystem::new("b", 3, Role::Instrument),
        ])
        .unwrap();
        assert_eq!(layout.total_dim(), 6);
        assert_eq!(layout.index_of(&[1, 2]).unwrap(), 5);
        assert_eq!(layout.digits(4), vec![1, 1]);
        assert!(layout.index_of(&[0, 3]).is_err());
    }

    #[test]
    fn capacity_limit_enforced() {
        let subs = (0..17)
            .map(|i| Subsystem::new(format!("q{i}"), 2, Role::Object))
            .collect();
        assert!(matches!(
            SubsystemLayout::with_limit(subs, 1 << 16),
            Err(QrealError::CapacityExceeded { requested: 131072, .. })
        ));
    }

    #[test]
    fn offsets_follow_listed_order() {
        let layout = qubits(3);
        assert_eq!(layout.offsets(&[2, 0]), vec![0, 4, 1, 5]);
    }

    #[test]
    fn split_complement_and_restriction() {
        let split = BipartiteSplit::new(vec![3, 1], 4).unwrap();
        assert_eq!(split.side_b(), &[0, 2]);
        let view = split.restricted_to(&[1, 2, 3]).unwrap();
        assert_eq!(view.side_a(), &[2, 0]);
        assert_eq!(view.side_b(), &[1]);
        assert!(BipartiteSplit::new(vec![], 2).is_err());
        assert!(BipartiteSplit::new(vec![2], 2).is_err());
        assert!(split.restricted_to(&[0, 2]).is_err());
    }
}
