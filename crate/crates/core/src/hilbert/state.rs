use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::layout::{BipartiteSplit, SubsystemLayout};
use crate::error::{QrealError, Result};
use crate::tolerance::max_total_dim;

pub type C64 = Complex64;

/// Complex amplitude vector over a composite layout.
///
/// Normalization is not enforced on construction: conditioned views and
/// branch components are legitimately unnormalized. Operations that need a
/// unit vector check it themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    layout: Arc<SubsystemLayout>,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(layout: impl Into<Arc<SubsystemLayout>>, amps: Vec<C64>) -> Result<Self> {
        let layout = layout.into();
        if amps.len() != layout.total_dim() {
            return Err(QrealError::DimensionMismatch {
                expected: layout.total_dim(),
                got: amps.len(),
            });
        }
        Ok(Self { layout, amps })
    }

    /// Real amplitudes, convenient for hand-built states.
    pub fn from_real(layout: impl Into<Arc<SubsystemLayout>>, amps: &[f64]) -> Result<Self> {
        Self::new(layout, amps.iter().map(|&a| C64::new(a, 0.0)).collect())
    }

    pub fn basis(layout: impl Into<Arc<SubsystemLayout>>, digits: &[usize]) -> Result<Self> {
        let layout = layout.into();
        let idx = layout.index_of(digits)?;
        let mut amps = vec![C64::new(0.0, 0.0); layout.total_dim()];
        amps[idx] = C64::new(1.0, 0.0);
        Ok(Self { layout, amps })
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> &Arc<SubsystemLayout> {
        &self.layout
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitude(&self, index: usize) -> C64 {
        self.amps[index]
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_normalized(&self, eps: f64) -> bool {
        (self.norm_sqr() - 1.0).abs() <= eps
    }

    pub fn require_normalized(&self, eps: f64) -> Result<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() <= eps {
            Ok(())
        } else {
            Err(QrealError::NotNormalized { norm_sqr: n })
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(QrealError::NotNormalized {
                norm_sqr: self.norm_sqr(),
            });
        }
        Ok(self.scaled(C64::new(1.0 / n, 0.0)))
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self {
            layout: self.layout.clone(),
            amps: self.amps.iter().map(|a| a * c).collect(),
        }
    }

    pub(crate) fn with_amplitudes(&self, amps: Vec<C64>) -> Self {
        debug_assert_eq!(amps.len(), self.amps.len());
        Self {
            layout: self.layout.clone(),
            amps,
        }
    }

    fn check_same_layout(&self, other: &StateVector) -> Result<()> {
        if self.layout.dims() != other.layout.dims() {
            return Err(QrealError::LayoutMismatch(format!(
                "dims {:?} vs {:?}",
                self.layout.dims(),
                other.layout.dims()
            )));
        }
        Ok(())
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        self.check_same_layout(other)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Componentwise sum of two states on the same layout.
    pub fn add(&self, other: &StateVector) -> Result<StateVector> {
        self.check_same_layout(other)?;
        Ok(self.with_amplitudes(
            self.amps.iter().zip(&other.amps).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Largest componentwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &StateVector) -> Result<f64> {
        self.check_same_layout(other)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// Rows indexed by the joint basis of `split.side_a()`, columns by
    /// `split.side_b()`, each in listed order.
    pub fn to_matrix(&self, split: &BipartiteSplit) -> Result<DMatrix<C64>> {
        if split.n_subsystems() != self.layout.len() {
            return Err(QrealError::InvalidSplit(format!(
                "split covers {} subsystems, layout has {}",
                split.n_subsystems(),
                self.layout.len()
            )));
        }
        let rows = self.layout.offsets(split.side_a());
        let cols = self.layout.offsets(split.side_b());
        Ok(DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
            self.amps[rows[r] + cols[c]]
        }))
    }

    /// Applies `op` (square, acting on the joint basis of `target` in listed
    /// order) to the listed subsystems.
    pub fn apply_local(&self, target: &[usize], op: &DMatrix<C64>) -> Result<StateVector> {
        self.layout.check_indices(target)?;
        let offsets = self.layout.offsets(target);
        let td = offsets.len();
        if op.nrows() != td || op.ncols() != td {
            return Err(QrealError::DimensionMismatch {
                expected: td,
                got: op.nrows(),
            });
        }
        let bases = self.layout.offsets(&self.layout.complement(target));
        let mut out = vec![C64::new(0.0, 0.0); self.amps.len()];
        let mut buf = vec![C64::new(0.0, 0.0); td];
        for &base in &bases {
            for (j, &o) in offsets.iter().enumerate() {
                buf[j] = self.amps[base + o];
            }
            for (i, &oi) in offsets.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for (j, b) in buf.iter().enumerate() {
                    let m = op[(i, j)];
                    if m.re != 0.0 || m.im != 0.0 {
                        acc += m * b;
                    }
                }
                out[base + oi] = acc;
            }
        }
        Ok(self.with_amplitudes(out))
    }

    /// Reinserts conditioned subsystems as definite basis states. `kept` are
    /// the full-layout indices this view covers (ascending) and `fixed` the
    /// remaining full-layout indices with their basis values.
    pub fn embed(
        &self,
        full: &Arc<SubsystemLayout>,
        kept: &[usize],
        fixed: &[(usize, usize)],
    ) -> Result<StateVector> {
        if kept.len() != self.layout.len() || kept.len() + fixed.len() != full.len() {
            return Err(QrealError::LayoutMismatch(
                "embedding does not cover the full layout".into(),
            ));
        }
        let mut base = 0;
        for &(s, v) in fixed {
            if v >= full.dim(s) {
                return Err(QrealError::IndexError(format!(
                    "basis index {v} out of range for subsystem {s}"
                )));
            }
            base += v * full.stride(s);
        }
        let offsets = full.offsets(kept);
        let mut amps = vec![C64::new(0.0, 0.0); full.total_dim()];
        for (a, &o) in self.amps.iter().zip(&offsets) {
            amps[base + o] = *a;
        }
        StateVector::new(full.clone(), amps)
    }

    /// Little-endian bytes of every (re, im) pair, for bitwise comparison.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.amps.len() * 16);
        for a in &self.amps {
            out.extend_from_slice(&a.re.to_le_bytes());
            out.extend_from_slice(&a.im.to_le_bytes());
        }
        out
    }
}

/// Tensor product of states on disjoint factors; the combined layout is the
/// concatenation of the inputs' layouts.
pub fn tensor_product(states: &[StateVector]) -> Result<StateVector> {
    let limit = max_total_dim();
    let mut subs = Vec::new();
    let mut total: usize = 1;
    for s in states {
        subs.extend(s.layout().subsystems().iter().cloned());
        total = total.saturating_mul(s.len());
        if total > limit {
            return Err(QrealError::CapacityExceeded {
                requested: total,
                limit,
            });
        }
    }
    let layout = SubsystemLayout::with_limit(subs, limit)?;
    let mut amps = vec![C64::new(1.0, 0.0)];
    for s in states {
        let mut next = Vec::with_capacity(amps.len() * s.len());
        for a in &amps {
            for b in s.amplitudes() {
                next.push(a * b);
            }
        }
        amps = next;
    }
    StateVector::new(layout, amps)
}

/// Contracts the listed subsystems against computational basis states,
/// leaving an unnormalized state on the remaining subsystems (ascending).
/// Its squared norm is the Born weight of the assignment.
pub fn partial_inner(
    state: &StateVector,
    subsystems: &[usize],
    assignment: &[usize],
) -> Result<StateVector> {
    let layout = state.layout();
    layout.check_indices(subsystems)?;
    if subsystems.len() != assignment.len() {
        return Err(QrealError::DimensionMismatch {
            expected: subsystems.len(),
            got: assignment.len(),
        });
    }
    let mut base = 0;
    for (&s, &v) in subsystems.iter().zip(assignment) {
        if v >= layout.dim(s) {
            return Err(QrealError::IndexError(format!(
                "basis index {v} out of range for subsystem {s} of dimension {}",
                layout.dim(s)
            )));
        }
        base += v * layout.stride(s);
    }
    let rest = layout.complement(subsystems);
    let offsets = layout.offsets(&rest);
    let amps = offsets.iter().map(|&o| state.amps[base + o]).collect();
    let sub = if rest.is_empty() {
        SubsystemLayout::scalar()
    } else {
        layout.sub_layout(&rest)?
    };
    StateVector::new(sub, amps)
}

/// True iff `|<a|b>| >= 1 - eps`.
pub fn global_phase_equal(a: &StateVector, b: &StateVector, eps: f64) -> Result<bool> {
    Ok(a.inner(b)?.norm() >= 1.0 - eps)
}
