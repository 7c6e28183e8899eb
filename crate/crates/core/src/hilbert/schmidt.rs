//! Canonical Schmidt decomposition across a bipartite split.
//!
//! Degenerate coefficients leave the Schmidt vectors free up to a unitary
//! within each degenerate subspace. We fix that freedom deterministically:
//! the subspace basis is the Gram-Schmidt orthonormalization of the
//! projected computational basis vectors, taken in ascending index order.
//! Each resulting vector has its first nonzero amplitude real and positive,
//! and a subspace that is block diagonal in some subsystem's computational
//! basis yields vectors that are definite in that subsystem.

use nalgebra::{DMatrix, DVector};

use super::layout::BipartiteSplit;
use super::state::{StateVector, C64};
use crate::error::{QrealError, Result};
use crate::tolerance::Tolerances;

/// Singular values at or below this fraction of the state norm are dropped.
const ZERO_COEFFICIENT: f64 = 1e-13;
/// Singular values closer than this are treated as one degenerate level.
const DEGENERACY: f64 = 1e-10;
/// Minimum squared residual for a projected basis vector to be accepted.
const PIVOT_ACCEPT: f64 = 1e-6;
/// Amplitudes below this modulus are skipped when fixing phases.
const PHASE_PIVOT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SchmidtDecomposition {
    pub coefficients: Vec<f64>,
    pub left_states: Vec<StateVector>,
    pub right_states: Vec<StateVector>,
}

impl SchmidtDecomposition {
    pub fn rank(&self) -> usize {
        self.coefficients.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c * c).collect()
    }

    /// Amplitudes of `sum_k c_k |left_k> |right_k>` in the split's
    /// (side_a, side_b) matrix order.
    pub fn reconstruct_matrix(&self) -> DMatrix<C64> {
        let rows = self.left_states.first().map_or(0, |s| s.len());
        let cols = self.right_states.first().map_or(0, |s| s.len());
        let mut m = DMatrix::zeros(rows, cols);
        for ((c, l), r) in self.coefficients.iter().zip(&self.left_states).zip(&self.right_states) {
            for i in 0..rows {
                let li = l.amplitude(i) * *c;
                for j in 0..cols {
                    m[(i, j)] += li * r.amplitude(j);
                }
            }
        }
        m
    }
}

/// Schmidt decomposition of a normalized state.
pub fn schmidt_decompose(
    state: &StateVector,
    split: &BipartiteSplit,
    tol: &Tolerances,
) -> Result<SchmidtDecomposition> {
    state.require_normalized(tol.norm)?;
    schmidt_unchecked(state, split)
}

/// Same decomposition without the normalization precondition; coefficients
/// then sum in square to the input's squared norm.
pub(crate) fn schmidt_unchecked(
    state: &StateVector,
    split: &BipartiteSplit,
) -> Result<SchmidtDecomposition> {
    let layout = state.layout();
    let a_layout = layout.sub_layout(split.side_a())?;
    let b_layout = layout.sub_layout(split.side_b())?;
    let m = state.to_matrix(split)?;
    let scale = state.norm();
    if scale == 0.0 {
        return Ok(SchmidtDecomposition {
            coefficients: Vec::new(),
            left_states: Vec::new(),
            right_states: Vec::new(),
        });
    }

    let svd = m.clone().svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| QrealError::NumericalFailure("SVD produced no left vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    let sv = &svd.singular_values;
    if sv.iter().any(|s| !s.is_finite()) {
        return Err(QrealError::NumericalFailure("non-finite singular value".into()));
    }
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| sv[i] > ZERO_COEFFICIENT * scale)
        .collect();

    let mut coefficients = Vec::new();
    let mut left_states = Vec::new();
    let mut right_states = Vec::new();
    let a_layout = std::sync::Arc::new(a_layout);
    let b_layout = std::sync::Arc::new(b_layout);

    let mut start = 0;
    while start < kept.len() {
        let mut end = start + 1;
        while end < kept.len() && sv[kept[end - 1]] - sv[kept[end]] <= DEGENERACY * scale {
            end += 1;
        }
        let group: Vec<DVector<C64>> = kept[start..end]
            .iter()
            .map(|&i| u.column(i).into_owned())
            .collect();
        let basis = if group.len() == 1 {
            vec![fix_phase(group[0].clone())]
        } else {
            canonical_basis(&group)
        };
        let mut members = Vec::with_capacity(basis.len());
        for left in basis {
            // right = (left^dagger M)^T, coefficient = its norm
            let right: DVector<C64> = m.transpose() * left.map(|x| x.conj());
            let c = right.norm();
            members.push((left, right, c));
        }
        let mean = members.iter().map(|(_, _, c)| c).sum::<f64>() / members.len() as f64;
        for (left, right, c) in members {
            coefficients.push(mean);
            left_states.push(StateVector::new(a_layout.clone(), left.iter().copied().collect())?);
            right_states.push(StateVector::new(
                b_layout.clone(),
                right.iter().map(|x| x / c).collect(),
            )?);
        }
        start = end;
    }

    Ok(SchmidtDecomposition {
        coefficients,
        left_states,
        right_states,
    })
}

fn fix_phase(mut v: DVector<C64>) -> DVector<C64> {
    if let Some(a) = v.iter().find(|a| a.norm() > PHASE_PIVOT).copied() {
        let phase = a.conj() / a.norm();
        v.iter_mut().for_each(|x| *x *= phase);
    }
    v
}

fn canonical_basis(group: &[DVector<C64>]) -> Vec<DVector<C64>> {
    let dim = group[0].len();
    let k = group.len();
    let mut out: Vec<DVector<C64>> = Vec::with_capacity(k);
    for i in 0..dim {
        if out.len() == k {
            break;
        }
        // P e_i with P the projector onto the group's span
        let mut r = DVector::from_fn(dim, |row, _| {
            group.iter().map(|u| u[row] * u[i].conj()).sum::<C64>()
        });
        for _ in 0..2 {
            for v in &out {
                let c = v.dotc(&r);
                r -= v * c;
            }
        }
        let n = r.norm();
        if n * n > PIVOT_ACCEPT {
            out.push(fix_phase(r / C64::new(n, 0.0)));
        }
    }
    if out.len() < k {
        // Pathological conditioning: keep the raw singular vectors.
        return group.iter().cloned().map(fix_phase).collect();
    }
    out
}

/// True iff the second Schmidt weight is at most `eps_branch`.
pub fn factorization_test(
    state: &StateVector,
    split: &BipartiteSplit,
    eps_branch: f64,
) -> Result<bool> {
    let d = schmidt_unchecked(state, split)?;
    let second = d.coefficients.get(1).copied().unwrap_or(0.0);
    Ok(second * second <= eps_branch)
}
