//! Legendre transformation between generating-function kinds.
//!
//! Working in the full 4n-variable space `[q, p, q0, p0]`, the gradient
//! relations of the source kind are solved for the variables whose roles
//! swap, the solutions are substituted back, and the bilinear correction
//! terms are added. When the swap system degenerates the inversion outcome
//! (fold, unclassified, or a continuum) is returned instead of a
//! polynomial; it carries everything needed to enumerate branches
//! numerically.

use crate::partition::BoundaryPartition;
use crate::poly::{
    invert_series, Inversion, PolynomialSystem, TruncatedPolynomial,
};

use super::HjError;

/// Full-space variable index of independent slot `slot` of `partition`.
///
/// Full-space layout: `q_1..q_n, p_1..p_n, q0_1..q0_n, p0_1..p0_n`.
pub fn full_var_of(partition: &BoundaryPartition, slot: usize) -> usize {
    let n = partition.n();
    if slot < n {
        if partition.endpoint1_position(slot) {
            slot
        } else {
            n + slot
        }
    } else {
        let k = slot - n;
        if partition.endpoint0_position(k) {
            2 * n + k
        } else {
            3 * n + k
        }
    }
}

/// Variable map (slot -> full-space index) for a whole partition.
pub fn full_var_map(partition: &BoundaryPartition) -> Vec<usize> {
    (0..2 * partition.n())
        .map(|s| full_var_of(partition, s))
        .collect()
}

/// A degenerate transform: the swap system has no unique branch.
#[derive(Debug, Clone)]
pub struct SingularTransform {
    pub inversion: Inversion,
    /// Source polynomial lifted to the full 4n-variable space.
    pub lifted_source: TruncatedPolynomial,
    pub source_partition: BoundaryPartition,
    pub target_partition: BoundaryPartition,
    /// Full-space indices of the old variables the transform eliminates.
    pub swap_unknowns: Vec<usize>,
}

impl SingularTransform {
    pub fn describe(&self) -> String {
        match &self.inversion {
            Inversion::Unique { .. } => "a unique branch (not singular)".to_string(),
            Inversion::Fold(d) => format!(
                "a fold: 2 branches (leading coefficient {:.3e})",
                d.leading_coef
            ),
            Inversion::Unclassified(d) => format!(
                "an unclassified degeneracy with leading pure power of degree {}",
                d.leading_degree
            ),
            Inversion::InfiniteFamily => "infinitely many solutions".to_string(),
        }
    }
}

/// Outcome of a Legendre transform at a fixed time.
#[derive(Debug, Clone)]
pub enum LegendreResult {
    Polynomial(TruncatedPolynomial),
    Singular(SingularTransform),
}

/// Transform `source_poly` (in the 2n-variable layout of `source`) into
/// the layout of `target`, exactly through the truncation order.
pub fn legendre_transform_poly(
    source_poly: &TruncatedPolynomial,
    source: &BoundaryPartition,
    target: &BoundaryPartition,
) -> Result<LegendreResult, HjError> {
    let n = source.n();
    let order = source_poly.max_degree();
    if target.n() != n {
        return Err(HjError::DimensionMismatch(target.n(), n));
    }
    if source == target {
        return Ok(LegendreResult::Polynomial(source_poly.clone()));
    }
    let full = 4 * n;
    let lifted = source_poly.embed(full, order, &full_var_map(source))?;

    // Equations for every variable whose role swaps, with the old variable
    // as the unknown. Signs follow the gradient relations.
    let mut equations = Vec::new();
    let mut unknowns = Vec::new();
    let var = |v: usize| TruncatedPolynomial::variable(full, order, v);
    for i in 0..n {
        let src_q = source.endpoint1_position(i);
        let tgt_q = target.endpoint1_position(i);
        if src_q == tgt_q {
            continue;
        }
        if src_q {
            // q_i was independent; p_i = dF/dq_i becomes independent.
            equations.push(var(n + i).sub(&lifted.differentiate(i)?)?);
            unknowns.push(i);
        } else {
            // p_i was independent; q_i = -dF/dp_i becomes independent.
            equations.push(var(i).add(&lifted.differentiate(n + i)?)?);
            unknowns.push(n + i);
        }
    }
    for k in 0..n {
        let src_q = source.endpoint0_position(k);
        let tgt_q = target.endpoint0_position(k);
        if src_q == tgt_q {
            continue;
        }
        if src_q {
            // q0_k was independent; p0_k = -dF/dq0_k becomes independent.
            equations.push(var(3 * n + k).add(&lifted.differentiate(2 * n + k)?)?);
            unknowns.push(2 * n + k);
        } else {
            // p0_k was independent; q0_k = +dF/dp0_k becomes independent.
            equations.push(var(2 * n + k).sub(&lifted.differentiate(3 * n + k)?)?);
            unknowns.push(3 * n + k);
        }
    }

    let system = PolynomialSystem::new(equations, unknowns.clone())?;
    let inversion = invert_series(&system, order)?;
    let maps = match inversion {
        Inversion::Unique { ref maps } => maps.clone(),
        _ => {
            return Ok(LegendreResult::Singular(SingularTransform {
                inversion,
                lifted_source: lifted,
                source_partition: source.clone(),
                target_partition: target.clone(),
                swap_unknowns: unknowns,
            }))
        }
    };

    // Substitute the solved old variables everywhere.
    let mut subs: Vec<TruncatedPolynomial> = (0..full).map(var).collect();
    for (u, m) in unknowns.iter().zip(&maps) {
        subs[*u] = m.clone();
    }
    let mut result = lifted.compose(&subs)?;

    // Bilinear corrections: -q_i p_i for indices entering the momentum
    // side at endpoint 1, +q_i p_i for those leaving it; the opposite
    // signs at endpoint 0.
    for i in 0..n {
        let src_q = source.endpoint1_position(i);
        let tgt_q = target.endpoint1_position(i);
        if src_q == tgt_q {
            continue;
        }
        let term = subs[i].mul_truncated(&subs[n + i])?;
        if src_q {
            result = result.sub(&term)?;
        } else {
            result = result.add(&term)?;
        }
    }
    for k in 0..n {
        let src_q = source.endpoint0_position(k);
        let tgt_q = target.endpoint0_position(k);
        if src_q == tgt_q {
            continue;
        }
        let term = subs[2 * n + k].mul_truncated(&subs[3 * n + k])?;
        if src_q {
            result = result.add(&term)?;
        } else {
            result = result.sub(&term)?;
        }
    }

    // Re-express in the target's own 2n-variable layout. Coefficients on
    // eliminated variables beyond round-off indicate a bug, not noise.
    let eps = 1e-9 * result.max_abs_coeff().max(1.0);
    let projected = result
        .extract(&full_var_map(target), eps)
        .map_err(HjError::Poly)?;
    Ok(LegendreResult::Polynomial(projected))
}
