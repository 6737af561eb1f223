//! Boundary partitions: which of the 4n endpoint coordinates a generating
//! function treats as independent variables.
//!
//! The endpoint-1 side keeps positions for indices in `I_p` and momenta
//! for the rest; the endpoint-0 side keeps positions for indices in `K_r`
//! and momenta for the rest. The four classical kinds are the extreme
//! choices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("index {0} out of range for {1} degrees of freedom (expected 1..={1})")]
    IndexOutOfRange(usize, usize),
    #[error("duplicate index {0} in partition")]
    Duplicate(usize),
}

/// One of the four classical generating-function kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GfKind {
    F1,
    F2,
    F3,
    F4,
}

impl GfKind {
    pub fn name(self) -> &'static str {
        match self {
            GfKind::F1 => "F1",
            GfKind::F2 => "F2",
            GfKind::F3 => "F3",
            GfKind::F4 => "F4",
        }
    }

    /// The state-transition block whose invertibility the kind requires.
    pub fn pivot_name(self) -> &'static str {
        match self {
            GfKind::F1 => "Phi_qp",
            GfKind::F2 => "Phi_qq",
            GfKind::F3 => "Phi_pp",
            GfKind::F4 => "Phi_pq",
        }
    }

    pub fn partition(self, n: usize) -> BoundaryPartition {
        let all: Vec<usize> = (1..=n).collect();
        let none: Vec<usize> = Vec::new();
        let (ip, kr) = match self {
            GfKind::F1 => (all.clone(), all),
            GfKind::F2 => (all, none),
            GfKind::F3 => (none.clone(), (1..=n).collect()),
            GfKind::F4 => (none.clone(), none),
        };
        BoundaryPartition::new(n, &ip, &kr).unwrap()
    }
}

/// Index partitions selecting the independent variables of a generating
/// function. Indices are 1-based externally, matching the usual notation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryPartition {
    n: usize,
    /// ip[i] is true when position i+1 is independent at endpoint 1.
    ip: Vec<bool>,
    /// kr[k] is true when position k+1 is independent at endpoint 0.
    kr: Vec<bool>,
}

impl BoundaryPartition {
    pub fn new(n: usize, ip: &[usize], kr: &[usize]) -> Result<Self, PartitionError> {
        let mut mask_ip = vec![false; n];
        for &i in ip {
            if i == 0 || i > n {
                return Err(PartitionError::IndexOutOfRange(i, n));
            }
            if mask_ip[i - 1] {
                return Err(PartitionError::Duplicate(i));
            }
            mask_ip[i - 1] = true;
        }
        let mut mask_kr = vec![false; n];
        for &k in kr {
            if k == 0 || k > n {
                return Err(PartitionError::IndexOutOfRange(k, n));
            }
            if mask_kr[k - 1] {
                return Err(PartitionError::Duplicate(k));
            }
            mask_kr[k - 1] = true;
        }
        Ok(BoundaryPartition {
            n,
            ip: mask_ip,
            kr: mask_kr,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Is position index `i` (0-based) independent at endpoint 1?
    pub fn endpoint1_position(&self, i: usize) -> bool {
        self.ip[i]
    }

    /// Is position index `k` (0-based) independent at endpoint 0?
    pub fn endpoint0_position(&self, k: usize) -> bool {
        self.kr[k]
    }

    /// The classical kind this partition coincides with, if any.
    pub fn kind(&self) -> Option<GfKind> {
        let all_ip = self.ip.iter().all(|&b| b);
        let no_ip = self.ip.iter().all(|&b| !b);
        let all_kr = self.kr.iter().all(|&b| b);
        let no_kr = self.kr.iter().all(|&b| !b);
        match (all_ip, no_ip, all_kr, no_kr) {
            (true, _, true, _) => Some(GfKind::F1),
            (true, _, _, true) => Some(GfKind::F2),
            (_, true, true, _) => Some(GfKind::F3),
            (_, true, _, true) => Some(GfKind::F4),
            _ => None,
        }
    }

    /// A partition generates the identity transformation at the initial
    /// time exactly when `K_r` is the complement of `I_p` (the F2/F3
    /// family): the form `sum q_i p0_i - sum p_i q0_i` then has every
    /// required variable independent.
    pub fn identity_admissible(&self) -> bool {
        self.ip.iter().zip(&self.kr).all(|(&a, &b)| a != b)
    }

    /// The identity-admissible partition with the same endpoint-1 split.
    pub fn identity_sibling(&self) -> BoundaryPartition {
        BoundaryPartition {
            n: self.n,
            ip: self.ip.clone(),
            kr: self.ip.iter().map(|&b| !b).collect(),
        }
    }

    /// Swap the roles of the two endpoints (`F_{Ip,Kr}` vs `F_{Kr,Ip}`).
    pub fn reversed(&self) -> BoundaryPartition {
        BoundaryPartition {
            n: self.n,
            ip: self.kr.clone(),
            kr: self.ip.clone(),
        }
    }

    /// 1-based indices of `I_p`.
    pub fn ip_indices(&self) -> Vec<usize> {
        (1..=self.n).filter(|&i| self.ip[i - 1]).collect()
    }

    /// 1-based indices of `K_r`.
    pub fn kr_indices(&self) -> Vec<usize> {
        (1..=self.n).filter(|&k| self.kr[k - 1]).collect()
    }

    /// Human-readable label: a classical kind name where possible.
    pub fn label(&self) -> String {
        match self.kind() {
            Some(k) => k.name().to_string(),
            None => format!("F(ip={:?}, kr={:?})", self.ip_indices(), self.kr_indices()),
        }
    }

    /// Name of the independent variable at slot `slot` of the 2n-variable
    /// layout: endpoint-1 variables first (by index), then endpoint-0.
    pub fn var_name(&self, slot: usize) -> String {
        let n = self.n;
        if slot < n {
            if self.ip[slot] {
                format!("q{}", slot + 1)
            } else {
                format!("p{}", slot + 1)
            }
        } else {
            let k = slot - n;
            if self.kr[k] {
                format!("q0_{}", k + 1)
            } else {
                format!("p0_{}", k + 1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classical_kinds_round_trip() {
        for kind in [GfKind::F1, GfKind::F2, GfKind::F3, GfKind::F4] {
            let p = kind.partition(3);
            assert_eq!(p.kind(), Some(kind));
        }
        assert_eq!(GfKind::F2.partition(2).reversed().kind(), Some(GfKind::F3));
    }

    #[test]
    fn identity_admissibility() {
        assert!(GfKind::F2.partition(2).identity_admissible());
        assert!(GfKind::F3.partition(2).identity_admissible());
        assert!(!GfKind::F1.partition(2).identity_admissible());
        assert!(!GfKind::F4.partition(2).identity_admissible());
        let mixed = BoundaryPartition::new(2, &[1], &[2]).unwrap();
        assert!(mixed.identity_admissible());
        assert_eq!(mixed.kind(), None);
    }

    #[test]
    fn invalid_indices_are_rejected() {
        assert!(matches!(
            BoundaryPartition::new(2, &[3], &[]),
            Err(PartitionError::IndexOutOfRange(3, 2))
        ));
        assert!(matches!(
            BoundaryPartition::new(2, &[1, 1], &[]),
            Err(PartitionError::Duplicate(1))
        ));
    }

    #[test]
    fn variable_names_follow_the_layout() {
        let p = BoundaryPartition::new(2, &[1], &[2]).unwrap();
        assert_eq!(p.var_name(0), "q1");
        assert_eq!(p.var_name(1), "p2");
        assert_eq!(p.var_name(2), "p0_1");
        assert_eq!(p.var_name(3), "q0_2");
    }
}
