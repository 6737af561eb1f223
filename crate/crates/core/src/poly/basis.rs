//! Dense graded-lexicographic monomial bases, shared and cached per
//! `(nvars, max_degree)` pair.
//!
//! Monomials of total degree <= N are enumerated degree block by degree
//! block; inside a block the leading variable exponent runs from the block
//! degree down to zero, recursively. Ranks are computed from binomial
//! offsets, so no hashing is needed on hot paths.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;

/// Exponent type for one variable of a monomial.
pub type Exponent = u8;

/// Shared monomial table for a fixed variable count and truncation degree.
#[derive(Debug)]
pub struct Basis {
    pub nvars: usize,
    pub max_degree: usize,
    /// All exponent tuples in graded-lex order, flattened (`nvars` per entry).
    exps: Vec<Exponent>,
    /// Offset of each degree block in the monomial list; `offsets[d]` is the
    /// rank of the first monomial of total degree `d`.
    offsets: Vec<usize>,
    /// Binomial table `binom[a][b]` for ranking, a <= nvars + max_degree.
    binom: Vec<Vec<usize>>,
    /// Lazily built multiplication table of `(i, j, k)` triples with
    /// `monomial(i) * monomial(j) = monomial(k)` and deg(i) + deg(j) <= N.
    mul_table: Mutex<Option<Arc<Vec<(u32, u32, u32)>>>>,
}

impl Basis {
    fn build(nvars: usize, max_degree: usize) -> Basis {
        assert!(nvars >= 1, "basis needs at least one variable");
        let rows = nvars + max_degree + 2;
        let mut binom = vec![vec![0usize; rows]; rows];
        for a in 0..rows {
            binom[a][0] = 1;
            for b in 1..=a {
                binom[a][b] = binom[a - 1][b - 1] + binom[a - 1][b];
            }
        }

        let mut exps = Vec::new();
        let mut offsets = Vec::with_capacity(max_degree + 2);
        let mut scratch = vec![0 as Exponent; nvars];
        for d in 0..=max_degree {
            offsets.push(exps.len() / nvars);
            emit_degree_block(nvars, d, 0, &mut scratch, &mut exps);
        }
        offsets.push(exps.len() / nvars);

        Basis {
            nvars,
            max_degree,
            exps,
            offsets,
            binom,
            mul_table: Mutex::new(None),
        }
    }

    /// Total number of monomials of degree <= `max_degree`.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Exponent tuple of the monomial at `rank`.
    pub fn exponents(&self, rank: usize) -> &[Exponent] {
        &self.exps[rank * self.nvars..(rank + 1) * self.nvars]
    }

    /// Rank of the first monomial of total degree `d`.
    pub fn degree_offset(&self, d: usize) -> usize {
        self.offsets[d.min(self.max_degree + 1)]
    }

    /// Total degree of the monomial at `rank`.
    pub fn degree_of(&self, rank: usize) -> usize {
        self.exponents(rank).iter().map(|&e| e as usize).sum()
    }

    fn count_upto(&self, vars: usize, degree: isize) -> usize {
        if degree < 0 {
            return 0;
        }
        self.binom[vars + degree as usize][vars]
    }

    /// Rank of an exponent tuple; the tuple must have total degree <= N.
    pub fn rank(&self, exps: &[Exponent]) -> usize {
        debug_assert_eq!(exps.len(), self.nvars);
        let total: usize = exps.iter().map(|&e| e as usize).sum();
        debug_assert!(total <= self.max_degree);
        let mut rank = self.offsets[total];
        let mut remaining = total;
        for v in 0..self.nvars.saturating_sub(1) {
            let e = exps[v] as usize;
            let tail_vars = self.nvars - v - 1;
            // Monomials in this block whose exponent at `v` exceeds `e`
            // come first.
            rank += self.count_upto(tail_vars, remaining as isize - e as isize - 1);
            remaining -= e;
        }
        rank
    }

    /// Multiplication table, built on first use.
    pub fn mul_table(self: &Arc<Self>) -> Arc<Vec<(u32, u32, u32)>> {
        let mut guard = self.mul_table.lock().unwrap();
        if let Some(t) = guard.as_ref() {
            return Arc::clone(t);
        }
        let n = self.len();
        let mut table = Vec::new();
        let mut sum = vec![0 as Exponent; self.nvars];
        for i in 0..n {
            let di = self.degree_of(i);
            for j in 0..n {
                let dj = self.degree_of(j);
                if di + dj > self.max_degree {
                    // Ranks are degree-sorted, so every later j fails too.
                    break;
                }
                let ei = self.exponents(i);
                let ej = self.exponents(j);
                for v in 0..self.nvars {
                    sum[v] = ei[v] + ej[v];
                }
                let k = self.rank(&sum);
                table.push((i as u32, j as u32, k as u32));
            }
        }
        let table = Arc::new(table);
        *guard = Some(Arc::clone(&table));
        table
    }
}

fn emit_degree_block(
    nvars: usize,
    degree: usize,
    var: usize,
    scratch: &mut [Exponent],
    out: &mut Vec<Exponent>,
) {
    if var == nvars - 1 {
        scratch[var] = degree as Exponent;
        out.extend_from_slice(scratch);
        return;
    }
    for e in (0..=degree).rev() {
        scratch[var] = e as Exponent;
        emit_degree_block(nvars, degree - e, var + 1, scratch, out);
    }
}

static CACHE: Lazy<Mutex<HashMap<(usize, usize), Arc<Basis>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Fetch (or build) the shared basis for `(nvars, max_degree)`.
pub fn basis(nvars: usize, max_degree: usize) -> Arc<Basis> {
    let mut cache = CACHE.lock().unwrap();
    Arc::clone(
        cache
            .entry((nvars, max_degree))
            .or_insert_with(|| Arc::new(Basis::build(nvars, max_degree))),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_are_consistent_with_enumeration() {
        for (nvars, deg) in [(1, 4), (2, 5), (3, 4), (4, 6), (8, 4)] {
            let b = basis(nvars, deg);
            for rank in 0..b.len() {
                let e = b.exponents(rank).to_vec();
                assert_eq!(b.rank(&e), rank, "nvars={nvars} deg={deg} exps={e:?}");
            }
        }
    }

    #[test]
    fn counts_match_stars_and_bars() {
        let b = basis(4, 6);
        // C(4 + 6, 4) monomials of degree <= 6 in 4 variables.
        assert_eq!(b.len(), 210);
        assert_eq!(b.degree_offset(1), 1);
        assert_eq!(b.degree_offset(2), 5);
        let b8 = basis(8, 6);
        assert_eq!(b8.len(), 3003);
    }

    #[test]
    fn mul_table_covers_truncated_products() {
        let b = basis(2, 3);
        let table = b.mul_table();
        // Pairs (i, j) with deg_i + deg_j <= 3 in 2 vars: C(2+2+3, 3) = 35.
        assert_eq!(table.len(), 35);
        for &(i, j, k) in table.iter() {
            let ei = b.exponents(i as usize);
            let ej = b.exponents(j as usize);
            let ek = b.exponents(k as usize);
            for v in 0..2 {
                assert_eq!(ei[v] + ej[v], ek[v]);
            }
        }
    }
}
