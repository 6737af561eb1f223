//! Truncated multivariate polynomial algebra.
//!
//! Polynomials live in a fixed number of variables and keep every
//! coefficient of total degree <= N in dense graded-lex storage. All ring
//! operations discard terms above the truncation degree, which makes them
//! exact on the retained degrees.

mod basis;
mod inversion;

use std::fmt;
use std::sync::Arc;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use basis::{basis, Basis, Exponent};
pub use inversion::{invert_series, FoldData, Inversion, PolynomialSystem};

/// Errors raised by polynomial operations.
#[derive(Debug, Error)]
pub enum PolyError {
    #[error("operands live in different spaces: ({0} vars, degree {1}) vs ({2} vars, degree {3})")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("variable index {0} out of range for {1} variables")]
    VariableOutOfRange(usize, usize),
    #[error("composition needs {expected} substitutions, got {got}")]
    SubstitutionCount { expected: usize, got: usize },
    #[error("polynomial system is not square: {equations} equations, {unknowns} unknowns")]
    NotSquare { equations: usize, unknowns: usize },
    #[error("equation {0} has a non-vanishing constant term {1:.3e}")]
    NonZeroConstant(usize, f64),
    #[error("truncation order {order} too low to classify the inversion: no pure power of unknown {unknown} survives")]
    TruncationTooLow { order: usize, unknown: usize },
    #[error("result would involve eliminated variable {0}")]
    ResidualVariable(usize),
}

/// Dense multivariate polynomial truncated at a total degree.
#[derive(Clone)]
pub struct TruncatedPolynomial {
    nvars: usize,
    max_degree: usize,
    coeffs: Vec<f64>,
    basis: Arc<Basis>,
}

impl TruncatedPolynomial {
    /// The zero polynomial.
    pub fn zero(nvars: usize, max_degree: usize) -> Self {
        let basis = basis(nvars, max_degree);
        TruncatedPolynomial {
            nvars,
            max_degree,
            coeffs: vec![0.0; basis.len()],
            basis,
        }
    }

    /// The constant polynomial `c`.
    pub fn constant(nvars: usize, max_degree: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars, max_degree);
        p.coeffs[0] = c;
        p
    }

    /// The monomial `c * x_var`.
    pub fn variable(nvars: usize, max_degree: usize, var: usize) -> Self {
        let mut p = Self::zero(nvars, max_degree);
        assert!(var < nvars && max_degree >= 1);
        let mut e = vec![0 as Exponent; nvars];
        e[var] = 1;
        let r = p.basis.rank(&e);
        p.coeffs[r] = 1.0;
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn basis_ref(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn from_coeffs(nvars: usize, max_degree: usize, coeffs: Vec<f64>) -> Self {
        let basis = basis(nvars, max_degree);
        assert_eq!(coeffs.len(), basis.len());
        TruncatedPolynomial {
            nvars,
            max_degree,
            coeffs,
            basis,
        }
    }

    /// Coefficient of the monomial with the given exponents.
    pub fn coeff(&self, exps: &[Exponent]) -> f64 {
        let d: usize = exps.iter().map(|&e| e as usize).sum();
        if d > self.max_degree {
            return 0.0;
        }
        self.coeffs[self.basis.rank(exps)]
    }

    pub fn set_coeff(&mut self, exps: &[Exponent], value: f64) {
        let r = self.basis.rank(exps);
        self.coeffs[r] = value;
    }

    pub fn add_to_coeff(&mut self, exps: &[Exponent], value: f64) {
        let r = self.basis.rank(exps);
        self.coeffs[r] += value;
    }

    pub fn constant_term(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    fn check_same_space(&self, other: &Self) -> Result<(), PolyError> {
        if self.nvars != other.nvars || self.max_degree != other.max_degree {
            return Err(PolyError::DimensionMismatch(
                self.nvars,
                self.max_degree,
                other.nvars,
                other.max_degree,
            ));
        }
        Ok(())
    }

    /// Exact sum.
    pub fn add(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_same_space(other)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
        Ok(out)
    }

    /// Exact difference.
    pub fn sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_same_space(other)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a -= b;
        }
        Ok(out)
    }

    /// Scalar multiple.
    pub fn scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            *c *= factor;
        }
        out
    }

    /// Product with every term of degree > N discarded.
    pub fn mul_truncated(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_same_space(other)?;
        let mut out = Self::zero(self.nvars, self.max_degree);
        let table = self.basis.mul_table();
        for &(i, j, k) in table.iter() {
            let a = self.coeffs[i as usize];
            if a == 0.0 {
                continue;
            }
            let b = other.coeffs[j as usize];
            if b != 0.0 {
                out.coeffs[k as usize] += a * b;
            }
        }
        Ok(out)
    }

    /// Integer power by repeated truncated multiplication.
    pub fn powi(&self, mut k: usize) -> Self {
        let mut result = Self::constant(self.nvars, self.max_degree, 1.0);
        let mut base = self.clone();
        while k > 0 {
            if k & 1 == 1 {
                result = result.mul_truncated(&base).unwrap();
            }
            k >>= 1;
            if k > 0 {
                base = base.mul_truncated(&base).unwrap();
            }
        }
        result
    }

    /// Exact partial derivative; the result stays in the same space.
    pub fn differentiate(&self, var: usize) -> Result<Self, PolyError> {
        if var >= self.nvars {
            return Err(PolyError::VariableOutOfRange(var, self.nvars));
        }
        let mut out = Self::zero(self.nvars, self.max_degree);
        let mut e = vec![0 as Exponent; self.nvars];
        for rank in 0..self.basis.len() {
            let c = self.coeffs[rank];
            if c == 0.0 {
                continue;
            }
            let exps = self.basis.exponents(rank);
            if exps[var] == 0 {
                continue;
            }
            e.copy_from_slice(exps);
            let k = e[var];
            e[var] = k - 1;
            let r = self.basis.rank(&e);
            out.coeffs[r] += c * k as f64;
        }
        Ok(out)
    }

    /// Evaluate at a point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        let mut acc = 0.0;
        for rank in 0..self.basis.len() {
            let c = self.coeffs[rank];
            if c == 0.0 {
                continue;
            }
            let exps = self.basis.exponents(rank);
            let mut term = c;
            for (v, &e) in exps.iter().enumerate() {
                for _ in 0..e {
                    term *= x[v];
                }
            }
            acc += term;
        }
        acc
    }

    /// Evaluate the full gradient at a point without building derivative
    /// polynomials.
    pub fn eval_gradient(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.nvars);
        let mut grad = vec![0.0; self.nvars];
        // Precompute powers x[v]^k up to max_degree.
        let mut pw = vec![vec![1.0; self.max_degree + 1]; self.nvars];
        for v in 0..self.nvars {
            for k in 1..=self.max_degree {
                pw[v][k] = pw[v][k - 1] * x[v];
            }
        }
        for rank in 0..self.basis.len() {
            let c = self.coeffs[rank];
            if c == 0.0 {
                continue;
            }
            let exps = self.basis.exponents(rank);
            for v in 0..self.nvars {
                let e = exps[v] as usize;
                if e == 0 {
                    continue;
                }
                let mut term = c * e as f64 * pw[v][e - 1];
                for (w, &ew) in exps.iter().enumerate() {
                    if w != v {
                        term *= pw[w][ew as usize];
                    }
                }
                grad[v] += term;
            }
        }
        grad
    }

    /// Composition: substitute `subs[v]` for variable `v`; returns the
    /// degree-<= N part of the exact composition. All substitutions must
    /// share one variable space.
    pub fn compose(&self, subs: &[TruncatedPolynomial]) -> Result<Self, PolyError> {
        if subs.len() != self.nvars {
            return Err(PolyError::SubstitutionCount {
                expected: self.nvars,
                got: subs.len(),
            });
        }
        let target = &subs[0];
        for s in subs.iter().skip(1) {
            target.check_same_space(s)?;
        }
        // Highest exponent each variable reaches, to size the power cache.
        let mut max_exp = vec![0usize; self.nvars];
        for rank in 0..self.basis.len() {
            if self.coeffs[rank] == 0.0 {
                continue;
            }
            for (v, &e) in self.basis.exponents(rank).iter().enumerate() {
                max_exp[v] = max_exp[v].max(e as usize);
            }
        }
        let mut powers: Vec<Vec<TruncatedPolynomial>> = Vec::with_capacity(self.nvars);
        for v in 0..self.nvars {
            let mut col = Vec::with_capacity(max_exp[v] + 1);
            col.push(TruncatedPolynomial::constant(
                target.nvars,
                target.max_degree,
                1.0,
            ));
            for k in 1..=max_exp[v] {
                let next = col[k - 1].mul_truncated(&subs[v])?;
                col.push(next);
            }
            powers.push(col);
        }
        let mut out = TruncatedPolynomial::zero(target.nvars, target.max_degree);
        for rank in 0..self.basis.len() {
            let c = self.coeffs[rank];
            if c == 0.0 {
                continue;
            }
            let exps = self.basis.exponents(rank);
            let mut term: Option<TruncatedPolynomial> = None;
            for (v, &e) in exps.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let factor = &powers[v][e as usize];
                term = Some(match term {
                    None => factor.clone(),
                    Some(t) => t.mul_truncated(factor)?,
                });
            }
            match term {
                None => out.coeffs[0] += c,
                Some(t) => {
                    for (o, s) in out.coeffs.iter_mut().zip(&t.coeffs) {
                        *o += c * s;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Copy of the polynomial with all terms of degree > `degree` dropped.
    pub fn truncated_to(&self, degree: usize) -> Self {
        let mut out = self.clone();
        let cut = self.basis.degree_offset(degree + 1).min(out.coeffs.len());
        for c in out.coeffs[cut..].iter_mut() {
            *c = 0.0;
        }
        out
    }

    /// Copy with only the terms of degree in `[lo, hi]`.
    pub fn degree_slice(&self, lo: usize, hi: usize) -> Self {
        let mut out = Self::zero(self.nvars, self.max_degree);
        let start = self.basis.degree_offset(lo);
        let end = self.basis.degree_offset(hi + 1).min(self.coeffs.len());
        out.coeffs[start..end].copy_from_slice(&self.coeffs[start..end]);
        out
    }

    /// Zero out coefficients with |c| <= eps.
    pub fn pruned(&self, eps: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            if c.abs() <= eps {
                *c = 0.0;
            }
        }
        out
    }

    /// Re-express the polynomial in a larger (or permuted) variable space:
    /// variable `v` becomes `var_map[v]`.
    pub fn embed(&self, nvars: usize, max_degree: usize, var_map: &[usize]) -> Result<Self, PolyError> {
        assert_eq!(var_map.len(), self.nvars);
        for &m in var_map {
            if m >= nvars {
                return Err(PolyError::VariableOutOfRange(m, nvars));
            }
        }
        let mut out = Self::zero(nvars, max_degree);
        let mut e = vec![0 as Exponent; nvars];
        for rank in 0..self.basis.len() {
            let c = self.coeffs[rank];
            if c == 0.0 {
                continue;
            }
            if self.basis.degree_of(rank) > max_degree {
                continue;
            }
            e.iter_mut().for_each(|x| *x = 0);
            for (v, &ev) in self.basis.exponents(rank).iter().enumerate() {
                e[var_map[v]] += ev;
            }
            out.add_to_coeff(&e, c);
        }
        Ok(out)
    }

    /// Inverse of [`embed`]: keep only the variables listed in `keep`
    /// (which becomes variable `i` of the result). Fails if any other
    /// variable still carries a coefficient above `eps`.
    pub fn extract(&self, keep: &[usize], eps: f64) -> Result<Self, PolyError> {
        let mut pos = vec![usize::MAX; self.nvars];
        for (i, &v) in keep.iter().enumerate() {
            pos[v] = i;
        }
        let mut out = Self::zero(keep.len(), self.max_degree);
        let mut e = vec![0 as Exponent; keep.len()];
        for rank in 0..self.basis.len() {
            let c = self.coeffs[rank];
            if c == 0.0 {
                continue;
            }
            e.iter_mut().for_each(|x| *x = 0);
            let mut ok = true;
            for (v, &ev) in self.basis.exponents(rank).iter().enumerate() {
                if ev == 0 {
                    continue;
                }
                if pos[v] == usize::MAX {
                    ok = false;
                    break;
                }
                e[pos[v]] = ev;
            }
            if !ok {
                if c.abs() > eps {
                    return Err(PolyError::ResidualVariable(rank));
                }
                continue;
            }
            out.add_to_coeff(&e, c);
        }
        Ok(out)
    }

    /// Iterate over nonzero terms as `(exponents, coefficient)` in
    /// graded-lex order.
    pub fn terms(&self) -> impl Iterator<Item = (&[Exponent], f64)> + '_ {
        (0..self.basis.len()).filter_map(move |rank| {
            let c = self.coeffs[rank];
            (c != 0.0).then(|| (self.basis.exponents(rank), c))
        })
    }
}

impl PartialEq for TruncatedPolynomial {
    fn eq(&self, other: &Self) -> bool {
        self.nvars == other.nvars
            && self.max_degree == other.max_degree
            && self.coeffs == other.coeffs
    }
}

impl fmt::Debug for TruncatedPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TruncatedPolynomial({} vars, N={})[", self.nvars, self.max_degree)?;
        let mut first = true;
        for (exps, c) in self.terms() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c:.6e}*{exps:?}")?;
        }
        if first {
            write!(f, "0")?;
        }
        write!(f, "]")
    }
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    exps: Vec<u32>,
    coef: f64,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    nvars: usize,
    max_degree: usize,
    terms: Vec<TermRepr>,
}

impl Serialize for TruncatedPolynomial {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let terms = self
            .terms()
            .map(|(exps, coef)| TermRepr {
                exps: exps.iter().map(|&e| e as u32).collect(),
                coef,
            })
            .collect();
        PolyRepr {
            nvars: self.nvars,
            max_degree: self.max_degree,
            terms,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TruncatedPolynomial {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PolyRepr::deserialize(deserializer)?;
        let mut p = TruncatedPolynomial::zero(repr.nvars, repr.max_degree);
        for t in repr.terms {
            if t.exps.len() != repr.nvars {
                return Err(D::Error::custom("term exponent arity mismatch"));
            }
            let total: u32 = t.exps.iter().sum();
            if total as usize > repr.max_degree {
                return Err(D::Error::custom("term degree above truncation"));
            }
            let e: Vec<Exponent> = t.exps.iter().map(|&x| x as Exponent).collect();
            p.set_coeff(&e, t.coef);
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn poly2(n: usize) -> TruncatedPolynomial {
        TruncatedPolynomial::zero(2, n)
    }

    #[test]
    fn product_truncates_above_degree() {
        // (1 + x)(1 - x) at N = 2 is 1 - x^2.
        let one = TruncatedPolynomial::constant(2, 2, 1.0);
        let x = TruncatedPolynomial::variable(2, 2, 0);
        let a = one.add(&x).unwrap();
        let b = one.sub(&x).unwrap();
        let p = a.mul_truncated(&b).unwrap();
        assert_abs_diff_eq!(p.coeff(&[0, 0]), 1.0);
        assert_abs_diff_eq!(p.coeff(&[1, 0]), 0.0);
        assert_abs_diff_eq!(p.coeff(&[2, 0]), -1.0);

        // (x + y)^2 at N = 1 has no surviving terms.
        let x1 = TruncatedPolynomial::variable(2, 1, 0);
        let y1 = TruncatedPolynomial::variable(2, 1, 1);
        let s = x1.add(&y1).unwrap();
        let sq = s.mul_truncated(&s).unwrap();
        assert!(sq.is_zero());
    }

    #[test]
    fn derivative_matches_calculus() {
        // d(x^2 y)/dx = 2 x y.
        let mut p = poly2(3);
        p.set_coeff(&[2, 1], 1.0);
        let d = p.differentiate(0).unwrap();
        assert_abs_diff_eq!(d.coeff(&[1, 1]), 2.0);
        assert_eq!(d.terms().count(), 1);
        // Constants go to zero.
        let c = TruncatedPolynomial::constant(2, 3, 4.2);
        assert!(c.differentiate(0).unwrap().is_zero());
    }

    #[test]
    fn compose_expands_binomial() {
        // f = x^2, x -> u + v, N = 2 gives u^2 + 2uv + v^2.
        let mut f = TruncatedPolynomial::zero(1, 2);
        f.set_coeff(&[2], 1.0);
        let u = TruncatedPolynomial::variable(2, 2, 0);
        let v = TruncatedPolynomial::variable(2, 2, 1);
        let sub = u.add(&v).unwrap();
        let g = f.compose(&[sub]).unwrap();
        assert_abs_diff_eq!(g.coeff(&[2, 0]), 1.0);
        assert_abs_diff_eq!(g.coeff(&[1, 1]), 2.0);
        assert_abs_diff_eq!(g.coeff(&[0, 2]), 1.0);
    }

    #[test]
    fn compose_identity_is_identity() {
        let mut f = poly2(4);
        f.set_coeff(&[1, 2], -0.5);
        f.set_coeff(&[3, 0], 2.0);
        f.set_coeff(&[0, 0], 1.25);
        let subs = [
            TruncatedPolynomial::variable(2, 4, 0),
            TruncatedPolynomial::variable(2, 4, 1),
        ];
        let g = f.compose(&subs).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn gradient_eval_matches_derivative_polynomials() {
        let mut f = TruncatedPolynomial::zero(3, 4);
        f.set_coeff(&[2, 1, 0], 1.5);
        f.set_coeff(&[0, 0, 3], -2.0);
        f.set_coeff(&[1, 1, 1], 0.7);
        let x = [0.3, -1.2, 0.8];
        let g = f.eval_gradient(&x);
        for v in 0..3 {
            let d = f.differentiate(v).unwrap();
            assert_abs_diff_eq!(g[v], d.eval(&x), epsilon = 1e-14);
        }
    }

    #[test]
    fn embed_extract_round_trip() {
        let mut f = poly2(3);
        f.set_coeff(&[1, 2], 3.0);
        f.set_coeff(&[1, 0], -1.0);
        let big = f.embed(5, 3, &[4, 1]).unwrap();
        assert_abs_diff_eq!(big.coeff(&[0, 2, 0, 0, 1]), 3.0);
        let back = big.extract(&[4, 1], 0.0).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut f = poly2(4);
        f.set_coeff(&[1, 2], 0.1 + 0.2);
        f.set_coeff(&[4, 0], -1.0 / 3.0);
        f.set_coeff(&[0, 0], f64::MIN_POSITIVE);
        let s = serde_json::to_string(&f).unwrap();
        let g: TruncatedPolynomial = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
    }
}
