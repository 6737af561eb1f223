//! Small symbolic expression trees for Hamiltonian functions.
//!
//! Supports evaluation, exact differentiation, variable substitution and
//! truncated Taylor expansion about a point. Non-integer powers expand
//! through the binomial series about the (nonzero) base value, which keeps
//! gravity potentials exact to the truncation order.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::poly::TruncatedPolynomial;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("expansion point sits on a singular locus (zero base raised to power {0})")]
    SingularExpansion(f64),
    #[error("expression evaluated outside its domain")]
    DomainViolation,
}

/// Symbolic expression over variables `x_0 .. x_{nvars-1}`.
#[derive(Clone)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    /// Real power of a subexpression. Non-negative integer exponents stay
    /// polynomial; anything else requires a nonzero base at expansion.
    Pow(Arc<Expr>, f64),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Add(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x - y),
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Sub(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x * y),
            (Some(x), _) if x == 0.0 => Expr::Const(0.0),
            (_, Some(y)) if y == 0.0 => Expr::Const(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Mul(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::mul(Expr::Const(-1.0), a)
    }

    pub fn pow(a: Expr, exponent: f64) -> Expr {
        if exponent == 0.0 {
            return Expr::Const(1.0);
        }
        if exponent == 1.0 {
            return a;
        }
        if let Expr::Const(x) = &a {
            return Expr::Const(x.powf(exponent));
        }
        Expr::Pow(Arc::new(a), exponent)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::mul(a, Expr::pow(b, -1.0))
    }

    /// Sum of squares of the given expressions.
    pub fn sum_sq(parts: &[Expr]) -> Expr {
        parts
            .iter()
            .map(|p| Expr::mul(p.clone(), p.clone()))
            .fold(Expr::Const(0.0), Expr::add)
    }

    /// Evaluate at a point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Pow(a, e) => {
                let v = a.eval(x);
                if *e == e.round() && e.abs() < 64.0 {
                    v.powi(*e as i32)
                } else {
                    v.powf(*e)
                }
            }
        }
    }

    /// Exact partial derivative with respect to variable `var`.
    pub fn diff(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::Add(a, b) => Expr::add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => Expr::sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(var), (**b).clone()),
                Expr::mul((**a).clone(), b.diff(var)),
            ),
            Expr::Pow(a, e) => Expr::mul(
                Expr::mul(Expr::Const(*e), Expr::pow((**a).clone(), e - 1.0)),
                a.diff(var),
            ),
        }
    }

    /// Substitute `replacement` for variable `var`.
    pub fn substitute(&self, var: usize, replacement: &Expr) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => {
                if *i == var {
                    replacement.clone()
                } else {
                    Expr::Var(*i)
                }
            }
            Expr::Add(a, b) => Expr::add(a.substitute(var, replacement), b.substitute(var, replacement)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(var, replacement), b.substitute(var, replacement)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(var, replacement), b.substitute(var, replacement)),
            Expr::Pow(a, e) => Expr::pow(a.substitute(var, replacement), *e),
        }
    }

    /// Truncated Taylor expansion about `center`, in relative variables.
    ///
    /// The result is a polynomial in `center.len()` displacement variables
    /// whose degree-k coefficients are the exact k-th Taylor coefficients
    /// of the expression; fractional and negative powers go through the
    /// binomial series of the shifted base.
    pub fn taylor(&self, center: &[f64], order: usize) -> Result<TruncatedPolynomial, ExprError> {
        let nvars = center.len();
        match self {
            Expr::Const(c) => Ok(TruncatedPolynomial::constant(nvars, order, *c)),
            Expr::Var(i) => {
                let mut p = TruncatedPolynomial::variable(nvars, order, *i);
                p.coeffs_mut()[0] = center[*i];
                Ok(p)
            }
            Expr::Add(a, b) => Ok(a.taylor(center, order)?.add(&b.taylor(center, order)?).unwrap()),
            Expr::Sub(a, b) => Ok(a.taylor(center, order)?.sub(&b.taylor(center, order)?).unwrap()),
            Expr::Mul(a, b) => Ok(a
                .taylor(center, order)?
                .mul_truncated(&b.taylor(center, order)?)
                .unwrap()),
            Expr::Pow(a, e) => {
                let base = a.taylor(center, order)?;
                if *e == e.round() && *e >= 0.0 {
                    return Ok(base.powi(*e as usize));
                }
                let b0 = base.constant_term();
                if b0 == 0.0 || (b0 < 0.0 && *e != e.round()) {
                    return Err(ExprError::SingularExpansion(*e));
                }
                // (b0 + g)^e = b0^e * sum_k C(e, k) (g / b0)^k with g the
                // zero-constant part; g has degree >= 1 so `order` terms
                // suffice and the expansion is exact to the truncation.
                let mut g = base.clone();
                g.coeffs_mut()[0] = 0.0;
                let g = g.scale(1.0 / b0);
                let mut result = TruncatedPolynomial::constant(nvars, order, 1.0);
                let mut g_pow = TruncatedPolynomial::constant(nvars, order, 1.0);
                let mut binom = 1.0;
                for k in 1..=order {
                    binom *= (e - (k as f64 - 1.0)) / k as f64;
                    g_pow = g_pow.mul_truncated(&g).unwrap();
                    result = result.add(&g_pow.scale(binom)).unwrap();
                }
                Ok(result.scale(b0.powf(*e)))
            }
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Add(a, b) => write!(f, "({a:?} + {b:?})"),
            Expr::Sub(a, b) => write!(f, "({a:?} - {b:?})"),
            Expr::Mul(a, b) => write!(f, "({a:?} * {b:?})"),
            Expr::Pow(a, e) => write!(f, "({a:?})^{e}"),
        }
    }
}
