//! Degree-by-degree inversion of square polynomial systems, with solution
//! counting when the linear part degenerates.
//!
//! A system `E_j(u, w) = 0` (unknowns `u`, parameters `w`, no constant
//! terms) with a nonsingular linear part in `u` has exactly one branch
//! through the origin, recovered by a fixed-point recursion that gains one
//! correct degree per sweep. When the linear determinant vanishes but a
//! first minor survives, the surviving block is eliminated, leaving a
//! single scalar equation whose leading pure power of the remaining
//! unknown counts the local branches: a quadratic leading term means two
//! (a fold). No surviving minor at all means a continuum of solutions.

use nalgebra::DMatrix;

use super::{PolyError, TruncatedPolynomial};

/// Relative tolerance deciding whether the linear-part determinant (and
/// first minors, and leading coefficients) count as zero.
pub const SINGULAR_REL_TOL: f64 = 1e-9;

/// A square system of truncated polynomial equations.
#[derive(Debug, Clone)]
pub struct PolynomialSystem {
    /// Equations sharing one variable space; solutions set each to zero.
    pub equations: Vec<TruncatedPolynomial>,
    /// Variable indices to solve for; the rest are parameters.
    pub unknowns: Vec<usize>,
}

impl PolynomialSystem {
    pub fn new(equations: Vec<TruncatedPolynomial>, unknowns: Vec<usize>) -> Result<Self, PolyError> {
        if equations.len() != unknowns.len() {
            return Err(PolyError::NotSquare {
                equations: equations.len(),
                unknowns: unknowns.len(),
            });
        }
        Ok(PolynomialSystem { equations, unknowns })
    }

    fn nvars(&self) -> usize {
        self.equations[0].nvars()
    }

    /// Linear-in-unknowns coefficient matrix.
    fn linear_part(&self) -> DMatrix<f64> {
        let m = self.unknowns.len();
        let nvars = self.nvars();
        let mut a = DMatrix::zeros(m, m);
        let mut e = vec![0u8; nvars];
        for (row, eq) in self.equations.iter().enumerate() {
            for (col, &u) in self.unknowns.iter().enumerate() {
                e.iter_mut().for_each(|x| *x = 0);
                e[u] = 1;
                a[(row, col)] = eq.coeff(&e);
            }
        }
        a
    }
}

/// Data describing a degenerate inversion after eliminating the surviving
/// minor: everything is reduced to one scalar equation in one unknown.
#[derive(Debug, Clone)]
pub struct FoldData {
    /// Variable index of the unknown kept as the branch parameter.
    pub pivot_unknown: usize,
    /// Reduced scalar equation in `(pivot, parameters)`.
    pub reduced: TruncatedPolynomial,
    /// Remaining unknowns expressed in `(pivot, parameters)`.
    pub eliminated: Vec<(usize, TruncatedPolynomial)>,
    /// Coefficient of the leading pure power of the pivot in `reduced`.
    pub leading_coef: f64,
    /// Degree of that leading pure power.
    pub leading_degree: usize,
}

impl FoldData {
    /// Number of local branches implied by the leading term (2 for a fold).
    pub fn branch_count(&self) -> usize {
        self.leading_degree
    }

    /// Substitute numeric parameter values and return the univariate
    /// coefficients of the reduced equation in the pivot unknown.
    pub fn reduced_univariate(&self, known_values: &[(usize, f64)]) -> Vec<f64> {
        univariate_in(&self.reduced, self.pivot_unknown, known_values)
    }

    /// Solve the reduced equation for real pivot roots with |u| <= radius,
    /// then back-substitute the eliminated unknowns. Returns one
    /// `(variable, value)` assignment per branch, sorted by pivot value.
    pub fn branch_solutions(
        &self,
        known_values: &[(usize, f64)],
        radius: f64,
    ) -> Vec<Vec<(usize, f64)>> {
        let coeffs = self.reduced_univariate(known_values);
        let roots = real_roots(&coeffs, radius);
        let nvars = self.reduced.nvars();
        let mut out = Vec::with_capacity(roots.len());
        for r in roots {
            let mut point = vec![0.0; nvars];
            for &(v, val) in known_values {
                point[v] = val;
            }
            point[self.pivot_unknown] = r;
            let mut assignment = vec![(self.pivot_unknown, r)];
            for (var, map) in &self.eliminated {
                assignment.push((*var, map.eval(&point)));
            }
            assignment.sort_by_key(|&(v, _)| v);
            out.push(assignment);
        }
        out.sort_by(|a, b| {
            let pa = a.iter().find(|(v, _)| *v == self.pivot_unknown).unwrap().1;
            let pb = b.iter().find(|(v, _)| *v == self.pivot_unknown).unwrap().1;
            pa.partial_cmp(&pb).unwrap()
        });
        out
    }
}

/// Outcome of inverting a polynomial system.
#[derive(Debug, Clone)]
pub enum Inversion {
    /// Nonsingular linear part: one branch, given as a solution map per
    /// unknown (polynomials in the parameters only, same variable space).
    Unique { maps: Vec<TruncatedPolynomial> },
    /// Vanishing determinant, surviving first minor, quadratic leading
    /// term: exactly two local branches.
    Fold(FoldData),
    /// Vanishing determinant with a surviving minor but a leading pure
    /// power of degree other than two; reported, not guessed.
    Unclassified(FoldData),
    /// No surviving first minor (or an identically vanishing reduced
    /// equation): a continuum of solutions.
    InfiniteFamily,
}

/// Invert `sys` to order `n`.
pub fn invert_series(sys: &PolynomialSystem, n: usize) -> Result<Inversion, PolyError> {
    let m = sys.unknowns.len();
    if sys.equations.len() != m {
        return Err(PolyError::NotSquare {
            equations: sys.equations.len(),
            unknowns: m,
        });
    }
    let scale = sys
        .equations
        .iter()
        .fold(0.0f64, |s, e| s.max(e.max_abs_coeff()))
        .max(f64::MIN_POSITIVE);
    for (j, eq) in sys.equations.iter().enumerate() {
        let c = eq.constant_term();
        if c.abs() > 1e-12 * scale {
            return Err(PolyError::NonZeroConstant(j, c));
        }
    }

    let a = sys.linear_part();
    let cof = cofactor_matrix(&a);
    let max_cof = cof.iter().fold(0.0f64, |s, c| s.max(c.abs()));
    let det = if m == 1 {
        a[(0, 0)]
    } else {
        (0..m).map(|j| a[(0, j)] * cof[(0, j)]).sum()
    };

    if det.abs() > SINGULAR_REL_TOL * max_cof.max(f64::MIN_POSITIVE) {
        let maps = solve_unique(&sys.equations, &sys.unknowns, &a, n)?;
        return Ok(Inversion::Unique { maps });
    }

    // Degenerate linear part: look for a surviving first minor. The minor
    // scale follows the entries of A, keeping the test roughly invariant
    // under row scaling.
    let a_max = a.iter().fold(0.0f64, |s, c| s.max(c.abs()));
    let minor_tol = SINGULAR_REL_TOL * a_max.max(1e-300).powi(m as i32 - 1);
    let mut best: Option<(usize, usize, f64)> = None;
    for r in 0..m {
        for c in 0..m {
            let v = cof[(r, c)].abs();
            if v > minor_tol && best.map_or(true, |(_, _, b)| v > b) {
                best = Some((r, c, v));
            }
        }
    }
    let Some((row_out, col_out, _)) = best else {
        return Ok(Inversion::InfiniteFamily);
    };

    // Solve every equation but `row_out` for every unknown but `col_out`,
    // treating the pivot unknown as an extra parameter.
    let pivot_var = sys.unknowns[col_out];
    let sub_eqs: Vec<TruncatedPolynomial> = sys
        .equations
        .iter()
        .enumerate()
        .filter(|(r, _)| *r != row_out)
        .map(|(_, e)| e.clone())
        .collect();
    let sub_unknowns: Vec<usize> = sys
        .unknowns
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != col_out)
        .map(|(_, &u)| u)
        .collect();
    let eliminated_maps = if sub_unknowns.is_empty() {
        Vec::new()
    } else {
        let sub_a = PolynomialSystem {
            equations: sub_eqs.clone(),
            unknowns: sub_unknowns.clone(),
        }
        .linear_part();
        solve_unique(&sub_eqs, &sub_unknowns, &sub_a, n)?
    };

    // Reduced scalar equation: substitute the eliminated unknowns into the
    // withheld equation.
    let nvars = sys.nvars();
    let max_degree = sys.equations[0].max_degree();
    let mut subs = Vec::with_capacity(nvars);
    for v in 0..nvars {
        if let Some(pos) = sub_unknowns.iter().position(|&u| u == v) {
            subs.push(eliminated_maps[pos].clone());
        } else {
            subs.push(TruncatedPolynomial::variable(nvars, max_degree, v));
        }
    }
    let reduced = sys.equations[row_out].compose(&subs)?;

    let reduced_scale = reduced.max_abs_coeff();
    if reduced_scale <= 1e-12 * scale.max(1.0) {
        return Ok(Inversion::InfiniteFamily);
    }
    // The pivot absent from the reduced equation altogether means it is
    // unconstrained wherever the equation holds: a continuum.
    let pivot_occurs = reduced
        .terms()
        .any(|(e, c)| e[pivot_var] > 0 && c.abs() > SINGULAR_REL_TOL * reduced_scale);
    if !pivot_occurs {
        return Ok(Inversion::InfiniteFamily);
    }

    // Leading pure power of the pivot unknown.
    let mut e = vec![0u8; nvars];
    let mut leading = None;
    for d in 1..=n.min(max_degree) {
        e.iter_mut().for_each(|x| *x = 0);
        e[pivot_var] = d as u8;
        let c = reduced.coeff(&e);
        if c.abs() > SINGULAR_REL_TOL * reduced_scale {
            leading = Some((d, c));
            break;
        }
    }
    let Some((degree, coef)) = leading else {
        return Err(PolyError::TruncationTooLow {
            order: n,
            unknown: pivot_var,
        });
    };

    let eliminated = sub_unknowns.into_iter().zip(eliminated_maps).collect();
    let data = FoldData {
        pivot_unknown: pivot_var,
        reduced,
        eliminated,
        leading_coef: coef,
        leading_degree: degree,
    };
    if degree == 2 {
        Ok(Inversion::Fold(data))
    } else {
        Ok(Inversion::Unclassified(data))
    }
}

/// Fixed-point recursion for a system with invertible linear part `a`.
fn solve_unique(
    equations: &[TruncatedPolynomial],
    unknowns: &[usize],
    a: &DMatrix<f64>,
    n: usize,
) -> Result<Vec<TruncatedPolynomial>, PolyError> {
    let m = unknowns.len();
    let nvars = equations[0].nvars();
    let max_degree = equations[0].max_degree();
    let a_inv = a
        .clone()
        .try_inverse()
        .expect("linear part certified invertible");

    let mut sol: Vec<TruncatedPolynomial> = (0..m)
        .map(|_| TruncatedPolynomial::zero(nvars, max_degree))
        .collect();
    let identity: Vec<TruncatedPolynomial> = (0..nvars)
        .map(|v| TruncatedPolynomial::variable(nvars, max_degree, v))
        .collect();

    for _sweep in 0..n.min(max_degree) {
        let mut subs = identity.clone();
        for (i, &u) in unknowns.iter().enumerate() {
            subs[u] = sol[i].clone();
        }
        let residuals: Vec<TruncatedPolynomial> = equations
            .iter()
            .map(|eq| eq.compose(&subs))
            .collect::<Result<_, _>>()?;
        let mut next = sol.clone();
        for i in 0..m {
            for (j, r) in residuals.iter().enumerate() {
                let upd = r.scale(a_inv[(i, j)]);
                next[i] = next[i].sub(&upd)?;
            }
        }
        sol = next;
    }
    Ok(sol)
}

/// Collect the univariate coefficients of `p` in `var` after substituting
/// numeric values for every other variable that appears.
fn univariate_in(p: &TruncatedPolynomial, var: usize, known_values: &[(usize, f64)]) -> Vec<f64> {
    let mut values = vec![0.0; p.nvars()];
    for &(v, val) in known_values {
        values[v] = val;
    }
    let mut coeffs = vec![0.0; p.max_degree() + 1];
    for (exps, c) in p.terms() {
        let mut term = c;
        for (v, &e) in exps.iter().enumerate() {
            if v == var {
                continue;
            }
            for _ in 0..e {
                term *= values[v];
            }
        }
        coeffs[exps[var] as usize] += term;
    }
    coeffs
}

/// Real roots of a univariate polynomial with |root| <= radius, via the
/// companion matrix.
pub fn real_roots(coeffs: &[f64], radius: f64) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |s, c| s.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut deg = coeffs.len() - 1;
    while deg > 0 && coeffs[deg].abs() <= 1e-13 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let lead = coeffs[deg];
    let mut companion = DMatrix::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -coeffs[i] / lead;
    }
    let eigen = companion.complex_eigenvalues();
    let mut roots: Vec<f64> = eigen
        .iter()
        .filter(|z| z.im.abs() <= 1e-8 * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .filter(|r| r.abs() <= radius)
        .collect();
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    // Polish each root with a few Newton steps.
    for r in roots.iter_mut() {
        for _ in 0..4 {
            let (mut f, mut df) = (0.0, 0.0);
            for &c in coeffs.iter().rev() {
                df = df * *r + f;
                f = f * *r + c;
            }
            if df.abs() > 1e-300 {
                *r -= f / df;
            }
        }
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scalar_series_reversion() {
        // y = x + x^2 inverts to x = y - y^2 + 2 y^3 - 5 y^4 at N = 4.
        // Equation form: x + x^2 - y = 0 with unknown x (var 0), known y (var 1).
        let mut eq = TruncatedPolynomial::zero(2, 4);
        eq.set_coeff(&[1, 0], 1.0);
        eq.set_coeff(&[2, 0], 1.0);
        eq.set_coeff(&[0, 1], -1.0);
        let sys = PolynomialSystem::new(vec![eq.clone()], vec![0]).unwrap();
        let inv = invert_series(&sys, 4).unwrap();
        let Inversion::Unique { maps } = inv else {
            panic!("expected a unique branch")
        };
        let x = &maps[0];
        assert_abs_diff_eq!(x.coeff(&[0, 1]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.coeff(&[0, 2]), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.coeff(&[0, 3]), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.coeff(&[0, 4]), -5.0, epsilon = 1e-12);

        // Back-substitution leaves no residual through degree 4.
        let subs = [
            x.clone(),
            TruncatedPolynomial::variable(2, 4, 1),
        ];
        let residual = eq.compose(&subs).unwrap();
        assert!(residual.max_abs_coeff() < 1e-12);
    }

    #[test]
    fn identity_system() {
        // y_i = x_i: equations x_i - y_i = 0.
        let mut eq0 = TruncatedPolynomial::zero(4, 3);
        eq0.set_coeff(&[1, 0, 0, 0], 1.0);
        eq0.set_coeff(&[0, 0, 1, 0], -1.0);
        let mut eq1 = TruncatedPolynomial::zero(4, 3);
        eq1.set_coeff(&[0, 1, 0, 0], 1.0);
        eq1.set_coeff(&[0, 0, 0, 1], -1.0);
        let sys = PolynomialSystem::new(vec![eq0, eq1], vec![0, 1]).unwrap();
        let Inversion::Unique { maps } = invert_series(&sys, 3).unwrap() else {
            panic!("expected unique")
        };
        assert_abs_diff_eq!(maps[0].coeff(&[0, 0, 1, 0]), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(maps[1].coeff(&[0, 0, 0, 1]), 1.0, epsilon = 1e-14);
        assert_eq!(maps[0].terms().count(), 1);
    }

    /// u1 + u2 = w1 and u1 + u2 + u2^2 = w2: the linear part is singular
    /// with surviving minors, and eliminating u2 leaves a quadratic pure
    /// power of the pivot.
    fn fold_system() -> (TruncatedPolynomial, TruncatedPolynomial) {
        let mut eq0 = TruncatedPolynomial::zero(4, 4);
        eq0.set_coeff(&[1, 0, 0, 0], 1.0);
        eq0.set_coeff(&[0, 1, 0, 0], 1.0);
        eq0.set_coeff(&[0, 0, 1, 0], -1.0);
        let mut eq1 = TruncatedPolynomial::zero(4, 4);
        eq1.set_coeff(&[1, 0, 0, 0], 1.0);
        eq1.set_coeff(&[0, 1, 0, 0], 1.0);
        eq1.set_coeff(&[0, 2, 0, 0], 1.0);
        eq1.set_coeff(&[0, 0, 0, 1], -1.0);
        (eq0, eq1)
    }

    #[test]
    fn fold_from_degenerate_linear_part() {
        let (eq0, eq1) = fold_system();
        let sys = PolynomialSystem::new(vec![eq0, eq1], vec![0, 1]).unwrap();
        match invert_series(&sys, 4).unwrap() {
            Inversion::Fold(data) => {
                assert_eq!(data.branch_count(), 2);
                assert_eq!(data.leading_degree, 2);
            }
            other => panic!("expected fold, got {other:?}"),
        }
    }

    #[test]
    fn cubic_degeneracy_reports_unclassified() {
        // u1 + u2 + u1^2 = w, u1 + u2 + u2^2 = 0: the quadratic pure powers
        // cancel on elimination and the leading term is cubic.
        let mut eq0 = TruncatedPolynomial::zero(3, 4);
        eq0.set_coeff(&[1, 0, 0], 1.0);
        eq0.set_coeff(&[0, 1, 0], 1.0);
        eq0.set_coeff(&[2, 0, 0], 1.0);
        eq0.set_coeff(&[0, 0, 1], -1.0);
        let mut eq1 = TruncatedPolynomial::zero(3, 4);
        eq1.set_coeff(&[1, 0, 0], 1.0);
        eq1.set_coeff(&[0, 1, 0], 1.0);
        eq1.set_coeff(&[0, 2, 0], 1.0);
        let sys = PolynomialSystem::new(vec![eq0, eq1], vec![0, 1]).unwrap();
        match invert_series(&sys, 4).unwrap() {
            Inversion::Unclassified(data) => assert_eq!(data.leading_degree, 3),
            other => panic!("expected unclassified cubic, got {other:?}"),
        }
    }

    #[test]
    fn mixed_only_dependence_cannot_be_classified() {
        // u w - w = 0, unknown u: the linear pure part vanishes and no
        // pure power of u exists at any order, so classification needs a
        // higher truncation (which cannot help here either).
        let mut eq = TruncatedPolynomial::zero(2, 4);
        eq.set_coeff(&[1, 1], 1.0);
        eq.set_coeff(&[0, 1], -1.0);
        let sys = PolynomialSystem::new(vec![eq], vec![0]).unwrap();
        assert!(matches!(
            invert_series(&sys, 4),
            Err(PolyError::TruncationTooLow { .. })
        ));
    }

    #[test]
    fn no_unknown_dependence_is_infinite_family() {
        // Equations do not involve the unknowns at all: w1 - w2 = 0 twice.
        let mut eq0 = TruncatedPolynomial::zero(4, 3);
        eq0.set_coeff(&[0, 0, 1, 0], 1.0);
        eq0.set_coeff(&[0, 0, 0, 1], -1.0);
        let eq1 = eq0.clone();
        let sys = PolynomialSystem::new(vec![eq0, eq1], vec![0, 1]).unwrap();
        match invert_series(&sys, 3).unwrap() {
            Inversion::InfiniteFamily => {}
            other => panic!("expected infinite family, got {other:?}"),
        }
    }

    #[test]
    fn fold_classification_invariant_under_row_scaling() {
        let (eq0, eq1) = fold_system();
        for s in [0.03, 1.0, 47.0] {
            let sys = PolynomialSystem::new(vec![eq0.scale(s), eq1.clone()], vec![0, 1]).unwrap();
            assert!(matches!(invert_series(&sys, 4).unwrap(), Inversion::Fold(_)));
        }
    }

    #[test]
    fn fold_branches_solve_numerically() {
        let (eq0, eq1) = fold_system();
        let sys = PolynomialSystem::new(vec![eq0.clone(), eq1.clone()], vec![0, 1]).unwrap();
        let Inversion::Fold(data) = invert_series(&sys, 4).unwrap() else {
            panic!("expected fold")
        };
        // w1 = -1e-4, w2 = 0: u2 = +-0.01, u1 = w1 - u2.
        let knowns = [(2usize, -1e-4), (3usize, 0.0)];
        let branches = data.branch_solutions(&knowns, 1.0);
        assert_eq!(branches.len(), 2);
        for branch in &branches {
            let mut point = vec![0.0, 0.0, -1e-4, 0.0];
            for &(v, val) in branch {
                point[v] = val;
            }
            assert!(eq0.eval(&point).abs() < 1e-8, "eq0 residual {}", eq0.eval(&point));
            assert!(eq1.eval(&point).abs() < 1e-8, "eq1 residual {}", eq1.eval(&point));
        }
        let u2a = branches[0].iter().find(|(v, _)| *v == 1).unwrap().1;
        let u2b = branches[1].iter().find(|(v, _)| *v == 1).unwrap().1;
        assert_abs_diff_eq!(u2a.min(u2b), -0.01, epsilon = 1e-6);
        assert_abs_diff_eq!(u2a.max(u2b), 0.01, epsilon = 1e-6);
    }
}

/// Cofactor matrix (transpose of the adjugate), with the convention that a
/// 1x1 matrix has the single cofactor 1.
fn cofactor_matrix(a: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    if m == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    let mut cof = DMatrix::zeros(m, m);
    for r in 0..m {
        for c in 0..m {
            let minor = a.clone().remove_row(r).remove_column(c);
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            cof[(r, c)] = sign * minor.determinant();
        }
    }
    cof
}
