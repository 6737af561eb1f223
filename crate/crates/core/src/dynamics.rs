//! Hamiltonian models and their flows.
//!
//! Models carry a closed-form Hamiltonian as an expression tree, so
//! partial derivatives of any order are exact. The builtin models are the
//! planar harmonic oscillator, Hill's three-body problem and the planar
//! circular restricted three-body problem, all in normalized rotating
//! coordinates with momenta `p_x = xdot - y`, `p_y = ydot + x`.

use std::fmt;
use std::sync::Arc;

use once_cell::sync::OnceCell;
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::ode::{self, OdeError, OdeOptions, OdeSolution};
use crate::poly::TruncatedPolynomial;

/// Conversion constants for the Sun-Earth Hill system in normalized units.
pub mod units {
    /// Kilometres per normalized length unit (0.01 units is about 21,500 km).
    pub const HILL_KM_PER_LENGTH: f64 = 2_150_000.0;
    /// Metres per second per normalized momentum unit.
    pub const HILL_MS_PER_MOMENTUM: f64 = 432.0;
    /// Days per normalized time unit, from the Sun-Earth rotation rate
    /// (one synodic revolution of 365.25 days spans 2*pi time units).
    pub const SUN_EARTH_DAYS_PER_TIME: f64 = 365.25 / (2.0 * std::f64::consts::PI);
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("state dimension {0} does not match model dimension {1}")]
    DimensionMismatch(usize, usize),
    #[error("state hit a gravitational singularity (distance {0:.3e} from a mass point)")]
    Singularity(f64),
    #[error("phase-state components must be finite")]
    NonFiniteState,
    #[error("q and p must have the same length (got {0} and {1})")]
    UnequalLengths(usize, usize),
    #[error("expansion order must be at least 2, got {0}")]
    OrderTooLow(usize),
    #[error("time {0} outside the reference span [{1}, {2}]")]
    OutOfSpan(f64, f64, f64),
    #[error("libration points are only defined for Hill and CRTBP models, not `{0}`")]
    UnsupportedModel(String),
    #[error("trajectory samples must be strictly increasing in time")]
    NonMonotonicSamples,
    #[error("sample {index} violates the equations of motion (residual {residual:.3e} > {tol:.3e})")]
    SampleResidual { index: usize, residual: f64, tol: f64 },
    #[error(transparent)]
    Integration(#[from] OdeError),
    #[error(transparent)]
    Expression(#[from] ExprError),
}

/// A point of an n-degree-of-freedom phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    q: Vec<f64>,
    p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self, DynamicsError> {
        if q.len() != p.len() || q.is_empty() {
            return Err(DynamicsError::UnequalLengths(q.len(), p.len()));
        }
        if q.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteState);
        }
        Ok(PhaseState { q, p })
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self, DynamicsError> {
        let n = flat.len() / 2;
        Self::new(flat[..n].to_vec(), flat[n..].to_vec())
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Flat layout `[q_1..q_n, p_1..p_n]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = self.q.clone();
        flat.extend_from_slice(&self.p);
        flat
    }
}

impl fmt::Display for PhaseState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q={:?} p={:?}", self.q, self.p)
    }
}

struct ModelInner {
    name: String,
    n: usize,
    params: Vec<(String, f64)>,
    hamiltonian: Expr,
    /// Position-space mass points where the potential is singular.
    mass_points: Vec<Vec<f64>>,
    autonomous: bool,
    gradient: OnceCell<Vec<Expr>>,
}

/// A Hamiltonian model with exact symbolic partials.
#[derive(Clone)]
pub struct HamiltonianModel {
    inner: Arc<ModelInner>,
}

impl fmt::Debug for HamiltonianModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HamiltonianModel({})", self.key())
    }
}

impl HamiltonianModel {
    /// One-dimensional oscillator `H = (p^2 + omega^2 q^2) / 2`.
    pub fn harmonic_oscillator(omega: f64) -> Self {
        let q = Expr::var(0);
        let p = Expr::var(1);
        let h = Expr::mul(
            Expr::constant(0.5),
            Expr::add(
                Expr::mul(p.clone(), p),
                Expr::mul(Expr::constant(omega * omega), Expr::mul(q.clone(), q)),
            ),
        );
        Self::build("harmonic", 1, vec![("omega".into(), omega)], h, vec![])
    }

    /// Hill's planar three-body problem in normalized rotating coordinates.
    pub fn hill() -> Self {
        let (qx, qy, px, py) = (Expr::var(0), Expr::var(1), Expr::var(2), Expr::var(3));
        let kinetic = Expr::mul(
            Expr::constant(0.5),
            Expr::add(
                Expr::mul(px.clone(), px.clone()),
                Expr::mul(py.clone(), py.clone()),
            ),
        );
        let coriolis = Expr::sub(
            Expr::mul(qy.clone(), px.clone()),
            Expr::mul(qx.clone(), py.clone()),
        );
        let r2 = Expr::add(
            Expr::mul(qx.clone(), qx.clone()),
            Expr::mul(qy.clone(), qy.clone()),
        );
        let gravity = Expr::neg(Expr::pow(r2, -0.5));
        let tidal = Expr::mul(
            Expr::constant(0.5),
            Expr::sub(
                Expr::mul(qy.clone(), qy),
                Expr::mul(Expr::constant(2.0), Expr::mul(qx.clone(), qx)),
            ),
        );
        let h = Expr::add(Expr::add(kinetic, coriolis), Expr::add(gravity, tidal));
        Self::build("hill", 2, vec![], h, vec![vec![0.0, 0.0]])
    }

    /// Planar circular restricted three-body problem with mass ratio `mu`;
    /// the primaries sit at `(-mu, 0)` and `(1 - mu, 0)`.
    pub fn crtbp(mu: f64) -> Self {
        let (qx, qy, px, py) = (Expr::var(0), Expr::var(1), Expr::var(2), Expr::var(3));
        let kinetic = Expr::mul(
            Expr::constant(0.5),
            Expr::add(
                Expr::mul(px.clone(), px.clone()),
                Expr::mul(py.clone(), py.clone()),
            ),
        );
        let coriolis = Expr::sub(
            Expr::mul(px, qy.clone()),
            Expr::mul(qx.clone(), py),
        );
        let dx1 = Expr::add(qx.clone(), Expr::constant(mu));
        let r1sq = Expr::add(
            Expr::mul(dx1.clone(), dx1),
            Expr::mul(qy.clone(), qy.clone()),
        );
        let dx2 = Expr::sub(qx, Expr::constant(1.0 - mu));
        let r2sq = Expr::add(Expr::mul(dx2.clone(), dx2), Expr::mul(qy.clone(), qy));
        let grav = Expr::sub(
            Expr::neg(Expr::mul(Expr::constant(1.0 - mu), Expr::pow(r1sq, -0.5))),
            Expr::mul(Expr::constant(mu), Expr::pow(r2sq, -0.5)),
        );
        let h = Expr::add(Expr::add(kinetic, coriolis), grav);
        Self::build(
            "crtbp",
            2,
            vec![("mu".into(), mu)],
            h,
            vec![vec![-mu, 0.0], vec![1.0 - mu, 0.0]],
        )
    }

    /// Model from a user-supplied Hamiltonian expression over variables
    /// `q_1..q_n, p_1..p_n` (and optionally `t` as variable `2n`).
    pub fn from_expr(
        name: &str,
        n: usize,
        params: Vec<(String, f64)>,
        hamiltonian: Expr,
        mass_points: Vec<Vec<f64>>,
    ) -> Self {
        Self::build(name, n, params, hamiltonian, mass_points)
    }

    fn build(
        name: &str,
        n: usize,
        params: Vec<(String, f64)>,
        hamiltonian: Expr,
        mass_points: Vec<Vec<f64>>,
    ) -> Self {
        let autonomous = !uses_var(&hamiltonian, 2 * n);
        HamiltonianModel {
            inner: Arc::new(ModelInner {
                name: name.to_string(),
                n,
                params,
                hamiltonian,
                mass_points,
                autonomous,
                gradient: OnceCell::new(),
            }),
        }
    }

    pub fn n(&self) -> usize {
        self.inner.n
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.inner.params
    }

    /// Time-independent models support the reversibility properties.
    pub fn is_autonomous(&self) -> bool {
        self.inner.autonomous
    }

    pub fn hamiltonian_expr(&self) -> &Expr {
        &self.inner.hamiltonian
    }

    /// Canonical identification string (name plus exact parameter values).
    pub fn key(&self) -> String {
        let mut key = format!("{} n={}", self.inner.name, self.inner.n);
        for (name, value) in &self.inner.params {
            key.push_str(&format!(" {name}={value:?}"));
        }
        key
    }

    fn gradient(&self) -> &[Expr] {
        self.inner.gradient.get_or_init(|| {
            (0..2 * self.inner.n)
                .map(|v| self.inner.hamiltonian.diff(v))
                .collect()
        })
    }

    fn check_state(&self, state: &PhaseState) -> Result<(), DynamicsError> {
        if state.n() != self.inner.n {
            return Err(DynamicsError::DimensionMismatch(state.n(), self.inner.n));
        }
        self.check_position(state.q())
    }

    fn check_position(&self, q: &[f64]) -> Result<(), DynamicsError> {
        for mass in &self.inner.mass_points {
            let d2: f64 = mass.iter().zip(q).map(|(m, x)| (x - m) * (x - m)).sum();
            if d2.sqrt() < 1e-9 {
                return Err(DynamicsError::Singularity(d2.sqrt()));
            }
        }
        Ok(())
    }

    fn flat_with_time(&self, flat: &[f64], t: f64) -> Vec<f64> {
        let mut x = flat.to_vec();
        x.push(t);
        x
    }

    /// Value of the Hamiltonian at a phase-space point.
    pub fn eval_hamiltonian(&self, state: &PhaseState, t: f64) -> Result<f64, DynamicsError> {
        self.check_state(state)?;
        let x = self.flat_with_time(&state.to_flat(), t);
        Ok(self.inner.hamiltonian.eval(&x))
    }

    /// Right-hand side of Hamilton's equations, `(dH/dp, -dH/dq)`, from
    /// exact symbolic partials.
    pub fn hamilton_rhs(&self, state: &PhaseState, t: f64) -> Result<Vec<f64>, DynamicsError> {
        self.check_state(state)?;
        let x = self.flat_with_time(&state.to_flat(), t);
        Ok(self.rhs_flat(&x))
    }

    fn rhs_flat(&self, x_with_t: &[f64]) -> Vec<f64> {
        let n = self.inner.n;
        let grad = self.gradient();
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            out[i] = grad[n + i].eval(x_with_t);
            out[n + i] = -grad[i].eval(x_with_t);
        }
        out
    }

    /// Adaptive integration of the flow from `t0` to `t1`.
    pub fn flow(
        &self,
        state0: &PhaseState,
        t0: f64,
        t1: f64,
        tol: f64,
    ) -> Result<PhaseState, DynamicsError> {
        let sol = self.flow_solution(state0, t0, t1, tol, false)?;
        PhaseState::from_flat(&sol.y_end)
    }

    /// Flow integration keeping the accepted nodes for dense evaluation.
    pub fn flow_solution(
        &self,
        state0: &PhaseState,
        t0: f64,
        t1: f64,
        tol: f64,
        dense: bool,
    ) -> Result<OdeSolution, DynamicsError> {
        self.check_state(state0)?;
        let n = self.inner.n;
        let opts = OdeOptions {
            tol,
            dense,
            ..Default::default()
        };
        let mut domain_error = None;
        let sol = ode::integrate(
            |t, y, out| {
                if self.check_position(&y[..n]).is_err() {
                    domain_error = Some(DynamicsError::Singularity(0.0));
                    out.fill(f64::NAN);
                    return;
                }
                let x = self.flat_with_time(y, t);
                out.copy_from_slice(&self.rhs_flat(&x));
            },
            t0,
            t1,
            &state0.to_flat(),
            &opts,
        )?;
        if let Some(err) = sol.termination.as_error(sol.t_end) {
            return Err(domain_error.unwrap_or(DynamicsError::Integration(err)));
        }
        Ok(sol)
    }

    /// Truncated Taylor expansion of `H` about a reference point, in the
    /// 2n relative variables, with the constant and linear parts dropped.
    pub fn taylor_hamiltonian(
        &self,
        reference: &ReferenceTrajectory,
        order: usize,
        t: f64,
    ) -> Result<TruncatedPolynomial, DynamicsError> {
        if order < 2 {
            return Err(DynamicsError::OrderTooLow(order));
        }
        let center = reference.state_at(t)?;
        self.check_position(&center[..self.inner.n])?;
        let expr = if self.inner.autonomous {
            self.inner.hamiltonian.clone()
        } else {
            self.inner
                .hamiltonian
                .substitute(2 * self.inner.n, &Expr::constant(t))
        };
        let full = expr.taylor(&center, order)?;
        Ok(full.degree_slice(2, order))
    }

    /// Equilibrium points of the rotating-frame models.
    ///
    /// Hill has the two known points at `(+-(1/3)^{1/3}, 0)`; the CRTBP
    /// collinear points come from bracketed bisection of the axis force
    /// balance and the triangular pair is closed-form. Momenta are the
    /// rotating-frame equilibrium values `p = (-q_y, q_x)`.
    pub fn libration_points(&self) -> Result<Vec<PhaseState>, DynamicsError> {
        match self.inner.name.as_str() {
            "hill" => {
                let a = (1.0f64 / 3.0).powf(1.0 / 3.0);
                Ok(vec![equilibrium_state(-a, 0.0), equilibrium_state(a, 0.0)])
            }
            "crtbp" => {
                let mu = self
                    .inner
                    .params
                    .iter()
                    .find(|(n, _)| n == "mu")
                    .map(|(_, v)| *v)
                    .unwrap_or(0.0);
                let axis = |x: f64| -> f64 {
                    let d1 = x + mu;
                    let d2 = x - 1.0 + mu;
                    x - (1.0 - mu) * d1 / d1.abs().powi(3) - mu * d2 / d2.abs().powi(3)
                };
                let eps = 1e-7_f64.min(mu / 10.0).max(1e-12);
                let l1 = bisect(&axis, -mu + eps, 1.0 - mu - eps);
                let l2 = bisect(&axis, 1.0 - mu + eps, 2.0);
                let l3 = bisect(&axis, -2.0, -mu - eps);
                let mut points = vec![
                    equilibrium_state(l1, 0.0),
                    equilibrium_state(l2, 0.0),
                    equilibrium_state(l3, 0.0),
                ];
                let s3 = 3.0f64.sqrt() / 2.0;
                points.push(equilibrium_state(0.5 - mu, s3));
                points.push(equilibrium_state(0.5 - mu, -s3));
                Ok(points)
            }
            other => Err(DynamicsError::UnsupportedModel(other.to_string())),
        }
    }
}

fn equilibrium_state(x: f64, y: f64) -> PhaseState {
    PhaseState::new(vec![x, y], vec![-y, x]).unwrap()
}

fn uses_var(expr: &Expr, var: usize) -> bool {
    match expr {
        Expr::Const(_) => false,
        Expr::Var(i) => *i == var,
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
            uses_var(a, var) || uses_var(b, var)
        }
        Expr::Pow(a, _) => uses_var(a, var),
    }
}

fn bisect(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fmid = f(mid);
        if (fmid > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A time-indexed reference trajectory (possibly a fixed equilibrium).
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    model: HamiltonianModel,
    /// `(t, flat state, flat derivative)` nodes, strictly increasing in t.
    nodes: Arc<Vec<(f64, Vec<f64>, Vec<f64>)>>,
    interpolation_order: usize,
    equilibrium: bool,
    label: String,
}

impl ReferenceTrajectory {
    /// Constant reference at an equilibrium state.
    pub fn equilibrium(
        model: HamiltonianModel,
        state: &PhaseState,
        t0: f64,
        t1: f64,
        label: &str,
    ) -> Result<Self, DynamicsError> {
        let flat = state.to_flat();
        let deriv = model.hamilton_rhs(state, t0)?;
        let nodes = vec![(t0, flat.clone(), deriv.clone()), (t1, flat, deriv)];
        Ok(ReferenceTrajectory {
            model,
            nodes: Arc::new(nodes),
            interpolation_order: 0,
            equilibrium: true,
            label: label.to_string(),
        })
    }

    /// Reference generated by integrating the model's own flow.
    pub fn from_flow(
        model: HamiltonianModel,
        state0: &PhaseState,
        t0: f64,
        t1: f64,
        tol: f64,
        label: &str,
    ) -> Result<Self, DynamicsError> {
        let sol = model.flow_solution(state0, t0, t1, tol, true)?;
        let nodes = sol
            .nodes
            .iter()
            .map(|n| (n.t, n.y.clone(), n.dy.clone()))
            .collect();
        Ok(ReferenceTrajectory {
            model,
            nodes: Arc::new(nodes),
            interpolation_order: 3,
            equilibrium: false,
            label: label.to_string(),
        })
    }

    /// Reference from explicit samples; time must be strictly increasing
    /// and each interior sample must satisfy the equations of motion to
    /// `fd_tol` when checked by centered differences.
    pub fn from_samples(
        model: HamiltonianModel,
        samples: &[(f64, PhaseState)],
        fd_tol: f64,
        label: &str,
    ) -> Result<Self, DynamicsError> {
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(DynamicsError::NonMonotonicSamples);
        }
        let mut nodes = Vec::with_capacity(samples.len());
        for (t, s) in samples {
            let deriv = model.hamilton_rhs(s, *t)?;
            nodes.push((*t, s.to_flat(), deriv));
        }
        for i in 1..nodes.len().saturating_sub(1) {
            let (t_prev, y_prev, _) = &nodes[i - 1];
            let (t_next, y_next, _) = &nodes[i + 1];
            let dt = t_next - t_prev;
            let mut residual = 0.0f64;
            for k in 0..y_prev.len() {
                let fd = (y_next[k] - y_prev[k]) / dt;
                residual = residual.max((fd - nodes[i].2[k]).abs());
            }
            if residual > fd_tol {
                return Err(DynamicsError::SampleResidual {
                    index: i,
                    residual,
                    tol: fd_tol,
                });
            }
        }
        Ok(ReferenceTrajectory {
            model,
            nodes: Arc::new(nodes),
            interpolation_order: 3,
            equilibrium: false,
            label: label.to_string(),
        })
    }

    pub fn model(&self) -> &HamiltonianModel {
        &self.model
    }

    pub fn is_equilibrium(&self) -> bool {
        self.equilibrium
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn interpolation_order(&self) -> usize {
        self.interpolation_order
    }

    pub fn span(&self) -> (f64, f64) {
        (self.nodes.first().unwrap().0, self.nodes.last().unwrap().0)
    }

    /// Flat state `[q, p]` at time `t` (cubic Hermite between samples).
    pub fn state_at(&self, t: f64) -> Result<Vec<f64>, DynamicsError> {
        let (t0, t1) = self.span();
        if self.equilibrium {
            // Equilibria are valid at any time.
            return Ok(self.nodes[0].1.clone());
        }
        let slack = 1e-9 * (1.0 + t1.abs().max(t0.abs()));
        if t < t0 - slack || t > t1 + slack {
            return Err(DynamicsError::OutOfSpan(t, t0, t1));
        }
        let nodes = &self.nodes;
        let mut lo = 0usize;
        let mut hi = nodes.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if nodes[mid].0 <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (ta, ya, da) = &nodes[lo];
        let (tb, yb, db) = &nodes[lo + 1];
        let h = tb - ta;
        if h == 0.0 {
            return Ok(ya.clone());
        }
        let s = ((t - ta) / h).clamp(0.0, 1.0);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        Ok((0..ya.len())
            .map(|i| h00 * ya[i] + h * h10 * da[i] + h01 * yb[i] + h * h11 * db[i])
            .collect())
    }

    /// Serialize as CSV rows `t,q1..qn,p1..pn` (17 significant digits).
    pub fn to_csv(&self) -> String {
        let n = self.model.n();
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",q{i}"));
        }
        for i in 1..=n {
            out.push_str(&format!(",p{i}"));
        }
        out.push('\n');
        for (t, y, _) in self.nodes.iter() {
            out.push_str(&format!("{t:.16e}"));
            for v in y {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parse the CSV format written by [`to_csv`].
    pub fn from_csv(
        model: HamiltonianModel,
        text: &str,
        fd_tol: f64,
        label: &str,
    ) -> Result<Self, DynamicsError> {
        let mut samples = Vec::new();
        for line in text.lines().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().unwrap_or(f64::NAN))
                .collect();
            let n = (fields.len() - 1) / 2;
            let state = PhaseState::new(fields[1..1 + n].to_vec(), fields[1 + n..].to_vec())?;
            samples.push((fields[0], state));
        }
        Self::from_samples(model, &samples, fd_tol, label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn hill_l2() -> PhaseState {
        let a = (1.0f64 / 3.0).powf(1.0 / 3.0);
        PhaseState::new(vec![a, 0.0], vec![0.0, a]).unwrap()
    }

    #[test]
    fn oscillator_hamiltonian_value() {
        let model = HamiltonianModel::harmonic_oscillator(2.0);
        let s = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        assert_abs_diff_eq!(model.eval_hamiltonian(&s, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn hill_energy_at_l2() {
        let model = HamiltonianModel::hill();
        let h = model.eval_hamiltonian(&hill_l2(), 0.0).unwrap();
        // Direct substitution gives -(3/2) * 3^(1/3).
        let expected = -1.5 * 3.0f64.powf(1.0 / 3.0);
        assert_abs_diff_eq!(h, expected, epsilon = 1e-12);
    }

    #[test]
    fn crtbp_energy_matches_independent_formula() {
        // Cross-check the expression tree against a hand-coded formula.
        let mu = 3.03591e-6;
        let model = HamiltonianModel::crtbp(mu);
        let l2 = model.libration_points().unwrap()[1].clone();
        let h = model.eval_hamiltonian(&l2, 0.0).unwrap();
        let (x, y) = (l2.q()[0], l2.q()[1]);
        let (px, py) = (l2.p()[0], l2.p()[1]);
        let r1 = ((x + mu).powi(2) + y * y).sqrt();
        let r2 = ((x - 1.0 + mu).powi(2) + y * y).sqrt();
        let expected =
            0.5 * (px * px + py * py) + px * y - x * py - (1.0 - mu) / r1 - mu / r2;
        assert_abs_diff_eq!(h, expected, epsilon = 1e-13);
    }

    #[test]
    fn rhs_vanishes_at_equilibria() {
        let hill = HamiltonianModel::hill();
        let rhs = hill.hamilton_rhs(&hill_l2(), 0.0).unwrap();
        for v in rhs {
            assert!(v.abs() < 1e-12, "Hill L2 residual {v}");
        }
        let crtbp = HamiltonianModel::crtbp(3.03591e-6);
        for point in crtbp.libration_points().unwrap() {
            let rhs = crtbp.hamilton_rhs(&point, 0.0).unwrap();
            for v in rhs {
                assert!(v.abs() < 1e-10, "CRTBP equilibrium residual {v}");
            }
        }
    }

    #[test]
    fn rhs_matches_analytic_oscillator() {
        let model = HamiltonianModel::harmonic_oscillator(1.0);
        let s = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let rhs = model.hamilton_rhs(&s, 0.0).unwrap();
        assert_abs_diff_eq!(rhs[0], 0.0);
        assert_abs_diff_eq!(rhs[1], -1.0);
    }

    #[test]
    fn flow_reproduces_oscillator_quarter_period() {
        let model = HamiltonianModel::harmonic_oscillator(1.0);
        let s0 = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let s1 = model
            .flow(&s0, 0.0, std::f64::consts::FRAC_PI_2, 1e-11)
            .unwrap();
        assert_abs_diff_eq!(s1.q()[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s1.p()[0], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_span_flow_is_identity() {
        let model = HamiltonianModel::hill();
        let s0 = hill_l2();
        let s1 = model.flow(&s0, 0.5, 0.5, 1e-10).unwrap();
        assert_eq!(s0, s1);
    }

    #[test]
    fn energy_conserved_along_random_hill_flows() {
        let model = HamiltonianModel::hill();
        let l2 = hill_l2();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let tol = 1e-10;
            let horizon = 1.0 + rng.gen::<f64>();
            let q: Vec<f64> = l2.q().iter().map(|v| v + 0.02 * rng.gen::<f64>()).collect();
            let p: Vec<f64> = l2.p().iter().map(|v| v + 0.02 * rng.gen::<f64>()).collect();
            let s0 = PhaseState::new(q, p).unwrap();
            let h0 = model.eval_hamiltonian(&s0, 0.0).unwrap();
            let s1 = model.flow(&s0, 0.0, horizon, tol).unwrap();
            let h1 = model.eval_hamiltonian(&s1, horizon).unwrap();
            assert!(
                (h1 - h0).abs() <= 100.0 * tol * horizon,
                "energy drift {} over {}",
                (h1 - h0).abs(),
                horizon
            );
        }
    }

    #[test]
    fn equilibria_are_fixed_points_of_flow() {
        let model = HamiltonianModel::hill();
        let tol = 1e-10;
        for point in model.libration_points().unwrap() {
            let end = model.flow(&point, 0.0, 2.0, tol).unwrap();
            for (a, b) in point.to_flat().iter().zip(end.to_flat()) {
                assert!((a - b).abs() <= 10.0 * tol, "drift {}", (a - b).abs());
            }
        }
    }

    #[test]
    fn hill_hamiltonian_parity_symmetry_is_exact() {
        let model = HamiltonianModel::hill();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let q = vec![rng.gen::<f64>() + 0.2, rng.gen::<f64>() - 0.5];
            let p = vec![rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5];
            let s = PhaseState::new(q.clone(), p.clone()).unwrap();
            let neg = PhaseState::new(
                q.iter().map(|v| -v).collect(),
                p.iter().map(|v| -v).collect(),
            )
            .unwrap();
            let a = model.eval_hamiltonian(&s, 0.0).unwrap();
            let b = model.eval_hamiltonian(&neg, 0.0).unwrap();
            assert_eq!(a, b, "parity symmetry must be bit-exact");
        }
    }

    #[test]
    fn gravity_singularity_is_a_domain_error() {
        let model = HamiltonianModel::hill();
        let s = PhaseState::new(vec![0.0, 0.0], vec![0.1, 0.1]).unwrap();
        assert!(matches!(
            model.eval_hamiltonian(&s, 0.0),
            Err(DynamicsError::Singularity(_))
        ));
    }

    #[test]
    fn flow_into_the_mass_point_fails() {
        // Radial free fall onto the origin: the integration must stop
        // with a domain error instead of returning garbage.
        let model = HamiltonianModel::hill();
        let s = PhaseState::new(vec![1e-3, 0.0], vec![0.0, 1e-3]).unwrap();
        let result = model.flow(&s, 0.0, 1.0, 1e-9);
        assert!(result.is_err(), "{result:?}");
    }

    #[test]
    fn taylor_below_order_two_is_rejected() {
        let model = HamiltonianModel::hill();
        let reference =
            ReferenceTrajectory::equilibrium(model.clone(), &hill_l2(), 0.0, 1.0, "L2").unwrap();
        assert!(matches!(
            model.taylor_hamiltonian(&reference, 1, 0.0),
            Err(DynamicsError::OrderTooLow(1))
        ));
    }

    #[test]
    fn taylor_of_oscillator_is_the_hamiltonian_itself() {
        let omega = 1.7;
        let model = HamiltonianModel::harmonic_oscillator(omega);
        let origin = PhaseState::new(vec![0.0], vec![0.0]).unwrap();
        let reference =
            ReferenceTrajectory::equilibrium(model.clone(), &origin, 0.0, 10.0, "origin").unwrap();
        let p = model.taylor_hamiltonian(&reference, 6, 0.0).unwrap();
        assert_abs_diff_eq!(p.coeff(&[2, 0]), 0.5 * omega * omega, epsilon = 1e-14);
        assert_abs_diff_eq!(p.coeff(&[0, 2]), 0.5, epsilon = 1e-14);
        let residual: f64 = p
            .terms()
            .filter(|(e, _)| e.iter().map(|&x| x as usize).sum::<usize>() > 2)
            .map(|(_, c)| c.abs())
            .sum();
        assert_eq!(residual, 0.0);
    }

    #[test]
    fn taylor_quadratic_blocks_at_hill_l2() {
        let model = HamiltonianModel::hill();
        let reference =
            ReferenceTrajectory::equilibrium(model.clone(), &hill_l2(), 0.0, 5.0, "L2").unwrap();
        let p = model.taylor_hamiltonian(&reference, 2, 0.0).unwrap();
        // d2H/dq2 = diag(-8, 4); d2H/dqdp has +1 on (qy,px), -1 on (qx,py);
        // d2H/dp2 = identity.
        assert_abs_diff_eq!(p.coeff(&[2, 0, 0, 0]), -4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.coeff(&[0, 2, 0, 0]), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.coeff(&[1, 0, 0, 1]), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.coeff(&[0, 1, 1, 0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.coeff(&[0, 0, 2, 0]), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.coeff(&[0, 0, 0, 2]), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.coeff(&[1, 1, 0, 0]), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn taylor_cubic_terms_match_binomial_expansion_and_finite_differences() {
        let model = HamiltonianModel::hill();
        let reference =
            ReferenceTrajectory::equilibrium(model.clone(), &hill_l2(), 0.0, 5.0, "L2").unwrap();
        let p = model.taylor_hamiltonian(&reference, 3, 0.0).unwrap();
        // Hand expansion of -1/r about (a, 0): the only cubic terms are
        // 3^(4/3) dx^3 and -(3/2) 3^(4/3) dx dy^2.
        let c = 3.0f64.powf(4.0 / 3.0);
        assert_abs_diff_eq!(p.coeff(&[3, 0, 0, 0]), c, epsilon = 1e-11);
        assert_abs_diff_eq!(p.coeff(&[1, 2, 0, 0]), -1.5 * c, epsilon = 1e-11);

        // Independent oracle: Richardson-extrapolated central second
        // differences of the exact first partial dH/dqx (= -pdot_x).
        let l2 = hill_l2();
        let grad_x = |dx: f64, dy: f64| {
            let s = PhaseState::new(vec![l2.q()[0] + dx, l2.q()[1] + dy], l2.p().to_vec()).unwrap();
            -model.hamilton_rhs(&s, 0.0).unwrap()[2]
        };
        let second_diff = |g: &dyn Fn(f64) -> f64, h: f64| (g(h) - 2.0 * g(0.0) + g(-h)) / (h * h);
        let richardson = |g: &dyn Fn(f64) -> f64, h: f64| {
            (4.0 * second_diff(g, h / 2.0) - second_diff(g, h)) / 3.0
        };
        let d3x = richardson(&|h| grad_x(h, 0.0), 5e-3);
        assert_abs_diff_eq!(p.coeff(&[3, 0, 0, 0]), d3x / 6.0, epsilon = 1e-6);
        let d1x2y = richardson(&|h| grad_x(0.0, h), 5e-3);
        assert_abs_diff_eq!(p.coeff(&[1, 2, 0, 0]), d1x2y / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn taylor_fidelity_improves_with_order() {
        // |H(ref + d) - H2..N(d) - linear part| <= C |d|^(N+1), with C
        // estimated from the expansion one order higher.
        let model = HamiltonianModel::hill();
        let l2 = hill_l2();
        let reference =
            ReferenceTrajectory::equilibrium(model.clone(), &l2, 0.0, 5.0, "L2").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for order in [2usize, 4, 6] {
            let p_n = model.taylor_hamiltonian(&reference, order, 0.0).unwrap();
            let p_hi = model.taylor_hamiltonian(&reference, order + 1, 0.0).unwrap();
            for _ in 0..10 {
                let d: Vec<f64> = (0..4).map(|_| 1e-3 * (rng.gen::<f64>() - 0.5)).collect();
                let state = PhaseState::new(
                    vec![l2.q()[0] + d[0], l2.q()[1] + d[1]],
                    vec![l2.p()[0] + d[2], l2.p()[1] + d[3]],
                )
                .unwrap();
                let exact = model.eval_hamiltonian(&state, 0.0).unwrap();
                let h0 = model.eval_hamiltonian(&l2, 0.0).unwrap();
                let rhs = model.hamilton_rhs(&l2, 0.0).unwrap();
                // Gradient from the rhs: dH/dq = -pdot, dH/dp = qdot.
                let linear = -rhs[2] * d[0] - rhs[3] * d[1] + rhs[0] * d[2] + rhs[1] * d[3];
                let series = h0 + linear + p_n.eval(&d);
                let err = (exact - series).abs();
                // One order higher isolates the leading remainder term.
                let lead = (p_hi.eval(&d) - p_n.eval(&d)).abs();
                assert!(
                    err <= 4.0 * lead.max(1e-15),
                    "order {order}: err {err} vs leading remainder {lead}"
                );
            }
        }
    }

    #[test]
    fn libration_points_match_reference_values() {
        let hill = HamiltonianModel::hill();
        let points = hill.libration_points().unwrap();
        let a = (1.0f64 / 3.0).powf(1.0 / 3.0);
        assert_abs_diff_eq!(points[0].q()[0], -a, epsilon = 1e-14);
        assert_abs_diff_eq!(points[1].q()[0], a, epsilon = 1e-14);
        assert_abs_diff_eq!(a, 0.693361, epsilon = 1e-6);

        let crtbp = HamiltonianModel::crtbp(3.03591e-6);
        let l2 = &crtbp.libration_points().unwrap()[1];
        assert_abs_diff_eq!(l2.q()[0], 1.01007, epsilon = 1e-5);
    }

    #[test]
    fn crtbp_collinear_points_approach_hill_scaling_for_small_mu() {
        // Distance of L1/L2 from the secondary scales as (mu/3)^(1/3).
        for mu in [1e-7, 1e-9] {
            let model = HamiltonianModel::crtbp(mu);
            let points = model.libration_points().unwrap();
            let hill_distance = (mu / 3.0).powf(1.0 / 3.0);
            let d1 = (1.0 - mu) - points[0].q()[0];
            let d2 = points[1].q()[0] - (1.0 - mu);
            assert!((d1 / hill_distance - 1.0).abs() < 0.02, "L1 ratio {}", d1 / hill_distance);
            assert!((d2 / hill_distance - 1.0).abs() < 0.02, "L2 ratio {}", d2 / hill_distance);
        }
    }

    #[test]
    fn oscillator_has_no_libration_points() {
        let model = HamiltonianModel::harmonic_oscillator(1.0);
        assert!(matches!(
            model.libration_points(),
            Err(DynamicsError::UnsupportedModel(_))
        ));
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let model = HamiltonianModel::hill();
        let l2 = hill_l2();
        let s0 = PhaseState::new(
            vec![l2.q()[0] + 1e-3, l2.q()[1]],
            vec![l2.p()[0], l2.p()[1] - 1e-3],
        )
        .unwrap();
        let reference =
            ReferenceTrajectory::from_flow(model.clone(), &s0, 0.0, 1.0, 1e-10, "orbit").unwrap();
        let csv = reference.to_csv();
        let parsed = ReferenceTrajectory::from_csv(model, &csv, 1e-2, "orbit").unwrap();
        let a = reference.state_at(0.5).unwrap();
        let b = parsed.state_at(0.5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn non_monotonic_samples_are_rejected() {
        let model = HamiltonianModel::harmonic_oscillator(1.0);
        let s = PhaseState::new(vec![0.1], vec![0.0]).unwrap();
        let samples = vec![(0.0, s.clone()), (0.5, s.clone()), (0.5, s)];
        assert!(matches!(
            ReferenceTrajectory::from_samples(model, &samples, 1.0, "bad"),
            Err(DynamicsError::NonMonotonicSamples)
        ));
    }
}
