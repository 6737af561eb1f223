//! Linear-quadratic optimal control through the linear generating-function
//! machinery, plus the general reduction of a controlled system to a
//! Hamiltonian model once the minimizing control is known in closed form.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::expr::Expr;
use crate::dynamics::HamiltonianModel;
use crate::lineargf::{
    self, solve_linear_boundary, QuadBlocks, QuadraticHamiltonian, DEFAULT_PIVOT_COND_LIMIT,
};
use crate::ode::{self, OdeOptions};
use crate::partition::BoundaryPartition;

use super::ApplicationError;

pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Final-time boundary data per the optimality conditions.
#[derive(Debug, Clone)]
pub enum LqBoundary {
    /// `k` fixed final states and `n - k` fixed final costates, all with
    /// explicit values (1-based state indices).
    Mixed {
        fixed_states: Vec<(usize, f64)>,
        fixed_costates: Vec<(usize, f64)>,
    },
    /// Free final state: the costate equals the terminal-cost gradient,
    /// `p(tf) = M^T Qf (M x(tf) - mf)`.
    Transversality,
}

/// Linear dynamics with quadratic running and terminal costs.
pub struct LqProblem {
    pub n: usize,
    pub m: usize,
    pub a: MatrixFn,
    pub b: MatrixFn,
    /// Running cost `1/2 (x^T Q x + 2 x^T N u + u^T R u)`.
    pub q: DMatrix<f64>,
    pub n_cross: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Terminal cost `1/2 (M x(tf) - mf)^T Qf (M x(tf) - mf)`.
    pub qf: DMatrix<f64>,
    pub m_sel: DMatrix<f64>,
    pub m_f: DVector<f64>,
    pub t0: f64,
    pub tf: f64,
    pub x0: DVector<f64>,
    pub boundary: LqBoundary,
}

impl LqProblem {
    /// Constant-matrix problem with sensible terminal-cost defaults.
    pub fn lti(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        n_cross: DMatrix<f64>,
        r: DMatrix<f64>,
        x0: DVector<f64>,
        t0: f64,
        tf: f64,
        boundary: LqBoundary,
    ) -> LqProblem {
        let n = a.nrows();
        let m = b.ncols();
        LqProblem {
            n,
            m,
            a: Arc::new(move |_| a.clone()),
            b: Arc::new(move |_| b.clone()),
            q,
            n_cross,
            r,
            qf: DMatrix::identity(n, n),
            m_sel: DMatrix::identity(n, n),
            m_f: DVector::zeros(n),
            t0,
            tf,
            x0,
            boundary,
        }
    }

    fn validate(&self) -> Result<(), ApplicationError> {
        let sym_defect = |m: &DMatrix<f64>| (m - m.transpose()).norm();
        if sym_defect(&self.q) > 1e-10 * (1.0 + self.q.norm()) {
            return Err(ApplicationError::BadCostBlock("Q (must be symmetric)"));
        }
        if sym_defect(&self.r) > 1e-10 * (1.0 + self.r.norm()) {
            return Err(ApplicationError::BadCostBlock("R (must be symmetric)"));
        }
        let q_eigs = self.q.clone().symmetric_eigen().eigenvalues;
        if q_eigs.iter().any(|&e| e < -1e-10 * (1.0 + self.q.norm())) {
            return Err(ApplicationError::BadCostBlock("Q (must be positive semi-definite)"));
        }
        let r_eigs = self.r.clone().symmetric_eigen().eigenvalues;
        if r_eigs.iter().any(|&e| e <= 0.0) {
            return Err(ApplicationError::BadCostBlock("R (must be positive definite)"));
        }
        let qf_eigs = self.qf.clone().symmetric_eigen().eigenvalues;
        if qf_eigs.iter().any(|&e| e <= 0.0) {
            return Err(ApplicationError::BadCostBlock("Qf (must be positive definite)"));
        }
        if let LqBoundary::Mixed {
            fixed_states,
            fixed_costates,
        } = &self.boundary
        {
            let mut seen = vec![false; self.n];
            for &(idx, _) in fixed_states.iter().chain(fixed_costates) {
                if idx == 0 || idx > self.n || seen[idx - 1] {
                    return Err(ApplicationError::BadBoundaryIndex(idx));
                }
                seen[idx - 1] = true;
            }
            if !seen.iter().all(|&s| s) {
                return Err(ApplicationError::BadBoundaryIndex(0));
            }
        }
        Ok(())
    }

    /// Hamiltonian of the optimal system after substituting the
    /// minimizing control `u = -R^{-1}(B^T p + N^T x)`.
    pub fn optimal_hamiltonian(&self) -> QuadraticHamiltonian {
        let r_inv = self
            .r
            .clone()
            .try_inverse()
            .expect("R validated positive definite");
        let q = self.q.clone();
        let n_cross = self.n_cross.clone();
        let a = Arc::clone(&self.a);
        let b = Arc::clone(&self.b);
        QuadraticHamiltonian::from_fn(self.n, move |t| {
            let at = a(t);
            let bt = b(t);
            // Hqq = Q - N R^-1 N^T ; Hqp = (A - B R^-1 N^T)^T ;
            // Hpp = -B R^-1 B^T.
            let hqq = &q - &n_cross * &r_inv * n_cross.transpose();
            let hqp = (&at - &bt * &r_inv * n_cross.transpose()).transpose();
            let hpp = -&bt * &r_inv * bt.transpose();
            QuadBlocks { hqq, hqp, hpp }
        })
    }
}

/// Solved optimal-control paths on a uniform time grid.
#[derive(Debug, Clone)]
pub struct LqSolution {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub costates: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    /// Initial costate solving the boundary problem.
    pub p0: DVector<f64>,
    pub cost: f64,
}

/// Solve the linear-quadratic problem: build the optimal Hamiltonian
/// system, solve the endpoint problem through the transition blocks, then
/// propagate state, costate, control and running cost.
pub fn lq_solve(
    prob: &LqProblem,
    tol: f64,
    sample_count: usize,
) -> Result<LqSolution, ApplicationError> {
    prob.validate()?;
    let n = prob.n;
    let ham = prob.optimal_hamiltonian();
    let path = lineargf::stm(&ham, prob.t0, prob.tf, tol)?;
    let end = path.end();

    let p0: DVector<f64> = match &prob.boundary {
        LqBoundary::Mixed {
            fixed_states,
            fixed_costates,
        } => {
            let ip: Vec<usize> = fixed_states.iter().map(|&(i, _)| i).collect();
            let kr: Vec<usize> = (1..=n).collect();
            let partition = BoundaryPartition::new(n, &ip, &kr)
                .map_err(|_| ApplicationError::BadBoundaryIndex(0))?;
            let mut endpoint1 = vec![0.0; n];
            for &(i, v) in fixed_states {
                endpoint1[i - 1] = v;
            }
            for &(i, v) in fixed_costates {
                endpoint1[i - 1] = v;
            }
            let endpoint0: Vec<f64> = prob.x0.iter().copied().collect();
            let (z0, _z1) = solve_linear_boundary(
                &end,
                &partition,
                &endpoint1,
                &endpoint0,
                DEFAULT_PIVOT_COND_LIMIT,
            )?;
            DVector::from_column_slice(&z0[n..])
        }
        LqBoundary::Transversality => {
            // p(tf) = M^T Qf (M x(tf) - mf) with x(tf), p(tf) linear in p0.
            let mq = prob.m_sel.transpose() * &prob.qf;
            let lhs = &end.pp - &mq * &prob.m_sel * &end.qp;
            let rhs = &mq * (&prob.m_sel * &end.qq * &prob.x0 - &prob.m_f) - &end.pq * &prob.x0;
            lhs.lu()
                .solve(&rhs)
                .ok_or(ApplicationError::RefinementFailed("transversality solve".into()))?
        }
    };

    // Propagate [x; p; running cost] once with dense output.
    let r_inv = prob.r.clone().try_inverse().unwrap();
    let control_at = |t: f64, x: &DVector<f64>, p: &DVector<f64>| -> DVector<f64> {
        -(&r_inv) * ((prob.b)(t).transpose() * p + prob.n_cross.transpose() * x)
    };
    let mut y0: Vec<f64> = prob.x0.iter().copied().collect();
    y0.extend(p0.iter().copied());
    y0.push(0.0);
    let opts = OdeOptions::with_tol(tol);
    let sol = ode::integrate(
        |t, y, out| {
            let x = DVector::from_column_slice(&y[..n]);
            let p = DVector::from_column_slice(&y[n..2 * n]);
            let u = control_at(t, &x, &p);
            let xdot = (prob.a)(t) * &x + (prob.b)(t) * &u;
            let pdot = -((prob.a)(t).transpose() * &p
                + &prob.q * &x
                + &prob.n_cross * &u);
            let run = 0.5
                * ((&x.transpose() * &prob.q * &x)[(0, 0)]
                    + 2.0 * (&x.transpose() * &prob.n_cross * &u)[(0, 0)]
                    + (&u.transpose() * &prob.r * &u)[(0, 0)]);
            out[..n].copy_from_slice(xdot.as_slice());
            out[n..2 * n].copy_from_slice(pdot.as_slice());
            out[2 * n] = run;
        },
        prob.t0,
        prob.tf,
        &y0,
        &opts,
    )
    .map_err(|e| ApplicationError::Linear(e.into()))?;
    if let Some(err) = sol.termination.as_error(sol.t_end) {
        return Err(ApplicationError::Linear(err.into()));
    }

    let count = sample_count.max(2);
    let mut times = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    let mut costates = Vec::with_capacity(count);
    let mut controls = Vec::with_capacity(count);
    for i in 0..count {
        let t = prob.t0 + (prob.tf - prob.t0) * i as f64 / (count - 1) as f64;
        let y = sol.eval(t);
        let x = DVector::from_column_slice(&y[..n]);
        let p = DVector::from_column_slice(&y[n..2 * n]);
        let u = control_at(t, &x, &p);
        times.push(t);
        states.push(x);
        costates.push(p);
        controls.push(u);
    }
    let x_end = DVector::from_column_slice(&sol.y_end[..n]);
    let miss = &prob.m_sel * &x_end - &prob.m_f;
    let terminal = 0.5 * (miss.transpose() * &prob.qf * &miss)[(0, 0)];
    let cost = sol.y_end[2 * n] + terminal;
    Ok(LqSolution {
        times,
        states,
        costates,
        controls,
        p0,
        cost,
    })
}

/// Substitute a closed-form minimizing control into `H = p^T f + L`,
/// producing a Hamiltonian model of the optimal system.
///
/// Variables of the input expressions: states `0..n`, costates `n..2n`,
/// controls `2n..2n+m`, time `2n+m`. The control expressions may use
/// states, costates and time.
pub fn optimal_control_reduce(
    name: &str,
    n: usize,
    m: usize,
    dynamics: &[Expr],
    running_cost: &Expr,
    minimizing_control: &[Expr],
) -> HamiltonianModel {
    assert_eq!(dynamics.len(), n, "one dynamics component per state");
    assert_eq!(minimizing_control.len(), m, "one expression per control");
    let mut h = running_cost.clone();
    for (i, f_i) in dynamics.iter().enumerate() {
        h = Expr::add(h, Expr::mul(Expr::var(n + i), f_i.clone()));
    }
    for (j, u_j) in minimizing_control.iter().enumerate() {
        h = h.substitute(2 * n + j, u_j);
    }
    // Re-home the time variable from slot 2n + m to slot 2n.
    if m > 0 {
        h = h.substitute(2 * n + m, &Expr::var(2 * n));
    }
    HamiltonianModel::from_expr(name, n, Vec::new(), h, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PhaseState;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn single_integrator(boundary: LqBoundary) -> LqProblem {
        LqProblem::lti(
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            DVector::from_column_slice(&[1.0]),
            0.0,
            1.0,
            boundary,
        )
    }

    #[test]
    fn minimum_effort_transfer() {
        // xdot = u, L = u^2/2, x(0) = 1, x(1) = 0: u = -1, p = 1, J = 1/2.
        let prob = single_integrator(LqBoundary::Mixed {
            fixed_states: vec![(1, 0.0)],
            fixed_costates: vec![],
        });
        let sol = lq_solve(&prob, 1e-12, 51).unwrap();
        assert_abs_diff_eq!(sol.cost, 0.5, epsilon = 1e-10);
        for (u, p) in sol.controls.iter().zip(&sol.costates) {
            assert_abs_diff_eq!(u[0], -1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(sol.states.last().unwrap()[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_initial_state_and_targets_cost_nothing() {
        let mut prob = single_integrator(LqBoundary::Mixed {
            fixed_states: vec![(1, 0.0)],
            fixed_costates: vec![],
        });
        prob.x0 = DVector::zeros(1);
        let sol = lq_solve(&prob, 1e-12, 11).unwrap();
        assert_abs_diff_eq!(sol.cost, 0.0, epsilon = 1e-12);
        for u in &sol.controls {
            assert_abs_diff_eq!(u[0], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn definiteness_violations_are_rejected() {
        let mut prob = single_integrator(LqBoundary::Transversality);
        prob.r = -DMatrix::identity(1, 1);
        assert!(matches!(
            lq_solve(&prob, 1e-10, 5),
            Err(ApplicationError::BadCostBlock(_))
        ));
    }

    #[test]
    fn pontryagin_stationarity_along_the_solution() {
        // dH/du = B^T p + N^T x + R u must vanish along the optimal path.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 3;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let b = DMatrix::from_fn(n, 2, |_, _| rng.gen::<f64>() - 0.5);
        let q_half = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let q = &q_half * q_half.transpose();
        let n_cross = DMatrix::from_fn(n, 2, |_, _| 0.3 * (rng.gen::<f64>() - 0.5));
        let r = DMatrix::identity(2, 2) * 1.5;
        let x0 = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
        let prob = LqProblem::lti(
            a.clone(),
            b.clone(),
            q,
            n_cross.clone(),
            r.clone(),
            x0,
            0.0,
            1.2,
            LqBoundary::Transversality,
        );
        let sol = lq_solve(&prob, 1e-11, 41).unwrap();
        for ((x, p), u) in sol.states.iter().zip(&sol.costates).zip(&sol.controls) {
            let grad = b.transpose() * p + n_cross.transpose() * x + &r * u;
            assert!(grad.norm() < 1e-9, "stationarity defect {}", grad.norm());
        }
        // Transversality: p(tf) = Qf x(tf) with M = I, mf = 0.
        let p_end = sol.costates.last().unwrap();
        let x_end = sol.states.last().unwrap();
        assert!((p_end - &prob.qf * x_end).norm() < 1e-8);
    }

    #[test]
    fn feasible_control_perturbations_increase_the_cost() {
        let prob = single_integrator(LqBoundary::Transversality);
        let sol = lq_solve(&prob, 1e-12, 201).unwrap();
        // Propagate x under u(t) + eps * d(t) and accumulate the full cost.
        let run_cost = |eps: f64| -> f64 {
            let mut x = prob.x0[0];
            let mut j = 0.0;
            let steps = 4000;
            let dt = (prob.tf - prob.t0) / steps as f64;
            for s in 0..steps {
                let t = prob.t0 + dt * (s as f64 + 0.5);
                // Interpolate the nominal control.
                let pos = (t - prob.t0) / (prob.tf - prob.t0) * (sol.times.len() - 1) as f64;
                let (i, frac) = (pos.floor() as usize, pos.fract());
                let u_nom = sol.controls[i][0] * (1.0 - frac)
                    + sol.controls[(i + 1).min(sol.controls.len() - 1)][0] * frac;
                let u = u_nom + eps * (1.5 * t).sin();
                j += 0.5 * u * u * dt;
                x += u * dt;
            }
            j + 0.5 * x * x
        };
        let j0 = run_cost(0.0);
        for eps in [-0.05, 0.05, -0.2, 0.2] {
            let j = run_cost(eps);
            assert!(j >= j0 - 1e-9, "perturbed cost {j} below optimal {j0}");
        }
    }

    #[test]
    fn costate_follows_the_perturbation_matrix_maps() {
        // Trajectories of the optimal Hamiltonian system started with
        // dp0 = 0 satisfy p(t) = C~(t) x(t); started with dx0 = 0 they
        // satisfy p(t) = C(t) x(t).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 2;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let q_half = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let q = &q_half * q_half.transpose();
        let prob = LqProblem::lti(
            a,
            b,
            q,
            DMatrix::zeros(n, n),
            DMatrix::identity(n, n),
            DVector::from_column_slice(&[0.4, -0.2]),
            0.0,
            0.9,
            LqBoundary::Transversality,
        );
        let ham = prob.optimal_hamiltonian();
        let path = lineargf::stm(&ham, 0.0, 0.9, 1e-12).unwrap();
        for t in [0.3, 0.7] {
            let stm_t = path.at(t);
            let pert = lineargf::perturbation_matrices(&stm_t).unwrap();
            // dp0 = 0 trajectory.
            let z = stm_t.apply(&[0.4, -0.2, 0.0, 0.0]);
            let x = DVector::from_column_slice(&z[..n]);
            let p = DVector::from_column_slice(&z[n..]);
            assert!((&pert.c_tilde * &x - &p).norm() < 1e-9);
            // dx0 = 0 trajectory.
            let z = stm_t.apply(&[0.0, 0.0, 0.3, 0.5]);
            let x = DVector::from_column_slice(&z[..n]);
            let p = DVector::from_column_slice(&z[n..]);
            assert!((&pert.c * &x - &p).norm() < 1e-9);
        }
    }

    #[test]
    fn reduce_minimum_effort_hamiltonian() {
        // f = u, L = u^2/2, u* = -p: the reduced Hamiltonian is -p^2/2.
        let n = 1;
        let m = 1;
        let dynamics = vec![Expr::var(2)];
        let cost = Expr::mul(
            Expr::constant(0.5),
            Expr::mul(Expr::var(2), Expr::var(2)),
        );
        let u_star = vec![Expr::neg(Expr::var(1))];
        let model = optimal_control_reduce("min-effort", n, m, &dynamics, &cost, &u_star);
        let s = PhaseState::new(vec![0.7], vec![0.3]).unwrap();
        assert_abs_diff_eq!(
            model.eval_hamiltonian(&s, 0.0).unwrap(),
            -0.5 * 0.3 * 0.3,
            epsilon = 1e-14
        );
    }

    #[test]
    fn reduce_without_controls_returns_the_hamiltonian() {
        let h = Expr::mul(Expr::var(0), Expr::var(1));
        let model = optimal_control_reduce("free", 1, 0, &[Expr::var(1)], &Expr::constant(0.0), &[]);
        // H = p * f = p^2 here; the original expression is untouched.
        let s = PhaseState::new(vec![2.0], vec![3.0]).unwrap();
        assert_abs_diff_eq!(model.eval_hamiltonian(&s, 0.0).unwrap(), 9.0);
        let _ = h;
    }

    #[test]
    fn reduced_lq_matches_the_block_hamiltonian() {
        // Scalar LQ: f = a x + b u, L = (q x^2 + r u^2)/2,
        // u* = -(b/r) p: the reduced blocks must match the closed forms.
        let (a, b, q, r) = (0.7, 1.3, 0.9, 2.0);
        let dynamics = vec![Expr::add(
            Expr::mul(Expr::constant(a), Expr::var(0)),
            Expr::mul(Expr::constant(b), Expr::var(2)),
        )];
        let cost = Expr::mul(
            Expr::constant(0.5),
            Expr::add(
                Expr::mul(Expr::constant(q), Expr::mul(Expr::var(0), Expr::var(0))),
                Expr::mul(Expr::constant(r), Expr::mul(Expr::var(2), Expr::var(2))),
            ),
        );
        let u_star = vec![Expr::mul(Expr::constant(-b / r), Expr::var(1))];
        let model = optimal_control_reduce("lq1", 1, 1, &dynamics, &cost, &u_star);
        // H = q/2 x^2 + a x p - b^2/(2r) p^2.
        let s = PhaseState::new(vec![0.4], vec![-0.6]).unwrap();
        let expected = 0.5 * q * 0.16 + a * 0.4 * (-0.6) - b * b / (2.0 * r) * 0.36;
        assert_abs_diff_eq!(model.eval_hamiltonian(&s, 0.0).unwrap(), expected, epsilon = 1e-13);
    }
}
