//! Hyperbolic invariant manifolds of an equilibrium, propagated as an
//! initial value problem through a position-momentum generating function.

use nalgebra::DMatrix;

use crate::dynamics::PhaseState;
use crate::hj::{quadratic_form_matrix, GeneratingFunction};
use crate::partition::GfKind;

use super::ApplicationError;

/// A real eigenmode of the linearized dynamics at the reference.
#[derive(Debug, Clone)]
pub struct EigenMode {
    /// Real characteristic exponent.
    pub exponent: f64,
    /// Unit phase-space eigenvector, `2n` components `[q, p]`.
    pub vector: Vec<f64>,
}

/// Inverse of the largest unstable exponent.
pub fn characteristic_time(modes: &[EigenMode]) -> Option<f64> {
    modes
        .iter()
        .map(|m| m.exponent)
        .filter(|&l| l > 0.0)
        .fold(None, |acc: Option<f64>, l| {
            Some(acc.map_or(l, |a| a.max(l)))
        })
        .map(|l| 1.0 / l)
}

/// Real hyperbolic eigenmodes of the order-2 subsystem at the reference.
///
/// The linear system matrix is `[[Hpq, Hpp], [-Hqq, -Hqp]]`; real
/// eigenvalues with substantial magnitude are kept, their eigenvectors
/// recovered from the nullspace of `A - lambda I`.
pub fn hyperbolic_modes(gf: &GeneratingFunction) -> Result<Vec<EigenMode>, ApplicationError> {
    let n = gf.n();
    let t0 = gf.t0();
    let hh = gf
        .model()
        .taylor_hamiltonian(gf.reference(), 2, t0)?;
    let s = quadratic_form_matrix(&hh);
    let hqq: DMatrix<f64> = s.view((0, 0), (n, n)).into();
    let hqp: DMatrix<f64> = s.view((0, n), (n, n)).into();
    let hpp: DMatrix<f64> = s.view((n, n), (n, n)).into();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&hqp.transpose());
    a.view_mut((0, n), (n, n)).copy_from(&hpp);
    a.view_mut((n, 0), (n, n)).copy_from(&(-&hqq));
    a.view_mut((n, n), (n, n)).copy_from(&(-&hqp));

    let eigen = a.complex_eigenvalues();
    let scale = eigen.iter().fold(0.0f64, |s, z| s.max(z.norm()));
    let mut modes = Vec::new();
    for z in eigen.iter() {
        if z.im.abs() > 1e-9 * (1.0 + z.re.abs()) || z.re.abs() <= 1e-9 * scale.max(1.0) {
            continue;
        }
        if modes
            .iter()
            .any(|m: &EigenMode| (m.exponent - z.re).abs() < 1e-9 * scale.max(1.0))
        {
            continue;
        }
        // Eigenvector from the smallest singular vector of A - lambda I.
        let shifted = &a - DMatrix::identity(2 * n, 2 * n) * z.re;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let last = v_t.nrows() - 1;
        let mut vector: Vec<f64> = (0..2 * n).map(|c| v_t[(last, c)]).collect();
        // Fixed sign convention: first substantial component positive.
        if let Some(first) = vector.iter().find(|v| v.abs() > 1e-9) {
            if *first < 0.0 {
                vector.iter_mut().for_each(|v| *v = -*v);
            }
        }
        modes.push(EigenMode {
            exponent: z.re,
            vector,
        });
    }
    if modes.is_empty() {
        return Err(ApplicationError::NoHyperbolicMode(scale));
    }
    modes.sort_by(|a, b| b.exponent.partial_cmp(&a.exponent).unwrap());
    Ok(modes)
}

/// Manifold trajectory samples.
#[derive(Debug, Clone)]
pub struct ManifoldTrajectory {
    pub times: Vec<f64>,
    /// Relative flat states `[dq, dp]`.
    pub relative: Vec<Vec<f64>>,
    pub absolute: Vec<PhaseState>,
    /// Time past which the solve left the trustworthy region, if any.
    pub truncated_at: Option<f64>,
}

/// Propagate the point `alpha * v` on the linear (un)stable subspace as an
/// initial value problem: at each grid time, solve the endpoint-0 position
/// relation for the current position, then read the momentum gradient.
pub fn manifold_propagate(
    gf: &GeneratingFunction,
    mode: &EigenMode,
    alpha: f64,
    t_grid: &[f64],
    newton_tol: f64,
) -> Result<ManifoldTrajectory, ApplicationError> {
    let n = gf.n();
    let view = gf.derive_classical(GfKind::F2)?;
    let reference = gf.reference();
    let q0_seed: Vec<f64> = mode.vector[..n].iter().map(|v| alpha * v).collect();
    let p0_seed: Vec<f64> = mode.vector[n..].iter().map(|v| alpha * v).collect();

    let mut times = Vec::new();
    let mut relative = Vec::new();
    let mut absolute = Vec::new();
    let mut truncated_at = None;
    // Continuation in t: seed each solve with the previous solution.
    let mut q_prev = q0_seed.clone();
    for &t in t_grid {
        let Ok(snapshot) = view.snapshot(t) else {
            truncated_at = Some(t);
            break;
        };
        // Newton on r(q) = q0(q, p0_seed) - q0_seed with the implicit
        // endpoint-0 position relation.
        let mut q = q_prev.clone();
        let mut converged = false;
        for _ in 0..50 {
            let args: Vec<f64> = q.iter().chain(p0_seed.iter()).copied().collect();
            let Ok(full) = snapshot.solve_full(&args) else { break };
            let r: Vec<f64> = full.endpoint0[..n]
                .iter()
                .zip(&q0_seed)
                .map(|(a, b)| a - b)
                .collect();
            let rnorm = r.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            if rnorm < newton_tol {
                converged = true;
                break;
            }
            // Finite-difference Jacobian dq0/dq.
            let h = 1e-8 * (1.0 + alpha.abs());
            let mut jac = DMatrix::zeros(n, n);
            let mut ok = true;
            for c in 0..n {
                let mut qp = q.clone();
                qp[c] += h;
                let argsp: Vec<f64> = qp.iter().chain(p0_seed.iter()).copied().collect();
                let Ok(fp) = snapshot.solve_full(&argsp) else {
                    ok = false;
                    break;
                };
                for row in 0..n {
                    jac[(row, c)] = (fp.endpoint0[row] - full.endpoint0[row]) / h;
                }
            }
            if !ok {
                break;
            }
            let Some(step) = jac
                .lu()
                .solve(&nalgebra::DVector::from_column_slice(&r))
            else {
                break;
            };
            for (qi, si) in q.iter_mut().zip(step.iter()) {
                *qi -= si;
            }
        }
        if !converged || q.iter().any(|v| v.abs() > gf.trust_radius()) {
            truncated_at = Some(t);
            break;
        }
        let args: Vec<f64> = q.iter().chain(p0_seed.iter()).copied().collect();
        let full = snapshot.solve_full(&args).map_err(ApplicationError::Hj)?;
        let rel = full.endpoint1.clone();
        let base = reference.state_at(t)?;
        let abs: Vec<f64> = base.iter().zip(&rel).map(|(a, b)| a + b).collect();
        times.push(t);
        relative.push(rel);
        absolute.push(PhaseState::from_flat(&abs)?);
        q_prev = q;
    }
    Ok(ManifoldTrajectory {
        times,
        relative,
        absolute,
        truncated_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{HamiltonianModel, ReferenceTrajectory};
    use crate::hj::solve_gf;
    use approx::assert_abs_diff_eq;

    fn hill_gf(order: usize, t1: f64) -> GeneratingFunction {
        let model = HamiltonianModel::hill();
        let l2 = model.libration_points().unwrap()[1].clone();
        let reference =
            ReferenceTrajectory::equilibrium(model.clone(), &l2, 0.0, t1, "L2").unwrap();
        solve_gf(&model, &reference, &GfKind::F2.partition(2), order, 0.0, t1, 1e-11).unwrap()
    }

    #[test]
    fn hill_l2_exponent_matches_the_characteristic_equation() {
        // lambda^4 - 2 lambda^2 - 27 = 0 gives lambda = sqrt(1 + 2 sqrt 7).
        let gf = hill_gf(2, 1.0);
        let modes = hyperbolic_modes(&gf).unwrap();
        assert_eq!(modes.len(), 2, "one unstable and one stable mode");
        let expected = (1.0 + 2.0 * 7.0f64.sqrt()).sqrt();
        assert_abs_diff_eq!(modes[0].exponent, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(modes[1].exponent, -expected, epsilon = 1e-9);
        assert_abs_diff_eq!(
            characteristic_time(&modes).unwrap(),
            1.0 / expected,
            epsilon = 1e-12
        );
        // Eigenvector residual.
        let lambda4 = modes[0].exponent.powi(4);
        assert_abs_diff_eq!(
            lambda4 - 2.0 * modes[0].exponent.powi(2) - 27.0,
            0.0,
            epsilon = 1e-7
        );
    }

    #[test]
    fn zero_offset_stays_at_the_reference() {
        let gf = hill_gf(3, 1.5);
        let modes = hyperbolic_modes(&gf).unwrap();
        let grid: Vec<f64> = (0..8).map(|i| 0.2 * i as f64).collect();
        let traj = manifold_propagate(&gf, &modes[0], 0.0, &grid, 1e-13).unwrap();
        assert!(traj.truncated_at.is_none());
        for rel in &traj.relative {
            for v in rel {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unstable_manifold_grows_at_the_exponent_rate() {
        let gf = hill_gf(4, 1.6);
        let modes = hyperbolic_modes(&gf).unwrap();
        let unstable = &modes[0];
        let alpha = 1e-5;
        let grid: Vec<f64> = (0..=16).map(|i| 0.1 * i as f64).collect();
        let traj = manifold_propagate(&gf, unstable, alpha, &grid, 1e-13).unwrap();
        assert!(traj.times.len() >= 12, "premature truncation: {:?}", traj.truncated_at);
        // Log-linear fit of the relative amplitude.
        let xs: Vec<f64> = traj.times.clone();
        let ys: Vec<f64> = traj
            .relative
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt().ln())
            .collect();
        let m = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        assert!(
            (slope - unstable.exponent).abs() / unstable.exponent < 0.02,
            "slope {slope} vs exponent {}",
            unstable.exponent
        );
    }

    #[test]
    fn energy_is_constant_along_the_manifold() {
        let gf = hill_gf(4, 1.4);
        let modes = hyperbolic_modes(&gf).unwrap();
        let alpha = 1e-4;
        let grid: Vec<f64> = (0..=10).map(|i| 0.14 * i as f64).collect();
        let traj = manifold_propagate(&gf, &modes[0], alpha, &grid, 1e-13).unwrap();
        let model = gf.model();
        let h0 = model.eval_hamiltonian(&traj.absolute[0], 0.0).unwrap();
        for (state, t) in traj.absolute.iter().zip(&traj.times) {
            let h = model.eval_hamiltonian(state, *t).unwrap();
            // The truncation error enters at order (N+1) of the amplitude.
            assert!(
                (h - h0).abs() < 1e-10,
                "energy drift {} at t = {t}",
                (h - h0).abs()
            );
        }
    }
}
