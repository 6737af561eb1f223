//! Two-point boundary value problems through generating functions.
//!
//! Given 2n of the 4n endpoint coordinates (per a boundary partition) and
//! a transfer time, the other 2n come from gradient evaluations of an
//! already-computed generating function: no shooting, no iteration over
//! trajectories. Near caustics the solution count is resolved through the
//! series-inversion classification and each branch is returned.

use thiserror::Error;

use crate::dynamics::{DynamicsError, PhaseState};
use crate::hj::{full_var_of, GeneratingFunction, HjError, LegendreResult};
use crate::lineargf;
use crate::partition::BoundaryPartition;
use crate::poly::Inversion;

/// Flow-residual acceptance threshold (normalized units).
pub const DEFAULT_RESIDUAL_THRESHOLD: f64 = 1e-6;

/// Pivot condition number above which a direct solve refuses and defers
/// to [`enumerate_solutions`].
pub const DEFAULT_COND_LIMIT: f64 = 1e8;

/// Half-width of the window searched for the exact singular time when a
/// query lands near a caustic.
pub const SINGULARITY_POLISH_WINDOW: f64 = 2e-2;

#[derive(Debug, Error)]
pub enum TpbvpError {
    #[error(
        "kind {label} is singular near t = {t:.9} (pivot condition {cond:.3e}); \
         use enumerate_solutions to count and retrieve branches"
    )]
    SingularKind { label: String, t: f64, cond: f64 },
    #[error("boundary data has {got} values, expected {expected}")]
    WrongArity { got: usize, expected: usize },
    #[error("transfer time {0} outside the generating-function span [{1}, {2}]")]
    OutOfSpan(f64, f64, f64),
    #[error("no branch classification possible: {0}")]
    Classification(String),
    #[error(transparent)]
    Hj(#[from] HjError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// A boundary value problem: the independent coordinates of a partition
/// (relative to the generating function's reference) plus a transfer time.
#[derive(Debug, Clone)]
pub struct BvpSpec {
    pub partition: BoundaryPartition,
    /// Endpoint-1 independents by index: `q_i` for `i` in `I_p`, else `p_i`.
    pub endpoint1: Vec<f64>,
    /// Endpoint-0 independents by index: `q0_k` for `k` in `K_r`, else `p0_k`.
    pub endpoint0: Vec<f64>,
    pub transfer_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchLabel {
    Unique,
    /// 1-based branch index on a multi-branch caustic.
    Branch(usize),
}

/// Options controlling verification of returned solutions.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Integrate the model flow to verify each solution. Costs one
    /// integration per solution; disable for large batches.
    pub verify: bool,
    pub flow_tol: f64,
    pub residual_threshold: f64,
    pub cond_limit: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            verify: true,
            flow_tol: 1e-11,
            residual_threshold: DEFAULT_RESIDUAL_THRESHOLD,
            cond_limit: DEFAULT_COND_LIMIT,
        }
    }
}

impl SolveOptions {
    pub fn without_verification() -> Self {
        SolveOptions {
            verify: false,
            ..Default::default()
        }
    }
}

/// A solved boundary value problem.
#[derive(Debug, Clone)]
pub struct BvpSolution {
    /// Absolute endpoint states (reference added back).
    pub state0: PhaseState,
    pub state1: PhaseState,
    /// Relative flat states `[dq, dp]` at each endpoint.
    pub relative0: Vec<f64>,
    pub relative1: Vec<f64>,
    pub branch: BranchLabel,
    /// `|flow(state0) - state1|` when verification ran.
    pub flow_residual: Option<f64>,
    /// False when the verified residual exceeds the acceptance threshold.
    pub accepted: bool,
    pub within_trust: bool,
}

/// Outcome of branch enumeration near a possibly singular transfer time.
#[derive(Debug)]
pub enum Enumeration {
    Unique(BvpSolution),
    Fold {
        /// Polished singular time the classification was made at.
        time: f64,
        expected_branches: usize,
        branches: Vec<BvpSolution>,
    },
    Unclassified {
        time: f64,
        leading_degree: usize,
        branches: Vec<BvpSolution>,
    },
    InfiniteFamily {
        time: f64,
    },
}

fn view_as<'a>(
    gf: &'a GeneratingFunction,
    partition: &BoundaryPartition,
) -> Result<GeneratingFunction, TpbvpError> {
    if gf.partition() == partition {
        Ok(gf.clone())
    } else {
        Ok(gf.derive_kind(partition)?)
    }
}

fn check_spec(gf: &GeneratingFunction, spec: &BvpSpec) -> Result<(), TpbvpError> {
    let n = gf.n();
    if spec.endpoint1.len() != n || spec.endpoint0.len() != n {
        return Err(TpbvpError::WrongArity {
            got: spec.endpoint1.len() + spec.endpoint0.len(),
            expected: 2 * n,
        });
    }
    let (t0, t1) = gf.span();
    let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
    let slack = 1e-9 * (1.0 + hi.abs());
    if spec.transfer_time < lo - slack || spec.transfer_time > hi + slack {
        return Err(TpbvpError::OutOfSpan(spec.transfer_time, t0, t1));
    }
    Ok(())
}

fn finish_solution(
    gf: &GeneratingFunction,
    t: f64,
    relative0: Vec<f64>,
    relative1: Vec<f64>,
    branch: BranchLabel,
    within_trust: bool,
    opts: &SolveOptions,
) -> Result<BvpSolution, TpbvpError> {
    let reference = gf.reference();
    let t0 = gf.t0();
    let ref0 = reference.state_at(t0)?;
    let ref1 = reference.state_at(t)?;
    let abs0: Vec<f64> = ref0.iter().zip(&relative0).map(|(r, d)| r + d).collect();
    let abs1: Vec<f64> = ref1.iter().zip(&relative1).map(|(r, d)| r + d).collect();
    let state0 = PhaseState::from_flat(&abs0)?;
    let state1 = PhaseState::from_flat(&abs1)?;
    let flow_residual = if opts.verify {
        let end = gf.model().flow(&state0, t0, t, opts.flow_tol)?;
        let err = end
            .to_flat()
            .iter()
            .zip(&abs1)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Some(err)
    } else {
        None
    };
    let accepted = flow_residual.map_or(true, |r| r <= opts.residual_threshold);
    Ok(BvpSolution {
        state0,
        state1,
        relative0,
        relative1,
        branch,
        flow_residual,
        accepted,
        within_trust,
    })
}

/// Solve a boundary value problem at a nonsingular transfer time.
pub fn solve_bvp(
    gf: &GeneratingFunction,
    spec: &BvpSpec,
    opts: &SolveOptions,
) -> Result<BvpSolution, TpbvpError> {
    check_spec(gf, spec)?;
    let view = view_as(gf, &spec.partition)?;
    let snapshot = view.snapshot(spec.transfer_time)?;
    let cond = snapshot.target_pivot_condition();
    if !cond.is_finite() || cond > opts.cond_limit {
        return Err(TpbvpError::SingularKind {
            label: spec.partition.label(),
            t: spec.transfer_time,
            cond,
        });
    }
    let args: Vec<f64> = spec
        .endpoint1
        .iter()
        .chain(&spec.endpoint0)
        .copied()
        .collect();
    let full = snapshot.solve_full(&args)?;
    finish_solution(
        gf,
        spec.transfer_time,
        full.endpoint0,
        full.endpoint1,
        BranchLabel::Unique,
        full.within_trust,
        opts,
    )
}

/// Lambert-type solve: both endpoint positions given, momenta returned.
#[derive(Debug, Clone)]
pub struct LambertSolution {
    /// Momentum at the initial endpoint (relative values).
    pub p0: Vec<f64>,
    /// Momentum at the final endpoint (relative values).
    pub p1: Vec<f64>,
    pub solution: BvpSolution,
}

pub fn solve_lambert(
    gf: &GeneratingFunction,
    q0: &[f64],
    q1: &[f64],
    transfer_time: f64,
    opts: &SolveOptions,
) -> Result<LambertSolution, TpbvpError> {
    let n = gf.n();
    let partition = crate::partition::GfKind::F1.partition(n);
    let spec = BvpSpec {
        partition,
        endpoint1: q1.to_vec(),
        endpoint0: q0.to_vec(),
        transfer_time,
    };
    let solution = solve_bvp(gf, &spec, opts)?;
    Ok(LambertSolution {
        p0: solution.relative0[n..].to_vec(),
        p1: solution.relative1[n..].to_vec(),
        solution,
    })
}

/// Determinant of the target partition's pivot, from the quadratic part.
fn pivot_determinant(
    gf: &GeneratingFunction,
    partition: &BoundaryPartition,
    t: f64,
) -> Result<f64, TpbvpError> {
    let stm = gf.stm_at(t)?;
    Ok(lineargf::partition_pivot_matrix(&stm, partition).determinant())
}

/// Enumerate the solutions of a boundary value problem, resolving the
/// branch structure when the requested kind is singular at (or near) the
/// transfer time.
pub fn enumerate_solutions(
    gf: &GeneratingFunction,
    spec: &BvpSpec,
    opts: &SolveOptions,
) -> Result<Enumeration, TpbvpError> {
    check_spec(gf, spec)?;
    let n = gf.n();
    let t_query = spec.transfer_time;

    // Locate the exact degeneracy (if any) near the queried time: the
    // pivot determinant changes sign across a caustic crossing.
    let (t0, t1) = gf.span();
    let lo = (t_query - SINGULARITY_POLISH_WINDOW).max(t0.min(t1));
    let hi = (t_query + SINGULARITY_POLISH_WINDOW).min(t0.max(t1));
    let g_lo = pivot_determinant(gf, &spec.partition, lo)?;
    let g_hi = pivot_determinant(gf, &spec.partition, hi)?;
    let t_singular = if g_lo == 0.0 {
        Some(lo)
    } else if g_hi == 0.0 {
        Some(hi)
    } else if (g_lo > 0.0) != (g_hi > 0.0) {
        // Bisect to the crossing.
        let (mut a, mut b, mut ga) = (lo, hi, g_lo);
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if mid == a || mid == b {
                break;
            }
            let gm = pivot_determinant(gf, &spec.partition, mid)?;
            if gm == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if (gm > 0.0) == (ga > 0.0) {
                a = mid;
                ga = gm;
            } else {
                b = mid;
            }
        }
        Some(0.5 * (a + b))
    } else {
        None
    };

    let Some(t_star) = t_singular else {
        // No caustic crossing nearby: a single branch (or a hard refusal
        // if the pivot is still badly conditioned without a sign change).
        return Ok(Enumeration::Unique(solve_bvp(gf, spec, opts)?));
    };

    // Classify at the polished time through the Legendre transform.
    let result = gf.legendre_at(&spec.partition, t_star)?;
    let singular = match result {
        LegendreResult::Polynomial(_) => {
            // The polished determinant zero was too shallow to classify as
            // singular at this order; treat the query as regular.
            return Ok(Enumeration::Unique(solve_bvp(gf, spec, opts)?));
        }
        LegendreResult::Singular(s) => s,
    };

    match &singular.inversion {
        Inversion::InfiniteFamily => Ok(Enumeration::InfiniteFamily { time: t_star }),
        Inversion::Fold(data) | Inversion::Unclassified(data) => {
            // Known values: the target partition's independents, at their
            // full-space variable indices.
            let mut knowns = Vec::with_capacity(2 * n);
            let args: Vec<f64> = spec
                .endpoint1
                .iter()
                .chain(&spec.endpoint0)
                .copied()
                .collect();
            for (slot, &value) in args.iter().enumerate() {
                knowns.push((full_var_of(&spec.partition, slot), value));
            }
            let radius = (4.0 * gf.trust_radius()).max(1e-3);
            let assignments = data.branch_solutions(&knowns, radius);

            let seg_partition = gf.segment_partition_at(t_star)?;
            let seg_view = gf.derive_kind(&seg_partition)?;
            let snapshot = seg_view.snapshot(t_star)?;
            let mut branches = Vec::new();
            for (index, assignment) in assignments.iter().enumerate() {
                let full = source_values_from_branch(
                    &seg_partition,
                    &spec.partition,
                    &args,
                    assignment,
                );
                let Some(u) = full else { continue };
                let boundary = snapshot.full_from_source(&u);
                let solution = finish_solution(
                    gf,
                    t_star,
                    boundary.endpoint0,
                    boundary.endpoint1,
                    BranchLabel::Branch(index + 1),
                    boundary.within_trust,
                    opts,
                )?;
                branches.push(solution);
            }
            match &singular.inversion {
                Inversion::Fold(_) => Ok(Enumeration::Fold {
                    time: t_star,
                    expected_branches: 2,
                    branches,
                }),
                Inversion::Unclassified(d) => Ok(Enumeration::Unclassified {
                    time: t_star,
                    leading_degree: d.leading_degree,
                    branches,
                }),
                _ => unreachable!(),
            }
        }
        Inversion::Unique { .. } => Ok(Enumeration::Unique(solve_bvp(gf, spec, opts)?)),
    }
}

/// Rebuild the stored-kind independent values from the target values plus
/// one branch assignment of the swapped variables.
fn source_values_from_branch(
    source_partition: &BoundaryPartition,
    target_partition: &BoundaryPartition,
    target_args: &[f64],
    branch: &[(usize, f64)],
) -> Option<Vec<f64>> {
    let n = source_partition.n();
    let mut u = vec![0.0; 2 * n];
    for slot in 0..2 * n {
        let full_idx = full_var_of(source_partition, slot);
        // Shared with the target's independents?
        let mut found = None;
        for (tslot, &value) in target_args.iter().enumerate() {
            if full_var_of(target_partition, tslot) == full_idx {
                found = Some(value);
                break;
            }
        }
        if found.is_none() {
            for &(var, value) in branch {
                if var == full_idx {
                    found = Some(value);
                    break;
                }
            }
        }
        u[slot] = found?;
    }
    Some(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{HamiltonianModel, ReferenceTrajectory};
    use crate::hj::solve_gf;
    use crate::ode;
    use crate::partition::GfKind;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn oscillator_gf(t1: f64) -> GeneratingFunction {
        let model = HamiltonianModel::harmonic_oscillator(1.0);
        let origin = PhaseState::new(vec![0.0], vec![0.0]).unwrap();
        let reference =
            ReferenceTrajectory::equilibrium(model.clone(), &origin, 0.0, t1, "origin").unwrap();
        solve_gf(&model, &reference, &GfKind::F2.partition(1), 3, 0.0, t1, 1e-12).unwrap()
    }

    fn hill_gf(order: usize, t1: f64) -> GeneratingFunction {
        let model = HamiltonianModel::hill();
        let l2 = model.libration_points().unwrap()[1].clone();
        let reference =
            ReferenceTrajectory::equilibrium(model.clone(), &l2, 0.0, t1, "L2").unwrap();
        solve_gf(&model, &reference, &GfKind::F2.partition(2), order, 0.0, t1, 1e-11).unwrap()
    }

    #[test]
    fn oscillator_lambert_quarter_period() {
        let gf = oscillator_gf(2.0);
        let sol = solve_lambert(
            &gf,
            &[1.0],
            &[0.0],
            std::f64::consts::FRAC_PI_2,
            &SolveOptions::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.p0[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.p1[0], -1.0, epsilon = 1e-8);
        assert!(sol.solution.flow_residual.unwrap() < 1e-8);
        assert!(sol.solution.accepted);
    }

    #[test]
    fn oscillator_lambert_refuses_half_period() {
        // The position-position kind degenerates at multiples of pi.
        let gf = oscillator_gf(4.0);
        let err = solve_lambert(
            &gf,
            &[1.0],
            &[-1.0],
            std::f64::consts::PI,
            &SolveOptions::default(),
        );
        assert!(matches!(err, Err(TpbvpError::SingularKind { .. })), "{err:?}");
    }

    #[test]
    fn zero_boundary_data_returns_the_reference() {
        let gf = hill_gf(3, 1.5);
        let spec = BvpSpec {
            partition: GfKind::F2.partition(2),
            endpoint1: vec![0.0, 0.0],
            endpoint0: vec![0.0, 0.0],
            transfer_time: 1.2,
        };
        let sol = solve_bvp(&gf, &spec, &SolveOptions::default()).unwrap();
        for v in sol.relative0.iter().chain(&sol.relative1) {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-10);
        }
        assert!(sol.flow_residual.unwrap() < 1e-8);
    }

    #[test]
    fn round_trip_against_flow_data_without_integration() {
        // Generate boundary data by integrating the true flow, then ask
        // the generating function to reproduce the dependent coordinates;
        // the batch itself must not integrate anything.
        let gf = hill_gf(4, 1.6);
        let model = gf.model().clone();
        let l2 = gf.reference().state_at(0.0).unwrap();
        let t = 1.45;
        // The unstable mode amplifies offsets by e^(lambda t) ~ 38 over
        // this span, so initial amplitudes stay small enough that the
        // grown state remains well inside the expansion's accurate region.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut cases = Vec::new();
        for _ in 0..50 {
            let d: Vec<f64> = (0..4).map(|_| 1.5e-3 * (rng.gen::<f64>() - 0.5)).collect();
            let s0 = PhaseState::new(
                vec![l2[0] + d[0], l2[1] + d[1]],
                vec![l2[2] + d[2], l2[3] + d[3]],
            )
            .unwrap();
            let s1 = model.flow(&s0, 0.0, t, 1e-12).unwrap();
            cases.push((d, s1));
        }
        let before = ode::integration_count();
        let opts = SolveOptions::without_verification();
        for (d, s1) in &cases {
            let spec = BvpSpec {
                partition: GfKind::F2.partition(2),
                endpoint1: vec![s1.q()[0] - l2[0], s1.q()[1] - l2[1]],
                endpoint0: vec![d[2], d[3]],
                transfer_time: t,
            };
            let sol = solve_bvp(&gf, &spec, &opts).unwrap();
            assert!(sol.flow_residual.is_none());
            // Gradient truncation leaves an O(amplitude^order) error.
            assert_abs_diff_eq!(sol.relative0[0], d[0], epsilon = 2e-6);
            assert_abs_diff_eq!(sol.relative0[1], d[1], epsilon = 2e-6);
            assert_abs_diff_eq!(sol.relative1[2], s1.p()[0] - l2[2], epsilon = 2e-6);
            assert_abs_diff_eq!(sol.relative1[3], s1.p()[1] - l2[3], epsilon = 2e-6);
        }
        assert_eq!(
            ode::integration_count(),
            before,
            "solving a batch must not integrate"
        );
    }

    #[test]
    fn out_of_span_and_arity_errors() {
        let gf = oscillator_gf(1.0);
        let spec = BvpSpec {
            partition: GfKind::F2.partition(1),
            endpoint1: vec![0.0],
            endpoint0: vec![0.0],
            transfer_time: 5.0,
        };
        assert!(matches!(
            solve_bvp(&gf, &spec, &SolveOptions::without_verification()),
            Err(TpbvpError::OutOfSpan(..))
        ));
        let bad = BvpSpec {
            partition: GfKind::F2.partition(1),
            endpoint1: vec![0.0, 1.0],
            endpoint0: vec![0.0],
            transfer_time: 0.5,
        };
        assert!(matches!(
            solve_bvp(&gf, &bad, &SolveOptions::without_verification()),
            Err(TpbvpError::WrongArity { .. })
        ));
    }

    #[test]
    fn enumerate_away_from_caustics_is_unique() {
        let gf = oscillator_gf(2.0);
        let spec = BvpSpec {
            partition: GfKind::F1.partition(1),
            endpoint1: vec![0.0],
            endpoint0: vec![1.0],
            transfer_time: std::f64::consts::FRAC_PI_2,
        };
        let direct = solve_bvp(&gf, &spec, &SolveOptions::default()).unwrap();
        match enumerate_solutions(&gf, &spec, &SolveOptions::default()).unwrap() {
            Enumeration::Unique(sol) => {
                assert_abs_diff_eq!(
                    sol.relative0[1],
                    direct.relative0[1],
                    epsilon = 1e-12
                );
            }
            other => panic!("expected unique, got {other:?}"),
        }
    }

    #[test]
    fn initial_time_query_is_an_infinite_family() {
        let gf = hill_gf(3, 1.0);
        let spec = BvpSpec {
            partition: GfKind::F1.partition(2),
            endpoint1: vec![0.01, 0.0],
            endpoint0: vec![0.01, 0.0],
            transfer_time: 0.0,
        };
        match enumerate_solutions(&gf, &spec, &SolveOptions::without_verification()).unwrap() {
            Enumeration::InfiniteFamily { time } => assert!(time.abs() < 1e-9),
            other => panic!("expected infinite family, got {other:?}"),
        }
    }

    #[test]
    fn oscillator_half_period_family() {
        // At T = pi every initial momentum maps q0 to -q0: enumerating the
        // position-position problem there must report a continuum.
        let gf = oscillator_gf(4.0);
        let spec = BvpSpec {
            partition: GfKind::F1.partition(1),
            endpoint1: vec![-1.0],
            endpoint0: vec![1.0],
            transfer_time: std::f64::consts::PI,
        };
        match enumerate_solutions(&gf, &spec, &SolveOptions::without_verification()).unwrap() {
            Enumeration::InfiniteFamily { time } => {
                assert_abs_diff_eq!(time, std::f64::consts::PI, epsilon = 1e-6);
            }
            other => panic!("expected infinite family, got {other:?}"),
        }
    }

    #[test]
    fn hill_caustic_at_the_symmetric_point_is_cubic() {
        // The position-position kind degenerates near t = 1.6822. Through
        // the reference point itself -- which sits on the x-axis symmetry
        // line -- the reduced equation's quadratic pure term vanishes and
        // the leading power is cubic (a cusp point: one or three
        // antecedents). Verified independently by dense shooting with the
        // full nonlinear flow: solutions scale as the cube root of the
        // target offset.
        let gf = hill_gf(3, 2.0);
        let spec = BvpSpec {
            partition: GfKind::F1.partition(2),
            endpoint1: vec![0.0, 0.0],
            endpoint0: vec![0.0, 0.0],
            transfer_time: 1.6822,
        };
        match enumerate_solutions(&gf, &spec, &SolveOptions::without_verification()).unwrap() {
            Enumeration::Unclassified {
                time,
                leading_degree,
                ..
            } => {
                assert_eq!(leading_degree, 3);
                assert!((time - 1.6822).abs() < 0.01, "polished time {time}");
            }
            other => panic!("expected the cubic degeneracy, got {other:?}"),
        }
    }
}
