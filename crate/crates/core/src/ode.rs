//! Embedded Dormand-Prince 5(4) integrator with dense output nodes.
//!
//! One integrator serves the flow maps, the state-transition paths, the
//! quadratic block equations and the generating-function coefficient
//! paths. Accepted steps are stored as `(t, y, y')` nodes; evaluation
//! between nodes uses cubic Hermite interpolation. A process-wide counter
//! tracks how many integrations ran, so batch-style guarantees ("no
//! further integration after setup") are checkable in tests.

use std::cell::Cell;

use thiserror::Error;

thread_local! {
    static INTEGRATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of integrations started on the current thread. Thread-local so
/// batch-cost guarantees ("no further integration after setup") can be
/// asserted without cross-thread noise.
pub fn integration_count() -> u64 {
    INTEGRATIONS.with(|c| c.get())
}

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t:.9e} (last accepted t = {last:.9e})")]
    StepUnderflow { t: f64, last: f64 },
    #[error("right-hand side returned a non-finite value at t = {t:.9e}")]
    NonFiniteRhs { t: f64 },
    #[error("solution norm exceeded the configured cap at t = {t:.9e}")]
    NormExceeded { t: f64 },
    #[error("step budget of {0} exceeded")]
    TooManySteps(usize),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

/// How an integration ended. Early terminations still return the accepted
/// nodes, so callers can back off and continue differently.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    StepUnderflow { t: f64 },
    NormExceeded { t: f64 },
    NonFiniteRhs { t: f64 },
}

impl Termination {
    pub fn is_complete(&self) -> bool {
        matches!(self, Termination::Completed)
    }

    /// The matching error for callers that treat early ends as failures.
    pub fn as_error(&self, last: f64) -> Option<OdeError> {
        match *self {
            Termination::Completed => None,
            Termination::StepUnderflow { t } => Some(OdeError::StepUnderflow { t, last }),
            Termination::NormExceeded { t } => Some(OdeError::NormExceeded { t }),
            Termination::NonFiniteRhs { t } => Some(OdeError::NonFiniteRhs { t }),
        }
    }
}

/// Integrator options; `tol` is used as both absolute and relative target.
#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub tol: f64,
    pub h_max: Option<f64>,
    pub h_init: Option<f64>,
    pub max_steps: usize,
    /// Keep the accepted nodes for dense evaluation.
    pub dense: bool,
    /// Stop (with `Termination::NormExceeded`) once the sup-norm of the
    /// state passes this value.
    pub max_norm: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            tol: 1e-10,
            h_max: None,
            h_init: None,
            max_steps: 1_000_000,
            dense: true,
            max_norm: None,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            tol,
            ..Default::default()
        }
    }
}

/// One accepted step: state and derivative at time `t`.
#[derive(Debug, Clone)]
pub struct OdeNode {
    pub t: f64,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
}

/// Result of an integration.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub nodes: Vec<OdeNode>,
    pub t_end: f64,
    pub y_end: Vec<f64>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub rhs_evals: usize,
    pub termination: Termination,
}

impl OdeSolution {
    /// Cubic Hermite evaluation at `t`, which must lie inside the span.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let (node_a, node_b) = self.bracket(t);
        hermite(node_a, node_b, t)
    }

    /// Hermite evaluation of the time derivative at `t`.
    pub fn eval_derivative(&self, t: f64) -> Vec<f64> {
        let (a, b) = self.bracket(t);
        hermite_derivative(a, b, t)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.nodes.first().unwrap().t, self.t_end)
    }

    fn bracket(&self, t: f64) -> (&OdeNode, &OdeNode) {
        let n = self.nodes.len();
        debug_assert!(n >= 2);
        let forward = self.nodes[n - 1].t >= self.nodes[0].t;
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let side = if forward {
                self.nodes[mid].t <= t
            } else {
                self.nodes[mid].t >= t
            };
            if side {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (&self.nodes[lo], &self.nodes[lo + 1])
    }
}

fn hermite(a: &OdeNode, b: &OdeNode, t: f64) -> Vec<f64> {
    let h = b.t - a.t;
    if h == 0.0 {
        return a.y.clone();
    }
    let s = (t - a.t) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    a.y.iter()
        .zip(&a.dy)
        .zip(b.y.iter().zip(&b.dy))
        .map(|((&ya, &da), (&yb, &db))| h00 * ya + h * h10 * da + h01 * yb + h * h11 * db)
        .collect()
}

fn hermite_derivative(a: &OdeNode, b: &OdeNode, t: f64) -> Vec<f64> {
    let h = b.t - a.t;
    if h == 0.0 {
        return a.dy.clone();
    }
    let s = (t - a.t) / h;
    let d00 = 6.0 * s * (s - 1.0) / h;
    let d10 = (1.0 - s) * (1.0 - 3.0 * s);
    let d01 = -d00;
    let d11 = s * (3.0 * s - 2.0);
    a.y.iter()
        .zip(&a.dy)
        .zip(b.y.iter().zip(&b.dy))
        .map(|((&ya, &da), (&yb, &db))| d00 * ya + d10 * da + d01 * yb + d11 * db)
        .collect()
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
// Error coefficients: 5th-order solution minus embedded 4th-order one.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `dy/dt = f(t, y)` from `t0` to `t1` (either direction).
pub fn integrate<F>(mut f: F, t0: f64, t1: f64, y0: &[f64], opts: &OdeOptions) -> Result<OdeSolution, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(opts.tol > 0.0) {
        return Err(OdeError::BadTolerance(opts.tol));
    }
    INTEGRATIONS.with(|c| c.set(c.get() + 1));

    let dim = y0.len();
    let mut rhs_evals = 0usize;
    let mut eval = |t: f64, y: &[f64], out: &mut [f64], count: &mut usize| -> bool {
        f(t, y, out);
        *count += 1;
        out.iter().all(|v| v.is_finite())
    };

    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k0 = vec![0.0; dim];
    let first_ok = eval(t, &y, &mut k0, &mut rhs_evals);

    let mut nodes = Vec::new();
    if opts.dense {
        nodes.push(OdeNode {
            t,
            y: y.clone(),
            dy: k0.clone(),
        });
    }
    let finish = |nodes: Vec<OdeNode>,
                  t: f64,
                  y: Vec<f64>,
                  acc: usize,
                  rej: usize,
                  evals: usize,
                  termination: Termination|
     -> OdeSolution {
        let mut nodes = nodes;
        if !nodes.is_empty() && nodes.len() == 1 {
            // Duplicate a single node so bracketing always works.
            let n = nodes[0].clone();
            nodes.push(n);
        }
        OdeSolution {
            nodes,
            t_end: t,
            y_end: y,
            steps_accepted: acc,
            steps_rejected: rej,
            rhs_evals: evals,
            termination,
        }
    };
    if !first_ok {
        return Ok(finish(
            nodes,
            t,
            y,
            0,
            0,
            rhs_evals,
            Termination::NonFiniteRhs { t },
        ));
    }

    if t1 == t0 {
        return Ok(finish(nodes, t1, y, 0, 0, rhs_evals, Termination::Completed));
    }

    let direction = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut h = opts.h_init.unwrap_or(span / 100.0).abs().max(1e-12) * direction;
    if let Some(hm) = opts.h_max {
        if h.abs() > hm {
            h = hm * direction;
        }
    }

    let mut ks: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; dim]).collect();
    ks[0].copy_from_slice(&k0);
    let mut steps_accepted = 0usize;
    let mut steps_rejected = 0usize;
    let mut y_stage = vec![0.0; dim];
    let mut y_next = vec![0.0; dim];

    loop {
        if (t - t1) * direction >= 0.0 {
            break;
        }
        if steps_accepted + steps_rejected > opts.max_steps {
            return Err(OdeError::TooManySteps(opts.max_steps));
        }
        // Do not step past the end point.
        if (t + h - t1) * direction > 0.0 {
            h = t1 - t;
        }
        if h.abs() < 1e-14 * (1.0 + t.abs()) {
            return Ok(finish(
                nodes,
                t,
                y,
                steps_accepted,
                steps_rejected,
                rhs_evals,
                Termination::StepUnderflow { t: t + h },
            ));
        }

        let mut stage_failed = None;
        for stage in 0..6 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in ks.iter().enumerate().take(stage + 1) {
                    let a = A[stage][j];
                    if a != 0.0 {
                        acc += a * kj[i];
                    }
                }
                y_stage[i] = y[i] + h * acc;
            }
            let t_stage = t + C[stage] * h;
            if !eval(t_stage, &y_stage, &mut ks[stage + 1], &mut rhs_evals) {
                stage_failed = Some(t_stage);
                break;
            }
        }
        if let Some(t_bad) = stage_failed {
            return Ok(finish(
                nodes,
                t,
                y,
                steps_accepted,
                steps_rejected,
                rhs_evals,
                Termination::NonFiniteRhs { t: t_bad },
            ));
        }

        // 5th-order solution (FSAL: last stage value is also f at t + h).
        for i in 0..dim {
            let mut acc = 0.0;
            for (j, kj) in ks.iter().enumerate().take(6) {
                let b = A[5][j];
                if b != 0.0 {
                    acc += b * kj[i];
                }
            }
            y_next[i] = y[i] + h * acc;
        }

        // Error estimate against the embedded 4th-order solution.
        let mut err_norm_sq = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (j, kj) in ks.iter().enumerate() {
                if E[j] != 0.0 {
                    e += E[j] * kj[i];
                }
            }
            e *= h;
            let scale = opts.tol * (1.0 + y[i].abs().max(y_next[i].abs()));
            err_norm_sq += (e / scale) * (e / scale);
        }
        let err = (err_norm_sq / dim as f64).sqrt();

        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&y_next);
            let k_new = ks[6].clone();
            ks[0].copy_from_slice(&k_new);
            steps_accepted += 1;
            if opts.dense {
                nodes.push(OdeNode {
                    t,
                    y: y.clone(),
                    dy: k_new,
                });
            }
            if let Some(cap) = opts.max_norm {
                if y.iter().any(|v| v.abs() > cap) {
                    return Ok(finish(
                        nodes,
                        t,
                        y,
                        steps_accepted,
                        steps_rejected,
                        rhs_evals,
                        Termination::NormExceeded { t },
                    ));
                }
            }
        } else {
            steps_rejected += 1;
        }

        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if let Some(hm) = opts.h_max {
            if h.abs() > hm {
                h = hm * direction;
            }
        }
    }

    Ok(finish(
        nodes,
        t,
        y,
        steps_accepted,
        steps_rejected,
        rhs_evals,
        Termination::Completed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn oscillator_round_trip() {
        // y'' = -y integrated as a first-order system over one period.
        let f = |_t: f64, y: &[f64], out: &mut [f64]| {
            out[0] = y[1];
            out[1] = -y[0];
        };
        let opts = OdeOptions::with_tol(1e-11);
        let sol = integrate(f, 0.0, 2.0 * std::f64::consts::PI, &[1.0, 0.0], &opts).unwrap();
        assert_abs_diff_eq!(sol.y_end[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.y_end[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn dense_output_matches_exact_solution() {
        let f = |_t: f64, y: &[f64], out: &mut [f64]| {
            out[0] = y[1];
            out[1] = -y[0];
        };
        let opts = OdeOptions {
            tol: 1e-11,
            h_max: Some(0.05),
            ..Default::default()
        };
        let sol = integrate(f, 0.0, 3.0, &[1.0, 0.0], &opts).unwrap();
        // Cubic Hermite between nodes: error ~ h^4 |y''''| / 384.
        for &t in &[0.013, 0.5, 1.7, 2.99] {
            let y = sol.eval(t);
            assert_abs_diff_eq!(y[0], t.cos(), epsilon = 2e-8);
            assert_abs_diff_eq!(y[1], -t.sin(), epsilon = 2e-8);
        }
    }

    #[test]
    fn backward_integration() {
        let f = |_t: f64, y: &[f64], out: &mut [f64]| {
            out[0] = y[0];
        };
        let sol = integrate(f, 1.0, 0.0, &[1.0], &OdeOptions::with_tol(1e-12)).unwrap();
        assert_abs_diff_eq!(sol.y_end[0], (-1.0f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn zero_span_is_identity() {
        let f = |_t: f64, _y: &[f64], out: &mut [f64]| {
            out[0] = 1.0;
        };
        let sol = integrate(f, 2.0, 2.0, &[7.0], &OdeOptions::default()).unwrap();
        assert_eq!(sol.y_end, vec![7.0]);
    }

    #[test]
    fn norm_cap_terminates_early_with_partial_nodes() {
        // y' = y^2 from y(0) = 1 blows up at t = 1.
        let f = |_t: f64, y: &[f64], out: &mut [f64]| {
            out[0] = y[0] * y[0];
        };
        let opts = OdeOptions {
            tol: 1e-10,
            max_norm: Some(1e6),
            ..Default::default()
        };
        let sol = integrate(f, 0.0, 2.0, &[1.0], &opts).unwrap();
        match sol.termination {
            Termination::NormExceeded { t } => {
                assert!((t - 1.0).abs() < 1e-4, "cap hit at {t}");
            }
            other => panic!("expected norm cap, got {other:?}"),
        }
        assert!(sol.nodes.len() > 5);
        // Nodes before the cap are valid solution samples: y = 1/(1-t).
        let mid = &sol.nodes[sol.nodes.len() / 2];
        assert_abs_diff_eq!(mid.y[0], 1.0 / (1.0 - mid.t), epsilon = 1e-6 * mid.y[0]);
    }

    #[test]
    fn counter_increments() {
        let before = integration_count();
        let f = |_t: f64, _y: &[f64], out: &mut [f64]| {
            out[0] = 0.0;
        };
        integrate(f, 0.0, 1.0, &[0.0], &OdeOptions::default()).unwrap();
        assert!(integration_count() > before);
    }
}
