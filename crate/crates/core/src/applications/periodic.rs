//! Periodic-orbit search as a two-point boundary value problem.
//!
//! A periodic orbit returns to its initial phase point after one period,
//! which turns into gradient conditions on a position-position generating
//! function (time scans and position scans) or a fixed-point condition on
//! a position-momentum one (full Newton solve).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::PhaseState;
use crate::hj::{GeneratingFunction, GfSnapshot};
use crate::partition::GfKind;

use super::ApplicationError;

/// Acceptance threshold on the refined time-scan residual.
pub const ROOT_RESIDUAL_THRESHOLD: f64 = 1e-4;

/// Tolerance for membership of a grid point on the orbit curve.
const ORBIT_POINT_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Refined residual below which a scan minimum counts as an orbit.
    pub accept_residual: f64,
    /// Verify each reported orbit by integrating the flow for one period.
    pub verify: bool,
    pub flow_tol: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            accept_residual: ROOT_RESIDUAL_THRESHOLD,
            verify: true,
            flow_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TimeScanSample {
    pub t: f64,
    /// `|p(T) - p0|` for the orbit through the scan point; NaN when masked.
    pub residual: f64,
    /// True where the position-position kind is singular (or the solve
    /// failed) and the sample carries no information.
    pub masked: bool,
}

/// A periodic orbit candidate found by one of the searches.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub period: f64,
    /// Relative initial position and momentum.
    pub q0: Vec<f64>,
    pub p0: Vec<f64>,
    /// Momentum from the endpoint-1 gradient; agreement with `p0` is the
    /// defining residual of the orbit.
    pub p_end: Vec<f64>,
    pub momentum_mismatch: f64,
    /// Absolute initial state (reference added back).
    pub state0: PhaseState,
    /// `|flow(state0, period) - state0|` when verification ran.
    pub flow_residual: Option<f64>,
}

#[derive(Debug)]
pub struct TimeScan {
    pub samples: Vec<TimeScanSample>,
    pub roots: Vec<PeriodicOrbit>,
    /// Scan stretches suppressed because the kind was singular there.
    pub masked_windows: Vec<(f64, f64)>,
}

/// Residual of the periodicity condition through `q0` at time `t`:
/// solve the position-position problem with both endpoints at `q0` and
/// measure the momentum mismatch. Returns the full boundary data.
fn periodicity_probe(
    snapshot: &GfSnapshot,
    q0: &[f64],
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let n = q0.len();
    let args: Vec<f64> = q0.iter().chain(q0.iter()).copied().collect();
    let full = snapshot.solve_full(&args).ok()?;
    let p0 = full.endpoint0[n..].to_vec();
    let p1 = full.endpoint1[n..].to_vec();
    let mismatch = p0
        .iter()
        .zip(&p1)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Some((p0, p1, mismatch))
}

/// Scan the periodicity residual through the fixed relative position `q0`
/// over a time window; sign-free minima are refined by golden-section
/// search and accepted below the residual threshold.
pub fn periodic_time_scan(
    gf: &GeneratingFunction,
    q0: &[f64],
    window: (f64, f64),
    sample_count: usize,
    opts: &ScanOptions,
) -> Result<TimeScan, ApplicationError> {
    let view = gf.derive_classical(GfKind::F1)?;
    let count = sample_count.max(3);
    let dt = (window.1 - window.0) / (count - 1) as f64;
    let times: Vec<f64> = (0..count).map(|i| window.0 + dt * i as f64).collect();

    let samples: Vec<TimeScanSample> = times
        .par_iter()
        .map(|&t| {
            let probe = view
                .snapshot(t)
                .ok()
                .filter(|s| s.target_pivot_condition() < 1e8)
                .and_then(|s| periodicity_probe(&s, q0));
            match probe {
                Some((_, _, r)) => TimeScanSample {
                    t,
                    residual: r,
                    masked: false,
                },
                None => TimeScanSample {
                    t,
                    residual: f64::NAN,
                    masked: true,
                },
            }
        })
        .collect();

    let mut masked_windows = Vec::new();
    let mut window_start: Option<f64> = None;
    for s in &samples {
        match (s.masked, window_start) {
            (true, None) => window_start = Some(s.t),
            (false, Some(start)) => {
                masked_windows.push((start, s.t));
                window_start = None;
            }
            _ => {}
        }
    }
    if let Some(start) = window_start {
        masked_windows.push((start, window.1));
    }

    let eval = |t: f64| -> f64 {
        view.snapshot(t)
            .ok()
            .and_then(|s| periodicity_probe(&s, q0))
            .map(|(_, _, r)| r)
            .unwrap_or(f64::NAN)
    };

    let mut roots = Vec::new();
    for i in 1..samples.len() - 1 {
        let (prev, here, next) = (&samples[i - 1], &samples[i], &samples[i + 1]);
        if here.masked || prev.masked || next.masked {
            continue;
        }
        if here.residual <= prev.residual && here.residual <= next.residual {
            // Golden-section refinement of the V-shaped minimum.
            let (mut a, mut b) = (prev.t, next.t);
            let phi = 0.5 * (3.0 - 5.0f64.sqrt());
            let (mut x1, mut x2) = (a + phi * (b - a), b - phi * (b - a));
            let (mut f1, mut f2) = (eval(x1), eval(x2));
            for _ in 0..60 {
                if !f1.is_finite() || !f2.is_finite() {
                    break;
                }
                if f1 < f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = a + phi * (b - a);
                    f1 = eval(x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = b - phi * (b - a);
                    f2 = eval(x2);
                }
            }
            let t_root = 0.5 * (a + b);
            let Ok(snapshot) = view.snapshot(t_root) else {
                continue;
            };
            let Some((p0, p1, mismatch)) = periodicity_probe(&snapshot, q0) else {
                continue;
            };
            if mismatch >= opts.accept_residual {
                continue;
            }
            let orbit = finish_orbit(gf, t_root, q0, p0, p1, mismatch, opts)?;
            roots.push(orbit);
        }
    }
    Ok(TimeScan {
        samples,
        roots,
        masked_windows,
    })
}

fn finish_orbit(
    gf: &GeneratingFunction,
    period: f64,
    q0: &[f64],
    p0: Vec<f64>,
    p_end: Vec<f64>,
    mismatch: f64,
    opts: &ScanOptions,
) -> Result<PeriodicOrbit, ApplicationError> {
    let reference = gf.reference();
    let ref0 = reference.state_at(gf.t0())?;
    let n = q0.len();
    let abs: Vec<f64> = (0..2 * n)
        .map(|i| {
            if i < n {
                ref0[i] + q0[i]
            } else {
                ref0[i] + p0[i - n]
            }
        })
        .collect();
    let state0 = PhaseState::from_flat(&abs)?;
    let flow_residual = if opts.verify {
        let end = gf.model().flow(&state0, gf.t0(), gf.t0() + period, opts.flow_tol)?;
        Some(
            end.to_flat()
                .iter()
                .zip(&abs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        )
    } else {
        None
    };
    Ok(PeriodicOrbit {
        period,
        q0: q0.to_vec(),
        p0,
        p_end,
        momentum_mismatch: mismatch,
        state0,
        flow_residual,
    })
}

/// Uniform rectangular grid in the relative position plane.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Default scan box (position-space searches around the reference).
    pub fn centered(half_width: f64, cells: usize) -> GridSpec {
        GridSpec {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
            nx: cells,
            ny: cells,
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + (self.x_max - self.x_min) * i as f64 / (self.nx - 1) as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + (self.y_max - self.y_min) * j as f64 / (self.ny - 1) as f64
    }
}

#[derive(Debug)]
pub struct PositionScan {
    pub grid: GridSpec,
    /// Residual components on the grid, row-major with x fastest.
    pub residual_x: Vec<f64>,
    pub residual_y: Vec<f64>,
    /// Zero contours of each residual component (marching squares).
    pub contours_x: Vec<Vec<[f64; 2]>>,
    pub contours_y: Vec<Vec<[f64; 2]>>,
    /// Refined points where both components vanish.
    pub intersections: Vec<[f64; 2]>,
    /// Closed intersection curve (the orbit of the given period), when
    /// the refined points chain into one loop around the reference.
    pub orbit_curve: Option<Vec<[f64; 2]>>,
}

/// Map the periodicity residual over a position grid at a fixed period,
/// contour each component, and refine the common zeros.
pub fn periodic_position_scan(
    gf: &GeneratingFunction,
    period: f64,
    grid: &GridSpec,
    opts: &ScanOptions,
) -> Result<PositionScan, ApplicationError> {
    let n = gf.n();
    if n != 2 {
        return Err(ApplicationError::NeedPlanar(n));
    }
    let view = gf.derive_classical(GfKind::F1)?;
    let snapshot = view.snapshot(period)?;
    let reach = grid
        .x_min
        .abs()
        .max(grid.x_max.abs())
        .max(grid.y_min.abs())
        .max(grid.y_max.abs());
    let trust = snapshot.local_trust_radius();
    if reach > trust {
        return Err(ApplicationError::OutsideTrustRadius(reach, trust));
    }

    let cells: Vec<(usize, usize)> = (0..grid.ny)
        .flat_map(|j| (0..grid.nx).map(move |i| (i, j)))
        .collect();
    let values: Vec<[f64; 2]> = cells
        .par_iter()
        .map(|&(i, j)| {
            let q0 = [grid.x(i), grid.y(j)];
            match periodicity_probe_vec(&snapshot, &q0) {
                Some(r) => r,
                None => [f64::NAN, f64::NAN],
            }
        })
        .collect();
    let residual_x: Vec<f64> = values.iter().map(|v| v[0]).collect();
    let residual_y: Vec<f64> = values.iter().map(|v| v[1]).collect();

    let contours_x = marching_squares(grid, &residual_x);
    let contours_y = marching_squares(grid, &residual_y);

    // Isolated transversal crossings of the two contour families, refined
    // from the contour vertices.
    let mut refined: Vec<[f64; 2]> = Vec::new();
    let cell = ((grid.x_max - grid.x_min) / grid.nx as f64)
        .hypot((grid.y_max - grid.y_min) / grid.ny as f64);
    for polyline in contours_x.iter().chain(&contours_y) {
        for point in polyline {
            if let Some(root) = gauss_newton_refine(&snapshot, *point, cell) {
                if !refined
                    .iter()
                    .any(|p| (p[0] - root[0]).hypot(p[1] - root[1]) < 0.35 * cell)
                {
                    refined.push(root);
                }
            }
        }
    }

    // The common zero set of both components is a closed curve around the
    // reference (every point of a periodic orbit is itself periodic).
    // With the curve star-shaped about the origin, each ray from the
    // origin crosses it once: a line search per angle traces it robustly,
    // immune to the tangential drift that plagues 2-d refinement along a
    // solution curve.
    let orbit_curve = trace_orbit_by_rays(&snapshot, grid, 180, cell);
    let _ = opts;
    Ok(PositionScan {
        grid: grid.clone(),
        residual_x,
        residual_y,
        contours_x,
        contours_y,
        intersections: refined,
        orbit_curve,
    })
}

/// Line searches of |R| along rays from the origin; a ray contributes a
/// curve point when an interior local minimum refines to a point whose
/// estimated distance to the zero set (|R| over the dominant Jacobian
/// singular value) is a small fraction of a grid cell. The distance
/// criterion is immune to the truncation-noise floor that keeps |R| from
/// vanishing exactly near the symmetry axes.
fn trace_orbit_by_rays(
    snapshot: &GfSnapshot,
    grid: &GridSpec,
    ray_count: usize,
    r_min: f64,
) -> Option<Vec<[f64; 2]>> {
    let cell = ((grid.x_max - grid.x_min) / grid.nx as f64)
        .hypot((grid.y_max - grid.y_min) / grid.ny as f64);
    let norm_at = |p: [f64; 2]| -> f64 {
        residual_at(snapshot, &p)
            .map(|r| r[0].hypot(r[1]))
            .unwrap_or(f64::INFINITY)
    };
    // Estimated normal distance to the common zero set.
    let distance_at = |p: [f64; 2]| -> f64 {
        let Some(r) = residual_at(snapshot, &p) else {
            return f64::INFINITY;
        };
        let h = 1e-7;
        let (Some(rx), Some(ry)) = (
            residual_at(snapshot, &[p[0] + h, p[1]]),
            residual_at(snapshot, &[p[0], p[1] + h]),
        ) else {
            return f64::INFINITY;
        };
        let jac = DMatrix::from_row_slice(
            2,
            2,
            &[
                (rx[0] - r[0]) / h,
                (ry[0] - r[0]) / h,
                (rx[1] - r[1]) / h,
                (ry[1] - r[1]) / h,
            ],
        );
        let sigma1 = jac.svd(false, false).singular_values.max();
        r[0].hypot(r[1]) / sigma1.max(1e-300)
    };

    let mut points = Vec::new();
    let mut misses = 0usize;
    for k in 0..ray_count {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / ray_count as f64;
        let dir = [theta.cos(), theta.sin()];
        // Ray length to the box boundary.
        let mut r_max = f64::INFINITY;
        if dir[0] > 0.0 {
            r_max = r_max.min(grid.x_max / dir[0]);
        } else if dir[0] < 0.0 {
            r_max = r_max.min(grid.x_min / dir[0]);
        }
        if dir[1] > 0.0 {
            r_max = r_max.min(grid.y_max / dir[1]);
        } else if dir[1] < 0.0 {
            r_max = r_max.min(grid.y_min / dir[1]);
        }
        if !(r_max > r_min) {
            misses += 1;
            continue;
        }
        let samples = 64usize;
        let profile: Vec<f64> = (0..=samples)
            .map(|s| {
                let r = r_min + (r_max - r_min) * s as f64 / samples as f64;
                norm_at([r * dir[0], r * dir[1]])
            })
            .collect();
        // Interior local minima only: a basin draining to the inner end
        // (the trivial solution at the reference) is not a crossing.
        let dr = (r_max - r_min) / samples as f64;
        let mut best: Option<(f64, f64)> = None;
        for s in 1..samples {
            if !(profile[s] <= profile[s - 1] && profile[s] <= profile[s + 1]) {
                continue;
            }
            let r0 = r_min + dr * s as f64;
            let (mut a, mut b) = (r0 - dr, r0 + dr);
            let phi = 0.5 * (3.0 - 5.0f64.sqrt());
            let (mut x1, mut x2) = (a + phi * (b - a), b - phi * (b - a));
            let mut f1 = norm_at([x1 * dir[0], x1 * dir[1]]);
            let mut f2 = norm_at([x2 * dir[0], x2 * dir[1]]);
            for _ in 0..50 {
                if f1 < f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = a + phi * (b - a);
                    f1 = norm_at([x1 * dir[0], x1 * dir[1]]);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = b - phi * (b - a);
                    f2 = norm_at([x2 * dir[0], x2 * dir[1]]);
                }
            }
            let r_star = 0.5 * (a + b);
            let d = distance_at([r_star * dir[0], r_star * dir[1]]);
            if d < 0.15 * cell && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, r_star));
            }
        }
        match best {
            Some((_, r_star)) => points.push([r_star * dir[0], r_star * dir[1]]),
            None => misses += 1,
        }
    }
    // A closed curve must cover (nearly) every direction.
    if points.len() < 8 || misses > ray_count / 10 {
        return None;
    }
    Some(points)
}

fn periodicity_probe_vec(snapshot: &GfSnapshot, q0: &[f64]) -> Option<[f64; 2]> {
    let args = [q0[0], q0[1], q0[0], q0[1]];
    let full = snapshot.solve_full(&args).ok()?;
    Some([
        full.endpoint1[2] - full.endpoint0[2],
        full.endpoint1[3] - full.endpoint0[3],
    ])
}

fn residual_at(snapshot: &GfSnapshot, q0: &[f64; 2]) -> Option<[f64; 2]> {
    periodicity_probe_vec(snapshot, q0)
}

/// Gauss-Newton (pseudo-inverse step) minimizing |R|^2; converges onto the
/// solution curve even where the Jacobian is rank-deficient along it.
/// Steps are capped at `step_cap` so the iterate cannot slide far along
/// the curve's tangent direction.
fn gauss_newton_refine(snapshot: &GfSnapshot, start: [f64; 2], step_cap: f64) -> Option<[f64; 2]> {
    let mut x = start;
    let mut best = f64::INFINITY;
    for _ in 0..40 {
        let r = residual_at(snapshot, &x)?;
        let norm = (r[0] * r[0] + r[1] * r[1]).sqrt();
        if norm < ORBIT_POINT_TOL {
            return Some(x);
        }
        if norm > 10.0 * best {
            return None;
        }
        best = best.min(norm);
        let h = 1e-7;
        let rx = residual_at(snapshot, &[x[0] + h, x[1]])?;
        let ry = residual_at(snapshot, &[x[0], x[1] + h])?;
        let jac = DMatrix::from_row_slice(
            2,
            2,
            &[
                (rx[0] - r[0]) / h,
                (ry[0] - r[0]) / h,
                (rx[1] - r[1]) / h,
                (ry[1] - r[1]) / h,
            ],
        );
        let rhs = DVector::from_column_slice(&r);
        let mut step = rank_aware_step(&jac, &rhs)?;
        let len = step.norm();
        if len > step_cap {
            step *= step_cap / len;
        }
        x[0] -= step[0];
        x[1] -= step[1];
    }
    let r = residual_at(snapshot, &x)?;
    ((r[0] * r[0] + r[1] * r[1]).sqrt() < ORBIT_POINT_TOL).then_some(x)
}

/// Pseudo-inverse step that treats directions far below the dominant
/// singular value as genuinely null (the solution-family tangent).
fn rank_aware_step(jac: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = jac.clone().svd(true, true);
    let cutoff = 1e-5 * svd.singular_values.max();
    svd.solve(rhs, cutoff).ok()
}

/// Marching squares: zero contour of a scalar field sampled on the grid.
fn marching_squares(grid: &GridSpec, values: &[f64]) -> Vec<Vec<[f64; 2]>> {
    let at = |i: usize, j: usize| values[j * grid.nx + i];
    let mut segments: Vec<([f64; 2], [f64; 2])> = Vec::new();
    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx - 1 {
            let corners = [
                (grid.x(i), grid.y(j), at(i, j)),
                (grid.x(i + 1), grid.y(j), at(i + 1, j)),
                (grid.x(i + 1), grid.y(j + 1), at(i + 1, j + 1)),
                (grid.x(i), grid.y(j + 1), at(i, j + 1)),
            ];
            if corners.iter().any(|c| !c.2.is_finite()) {
                continue;
            }
            // Interpolated zero crossings on the cell edges.
            let mut crossings: Vec<[f64; 2]> = Vec::new();
            for e in 0..4 {
                let (x0, y0, v0) = corners[e];
                let (x1, y1, v1) = corners[(e + 1) % 4];
                if (v0 > 0.0) != (v1 > 0.0) {
                    let s = v0 / (v0 - v1);
                    crossings.push([x0 + s * (x1 - x0), y0 + s * (y1 - y0)]);
                }
            }
            match crossings.len() {
                2 => segments.push((crossings[0], crossings[1])),
                4 => {
                    // Saddle: split by the cell-center sign.
                    let center = 0.25 * (corners[0].2 + corners[1].2 + corners[2].2 + corners[3].2);
                    if (center > 0.0) == (corners[0].2 > 0.0) {
                        segments.push((crossings[0], crossings[3]));
                        segments.push((crossings[1], crossings[2]));
                    } else {
                        segments.push((crossings[0], crossings[1]));
                        segments.push((crossings[2], crossings[3]));
                    }
                }
                _ => {}
            }
        }
    }
    chain_segments(segments)
}

/// Join loose segments into polylines by matching endpoints.
fn chain_segments(mut segments: Vec<([f64; 2], [f64; 2])>) -> Vec<Vec<[f64; 2]>> {
    let close = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]) < 1e-12;
    let mut polylines = Vec::new();
    while let Some((a, b)) = segments.pop() {
        let mut line = vec![a, b];
        loop {
            let mut extended = false;
            let head = *line.first().unwrap();
            let tail = *line.last().unwrap();
            if let Some(pos) = segments
                .iter()
                .position(|(p, q)| close(p, &tail) || close(q, &tail) || close(p, &head) || close(q, &head))
            {
                let (p, q) = segments.swap_remove(pos);
                if close(&p, &tail) {
                    line.push(q);
                } else if close(&q, &tail) {
                    line.push(p);
                } else if close(&p, &head) {
                    line.insert(0, q);
                } else {
                    line.insert(0, p);
                }
                extended = true;
            }
            if !extended {
                break;
            }
        }
        polylines.push(line);
    }
    polylines
}

/// Newton (pseudo-inverse) solve of the phase-space fixed-point condition
/// at a fixed period, from a list of initial guesses `(q, p0)`.
pub fn periodic_f2_solve(
    gf: &GeneratingFunction,
    period: f64,
    guesses: &[(Vec<f64>, Vec<f64>)],
    opts: &ScanOptions,
) -> Result<Vec<PeriodicOrbit>, ApplicationError> {
    let n = gf.n();
    let view = gf.derive_classical(GfKind::F2)?;
    let snapshot = view.snapshot(period)?;

    // G(q, p0) = [p(q, p0) - p0 ; q0(q, p0) - q]: simultaneous return of
    // position and momentum.
    let residual = |z: &[f64]| -> Option<Vec<f64>> {
        let full = snapshot.solve_full(z).ok()?;
        let mut g = vec![0.0; 2 * n];
        for i in 0..n {
            g[i] = full.endpoint1[n + i] - z[n + i];
            g[n + i] = full.endpoint0[i] - z[i];
        }
        Some(g)
    };

    let mut orbits: Vec<PeriodicOrbit> = Vec::new();
    for (q_guess, p0_guess) in guesses {
        let mut z: Vec<f64> = q_guess.iter().chain(p0_guess.iter()).copied().collect();
        let mut best = f64::INFINITY;
        let mut best_z = z.clone();
        for _ in 0..60 {
            let Some(g) = residual(&z) else { break };
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < best {
                best = norm;
                best_z = z.clone();
            }
            if norm < 1e-12 {
                break;
            }
            if norm > 100.0 * best {
                break;
            }
            // Finite-difference Jacobian; the family direction leaves it
            // rank-deficient, so use a rank-aware pseudo-inverse step.
            let h = 1e-8;
            let mut jac = DMatrix::zeros(2 * n, 2 * n);
            let mut ok = true;
            for c in 0..2 * n {
                let mut zp = z.clone();
                zp[c] += h;
                let Some(gp) = residual(&zp) else {
                    ok = false;
                    break;
                };
                for r in 0..2 * n {
                    jac[(r, c)] = (gp[r] - g[r]) / h;
                }
            }
            if !ok {
                break;
            }
            let Some(step) = rank_aware_step(&jac, &DVector::from_column_slice(&g)) else {
                break;
            };
            for (zi, si) in z.iter_mut().zip(step.iter()) {
                *zi -= si;
            }
        }
        if best > 1e-9 {
            continue;
        }
        let z = best_z;
        let q0 = z[..n].to_vec();
        let full = snapshot
            .solve_full(&z)
            .map_err(|e| ApplicationError::Hj(e))?;
        let p0 = z[n..].to_vec();
        let p_end = full.endpoint1[n..].to_vec();
        let mismatch = p0
            .iter()
            .zip(&p_end)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if orbits.iter().any(|o| {
            o.q0.iter()
                .zip(&q0)
                .chain(o.p0.iter().zip(&p0))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                < 1e-7
        }) {
            continue;
        }
        orbits.push(finish_orbit(gf, period, &q0, p0, p_end, mismatch, opts)?);
    }
    Ok(orbits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{HamiltonianModel, ReferenceTrajectory};
    use crate::hj::solve_gf;
    use approx::assert_abs_diff_eq;

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
    fn oscillator_time_scan_matches_closed_form() {
        // Residual through q0 is 2 w |q0 tan(w T / 2)|; no roots inside
        // (0, 2 pi) away from the singular times.
        let gf = oscillator_gf(3.0);
        let scan = periodic_time_scan(
            &gf,
            &[1e-3],
            (0.4, 2.8),
            49,
            &ScanOptions {
                verify: false,
                ..Default::default()
            },
        )
        .unwrap();
        for s in &scan.samples {
            if s.masked {
                continue;
            }
            let expected = 2.0 * 1e-3 * (s.t / 2.0).tan().abs();
            assert_abs_diff_eq!(s.residual, expected, epsilon = 1e-6 + 1e-3 * expected);
        }
        assert!(scan.roots.is_empty());
    }

    #[test]
    fn scan_through_the_reference_is_identically_zero() {
        let gf = hill_gf(3, 2.0);
        let scan = periodic_time_scan(
            &gf,
            &[0.0, 0.0],
            (0.3, 1.5),
            25,
            &ScanOptions {
                verify: false,
                ..Default::default()
            },
        )
        .unwrap();
        for s in scan.samples.iter().filter(|s| !s.masked) {
            assert!(s.residual < 1e-10, "residual {}", s.residual);
        }
    }

    #[test]
    fn hill_time_scan_finds_the_small_orbit() {
        // With a low order the orbit period lands near the linear value
        // 2 pi / sqrt(2 sqrt 7 - 1).
        let gf = hill_gf(4, 3.4);
        let scan = periodic_time_scan(&gf, &[0.01, 0.0], (2.8, 3.3), 120, &ScanOptions::default())
            .unwrap();
        assert_eq!(scan.roots.len(), 1, "{:?}", scan.roots);
        let orbit = &scan.roots[0];
        let nu = (2.0 * 7.0f64.sqrt() - 1.0).sqrt();
        let linear_period = 2.0 * std::f64::consts::PI / nu;
        assert!(
            (orbit.period - linear_period).abs() < 0.01,
            "period {} vs linear {}",
            orbit.period,
            linear_period
        );
        // Momentum roughly along -y with the linear ellipse ratio.
        assert!(orbit.p0[1] < -0.04 && orbit.p0[1] > -0.08, "{:?}", orbit.p0);
        assert!(orbit.momentum_mismatch < 1e-6);
        // One full period amplifies the order-4 momentum truncation by
        // e^(lambda T) ~ 2000.
        assert!(orbit.flow_residual.unwrap() < 5e-3);
    }

    #[test]
    fn position_scan_traces_a_closed_curve() {
        let gf = hill_gf(4, 3.2);
        // Small family member; the ellipse is about 3.2x taller than wide.
        let grid = GridSpec {
            x_min: -0.02,
            x_max: 0.02,
            y_min: -0.035,
            y_max: 0.035,
            nx: 61,
            ny: 61,
        };
        let scan = periodic_position_scan(&gf, 3.0335, &grid, &ScanOptions::default()).unwrap();
        assert!(!scan.contours_x.is_empty());
        assert!(!scan.contours_y.is_empty());
        let curve = scan.orbit_curve.as_ref().expect("closed orbit curve");
        assert!(curve.len() >= 8);
        // The curve surrounds the reference: signed winding about origin.
        let mut winding = 0.0;
        for w in curve.windows(2) {
            let a = w[0][1].atan2(w[0][0]);
            let b = w[1][1].atan2(w[1][0]);
            let mut d = b - a;
            while d > std::f64::consts::PI {
                d -= 2.0 * std::f64::consts::PI;
            }
            while d < -std::f64::consts::PI {
                d += 2.0 * std::f64::consts::PI;
            }
            winding += d;
        }
        assert!(winding.abs() > 5.0, "winding {winding}");
    }

    #[test]
    fn f2_solve_agrees_with_time_scan() {
        let gf = hill_gf(4, 3.4);
        let scan = periodic_time_scan(&gf, &[0.01, 0.0], (2.9, 3.2), 80, &ScanOptions::default())
            .unwrap();
        let orbit = &scan.roots[0];
        let guesses = vec![(orbit.q0.clone(), vec![orbit.p0[0] + 1e-4, orbit.p0[1] - 1e-4])];
        let found = periodic_f2_solve(&gf, orbit.period, &guesses, &ScanOptions::default())
            .unwrap();
        assert_eq!(found.len(), 1);
        // The fixed-point solve lands on the same orbit (possibly at a
        // slightly different point along it).
        assert!(found[0].momentum_mismatch < 1e-9);
        assert!(found[0].flow_residual.unwrap() < 5e-3);
    }

    #[test]
    fn f2_solve_from_zero_stays_at_the_reference() {
        let gf = hill_gf(3, 2.0);
        let found = periodic_f2_solve(
            &gf,
            1.7,
            &[(vec![0.0, 0.0], vec![0.0, 0.0])],
            &ScanOptions {
                verify: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(found.len(), 1);
        for v in found[0].q0.iter().chain(&found[0].p0) {
            assert!(v.abs() < 1e-10);
        }
    }
}
