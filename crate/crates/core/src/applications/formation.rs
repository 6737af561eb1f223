//! Formation reconfiguration cost maps: transfer from the reference point
//! to a circle of final positions, for a sweep of transfer times, with the
//! two-impulse cost of leaving and re-entering rest in the rotating frame.

use rayon::prelude::*;

use crate::hj::GeneratingFunction;
use crate::partition::GfKind;

use super::ApplicationError;

#[derive(Debug, Clone)]
pub struct FormationOptions {
    /// Pivot condition above which a transfer time is masked.
    pub cond_limit: f64,
}

impl Default for FormationOptions {
    fn default() -> Self {
        FormationOptions { cond_limit: 1e8 }
    }
}

/// Cost surface over (transfer time, arrival angle).
#[derive(Debug, Clone)]
pub struct FormationMap {
    pub radius: f64,
    pub angles: Vec<f64>,
    pub times: Vec<f64>,
    /// Transfer cost `sqrt(|dp0|^2 + |dp|^2)` against zero relative
    /// momentum before and after the maneuver; `cost[ti][ai]`, NaN where
    /// masked.
    pub cost: Vec<Vec<f64>>,
    /// Norm of the relative momenta at departure and arrival.
    pub departure_norm: Vec<Vec<f64>>,
    pub arrival_norm: Vec<Vec<f64>>,
    pub masked: Vec<bool>,
}

impl FormationMap {
    /// Radial plot rows `cost * (cos, sin)` for one transfer time.
    pub fn radial_curve(&self, time_index: usize) -> Vec<[f64; 2]> {
        self.angles
            .iter()
            .zip(&self.cost[time_index])
            .map(|(a, c)| [c * a.cos(), c * a.sin()])
            .collect()
    }
}

/// Sweep transfer times and arrival angles for the transfer from the
/// reference point to a circle of radius `radius`, with zero relative
/// momentum in the rotating frame before and after the maneuver: the two
/// impulses are the relative momenta themselves, and the cost is
/// `sqrt(|dp0|^2 + |dp|^2)`.
pub fn formation_cost_map(
    gf: &GeneratingFunction,
    radius: f64,
    angle_count: usize,
    times: &[f64],
    opts: &FormationOptions,
) -> Result<FormationMap, ApplicationError> {
    let n = gf.n();
    if n != 2 {
        return Err(ApplicationError::NeedPlanar(n));
    }
    let view = gf.derive_classical(GfKind::F1)?;
    let angles: Vec<f64> = (0..angle_count)
        .map(|i| 2.0 * std::f64::consts::PI * i as f64 / angle_count as f64)
        .collect();
    // Build antipodal direction pairs by exact negation (even counts), so
    // the odd symmetry of the transfer map is not polluted by trig
    // round-off of shifted angles.
    let directions: Vec<[f64; 2]> = (0..angle_count)
        .map(|i| {
            if angle_count % 2 == 0 && i >= angle_count / 2 {
                let d = [
                    angles[i - angle_count / 2].cos(),
                    angles[i - angle_count / 2].sin(),
                ];
                [-d[0], -d[1]]
            } else {
                [angles[i].cos(), angles[i].sin()]
            }
        })
        .collect();

    let per_time: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, bool)> = times
        .par_iter()
        .map(|&t| {
            let nan = vec![f64::NAN; angle_count];
            let Ok(snapshot) = view.snapshot(t) else {
                return (nan.clone(), nan.clone(), nan, true);
            };
            if snapshot.target_pivot_condition() > opts.cond_limit
                || radius > snapshot.local_trust_radius()
            {
                return (nan.clone(), nan.clone(), nan, true);
            }
            let mut cost = Vec::with_capacity(angle_count);
            let mut dep = Vec::with_capacity(angle_count);
            let mut arr = Vec::with_capacity(angle_count);
            let mut masked = false;
            for dir in &directions {
                let dq = [radius * dir[0], radius * dir[1]];
                // Position-position data: arrive at dq, depart from 0.
                let args = [dq[0], dq[1], 0.0, 0.0];
                match snapshot.solve_full(&args) {
                    Ok(full) => {
                        let dp0 = [full.endpoint0[2], full.endpoint0[3]];
                        let dp1 = [full.endpoint1[2], full.endpoint1[3]];
                        let impulse0 = (dp0[0] * dp0[0] + dp0[1] * dp0[1]).sqrt();
                        let impulse1 = (dp1[0] * dp1[0] + dp1[1] * dp1[1]).sqrt();
                        cost.push((impulse0 * impulse0 + impulse1 * impulse1).sqrt());
                        dep.push(impulse0);
                        arr.push(impulse1);
                    }
                    Err(_) => {
                        cost.push(f64::NAN);
                        dep.push(f64::NAN);
                        arr.push(f64::NAN);
                        masked = true;
                    }
                }
            }
            (cost, dep, arr, masked)
        })
        .collect();

    let mut cost = Vec::with_capacity(times.len());
    let mut departure_norm = Vec::with_capacity(times.len());
    let mut arrival_norm = Vec::with_capacity(times.len());
    let mut masked = Vec::with_capacity(times.len());
    for (c, d, a, m) in per_time {
        cost.push(c);
        departure_norm.push(d);
        arrival_norm.push(a);
        masked.push(m);
    }
    if masked.iter().all(|&m| m) {
        // Either every time is singular or the circle exceeds the local
        // trust radius everywhere.
        return Err(ApplicationError::OutsideTrustRadius(
            radius,
            gf.trust_radius(),
        ));
    }
    Ok(FormationMap {
        radius,
        angles,
        times: times.to_vec(),
        cost,
        departure_norm,
        arrival_norm,
        masked,
    })
}
