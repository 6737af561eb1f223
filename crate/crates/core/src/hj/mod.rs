//! Nonlinear generating functions as truncated polynomials.
//!
//! The scalar PDE a phase-flow generating function satisfies reduces, for
//! polynomial relative dynamics, to ordinary differential equations on the
//! polynomial coefficients: substitute the gradient relations into the
//! Hamiltonian, compose, truncate, and match coefficients. Paths start
//! from the identity-transformation form at the initial time.
//!
//! No single kind is regular for all time: coefficient paths blow up where
//! the kind's pivot block degenerates, even though some generating
//! function always exists. The solver therefore integrates a relay of
//! segments: when the running kind approaches a pole it backs off to a
//! healthy node, Legendre-transforms the polynomial into the
//! best-conditioned alternative partition, and continues with that kind's
//! equations. Queries against any fixed kind convert segment data on
//! demand.
//!
//! Variable layout of a generating function with `n` degrees of freedom:
//! slots `0..n` hold the endpoint-1 independents (`q_i` when `i` is in
//! `I_p`, else `p_i`), slots `n..2n` the endpoint-0 independents (`q0_k`
//! when `k` is in `K_r`, else `p0_k`).

mod artifact;
mod legendre;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{DynamicsError, HamiltonianModel, ReferenceTrajectory};
use crate::lineargf::{
    self, solve_linear_boundary, LinearGfError, StmBlocks, DEFAULT_PIVOT_COND_LIMIT,
    DEFAULT_SINGULARITY_SAMPLES_PER_UNIT,
};
use crate::ode::{self, OdeError, OdeOptions, OdeSolution, Termination};
use crate::partition::{BoundaryPartition, GfKind};
use crate::poly::{PolyError, TruncatedPolynomial};

pub use artifact::GfArtifact;
pub use legendre::{full_var_map, full_var_of, legendre_transform_poly, LegendreResult, SingularTransform};

/// Trust radius assigned to order-2 expansions, which have no higher-order
/// term to compare against.
pub const ORDER2_TRUST_RADIUS: f64 = 0.5;

/// Relative gradient deviation between consecutive orders that defines the
/// trust radius.
pub const TRUST_RADIUS_DEVIATION: f64 = 0.01;

/// Coefficient sup-norm (relative to the segment start) that triggers a
/// kind switch, and the sup-norm considered healthy to switch from.
const RELAY_BLOWUP_FACTOR: f64 = 1e6;
const RELAY_BACKOFF_FACTOR: f64 = 1e2;
const RELAY_MAX_SWITCHES: usize = 64;

#[derive(Debug, Error)]
pub enum HjError {
    #[error(
        "partition {0} does not generate the identity at the initial time; solve an \
         identity-admissible sibling (F2/F3 family) and convert with legendre_transform"
    )]
    IdentitySingularPartition(String),
    #[error("no regular kind found to continue the coefficient path past t = {t:.9}")]
    SingularityEncounter { t: f64 },
    #[error("target kind {label} is singular at t = {t:.9}; the transform has {detail}")]
    SingularTarget {
        label: String,
        t: f64,
        detail: String,
    },
    #[error("time {0} outside the coefficient path span [{1}, {2}]")]
    OutOfSpan(f64, f64, f64),
    #[error("partition dimension {0} does not match the model dimension {1}")]
    DimensionMismatch(usize, usize),
    #[error("gradient solve did not converge at t = {t:.9} (residual {residual:.3e})")]
    SolveFailed { t: f64, residual: f64 },
    #[error("artifact is malformed: {0}")]
    BadArtifact(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Linear(#[from] LinearGfError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Integration(#[from] OdeError),
}

/// One stretch of the coefficient path, integrated in a fixed partition.
#[derive(Debug)]
pub struct GfSegment {
    pub(crate) partition: BoundaryPartition,
    pub(crate) sol: OdeSolution,
}

impl GfSegment {
    fn t_start(&self) -> f64 {
        self.sol.nodes.first().unwrap().t
    }

    fn t_end(&self) -> f64 {
        self.sol.t_end
    }
}

/// Piecewise coefficient path of a generating function.
#[derive(Debug)]
pub struct GfPath {
    segments: Vec<GfSegment>,
    /// Partition the path was requested as (its first segment's kind).
    requested: BoundaryPartition,
    order: usize,
    reference: ReferenceTrajectory,
    tol: f64,
}

impl GfPath {
    pub fn span(&self) -> (f64, f64) {
        (
            self.segments.first().unwrap().t_start(),
            self.segments.last().unwrap().t_end(),
        )
    }

    fn forward(&self) -> bool {
        let (t0, t1) = self.span();
        t1 >= t0
    }

    fn check_span(&self, t: f64) -> Result<(), HjError> {
        let (t0, t1) = self.span();
        let slack = 1e-9 * (1.0 + t0.abs().max(t1.abs()));
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        if t < lo - slack || t > hi + slack {
            return Err(HjError::OutOfSpan(t, t0, t1));
        }
        Ok(())
    }

    fn segment_at(&self, t: f64) -> &GfSegment {
        let forward = self.forward();
        for seg in &self.segments {
            let inside = if forward {
                t <= seg.t_end()
            } else {
                t >= seg.t_end()
            };
            if inside {
                return seg;
            }
        }
        self.segments.last().unwrap()
    }

    fn poly_at(&self, t: f64) -> Result<(TruncatedPolynomial, &BoundaryPartition), HjError> {
        self.check_span(t)?;
        let seg = self.segment_at(t);
        let n = seg.partition.n();
        Ok((
            TruncatedPolynomial::from_coeffs(2 * n, self.order, seg.sol.eval(t)),
            &seg.partition,
        ))
    }

    fn dpoly_at(&self, t: f64) -> Result<(TruncatedPolynomial, &BoundaryPartition), HjError> {
        self.check_span(t)?;
        let seg = self.segment_at(t);
        let n = seg.partition.n();
        Ok((
            TruncatedPolynomial::from_coeffs(2 * n, self.order, seg.sol.eval_derivative(t)),
            &seg.partition,
        ))
    }
}

/// A generating function of a given partition, order and time span.
///
/// The stored coefficient path is a relay of identity-compatible segments;
/// other kinds are derived views that convert on demand (symbolically
/// through the Legendre transform when the polynomial itself is needed,
/// numerically when only values are).
#[derive(Debug, Clone)]
pub struct GeneratingFunction {
    source: Arc<GfPath>,
    partition: BoundaryPartition,
    trust_radius: f64,
}

/// Dependent endpoint variables produced by the gradient relations.
#[derive(Debug, Clone)]
pub struct GradientOutput {
    /// Endpoint-1 dependents by index: `p_i` for `i` in `I_p`, else `q_i`.
    pub endpoint1: Vec<f64>,
    /// Endpoint-0 dependents by index: `p0_k` for `k` in `K_r`, else `q0_k`.
    pub endpoint0: Vec<f64>,
    /// False when the arguments exceed the estimated trust radius.
    pub within_trust: bool,
}

/// Both full relative endpoint states solved from one set of independent
/// values: flat `[q, p]` at each endpoint.
#[derive(Debug, Clone)]
pub struct FullBoundary {
    pub endpoint0: Vec<f64>,
    pub endpoint1: Vec<f64>,
    pub within_trust: bool,
}

/// All 2^(2n) boundary partitions of dimension `n` (relay candidates).
fn all_partitions(n: usize) -> Vec<BoundaryPartition> {
    let mut out = Vec::with_capacity(1 << (2 * n));
    for ip_mask in 0..(1u32 << n) {
        for kr_mask in 0..(1u32 << n) {
            let ip: Vec<usize> = (1..=n).filter(|i| ip_mask >> (i - 1) & 1 == 1).collect();
            let kr: Vec<usize> = (1..=n).filter(|k| kr_mask >> (k - 1) & 1 == 1).collect();
            out.push(BoundaryPartition::new(n, &ip, &kr).unwrap());
        }
    }
    out
}

fn pivot_condition(stm: &StmBlocks, partition: &BoundaryPartition) -> f64 {
    let m = lineargf::partition_pivot_matrix(stm, partition);
    let sv = m.svd(false, false).singular_values;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for s in sv.iter() {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Reduce the scalar PDE to coefficient ODEs and integrate from the
/// identity transformation at `t0`, relaying between kinds around the
/// singular times of any single kind.
pub fn solve_gf(
    model: &HamiltonianModel,
    reference: &ReferenceTrajectory,
    partition: &BoundaryPartition,
    order: usize,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<GeneratingFunction, HjError> {
    let n = model.n();
    if partition.n() != n {
        return Err(HjError::DimensionMismatch(partition.n(), n));
    }
    if order < 2 {
        return Err(DynamicsError::OrderTooLow(order).into());
    }
    if !partition.identity_admissible() {
        return Err(HjError::IdentitySingularPartition(partition.label()));
    }

    // Identity form: sum over Ip of q_i p0_i minus sum over the rest of
    // p_i q0_i; slots i and n+i pair up in both cases.
    let mut ident = TruncatedPolynomial::zero(2 * n, order);
    {
        let mut e = vec![0u8; 2 * n];
        for i in 0..n {
            e.iter_mut().for_each(|x| *x = 0);
            e[i] = 1;
            e[n + i] = 1;
            let sign = if partition.endpoint1_position(i) { 1.0 } else { -1.0 };
            ident.set_coeff(&e, sign);
        }
    }

    // Hamiltonian expansion: constant for equilibrium references,
    // re-expanded along the reference otherwise.
    let equilibrium_hh = if reference.is_equilibrium() {
        Some(model.taylor_hamiltonian(reference, order, t0)?)
    } else {
        None
    };
    let identity_subs: Vec<TruncatedPolynomial> = (0..2 * n)
        .map(|v| TruncatedPolynomial::variable(2 * n, order, v))
        .collect();

    let mut segments: Vec<GfSegment> = Vec::new();
    let mut cur_partition = partition.clone();
    let mut cur_coeffs = ident.coeffs().to_vec();
    let mut t_cur = t0;
    let mut switches = 0usize;
    // Partitions already tried from the same switch point.
    let mut tried_here: Vec<BoundaryPartition> = Vec::new();
    let mut last_switch_t = f64::NAN;

    loop {
        let start_scale = cur_coeffs
            .iter()
            .fold(1.0f64, |s, c| s.max(c.abs()));
        let opts = OdeOptions {
            tol,
            max_norm: Some(RELAY_BLOWUP_FACTOR * start_scale),
            ..Default::default()
        };
        let rhs_partition = cur_partition.clone();
        let model_rhs = model.clone();
        let reference_rhs = reference.clone();
        let hh_const = equilibrium_hh.clone();
        let identity_subs_rhs = identity_subs.clone();
        let sol = ode::integrate(
            move |t, y, out| {
                let f = TruncatedPolynomial::from_coeffs(2 * n, order, y.to_vec());
                let hh = match &hh_const {
                    Some(p) => p.clone(),
                    None => match model_rhs.taylor_hamiltonian(&reference_rhs, order, t) {
                        Ok(p) => p,
                        Err(_) => {
                            out.fill(f64::NAN);
                            return;
                        }
                    },
                };
                // Substitutions for the phase variables of the expansion:
                // independent slots pass through, dependent ones come from
                // the gradient relations.
                let mut subs = Vec::with_capacity(2 * n);
                for i in 0..n {
                    if rhs_partition.endpoint1_position(i) {
                        subs.push(identity_subs_rhs[i].clone());
                    } else {
                        subs.push(f.differentiate(i).unwrap().scale(-1.0));
                    }
                }
                for i in 0..n {
                    if rhs_partition.endpoint1_position(i) {
                        subs.push(f.differentiate(i).unwrap());
                    } else {
                        subs.push(identity_subs_rhs[i].clone());
                    }
                }
                let composed = hh.compose(&subs).unwrap();
                for (o, c) in out.iter_mut().zip(composed.coeffs()) {
                    *o = -c;
                }
            },
            t_cur,
            t1,
            &cur_coeffs,
            &opts,
        )?;

        match sol.termination {
            Termination::Completed => {
                segments.push(GfSegment {
                    partition: cur_partition.clone(),
                    sol,
                });
                break;
            }
            Termination::NonFiniteRhs { t } => {
                return Err(HjError::Dynamics(DynamicsError::Integration(
                    OdeError::NonFiniteRhs { t },
                )))
            }
            Termination::StepUnderflow { t: t_stop }
            | Termination::NormExceeded { t: t_stop } => {
                // Back off to the last healthy node and switch kinds there.
                let cap = RELAY_BACKOFF_FACTOR * start_scale;
                let healthy = sol
                    .nodes
                    .iter()
                    .rposition(|node| node.y.iter().all(|v| v.abs() <= cap));
                let Some(idx) = healthy else {
                    return Err(HjError::SingularityEncounter { t: t_stop });
                };
                let t_s = sol.nodes[idx].t;
                if t_s != last_switch_t {
                    tried_here.clear();
                    last_switch_t = t_s;
                }
                tried_here.push(cur_partition.clone());

                let poly_s = TruncatedPolynomial::from_coeffs(
                    2 * n,
                    order,
                    sol.nodes[idx].y.clone(),
                );
                let stm_s = stm_from_quadratic_form(&poly_s, &cur_partition)?;
                // Rank the alternatives by pivot conditioning at the
                // switch point; the integration itself will flag the next
                // pole if the choice turns sour later.
                let mut candidates: Vec<(f64, BoundaryPartition)> = all_partitions(n)
                    .into_iter()
                    .filter(|p| !tried_here.contains(p))
                    .map(|p| (pivot_condition(&stm_s, &p), p))
                    .filter(|(c, _)| c.is_finite())
                    .collect();
                candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

                let mut switched = false;
                for (_, cand) in candidates {
                    match legendre_transform_poly(&poly_s, &cur_partition, &cand)? {
                        LegendreResult::Polynomial(next_poly) => {
                            let mut truncated = sol.clone();
                            truncated.nodes.truncate(idx + 1);
                            truncated.t_end = t_s;
                            truncated.y_end = truncated.nodes[idx].y.clone();
                            if truncated.nodes.len() == 1 {
                                let dup = truncated.nodes[0].clone();
                                truncated.nodes.push(dup);
                            }
                            segments.push(GfSegment {
                                partition: cur_partition.clone(),
                                sol: truncated,
                            });
                            cur_partition = cand;
                            cur_coeffs = next_poly.coeffs().to_vec();
                            t_cur = t_s;
                            switched = true;
                            break;
                        }
                        LegendreResult::Singular(_) => continue,
                    }
                }
                if !switched {
                    return Err(HjError::SingularityEncounter { t: t_stop });
                }
                switches += 1;
                if switches > RELAY_MAX_SWITCHES {
                    return Err(HjError::SingularityEncounter { t: t_stop });
                }
            }
        }
    }

    let path = GfPath {
        segments,
        requested: partition.clone(),
        order,
        reference: reference.clone(),
        tol,
    };
    let trust_radius = estimate_trust_radius(&path);
    Ok(GeneratingFunction {
        source: Arc::new(path),
        partition: partition.clone(),
        trust_radius,
    })
}

/// Largest sampled amplitude at which dropping the top degree moves the
/// polynomial's gradient map by less than [`TRUST_RADIUS_DEVIATION`]
/// (relative).
pub fn poly_trust_radius(poly: &TruncatedPolynomial, order: usize) -> f64 {
    if order <= 2 {
        return ORDER2_TRUST_RADIUS;
    }
    let lower = poly.truncated_to(order - 1);
    let dim = poly.nvars();
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for v in 0..dim {
        let mut d = vec![0.0; dim];
        d[v] = 1.0;
        directions.push(d.clone());
        d[v] = -1.0;
        directions.push(d);
    }
    let norm = (dim as f64).sqrt();
    directions.push((0..dim).map(|_| 1.0 / norm).collect());
    directions.push((0..dim).map(|v| if v % 2 == 0 { 1.0 } else { -1.0 } / norm).collect());

    let mut trust: f64 = 0.0;
    let mut amplitude = 1e-4;
    while amplitude <= 1.0 {
        let mut worst: f64 = 0.0;
        for d in &directions {
            let x: Vec<f64> = d.iter().map(|v| v * amplitude).collect();
            let g_full = poly.eval_gradient(&x);
            let g_low = lower.eval_gradient(&x);
            let mut diff = 0.0f64;
            let mut scale = 0.0f64;
            for (a, b) in g_full.iter().zip(&g_low) {
                diff += (a - b) * (a - b);
                scale += a * a;
            }
            let rel = (diff / scale.max(1e-300)).sqrt();
            worst = worst.max(rel);
        }
        if worst > TRUST_RADIUS_DEVIATION {
            break;
        }
        trust = amplitude;
        amplitude *= 1.5;
    }
    trust
}

/// Reported per-path trust radius: the minimum of the polynomial estimate
/// over a spread of times (the expansion quality varies along the path).
fn estimate_trust_radius(path: &GfPath) -> f64 {
    if path.order <= 2 {
        return ORDER2_TRUST_RADIUS;
    }
    let (t0, t1) = path.span();
    let mut trust = f64::INFINITY;
    for k in 1..=4 {
        let t = t0 + (t1 - t0) * k as f64 / 4.0;
        let Ok((poly, _)) = path.poly_at(t) else {
            continue;
        };
        trust = trust.min(poly_trust_radius(&poly, path.order));
    }
    if trust.is_finite() {
        trust
    } else {
        ORDER2_TRUST_RADIUS
    }
}

/// Everything needed to evaluate a generating function at one time.
pub struct GfSnapshot {
    t: f64,
    n: usize,
    order: usize,
    source_partition: BoundaryPartition,
    target_partition: BoundaryPartition,
    poly: TruncatedPolynomial,
    grads: Vec<TruncatedPolynomial>,
    stm: Option<StmBlocks>,
    trust_radius: f64,
    local_trust: once_cell::sync::OnceCell<f64>,
    cond_limit: f64,
}

impl GeneratingFunction {
    pub fn n(&self) -> usize {
        self.source.requested.n()
    }

    pub fn order(&self) -> usize {
        self.source.order
    }

    pub fn partition(&self) -> &BoundaryPartition {
        &self.partition
    }

    /// Partition the coefficient path was requested as.
    pub fn source_partition(&self) -> &BoundaryPartition {
        &self.source.requested
    }

    /// Partition of the stored segment covering time `t`.
    pub fn segment_partition_at(&self, t: f64) -> Result<BoundaryPartition, HjError> {
        self.source.check_span(t)?;
        Ok(self.source.segment_at(t).partition.clone())
    }

    /// Number of relay segments in the stored path.
    pub fn segment_count(&self) -> usize {
        self.source.segments.len()
    }

    pub fn reference(&self) -> &ReferenceTrajectory {
        &self.source.reference
    }

    pub fn model(&self) -> &HamiltonianModel {
        self.source.reference.model()
    }

    pub fn tol(&self) -> f64 {
        self.source.tol
    }

    pub fn span(&self) -> (f64, f64) {
        self.source.span()
    }

    pub fn t0(&self) -> f64 {
        self.span().0
    }

    pub fn trust_radius(&self) -> f64 {
        self.trust_radius
    }

    /// Times of the accepted integration nodes across all segments.
    pub fn node_times(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for seg in &self.source.segments {
            for node in &seg.sol.nodes {
                if out.last().map_or(true, |&last: &f64| last != node.t) {
                    out.push(node.t);
                }
            }
        }
        out
    }

    /// A view of the same coefficient path as another kind.
    pub fn derive_kind(&self, target: &BoundaryPartition) -> Result<GeneratingFunction, HjError> {
        if target.n() != self.n() {
            return Err(HjError::DimensionMismatch(target.n(), self.n()));
        }
        Ok(GeneratingFunction {
            source: Arc::clone(&self.source),
            partition: target.clone(),
            trust_radius: self.trust_radius,
        })
    }

    /// Convenience for the four classical kinds.
    pub fn derive_classical(&self, kind: GfKind) -> Result<GeneratingFunction, HjError> {
        self.derive_kind(&kind.partition(self.n()))
    }

    /// Stored segment polynomial at `t`, with the partition it belongs to.
    pub fn segment_poly_at(
        &self,
        t: f64,
    ) -> Result<(TruncatedPolynomial, BoundaryPartition), HjError> {
        let (p, part) = self.source.poly_at(t)?;
        Ok((p, part.clone()))
    }

    /// Time derivative of the stored segment polynomial at `t`.
    pub fn segment_dpoly_at(
        &self,
        t: f64,
    ) -> Result<(TruncatedPolynomial, BoundaryPartition), HjError> {
        let (p, part) = self.source.dpoly_at(t)?;
        Ok((p, part.clone()))
    }

    /// Polynomial of this function's own partition at `t`; converts from
    /// the stored segment kind through the Legendre transform when needed.
    pub fn poly_at(&self, t: f64) -> Result<TruncatedPolynomial, HjError> {
        let (source, src_partition) = self.source.poly_at(t)?;
        if self.partition == *src_partition {
            return Ok(source);
        }
        match legendre_transform_poly(&source, src_partition, &self.partition)? {
            LegendreResult::Polynomial(p) => Ok(p),
            LegendreResult::Singular(s) => Err(HjError::SingularTarget {
                label: self.partition.label(),
                t,
                detail: s.describe(),
            }),
        }
    }

    /// Legendre transform of the stored polynomial into `target` at `t`,
    /// reporting the multi-branch outcome instead of failing when the
    /// target kind is singular there.
    pub fn legendre_at(
        &self,
        target: &BoundaryPartition,
        t: f64,
    ) -> Result<LegendreResult, HjError> {
        let (source, src_partition) = self.source.poly_at(t)?;
        if *target == *src_partition {
            return Ok(LegendreResult::Polynomial(source));
        }
        Ok(legendre_transform_poly(&source, src_partition, target)?)
    }

    /// State-transition blocks reconstructed from the quadratic part of
    /// the stored polynomial at `t`.
    pub fn stm_at(&self, t: f64) -> Result<StmBlocks, HjError> {
        let (poly, partition) = self.source.poly_at(t)?;
        stm_from_quadratic_form(&poly, partition)
    }

    /// Snapshot for repeated evaluation at one time.
    pub fn snapshot(&self, t: f64) -> Result<GfSnapshot, HjError> {
        let n = self.n();
        let (poly, src_partition) = self.source.poly_at(t)?;
        let src_partition = src_partition.clone();
        let grads: Vec<TruncatedPolynomial> = (0..2 * n)
            .map(|v| poly.differentiate(v))
            .collect::<Result<_, _>>()?;
        let stm = stm_from_quadratic_form(&poly, &src_partition).ok();
        Ok(GfSnapshot {
            t,
            n,
            order: self.order(),
            source_partition: src_partition,
            target_partition: self.partition.clone(),
            poly,
            grads,
            stm,
            trust_radius: self.trust_radius,
            local_trust: once_cell::sync::OnceCell::new(),
            cond_limit: DEFAULT_PIVOT_COND_LIMIT,
        })
    }

    /// The four gradient relations evaluated at the given independent
    /// values (relative coordinates): returns the dependent variables.
    pub fn eval_gradients(&self, args: &[f64], t: f64) -> Result<GradientOutput, HjError> {
        self.snapshot(t)?.gradients(args)
    }

    /// Both full relative endpoint states for the given independent values.
    pub fn solve_boundary(&self, args: &[f64], t: f64) -> Result<FullBoundary, HjError> {
        self.snapshot(t)?.solve_full(args)
    }

    /// Singular times of the requested kinds inside the path span, from
    /// the order-2 subsystem.
    pub fn monitor_singularity(
        &self,
        kinds: &[GfKind],
        samples_per_unit: f64,
    ) -> Result<Vec<(GfKind, f64)>, HjError> {
        let (t0, t1) = self.span();
        let quad = lineargf::QuadraticHamiltonian::from_model(&self.source.reference);
        let path = lineargf::stm(&quad, t0, t1, self.source.tol.max(1e-12))?;
        let mut out = Vec::new();
        for &kind in kinds {
            for t in lineargf::detect_singularity(&path, kind, samples_per_unit) {
                out.push((kind, t));
            }
        }
        Ok(out)
    }

    /// As [`monitor_singularity`] with the default grid density.
    pub fn monitor_singularity_default(
        &self,
        kinds: &[GfKind],
    ) -> Result<Vec<(GfKind, f64)>, HjError> {
        self.monitor_singularity(kinds, DEFAULT_SINGULARITY_SAMPLES_PER_UNIT)
    }
}

impl GfSnapshot {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn trust_radius(&self) -> f64 {
        self.trust_radius
    }

    /// Trust radius of this time's polynomial (the per-path figure is the
    /// minimum over the span and can be tighter than any single time).
    pub fn local_trust_radius(&self) -> f64 {
        *self
            .local_trust
            .get_or_init(|| poly_trust_radius(&self.poly, self.order).max(self.trust_radius))
    }

    pub fn source_poly(&self) -> &TruncatedPolynomial {
        &self.poly
    }

    pub fn source_partition(&self) -> &BoundaryPartition {
        &self.source_partition
    }

    /// Condition number of the target partition's pivot at this time
    /// (infinite when the quadratic part could not be inverted).
    pub fn target_pivot_condition(&self) -> f64 {
        match &self.stm {
            None => f64::INFINITY,
            Some(stm) => pivot_condition(stm, &self.target_partition),
        }
    }

    fn source_gradient(&self, u: &[f64]) -> Vec<f64> {
        self.grads.iter().map(|g| g.eval(u)).collect()
    }

    /// Solve for the source independent values that realize the target
    /// independent values `args`, then assemble both full endpoints.
    pub fn solve_full(&self, args: &[f64]) -> Result<FullBoundary, HjError> {
        let n = self.n;
        assert_eq!(args.len(), 2 * n, "need one value per independent variable");
        let u = if self.target_partition == self.source_partition {
            args.to_vec()
        } else {
            self.newton_solve(args)?
        };
        let mut full = self.full_from_source(&u);
        full.within_trust = args.iter().all(|a| a.abs() <= self.trust_radius);
        Ok(full)
    }

    /// Assemble all 4n physical values from given values of the stored
    /// partition's independent variables.
    pub fn full_from_source(&self, u: &[f64]) -> FullBoundary {
        let n = self.n;
        let g = self.source_gradient(u);
        let mut z0 = vec![0.0; 2 * n];
        let mut z1 = vec![0.0; 2 * n];
        for i in 0..n {
            let (q, p) = if self.source_partition.endpoint1_position(i) {
                (u[i], g[i])
            } else {
                (-g[i], u[i])
            };
            z1[i] = q;
            z1[n + i] = p;
        }
        for k in 0..n {
            let (q0, p0) = if self.source_partition.endpoint0_position(k) {
                (u[n + k], -g[n + k])
            } else {
                (g[n + k], u[n + k])
            };
            z0[k] = q0;
            z0[n + k] = p0;
        }
        let within_trust = u.iter().all(|a| a.abs() <= self.trust_radius);
        FullBoundary {
            endpoint0: z0,
            endpoint1: z1,
            within_trust,
        }
    }

    /// Dependent variables of the target partition at `args`.
    pub fn gradients(&self, args: &[f64]) -> Result<GradientOutput, HjError> {
        let full = self.solve_full(args)?;
        let n = self.n;
        let mut endpoint1 = vec![0.0; n];
        let mut endpoint0 = vec![0.0; n];
        for i in 0..n {
            endpoint1[i] = if self.target_partition.endpoint1_position(i) {
                full.endpoint1[n + i]
            } else {
                full.endpoint1[i]
            };
            endpoint0[i] = if self.target_partition.endpoint0_position(i) {
                full.endpoint0[n + i]
            } else {
                full.endpoint0[i]
            };
        }
        Ok(GradientOutput {
            endpoint1,
            endpoint0,
            within_trust: full.within_trust,
        })
    }

    /// Newton solve of the source independents from target independents.
    fn newton_solve(&self, args: &[f64]) -> Result<Vec<f64>, HjError> {
        let n = self.n;
        // Linear-part seed: solve the order-2 boundary problem.
        let stm = self.stm.as_ref().ok_or(HjError::SolveFailed {
            t: self.t,
            residual: f64::INFINITY,
        })?;
        let cond = pivot_condition(stm, &self.target_partition);
        if !cond.is_finite() || cond > self.cond_limit {
            return Err(HjError::Linear(LinearGfError::SingularPivot {
                kind: self.target_partition.label(),
                block: self
                    .target_partition
                    .kind()
                    .map(|k| k.pivot_name().to_string())
                    .unwrap_or_else(|| "partition pivot".into()),
                cond,
            }));
        }
        let (z0_lin, z1_lin) = solve_linear_boundary(
            stm,
            &self.target_partition,
            &args[..n],
            &args[n..],
            self.cond_limit,
        )?;
        let mut u = vec![0.0; 2 * n];
        for i in 0..n {
            u[i] = if self.source_partition.endpoint1_position(i) {
                z1_lin[i]
            } else {
                z1_lin[n + i]
            };
            u[n + i] = if self.source_partition.endpoint0_position(i) {
                z0_lin[i]
            } else {
                z0_lin[n + i]
            };
        }

        let scale = 1.0 + args.iter().fold(0.0f64, |s, a| s.max(a.abs()));
        let tol = 1e-13 * scale;
        let mut residual = self.residual(&u, args);
        let mut rnorm = norm_inf(&residual);
        for _ in 0..60 {
            if rnorm <= tol {
                return Ok(u);
            }
            let jac = self.jacobian(&u);
            let delta = jac.lu().solve(&DVector::from_column_slice(&residual));
            let Some(delta) = delta else {
                return Err(HjError::SolveFailed {
                    t: self.t,
                    residual: rnorm,
                });
            };
            // Damped update.
            let mut step = 1.0;
            loop {
                let trial: Vec<f64> = u
                    .iter()
                    .zip(delta.iter())
                    .map(|(ui, di)| ui - step * di)
                    .collect();
                let r_trial = self.residual(&trial, args);
                let rn_trial = norm_inf(&r_trial);
                if rn_trial < rnorm || step < 1e-4 {
                    u = trial;
                    residual = r_trial;
                    rnorm = rn_trial;
                    break;
                }
                step *= 0.5;
            }
        }
        if rnorm <= tol * 100.0 {
            return Ok(u);
        }
        Err(HjError::SolveFailed {
            t: self.t,
            residual: rnorm,
        })
    }

    /// Residual of the target independent relations at source values `u`.
    fn residual(&self, u: &[f64], args: &[f64]) -> Vec<f64> {
        let n = self.n;
        let g = self.source_gradient(u);
        let mut r = vec![0.0; 2 * n];
        for i in 0..n {
            let same = self.source_partition.endpoint1_position(i)
                == self.target_partition.endpoint1_position(i);
            r[i] = if same {
                u[i] - args[i]
            } else {
                let sigma = if self.source_partition.endpoint1_position(i) {
                    1.0
                } else {
                    -1.0
                };
                sigma * g[i] - args[i]
            };
        }
        for k in 0..n {
            let same = self.source_partition.endpoint0_position(k)
                == self.target_partition.endpoint0_position(k);
            r[n + k] = if same {
                u[n + k] - args[n + k]
            } else {
                let sigma = if self.source_partition.endpoint0_position(k) {
                    -1.0
                } else {
                    1.0
                };
                sigma * g[n + k] - args[n + k]
            };
        }
        r
    }

    fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        // Hessian rows come from gradients of the first derivatives.
        let hess: Vec<Vec<f64>> = self.grads.iter().map(|g| g.eval_gradient(u)).collect();
        for i in 0..n {
            let same = self.source_partition.endpoint1_position(i)
                == self.target_partition.endpoint1_position(i);
            if same {
                jac[(i, i)] = 1.0;
            } else {
                let sigma = if self.source_partition.endpoint1_position(i) {
                    1.0
                } else {
                    -1.0
                };
                for c in 0..2 * n {
                    jac[(i, c)] = sigma * hess[i][c];
                }
            }
        }
        for k in 0..n {
            let same = self.source_partition.endpoint0_position(k)
                == self.target_partition.endpoint0_position(k);
            if same {
                jac[(n + k, n + k)] = 1.0;
            } else {
                let sigma = if self.source_partition.endpoint0_position(k) {
                    -1.0
                } else {
                    1.0
                };
                for c in 0..2 * n {
                    jac[(n + k, c)] = sigma * hess[n + k][c];
                }
            }
        }
        jac
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |s, x| s.max(x.abs()))
}

/// Symmetric coefficient matrix `G` of the quadratic part `1/2 y^T G y`.
pub fn quadratic_form_matrix(poly: &TruncatedPolynomial) -> DMatrix<f64> {
    let dim = poly.nvars();
    let mut g = DMatrix::zeros(dim, dim);
    let mut e = vec![0u8; dim];
    for i in 0..dim {
        for j in i..dim {
            e.iter_mut().for_each(|x| *x = 0);
            e[i] += 1;
            e[j] += 1;
            let c = poly.coeff(&e);
            if i == j {
                g[(i, i)] = 2.0 * c;
            } else {
                g[(i, j)] = c;
                g[(j, i)] = c;
            }
        }
    }
    g
}

/// Reconstruct the state-transition blocks from the quadratic part of a
/// generating-function polynomial (any partition).
///
/// Writing the gradient relations as `G [y1; y0] = [s1; s0]` with the
/// signed dependent selections, both sides are linear in the transition
/// matrix, giving a square system for it.
pub fn stm_from_quadratic_form(
    poly: &TruncatedPolynomial,
    partition: &BoundaryPartition,
) -> Result<StmBlocks, HjError> {
    let n = partition.n();
    let g = quadratic_form_matrix(poly);
    let g11: DMatrix<f64> = g.view((0, 0), (n, n)).into();
    let g12: DMatrix<f64> = g.view((0, n), (n, n)).into();
    let g21: DMatrix<f64> = g.view((n, 0), (n, n)).into();
    let g22: DMatrix<f64> = g.view((n, n), (n, n)).into();

    let mut sel1 = DMatrix::zeros(n, 2 * n);
    let mut sel0 = DMatrix::zeros(n, 2 * n);
    let mut dep1 = DMatrix::zeros(n, 2 * n);
    let mut dep0 = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        if partition.endpoint1_position(i) {
            sel1[(i, i)] = 1.0;
            dep1[(i, n + i)] = 1.0;
        } else {
            sel1[(i, n + i)] = 1.0;
            dep1[(i, i)] = -1.0;
        }
        if partition.endpoint0_position(i) {
            sel0[(i, i)] = 1.0;
            dep0[(i, n + i)] = -1.0;
        } else {
            sel0[(i, n + i)] = 1.0;
            dep0[(i, i)] = 1.0;
        }
    }

    // (G11 sel1 - dep1) Phi = -G12 sel0 ; (G21 sel1) Phi = dep0 - G22 sel0.
    let mut coeff = DMatrix::zeros(2 * n, 2 * n);
    coeff
        .view_mut((0, 0), (n, 2 * n))
        .copy_from(&(&g11 * &sel1 - &dep1));
    coeff.view_mut((n, 0), (n, 2 * n)).copy_from(&(&g21 * &sel1));
    let mut rhs = DMatrix::zeros(2 * n, 2 * n);
    rhs.view_mut((0, 0), (n, 2 * n)).copy_from(&(-&g12 * &sel0));
    rhs.view_mut((n, 0), (n, 2 * n))
        .copy_from(&(&dep0 - &g22 * &sel0));
    let phi = coeff.lu().solve(&rhs).ok_or(HjError::SolveFailed {
        t: f64::NAN,
        residual: f64::INFINITY,
    })?;
    Ok(StmBlocks::from_matrix(&phi))
}
