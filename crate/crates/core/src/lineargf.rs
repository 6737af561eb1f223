//! Quadratic generating functions for linear(ized) Hamiltonian systems.
//!
//! For a quadratic Hamiltonian without linear terms, the generating
//! functions of the phase-flow transformation are quadratic forms whose
//! blocks obey a Riccati / linear / quadrature chain; equivalently they
//! are algebraic combinations of the state-transition blocks. Both routes
//! are implemented and checked against each other.
//!
//! Sign conventions come from the gradient relations (with endpoint-0
//! variables playing the role of the new coordinates):
//! for independent positions `p = +dF/dq`, for independent momenta
//! `q = -dF/dp`, and at endpoint 0 `p0 = -dF/dq0`, `q0 = +dF/dp0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{DynamicsError, ReferenceTrajectory};
use crate::ode::{self, OdeError, OdeOptions, OdeSolution};
use crate::partition::{BoundaryPartition, GfKind};
use crate::poly::TruncatedPolynomial;

/// Default grid density for singularity bracketing (samples per unit time).
pub const DEFAULT_SINGULARITY_SAMPLES_PER_UNIT: f64 = 200.0;

/// Condition-number limit above which a pivot block counts as singular.
pub const DEFAULT_PIVOT_COND_LIMIT: f64 = 1e8;

#[derive(Debug, Error)]
pub enum LinearGfError {
    #[error("kind {kind} is singular here: block {block} has condition number {cond:.3e}")]
    SingularPivot {
        kind: String,
        block: String,
        cond: f64,
    },
    #[error(
        "kind {0} has no identity form at the initial time; integrate F2 or F3 and convert \
         with gf_from_stm at a later time"
    )]
    IdentitySingularAtStart(String),
    #[error("Riccati blow-up between t = {t_last:.9} and t = {t_fail:.9} (kind {kind})")]
    RiccatiBlowup { kind: String, t_last: f64, t_fail: f64 },
    #[error("matrix dimensions do not match the system dimension {0}")]
    Dimension(usize),
    #[error("blocks of the quadratic Hamiltonian must be symmetric (defect {0:.3e})")]
    AsymmetricHamiltonian(f64),
    #[error(transparent)]
    Integration(#[from] OdeError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// The three independent blocks of a quadratic Hamiltonian
/// `H = 1/2 [q p]^T [[Hqq, Hqp], [Hqp^T, Hpp]] [q p]`, with
/// `Hqp[i][j] = d2H / dq_i dp_j`.
#[derive(Debug, Clone)]
pub struct QuadBlocks {
    pub hqq: DMatrix<f64>,
    pub hqp: DMatrix<f64>,
    pub hpp: DMatrix<f64>,
}

impl QuadBlocks {
    pub fn hpq(&self) -> DMatrix<f64> {
        self.hqp.transpose()
    }
}

/// A (possibly time-dependent) quadratic Hamiltonian without linear terms.
#[derive(Clone)]
pub struct QuadraticHamiltonian {
    n: usize,
    blocks: Arc<dyn Fn(f64) -> QuadBlocks + Send + Sync>,
}

impl QuadraticHamiltonian {
    pub fn constant(
        hqq: DMatrix<f64>,
        hqp: DMatrix<f64>,
        hpp: DMatrix<f64>,
    ) -> Result<Self, LinearGfError> {
        let n = hqq.nrows();
        if hqq.ncols() != n || hqp.nrows() != n || hqp.ncols() != n || hpp.nrows() != n || hpp.ncols() != n {
            return Err(LinearGfError::Dimension(n));
        }
        let defect = (&hqq - hqq.transpose()).norm().max((&hpp - hpp.transpose()).norm());
        if defect > 1e-12 * (1.0 + hqq.norm() + hpp.norm()) {
            return Err(LinearGfError::AsymmetricHamiltonian(defect));
        }
        let blocks = QuadBlocks { hqq, hqp, hpp };
        Ok(QuadraticHamiltonian {
            n,
            blocks: Arc::new(move |_t| blocks.clone()),
        })
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> QuadBlocks + Send + Sync + 'static) -> Self {
        QuadraticHamiltonian {
            n,
            blocks: Arc::new(f),
        }
    }

    /// Second-order expansion of a model about a reference trajectory.
    pub fn from_model(reference: &ReferenceTrajectory) -> Self {
        let reference = reference.clone();
        let n = reference.model().n();
        QuadraticHamiltonian {
            n,
            blocks: Arc::new(move |t| {
                let taylor = reference
                    .model()
                    .taylor_hamiltonian(&reference, 2, t)
                    .expect("reference valid inside its span");
                quad_blocks_from_poly(&taylor, n)
            }),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn at(&self, t: f64) -> QuadBlocks {
        (self.blocks)(t)
    }
}

/// Extract the `1/2 x^T S x` block structure from a degree-2 polynomial in
/// the 2n phase variables.
pub fn quad_blocks_from_poly(poly: &TruncatedPolynomial, n: usize) -> QuadBlocks {
    let dim = 2 * n;
    let mut s = DMatrix::zeros(dim, dim);
    let mut e = vec![0u8; poly.nvars()];
    for i in 0..dim {
        for j in i..dim {
            e.iter_mut().for_each(|x| *x = 0);
            e[i] += 1;
            e[j] += 1;
            let c = poly.coeff(&e);
            if i == j {
                s[(i, i)] = 2.0 * c;
            } else {
                s[(i, j)] = c;
                s[(j, i)] = c;
            }
        }
    }
    QuadBlocks {
        hqq: s.view((0, 0), (n, n)).into(),
        hqp: s.view((0, n), (n, n)).into(),
        hpp: s.view((n, n), (n, n)).into(),
    }
}

/// State-transition blocks at one time.
#[derive(Debug, Clone)]
pub struct StmBlocks {
    pub qq: DMatrix<f64>,
    pub qp: DMatrix<f64>,
    pub pq: DMatrix<f64>,
    pub pp: DMatrix<f64>,
}

impl StmBlocks {
    pub fn n(&self) -> usize {
        self.qq.nrows()
    }

    pub fn identity(n: usize) -> Self {
        StmBlocks {
            qq: DMatrix::identity(n, n),
            qp: DMatrix::zeros(n, n),
            pq: DMatrix::zeros(n, n),
            pp: DMatrix::identity(n, n),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.qq);
        m.view_mut((0, n), (n, n)).copy_from(&self.qp);
        m.view_mut((n, 0), (n, n)).copy_from(&self.pq);
        m.view_mut((n, n), (n, n)).copy_from(&self.pp);
        m
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows() / 2;
        StmBlocks {
            qq: m.view((0, 0), (n, n)).into(),
            qp: m.view((0, n), (n, n)).into(),
            pq: m.view((n, 0), (n, n)).into(),
            pp: m.view((n, n), (n, n)).into(),
        }
    }

    /// Frobenius norm of `Phi^T J Phi - J`.
    pub fn symplectic_defect(&self) -> f64 {
        let n = self.n();
        let phi = self.to_matrix();
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            j[(i, n + i)] = 1.0;
            j[(n + i, i)] = -1.0;
        }
        (phi.transpose() * &j * &phi - j).norm()
    }

    /// Apply the linear map to a flat `[dq0, dp0]` vector.
    pub fn apply(&self, z0: &[f64]) -> Vec<f64> {
        let m = self.to_matrix();
        let v = m * DVector::from_column_slice(z0);
        v.as_slice().to_vec()
    }

    fn block(&self, kind: GfKind) -> &DMatrix<f64> {
        match kind {
            GfKind::F1 => &self.qp,
            GfKind::F2 => &self.qq,
            GfKind::F3 => &self.pp,
            GfKind::F4 => &self.pq,
        }
    }
}

/// State-transition path over a time span, with dense evaluation.
#[derive(Debug, Clone)]
pub struct StateTransition {
    n: usize,
    sol: OdeSolution,
}

impl StateTransition {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn span(&self) -> (f64, f64) {
        self.sol.span()
    }

    pub fn at(&self, t: f64) -> StmBlocks {
        let flat = self.sol.eval(t);
        StmBlocks::from_matrix(&DMatrix::from_row_slice(2 * self.n, 2 * self.n, &flat))
    }

    pub fn end(&self) -> StmBlocks {
        StmBlocks::from_matrix(&DMatrix::from_row_slice(
            2 * self.n,
            2 * self.n,
            &self.sol.y_end,
        ))
    }
}

/// Hamiltonian system matrix `A = [[Hpq, Hpp], [-Hqq, -Hqp]]` so that
/// `zdot = A z` for `z = (dq, dp)`.
fn system_matrix(blocks: &QuadBlocks) -> DMatrix<f64> {
    let n = blocks.hqq.nrows();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&blocks.hpq());
    a.view_mut((0, n), (n, n)).copy_from(&blocks.hpp);
    a.view_mut((n, 0), (n, n)).copy_from(&(-&blocks.hqq));
    a.view_mut((n, n), (n, n)).copy_from(&(-&blocks.hqp));
    a
}

/// Integrate the state-transition matrix of `h` from `t0` to `t1`.
pub fn stm(
    h: &QuadraticHamiltonian,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<StateTransition, LinearGfError> {
    let n = h.n();
    let dim = 2 * n;
    let y0: Vec<f64> = DMatrix::<f64>::identity(dim, dim)
        .row_iter()
        .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
        .collect();
    let opts = OdeOptions::with_tol(tol);
    let sol = ode::integrate(
        |t, y, out| {
            let a = system_matrix(&h.at(t));
            let phi = DMatrix::from_row_slice(dim, dim, y);
            let d = a * phi;
            for (o, v) in out.iter_mut().zip(d.transpose().iter()) {
                // transpose iter yields row-major order of d
                *o = *v;
            }
        },
        t0,
        t1,
        &y0,
        &opts,
    )?;
    if let Some(err) = sol.termination.as_error(sol.t_end) {
        return Err(err.into());
    }
    Ok(StateTransition { n, sol })
}

/// Quadratic generating-function blocks at one time.
#[derive(Debug, Clone)]
pub struct GfBlocks {
    pub f11: DMatrix<f64>,
    pub f12: DMatrix<f64>,
    pub f21: DMatrix<f64>,
    pub f22: DMatrix<f64>,
}

impl GfBlocks {
    pub fn n(&self) -> usize {
        self.f11.nrows()
    }

    /// Evaluate the quadratic form `1/2 y^T G y` gradient pieces:
    /// returns `(F11 y1 + F12 y0, F21 y1 + F22 y0)`.
    pub fn gradients(&self, y1: &DVector<f64>, y0: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            &self.f11 * y1 + &self.f12 * y0,
            &self.f21 * y1 + &self.f22 * y0,
        )
    }
}

/// Quadratic generating-function path produced by direct integration of
/// the block matrix equations.
#[derive(Debug, Clone)]
pub struct QuadraticGf {
    n: usize,
    kind: GfKind,
    sol: OdeSolution,
}

impl QuadraticGf {
    pub fn kind(&self) -> GfKind {
        self.kind
    }

    pub fn span(&self) -> (f64, f64) {
        self.sol.span()
    }

    pub fn at(&self, t: f64) -> GfBlocks {
        unpack_gf_state(&self.sol.eval(t), self.n)
    }

    pub fn end(&self) -> GfBlocks {
        unpack_gf_state(&self.sol.y_end, self.n)
    }
}

/// Symmetric packing: `[F11 upper, F12 row-major, F22 upper]`; F21 is
/// `F12^T` by construction, which keeps the symmetry invariants exact.
fn pack_gf_state(blocks: &GfBlocks) -> Vec<f64> {
    let n = blocks.n();
    let mut y = Vec::with_capacity(n * (n + 1) + n * n);
    for i in 0..n {
        for j in i..n {
            y.push(blocks.f11[(i, j)]);
        }
    }
    for i in 0..n {
        for j in 0..n {
            y.push(blocks.f12[(i, j)]);
        }
    }
    for i in 0..n {
        for j in i..n {
            y.push(blocks.f22[(i, j)]);
        }
    }
    y
}

fn unpack_gf_state(y: &[f64], n: usize) -> GfBlocks {
    let mut f11 = DMatrix::zeros(n, n);
    let mut f12 = DMatrix::zeros(n, n);
    let mut f22 = DMatrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            f11[(i, j)] = y[idx];
            f11[(j, i)] = y[idx];
            idx += 1;
        }
    }
    for i in 0..n {
        for j in 0..n {
            f12[(i, j)] = y[idx];
            idx += 1;
        }
    }
    for i in 0..n {
        for j in i..n {
            f22[(i, j)] = y[idx];
            f22[(j, i)] = y[idx];
            idx += 1;
        }
    }
    let f21 = f12.transpose();
    GfBlocks { f11, f12, f21, f22 }
}

fn gf_rhs(kind: GfKind, h: &QuadBlocks, blocks: &GfBlocks) -> GfBlocks {
    let (d11, d12, d22) = match kind {
        GfKind::F1 | GfKind::F2 => {
            let d11 = -(&h.hqq
                + &h.hqp * &blocks.f11
                + &blocks.f11 * h.hpq()
                + &blocks.f11 * &h.hpp * &blocks.f11);
            let d12 = -((&h.hqp + &blocks.f11 * &h.hpp) * &blocks.f12);
            let d22 = -(blocks.f12.transpose() * &h.hpp * &blocks.f12);
            (d11, d12, d22)
        }
        GfKind::F3 | GfKind::F4 => {
            let d11 = -(&h.hpp
                - h.hpq() * &blocks.f11
                - &blocks.f11 * &h.hqp
                + &blocks.f11 * &h.hqq * &blocks.f11);
            let d12 = (h.hpq() - &blocks.f11 * &h.hqq) * &blocks.f12;
            let d22 = -(blocks.f12.transpose() * &h.hqq * &blocks.f12);
            (d11, d12, d22)
        }
    };
    let d21 = d12.transpose();
    GfBlocks {
        f11: d11,
        f12: d12,
        f21: d21,
        f22: d22,
    }
}

/// Integrate the block equations of `kind` from its identity initial
/// condition at `t0`. Only F2 and F3 admit one; F1 and F4 must be derived
/// from a state-transition path after the initial time.
pub fn integrate_quadratic_gf(
    h: &QuadraticHamiltonian,
    kind: GfKind,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<QuadraticGf, LinearGfError> {
    let n = h.n();
    let f12_sign = match kind {
        GfKind::F2 => 1.0,
        GfKind::F3 => -1.0,
        GfKind::F1 | GfKind::F4 => {
            return Err(LinearGfError::IdentitySingularAtStart(kind.name().into()))
        }
    };
    let ic = GfBlocks {
        f11: DMatrix::zeros(n, n),
        f12: DMatrix::identity(n, n) * f12_sign,
        f21: DMatrix::identity(n, n) * f12_sign,
        f22: DMatrix::zeros(n, n),
    };
    integrate_quadratic_gf_from(h, kind, &ic, t0, t1, tol)
}

/// Continue the block equations of `kind` from explicit initial blocks.
pub fn integrate_quadratic_gf_from(
    h: &QuadraticHamiltonian,
    kind: GfKind,
    initial: &GfBlocks,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<QuadraticGf, LinearGfError> {
    let n = h.n();
    let y0 = pack_gf_state(initial);
    let scale = y0.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let opts = OdeOptions {
        tol,
        max_norm: Some(1e9 * scale),
        ..Default::default()
    };
    let sol = ode::integrate(
        |t, y, out| {
            let blocks = unpack_gf_state(y, n);
            let d = gf_rhs(kind, &h.at(t), &blocks);
            out.copy_from_slice(&pack_gf_state(&d));
        },
        t0,
        t1,
        &y0,
        &opts,
    )?;
    match sol.termination {
        ode::Termination::Completed => Ok(QuadraticGf { n, kind, sol }),
        ode::Termination::StepUnderflow { t } | ode::Termination::NormExceeded { t } => {
            Err(LinearGfError::RiccatiBlowup {
                kind: kind.name().into(),
                t_last: sol.nodes.last().map(|n| n.t).unwrap_or(t0),
                t_fail: t,
            })
        }
        ode::Termination::NonFiniteRhs { t } => Err(OdeError::NonFiniteRhs { t }.into()),
    }
}

fn selection_matrices(partition: &BoundaryPartition) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = partition.n();
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
    (sel1, sel0, dep1, dep0)
}

/// Independent-variable map `M`: `[y1; y0] = M [q0; p0]`. The generating
/// function of the partition exists exactly where `M` is invertible.
pub fn partition_pivot_matrix(stm: &StmBlocks, partition: &BoundaryPartition) -> DMatrix<f64> {
    let n = stm.n();
    let (sel1, sel0, _, _) = selection_matrices(partition);
    let phi = stm.to_matrix();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, 2 * n)).copy_from(&(&sel1 * &phi));
    m.view_mut((n, 0), (n, 2 * n)).copy_from(&sel0);
    m
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
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

/// Generating-function blocks of an arbitrary partition from the
/// state-transition blocks at the same time.
pub fn gf_from_stm_partition(
    stm: &StmBlocks,
    partition: &BoundaryPartition,
    cond_limit: f64,
) -> Result<GfBlocks, LinearGfError> {
    let n = stm.n();
    let m = partition_pivot_matrix(stm, partition);
    let cond = condition_number(&m);
    if !cond.is_finite() || cond > cond_limit {
        let block = partition
            .kind()
            .map(|k| k.pivot_name().to_string())
            .unwrap_or_else(|| "partition pivot".to_string());
        return Err(LinearGfError::SingularPivot {
            kind: partition.label(),
            block,
            cond,
        });
    }
    let m_inv = m.try_inverse().expect("conditioned matrix inverts");
    let (_, _, dep1, dep0) = selection_matrices(partition);
    let phi = stm.to_matrix();
    let mut d = DMatrix::zeros(2 * n, 2 * n);
    d.view_mut((0, 0), (n, 2 * n)).copy_from(&(&dep1 * &phi));
    d.view_mut((n, 0), (n, 2 * n)).copy_from(&dep0);
    let g = d * m_inv;
    // The gradient matrix of a scalar quadratic form is symmetric; average
    // out the integration round-off.
    let g = (&g + g.transpose()) * 0.5;
    Ok(GfBlocks {
        f11: g.view((0, 0), (n, n)).into(),
        f12: g.view((0, n), (n, n)).into(),
        f21: g.view((n, 0), (n, n)).into(),
        f22: g.view((n, n), (n, n)).into(),
    })
}

/// Generating-function blocks of a classical kind from the
/// state-transition blocks at the same time.
pub fn gf_from_stm(stm: &StmBlocks, kind: GfKind) -> Result<GfBlocks, LinearGfError> {
    gf_from_stm_partition(stm, &kind.partition(stm.n()), DEFAULT_PIVOT_COND_LIMIT)
}

/// Inverse of [`gf_from_stm`]: reconstruct the state-transition blocks.
pub fn stm_from_gf(gf: &GfBlocks, kind: GfKind) -> Result<StmBlocks, LinearGfError> {
    let n = gf.n();
    let inv = |m: &DMatrix<f64>, name: &str| -> Result<DMatrix<f64>, LinearGfError> {
        let cond = condition_number(m);
        if !cond.is_finite() || cond > DEFAULT_PIVOT_COND_LIMIT {
            return Err(LinearGfError::SingularPivot {
                kind: kind.name().into(),
                block: name.into(),
                cond,
            });
        }
        Ok(m.clone().try_inverse().unwrap())
    };
    let blocks = match kind {
        GfKind::F2 => {
            let f21_inv = inv(&gf.f21, "F21")?;
            let qq = f21_inv.clone();
            let qp = -&f21_inv * &gf.f22;
            let pq = &gf.f11 * &f21_inv;
            let pp = &gf.f12 - &gf.f11 * &f21_inv * &gf.f22;
            StmBlocks { qq, qp, pq, pp }
        }
        GfKind::F1 => {
            let f21_inv = inv(&gf.f21, "F21")?;
            let qp = -f21_inv.clone();
            let qq = -&f21_inv * &gf.f22;
            let pp = -&gf.f11 * &f21_inv;
            let pq = &gf.f12 - &gf.f11 * &f21_inv * &gf.f22;
            StmBlocks { qq, qp, pq, pp }
        }
        GfKind::F3 => {
            let f21_inv = inv(&gf.f21, "F21")?;
            let pp = -f21_inv.clone();
            let pq = -&f21_inv * &gf.f22;
            let qp = &gf.f11 * &f21_inv;
            let qq = -&gf.f12 + &gf.f11 * &f21_inv * &gf.f22;
            StmBlocks { qq, qp, pq, pp }
        }
        GfKind::F4 => {
            let f21_inv = inv(&gf.f21, "F21")?;
            let pq = f21_inv.clone();
            let pp = -&f21_inv * &gf.f22;
            let qq = -&gf.f11 * &f21_inv;
            let qp = -&gf.f12 + &gf.f11 * &f21_inv * &gf.f22;
            StmBlocks { qq, qp, pq, pp }
        }
    };
    let _ = n;
    Ok(blocks)
}

/// Battin-style perturbation matrices with their symmetry defects.
#[derive(Debug, Clone)]
pub struct PerturbationMatrices {
    /// `C = Phi_pp Phi_qp^{-1}` (momentum from position when `dq0 = 0`).
    pub c: DMatrix<f64>,
    /// `C~ = Phi_pq Phi_qq^{-1}` (momentum from position when `dp0 = 0`).
    pub c_tilde: DMatrix<f64>,
    /// Relative symmetry defects `|X - X^T| / |X|`.
    pub c_defect: f64,
    pub c_tilde_defect: f64,
}

pub fn perturbation_matrices(stm: &StmBlocks) -> Result<PerturbationMatrices, LinearGfError> {
    let inv = |m: &DMatrix<f64>, block: &str| -> Result<DMatrix<f64>, LinearGfError> {
        let cond = condition_number(m);
        if !cond.is_finite() || cond > DEFAULT_PIVOT_COND_LIMIT {
            return Err(LinearGfError::SingularPivot {
                kind: "perturbation".into(),
                block: block.into(),
                cond,
            });
        }
        Ok(m.clone().try_inverse().unwrap())
    };
    let c = &stm.pp * inv(&stm.qp, "Phi_qp")?;
    let c_tilde = &stm.pq * inv(&stm.qq, "Phi_qq")?;
    let defect = |m: &DMatrix<f64>| (m - m.transpose()).norm() / m.norm().max(f64::MIN_POSITIVE);
    Ok(PerturbationMatrices {
        c_defect: defect(&c),
        c_tilde_defect: defect(&c_tilde),
        c,
        c_tilde,
    })
}

/// Times in the path's span where the pivot block of `kind` is singular.
///
/// The determinant of the pivot block is sampled on a uniform grid
/// (`samples_per_unit` points per unit time) and every sign change is
/// bisected down to 1e-8 in time.
pub fn detect_singularity(
    path: &StateTransition,
    kind: GfKind,
    samples_per_unit: f64,
) -> Vec<f64> {
    detect_zero_crossings(path, samples_per_unit, &|blocks| {
        blocks.block(kind).determinant()
    })
}

/// Singularity times of an arbitrary partition (determinant of the
/// independent-variable map).
pub fn detect_singularity_partition(
    path: &StateTransition,
    partition: &BoundaryPartition,
    samples_per_unit: f64,
) -> Vec<f64> {
    detect_zero_crossings(path, samples_per_unit, &|blocks| {
        partition_pivot_matrix(blocks, partition).determinant()
    })
}

fn detect_zero_crossings(
    path: &StateTransition,
    samples_per_unit: f64,
    g: &dyn Fn(&StmBlocks) -> f64,
) -> Vec<f64> {
    let (t0, t1) = path.span();
    let span = (t1 - t0).abs();
    if span == 0.0 {
        return Vec::new();
    }
    let count = ((span * samples_per_unit).ceil() as usize).max(2);
    let dt = (t1 - t0) / count as f64;
    let eval = |t: f64| g(&path.at(t));
    let mut roots = Vec::new();
    let mut prev_t = t0;
    let mut prev_g = eval(prev_t);
    for i in 1..=count {
        let t = t0 + dt * i as f64;
        let gt = eval(t);
        if prev_g == 0.0 {
            roots.push(prev_t);
        } else if gt == 0.0 && i == count {
            roots.push(t);
        } else if (prev_g > 0.0) != (gt > 0.0) {
            let (mut lo, mut hi, mut glo) = (prev_t, t, prev_g);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                let gm = eval(mid);
                if gm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (gm > 0.0) == (glo > 0.0) {
                    lo = mid;
                    glo = gm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev_t = t;
        prev_g = gt;
    }
    roots
}

/// Solve a linear two-point boundary value problem: given the independent
/// values of `partition` at both endpoints, return the full flat states
/// `([q0, p0], [q1, p1])`.
pub fn solve_linear_boundary(
    stm: &StmBlocks,
    partition: &BoundaryPartition,
    endpoint1: &[f64],
    endpoint0: &[f64],
    cond_limit: f64,
) -> Result<(Vec<f64>, Vec<f64>), LinearGfError> {
    let n = stm.n();
    let m = partition_pivot_matrix(stm, partition);
    let cond = condition_number(&m);
    if !cond.is_finite() || cond > cond_limit {
        let block = partition
            .kind()
            .map(|k| k.pivot_name().to_string())
            .unwrap_or_else(|| "partition pivot".to_string());
        return Err(LinearGfError::SingularPivot {
            kind: partition.label(),
            block,
            cond,
        });
    }
    let mut rhs = DVector::zeros(2 * n);
    rhs.rows_mut(0, n).copy_from_slice(endpoint1);
    rhs.rows_mut(n, n).copy_from_slice(endpoint0);
    let z0 = m.lu().solve(&rhs).expect("conditioned matrix solves");
    let z1 = stm.to_matrix() * &z0;
    Ok((z0.as_slice().to_vec(), z1.as_slice().to_vec()))
}
