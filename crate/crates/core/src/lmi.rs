//! H2 analysis LMIs.
//!
//! Two formulations:
//!
//! - the mode-enumerated conditions, with one pair of LMIs per topology
//!   summed over all loss patterns and a full `N n_x` Lyapunov matrix;
//! - the agent-count-independent conditions, which only involve the agent
//!   blocks evaluated at the two spectral bounds `λ̲, λ̄`.
//!
//! A certificate of the second kind lifts to one of the first kind; see
//! [`verify_certificate_lifting`].

use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::graphs::{check_probability, GraphError};
use crate::linalg::{is_schur_stable, max_eigenvalue, LinalgError, Matrix};
use crate::model::{
    assemble_mode, disagreement_projection, mode_distribution, DecomposableMatrices, ModelError,
    SwitchedMas,
};
use crate::sdp::{
    self, AffineMatrixOperator, SdpError, SdpProblem, SdpStatus, SolveOptions, VarId,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmiError {
    #[error(
        "A^d is not Schur stable, so the non-deflated conditions can never hold; \
         use the deflated analysis (disagreement dynamics only)"
    )]
    DecoupledUnstable,
    #[error(
        "no certificate at these bounds (solver status {status:?}); the conditions are \
         sufficient only, so this does not show the system is unstable"
    )]
    NoCertificate { status: SdpStatus },
    #[error("solver returned a point violating {label} (max eigenvalue {max_eigenvalue:e})")]
    ResidualCheck {
        label: &'static str,
        max_eigenvalue: f64,
    },
    #[error("spectral bounds must satisfy 0 < lo <= hi, got ({lo}, {hi})")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("need at least two agents, got {0}")]
    TooFewAgents(usize),
    #[error("certificate has {found} Lyapunov size, model needs {expected}")]
    CertificateShape { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Agent blocks collapsed onto one Laplacian eigenvalue `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMatrices {
    pub lambda: f64,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    /// `2p(1-p)λ`
    pub p_bar: f64,
}

impl ReducedMatrices {
    pub fn at(blocks: &DecomposableMatrices, p: f64, lambda: f64) -> Self {
        ReducedMatrices {
            lambda,
            a: blocks.a.reduced(p, lambda),
            b: blocks.b.reduced(p, lambda),
            c: blocks.c.reduced(p, lambda),
            d: blocks.d.reduced(p, lambda),
            p_bar: 2.0 * p * (1.0 - p) * lambda,
        }
    }
}

/// Everything the agent-count-independent analysis needs. No graphs are
/// involved beyond their spectral bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInstance {
    pub n_agents: usize,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub p: f64,
    pub blocks: DecomposableMatrices,
}

impl BoundInstance {
    pub fn new(
        n_agents: usize,
        lambda_lo: f64,
        lambda_hi: f64,
        p: f64,
        blocks: DecomposableMatrices,
    ) -> Result<Self, LmiError> {
        if n_agents < 2 {
            return Err(LmiError::TooFewAgents(n_agents));
        }
        if !(lambda_lo > 0.0 && lambda_lo <= lambda_hi && lambda_hi.is_finite()) {
            return Err(LmiError::InvalidBounds {
                lo: lambda_lo,
                hi: lambda_hi,
            });
        }
        check_probability(p)?;
        Ok(BoundInstance {
            n_agents,
            lambda_lo,
            lambda_hi,
            p,
            blocks,
        })
    }

    pub fn from_mas(mas: &SwitchedMas) -> Result<Self, LmiError> {
        BoundInstance::new(
            mas.n_agents(),
            mas.family.lambda_lo(),
            mas.family.lambda_hi(),
            mas.p,
            mas.blocks.clone(),
        )
    }

    pub fn lambdas(&self) -> [f64; 2] {
        [self.lambda_lo, self.lambda_hi]
    }
}

/// Which inequality of the agent-count-independent family a constraint or
/// residual belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// State Gramian on the disagreement modes.
    DisagreementState,
    /// Input Gramian on the disagreement modes.
    DisagreementInput,
    /// State Gramian on the average mode.
    AverageState,
    /// Input Gramian on the average mode.
    AverageInput,
    /// `Q ≻ 0`.
    Positivity,
}

impl Condition {
    pub fn label(self) -> &'static str {
        match self {
            Condition::DisagreementState => "disagreement state LMI",
            Condition::DisagreementInput => "disagreement input LMI",
            Condition::AverageState => "average state LMI",
            Condition::AverageInput => "average input LMI",
            Condition::Positivity => "Q > 0",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The SDP together with its variable handles.
#[derive(Debug, Clone)]
pub struct BoundProblem {
    pub sdp: SdpProblem,
    pub q: VarId,
    pub z1: VarId,
    pub z2: Option<VarId>,
    /// One entry per constraint, in order.
    pub conditions: Vec<(Condition, Option<f64>)>,
    pub deflated: bool,
}

pub fn build_mas_bound_problem(
    mas: &SwitchedMas,
    deflated: bool,
) -> Result<BoundProblem, LmiError> {
    build_bound_problem(&BoundInstance::from_mas(mas)?, deflated)
}

/// Builds the agent-count-independent SDP. Without `deflated` the average
/// mode conditions are included, which requires `A^d` to be Schur stable.
pub fn build_bound_problem(
    inst: &BoundInstance,
    deflated: bool,
) -> Result<BoundProblem, LmiError> {
    let blocks = &inst.blocks;
    if !deflated && !is_schur_stable(&blocks.a.decoupled) {
        return Err(LmiError::DecoupledUnstable);
    }
    let mut sdp = SdpProblem::new();
    let q = sdp.add_variable(blocks.n_x());
    let z1 = sdp.add_variable(blocks.n_w());
    let z2 = (!deflated).then(|| sdp.add_variable(blocks.n_w()));
    let mut conditions = Vec::new();

    let ac = &blocks.a.coupled;
    let bc = &blocks.b.coupled;
    let cc = &blocks.c.coupled;
    let dc = &blocks.d.coupled;
    for lambda in inst.lambdas() {
        let r = ReducedMatrices::at(blocks, inst.p, lambda);

        let mut constant = gram(&r.c);
        constant.axpy(r.p_bar, &gram(cc));
        let mut op = AffineMatrixOperator::new(constant);
        op.add_linear_map(&sdp, q, |e| {
            let mut m = r.a.congruence(e);
            m.axpy(r.p_bar, &ac.congruence(e));
            m.axpy(-1.0, e);
            m
        });
        sdp.add_constraint(op)?;
        conditions.push((Condition::DisagreementState, Some(lambda)));

        let mut constant = gram(&r.d);
        constant.axpy(r.p_bar, &gram(dc));
        let mut op = AffineMatrixOperator::new(constant);
        op.add_linear_map(&sdp, q, |e| {
            let mut m = r.b.congruence(e);
            m.axpy(r.p_bar, &bc.congruence(e));
            m
        });
        op.add_linear_map(&sdp, z1, |e| e.scale(-1.0));
        sdp.add_constraint(op)?;
        conditions.push((Condition::DisagreementInput, Some(lambda)));
    }

    if let Some(z2) = z2 {
        let ad = &blocks.a.decoupled;
        let bd = &blocks.b.decoupled;
        let mut op = AffineMatrixOperator::new(gram(&blocks.c.decoupled));
        op.add_linear_map(&sdp, q, |e| &ad.congruence(e) - e);
        sdp.add_constraint(op)?;
        conditions.push((Condition::AverageState, None));

        let mut op = AffineMatrixOperator::new(gram(&blocks.d.decoupled));
        op.add_linear_map(&sdp, q, |e| bd.congruence(e));
        op.add_linear_map(&sdp, z2, |e| e.scale(-1.0));
        sdp.add_constraint(op)?;
        conditions.push((Condition::AverageInput, None));
        sdp.add_trace_objective(z2, 1.0);
    }

    sdp.add_positive_definite(q)?;
    conditions.push((Condition::Positivity, None));
    sdp.add_trace_objective(z1, (inst.n_agents - 1) as f64);

    Ok(BoundProblem {
        sdp,
        q,
        z1,
        z2,
        conditions,
        deflated,
    })
}

/// `MᵀM`
fn gram(m: &Matrix) -> Matrix {
    &m.transpose() * m
}

/// Most positive eigenvalue of one certificate inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub condition: Condition,
    pub lambda: Option<f64>,
    pub max_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiCertificate {
    pub q: Matrix,
    pub z1: Matrix,
    pub z2: Option<Matrix>,
    /// `γ² = trace(Z_1)`
    pub gamma: f64,
    /// `β² = trace(Z_2)`; zero when deflated.
    pub beta: f64,
    pub deflated: bool,
    pub h2_bound: f64,
    pub n_agents: usize,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub p: f64,
    /// Recomputed from the returned matrices, independently of the solver.
    pub residuals: Vec<Residual>,
    /// Largest shift `ε` used to make the inequalities strict.
    pub strictness: f64,
    pub iterations: usize,
    pub status: SdpStatus,
}

impl LmiCertificate {
    pub fn max_residual(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.max_eigenvalue)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `β² + (N-1) γ²`, the certified bound on the squared H2 norm.
    pub fn h2_squared(&self) -> f64 {
        self.beta * self.beta + (self.n_agents as f64 - 1.0) * self.gamma * self.gamma
    }
}

pub fn solve_h2_bound(mas: &SwitchedMas, deflated: bool) -> Result<LmiCertificate, LmiError> {
    solve_bound(
        &BoundInstance::from_mas(mas)?,
        deflated,
        &SolveOptions::default(),
    )
}

/// Minimal `β² + (N-1)γ²` certified by the agent-count-independent LMIs.
pub fn solve_bound(
    inst: &BoundInstance,
    deflated: bool,
    opts: &SolveOptions,
) -> Result<LmiCertificate, LmiError> {
    let prob = build_bound_problem(inst, deflated)?;
    let sol = sdp::solve(&prob.sdp, opts)?;
    if sol.status != SdpStatus::Optimal {
        return Err(LmiError::NoCertificate { status: sol.status });
    }
    let q = prob.sdp.value(&sol.x, prob.q);
    let z1 = prob.sdp.value(&sol.x, prob.z1);
    let z2 = prob.z2.map(|v| prob.sdp.value(&sol.x, v));
    let residuals = bound_residuals(inst, &q, &z1, z2.as_ref())?;
    if let Some(bad) = residuals.iter().find(|r| !(r.max_eigenvalue < 0.0)) {
        return Err(LmiError::ResidualCheck {
            label: bad.condition.label(),
            max_eigenvalue: bad.max_eigenvalue,
        });
    }
    let gamma = libm::sqrt(z1.trace().max(0.0));
    let beta = z2.as_ref().map_or(0.0, |z| libm::sqrt(z.trace().max(0.0)));
    let n = inst.n_agents as f64;
    let h2_bound = libm::sqrt(beta * beta + (n - 1.0) * gamma * gamma);
    Ok(LmiCertificate {
        q,
        z1,
        z2,
        gamma,
        beta,
        deflated,
        h2_bound,
        n_agents: inst.n_agents,
        lambda_lo: inst.lambda_lo,
        lambda_hi: inst.lambda_hi,
        p: inst.p,
        residuals,
        strictness: sol.strictness.iter().copied().fold(0.0, f64::max),
        iterations: sol.iterations,
        status: sol.status,
    })
}

/// Evaluates every inequality at the given matrices by direct substitution.
pub fn bound_residuals(
    inst: &BoundInstance,
    q: &Matrix,
    z1: &Matrix,
    z2: Option<&Matrix>,
) -> Result<Vec<Residual>, LmiError> {
    let blocks = &inst.blocks;
    let mut out = Vec::new();
    for lambda in inst.lambdas() {
        let r = ReducedMatrices::at(blocks, inst.p, lambda);
        let mut state = r.a.congruence(q);
        state.axpy(1.0, &gram(&r.c));
        state.axpy(r.p_bar, &blocks.a.coupled.congruence(q));
        state.axpy(r.p_bar, &gram(&blocks.c.coupled));
        state.axpy(-1.0, q);
        out.push(Residual {
            condition: Condition::DisagreementState,
            lambda: Some(lambda),
            max_eigenvalue: max_eigenvalue(&state.symmetrize())?,
        });

        let mut input = r.b.congruence(q);
        input.axpy(1.0, &gram(&r.d));
        input.axpy(r.p_bar, &blocks.b.coupled.congruence(q));
        input.axpy(r.p_bar, &gram(&blocks.d.coupled));
        input.axpy(-1.0, z1);
        out.push(Residual {
            condition: Condition::DisagreementInput,
            lambda: Some(lambda),
            max_eigenvalue: max_eigenvalue(&input.symmetrize())?,
        });
    }
    if let Some(z2) = z2 {
        let mut state = blocks.a.decoupled.congruence(q);
        state.axpy(1.0, &gram(&blocks.c.decoupled));
        state.axpy(-1.0, q);
        out.push(Residual {
            condition: Condition::AverageState,
            lambda: None,
            max_eigenvalue: max_eigenvalue(&state.symmetrize())?,
        });
        let mut input = blocks.b.decoupled.congruence(q);
        input.axpy(1.0, &gram(&blocks.d.decoupled));
        input.axpy(-1.0, z2);
        out.push(Residual {
            condition: Condition::AverageInput,
            lambda: None,
            max_eigenvalue: max_eigenvalue(&input.symmetrize())?,
        });
    }
    out.push(Residual {
        condition: Condition::Positivity,
        lambda: None,
        max_eigenvalue: max_eigenvalue(&q.scale(-1.0))?,
    });
    Ok(out)
}

/// Mode matrices of every loss pattern of topology `j` with probabilities,
/// optionally restricted to the disagreement space.
fn weighted_modes(
    mas: &SwitchedMas,
    j: usize,
    u: Option<&Matrix>,
) -> Result<Vec<(f64, crate::model::ModeMatrices)>, LmiError> {
    let dist = mode_distribution(mas, j)?;
    let mut out = Vec::with_capacity(dist.modes.len());
    for mode in &dist.modes {
        let m = assemble_mode(&mas.blocks, &mode.lossy_laplacian, &dist.laplacian)?;
        let m = match u {
            Some(u) => m.project(u, &mas.blocks),
            None => m,
        };
        out.push((mode.probability, m));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ModeProblem {
    pub sdp: SdpProblem,
    pub q: VarId,
    pub z: VarId,
    pub projected: bool,
}

/// Builds the mode-enumerated SDP with a full Lyapunov matrix. With
/// `projected`, every mode is restricted to the disagreement space first.
pub fn build_mode_problem(
    mas: &SwitchedMas,
    projected: bool,
) -> Result<ModeProblem, LmiError> {
    let n = mas.n_agents();
    let u = if projected {
        Some(disagreement_projection(n)?)
    } else {
        None
    };
    let copies = if projected { n - 1 } else { n };
    let n_w_lift = copies * mas.blocks.n_w();
    let mut sdp = SdpProblem::new();
    let q = sdp.add_variable(copies * mas.blocks.n_x());
    let z = sdp.add_variable(copies * mas.blocks.n_w());
    for j in 0..mas.family.len() {
        let modes = weighted_modes(mas, j, u.as_ref())?;

        let mut constant = Matrix::zeros(copies * mas.blocks.n_x(), copies * mas.blocks.n_x());
        for (t, m) in &modes {
            constant.axpy(*t, &gram(&m.c));
        }
        let mut op = AffineMatrixOperator::new(constant);
        op.add_linear_map(&sdp, q, |e| {
            let mut acc = e.scale(-1.0);
            for (t, m) in &modes {
                acc.axpy(*t, &m.a.congruence(e));
            }
            acc
        });
        sdp.add_constraint(op)?;

        let mut constant = Matrix::zeros(n_w_lift, n_w_lift);
        for (t, m) in &modes {
            constant.axpy(*t, &gram(&m.d));
        }
        let mut op = AffineMatrixOperator::new(constant);
        op.add_linear_map(&sdp, q, |e| {
            let mut acc = Matrix::zeros(n_w_lift, n_w_lift);
            for (t, m) in &modes {
                acc.axpy(*t, &m.b.congruence(e));
            }
            acc
        });
        op.add_linear_map(&sdp, z, |e| e.scale(-1.0));
        sdp.add_constraint(op)?;
    }
    sdp.add_positive_definite(q)?;
    sdp.add_trace_objective(z, 1.0);
    Ok(ModeProblem {
        sdp,
        q,
        z,
        projected,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSolution {
    pub q: Matrix,
    pub z: Matrix,
    /// Certified bound on the squared H2 norm.
    pub trace_z: f64,
    pub max_residual: f64,
    pub status: SdpStatus,
}

pub fn solve_mode_lmis(mas: &SwitchedMas, projected: bool) -> Result<ModeSolution, LmiError> {
    let prob = build_mode_problem(mas, projected)?;
    let sol = sdp::solve(&prob.sdp, &SolveOptions::default())?;
    if sol.status != SdpStatus::Optimal {
        return Err(LmiError::NoCertificate { status: sol.status });
    }
    let z = prob.sdp.value(&sol.x, prob.z);
    Ok(ModeSolution {
        q: prob.sdp.value(&sol.x, prob.q),
        trace_z: z.trace(),
        z,
        max_residual: prob.sdp.max_constraint_eigenvalue(&sol.x)?,
        status: sol.status,
    })
}

/// Residuals of the mode-enumerated LMIs for one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyResidual {
    pub topology: usize,
    pub state: f64,
    pub input: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftingReport {
    pub topologies: Vec<TopologyResidual>,
    /// `trace(Z)` of the lifted certificate.
    pub lifted_trace: f64,
}

impl LiftingReport {
    pub fn passed(&self) -> bool {
        self.first_failure().is_none()
    }

    pub fn first_failure(&self) -> Option<&TopologyResidual> {
        self.topologies
            .iter()
            .find(|t| !(t.state < 0.0 && t.input < 0.0))
    }

    pub fn max_residual(&self) -> f64 {
        self.topologies
            .iter()
            .flat_map(|t| [t.state, t.input])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Lifts a bound certificate to a block-diagonal solution of the
/// mode-enumerated LMIs for `mas` and evaluates them per topology.
///
/// `Q ↦ I ⊗ Q`; `Z ↦ (11ᵀ/N) ⊗ Z_2 + (I - 11ᵀ/N) ⊗ Z_1`, or in deflated
/// mode everything lives on the disagreement space and `Z ↦ I ⊗ Z_1`.
pub fn verify_certificate_lifting(
    mas: &SwitchedMas,
    cert: &LmiCertificate,
) -> Result<LiftingReport, LmiError> {
    let n = mas.n_agents();
    if cert.q.rows() != mas.blocks.n_x() {
        return Err(LmiError::CertificateShape {
            expected: mas.blocks.n_x(),
            found: cert.q.rows(),
        });
    }
    let (u, q_lift, z_lift) = if cert.deflated {
        let eye = Matrix::identity(n - 1);
        (
            Some(disagreement_projection(n)?),
            eye.kron(&cert.q),
            eye.kron(&cert.z1),
        )
    } else {
        let avg = Matrix::from_vec(n, n, alloc::vec![1.0 / n as f64; n * n]);
        let dis = &Matrix::identity(n) - &avg;
        let mut z = dis.kron(&cert.z1);
        if let Some(z2) = &cert.z2 {
            z.axpy(1.0, &avg.kron(z2));
        }
        (None, Matrix::identity(n).kron(&cert.q), z)
    };
    let mut topologies = Vec::with_capacity(mas.family.len());
    for j in 0..mas.family.len() {
        let modes = weighted_modes(mas, j, u.as_ref())?;
        let mut state = q_lift.scale(-1.0);
        let mut input = z_lift.scale(-1.0);
        for (t, m) in &modes {
            state.axpy(*t, &m.a.congruence(&q_lift));
            state.axpy(*t, &gram(&m.c));
            input.axpy(*t, &m.b.congruence(&q_lift));
            input.axpy(*t, &gram(&m.d));
        }
        topologies.push(TopologyResidual {
            topology: j,
            state: max_eigenvalue(&state.symmetrize())?,
            input: max_eigenvalue(&input.symmetrize())?,
        });
    }
    Ok(LiftingReport {
        topologies,
        lifted_trace: z_lift.trace(),
    })
}
