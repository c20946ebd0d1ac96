//! Small dense semidefinite programs with affine LMI constraints.
//!
//! Decision variables are symmetric matrices, vectorized over their upper
//! triangle: coordinate `(i, j)` with `i <= j` multiplies the basis matrix
//! that has ones at `(i, j)` and `(j, i)`. Every constraint
//! `F(x) = F_0 + Σ x_k F_k` is required to be negative definite.
//!
//! The solver is a two-phase primal barrier method. Phase I minimizes `t`
//! subject to `F_l(x) + ε_l I ⪯ t I` until `t` drops below the feasibility
//! margin. Phase II follows the central path of
//! `cᵀx + μ Σ_l -log det(-(F_l(x) + ε_l I))`, shrinking `μ` geometrically
//! and taking damped Newton steps with backtracking. The shift `ε_l` turns
//! the strict inequalities into closed ones with a reported margin.
//!
//! Phase I also confines the coordinates to a large box. Without it the
//! central path of an infeasible problem can run off to infinity along a
//! direction that loosens one constraint and leaves the others alone, so
//! `Infeasible` means "no solution inside the box".

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

pub use crate::linalg::eig_sym;
use crate::linalg::{max_eigenvalue, Cholesky, LinalgError, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("constraint {constraint}: {reason}")]
    Malformed {
        constraint: usize,
        reason: &'static str,
    },
    #[error("numerical breakdown in phase {phase} after {iterations} Newton steps")]
    NumericalBreakdown { phase: u8, iterations: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Handle to a symmetric matrix variable of an [`SdpProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// `constant + Σ x_k coeff_k` over the decision coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrixOperator {
    constant: Matrix,
    coeffs: Vec<(usize, Matrix)>,
}

impl AffineMatrixOperator {
    pub fn new(constant: Matrix) -> Self {
        AffineMatrixOperator {
            constant,
            coeffs: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.rows()
    }

    pub fn constant(&self) -> &Matrix {
        &self.constant
    }

    pub fn coeffs(&self) -> &[(usize, Matrix)] {
        &self.coeffs
    }

    /// Adds `m` to the constant term.
    pub fn add_constant(&mut self, m: &Matrix) {
        self.constant.axpy(1.0, m);
    }

    /// Adds `x_coord * m`; repeated coordinates are merged.
    pub fn add_term(&mut self, coord: usize, m: Matrix) {
        if m.is_zero() {
            return;
        }
        match self.coeffs.iter_mut().find(|(c, _)| *c == coord) {
            Some((_, existing)) => existing.axpy(1.0, &m),
            None => self.coeffs.push((coord, m)),
        }
    }

    /// Adds `map(X)` for the symmetric variable `var`, where `map` is linear.
    pub fn add_linear_map<F>(&mut self, problem: &SdpProblem, var: VarId, map: F)
    where
        F: Fn(&Matrix) -> Matrix,
    {
        let size = problem.var_size(var);
        for (coord, i, j) in problem.basis(var) {
            self.add_term(coord, map(&basis_matrix(size, i, j)));
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Matrix {
        let mut m = self.constant.clone();
        for (k, f) in &self.coeffs {
            m.axpy(x[*k], f);
        }
        m
    }

    /// Returns a copy with the constant term scaled by `s`.
    pub fn with_scaled_constant(&self, s: f64) -> Self {
        AffineMatrixOperator {
            constant: self.constant.scale(s),
            coeffs: self.coeffs.clone(),
        }
    }
}

/// Symmetric matrix with ones at `(i, j)` and `(j, i)`.
pub fn basis_matrix(size: usize, i: usize, j: usize) -> Matrix {
    let mut m = Matrix::zeros(size, size);
    m[(i, j)] = 1.0;
    m[(j, i)] = 1.0;
    m
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SdpProblem {
    var_sizes: Vec<usize>,
    offsets: Vec<usize>,
    n_coords: usize,
    constraints: Vec<AffineMatrixOperator>,
    objective: Vec<f64>,
}

impl SdpProblem {
    pub fn new() -> Self {
        SdpProblem::default()
    }

    pub fn add_variable(&mut self, size: usize) -> VarId {
        let id = VarId(self.var_sizes.len());
        self.var_sizes.push(size);
        self.offsets.push(self.n_coords);
        self.n_coords += size * (size + 1) / 2;
        self.objective.resize(self.n_coords, 0.0);
        id
    }

    pub fn var_size(&self, var: VarId) -> usize {
        self.var_sizes[var.0]
    }

    pub fn n_coords(&self) -> usize {
        self.n_coords
    }

    /// Coordinate of entry `(i, j)` of `var`.
    pub fn coord(&self, var: VarId, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let n = self.var_sizes[var.0];
        // Rows before i hold n + (n-1) + … + (n-i+1) entries.
        self.offsets[var.0] + i * (2 * n - i + 1) / 2 + (j - i)
    }

    /// `(coordinate, i, j)` over the upper triangle of `var`.
    pub fn basis(&self, var: VarId) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let n = self.var_sizes[var.0];
        let offset = self.offsets[var.0];
        (0..n)
            .flat_map(move |i| (i..n).map(move |j| (i, j)))
            .enumerate()
            .map(move |(k, (i, j))| (offset + k, i, j))
    }

    /// Requires `op(x) ≺ 0`.
    pub fn add_constraint(&mut self, op: AffineMatrixOperator) -> Result<usize, SdpError> {
        let index = self.constraints.len();
        if !op.constant.is_square() {
            return Err(SdpError::Malformed {
                constraint: index,
                reason: "constant term is not square",
            });
        }
        op.constant
            .check_symmetric(1e-10)
            .map_err(|_| SdpError::Malformed {
                constraint: index,
                reason: "constant term is not symmetric",
            })?;
        for (coord, m) in &op.coeffs {
            if *coord >= self.n_coords {
                return Err(SdpError::Malformed {
                    constraint: index,
                    reason: "coefficient references an undeclared coordinate",
                });
            }
            if m.shape() != op.constant.shape() {
                return Err(SdpError::Malformed {
                    constraint: index,
                    reason: "coefficient dimension differs from constant",
                });
            }
            m.check_symmetric(1e-10).map_err(|_| SdpError::Malformed {
                constraint: index,
                reason: "coefficient is not symmetric",
            })?;
        }
        self.constraints.push(op);
        Ok(index)
    }

    /// Requires `var ≻ 0`.
    pub fn add_positive_definite(&mut self, var: VarId) -> Result<usize, SdpError> {
        let n = self.var_size(var);
        let mut op = AffineMatrixOperator::new(Matrix::zeros(n, n));
        op.add_linear_map(self, var, |e| e.scale(-1.0));
        self.add_constraint(op)
    }

    /// Adds `weight * trace(var)` to the objective.
    pub fn add_trace_objective(&mut self, var: VarId, weight: f64) {
        let n = self.var_size(var);
        for i in 0..n {
            let c = self.coord(var, i, i);
            self.objective[c] += weight;
        }
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn set_objective_coeff(&mut self, coord: usize, value: f64) {
        self.objective[coord] = value;
    }

    pub fn constraints(&self) -> &[AffineMatrixOperator] {
        &self.constraints
    }

    pub fn constraints_mut(&mut self) -> &mut [AffineMatrixOperator] {
        &mut self.constraints
    }

    /// Value of symmetric variable `var` at `x`.
    pub fn value(&self, x: &[f64], var: VarId) -> Matrix {
        let n = self.var_size(var);
        let mut m = Matrix::zeros(n, n);
        for (coord, i, j) in self.basis(var) {
            m[(i, j)] = x[coord];
            m[(j, i)] = x[coord];
        }
        m
    }

    /// Largest eigenvalue over all constraints at `x`.
    pub fn max_constraint_eigenvalue(&self, x: &[f64]) -> Result<f64, SdpError> {
        let mut worst = f64::NEG_INFINITY;
        for op in &self.constraints {
            worst = worst.max(max_eigenvalue(&op.evaluate(x))?);
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Newton steps across both phases.
    pub max_iterations: usize,
    pub feasibility_margin: f64,
    /// Stop once `μ · Σ dim(F_l)` falls below this times `1 + |cᵀx|`.
    pub gap_tolerance: f64,
    pub mu0: f64,
    pub mu_factor: f64,
    pub backtrack_factor: f64,
    pub armijo: f64,
    /// `ε_l = strictness * (1 + ‖F_l,0‖_F)`.
    pub strictness: f64,
    pub record_trace: bool,
    /// Phase I keeps every coordinate within `±phase1_box * (1 + max_l ‖F_l,0‖_F)`
    /// so that infeasible problems have a bounded central path.
    pub phase1_box: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iterations: 500,
            feasibility_margin: 1e-9,
            gap_tolerance: 1e-8,
            mu0: 1.0,
            mu_factor: 0.2,
            backtrack_factor: 0.5,
            armijo: 0.01,
            strictness: 1e-9,
            record_trace: false,
            phase1_box: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub iteration: usize,
    pub phase: u8,
    pub mu: f64,
    pub objective: f64,
    pub max_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub status: SdpStatus,
    /// Most positive constraint eigenvalue at `x`.
    pub margin: f64,
    pub iterations: usize,
    /// Shift `ε_l` applied to each constraint.
    pub strictness: Vec<f64>,
    pub trace: Vec<IterateRecord>,
}

const NEWTON_TOL: f64 = 1e-10;

/// Constraint set seen by the barrier, optionally with the Phase I slack
/// coordinate `t` entering as `-t I`.
struct Barrier<'a> {
    ops: &'a [AffineMatrixOperator],
    shifts: &'a [f64],
    slack: Option<usize>,
    /// Radius of the box barrier on the first `n_box` coordinates.
    bound: Option<(f64, usize)>,
    dim: usize,
}

impl Barrier<'_> {
    fn total_size(&self) -> f64 {
        let boxed = self.bound.map_or(0, |(_, n)| 2 * n);
        (self.ops.iter().map(|o| o.dim()).sum::<usize>() + boxed) as f64
    }

    /// `S_l = -(F_l(x) + ε_l I - t I)`
    fn slack_matrix(&self, l: usize, y: &[f64]) -> Matrix {
        let op = &self.ops[l];
        let mut s = op.evaluate(y).scale(-1.0);
        let mut diag = -self.shifts[l];
        if let Some(t) = self.slack {
            diag += y[t];
        }
        for i in 0..s.rows() {
            s[(i, i)] += diag;
        }
        s
    }

    fn value(&self, y: &[f64]) -> Option<f64> {
        let mut phi = 0.0;
        for l in 0..self.ops.len() {
            let chol = Cholesky::new(&self.slack_matrix(l, y))?;
            phi -= chol.log_det();
        }
        if let Some((r, n)) = self.bound {
            for &x in &y[..n] {
                if !(x.abs() < r) {
                    return None;
                }
                phi -= libm::log(r - x) + libm::log(r + x);
            }
        }
        phi.is_finite().then_some(phi)
    }

    fn gradient_hessian(&self, y: &[f64]) -> Option<(Vec<f64>, Matrix)> {
        let mut g = vec![0.0; self.dim];
        let mut h = Matrix::zeros(self.dim, self.dim);
        for l in 0..self.ops.len() {
            let chol = Cholesky::new(&self.slack_matrix(l, y))?;
            let s_inv = chol.inverse();
            let mut ws: Vec<(usize, Matrix)> = self.ops[l]
                .coeffs
                .iter()
                .map(|(k, f)| (*k, &s_inv * f))
                .collect();
            if let Some(t) = self.slack {
                ws.push((t, s_inv.scale(-1.0)));
            }
            for (a, (ka, wa)) in ws.iter().enumerate() {
                g[*ka] += wa.trace();
                for (kb, wb) in &ws[a..] {
                    let n = wa.rows();
                    let mut tr = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            tr += wa[(i, j)] * wb[(j, i)];
                        }
                    }
                    h[(*ka, *kb)] += tr;
                    if ka != kb {
                        h[(*kb, *ka)] += tr;
                    }
                }
            }
        }
        if let Some((r, n)) = self.bound {
            for k in 0..n {
                let (up, down) = (1.0 / (r - y[k]), 1.0 / (r + y[k]));
                g[k] += up - down;
                h[(k, k)] += up * up + down * down;
            }
        }
        Some((g, h))
    }
}

enum Centering {
    Centered,
    Stopped,
    Exhausted,
}

struct Run<'a> {
    opts: &'a SolveOptions,
    problem: &'a SdpProblem,
    iterations: usize,
    trace: Vec<IterateRecord>,
}

impl Run<'_> {
    fn record(&mut self, phase: u8, mu: f64, objective: f64, x: &[f64]) {
        if !self.opts.record_trace {
            return;
        }
        let max_eigenvalue = self
            .problem
            .max_constraint_eigenvalue(&x[..self.problem.n_coords])
            .unwrap_or(f64::NAN);
        self.trace.push(IterateRecord {
            iteration: self.iterations,
            phase,
            mu,
            objective,
            max_eigenvalue,
        });
    }

    /// Damped Newton centering of `cᵀy/μ + Φ(y)`.
    fn center(
        &mut self,
        barrier: &Barrier<'_>,
        c: &[f64],
        mu: f64,
        y: &mut [f64],
        phase: u8,
        stop: &dyn Fn(&[f64]) -> bool,
    ) -> Result<Centering, SdpError> {
        let breakdown = |iterations| SdpError::NumericalBreakdown { phase, iterations };
        let f = |y: &[f64]| -> Option<f64> {
            let lin: f64 = c.iter().zip(y).map(|(a, b)| a * b).sum();
            barrier.value(y).map(|phi| lin / mu + phi)
        };
        loop {
            if stop(y) {
                return Ok(Centering::Stopped);
            }
            if self.iterations >= self.opts.max_iterations {
                return Ok(Centering::Exhausted);
            }
            let (g, h) = barrier
                .gradient_hessian(y)
                .ok_or_else(|| breakdown(self.iterations))?;
            let grad: Vec<f64> = c.iter().zip(&g).map(|(ci, gi)| ci / mu + gi).collect();
            let chol = regularized_cholesky(&h).ok_or_else(|| breakdown(self.iterations))?;
            let step: Vec<f64> = chol.solve_vec(&grad).into_iter().map(|v| -v).collect();
            let slope: f64 = grad.iter().zip(&step).map(|(a, b)| a * b).sum();
            if !slope.is_finite() || step.iter().any(|v| !v.is_finite()) {
                return Err(breakdown(self.iterations));
            }
            if -slope / 2.0 <= NEWTON_TOL {
                return Ok(Centering::Centered);
            }
            let f0 = f(y).ok_or_else(|| breakdown(self.iterations))?;
            let mut s = 1.0;
            let mut trial = y.to_vec();
            loop {
                for ((t, yi), di) in trial.iter_mut().zip(y.iter()).zip(&step) {
                    *t = yi + s * di;
                }
                if let Some(ft) = f(&trial) {
                    if ft <= f0 + self.opts.armijo * s * slope {
                        if ft >= f0 {
                            // Decrease below the resolution of f.
                            return Ok(Centering::Centered);
                        }
                        break;
                    }
                }
                s *= self.opts.backtrack_factor;
                if s < 1e-20 {
                    // No representable decrease left at this μ.
                    return Ok(Centering::Centered);
                }
            }
            y.copy_from_slice(&trial);
            self.iterations += 1;
            let objective = c.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            self.record(phase, mu, objective, y);
        }
    }
}

fn regularized_cholesky(h: &Matrix) -> Option<Cholesky> {
    if let Some(c) = Cholesky::new(h) {
        return Some(c);
    }
    let scale = (0..h.rows())
        .map(|i| h[(i, i)].abs())
        .fold(1e-300, f64::max);
    let mut delta = 1e-14 * scale;
    while delta <= 1e-2 * scale {
        let mut reg = h.clone();
        for i in 0..reg.rows() {
            reg[(i, i)] += delta;
        }
        if let Some(c) = Cholesky::new(&reg) {
            return Some(c);
        }
        delta *= 100.0;
    }
    None
}

/// Minimizes the problem's linear objective subject to all constraints
/// being negative definite.
pub fn solve(problem: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution, SdpError> {
    let n = problem.n_coords();
    let shifts: Vec<f64> = problem
        .constraints
        .iter()
        .map(|op| opts.strictness * (1.0 + op.constant.frobenius_norm()))
        .collect();
    let mut run = Run {
        opts,
        problem,
        iterations: 0,
        trace: Vec::new(),
    };

    let data_scale = problem
        .constraints
        .iter()
        .map(|op| op.constant.frobenius_norm())
        .fold(0.0, f64::max);

    // Phase I over (x, t).
    let phase1 = Barrier {
        ops: &problem.constraints,
        shifts: &shifts,
        slack: Some(n),
        bound: Some((opts.phase1_box * (1.0 + data_scale), n)),
        dim: n + 1,
    };
    let mut y = vec![0.0; n + 1];
    let mut worst = f64::NEG_INFINITY;
    for (op, eps) in problem.constraints.iter().zip(&shifts) {
        worst = worst.max(max_eigenvalue(&op.constant)? + eps);
    }
    if problem.constraints.is_empty() {
        worst = -1.0;
    }
    y[n] = worst + 1.0;
    let mut c1 = vec![0.0; n + 1];
    c1[n] = 1.0;
    let margin = opts.feasibility_margin;
    let total = phase1.total_size();
    let mut mu = opts.mu0;
    let feasible = loop {
        if y[n] < -margin {
            break true;
        }
        let outcome = run.center(&phase1, &c1, mu, &mut y, 1, &|y| y[n] < -margin)?;
        match outcome {
            Centering::Stopped => break true,
            Centering::Exhausted => {
                return finish(
                    problem,
                    y[..n].to_vec(),
                    SdpStatus::MaxIterations,
                    shifts,
                    run,
                );
            }
            Centering::Centered => {
                // t* >= t(μ) - μ m at a central point.
                if y[n] - mu * total >= -margin || mu * total < 0.1 * margin {
                    break false;
                }
                mu *= opts.mu_factor;
            }
        }
    };
    y.truncate(n);
    if !feasible {
        return finish(problem, y, SdpStatus::Infeasible, shifts, run);
    }
    if problem.objective.iter().all(|c| *c == 0.0) {
        // Pure feasibility: the Phase I point is the answer.
        return finish(problem, y, SdpStatus::Optimal, shifts, run);
    }

    // Phase II.
    let phase2 = Barrier {
        ops: &problem.constraints,
        shifts: &shifts,
        slack: None,
        bound: None,
        dim: n,
    };
    let c = problem.objective.clone();
    let total = phase2.total_size();
    let mut mu = opts.mu0;
    loop {
        match run.center(&phase2, &c, mu, &mut y, 2, &|_| false)? {
            Centering::Exhausted => {
                return finish(problem, y, SdpStatus::MaxIterations, shifts, run);
            }
            Centering::Stopped | Centering::Centered => {
                let objective: f64 = c.iter().zip(&y).map(|(a, b)| a * b).sum();
                if mu * total <= opts.gap_tolerance * (1.0 + objective.abs()) {
                    return finish(problem, y, SdpStatus::Optimal, shifts, run);
                }
                mu *= opts.mu_factor;
            }
        }
    }
}

fn finish(
    problem: &SdpProblem,
    x: Vec<f64>,
    status: SdpStatus,
    strictness: Vec<f64>,
    run: Run<'_>,
) -> Result<SdpSolution, SdpError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SdpError::NumericalBreakdown {
            phase: 2,
            iterations: run.iterations,
        });
    }
    let margin = problem.max_constraint_eigenvalue(&x)?;
    let objective_value = problem.objective.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(SdpSolution {
        x,
        objective_value,
        status,
        margin,
        iterations: run.iterations,
        strictness,
        trace: run.trace,
    })
}
