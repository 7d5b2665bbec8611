//! Loop closure around the central vertex `O` and pseudo-inverse projection
//! stepping along the closure manifold.
//!
//! Fold angles `ρ_O = [ρ_M1, ρ_B1, ..., ρ_Mn, ρ_Bn]` are composed as
//! `F = χ_1 ⋯ χ_N` with `χ_j = R_x(ρ_j)·R_z(α)`: fold about crease `j`, seen as
//! the local first axis, then turn by the sector angle to the next crease.
//! Valley folds are positive. A state is closed when `F = I`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::LeafOutGeometry;
use crate::rotation::{rot_x, rot_x_prime, rot_z, skew_components};
use crate::unitcell::SubAngleSolver;

/// Closure residual accepted for a [`FoldState`].
pub const CLOSURE_TOLERANCE: f64 = 1e-10;

/// Angles this far outside their box are snapped back onto it.
pub const BOX_SLACK: f64 = 1e-12;

/// Mountain/valley box of vertex-`O` crease `j`: mains in `[0, π]`, boundaries in `[-π, 0]`.
pub fn angle_box(j: usize) -> (f64, f64) {
    if j.is_multiple_of(2) {
        (0.0, PI)
    } else {
        (-PI, 0.0)
    }
}

fn in_box(j: usize, value: f64) -> bool {
    let (lo, hi) = angle_box(j);
    value >= lo - BOX_SLACK && value <= hi + BOX_SLACK
}

/// A closed configuration: vertex-`O` angles plus the derived sub angles.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldState {
    rho: Vec<f64>,
    sub: Vec<f64>,
}

impl FoldState {
    /// The flat sheet.
    pub fn flat(geom: &LeafOutGeometry) -> Self {
        Self { rho: vec![0.0; geom.vertex_o_crease_count()], sub: vec![0.0; geom.n_cell()] }
    }

    /// Validates shape, angle boxes and closure of `rho`.
    pub fn from_angles(geom: &LeafOutGeometry, rho: Vec<f64>) -> Result<Self> {
        Self::build(geom, rho, &mut vec![SubAngleSolver::new(); geom.n_cell()])
    }

    /// Uniform state with every main angle `rho_m` and every boundary angle `rho_b`.
    pub fn uniform(geom: &LeafOutGeometry, rho_m: f64, rho_b: f64) -> Result<Self> {
        let rho = (0..geom.vertex_o_crease_count()).map(|j| if j % 2 == 0 { rho_m } else { rho_b }).collect();
        Self::from_angles(geom, rho)
    }

    fn build(geom: &LeafOutGeometry, mut rho: Vec<f64>, solvers: &mut [SubAngleSolver]) -> Result<Self> {
        let n = geom.vertex_o_crease_count();
        if rho.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: rho.len() });
        }
        for (j, value) in rho.iter_mut().enumerate() {
            if !in_box(j, *value) {
                return Err(Error::OutsideAngleBox { index: j, value: *value });
            }
            let (lo, hi) = angle_box(j);
            *value = value.clamp(lo, hi);
        }
        let r = residual(geom, &rho)?.norm_inf();
        if r.is_nan() || r > CLOSURE_TOLERANCE {
            return Err(Error::NotClosed { residual: r, tolerance: CLOSURE_TOLERANCE });
        }
        let sub = solvers
            .iter_mut()
            .enumerate()
            .map(|(k, s)| s.solve(geom.alpha(), rho[2 * k]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rho, sub })
    }

    /// Vertex-`O` angles in chain order.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Sub angle `ρ_S` of each unit (both sub creases share it).
    pub fn sub_angles(&self) -> &[f64] {
        &self.sub
    }

    /// Main angle of `unit` (1-based).
    pub fn main(&self, unit: usize) -> f64 {
        self.rho[2 * (unit - 1)]
    }

    /// Boundary angle `ρ_B` between `unit` and `unit + 1` (1-based).
    pub fn boundary(&self, unit: usize) -> f64 {
        self.rho[2 * (unit - 1) + 1]
    }

    pub fn main_angles(&self) -> Vec<f64> {
        self.rho.iter().step_by(2).copied().collect()
    }

    pub fn boundary_angles(&self) -> Vec<f64> {
        self.rho.iter().skip(1).step_by(2).copied().collect()
    }

    /// Relabels units so that unit `n` becomes unit `n + shift`.
    pub fn rotate_units(&self, shift: usize) -> Self {
        let units = self.sub.len();
        let shift = shift % units;
        let mut rho = self.rho.clone();
        rho.rotate_right(2 * shift);
        let mut sub = self.sub.clone();
        sub.rotate_right(shift);
        Self { rho, sub }
    }
}

/// Skew components of `F - I` (axis 3, axis 1, axis 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosureResidual {
    pub r_a: f64,
    pub r_b: f64,
    pub r_c: f64,
}

impl ClosureResidual {
    pub fn from_matrix(f: &Matrix3<f64>) -> Self {
        let [r_a, r_b, r_c] = skew_components(f);
        Self { r_a, r_b, r_c }
    }

    pub fn norm_inf(&self) -> f64 {
        self.r_a.abs().max(self.r_b.abs()).max(self.r_c.abs())
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&[self.r_a, self.r_b, self.r_c])
    }
}

fn check_len(geom: &LeafOutGeometry, rho: &[f64]) -> Result<()> {
    let n = geom.vertex_o_crease_count();
    if rho.len() != n {
        return Err(Error::ShapeMismatch { expected: n, got: rho.len() });
    }
    Ok(())
}

/// Rotation product `F = χ_1 ⋯ χ_N` around vertex `O`.
pub fn chain_product(geom: &LeafOutGeometry, rho: &[f64]) -> Result<Matrix3<f64>> {
    check_len(geom, rho)?;
    let sector = rot_z(geom.alpha());
    Ok(rho.iter().fold(Matrix3::identity(), |acc, &r| acc * rot_x(r) * sector))
}

/// Closure residual of `rho`.
pub fn residual(geom: &LeafOutGeometry, rho: &[f64]) -> Result<ClosureResidual> {
    Ok(ClosureResidual::from_matrix(&chain_product(geom, rho)?))
}

/// Linearized constraint matrix `C` (3 × N), column `j` = ∂r/∂ρ_j, assembled
/// from prefix and suffix products of the chain.
pub fn constraint_matrix(geom: &LeafOutGeometry, rho: &[f64]) -> Result<DMatrix<f64>> {
    check_len(geom, rho)?;
    let n = rho.len();
    let sector = rot_z(geom.alpha());
    let chis: Vec<Matrix3<f64>> = rho.iter().map(|&r| rot_x(r) * sector).collect();
    let mut suffix = vec![Matrix3::identity(); n + 1];
    for j in (0..n).rev() {
        suffix[j] = chis[j] * suffix[j + 1];
    }
    let mut c = DMatrix::zeros(3, n);
    let mut prefix = Matrix3::<f64>::identity();
    for j in 0..n {
        let d = prefix * rot_x_prime(rho[j]) * sector * suffix[j + 1];
        let col = skew_components(&d);
        for i in 0..3 {
            c[(i, j)] = col[i];
        }
        prefix *= chis[j];
    }
    Ok(c)
}

/// Central finite-difference version of [`constraint_matrix`].
pub fn constraint_matrix_fd(geom: &LeafOutGeometry, rho: &[f64], h: f64) -> Result<DMatrix<f64>> {
    check_len(geom, rho)?;
    let mut c = DMatrix::zeros(3, rho.len());
    let mut x = rho.to_vec();
    for j in 0..rho.len() {
        x[j] = rho[j] + h;
        let plus = residual(geom, &x)?;
        x[j] = rho[j] - h;
        let minus = residual(geom, &x)?;
        x[j] = rho[j];
        c[(0, j)] = (plus.r_a - minus.r_a) / (2.0 * h);
        c[(1, j)] = (plus.r_b - minus.r_b) / (2.0 * h);
        c[(2, j)] = (plus.r_c - minus.r_c) / (2.0 * h);
    }
    Ok(c)
}

/// Singular pairs of a matrix with no more rows than columns, from the
/// symmetric eigendecomposition of `M Mᵀ`: left vectors `u_i` and
/// `σ_i = ‖Mᵀ u_i‖`. Taking `σ_i` from `Mᵀ u_i` keeps tiny singular values
/// accurate to `ε σ_max` rather than `√ε σ_max`.
fn gram_singular_pairs(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let u = (m * m.transpose()).symmetric_eigen().eigenvectors;
    let sigma = (0..u.ncols()).map(|i| (m.transpose() * u.column(i)).norm()).collect();
    (u, sigma)
}

/// Moore–Penrose pseudo-inverse, dropping singular values below
/// `rel_cutoff · σ_max`. Built as `Mᵀ (M Mᵀ)⁺` over the short side.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    if m.nrows() > m.ncols() {
        return pseudo_inverse(&m.transpose(), rel_cutoff).transpose();
    }
    let (u, sigma) = gram_singular_pairs(m);
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let mut inner = DMatrix::zeros(m.nrows(), m.nrows());
    if sigma_max > 0.0 {
        for (i, &s) in sigma.iter().enumerate() {
            if s > rel_cutoff * sigma_max {
                let ui = u.column(i);
                inner += ui * ui.transpose() / (s * s);
            }
        }
    }
    m.transpose() * inner
}

/// Null-space projector `I - C⁺C`.
pub fn nullspace_projector(c: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let n = c.ncols();
    DMatrix::identity(n, n) - pseudo_inverse(c, rel_cutoff) * c
}

/// Numerical rank: singular values above `rel_cutoff · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_cutoff: f64) -> usize {
    if m.nrows() > m.ncols() {
        return numerical_rank(&m.transpose(), rel_cutoff);
    }
    let (_, sigma) = gram_singular_pairs(m);
    let max = sigma.iter().copied().fold(0.0, f64::max);
    sigma.iter().filter(|&&v| v > rel_cutoff * max && v > 0.0).count()
}

/// Desired increment for one driver step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRequest {
    /// Desired increment of every vertex-`O` angle.
    pub delta_rho_0: Vec<f64>,
    /// 0-based chain indices whose increments are imposed exactly.
    pub controlled: Vec<usize>,
    /// Cap on `‖Δρ_0‖∞` per internal sub-step.
    pub step_scale: f64,
}

impl StepRequest {
    fn validate(&self, n: usize) -> Result<()> {
        if self.delta_rho_0.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: self.delta_rho_0.len() });
        }
        if !(self.step_scale.is_finite() && self.step_scale > 0.0) {
            return Err(Error::InvalidStep(format!("step_scale must be positive, got {}", self.step_scale)));
        }
        if self.delta_rho_0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidStep("non-finite increment".into()));
        }
        if let Some(&k) = self.controlled.iter().find(|&&k| k >= n) {
            return Err(Error::InvalidStep(format!("controlled index {k} out of range")));
        }
        Ok(())
    }
}

/// What happens when an uncontrolled angle would leave its box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxPolicy {
    /// Hold the crease at its bound for the rest of the step and re-solve the
    /// remaining angles (a one-sided constraint that keeps the crease
    /// assignment while the path continues).
    ActiveSet,
    /// Reject the step; paths end with an angle-boundary reason.
    Terminate,
}

/// Numerical settings of the projection stepper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverSettings {
    /// Newton stops once `‖r‖∞` falls below this.
    pub newton_tolerance: f64,
    pub max_newton_iterations: usize,
    /// Relative singular-value cutoff of the pseudo-inverse.
    pub svd_cutoff: f64,
    /// Step halving stops below this sub-step size (radians).
    pub min_step: f64,
    pub box_policy: BoxPolicy,
    /// Compare the analytic Jacobian with finite differences on every step.
    pub verify_jacobian: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            newton_tolerance: 1e-12,
            max_newton_iterations: 50,
            svd_cutoff: 1e-10,
            min_step: 1e-8,
            box_policy: BoxPolicy::ActiveSet,
            verify_jacobian: false,
        }
    }
}

/// Projection stepper carrying per-path warm-start state.
#[derive(Debug, Clone)]
pub struct Stepper {
    geom: LeafOutGeometry,
    settings: SolverSettings,
    sub_solvers: Vec<SubAngleSolver>,
}

impl Stepper {
    pub fn new(geom: &LeafOutGeometry, settings: SolverSettings) -> Self {
        Self { geom: *geom, settings, sub_solvers: vec![SubAngleSolver::new(); geom.n_cell()] }
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    /// Applies `req` from `state`, split into sub-steps of at most `step_scale`.
    pub fn step(&mut self, state: &FoldState, req: &StepRequest) -> Result<FoldState> {
        let n = self.geom.vertex_o_crease_count();
        req.validate(n)?;
        let largest = req.delta_rho_0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let pieces = (largest / req.step_scale).ceil().max(1.0) as usize;
        let delta: Vec<f64> = req.delta_rho_0.iter().map(|v| v / pieces as f64).collect();
        let mut controlled = vec![false; n];
        for &k in &req.controlled {
            controlled[k] = true;
        }
        let start = state.rho();
        let mut rho = start.to_vec();
        for piece in 1..=pieces {
            // aim controlled angles at exact multiples to avoid drift
            let mut d = delta.clone();
            for k in 0..n {
                if controlled[k] {
                    d[k] = start[k] + req.delta_rho_0[k] * piece as f64 / pieces as f64 - rho[k];
                }
            }
            rho = self.substep(&rho, &d, &controlled)?;
        }
        FoldState::build(&self.geom, rho, &mut self.sub_solvers)
    }

    fn substep(&self, rho: &[f64], delta: &[f64], controlled: &[bool]) -> Result<Vec<f64>> {
        let n = rho.len();
        for k in (0..n).filter(|&k| controlled[k]) {
            if !in_box(k, rho[k] + delta[k]) {
                return Err(Error::ControlledAtBoundary { index: k });
            }
        }
        let c = constraint_matrix(&self.geom, rho)?;
        if self.settings.verify_jacobian {
            let fd = constraint_matrix_fd(&self.geom, rho, 1e-7)?;
            let gap = (&c - fd).amax();
            if gap > 1e-5 {
                return Err(Error::Numerical(format!("analytic Jacobian off by {gap:e}")));
            }
        }
        let projector = nullspace_projector(&c, self.settings.svd_cutoff);
        let d0 = DVector::from_column_slice(delta);

        let controlled_size = (0..n).filter(|&k| controlled[k]).fold(0.0f64, |m, k| m.max(delta[k].abs()));
        if controlled_size > 0.0 {
            let p = &projector * &d0;
            let feasible = (0..n).filter(|&k| controlled[k]).fold(0.0f64, |m, k| m.max(p[k].abs()));
            if feasible < 1e-9 * controlled_size {
                return Err(Error::Locked);
            }
        }

        let mut pinned: Vec<Option<f64>> = vec![None; n];
        for _ in 0..=n {
            let mut fixed = controlled.to_vec();
            let mut d = d0.clone();
            for (i, pin) in pinned.iter().enumerate() {
                if let Some(bound) = pin {
                    fixed[i] = true;
                    d[i] = bound - rho[i];
                }
            }
            let p = &projector * &d;
            let mut candidate: Vec<f64> = (0..n).map(|i| rho[i] + if fixed[i] { d[i] } else { p[i] }).collect();
            if fixed.iter().all(|&f| f) {
                if residual(&self.geom, &candidate)?.norm_inf() < self.settings.newton_tolerance {
                    return Ok(candidate);
                }
                return Err(Error::Locked);
            }
            self.newton(&mut candidate, &fixed)?;

            let mut violated = false;
            for i in (0..n).filter(|&i| !fixed[i]) {
                if in_box(i, candidate[i]) {
                    continue;
                }
                if self.settings.box_policy == BoxPolicy::Terminate {
                    return Err(Error::OutsideAngleBox { index: i, value: candidate[i] });
                }
                let (lo, hi) = angle_box(i);
                pinned[i] = Some(if candidate[i] < lo { lo } else { hi });
                violated = true;
            }
            if !violated {
                return Ok(candidate);
            }
        }
        Err(Error::Locked)
    }

    /// Newton correction over the free components until closure.
    fn newton(&self, x: &mut [f64], fixed: &[bool]) -> Result<()> {
        let free: Vec<usize> = (0..x.len()).filter(|&i| !fixed[i]).collect();
        let s = &self.settings;
        for iteration in 0..=s.max_newton_iterations {
            let r = residual(&self.geom, x)?;
            let norm = r.norm_inf();
            if !norm.is_finite() || (iteration == s.max_newton_iterations && norm >= s.newton_tolerance) {
                return Err(Error::StepFailure { iterations: iteration, residual: norm });
            }
            if norm < s.newton_tolerance {
                return Ok(());
            }
            let c = constraint_matrix(&self.geom, x)?.select_columns(&free);
            let dx = -pseudo_inverse(&c, s.svd_cutoff) * r.as_vector();
            for (k, &i) in free.iter().enumerate() {
                x[i] += dx[k];
            }
        }
        unreachable!("loop returns on its last iteration")
    }
}

/// Single projection step from `state` (fresh warm-start state).
pub fn project_step(
    geom: &LeafOutGeometry,
    state: &FoldState,
    req: &StepRequest,
    settings: &SolverSettings,
) -> Result<FoldState> {
    Stepper::new(geom, *settings).step(state, req)
}

/// Source of step requests for [`trace_path`].
pub trait StepDriver {
    /// Name of the path parameter (CSV column).
    fn parameter_name(&self) -> &str;
    /// Path parameter of the most recently accepted state.
    fn parameter(&self) -> f64;
    /// Request for the next step, or `None` when the driver is exhausted.
    fn next_request(&mut self, state: &FoldState) -> Option<StepRequest>;
    /// Called once the requested step has been taken.
    fn accept(&mut self, state: &FoldState);
}

/// Drives chosen chain indices by a fixed increment per step; all other
/// increments are left to the projection.
#[derive(Debug, Clone)]
pub struct ControlledDriver {
    n_angles: usize,
    indices: Vec<usize>,
    increment: f64,
    step_scale: f64,
    total: f64,
}

impl ControlledDriver {
    pub fn new(geom: &LeafOutGeometry, indices: Vec<usize>, increment: f64) -> Self {
        Self {
            n_angles: geom.vertex_o_crease_count(),
            indices,
            increment,
            step_scale: increment.abs().max(1e-6),
            total: 0.0,
        }
    }

    /// Drives the main creases of `units` (1-based).
    pub fn mains(geom: &LeafOutGeometry, units: &[usize], increment: f64) -> Self {
        Self::new(geom, units.iter().map(|&u| geom.main_index(u)).collect(), increment)
    }

    pub fn with_step_scale(mut self, step_scale: f64) -> Self {
        self.step_scale = step_scale;
        self
    }
}

impl StepDriver for ControlledDriver {
    fn parameter_name(&self) -> &str {
        "delta_rho_c"
    }

    fn parameter(&self) -> f64 {
        self.total
    }

    fn next_request(&mut self, _state: &FoldState) -> Option<StepRequest> {
        let mut delta = vec![0.0; self.n_angles];
        for &k in &self.indices {
            delta[k] = self.increment;
        }
        Some(StepRequest { delta_rho_0: delta, controlled: self.indices.clone(), step_scale: self.step_scale })
    }

    fn accept(&mut self, _state: &FoldState) {
        self.total += self.increment;
    }
}

/// Why a traced path ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Termination {
    /// The requested number of steps was taken.
    Completed,
    /// The driver ran out of requests (end of its parameter range).
    DriverFinished,
    /// A controlled angle would leave its mountain/valley box.
    ControlledLimit { index: usize },
    /// An uncontrolled angle would leave its box (terminate policy).
    AngleBoundary { index: usize },
    /// No feasible motion for the controlled increments.
    Locked,
    /// Newton failed even at the minimum step size.
    StepFailure { iterations: usize, residual: f64 },
}

impl Termination {
    /// Normal end of a path (not a numerical failure).
    pub fn is_regular(&self) -> bool {
        !matches!(self, Termination::StepFailure { .. })
    }

    fn from_error(err: Error) -> std::result::Result<Self, Error> {
        match err {
            Error::ControlledAtBoundary { index } => Ok(Termination::ControlledLimit { index }),
            Error::OutsideAngleBox { index, .. } => Ok(Termination::AngleBoundary { index }),
            Error::Locked => Ok(Termination::Locked),
            Error::StepFailure { iterations, residual } => Ok(Termination::StepFailure { iterations, residual }),
            other => Err(other),
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Completed => write!(f, "completed"),
            Termination::DriverFinished => write!(f, "driver-finished"),
            Termination::ControlledLimit { index } => write!(f, "controlled-limit (crease index {index})"),
            Termination::AngleBoundary { index } => write!(f, "angle-boundary (crease index {index})"),
            Termination::Locked => write!(f, "locked"),
            Termination::StepFailure { iterations, residual } => {
                write!(f, "step-failure ({iterations} iterations, residual {residual:e})")
            }
        }
    }
}

/// Ordered closed states with their path parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldingPath {
    pub parameter_name: String,
    pub parameters: Vec<f64>,
    pub states: Vec<FoldState>,
    /// Filled in by the energy module when springs are known.
    pub energies: Option<Vec<f64>>,
    pub termination: Termination,
}

impl FoldingPath {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&FoldState> {
        self.states.last()
    }

    /// Largest closure residual over all states.
    pub fn max_residual(&self, geom: &LeafOutGeometry) -> f64 {
        self.states
            .iter()
            .map(|s| residual(geom, s.rho()).map(|r| r.norm_inf()).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }
}

/// Traces up to `n_steps` driver steps from `start`, halving the sub-step size
/// on Newton failure down to `settings.min_step`.
pub fn trace_path(
    geom: &LeafOutGeometry,
    start: &FoldState,
    driver: &mut dyn StepDriver,
    n_steps: usize,
    settings: &SolverSettings,
) -> Result<FoldingPath> {
    if start.rho().len() != geom.vertex_o_crease_count() {
        return Err(Error::ShapeMismatch { expected: geom.vertex_o_crease_count(), got: start.rho().len() });
    }
    let r = residual(geom, start.rho())?.norm_inf();
    if r > CLOSURE_TOLERANCE {
        return Err(Error::NotClosed { residual: r, tolerance: CLOSURE_TOLERANCE });
    }
    let mut stepper = Stepper::new(geom, *settings);
    let mut path = FoldingPath {
        parameter_name: driver.parameter_name().to_string(),
        parameters: vec![driver.parameter()],
        states: vec![start.clone()],
        energies: None,
        termination: Termination::Completed,
    };
    'steps: for _ in 0..n_steps {
        let current = path.states.last().expect("path starts non-empty").clone();
        let Some(mut req) = driver.next_request(&current) else {
            path.termination = Termination::DriverFinished;
            break;
        };
        loop {
            match stepper.step(&current, &req) {
                Ok(next) => {
                    driver.accept(&next);
                    path.parameters.push(driver.parameter());
                    path.states.push(next);
                    break;
                }
                Err(Error::StepFailure { .. }) if req.step_scale * 0.5 >= settings.min_step => {
                    req.step_scale *= 0.5;
                }
                Err(err) => {
                    path.termination = Termination::from_error(err)?;
                    break 'steps;
                }
            }
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::axis_angle;
    use nalgebra::Vector3;

    fn prototype() -> LeafOutGeometry {
        LeafOutGeometry::new(5, 70.0, 30.0).unwrap()
    }

    fn uniform_closed(geom: &LeafOutGeometry, rho_m: f64) -> FoldState {
        // closed-phase boundary angle from the uniform relation ρ_B = -2ψ
        let a = geom.alpha();
        let (c, s) = ((0.5 * rho_m).cos(), (0.5 * rho_m).sin());
        let r = (1.0 + (a.tan() * s).powi(2)).sqrt();
        let psi = (c / r).acos() - (a.tan() * s).atan();
        FoldState::uniform(geom, rho_m, -2.0 * psi).unwrap()
    }

    #[test]
    fn flat_state_closes() {
        let g = prototype();
        let f = chain_product(&g, &[0.0; 10]).unwrap();
        assert!((f - Matrix3::identity()).amax() < 1e-14);
        assert!(chain_product(&g, &[0.0; 3]).is_err());
    }

    #[test]
    fn chain_product_is_a_rotation() {
        let g = prototype();
        let rho: Vec<f64> = (0..10).map(|j| 0.1 * j as f64 - 0.4).collect();
        let f = chain_product(&g, &rho).unwrap();
        assert!((f.determinant() - 1.0).abs() < 1e-12);
        assert!((f.transpose() * f - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn perturbation_breaks_closure() {
        let g = prototype();
        let s = uniform_closed(&g, 1.0);
        assert!(residual(&g, s.rho()).unwrap().norm_inf() < 1e-12);
        let mut rho = s.rho().to_vec();
        rho[3] += 1e-3;
        let f = chain_product(&g, &rho).unwrap();
        assert!((f - Matrix3::identity()).amax() > 1e-5);
    }

    #[test]
    fn residual_of_small_rotations() {
        let t = 1e-4;
        let r = ClosureResidual::from_matrix(&axis_angle(&Vector3::z(), t));
        assert!((r.r_a - t).abs() < 1e-12 && r.r_b.abs() < 1e-18 && r.r_c.abs() < 1e-18);
        let r = ClosureResidual::from_matrix(&axis_angle(&Vector3::x(), t));
        assert!((r.r_b - t).abs() < 1e-12 && r.r_a.abs() < 1e-18);
        let r = ClosureResidual::from_matrix(&axis_angle(&Vector3::y(), t));
        assert!((r.r_c - t).abs() < 1e-12);
        assert_eq!(ClosureResidual::from_matrix(&Matrix3::identity()).norm_inf(), 0.0);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let g = prototype();
        for rho_m in [0.0, 0.3, 1.7] {
            let s = uniform_closed(&g, rho_m);
            let a = constraint_matrix(&g, s.rho()).unwrap();
            let fd = constraint_matrix_fd(&g, s.rho(), 1e-7).unwrap();
            assert!((a - fd).amax() < 1e-8);
        }
    }

    #[test]
    fn flat_jacobian_loses_the_in_plane_row() {
        // the r_a row vanishes at the flat state, so C has rank 2 there
        let g = prototype();
        let c = constraint_matrix(&g, &[0.0; 10]).unwrap();
        assert!(c.row(0).amax() < 1e-15);
        assert_eq!(numerical_rank(&c, 1e-10), 2);
        let s = uniform_closed(&g, 0.1);
        assert_eq!(numerical_rank(&constraint_matrix(&g, s.rho()).unwrap(), 1e-10), 3);
    }

    #[test]
    fn uniform_tangent_is_in_the_null_space() {
        let g = prototype();
        let (a, b) = (uniform_closed(&g, 0.9), uniform_closed(&g, 0.9 + 1e-6));
        let tangent: Vec<f64> = a.rho().iter().zip(b.rho()).map(|(x, y)| (y - x) / 1e-6).collect();
        let c = constraint_matrix(&g, a.rho()).unwrap();
        let v = c * DVector::from_vec(tangent);
        assert!(v.amax() < 1e-6);
    }

    #[test]
    fn unit_columns_are_conjugate_under_rotation() {
        // at a uniform state the axis vector of column j + 2 is G times that of
        // column j, where G = χ_M·χ_B is the rotation of one unit
        let g = prototype();
        let s = uniform_closed(&g, 1.2);
        let c = constraint_matrix(&g, s.rho()).unwrap();
        let sector = rot_z(g.alpha());
        let unit = rot_x(s.main(1)) * sector * rot_x(s.boundary(1)) * sector;
        let axis = |j: usize| Vector3::new(c[(1, j)], c[(2, j)], c[(0, j)]);
        for j in 0..8 {
            assert!((axis(j + 2) - unit * axis(j)).amax() < 1e-12, "column {j}");
        }
    }

    #[test]
    fn pseudo_inverse_penrose_identities() {
        let g = prototype();
        for rho_m in [0.0, 0.5, 2.0] {
            let c = constraint_matrix(&g, uniform_closed(&g, rho_m).rho()).unwrap();
            let p = pseudo_inverse(&c, 1e-10);
            assert!((&c * &p * &c - &c).amax() < 1e-10);
            assert!((&p * &c * &p - &p).amax() < 1e-10);
            assert!(((&c * &p).transpose() - &c * &p).amax() < 1e-10);
            assert!(((&p * &c).transpose() - &p * &c).amax() < 1e-10);
            let proj = nullspace_projector(&c, 1e-10);
            assert!((&proj * &proj - &proj).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_request_is_a_fixed_point() {
        let g = prototype();
        let s = uniform_closed(&g, 0.8);
        let req = StepRequest { delta_rho_0: vec![0.0; 10], controlled: vec![], step_scale: 0.01 };
        let next = project_step(&g, &s, &req, &SolverSettings::default()).unwrap();
        assert_eq!(next.rho(), s.rho());
    }

    #[test]
    fn uniform_drive_stays_uniform() {
        let g = prototype();
        let start = uniform_closed(&g, 7.1f64.to_radians());
        let mut driver = ControlledDriver::mains(&g, &[1, 2, 3, 4, 5], 0.5f64.to_radians());
        let path = trace_path(&g, &start, &mut driver, 40, &SolverSettings::default()).unwrap();
        assert_eq!(path.len(), 41);
        for s in &path.states {
            let m = s.main_angles();
            let b = s.boundary_angles();
            assert!(m.iter().all(|v| (v - m[0]).abs() < 1e-9));
            assert!(b.iter().all(|v| (v - b[0]).abs() < 1e-9));
        }
        let end = path.last().unwrap();
        assert!((end.main(1) - 27.1f64.to_radians()).abs() < 1e-12);
        let exact = uniform_closed(&g, end.main(1));
        assert!((end.boundary(1) - exact.boundary(1)).abs() < 1e-6);
    }

    #[test]
    fn pinch_drive_is_symmetric() {
        let g = prototype();
        let start = uniform_closed(&g, 7.1f64.to_radians());
        let mut driver = ControlledDriver::mains(&g, &[1, 2], 0.5f64.to_radians());
        let path = trace_path(&g, &start, &mut driver, 60, &SolverSettings::default()).unwrap();
        let end = path.last().unwrap();
        assert!((end.main(1) - end.main(2)).abs() < 1e-12);
        assert!((end.main(1) - end.main(4)).abs() > 1e-3);
        assert!(path.max_residual(&g) < 1e-10);
        for s in &path.states {
            for (j, v) in s.rho().iter().enumerate() {
                let (lo, hi) = angle_box(j);
                assert!(*v >= lo && *v <= hi);
            }
        }
    }

    #[test]
    fn zero_driver_repeats_the_start() {
        let g = prototype();
        let start = uniform_closed(&g, 0.4);
        let mut driver = ControlledDriver::mains(&g, &[1], 0.0);
        let path = trace_path(&g, &start, &mut driver, 5, &SolverSettings::default()).unwrap();
        assert!(path.states.iter().all(|s| s.rho() == start.rho()));
    }

    #[test]
    fn controlled_limit_ends_the_path() {
        let g = prototype();
        let start = uniform_closed(&g, 3.0);
        let mut driver = ControlledDriver::mains(&g, &[1, 2, 3, 4, 5], 0.1);
        let path = trace_path(&g, &start, &mut driver, 10, &SolverSettings::default()).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(path.termination, Termination::ControlledLimit { index: 0 });
    }

    #[test]
    fn overdetermined_control_is_locked() {
        let g = prototype();
        let start = uniform_closed(&g, 0.5);
        let all: Vec<usize> = (0..10).collect();
        let mut delta = vec![0.0; 10];
        delta[0] = 0.01;
        let req = StepRequest { delta_rho_0: delta, controlled: all, step_scale: 0.01 };
        assert_eq!(project_step(&g, &start, &req, &SolverSettings::default()), Err(Error::Locked));
    }

    #[test]
    fn malformed_requests_rejected() {
        let g = prototype();
        let s = FoldState::flat(&g);
        let bad = StepRequest { delta_rho_0: vec![0.0; 10], controlled: vec![], step_scale: 0.0 };
        assert!(matches!(project_step(&g, &s, &bad, &SolverSettings::default()), Err(Error::InvalidStep(_))));
        let bad = StepRequest { delta_rho_0: vec![0.0; 4], controlled: vec![], step_scale: 1.0 };
        assert!(project_step(&g, &s, &bad, &SolverSettings::default()).is_err());
        assert!(matches!(FoldState::uniform(&g, 0.5, 0.2), Err(Error::OutsideAngleBox { .. })));
        assert!(matches!(FoldState::uniform(&g, 0.5, -0.2), Err(Error::NotClosed { .. })));
    }
}
