//! Uniform grasping: every unit rotates by the same Euler angle `ψ` about its
//! own `e1` axis, which fixes `ρ_M` and `ρ_B` in closed form.
//!
//! `ψ < 0` is the open phase, `ψ > 0` the closed phase and `ψ = 0` the flat sheet.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::LeafOutGeometry;
use crate::kinematics::{trace_path, FoldState, FoldingPath, SolverSettings, StepDriver, StepRequest, Termination};
use crate::rotation::{axis_angle, rot_z};
use crate::unitcell::sub_angle_from_main;

/// Pre-scan spacing used to bracket roots before bisection.
pub const SCAN_STEP: f64 = 1e-3;

/// Bisection stops once the bracket is narrower than this.
pub const ROOT_TOLERANCE: f64 = 1e-12;

/// A point of the uniform motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformState {
    pub psi: f64,
    pub rho_m: f64,
    pub rho_b: f64,
    pub rho_s: f64,
    pub b: [f64; 3],
}

impl UniformState {
    /// Solves the uniform relations at `psi`.
    pub fn at(alpha: f64, psi: f64) -> Result<Self> {
        let rho_m = main_angle_from_psi(alpha, psi)?;
        let rho_b = boundary_angle_from_psi(alpha, psi)?;
        let b = boundary_vector(alpha, psi, rho_m);
        Ok(Self { psi, rho_m, rho_b, rho_s: sub_angle_from_main(alpha, rho_m)?, b: [b.x, b.y, b.z] })
    }

    /// The corresponding closed vertex-`O` configuration.
    pub fn fold_state(&self, geom: &LeafOutGeometry) -> Result<FoldState> {
        FoldState::uniform(geom, self.rho_m, self.rho_b)
    }
}

/// Scalar form of the Euler-angle relation between `ψ` and `ρ_M`:
/// `cos(ρ_M/2) − cos ψ + tan α · sin ψ · sin(ρ_M/2)`.
fn main_relation(alpha: f64, psi: f64, rho_m: f64) -> f64 {
    let (s, c) = (0.5 * rho_m).sin_cos();
    c - psi.cos() + alpha.tan() * psi.sin() * s
}

/// Bisection on `[lo, hi]`, where `f(lo)` and `f(hi)` have opposite signs.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let lo_sign = f(lo) > 0.0;
    while hi - lo > ROOT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Grid points covering `[lo, hi]` at [`SCAN_STEP`] spacing, endpoints included.
fn scan_grid(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / SCAN_STEP).ceil() as usize;
    (0..=n).map(move |k| if k == n { hi } else { lo + k as f64 * SCAN_STEP })
}

/// Main angle `ρ_M ∈ [0, π]` of the uniform state at `psi`.
pub fn main_angle_from_psi(alpha: f64, psi: f64) -> Result<f64> {
    if !psi.is_finite() {
        return Err(Error::InvalidInput(format!("psi must be finite, got {psi}")));
    }
    if psi == 0.0 {
        return Ok(0.0);
    }
    let f = |rho: f64| main_relation(alpha, psi, rho);
    let mut prev = (0.0, f(0.0));
    for x in scan_grid(0.0, PI).skip(1) {
        let v = f(x);
        if v == 0.0 {
            return Ok(x);
        }
        if (v > 0.0) != (prev.1 > 0.0) {
            return Ok(bisect(f, prev.0, x));
        }
        prev = (x, v);
    }
    Err(Error::OutOfRange {
        psi,
        reason: format!("no main angle in [0, π] solves the uniform relation (residual at π: {:e})", prev.1),
    })
}

/// Unit vector along boundary crease `OB` of unit 1 in global coordinates.
pub fn boundary_vector(alpha: f64, psi: f64, rho_m: f64) -> Vector3<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (sp, cp) = psi.sin_cos();
    let sm = (0.5 * rho_m).sin();
    Vector3::new(-sa * (0.5 * rho_m).cos(), ca * cp - sa * sp * sm, ca * sp + sa * cp * sm)
}

/// Boundary angle `ρ_B ∈ [−π, 0]` of the uniform state at `psi`.
///
/// Rotating unit 1's `e2` about `b` by `−π + ρ_B` must land on unit 2's `e2`,
/// i.e. on `R_z(2α)·e2`. The matching condition is zeroed through the signed
/// scalar `b · (R_b e2 × R_3 e2)`, keeping only roots where the two vectors
/// actually coincide.
pub fn boundary_angle_from_psi(alpha: f64, psi: f64) -> Result<f64> {
    if psi == 0.0 {
        return Ok(0.0);
    }
    let rho_m = main_angle_from_psi(alpha, psi)?;
    let b = boundary_vector(alpha, psi, rho_m).normalize();
    let e2 = Vector3::new(0.0, psi.cos(), psi.sin());
    let target = rot_z(2.0 * alpha) * e2;
    let turned = |rho_b: f64| axis_angle(&b, -PI + rho_b) * e2;
    let f = |rho_b: f64| b.dot(&turned(rho_b).cross(&target));
    let matches = |rho_b: f64| (turned(rho_b) - target).amax() < 1e-9;

    let grid: Vec<f64> = scan_grid(-PI, 0.0).collect();
    for w in grid.windows(2).rev() {
        let (lo, hi) = (w[0], w[1]);
        let (flo, fhi) = (f(lo), f(hi));
        if fhi == 0.0 && matches(hi) {
            return Ok(hi);
        }
        if (flo > 0.0) != (fhi > 0.0) {
            let root = bisect(f, lo, hi);
            if matches(root) {
                return Ok(root);
            }
        }
    }
    Err(Error::OutOfRange { psi, reason: "no boundary angle in [−π, 0] matches adjacent unit frames".into() })
}

/// Whether both uniform relations have solutions inside the angle boxes.
pub fn is_admissible(alpha: f64, psi: f64) -> bool {
    main_angle_from_psi(alpha, psi).is_ok() && boundary_angle_from_psi(alpha, psi).is_ok()
}

/// Admissible `ψ` interval, located by bisecting on bracket loss.
pub fn admissible_psi_range(alpha: f64) -> (f64, f64) {
    let edge = |outside: f64| {
        let (mut good, mut bad) = (0.0, outside);
        while (bad - good).abs() > ROOT_TOLERANCE {
            let mid = 0.5 * (good + bad);
            if is_admissible(alpha, mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        good
    };
    (edge(-PI), edge(PI))
}

/// Uniform path sampled on a `ψ` grid.
#[derive(Debug, Clone)]
pub struct UniformPath {
    pub samples: Vec<UniformState>,
    pub path: FoldingPath,
    /// Requested samples dropped for lying outside the admissible range.
    pub clipped: usize,
}

impl UniformPath {
    pub fn psi(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.psi).collect()
    }
}

/// Evenly spaced grid with exact endpoints; symmetric ranges hit `ψ = 0` exactly
/// when `n_samples` is odd.
pub fn psi_grid(psi_lo: f64, psi_hi: f64, n_samples: usize) -> Vec<f64> {
    if n_samples == 1 {
        return vec![psi_lo];
    }
    let m = (n_samples - 1) as f64;
    (0..n_samples).map(|k| (psi_lo * (m - k as f64) + psi_hi * k as f64) / m).collect()
}

/// Samples the uniform motion over `[psi_lo, psi_hi]`. Samples outside the
/// admissible range are dropped and counted in `clipped`.
pub fn uniform_path(geom: &LeafOutGeometry, psi_lo: f64, psi_hi: f64, n_samples: usize) -> Result<UniformPath> {
    if !(psi_lo.is_finite() && psi_hi.is_finite() && psi_lo <= psi_hi) {
        return Err(Error::InvalidInput(format!("bad psi range [{psi_lo}, {psi_hi}]")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be positive".into()));
    }
    let alpha = geom.alpha();
    let solved: Vec<Result<(UniformState, FoldState)>> = psi_grid(psi_lo, psi_hi, n_samples)
        .into_par_iter()
        .map(|psi| {
            let s = UniformState::at(alpha, psi)?;
            Ok((s, s.fold_state(geom)?))
        })
        .collect();
    let mut samples = Vec::with_capacity(n_samples);
    let mut states = Vec::with_capacity(n_samples);
    let mut clipped = 0;
    for r in solved {
        match r {
            Ok((s, f)) => {
                samples.push(s);
                states.push(f);
            }
            Err(Error::OutOfRange { .. }) => clipped += 1,
            Err(e) => return Err(e),
        }
    }
    if samples.is_empty() {
        return Err(Error::OutOfRange {
            psi: psi_lo,
            reason: "the whole requested range lies outside the motion range".into(),
        });
    }
    let path = FoldingPath {
        parameter_name: "psi".into(),
        parameters: samples.iter().map(|s| s.psi).collect(),
        states,
        energies: None,
        termination: if clipped == 0 { Termination::Completed } else { Termination::DriverFinished },
    };
    Ok(UniformPath { samples, path, clipped })
}

/// Uniform path obtained by projection stepping from the flat state, once
/// towards the closed phase and once towards the open phase, reporting the
/// states at the `ψ` grid points. The flat state is included only if it lies
/// on the grid.
pub fn trace_uniform(
    geom: &LeafOutGeometry,
    psi_lo: f64,
    psi_hi: f64,
    n_samples: usize,
    settings: &SolverSettings,
) -> Result<FoldingPath> {
    if !(psi_lo.is_finite() && psi_hi.is_finite() && psi_lo < psi_hi && n_samples >= 2) {
        return Err(Error::InvalidInput(format!("bad psi range [{psi_lo}, {psi_hi}] with {n_samples} samples")));
    }
    let grid = psi_grid(psi_lo, psi_hi, n_samples);
    let step = (psi_hi - psi_lo) / (n_samples - 1) as f64;
    let flat = FoldState::flat(geom);
    let leg = |targets: Vec<f64>| -> Result<FoldingPath> {
        let steps = targets.len() - 1;
        let mut driver = UniformTrackingDriver::new(geom, targets, step);
        trace_path(geom, &flat, &mut driver, steps, settings)
    };
    let closed = leg(std::iter::once(0.0).chain(grid.iter().copied().filter(|&p| p > 0.0)).collect())?;
    let open = leg(std::iter::once(0.0).chain(grid.iter().rev().copied().filter(|&p| p < 0.0)).collect())?;

    let mut parameters = Vec::with_capacity(n_samples);
    let mut states = Vec::with_capacity(n_samples);
    for (p, s) in open.parameters.iter().zip(&open.states).skip(1).rev() {
        parameters.push(*p);
        states.push(s.clone());
    }
    if grid.contains(&0.0) {
        parameters.push(0.0);
        states.push(flat.clone());
    }
    for (p, s) in closed.parameters.iter().zip(&closed.states).skip(1) {
        parameters.push(*p);
        states.push(s.clone());
    }
    let termination = [open.termination, closed.termination]
        .into_iter()
        .find(|t| *t != Termination::Completed)
        .unwrap_or(Termination::Completed);
    Ok(FoldingPath { parameter_name: "psi".into(), parameters, states, energies: None, termination })
}

/// Steers the projection stepper along the uniform motion: every main angle is
/// controlled towards its closed-form value at the next `ψ`, and the boundary
/// angles follow from the projection and Newton correction.
#[derive(Debug, Clone)]
pub struct UniformTrackingDriver {
    alpha: f64,
    n_angles: usize,
    targets: Vec<f64>,
    next: usize,
    step_scale: f64,
}

impl UniformTrackingDriver {
    /// `psi_targets[0]` is the start; later entries are visited in order.
    pub fn new(geom: &LeafOutGeometry, psi_targets: Vec<f64>, step_scale: f64) -> Self {
        Self { alpha: geom.alpha(), n_angles: geom.vertex_o_crease_count(), targets: psi_targets, next: 1, step_scale }
    }
}

impl StepDriver for UniformTrackingDriver {
    fn parameter_name(&self) -> &str {
        "psi"
    }

    fn parameter(&self) -> f64 {
        self.targets[self.next - 1]
    }

    fn next_request(&mut self, state: &FoldState) -> Option<StepRequest> {
        let psi = *self.targets.get(self.next)?;
        let rho_m = main_angle_from_psi(self.alpha, psi).ok()?;
        let rho_b = boundary_angle_from_psi(self.alpha, psi).ok()?;
        let delta_rho_0 = (0..self.n_angles).map(|j| if j % 2 == 0 { rho_m } else { rho_b } - state.rho()[j]).collect();
        Some(StepRequest {
            delta_rho_0,
            controlled: (0..self.n_angles).step_by(2).collect(),
            step_scale: self.step_scale,
        })
    }

    fn accept(&mut self, _state: &FoldState) {
        self.next += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::residual;

    const ALPHA: f64 = PI / 5.0;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    /// Closed-form inverse of the main relation.
    fn psi_of(alpha: f64, rho_m: f64, closed: bool) -> f64 {
        let (s, c) = (0.5 * rho_m).sin_cos();
        let t = alpha.tan() * s;
        let r = (1.0 + t * t).sqrt();
        let phi = t.atan();
        if closed {
            (c / r).acos() - phi
        } else {
            -(c / r).acos() - phi
        }
    }

    /// Dense scan oracle for the main relation.
    fn dense_root(alpha: f64, psi: f64) -> f64 {
        let n = 200_000;
        let f = |r: f64| main_relation(alpha, psi, r);
        for k in 1..=n {
            let (a, b) = (PI * (k - 1) as f64 / n as f64, PI * k as f64 / n as f64);
            if (f(a) > 0.0) != (f(b) > 0.0) {
                return bisect(f, a, b);
            }
        }
        panic!("no root");
    }

    #[test]
    fn flat_state() {
        assert_eq!(main_angle_from_psi(ALPHA, 0.0).unwrap(), 0.0);
        assert_eq!(boundary_angle_from_psi(ALPHA, 0.0).unwrap(), 0.0);
        let b = boundary_vector(ALPHA, 0.0, 0.0);
        assert!((b - Vector3::new(-ALPHA.sin(), ALPHA.cos(), 0.0)).amax() < 1e-15);
    }

    #[test]
    fn main_angle_oracles() {
        for psi in [deg(-30.0), deg(30.0), deg(-5.0), deg(45.0)] {
            let rho = main_angle_from_psi(ALPHA, psi).unwrap();
            assert!((rho - dense_root(ALPHA, psi)).abs() < 1e-10);
            assert!((psi_of(ALPHA, rho, psi > 0.0) - psi).abs() < 1e-10);
        }
        let open = main_angle_from_psi(ALPHA, deg(-30.0)).unwrap();
        let closed = main_angle_from_psi(ALPHA, deg(30.0)).unwrap();
        assert!(open > 0.0 && closed > 0.0 && (open - closed).abs() > 0.1);
    }

    #[test]
    fn boundary_vector_is_unit() {
        for psi in [deg(-30.0), deg(20.0), deg(-80.0)] {
            let rho = main_angle_from_psi(ALPHA, psi).unwrap();
            let b = boundary_vector(ALPHA, psi, rho);
            assert!((b.norm() - 1.0).abs() < 1e-12);
            let expected = ALPHA.cos() * psi.sin() + ALPHA.sin() * psi.cos() * (0.5 * rho).sin();
            assert_eq!(b.z, expected);
        }
    }

    #[test]
    fn boundary_angle_is_twice_the_tilt() {
        for psi_deg in [-85.0, -50.0, -30.0, -1.0, 0.3, 10.0, 30.0, 50.0] {
            let psi = deg(psi_deg);
            let rho_b = boundary_angle_from_psi(ALPHA, psi).unwrap();
            assert!((rho_b + 2.0 * psi.abs()).abs() < 1e-10, "psi={psi_deg}: {rho_b}");
        }
    }

    #[test]
    fn uniform_states_close_the_chain() {
        let g = LeafOutGeometry::new(5, 70.0, 30.0).unwrap();
        for psi_deg in (-85..=50).step_by(5) {
            let s = UniformState::at(ALPHA, deg(psi_deg as f64)).unwrap();
            let rho = s.fold_state(&g).unwrap();
            assert!(residual(&g, rho.rho()).unwrap().norm_inf() < 1e-10);
        }
    }

    #[test]
    fn admissible_range_matches_analysis() {
        let (lo, hi) = admissible_psi_range(ALPHA);
        assert!((lo + PI / 2.0).abs() < 1e-9, "{lo}");
        assert!((hi - (PI / 2.0 - ALPHA)).abs() < 1e-6, "{hi}");
        assert!(matches!(main_angle_from_psi(ALPHA, deg(60.0)), Err(Error::OutOfRange { .. })));
        assert!(matches!(boundary_angle_from_psi(ALPHA, deg(-95.0)), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn small_tilt_slopes() {
        let psi = 1e-4;
        let closed = main_angle_from_psi(ALPHA, psi).unwrap();
        let open = main_angle_from_psi(ALPHA, -psi).unwrap();
        let (sec, tan) = (1.0 / ALPHA.cos(), ALPHA.tan());
        assert!((closed / psi - 2.0 * (sec + tan)).abs() < 1e-3);
        assert!((open / psi - 2.0 * (sec - tan)).abs() < 1e-3);
    }

    #[test]
    fn path_grid_and_clipping() {
        let g = LeafOutGeometry::new(5, 70.0, 30.0).unwrap();
        let p = uniform_path(&g, deg(-60.0), deg(60.0), 241).unwrap();
        // ψ beyond 90° − α = 54° is unreachable
        assert_eq!(p.clipped, 12);
        assert_eq!(p.samples.len(), 229);
        assert!(p.samples.iter().any(|s| s.psi == 0.0 && s.rho_m == 0.0 && s.rho_b == 0.0));
        assert!(p.psi().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(p.path.termination, Termination::DriverFinished);
        assert!(uniform_path(&g, deg(70.0), deg(80.0), 3).is_err());
    }

    #[test]
    fn traced_path_matches_closed_form() {
        let g = LeafOutGeometry::new(5, 70.0, 30.0).unwrap();
        let traced = trace_uniform(&g, deg(-20.0), deg(20.0), 41, &SolverSettings::default()).unwrap();
        assert_eq!(traced.termination, Termination::Completed);
        assert_eq!(traced.len(), 41);
        for (psi, state) in traced.parameters.iter().zip(&traced.states) {
            let exact = UniformState::at(ALPHA, *psi).unwrap();
            for u in 1..=5 {
                assert!((state.main(u) - exact.rho_m).abs() < 1e-9);
                assert!(
                    (state.boundary(u) - exact.rho_b).abs() < 1e-9,
                    "psi {psi}: {} vs {}",
                    state.boundary(u),
                    exact.rho_b
                );
            }
        }
    }
}
