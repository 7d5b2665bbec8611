//! The degree-4 vertex `A` of a Miura unit cell and the relation it imposes
//! between the main-crease angle `ρ_M` and the sub-crease angle `ρ_S`.
//!
//! Going around `A` counterclockwise the creases are `AO` (main, `ρ_M`),
//! `AD_R` (sub, `ρ_S`), `AT` (tip, `-ρ_M`) and `AD_L` (sub, `ρ_S`), separated by
//! the flat sector angles `π-α`, `α`, `α`, `π-α`. The tip crease is collinear
//! with the main crease, so straight-line folding makes it carry `-ρ_M`.
//! Closure of the four rotations fixes `ρ_S` as a function of `ρ_M`.

use std::f64::consts::PI;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::rotation::{deviation_from_identity, rot_x, rot_x_prime, rot_z, skew_components};

/// Bisection stops once the bracket is narrower than this.
pub const SUB_ANGLE_TOLERANCE: f64 = 1e-12;

/// Largest closure residual accepted for a solved vertex.
pub const VERTEX_A_CLOSURE_TOLERANCE: f64 = 1e-10;

/// Main and sub fold angles of one unit cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitCellState {
    pub rho_m: f64,
    pub rho_s: f64,
}

impl UnitCellState {
    /// Solves the sub angle for `rho_m`.
    pub fn from_main(alpha: f64, rho_m: f64) -> Result<Self> {
        Ok(Self { rho_m, rho_s: sub_angle_from_main(alpha, rho_m)? })
    }
}

/// Rotation product around vertex `A`; the identity at a closed state.
pub fn vertex_a_product(alpha: f64, rho_m: f64, rho_s: f64) -> Matrix3<f64> {
    let wide = rot_z(PI - alpha);
    let narrow = rot_z(alpha);
    rot_x(rho_m) * wide * rot_x(rho_s) * narrow * rot_x(-rho_m) * narrow * rot_x(rho_s) * wide
}

/// Partial derivatives of the vertex-`A` product with respect to `ρ_M` and `ρ_S`.
fn vertex_a_partials(alpha: f64, rho_m: f64, rho_s: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let wide = rot_z(PI - alpha);
    let narrow = rot_z(alpha);
    let (m, mp) = (rot_x(rho_m), rot_x_prime(rho_m));
    let (t, tp) = (rot_x(-rho_m), -rot_x_prime(-rho_m));
    let (s, sp) = (rot_x(rho_s), rot_x_prime(rho_s));
    let d_main = mp * wide * s * narrow * t * narrow * s * wide + m * wide * s * narrow * tp * narrow * s * wide;
    let d_sub = m * wide * sp * narrow * t * narrow * s * wide + m * wide * s * narrow * t * narrow * sp * wide;
    (d_main, d_sub)
}

/// Scalar closure function: one skew component of the vertex-`A` product.
///
/// Besides the physical root it vanishes identically at `ρ_S = 0` and has
/// spurious roots where the other components do not vanish, so every
/// bracketed root is checked against the full product.
fn closure_gap(alpha: f64, rho_m: f64, rho_s: f64) -> f64 {
    skew_components(&vertex_a_product(alpha, rho_m, rho_s))[1]
}

/// Spacing of the bracketing scan over `[0, π]`.
const SCAN_STEP: f64 = 1e-2;

fn check_inputs(alpha: f64, rho_m: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < PI / 2.0) {
        return Err(Error::InvalidGeometry(format!("central angle {alpha} outside (0, π/2)")));
    }
    if !(0.0..=PI).contains(&rho_m) {
        return Err(Error::OutsideAngleBox { index: 0, value: rho_m });
    }
    Ok(())
}

fn closes(alpha: f64, rho_m: f64, rho_s: f64) -> bool {
    deviation_from_identity(&vertex_a_product(alpha, rho_m, rho_s)) <= VERTEX_A_CLOSURE_TOLERANCE
}

/// Bisection on `[lo, hi]`; `lo_positive` gives the sign taken at `lo`
/// (needed when `lo = 0`, where the gap vanishes).
fn bisect(alpha: f64, rho_m: f64, mut lo: f64, mut hi: f64, lo_positive: bool) -> f64 {
    while hi - lo > SUB_ANGLE_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if (closure_gap(alpha, rho_m, mid) > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root in `[lo, hi]` if the gap changes sign there and the root closes the vertex.
fn try_bracket(alpha: f64, rho_m: f64, lo: f64, hi: f64) -> Option<f64> {
    let g_hi = closure_gap(alpha, rho_m, hi);
    let lo_positive = if lo == 0.0 { g_hi < 0.0 } else { closure_gap(alpha, rho_m, lo) > 0.0 };
    if (g_hi > 0.0) == lo_positive {
        return None;
    }
    let root = bisect(alpha, rho_m, lo, hi, lo_positive);
    closes(alpha, rho_m, root).then_some(root)
}

/// Sub-crease angle `ρ_S ∈ [0, π]` closing vertex `A` for main angle `rho_m`.
pub fn sub_angle_from_main(alpha: f64, rho_m: f64) -> Result<f64> {
    SubAngleSolver::new().solve(alpha, rho_m)
}

/// Bisection solver for the sub angle that reuses its previous root to narrow
/// the bracket when called repeatedly along a path.
#[derive(Debug, Clone, Default)]
pub struct SubAngleSolver {
    last: Option<(f64, f64, f64)>,
}

impl SubAngleSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, alpha: f64, rho_m: f64) -> Result<f64> {
        check_inputs(alpha, rho_m)?;
        if rho_m == 0.0 {
            return Ok(0.0);
        }
        let rho_s = self
            .solve_inner(alpha, rho_m)
            .ok_or_else(|| Error::Numerical(format!("vertex A has no closed sub angle at rho_M = {rho_m}")))?;
        self.last = Some((alpha, rho_m, rho_s));
        Ok(rho_s)
    }

    fn solve_inner(&self, alpha: f64, rho_m: f64) -> Option<f64> {
        if closes(alpha, rho_m, PI) {
            return Some(PI);
        }
        if let Some((a, m, s)) = self.last {
            if a == alpha {
                // slope of ρ_S(ρ_M) never exceeds sec α
                let w = 2.0 * (rho_m - m).abs() / alpha.cos() + 1e-9;
                if w < SCAN_STEP {
                    let root = try_bracket(alpha, rho_m, (s - w).max(0.0), (s + w).min(PI));
                    if root.is_some() {
                        return root;
                    }
                }
            }
        }
        let n = (PI / SCAN_STEP).ceil() as usize;
        let grid = |k: usize| if k == n { PI } else { k as f64 * SCAN_STEP };
        (0..n).find_map(|k| try_bracket(alpha, rho_m, grid(k), grid(k + 1)))
    }
}

/// Slope `dρ_S/dρ_M` by implicit differentiation of the vertex-`A` closure.
pub fn d_sub_d_main(alpha: f64, rho_m: f64) -> Result<f64> {
    check_inputs(alpha, rho_m)?;
    if rho_m <= 0.0 || rho_m >= PI {
        return Err(Error::InvalidInput(format!("d_sub_d_main needs rho_M strictly inside (0, π), got {rho_m}")));
    }
    let rho_s = sub_angle_from_main(alpha, rho_m)?;
    let (d_main, d_sub) = vertex_a_partials(alpha, rho_m, rho_s);
    let g_m = skew_components(&d_main)[1];
    let g_s = skew_components(&d_sub)[1];
    if g_s.abs() < 1e-14 {
        return Err(Error::Numerical(format!("singular sub-angle slope at rho_M = {rho_m}")));
    }
    Ok(-g_m / g_s)
}
