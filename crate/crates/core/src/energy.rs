//! Torsion-spring energy `E = ½ Σ κ_j (ρ_j − ρ̄_j)²` over all main, sub and
//! boundary creases, energy landscapes along the uniform motion, and
//! bistability measures.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{CreaseId, CreaseKind, LeafOutGeometry};
use crate::kinematics::{angle_box, FoldState, FoldingPath};
use crate::uniform::{uniform_path, UniformPath};
use crate::unitcell::{d_sub_d_main, sub_angle_from_main};

/// Stiffness and rest angle of one crease.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spring {
    pub kappa: f64,
    pub rest: f64,
}

/// Spring assignment for every crease of a pattern.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpringModel {
    springs: BTreeMap<CreaseId, Spring>,
}

fn rest_box(kind: CreaseKind) -> (f64, f64) {
    match kind {
        CreaseKind::Boundary => angle_box(1),
        _ => angle_box(0),
    }
}

impl SpringModel {
    /// Checks coverage of every crease of `geom`, non-negative stiffness and
    /// rest angles inside the mountain/valley boxes.
    pub fn new(geom: &LeafOutGeometry, springs: BTreeMap<CreaseId, Spring>) -> Result<Self> {
        for id in geom.creases() {
            let s = springs.get(&id).ok_or_else(|| Error::MissingSpring(id.to_string()))?;
            if !(s.kappa.is_finite() && s.kappa >= 0.0) {
                return Err(Error::InvalidSprings(format!("stiffness of {id} must be non-negative, got {}", s.kappa)));
            }
            let (lo, hi) = rest_box(id.kind);
            if !(s.rest >= lo && s.rest <= hi) {
                return Err(Error::InvalidSprings(format!(
                    "rest angle of {id} = {} rad lies outside [{lo}, {hi}]",
                    s.rest
                )));
            }
        }
        Ok(Self { springs })
    }

    /// Per-kind stiffness; sub rest angles follow from the unit-cell relation.
    pub fn per_kind(
        geom: &LeafOutGeometry,
        kappa_main: f64,
        kappa_sub: f64,
        kappa_boundary: f64,
        rest_main: f64,
        rest_boundary: f64,
    ) -> Result<Self> {
        let (lo, hi) = angle_box(0);
        if !(rest_main >= lo && rest_main <= hi) {
            return Err(Error::InvalidSprings(format!("main rest angle {rest_main} rad outside [0, π]")));
        }
        let rest_sub = sub_angle_from_main(geom.alpha(), rest_main)?;
        let springs = geom
            .creases()
            .into_iter()
            .map(|id| {
                let spring = match id.kind {
                    CreaseKind::Main => Spring { kappa: kappa_main, rest: rest_main },
                    CreaseKind::Sub => Spring { kappa: kappa_sub, rest: rest_sub },
                    CreaseKind::Boundary => Spring { kappa: kappa_boundary, rest: rest_boundary },
                };
                (id, spring)
            })
            .collect();
        Self::new(geom, springs)
    }

    /// The same stiffness on every crease.
    pub fn uniform(geom: &LeafOutGeometry, kappa: f64, rest_main: f64, rest_boundary: f64) -> Result<Self> {
        Self::per_kind(geom, kappa, kappa, kappa, rest_main, rest_boundary)
    }

    /// Rest angles read off a state, so that the state stores no energy.
    pub fn resting_at(geom: &LeafOutGeometry, kappa: f64, state: &FoldState) -> Result<Self> {
        let springs =
            geom.creases().into_iter().map(|id| (id, Spring { kappa, rest: crease_angle(state, &id) })).collect();
        Self::new(geom, springs)
    }

    pub fn get(&self, id: &CreaseId) -> Option<&Spring> {
        self.springs.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CreaseId, &Spring)> {
        self.springs.iter()
    }

    /// All stiffnesses multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            springs: self
                .springs
                .iter()
                .map(|(id, s)| (*id, Spring { kappa: s.kappa * factor, rest: s.rest }))
                .collect(),
        }
    }

    /// The common stiffness when every crease has the same one.
    pub fn uniform_kappa(&self) -> Option<f64> {
        let mut it = self.springs.values().map(|s| s.kappa);
        let first = it.next()?;
        it.all(|k| k == first).then_some(first)
    }
}

/// Fold angle of any spring-carrying crease.
pub fn crease_angle(state: &FoldState, id: &CreaseId) -> f64 {
    match id.kind {
        CreaseKind::Main => state.main(id.unit),
        CreaseKind::Sub => state.sub_angles()[id.unit - 1],
        CreaseKind::Boundary => state.boundary(id.unit),
    }
}

/// Stored spring energy of `state`.
pub fn energy_of_state(geom: &LeafOutGeometry, springs: &SpringModel, state: &FoldState) -> Result<f64> {
    let mut e = 0.0;
    for id in geom.creases() {
        let s = springs.get(&id).ok_or_else(|| Error::MissingSpring(id.to_string()))?;
        let d = crease_angle(state, &id) - s.rest;
        e += 0.5 * s.kappa * d * d;
    }
    Ok(e)
}

/// `∂E/∂ρ_j` for each vertex-`O` angle, sub creases folded in through the
/// unit-cell slope. Requires every main angle strictly inside `(0, π)` when a
/// sub crease carries stiffness.
pub fn energy_gradient(geom: &LeafOutGeometry, springs: &SpringModel, state: &FoldState) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; geom.vertex_o_crease_count()];
    for id in geom.creases() {
        let s = springs.get(&id).ok_or_else(|| Error::MissingSpring(id.to_string()))?;
        let force = s.kappa * (crease_angle(state, &id) - s.rest);
        match id.kind {
            CreaseKind::Main => grad[geom.main_index(id.unit)] += force,
            CreaseKind::Boundary => grad[geom.boundary_index(id.unit)] += force,
            CreaseKind::Sub if s.kappa != 0.0 => {
                let slope = d_sub_d_main(geom.alpha(), state.main(id.unit))?;
                grad[geom.main_index(id.unit)] += force * slope;
            }
            CreaseKind::Sub => {}
        }
    }
    Ok(grad)
}

/// Energies of every state on a path.
pub fn path_energies(geom: &LeafOutGeometry, springs: &SpringModel, path: &FoldingPath) -> Result<Vec<f64>> {
    path.states.iter().map(|s| energy_of_state(geom, springs, s)).collect()
}

/// Energy sampled along the uniform motion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyCurve {
    pub psi: Vec<f64>,
    pub energy: Vec<f64>,
    /// Requested samples outside the motion range.
    pub clipped: usize,
}

/// Energy along an already sampled uniform path.
pub fn curve_from_path(geom: &LeafOutGeometry, springs: &SpringModel, path: &UniformPath) -> Result<EnergyCurve> {
    Ok(EnergyCurve { psi: path.psi(), energy: path_energies(geom, springs, &path.path)?, clipped: path.clipped })
}

/// Energy over `ψ ∈ [psi_lo, psi_hi]` along the uniform motion.
pub fn landscape_over_psi(
    geom: &LeafOutGeometry,
    springs: &SpringModel,
    psi_lo: f64,
    psi_hi: f64,
    n_samples: usize,
) -> Result<EnergyCurve> {
    curve_from_path(geom, springs, &uniform_path(geom, psi_lo, psi_hi, n_samples)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtremumKind {
    Minimum,
    Maximum,
}

/// A refined interior extremum of a sampled curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extremum {
    pub kind: ExtremumKind,
    pub psi: f64,
    pub energy: f64,
    /// Index of the grid sample it was refined from.
    pub index: usize,
}

/// Vertex of the parabola through three points, with its value.
fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> Option<(f64, f64)> {
    let (d1, d2) = (x[1] - x[0], x[2] - x[1]);
    let (s1, s2) = ((y[1] - y[0]) / d1, (y[2] - y[1]) / d2);
    let curvature = (s2 - s1) / (x[2] - x[0]);
    if curvature == 0.0 || !curvature.is_finite() {
        return None;
    }
    // y = y1 + b (t - x1) + c (t - x1)^2 with c = curvature
    let b = s1 + curvature * d1;
    let t = x[1] - b / (2.0 * curvature);
    Some((t, y[1] - b * b / (4.0 * curvature)))
}

/// Interior grid extrema refined by a three-point quadratic fit.
///
/// The flat state `ψ = 0` is a kink of the uniform parametrization (the main
/// angle grows like `|ψ|` with different slopes on each side), so an extremum
/// sampled exactly there is reported unrefined. Elsewhere the refined abscissa
/// is kept within half a grid cell of its sample.
pub fn find_extrema(curve: &EnergyCurve) -> Vec<Extremum> {
    let (x, y) = (&curve.psi, &curve.energy);
    let mut out = Vec::new();
    for i in 1..y.len().saturating_sub(1) {
        let kind = if y[i] < y[i - 1] && y[i] <= y[i + 1] {
            ExtremumKind::Minimum
        } else if y[i] > y[i - 1] && y[i] >= y[i + 1] {
            ExtremumKind::Maximum
        } else {
            continue;
        };
        let (mut psi, mut energy) = (x[i], y[i]);
        if x[i] != 0.0 {
            if let Some((t, v)) = parabola_vertex([x[i - 1], x[i], x[i + 1]], [y[i - 1], y[i], y[i + 1]]) {
                let half = 0.5 * (x[i + 1] - x[i]).min(x[i] - x[i - 1]);
                if (t - x[i]).abs() <= half {
                    psi = t;
                    energy = v;
                }
            }
        }
        out.push(Extremum { kind, psi, energy, index: i });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityClass {
    Bistable,
    Monostable,
}

/// Stable states and snap-through barriers of an energy curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BistabilityReport {
    pub stability_class: StabilityClass,
    pub minima: Vec<Extremum>,
    pub maxima: Vec<Extremum>,
    pub psi_open: Option<f64>,
    pub psi_closed: Option<f64>,
    pub psi_barrier: Option<f64>,
    pub e_open: Option<f64>,
    pub e_closed: Option<f64>,
    pub e_barrier: Option<f64>,
    /// Barrier seen from the open minimum.
    pub delta_e_g: Option<f64>,
    /// Barrier seen from the closed minimum.
    pub delta_e_r: Option<f64>,
    /// `(ΔE_g − ΔE_r) / (ΔE_g + ΔE_r)`.
    pub ratio_xi: Option<f64>,
}

/// Classifies a curve as mono- or bistable from its interior extrema.
pub fn characterize_bistability(curve: &EnergyCurve) -> Result<BistabilityReport> {
    if curve.psi.len() != curve.energy.len() {
        return Err(Error::InvalidInput("psi and energy columns differ in length".into()));
    }
    let spans = curve.psi.first().is_some_and(|&p| p < 0.0) && curve.psi.last().is_some_and(|&p| p > 0.0);
    if !spans {
        return Err(Error::InvalidInput("energy curve must span both the open and the closed phase".into()));
    }
    let extrema = find_extrema(curve);
    let minima: Vec<Extremum> = extrema.iter().copied().filter(|e| e.kind == ExtremumKind::Minimum).collect();
    let maxima: Vec<Extremum> = extrema.iter().copied().filter(|e| e.kind == ExtremumKind::Maximum).collect();
    let mut report = BistabilityReport {
        stability_class: StabilityClass::Monostable,
        minima: minima.clone(),
        maxima: maxima.clone(),
        psi_open: None,
        psi_closed: None,
        psi_barrier: None,
        e_open: None,
        e_closed: None,
        e_barrier: None,
        delta_e_g: None,
        delta_e_r: None,
        ratio_xi: None,
    };
    match minima.len() {
        0 | 1 => Ok(report),
        2 => {
            let (open, closed) = (minima[0], minima[1]);
            let barrier = maxima
                .iter()
                .filter(|m| m.index > open.index && m.index < closed.index)
                .max_by(|a, b| a.energy.total_cmp(&b.energy))
                .copied()
                .ok_or_else(|| Error::Numerical("no maximum between the two minima".into()))?;
            let g = barrier.energy - open.energy;
            let r = barrier.energy - closed.energy;
            report.stability_class = StabilityClass::Bistable;
            report.psi_open = Some(open.psi);
            report.psi_closed = Some(closed.psi);
            report.psi_barrier = Some(barrier.psi);
            report.e_open = Some(open.energy);
            report.e_closed = Some(closed.energy);
            report.e_barrier = Some(barrier.energy);
            report.delta_e_g = Some(g);
            report.delta_e_r = Some(r);
            report.ratio_xi = Some((g - r) / (g + r));
            Ok(report)
        }
        count => Err(Error::Multistable { count }),
    }
}

/// Energy ratio `ξ` over a grid of rest angles; `None` where the landscape is
/// not bistable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioSurface {
    pub rest_main: Vec<f64>,
    pub rest_boundary: Vec<f64>,
    /// `xi[i][j]` belongs to `(rest_main[i], rest_boundary[j])`.
    pub xi: Vec<Vec<Option<f64>>>,
}

/// Evaluates `ξ` on the grid, reusing one sampled uniform path for every point.
/// The stiffness is uniform; `ξ` does not depend on its value.
pub fn ratio_surface(
    geom: &LeafOutGeometry,
    path: &UniformPath,
    rest_main: &[f64],
    rest_boundary: &[f64],
) -> Result<RatioSurface> {
    let psi = path.psi();
    let alpha = geom.alpha();
    // per-sample crease angles: one main, one sub, one boundary (uniform states)
    let samples: Vec<(f64, f64, f64)> = path.samples.iter().map(|s| (s.rho_m, s.rho_s, s.rho_b)).collect();
    let n = geom.n_cell() as f64;
    let rows: Vec<Vec<Option<f64>>> = rest_main
        .par_iter()
        .map(|&rm| -> Result<Vec<Option<f64>>> {
            let rs = sub_angle_from_main(alpha, rm)?;
            rest_boundary
                .iter()
                .map(|&rb| {
                    let energy = samples
                        .iter()
                        .map(|&(m, s, b)| 0.5 * n * ((m - rm).powi(2) + 2.0 * (s - rs).powi(2) + (b - rb).powi(2)))
                        .collect();
                    let curve = EnergyCurve { psi: psi.clone(), energy, clipped: 0 };
                    match characterize_bistability(&curve) {
                        Ok(r) => Ok(r.ratio_xi),
                        Err(Error::Multistable { .. }) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(RatioSurface { rest_main: rest_main.to_vec(), rest_boundary: rest_boundary.to_vec(), xi: rows })
}

/// Grid-edge identifier: the lower-left node and the direction (0 along the
/// main axis, 1 along the boundary axis).
type EdgeKey = (usize, usize, u8);

/// Polylines of `ξ = 0`, by linear interpolation along every grid edge whose
/// ends are both defined and of opposite sign, chained cell by cell. Saddle
/// cells are resolved with the average of their corners.
pub fn zero_contour(surface: &RatioSurface) -> Vec<Vec<[f64; 2]>> {
    let (nm, nb) = (surface.rest_main.len(), surface.rest_boundary.len());
    let value = |i: usize, j: usize| surface.xi[i][j];
    let crossing = |key: EdgeKey| -> Option<[f64; 2]> {
        let (i, j, dir) = key;
        let (i2, j2) = if dir == 0 { (i + 1, j) } else { (i, j + 1) };
        let (a, b) = (value(i, j)?, value(i2, j2)?);
        if (a >= 0.0) == (b >= 0.0) {
            return None;
        }
        let t = a / (a - b);
        let lerp = |p: f64, q: f64| p + t * (q - p);
        Some([
            lerp(surface.rest_main[i], surface.rest_main[i2]),
            lerp(surface.rest_boundary[j], surface.rest_boundary[j2]),
        ])
    };

    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for i in 0..nm.saturating_sub(1) {
        for j in 0..nb.saturating_sub(1) {
            // edges counterclockwise: bottom, right, top, left
            let edges = [(i, j, 0), (i + 1, j, 1), (i, j + 1, 0), (i, j, 1)];
            let hits: Vec<EdgeKey> = edges.into_iter().filter(|&e| crossing(e).is_some()).collect();
            match hits.len() {
                2 => segments.push((hits[0], hits[1])),
                4 => {
                    let corners = [value(i, j), value(i + 1, j), value(i + 1, j + 1), value(i, j + 1)];
                    let centre: f64 = corners.iter().map(|c| c.unwrap_or(0.0)).sum::<f64>() / 4.0;
                    // join the crossings around the corner whose sign differs from the centre
                    if (corners[0].unwrap_or(0.0) >= 0.0) == (centre >= 0.0) {
                        segments.push((hits[0], hits[1]));
                        segments.push((hits[2], hits[3]));
                    } else {
                        segments.push((hits[3], hits[0]));
                        segments.push((hits[1], hits[2]));
                    }
                }
                _ => {}
            }
        }
    }

    let mut adjacency: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        adjacency.entry(*a).or_default().push(k);
        adjacency.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    let walk = |start_seg: usize, start_key: EdgeKey, used: &mut Vec<bool>| -> Vec<[f64; 2]> {
        let mut keys = vec![start_key];
        let (mut seg, mut key) = (start_seg, start_key);
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            key = if a == key { b } else { a };
            keys.push(key);
            match adjacency[&key].iter().find(|&&s| !used[s]) {
                Some(&next) => seg = next,
                None => break,
            }
        }
        keys.into_iter().filter_map(crossing).collect()
    };
    // open chains first, starting from their dangling ends, in a fixed order
    let mut ends: Vec<EdgeKey> = adjacency.iter().filter(|(_, v)| v.len() == 1).map(|(k, _)| *k).collect();
    ends.sort_unstable();
    for key in ends {
        let seg = adjacency[&key][0];
        if !used[seg] {
            lines.push(walk(seg, key, &mut used));
        }
    }
    for seg in 0..segments.len() {
        if !used[seg] {
            lines.push(walk(seg, segments[seg].0, &mut used));
        }
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uniform::UniformState;

    fn prototype() -> LeafOutGeometry {
        LeafOutGeometry::new(5, 70.0, 30.0).unwrap()
    }

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    fn fig1d_springs(g: &LeafOutGeometry) -> SpringModel {
        SpringModel::uniform(g, 1.0, deg(120.0), deg(-30.0)).unwrap()
    }

    fn full_range(g: &LeafOutGeometry, springs: &SpringModel) -> EnergyCurve {
        landscape_over_psi(g, springs, deg(-90.0), deg(90.0), 361).unwrap()
    }

    #[test]
    fn rest_state_has_zero_energy() {
        let g = prototype();
        let s = UniformState::at(g.alpha(), deg(20.0)).unwrap().fold_state(&g).unwrap();
        let springs = SpringModel::resting_at(&g, 2.0, &s).unwrap();
        assert_eq!(energy_of_state(&g, &springs, &s).unwrap(), 0.0);
    }

    #[test]
    fn flat_energy_is_direct_sum() {
        let g = prototype();
        let springs = fig1d_springs(&g);
        let rs = sub_angle_from_main(g.alpha(), deg(120.0)).unwrap();
        let expected = 0.5 * 5.0 * (deg(120.0).powi(2) + 2.0 * rs * rs + deg(30.0).powi(2));
        let e = energy_of_state(&g, &springs, &FoldState::flat(&g)).unwrap();
        assert!((e - expected).abs() < 1e-12);
        let doubled = energy_of_state(&g, &springs.scaled(2.0), &FoldState::flat(&g)).unwrap();
        assert_eq!(doubled, 2.0 * e);
    }

    #[test]
    fn springs_are_validated() {
        let g = prototype();
        assert!(matches!(SpringModel::uniform(&g, -1.0, 0.0, 0.0), Err(Error::InvalidSprings(_))));
        assert!(SpringModel::uniform(&g, 1.0, deg(-10.0), 0.0).is_err());
        assert!(SpringModel::uniform(&g, 1.0, deg(10.0), deg(10.0)).is_err());
        let mut map: BTreeMap<CreaseId, Spring> = fig1d_springs(&g).iter().map(|(k, v)| (*k, *v)).collect();
        map.remove(&CreaseId::main(3));
        assert_eq!(SpringModel::new(&g, map), Err(Error::MissingSpring("M3".into())));
        let small = LeafOutGeometry::new(4, 1.0, 1.0).unwrap();
        let springs = SpringModel::uniform(&small, 1.0, 0.0, 0.0).unwrap();
        assert!(matches!(energy_of_state(&g, &springs, &FoldState::flat(&g)), Err(Error::MissingSpring(_))));
    }

    #[test]
    fn fig1d_is_bistable_with_flat_peak() {
        let g = prototype();
        let curve = full_range(&g, &fig1d_springs(&g));
        let report = characterize_bistability(&curve).unwrap();
        assert_eq!(report.stability_class, StabilityClass::Bistable);
        assert_eq!(report.minima.len(), 2);
        assert_eq!(report.maxima.len(), 1);
        assert!(report.psi_barrier.unwrap().abs() < deg(0.25));
        assert!(report.psi_open.unwrap() < 0.0 && report.psi_closed.unwrap() > 0.0);
    }

    #[test]
    fn zero_rest_angles_are_monostable() {
        let g = prototype();
        let curve = full_range(&g, &SpringModel::uniform(&g, 1.0, 0.0, 0.0).unwrap());
        let report = characterize_bistability(&curve).unwrap();
        assert_eq!(report.stability_class, StabilityClass::Monostable);
        assert_eq!(report.minima.len(), 1);
        assert!(report.minima[0].psi.abs() < deg(0.25));
        assert!(report.delta_e_g.is_none() && report.ratio_xi.is_none());
    }

    #[test]
    fn rest_on_path_gives_global_minimum_there() {
        let g = prototype();
        let s = UniformState::at(g.alpha(), deg(-40.0)).unwrap().fold_state(&g).unwrap();
        let springs = SpringModel::resting_at(&g, 1.0, &s).unwrap();
        let curve = full_range(&g, &springs);
        let k = curve.energy.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((curve.psi[k] - deg(-40.0)).abs() < 1e-9);
        assert!(curve.energy[k] < 1e-20);
    }

    #[test]
    fn fig2b_parameters_are_bistable() {
        let g = prototype();
        let springs = SpringModel::uniform(&g, 1.0, deg(60.0), deg(-120.0)).unwrap();
        let report = characterize_bistability(&full_range(&g, &springs)).unwrap();
        assert_eq!(report.stability_class, StabilityClass::Bistable);
        assert!(report.delta_e_g.unwrap() > 0.0 && report.delta_e_r.unwrap() > 0.0);
        let xi = report.ratio_xi.unwrap();
        assert!((-1.0..=1.0).contains(&xi));
    }

    #[test]
    fn scaling_stiffness_scales_gaps_only() {
        let g = prototype();
        let springs = fig1d_springs(&g);
        let a = characterize_bistability(&full_range(&g, &springs)).unwrap();
        let b = characterize_bistability(&full_range(&g, &springs.scaled(10.0))).unwrap();
        for (x, y) in [(a.psi_open, b.psi_open), (a.psi_closed, b.psi_closed), (a.psi_barrier, b.psi_barrier)] {
            assert!((x.unwrap() - y.unwrap()).abs() < 1e-10);
        }
        assert!((a.ratio_xi.unwrap() - b.ratio_xi.unwrap()).abs() < 1e-12);
        assert!((b.delta_e_g.unwrap() / a.delta_e_g.unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_refinement_recovers_parabola_vertex() {
        let psi: Vec<f64> = (0..21).map(|k| -1.0 + 0.1 * k as f64).collect();
        let energy: Vec<f64> = psi.iter().map(|p| (p - 0.234f64).powi(2) + 1.0).collect();
        let ex = find_extrema(&EnergyCurve { psi, energy, clipped: 0 });
        assert_eq!(ex.len(), 1);
        assert!((ex[0].psi - 0.234).abs() < 1e-12);
        assert!((ex[0].energy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn multistable_curves_are_flagged() {
        let psi: Vec<f64> = (0..101).map(|k| -1.0 + 0.02 * k as f64).collect();
        let energy: Vec<f64> = psi.iter().map(|p| (12.0 * p).cos()).collect();
        let r = characterize_bistability(&EnergyCurve { psi, energy, clipped: 0 });
        assert!(matches!(r, Err(Error::Multistable { count }) if count > 2));
    }

    #[test]
    fn gradient_matches_chain_rule_along_the_path() {
        let g = prototype();
        let springs = SpringModel::uniform(&g, 1.0, deg(60.0), deg(-120.0)).unwrap();
        let alpha = g.alpha();
        let state_at = |psi: f64| UniformState::at(alpha, psi).unwrap().fold_state(&g).unwrap();
        for psi in [-0.5, -1e-3, 1e-3, 0.4] {
            let h = 1e-6;
            let (a, b) = (state_at(psi - h), state_at(psi + h));
            let fd =
                (energy_of_state(&g, &springs, &b).unwrap() - energy_of_state(&g, &springs, &a).unwrap()) / (2.0 * h);
            let grad = energy_gradient(&g, &springs, &state_at(psi)).unwrap();
            let chain: f64 = (0..10).map(|j| grad[j] * (b.rho()[j] - a.rho()[j]) / (2.0 * h)).sum();
            assert!(((chain - fd) / fd).abs() < 1e-5, "psi={psi}: {chain} vs {fd}");
        }
    }

    #[test]
    fn contour_of_a_plane() {
        let axis: Vec<f64> = (0..6).map(|k| k as f64).collect();
        let xi = axis.iter().map(|&m| axis.iter().map(|&b| Some(m - b - 0.5)).collect()).collect();
        let surface = RatioSurface { rest_main: axis.clone(), rest_boundary: axis, xi };
        let lines = zero_contour(&surface);
        assert_eq!(lines.len(), 1);
        for p in &lines[0] {
            assert!((p[0] - p[1] - 0.5).abs() < 1e-12);
        }
        assert_eq!(lines[0].len(), 10);
    }

    #[test]
    fn contour_skips_undefined_corners() {
        let axis: Vec<f64> = (0..4).map(|k| k as f64).collect();
        let xi = (0..4).map(|i| (0..4).map(|j| if i == 3 { None } else { Some(j as f64 - 1.5) }).collect()).collect();
        let surface = RatioSurface { rest_main: axis.clone(), rest_boundary: axis, xi };
        let lines = zero_contour(&surface);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].len(), 3);
        assert!(lines[0].iter().all(|p| (p[1] - 1.5).abs() < 1e-12 && p[0] <= 2.0));
    }
}
