//! Leaf-out crease pattern: unit cells, crease enumeration, coordinate frames
//! and reconstruction of the folded 3D shape.
//!
//! Flat-pattern construction (the mirror-symmetric Miura cell):
//!
//! * vertex `O` sits at the origin; unit `n` (1-based, counterclockwise) has its
//!   main crease `OA` along `R_z(2(n-1)α)·i2`, so unit 1 points along `+i2`;
//! * the boundary crease `OB_n` joining units `n` and `n+1` lies at `+α` from the
//!   main crease of unit `n` and has length `L2`;
//! * each inner panel `O-A-D-B` is a parallelogram with sides `OA = L1` and
//!   `AD = L2`, so the sub crease `AD` runs parallel to the adjacent boundary
//!   crease and the sector angles at `A` are `(π-α, α, α, π-α)`;
//! * a tip crease `AT` (collinear with `OA`, `|AT| = L1`) completes the degree-4
//!   vertex at `A`; each outer panel `A-T-Y-D` is the translate of its inner panel.
//!
//! This reconstruction of the unit-cell shape is an assumption: only the lengths
//! `L1 = |OA|`, `L2 = |AD|` and the central angle are fixed by the source design.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{chain_product, FoldState};
use crate::rotation::{axis_angle, deviation_from_identity, rot_x, rot_z};

/// Closure tolerance accepted by [`reconstruct_mesh`].
pub const MESH_CLOSURE_TOLERANCE: f64 = 1e-8;

/// Definition of a leaf-out pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeafOutGeometry {
    n_cell: usize,
    alpha: f64,
    l1: f64,
    l2: f64,
}

impl LeafOutGeometry {
    /// Builds a pattern of `n_cell` unit cells with `L1 = |OA|` and `L2 = |AD|`.
    pub fn new(n_cell: usize, l1: f64, l2: f64) -> Result<Self> {
        if n_cell < 3 {
            return Err(Error::InvalidGeometry(format!(
                "n_cell must be at least 3 to close around vertex O, got {n_cell}"
            )));
        }
        if !(l1.is_finite() && l1 > 0.0) {
            return Err(Error::InvalidGeometry(format!("L1 must be positive, got {l1}")));
        }
        if !(l2.is_finite() && l2 > 0.0) {
            return Err(Error::InvalidGeometry(format!("L2 must be positive, got {l2}")));
        }
        Ok(Self { n_cell, alpha: PI / n_cell as f64, l1, l2 })
    }

    pub fn n_cell(&self) -> usize {
        self.n_cell
    }

    /// Central angle `π / n_cell`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    /// Number of creases incident to vertex `O` (`2·n_cell`).
    pub fn vertex_o_crease_count(&self) -> usize {
        2 * self.n_cell
    }

    /// Number of creases carrying a torsion spring (`4·n_cell`).
    pub fn total_crease_count(&self) -> usize {
        4 * self.n_cell
    }

    /// Index of the main crease of `unit` (1-based) in the vertex-`O` angle vector.
    pub fn main_index(&self, unit: usize) -> usize {
        debug_assert!((1..=self.n_cell).contains(&unit));
        2 * (unit - 1)
    }

    /// Index of boundary crease `B_unit` (between `unit` and `unit + 1`).
    pub fn boundary_index(&self, unit: usize) -> usize {
        debug_assert!((1..=self.n_cell).contains(&unit));
        2 * (unit - 1) + 1
    }

    /// Vertex-`O` creases in chain order `[M1, B1, ..., Mn, Bn]`.
    pub fn vertex_o_creases(&self) -> Vec<CreaseId> {
        (1..=self.n_cell).flat_map(|n| [CreaseId::main(n), CreaseId::boundary(n)]).collect()
    }

    /// All spring-carrying creases, unit by unit.
    pub fn creases(&self) -> Vec<CreaseId> {
        (1..=self.n_cell)
            .flat_map(|n| {
                [CreaseId::main(n), CreaseId::sub(n, Side::Left), CreaseId::sub(n, Side::Right), CreaseId::boundary(n)]
            })
            .collect()
    }

    /// Flat-state direction of vertex-`O` crease `j` (0-based chain index).
    pub fn crease_direction(&self, j: usize) -> Vector3<f64> {
        let theta = j as f64 * self.alpha;
        Vector3::new(-theta.sin(), theta.cos(), 0.0)
    }

    /// Flat pattern as a mesh (every fold angle zero).
    pub fn flat_mesh(&self) -> FoldedMesh {
        let layout = FlatLayout::new(self);
        let faces = layout.faces();
        FoldedMesh {
            vertices: layout.points.clone(),
            flat_vertices: layout.points.clone(),
            faces,
            crease_edges: layout.crease_edges(),
            tip_edges: layout.tip_edges(),
            tips: (1..=self.n_cell).map(|n| layout.unit(n).t).collect(),
        }
    }
}

/// Kind of a crease line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CreaseKind {
    Main,
    Sub,
    Boundary,
}

/// Side of a sub crease, looking outward along the main crease.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Identifier of a spring-carrying crease. Formats as `M3`, `S3L`, `S3R`, `B3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CreaseId {
    pub kind: CreaseKind,
    pub unit: usize,
    pub side: Option<Side>,
}

impl CreaseId {
    pub fn main(unit: usize) -> Self {
        Self { kind: CreaseKind::Main, unit, side: None }
    }

    pub fn sub(unit: usize, side: Side) -> Self {
        Self { kind: CreaseKind::Sub, unit, side: Some(side) }
    }

    /// Boundary crease between `unit` and `unit + 1` (cyclically).
    pub fn boundary(unit: usize) -> Self {
        Self { kind: CreaseKind::Boundary, unit, side: None }
    }
}

impl fmt::Display for CreaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.side) {
            (CreaseKind::Main, _) => write!(f, "M{}", self.unit),
            (CreaseKind::Boundary, _) => write!(f, "B{}", self.unit),
            (CreaseKind::Sub, Some(Side::Left)) => write!(f, "S{}L", self.unit),
            (CreaseKind::Sub, _) => write!(f, "S{}R", self.unit),
        }
    }
}

impl FromStr for CreaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("malformed crease id `{s}`"));
        let mut chars = s.chars();
        let kind = match chars.next() {
            Some('M') => CreaseKind::Main,
            Some('S') => CreaseKind::Sub,
            Some('B') => CreaseKind::Boundary,
            _ => return Err(bad()),
        };
        let rest = chars.as_str();
        let (digits, side) = match kind {
            CreaseKind::Sub => match rest.strip_suffix('L') {
                Some(d) => (d, Some(Side::Left)),
                None => (rest.strip_suffix('R').ok_or_else(bad)?, Some(Side::Right)),
            },
            _ => (rest, None),
        };
        let unit: usize = digits.parse().map_err(|_| bad())?;
        if unit == 0 {
            return Err(bad());
        }
        Ok(Self { kind, unit, side })
    }
}

impl Serialize for CreaseId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CreaseId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Global and per-unit coordinate triads. Matrix columns are the axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub global: Matrix3<f64>,
    pub local: Matrix3<f64>,
    /// Tilt of the unit's main-crease axis out of the `i1-i2` plane.
    pub psi: f64,
}

impl Frame {
    /// Local frame of `unit` in a uniform state: `R_z(2(n-1)α)·R_x(ψ)`.
    pub fn uniform(geom: &LeafOutGeometry, unit: usize, psi: f64) -> Self {
        let theta = 2.0 * (unit as f64 - 1.0) * geom.alpha();
        Self { global: Matrix3::identity(), local: rot_z(theta) * rot_x(psi), psi }
    }

    /// Local frame of `unit` read off a reconstructed mesh: `e2` along `OA`,
    /// `e3` the mean normal of the two inner panels (orthogonalized).
    pub fn from_mesh(mesh: &FoldedMesh, geom: &LeafOutGeometry, unit: usize) -> Self {
        let layout = FlatLayout::new(geom);
        let ids = layout.unit(unit);
        let p = |i: usize| mesh.vertices[i];
        let o = p(FlatLayout::O);
        let e2 = (p(ids.a) - o).normalize();
        let n_left = (p(ids.a) - o).cross(&(p(ids.b_left) - o));
        let n_right = (p(ids.b_right) - o).cross(&(p(ids.a) - o));
        let n = n_left.normalize() + n_right.normalize();
        let e3 = (n - e2 * n.dot(&e2)).normalize();
        let e1 = e2.cross(&e3);
        Self {
            global: Matrix3::identity(),
            local: Matrix3::from_columns(&[e1, e2, e3]),
            psi: e2.z.clamp(-1.0, 1.0).asin(),
        }
    }

    /// Both triads orthonormal and right-handed to `tol`.
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        [self.global, self.local]
            .iter()
            .all(|m| (m.transpose() * m - Matrix3::identity()).amax() < tol && (m.determinant() - 1.0).abs() < tol)
    }
}

/// A rigid-panel mesh of the folded pattern.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldedMesh {
    pub vertices: Vec<Vector3<f64>>,
    #[serde(skip)]
    pub flat_vertices: Vec<Vector3<f64>>,
    /// Quads, counterclockwise when seen from the top face in the flat state.
    pub faces: Vec<[usize; 4]>,
    pub crease_edges: BTreeMap<CreaseId, (usize, usize)>,
    /// Tip creases `A_n T_n` (kinematically slaved, no spring).
    pub tip_edges: Vec<(usize, usize)>,
    /// Vertex index of each unit's tip `T_n`.
    pub tips: Vec<usize>,
}

impl FoldedMesh {
    /// Largest out-of-plane distance of a face vertex from its face plane.
    pub fn max_planarity_error(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let p: Vec<_> = f.iter().map(|&i| self.vertices[i]).collect();
                let normal = (p[2] - p[0]).cross(&(p[3] - p[1])).normalize();
                let centroid = (p[0] + p[1] + p[2] + p[3]) / 4.0;
                p.iter().map(|q| (q - centroid).dot(&normal).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Largest change of a face edge or diagonal length relative to the flat pattern.
    pub fn max_isometry_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for f in &self.faces {
            for (i, j) in [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)] {
                let folded = (self.vertices[f[i]] - self.vertices[f[j]]).norm();
                let flat = (self.flat_vertices[f[i]] - self.flat_vertices[f[j]]).norm();
                worst = worst.max((folded - flat).abs());
            }
        }
        worst
    }

    /// Triangles obtained by splitting each quad along its shorter diagonal
    /// (first diagonal on ties).
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let mut tris = Vec::with_capacity(2 * self.faces.len());
        for &[a, b, c, d] in &self.faces {
            let ac = (self.flat_vertices[a] - self.flat_vertices[c]).norm();
            let bd = (self.flat_vertices[b] - self.flat_vertices[d]).norm();
            if ac <= bd {
                tris.push([a, b, c]);
                tris.push([a, c, d]);
            } else {
                tris.push([a, b, d]);
                tris.push([b, c, d]);
            }
        }
        tris
    }

    /// ASCII OBJ: all vertices, then triangle faces with 1-based indices.
    pub fn write_obj<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# leaf-out folded mesh")?;
        for v in &self.vertices {
            writeln!(out, "v {:.16e} {:.16e} {:.16e}", v.x, v.y, v.z)?;
        }
        for t in self.triangles() {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }

    /// Height of each unit tip along `i3`.
    pub fn tip_heights(&self) -> Vec<f64> {
        self.tips.iter().map(|&i| self.vertices[i].z).collect()
    }

    /// Distance of each unit tip from the `i3` axis.
    pub fn tip_radial_distances(&self) -> Vec<f64> {
        self.tips.iter().map(|&i| self.vertices[i].xy().norm()).collect()
    }
}

/// Machine-readable description of the flat pattern.
#[derive(Debug, Clone, Serialize)]
pub struct GeometryDescription {
    pub n_cell: usize,
    pub alpha_rad: f64,
    pub l1: f64,
    pub l2: f64,
    pub vertex_o_creases: Vec<CreaseId>,
    pub creases: Vec<CreaseId>,
    pub flat_vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 4]>,
    pub crease_edges: BTreeMap<CreaseId, (usize, usize)>,
    pub tip_edges: Vec<(usize, usize)>,
    pub vertex_a_sector_angles_rad: [f64; 4],
}

impl GeometryDescription {
    pub fn new(geom: &LeafOutGeometry) -> Self {
        let mesh = geom.flat_mesh();
        let a = geom.alpha();
        Self {
            n_cell: geom.n_cell(),
            alpha_rad: a,
            l1: geom.l1(),
            l2: geom.l2(),
            vertex_o_creases: geom.vertex_o_creases(),
            creases: geom.creases(),
            flat_vertices: mesh.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            faces: mesh.faces,
            crease_edges: mesh.crease_edges,
            tip_edges: mesh.tip_edges,
            vertex_a_sector_angles_rad: [PI - a, a, a, PI - a],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct UnitVertices {
    a: usize,
    t: usize,
    d_left: usize,
    d_right: usize,
    y_left: usize,
    y_right: usize,
    b_left: usize,
    b_right: usize,
}

/// Flat coordinates and vertex numbering: `O`, then `B_1..B_n`, then six
/// vertices per unit (`A, T, D_L, D_R, Y_L, Y_R`).
struct FlatLayout {
    n_cell: usize,
    points: Vec<Vector3<f64>>,
}

impl FlatLayout {
    const O: usize = 0;

    fn new(geom: &LeafOutGeometry) -> Self {
        let n = geom.n_cell();
        let (l1, l2) = (geom.l1(), geom.l2());
        let mut points = vec![Vector3::zeros()];
        for unit in 1..=n {
            points.push(geom.crease_direction(geom.boundary_index(unit)) * l2);
        }
        for unit in 1..=n {
            let jm = geom.main_index(unit);
            let u = geom.crease_direction(jm);
            let v_left = geom.crease_direction(jm + 1);
            let v_right = geom.crease_direction((jm + 2 * n - 1) % (2 * n));
            let a = u * l1;
            let d_left = a + v_left * l2;
            let d_right = a + v_right * l2;
            points.extend([a, a + u * l1, d_left, d_right, d_left + u * l1, d_right + u * l1]);
        }
        Self { n_cell: n, points }
    }

    fn unit(&self, unit: usize) -> UnitVertices {
        let base = 1 + self.n_cell + 6 * (unit - 1);
        let prev = if unit == 1 { self.n_cell } else { unit - 1 };
        UnitVertices {
            a: base,
            t: base + 1,
            d_left: base + 2,
            d_right: base + 3,
            y_left: base + 4,
            y_right: base + 5,
            b_left: unit,
            b_right: prev,
        }
    }

    /// Per unit: inner-left, inner-right, outer-left, outer-right.
    fn unit_faces(&self, unit: usize) -> [[usize; 4]; 4] {
        let v = self.unit(unit);
        [
            [Self::O, v.a, v.d_left, v.b_left],
            [Self::O, v.b_right, v.d_right, v.a],
            [v.a, v.t, v.y_left, v.d_left],
            [v.a, v.d_right, v.y_right, v.t],
        ]
    }

    fn faces(&self) -> Vec<[usize; 4]> {
        (1..=self.n_cell).flat_map(|n| self.unit_faces(n)).collect()
    }

    fn crease_edges(&self) -> BTreeMap<CreaseId, (usize, usize)> {
        let mut edges = BTreeMap::new();
        for unit in 1..=self.n_cell {
            let v = self.unit(unit);
            edges.insert(CreaseId::main(unit), (Self::O, v.a));
            edges.insert(CreaseId::sub(unit, Side::Left), (v.a, v.d_left));
            edges.insert(CreaseId::sub(unit, Side::Right), (v.a, v.d_right));
            edges.insert(CreaseId::boundary(unit), (Self::O, unit));
        }
        edges
    }

    fn tip_edges(&self) -> Vec<(usize, usize)> {
        (1..=self.n_cell)
            .map(|n| {
                let v = self.unit(n);
                (v.a, v.t)
            })
            .collect()
    }
}

/// Rigid placement `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy)]
struct Placement {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Placement {
    fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Rotation by `angle` about the line through `point` along `axis`.
    fn about_line(point: Vector3<f64>, axis: Vector3<f64>, angle: f64) -> Self {
        let rotation = axis_angle(&axis, angle);
        Self { rotation, translation: point - rotation * point }
    }

    fn then(&self, inner: &Placement) -> Placement {
        Placement {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Reconstructs the folded shape of `state`.
///
/// Panels around `O` are placed counterclockwise starting from the right inner
/// panel of unit 1; outer panels hang off their inner panels across the sub
/// creases. The result is then posed canonically: `O` at the origin, the mean
/// inner-panel normal along `+i3`, and unit 1's main crease projecting onto `+i2`.
pub fn reconstruct_mesh(geom: &LeafOutGeometry, state: &FoldState) -> Result<FoldedMesh> {
    let rho = state.rho();
    let n_creases = geom.vertex_o_crease_count();
    if rho.len() != n_creases {
        return Err(Error::ShapeMismatch { expected: n_creases, got: rho.len() });
    }
    let closure = deviation_from_identity(&chain_product(geom, rho)?);
    if closure > MESH_CLOSURE_TOLERANCE {
        return Err(Error::NotClosed { residual: closure, tolerance: MESH_CLOSURE_TOLERANCE });
    }

    // sector k spans creases k..k+1; sector N-1 (right half of unit 1) is the anchor
    let mut sectors = Vec::with_capacity(n_creases);
    let mut acc = Placement::identity();
    for (j, &angle) in rho.iter().enumerate() {
        acc = acc.then(&Placement::about_line(Vector3::zeros(), geom.crease_direction(j), angle));
        sectors.push(acc);
    }
    let wrap = deviation_from_identity(&sectors[n_creases - 1].rotation);
    if wrap > MESH_CLOSURE_TOLERANCE {
        return Err(Error::NotClosed { residual: wrap, tolerance: MESH_CLOSURE_TOLERANCE });
    }
    sectors[n_creases - 1] = Placement::identity();

    let layout = FlatLayout::new(geom);
    let flat = &layout.points;
    let mut placed: Vec<Option<Vector3<f64>>> = vec![None; flat.len()];
    let mut mismatch: f64 = 0.0;
    let mut place = |idx: usize, pose: &Placement, placed: &mut Vec<Option<Vector3<f64>>>| {
        let p = pose.apply(&flat[idx]);
        match placed[idx] {
            Some(q) => mismatch = mismatch.max((p - q).norm()),
            None => placed[idx] = Some(p),
        }
    };

    let subs = state.sub_angles();
    for unit in 1..=geom.n_cell() {
        let jm = geom.main_index(unit);
        let inner_left = sectors[jm];
        let inner_right = sectors[(jm + n_creases - 1) % n_creases];
        let v = layout.unit(unit);
        let a = flat[v.a];
        let rho_s = subs[unit - 1];
        let outer_left = inner_left.then(&Placement::about_line(a, geom.crease_direction(jm + 1), -rho_s));
        let outer_right =
            inner_right.then(&Placement::about_line(a, geom.crease_direction((jm + n_creases - 1) % n_creases), rho_s));
        let [f_il, f_ir, f_ol, f_or] = layout.unit_faces(unit);
        for (face, pose) in [(f_il, inner_left), (f_ir, inner_right), (f_ol, outer_left), (f_or, outer_right)] {
            for idx in face {
                place(idx, &pose, &mut placed);
            }
        }
    }
    let tol = MESH_CLOSURE_TOLERANCE * geom.l1().max(geom.l2());
    if mismatch > tol {
        return Err(Error::Numerical(format!("panel placements disagree by {mismatch:e} at shared vertices")));
    }
    let raw: Vec<Vector3<f64>> = placed.into_iter().map(|p| p.expect("every vertex lies on a face")).collect();

    // canonical pose
    let normal_sum: Vector3<f64> = (0..n_creases).map(|k| sectors[k].rotation * Vector3::z()).sum();
    let i3 = normal_sum
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Numerical("panel normals cancel; no canonical up axis".into()))?;
    let oa = raw[layout.unit(1).a];
    let i2 = (oa - i3 * oa.dot(&i3))
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Numerical("unit 1 main crease is parallel to the up axis".into()))?;
    let i1 = i2.cross(&i3);
    let pose = Matrix3::from_rows(&[i1.transpose(), i2.transpose(), i3.transpose()]);

    Ok(FoldedMesh {
        vertices: raw.iter().map(|p| pose * p).collect(),
        flat_vertices: flat.clone(),
        faces: layout.faces(),
        crease_edges: layout.crease_edges(),
        tip_edges: layout.tip_edges(),
        tips: (1..=geom.n_cell()).map(|n| layout.unit(n).t).collect(),
    })
}
