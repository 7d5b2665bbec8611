//! Executes one configured task and writes its files plus a manifest.
//!
//! Everything is validated and computed before the output directory is
//! touched, so a rejected configuration leaves no files behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{
    stepped_grid, DropTestTask, EnergyLandscapeTask, ExportMeshTask, Format, ProgramSpec, RatioSurfaceTask, RunConfig,
    TaskConfig, TaskKind, UniformMethod, UniformPathTask, ValidatedRun,
};
use super::table::{read_observations, Cell, Table};
use crate::droptest::{self, DropScenario, Observation, PrototypeSprings};
use crate::energy::{
    characterize_bistability, find_extrema, landscape_over_psi, path_energies, ratio_surface, zero_contour,
    BistabilityReport, EnergyCurve, Extremum,
};
use crate::error::{Error, Result};
use crate::explore::{compare_programs, energy_along_program};
use crate::geometry::{reconstruct_mesh, GeometryDescription, LeafOutGeometry};
use crate::kinematics::{residual, FoldState, FoldingPath, Termination};
use crate::uniform::{trace_uniform, uniform_path, UniformState};

pub const TOOL_NAME: &str = "leafout";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_NAME: &str = "manifest.json";

/// Command-line additions to a configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Reserved; every algorithm is deterministic.
    pub seed: Option<u64>,
    /// JSON list of `{"name": …, "units": […]}` replacing the configured programs.
    pub programs_file: Option<PathBuf>,
    /// CSV of drop-test observations (`h_mm,outcome`).
    pub observations_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    /// Some path ended on a numerical failure; files cover the part computed.
    Partial,
    /// The task failed numerically; only the manifest was written.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathTermination {
    pub path: String,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

/// Run record. Contains no timestamps, so reruns reproduce it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub task: TaskKind,
    /// SHA-256 of the resolved configuration as compact JSON, output directory excluded.
    pub config_sha256: String,
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub terminations: Vec<PathTermination>,
    pub notes: BTreeMap<String, Value>,
    pub files: Vec<FileEntry>,
}

/// Process exit code for an error that prevented a run.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 1,
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

impl RunStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::Partial | RunStatus::Failed => 3,
        }
    }
}

/// A validated run, ready to execute.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub kind: TaskKind,
    pub built: ValidatedRun,
    pub observations: Vec<Observation>,
}

/// Resolves `kind` (or the config's own task), applies file overrides and
/// validates every parameter.
pub fn prepare(mut config: RunConfig, kind: Option<TaskKind>, opts: &RunOptions) -> Result<Prepared> {
    if let Some(kind) = kind {
        config.resolve_task(kind)?;
    }
    let kind = config.task()?.kind();
    if let Some(path) = &opts.programs_file {
        let TaskConfig::MultiGrasp(t) = config.task.as_mut().expect("task resolved above") else {
            return Err(Error::Config { field: "--programs".into(), message: "only valid for multi-grasp".into() });
        };
        let text = std::fs::read_to_string(path)?;
        let specs: Vec<ProgramSpec> = serde_json::from_str(&text)
            .map_err(|e| Error::Config { field: "--programs".into(), message: e.to_string() })?;
        t.programs = Some(specs);
    }
    let observations = match &opts.observations_file {
        Some(path) if kind == TaskKind::DropTest => read_observations(path)?,
        Some(_) => {
            return Err(Error::Config { field: "--observations".into(), message: "only valid for drop-test".into() })
        }
        None => Vec::new(),
    };
    let built = config.validate()?;
    Ok(Prepared { config, kind, built, observations })
}

/// SHA-256 of the configuration with the output directory removed.
pub fn config_hash(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.output.directory = None;
    let bytes = serde_json::to_vec(&c).expect("configs serialize");
    hex::encode(Sha256::digest(bytes))
}

struct OutputFile {
    name: String,
    format: Format,
    bytes: Vec<u8>,
}

#[derive(Default)]
struct TaskResult {
    files: Vec<OutputFile>,
    terminations: Vec<PathTermination>,
    notes: BTreeMap<String, Value>,
}

impl TaskResult {
    fn csv(&mut self, name: &str, table: &Table) -> Result<()> {
        self.files.push(OutputFile { name: name.into(), format: Format::Csv, bytes: table.to_csv_bytes()? });
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.push(OutputFile { name: name.into(), format: Format::Json, bytes });
        Ok(())
    }

    fn terminated(&mut self, path: impl Into<String>, termination: Termination) {
        self.terminations.push(PathTermination { path: path.into(), termination });
    }
}

/// Validates, computes and writes. A numerical failure still writes a
/// manifest (status `failed`); validation and I/O errors write nothing.
pub fn run(config: RunConfig, kind: Option<TaskKind>, opts: &RunOptions) -> Result<Manifest> {
    let prepared = prepare(config, kind, opts)?;
    execute(&prepared, opts)
}

pub fn execute(prepared: &Prepared, opts: &RunOptions) -> Result<Manifest> {
    let mut manifest = Manifest {
        tool: TOOL_NAME.into(),
        version: VERSION.into(),
        task: prepared.kind,
        config_sha256: config_hash(&prepared.config),
        config: prepared.config.clone(),
        seed: opts.seed,
        status: RunStatus::Ok,
        error: None,
        terminations: Vec::new(),
        notes: BTreeMap::new(),
        files: Vec::new(),
    };
    manifest.config.output.directory = None;
    let result = match compute(prepared) {
        Ok(r) => r,
        Err(e) if e.is_numerical() => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            write_manifest(&opts.out_dir, &manifest)?;
            return Ok(manifest);
        }
        Err(e) => return Err(e),
    };
    if result.terminations.iter().any(|t| matches!(t.termination, Termination::Locked) || !t.termination.is_regular()) {
        manifest.status = RunStatus::Partial;
    }
    std::fs::create_dir_all(&opts.out_dir)?;
    for f in result.files.iter().filter(|f| prepared.config.output.wants(f.format)) {
        std::fs::write(opts.out_dir.join(&f.name), &f.bytes)?;
        manifest.files.push(FileEntry { name: f.name.clone(), sha256: hex::encode(Sha256::digest(&f.bytes)) });
    }
    manifest.terminations = result.terminations;
    manifest.notes = result.notes;
    write_manifest(&opts.out_dir, &manifest)?;
    Ok(manifest)
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    std::fs::write(dir.join(MANIFEST_NAME), bytes)?;
    Ok(())
}

fn compute(p: &Prepared) -> Result<TaskResult> {
    let v = &p.built;
    match p.config.task()? {
        TaskConfig::UniformPath(t) => uniform_path_task(v, t),
        TaskConfig::EnergyLandscape(t) => energy_landscape_task(v, t),
        TaskConfig::RatioSurface(t) => ratio_surface_task(v, t),
        TaskConfig::DropTest(t) => drop_test_task(v, t, &p.observations),
        TaskConfig::MultiGrasp(_) => multi_grasp_task(v, &p.config),
        TaskConfig::ExportMesh(t) => export_mesh_task(v, t),
    }
}

/// `M1_deg, B1_deg, …, S1_deg, …` columns of a fold state.
fn state_headers(geom: &LeafOutGeometry) -> Vec<String> {
    let mut h: Vec<String> = geom.vertex_o_creases().iter().map(|c| format!("{c}_deg")).collect();
    h.extend((1..=geom.n_cell()).map(|u| format!("S{u}_deg")));
    h
}

fn state_cells(state: &FoldState) -> Vec<Cell> {
    state.rho().iter().chain(state.sub_angles()).map(|v| Cell::Num(v.to_degrees())).collect()
}

fn extremum_json(e: &Extremum) -> Value {
    json!({ "kind": e.kind, "psi_deg": e.psi.to_degrees(), "energy": e.energy, "index": e.index })
}

fn report_json(r: &BistabilityReport) -> Value {
    let deg = |v: Option<f64>| v.map(f64::to_degrees);
    json!({
        "stability_class": r.stability_class,
        "minima": r.minima.iter().map(extremum_json).collect::<Vec<_>>(),
        "maxima": r.maxima.iter().map(extremum_json).collect::<Vec<_>>(),
        "psi_open_deg": deg(r.psi_open),
        "psi_closed_deg": deg(r.psi_closed),
        "psi_barrier_deg": deg(r.psi_barrier),
        "e_open": r.e_open,
        "e_closed": r.e_closed,
        "e_barrier": r.e_barrier,
        "delta_e_g": r.delta_e_g,
        "delta_e_r": r.delta_e_r,
        "ratio_xi": r.ratio_xi,
    })
}

/// Report of a curve, or a multistable record listing its extrema.
fn curve_report(curve: &EnergyCurve) -> Result<Value> {
    match characterize_bistability(curve) {
        Ok(r) => Ok(report_json(&r)),
        Err(Error::Multistable { count }) => Ok(json!({
            "stability_class": "multistable",
            "minimum_count": count,
            "extrema": find_extrema(curve).iter().map(extremum_json).collect::<Vec<_>>(),
        })),
        Err(e) => Err(e),
    }
}

fn uniform_path_task(v: &ValidatedRun, t: &UniformPathTask) -> Result<TaskResult> {
    let (lo, hi) = t.range().radians();
    let mut out = TaskResult::default();
    let path: FoldingPath = match t.method {
        UniformMethod::ClosedForm => {
            let up = uniform_path(&v.geom, lo, hi, t.samples)?;
            out.notes.insert("clipped_samples".into(), json!(up.clipped));
            up.path
        }
        UniformMethod::Traced => trace_uniform(&v.geom, lo, hi, t.samples, &v.settings)?,
    };
    let energies = path_energies(&v.geom, &v.springs, &path)?;
    let mut headers = vec!["psi_deg".to_string()];
    headers.extend(state_headers(&v.geom));
    headers.extend(["residual".to_string(), "energy".to_string()]);
    let mut table = Table::new(headers);
    for ((psi, state), e) in path.parameters.iter().zip(&path.states).zip(&energies) {
        let mut row = vec![Cell::Num(psi.to_degrees())];
        row.extend(state_cells(state));
        row.push(Cell::Num(residual(&v.geom, state.rho())?.norm_inf()));
        row.push(Cell::Num(*e));
        table.push(row);
    }
    out.csv("uniform_path.csv", &table)?;
    let curve = EnergyCurve { psi: path.parameters.clone(), energy: energies, clipped: 0 };
    let spans = curve.psi.first().is_some_and(|&p| p < 0.0) && curve.psi.last().is_some_and(|&p| p > 0.0);
    if spans {
        out.json("uniform_report.json", &curve_report(&curve)?)?;
    }
    out.terminated("uniform", path.termination);
    Ok(out)
}

fn energy_landscape_task(v: &ValidatedRun, t: &EnergyLandscapeTask) -> Result<TaskResult> {
    let (lo, hi) = t.range().radians();
    let curve = landscape_over_psi(&v.geom, &v.springs, lo, hi, t.samples)?;
    let mut out = TaskResult::default();
    let mut table = Table::new(["psi_deg", "energy"]);
    for (psi, e) in curve.psi.iter().zip(&curve.energy) {
        table.push(vec![psi.to_degrees().into(), (*e).into()]);
    }
    out.csv("landscape.csv", &table)?;
    out.json("report.json", &curve_report(&curve)?)?;
    out.notes.insert("clipped_samples".into(), json!(curve.clipped));
    out.terminated("landscape", Termination::Completed);
    Ok(out)
}

fn ratio_surface_task(v: &ValidatedRun, t: &RatioSurfaceTask) -> Result<TaskResult> {
    let (lo, hi) = t.range().radians();
    let path = uniform_path(&v.geom, lo, hi, t.samples)?;
    let rad = |g: Vec<f64>| g.into_iter().map(f64::to_radians).collect::<Vec<_>>();
    let rest_main = rad(stepped_grid(t.rest_main_min_deg, t.rest_main_max_deg, t.step_deg));
    let rest_boundary = rad(stepped_grid(t.rest_boundary_min_deg, t.rest_boundary_max_deg, t.step_deg));
    let surface = ratio_surface(&v.geom, &path, &rest_main, &rest_boundary)?;
    let mut out = TaskResult::default();
    let mut table = Table::new(["rest_main_deg", "rest_boundary_deg", "xi"]);
    for (i, rm) in surface.rest_main.iter().enumerate() {
        for (j, rb) in surface.rest_boundary.iter().enumerate() {
            table.push(vec![rm.to_degrees().into(), rb.to_degrees().into(), surface.xi[i][j].into()]);
        }
    }
    out.csv("ratio_surface.csv", &table)?;
    let polylines: Vec<Vec<[f64; 2]>> = zero_contour(&surface)
        .into_iter()
        .map(|line| line.into_iter().map(|[m, b]| [m.to_degrees(), b.to_degrees()]).collect())
        .collect();
    out.json("zero_contour.json", &json!({ "axes": ["rest_main_deg", "rest_boundary_deg"], "polylines": polylines }))?;
    out.notes.insert("clipped_samples".into(), json!(path.clipped));
    out.terminated("uniform", path.path.termination);
    Ok(out)
}

fn drop_test_task(v: &ValidatedRun, t: &DropTestTask, observations: &[Observation]) -> Result<TaskResult> {
    let defaults = PrototypeSprings::prototype(&v.geom);
    let springs = PrototypeSprings {
        kappa_pet: t.kappa_pet,
        unit: t.kappa_unit,
        effective_width_mm: t.effective_width_mm.unwrap_or(defaults.effective_width_mm),
        rest_angle: t.rest_deg.to_radians(),
    };
    let ball = DropScenario { m_ball: t.m_ball_kg, r_ball: t.r_ball_m, h: t.h_mm * 1e-3, g: t.g };
    let h: Vec<f64> = stepped_grid(t.h_min_mm, t.h_max_mm, t.h_step_mm).into_iter().map(|x| x * 1e-3).collect();
    let rest: Vec<f64> =
        stepped_grid(t.rest_min_deg, t.rest_max_deg, t.rest_step_deg).into_iter().map(f64::to_radians).collect();
    let map = droptest::trigger_map(&v.geom, &ball, &springs, &h, &rest, observations)?;
    let mut out = TaskResult::default();
    let mut table = Table::new(["rest_deg", "h_mm", "e_ball", "delta_e_g", "e_gap", "outcome"]);
    for row in &map.cells {
        for c in row {
            table.push(vec![
                c.rest_angle.to_degrees().into(),
                (c.h * 1e3).into(),
                c.e_ball.into(),
                c.delta_e_g.into(),
                c.e_gap.into(),
                c.outcome.as_str().into(),
            ]);
        }
    }
    out.csv("trigger_map.csv", &table)?;
    let mut threshold = Table::new(["rest_deg", "h_threshold_mm"]);
    for [h, rest] in &map.threshold {
        threshold.push(vec![rest.to_degrees().into(), (h * 1e3).into()]);
    }
    out.csv("threshold.csv", &threshold)?;

    let barrier = droptest::prototype_barrier(&v.geom, &springs)?;
    let single = droptest::predict(&ball, &springs, barrier, map.retention_limit_mm)?;
    out.json(
        "drop_summary.json",
        &json!({
            "rest_deg": t.rest_deg,
            "h_mm": t.h_mm,
            "kappa_pet": t.kappa_pet,
            "kappa_unit": t.kappa_unit,
            "effective_width_mm": springs.effective_width_mm,
            "kappa_boundary": springs.kappa_boundary(),
            "delta_e_g": barrier,
            "e_ball": single.e_ball,
            "e_gap": single.e_gap,
            "outcome": single.outcome,
            "threshold_h_mm": droptest::threshold_height(&ball, barrier) * 1e3,
            "retention_limit_mm": map.retention_limit_mm,
        }),
    )?;
    out.terminated("drop-test", Termination::Completed);
    Ok(out)
}

/// File-name-safe program label.
fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn multi_grasp_task(v: &ValidatedRun, config: &RunConfig) -> Result<TaskResult> {
    let programs = config.programs(&v.geom)?;
    let runs = compare_programs(&v.geom, &v.springs, &programs, &v.settings)?;
    let mut out = TaskResult::default();
    let mut bundle = Vec::new();
    for run in &runs {
        let mut headers: Vec<String> =
            ["step", "delta_rho_c_deg", "x_deg", "y_deg", "z_deg", "energy"].map(String::from).to_vec();
        headers.extend(state_headers(&v.geom));
        headers.push("residual".into());
        let mut table = Table::new(headers);
        for (k, (p, s)) in run.trace.iter().zip(&run.path.states).enumerate() {
            let mut row = vec![
                k.into(),
                p.z.to_degrees().into(),
                p.x.to_degrees().into(),
                p.y.to_degrees().into(),
                p.z.to_degrees().into(),
                p.energy.into(),
            ];
            row.extend(state_cells(s));
            row.push(residual(&v.geom, s.rho())?.norm_inf().into());
            table.push(row);
        }
        let file = format!("grasp_{}.csv", slug(&run.program.name));
        out.csv(&file, &table)?;
        let e = energy_along_program(run)?;
        let end = run.endpoint();
        bundle.push(json!({
            "name": run.program.name,
            "units": run.program.controlled_units,
            "file": file,
            "steps": run.trace.len() - 1,
            "termination": run.path.termination,
            "endpoint_deg": [end.x.to_degrees(), end.y.to_degrees(), end.z.to_degrees()],
            "energy_argmin_deg": e.delta_rho_c[e.argmin].to_degrees(),
            "interior_minimum_deg": e.interior_minimum.map(|i| e.delta_rho_c[i].to_degrees()),
            "max_residual": run.path.max_residual(&v.geom),
        }));
        out.terminated(run.program.name.clone(), run.path.termination);
    }
    out.json(
        "programs.json",
        &json!({ "axes": ["x_deg", "y_deg", "z_deg"], "svd_cutoff": v.settings.svd_cutoff, "programs": bundle }),
    )?;
    Ok(out)
}

fn export_mesh_task(v: &ValidatedRun, t: &ExportMeshTask) -> Result<TaskResult> {
    let state = match (&t.psi_deg, &t.rho_deg) {
        (Some(psi), _) => UniformState::at(v.geom.alpha(), psi.to_radians())?.fold_state(&v.geom)?,
        (None, Some(rho)) => FoldState::from_angles(&v.geom, rho.iter().map(|d| d.to_radians()).collect())?,
        (None, None) => return Err(Error::Config { field: "task".into(), message: "no state given".into() }),
    };
    let mesh = reconstruct_mesh(&v.geom, &state)?;
    let mut out = TaskResult::default();
    let mut obj = Vec::new();
    mesh.write_obj(&mut obj)?;
    out.files.push(OutputFile { name: "mesh.obj".into(), format: Format::Obj, bytes: obj });
    if t.write_json {
        out.json(
            "mesh.json",
            &json!({
                "geometry": GeometryDescription::new(&v.geom),
                "rho_deg": state.rho().iter().map(|r| r.to_degrees()).collect::<Vec<_>>(),
                "sub_deg": state.sub_angles().iter().map(|r| r.to_degrees()).collect::<Vec<_>>(),
                "mesh": mesh,
                "max_planarity_error": mesh.max_planarity_error(),
                "max_isometry_error": mesh.max_isometry_error(),
            }),
        )?;
    }
    out.terminated("mesh", Termination::Completed);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(dir: &Path) -> RunOptions {
        RunOptions { out_dir: dir.to_path_buf(), ..Default::default() }
    }

    #[test]
    fn rejected_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let c = RunConfig::from_toml("[geometry]\nn_cell = 2\nl1 = 70.0\nl2 = 30.0\n").unwrap();
        let err = run(c, Some(TaskKind::ExportMesh), &opts(&out)).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(!out.exists());
    }

    #[test]
    fn landscape_run_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let text = "[springs]\nkappa = 1.0\nrest_main_deg = 120.0\nrest_boundary_deg = -30.0\n\
                    [task]\nkind = \"energy-landscape\"\npsi_min_deg = -90.0\npsi_max_deg = 54.0\nsamples = 289\n";
        let a = run(RunConfig::from_toml(text).unwrap(), None, &opts(&dir.path().join("a"))).unwrap();
        let b = run(RunConfig::from_toml(text).unwrap(), None, &opts(&dir.path().join("b"))).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.status, RunStatus::Ok);
        for name in ["landscape.csv", "report.json", MANIFEST_NAME] {
            let x = std::fs::read(dir.path().join("a").join(name)).unwrap();
            let y = std::fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(x, y, "{name}");
        }
        let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a/report.json")).unwrap()).unwrap();
        assert_eq!(report["stability_class"], "bistable");
    }

    #[test]
    fn hash_ignores_output_directory() {
        let mut a = RunConfig::default();
        a.resolve_task(TaskKind::DropTest).unwrap();
        let mut b = a.clone();
        b.output.directory = Some("elsewhere".into());
        assert_eq!(config_hash(&a), config_hash(&b));
        let mut c = a.clone();
        c.geometry.l1 = 71.0;
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn out_of_range_mesh_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let c = RunConfig::from_toml("[task]\nkind = \"export-mesh\"\npsi_deg = 80.0\n").unwrap();
        let err = run(c, None, &opts(&out)).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(!out.exists());
    }

    #[test]
    fn format_filter() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig::from_toml("[task]\nkind = \"export-mesh\"\n[output]\nformats = [\"obj\"]\n").unwrap();
        let m = run(c, None, &opts(dir.path())).unwrap();
        let names: Vec<&str> = m.files.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["mesh.obj"]);
    }
}
