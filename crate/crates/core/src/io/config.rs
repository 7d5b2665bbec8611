//! TOML run configuration. Angles are degrees here and radians everywhere else.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::droptest::KappaUnit;
use crate::energy::SpringModel;
use crate::error::{Error, Result};
use crate::geometry::LeafOutGeometry;
use crate::kinematics::{BoxPolicy, SolverSettings};

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), message: message.into() }
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(config_error(field, format!("must be finite, got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_error(field, format!("must be positive, got {v}")))
    }
}

fn ordered(field: &str, lo: f64, hi: f64) -> Result<()> {
    finite(field, lo)?;
    finite(field, hi)?;
    if lo < hi {
        Ok(())
    } else {
        Err(config_error(field, format!("lower bound {lo} must be below upper bound {hi}")))
    }
}

/// Inclusive grid `lo, lo + step, …` up to `hi` (within a tenth of a step).
pub fn stepped_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 0.1).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_cell: i64,
    pub l1: f64,
    pub l2: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { n_cell: 5, l1: 70.0, l2: 30.0 }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<LeafOutGeometry> {
        if self.n_cell < 3 {
            return Err(config_error("geometry.n_cell", format!("must be at least 3, got {}", self.n_cell)));
        }
        LeafOutGeometry::new(self.n_cell as usize, self.l1, self.l2)
            .map_err(|e| config_error("geometry", e.to_string()))
    }
}

/// Either one stiffness for every crease (`kappa`) or one per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpringsConfig {
    pub kappa: Option<f64>,
    pub kappa_main: Option<f64>,
    pub kappa_sub: Option<f64>,
    pub kappa_boundary: Option<f64>,
    pub rest_main_deg: f64,
    pub rest_boundary_deg: f64,
}

impl Default for SpringsConfig {
    fn default() -> Self {
        Self {
            kappa: Some(1.0),
            kappa_main: None,
            kappa_sub: None,
            kappa_boundary: None,
            rest_main_deg: 120.0,
            rest_boundary_deg: -30.0,
        }
    }
}

impl SpringsConfig {
    pub fn build(&self, geom: &LeafOutGeometry) -> Result<SpringModel> {
        let per_kind = [self.kappa_main, self.kappa_sub, self.kappa_boundary];
        let (km, ks, kb) = match (self.kappa, per_kind) {
            (Some(k), [None, None, None]) => (k, k, k),
            (None, [Some(m), Some(s), Some(b)]) => (m, s, b),
            _ => {
                return Err(config_error(
                    "springs",
                    "give either `kappa` or all of `kappa_main`, `kappa_sub`, `kappa_boundary`",
                ))
            }
        };
        for (field, k) in [("springs.kappa_main", km), ("springs.kappa_sub", ks), ("springs.kappa_boundary", kb)] {
            if !(k.is_finite() && k >= 0.0) {
                return Err(config_error(field, format!("must be non-negative, got {k}")));
            }
        }
        finite("springs.rest_main_deg", self.rest_main_deg)?;
        finite("springs.rest_boundary_deg", self.rest_boundary_deg)?;
        SpringModel::per_kind(geom, km, ks, kb, self.rest_main_deg.to_radians(), self.rest_boundary_deg.to_radians())
            .map_err(|e| config_error("springs", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub newton_tolerance: f64,
    pub max_newton_iterations: usize,
    pub svd_cutoff: f64,
    pub min_step: f64,
    pub box_policy: BoxPolicyConfig,
    pub verify_jacobian: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxPolicyConfig {
    ActiveSet,
    Terminate,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            newton_tolerance: s.newton_tolerance,
            max_newton_iterations: s.max_newton_iterations,
            svd_cutoff: s.svd_cutoff,
            min_step: s.min_step,
            box_policy: BoxPolicyConfig::ActiveSet,
            verify_jacobian: s.verify_jacobian,
        }
    }
}

impl SolverConfig {
    pub fn build(&self) -> Result<SolverSettings> {
        positive("solver.newton_tolerance", self.newton_tolerance)?;
        positive("solver.svd_cutoff", self.svd_cutoff)?;
        positive("solver.min_step", self.min_step)?;
        if self.max_newton_iterations == 0 {
            return Err(config_error("solver.max_newton_iterations", "must be positive"));
        }
        Ok(SolverSettings {
            newton_tolerance: self.newton_tolerance,
            max_newton_iterations: self.max_newton_iterations,
            svd_cutoff: self.svd_cutoff,
            min_step: self.min_step,
            box_policy: match self.box_policy {
                BoxPolicyConfig::ActiveSet => BoxPolicy::ActiveSet,
                BoxPolicyConfig::Terminate => BoxPolicy::Terminate,
            },
            verify_jacobian: self.verify_jacobian,
        })
    }
}

/// How a uniform path is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UniformMethod {
    /// Closed-form relations per sample.
    ClosedForm,
    /// Projection stepping from the flat state in each direction.
    Traced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiRange {
    pub psi_min_deg: f64,
    pub psi_max_deg: f64,
    pub samples: usize,
}

impl Default for PsiRange {
    fn default() -> Self {
        Self { psi_min_deg: -50.0, psi_max_deg: 50.0, samples: 201 }
    }
}

impl PsiRange {
    fn validate(&self, field: &str) -> Result<()> {
        ordered(field, self.psi_min_deg, self.psi_max_deg)?;
        if self.psi_min_deg < -180.0 || self.psi_max_deg > 180.0 {
            return Err(config_error(field, "psi bounds must lie in [-180, 180] degrees"));
        }
        if self.samples < 3 {
            return Err(config_error(&format!("{field}.samples"), "need at least 3 samples"));
        }
        Ok(())
    }

    pub fn radians(&self) -> (f64, f64) {
        (self.psi_min_deg.to_radians(), self.psi_max_deg.to_radians())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniformPathTask {
    pub psi_min_deg: f64,
    pub psi_max_deg: f64,
    pub samples: usize,
    pub method: UniformMethod,
}

impl Default for UniformPathTask {
    fn default() -> Self {
        let r = PsiRange::default();
        Self {
            psi_min_deg: r.psi_min_deg,
            psi_max_deg: r.psi_max_deg,
            samples: r.samples,
            method: UniformMethod::ClosedForm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyLandscapeTask {
    pub psi_min_deg: f64,
    pub psi_max_deg: f64,
    pub samples: usize,
}

impl Default for EnergyLandscapeTask {
    fn default() -> Self {
        Self { psi_min_deg: -90.0, psi_max_deg: 54.0, samples: 289 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatioSurfaceTask {
    pub rest_main_min_deg: f64,
    pub rest_main_max_deg: f64,
    pub rest_boundary_min_deg: f64,
    pub rest_boundary_max_deg: f64,
    pub step_deg: f64,
    pub psi_min_deg: f64,
    pub psi_max_deg: f64,
    pub samples: usize,
}

impl Default for RatioSurfaceTask {
    fn default() -> Self {
        Self {
            rest_main_min_deg: 0.0,
            rest_main_max_deg: 180.0,
            rest_boundary_min_deg: -180.0,
            rest_boundary_max_deg: 0.0,
            step_deg: 2.0,
            psi_min_deg: -90.0,
            psi_max_deg: 54.0,
            samples: 289,
        }
    }
}

macro_rules! psi_range {
    ($($t:ty),*) => {$(
        impl $t {
            pub fn range(&self) -> PsiRange {
                PsiRange { psi_min_deg: self.psi_min_deg, psi_max_deg: self.psi_max_deg, samples: self.samples }
            }
        }
    )*};
}

psi_range!(UniformPathTask, EnergyLandscapeTask, RatioSurfaceTask);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropTestTask {
    pub h_min_mm: f64,
    pub h_max_mm: f64,
    pub h_step_mm: f64,
    pub rest_min_deg: f64,
    pub rest_max_deg: f64,
    pub rest_step_deg: f64,
    pub kappa_pet: f64,
    pub kappa_unit: KappaUnit,
    /// Defaults to the perforated-crease model on `L2`.
    pub effective_width_mm: Option<f64>,
    pub m_ball_kg: f64,
    pub r_ball_m: f64,
    pub g: f64,
    /// Rest angle of the single-drop summary, degrees.
    pub rest_deg: f64,
    /// Drop height of the single-drop summary, millimetres.
    pub h_mm: f64,
}

impl Default for DropTestTask {
    fn default() -> Self {
        Self {
            h_min_mm: 0.0,
            h_max_mm: 1000.0,
            h_step_mm: 10.0,
            rest_min_deg: 30.0,
            rest_max_deg: 120.0,
            rest_step_deg: 1.0,
            kappa_pet: 0.76,
            kappa_unit: KappaUnit::NewtonMillimetrePerRadPerMm,
            effective_width_mm: None,
            m_ball_kg: 0.0223,
            r_ball_m: 0.035,
            g: crate::droptest::STANDARD_GRAVITY,
            rest_deg: 71.8,
            h_mm: 360.0,
        }
    }
}

/// One program as written in configs and program files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramSpec {
    pub name: Option<String>,
    pub units: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiGraspTask {
    /// Defaults to the built-in comparison set.
    pub programs: Option<Vec<ProgramSpec>>,
    pub delta_rho_c_deg: f64,
    pub max_steps: usize,
    pub start_main_deg: f64,
}

impl Default for MultiGraspTask {
    fn default() -> Self {
        Self { programs: None, delta_rho_c_deg: 0.5, max_steps: 400, start_main_deg: 7.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportMeshTask {
    /// Uniform state at this Euler angle, unless `rho_deg` is given.
    pub psi_deg: Option<f64>,
    /// Explicit vertex-`O` angles `[M1, B1, …, Mn, Bn]`.
    pub rho_deg: Option<Vec<f64>>,
    pub write_json: bool,
}

impl Default for ExportMeshTask {
    fn default() -> Self {
        Self { psi_deg: Some(30.0), rho_deg: None, write_json: true }
    }
}

/// The single task of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskConfig {
    UniformPath(UniformPathTask),
    EnergyLandscape(EnergyLandscapeTask),
    RatioSurface(RatioSurfaceTask),
    DropTest(DropTestTask),
    MultiGrasp(MultiGraspTask),
    ExportMesh(ExportMeshTask),
}

/// Task names accepted on the command line and in `task.kind`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    UniformPath,
    EnergyLandscape,
    RatioSurface,
    DropTest,
    MultiGrasp,
    ExportMesh,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::UniformPath => "uniform-path",
            TaskKind::EnergyLandscape => "energy-landscape",
            TaskKind::RatioSurface => "ratio-surface",
            TaskKind::DropTest => "drop-test",
            TaskKind::MultiGrasp => "multi-grasp",
            TaskKind::ExportMesh => "export-mesh",
        }
    }

    pub fn default_task(self) -> TaskConfig {
        match self {
            TaskKind::UniformPath => TaskConfig::UniformPath(UniformPathTask::default()),
            TaskKind::EnergyLandscape => TaskConfig::EnergyLandscape(EnergyLandscapeTask::default()),
            TaskKind::RatioSurface => TaskConfig::RatioSurface(RatioSurfaceTask::default()),
            TaskKind::DropTest => TaskConfig::DropTest(DropTestTask::default()),
            TaskKind::MultiGrasp => TaskConfig::MultiGrasp(MultiGraspTask::default()),
            TaskKind::ExportMesh => TaskConfig::ExportMesh(ExportMeshTask::default()),
        }
    }
}

impl TaskConfig {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskConfig::UniformPath(_) => TaskKind::UniformPath,
            TaskConfig::EnergyLandscape(_) => TaskKind::EnergyLandscape,
            TaskConfig::RatioSurface(_) => TaskKind::RatioSurface,
            TaskConfig::DropTest(_) => TaskKind::DropTest,
            TaskConfig::MultiGrasp(_) => TaskKind::MultiGrasp,
            TaskConfig::ExportMesh(_) => TaskKind::ExportMesh,
        }
    }
}

/// Output formats a run may write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Obj,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: None, formats: vec![Format::Csv, Format::Json, Format::Obj] }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Whole run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub geometry: GeometryConfig,
    pub springs: Option<SpringsConfig>,
    pub task: Option<TaskConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_error("toml", e.message().to_string()))
    }

    /// Fills in the task for `kind` if absent; rejects a config whose task is
    /// of a different kind.
    pub fn resolve_task(&mut self, kind: TaskKind) -> Result<()> {
        match &self.task {
            None => self.task = Some(kind.default_task()),
            Some(t) if t.kind() != kind => {
                return Err(config_error(
                    "task.kind",
                    format!("config describes `{}` but `{}` was requested", t.kind().as_str(), kind.as_str()),
                ))
            }
            Some(_) => {}
        }
        Ok(())
    }

    pub fn task(&self) -> Result<&TaskConfig> {
        self.task.as_ref().ok_or_else(|| config_error("task", "no task given"))
    }

    /// Springs block, or the uniform default when absent.
    pub fn springs_or_default(&self) -> SpringsConfig {
        self.springs.clone().unwrap_or_default()
    }

    /// Checks every parameter without computing anything.
    pub fn validate(&self) -> Result<ValidatedRun> {
        let geom = self.geometry.build()?;
        let settings = self.solver.build()?;
        let springs = self.springs_or_default().build(&geom)?;
        let task = self.task()?;
        match task {
            TaskConfig::UniformPath(t) => t.range().validate("task")?,
            TaskConfig::EnergyLandscape(t) => {
                t.range().validate("task")?;
                if !(t.psi_min_deg < 0.0 && t.psi_max_deg > 0.0) {
                    return Err(config_error("task", "the psi range must include both phases"));
                }
            }
            TaskConfig::RatioSurface(t) => {
                t.range().validate("task")?;
                ordered("task.rest_main", t.rest_main_min_deg, t.rest_main_max_deg)?;
                ordered("task.rest_boundary", t.rest_boundary_min_deg, t.rest_boundary_max_deg)?;
                positive("task.step_deg", t.step_deg)?;
                if t.rest_main_min_deg < 0.0 || t.rest_main_max_deg > 180.0 {
                    return Err(config_error("task.rest_main", "main rest angles must lie in [0, 180] degrees"));
                }
                if t.rest_boundary_min_deg < -180.0 || t.rest_boundary_max_deg > 0.0 {
                    return Err(config_error(
                        "task.rest_boundary",
                        "boundary rest angles must lie in [-180, 0] degrees",
                    ));
                }
            }
            TaskConfig::DropTest(t) => {
                ordered("task.h", t.h_min_mm, t.h_max_mm)?;
                if t.h_min_mm < 0.0 {
                    return Err(config_error("task.h_min_mm", "drop heights must be non-negative"));
                }
                positive("task.h_step_mm", t.h_step_mm)?;
                ordered("task.rest", t.rest_min_deg, t.rest_max_deg)?;
                positive("task.rest_step_deg", t.rest_step_deg)?;
                if t.rest_min_deg <= 0.0 || t.rest_max_deg > 180.0 {
                    return Err(config_error("task.rest", "rest angles must lie in (0, 180] degrees"));
                }
                if !(t.rest_deg > 0.0 && t.rest_deg <= 180.0) {
                    return Err(config_error("task.rest_deg", "must lie in (0, 180] degrees"));
                }
                positive("task.kappa_pet", t.kappa_pet)?;
                if let Some(w) = t.effective_width_mm {
                    positive("task.effective_width_mm", w)?;
                }
                positive("task.m_ball_kg", t.m_ball_kg)?;
                positive("task.r_ball_m", t.r_ball_m)?;
                positive("task.g", t.g)?;
                if !(t.h_mm.is_finite() && t.h_mm >= 0.0) {
                    return Err(config_error("task.h_mm", "must be non-negative"));
                }
            }
            TaskConfig::MultiGrasp(t) => {
                positive("task.delta_rho_c_deg", t.delta_rho_c_deg)?;
                if t.max_steps == 0 {
                    return Err(config_error("task.max_steps", "must be positive"));
                }
                if geom.n_cell() < 5 {
                    return Err(config_error("geometry.n_cell", "multi-grasp coordinates need n_cell >= 5"));
                }
                for p in self.programs(&geom)? {
                    p.validate(&geom).map_err(|e| config_error("task.programs", e.to_string()))?;
                }
            }
            TaskConfig::ExportMesh(t) => match (&t.psi_deg, &t.rho_deg) {
                (Some(psi), None) => finite("task.psi_deg", *psi)?,
                (None, Some(rho)) => {
                    if rho.len() != geom.vertex_o_crease_count() {
                        return Err(config_error(
                            "task.rho_deg",
                            format!("expected {} angles, got {}", geom.vertex_o_crease_count(), rho.len()),
                        ));
                    }
                }
                _ => return Err(config_error("task", "give exactly one of `psi_deg` and `rho_deg`")),
            },
        }
        if self.output.formats.is_empty() {
            return Err(config_error("output.formats", "no output format selected"));
        }
        Ok(ValidatedRun { geom, springs, settings })
    }

    /// Grasp programs of a multi-grasp task, in radians.
    pub fn programs(&self, geom: &LeafOutGeometry) -> Result<Vec<crate::explore::GraspProgram>> {
        let Some(TaskConfig::MultiGrasp(t)) = &self.task else {
            return Err(config_error("task", "not a multi-grasp task"));
        };
        let base = match &t.programs {
            None => crate::explore::default_programs(geom),
            Some(specs) => specs
                .iter()
                .map(|s| match &s.name {
                    Some(name) => crate::explore::GraspProgram::new(name.clone(), s.units.clone()),
                    None => crate::explore::GraspProgram::named_after_units(geom.n_cell(), s.units.clone()),
                })
                .collect(),
        };
        let mut names: Vec<&str> = base.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_error("task.programs", "program names must be unique"));
        }
        if base.len() < 2 {
            return Err(config_error("task.programs", "need at least two programs to compare"));
        }
        Ok(base
            .into_iter()
            .map(|p| crate::explore::GraspProgram {
                delta_rho_c: t.delta_rho_c_deg.to_radians(),
                start_main: t.start_main_deg.to_radians(),
                max_steps: t.max_steps,
                ..p
            })
            .collect())
    }
}

/// Objects built during validation.
#[derive(Debug, Clone)]
pub struct ValidatedRun {
    pub geom: LeafOutGeometry,
    pub springs: SpringModel,
    pub settings: SolverSettings,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let mut c = RunConfig::from_toml("[geometry]\nn_cell = 5\nl1 = 70.0\nl2 = 30.0\n").unwrap();
        c.resolve_task(TaskKind::EnergyLandscape).unwrap();
        let v = c.validate().unwrap();
        assert_eq!(v.geom.n_cell(), 5);
    }

    #[test]
    fn task_block_parses() {
        let text = r#"
            [springs]
            kappa = 2.0
            rest_main_deg = 120.0
            rest_boundary_deg = -30.0

            [task]
            kind = "uniform-path"
            psi_min_deg = -40.0
            psi_max_deg = 40.0
            samples = 81
            method = "traced"
        "#;
        let c = RunConfig::from_toml(text).unwrap();
        match c.task().unwrap() {
            TaskConfig::UniformPath(t) => {
                assert_eq!(t.samples, 81);
                assert_eq!(t.method, UniformMethod::Traced);
            }
            other => panic!("{other:?}"),
        }
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad_n =
            RunConfig::from_toml("[geometry]\nn_cell = 2\nl1 = 1.0\nl2 = 1.0\n[task]\nkind = \"export-mesh\"\n");
        assert!(matches!(bad_n.unwrap().validate(), Err(Error::Config { .. })));
        assert!(RunConfig::from_toml("[geometry]\nn_cell = 5\nl1 = 1.0\nl2 = 1.0\nbogus = 1\n").is_err());
        let both = "[springs]\nkappa = 1.0\nkappa_main = 1.0\nrest_main_deg = 0.0\nrest_boundary_deg = 0.0\n\
                    [task]\nkind = \"energy-landscape\"\n";
        assert!(RunConfig::from_toml(both).unwrap().validate().is_err());
        let mut mismatch = RunConfig::from_toml("[task]\nkind = \"drop-test\"\n").unwrap();
        assert!(mismatch.resolve_task(TaskKind::RatioSurface).is_err());
    }

    #[test]
    fn degrees_become_radians() {
        let mut c = RunConfig::from_toml("[task]\nkind = \"multi-grasp\"\ndelta_rho_c_deg = 1.0\n").unwrap();
        c.resolve_task(TaskKind::MultiGrasp).unwrap();
        let v = c.validate().unwrap();
        let programs = c.programs(&v.geom).unwrap();
        assert_eq!(programs.len(), 6);
        assert!((programs[0].delta_rho_c - 1f64.to_radians()).abs() < 1e-16);
        assert!((programs[0].start_main - 7.1f64.to_radians()).abs() < 1e-16);
    }

    #[test]
    fn grids_include_both_ends() {
        assert_eq!(stepped_grid(0.0, 10.0, 2.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(stepped_grid(0.0, 180.0, 2.0).len(), 91);
    }
}
