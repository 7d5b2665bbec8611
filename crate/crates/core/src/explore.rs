//! Multi-grasp exploration: drive the main creases of a subset of unit cells by
//! identical increments and let the projection settle the rest.

use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{path_energies, SpringModel};
use crate::error::{Error, Result};
use crate::geometry::LeafOutGeometry;
use crate::kinematics::{trace_path, ControlledDriver, FoldState, FoldingPath, SolverSettings};

/// Default controlled increment per step, radians.
pub const DEFAULT_DELTA_RHO_C: f64 = 0.5 * std::f64::consts::PI / 180.0;
pub const DEFAULT_MAX_STEPS: usize = 400;
/// Main angle of the slightly folded start state, radians.
pub const DEFAULT_START_MAIN: f64 = 7.1 * std::f64::consts::PI / 180.0;

/// Which unit cells to drive and how far.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraspProgram {
    pub name: String,
    /// 1-based unit indices.
    pub controlled_units: Vec<usize>,
    /// Increment of every controlled main angle per step, radians.
    pub delta_rho_c: f64,
    /// Main angle of the uniform closed-phase start state, radians.
    pub start_main: f64,
    pub max_steps: usize,
}

impl GraspProgram {
    pub fn new(name: impl Into<String>, controlled_units: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            controlled_units,
            delta_rho_c: DEFAULT_DELTA_RHO_C,
            start_main: DEFAULT_START_MAIN,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    /// Name built from the unit list, e.g. `1-2-3`, or `all`.
    pub fn named_after_units(n_cell: usize, controlled_units: Vec<usize>) -> Self {
        let name = if controlled_units.len() == n_cell {
            "all".to_string()
        } else {
            controlled_units.iter().map(|u| u.to_string()).collect::<Vec<_>>().join("-")
        };
        Self::new(name, controlled_units)
    }

    pub fn validate(&self, geom: &LeafOutGeometry) -> Result<()> {
        let n = geom.n_cell();
        if self.controlled_units.is_empty() {
            return Err(Error::InvalidInput(format!("program `{}` controls no unit", self.name)));
        }
        if let Some(u) = self.controlled_units.iter().find(|&&u| u == 0 || u > n) {
            return Err(Error::InvalidInput(format!("program `{}`: unit {u} outside 1..={n}", self.name)));
        }
        let mut sorted = self.controlled_units.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.controlled_units.len() {
            return Err(Error::InvalidInput(format!("program `{}` repeats a unit", self.name)));
        }
        if !(self.delta_rho_c.is_finite() && self.delta_rho_c > 0.0) {
            return Err(Error::InvalidInput(format!(
                "program `{}`: delta_rho_c must be positive, got {}",
                self.name, self.delta_rho_c
            )));
        }
        if !(self.start_main > 0.0 && self.start_main < std::f64::consts::PI) {
            return Err(Error::InvalidInput(format!(
                "program `{}`: start main angle must lie in (0, π), got {}",
                self.name, self.start_main
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidInput(format!("program `{}`: max_steps must be positive", self.name)));
        }
        Ok(())
    }
}

/// `{1}`, `{1,2}`, `{1,3}`, `{1,2,3}`, `{1,2,4}` and all units.
pub fn default_programs(geom: &LeafOutGeometry) -> Vec<GraspProgram> {
    let n = geom.n_cell();
    let mut sets = vec![vec![1], vec![1, 2], vec![1, 3], vec![1, 2, 3]];
    if n >= 4 {
        sets.push(vec![1, 2, 4]);
    }
    sets.push((1..=n).collect());
    sets.into_iter().map(|s| GraspProgram::named_after_units(n, s)).collect()
}

/// Uniform closed-phase state with main angle `rho_m`. The boundary angle
/// follows from inverting the uniform relation for `ψ > 0`, then `ρ_B = −2ψ`.
pub fn closed_start_state(geom: &LeafOutGeometry, rho_m: f64) -> Result<FoldState> {
    let t = geom.alpha().tan() * (0.5 * rho_m).sin();
    let c = (0.5 * rho_m).cos();
    let psi = (c / (1.0 + t * t).sqrt()).acos() - t.atan();
    FoldState::uniform(geom, rho_m, -2.0 * psi)
}

/// Shape coordinates `(ρ_M,2 − ρ_M,4, ρ_M,3 − ρ_M,5)` plus the accumulated drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfigSpacePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub energy: f64,
}

fn shape_coordinates(state: &FoldState) -> (f64, f64) {
    (state.main(2) - state.main(4), state.main(3) - state.main(5))
}

/// One executed program.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramRun {
    pub program: GraspProgram,
    pub path: FoldingPath,
    pub trace: Vec<ConfigSpacePoint>,
}

impl ProgramRun {
    pub fn endpoint(&self) -> &ConfigSpacePoint {
        self.trace.last().expect("traces start with the initial state")
    }
}

/// Runs `program` from its start state. Needs at least five unit cells for the
/// shape coordinates.
pub fn run_program(
    geom: &LeafOutGeometry,
    springs: &SpringModel,
    program: &GraspProgram,
    settings: &SolverSettings,
) -> Result<ProgramRun> {
    program.validate(geom)?;
    if geom.n_cell() < 5 {
        return Err(Error::InvalidInput("shape coordinates need n_cell >= 5".into()));
    }
    let start = closed_start_state(geom, program.start_main)?;
    let mut driver = ControlledDriver::mains(geom, &program.controlled_units, program.delta_rho_c);
    let mut path = trace_path(geom, &start, &mut driver, program.max_steps, settings)?;
    let energies = path_energies(geom, springs, &path)?;
    let trace = path
        .states
        .iter()
        .zip(&path.parameters)
        .zip(&energies)
        .map(|((s, &z), &energy)| {
            let (x, y) = shape_coordinates(s);
            ConfigSpacePoint { x, y, z, energy }
        })
        .collect();
    path.energies = Some(energies);
    Ok(ProgramRun { program: program.clone(), path, trace })
}

/// Energy along a program as a function of `Δρ_C`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgramEnergy {
    pub delta_rho_c: Vec<f64>,
    pub energy: Vec<f64>,
    /// Index of the lowest energy.
    pub argmin: usize,
    /// Index of the lowest strict-interior local minimum, if any.
    pub interior_minimum: Option<usize>,
}

pub fn energy_along_program(run: &ProgramRun) -> Result<ProgramEnergy> {
    if run.trace.is_empty() {
        return Err(Error::InvalidInput("empty program trace".into()));
    }
    let energy: Vec<f64> = run.trace.iter().map(|p| p.energy).collect();
    let argmin = (0..energy.len()).fold(0, |best, i| if energy[i] < energy[best] { i } else { best });
    let interior_minimum = (1..energy.len().saturating_sub(1))
        .filter(|&i| energy[i] < energy[i - 1] && energy[i] <= energy[i + 1])
        .min_by(|&a, &b| energy[a].total_cmp(&energy[b]));
    Ok(ProgramEnergy { delta_rho_c: run.trace.iter().map(|p| p.z).collect(), energy, argmin, interior_minimum })
}

/// Runs every program in parallel; results keep the input order.
pub fn compare_programs(
    geom: &LeafOutGeometry,
    springs: &SpringModel,
    programs: &[GraspProgram],
    settings: &SolverSettings,
) -> Result<Vec<ProgramRun>> {
    if programs.len() < 2 {
        return Err(Error::InvalidInput("comparison needs at least two programs".into()));
    }
    programs.par_iter().map(|p| run_program(geom, springs, p, settings)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{residual, Termination, CLOSURE_TOLERANCE};
    use crate::uniform::main_angle_from_psi;

    fn prototype() -> LeafOutGeometry {
        LeafOutGeometry::new(5, 70.0, 30.0).unwrap()
    }

    fn springs(g: &LeafOutGeometry) -> SpringModel {
        SpringModel::uniform(g, 1.0, 60f64.to_radians(), -120f64.to_radians()).unwrap()
    }

    fn short(name: &str, units: Vec<usize>, steps: usize) -> GraspProgram {
        GraspProgram { max_steps: steps, ..GraspProgram::new(name, units) }
    }

    #[test]
    fn start_state_is_closed_and_uniform() {
        let g = prototype();
        let s = closed_start_state(&g, DEFAULT_START_MAIN).unwrap();
        assert!(residual(&g, s.rho()).unwrap().norm_inf() < CLOSURE_TOLERANCE);
        let rho_b = s.boundary(1);
        assert!((rho_b.to_degrees() + 3.6).abs() < 0.05, "{}", rho_b.to_degrees());
        let m = main_angle_from_psi(g.alpha(), -0.5 * rho_b).unwrap();
        assert!((m - DEFAULT_START_MAIN).abs() < 1e-10);
    }

    #[test]
    fn validation() {
        let g = prototype();
        assert!(GraspProgram::new("x", vec![]).validate(&g).is_err());
        assert!(GraspProgram::new("x", vec![0]).validate(&g).is_err());
        assert!(GraspProgram::new("x", vec![6]).validate(&g).is_err());
        assert!(GraspProgram::new("x", vec![1, 1]).validate(&g).is_err());
        let neg = GraspProgram { delta_rho_c: -0.01, ..GraspProgram::new("x", vec![1]) };
        assert!(neg.validate(&g).is_err());
        assert!(GraspProgram::new("x", vec![1, 3]).validate(&g).is_ok());
    }

    #[test]
    fn default_set_names() {
        let names: Vec<String> = default_programs(&prototype()).into_iter().map(|p| p.name).collect();
        assert_eq!(names, ["1", "1-2", "1-3", "1-2-3", "1-2-4", "all"]);
    }

    #[test]
    fn all_units_stay_on_the_axis() {
        let g = prototype();
        let run =
            run_program(&g, &springs(&g), &short("all", vec![1, 2, 3, 4, 5], 60), &SolverSettings::default()).unwrap();
        assert_eq!(run.trace.len(), 61);
        for p in &run.trace {
            assert!(p.x.abs() < 1e-8 && p.y.abs() < 1e-8);
        }
        let last = run.path.last().unwrap();
        assert!((last.main(1) - DEFAULT_START_MAIN - 60.0 * DEFAULT_DELTA_RHO_C).abs() < 1e-9);
    }

    #[test]
    fn controlled_angles_advance_exactly() {
        let g = prototype();
        let run = run_program(&g, &springs(&g), &short("1-2", vec![1, 2], 40), &SolverSettings::default()).unwrap();
        for (k, s) in run.path.states.iter().enumerate() {
            let expected = DEFAULT_START_MAIN + k as f64 * DEFAULT_DELTA_RHO_C;
            assert!((s.main(1) - expected).abs() < 1e-9);
            assert!((s.main(2) - expected).abs() < 1e-9);
            assert!(residual(&g, s.rho()).unwrap().norm_inf() < CLOSURE_TOLERANCE);
        }
    }

    #[test]
    fn reflected_program_mirrors_the_trace() {
        // unit 1 fixed, 2↔5 and 3↔4: (x, y) of {1,2} equals (−y, −x) of {1,5}
        let g = prototype();
        let sp = springs(&g);
        let a = run_program(&g, &sp, &short("1-2", vec![1, 2], 80), &SolverSettings::default()).unwrap();
        let b = run_program(&g, &sp, &short("1-5", vec![1, 5], 80), &SolverSettings::default()).unwrap();
        assert_eq!(a.trace.len(), b.trace.len());
        for (p, q) in a.trace.iter().zip(&b.trace) {
            assert!((p.x + q.y).abs() < 1e-7, "{} vs {}", p.x, -q.y);
            assert!((p.y + q.x).abs() < 1e-7, "{} vs {}", p.y, -q.x);
            assert!((p.energy - q.energy).abs() < 1e-7 * p.energy.abs().max(1.0));
        }
    }

    #[test]
    fn resting_at_start_is_minimal_at_step_zero() {
        let g = prototype();
        let start = closed_start_state(&g, DEFAULT_START_MAIN).unwrap();
        let sp = SpringModel::resting_at(&g, 1.0, &start).unwrap();
        let run = run_program(&g, &sp, &short("1-3", vec![1, 3], 30), &SolverSettings::default()).unwrap();
        let e = energy_along_program(&run).unwrap();
        assert_eq!(e.argmin, 0);
        assert!(e.energy[0].abs() < 1e-20);
        assert_eq!(e.interior_minimum, None);
    }

    #[test]
    fn full_program_ends_regularly() {
        let g = prototype();
        let run = run_program(&g, &springs(&g), &GraspProgram::new("1", vec![1]), &SolverSettings::default()).unwrap();
        assert!(run.path.termination.is_regular(), "{}", run.path.termination);
        assert!(!matches!(run.path.termination, Termination::StepFailure { .. }));
    }

    #[test]
    fn comparison_needs_two_programs() {
        let g = prototype();
        let one = [GraspProgram::new("1", vec![1])];
        assert!(compare_programs(&g, &springs(&g), &one, &SolverSettings::default()).is_err());
    }
}
