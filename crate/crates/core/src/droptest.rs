//! Drop-impact trigger prediction: a falling ball triggers the snap-through
//! grasp when its potential energy exceeds the open-phase energy barrier.
//!
//! Only the boundary creases carry stiffness (PET strips); main and sub creases
//! are treated as free hinges.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{characterize_bistability, landscape_over_psi, SpringModel, StabilityClass};
use crate::error::{Error, Result};
use crate::geometry::LeafOutGeometry;

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Ball and release height. SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DropScenario {
    pub m_ball: f64,
    pub r_ball: f64,
    /// Height from the supporting plate to the bottom of the ball.
    pub h: f64,
    pub g: f64,
}

impl DropScenario {
    /// The 22.3 g, 3.5 cm-radius polyurethane ball released from `h` metres.
    pub fn prototype(h: f64) -> Self {
        Self { m_ball: 0.0223, r_ball: 0.035, h, g: STANDARD_GRAVITY }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
            }
        };
        positive("ball mass", self.m_ball)?;
        positive("ball radius", self.r_ball)?;
        positive("gravity", self.g)?;
        if !(self.h.is_finite() && self.h >= 0.0) {
            return Err(Error::InvalidInput(format!("drop height must be non-negative, got {}", self.h)));
        }
        Ok(())
    }
}

/// `E_ball = m g h`, joules.
pub fn ball_energy(scenario: &DropScenario) -> Result<f64> {
    scenario.validate()?;
    Ok(scenario.m_ball * scenario.g * scenario.h)
}

/// Reading of the per-width crease stiffness unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KappaUnit {
    /// `N*m/rad/mm`, taken literally.
    #[serde(rename = "N*m/rad/mm")]
    NewtonMetrePerRadPerMm,
    /// `N*mm/rad/mm`, i.e. moment per radian per unit width.
    #[serde(rename = "N*mm/rad/mm")]
    NewtonMillimetrePerRadPerMm,
}

impl KappaUnit {
    /// Factor to N·m/rad per metre of width (N/rad).
    pub fn to_si(self) -> f64 {
        match self {
            KappaUnit::NewtonMetrePerRadPerMm => 1e3,
            KappaUnit::NewtonMillimetrePerRadPerMm => 1.0,
        }
    }
}

impl FromStr for KappaUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace(['·', ' '], "*").as_str() {
            "N*m/rad/mm" | "Nm/rad/mm" => Ok(KappaUnit::NewtonMetrePerRadPerMm),
            "N*mm/rad/mm" | "Nmm/rad/mm" => Ok(KappaUnit::NewtonMillimetrePerRadPerMm),
            _ => Err(Error::InvalidInput(format!("unknown stiffness unit `{s}` (expected N*m/rad/mm or N*mm/rad/mm)"))),
        }
    }
}

impl fmt::Display for KappaUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KappaUnit::NewtonMetrePerRadPerMm => "N*m/rad/mm",
            KappaUnit::NewtonMillimetrePerRadPerMm => "N*mm/rad/mm",
        })
    }
}

/// Boundary-crease springs of the PET prototype.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrototypeSprings {
    /// Stiffness per unit crease width, in `unit`.
    pub kappa_pet: f64,
    pub unit: KappaUnit,
    /// PET width carried by one boundary crease, millimetres.
    pub effective_width_mm: f64,
    /// Rest angle magnitude `ρ̄`; boundary creases rest at `−ρ̄`.
    pub rest_angle: f64,
}

/// Width fraction left by perforating a crease with `cut`-long slits every
/// `gap`: `gap / (gap + cut)`.
pub fn perforated_width(crease_length_mm: f64, gap_mm: f64, cut_mm: f64) -> f64 {
    crease_length_mm * gap_mm / (gap_mm + cut_mm)
}

impl PrototypeSprings {
    /// `κ_PET = 0.76`, `ρ̄ = 71.8°`, and a boundary crease of length `L2`
    /// perforated with 1 mm cuts every 11.5 mm. `L2` is taken in millimetres.
    pub fn prototype(geom: &LeafOutGeometry) -> Self {
        Self {
            kappa_pet: 0.76,
            unit: KappaUnit::NewtonMillimetrePerRadPerMm,
            effective_width_mm: perforated_width(geom.l2(), 11.5, 1.0),
            rest_angle: 71.8f64.to_radians(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_pet.is_finite() && self.kappa_pet > 0.0) {
            return Err(Error::InvalidSprings(format!("kappa_PET must be positive, got {}", self.kappa_pet)));
        }
        if !(self.effective_width_mm.is_finite() && self.effective_width_mm > 0.0) {
            return Err(Error::InvalidSprings(format!(
                "effective width must be positive, got {}",
                self.effective_width_mm
            )));
        }
        if !(self.rest_angle > 0.0 && self.rest_angle <= PI) {
            return Err(Error::InvalidSprings(format!("rest angle must lie in (0, π], got {}", self.rest_angle)));
        }
        Ok(())
    }

    /// Per-width stiffness in N/rad (N·m/rad per metre of width).
    pub fn kappa_pet_si(&self) -> f64 {
        self.kappa_pet * self.unit.to_si()
    }

    /// Stiffness of one boundary crease, J/rad².
    pub fn kappa_boundary(&self) -> f64 {
        self.kappa_pet_si() * self.effective_width_mm * 1e-3
    }

    pub fn spring_model(&self, geom: &LeafOutGeometry) -> Result<SpringModel> {
        self.validate()?;
        SpringModel::per_kind(geom, 0.0, 0.0, self.kappa_boundary(), 0.0, -self.rest_angle)
    }
}

/// Number of `ψ` samples for barrier landscapes: 0.5° over `[−90°, 90°]`.
const BARRIER_SAMPLES: usize = 361;

/// Open-phase energy barrier `ΔE_g` of the prototype, joules.
pub fn prototype_barrier(geom: &LeafOutGeometry, springs: &PrototypeSprings) -> Result<f64> {
    let model = springs.spring_model(geom)?;
    let curve = landscape_over_psi(geom, &model, -PI / 2.0, PI / 2.0, BARRIER_SAMPLES)?;
    let report = characterize_bistability(&curve)?;
    match (report.stability_class, report.delta_e_g) {
        (StabilityClass::Bistable, Some(g)) => Ok(g),
        _ => Err(Error::NoBarrier),
    }
}

/// Experimental marker of Fig.-style trigger maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    /// Not triggered.
    Cross,
    /// Triggered and the ball was held.
    Circle,
    /// Triggered but the ball escaped.
    Triangle,
}

/// One drop-test observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub h_mm: f64,
    pub outcome: Marker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    NoTrigger,
    Grasp,
    TriggerButDrop,
    /// Triggered; no calibration data to judge whether the ball stays.
    TriggerRetentionUnknown,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::NoTrigger => "no-trigger",
            Outcome::Grasp => "grasp",
            Outcome::TriggerButDrop => "trigger-but-drop",
            Outcome::TriggerRetentionUnknown => "trigger-retention-unknown",
        }
    }
}

/// Height above which triggered balls were seen to escape: midway between the
/// highest held drop and the lowest escaped one. `None` without both kinds of
/// observation or when they overlap.
pub fn retention_limit_mm(observations: &[Observation]) -> Option<f64> {
    let held = observations
        .iter()
        .filter(|o| o.outcome == Marker::Circle)
        .map(|o| o.h_mm)
        .fold(None, |m: Option<f64>, h| Some(m.map_or(h, |m| m.max(h))))?;
    let escaped = observations
        .iter()
        .filter(|o| o.outcome == Marker::Triangle)
        .map(|o| o.h_mm)
        .fold(None, |m: Option<f64>, h| Some(m.map_or(h, |m| m.min(h))))?;
    (held < escaped).then_some(0.5 * (held + escaped))
}

/// Prediction for one drop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TriggerPrediction {
    pub h: f64,
    pub rest_angle: f64,
    pub e_ball: f64,
    pub delta_e_g: f64,
    /// `(E_ball − ΔE_g) / κ_PET`, κ_PET in N/rad.
    pub e_gap: f64,
    pub outcome: Outcome,
}

fn classify(e_gap: f64, h: f64, retention_mm: Option<f64>) -> Outcome {
    if e_gap < 0.0 {
        Outcome::NoTrigger
    } else {
        match retention_mm {
            Some(limit) if h * 1e3 <= limit => Outcome::Grasp,
            Some(_) => Outcome::TriggerButDrop,
            None => Outcome::TriggerRetentionUnknown,
        }
    }
}

/// Prediction for a single drop height with a known barrier.
pub fn predict(
    scenario: &DropScenario,
    springs: &PrototypeSprings,
    delta_e_g: f64,
    retention_mm: Option<f64>,
) -> Result<TriggerPrediction> {
    let e_ball = ball_energy(scenario)?;
    let e_gap = (e_ball - delta_e_g) / springs.kappa_pet_si();
    Ok(TriggerPrediction {
        h: scenario.h,
        rest_angle: springs.rest_angle,
        e_ball,
        delta_e_g,
        e_gap,
        outcome: classify(e_gap, scenario.h, retention_mm),
    })
}

/// Height at which `E_ball = ΔE_g`.
pub fn threshold_height(ball: &DropScenario, delta_e_g: f64) -> f64 {
    delta_e_g / (ball.m_ball * ball.g)
}

/// Trigger predictions over a grid of drop heights and rest angles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerMap {
    pub h: Vec<f64>,
    pub rest_angle: Vec<f64>,
    /// `cells[i][j]` belongs to `(rest_angle[i], h[j])`.
    pub cells: Vec<Vec<TriggerPrediction>>,
    /// `E_Gap = 0` curve as `(h, ρ̄)` points, one per rest angle.
    pub threshold: Vec<[f64; 2]>,
    pub retention_limit_mm: Option<f64>,
}

/// Evaluates the trigger map. `ball.h` is ignored; heights come from `h_values`.
pub fn trigger_map(
    geom: &LeafOutGeometry,
    ball: &DropScenario,
    springs: &PrototypeSprings,
    h_values: &[f64],
    rest_angles: &[f64],
    observations: &[Observation],
) -> Result<TriggerMap> {
    if h_values.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
        return Err(Error::InvalidInput("drop heights must be non-negative".into()));
    }
    let retention = retention_limit_mm(observations);
    let rows: Vec<(Vec<TriggerPrediction>, [f64; 2])> = rest_angles
        .par_iter()
        .map(|&rest| {
            let s = PrototypeSprings { rest_angle: rest, ..*springs };
            let barrier = prototype_barrier(geom, &s)?;
            let row = h_values
                .iter()
                .map(|&h| predict(&DropScenario { h, ..*ball }, &s, barrier, retention))
                .collect::<Result<Vec<_>>>()?;
            Ok((row, [threshold_height(ball, barrier), rest]))
        })
        .collect::<Result<_>>()?;
    let (cells, threshold) = rows.into_iter().unzip();
    Ok(TriggerMap {
        h: h_values.to_vec(),
        rest_angle: rest_angles.to_vec(),
        cells,
        threshold,
        retention_limit_mm: retention,
    })
}
