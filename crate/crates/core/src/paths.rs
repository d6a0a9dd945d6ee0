//! Closed encircling loops in control-parameter space.
//!
//! Every path is defined through its counterclockwise traversal; the
//! clockwise parameters at time t are the counterclockwise ones at T - t,
//! so the time-reversal relation holds bit for bit. Closure is exact
//! because the normalized time 1 is folded back onto 0.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, ControlParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathError {
    #[error("time {t} outside the encircling span [0, {total}]")]
    OutOfSpan { t: f64, total: f64 },
    #[error("invalid path: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Circle,
    Experiment,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Cw,
    Ccw,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Ccw => 1.0,
            Direction::Cw => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::Ccw => "ccw",
            Direction::Cw => "cw",
        }
    }
}

/// Where the experimental loop starts and how it closes.
///
/// The cold-atom loop is described both as starting from
/// {Omega2 = 3, delta1 = 0} and as returning along a purely Hermitian
/// segment (Omega2 = 0) while delta1 is ramped up to 3. The two statements
/// cannot both hold for a closed loop, so both readings are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentClosure {
    /// A = {Omega2 = 3, delta1 = 0}; D -> A ramps Omega2 and delta1 together.
    Quoted,
    /// A = {Omega2 = 0, delta1 = 3}; D -> A runs at Omega2 = 0.
    HermitianReturn,
}

impl ExperimentClosure {
    /// (Omega2, delta1) at point A.
    pub fn point_a(self) -> (f64, f64) {
        match self {
            ExperimentClosure::Quoted => (3.0, 0.0),
            ExperimentClosure::HermitianReturn => (0.0, 3.0),
        }
    }
}

/// delta1 at points C and D of the experimental loop.
pub const EXPERIMENT_DELTA1_MIN: f64 = -6.0;

/// Segment durations of the experimental loop in units of T/10.1:
/// A->B 0.1, B->C 1, C->D 4, D->A 5.
pub const EXPERIMENT_SEGMENTS: [f64; 4] = [0.1, 1.0, 4.0, 5.0];
const EXPERIMENT_TOTAL: f64 = 10.1;

fn default_omega2_max() -> f64 {
    6.0
}
fn default_omega2_min() -> f64 {
    0.5
}
fn default_delta_center() -> f64 {
    -1.5
}
fn default_delta_radius() -> f64 {
    4.5
}
fn default_closure() -> ExperimentClosure {
    ExperimentClosure::Quoted
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub kind: PathKind,
    pub direction: Direction,
    /// Total encircling time T.
    pub total_time: f64,
    /// Circle only: phase added to the loop angle.
    #[serde(default)]
    pub phase_offset: f64,
    /// Experiment and general paths: largest Omega2 on the loop.
    #[serde(default = "default_omega2_max")]
    pub omega2_max: f64,
    /// General path: smallest Omega2 on the loop.
    #[serde(default = "default_omega2_min")]
    pub omega2_min: f64,
    /// General path: centre and half-width of the delta1 excursion.
    #[serde(default = "default_delta_center")]
    pub delta_center: f64,
    #[serde(default = "default_delta_radius")]
    pub delta_radius: f64,
    #[serde(default = "default_closure")]
    pub closure: ExperimentClosure,
    /// Parameters the path does not vary.
    pub base: ControlParams,
}

impl PathSpec {
    /// Circular loop delta1 = 0.5 sin(theta), Omega1 = 0.5 + 0.5 cos(theta).
    pub fn circle(direction: Direction, total_time: f64) -> Self {
        Self {
            kind: PathKind::Circle,
            direction,
            total_time,
            phase_offset: 0.0,
            omega2_max: default_omega2_max(),
            omega2_min: default_omega2_min(),
            delta_center: default_delta_center(),
            delta_radius: default_delta_radius(),
            closure: default_closure(),
            base: ControlParams::default(),
        }
    }

    /// Piecewise-linear loop of the cold-atom experiment.
    pub fn experiment(direction: Direction, total_time: f64, omega2_max: f64) -> Self {
        Self {
            kind: PathKind::Experiment,
            omega2_max,
            base: ControlParams::cold_atom(),
            ..Self::circle(direction, total_time)
        }
    }

    /// Elliptical loop in (delta1, Omega2) that never reaches Omega2 = 0.
    pub fn general(direction: Direction, total_time: f64, omega2_max: f64) -> Self {
        Self { kind: PathKind::General, ..Self::experiment(direction, total_time, omega2_max) }
    }

    pub fn with_direction(&self, direction: Direction) -> Self {
        Self { direction, ..*self }
    }

    pub fn with_total_time(&self, total_time: f64) -> Self {
        Self { total_time, ..*self }
    }

    /// Encircling velocity 2 pi / T.
    pub fn velocity(&self) -> f64 {
        2.0 * PI / self.total_time
    }

    pub fn validate(&self) -> Result<(), PathError> {
        if !(self.total_time.is_finite() && self.total_time > 0.0) {
            return Err(PathError::Invalid(format!("total_time must be positive, got {}", self.total_time)));
        }
        self.base.validate().map_err(|e| PathError::Invalid(e.to_string()))?;
        if !self.phase_offset.is_finite() {
            return Err(PathError::Invalid("phase_offset must be finite".into()));
        }
        match self.kind {
            PathKind::Circle => {}
            PathKind::Experiment => {
                if !(self.omega2_max.is_finite() && self.omega2_max > 0.0) {
                    return Err(PathError::Invalid("omega2_max must be positive".into()));
                }
            }
            PathKind::General => {
                if !(self.omega2_min.is_finite() && self.omega2_min > 0.0) {
                    return Err(PathError::Invalid(format!(
                        "omega2_min must be positive (got {}); Omega2 = 0 would add a Hermitian segment",
                        self.omega2_min
                    )));
                }
                if !(self.omega2_max.is_finite() && self.omega2_max >= self.omega2_min) {
                    return Err(PathError::Invalid("omega2_max must be >= omega2_min".into()));
                }
                if !(self.delta_center.is_finite() && self.delta_radius.is_finite()) {
                    return Err(PathError::Invalid("delta_center and delta_radius must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Fraction of the loop elapsed at time t along the counterclockwise
    /// traversal, folded so that 1 maps to 0.
    fn ccw_fraction(&self, t: f64) -> Result<f64, PathError> {
        let total = self.total_time;
        let slack = 1e-12 * total;
        if !(t >= -slack && t <= total + slack) {
            return Err(PathError::OutOfSpan { t, total });
        }
        let t = t.clamp(0.0, total);
        let t_ccw = match self.direction {
            Direction::Ccw => t,
            Direction::Cw => total - t,
        };
        let u = t_ccw / total;
        Ok(if u >= 1.0 { 0.0 } else { u })
    }

    /// Control parameters at elapsed time t in [0, T].
    pub fn params_at(&self, t: f64) -> Result<ControlParams, PathError> {
        let u = self.ccw_fraction(t)?;
        Ok(match self.kind {
            PathKind::Circle => self.circle_at(u),
            PathKind::Experiment => self.experiment_at(u),
            PathKind::General => self.general_at(u),
        })
    }

    /// Signed loop angle: +-2 pi t / T plus the phase offset for circles.
    pub fn theta(&self, t: f64) -> f64 {
        let phase = if self.kind == PathKind::Circle { self.phase_offset } else { 0.0 };
        self.direction.sign() * 2.0 * PI * t / self.total_time + phase
    }

    fn circle_at(&self, u: f64) -> ControlParams {
        let angle = 2.0 * PI * u + self.phase_offset;
        let mut p = self.base;
        p.delta1 = 0.5 * angle.sin();
        p.omega1 = C64::new(0.5 + 0.5 * angle.cos(), 0.0);
        p
    }

    /// Corner points A, B, C, D as (Omega2, delta1).
    pub fn experiment_corners(&self) -> [(f64, f64); 4] {
        let (o_a, d_a) = self.closure.point_a();
        [(o_a, d_a), (self.omega2_max, d_a), (self.omega2_max, EXPERIMENT_DELTA1_MIN), (0.0, EXPERIMENT_DELTA1_MIN)]
    }

    /// Normalized times of the corners B, C, D (A sits at 0 and 1).
    pub fn experiment_breakpoints() -> [f64; 3] {
        let [s0, s1, s2, _] = EXPERIMENT_SEGMENTS;
        [s0 / EXPERIMENT_TOTAL, (s0 + s1) / EXPERIMENT_TOTAL, (s0 + s1 + s2) / EXPERIMENT_TOTAL]
    }

    fn experiment_at(&self, u: f64) -> ControlParams {
        let corners = self.experiment_corners();
        let [b1, b2, b3] = Self::experiment_breakpoints();
        let bounds = [0.0, b1, b2, b3, 1.0];
        let seg = if u < b1 {
            0
        } else if u < b2 {
            1
        } else if u < b3 {
            2
        } else {
            3
        };
        let from = corners[seg];
        let to = corners[(seg + 1) % 4];
        let s = (u - bounds[seg]) / (bounds[seg + 1] - bounds[seg]);
        let lerp = |a: f64, b: f64| (1.0 - s) * a + s * b;
        let mut p = self.base;
        p.omega2 = C64::new(lerp(from.0, to.0), 0.0);
        p.delta1 = lerp(from.1, to.1);
        p
    }

    /// (centre, half-width) of Omega2 on the general loop.
    pub fn general_omega2_ellipse(&self) -> (f64, f64) {
        (0.5 * (self.omega2_max + self.omega2_min), 0.5 * (self.omega2_max - self.omega2_min))
    }

    fn general_at(&self, u: f64) -> ControlParams {
        let angle = 2.0 * PI * u;
        let (oc, or) = self.general_omega2_ellipse();
        let mut p = self.base;
        p.delta1 = self.delta_center + self.delta_radius * angle.sin();
        p.omega2 = C64::new(oc + or * angle.cos(), 0.0);
        p
    }

    /// Upper bound of |Omega2| over the loop.
    pub fn omega2_bound(&self) -> f64 {
        match self.kind {
            PathKind::Circle => self.base.omega2.norm(),
            PathKind::Experiment => self.omega2_max.max(self.closure.point_a().0),
            PathKind::General => self.omega2_max,
        }
    }

    /// Effective Hamiltonian (gamma2 = 0 convention) at time t.
    pub fn heff_at(&self, t: f64) -> Result<crate::smallmat::ComplexMatrix, PathError> {
        let p = self.params_at(t)?;
        model::build_heff(&p, true).map_err(|e| PathError::Invalid(e.to_string()))
    }
}
