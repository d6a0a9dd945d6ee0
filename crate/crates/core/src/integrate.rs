//! Adaptive Dormand-Prince 5(4) integration of the state-vector and
//! density-matrix equations along an encircling path.
//!
//! Steps are shortened so that every requested sample time is landed on
//! exactly; samples therefore carry the full fifth-order accuracy of the
//! accepted steps.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, density_violation, ControlParams, DensityMatrix, ModelError};
use crate::paths::{PathError, PathSpec};
use crate::smallmat::{ComplexMatrix, ComplexVector};

const MINUS_I: C64 = C64 { re: 0.0, im: -1.0 };

/// Violations of the density-matrix invariants beyond this abort a run.
pub const INVARIANT_ABORT_TOL: f64 = 1e-6;

/// Positivity bound for the eliminated tier. Its equations are not of
/// Lindblad form and a pure initial state picks up a negative eigenvalue of
/// about 8e-6 (relative to the trace) before the slaved coherences settle.
pub const ELIMINATED_POSITIVITY_TOL: f64 = 1e-4;

/// Positivity bound for the three-level tier at nonzero `qx`. The momentum
/// shift acts on rho12 and rho21 only, which is not a Hamiltonian term once
/// |3> is kept, so the map is not completely positive. Observed violations
/// on the cold-atom paths stay below 1e-3.
pub const FULL3_MOMENTUM_POSITIVITY_TOL: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("step size {step:.3e} fell below min_step at t = {t}")]
    StepUnderflow { t: f64, step: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("{invariant} violated at t = {t} (deviation {deviation:.3e})")]
    Invariant { invariant: &'static str, t: f64, deviation: f64 },
    #[error("invalid initial state: {0}")]
    InitialState(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Path(#[from] PathError),
}

fn default_rel_tol() -> f64 {
    1e-8
}
fn default_abs_tol() -> f64 {
    1e-10
}
fn default_min_step() -> f64 {
    1e-12
}
fn default_sample_count() -> usize {
    2000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    /// Largest step; `None` means a thousandth of the integration span.
    #[serde(default)]
    pub max_step: Option<f64>,
    #[serde(default = "default_min_step")]
    pub min_step: f64,
    /// Uniformly spaced samples per run, both end points included.
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: default_rel_tol(),
            abs_tol: default_abs_tol(),
            max_step: None,
            min_step: default_min_step(),
            sample_count: default_sample_count(),
        }
    }
}

impl IntegratorConfig {
    pub fn resolved_max_step(&self, span: f64) -> f64 {
        self.max_step.unwrap_or(span / 1000.0)
    }

    pub fn validate(&self, span: f64) -> Result<(), IntegrateError> {
        let bad = |msg: String| Err(IntegrateError::Config(msg));
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return bad(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return bad(format!("abs_tol must be positive, got {}", self.abs_tol));
        }
        if self.min_step.is_nan() || self.min_step <= 0.0 {
            return bad(format!("min_step must be positive, got {}", self.min_step));
        }
        if self.sample_count < 2 {
            return bad(format!("sample_count must be at least 2, got {}", self.sample_count));
        }
        if !(span > 0.0 && span.is_finite()) {
            return bad(format!("integration span must be positive, got {span}"));
        }
        let max_step = self.resolved_max_step(span);
        if max_step.is_nan() || max_step <= self.min_step {
            return bad(format!("max_step {max_step} must exceed min_step {}", self.min_step));
        }
        Ok(())
    }

    /// Tightens both tolerances by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Self { rel_tol: self.rel_tol * factor, abs_tol: self.abs_tol * factor, ..*self }
    }
}

/// `count` uniformly spaced times from t0 to t1 with both ends exact.
pub fn sample_times(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    let n = count.max(2);
    let mut times: Vec<f64> = (0..n).map(|k| t0 + (t1 - t0) * (k as f64) / ((n - 1) as f64)).collect();
    times[n - 1] = t1;
    times
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

struct StepControl {
    rel_tol: f64,
    abs_tol: f64,
    max_step: f64,
    min_step: f64,
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

fn combine<const N: usize>(y: &[C64; N], h: f64, terms: &[(f64, &[C64; N])]) -> [C64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (c, k) in terms {
            acc += k[i] * *c;
        }
        *o += acc * h;
    }
    out
}

fn weighted_rms<const N: usize>(v: &[C64; N], y: &[C64; N], ctl: &StepControl) -> f64 {
    let sum: f64 = v
        .iter()
        .zip(y)
        .map(|(e, yi)| {
            let sc = ctl.abs_tol + ctl.rel_tol * yi.norm();
            (e.norm() / sc).powi(2)
        })
        .sum();
    (sum / N as f64).sqrt()
}

/// States paired with the log of their dropped scale factor.
type ScaledStates<const N: usize> = Vec<([C64; N], f64)>;

/// Integrates the linear system y' = f(t, y) from `times[0]` and returns
/// the state at every entry of `times` (ascending).
///
/// Lossy runs decay by hundreds of orders of magnitude, so the state is
/// divided by `magnitude(y)` whenever that leaves [1/2, 2]; each output
/// carries the natural log of the accumulated factor, true state =
/// y * exp(log_scale).
fn solve<const N: usize, F>(
    mut f: F,
    y0: [C64; N],
    times: &[f64],
    ctl: &StepControl,
    magnitude: fn(&[C64; N]) -> f64,
) -> Result<(ScaledStates<N>, StepStats), IntegrateError>
where
    F: FnMut(f64, &[C64; N]) -> Result<[C64; N], IntegrateError>,
{
    let mut stats = StepStats::default();
    let mut out = Vec::with_capacity(times.len());
    let Some(&t0) = times.first() else {
        return Ok((out, stats));
    };
    let t_end = *times.last().unwrap_or(&t0);
    let mut t = t0;
    let mut y = y0;
    let mut log_scale = 0.0;
    out.push((y, log_scale));
    if t_end <= t0 {
        return Ok((out, stats));
    }
    let mut k1 = f(t, &y)?;
    stats.rhs_evals += 1;

    // initial step guess
    let zero = [C64::new(0.0, 0.0); N];
    let d0 = weighted_rms(&y, &y, ctl);
    let d1 = weighted_rms(&k1, &y, ctl);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(ctl.max_step).min(t_end - t0);
    let y1 = combine(&y, h0, &[(1.0, &k1)]);
    let f1 = f(t0 + h0, &y1)?;
    stats.rhs_evals += 1;
    let diff = combine(&zero, 1.0 / h0, &[(1.0, &f1), (-1.0, &k1)]);
    let d2 = weighted_rms(&diff, &y, ctl);
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    let mut h = (100.0 * h0).min(h1).min(ctl.max_step);

    for &target in &times[1..] {
        while t < target {
            let remaining = target - t;
            let mut step = h.min(ctl.max_step);
            let landing = step * 1.01 >= remaining;
            if landing {
                step = remaining;
            } else if step < ctl.min_step {
                return Err(IntegrateError::StepUnderflow { t, step });
            }
            let t_next = if landing { target } else { t + step };

            let k2 = f(t + C2 * step, &combine(&y, step, &[(A21, &k1)]))?;
            let k3 = f(t + C3 * step, &combine(&y, step, &[(A31, &k1), (A32, &k2)]))?;
            let k4 = f(t + C4 * step, &combine(&y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
            let k5 = f(t + C5 * step, &combine(&y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
            let k6 = f(t_next, &combine(&y, step, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
            let y5 = combine(&y, step, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
            let k7 = f(t_next, &y5)?;
            stats.rhs_evals += 6;
            let err = combine(&zero, step, &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)]);
            let scale_ref: [C64; N] = std::array::from_fn(|i| if y[i].norm() > y5[i].norm() { y[i] } else { y5[i] });
            let en = weighted_rms(&err, &scale_ref, ctl);
            if !en.is_finite() {
                return Err(IntegrateError::NonFinite { t: t_next });
            }
            if en <= 1.0 {
                stats.accepted += 1;
                t = t_next;
                y = y5;
                k1 = k7;
                let m = magnitude(&y);
                if m > 0.0 && m.is_finite() && !(0.5..=2.0).contains(&m) {
                    let inv = 1.0 / m;
                    y.iter_mut().chain(k1.iter_mut()).for_each(|z| *z *= inv);
                    log_scale += m.ln();
                }
                let factor =
                    if en == 0.0 { MAX_FACTOR } else { (SAFETY * en.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR) };
                let proposed = step * factor;
                // a step shortened to land on a sample says nothing about
                // the step size the dynamics allows
                h = if landing { proposed.max(h) } else { proposed };
            } else {
                stats.rejected += 1;
                h = step * (SAFETY * en.powf(-0.2)).max(MIN_FACTOR);
                if h < ctl.min_step {
                    return Err(IntegrateError::StepUnderflow { t, step: h });
                }
            }
        }
        out.push((y, log_scale));
    }
    Ok((out, stats))
}

/// State at one sample time, stored as a unit vector plus the natural log
/// of its norm so that strongly decayed states stay representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSample {
    pub t: f64,
    /// psi(t) / |psi(t)|.
    pub psi: ComplexVector,
    pub log_norm: f64,
}

impl StateSample {
    pub fn norm(&self) -> f64 {
        self.log_norm.exp()
    }

    /// psi(t) itself (underflows to zero for extreme decay).
    pub fn unnormalized(&self) -> ComplexVector {
        self.psi.scale(C64::new(self.norm(), 0.0))
    }
}

fn vector_norm<const N: usize>(y: &[C64; N]) -> f64 {
    y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn matrix_trace<const N: usize>(y: &[C64; N]) -> f64 {
    match N {
        4 => y[0].re + y[3].re,
        9 => y[0].re + y[4].re + y[8].re,
        _ => unreachable!("density arrays hold 2x2 or 3x3 matrices"),
    }
}

/// Solves i dpsi/dt = H(t) psi for a two-level state. The norm is not
/// renormalized away: it decays under loss and is reported per sample.
/// Sampled at `cfg.sample_count` uniform times over `t_span`.
pub fn evolve_state<F>(
    mut h_of_t: F,
    psi0: &ComplexVector,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<(Vec<StateSample>, StepStats), IntegrateError>
where
    F: FnMut(f64) -> Result<ComplexMatrix, IntegrateError>,
{
    let (t0, t1) = t_span;
    cfg.validate(t1 - t0)?;
    if psi0.dim() != 2 {
        return Err(IntegrateError::InitialState(format!("state has dimension {}, expected 2", psi0.dim())));
    }
    if !psi0.is_finite() || psi0.norm() <= 0.0 {
        return Err(IntegrateError::InitialState("state must have positive finite norm".into()));
    }
    let ctl = StepControl {
        rel_tol: cfg.rel_tol,
        abs_tol: cfg.abs_tol,
        max_step: cfg.resolved_max_step(t1 - t0),
        min_step: cfg.min_step,
    };
    let times = sample_times(t0, t1, cfg.sample_count);
    let y0 = [psi0[0], psi0[1]];
    let rhs = |t: f64, y: &[C64; 2]| -> Result<[C64; 2], IntegrateError> {
        let h = h_of_t(t)?;
        Ok([MINUS_I * (h[(0, 0)] * y[0] + h[(0, 1)] * y[1]), MINUS_I * (h[(1, 0)] * y[0] + h[(1, 1)] * y[1])])
    };
    let (states, stats) = solve(rhs, y0, &times, &ctl, vector_norm::<2>)?;
    let mut samples = Vec::with_capacity(states.len());
    for (&t, (y, log_scale)) in times.iter().zip(states) {
        let n = vector_norm(&y);
        if !(n > 0.0 && n.is_finite()) {
            return Err(IntegrateError::NonFinite { t });
        }
        let psi = ComplexVector::from_slice(&y).scale(C64::new(1.0 / n, 0.0));
        samples.push(StateSample { t, psi, log_norm: log_scale + n.ln() });
    }
    Ok((samples, stats))
}

/// Level of description used for the density-matrix dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTier {
    /// Leading-order Lindblad equation with loss and dephasing.
    Lindblad,
    /// Exact adiabatic elimination of |3>.
    Eliminated,
    /// Full three-level master equation.
    Full3,
}

impl ModelTier {
    pub fn label(self) -> &'static str {
        match self {
            ModelTier::Lindblad => "lindblad",
            ModelTier::Eliminated => "eliminated",
            ModelTier::Full3 => "full3",
        }
    }
}

/// Density matrix at one sample time, stored with unit trace plus the
/// natural log of the true trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensitySample {
    pub t: f64,
    /// rho(t) / Tr rho(t).
    pub rho: DensityMatrix,
    pub log_trace: f64,
    /// Hermiticity deviation (of the unit-trace state) removed when the
    /// sample was emitted.
    pub hermiticity_drift: f64,
}

impl DensitySample {
    pub fn trace(&self) -> f64 {
        self.log_trace.exp()
    }

    /// rho(t) itself (underflows to zero for extreme decay).
    pub fn unnormalized(&self) -> ComplexMatrix {
        self.rho.matrix().scale(C64::new(self.trace(), 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityTrajectory {
    pub tier: ModelTier,
    pub samples: Vec<DensitySample>,
    pub stats: StepStats,
}

impl DensityTrajectory {
    /// Unit-trace state at the end of the run.
    pub fn final_state(&self) -> &DensityMatrix {
        &self.final_sample().rho
    }

    pub fn final_sample(&self) -> &DensitySample {
        self.samples.last().expect("trajectories hold at least two samples")
    }
}

/// Density-matrix evolution along `path` over [0, T]. The full three-level
/// tier embeds a two-level initial state into the {|1>,|2>} block.
pub fn evolve_density(
    tier: ModelTier,
    path: &PathSpec,
    rho0: &DensityMatrix,
    cfg: &IntegratorConfig,
) -> Result<DensityTrajectory, IntegrateError> {
    path.validate()?;
    let omega2_bound = path.omega2_bound();
    evolve_density_with(tier, |t| Ok(path.params_at(t)?), omega2_bound, (0.0, path.total_time), rho0, cfg)
}

/// Density-matrix evolution for an arbitrary parameter schedule.
/// `omega2_bound` bounds |Omega2| over the span and sets the full-tier
/// step cap.
pub fn evolve_density_with<F>(
    tier: ModelTier,
    mut params_of_t: F,
    omega2_bound: f64,
    t_span: (f64, f64),
    rho0: &DensityMatrix,
    cfg: &IntegratorConfig,
) -> Result<DensityTrajectory, IntegrateError>
where
    F: FnMut(f64) -> Result<ControlParams, IntegrateError>,
{
    let (t0, t1) = t_span;
    let span = t1 - t0;
    cfg.validate(span)?;
    if let Some((invariant, deviation)) = density_violation(rho0.matrix(), model::DENSITY_TOL) {
        return Err(IntegrateError::InitialState(format!("{invariant} violated by {deviation:.3e}")));
    }
    if rho0.trace() <= 0.0 {
        return Err(IntegrateError::InitialState("initial state has zero trace".into()));
    }
    let mut ctl = StepControl {
        rel_tol: cfg.rel_tol,
        abs_tol: cfg.abs_tol,
        max_step: cfg.resolved_max_step(span),
        min_step: cfg.min_step,
    };
    let times = sample_times(t0, t1, cfg.sample_count);
    let p0 = params_of_t(t0)?;
    p0.validate()?;

    let raw: Vec<(ComplexMatrix, f64)>;
    let stats;
    match tier {
        ModelTier::Lindblad | ModelTier::Eliminated => {
            if rho0.dim() != 2 {
                return Err(IntegrateError::InitialState(format!(
                    "the {} tier needs a two-level state, got dimension {}",
                    tier.label(),
                    rho0.dim()
                )));
            }
            if tier == ModelTier::Eliminated && p0.gamma() <= 0.0 {
                return Err(ModelError::EliminationInvalid.into());
            }
            let y0 = rho0.matrix().to_array::<4>();
            let rhs = |t: f64, y: &[C64; 4]| -> Result<[C64; 4], IntegrateError> {
                let p = params_of_t(t)?;
                let rates = model::derived_rates(&p, None)?;
                Ok(match tier {
                    ModelTier::Lindblad => model::lindblad_rhs_array(&p, &rates, y),
                    _ => model::eliminated_rhs_array(&p, &rates, y),
                })
            };
            let (states, s) = solve(rhs, y0, &times, &ctl, matrix_trace::<4>)?;
            raw = states.iter().map(|(y, l)| (ComplexMatrix::from_array(y), *l)).collect();
            stats = s;
        }
        ModelTier::Full3 => {
            let cap = 0.05 / p0.gamma().max(omega2_bound * omega2_bound).max(1.0);
            ctl.max_step = ctl.max_step.min(cap);
            if ctl.max_step <= ctl.min_step {
                return Err(IntegrateError::Config("full3 step cap falls below min_step".into()));
            }
            let y0 = rho0.embed3().matrix().to_array::<9>();
            let rhs = |t: f64, y: &[C64; 9]| -> Result<[C64; 9], IntegrateError> {
                let p = params_of_t(t)?;
                Ok(model::full3_rhs_array(&p, y))
            };
            let (states, s) = solve(rhs, y0, &times, &ctl, matrix_trace::<9>)?;
            raw = states.iter().map(|(y, l)| (ComplexMatrix::from_array(y), *l)).collect();
            stats = s;
        }
    }

    let positivity_tol = match tier {
        ModelTier::Eliminated => ELIMINATED_POSITIVITY_TOL,
        ModelTier::Full3 if p0.qx != 0.0 => FULL3_MOMENTUM_POSITIVITY_TOL,
        _ => INVARIANT_ABORT_TOL,
    };
    let mut samples = Vec::with_capacity(raw.len());
    let mut previous_log_trace = rho0.trace().ln();
    for (&t, (m, log_scale)) in times.iter().zip(raw) {
        let trace = m.trace().re;
        if !(m.is_finite() && trace.is_finite()) {
            return Err(IntegrateError::NonFinite { t });
        }
        if trace <= 0.0 {
            return Err(IntegrateError::Invariant { invariant: "trace", t, deviation: -trace });
        }
        let unit = m.scale(C64::new(1.0 / trace, 0.0));
        match density_violation(&unit, INVARIANT_ABORT_TOL) {
            None => {}
            Some(("positivity", deviation)) if deviation <= positivity_tol => {}
            Some((invariant, deviation)) => return Err(IntegrateError::Invariant { invariant, t, deviation }),
        }
        let log_trace = log_scale + trace.ln();
        if log_trace > previous_log_trace + INVARIANT_ABORT_TOL {
            return Err(IntegrateError::Invariant {
                invariant: "trace monotonicity",
                t,
                deviation: (log_trace - previous_log_trace).exp_m1(),
            });
        }
        previous_log_trace = log_trace;
        samples.push(DensitySample {
            t,
            rho: DensityMatrix::from_checked(unit.hermitian_part()),
            log_trace,
            hermiticity_drift: unit.hermiticity_deviation(),
        });
    }
    Ok(DensityTrajectory { tier, samples, stats })
}
