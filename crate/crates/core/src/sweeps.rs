//! Sweeps built on single runs: chirality against encircling time and
//! velocity, the scaling-collapse fit, and full trajectory reports.
//!
//! Every (parameter, direction) run is an independent rayon task. Results
//! are merged by key in input order, so tables do not depend on scheduling.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{self, IntegrateError, IntegratorConfig, ModelTier};
use crate::liouville::{self, SpectrumError};
use crate::model::{self, DensityMatrix, ModelError};
use crate::observables::{self, ChiralityResult, ObservableError, TrajectorySample};
use crate::paths::{Direction, PathError, PathKind, PathSpec};
use crate::smallmat::{self, ComplexVector, LinalgError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Default gamma2 values of the time sweep.
pub const DEFAULT_GAMMA2: [f64; 5] = [0.0, 2.0, 5.0, 10.0, 20.0];

/// Default Omega2^max values of the velocity sweeps.
pub const DEFAULT_OMEGA2_MAX: [f64; 4] = [3.0, 4.0, 5.0, 6.0];

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Default encircling times: 25 log-spaced values in [10, 3e4].
pub fn default_times() -> Vec<f64> {
    log_grid(10.0, 3e4, 25)
}

/// Default velocities: log10 v from -5 to 3 in steps of 0.25.
pub fn default_velocities() -> Vec<f64> {
    (0..=32).map(|i| 10f64.powf(-5.0 + 0.25 * i as f64)).collect()
}

/// T = 2 pi / v.
pub fn time_from_velocity(v: f64) -> f64 {
    2.0 * PI / v
}

/// A cell that could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingCell {
    /// Human-readable cell key, e.g. "gamma2=10 T=150".
    pub cell: String,
    pub direction: Direction,
    pub error: String,
}

/// Runs cw and ccw for each template in parallel and pairs them up.
/// Failed directions are reported in the second vector.
fn run_pairs(
    templates: &[(String, PathSpec)],
    rho0: &DensityMatrix,
    tier: ModelTier,
    cfg: &IntegratorConfig,
) -> (Vec<Option<ChiralityResult>>, Vec<MissingCell>) {
    let tasks: Vec<(usize, Direction)> =
        (0..templates.len()).flat_map(|i| [(i, Direction::Cw), (i, Direction::Ccw)]).collect();
    let finals: Vec<Result<DensityMatrix, String>> = tasks
        .par_iter()
        .map(|&(i, dir)| {
            let path = templates[i].1.with_direction(dir);
            integrate::evolve_density(tier, &path, rho0, cfg).map(|tr| *tr.final_state()).map_err(|e| e.to_string())
        })
        .collect();
    let mut results = Vec::with_capacity(templates.len());
    let mut missing = Vec::new();
    for (i, (key, path)) in templates.iter().enumerate() {
        let (cw, ccw) = (&finals[2 * i], &finals[2 * i + 1]);
        for (dir, r) in [(Direction::Cw, cw), (Direction::Ccw, ccw)] {
            if let Err(e) = r {
                missing.push(MissingCell { cell: key.clone(), direction: dir, error: e.clone() });
            }
        }
        match (cw, ccw) {
            (Ok(a), Ok(b)) => match observables::chirality(a, b, path.total_time) {
                Ok(c) => results.push(Some(c)),
                Err(e) => {
                    missing.push(MissingCell { cell: key.clone(), direction: Direction::Cw, error: e.to_string() });
                    results.push(None);
                }
            },
            _ => results.push(None),
        }
    }
    (results, missing)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiralityRow {
    pub gamma2: f64,
    pub total_time: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ChiralityTable {
    /// Ordered by gamma2, then T, in input order.
    pub rows: Vec<ChiralityRow>,
    pub missing: Vec<MissingCell>,
}

impl ChiralityTable {
    /// (T, C) of one gamma2 curve.
    pub fn curve(&self, gamma2: f64) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.gamma2 == gamma2).map(|r| (r.total_time, r.c)).collect()
    }

    /// Distinct gamma2 values in row order.
    pub fn gamma2_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.gamma2) {
                out.push(r.gamma2);
            }
        }
        out
    }
}

fn check_ascending(name: &str, xs: &[f64]) -> Result<(), SweepError> {
    if xs.is_empty() {
        return Err(SweepError::Config(format!("{name} is empty")));
    }
    if xs.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(SweepError::Config(format!("{name} must be positive")));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SweepError::Config(format!("{name} must be strictly ascending")));
    }
    Ok(())
}

/// C(T) for every gamma2, starting cw and ccw from `rho0`. `template`
/// fixes the path family; its gamma2, T and direction are overwritten.
pub fn chirality_vs_time(
    times: &[f64],
    gamma2_list: &[f64],
    template: &PathSpec,
    rho0: &DensityMatrix,
    tier: ModelTier,
    cfg: &IntegratorConfig,
) -> Result<ChiralityTable, SweepError> {
    check_ascending("T list", times)?;
    if gamma2_list.is_empty() || gamma2_list.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(SweepError::Config("gamma2 list must be non-empty and >= 0".into()));
    }
    let mut keys = Vec::new();
    let mut templates = Vec::new();
    for &g in gamma2_list {
        for &t in times {
            let mut path = template.with_total_time(t);
            path.base.gamma2 = g;
            path.validate()?;
            keys.push((g, t));
            templates.push((format!("gamma2={g} T={t}"), path));
        }
    }
    let (results, missing) = run_pairs(&templates, rho0, tier, cfg);
    let rows = keys
        .iter()
        .zip(results)
        .filter_map(|(&(gamma2, total_time), r)| r.map(|r| ChiralityRow { gamma2, total_time, c: r.c }))
        .collect();
    Ok(ChiralityTable { rows, missing })
}

/// Result of the scaling-collapse fit C = f(gamma2 T^(1/nu)).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseFit {
    pub nu: f64,
    pub dispersion: f64,
    /// Binned master curve (x, f) at bin centres with at least two curves.
    pub curve: Vec<(f64, f64)>,
    /// (nu, dispersion) over the whole grid.
    pub scan: Vec<(f64, f64)>,
}

pub const COLLAPSE_BINS: usize = 50;
pub const COLLAPSE_MIN_CURVES: usize = 3;
pub const COLLAPSE_MIN_POINTS: usize = 8;

/// Grid of nu values searched by [`collapse_fit`]: 1.0 to 2.5 by 0.001.
pub fn collapse_nu_grid() -> Vec<f64> {
    (0..=1500).map(|i| (1000 + i) as f64 / 1000.0).collect()
}

/// Piecewise-linear interpolation in ascending `xs`; None outside the range.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    if x < xs[0] || x > xs[xs.len() - 1] {
        return None;
    }
    let k = xs.partition_point(|&v| v < x);
    if k == 0 {
        return Some(ys[0]);
    }
    let s = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    Some(ys[k - 1] + s * (ys[k] - ys[k - 1]))
}

/// Collapse quality for one exponent: the curves are interpolated in
/// log x at the centres of 50 log-spaced bins, and the variance of C
/// across curves is averaged over bins covered by at least two curves.
fn collapse_dispersion(curves: &[(f64, Vec<(f64, f64)>)], nu: f64) -> (f64, Vec<(f64, f64)>) {
    let logs: Vec<(Vec<f64>, Vec<f64>)> = curves
        .iter()
        .map(|(g, pts)| {
            let xs = pts.iter().map(|(t, _)| (g * t.powf(1.0 / nu)).ln()).collect();
            let ys = pts.iter().map(|(_, c)| *c).collect();
            (xs, ys)
        })
        .collect();
    let lo = logs.iter().map(|(xs, _)| xs[0]).fold(f64::INFINITY, f64::min);
    let hi = logs.iter().map(|(xs, _)| xs[xs.len() - 1]).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / COLLAPSE_BINS as f64;
    let mut total = 0.0;
    let mut used = 0usize;
    let mut master = Vec::new();
    for b in 0..COLLAPSE_BINS {
        let centre = lo + (b as f64 + 0.5) * width;
        let vals: Vec<f64> = logs.iter().filter_map(|(xs, ys)| interp(xs, ys, centre)).collect();
        if vals.len() < 2 {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        total += var;
        used += 1;
        master.push((centre.exp(), mean));
    }
    if used == 0 {
        (f64::INFINITY, master)
    } else {
        (total / used as f64, master)
    }
}

/// Which points of each C(T) curve enter the collapse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollapseWindow {
    /// Every point.
    All,
    /// From the maximum of each curve onwards. Short loops give coherent
    /// oscillations in C that do not scale.
    #[default]
    PostPeak,
}

/// Fits nu by grid search over [`collapse_nu_grid`] using the post-peak
/// branch of the curves with gamma2 > 0.
pub fn collapse_fit(table: &ChiralityTable) -> Result<CollapseFit, SweepError> {
    collapse_fit_with(table, &collapse_nu_grid(), CollapseWindow::PostPeak)
}

pub fn collapse_fit_with(
    table: &ChiralityTable,
    nu_grid: &[f64],
    window: CollapseWindow,
) -> Result<CollapseFit, SweepError> {
    let mut curves: Vec<(f64, Vec<(f64, f64)>)> = table
        .gamma2_values()
        .into_iter()
        .filter(|&g| g > 0.0)
        .map(|g| {
            let mut pts = table.curve(g);
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            if window == CollapseWindow::PostPeak {
                let peak = (0..pts.len()).max_by(|&a, &b| pts[a].1.total_cmp(&pts[b].1)).unwrap_or(0);
                pts.drain(..peak);
            }
            (g, pts)
        })
        .collect();
    curves.retain(|(_, pts)| pts.len() >= COLLAPSE_MIN_POINTS);
    if curves.len() < COLLAPSE_MIN_CURVES {
        return Err(SweepError::Config(format!(
            "collapse needs at least {COLLAPSE_MIN_CURVES} curves with gamma2 > 0 and {COLLAPSE_MIN_POINTS} points each, got {}",
            curves.len()
        )));
    }
    if nu_grid.is_empty() || nu_grid.iter().any(|nu| !(nu.is_finite() && *nu > 0.0)) {
        return Err(SweepError::Config("nu grid must be non-empty and positive".into()));
    }
    let scan: Vec<(f64, f64)> = nu_grid.par_iter().map(|&nu| (nu, collapse_dispersion(&curves, nu).0)).collect();
    let &(nu, dispersion) = scan.iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("grid is non-empty");
    if !dispersion.is_finite() {
        return Err(SweepError::Config("curves never overlap; collapse undefined".into()));
    }
    let (_, curve) = collapse_dispersion(&curves, nu);
    Ok(CollapseFit { nu, dispersion, curve, scan })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VelocityRow {
    pub omega2_max: f64,
    pub v: f64,
    pub ln_v: f64,
    pub log10_v: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct VelocityTable {
    pub rows: Vec<VelocityRow>,
    pub missing: Vec<MissingCell>,
}

impl VelocityTable {
    /// (v, C) of one Omega2^max curve.
    pub fn curve(&self, omega2_max: f64) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.omega2_max == omega2_max).map(|r| (r.v, r.c)).collect()
    }
}

/// C(v) for the experimental or general loop, T = 2 pi / v.
pub fn chirality_vs_velocity(
    template: &PathSpec,
    omega2_max_list: &[f64],
    velocities: &[f64],
    rho0: &DensityMatrix,
    tier: ModelTier,
    cfg: &IntegratorConfig,
) -> Result<VelocityTable, SweepError> {
    if template.kind == PathKind::Circle {
        return Err(SweepError::Config("velocity sweeps run on the experiment or general path".into()));
    }
    check_ascending("velocity list", velocities)?;
    if omega2_max_list.is_empty() {
        return Err(SweepError::Config("Omega2^max list is empty".into()));
    }
    let mut keys = Vec::new();
    let mut templates = Vec::new();
    for &om in omega2_max_list {
        for &v in velocities {
            let mut path = template.with_total_time(time_from_velocity(v));
            path.omega2_max = om;
            path.validate()?;
            keys.push((om, v));
            templates.push((format!("omega2_max={om} v={v}"), path));
        }
    }
    let (results, missing) = run_pairs(&templates, rho0, tier, cfg);
    let rows = keys
        .iter()
        .zip(results)
        .filter_map(|(&(omega2_max, v), r)| {
            r.map(|r| VelocityRow { omega2_max, v, ln_v: v.ln(), log10_v: v.log10(), c: r.c })
        })
        .collect();
    Ok(VelocityTable { rows, missing })
}

/// Eigenstate branch of the effective Hamiltonian at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// Larger Im E.
    SmallerLoss,
    LargerLoss,
}

/// Initial state of an encircling report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitialState {
    /// Right eigenvector of H_eff(t = 0) (gamma2 = 0 convention).
    Eigenstate { branch: Branch },
    /// Basis state |level>, level 1 or 2.
    Level { level: usize },
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Eigenstate { branch: Branch::SmallerLoss }
    }
}

impl InitialState {
    /// Unit state vector at the start of `path` (start parameters do not
    /// depend on the direction).
    pub fn vector(&self, path: &PathSpec) -> Result<ComplexVector, SweepError> {
        match *self {
            InitialState::Level { level } => {
                if !(1..=2).contains(&level) {
                    return Err(SweepError::Config(format!("initial level must be 1 or 2, got {level}")));
                }
                Ok(ComplexVector::basis(2, level - 1))
            }
            InitialState::Eigenstate { branch } => {
                let sys = smallmat::eig(&path.heff_at(0.0)?)?;
                if sys.is_defective() {
                    return Err(SweepError::Config("H_eff is defective at the loop start".into()));
                }
                let smaller_loss = if sys.eigenvalues[0].im >= sys.eigenvalues[1].im { 0 } else { 1 };
                let k = match branch {
                    Branch::SmallerLoss => smaller_loss,
                    Branch::LargerLoss => 1 - smaller_loss,
                };
                Ok(sys.right[k].normalized())
            }
        }
    }
}

/// Trajectory of one tier in one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TierTrajectory {
    pub tier: ModelTier,
    pub direction: Direction,
    pub samples: Vec<TrajectorySample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncircleReport {
    pub path: PathSpec,
    pub initial: ComplexVector,
    pub trajectories: Vec<TierTrajectory>,
    /// Chirality per tier.
    pub chirality: Vec<(ModelTier, ChiralityResult)>,
    /// Final pure states of the no-jump reference run, cw then ccw.
    pub reference_final: [ComplexVector; 2],
}

impl EncircleReport {
    pub fn trajectory(&self, tier: ModelTier, direction: Direction) -> Option<&TierTrajectory> {
        self.trajectories.iter().find(|t| t.tier == tier && t.direction == direction)
    }
}

/// Runs the pure no-jump reference and every requested density tier in
/// both directions, all sampled on the same time grid.
pub fn encircle_report(
    path: &PathSpec,
    initial: InitialState,
    tiers: &[ModelTier],
    cfg: &IntegratorConfig,
) -> Result<EncircleReport, SweepError> {
    path.validate()?;
    if tiers.is_empty() {
        return Err(SweepError::Config("no model tier requested".into()));
    }
    let psi0 = initial.vector(path)?;
    let rho0 = DensityMatrix::pure(&psi0)?;
    let dirs = [Direction::Cw, Direction::Ccw];

    let pure: Vec<Vec<integrate::StateSample>> = dirs
        .par_iter()
        .map(|&d| {
            let p = path.with_direction(d);
            integrate::evolve_state(|t| Ok(p.heff_at(t)?), &psi0, (0.0, p.total_time), cfg).map(|r| r.0)
        })
        .collect::<Result<_, _>>()?;

    let tasks: Vec<(ModelTier, usize)> = tiers.iter().flat_map(|&t| [(t, 0), (t, 1)]).collect();
    let trajectories: Vec<TierTrajectory> = tasks
        .par_iter()
        .map(|&(tier, k)| -> Result<TierTrajectory, SweepError> {
            let p = path.with_direction(dirs[k]);
            let tr = integrate::evolve_density(tier, &p, &rho0, cfg)?;
            let samples = observables::trajectory_samples(&p, &tr, Some(&pure[k]))?;
            Ok(TierTrajectory { tier, direction: dirs[k], samples })
        })
        .collect::<Result<_, _>>()?;

    let mut chirality = Vec::new();
    for pair in trajectories.chunks(2) {
        let end = |t: &TierTrajectory| t.samples.last().expect("non-empty").rho;
        chirality.push((pair[0].tier, observables::chirality(&end(&pair[0]), &end(&pair[1]), path.total_time)?));
    }
    let last = |v: &Vec<integrate::StateSample>| v.last().expect("non-empty").psi;
    Ok(EncircleReport {
        path: *path,
        initial: psi0,
        trajectories,
        chirality,
        reference_final: [last(&pure[0]), last(&pure[1])],
    })
}

/// Trace distance between a unit-trace state and the local quasi-steady
/// state; None where the top of the spectrum is degenerate.
pub fn steady_state_distance(rho: &DensityMatrix, path: &PathSpec, t: f64) -> Result<Option<f64>, SweepError> {
    let p = path.params_at(t)?;
    let qss = liouville::quasi_steady_state(&p)?;
    if qss.is_degenerate() {
        return Ok(None);
    }
    let m = liouville::devectorize(&qss.primary().state).hermitian_part();
    let reduced = rho.project2().normalized()?;
    Ok(Some(0.5 * smallmat::trace_norm_hermitian(&(m - *reduced.matrix()))?))
}

/// Agreement of the three model tiers over one encircling, measured on
/// populations and |rho12| of the unit-trace {|1>,|2>} state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TierComparison {
    /// max |q_lindblad - q_full3| over samples and quantities.
    pub lindblad_vs_full3: f64,
    /// Largest distance of q_eliminated from the interval spanned by the
    /// other two tiers.
    pub eliminated_outside: f64,
    /// max |q_eliminated - q_full3|.
    pub eliminated_vs_full3: f64,
}

fn tier_quantities(rho: &DensityMatrix) -> Result<[f64; 3], SweepError> {
    let r = rho.project2().normalized()?;
    let m = r.matrix();
    Ok([m[(0, 0)].re, m[(1, 1)].re, m[(0, 1)].norm()])
}

/// Runs all three tiers along `path` from the pure state `psi0`.
pub fn compare_tiers(
    path: &PathSpec,
    psi0: &ComplexVector,
    cfg: &IntegratorConfig,
) -> Result<TierComparison, SweepError> {
    let rho0 = DensityMatrix::pure(psi0)?;
    let tiers = [ModelTier::Lindblad, ModelTier::Eliminated, ModelTier::Full3];
    let runs: Vec<integrate::DensityTrajectory> =
        tiers.par_iter().map(|&t| integrate::evolve_density(t, path, &rho0, cfg)).collect::<Result<_, _>>()?;
    let mut out = TierComparison { lindblad_vs_full3: 0.0, eliminated_outside: 0.0, eliminated_vs_full3: 0.0 };
    for k in 0..runs[0].samples.len() {
        let l = tier_quantities(&runs[0].samples[k].rho)?;
        let e = tier_quantities(&runs[1].samples[k].rho)?;
        let f = tier_quantities(&runs[2].samples[k].rho)?;
        for q in 0..3 {
            let (lo, hi) = (l[q].min(f[q]), l[q].max(f[q]));
            let outside = (lo - e[q]).max(e[q] - hi).max(0.0);
            out.lindblad_vs_full3 = out.lindblad_vs_full3.max((l[q] - f[q]).abs());
            out.eliminated_outside = out.eliminated_outside.max(outside);
            out.eliminated_vs_full3 = out.eliminated_vs_full3.max((e[q] - f[q]).abs());
        }
    }
    Ok(out)
}

/// Column-oriented numeric table shared by the CSV and JSON writers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Columns printed as integers (flags).
    #[serde(skip)]
    pub integer_columns: Vec<usize>,
}

impl DataTable {
    fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new(), integer_columns: Vec::new() }
    }

    /// CSV with '.' decimals and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(
                    |(k, x)| {
                        if self.integer_columns.contains(&k) {
                            format!("{}", *x as i64)
                        } else {
                            format!("{x:.16e}")
                        }
                    },
                )
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(std::io::Error::other)
    }
}

pub fn chirality_table(table: &ChiralityTable) -> DataTable {
    let mut t = DataTable::new(&["gamma2", "T", "C"]);
    t.rows = table.rows.iter().map(|r| vec![r.gamma2, r.total_time, r.c]).collect();
    t
}

pub fn velocity_table(table: &VelocityTable) -> DataTable {
    let mut t = DataTable::new(&["omega2max", "v", "ln_v", "log10_v", "C"]);
    t.rows = table.rows.iter().map(|r| vec![r.omega2_max, r.v, r.ln_v, r.log10_v, r.c]).collect();
    t
}

pub fn collapse_table(fit: &CollapseFit) -> DataTable {
    let mut t = DataTable::new(&["x", "f"]);
    t.rows = fit.curve.iter().map(|&(x, f)| vec![x, f]).collect();
    t
}

pub fn trajectory_table(samples: &[TrajectorySample]) -> DataTable {
    let mut t = DataTable::new(&[
        "t",
        "theta",
        "re_Ebar0",
        "im_Ebar0",
        "re_Ebar",
        "im_Ebar",
        "re_lambdabar",
        "im_lambdabar",
        "trace",
        "purity",
        "rho11",
        "rho22",
        "re_rho12",
        "im_rho12",
        "near_ep_flag",
    ]);
    t.integer_columns = vec![14];
    for s in samples {
        let e0 = s.ebar0.unwrap_or(crate::C64::new(f64::NAN, f64::NAN));
        let m = s.rho.matrix();
        t.rows.push(vec![
            s.t,
            s.theta,
            e0.re,
            e0.im,
            s.ebar.re,
            s.ebar.im,
            s.lambdabar.re,
            s.lambdabar.im,
            s.trace,
            s.purity,
            m[(0, 0)].re,
            m[(1, 1)].re,
            m[(0, 1)].re,
            m[(0, 1)].im,
            f64::from(u8::from(s.near_ep_flag)),
        ]);
    }
    t
}

/// Reads a (gamma2, T, C) CSV as written for [`chirality_table`].
pub fn read_chirality_csv(text: &str) -> Result<ChiralityTable, SweepError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "gamma2,T,C" {
        return Err(SweepError::Config(format!("unexpected chirality CSV header '{header}'")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let vals: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| SweepError::Config(format!("chirality CSV line {}: {e}", n + 2)))?;
        if vals.len() != 3 {
            return Err(SweepError::Config(format!("chirality CSV line {} has {} columns", n + 2, vals.len())));
        }
        rows.push(ChiralityRow { gamma2: vals[0], total_time: vals[1], c: vals[2] });
    }
    Ok(ChiralityTable { rows, missing: Vec::new() })
}

/// Initial state |k><k| for k = 1, 2 (as in the sweeps).
pub fn level_state(level: usize) -> Result<DensityMatrix, SweepError> {
    if !(1..=2).contains(&level) {
        return Err(SweepError::Config(format!("level must be 1 or 2, got {level}")));
    }
    Ok(model::DensityMatrix::basis(2, level - 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_cfg() -> IntegratorConfig {
        IntegratorConfig { sample_count: 50, ..IntegratorConfig::default() }
    }

    #[test]
    fn grids() {
        let g = log_grid(10.0, 3e4, 25);
        assert_eq!(g.len(), 25);
        assert!((g[0] - 10.0).abs() < 1e-12 && (g[24] - 3e4).abs() < 1e-8);
        let v = default_velocities();
        assert!((v[0].log10() + 5.0).abs() < 1e-12);
        assert!((v[v.len() - 1].log10() - 3.0).abs() < 1e-12);
        assert!((time_from_velocity(1.0) - 2.0 * PI).abs() < 1e-15);
    }

    fn planted(nu: f64) -> ChiralityTable {
        let g = |x: f64| x / (1.0 + 0.02 * x * x);
        let mut rows = Vec::new();
        for gamma2 in [2.0, 5.0, 10.0, 20.0] {
            for t in log_grid(10.0, 3e4, 25) {
                let x = gamma2 * f64::powf(t, 1.0 / nu);
                rows.push(ChiralityRow { gamma2, total_time: t, c: g(x / 100.0) });
            }
        }
        ChiralityTable { rows, missing: vec![] }
    }

    #[test]
    fn planted_exponent_is_recovered() {
        let fit = collapse_fit(&planted(1.5)).unwrap();
        assert!((fit.nu - 1.5).abs() <= 0.02, "nu = {}", fit.nu);
        assert!(fit.scan.iter().all(|&(_, d)| fit.dispersion <= d));
        assert!(!fit.curve.is_empty());
    }

    #[test]
    fn single_curve_is_rejected() {
        let mut t = planted(1.5);
        t.rows.retain(|r| r.gamma2 == 10.0);
        assert!(matches!(collapse_fit(&t), Err(SweepError::Config(_))));
    }

    #[test]
    fn short_curves_are_rejected() {
        let mut t = planted(1.5);
        let keep: Vec<f64> = log_grid(10.0, 3e4, 25).into_iter().take(7).collect();
        t.rows.retain(|r| keep.contains(&r.total_time));
        assert!(collapse_fit(&t).is_err());
    }

    #[test]
    fn time_sweep_small() {
        let table = chirality_vs_time(
            &[10.0, 20.0],
            &[0.0, 10.0],
            &PathSpec::circle(Direction::Ccw, 1.0),
            &level_state(1).unwrap(),
            ModelTier::Lindblad,
            &fast_cfg(),
        )
        .unwrap();
        assert_eq!(table.rows.len(), 4);
        assert!(table.missing.is_empty());
        assert_eq!(table.gamma2_values(), vec![0.0, 10.0]);
        assert!(table.rows.iter().all(|r| (0.0..=1.0 + 1e-10).contains(&r.c)));
    }

    #[test]
    fn sweeps_reject_bad_grids() {
        let path = PathSpec::circle(Direction::Ccw, 1.0);
        let rho = level_state(1).unwrap();
        let cfg = fast_cfg();
        assert!(chirality_vs_time(&[20.0, 10.0], &[0.0], &path, &rho, ModelTier::Lindblad, &cfg).is_err());
        assert!(chirality_vs_time(&[10.0], &[], &path, &rho, ModelTier::Lindblad, &cfg).is_err());
        assert!(chirality_vs_velocity(&path, &[3.0], &[1.0], &rho, ModelTier::Lindblad, &cfg).is_err());
    }

    #[test]
    fn diabatic_limit_keeps_the_initial_state() {
        let rho = level_state(2).unwrap();
        for path in [PathSpec::experiment(Direction::Ccw, 1.0, 5.0), PathSpec::general(Direction::Ccw, 1.0, 5.0)] {
            let table = chirality_vs_velocity(&path, &[5.0], &[1e3], &rho, ModelTier::Lindblad, &fast_cfg()).unwrap();
            assert!(table.rows[0].c < 0.05, "{:?}", table.rows[0]);
        }
    }

    #[test]
    fn report_has_aligned_series() {
        let path = PathSpec::circle(Direction::Ccw, 20.0);
        let rep = encircle_report(&path, InitialState::default(), &[ModelTier::Lindblad], &fast_cfg()).unwrap();
        assert_eq!(rep.trajectories.len(), 2);
        for tr in &rep.trajectories {
            assert_eq!(tr.samples.len(), 50);
            assert!(tr.samples.iter().all(|s| s.ebar0.is_some()));
        }
        assert_eq!(rep.chirality.len(), 1);
        let mut buf = Vec::new();
        trajectory_table(&rep.trajectories[0].samples).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 51);
        let first = text.lines().nth(1).unwrap();
        assert_eq!(first.split(',').count(), 15);
        assert!(first.ends_with(",0") || first.ends_with(",1"));
    }

    #[test]
    fn smaller_loss_branch_is_selected() {
        let path = PathSpec::circle(Direction::Ccw, 20.0);
        let sys = smallmat::eig(&path.heff_at(0.0).unwrap()).unwrap();
        let psi = InitialState::default().vector(&path).unwrap();
        let e = observables::project_hamiltonian_pure(&psi, &path.params_at(0.0).unwrap()).unwrap().value;
        let top = sys.eigenvalues.iter().map(|z| z.im).fold(f64::NEG_INFINITY, f64::max);
        assert!((e.im - top).abs() < 1e-10);
        assert!(InitialState::Level { level: 3 }.vector(&path).is_err());
    }

    #[test]
    fn csv_uses_full_precision() {
        let table = ChiralityTable {
            rows: vec![ChiralityRow { gamma2: 10.0, total_time: 1.0 / 3.0, c: 0.1 }],
            missing: vec![],
        };
        let mut buf = Vec::new();
        chirality_table(&table).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let t: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(t, 1.0 / 3.0);
        assert_eq!(read_chirality_csv(&text).unwrap(), table);
        assert!(read_chirality_csv("a,b\n").is_err());
    }
}
