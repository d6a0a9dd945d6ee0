//! Command-line frontend.
//!
//! Settings are resolved as built-in defaults, then the TOML config file,
//! then command-line flags. All results are computed before anything is
//! written, so a rejected configuration leaves no files behind.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 invalid configuration,
//! 3 numerical failure (the failing cell is named in the error record).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64 as C64;
use serde::de::{DeserializeOwned, IntoDeserializer};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::integrate::{IntegrateError, IntegratorConfig, ModelTier};
use crate::liouville::{self, LandscapeAxis, LandscapeSpec};
use crate::model::{self, ControlParams};
use crate::paths::{Direction, ExperimentClosure, PathKind, PathSpec};
use crate::smallmat;
use crate::sweeps::{self, CollapseWindow, DataTable, InitialState, MissingCell, SweepError};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "DEPHASING_EP_WORKERS";

/// Base of the logarithm in reported velocities.
pub const LOG_BASE: &str = "log10";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Spectrum,
    Encircle,
    Chirality,
    Collapse,
    VelocitySweep,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Encircle => "encircle",
            Command::Chirality => "chirality",
            Command::Collapse => "collapse",
            Command::VelocitySweep => "velocity-sweep",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Overrides of the fixed model parameters of the chosen path family.
/// Couplings are real.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub omega1: Option<f64>,
    pub delta1: Option<f64>,
    pub omega2: Option<f64>,
    pub delta2: Option<f64>,
    pub gamma0: Option<f64>,
    pub gamma2: Option<f64>,
    pub qx: Option<f64>,
}

impl ParamOverrides {
    pub fn apply(&self, p: &mut ControlParams) {
        if let Some(x) = self.omega1 {
            p.omega1 = C64::new(x, 0.0);
        }
        if let Some(x) = self.omega2 {
            p.omega2 = C64::new(x, 0.0);
        }
        let reals = [
            (self.delta1, &mut p.delta1),
            (self.delta2, &mut p.delta2),
            (self.gamma0, &mut p.gamma0),
            (self.gamma2, &mut p.gamma2),
            (self.qx, &mut p.qx),
        ];
        for (v, slot) in reals {
            if let Some(x) = v {
                *slot = x;
            }
        }
    }

    fn merge(&mut self, other: &ParamOverrides) {
        let pairs = [
            (&mut self.omega1, other.omega1),
            (&mut self.delta1, other.delta1),
            (&mut self.omega2, other.omega2),
            (&mut self.delta2, other.delta2),
            (&mut self.gamma0, other.gamma0),
            (&mut self.gamma2, other.gamma2),
            (&mut self.qx, other.qx),
        ];
        for (slot, v) in pairs {
            if v.is_some() {
                *slot = v;
            }
        }
    }
}

/// Path settings; unset fields take the family defaults. Reports and
/// sweeps always run both directions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub kind: Option<PathKind>,
    /// Total encircling time; exclusive with `velocity`.
    pub total_time: Option<f64>,
    /// 2 pi / T.
    pub velocity: Option<f64>,
    pub phase_offset: Option<f64>,
    pub omega2_max: Option<f64>,
    pub omega2_min: Option<f64>,
    pub delta_center: Option<f64>,
    pub delta_radius: Option<f64>,
    pub closure: Option<ExperimentClosure>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Encircling times of `chirality` and `collapse`.
    pub times: Option<Vec<f64>>,
    pub gamma2: Option<Vec<f64>>,
    /// Velocities of `velocity-sweep`.
    pub velocities: Option<Vec<f64>>,
    pub omega2_max: Option<Vec<f64>>,
    /// Start in |level><level|; 1 for time sweeps, 2 for velocity sweeps
    /// when unset.
    pub initial_level: Option<usize>,
    pub collapse_window: CollapseWindow,
    /// `collapse`: fit a previously written chirality CSV instead of
    /// running the sweep.
    pub input: Option<PathBuf>,
}

fn default_tiers() -> Vec<ModelTier> {
    vec![ModelTier::Lindblad]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncircleConfig {
    pub initial: InitialState,
    pub tiers: Vec<ModelTier>,
}

impl Default for EncircleConfig {
    fn default() -> Self {
        Self { initial: InitialState::default(), tiers: default_tiers() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub initial: InitialState,
    /// Bound on max |q_lindblad - q_full3|.
    pub bound: f64,
    /// Bound on how far the eliminated tier may leave the band between
    /// the other two.
    pub between_bound: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self { initial: InitialState::default(), bound: 0.02, between_bound: 0.01 }
    }
}

/// Complete run description. Parsed strictly from TOML; the manifest
/// stores the resolved copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub output_path: PathBuf,
    pub format: Format,
    pub workers: Option<usize>,
    pub tier: ModelTier,
    pub params: ParamOverrides,
    pub path: PathConfig,
    pub integrator: IntegratorConfig,
    pub spectrum: LandscapeSpec,
    pub sweep: SweepConfig,
    pub encircle: EncircleConfig,
    pub validate: ValidateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            output_path: PathBuf::from("out"),
            format: Format::Csv,
            workers: None,
            tier: ModelTier::Lindblad,
            params: ParamOverrides::default(),
            path: PathConfig::default(),
            integrator: IntegratorConfig::default(),
            spectrum: LandscapeSpec::default(),
            sweep: SweepConfig::default(),
            encircle: EncircleConfig::default(),
            validate: ValidateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))
    }

    /// The path of this run, with family defaults for unset fields.
    pub fn resolve_path(&self, default_kind: PathKind, default_time: f64) -> Result<PathSpec, CliError> {
        let pc = &self.path;
        let kind = pc.kind.unwrap_or(default_kind);
        let total_time = match (pc.total_time, pc.velocity) {
            (Some(_), Some(_)) => return Err(CliError::Schema("set either path.total_time or path.velocity".into())),
            (Some(t), None) => t,
            (None, Some(v)) => sweeps::time_from_velocity(v),
            (None, None) => default_time,
        };
        let mut spec = match kind {
            PathKind::Circle => PathSpec::circle(Direction::Ccw, total_time),
            PathKind::Experiment => PathSpec::experiment(Direction::Ccw, total_time, 6.0),
            PathKind::General => PathSpec::general(Direction::Ccw, total_time, 6.0),
        };
        let fields = [
            (pc.phase_offset, &mut spec.phase_offset),
            (pc.omega2_max, &mut spec.omega2_max),
            (pc.omega2_min, &mut spec.omega2_min),
            (pc.delta_center, &mut spec.delta_center),
            (pc.delta_radius, &mut spec.delta_radius),
        ];
        for (v, slot) in fields {
            if let Some(x) = v {
                *slot = x;
            }
        }
        if let Some(c) = pc.closure {
            spec.closure = c;
        }
        self.params.apply(&mut spec.base);
        spec.validate().map_err(|e| CliError::Schema(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug)]
pub enum CliError {
    Schema(String),
    Numerical { cell: Option<String>, message: String },
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) => 1,
        }
    }

    /// Machine-readable error record.
    pub fn record(&self) -> serde_json::Value {
        match self {
            CliError::Schema(m) => json!({"error": "schema", "message": m}),
            CliError::Numerical { cell, message } => json!({"error": "numerical", "cell": cell, "message": message}),
            CliError::Io(m) => json!({"error": "io", "message": m}),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Config(m) => CliError::Schema(m),
            SweepError::Io(e) => CliError::Io(e.to_string()),
            SweepError::Integrate(IntegrateError::Config(m)) => CliError::Schema(m),
            other => CliError::Numerical { cell: None, message: other.to_string() },
        }
    }
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    T::deserialize(s.into_deserializer()).map_err(|e: serde::de::value::Error| e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "dephasing-ep",
    version,
    about = "Encircling dynamics and chirality of a lossy, dephasing two-level system"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// csv or json.
    #[arg(long, global = true, value_parser = parse_serde::<Format>)]
    pub format: Option<Format>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// lindblad, eliminated or full3.
    #[arg(long, global = true, value_parser = parse_serde::<ModelTier>)]
    pub tier: Option<ModelTier>,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub path: PathArgs,
    #[command(flatten)]
    pub integrator: IntegratorArgs,
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Debug, Args)]
pub struct ParamArgs {
    #[arg(long, global = true)]
    pub omega1: Option<f64>,
    #[arg(long, global = true)]
    pub delta1: Option<f64>,
    #[arg(long, global = true)]
    pub omega2: Option<f64>,
    #[arg(long, global = true)]
    pub delta2: Option<f64>,
    #[arg(long, global = true)]
    pub gamma0: Option<f64>,
    #[arg(long, global = true)]
    pub gamma2: Option<f64>,
    #[arg(long, global = true)]
    pub qx: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    /// circle, experiment or general.
    #[arg(long, global = true, value_parser = parse_serde::<PathKind>)]
    pub kind: Option<PathKind>,
    #[arg(long, global = true)]
    pub total_time: Option<f64>,
    #[arg(long, global = true)]
    pub velocity: Option<f64>,
    #[arg(long, global = true)]
    pub phase_offset: Option<f64>,
    #[arg(long, global = true)]
    pub omega2_max: Option<f64>,
    /// quoted or hermitian-return.
    #[arg(long, global = true, value_parser = parse_serde::<ExperimentClosure>)]
    pub closure: Option<ExperimentClosure>,
}

#[derive(Debug, Args)]
pub struct IntegratorArgs {
    #[arg(long, global = true)]
    pub rel_tol: Option<f64>,
    #[arg(long, global = true)]
    pub abs_tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_step: Option<f64>,
    #[arg(long, global = true)]
    pub sample_count: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// Liouvillian and H_eff spectra over a parameter grid.
    Spectrum {
        /// omega1 or omega2.
        #[arg(long, value_parser = parse_serde::<LandscapeAxis>)]
        axis: Option<LandscapeAxis>,
    },
    /// Trajectories of one loop in both directions with all projections.
    Encircle {
        /// smaller-loss, larger-loss, level1 or level2.
        #[arg(long, value_parser = parse_initial)]
        initial: Option<InitialState>,
        #[arg(long, value_delimiter = ',', value_parser = parse_serde::<ModelTier>)]
        tiers: Option<Vec<ModelTier>>,
    },
    /// Chirality against total encircling time for several gamma2.
    Chirality {
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        gamma2_list: Option<Vec<f64>>,
        #[arg(long)]
        initial_level: Option<usize>,
    },
    /// Scaling-collapse fit of the chirality curves.
    Collapse {
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        gamma2_list: Option<Vec<f64>>,
        /// Chirality CSV to fit instead of running the sweep.
        #[arg(long)]
        input: Option<PathBuf>,
        /// all or post-peak.
        #[arg(long, value_parser = parse_serde::<CollapseWindow>)]
        window: Option<CollapseWindow>,
    },
    /// Chirality against encircling velocity on the experiment or general path.
    VelocitySweep {
        #[arg(long, value_delimiter = ',')]
        velocities: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        omega2_max_list: Option<Vec<f64>>,
        #[arg(long)]
        initial_level: Option<usize>,
    },
    /// Compares the three model tiers over one loop.
    Validate {
        #[arg(long)]
        bound: Option<f64>,
    },
}

fn parse_initial(s: &str) -> Result<InitialState, String> {
    use sweeps::Branch;
    match s {
        "smaller-loss" => Ok(InitialState::Eigenstate { branch: Branch::SmallerLoss }),
        "larger-loss" => Ok(InitialState::Eigenstate { branch: Branch::LargerLoss }),
        "level1" => Ok(InitialState::Level { level: 1 }),
        "level2" => Ok(InitialState::Level { level: 2 }),
        _ => Err(format!("unknown initial state '{s}'")),
    }
}

impl CommandArgs {
    fn command(&self) -> Command {
        match self {
            CommandArgs::Spectrum { .. } => Command::Spectrum,
            CommandArgs::Encircle { .. } => Command::Encircle,
            CommandArgs::Chirality { .. } => Command::Chirality,
            CommandArgs::Collapse { .. } => Command::Collapse,
            CommandArgs::VelocitySweep { .. } => Command::VelocitySweep,
            CommandArgs::Validate { .. } => Command::Validate,
        }
    }
}

/// Loads the config file (if any) and applies the flags on top.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Schema(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    let command = cli.command.command();
    if let Some(c) = cfg.command {
        if c != command {
            return Err(CliError::Schema(format!(
                "config is for '{}' but '{}' was requested",
                c.name(),
                command.name()
            )));
        }
    }
    cfg.command = Some(command);
    if let Some(o) = &cli.output {
        cfg.output_path = o.clone();
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if let Some(t) = cli.tier {
        cfg.tier = t;
    }
    let p = &cli.params;
    cfg.params.merge(&ParamOverrides {
        omega1: p.omega1,
        delta1: p.delta1,
        omega2: p.omega2,
        delta2: p.delta2,
        gamma0: p.gamma0,
        gamma2: p.gamma2,
        qx: p.qx,
    });
    let pa = &cli.path;
    if pa.kind.is_some() {
        cfg.path.kind = pa.kind;
    }
    if pa.total_time.is_some() {
        cfg.path.total_time = pa.total_time;
        cfg.path.velocity = None;
    }
    if pa.velocity.is_some() {
        cfg.path.velocity = pa.velocity;
        cfg.path.total_time = None;
    }
    if pa.phase_offset.is_some() {
        cfg.path.phase_offset = pa.phase_offset;
    }
    if pa.omega2_max.is_some() {
        cfg.path.omega2_max = pa.omega2_max;
    }
    if pa.closure.is_some() {
        cfg.path.closure = pa.closure;
    }
    let ia = &cli.integrator;
    if let Some(x) = ia.rel_tol {
        cfg.integrator.rel_tol = x;
    }
    if let Some(x) = ia.abs_tol {
        cfg.integrator.abs_tol = x;
    }
    if ia.max_step.is_some() {
        cfg.integrator.max_step = ia.max_step;
    }
    if let Some(x) = ia.sample_count {
        cfg.integrator.sample_count = x;
    }
    match &cli.command {
        CommandArgs::Spectrum { axis } => {
            if let Some(a) = axis {
                cfg.spectrum.axis = *a;
            }
        }
        CommandArgs::Encircle { initial, tiers } => {
            if let Some(i) = initial {
                cfg.encircle.initial = *i;
            }
            if let Some(t) = tiers {
                cfg.encircle.tiers = t.clone();
            }
        }
        CommandArgs::Chirality { times, gamma2_list, initial_level } => {
            if times.is_some() {
                cfg.sweep.times = times.clone();
            }
            if gamma2_list.is_some() {
                cfg.sweep.gamma2 = gamma2_list.clone();
            }
            if initial_level.is_some() {
                cfg.sweep.initial_level = *initial_level;
            }
        }
        CommandArgs::Collapse { times, gamma2_list, input, window } => {
            if times.is_some() {
                cfg.sweep.times = times.clone();
            }
            if gamma2_list.is_some() {
                cfg.sweep.gamma2 = gamma2_list.clone();
            }
            if input.is_some() {
                cfg.sweep.input = input.clone();
            }
            if let Some(w) = window {
                cfg.sweep.collapse_window = *w;
            }
        }
        CommandArgs::VelocitySweep { velocities, omega2_max_list, initial_level } => {
            if velocities.is_some() {
                cfg.sweep.velocities = velocities.clone();
            }
            if omega2_max_list.is_some() {
                cfg.sweep.omega2_max = omega2_max_list.clone();
            }
            if initial_level.is_some() {
                cfg.sweep.initial_level = *initial_level;
            }
        }
        CommandArgs::Validate { bound } => {
            if let Some(b) = bound {
                cfg.validate.bound = *b;
            }
        }
    }
    Ok(cfg)
}

/// One file of output, rendered in memory.
struct Artifact {
    name: String,
    body: Vec<u8>,
}

fn table_artifact(stem: &str, table: &DataTable, format: Format) -> Result<Artifact, CliError> {
    let mut body = Vec::new();
    let ext = match format {
        Format::Csv => {
            table.write_csv(&mut body).map_err(|e| CliError::Io(e.to_string()))?;
            "csv"
        }
        Format::Json => {
            table.write_json(&mut body).map_err(|e| CliError::Io(e.to_string()))?;
            "json"
        }
    };
    Ok(Artifact { name: format!("{stem}.{ext}"), body })
}

fn json_artifact(name: &str, value: &serde_json::Value) -> Artifact {
    Artifact { name: name.to_string(), body: serde_json::to_vec_pretty(value).expect("json values serialize") }
}

/// Results of a run before they are written.
struct Outcome {
    artifacts: Vec<Artifact>,
    path: Option<PathSpec>,
    summary: serde_json::Value,
    missing: Vec<MissingCell>,
}

fn check_positive(name: &str, xs: &[f64]) -> Result<(), CliError> {
    if xs.is_empty() || xs.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(CliError::Schema(format!("{name} must be a non-empty list of positive numbers")));
    }
    Ok(())
}

fn landscape_table(grid: &liouville::LandscapeGrid, base: &ControlParams) -> Result<DataTable, CliError> {
    let mut t = DataTable {
        columns: [
            "coupling", "delta1", "re_l0", "im_l0", "re_l1", "im_l1", "re_l2", "im_l2", "re_l3", "im_l3", "gap",
            "crossing", "re_E0", "im_E0", "re_E1", "im_E1",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        rows: Vec::new(),
        integer_columns: vec![11],
    };
    for (i1, &c) in grid.axis1.iter().enumerate() {
        for (i2, &d) in grid.axis2.iter().enumerate() {
            let pt = grid.point(i1, i2);
            let mut p = *base;
            match grid.axis {
                LandscapeAxis::Omega1 => p.omega1 = C64::new(c, 0.0),
                LandscapeAxis::Omega2 => p.omega2 = C64::new(c, 0.0),
            }
            p.delta1 = d;
            let heff = model::build_heff(&p, true).map_err(|e| CliError::Numerical {
                cell: Some(format!("coupling={c} delta1={d}")),
                message: e.to_string(),
            })?;
            let mut e = smallmat::eigenvalues(&heff).map_err(|e| CliError::Numerical {
                cell: Some(format!("coupling={c} delta1={d}")),
                message: e.to_string(),
            })?;
            e.sort_by(|a, b| b.im.total_cmp(&a.im));
            let mut row = vec![c, d];
            for z in pt.sheets {
                row.extend([z.re, z.im]);
            }
            row.extend([pt.gap, f64::from(u8::from(pt.crossing)), e[0].re, e[0].im, e[1].re, e[1].im]);
            t.rows.push(row);
        }
    }
    Ok(t)
}

fn run_spectrum(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let path = cfg.resolve_path(PathKind::Circle, 1.0)?;
    let base = path.base;
    let grid = liouville::scan_landscape(&cfg.spectrum, &base).map_err(|e| match e {
        liouville::SpectrumError::Grid(m) => CliError::Schema(m),
        other => CliError::Numerical { cell: None, message: other.to_string() },
    })?;
    let table = landscape_table(&grid, &base)?;
    Ok(Outcome {
        artifacts: vec![table_artifact("landscape", &table, cfg.format)?],
        path: None,
        summary: json!({"min_gap": grid.min_gap(), "base": base}),
        missing: vec![],
    })
}

fn run_encircle(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let path = cfg.resolve_path(PathKind::Circle, 150.0)?;
    cfg.integrator.validate(path.total_time).map_err(|e| CliError::Schema(e.to_string()))?;
    let report = sweeps::encircle_report(&path, cfg.encircle.initial, &cfg.encircle.tiers, &cfg.integrator)?;
    let mut artifacts = Vec::new();
    for tr in &report.trajectories {
        let stem = format!("trajectory_{}_{}", tr.tier.label(), tr.direction.label());
        artifacts.push(table_artifact(&stem, &sweeps::trajectory_table(&tr.samples), cfg.format)?);
    }
    let chirality: Vec<serde_json::Value> = report
        .chirality
        .iter()
        .map(|(tier, c)| json!({"tier": tier, "C": c.c, "T": c.total_time, "v": c.velocity}))
        .collect();
    Ok(Outcome { artifacts, path: Some(path), summary: json!({"chirality": chirality}), missing: vec![] })
}

fn level(cfg: &RunConfig, default: usize) -> Result<model::DensityMatrix, CliError> {
    Ok(sweeps::level_state(cfg.sweep.initial_level.unwrap_or(default))?)
}

fn time_sweep(cfg: &RunConfig) -> Result<(PathSpec, sweeps::ChiralityTable), CliError> {
    let path = cfg.resolve_path(PathKind::Circle, 1.0)?;
    let times = cfg.sweep.times.clone().unwrap_or_else(sweeps::default_times);
    let gamma2 = cfg.sweep.gamma2.clone().unwrap_or_else(|| sweeps::DEFAULT_GAMMA2.to_vec());
    check_positive("sweep.times", &times)?;
    cfg.integrator.validate(times[0]).map_err(|e| CliError::Schema(e.to_string()))?;
    let rho0 = level(cfg, 1)?;
    let table = sweeps::chirality_vs_time(&times, &gamma2, &path, &rho0, cfg.tier, &cfg.integrator)?;
    Ok((path, table))
}

fn run_chirality(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (path, table) = time_sweep(cfg)?;
    Ok(Outcome {
        artifacts: vec![table_artifact("chirality", &sweeps::chirality_table(&table), cfg.format)?],
        path: Some(path),
        summary: json!({"rows": table.rows.len()}),
        missing: table.missing,
    })
}

fn run_collapse(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut artifacts = Vec::new();
    let (table, path) = match &cfg.sweep.input {
        Some(input) => {
            let text = fs::read_to_string(input)
                .map_err(|e| CliError::Schema(format!("cannot read {}: {e}", input.display())))?;
            (sweeps::read_chirality_csv(&text)?, None)
        }
        None => {
            let (path, table) = time_sweep(cfg)?;
            artifacts.push(table_artifact("chirality", &sweeps::chirality_table(&table), cfg.format)?);
            (table, Some(path))
        }
    };
    let fit = sweeps::collapse_fit_with(&table, &sweeps::collapse_nu_grid(), cfg.sweep.collapse_window)?;
    artifacts.push(table_artifact("collapse", &sweeps::collapse_table(&fit), cfg.format)?);
    Ok(Outcome {
        artifacts,
        path,
        summary: json!({"nu": fit.nu, "dispersion": fit.dispersion}),
        missing: table.missing,
    })
}

fn run_velocity(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut path = cfg.resolve_path(PathKind::Experiment, 1.0)?;
    if path.kind == PathKind::Circle {
        return Err(CliError::Schema("velocity-sweep needs path.kind = experiment or general".into()));
    }
    let velocities = cfg.sweep.velocities.clone().unwrap_or_else(sweeps::default_velocities);
    let om = cfg.sweep.omega2_max.clone().unwrap_or_else(|| sweeps::DEFAULT_OMEGA2_MAX.to_vec());
    check_positive("sweep.velocities", &velocities)?;
    check_positive("sweep.omega2_max", &om)?;
    let largest = velocities.iter().cloned().fold(0.0, f64::max);
    cfg.integrator.validate(sweeps::time_from_velocity(largest)).map_err(|e| CliError::Schema(e.to_string()))?;
    let rho0 = level(cfg, 2)?;
    let table = sweeps::chirality_vs_velocity(&path, &om, &velocities, &rho0, cfg.tier, &cfg.integrator)?;
    path.total_time = sweeps::time_from_velocity(velocities[0]);
    Ok(Outcome {
        artifacts: vec![table_artifact("velocity", &sweeps::velocity_table(&table), cfg.format)?],
        path: Some(path),
        summary: json!({"rows": table.rows.len()}),
        missing: table.missing,
    })
}

fn run_validate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let path = cfg.resolve_path(PathKind::Circle, 150.0)?;
    cfg.integrator.validate(path.total_time).map_err(|e| CliError::Schema(e.to_string()))?;
    let psi0 = cfg.validate.initial.vector(&path)?;
    let mut per_direction = Vec::new();
    let mut pass = true;
    for dir in [Direction::Cw, Direction::Ccw] {
        let cmp = sweeps::compare_tiers(&path.with_direction(dir), &psi0, &cfg.integrator)?;
        let ok = cmp.lindblad_vs_full3 < cfg.validate.bound && cmp.eliminated_outside < cfg.validate.between_bound;
        pass &= ok;
        per_direction.push(json!({"direction": dir, "comparison": cmp, "pass": ok}));
    }
    let report = json!({
        "bound": cfg.validate.bound,
        "between_bound": cfg.validate.between_bound,
        "directions": per_direction,
        "pass": pass,
    });
    Ok(Outcome {
        artifacts: vec![json_artifact("validate.json", &report)],
        path: Some(path),
        summary: json!({"pass": pass}),
        missing: vec![],
    })
}

fn write_outputs(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut names = Vec::new();
    for a in artifacts {
        let p = dir.join(&a.name);
        fs::write(&p, &a.body).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))?;
        names.push(a.name.clone());
    }
    Ok(names)
}

/// Executes a resolved configuration and writes its artifacts plus
/// `manifest.json`.
pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let command = cfg.command.ok_or_else(|| CliError::Schema("no command given".into()))?;
    if cfg.workers == Some(0) {
        return Err(CliError::Schema("workers must be positive".into()));
    }
    if cfg.output_path.as_os_str().is_empty() {
        return Err(CliError::Schema("output_path is empty".into()));
    }
    if cfg.output_path.is_file() {
        return Err(CliError::Schema(format!("output_path {} is a file", cfg.output_path.display())));
    }
    let body = || match command {
        Command::Spectrum => run_spectrum(cfg),
        Command::Encircle => run_encircle(cfg),
        Command::Chirality => run_chirality(cfg),
        Command::Collapse => run_collapse(cfg),
        Command::VelocitySweep => run_velocity(cfg),
        Command::Validate => run_validate(cfg),
    };
    let outcome = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Io(e.to_string()))?
            .install(body)?,
        None => body()?,
    };
    let mut artifacts = outcome.artifacts;
    let mut outputs = write_outputs(&cfg.output_path, &artifacts)?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "config": cfg,
        "resolved_path": outcome.path,
        "closure": outcome.path.map(|p| p.closure),
        "log_base": LOG_BASE,
        "workers": cfg.workers.unwrap_or_else(rayon::current_num_threads),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "outputs": outputs.clone(),
        "summary": outcome.summary,
        "missing": outcome.missing,
    });
    artifacts = vec![json_artifact("manifest.json", &manifest)];
    outputs.extend(write_outputs(&cfg.output_path, &artifacts)?);
    if let Some(first) = outcome.missing.first() {
        return Err(CliError::Numerical {
            cell: Some(format!("{} ({})", first.cell, first.direction.label())),
            message: format!("{} cell(s) missing; first error: {}", outcome.missing.len(), first.error),
        });
    }
    Ok(())
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match resolve_config(&cli).and_then(|cfg| run(&cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code()
        }
    }
}
