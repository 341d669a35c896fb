//! Configuration-driven front end: parses a TOML run description, builds the
//! requested system, executes one of the `scan` / `solve` / `probe` /
//! `speeds` pipelines, and emits deterministic artifacts plus a manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::models::{
    characteristic_speeds, constant_transport, make_advection, make_bulk_viscous, make_burgers,
    make_margin_toy, make_relativistic_euler, EquationOfState,
};
use crate::solver::{
    continuous_dependence_probe, picard_solve, verify_energy_growth, SolveConfig, SolveStatus,
    SolverError,
};
use crate::spectral::{
    format_float, read_snapshot, write_field_csv, write_snapshot, TorusField, TorusGrid,
};
use crate::symbol::{scan_hyperbolicity, SamplePlan, SystemDef, ToleranceSet};

/// Exit codes: 0 ok, 2 config, 3 hyperbolicity failure, 4 continuation
/// halted, 5 internal.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_HYPERBOLICITY: i32 = 3;
pub const EXIT_HALTED: i32 = 4;
pub const EXIT_INTERNAL: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("hyperbolicity failure: {0}")]
    Hyperbolicity(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Hyperbolicity(_) => EXIT_HYPERBOLICITY,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Internal(format!("I/O failure: {e}"))
}

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// One of `scan`, `solve`, `probe`, `speeds`.
    pub command: String,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solve: Option<SolveSection>,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
    #[serde(default)]
    pub speeds: Option<SpeedsConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `advection`, `burgers`, `margin-toy`, `relativistic-euler`,
    /// `bulk-viscous`.
    pub name: String,
    #[serde(default)]
    pub speeds: Option<Vec<f64>>,
    #[serde(default)]
    pub eos: Option<EosConfig>,
    /// Constant relaxation time (bulk-viscous).
    #[serde(default)]
    pub tau: Option<f64>,
    /// Constant bulk viscosity (bulk-viscous).
    #[serde(default)]
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EosConfig {
    /// `barotropic`, `barotropic-plus-aux`, `tabulated`.
    pub kind: String,
    #[serde(default)]
    pub k: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Linear coefficient of the auxiliary variable (barotropic-plus-aux).
    #[serde(default)]
    pub c: Option<f64>,
    /// CSV path with `rho,p` rows (tabulated).
    #[serde(default)]
    pub path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_space: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub s: f64,
    pub t_request: f64,
    #[serde(default)]
    pub dt_cfl: Option<f64>,
    #[serde(default)]
    pub picard_tol: Option<f64>,
    #[serde(default)]
    pub picard_max: Option<usize>,
    #[serde(default)]
    pub t_halvings_max: Option<usize>,
    #[serde(default)]
    pub energy_stride: Option<usize>,
    #[serde(default)]
    pub margin_floor: Option<f64>,
    #[serde(default)]
    pub blowup_abs: Option<f64>,
    #[serde(default)]
    pub blowup_factor: Option<f64>,
    #[serde(default)]
    pub blowup_window_frac: Option<f64>,
    /// Write every k-th trajectory snapshot (binary); default keeps ≤ 17.
    #[serde(default)]
    pub snapshot_stride: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// `sine`, `gaussian-bump`, `constant-plus-sine`; or use `snapshot`.
    #[serde(default)]
    pub profile: Option<String>,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub wavenumber: Option<i64>,
    /// Gaussian bump width.
    #[serde(default)]
    pub width: Option<f64>,
    /// Constant offset (constant-plus-sine).
    #[serde(default)]
    pub offset: Option<f64>,
    /// Constant background state added to the profile, one entry per
    /// component; defaults to zeros.
    #[serde(default)]
    pub base: Option<Vec<f64>>,
    /// Binary snapshot path (overrides `profile`).
    #[serde(default)]
    pub snapshot: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default)]
    pub t_samples: Option<Vec<f64>>,
    /// Number of spatial sample points (models here are x-independent, but
    /// the scan contract samples x anyway).
    #[serde(default)]
    pub x_count: Option<usize>,
    /// Axis-aligned sampling box for states, and how many to draw.
    pub zeta_low: Vec<f64>,
    pub zeta_high: Vec<f64>,
    #[serde(default)]
    pub zeta_count: Option<usize>,
    #[serde(default)]
    pub directions: Option<usize>,
    #[serde(default)]
    pub max_witnesses: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedsConfig {
    /// Background state; `component` is swept from `from` to `to`.
    pub base: Vec<f64>,
    pub component: usize,
    pub from: f64,
    pub to: f64,
    pub count: usize,
    pub direction: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

fn build_eos(cfg: &EosConfig) -> Result<EquationOfState, CliError> {
    match cfg.kind.as_str() {
        "barotropic" => {
            let k = cfg.k.ok_or_else(|| cfg_err("barotropic EOS needs `k`"))?;
            let gamma = cfg.gamma.ok_or_else(|| cfg_err("barotropic EOS needs `gamma`"))?;
            Ok(EquationOfState::barotropic(k, gamma))
        }
        "barotropic-plus-aux" => {
            let k = cfg.k.ok_or_else(|| cfg_err("EOS needs `k`"))?;
            let gamma = cfg.gamma.ok_or_else(|| cfg_err("EOS needs `gamma`"))?;
            let c = cfg.c.ok_or_else(|| cfg_err("EOS needs `c`"))?;
            Ok(EquationOfState::barotropic_plus_aux(k, gamma, c))
        }
        "tabulated" => {
            let path = cfg.path.as_ref().ok_or_else(|| cfg_err("tabulated EOS needs `path`"))?;
            let text = fs::read_to_string(path)
                .map_err(|e| cfg_err(format!("cannot read EOS table {path}: {e}")))?;
            let mut pts = Vec::new();
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols.len() != 2 {
                    return Err(cfg_err(format!("EOS table row `{line}` is not `rho,p`")));
                }
                match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                    (Ok(r), Ok(p)) => pts.push((r, p)),
                    _ if pts.is_empty() => continue, // header row
                    _ => return Err(cfg_err(format!("bad EOS table row `{line}`"))),
                }
            }
            EquationOfState::tabulated(&pts).map_err(|e| cfg_err(e.to_string()))
        }
        other => Err(cfg_err(format!("unknown EOS kind `{other}`"))),
    }
}

/// Builds the system named in the config and returns it with its state
/// dimension and required spatial dimension.
pub fn build_system(model: &ModelConfig, n_space: usize) -> Result<SystemDef, CliError> {
    let sys = match model.name.as_str() {
        "advection" => {
            let speeds =
                model.speeds.as_ref().ok_or_else(|| cfg_err("advection needs `speeds`"))?;
            if speeds.is_empty() {
                return Err(cfg_err("advection needs at least one speed"));
            }
            make_advection(speeds)
        }
        "burgers" => make_burgers(),
        "margin-toy" => make_margin_toy(),
        "relativistic-euler" => {
            let eos = model.eos.as_ref().ok_or_else(|| cfg_err("euler needs `[model.eos]`"))?;
            make_relativistic_euler(build_eos(eos)?)
        }
        "bulk-viscous" => {
            let eos = model.eos.as_ref().ok_or_else(|| cfg_err("bulk-viscous needs `[model.eos]`"))?;
            let tau = model.tau.ok_or_else(|| cfg_err("bulk-viscous needs `tau`"))?;
            let zeta = model.zeta.ok_or_else(|| cfg_err("bulk-viscous needs `zeta`"))?;
            if tau <= 0.0 || zeta <= 0.0 {
                return Err(cfg_err("tau and zeta must be positive"));
            }
            make_bulk_viscous(build_eos(eos)?, constant_transport(tau), constant_transport(zeta))
        }
        other => return Err(cfg_err(format!("unknown model `{other}`"))),
    };
    if sys.n_space != n_space {
        return Err(cfg_err(format!(
            "model `{}` is defined for N = {}, but the grid has N = {}",
            model.name, sys.n_space, n_space
        )));
    }
    Ok(sys)
}

// ---------------------------------------------------------------------------
// Initial data
// ---------------------------------------------------------------------------

fn build_initial(
    init: &InitialConfig,
    grid: &TorusGrid,
    m: usize,
) -> Result<TorusField, CliError> {
    if let Some(path) = &init.snapshot {
        let mut file = fs::File::open(path)
            .map_err(|e| cfg_err(format!("cannot open snapshot {path}: {e}")))?;
        let (field, _time) =
            read_snapshot(&mut file).map_err(|e| cfg_err(format!("bad snapshot {path}: {e}")))?;
        if field.grid() != grid || field.m() != m {
            return Err(cfg_err(format!(
                "snapshot {path} does not match the configured grid/state dimension"
            )));
        }
        return Ok(field);
    }
    let profile = init.profile.as_deref().ok_or_else(|| {
        cfg_err("initial data needs either `profile` or `snapshot`")
    })?;
    let base = match &init.base {
        Some(b) if b.len() != m => {
            return Err(cfg_err(format!("`base` has {} entries, state has {m}", b.len())))
        }
        Some(b) => b.clone(),
        None => vec![0.0; m],
    };
    let amp = init.amplitude.unwrap_or(1.0);
    let k = init.wavenumber.unwrap_or(1) as f64;
    let width = init.width.unwrap_or(0.5);
    let offset = init.offset.unwrap_or(0.0);
    let shape: Box<dyn Fn(f64) -> f64> = match profile {
        "sine" => Box::new(move |x: f64| amp * (k * x).sin()),
        "constant-plus-sine" => Box::new(move |x: f64| offset + amp * (k * x).sin()),
        "gaussian-bump" => Box::new(move |x: f64| {
            // Periodized Gaussian centred at π.
            let tau = 2.0 * std::f64::consts::PI;
            (-4..=4)
                .map(|j| {
                    let d = x - std::f64::consts::PI - tau * j as f64;
                    amp * (-d * d / (2.0 * width * width)).exp()
                })
                .sum()
        }),
        other => return Err(cfg_err(format!("unknown initial profile `{other}`"))),
    };
    Ok(TorusField::from_fn(grid.clone(), m, |x| {
        (0..m).map(|c| base[c] + shape(x[0])).collect()
    }))
}

fn build_solve_config(
    section: &SolveSection,
    n_space: usize,
) -> Result<SolveConfig, CliError> {
    let mut cfg = SolveConfig::new(section.s, n_space, section.t_request)
        .map_err(|e| cfg_err(e.to_string()))?;
    if let Some(v) = section.dt_cfl {
        cfg.dt_cfl = v;
    }
    if let Some(v) = section.picard_tol {
        cfg.picard_tol = v;
    }
    if let Some(v) = section.picard_max {
        cfg.picard_max = v;
    }
    if let Some(v) = section.t_halvings_max {
        cfg.t_halvings_max = v;
    }
    if let Some(v) = section.energy_stride {
        cfg.energy_stride = v;
    }
    if let Some(v) = section.margin_floor {
        cfg.margin_floor = v;
    }
    if let Some(v) = section.blowup_abs {
        cfg.blowup_abs = v;
    }
    if let Some(v) = section.blowup_factor {
        cfg.blowup_factor = v;
    }
    if let Some(v) = section.blowup_window_frac {
        cfg.blowup_window_frac = v;
    }
    cfg.validate(n_space).map_err(|e| cfg_err(e.to_string()))?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Artifact plumbing
// ---------------------------------------------------------------------------

struct Emitter {
    out_dir: PathBuf,
    artifacts: Vec<String>,
}

impl Emitter {
    fn new(out_dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out_dir).map_err(io_err)?;
        Ok(Self { out_dir: out_dir.to_path_buf(), artifacts: Vec::new() })
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        fs::write(self.out_dir.join(name), text).map_err(io_err)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Internal(format!("serialization failure: {e}")))?;
        self.write_text(name, &text)
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    command: &'a str,
    seed: u64,
    crate_version: &'a str,
    wall_time_s: f64,
    exit_code: i32,
    config: &'a RunConfig,
    artifacts: &'a [String],
}

#[derive(Debug)]
pub struct RunSummary {
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub artifacts: Vec<String>,
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_scan(
    config: &RunConfig,
    sys: &SystemDef,
    seed: u64,
    em: &mut Emitter,
) -> Result<i32, CliError> {
    let scan = config.scan.as_ref().ok_or_else(|| cfg_err("scan command needs `[scan]`"))?;
    let m = sys.m;
    if scan.zeta_low.len() != m || scan.zeta_high.len() != m {
        return Err(cfg_err(format!("`zeta_low`/`zeta_high` must each have {m} entries")));
    }
    let grid = TorusGrid::new(config.grid.n_space, config.grid.n);
    let t_samples = scan.t_samples.clone().unwrap_or_else(|| vec![0.0]);
    let x_count = scan.x_count.unwrap_or(3).max(1);
    let x_samples: Vec<Vec<f64>> = (0..x_count)
        .map(|k| grid.point(k * grid.num_points() / x_count))
        .collect();
    let zeta_count = scan.zeta_count.unwrap_or(100);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zeta_samples = Vec::with_capacity(zeta_count);
    let mut attempts = 0usize;
    while zeta_samples.len() < zeta_count {
        attempts += 1;
        if attempts > 1000 * zeta_count.max(1) {
            return Err(cfg_err(
                "could not draw admissible states from the configured `zeta` box".to_string(),
            ));
        }
        let cand: Vec<f64> = (0..m)
            .map(|c| {
                if scan.zeta_low[c] == scan.zeta_high[c] {
                    scan.zeta_low[c]
                } else {
                    rng.gen_range(scan.zeta_low[c]..scan.zeta_high[c])
                }
            })
            .collect();
        if sys.domain.contains(&cand) {
            zeta_samples.push(cand);
        }
    }
    let directions = scan.directions.unwrap_or(16);
    let plan = SamplePlan {
        schema_version: 1,
        t_samples,
        x_samples,
        zeta_samples,
        xi_samples: SamplePlan::unit_directions(config.grid.n_space, directions, seed ^ 0x5eed),
        max_witnesses: scan.max_witnesses.unwrap_or(16),
        seed,
    };
    let report = scan_hyperbolicity(sys, &plan, &ToleranceSet::default())
        .map_err(|e| CliError::Hyperbolicity(e.to_string()))?;
    em.write_json("scan_report.json", &report)?;
    Ok(if report.pass { EXIT_OK } else { EXIT_HYPERBOLICITY })
}

fn map_solver_error(e: SolverError) -> CliError {
    match e {
        SolverError::InvalidConfig(msg) => CliError::Config(msg),
        other => CliError::Internal(other.to_string()),
    }
}

fn cmd_solve(
    config: &RunConfig,
    sys: &SystemDef,
    em: &mut Emitter,
) -> Result<i32, CliError> {
    let section =
        config.solve.as_ref().ok_or_else(|| cfg_err("solve command needs `[solve]`"))?;
    let init =
        config.initial.as_ref().ok_or_else(|| cfg_err("solve command needs `[initial]`"))?;
    let grid = TorusGrid::new(config.grid.n_space, config.grid.n);
    let u0 = build_initial(init, &grid, sys.m)?;
    let cfg = build_solve_config(section, config.grid.n_space)?;
    let outcome = picard_solve(sys, &u0, &cfg).map_err(map_solver_error)?;

    // Energies CSV.
    let mut csv = String::from("t,energy_Ns,sobolev_s,margin,bnorm_proxy\n");
    for e in &outcome.energies {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            format_float(e.t),
            format_float(e.energy_ns),
            format_float(e.sobolev_s),
            format_float(e.margin),
            format_float(e.bnorm)
        ));
    }
    em.write_text("energies.csv", &csv)?;

    // Iterate history (JSON shape) and solve status.
    em.write_json("history.json", &outcome.history)?;
    #[derive(Serialize)]
    struct StatusOut<'a> {
        status: &'a SolveStatus,
        t_actual: f64,
    }
    em.write_json("status.json", &StatusOut { status: &outcome.status, t_actual: outcome.t_actual })?;

    // Envelope fit, when enough samples were recorded.
    if outcome.energies.len() >= 3 {
        let report = verify_energy_growth(&outcome).map_err(map_solver_error)?;
        em.write_json("envelope.json", &report)?;
    }

    // Trajectory snapshots at a stride, binary format.
    let len = outcome.trajectory.len();
    let stride = section.snapshot_stride.unwrap_or_else(|| (len / 16).max(1));
    for (k, (&t, state)) in outcome
        .trajectory
        .times()
        .iter()
        .zip(outcome.trajectory.states())
        .enumerate()
    {
        if k % stride != 0 && k != len - 1 {
            continue;
        }
        let name = format!("snapshot_{k:06}.bin");
        let mut file = fs::File::create(em.out_dir.join(&name)).map_err(io_err)?;
        write_snapshot(state, t, &mut file)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        file.flush().map_err(io_err)?;
        em.artifacts.push(name);
    }

    // Final state as plot-ready CSV.
    let mut buf = Vec::new();
    write_field_csv(outcome.trajectory.final_state(), &mut buf)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    em.write_text(
        "final_state.csv",
        std::str::from_utf8(&buf).map_err(|e| CliError::Internal(e.to_string()))?,
    )?;

    Ok(match outcome.status {
        SolveStatus::Converged => EXIT_OK,
        SolveStatus::Halted(_) => EXIT_HALTED,
    })
}

fn cmd_probe(
    config: &RunConfig,
    sys: &SystemDef,
    em: &mut Emitter,
) -> Result<i32, CliError> {
    let probe =
        config.probe.as_ref().ok_or_else(|| cfg_err("probe command needs `[probe]`"))?;
    let section =
        config.solve.as_ref().ok_or_else(|| cfg_err("probe command needs `[solve]`"))?;
    let init =
        config.initial.as_ref().ok_or_else(|| cfg_err("probe command needs `[initial]`"))?;
    let grid = TorusGrid::new(config.grid.n_space, config.grid.n);
    let u0 = build_initial(init, &grid, sys.m)?;
    let cfg = build_solve_config(section, config.grid.n_space)?;
    let table =
        continuous_dependence_probe(sys, &u0, &probe.deltas, &cfg).map_err(map_solver_error)?;
    let mut csv = String::from("delta,diff\n");
    for row in &table.rows {
        csv.push_str(&format!("{},{}\n", format_float(row.delta), format_float(row.diff)));
    }
    em.write_text("probe.csv", &csv)?;
    em.write_json("probe.json", &table)?;
    Ok(EXIT_OK)
}

fn cmd_speeds(
    config: &RunConfig,
    sys: &SystemDef,
    em: &mut Emitter,
) -> Result<i32, CliError> {
    let sp = config.speeds.as_ref().ok_or_else(|| cfg_err("speeds command needs `[speeds]`"))?;
    if sp.base.len() != sys.m {
        return Err(cfg_err(format!("`base` has {} entries, state has {}", sp.base.len(), sys.m)));
    }
    if sp.component >= sys.m {
        return Err(cfg_err("`component` out of range"));
    }
    if sp.direction.len() != sys.n_space {
        return Err(cfg_err(format!("`direction` must have {} entries", sys.n_space)));
    }
    if sp.count < 2 {
        return Err(cfg_err("`count` must be at least 2"));
    }
    let norm = sp.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(cfg_err("`direction` must be nonzero"));
    }
    let dir: Vec<f64> = sp.direction.iter().map(|v| v / norm).collect();
    let x0 = vec![0.0; sys.n_space];
    let tols = ToleranceSet::default();
    let mut csv = String::from("value");
    for i in 0..sys.m {
        csv.push_str(&format!(",lambda_{i}"));
    }
    csv.push('\n');
    for k in 0..sp.count {
        let value = sp.from + (sp.to - sp.from) * k as f64 / (sp.count - 1) as f64;
        let mut state = sp.base.clone();
        state[sp.component] = value;
        let speeds = characteristic_speeds(sys, 0.0, &x0, &state, &dir, &tols)
            .map_err(|e| CliError::Hyperbolicity(e.to_string()))?;
        csv.push_str(&format_float(value));
        for s in speeds {
            csv.push(',');
            csv.push_str(&format_float(s));
        }
        csv.push('\n');
    }
    em.write_text("speeds.csv", &csv)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| cfg_err(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| cfg_err(format!("config parse error: {e}")))
}

fn validate_grid(grid: &GridConfig) -> Result<(), CliError> {
    if grid.n_space == 0 {
        return Err(cfg_err("grid `n_space` must be positive"));
    }
    if grid.n < 4 || !grid.n.is_power_of_two() {
        return Err(cfg_err("grid `n` must be a power of two, at least 4"));
    }
    Ok(())
}

/// Executes the configured pipeline and writes all artifacts plus a
/// `manifest.json` referencing them. `out_override` / `seed_override`
/// correspond to the `--out` / `--seed` flags.
pub fn run(
    config: &RunConfig,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<RunSummary, CliError> {
    let started = Instant::now();
    validate_grid(&config.grid)?;
    let seed = seed_override.or(config.seed).unwrap_or(0);
    let out_dir: PathBuf = match out_override {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(
            config.out_dir.as_deref().ok_or_else(|| cfg_err("no output directory: set `out_dir` or pass --out"))?,
        ),
    };
    let sys = build_system(&config.model, config.grid.n_space)?;
    let mut em = Emitter::new(&out_dir)?;
    let exit_code = match config.command.as_str() {
        "scan" => cmd_scan(config, &sys, seed, &mut em)?,
        "solve" => cmd_solve(config, &sys, &mut em)?,
        "probe" => cmd_probe(config, &sys, &mut em)?,
        "speeds" => cmd_speeds(config, &sys, &mut em)?,
        other => return Err(cfg_err(format!("unknown command `{other}`"))),
    };
    em.artifacts.sort();
    let manifest = Manifest {
        schema_version: 1,
        command: &config.command,
        seed,
        crate_version: env!("CARGO_PKG_VERSION"),
        wall_time_s: started.elapsed().as_secs_f64(),
        exit_code,
        config,
        artifacts: &em.artifacts,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Internal(format!("manifest serialization: {e}")))?;
    fs::write(out_dir.join("manifest.json"), text).map_err(io_err)?;
    let mut artifacts = em.artifacts;
    artifacts.push("manifest.json".to_string());
    Ok(RunSummary { exit_code, out_dir, artifacts })
}

/// Convenience wrapper for the binary: load, run, map errors to exit codes.
pub fn load_and_run(
    config_path: &Path,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> i32 {
    match load_config(config_path).and_then(|cfg| run(&cfg, out_override, seed_override)) {
        Ok(summary) => summary.exit_code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
