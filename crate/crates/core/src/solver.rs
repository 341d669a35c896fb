//! Constructive existence scheme for the quasilinear Cauchy problem:
//! frozen-coefficient linear evolution, Picard iteration with adaptive
//! interval halving, energy monitoring, the continuation trichotomy, and
//! continuous-dependence probes.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::spectral::{
    energy_functional, sobolev_norm, spectral_derivative, SpectralError, TorusField,
};
use crate::symbol::{EvalError, SystemDef, ToleranceSet};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solve configuration: {0}")]
    InvalidConfig(String),
    #[error("state outside admissible region at t = {t}")]
    StateOutsideDomain { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("trajectories live on different grids")]
    GridMismatch,
    #[error("coefficient evaluation failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
    #[error("Picard iteration stalled at t = {t} after {halvings} interval halvings")]
    NoConvergence { t: f64, halvings: usize },
    #[error("need at least 3 energy samples")]
    InsufficientSamples,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Parameters of a quasilinear solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveConfig {
    /// Sobolev index of the energy norm; must exceed `N/2 + 1`.
    pub s: f64,
    /// Requested evolution time.
    pub t_request: f64,
    /// CFL safety factor: `dt = dt_cfl · spacing / λ_max`.
    pub dt_cfl: f64,
    /// Picard stopping threshold on `‖u_n − u_{n−1}‖_{C(I;H⁰)}`.
    pub picard_tol: f64,
    /// Iteration cap per window attempt.
    pub picard_max: usize,
    /// Cap on consecutive interval halvings before giving up.
    pub t_halvings_max: usize,
    /// Snapshot stride between energy/monitor evaluations.
    pub energy_stride: usize,
    /// Minimal admissible-region margin before declaring proximity to `Uᶜ`.
    pub margin_floor: f64,
    /// Absolute blow-up sentinel on the `𝔹`-norm proxy.
    pub blowup_abs: f64,
    /// Relative blow-up sentinel: growth by this factor …
    pub blowup_factor: f64,
    /// … within this fraction of the requested horizon.
    pub blowup_window_frac: f64,
}

impl SolveConfig {
    /// Validates `s > N/2 + 1` at construction and fills in defaults for the
    /// remaining knobs.
    pub fn new(s: f64, n_space: usize, t_request: f64) -> Result<Self, SolverError> {
        let cfg = Self {
            s,
            t_request,
            dt_cfl: 0.4,
            picard_tol: 1e-8,
            picard_max: 30,
            t_halvings_max: 12,
            energy_stride: 1,
            margin_floor: 1e-3,
            blowup_abs: 1e6,
            blowup_factor: 10.0,
            blowup_window_frac: 0.01,
        };
        cfg.validate(n_space)?;
        Ok(cfg)
    }

    pub fn validate(&self, n_space: usize) -> Result<(), SolverError> {
        let s_min = n_space as f64 / 2.0 + 1.0;
        if !(self.s > s_min) {
            return Err(SolverError::InvalidConfig(format!(
                "Sobolev index s = {} must exceed N/2 + 1 = {}",
                self.s, s_min
            )));
        }
        if !(self.t_request > 0.0) {
            return Err(SolverError::InvalidConfig("t_request must be positive".into()));
        }
        for (name, v) in [
            ("dt_cfl", self.dt_cfl),
            ("picard_tol", self.picard_tol),
            ("margin_floor", self.margin_floor),
            ("blowup_abs", self.blowup_abs),
            ("blowup_factor", self.blowup_factor),
            ("blowup_window_frac", self.blowup_window_frac),
        ] {
            if !(v > 0.0) {
                return Err(SolverError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.picard_max == 0 || self.energy_stride == 0 {
            return Err(SolverError::InvalidConfig(
                "picard_max and energy_stride must be nonzero".into(),
            ));
        }
        Ok(())
    }
}

/// Time-indexed field snapshots with linear interpolation between them.
/// Times are strictly monotone (increasing or decreasing).
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<TorusField>,
}

impl Trajectory {
    pub fn new(t0: f64, u0: TorusField) -> Self {
        Self { times: vec![t0], states: vec![u0] }
    }

    /// Constant-in-time trajectory on `[t0, t1]` (the Picard seed).
    pub fn constant(t0: f64, t1: f64, u: TorusField) -> Self {
        let mut tr = Self::new(t0, u.clone());
        if t1 != t0 {
            tr.push(t1, u);
        }
        tr
    }

    pub fn push(&mut self, t: f64, u: TorusField) {
        let last = *self.times.last().unwrap();
        if self.times.len() >= 2 {
            let dir = (self.times[1] - self.times[0]).signum();
            assert!((t - last) * dir > 0.0, "trajectory times must stay monotone");
        } else {
            assert!(t != last, "duplicate trajectory time");
        }
        self.times.push(t);
        self.states.push(u);
    }

    /// Appends another trajectory that starts where this one ends.
    pub fn append(&mut self, other: &Trajectory) {
        let mut iter = other.times.iter().zip(&other.states);
        if let Some((&t0, _)) = iter.clone().next() {
            if (t0 - *self.times.last().unwrap()).abs() < 1e-14 {
                iter.next();
            }
        }
        for (&t, u) in iter {
            self.push(t, u.clone());
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[TorusField] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn first_time(&self) -> f64 {
        self.times[0]
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &TorusField {
        self.states.last().unwrap()
    }

    /// Linear interpolation in time, clamped to the stored range.
    pub fn sample(&self, t: f64) -> TorusField {
        if self.times.len() == 1 {
            return self.states[0].clone();
        }
        let increasing = self.times[1] > self.times[0];
        let key = if increasing { t } else { -t };
        let keys: Vec<f64> = if increasing {
            self.times.clone()
        } else {
            self.times.iter().map(|v| -v).collect()
        };
        let idx = match keys.binary_search_by(|v| v.partial_cmp(&key).unwrap()) {
            Ok(i) => return self.states[i].clone(),
            Err(0) => return self.states[0].clone(),
            Err(i) if i >= keys.len() => return self.states.last().unwrap().clone(),
            Err(i) => i,
        };
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        TorusField::linear_combination(1.0 - w, &self.states[idx - 1], w, &self.states[idx])
    }
}

/// Right-hand side of the frozen-coefficient linear system:
/// `−Aⁱ(t,x,v(x))·(∂_i u)(x) + R(t,x,v(x))`, with spectral derivatives and
/// dealiasing applied after the pointwise products.
pub fn linear_rhs(
    sys: &SystemDef,
    v: &TorusField,
    u: &TorusField,
    t: f64,
) -> Result<TorusField, SolverError> {
    if v.grid() != u.grid() {
        return Err(SolverError::GridMismatch);
    }
    let grid = u.grid();
    let m = sys.m;
    let pts = grid.num_points();
    let derivs: Vec<TorusField> =
        (0..sys.n_space).map(|i| spectral_derivative(u, i)).collect();
    let mut out = vec![0.0; m * pts];
    for j in 0..pts {
        let x = grid.point(j);
        let state = v.state_at(j);
        if !sys.domain.contains(&state) {
            return Err(SolverError::StateOutsideDomain { t });
        }
        let mut acc =
            sys.source(t, &x, &state).map_err(|e| SolverError::Eval { t, source: e })?;
        for (i, du) in derivs.iter().enumerate() {
            let a = sys.coeff(t, &x, &state, i).map_err(|e| SolverError::Eval { t, source: e })?;
            let du_j = DVector::from_iterator(m, (0..m).map(|c| du.value(c, j)));
            acc -= a * du_j;
        }
        for c in 0..m {
            out[c * pts + j] = acc[c];
        }
    }
    let field = TorusField::from_values(grid.clone(), m, out);
    Ok(field.dealias())
}

/// Largest coefficient-matrix norm over the sampled states — an upper bound
/// on the characteristic speeds used for the CFL step size.
fn lambda_max_bound(sys: &SystemDef, v: &TorusField, t: f64) -> Result<f64, SolverError> {
    let grid = v.grid();
    let mut lam: f64 = 0.0;
    for j in 0..grid.num_points() {
        let x = grid.point(j);
        let state = v.state_at(j);
        if !sys.domain.contains(&state) {
            return Err(SolverError::StateOutsideDomain { t });
        }
        for i in 0..sys.n_space {
            let a = sys.coeff(t, &x, &state, i).map_err(|e| SolverError::Eval { t, source: e })?;
            // Row-sum (∞) norm bounds the spectral radius.
            for r in 0..sys.m {
                lam = lam.max(a.row(r).iter().map(|v| v.abs()).sum());
            }
        }
    }
    Ok(lam)
}

fn rk4_evolve(
    sys: &SystemDef,
    v_traj: &Trajectory,
    u0: &TorusField,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Trajectory, SolverError> {
    let n_steps = ((t1 - t0) / dt).round() as usize;
    let mut traj = Trajectory::new(t0, u0.clone());
    let mut u = u0.clone();
    for k in 0..n_steps {
        let t = t0 + dt * k as f64;
        let half = 0.5 * dt;
        let v1 = v_traj.sample(t);
        let v2 = v_traj.sample(t + half);
        let v3 = v_traj.sample(t + dt);
        let k1 = linear_rhs(sys, &v1, &u, t)?;
        let u2 = TorusField::linear_combination(1.0, &u, half, &k1);
        let k2 = linear_rhs(sys, &v2, &u2, t + half)?;
        let u3 = TorusField::linear_combination(1.0, &u, half, &k2);
        let k3 = linear_rhs(sys, &v2, &u3, t + half)?;
        let u4 = TorusField::linear_combination(1.0, &u, dt, &k3);
        let k4 = linear_rhs(sys, &v3, &u4, t + dt)?;
        let mut sum = TorusField::linear_combination(1.0, &k1, 2.0, &k2);
        sum = TorusField::linear_combination(1.0, &sum, 2.0, &k3);
        sum = TorusField::linear_combination(1.0, &sum, 1.0, &k4);
        u = TorusField::linear_combination(1.0, &u, dt / 6.0, &sum);
        if !u.is_finite() {
            return Err(SolverError::NonFinite { t: t + dt });
        }
        traj.push(t + dt * 1.0, u.clone());
    }
    Ok(traj)
}

/// Uniform step size that divides `|t1 − t0|` exactly and respects the CFL
/// bound `dt ≤ dt_cfl · spacing / λ_max`.
fn cfl_step(len: f64, spacing: f64, lam: f64, dt_cfl: f64) -> (f64, usize) {
    let dt_raw = if lam > 0.0 { (dt_cfl * spacing / lam).min(len) } else { len };
    let n_steps = (len / dt_raw).ceil().max(1.0) as usize;
    (len / n_steps as f64, n_steps)
}

/// Evolves the frozen-coefficient linear system `∂_t u = −Aⁱ(v)∂_i u + R(v)`
/// from `u0` at `t0` to `t1` (either direction) with classic RK4 under a CFL
/// step bound sampled along `v_traj`. Every accepted step is stored.
pub fn evolve_linear(
    sys: &SystemDef,
    v_traj: &Trajectory,
    u0: &TorusField,
    t0: f64,
    t1: f64,
    cfg: &SolveConfig,
) -> Result<Trajectory, SolverError> {
    cfg.validate(sys.n_space)?;
    if t1 == t0 {
        return Ok(Trajectory::new(t0, u0.clone()));
    }
    // Sample λ_max at the ends and midpoint of the frozen trajectory.
    let mut lam: f64 = 0.0;
    for t in [t0, 0.5 * (t0 + t1), t1] {
        lam = lam.max(lambda_max_bound(sys, &v_traj.sample(t), t)?);
    }
    let len = (t1 - t0).abs();
    let (dt_abs, _) = cfl_step(len, u0.grid().spacing(), lam, cfg.dt_cfl);
    let dt = dt_abs * (t1 - t0).signum();
    rk4_evolve(sys, v_traj, u0, t0, t1, dt)
}

/// `C(I;H⁰)` distance of two trajectories: the max over the union of their
/// snapshot times (restricted to the overlap) of the H⁰ norm of the
/// difference, interpolating where times are not shared.
pub fn difference_norm(a: &Trajectory, b: &Trajectory) -> Result<f64, SolverError> {
    let (ga, gb) = (a.states[0].grid(), b.states[0].grid());
    if ga != gb || a.states[0].m() != b.states[0].m() {
        return Err(SolverError::GridMismatch);
    }
    let (a_min, a_max) = range(&a.times);
    let (b_min, b_max) = range(&b.times);
    let (lo, hi) = (a_min.max(b_min), a_max.min(b_max));
    let mut worst = 0.0f64;
    for &t in a.times.iter().chain(&b.times) {
        if t < lo - 1e-14 || t > hi + 1e-14 {
            continue;
        }
        let ua = a.sample(t);
        let ub = b.sample(t);
        let d = TorusField::linear_combination(1.0, &ua, -1.0, &ub);
        worst = worst.max(d.l2_norm());
    }
    Ok(worst)
}

fn range(times: &[f64]) -> (f64, f64) {
    let lo = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ContinuationKind {
    ReachedHorizon,
    MarginVanishing,
    NormBlowup,
}

/// Verdict of the continuation monitor with its evidence point: the time and
/// the offending quantity (min margin or the `𝔹`-proxy value).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ContinuationStatus {
    pub kind: ContinuationKind,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub enum SolveStatus {
    Converged,
    Halted(ContinuationStatus),
}

/// One monitored point along a solve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MonitorSample {
    pub t: f64,
    /// Min over grid points of the admissible-region margin.
    pub margin: f64,
    /// `𝔹`-norm proxy: `max|u| + max|∇u| + max|∂_t u|` over the grid, with
    /// `∂_t u` evaluated from the right-hand side rather than differenced.
    pub bnorm: f64,
}

/// Evaluates margin and `𝔹`-proxy for a state (with `∂_t u` from the RHS).
pub fn monitor_sample(
    sys: &SystemDef,
    u: &TorusField,
    t: f64,
) -> Result<MonitorSample, SolverError> {
    let grid = u.grid();
    let mut margin = f64::INFINITY;
    for j in 0..grid.num_points() {
        margin = margin.min(sys.domain.margin(&u.state_at(j)));
    }
    let mut bnorm = u.max_abs();
    let mut grad: f64 = 0.0;
    for i in 0..sys.n_space {
        grad = grad.max(spectral_derivative(u, i).max_abs());
    }
    bnorm += grad;
    // ∂_t u from the equation itself; outside Ū the proxy is already moot,
    // so a domain failure just drops the term.
    if let Ok(rhs) = linear_rhs(sys, u, u, t) {
        bnorm += rhs.max_abs();
    }
    Ok(MonitorSample { t, margin, bnorm })
}

/// Classifies a recorded monitor series against the continuation
/// trichotomy: margin below the floor wins over blow-up detection, which
/// wins over reaching the horizon. The margin crossing time is interpolated
/// linearly between the bracketing samples.
pub fn monitor_continuation(
    samples: &[MonitorSample],
    cfg: &SolveConfig,
    horizon: f64,
) -> ContinuationStatus {
    for (k, cur) in samples.iter().enumerate() {
        if cur.margin < cfg.margin_floor {
            let t = if k > 0 && samples[k - 1].margin > cfg.margin_floor {
                let prev = samples[k - 1];
                let frac = (prev.margin - cfg.margin_floor) / (prev.margin - cur.margin);
                prev.t + frac * (cur.t - prev.t)
            } else {
                cur.t
            };
            return ContinuationStatus { kind: ContinuationKind::MarginVanishing, t, value: cur.margin };
        }
        if cur.bnorm > cfg.blowup_abs {
            return ContinuationStatus { kind: ContinuationKind::NormBlowup, t: cur.t, value: cur.bnorm };
        }
        let lookback = cfg.blowup_window_frac * horizon;
        for earlier in samples[..k].iter().rev() {
            if cur.t - earlier.t > lookback {
                break;
            }
            if earlier.bnorm > 0.0 && cur.bnorm > cfg.blowup_factor * earlier.bnorm {
                return ContinuationStatus {
                    kind: ContinuationKind::NormBlowup,
                    t: cur.t,
                    value: cur.bnorm,
                };
            }
        }
    }
    let last = samples.last().copied().unwrap_or(MonitorSample { t: 0.0, margin: f64::INFINITY, bnorm: 0.0 });
    ContinuationStatus { kind: ContinuationKind::ReachedHorizon, t: last.t, value: last.margin }
}

/// Per-iterate record of the Picard loop.
#[derive(Debug, Clone, Serialize)]
pub struct IterateRecord {
    /// Window start time and length this iterate belongs to.
    pub window_start: f64,
    pub window_len: f64,
    /// Iterate number within the window attempt, starting at 1.
    pub n: usize,
    /// `sup_t ‖u_n(t)‖_s` over the window snapshots.
    pub sup_hs: f64,
    /// `sup_t ‖∂_t u_n(t)‖_{s−1}` surrogate (difference quotients).
    pub sup_dt_hs1: f64,
    /// `‖u_n − u_{n−1}‖_{C(I;H⁰)}`.
    pub diff_prev: f64,
    /// Min admissible-region margin over the window.
    pub min_margin: f64,
}

/// One energy record along the accepted trajectory.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergySample {
    pub t: f64,
    /// `(N_s u, u)` with the symmetrized quantization.
    pub energy_ns: f64,
    pub sobolev_s: f64,
    pub margin: f64,
    pub bnorm: f64,
}

#[derive(Debug)]
pub struct SolveOutcome {
    pub trajectory: Trajectory,
    pub energies: Vec<EnergySample>,
    pub history: Vec<IterateRecord>,
    pub status: SolveStatus,
    pub t_actual: f64,
}

fn window_stats(
    traj: &Trajectory,
    sys: &SystemDef,
    s: f64,
) -> (f64, f64, f64) {
    let mut sup_hs: f64 = 0.0;
    let mut sup_dt: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    for (k, u) in traj.states.iter().enumerate() {
        sup_hs = sup_hs.max(sobolev_norm(u, s));
        let grid = u.grid();
        for j in 0..grid.num_points() {
            min_margin = min_margin.min(sys.domain.margin(&u.state_at(j)));
        }
        if k + 1 < traj.states.len() {
            let dt = traj.times[k + 1] - traj.times[k];
            let quot = TorusField::linear_combination(
                1.0 / dt,
                &traj.states[k + 1],
                -1.0 / dt,
                &traj.states[k],
            );
            sup_dt = sup_dt.max(sobolev_norm(&quot, s - 1.0));
        }
    }
    (sup_hs, sup_dt, min_margin)
}

enum WindowResult {
    Converged(Trajectory),
    Diverged,
}

/// One Picard window attempt on `[t0, t0 + len]` with a fixed step size
/// derived from the start state, so all iterates share snapshot times.
fn attempt_window(
    sys: &SystemDef,
    u_start: &TorusField,
    t0: f64,
    len: f64,
    cfg: &SolveConfig,
    history: &mut Vec<IterateRecord>,
) -> Result<WindowResult, SolverError> {
    let t1 = t0 + len;
    let lam = lambda_max_bound(sys, u_start, t0)?;
    let (dt, _) = cfl_step(len, u_start.grid().spacing(), lam, cfg.dt_cfl);
    let mut v = Trajectory::constant(t0, t1, u_start.clone());
    let mut prev_diff = f64::INFINITY;
    let mut grow_count = 0usize;
    for n in 1..=cfg.picard_max {
        let traj = match rk4_evolve(sys, &v, u_start, t0, t1, dt) {
            Ok(t) => t,
            Err(SolverError::StateOutsideDomain { .. })
            | Err(SolverError::NonFinite { .. })
            | Err(SolverError::Eval { .. }) => return Ok(WindowResult::Diverged),
            Err(e) => return Err(e),
        };
        let diff = difference_norm(&traj, &v)?;
        let (sup_hs, sup_dt, min_margin) = window_stats(&traj, sys, cfg.s);
        history.push(IterateRecord {
            window_start: t0,
            window_len: len,
            n,
            sup_hs,
            sup_dt_hs1: sup_dt,
            diff_prev: diff,
            min_margin,
        });
        if !diff.is_finite() {
            return Ok(WindowResult::Diverged);
        }
        if diff <= cfg.picard_tol {
            return Ok(WindowResult::Converged(traj));
        }
        if diff > prev_diff {
            grow_count += 1;
            if grow_count >= 3 {
                return Ok(WindowResult::Diverged);
            }
        } else {
            grow_count = 0;
        }
        prev_diff = diff;
        v = traj;
    }
    Ok(WindowResult::Diverged)
}

/// Solves the quasilinear Cauchy problem by Picard iteration on
/// frozen-coefficient linear systems, marching windows across `[0, T]`.
///
/// Each window seeds the iteration with the constant-in-time iterate
/// `u⁰(t) ≡ u(t_w)`, iterates `u_n = L(u_{n−1})`, and accepts on
/// `‖u_n − u_{n−1}‖_{C(I;H⁰)} ≤ picard_tol`. Divergence (difference growing
/// three times in a row, iterates leaving `Ū`, or hitting the iteration cap)
/// halves the window; after a success the window doubles again. The
/// continuation monitor classifies halts as margin-vanishing or norm
/// blow-up; exhausting the halving budget with a grown `𝔹`-proxy is
/// classified as blow-up, otherwise it is a hard `NoConvergence` error.
pub fn picard_solve(
    sys: &SystemDef,
    u0: &TorusField,
    cfg: &SolveConfig,
) -> Result<SolveOutcome, SolverError> {
    cfg.validate(sys.n_space)?;
    let grid = u0.grid().clone();
    for j in 0..grid.num_points() {
        if !sys.domain.contains(&u0.state_at(j)) {
            return Err(SolverError::StateOutsideDomain { t: 0.0 });
        }
    }
    let first = monitor_sample(sys, u0, 0.0)?;
    if first.margin <= cfg.margin_floor {
        return Err(SolverError::StateOutsideDomain { t: 0.0 });
    }

    let mut full = Trajectory::new(0.0, u0.clone());
    let mut monitored: Vec<(usize, MonitorSample)> = vec![(0, first)];
    let mut history = Vec::new();
    let mut t_cur = 0.0;
    let mut u_cur = u0.clone();
    let mut t_w = cfg.t_request;
    let mut halvings = 0usize;
    let initial_bnorm = first.bnorm;
    let eps_t = 1e-12 * cfg.t_request;

    let status = loop {
        if t_cur >= cfg.t_request - eps_t {
            break SolveStatus::Converged;
        }
        let window = t_w.min(cfg.t_request - t_cur);
        match attempt_window(sys, &u_cur, t_cur, window, cfg, &mut history)? {
            WindowResult::Converged(traj) => {
                let offset = full.len();
                full.append(&traj);
                // Monitor every accepted step; the stride only thins the
                // (more expensive) energy records afterwards.
                let added = full.len() - offset;
                for k in 0..added {
                    let idx = offset + k;
                    let sample = monitor_sample(sys, &full.states[idx], full.times[idx])?;
                    monitored.push((idx, sample));
                }
                let flat: Vec<MonitorSample> = monitored.iter().map(|(_, s)| *s).collect();
                let verdict = monitor_continuation(&flat, cfg, cfg.t_request);
                if verdict.kind != ContinuationKind::ReachedHorizon {
                    break SolveStatus::Halted(verdict);
                }
                t_cur = traj.final_time();
                u_cur = traj.final_state().clone();
                t_w = (2.0 * t_w).min(cfg.t_request);
                halvings = 0;
            }
            WindowResult::Diverged => {
                halvings += 1;
                if halvings > cfg.t_halvings_max {
                    let b_now = monitored.last().map(|(_, s)| s.bnorm).unwrap_or(0.0);
                    if b_now >= 5.0 * initial_bnorm.max(f64::MIN_POSITIVE) {
                        break SolveStatus::Halted(ContinuationStatus {
                            kind: ContinuationKind::NormBlowup,
                            t: t_cur,
                            value: b_now,
                        });
                    }
                    return Err(SolverError::NoConvergence { t: t_cur, halvings: halvings - 1 });
                }
                t_w *= 0.5;
            }
        }
    };

    let tols = ToleranceSet::default();
    let mut energies = Vec::with_capacity(monitored.len());
    let last_idx = monitored.len().saturating_sub(1);
    for (k, (idx, sample)) in monitored.iter().enumerate() {
        if k % cfg.energy_stride != 0 && k != last_idx {
            continue;
        }
        let u = &full.states[*idx];
        let t = full.times[*idx];
        let e = energy_functional(u, u, sys, cfg.s, t, &tols)?;
        energies.push(EnergySample {
            t,
            energy_ns: e,
            sobolev_s: sobolev_norm(u, cfg.s),
            margin: sample.margin,
            bnorm: sample.bnorm,
        });
    }
    let t_actual = match &status {
        SolveStatus::Converged => full.final_time(),
        SolveStatus::Halted(c) => c.t,
    };
    Ok(SolveOutcome { trajectory: full, energies, history, status, t_actual })
}

/// Result of the exponential-envelope fit `E(t) ≤ a·e^{bτ}(E(0) + bτ)`,
/// `τ = t − t₀`: the smallest growth rate `b ≥ 0` that admits the envelope
/// and the resulting prefactor `a`, with the largest relative slack
/// `(envelope − E)/envelope` observed. An empirical fit, not a derived
/// constant.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyReport {
    pub a: f64,
    pub b: f64,
    pub max_slack: f64,
}

pub fn verify_energy_growth(outcome: &SolveOutcome) -> Result<EnergyReport, SolverError> {
    let samples = &outcome.energies;
    if samples.len() < 3 {
        return Err(SolverError::InsufficientSamples);
    }
    let t0 = samples[0].t;
    let e0 = samples[0].energy_ns;
    let series: Vec<(f64, f64)> = samples.iter().map(|s| (s.t - t0, s.energy_ns)).collect();
    if series.iter().all(|&(_, e)| e.abs() < f64::MIN_POSITIVE) {
        return Ok(EnergyReport { a: 1.0, b: 0.0, max_slack: 0.0 });
    }
    let sup_ratio = |b: f64| -> f64 {
        series
            .iter()
            .map(|&(tau, e)| e / ((b * tau).exp() * (e0 + b * tau)))
            .fold(0.0f64, f64::max)
    };
    let mut b = 0.0;
    if sup_ratio(0.0) > 1.0 {
        let mut hi = 1e-6;
        while sup_ratio(hi) > 1.0 && hi < 1e9 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sup_ratio(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        b = hi;
    }
    let a = sup_ratio(b).max(f64::MIN_POSITIVE);
    let max_slack = series
        .iter()
        .map(|&(tau, e)| {
            let env = a * (b * tau).exp() * (e0 + b * tau);
            (env - e) / env
        })
        .fold(0.0f64, f64::max);
    Ok(EnergyReport { a, b, max_slack })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbeRow {
    pub delta: f64,
    /// `‖u_δ − u‖_{C(I;H⁰)}` over the common time range.
    pub diff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeTable {
    pub rows: Vec<ProbeRow>,
    /// Empirical order from a log–log least-squares fit over positive rows.
    pub order_p: f64,
}

/// Fixed smooth perturbation profile with unit H^s norm: one sine per
/// component with staggered phases.
pub fn unit_profile(grid: &crate::spectral::TorusGrid, m: usize, s: f64) -> TorusField {
    let raw = TorusField::from_fn(grid.clone(), m, |x| {
        (0..m)
            .map(|c| (x[0] + std::f64::consts::PI * c as f64 / (2 * m) as f64).sin())
            .collect()
    });
    let norm = sobolev_norm(&raw, s);
    let vals: Vec<f64> = raw.values().iter().map(|v| v / norm).collect();
    TorusField::from_values(grid.clone(), m, vals)
}

/// Perturbs the datum by `δ·w` for each `δ`, re-solves, and records the
/// `C(I;H⁰)` distance to the base solution, plus the empirical order of
/// continuous dependence from a log–log fit.
pub fn continuous_dependence_probe(
    sys: &SystemDef,
    u0: &TorusField,
    deltas: &[f64],
    cfg: &SolveConfig,
) -> Result<ProbeTable, SolverError> {
    let base = picard_solve(sys, u0, cfg)?;
    let w = unit_profile(u0.grid(), u0.m(), cfg.s);
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let u0d = TorusField::linear_combination(1.0, u0, delta, &w);
        let pert = picard_solve(sys, &u0d, cfg)?;
        let diff = difference_norm(&base.trajectory, &pert.trajectory)?;
        rows.push(ProbeRow { delta, diff });
    }
    // Least squares on ln(diff) = p·ln(δ) + c.
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.delta > 0.0 && r.diff > 0.0)
        .map(|r| (r.delta.ln(), r.diff.ln()))
        .collect();
    let order_p = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    } else {
        f64::NAN
    };
    Ok(ProbeTable { rows, order_p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_advection, make_burgers, make_margin_toy};
    use crate::spectral::TorusGrid;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn sine_field(grid: &TorusGrid, m: usize) -> TorusField {
        TorusField::from_fn(grid.clone(), m, |x| (0..m).map(|c| (x[0] + c as f64).sin()).collect())
    }

    #[test]
    fn config_rejects_low_sobolev_index() {
        assert!(SolveConfig::new(1.5, 1, 1.0).is_err());
        assert!(SolveConfig::new(2.0, 1, 1.0).is_ok());
        assert!(SolveConfig::new(2.0, 3, 1.0).is_err());
        assert!(SolveConfig::new(2.6, 3, 1.0).is_ok());
    }

    #[test]
    fn rhs_advection_sine() {
        let sys = make_advection(&[2.0]);
        let grid = TorusGrid::new(1, 32);
        let u = TorusField::from_fn(grid.clone(), 1, |x| vec![x[0].sin()]);
        let rhs = linear_rhs(&sys, &u, &u, 0.0).unwrap();
        for j in 0..grid.num_points() {
            assert_relative_eq!(rhs.value(0, j), -2.0 * grid.point(j)[0].cos(), epsilon = 1e-11);
        }
    }

    #[test]
    fn rhs_constant_zero() {
        let sys = make_advection(&[1.0]);
        let grid = TorusGrid::new(1, 16);
        let u = TorusField::from_fn(grid, 1, |_| vec![3.0]);
        let rhs = linear_rhs(&sys, &u, &u, 0.0).unwrap();
        assert!(rhs.max_abs() < 1e-13);
    }

    #[test]
    fn rhs_burgers_frozen() {
        let sys = make_burgers();
        let grid = TorusGrid::new(1, 32);
        let u = TorusField::from_fn(grid.clone(), 1, |x| vec![x[0].sin()]);
        let rhs = linear_rhs(&sys, &u, &u, 0.0).unwrap();
        for j in 0..grid.num_points() {
            let x = grid.point(j)[0];
            assert_relative_eq!(rhs.value(0, j), -x.sin() * x.cos(), epsilon = 1e-10);
        }
    }

    #[test]
    fn evolve_advection_translation() {
        let sys = make_advection(&[1.0]);
        let grid = TorusGrid::new(1, 64);
        let u0 = TorusField::from_fn(grid.clone(), 1, |x| vec![x[0].sin()]);
        let mut cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
        cfg.dt_cfl = 0.1;
        let v = Trajectory::constant(0.0, 1.0, u0.clone());
        let traj = evolve_linear(&sys, &v, &u0, 0.0, 1.0, &cfg).unwrap();
        let uf = traj.final_state();
        let mut max_err = 0.0f64;
        for j in 0..grid.num_points() {
            max_err = max_err.max((uf.value(0, j) - (grid.point(j)[0] - 1.0).sin()).abs());
        }
        assert!(max_err < 1e-8, "translation error {max_err}");
        assert!((uf.l2_norm() - u0.l2_norm()).abs() < 1e-10, "norm drift");
    }

    #[test]
    fn evolve_zero_system_identity() {
        let sys = SystemDef::new(
            1,
            1,
            Arc::new(|_t, _x, _z, _i| Ok(DMatrix::zeros(1, 1))),
            Arc::new(|_t, _x, _z| Ok(DVector::zeros(1))),
            crate::symbol::AdmissibleRegion::whole_space(),
        );
        let grid = TorusGrid::new(1, 16);
        let u0 = sine_field(&grid, 1);
        let cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
        let v = Trajectory::constant(0.0, 1.0, u0.clone());
        let traj = evolve_linear(&sys, &v, &u0, 0.0, 1.0, &cfg).unwrap();
        let d = TorusField::linear_combination(1.0, traj.final_state(), -1.0, &u0);
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn evolve_symmetric_system_conserves_l2() {
        // A = [[0,1],[1,0]]: symmetric, so the generator is skew-adjoint.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let sys = SystemDef::new(
            2,
            1,
            Arc::new(move |_t, _x, _z, _i| Ok(a.clone())),
            Arc::new(|_t, _x, _z| Ok(DVector::zeros(2))),
            crate::symbol::AdmissibleRegion::whole_space(),
        );
        let grid = TorusGrid::new(1, 64);
        let u0 = sine_field(&grid, 2);
        let mut cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
        cfg.dt_cfl = 0.2;
        let v = Trajectory::constant(0.0, 1.0, u0.clone());
        let traj = evolve_linear(&sys, &v, &u0, 0.0, 1.0, &cfg).unwrap();
        assert!((traj.final_state().l2_norm() - u0.l2_norm()).abs() < 1e-10);
    }

    #[test]
    fn evolve_time_reversal() {
        let sys = make_advection(&[1.0]);
        let grid = TorusGrid::new(1, 64);
        let u0 = TorusField::from_fn(grid, 1, |x| vec![x[0].sin()]);
        let mut cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
        cfg.dt_cfl = 0.2;
        let v = Trajectory::constant(0.0, 1.0, u0.clone());
        let fwd = evolve_linear(&sys, &v, &u0, 0.0, 1.0, &cfg).unwrap();
        let vb = Trajectory::constant(1.0, 0.0, fwd.final_state().clone());
        let back = evolve_linear(&sys, &vb, fwd.final_state(), 1.0, 0.0, &cfg).unwrap();
        let d = TorusField::linear_combination(1.0, back.final_state(), -1.0, &u0);
        assert!(d.l2_norm() < 1e-7, "round trip error {}", d.l2_norm());
    }

    #[test]
    fn evolve_cfl_refinement_monotone() {
        let sys = make_advection(&[1.0]);
        let grid = TorusGrid::new(1, 32);
        let u0 = TorusField::from_fn(grid.clone(), 1, |x| vec![x[0].sin()]);
        let v = Trajectory::constant(0.0, 1.0, u0.clone());
        let err_at = |dt_cfl: f64| {
            let mut cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
            cfg.dt_cfl = dt_cfl;
            let traj = evolve_linear(&sys, &v, &u0, 0.0, 1.0, &cfg).unwrap();
            let exact = TorusField::from_fn(grid.clone(), 1, |x| vec![(x[0] - 1.0).sin()]);
            TorusField::linear_combination(1.0, traj.final_state(), -1.0, &exact).l2_norm()
        };
        let e1 = err_at(0.8);
        let e2 = err_at(0.4);
        // Fourth-order scheme: halving dt should shrink the error by far
        // more than a factor of 4.
        assert!(e2 < 0.25 * e1, "refinement did not reduce error: {e1} -> {e2}");
    }

    #[test]
    fn difference_norm_identical_and_shifted() {
        let grid = TorusGrid::new(1, 16);
        let u = sine_field(&grid, 1);
        let a = Trajectory::constant(0.0, 1.0, u.clone());
        assert_eq!(difference_norm(&a, &a).unwrap(), 0.0);
        let c = 0.3;
        let shifted = TorusField::from_fn(grid, 1, |x| vec![x[0].sin() + c]);
        let b = Trajectory::constant(0.0, 1.0, shifted);
        let expect = c * (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(difference_norm(&a, &b).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn picard_linear_two_iterates() {
        let sys = make_advection(&[1.0, -0.5]);
        let grid = TorusGrid::new(1, 32);
        let u0 = sine_field(&grid, 2);
        let cfg = SolveConfig::new(2.0, 1, 0.5).unwrap();
        let out = picard_solve(&sys, &u0, &cfg).unwrap();
        assert!(matches!(out.status, SolveStatus::Converged));
        // Linear system: the iteration map is constant, so the second
        // iterate reproduces the first within tolerance.
        assert_eq!(out.history.len(), 2);
        assert!(out.history[1].diff_prev <= cfg.picard_tol);
        assert_relative_eq!(out.t_actual, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn picard_burgers_matches_characteristics() {
        let sys = make_burgers();
        let grid = TorusGrid::new(1, 128);
        let amp = 0.1;
        let u0 = TorusField::from_fn(grid.clone(), 1, |x| vec![amp * x[0].sin()]);
        let mut cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
        cfg.picard_tol = 1e-10;
        cfg.energy_stride = 100;
        let out = picard_solve(&sys, &u0, &cfg).unwrap();
        assert!(matches!(out.status, SolveStatus::Converged));
        let t = out.t_actual;
        let uf = out.trajectory.final_state();
        let mut worst = 0.0f64;
        for j in 0..grid.num_points() {
            let x = grid.point(j)[0];
            // Invert x = x0 + t·u0(x0) by Newton.
            let mut x0 = x;
            for _ in 0..60 {
                let g = x0 + t * amp * x0.sin() - x;
                let gp = 1.0 + t * amp * x0.cos();
                x0 -= g / gp;
            }
            worst = worst.max((uf.value(0, j) - amp * x0.sin()).abs());
        }
        assert!(worst < 1e-6, "characteristics mismatch {worst}");
    }

    #[test]
    fn picard_contraction_ratio() {
        let sys = make_burgers();
        let grid = TorusGrid::new(1, 64);
        let u0 = TorusField::from_fn(grid, 1, |x| vec![0.1 * x[0].sin()]);
        let mut cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
        cfg.picard_tol = 1e-9;
        cfg.energy_stride = 100;
        let out = picard_solve(&sys, &u0, &cfg).unwrap();
        assert!(matches!(out.status, SolveStatus::Converged));
        let diffs: Vec<f64> = out
            .history
            .iter()
            .filter(|r| r.window_start == 0.0)
            .map(|r| r.diff_prev)
            .collect();
        assert!(diffs.len() <= 8, "needed {} iterates", diffs.len());
        for k in 2..diffs.len() {
            let ratio = diffs[k] / diffs[k - 1];
            assert!(ratio <= 0.5, "ratio {ratio} at iterate {}", k + 1);
        }
    }

    #[test]
    fn picard_burgers_blowup_detected_near_breaking_time() {
        let sys = make_burgers();
        let grid = TorusGrid::new(1, 128);
        let u0 = TorusField::from_fn(grid, 1, |x| vec![x[0].sin()]);
        let mut cfg = SolveConfig::new(2.0, 1, 2.0).unwrap();
        cfg.energy_stride = 8;
        // The dealiased discretization regularizes the gradient blow-up
        // (the proxy saturates at O(n) instead of diverging), so the
        // relative-growth sentinel is matched to the resolution.
        cfg.blowup_factor = 3.5;
        cfg.blowup_window_frac = 0.15;
        let out = picard_solve(&sys, &u0, &cfg).unwrap();
        match out.status {
            SolveStatus::Halted(c) => {
                assert_eq!(c.kind, ContinuationKind::NormBlowup, "{c:?}");
                assert!((c.t - 1.0).abs() <= 0.05, "blow-up time {} not near 1", c.t);
            }
            other => panic!("expected halt, got {other:?}"),
        }
    }

    #[test]
    fn picard_margin_vanishing_toy() {
        let sys = make_margin_toy();
        let grid = TorusGrid::new(1, 8);
        let u0 = TorusField::from_fn(grid, 1, |_| vec![0.1]);
        let cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
        let out = picard_solve(&sys, &u0, &cfg).unwrap();
        match out.status {
            SolveStatus::Halted(c) => {
                assert_eq!(c.kind, ContinuationKind::MarginVanishing, "{c:?}");
                assert!((c.t - 0.1).abs() <= 0.002, "margin time {} not near 0.1", c.t);
            }
            other => panic!("expected halt, got {other:?}"),
        }
    }

    #[test]
    fn picard_rejects_bad_datum() {
        let sys = make_margin_toy();
        let grid = TorusGrid::new(1, 8);
        let u0 = TorusField::from_fn(grid, 1, |_| vec![-0.5]);
        let cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
        assert!(matches!(
            picard_solve(&sys, &u0, &cfg),
            Err(SolverError::StateOutsideDomain { .. })
        ));
    }

    #[test]
    fn picard_fixed_point_unique_across_tolerances() {
        // Tightening the stopping tolerance must land on the same fixed
        // point of the iteration (same discretization, so the limit is
        // unique up to the looser tolerance).
        let sys = make_burgers();
        let grid = TorusGrid::new(1, 64);
        let u0 = TorusField::from_fn(grid, 1, |x| vec![0.1 * x[0].sin()]);
        let mut cfg_a = SolveConfig::new(2.0, 1, 0.5).unwrap();
        cfg_a.energy_stride = 100;
        let mut cfg_b = cfg_a.clone();
        cfg_b.picard_tol = 1e-12;
        let a = picard_solve(&sys, &u0, &cfg_a).unwrap();
        let b = picard_solve(&sys, &u0, &cfg_b).unwrap();
        let d = difference_norm(&a.trajectory, &b.trajectory).unwrap();
        assert!(d < 10.0 * cfg_a.picard_tol, "disagreement {d}");
    }

    #[test]
    fn energy_growth_constant_for_isometry() {
        let sys = make_advection(&[1.0]);
        let grid = TorusGrid::new(1, 32);
        let u0 = TorusField::from_fn(grid, 1, |x| vec![x[0].sin()]);
        let mut cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
        cfg.dt_cfl = 0.1;
        let out = picard_solve(&sys, &u0, &cfg).unwrap();
        assert!(out.energies.len() >= 3);
        let report = verify_energy_growth(&out).unwrap();
        assert!(report.b.abs() < 1e-8, "fitted growth rate {}", report.b);
        assert!(report.max_slack >= 0.0);
        // Translation is an H^s isometry: the Sobolev norm stays put.
        let n0 = out.energies[0].sobolev_s;
        for e in &out.energies {
            assert_relative_eq!(e.sobolev_s, n0, max_relative = 1e-9);
        }
    }

    #[test]
    fn energy_report_envelope_property() {
        let sys = make_burgers();
        let grid = TorusGrid::new(1, 64);
        let u0 = TorusField::from_fn(grid, 1, |x| vec![0.2 * x[0].sin()]);
        let mut cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
        cfg.energy_stride = 4;
        let out = picard_solve(&sys, &u0, &cfg).unwrap();
        let report = verify_energy_growth(&out).unwrap();
        assert!(report.a > 0.0 && report.b >= 0.0);
        // Envelope dominates every sample.
        let t0 = out.energies[0].t;
        let e0 = out.energies[0].energy_ns;
        for e in &out.energies {
            let tau = e.t - t0;
            let env = report.a * (report.b * tau).exp() * (e0 + report.b * tau);
            assert!(e.energy_ns <= env * (1.0 + 1e-12), "sample above envelope");
        }
    }

    #[test]
    fn energy_insufficient_samples() {
        let grid = TorusGrid::new(1, 16);
        let u0 = TorusField::from_fn(grid.clone(), 1, |x| vec![x[0].sin()]);
        let out = SolveOutcome {
            trajectory: Trajectory::new(0.0, u0),
            energies: vec![],
            history: vec![],
            status: SolveStatus::Converged,
            t_actual: 0.0,
        };
        assert!(matches!(verify_energy_growth(&out), Err(SolverError::InsufficientSamples)));
    }

    #[test]
    fn probe_linear_first_order() {
        let sys = make_advection(&[1.0]);
        let grid = TorusGrid::new(1, 32);
        let u0 = TorusField::from_fn(grid, 1, |x| vec![x[0].sin()]);
        let mut cfg = SolveConfig::new(2.0, 1, 0.5).unwrap();
        cfg.energy_stride = 100;
        let table =
            continuous_dependence_probe(&sys, &u0, &[1e-2, 1e-3, 1e-4], &cfg).unwrap();
        assert!((table.order_p - 1.0).abs() < 1e-6, "order {}", table.order_p);
    }

    #[test]
    fn probe_zero_delta_zero_difference() {
        let sys = make_advection(&[1.0]);
        let grid = TorusGrid::new(1, 16);
        let u0 = TorusField::from_fn(grid, 1, |x| vec![x[0].sin()]);
        let mut cfg = SolveConfig::new(2.0, 1, 0.25).unwrap();
        cfg.energy_stride = 100;
        let table = continuous_dependence_probe(&sys, &u0, &[0.0, 1e-3], &cfg).unwrap();
        assert_eq!(table.rows[0].diff, 0.0);
        assert!(table.rows[1].diff > 0.0);
    }

    #[test]
    fn probe_burgers_order_near_one() {
        let sys = make_burgers();
        let grid = TorusGrid::new(1, 64);
        let u0 = TorusField::from_fn(grid, 1, |x| vec![0.1 * x[0].sin()]);
        let mut cfg = SolveConfig::new(2.0, 1, 0.5).unwrap();
        cfg.energy_stride = 100;
        let table =
            continuous_dependence_probe(&sys, &u0, &[1e-2, 1e-3, 1e-4], &cfg).unwrap();
        assert!(table.order_p > 0.9 && table.order_p < 1.1, "order {}", table.order_p);
    }

    #[test]
    fn monitor_classifies_series() {
        let cfg = SolveConfig::new(2.0, 1, 1.0).unwrap();
        let healthy: Vec<MonitorSample> = (0..10)
            .map(|k| MonitorSample { t: k as f64 * 0.1, margin: 1.0, bnorm: 2.0 })
            .collect();
        let v = monitor_continuation(&healthy, &cfg, 1.0);
        assert_eq!(v.kind, ContinuationKind::ReachedHorizon);

        let mut fading = healthy.clone();
        fading[9].margin = 1e-4;
        let v = monitor_continuation(&fading, &cfg, 1.0);
        assert_eq!(v.kind, ContinuationKind::MarginVanishing);
        assert!(v.t > 0.8 && v.t <= 0.9);

        let mut exploding = healthy.clone();
        exploding[9].bnorm = 1e7;
        let v = monitor_continuation(&exploding, &cfg, 1.0);
        assert_eq!(v.kind, ContinuationKind::NormBlowup);

        let mut fast_growth = healthy;
        fast_growth[9].t = fast_growth[8].t + 0.005;
        fast_growth[9].bnorm = 50.0;
        let v = monitor_continuation(&fast_growth, &cfg, 1.0);
        assert_eq!(v.kind, ContinuationKind::NormBlowup);
    }

    #[test]
    fn trajectory_sampling_interpolates() {
        let grid = TorusGrid::new(1, 8);
        let a = TorusField::from_fn(grid.clone(), 1, |_| vec![0.0]);
        let b = TorusField::from_fn(grid, 1, |_| vec![1.0]);
        let mut tr = Trajectory::new(0.0, a);
        tr.push(1.0, b);
        let mid = tr.sample(0.25);
        assert_relative_eq!(mid.value(0, 0), 0.25, epsilon = 1e-14);
        assert_relative_eq!(tr.sample(-1.0).value(0, 0), 0.0);
        assert_relative_eq!(tr.sample(2.0).value(0, 0), 1.0);
    }
}
