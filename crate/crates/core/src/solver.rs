//! Finite-volume discretization and time integration.
//!
//! Every transport term is written as a difference of interface fluxes, so
//! the wall fluxes can be set to zero and the discrete mass changes only
//! through the reaction terms:
//!
//! ```text
//! F_{i+1/2} = -((d u)_{i+1} - (d u)_i) / dx + v_{i+1/2} u_upwind
//! v_{i+1/2} = -d_{i+1/2} (h_{i+1} - h_i) / dx
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::kernels::{discretize, Convolver, Extension, KernelStencil};
use crate::model::{
    build_grid, eval_initial_h, eval_initial_u, ApplicabilityFlag, Domain1D, Grid1D,
    InitialCondition, ModelParams, State,
};

/// Magnitude of negative u tolerated (and clipped to 0) after a step.
pub const UNDERSHOOT_TOL: f64 = 1e-12;
/// Consecutive rejected attempts before the step size is declared to underflow.
pub const MAX_REJECTIONS: usize = 40;
pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e3;
const ADVECTION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExplicitEuler,
    #[default]
    Rk2Heun,
    /// Backward Euler for `D_H h_xx`, forward Euler for everything else.
    Imex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub cfl_safety: f64,
    pub dt_max: f64,
    pub t_end: f64,
    pub snapshot_every: f64,
    pub blowup_threshold: f64,
    /// Stop once the right-hand side max norm falls below `steady_tol`.
    pub stop_at_steady_state: bool,
    pub steady_tol: f64,
    /// Accepted-step budget; the run stops with [`Event::StepLimit`] when exhausted.
    pub max_steps: usize,
}

/// Default accepted-step budget.
pub const DEFAULT_MAX_STEPS: usize = 20_000_000;

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Rk2Heun,
            cfl_safety: 0.9,
            dt_max: 0.1,
            t_end: 50.0,
            snapshot_every: 1.0,
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            stop_at_steady_state: false,
            steady_tol: 1e-9,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(config_err(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(config_err(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.dt_max > 0.0) {
            return Err(config_err(format!("dt_max must be positive, got {}", self.dt_max)));
        }
        if !(self.snapshot_every > 0.0) {
            return Err(config_err(format!(
                "snapshot_every must be positive, got {}",
                self.snapshot_every
            )));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(config_err("blowup_threshold must be positive"));
        }
        if self.max_steps == 0 {
            return Err(config_err("max_steps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    BlowUp { t: f64, max_u: f64, reason: String },
    DtRejected { t: f64, dt: f64 },
    SteadyState { t: f64 },
    /// The accepted-step budget ran out before `t_end`.
    StepLimit { t: f64, dt: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Values of u in `[-UNDERSHOOT_TOL, 0)` set to zero, plus h values clipped into `[0, H]`.
    pub clipped_values: usize,
    /// Smallest u seen before clipping, over all accepted steps.
    pub min_u_before_clip: f64,
}

/// Rejection events beyond this count are tallied in the stats but not logged.
const MAX_LOGGED_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<State>,
    pub events: Vec<Event>,
    /// `(t, max u)` at every snapshot and at a blow-up.
    pub max_norm_history: Vec<(f64, f64)>,
    pub stats: RunStats,
    /// Last accepted state (equal to the last snapshot unless the run stopped early).
    pub final_state: State,
    pub flags: Vec<ApplicabilityFlag>,
}

impl Trajectory {
    pub fn blow_up_time(&self) -> Option<f64> {
        self.events.iter().find_map(|e| match e {
            Event::BlowUp { t, .. } => Some(*t),
            _ => None,
        })
    }

    pub fn steady_state_time(&self) -> Option<f64> {
        self.events.iter().find_map(|e| match e {
            Event::SteadyState { t } => Some(*t),
            _ => None,
        })
    }
}

/// Everything `run` needs besides the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub params: ModelParams,
    pub ic: InitialCondition,
    pub half_length: f64,
    pub n_cells: usize,
    pub integrator: IntegratorConfig,
    /// Rescale the kernel stencil to unit discrete mass.
    pub renormalize_kernel: bool,
    pub extension: Extension,
    /// Keep h fixed at its initial profile (kinetic validation mode).
    pub freeze_h: bool,
}

impl SimulationConfig {
    pub fn new(params: ModelParams, half_length: f64, n_cells: usize, integrator: IntegratorConfig) -> Self {
        Self {
            params,
            ic: InitialCondition::default(),
            half_length,
            n_cells,
            integrator,
            renormalize_kernel: true,
            extension: Extension::Zero,
            freeze_h: false,
        }
    }

    pub fn grid(&self) -> Result<Grid1D> {
        build_grid(Domain1D::new(self.half_length)?, self.n_cells)
    }

    pub fn stencil(&self, grid: &Grid1D) -> Result<KernelStencil> {
        Ok(discretize(&self.params.kernel, grid, self.renormalize_kernel)?.with_extension(self.extension))
    }

    pub fn initial_state(&self, grid: &Grid1D) -> Result<State> {
        let u = eval_initial_u(&self.ic, grid)?;
        let h = eval_initial_h(&self.ic, grid, self.params.h_ceiling())?;
        State::new(u, h, 0.0)
    }
}

// ---------------------------------------------------------------------------
// Spatial operators

/// Zero-flux ghost values at the two walls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallGhosts {
    /// Mirror of `(d u)` in the first and last cell.
    pub du_left: f64,
    pub du_right: f64,
    /// Mirror of h in the first and last cell.
    pub h_left: f64,
    pub h_right: f64,
    /// Total u-flux through each wall; zero by construction.
    pub u_flux_left: f64,
    pub u_flux_right: f64,
}

pub fn boundary_fluxes(state: &State, d: &[f64]) -> WallGhosts {
    let n = state.len();
    WallGhosts {
        du_left: d[0] * state.u[0],
        du_right: d[n - 1] * state.u[n - 1],
        h_left: state.h[0],
        h_right: state.h[n - 1],
        u_flux_left: 0.0,
        u_flux_right: 0.0,
    }
}

/// Centered `∂xx (d u)` with mirrored ghosts.
pub fn myopic_diffusion_op(d: &[f64], u: &[f64], grid: &Grid1D) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    myopic_diffusion_into(d, u, grid.dx(), &mut out);
    out
}

fn myopic_diffusion_into(d: &[f64], u: &[f64], dx: f64, out: &mut [f64]) {
    let n = u.len();
    let inv = 1.0 / (dx * dx);
    let du = |i: usize| d[i] * u[i];
    for i in 0..n {
        let left = if i == 0 { du(0) } else { du(i - 1) };
        let right = if i + 1 == n { du(n - 1) } else { du(i + 1) };
        out[i] = (right - 2.0 * du(i) + left) * inv;
    }
}

/// Upwind `∂x (d u ∂x h)`: drift velocity `-d ∂x h`, zero at the walls.
pub fn taxis_op(d: &[f64], u: &[f64], h: &[f64], grid: &Grid1D) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    taxis_into(d, u, h, grid.dx(), &mut out, false);
    out
}

/// Writes (or adds, when `accumulate`) the taxis divergence.
fn taxis_into(d: &[f64], u: &[f64], h: &[f64], dx: f64, out: &mut [f64], accumulate: bool) {
    let n = u.len();
    let inv = 1.0 / dx;
    let mut flux_left = 0.0;
    for i in 0..n {
        let flux_right = if i + 1 == n {
            0.0
        } else {
            let d_face = 0.5 * (d[i] + d[i + 1]);
            let v = -d_face * (h[i + 1] - h[i]) * inv;
            v * if v >= 0.0 { u[i] } else { u[i + 1] }
        };
        let div = -(flux_right - flux_left) * inv;
        if accumulate {
            out[i] += div;
        } else {
            out[i] = div;
        }
        flux_left = flux_right;
    }
}

/// Neumann Laplacian `h_xx` with mirrored ghosts.
fn laplacian_into(h: &[f64], dx: f64, scale: f64, out: &mut [f64]) {
    let n = h.len();
    let c = scale / (dx * dx);
    for i in 0..n {
        let left = if i == 0 { h[0] } else { h[i - 1] };
        let right = if i + 1 == n { h[n - 1] } else { h[i + 1] };
        out[i] = (right - 2.0 * h[i] + left) * c;
    }
}

/// `mu(h) u^alpha (1 - conv)` with `conv = J * u^beta` supplied by the caller.
pub fn reaction_u(params: &ModelParams, u: &[f64], h: &[f64], conv: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    reaction_u_into(params, u, h, conv, &mut out, false);
    out
}

fn reaction_u_into(params: &ModelParams, u: &[f64], h: &[f64], conv: &[f64], out: &mut [f64], accumulate: bool) {
    for i in 0..u.len() {
        let ui = u[i].max(0.0);
        let r = params.growth.mu(h[i].max(0.0)) * pow(ui, params.alpha) * (1.0 - conv[i]);
        if accumulate {
            out[i] += r;
        } else {
            out[i] = r;
        }
    }
}

pub fn reaction_h(params: &ModelParams, u: &[f64], h: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(h)
        .map(|(&ui, &hi)| params.source.g(ui.max(0.0), hi))
        .collect()
}

#[inline]
fn pow(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else if p.fract() == 0.0 && p.abs() <= 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

/// Explicit step-size bound:
///
/// ```text
/// dt = safety * min( dx^2 / (2 max d), dx^2 / (2 D_H), dx / (max |d h_x| + eps),
///                    1 / R_u, 1 / max |∂h g| )
/// R_u = mu_max max(u)^(alpha-1) (alpha (1 + max|conv|) + beta max(u)^beta)
/// ```
///
/// `R_u` bounds the Jacobian of the u-reaction, including its dependence on
/// u through the convolution. The proton-diffusion bound is dropped under IMEX
/// and when h is frozen.
pub fn stable_dt(
    params: &ModelParams,
    grid: &Grid1D,
    state: &State,
    integrator: &IntegratorConfig,
    max_conv: f64,
) -> Result<f64> {
    let d = params.diffusion.nodal(grid.n_cells())?;
    Ok(stable_dt_inner(params, grid.dx(), &d, state, integrator, max_conv, None, false)?
        .min(integrator.dt_max))
}

fn stable_dt_inner(
    params: &ModelParams,
    dx: f64,
    d: &[f64],
    state: &State,
    integrator: &IntegratorConfig,
    max_conv: f64,
    reaction_rate: Option<f64>,
    freeze_h: bool,
) -> Result<f64> {
    if !state.is_finite() || !max_conv.is_finite() {
        return Err(Error::BlowUp {
            t: state.t,
            reason: "non-finite state".to_string(),
        });
    }
    let n = state.len();
    let d_max = d.iter().copied().fold(0.0, f64::max);
    let mut bound = dx * dx / (2.0 * d_max);
    if !freeze_h && integrator.scheme != Scheme::Imex {
        bound = bound.min(dx * dx / (2.0 * params.d_h));
    }
    let mut v_max: f64 = 0.0;
    for i in 0..n.saturating_sub(1) {
        let d_face = 0.5 * (d[i] + d[i + 1]);
        v_max = v_max.max((d_face * (state.h[i + 1] - state.h[i]) / dx).abs());
    }
    bound = bound.min(dx / (v_max + ADVECTION_FLOOR));

    let u_max = state.u.iter().copied().fold(0.0, f64::max);
    if let Some(rate) = reaction_rate {
        if rate > 0.0 {
            bound = bound.min(1.0 / rate);
        }
    } else if u_max > 0.0 && !params.growth.is_zero() {
        let mu_max = state
            .h
            .iter()
            .map(|&h| params.growth.mu(h.max(0.0)).abs())
            .fold(0.0, f64::max);
        let rate = mu_max
            * pow(u_max, params.alpha - 1.0)
            * (params.alpha * (1.0 + max_conv.abs()) + params.beta * pow(u_max, params.beta));
        if rate > 0.0 {
            bound = bound.min(1.0 / rate);
        }
    }
    if !freeze_h {
        let g_rate = state
            .u
            .iter()
            .zip(&state.h)
            .map(|(&u, &h)| params.source.dg_dh(u.max(0.0), h).abs())
            .fold(0.0, f64::max);
        if g_rate > 0.0 {
            bound = bound.min(1.0 / g_rate);
        }
    }
    Ok(integrator.cfl_safety * bound)
}

// ---------------------------------------------------------------------------
// Time stepping

/// A simulation loop: owns the operators' buffers and the convolution engine.
pub struct Simulation {
    params: ModelParams,
    grid: Grid1D,
    integrator: IntegratorConfig,
    d: Vec<f64>,
    convolver: Convolver,
    freeze_h: bool,
    /// Clip h into `[0, H]` (comparison principle holds for the source).
    clip_h: Option<f64>,
    flags: Vec<ApplicabilityFlag>,
    stats: RunStats,
    /// Cap carried over from the last rejection; relaxed after accepted steps.
    dt_cap: f64,
    upow: Vec<f64>,
    conv: Vec<f64>,
    conv_m1: Vec<f64>,
    k1u: Vec<f64>,
    k1h: Vec<f64>,
    k2u: Vec<f64>,
    k2h: Vec<f64>,
    stage: State,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("n_cells", &self.grid.n_cells())
            .field("scheme", &self.integrator.scheme)
            .field("stats", &self.stats)
            .finish()
    }
}

/// Outcome of one adaptive step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub dt: f64,
    pub rejections: usize,
    /// Max norm of the right-hand side at the start of the step.
    pub rhs_norm: f64,
}

impl Simulation {
    pub fn new(
        params: ModelParams,
        grid: Grid1D,
        stencil: &KernelStencil,
        integrator: IntegratorConfig,
    ) -> Result<Self> {
        let flags = params.validate()?;
        integrator.validate()?;
        let n = grid.n_cells();
        let d = params.diffusion.nodal(n)?;
        let clip_h = params
            .source
            .claims_compliance()
            .then_some(params.h_ceiling());
        Ok(Self {
            convolver: Convolver::auto(stencil, n),
            d,
            freeze_h: false,
            clip_h,
            flags,
            stats: RunStats {
                min_u_before_clip: f64::INFINITY,
                ..RunStats::default()
            },
            dt_cap: f64::INFINITY,
            upow: vec![0.0; n],
            conv: vec![0.0; n],
            conv_m1: vec![0.0; n],
            k1u: vec![0.0; n],
            k1h: vec![0.0; n],
            k2u: vec![0.0; n],
            k2h: vec![0.0; n],
            stage: State {
                u: vec![0.0; n],
                h: vec![0.0; n],
                t: 0.0,
            },
            params,
            grid,
            integrator,
        })
    }

    pub fn from_config(config: &SimulationConfig) -> Result<(Self, State)> {
        let grid = config.grid()?;
        let stencil = config.stencil(&grid)?;
        let state = config.initial_state(&grid)?;
        let mut sim = Simulation::new(config.params.clone(), grid, &stencil, config.integrator.clone())?;
        sim.freeze_h = config.freeze_h;
        Ok((sim, state))
    }

    pub fn set_freeze_h(&mut self, freeze: bool) {
        self.freeze_h = freeze;
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn flags(&self) -> &[ApplicabilityFlag] {
        &self.flags
    }

    pub fn nodal_diffusivity(&self) -> &[f64] {
        &self.d
    }

    /// `J * u^beta` for the given density.
    pub fn convolution(&mut self, u: &[f64]) -> Vec<f64> {
        let beta = self.params.beta;
        for (p, &v) in self.upow.iter_mut().zip(u) {
            *p = pow(v.max(0.0), beta);
        }
        let mut out = vec![0.0; u.len()];
        self.convolver.apply(&self.upow, &mut out);
        out
    }

    /// Full right-hand side. With `implicit_h` the proton diffusion is left
    /// out of `dh`. Returns `max |conv|`.
    fn rhs_into(&mut self, u: &[f64], h: &[f64], du: &mut [f64], dh: &mut [f64], implicit_h: bool) -> f64 {
        let dx = self.grid.dx();
        let beta = self.params.beta;
        for (p, &v) in self.upow.iter_mut().zip(u) {
            *p = pow(v.max(0.0), beta);
        }
        self.convolver.apply(&self.upow, &mut self.conv);
        myopic_diffusion_into(&self.d, u, dx, du);
        taxis_into(&self.d, u, h, dx, du, true);
        reaction_u_into(&self.params, u, h, &self.conv, du, true);

        if self.freeze_h {
            dh.fill(0.0);
        } else {
            if implicit_h {
                dh.fill(0.0);
            } else {
                laplacian_into(h, dx, self.params.d_h, dh);
            }
            for i in 0..u.len() {
                dh[i] += self.params.source.g(u[i].max(0.0), h[i]);
            }
        }
        self.conv.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Right-hand side `(du/dt, dh/dt)` of the semi-discrete system.
    pub fn rhs(&mut self, state: &State) -> (Vec<f64>, Vec<f64>) {
        let n = state.len();
        let (mut du, mut dh) = (vec![0.0; n], vec![0.0; n]);
        self.rhs_into(&state.u, &state.h, &mut du, &mut dh, false);
        (du, dh)
    }

    /// Step-size bound at `state` (see [`stable_dt`]).
    ///
    /// The reaction term is bounded row by row (Gershgorin) when `beta >= 1`:
    ///
    /// ```text
    /// R_u = max_i |mu(h_i)| u_i^(alpha-1) (alpha |1 - conv_i| + beta u_i (J * u^(beta-1))_i)
    /// ```
    pub fn stable_dt(&mut self, state: &State) -> Result<f64> {
        let conv = self.convolution(&state.u);
        self.conv.copy_from_slice(&conv);
        self.bound_from_conv(state)
    }

    /// Uses `self.conv`, which must hold `J * u^beta` for `state`.
    fn bound_from_conv(&mut self, state: &State) -> Result<f64> {
        let max_conv = self.conv.iter().fold(0.0, |m: f64, c| m.max(c.abs()));
        let rate = self.reaction_rate(state);
        Ok(stable_dt_inner(
            &self.params,
            self.grid.dx(),
            &self.d,
            state,
            &self.integrator,
            max_conv,
            rate,
            self.freeze_h,
        )?
        .min(self.integrator.dt_max))
    }

    fn reaction_rate(&mut self, state: &State) -> Option<f64> {
        let (alpha, beta) = (self.params.alpha, self.params.beta);
        if beta < 1.0 || !state.is_finite() {
            return None;
        }
        if self.params.growth.is_zero() {
            return Some(0.0);
        }
        for (p, &v) in self.upow.iter_mut().zip(&state.u) {
            *p = pow(v.max(0.0), beta - 1.0);
        }
        self.convolver.apply(&self.upow, &mut self.conv_m1);
        let mut rate: f64 = 0.0;
        for i in 0..state.len() {
            let u = state.u[i].max(0.0);
            if u == 0.0 {
                continue;
            }
            let mu = self.params.growth.mu(state.h[i].max(0.0)).abs();
            let r = mu * pow(u, alpha - 1.0) * (alpha * (1.0 - self.conv[i]).abs() + beta * u * self.conv_m1[i].abs());
            rate = rate.max(r);
        }
        Some(rate)
    }

    /// One attempt with a fixed `dt`. `Ok(None)` means the attempt was
    /// rejected for an undershoot below `-UNDERSHOOT_TOL` or a non-finite value.
    pub fn try_step(&mut self, state: &State, dt: f64) -> Result<Option<State>> {
        self.start_step(state);
        self.attempt(state, dt)
    }

    /// Fills `k1` (and `conv`) at `state`. Returns `max |conv|`.
    fn start_step(&mut self, state: &State) -> f64 {
        let mut k1u = std::mem::take(&mut self.k1u);
        let mut k1h = std::mem::take(&mut self.k1h);
        let imex = self.integrator.scheme == Scheme::Imex;
        let max_conv = self.rhs_into(&state.u, &state.h, &mut k1u, &mut k1h, imex);
        self.k1u = k1u;
        self.k1h = k1h;
        max_conv
    }

    fn attempt(&mut self, state: &State, dt: f64) -> Result<Option<State>> {
        let n = state.len();
        let k1u = std::mem::take(&mut self.k1u);
        let k1h = std::mem::take(&mut self.k1h);
        let mut k2u = std::mem::take(&mut self.k2u);
        let mut k2h = std::mem::take(&mut self.k2h);
        let mut stage = std::mem::replace(&mut self.stage, State { u: Vec::new(), h: Vec::new(), t: 0.0 });

        let mut next = State {
            u: vec![0.0; n],
            h: vec![0.0; n],
            t: state.t + dt,
        };
        let mut ok = true;
        match self.integrator.scheme {
            Scheme::ExplicitEuler => {
                for i in 0..n {
                    next.u[i] = state.u[i] + dt * k1u[i];
                    next.h[i] = state.h[i] + dt * k1h[i];
                }
            }
            Scheme::Imex => {
                for i in 0..n {
                    next.u[i] = state.u[i] + dt * k1u[i];
                    next.h[i] = state.h[i] + dt * k1h[i];
                }
                if !self.freeze_h {
                    let r = dt * self.params.d_h / (self.grid.dx() * self.grid.dx());
                    solve_neumann_implicit(&mut next.h, r);
                }
            }
            Scheme::Rk2Heun => {
                for i in 0..n {
                    stage.u[i] = state.u[i] + dt * k1u[i];
                    stage.h[i] = state.h[i] + dt * k1h[i];
                }
                if stage.u.iter().any(|&v| !(v >= -UNDERSHOOT_TOL)) {
                    ok = false;
                } else {
                    self.rhs_into(&stage.u, &stage.h, &mut k2u, &mut k2h, false);
                    for i in 0..n {
                        next.u[i] = state.u[i] + 0.5 * dt * (k1u[i] + k2u[i]);
                        next.h[i] = state.h[i] + 0.5 * dt * (k1h[i] + k2h[i]);
                    }
                }
            }
        }

        self.k1u = k1u;
        self.k1h = k1h;
        self.k2u = k2u;
        self.k2h = k2h;
        self.stage = stage;

        if !ok || !next.is_finite() || next.u.iter().any(|&v| v < -UNDERSHOOT_TOL) {
            return Ok(None);
        }
        for v in next.u.iter_mut() {
            self.stats.min_u_before_clip = self.stats.min_u_before_clip.min(*v);
            if *v < 0.0 {
                *v = 0.0;
                self.stats.clipped_values += 1;
            }
        }
        if let Some(cap) = self.clip_h {
            for v in next.h.iter_mut() {
                if *v < 0.0 || *v > cap {
                    *v = v.clamp(0.0, cap);
                    self.stats.clipped_values += 1;
                }
            }
        }
        Ok(Some(next))
    }

    /// Adaptive step: `stable_dt` capped by `dt_limit`, halved on rejection.
    /// Fails with [`Error::BlowUp`] after `MAX_REJECTIONS` consecutive rejections.
    pub fn advance(&mut self, state: &State, dt_limit: f64, events: &mut Vec<Event>) -> Result<(State, StepReport)> {
        self.start_step(state);
        let dt0 = self.bound_from_conv(state)?.min(dt_limit).min(self.dt_cap);
        let mut rhs_norm = self.k1u.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if !self.freeze_h {
            if self.integrator.scheme == Scheme::Imex {
                laplacian_into(&state.h, self.grid.dx(), self.params.d_h, &mut self.k2h);
            } else {
                self.k2h.fill(0.0);
            }
            for (k, lap) in self.k1h.iter().zip(&self.k2h) {
                rhs_norm = rhs_norm.max((k + lap).abs());
            }
        }
        let mut dt = dt0;
        let mut rejections = 0;
        loop {
            if let Some(next) = self.attempt(state, dt)? {
                self.stats.accepted_steps += 1;
                if rejections > 0 {
                    self.dt_cap = dt;
                } else if self.dt_cap.is_finite() {
                    self.dt_cap *= 1.1;
                    if self.dt_cap > 1e3 * dt {
                        self.dt_cap = f64::INFINITY;
                    }
                }
                return Ok((next, StepReport { dt, rejections, rhs_norm }));
            }
            rejections += 1;
            self.stats.rejected_steps += 1;
            if self.stats.rejected_steps <= MAX_LOGGED_REJECTIONS {
                events.push(Event::DtRejected { t: state.t, dt });
            }
            if rejections >= MAX_REJECTIONS {
                return Err(Error::BlowUp {
                    t: state.t,
                    reason: format!("step size underflow after {MAX_REJECTIONS} rejections"),
                });
            }
            dt *= 0.5;
        }
    }
}

/// Solves `(I - r L) x = b` in place, L the Neumann second difference.
fn solve_neumann_implicit(b: &mut [f64], r: f64) {
    let n = b.len();
    let lower = -r;
    let upper = -r;
    let diag = |i: usize| if i == 0 || i + 1 == n { 1.0 + r } else { 1.0 + 2.0 * r };
    let mut c_prime = vec![0.0; n];
    let mut denom = diag(0);
    c_prime[0] = upper / denom;
    b[0] /= denom;
    for i in 1..n {
        denom = diag(i) - lower * c_prime[i - 1];
        c_prime[i] = upper / denom;
        b[i] = (b[i] - lower * b[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        b[i] -= c_prime[i] * b[i + 1];
    }
}

/// One adaptive step of the configured scheme from `state`.
pub fn step(
    state: &State,
    params: &ModelParams,
    grid: &Grid1D,
    integrator: &IntegratorConfig,
    stencil: &KernelStencil,
) -> Result<State> {
    let mut sim = Simulation::new(params.clone(), grid.clone(), stencil, integrator.clone())?;
    let mut events = Vec::new();
    Ok(sim.advance(state, f64::INFINITY, &mut events)?.0)
}

/// Integrates to `t_end`, a blow-up, or (optionally) a steady state.
pub fn run(config: &SimulationConfig) -> Result<Trajectory> {
    let (mut sim, state) = Simulation::from_config(config)?;
    run_from(&mut sim, state)
}

pub fn run_from(sim: &mut Simulation, mut state: State) -> Result<Trajectory> {
    let integ = sim.integrator.clone();
    let mut events = Vec::new();
    let mut snapshots = vec![state.clone()];
    let mut history = vec![(state.t, state.max_u())];
    let mut next_snap = 1usize;
    let snap_time = |k: usize| (k as f64 * integ.snapshot_every).min(integ.t_end);

    let mut steady_seen = false;
    while state.t < integ.t_end {
        let target = snap_time(next_snap);
        let remaining = target - state.t;
        let (mut next, report) = match sim.advance(&state, remaining, &mut events) {
            Ok(x) => x,
            Err(Error::BlowUp { t, reason }) => {
                events.push(Event::BlowUp {
                    t,
                    max_u: state.max_u(),
                    reason,
                });
                break;
            }
            Err(e) => return Err(e),
        };
        if !steady_seen && report.rhs_norm < integ.steady_tol {
            steady_seen = true;
            events.push(Event::SteadyState { t: state.t });
        }
        // land exactly on the snapshot time
        if (target - next.t).abs() <= 1e-12 * target.abs().max(1.0) || report.dt >= remaining {
            next.t = target;
        }
        state = next;

        let max_u = state.max_u();
        if !(max_u <= integ.blowup_threshold) {
            events.push(Event::BlowUp {
                t: state.t,
                max_u,
                reason: format!("max u exceeded {}", integ.blowup_threshold),
            });
            break;
        }
        if state.t >= target {
            snapshots.push(state.clone());
            history.push((state.t, max_u));
            next_snap += 1;
        }
        if steady_seen && integ.stop_at_steady_state {
            break;
        }
        if sim.stats.accepted_steps >= integ.max_steps && state.t < integ.t_end {
            events.push(Event::StepLimit { t: state.t, dt: report.dt });
            break;
        }
    }

    if snapshots.last().map(|s| s.t) != Some(state.t) {
        snapshots.push(state.clone());
        history.push((state.t, state.max_u()));
    }
    Ok(Trajectory {
        snapshots,
        events,
        max_norm_history: history,
        stats: sim.stats(),
        final_state: state,
        flags: sim.flags.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::model::{GrowthSpec, SourceForm, SourceSpec};

    fn grid(a: f64, n: usize) -> Grid1D {
        build_grid(Domain1D::new(a).unwrap(), n).unwrap()
    }

    #[test]
    fn diffusion_exact_on_quadratics() {
        let g = grid(2.0, 40);
        let u: Vec<f64> = g.nodes().iter().map(|x| x * x).collect();
        let out = myopic_diffusion_op(&vec![1.0; 40], &u, &g);
        for v in &out[1..39] {
            assert!((v - 2.0).abs() < 1e-9);
        }
        let out = myopic_diffusion_op(&vec![0.7; 40], &vec![3.0; 40], &g);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn taxis_vanishes_without_gradient_or_mass() {
        let g = grid(2.0, 40);
        let d = vec![1.0; 40];
        let u: Vec<f64> = g.nodes().iter().map(|x| (-x * x).exp()).collect();
        assert!(taxis_op(&d, &u, &vec![0.3; 40], &g).iter().all(|&v| v == 0.0));
        let h: Vec<f64> = g.nodes().to_vec();
        assert!(taxis_op(&d, &vec![0.0; 40], &h, &g).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn taxis_is_conservative() {
        let g = grid(5.0, 100);
        let d = vec![1.0; 100];
        let u: Vec<f64> = g.nodes().iter().map(|x| (-x * x).exp()).collect();
        let h: Vec<f64> = g.nodes().to_vec();
        let out = taxis_op(&d, &u, &h, &g);
        assert!(g.integrate(&out).abs() < 1e-12);
        // repellent: mass moves down the gradient, i.e. to the left
        let mut shifted = u.clone();
        for (s, o) in shifted.iter_mut().zip(&out) {
            *s += 0.01 * o;
        }
        let mean = |f: &[f64]| g.nodes().iter().zip(f).map(|(x, v)| x * v).sum::<f64>() / f.iter().sum::<f64>();
        assert!(mean(&shifted) < mean(&u));
    }

    #[test]
    fn reaction_examples() {
        let p = ModelParams::standard(2.0, 1.0, 1.0, KernelSpec::Logistic);
        let zero = reaction_u(&p, &[0.0; 4], &[0.0; 4], &[0.5; 4]);
        assert!(zero.iter().all(|&v| v == 0.0));
        let one = reaction_u(&p, &[1.0; 4], &[0.0; 4], &[1.0; 4]);
        assert!(one.iter().all(|&v| v == 0.0));

        let mut p = ModelParams::standard(1.0, 1.0, 1.0, KernelSpec::Dirac);
        p.growth = GrowthSpec::Constant { mu0: 1.0 };
        let g = grid(1.0, 8);
        let s = discretize(&KernelSpec::Dirac, &g, false).unwrap();
        let conv = crate::kernels::convolve_direct(&s, &[2.0; 8], &g);
        let r = reaction_u(&p, &[2.0; 8], &[0.0; 8], &conv);
        assert!(r.iter().all(|v| (v + 2.0).abs() < 1e-12));
    }

    #[test]
    fn reaction_h_fieldwise() {
        let p = ModelParams::standard(2.0, 1.0, 1.0, KernelSpec::Logistic);
        assert!(reaction_h(&p, &[1.0; 3], &[1.0; 3]).iter().all(|&v| v == 0.0));
        assert!(reaction_h(&p, &[1.0; 3], &[0.0; 3]).iter().all(|&v| v == 1.0));
        assert!(reaction_h(&p, &[2.0; 3], &[0.5; 3]).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn wall_ghosts_mirror() {
        let g = grid(1.0, 8);
        let h: Vec<f64> = g.nodes().iter().map(|x| 2.0 * x).collect();
        let s = State::new(vec![1.0; 8], h.clone(), 0.0).unwrap();
        let ghosts = boundary_fluxes(&s, &[1.0; 8]);
        assert_eq!(ghosts.h_left - h[0], 0.0);
        assert_eq!(ghosts.h_right - h[7], 0.0);
        assert_eq!(ghosts.u_flux_left, 0.0);
        assert_eq!(ghosts.u_flux_right, 0.0);
    }

    #[test]
    fn stable_dt_examples() {
        let g = grid(20.0, 400);
        let p = ModelParams::standard(2.0, 1.0, 1.0, KernelSpec::Logistic);
        let integ = IntegratorConfig::default();
        let quiet = State::new(vec![0.0; 400], vec![0.0; 400], 0.0).unwrap();
        let dt = stable_dt(&p, &g, &quiet, &integ, 0.0).unwrap();
        assert!(dt <= 0.0045 + 1e-15);
        assert!((dt - 0.0045).abs() < 1e-12, "{dt}");

        // |h_x| = 10: advective bound 0.01 loses to the diffusive 0.005
        let h: Vec<f64> = g.nodes().iter().map(|x| 10.0 * (x + 20.0) / 40.0 * 4.0).collect();
        let steep = State::new(vec![0.0; 400], h, 0.0).unwrap();
        let dt = stable_dt(&p, &g, &steep, &integ, 0.0).unwrap();
        assert!(dt <= 0.005 * 0.9 + 1e-15);

        let bad = State::new(vec![f64::NAN; 400], vec![0.0; 400], 0.0).unwrap();
        assert!(matches!(stable_dt(&p, &g, &bad, &integ, 0.0), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn implicit_neumann_solve_matches_matrix() {
        let b0 = vec![1.0, -2.0, 0.5, 4.0, 3.0];
        let r = 0.7;
        let mut x = b0.clone();
        solve_neumann_implicit(&mut x, r);
        let n = x.len();
        for i in 0..n {
            let left = if i == 0 { x[0] } else { x[i - 1] };
            let right = if i + 1 == n { x[n - 1] } else { x[i + 1] };
            let ax = x[i] - r * (left - 2.0 * x[i] + right);
            assert!((ax - b0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_equilibrium_stays_zero() {
        let g = grid(2.0, 16);
        let p = ModelParams::standard(2.0, 1.0, 1.0, KernelSpec::Logistic);
        let s = discretize(&p.kernel, &g, true).unwrap();
        let mut sim = Simulation::new(p, g, &s, IntegratorConfig::default()).unwrap();
        let mut state = State::new(vec![0.0; 16], vec![0.0; 16], 0.0).unwrap();
        let mut ev = Vec::new();
        for _ in 0..50 {
            state = sim.advance(&state, 1.0, &mut ev).unwrap().0;
        }
        assert!(state.u.iter().chain(&state.h).all(|&v| v == 0.0));
    }

    #[test]
    fn destabilizing_source_leaves_h_unclipped() {
        let g = grid(2.0, 16);
        let mut p = ModelParams::standard(1.0, 1.0, 1.0, KernelSpec::Dirac);
        p.source = SourceSpec::new(SourceForm::Destabilizing { gamma: 0.8 }, 1.0);
        let s = discretize(&p.kernel, &g, true).unwrap();
        let sim = Simulation::new(p, g, &s, IntegratorConfig::default()).unwrap();
        assert!(sim.clip_h.is_none());
    }
}
