//! Long-time diagnostics: the entropy-type functional, the structural source
//! condition, convergence, pattern and blow-up metrics.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{Grid1D, ModelParams, SourceSpec, State};
use crate::solver::{Event, Trajectory};

/// Floor applied to u inside `a(u^beta)`.
pub const U_FLOOR: f64 = 1e-30;

/// `a(s) = (s - ln s - 1) / beta`.
pub fn a_of_s(s: f64, beta: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("a(s) needs s > 0, got {s}")));
    }
    Ok((s - s.ln() - 1.0) / beta)
}

/// Constants of the functional `∫ a(u^beta) + (C_eqh / 2) ∫ (h - h*)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovParams {
    pub h_star: f64,
    pub c_h: f64,
    pub c_u: f64,
    /// A-priori bound U on u.
    pub u_bound: f64,
    pub c_b: f64,
    pub c_a: f64,
    /// Midpoint of the admissible interval, when it is nonempty.
    pub epsilon: Option<f64>,
    pub c_eqh: Option<f64>,
    /// All structural conditions hold; otherwise `reasons` lists the failures.
    pub applicable: bool,
    pub reasons: Vec<String>,
}

/// Ingredients of the constants that come from the model and domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovInputs {
    /// Lower bound of the cell diffusivity.
    pub d1: f64,
    /// Upper bound of the cell diffusivity.
    pub bd: f64,
    pub d_h: f64,
    pub beta: f64,
    /// Lipschitz constant and value at 0 of mu on `[0, H]`.
    pub l_mu: f64,
    pub mu0: f64,
    /// Lower bound of mu on `[0, H]`.
    pub delta: f64,
    pub h_ceiling: f64,
    /// Infimum of J on `[0, diam]`.
    pub eta: f64,
    pub diam: f64,
}

const ETA_SAMPLES: usize = 10_000;

impl LyapunovInputs {
    pub fn from_model(params: &ModelParams, grid: &Grid1D) -> Result<Self> {
        let (d1, bd) = params.diffusion.bounds();
        let h = params.h_ceiling();
        let b = params.growth.bounds(h)?;
        let diam = grid.domain().length();
        let eta = if params.kernel.is_dirac() {
            0.0
        } else {
            (0..=ETA_SAMPLES)
                .map(|i| params.kernel.value(diam * i as f64 / ETA_SAMPLES as f64))
                .fold(f64::INFINITY, f64::min)
        };
        Ok(Self {
            d1,
            bd,
            d_h: params.d_h,
            beta: params.beta,
            l_mu: b.lipschitz,
            mu0: b.at_zero,
            delta: b.delta,
            h_ceiling: h,
            eta,
            diam,
        })
    }
}

impl LyapunovParams {
    /// Evaluates `C_B`, `C_A`, the admissible weight and `C_eqh`:
    ///
    /// ```text
    /// C_B   = (L_mu H + mu(0)) (diam beta U^beta)^2 / (4 D1)
    /// C_A   = C_U bd ((beta-1) U^beta + 1) / (4 delta eta |Omega| D_H D1) - 1 - C_B
    /// eps in [max(-C_A/2 - r, C_B), min(-C_A/2 + r, 1)],  r = sqrt(C_A^2/4 - C_B)
    /// C_eqh = eps (bd ((beta-1) U^beta + 1))^2 / (4 D1 D_H (eps - C_B))
    /// ```
    pub fn new(inputs: &LyapunovInputs, h_star: f64, c_h: f64, c_u: f64, u_bound: f64) -> Self {
        let LyapunovInputs {
            d1,
            bd,
            d_h,
            beta,
            l_mu,
            mu0,
            delta,
            h_ceiling,
            eta,
            diam,
        } = *inputs;
        let ub = u_bound.powf(beta);
        let c_b = (l_mu * h_ceiling + mu0) * (diam * beta * ub).powi(2) / (4.0 * d1);
        let bd_term = bd * ((beta - 1.0) * ub + 1.0);
        let c_a = c_u * bd_term / (4.0 * delta * eta * diam * d_h * d1) - 1.0 - c_b;

        let mut reasons = Vec::new();
        if !(c_h > 0.0) {
            reasons.push(format!("C_H = {c_h} is not positive"));
        }
        if !(eta > 0.0) {
            reasons.push(format!("kernel infimum eta = {eta} is not positive"));
        }
        if !(c_b > 0.0 && c_b < 1.0) {
            reasons.push(format!("C_B = {c_b:.6e} not in (0, 1)"));
        }
        if !(c_a < 0.0) {
            reasons.push(format!("C_A = {c_a:.6e} not negative"));
        }
        if !(c_a * c_a > 4.0 * c_b) {
            reasons.push("C_A^2 <= 4 C_B".to_string());
        }

        let mut epsilon = None;
        let mut c_eqh = None;
        if c_a * c_a > 4.0 * c_b {
            let r = (c_a * c_a / 4.0 - c_b).sqrt();
            let lo = (-c_a / 2.0 - r).max(c_b);
            let hi = (-c_a / 2.0 + r).min(1.0);
            if lo < hi {
                let eps = 0.5 * (lo + hi);
                epsilon = Some(eps);
                c_eqh = Some(eps * bd_term * bd_term / (4.0 * d1 * d_h * (eps - c_b)));
            } else {
                reasons.push(format!("admissible weight interval [{lo:.6e}, {hi:.6e}] is empty"));
            }
        }
        Self {
            h_star,
            c_h,
            c_u,
            u_bound,
            c_b,
            c_a,
            epsilon,
            c_eqh,
            applicable: reasons.is_empty(),
            reasons,
        }
    }

    /// Fixed weight, bypassing the structural constants.
    pub fn with_weight(h_star: f64, c_eqh: f64) -> Self {
        Self {
            h_star,
            c_h: f64::NAN,
            c_u: f64::NAN,
            u_bound: f64::NAN,
            c_b: f64::NAN,
            c_a: f64::NAN,
            epsilon: None,
            c_eqh: Some(c_eqh),
            applicable: true,
            reasons: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovValue {
    pub value: f64,
    /// Cells where u was raised to `U_FLOOR`.
    pub floored: usize,
}

/// Midpoint quadrature of `a(u^beta) + (C_eqh/2)(h - h*)^2`. Without a weight
/// only the u-part is returned.
pub fn lyapunov(state: &State, lp: &LyapunovParams, beta: f64, grid: &Grid1D) -> LyapunovValue {
    let w = lp.c_eqh.unwrap_or(0.0);
    let mut floored = 0;
    let mut sum = 0.0;
    for (&u, &h) in state.u.iter().zip(&state.h) {
        let u = if u < U_FLOOR {
            floored += 1;
            U_FLOOR
        } else {
            u
        };
        // beta * ln u stays finite where u^beta would underflow
        let ln_s = beta * u.ln();
        let a = (ln_s.exp() - ln_s - 1.0) / beta;
        sum += a + 0.5 * w * (h - lp.h_star).powi(2);
    }
    LyapunovValue {
        value: sum * grid.dx(),
        floored,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssgFit {
    pub holds: bool,
    pub c_h: f64,
    pub c_u: f64,
}

pub const MIN_C_H: f64 = 1e-6;
const REFINEMENT: usize = 4;
const GROWTH_ALLOWANCE: f64 = 1.05;
const GEOMETRIC_DEPTH: usize = 20;

/// Fits constants for
///
/// ```text
/// g(u,h) (h - h*) <= -C_H (h - h*)^2 + C_U u^(alpha-1) (u^beta - 1)^2
/// ```
///
/// on `(0, U] x [0, H]`. C_H starts at its upper bound from `u = 1` (where the
/// C_U term vanishes) and is halved until the smallest admissible C_U stays
/// bounded when the u-sampling is refined (uniformly and geometrically toward 0).
pub fn check_assg(
    g: &SourceSpec,
    h_star: f64,
    h_ceiling: f64,
    u_bound: f64,
    alpha: f64,
    beta: f64,
    sample_density: usize,
) -> AssgFit {
    let n = sample_density.max(4);
    let hs: Vec<f64> = (0..=n).map(|j| h_ceiling * j as f64 / n as f64).collect();
    let fail = AssgFit {
        holds: false,
        c_h: 0.0,
        c_u: f64::INFINITY,
    };

    let u_ref = u_bound.min(1.0);
    let mut c_h = f64::INFINITY;
    for &h in &hs {
        let dh = h - h_star;
        if dh != 0.0 {
            c_h = c_h.min(-g.g(u_ref, h) / dh);
        }
    }
    if !(c_h > 0.0) {
        return fail;
    }
    if c_h.is_infinite() {
        c_h = 1.0;
    }

    // uniform samples plus a geometric sequence reaching toward u = 0
    let u_samples = |level: usize| -> Vec<f64> {
        let nu = level * n;
        let mut us: Vec<f64> = (1..=nu).map(|i| u_bound * i as f64 / nu as f64).collect();
        us.extend((1..=GEOMETRIC_DEPTH * level).map(|k| u_bound * 0.5f64.powi(k as i32)));
        us
    };
    let required_c_u = |c_h: f64, level: usize| -> f64 {
        let mut c_u: f64 = 0.0;
        for u in u_samples(level) {
            let weight = u.powf(alpha - 1.0) * (u.powf(beta) - 1.0).powi(2);
            for &h in &hs {
                let dh = h - h_star;
                let excess = g.g(u, h) * dh + c_h * dh * dh;
                if excess > 1e-14 * (1.0 + dh * dh) {
                    if weight <= 0.0 {
                        return f64::INFINITY;
                    }
                    c_u = c_u.max(excess / weight);
                }
            }
        }
        c_u
    };

    while c_h >= MIN_C_H {
        let coarse = required_c_u(c_h, 1);
        let fine = required_c_u(c_h, REFINEMENT);
        if coarse.is_finite() && fine.is_finite() && fine <= GROWTH_ALLOWANCE * coarse + 1e-12 {
            return AssgFit {
                holds: true,
                c_h,
                c_u: fine,
            };
        }
        c_h *= 0.5;
    }
    fail
}

/// `(sup |u - c|, sup |h - h*|)`.
pub fn convergence_metrics(state: &State, c: f64, h_star: f64) -> (f64, f64) {
    let du = state.u.iter().fold(0.0, |m: f64, &u| m.max((u - c).abs()));
    let dh = state.h.iter().fold(0.0, |m: f64, &h| m.max((h - h_star).abs()));
    (du, dh)
}

/// Spatial variance of u below which a state counts as unpatterned.
pub const PATTERN_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct PatternReport {
    pub spatial_variance: f64,
    /// Index m of the dominant Neumann mode `cos(pi m (x + a) / (2a))`.
    pub dominant_mode: Option<usize>,
    /// `pi m / (2a)`.
    pub dominant_wavenumber: Option<f64>,
    /// Rightmost node with `u > 0.5`.
    pub front_position: Option<f64>,
}

pub fn pattern_metrics(u: &[f64], grid: &Grid1D) -> PatternReport {
    let n = u.len();
    let mean = u.iter().sum::<f64>() / n as f64;
    let variance = u.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;

    let mut best: Option<(usize, f64)> = None;
    if variance > 0.0 {
        for m in 1..n {
            let c: f64 = u
                .iter()
                .enumerate()
                .map(|(i, v)| (v - mean) * (PI * m as f64 * (i as f64 + 0.5) / n as f64).cos())
                .sum();
            let e = c * c;
            if best.is_none_or(|(_, b)| e > b) {
                best = Some((m, e));
            }
        }
    }
    let dominant_mode = best.filter(|&(_, e)| e > 1e-24 * n as f64).map(|(m, _)| m);
    let front_position = u
        .iter()
        .rposition(|&v| v > 0.5)
        .map(|i| grid.nodes()[i]);
    PatternReport {
        spatial_variance: variance,
        dominant_mode,
        dominant_wavenumber: dominant_mode.map(|m| PI * m as f64 / grid.domain().length()),
        front_position,
    }
}

/// Earliest snapshot with `max u > threshold` or the solver's blow-up time.
pub fn detect_blowup(traj: &Trajectory, threshold: f64) -> Option<f64> {
    let snap = traj
        .snapshots
        .iter()
        .find(|s| s.max_u() > threshold)
        .map(|s| s.t);
    let event = traj.events.iter().find_map(|e| match e {
        Event::BlowUp { t, .. } => Some(*t),
        _ => None,
    });
    match (snap, event) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}
