//! Domain, grid and state types, plus the coefficient functions of the model
//!
//! ```text
//! u_t = (d u)_xx + (d u h_x)_x + mu(h) u^alpha (1 - J * u^beta)
//! h_t = D_H h_xx + g(u, h)
//! ```
//!
//! on `[-a, a]` with no-flux walls.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::kernels::KernelSpec;

/// Number of samples used when estimating bounds of tabulated or closed-form
/// coefficient functions.
pub const BOUND_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain1D {
    half_length: f64,
}

impl Domain1D {
    pub fn new(half_length: f64) -> Result<Self> {
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(config_err(format!(
                "domain half-length must be positive, got {half_length}"
            )));
        }
        Ok(Self { half_length })
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn length(&self) -> f64 {
        2.0 * self.half_length
    }
}

/// Uniform cell-centered grid on `[-a, a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    domain: Domain1D,
    n_cells: usize,
    dx: f64,
    nodes: Vec<f64>,
}

pub const MIN_CELLS: usize = 8;

pub fn build_grid(domain: Domain1D, n_cells: usize) -> Result<Grid1D> {
    if n_cells < MIN_CELLS {
        return Err(config_err(format!(
            "grid needs at least {MIN_CELLS} cells, got {n_cells}"
        )));
    }
    let a = domain.half_length();
    let dx = domain.length() / n_cells as f64;
    let nodes = (0..n_cells)
        .map(|i| -a + (i as f64 + 0.5) * dx)
        .collect();
    Ok(Grid1D {
        domain,
        n_cells,
        dx,
        nodes,
    })
}

impl Grid1D {
    pub fn domain(&self) -> Domain1D {
        self.domain
    }

    pub fn half_length(&self) -> f64 {
        self.domain.half_length()
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn cell_index(&self, x: f64) -> usize {
        let raw = ((x + self.half_length()) / self.dx).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.n_cells - 1)
        }
    }

    /// Midpoint-rule integral of a nodal field.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.dx
    }
}

/// Cell density and proton concentration at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Vec<f64>,
    pub h: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn new(u: Vec<f64>, h: Vec<f64>, t: f64) -> Result<Self> {
        if u.len() != h.len() {
            return Err(config_err(format!(
                "field lengths differ: u has {}, h has {}",
                u.len(),
                h.len()
            )));
        }
        Ok(Self { u, h, t })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn max_u(&self) -> f64 {
        self.u.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.h.iter()).all(|v| v.is_finite())
    }
}

/// Proliferation rate mu(h).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrowthSpec {
    Constant { mu0: f64 },
    /// `mu0 / (1 + h)`
    Rational { mu0: f64 },
    /// Piecewise-linear interpolation, clamped outside the table.
    Tabulated { h: Vec<f64>, mu: Vec<f64> },
}

/// Sampled bounds of mu over `[0, H]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBounds {
    pub delta: f64,
    pub max: f64,
    pub lipschitz: f64,
    pub at_zero: f64,
}

impl GrowthSpec {
    pub fn mu(&self, h: f64) -> f64 {
        match self {
            GrowthSpec::Constant { mu0 } => *mu0,
            GrowthSpec::Rational { mu0 } => mu0 / (1.0 + h),
            GrowthSpec::Tabulated { h: hs, mu } => interp1(hs, mu, h),
        }
    }

    pub fn dmu_dh(&self, h: f64) -> f64 {
        match self {
            GrowthSpec::Constant { .. } => 0.0,
            GrowthSpec::Rational { mu0 } => -mu0 / ((1.0 + h) * (1.0 + h)),
            GrowthSpec::Tabulated { .. } => central_diff(|s| self.mu(s), h),
        }
    }

    /// True for `mu ≡ 0`, the pure-transport configuration.
    pub fn is_zero(&self) -> bool {
        match self {
            GrowthSpec::Constant { mu0 } | GrowthSpec::Rational { mu0 } => *mu0 == 0.0,
            GrowthSpec::Tabulated { mu, .. } => mu.iter().all(|&m| m == 0.0),
        }
    }

    fn check_shape(&self) -> Result<()> {
        match self {
            GrowthSpec::Constant { mu0 } | GrowthSpec::Rational { mu0 } => {
                if !(mu0.is_finite() && *mu0 >= 0.0) {
                    return Err(config_err(format!("mu0 must be >= 0, got {mu0}")));
                }
            }
            GrowthSpec::Tabulated { h, mu } => check_table("growth", h, mu)?,
        }
        Ok(())
    }

    /// Samples mu on `BOUND_SAMPLES` points of `[0, h_ceiling]`.
    pub fn bounds(&self, h_ceiling: f64) -> Result<GrowthBounds> {
        self.check_shape()?;
        let n = BOUND_SAMPLES;
        let step = h_ceiling / (n - 1) as f64;
        let mut delta = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut lipschitz: f64 = 0.0;
        let mut prev = self.mu(0.0);
        for i in 0..n {
            let m = self.mu(i as f64 * step);
            delta = delta.min(m);
            max = max.max(m);
            if i > 0 && step > 0.0 {
                lipschitz = lipschitz.max((m - prev).abs() / step);
            }
            prev = m;
        }
        Ok(GrowthBounds {
            delta,
            max,
            lipschitz,
            at_zero: self.mu(0.0),
        })
    }
}

pub fn eval_mu(spec: &GrowthSpec, h: f64) -> Result<f64> {
    if h < 0.0 || h.is_nan() {
        return Err(Error::Domain(format!("mu(h) needs h >= 0, got {h}")));
    }
    Ok(spec.mu(h))
}

/// Proton source g(u, h).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceForm {
    /// `u (1 - h)`
    LogisticAcid,
    /// `u + u h - gamma h^2`; exempt from the ceiling checks.
    Destabilizing { gamma: f64 },
    /// `-rate (h - h_star)`, independent of u.
    Relaxation { rate: f64, h_star: f64 },
    /// `g ≡ 0`
    Inert,
    /// Bilinear interpolation on a tensor table, row-major in u.
    Tabulated {
        u: Vec<f64>,
        h: Vec<f64>,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub form: SourceForm,
    /// Ceiling concentration H.
    pub h_ceiling: f64,
}

/// Result of sampling g at config load.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCheck {
    /// False only for the destabilizing form, which is flagged rather than rejected.
    pub claims_compliance: bool,
    /// Sampled maximum of g(u, 0).
    pub g_bound: f64,
    pub violations: Vec<String>,
}

impl SourceSpec {
    pub fn new(form: SourceForm, h_ceiling: f64) -> Self {
        Self { form, h_ceiling }
    }

    pub fn logistic_acid() -> Self {
        Self::new(SourceForm::LogisticAcid, 1.0)
    }

    pub fn g(&self, u: f64, h: f64) -> f64 {
        match &self.form {
            SourceForm::LogisticAcid => u * (1.0 - h),
            SourceForm::Destabilizing { gamma } => u + u * h - gamma * h * h,
            SourceForm::Relaxation { rate, h_star } => -rate * (h - h_star),
            SourceForm::Inert => 0.0,
            SourceForm::Tabulated { u: us, h: hs, values } => interp2(us, hs, values, u, h),
        }
    }

    pub fn dg_du(&self, u: f64, h: f64) -> f64 {
        match &self.form {
            SourceForm::LogisticAcid => 1.0 - h,
            SourceForm::Destabilizing { .. } => 1.0 + h,
            SourceForm::Relaxation { .. } | SourceForm::Inert => 0.0,
            SourceForm::Tabulated { .. } => central_diff(|s| self.g(s, h), u),
        }
    }

    pub fn dg_dh(&self, u: f64, h: f64) -> f64 {
        match &self.form {
            SourceForm::LogisticAcid => -u,
            SourceForm::Destabilizing { gamma } => u - 2.0 * gamma * h,
            SourceForm::Relaxation { rate, .. } => -rate,
            SourceForm::Inert => 0.0,
            SourceForm::Tabulated { .. } => central_diff(|s| self.g(u, s), h),
        }
    }

    /// Whether the comparison principle keeps h in `[0, H]`.
    pub fn claims_compliance(&self) -> bool {
        !matches!(self.form, SourceForm::Destabilizing { .. })
    }

    pub fn is_inert(&self) -> bool {
        matches!(self.form, SourceForm::Inert)
    }

    fn check_shape(&self) -> Result<()> {
        if !(self.h_ceiling.is_finite() && self.h_ceiling > 0.0) {
            return Err(config_err(format!(
                "ceiling concentration H must be positive, got {}",
                self.h_ceiling
            )));
        }
        match &self.form {
            SourceForm::Destabilizing { gamma } if !(gamma.is_finite() && *gamma > 0.0) => {
                Err(config_err(format!("gamma must be positive, got {gamma}")))
            }
            SourceForm::Relaxation { rate, h_star } if !(rate.is_finite() && h_star.is_finite()) => {
                Err(config_err("relaxation source needs finite rate and h_star"))
            }
            SourceForm::Tabulated { u, h, values } => {
                check_axis("source u", u)?;
                check_axis("source h", h)?;
                if values.len() != u.len() * h.len() {
                    return Err(config_err(format!(
                        "source table needs {} values, got {}",
                        u.len() * h.len(),
                        values.len()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Samples `g(u, 0)` and `g(u, H)` over `u ∈ [0, u_max]`.
    pub fn check(&self, u_max: f64) -> Result<SourceCheck> {
        self.check_shape()?;
        let n = BOUND_SAMPLES;
        let mut g_bound = f64::NEG_INFINITY;
        let mut violations = Vec::new();
        for i in 0..n {
            let u = u_max * i as f64 / (n - 1) as f64;
            let g0 = self.g(u, 0.0);
            let g_h = self.g(u, self.h_ceiling);
            g_bound = g_bound.max(g0);
            if g0 < 0.0 && violations.len() < 4 {
                violations.push(format!("g({u}, 0) = {g0} < 0"));
            }
            if g_h > 0.0 && violations.len() < 4 {
                violations.push(format!("g({u}, H={}) = {g_h} > 0", self.h_ceiling));
            }
        }
        Ok(SourceCheck {
            claims_compliance: self.claims_compliance(),
            g_bound,
            violations,
        })
    }
}

pub fn eval_g(spec: &SourceSpec, u: f64, h: f64) -> Result<f64> {
    if u < 0.0 || h < 0.0 || u.is_nan() || h.is_nan() {
        return Err(Error::Domain(format!(
            "g(u, h) needs u, h >= 0, got ({u}, {h})"
        )));
    }
    Ok(spec.g(u, h))
}

/// Cell motility d(x), the 1D reduction of the diffusion tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diffusivity {
    Constant(f64),
    Field(Vec<f64>),
}

impl Diffusivity {
    pub fn nodal(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Diffusivity::Constant(d) => Ok(vec![*d; n]),
            Diffusivity::Field(v) if v.len() == n => Ok(v.clone()),
            Diffusivity::Field(v) => Err(config_err(format!(
                "diffusivity field has {} values for {n} cells",
                v.len()
            ))),
        }
    }

    pub fn constant(&self) -> Option<f64> {
        match self {
            Diffusivity::Constant(d) => Some(*d),
            Diffusivity::Field(v) => {
                let first = *v.first()?;
                v.iter().all(|&d| d == first).then_some(first)
            }
        }
    }

    /// `(D1, D2)`, the parabolicity bounds.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Diffusivity::Constant(d) => (*d, *d),
            Diffusivity::Field(v) => v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
                (lo.min(d), hi.max(d))
            }),
        }
    }
}

/// Run-level qualifiers attached to a validated parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApplicabilityFlag {
    /// alpha exceeds 1 + beta; allowed only in blow-up studies.
    BlowUpStudy,
    /// Source form outside the ceiling assumptions.
    InstabilityPermitted,
    /// Sign-changing kernel; the existence theory does not cover it.
    TheoryNotApplicable,
    /// mu ≡ 0.
    TransportOnly,
}

impl std::fmt::Display for ApplicabilityFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ApplicabilityFlag::BlowUpStudy => "blow-up-study",
            ApplicabilityFlag::InstabilityPermitted => "instability-permitted",
            ApplicabilityFlag::TheoryNotApplicable => "theory-not-applicable",
            ApplicabilityFlag::TransportOnly => "transport-only",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub diffusion: Diffusivity,
    pub d_h: f64,
    pub growth: GrowthSpec,
    pub source: SourceSpec,
    pub kernel: KernelSpec,
    pub blow_up_study: bool,
}

/// Upper end of the u-range sampled when checking g at config load.
pub const SOURCE_CHECK_U_MAX: f64 = 10.0;

impl ModelParams {
    /// Defaults of the numerical experiments: `mu(h) = mu0/(1+h)`,
    /// `g = u(1-h)`, `d = D_H = 1`.
    pub fn standard(alpha: f64, beta: f64, mu0: f64, kernel: KernelSpec) -> Self {
        Self {
            alpha,
            beta,
            diffusion: Diffusivity::Constant(1.0),
            d_h: 1.0,
            growth: GrowthSpec::Rational { mu0 },
            source: SourceSpec::logistic_acid(),
            kernel,
            blow_up_study: false,
        }
    }

    pub fn h_ceiling(&self) -> f64 {
        self.source.h_ceiling
    }

    pub fn validate(&self) -> Result<Vec<ApplicabilityFlag>> {
        let mut flags = Vec::new();
        if !(self.alpha >= 1.0 && self.beta >= 1.0) {
            return Err(config_err(format!(
                "exponents need alpha >= 1 and beta >= 1, got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        if self.alpha > 1.0 + self.beta {
            if self.blow_up_study {
                flags.push(ApplicabilityFlag::BlowUpStudy);
            } else {
                return Err(config_err(format!(
                    "well-posedness condition alpha <= 1 + beta violated \
                     (set blow_up_study = true to run anyway); got alpha = {}, beta = {}",
                    self.alpha, self.beta
                )));
            }
        }
        let (d1, d2) = self.diffusion.bounds();
        if !(d1.is_finite() && d2.is_finite() && d1 > 0.0) {
            return Err(config_err(format!(
                "cell diffusivity must be positive and bounded, got range [{d1}, {d2}]"
            )));
        }
        if !(self.d_h.is_finite() && self.d_h > 0.0) {
            return Err(config_err(format!("D_H must be positive, got {}", self.d_h)));
        }
        self.kernel.validate()?;
        if self.kernel.is_sign_changing() {
            flags.push(ApplicabilityFlag::TheoryNotApplicable);
        }

        let h_ceiling = self.h_ceiling();
        let source = self.source.check(SOURCE_CHECK_U_MAX)?;
        if source.claims_compliance {
            if !source.violations.is_empty() {
                return Err(config_err(format!(
                    "source violates 0 <= g(u,0) and g(u,H) <= 0: {}",
                    source.violations.join("; ")
                )));
            }
        } else {
            flags.push(ApplicabilityFlag::InstabilityPermitted);
        }

        if self.growth.is_zero() {
            self.growth.bounds(h_ceiling)?;
            flags.push(ApplicabilityFlag::TransportOnly);
        } else {
            let b = self.growth.bounds(h_ceiling)?;
            if !(b.delta > 0.0) {
                return Err(config_err(format!(
                    "mu must stay >= delta > 0 on [0, H]; sampled minimum {}",
                    b.delta
                )));
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum CellProfile {
    /// Half-Gaussian bulk at `x_l` with a linear ramp down to `x_r`.
    BulkRamp { x_l: f64, x_r: f64 },
    Constant { value: f64 },
    Tabulated { x: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtonProfile {
    Constant { value: f64 },
    Tabulated { x: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub u: CellProfile,
    pub h: ProtonProfile,
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self {
            u: CellProfile::BulkRamp {
                x_l: -5.0,
                x_r: 5.0,
            },
            h: ProtonProfile::Constant { value: 0.0 },
        }
    }
}

/// Left branch of the default profile, valid on `x_l < x <= 0`.
pub(crate) fn bulk_branch(x: f64, x_l: f64) -> f64 {
    (-(x - x_l) * (x - x_l)).exp()
}

/// Right branch of the default profile, valid on `0 < x <= x_r`.
pub(crate) fn ramp_branch(x: f64, x_l: f64, x_r: f64) -> f64 {
    (-x_l * x_l).exp() * (1.0 - x / x_r)
}

pub(crate) fn bulk_ramp_profile(x: f64, x_l: f64, x_r: f64) -> f64 {
    if x > x_l && x <= 0.0 {
        bulk_branch(x, x_l)
    } else if x > 0.0 && x <= x_r {
        ramp_branch(x, x_l, x_r)
    } else {
        0.0
    }
}

pub fn eval_initial_u(ic: &InitialCondition, grid: &Grid1D) -> Result<Vec<f64>> {
    let a = grid.half_length();
    let u: Vec<f64> = match &ic.u {
        CellProfile::BulkRamp { x_l, x_r } => {
            if !(*x_l < 0.0 && *x_r > 0.0) {
                return Err(config_err(format!(
                    "default profile needs x_l < 0 < x_r, got x_l = {x_l}, x_r = {x_r}"
                )));
            }
            if *x_l < -a || *x_r > a {
                return Err(config_err(format!(
                    "default profile needs -a <= x_l and x_r <= a (a = {a})"
                )));
            }
            grid.nodes()
                .iter()
                .map(|&x| bulk_ramp_profile(x, *x_l, *x_r))
                .collect()
        }
        CellProfile::Constant { value } => vec![*value; grid.n_cells()],
        CellProfile::Tabulated { x, values } => {
            check_table("initial u", x, values)?;
            grid.nodes().iter().map(|&p| interp1(x, values, p)).collect()
        }
    };
    if u.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(config_err("initial u must be finite and nonnegative"));
    }
    if u.iter().all(|&v| v == 0.0) {
        return Err(config_err("initial u must not vanish identically"));
    }
    Ok(u)
}

pub fn eval_initial_h(ic: &InitialCondition, grid: &Grid1D, h_ceiling: f64) -> Result<Vec<f64>> {
    let h: Vec<f64> = match &ic.h {
        ProtonProfile::Constant { value } => vec![*value; grid.n_cells()],
        ProtonProfile::Tabulated { x, values } => {
            check_table("initial h", x, values)?;
            grid.nodes().iter().map(|&p| interp1(x, values, p)).collect()
        }
    };
    if h.iter().any(|&v| !(v.is_finite() && (0.0..=h_ceiling).contains(&v))) {
        return Err(config_err(format!("initial h must lie in [0, H = {h_ceiling}]")));
    }
    if h.iter().all(|&v| v == h_ceiling) {
        return Err(config_err("initial h must not equal H identically"));
    }
    Ok(h)
}

fn check_axis(name: &str, xs: &[f64]) -> Result<()> {
    if xs.len() < 2 {
        return Err(config_err(format!("{name} table needs at least two nodes")));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(config_err(format!("{name} nodes must be strictly increasing")));
    }
    Ok(())
}

fn check_table(name: &str, xs: &[f64], ys: &[f64]) -> Result<()> {
    check_axis(name, xs)?;
    if xs.len() != ys.len() {
        return Err(config_err(format!(
            "{name} table has {} nodes but {} values",
            xs.len(),
            ys.len()
        )));
    }
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(config_err(format!("{name} table has non-finite values")));
    }
    Ok(())
}

/// Bracketing interval index and weight for `x` on sorted `xs`, clamped.
fn locate(xs: &[f64], x: f64) -> (usize, f64) {
    let n = xs.len();
    if x <= xs[0] {
        return (0, 0.0);
    }
    if x >= xs[n - 1] {
        return (n - 2, 1.0);
    }
    let hi = xs.partition_point(|&p| p <= x).min(n - 1);
    let lo = hi - 1;
    (lo, (x - xs[lo]) / (xs[hi] - xs[lo]))
}

pub(crate) fn interp1(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let (i, w) = locate(xs, x);
    ys[i] * (1.0 - w) + ys[i + 1] * w
}

fn interp2(us: &[f64], hs: &[f64], values: &[f64], u: f64, h: f64) -> f64 {
    let (i, wu) = locate(us, u);
    let (j, wh) = locate(hs, h);
    let nh = hs.len();
    let v = |a: usize, b: usize| values[a * nh + b];
    (1.0 - wu) * ((1.0 - wh) * v(i, j) + wh * v(i, j + 1))
        + wu * ((1.0 - wh) * v(i + 1, j) + wh * v(i + 1, j + 1))
}

fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let step = 1e-6 * (1.0 + x.abs());
    (f(x + step) - f(x - step)) / (2.0 * step)
}
