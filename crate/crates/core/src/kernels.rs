//! Interaction kernels J, their grid stencils and the two convolution engines.
//!
//! The direct engine is a plain stencil sum. The spectral engine computes the
//! same linear convolution through a zero-padded cyclic FFT, so the two agree
//! to rounding.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::Grid1D;

/// Truncation radius of the logistic kernel; the tail mass beyond it is
/// `2 / (1 + e^40) < 1e-17`.
pub const LOGISTIC_RADIUS: f64 = 40.0;
/// Truncation radius of the Gaussian-type kernels in units of sigma.
pub const GAUSSIAN_RADIUS_SIGMAS: f64 = 8.0;

const QUAD_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `1/(2 rho)` on `[-rho, rho]`
    Uniform { rho: f64 },
    /// `1 / (2 + e^x + e^-x)`
    Logistic,
    Gaussian { sigma: f64 },
    /// Unit-mass Ricker-type profile `c (1 - x^2/(3 sigma^2)) exp(-x^2/(2 sigma^2))`,
    /// negative for `|x| > sqrt(3) sigma`.
    MexicanHat { sigma: f64 },
    /// `(1 + cos(pi x / rho)) / (2 rho)` on `[-rho, rho]`
    Cosine { rho: f64 },
    /// `3 (1 - x^2/rho^2) / (4 rho)` on `[-rho, rho]`
    Epanechnikov { rho: f64 },
    /// Local limit: `J * f = f`.
    Dirac,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_err(format!("kernel parameter {name} must be positive, got {v}")))
            }
        };
        match *self {
            KernelSpec::Uniform { rho } | KernelSpec::Cosine { rho } | KernelSpec::Epanechnikov { rho } => {
                ok(rho, "rho")
            }
            KernelSpec::Gaussian { sigma } | KernelSpec::MexicanHat { sigma } => ok(sigma, "sigma"),
            KernelSpec::Logistic | KernelSpec::Dirac => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            KernelSpec::Uniform { rho } => format!("uniform(rho={rho})"),
            KernelSpec::Logistic => "logistic".to_string(),
            KernelSpec::Gaussian { sigma } => format!("gaussian(sigma={sigma})"),
            KernelSpec::MexicanHat { sigma } => format!("mexican_hat(sigma={sigma})"),
            KernelSpec::Cosine { rho } => format!("cosine(rho={rho})"),
            KernelSpec::Epanechnikov { rho } => format!("epanechnikov(rho={rho})"),
            KernelSpec::Dirac => "dirac".to_string(),
        }
    }

    pub fn is_sign_changing(&self) -> bool {
        matches!(self, KernelSpec::MexicanHat { .. })
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self, KernelSpec::Dirac)
    }

    /// Radius beyond which the kernel is zero or carries less than 1e-10 of its mass.
    pub fn support_radius(&self) -> f64 {
        match *self {
            KernelSpec::Uniform { rho } | KernelSpec::Cosine { rho } | KernelSpec::Epanechnikov { rho } => rho,
            KernelSpec::Gaussian { sigma } | KernelSpec::MexicanHat { sigma } => GAUSSIAN_RADIUS_SIGMAS * sigma,
            KernelSpec::Logistic => LOGISTIC_RADIUS,
            KernelSpec::Dirac => 0.0,
        }
    }

    fn is_compact(&self) -> bool {
        matches!(
            self,
            KernelSpec::Uniform { .. } | KernelSpec::Cosine { .. } | KernelSpec::Epanechnikov { .. }
        )
    }

    /// Pointwise value; the Dirac family has none and returns NaN here.
    pub fn value(&self, x: f64) -> f64 {
        let ax = x.abs();
        match *self {
            KernelSpec::Uniform { rho } => {
                if ax <= rho {
                    0.5 / rho
                } else {
                    0.0
                }
            }
            KernelSpec::Logistic => {
                // (1/4) sech^2(x/2), written to avoid overflow for large |x|.
                let e = (-ax).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            KernelSpec::Gaussian { sigma } => {
                let z = x / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
            }
            KernelSpec::MexicanHat { sigma } => {
                let z2 = (x / sigma).powi(2);
                let c = 3.0 / (2.0 * sigma * (2.0 * PI).sqrt());
                c * (1.0 - z2 / 3.0) * (-0.5 * z2).exp()
            }
            KernelSpec::Cosine { rho } => {
                if ax <= rho {
                    (1.0 + (PI * x / rho).cos()) / (2.0 * rho)
                } else {
                    0.0
                }
            }
            KernelSpec::Epanechnikov { rho } => {
                if ax <= rho {
                    0.75 * (1.0 - (x / rho).powi(2)) / rho
                } else {
                    0.0
                }
            }
            KernelSpec::Dirac => f64::NAN,
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: f64) -> Result<f64> {
    if spec.is_dirac() {
        return Err(Error::Unsupported(
            "the dirac kernel has no pointwise value".to_string(),
        ));
    }
    spec.validate()?;
    Ok(spec.value(x))
}

/// `∫ J(x) dx` over the truncation window; the neglected tail is below 1e-10
/// for every family (below 1e-15 for the Gaussian types and the logistic).
pub fn kernel_mass(spec: &KernelSpec) -> f64 {
    if spec.is_dirac() {
        return 1.0;
    }
    2.0 * half_line_integral(spec, |x| spec.value(x))
}

/// `F(k) = ∫ J(x) cos(k x) dx`, i.e. `sqrt(2 pi)` times the Fourier transform
/// of J. This is the factor the linearized nonlocal term multiplies.
///
/// Closed forms of the untruncated kernels; the truncated tails change them by
/// less than 1e-10 (see [`fourier_factor_quadrature`]).
pub fn fourier_factor(spec: &KernelSpec, k: f64) -> f64 {
    match *spec {
        KernelSpec::Dirac => 1.0,
        KernelSpec::Uniform { rho } => sinc(k * rho),
        KernelSpec::Logistic => {
            let z = PI * k;
            if z.abs() < 1e-4 {
                1.0 - z * z / 6.0
            } else if z.abs() > 700.0 {
                0.0
            } else {
                z / z.sinh()
            }
        }
        KernelSpec::Gaussian { sigma } => (-0.5 * (k * sigma).powi(2)).exp(),
        KernelSpec::MexicanHat { sigma } => {
            let s = 0.5 * (k * sigma).powi(2);
            (1.0 + s) * (-s).exp()
        }
        KernelSpec::Cosine { rho } => {
            let z = k * rho;
            let gap = PI * PI - z * z;
            if gap.abs() < 1e-6 {
                // removable singularity at z = pi
                0.5 - 0.75 * (z.abs() - PI) / PI
            } else {
                sinc(z) * PI * PI / gap
            }
        }
        KernelSpec::Epanechnikov { rho } => {
            let z = k * rho;
            if z.abs() < 1e-3 {
                1.0 - z * z / 10.0
            } else {
                3.0 * (z.sin() - z * z.cos()) / (z * z * z)
            }
        }
    }
}

/// `F(k)` by adaptive quadrature over the truncated support.
pub fn fourier_factor_quadrature(spec: &KernelSpec, k: f64) -> f64 {
    if spec.is_dirac() {
        return 1.0;
    }
    2.0 * half_line_integral_k(spec, k, |x| spec.value(x) * (k * x).cos())
}

fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

/// `∫_0^R f` split into panels short enough that an oscillatory factor has at
/// most half a period per panel.
fn half_line_integral(spec: &KernelSpec, f: impl Fn(f64) -> f64) -> f64 {
    half_line_integral_k(spec, 0.0, f)
}

fn half_line_integral_k(spec: &KernelSpec, k: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = spec.support_radius();
    let mut width = r.min(1.0);
    if k.abs() > 0.0 {
        width = width.min(PI / k.abs());
    }
    let panels = (r / width).ceil().max(1.0) as usize;
    let h = r / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = p as f64 * h;
            let hi = if p + 1 == panels { r } else { lo + h };
            quadrature::integrate(&f, lo, hi, QUAD_TOL).integral
        })
        .sum()
}

/// How a field is continued outside `[-a, a]` before convolving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    /// The field vanishes outside the domain (convolution over the domain only).
    #[default]
    Zero,
    /// Even reflection across each wall, repeated periodically.
    Reflect,
}

/// Midpoint-sampled kernel weights `w_j = J(j dx)` for `|j| <= m`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelStencil {
    weights: Vec<f64>,
    half_width: usize,
    dx: f64,
    renormalized: bool,
    extension: Extension,
}

impl KernelStencil {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn renormalized(&self) -> bool {
        self.renormalized
    }

    pub fn extension(&self) -> Extension {
        self.extension
    }

    pub fn with_extension(mut self, extension: Extension) -> Self {
        self.extension = extension;
        self
    }

    /// Weight at signed offset `j`.
    pub fn weight(&self, j: isize) -> f64 {
        let m = self.half_width as isize;
        if j.abs() > m {
            0.0
        } else {
            self.weights[(j + m) as usize]
        }
    }

    /// Discrete mass `Σ w_j dx`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum::<f64>() * self.dx
    }
}

pub fn discretize(spec: &KernelSpec, grid: &Grid1D, renormalize: bool) -> Result<KernelStencil> {
    spec.validate()?;
    let dx = grid.dx();
    if spec.is_dirac() {
        return Ok(KernelStencil {
            weights: vec![1.0 / dx],
            half_width: 0,
            dx,
            renormalized: renormalize,
            extension: Extension::Zero,
        });
    }
    let radius = spec.support_radius().min(grid.domain().length());
    if radius < dx {
        return Err(config_err(format!(
            "kernel {} has truncation radius {radius} below the grid spacing {dx}",
            spec.name()
        )));
    }
    let m = (radius / dx + 1e-9).floor() as usize;
    let compact = spec.is_compact();
    let mut weights: Vec<f64> = (-(m as isize)..=m as isize)
        .map(|j| {
            let x = j as f64 * dx;
            // j*dx can overshoot the support edge by an ulp
            let x = if compact { x.clamp(-radius, radius) } else { x };
            spec.value(x)
        })
        .collect();
    if renormalize {
        let mass = weights.iter().sum::<f64>() * dx;
        if mass == 0.0 || !mass.is_finite() {
            return Err(config_err(format!(
                "kernel {} has zero discrete mass; cannot renormalize",
                spec.name()
            )));
        }
        weights.iter_mut().for_each(|w| *w /= mass);
    }
    Ok(KernelStencil {
        weights,
        half_width: m,
        dx,
        renormalized: renormalize,
        extension: Extension::Zero,
    })
}

/// Maps an out-of-range index onto `0..n` by repeated even reflection.
fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let r = i.rem_euclid(period) as usize;
    if r < n {
        r
    } else {
        2 * n - 1 - r
    }
}

fn check_len(f: &[f64], grid: &Grid1D) {
    assert_eq!(
        f.len(),
        grid.n_cells(),
        "field length does not match the grid"
    );
}

/// `(J*f)_i = Σ_j w_j f_{i-j} dx`.
pub fn convolve_direct(stencil: &KernelStencil, f: &[f64], grid: &Grid1D) -> Vec<f64> {
    check_len(f, grid);
    let mut out = vec![0.0; f.len()];
    convolve_direct_into(stencil, f, &mut out);
    out
}

pub(crate) fn convolve_direct_into(stencil: &KernelStencil, f: &[f64], out: &mut [f64]) {
    let n = f.len() as isize;
    let m = stencil.half_width as isize;
    let w = &stencil.weights;
    match stencil.extension {
        Extension::Zero => {
            for (i, o) in out.iter_mut().enumerate() {
                let i = i as isize;
                let j_lo = (i - n + 1).max(-m);
                let j_hi = i.min(m);
                let mut acc = 0.0;
                for j in j_lo..=j_hi {
                    acc += w[(j + m) as usize] * f[(i - j) as usize];
                }
                *o = acc * stencil.dx;
            }
        }
        Extension::Reflect => {
            // ext[t] = f[t - m] reflected, so f_{i-j} = ext[i + 2m - q] with q = j + m
            let m = m as usize;
            let ext: Vec<f64> = (0..f.len() + 2 * m)
                .map(|t| f[reflect_index(t as isize - m as isize, n as usize)])
                .collect();
            for (i, o) in out.iter_mut().enumerate() {
                let window = &ext[i..i + 2 * m + 1];
                let acc: f64 = w.iter().zip(window.iter().rev()).map(|(a, b)| a * b).sum();
                *o = acc * stencil.dx;
            }
        }
    }
}

pub fn convolve_spectral(stencil: &KernelStencil, f: &[f64], grid: &Grid1D) -> Vec<f64> {
    check_len(f, grid);
    let mut engine = SpectralConvolver::new(stencil, f.len());
    let mut out = vec![0.0; f.len()];
    engine.apply(f, &mut out);
    out
}

/// Zero-padded FFT convolution with a cached kernel spectrum for one field length.
pub struct SpectralConvolver {
    n: usize,
    half_width: usize,
    dx: f64,
    extension: Extension,
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex64>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for SpectralConvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralConvolver")
            .field("n", &self.n)
            .field("half_width", &self.half_width)
            .field("fft_len", &self.len)
            .finish()
    }
}

impl SpectralConvolver {
    pub fn new(stencil: &KernelStencil, n: usize) -> Self {
        let m = stencil.half_width;
        let extended = match stencil.extension {
            Extension::Zero => n,
            Extension::Reflect => n + 2 * m,
        };
        let len = (extended + 2 * m).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let mut kernel_hat = vec![Complex64::new(0.0, 0.0); len];
        for (q, &w) in stencil.weights.iter().enumerate() {
            kernel_hat[q] = Complex64::new(w, 0.0);
        }
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
        forward.process_with_scratch(&mut kernel_hat, &mut scratch);
        Self {
            n,
            half_width: m,
            dx: stencil.dx,
            extension: stencil.extension,
            len,
            forward,
            inverse,
            kernel_hat,
            buf: vec![Complex64::new(0.0, 0.0); len],
            scratch,
        }
    }

    pub fn apply(&mut self, f: &[f64], out: &mut [f64]) {
        assert_eq!(f.len(), self.n);
        let m = self.half_width;
        self.buf.fill(Complex64::new(0.0, 0.0));
        // shift = where f_0 sits in the padded buffer
        let shift = match self.extension {
            Extension::Zero => {
                for (b, &v) in self.buf.iter_mut().zip(f) {
                    b.re = v;
                }
                0
            }
            Extension::Reflect => {
                for t in 0..self.n + 2 * m {
                    let src = reflect_index(t as isize - m as isize, self.n);
                    self.buf[t].re = f[src];
                }
                m
            }
        };
        self.forward.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (b, k) in self.buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.inverse.process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = self.dx / self.len as f64;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.buf[i + m + shift].re * scale;
        }
    }
}

/// Stencils wider than this use the spectral engine inside the solver.
pub const SPECTRAL_THRESHOLD: usize = 64;

/// The engine a simulation loop holds on to.
#[derive(Debug)]
pub enum Convolver {
    Direct(KernelStencil),
    Spectral(SpectralConvolver),
}

impl Convolver {
    pub fn auto(stencil: &KernelStencil, n: usize) -> Self {
        if stencil.weights.len() > SPECTRAL_THRESHOLD {
            Convolver::Spectral(SpectralConvolver::new(stencil, n))
        } else {
            Convolver::Direct(stencil.clone())
        }
    }

    pub fn apply(&mut self, f: &[f64], out: &mut [f64]) {
        match self {
            Convolver::Direct(s) => convolve_direct_into(s, f, out),
            Convolver::Spectral(s) => s.apply(f, out),
        }
    }
}
