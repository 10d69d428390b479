//! Homogeneous equilibria, dispersion relations and instability classification.
//!
//! Linearizing at `(1, h*)` with perturbations `~ cos(k x)` gives a 2x2
//! Jacobian with
//!
//! ```text
//! tr  = -(d + D_H) k^2 - beta mu(h*) F(k) + g_h
//! det = d D_H k^4 + (d (g_u - g_h) + beta mu(h*) F(k) D_H) k^2 - beta mu(h*) F(k) g_h
//! ```
//!
//! where `F(k) = ∫ J(x) cos(k x) dx` (`F ≡ 1` for the local model).

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernels::{fourier_factor, KernelSpec};
use crate::model::{ModelParams, SourceSpec};

pub const H_STAR_TOL: f64 = 1e-12;
pub const BRACKET_LIMIT: f64 = 1e6;
const UNIQUENESS_SUBINTERVALS: usize = 1000;
pub const MARGINAL_TOL: f64 = 1e-10;
pub const CRITICAL_TOL: f64 = 1e-10;
/// Samples per lattice interval when scanning for continuous-k sign changes.
const SCAN_REFINEMENT: usize = 16;

/// Root of `g(1, h) = 0` on `h > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HStar {
    pub h_star: f64,
    /// Sign changes of `g(1, ·)` on the bracket besides the returned root.
    pub extra_roots: usize,
}

/// Brackets a sign change of `g(1, ·)` starting from `[0, h_hi]` and doubling
/// `h_hi` up to `BRACKET_LIMIT`, then bisects to `|g(1, h*)| <= H_STAR_TOL`.
pub fn find_h_star(g: &SourceSpec, h_hi: f64) -> Result<HStar> {
    let f = |h: f64| g.g(1.0, h);
    let f0 = f(0.0);
    if f0 == 0.0 {
        return Err(Error::NoEquilibrium("g(1, 0) = 0: no positive root isolated".into()));
    }
    let mut hi = if h_hi > 0.0 { h_hi } else { 1.0 };
    while f(hi).signum() == f0.signum() {
        if hi >= BRACKET_LIMIT {
            return Err(Error::NoEquilibrium(format!(
                "g(1, h) keeps the sign of g(1, 0) = {f0} on [0, {BRACKET_LIMIT}]"
            )));
        }
        hi = (2.0 * hi).min(BRACKET_LIMIT);
    }
    let bracket = hi;
    let (mut lo, mut hi) = (0.0, hi);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..400 {
        mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= H_STAR_TOL || hi - lo <= f64::EPSILON * mid.abs() {
            break;
        }
        if fm.signum() == f0.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if !(f(mid).abs() <= H_STAR_TOL) {
        return Err(Error::NoEquilibrium(format!(
            "bisection stalled at h = {mid} with g(1, h) = {}",
            f(mid)
        )));
    }

    let step = bracket / UNIQUENESS_SUBINTERVALS as f64;
    let mut changes = 0usize;
    let mut prev = f0;
    for i in 1..=UNIQUENESS_SUBINTERVALS {
        let v = f(i as f64 * step);
        if v != 0.0 && prev != 0.0 && v.signum() != prev.signum() {
            changes += 1;
        }
        if v != 0.0 {
            prev = v;
        }
    }
    Ok(HStar {
        h_star: mid,
        extra_roots: changes.saturating_sub(1),
    })
}

/// Homogeneous steady state and the derivatives the linearization needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub u_star: f64,
    pub h_star: f64,
    pub dg_du: f64,
    pub dg_dh: f64,
    pub mu: f64,
    pub dmu_dh: f64,
    /// False when the uniqueness scan found further roots of `g(1, ·)`.
    pub unique: bool,
}

impl Equilibrium {
    /// The `u* = 1` branch.
    pub fn coexistence(params: &ModelParams) -> Result<Self> {
        let root = find_h_star(&params.source, params.h_ceiling().max(1.0))?;
        Ok(Self::at(params, 1.0, root.h_star, root.extra_roots == 0))
    }

    /// The trivial branch `(0, h**)` with `g(0, h**) = 0`; `None` if the
    /// source has no such root.
    pub fn trivial(params: &ModelParams) -> Option<Self> {
        let f = |h: f64| params.source.g(0.0, h);
        let h = if f(0.0) == 0.0 {
            0.0
        } else {
            bisect_zero(f, params.h_ceiling().max(1.0))?
        };
        Some(Self::at(params, 0.0, h, true))
    }

    fn at(params: &ModelParams, u: f64, h: f64, unique: bool) -> Self {
        Self {
            u_star: u,
            h_star: h,
            dg_du: params.source.dg_du(u, h),
            dg_dh: params.source.dg_dh(u, h),
            mu: params.growth.mu(h),
            dmu_dh: params.growth.dmu_dh(h),
            unique,
        }
    }

    /// Sign check for the trivial branch: stable in h iff `∂h g(0, h**) < 0`.
    pub fn trivial_branch_h_stable(&self) -> bool {
        self.dg_dh < 0.0
    }
}

fn bisect_zero(f: impl Fn(f64) -> f64, start: f64) -> Option<f64> {
    let f0 = f(0.0);
    let mut hi = start;
    while f(hi).signum() == f0.signum() {
        if hi >= BRACKET_LIMIT {
            return None;
        }
        hi *= 2.0;
    }
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid).signum() == f0.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// `(-beta mu(h*), ∂h g(1, h*))`.
pub fn local_eigenvalues(eq: &Equilibrium, params: &ModelParams) -> (f64, f64) {
    (-params.beta * eq.mu, eq.dg_dh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeClass {
    Stable,
    /// Real positive rate at `k != 0`.
    Turing,
    /// `tr >= 0` at `k = 0`.
    Hopf,
    /// `tr >= 0` at `k != 0` with `det > 0`.
    Wave,
    /// Real positive rate at `k = 0` (`det <= 0`): the kinetics alone are unstable.
    Homogeneous,
}

impl std::fmt::Display for ModeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModeClass::Stable => "stable",
            ModeClass::Turing => "turing",
            ModeClass::Hopf => "hopf",
            ModeClass::Wave => "wave",
            ModeClass::Homogeneous => "homogeneous",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionPoint {
    pub k: f64,
    pub fourier: f64,
    pub trace: f64,
    pub determinant: f64,
    pub lambda1: Complex64,
    pub lambda2: Complex64,
    pub class: ModeClass,
    /// `|tr| <= MARGINAL_TOL`.
    pub marginal: bool,
}

impl DispersionPoint {
    /// Largest real part of the two rates.
    pub fn growth_rate(&self) -> f64 {
        self.lambda1.re.max(self.lambda2.re)
    }
}

fn constant_d(params: &ModelParams) -> f64 {
    params
        .diffusion
        .constant()
        .unwrap_or_else(|| params.diffusion.bounds().1)
}

/// Trace and determinant for a given Fourier factor.
pub fn trace_det(eq: &Equilibrium, params: &ModelParams, k: f64, f: f64) -> (f64, f64) {
    let d = constant_d(params);
    let dh = params.d_h;
    let bmf = params.beta * eq.mu * f;
    let k2 = k * k;
    let tr = -(d + dh) * k2 - bmf + eq.dg_dh;
    let det = d * dh * k2 * k2 + (d * (eq.dg_du - eq.dg_dh) + bmf * dh) * k2 - bmf * eq.dg_dh;
    (tr, det)
}

/// Roots of `l^2 - tr l + det`, avoiding cancellation in the smaller one.
pub fn eigenvalues(tr: f64, det: f64) -> (Complex64, Complex64) {
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let q = 0.5 * (tr + tr.signum() * s);
        if q == 0.0 {
            return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        }
        let (a, b) = (q, det / q);
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        (Complex64::new(hi, 0.0), Complex64::new(lo, 0.0))
    } else {
        let im = 0.5 * (-disc).sqrt();
        (Complex64::new(0.5 * tr, im), Complex64::new(0.5 * tr, -im))
    }
}

fn classify_mode(k: f64, tr: f64, det: f64) -> ModeClass {
    let at_zero = k == 0.0;
    if tr < 0.0 && det > 0.0 {
        ModeClass::Stable
    } else if det <= 0.0 {
        if at_zero {
            ModeClass::Homogeneous
        } else {
            ModeClass::Turing
        }
    } else if at_zero {
        ModeClass::Hopf
    } else {
        ModeClass::Wave
    }
}

fn point(eq: &Equilibrium, params: &ModelParams, k: f64, f: f64) -> DispersionPoint {
    let (tr, det) = trace_det(eq, params, k, f);
    let (lambda1, lambda2) = eigenvalues(tr, det);
    DispersionPoint {
        k,
        fourier: f,
        trace: tr,
        determinant: det,
        lambda1,
        lambda2,
        class: classify_mode(k, tr, det),
        marginal: tr.abs() <= MARGINAL_TOL,
    }
}

/// Local competition (`F ≡ 1`).
pub fn dispersion_local(eq: &Equilibrium, params: &ModelParams, k: f64) -> DispersionPoint {
    point(eq, params, k, 1.0)
}

/// Nonlocal competition through the kernel's Fourier factor.
pub fn dispersion_nonlocal(eq: &Equilibrium, params: &ModelParams, k: f64) -> DispersionPoint {
    point(eq, params, k, fourier_factor(&params.kernel, k))
}

/// `F(k)` at which `det(k) = 0` for fixed k > 0:
///
/// ```text
/// F_c(k) = -(d D_H k^4 + d (g_u - g_h) k^2) / (beta mu(h*) (D_H k^2 - g_h))
/// ```
pub fn turing_threshold(eq: &Equilibrium, params: &ModelParams, k: f64) -> f64 {
    let d = constant_d(params);
    let k2 = k * k;
    -(d * params.d_h * k2 * k2 + d * (eq.dg_du - eq.dg_dh) * k2)
        / (params.beta * eq.mu * (params.d_h * k2 - eq.dg_dh))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingKind {
    Trace,
    Determinant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub k: f64,
    pub kind: CrossingKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstabilityReport {
    pub equilibrium: Equilibrium,
    pub half_length: f64,
    /// Lattice modes `k = pi z / a`, `z = 0..=z_max`, in increasing k.
    pub modes: Vec<DispersionPoint>,
    pub stable: bool,
    /// Continuous-k zeros of tr or det in `[0, pi z_max / a]`, sorted by k.
    pub critical: Vec<CriticalPoint>,
    pub notes: Vec<String>,
}

impl InstabilityReport {
    pub fn unstable_modes(&self) -> impl Iterator<Item = (usize, &DispersionPoint)> {
        self.modes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.class != ModeClass::Stable)
    }

    /// Overall label: the first unstable class in order of k, or stable.
    pub fn verdict(&self) -> ModeClass {
        self.unstable_modes()
            .map(|(_, p)| p.class)
            .next()
            .unwrap_or(ModeClass::Stable)
    }
}

/// Which Fourier factor the classifier uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Competition {
    Local,
    Nonlocal,
}

/// Lattice sweep plus the continuous-k critical set.
pub fn classify(params: &ModelParams, eq: &Equilibrium, a: f64, z_max: usize) -> Result<InstabilityReport> {
    classify_with(params, eq, a, z_max, Competition::Nonlocal)
}

pub fn classify_with(
    params: &ModelParams,
    eq: &Equilibrium,
    a: f64,
    z_max: usize,
    competition: Competition,
) -> Result<InstabilityReport> {
    if z_max == 0 {
        return Err(crate::error::config_err("z_max must be at least 1"));
    }
    if !(a > 0.0) {
        return Err(Error::Domain(format!("half-length must be positive, got {a}")));
    }
    let kernel = match competition {
        Competition::Local => KernelSpec::Dirac,
        Competition::Nonlocal => params.kernel.clone(),
    };
    let dk = PI / a;
    let modes: Vec<DispersionPoint> = (0..=z_max)
        .map(|z| {
            let k = z as f64 * dk;
            point(eq, params, k, fourier_factor(&kernel, k))
        })
        .collect();
    let stable = modes.iter().all(|p| p.class == ModeClass::Stable);

    let tr_at = |k: f64| trace_det(eq, params, k, fourier_factor(&kernel, k)).0;
    let det_at = |k: f64| trace_det(eq, params, k, fourier_factor(&kernel, k)).1;
    let samples = z_max * SCAN_REFINEMENT;
    let step = dk / SCAN_REFINEMENT as f64;
    let mut critical = Vec::new();
    let mut prev_k = 0.0;
    let (mut prev_tr, mut prev_det) = (tr_at(0.0), det_at(0.0));
    for s in 1..=samples {
        let k = s as f64 * step;
        let (tr, det) = (tr_at(k), det_at(k));
        if crosses(prev_tr, tr) {
            critical.push(CriticalPoint {
                k: bisect_sign(&tr_at, prev_k, k),
                kind: CrossingKind::Trace,
            });
        }
        if crosses(prev_det, det) {
            critical.push(CriticalPoint {
                k: bisect_sign(&det_at, prev_k, k),
                kind: CrossingKind::Determinant,
            });
        }
        prev_k = k;
        prev_tr = tr;
        prev_det = det;
    }
    critical.sort_by(|x, y| x.k.total_cmp(&y.k));

    let mut notes = Vec::new();
    if eq.dg_dh < 0.0 && eq.mu > 0.0 && fourier_factor(&kernel, 0.0) > 0.0 {
        notes.push(
            "hopf condition at k = 0 unsatisfiable under current assumptions (needs dg/dh > 0)"
                .to_string(),
        );
    }
    if !eq.unique {
        notes.push("g(1, h) has further roots; h* is not unique".to_string());
    }
    if modes.iter().any(|p| p.marginal) {
        notes.push(format!("marginal modes with |tr| <= {MARGINAL_TOL}"));
    }
    Ok(InstabilityReport {
        equilibrium: eq.clone(),
        half_length: a,
        modes,
        stable,
        critical,
        notes,
    })
}

fn crosses(a: f64, b: f64) -> bool {
    (a < 0.0 && b >= 0.0) || (a >= 0.0 && b < 0.0)
}

fn bisect_sign(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let neg_lo = f(lo) < 0.0;
    while hi - lo > CRITICAL_TOL {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < 0.0) == neg_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GrowthSpec, SourceForm};

    fn base(beta: f64, mu0: f64, kernel: KernelSpec) -> ModelParams {
        ModelParams::standard(2.0, beta, mu0, kernel)
    }

    #[test]
    fn h_star_examples() {
        let r = find_h_star(&SourceSpec::logistic_acid(), 1.0).unwrap();
        assert!((r.h_star - 1.0).abs() < 1e-12);
        assert_eq!(r.extra_roots, 0);

        let g = SourceSpec::new(SourceForm::Destabilizing { gamma: 0.5 }, 1.0);
        let r = find_h_star(&g, 1.0).unwrap();
        assert!((r.h_star - (1.0 + 3f64.sqrt())).abs() < 1e-10);
        assert!(g.g(1.0, r.h_star).abs() <= H_STAR_TOL);

        let g = SourceSpec::new(SourceForm::Relaxation { rate: -1.0, h_star: -5.0 }, 1.0);
        assert!(g.g(1.0, 3.0) > 0.0);
        assert!(matches!(find_h_star(&g, 1.0), Err(Error::NoEquilibrium(_))));
    }

    #[test]
    fn local_eigenvalue_examples() {
        let p = base(1.0, 1.0, KernelSpec::Logistic);
        let eq = Equilibrium::coexistence(&p).unwrap();
        assert_eq!(local_eigenvalues(&eq, &p), (-0.5, -1.0));

        let p = base(20.0, 100.0, KernelSpec::Logistic);
        let eq = Equilibrium::coexistence(&p).unwrap();
        let (l1, l2) = local_eigenvalues(&eq, &p);
        assert!((l1 + 1000.0).abs() < 1e-9 && (l2 + 1.0).abs() < 1e-12);

        let mut p = base(1.0, 1.0, KernelSpec::Logistic);
        p.source = SourceSpec::new(SourceForm::Destabilizing { gamma: 0.5 }, 1.0);
        let eq = Equilibrium::coexistence(&p).unwrap();
        assert!((local_eigenvalues(&eq, &p).1 + 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn dispersion_local_example() {
        let p = base(1.0, 1.0, KernelSpec::Dirac);
        let eq = Equilibrium::coexistence(&p).unwrap();
        let pt = dispersion_local(&eq, &p, 1.0);
        assert!((pt.trace + 3.5).abs() < 1e-12);
        assert!((pt.determinant - 3.0).abs() < 1e-12);
        assert_eq!(pt.class, ModeClass::Stable);

        let z = dispersion_local(&eq, &p, 0.0);
        let (l1, l2) = local_eigenvalues(&eq, &p);
        let mut re = [z.lambda1.re, z.lambda2.re];
        re.sort_by(f64::total_cmp);
        assert!((re[0] - l1.min(l2)).abs() < 1e-12 && (re[1] - l1.max(l2)).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_reproduce_coefficients() {
        for &(tr, det) in &[(-3.5, 3.0), (1.0, 5.0), (-1e6, 1e-3), (2.0, -7.0), (0.0, 0.0)] {
            let (l1, l2) = eigenvalues(tr, det);
            let s = l1 + l2;
            let p = l1 * l2;
            assert!((s.re - tr).abs() <= 1e-10 * tr.abs().max(1.0));
            assert!((p.re - det).abs() <= 1e-10 * det.abs().max(1.0));
            assert!(s.im.abs() < 1e-12 && p.im.abs() <= 1e-10 * det.abs().max(1.0));
        }
    }

    #[test]
    fn nonlocal_dirac_and_zero_wavenumber_reduce() {
        let p = base(1.0, 1.0, KernelSpec::Dirac);
        let eq = Equilibrium::coexistence(&p).unwrap();
        for k in [0.0, 0.3, 1.0, 7.5] {
            assert_eq!(dispersion_nonlocal(&eq, &p, k), dispersion_local(&eq, &p, k));
        }
        let p = base(1.0, 1.0, KernelSpec::Gaussian { sigma: 1.0 });
        let a = dispersion_nonlocal(&eq, &p, 0.0);
        let b = dispersion_local(&eq, &p, 0.0);
        assert!((a.trace - b.trace).abs() < 1e-12 && (a.determinant - b.determinant).abs() < 1e-12);
    }

    #[test]
    fn uniform_kernel_turing_in_pattern_regime() {
        let p = base(20.0, 100.0, KernelSpec::Uniform { rho: 1.0 });
        let eq = Equilibrium::coexistence(&p).unwrap();
        let r = classify(&p, &eq, 20.0, 200).unwrap();
        assert!(!r.stable);
        assert_eq!(r.verdict(), ModeClass::Turing);
        assert!(!r.critical.is_empty());
        // first unstable band opens where sin(k)/k < 0, i.e. k > pi
        let first = r.critical.iter().find(|c| c.kind == CrossingKind::Determinant).unwrap();
        assert!(first.k > PI && first.k < 2.0 * PI, "{}", first.k);
    }

    #[test]
    fn positive_kernels_are_stable() {
        for kernel in [KernelSpec::Gaussian { sigma: 1.0 }, KernelSpec::Logistic, KernelSpec::Dirac] {
            let p = base(20.0, 100.0, kernel);
            let eq = Equilibrium::coexistence(&p).unwrap();
            let r = classify(&p, &eq, 20.0, 100).unwrap();
            assert!(r.stable, "{:?}", p.kernel);
            assert!(r.critical.is_empty());
            assert!(r.modes.windows(2).all(|w| w[0].k < w[1].k));
        }
    }

    #[test]
    fn trivial_branch_sign() {
        let p = base(1.0, 1.0, KernelSpec::Dirac);
        let t = Equilibrium::trivial(&p).unwrap();
        assert_eq!(t.u_star, 0.0);
        // g(0, h) = 0 for all h: the h-equation is neutral there
        assert!(!t.trivial_branch_h_stable());

        let mut p = base(1.0, 1.0, KernelSpec::Dirac);
        p.growth = GrowthSpec::Constant { mu0: 1.0 };
        p.source = SourceSpec::new(SourceForm::Relaxation { rate: 1.0, h_star: 0.5 }, 1.0);
        let t = Equilibrium::trivial(&p).unwrap();
        assert!((t.h_star - 0.5).abs() < 1e-12);
        assert!(t.trivial_branch_h_stable());
    }
}
