//! Velocity-jump particles under parabolic scaling.
//!
//! The turning kernel in one dimension is
//!
//! ```text
//! T(v, v') = M(v) (lambda0 + eps (b/|V|) v' h_x) - eps a v h_x
//! ```
//!
//! so the outgoing rate from `v'` is `lambda(v') = lambda0 + eps (b/|V|) v' h_x`
//! and the post-turn density is `M(v) - eps a v h_x / lambda(v')`. Particles are
//! advanced directly in macroscopic variables: speed `v / eps`, rate
//! `lambda / eps^2`, with the velocity-dependent rate realized by thinning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::Grid1D;

pub const NORMALIZATION_TOL: f64 = 1e-10;
/// Particles per independent random stream.
pub const CHUNK_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySpace1D {
    pub s1: f64,
    pub s2: f64,
}

impl VelocitySpace1D {
    pub fn new(s1: f64, s2: f64) -> Result<Self> {
        if !(s1 >= 0.0 && s2 > s1 && s2.is_finite()) {
            return Err(config_err(format!("speeds need 0 <= s1 < s2, got s1 = {s1}, s2 = {s2}")));
        }
        Ok(Self { s1, s2 })
    }

    /// `|V| = 2 (s2 - s1)`.
    pub fn measure(&self) -> f64 {
        2.0 * (self.s2 - self.s1)
    }

    pub fn contains(&self, v: f64) -> bool {
        let s = v.abs();
        s >= self.s1 - 1e-12 && s <= self.s2 + 1e-12
    }
}

/// Equilibrium velocity density on V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum EquilibriumDist {
    Uniform,
    /// Piecewise-linear in speed on each direction; `speeds` spans `[s1, s2]`.
    Tabulated {
        speeds: Vec<f64>,
        forward: Vec<f64>,
        backward: Vec<f64>,
    },
}

/// Piecewise-linear density on one branch, in speed.
#[derive(Debug, Clone, PartialEq)]
struct Branch {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl Branch {
    fn segments(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        self.nodes
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, y)| (x[0], x[1], y[0], y[1]))
    }

    /// `∫ s^k m(s) ds`, exact for linear segments.
    fn moment(&self, k: i32) -> f64 {
        self.segments()
            .map(|(s0, s1, m0, m1)| {
                let slope = (m1 - m0) / (s1 - s0);
                let c = m0 - slope * s0;
                let p = |s: f64| c * s.powi(k + 1) / (k + 1) as f64 + slope * s.powi(k + 2) / (k + 2) as f64;
                p(s1) - p(s0)
            })
            .sum()
    }
}

/// Resolved density: `M(v)` for `v = sigma s`, one branch per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedDist {
    forward: Branch,
    backward: Branch,
}

impl EquilibriumDist {
    pub fn resolve(&self, space: &VelocitySpace1D) -> Result<ResolvedDist> {
        let (speeds, fwd, bwd) = match self {
            EquilibriumDist::Uniform => {
                let m = 1.0 / space.measure();
                (vec![space.s1, space.s2], vec![m, m], vec![m, m])
            }
            EquilibriumDist::Tabulated {
                speeds,
                forward,
                backward,
            } => {
                if speeds.len() < 2 || forward.len() != speeds.len() || backward.len() != speeds.len() {
                    return Err(config_err("tabulated M needs >= 2 speeds and matching value columns"));
                }
                if speeds.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(config_err("tabulated M speeds must be strictly increasing"));
                }
                if (speeds[0] - space.s1).abs() > 1e-12 || (speeds[speeds.len() - 1] - space.s2).abs() > 1e-12 {
                    return Err(config_err("tabulated M speeds must span [s1, s2]"));
                }
                if forward.iter().chain(backward).any(|&m| !(m >= 0.0)) {
                    return Err(config_err("tabulated M must be nonnegative"));
                }
                (speeds.clone(), forward.clone(), backward.clone())
            }
        };
        let r = ResolvedDist {
            forward: Branch {
                nodes: speeds.clone(),
                values: fwd,
            },
            backward: Branch {
                nodes: speeds,
                values: bwd,
            },
        };
        let mass = r.moment(0);
        let mean = r.moment(1);
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(config_err(format!("∫M = {mass}, expected 1")));
        }
        if mean.abs() > NORMALIZATION_TOL {
            return Err(config_err(format!("∫vM = {mean}, expected 0")));
        }
        Ok(r)
    }
}

impl ResolvedDist {
    /// `∫ v^k M(v) dv`.
    pub fn moment(&self, k: i32) -> f64 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        self.forward.moment(k) + sign * self.backward.moment(k)
    }

    pub fn density(&self, v: f64) -> f64 {
        let branch = if v >= 0.0 { &self.forward } else { &self.backward };
        let s = v.abs();
        for (s0, s1, m0, m1) in branch.segments() {
            if s >= s0 && s <= s1 {
                return m0 + (m1 - m0) * (s - s0) / (s1 - s0);
            }
        }
        0.0
    }

    /// Smallest value of `M(v) / |v|` over V (infinite when `s1 = 0` is a node
    /// with positive density and no other constraint binds).
    fn min_density_over_speed(&self) -> f64 {
        let mut best = f64::INFINITY;
        for b in [&self.forward, &self.backward] {
            for (&s, &m) in b.nodes.iter().zip(&b.values) {
                if s > 0.0 {
                    best = best.min(m / s);
                } else if m <= 0.0 {
                    best = 0.0;
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurningParams {
    pub lambda0: f64,
    pub a_coef: f64,
    pub b_coef: f64,
    pub eps: f64,
}

impl TurningParams {
    pub fn unbiased(lambda0: f64, eps: f64) -> Self {
        Self {
            lambda0,
            a_coef: 0.0,
            b_coef: 0.0,
            eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(config_err(format!("lambda0 must be positive, got {}", self.lambda0)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(config_err(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.a_coef.is_finite() && self.b_coef.is_finite()) {
            return Err(config_err("bias coefficients must be finite"));
        }
        Ok(())
    }

    fn rate(&self, space: &VelocitySpace1D, v_prev: f64, h_x: f64) -> f64 {
        self.lambda0 + self.eps * self.b_coef / space.measure() * v_prev * h_x
    }
}

/// Complete kinetic model.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticModel {
    pub space: VelocitySpace1D,
    pub dist: ResolvedDist,
    pub turning: TurningParams,
}

impl KineticModel {
    pub fn new(space: VelocitySpace1D, dist: &EquilibriumDist, turning: TurningParams) -> Result<Self> {
        turning.validate()?;
        Ok(Self {
            dist: dist.resolve(&space)?,
            space,
            turning,
        })
    }

    /// Errors unless the turning rate and the post-turn density stay
    /// nonnegative for all `|h_x| <= max_grad`.
    pub fn check_bias(&self, max_grad: f64) -> Result<()> {
        let tp = &self.turning;
        let lambda_min = tp.lambda0 - tp.eps * tp.b_coef.abs() / self.space.measure() * self.space.s2 * max_grad;
        if !(lambda_min > 0.0) {
            return Err(config_err(format!(
                "turning rate turns nonpositive ({lambda_min}) at |h_x| = {max_grad}"
            )));
        }
        let tilt = tp.eps * tp.a_coef.abs() * max_grad / lambda_min;
        if tilt > self.dist.min_density_over_speed() {
            return Err(config_err(format!(
                "biased turning density turns negative at |h_x| = {max_grad}"
            )));
        }
        Ok(())
    }
}

/// `(D, chi)` of the diffusion limit:
///
/// ```text
/// D   = (1/lambda0) ∫ v^2 M
/// chi = (1/lambda0) (a 2 (s2^3 - s1^3) / 3 + (b / |V|) ∫ v^2 M)
/// ```
pub fn macroscopic_coefficients(model: &KineticModel) -> (f64, f64) {
    let tp = &model.turning;
    let second = model.dist.moment(2);
    let (s1, s2) = (model.space.s1, model.space.s2);
    let d = second / tp.lambda0;
    let chi = (tp.a_coef * 2.0 * (s2.powi(3) - s1.powi(3)) / 3.0 + tp.b_coef / model.space.measure() * second)
        / tp.lambda0;
    (d, chi)
}

/// Tilt of the post-turn density `M(v) - tilt v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityBias {
    pub tilt: f64,
}

impl VelocityBias {
    pub fn from_turning(tp: &TurningParams, space: &VelocitySpace1D, v_prev: f64, h_x: f64) -> Self {
        Self {
            tilt: tp.eps * tp.a_coef * h_x / tp.rate(space, v_prev, h_x),
        }
    }
}

/// Inverse-transform draw from `M(v) - tilt v` on the two branches.
pub fn sample_velocity<R: Rng + ?Sized>(dist: &ResolvedDist, bias: Option<VelocityBias>, rng: &mut R) -> Result<f64> {
    let tilt = bias.map_or(0.0, |b| b.tilt);
    // segment masses of the tilted density, forward branch first
    let mut total = 0.0;
    let mut table: Vec<(f64, f64, f64, f64, f64)> = Vec::with_capacity(8);
    for (sign, branch) in [(1.0, &dist.forward), (-1.0, &dist.backward)] {
        for (s0, s1, m0, m1) in branch.segments() {
            let p0 = m0 - tilt * sign * s0;
            let p1 = m1 - tilt * sign * s1;
            if p0 < -1e-15 || p1 < -1e-15 {
                return Err(config_err(format!("biased turning density negative (tilt {tilt})")));
            }
            let (p0, p1) = (p0.max(0.0), p1.max(0.0));
            let mass = 0.5 * (p0 + p1) * (s1 - s0);
            total += mass;
            table.push((sign, s0, s1 - s0, p0, p1));
        }
    }
    let mut r = rng.random::<f64>() * total;
    let last = table.len() - 1;
    for (idx, &(sign, s0, w, p0, p1)) in table.iter().enumerate() {
        let mass = 0.5 * (p0 + p1) * w;
        if r < mass || idx == last {
            let frac = linear_inverse(p0, p1, (r / mass.max(f64::MIN_POSITIVE)).clamp(0.0, 1.0));
            return Ok(sign * (s0 + frac * w));
        }
        r -= mass;
    }
    unreachable!("table is nonempty")
}

/// Fraction `f` in `[0, 1]` where the CDF of the linear density `p0 -> p1`
/// reaches `q` of its total.
fn linear_inverse(p0: f64, p1: f64, q: f64) -> f64 {
    let slope = p1 - p0;
    let mass = 0.5 * (p0 + p1);
    if q <= 0.0 {
        return 0.0;
    }
    if slope.abs() <= 1e-12 * (p0 + p1) {
        return q;
    }
    // p0 f + slope f^2 / 2 = q mass
    let disc = p0 * p0 + 2.0 * slope * q * mass;
    let f = 2.0 * q * mass / (p0 + disc.max(0.0).sqrt());
    f.clamp(0.0, 1.0)
}

/// Proton profile held fixed during a kinetic run; `h_x` is piecewise constant
/// per cell (central differences, one-sided at the walls).
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenField {
    grid: Grid1D,
    grad: Vec<f64>,
}

impl FrozenField {
    pub fn new(grid: Grid1D, h: &[f64]) -> Result<Self> {
        let n = grid.n_cells();
        if h.len() != n {
            return Err(Error::Domain(format!("h has {} values for {n} cells", h.len())));
        }
        let dx = grid.dx();
        let grad = (0..n)
            .map(|i| {
                let (l, r) = (i.saturating_sub(1), (i + 1).min(n - 1));
                (h[r] - h[l]) / ((r - l) as f64 * dx)
            })
            .collect();
        Ok(Self { grid, grad })
    }

    pub fn flat(grid: Grid1D) -> Self {
        let n = grid.n_cells();
        Self {
            grid,
            grad: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn gradient_at(&self, x: f64) -> f64 {
        self.grad[self.grid.cell_index(x)]
    }

    pub fn max_gradient(&self) -> f64 {
        self.grad.iter().fold(0.0, |m: f64, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub t: f64,
    pub seed: u64,
    /// Number of `simulate` calls so far; selects fresh random streams.
    pub epoch: u64,
}

impl ParticleEnsemble {
    /// `n` particles at `x0` with velocities drawn from M.
    pub fn point_cloud(n: usize, x0: f64, dist: &ResolvedDist, seed: u64) -> Result<Self> {
        let mut velocities = vec![0.0; n];
        for (c, chunk) in velocities.chunks_mut(CHUNK_SIZE).enumerate() {
            let mut rng = stream(seed, u64::MAX, c);
            for v in chunk {
                *v = sample_velocity(dist, None, &mut rng)?;
            }
        }
        Ok(Self {
            positions: vec![x0; n],
            velocities,
            t: 0.0,
            seed,
            epoch: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn stream(seed: u64, epoch: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_mul(1 << 32).wrapping_add(chunk as u64));
    rng
}

/// Advances every particle by `t_macro`. Each chunk of `CHUNK_SIZE` particles
/// owns a stream derived from `(seed, epoch, chunk)`, so the result does not
/// depend on how rayon schedules the chunks.
pub fn simulate(ensemble: &mut ParticleEnsemble, model: &KineticModel, h: &FrozenField, t_macro: f64) -> Result<()> {
    if !(t_macro >= 0.0) {
        return Err(Error::Domain(format!("t_macro must be nonnegative, got {t_macro}")));
    }
    let max_grad = h.max_gradient();
    model.check_bias(max_grad)?;
    let tp = model.turning;
    let space = model.space;
    let eps = tp.eps;
    let a = h.grid().half_length();
    let lambda_max = tp.lambda0 + eps * tp.b_coef.abs() / space.measure() * space.s2 * max_grad;
    let clock = Exp::new(lambda_max / (eps * eps)).map_err(|e| Error::Domain(e.to_string()))?;
    let (seed, epoch) = (ensemble.seed, ensemble.epoch);

    let results: Vec<Result<()>> = ensemble
        .positions
        .par_chunks_mut(CHUNK_SIZE)
        .zip(ensemble.velocities.par_chunks_mut(CHUNK_SIZE))
        .enumerate()
        .map(|(c, (xs, vs))| {
            let mut rng = stream(seed, epoch, c);
            for (x, v) in xs.iter_mut().zip(vs.iter_mut()) {
                let mut t = 0.0;
                loop {
                    let wait: f64 = clock.sample(&mut rng);
                    let dt = wait.min(t_macro - t);
                    *x += *v / eps * dt;
                    reflect(x, v, a);
                    t += dt;
                    if t >= t_macro {
                        break;
                    }
                    let h_x = h.gradient_at(*x);
                    let rate = tp.rate(&space, *v, h_x);
                    if rng.random::<f64>() * lambda_max < rate {
                        let bias = VelocityBias::from_turning(&tp, &space, *v, h_x);
                        *v = sample_velocity(&model.dist, Some(bias), &mut rng)?;
                    }
                }
            }
            Ok(())
        })
        .collect();
    results.into_iter().collect::<Result<()>>()?;
    ensemble.t += t_macro;
    ensemble.epoch += 1;
    Ok(())
}

fn reflect(x: &mut f64, v: &mut f64, a: f64) {
    loop {
        if *x > a {
            *x = 2.0 * a - *x;
            *v = -*v;
        } else if *x < -a {
            *x = -2.0 * a - *x;
            *v = -*v;
        } else {
            break;
        }
    }
}

/// Particle density per cell, `count / (N dx)`.
pub fn histogram(positions: &[f64], grid: &Grid1D) -> Vec<f64> {
    let mut counts = vec![0usize; grid.n_cells()];
    for &x in positions {
        counts[grid.cell_index(x)] += 1;
    }
    let norm = 1.0 / (positions.len().max(1) as f64 * grid.dx());
    counts.into_iter().map(|c| c as f64 * norm).collect()
}

/// L1 distance between the particle histogram and the PDE density, both
/// normalized to unit mass.
pub fn compare_to_pde(positions: &[f64], pde: &[f64], grid: &Grid1D) -> Result<f64> {
    if pde.len() != grid.n_cells() {
        return Err(Error::Domain(format!(
            "PDE field has {} values for {} cells",
            pde.len(),
            grid.n_cells()
        )));
    }
    let hist = histogram(positions, grid);
    let mass = grid.integrate(pde);
    if !(mass > 0.0) {
        return Err(Error::Domain("PDE field has no mass".into()));
    }
    Ok(hist
        .iter()
        .zip(pde)
        .map(|(p, q)| (p - q / mass).abs())
        .sum::<f64>()
        * grid.dx())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid, Domain1D};

    fn unit_model(turning: TurningParams) -> KineticModel {
        KineticModel::new(VelocitySpace1D::new(0.0, 1.0).unwrap(), &EquilibriumDist::Uniform, turning).unwrap()
    }

    #[test]
    fn coefficient_examples() {
        let m = unit_model(TurningParams::unbiased(1.0, 0.1));
        let (d, chi) = macroscopic_coefficients(&m);
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(chi, 0.0);

        let m = unit_model(TurningParams {
            lambda0: 1.0,
            a_coef: 0.0,
            b_coef: 2.0,
            eps: 0.1,
        });
        let (d, chi) = macroscopic_coefficients(&m);
        assert!((chi - d).abs() < 1e-15);
    }

    #[test]
    fn tabulated_matches_uniform() {
        let space = VelocitySpace1D::new(0.5, 1.5).unwrap();
        let tab = EquilibriumDist::Tabulated {
            speeds: vec![0.5, 1.0, 1.5],
            forward: vec![0.5; 3],
            backward: vec![0.5; 3],
        };
        let a = tab.resolve(&space).unwrap();
        let b = EquilibriumDist::Uniform.resolve(&space).unwrap();
        for k in 0..4 {
            assert!((a.moment(k) - b.moment(k)).abs() < 1e-14);
        }
        // ∫ v^2 M = (s2^3 - s1^3) / (3 (s2 - s1))
        assert!((b.moment(2) - (1.5f64.powi(3) - 0.125) / 3.0).abs() < 1e-14);

        let skew = EquilibriumDist::Tabulated {
            speeds: vec![0.5, 1.5],
            forward: vec![1.0, 1.0],
            backward: vec![0.0, 0.0],
        };
        let err = skew.resolve(&space).unwrap_err().to_string();
        assert!(err.contains("∫vM"), "{err}");
    }

    #[test]
    fn unbiased_moments() {
        let m = unit_model(TurningParams::unbiased(1.0, 0.1));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = sample_velocity(&m.dist, None, &mut rng).unwrap();
            s1 += v;
            s2 += v * v;
        }
        let (mean, second) = (s1 / n as f64, s2 / n as f64);
        let sigma = (1.0f64 / 3.0).sqrt();
        assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt());
        // Var(v^2) = E v^4 - (E v^2)^2 = 1/5 - 1/9
        let sigma2 = (1.0f64 / 5.0 - 1.0 / 9.0).sqrt();
        assert!((second - 1.0 / 3.0).abs() < 3.0 * sigma2 / (n as f64).sqrt());
    }

    #[test]
    fn biased_draws_drift_down_gradient() {
        let m = unit_model(TurningParams {
            lambda0: 1.0,
            a_coef: 1.0,
            b_coef: 0.0,
            eps: 0.1,
        });
        let bias = VelocityBias::from_turning(&m.turning, &m.space, 0.3, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| sample_velocity(&m.dist, Some(bias), &mut rng).unwrap()).sum::<f64>() / n as f64;
        // E v = -tilt ∫ v^2 dv over V = -tilt 2/3
        let expected = -bias.tilt * 2.0 / 3.0;
        assert!(mean < 0.0);
        assert!((mean - expected).abs() < 4.0 * 0.58 / (n as f64).sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn excessive_bias_rejected() {
        let m = unit_model(TurningParams {
            lambda0: 1.0,
            a_coef: 50.0,
            b_coef: 0.0,
            eps: 0.5,
        });
        assert!(m.check_bias(1.0).is_err());
        assert!(m.check_bias(0.0).is_ok());
    }

    #[test]
    fn mass_and_domain_preserved() {
        let grid = build_grid(Domain1D::new(1.0).unwrap(), 20).unwrap();
        let m = unit_model(TurningParams::unbiased(1.0, 0.2));
        let mut ens = ParticleEnsemble::point_cloud(10_000, 0.0, &m.dist, 11).unwrap();
        simulate(&mut ens, &m, &FrozenField::flat(grid.clone()), 2.0).unwrap();
        assert_eq!(ens.len(), 10_000);
        assert!(ens.positions.iter().all(|x| x.abs() <= 1.0));
        assert!(ens.velocities.iter().all(|&v| m.space.contains(v)));
        assert!((grid.integrate(&histogram(&ens.positions, &grid)) - 1.0).abs() < 1e-12);
        assert_eq!(ens.epoch, 1);
    }

    #[test]
    fn identical_inputs_compare_to_zero() {
        let grid = build_grid(Domain1D::new(1.0).unwrap(), 10).unwrap();
        let positions: Vec<f64> = grid.nodes().to_vec();
        let pde = vec![3.0; 10];
        assert!(compare_to_pde(&positions, &pde, &grid).unwrap() < 1e-12);
    }

    #[test]
    fn linear_inverse_is_cdf_inverse() {
        for &(p0, p1) in &[(1.0, 1.0), (0.2, 1.8), (1.5, 0.0), (0.0, 2.0)] {
            for q in [0.0, 0.1, 0.5, 0.9, 1.0] {
                let f = linear_inverse(p0, p1, q);
                let cdf = p0 * f + 0.5 * (p1 - p0) * f * f;
                assert!((cdf - q * 0.5 * (p0 + p1)).abs() < 1e-12);
            }
        }
    }
}
