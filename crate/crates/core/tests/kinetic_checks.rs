use phtaxis_core::kinetic::{
    histogram, simulate, EquilibriumDist, FrozenField, KineticModel, ParticleEnsemble,
    TurningParams, VelocitySpace1D,
};
use phtaxis_core::model::{build_grid, Domain1D, Grid1D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn grid(a: f64, n: usize) -> Grid1D {
    build_grid(Domain1D::new(a).unwrap(), n).unwrap()
}

fn unbiased_model(eps: f64) -> KineticModel {
    KineticModel::new(
        VelocitySpace1D::new(0.0, 1.0).unwrap(),
        &EquilibriumDist::Uniform,
        TurningParams::unbiased(1.0, eps),
    )
    .unwrap()
}

/// Pearson statistic against equal expected counts, with its 1% critical value.
fn chi_squared_uniform(counts: &[usize]) -> (f64, f64) {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let crit = ChiSquared::new((counts.len() - 1) as f64).unwrap().inverse_cdf(0.99);
    (stat, crit)
}

#[test]
fn velocity_marginal_relaxes_to_uniform() {
    let model = unbiased_model(0.2);
    let g = grid(5.0, 50);
    let mut ens = ParticleEnsemble::point_cloud(40_000, 0.0, &model.dist, 11).unwrap();
    simulate(&mut ens, &model, &FrozenField::flat(g), 1.0).unwrap();
    let bins = 20;
    let mut counts = vec![0usize; bins];
    for &v in &ens.velocities {
        let b = (((v + 1.0) / 2.0) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let (stat, crit) = chi_squared_uniform(&counts);
    assert!(stat < crit, "chi2 = {stat}, critical = {crit}");
}

#[test]
fn uniform_spatial_density_stays_uniform() {
    let model = unbiased_model(0.2);
    let g = grid(2.0, 20);
    let n = 40_000;
    let mut ens = ParticleEnsemble::point_cloud(n, 0.0, &model.dist, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for x in ens.positions.iter_mut() {
        *x = rng.random_range(-2.0..2.0);
    }
    simulate(&mut ens, &model, &FrozenField::flat(g.clone()), 0.5).unwrap();
    assert_eq!(ens.len(), n);
    assert!(ens.positions.iter().all(|x| x.abs() <= 2.0));
    let hist = histogram(&ens.positions, &g);
    let counts: Vec<usize> = hist.iter().map(|d| (d * n as f64 * g.dx()).round() as usize).collect();
    assert_eq!(counts.iter().sum::<usize>(), n);
    let (stat, crit) = chi_squared_uniform(&counts);
    assert!(stat < crit, "chi2 = {stat}, critical = {crit}");
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let model = unbiased_model(0.3);
    let g = grid(3.0, 30);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut ens = ParticleEnsemble::point_cloud(20_000, 0.0, &model.dist, 3).unwrap();
            simulate(&mut ens, &model, &FrozenField::flat(g.clone()), 0.4).unwrap();
            simulate(&mut ens, &model, &FrozenField::flat(g.clone()), 0.4).unwrap();
            ens
        })
    };
    let a = run(1);
    let b = run(4);
    assert!(a.positions.iter().zip(&b.positions).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.velocities.iter().zip(&b.velocities).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn biased_ensemble_drifts_down_the_gradient() {
    let g = grid(10.0, 100);
    let h: Vec<f64> = g.nodes().iter().map(|x| 0.05 * x).collect();
    let model = KineticModel::new(
        VelocitySpace1D::new(0.0, 1.0).unwrap(),
        &EquilibriumDist::Uniform,
        TurningParams {
            lambda0: 1.0,
            a_coef: 1.0,
            b_coef: 0.0,
            eps: 0.1,
        },
    )
    .unwrap();
    let mut ens = ParticleEnsemble::point_cloud(20_000, 0.0, &model.dist, 8).unwrap();
    simulate(&mut ens, &model, &FrozenField::new(g, &h).unwrap(), 1.0).unwrap();
    let mean = ens.positions.iter().sum::<f64>() / ens.len() as f64;
    assert!(mean < -0.01, "{mean}");
}
