//! Executes one validated configuration into its output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use phtaxis_core::analysis::{convergence_metrics, pattern_metrics};
use phtaxis_core::kernels::{discretize, KernelSpec};
use phtaxis_core::kinetic::{
    compare_to_pde, histogram, macroscopic_coefficients, simulate, FrozenField, KineticModel,
    ParticleEnsemble,
};
use phtaxis_core::model::{
    build_grid, eval_initial_h, Diffusivity, Domain1D, Grid1D, GrowthSpec, ModelParams, SourceForm,
    SourceSpec, State,
};
use phtaxis_core::solver::{run, run_from, Event, IntegratorConfig, Simulation, Trajectory};
use phtaxis_core::stability::{classify_with, Competition, Equilibrium, InstabilityReport};

use crate::config::{echo, CompetitionConfig, GridConfig, KineticConfig, Mode, RunConfig, Validated};
use crate::error::{CliError, CliResult};
use crate::output::{
    describe_event, snapshot_csv, write_dispersion_report, write_file, write_heatmap,
    write_snapshot, RunManifest,
};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.toml";
pub const HEATMAP_FILE: &str = "heatmap.pgm";
pub const HEATMAP_SCALE_FILE: &str = "heatmap_scale.csv";
pub const DISPERSION_FILE: &str = "dispersion.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub name: String,
    pub dir: PathBuf,
    /// Time of a blow-up event, if one fired.
    pub blow_up: Option<f64>,
    pub blow_up_study: bool,
    pub summary: Vec<(String, String)>,
}

impl RunOutcome {
    /// A blow-up in a run that did not ask for one.
    pub fn unexpected_blow_up(&self) -> Option<CliError> {
        match self.blow_up {
            Some(t) if !self.blow_up_study => Some(CliError::BlowUp {
                t,
                run: self.name.clone(),
            }),
            _ => None,
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn competition(c: CompetitionConfig) -> Competition {
    match c {
        CompetitionConfig::Local => Competition::Local,
        CompetitionConfig::Nonlocal => Competition::Nonlocal,
    }
}

/// Runs `v` and writes its files under `dir`.
pub fn execute(v: &Validated, dir: &Path, name: &str) -> CliResult<RunOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let started = Instant::now();
    let cfg = &v.config;
    let mut manifest = RunManifest {
        name: name.to_string(),
        mode: echo_mode(cfg.mode),
        config_echo: echo(cfg)?,
        flags: v.flags.iter().map(|f| f.to_string()).collect(),
        warnings: v.warnings.clone(),
        ..RunManifest::default()
    };
    let mut files = vec![CONFIG_FILE.to_string()];
    let mut outcome = RunOutcome {
        name: name.to_string(),
        dir: dir.to_path_buf(),
        blow_up: None,
        blow_up_study: cfg.model.as_ref().is_some_and(|m| m.blow_up_study),
        summary: Vec::new(),
    };

    match cfg.mode {
        Mode::Simulate => simulate_mode(cfg, dir, &mut manifest, &mut files, &mut outcome)?,
        Mode::StabilityReport => stability_mode(cfg, dir, &mut manifest, &mut files)?,
        Mode::KineticValidate => kinetic_mode(cfg, dir, &mut manifest, &mut files)?,
        Mode::ExperimentSuite => {
            return Err(CliError::Config(
                "experiment-suite configs are run through `suite`, not as a single run".into(),
            ))
        }
    }

    write_file(&dir.join(CONFIG_FILE), manifest.config_echo.as_bytes())?;
    files.push(MANIFEST_FILE.to_string());
    files.sort();
    manifest.files = files;
    if cfg.outputs.wall_clock {
        manifest.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    }
    write_file(&dir.join(MANIFEST_FILE), manifest.render().as_bytes())?;
    outcome.summary = manifest.summary;
    Ok(outcome)
}

fn echo_mode(m: Mode) -> String {
    match m {
        Mode::Simulate => "simulate",
        Mode::StabilityReport => "stability-report",
        Mode::KineticValidate => "kinetic-validate",
        Mode::ExperimentSuite => "experiment-suite",
    }
    .to_string()
}

fn write_snapshots(
    traj: &Trajectory,
    grid: &Grid1D,
    stride: usize,
    dir: &Path,
    files: &mut Vec<String>,
) -> CliResult<()> {
    let last = traj.snapshots.len() - 1;
    for (i, s) in traj.snapshots.iter().enumerate() {
        if i % stride == 0 || i == last {
            let rel = format!("{SNAPSHOT_DIR}/snapshot_{i:05}.csv");
            write_snapshot(s, grid, &dir.join(&rel))?;
            files.push(rel);
        }
    }
    Ok(())
}

fn simulate_mode(
    cfg: &RunConfig,
    dir: &Path,
    manifest: &mut RunManifest,
    files: &mut Vec<String>,
    outcome: &mut RunOutcome,
) -> CliResult<()> {
    let sim = cfg.simulation_config()?;
    let grid = sim.grid()?;
    let traj = run(&sim)?;
    write_snapshots(&traj, &grid, cfg.outputs.snapshot_stride, dir, files)?;
    if cfg.outputs.heatmap && traj.snapshots.len() >= 2 {
        write_heatmap(&traj, &dir.join(HEATMAP_FILE), &dir.join(HEATMAP_SCALE_FILE))?;
        files.push(HEATMAP_FILE.to_string());
        files.push(HEATMAP_SCALE_FILE.to_string());
    }
    let params = &sim.params;
    let mut h_star = None;
    if cfg.outputs.dispersion_report {
        let report = stability_report(params, cfg)?;
        h_star = Some(report.equilibrium.h_star);
        write_dispersion_report(&report, &params.kernel.name(), &dir.join(DISPERSION_FILE))?;
        files.push(DISPERSION_FILE.to_string());
    }

    outcome.blow_up = traj.blow_up_time();
    let fin = &traj.final_state;
    let pattern = pattern_metrics(&fin.u, &grid);
    let s = &mut manifest.summary;
    s.push(("t_final".into(), num(fin.t)));
    s.push(("max_u_final".into(), num(fin.max_u())));
    s.push((
        "blow_up_t".into(),
        traj.blow_up_time().map_or("none".to_string(), num),
    ));
    s.push(("accepted_steps".into(), traj.stats.accepted_steps.to_string()));
    s.push(("dt_rejections".into(), traj.stats.rejected_steps.to_string()));
    s.push(("positivity_clips".into(), traj.stats.clipped_values.to_string()));
    s.push(("min_u_before_clip".into(), num(traj.stats.min_u_before_clip)));
    s.push(("spatial_variance_final".into(), num(pattern.spatial_variance)));
    if let Some(hs) = h_star.or_else(|| Equilibrium::coexistence(params).ok().map(|e| e.h_star)) {
        let (du, dh) = convergence_metrics(fin, 1.0, hs);
        s.push(("sup_u_minus_1".into(), num(du)));
        s.push(("sup_h_minus_h_star".into(), num(dh)));
    }
    s.push(("snapshots".into(), traj.snapshots.len().to_string()));
    manifest.events = traj
        .events
        .iter()
        .filter(|e| !matches!(e, Event::DtRejected { .. }))
        .map(describe_event)
        .collect();
    Ok(())
}

pub fn stability_report(params: &ModelParams, cfg: &RunConfig) -> CliResult<InstabilityReport> {
    let eq = Equilibrium::coexistence(params)?;
    Ok(classify_with(
        params,
        &eq,
        cfg.grid.a,
        cfg.stability.z_max,
        competition(cfg.stability.competition),
    )?)
}

fn stability_mode(cfg: &RunConfig, dir: &Path, manifest: &mut RunManifest, files: &mut Vec<String>) -> CliResult<()> {
    let params = cfg.params()?;
    let report = stability_report(&params, cfg)?;
    let kernel = match cfg.stability.competition {
        CompetitionConfig::Local => KernelSpec::Dirac.name(),
        CompetitionConfig::Nonlocal => params.kernel.name(),
    };
    write_dispersion_report(&report, &kernel, &dir.join(DISPERSION_FILE))?;
    files.push(DISPERSION_FILE.to_string());

    let grid = build_grid(Domain1D::new(cfg.grid.a)?, cfg.grid.n_cells)?;
    let eq = &report.equilibrium;
    let n = grid.n_cells();
    let state = State::new(vec![eq.u_star; n], vec![eq.h_star; n], 0.0)?;
    let rel = format!("{SNAPSHOT_DIR}/equilibrium.csv");
    write_file(&dir.join(&rel), snapshot_csv(&state, &grid).as_bytes())?;
    files.push(rel);

    let s = &mut manifest.summary;
    s.push(("h_star".into(), num(eq.h_star)));
    s.push(("h_star_unique".into(), eq.unique.to_string()));
    s.push(("verdict".into(), report.verdict().to_string()));
    s.push(("unstable_modes".into(), report.unstable_modes().count().to_string()));
    s.push(("critical_points".into(), report.critical.len().to_string()));
    manifest.events = report.notes.clone();
    Ok(())
}

/// Particle ensemble against the PDE oracle at `kinetic.t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticComparison {
    pub grid: Grid1D,
    pub diffusion: f64,
    pub chi: f64,
    pub h: Vec<f64>,
    pub pde: State,
    pub positions: Vec<f64>,
    pub l1_error: f64,
}

/// Unit mass at `x0`, split evenly when `x0` sits on a cell face.
pub fn point_mass(grid: &Grid1D, x0: f64) -> Vec<f64> {
    let n = grid.n_cells();
    let dx = grid.dx();
    let mut u = vec![0.0; n];
    let s = (x0 + grid.half_length()) / dx;
    let face = s.round();
    if (s - face).abs() < 1e-9 && face >= 1.0 && face <= (n - 1) as f64 {
        let f = face as usize;
        u[f - 1] = 0.5 / dx;
        u[f] = 0.5 / dx;
    } else {
        u[grid.cell_index(x0)] = 1.0 / dx;
    }
    u
}

pub fn kinetic_comparison(
    kin: &KineticConfig,
    grid_cfg: &GridConfig,
    ic_h: &phtaxis_core::model::InitialCondition,
    integrator: &IntegratorConfig,
    seed: u64,
) -> CliResult<KineticComparison> {
    let grid = build_grid(Domain1D::new(grid_cfg.a)?, grid_cfg.n_cells)?;
    let h = eval_initial_h(ic_h, &grid, f64::MAX)?;
    let field = FrozenField::new(grid.clone(), &h)?;
    let model = KineticModel::new(kin.space()?, &kin.dist, kin.turning())?;
    let (diffusion, chi) = macroscopic_coefficients(&model);
    if field.max_gradient() > 0.0 && (chi - diffusion).abs() > 1e-12 * diffusion {
        return Err(CliError::Config(format!(
            "the PDE oracle carries taxis with coefficient D; needs chi = D when h varies (D = {diffusion}, chi = {chi})"
        )));
    }

    let h_cap = h.iter().fold(1.0f64, |m, &v| m.max(v)) + 1.0;
    let params = ModelParams {
        alpha: 1.0,
        beta: 1.0,
        diffusion: Diffusivity::Constant(diffusion),
        d_h: 1.0,
        growth: GrowthSpec::Constant { mu0: 0.0 },
        source: SourceSpec::new(SourceForm::Inert, h_cap),
        kernel: KernelSpec::Dirac,
        blow_up_study: false,
    };
    let mut integ = integrator.clone();
    integ.t_end = kin.t_end;
    integ.snapshot_every = kin.t_end;
    let stencil = discretize(&KernelSpec::Dirac, &grid, true)?;
    let mut sim = Simulation::new(params, grid.clone(), &stencil, integ)?;
    sim.set_freeze_h(true);
    let start = State::new(point_mass(&grid, kin.x0), h.clone(), 0.0)?;
    let pde = run_from(&mut sim, start)?.final_state;

    let mut ensemble = ParticleEnsemble::point_cloud(kin.n_particles, kin.x0, &model.dist, seed)?;
    simulate(&mut ensemble, &model, &field, kin.t_end)?;
    let l1_error = compare_to_pde(&ensemble.positions, &pde.u, &grid)?;
    Ok(KineticComparison {
        grid,
        diffusion,
        chi,
        h,
        pde,
        positions: ensemble.positions,
        l1_error,
    })
}

fn kinetic_mode(cfg: &RunConfig, dir: &Path, manifest: &mut RunManifest, files: &mut Vec<String>) -> CliResult<()> {
    let cmp = kinetic_comparison(&cfg.kinetic, &cfg.grid, &cfg.ic, &cfg.integrator, cfg.seed)?;
    let rel = format!("{SNAPSHOT_DIR}/pde.csv");
    write_snapshot(&cmp.pde, &cmp.grid, &dir.join(&rel))?;
    files.push(rel);
    let hist = State::new(histogram(&cmp.positions, &cmp.grid), cmp.h.clone(), cfg.kinetic.t_end)?;
    let rel = format!("{SNAPSHOT_DIR}/particles.csv");
    write_snapshot(&hist, &cmp.grid, &dir.join(&rel))?;
    files.push(rel);

    let s = &mut manifest.summary;
    s.push(("D".into(), num(cmp.diffusion)));
    s.push(("chi".into(), num(cmp.chi)));
    s.push(("eps".into(), num(cfg.kinetic.eps)));
    s.push(("n_particles".into(), cfg.kinetic.n_particles.to_string()));
    s.push(("seed".into(), cfg.seed.to_string()));
    s.push(("l1_error".into(), num(cmp.l1_error)));
    Ok(())
}
