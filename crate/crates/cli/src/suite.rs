//! Preset experiment batteries.

use std::path::Path;

use phtaxis_core::kernels::KernelSpec;
use phtaxis_core::model::{Diffusivity, ModelParams, SourceForm, SourceSpec};
use rayon::prelude::*;

use crate::config::{Mode, RunConfig, SuiteName};
use crate::error::CliResult;
use crate::runner::{execute, RunOutcome};

/// Cells used when the kernel radius would otherwise span too few of them.
pub const FINE_CELLS: usize = 1600;

/// Proton ceiling for `u + uh - 0.8 h^2`, whose equilibrium sits near h = 1.9.
pub const DESTABILIZING_CEILING: f64 = 10.0;

fn logistic() -> KernelSpec {
    KernelSpec::Logistic
}

fn uniform(radius: f64) -> KernelSpec {
    KernelSpec::Uniform { rho: radius }
}

fn kernel_tag(k: &KernelSpec) -> String {
    match k {
        KernelSpec::Uniform { rho } => format!("uniform_rho{rho}"),
        other => other.name(),
    }
}

fn base(params: ModelParams, t_end: f64) -> RunConfig {
    let mut cfg = RunConfig::simulate(&params);
    cfg.integrator.t_end = t_end;
    if let KernelSpec::Uniform { rho } = params.kernel {
        if rho < 0.5 {
            cfg.grid.n_cells = FINE_CELLS;
        }
    }
    cfg
}

fn fig1() -> Vec<(String, RunConfig)> {
    let mut out = Vec::new();
    for alpha in [2.0, 6.2, 8.15] {
        for kernel in [logistic(), uniform(1.0)] {
            let mut p = ModelParams::standard(alpha, 1.0, 1.0, kernel.clone());
            p.blow_up_study = alpha > 2.0;
            let name = format!("alpha{alpha}_{}", kernel_tag(&kernel));
            out.push((name, base(p, 50.0)));
        }
    }
    out
}

fn fig2_params() -> Vec<(String, ModelParams)> {
    let mut out = Vec::new();
    for alpha in [2.0, 10.0] {
        for kernel in [logistic(), uniform(1.0), uniform(0.6), uniform(0.05)] {
            for d in [1.0, 0.01] {
                let mut p = ModelParams::standard(alpha, 20.0, 100.0, kernel.clone());
                p.diffusion = Diffusivity::Constant(d);
                let name = format!("alpha{alpha}_{}_d{d}", kernel_tag(&kernel));
                out.push((name, p));
            }
        }
    }
    out
}

fn fig2() -> Vec<(String, RunConfig)> {
    fig2_params().into_iter().map(|(n, p)| (n, base(p, 200.0))).collect()
}

fn fig3() -> Vec<(String, RunConfig)> {
    let runs = [
        ("logistic_acid_d1", SourceForm::LogisticAcid, 1.0, 1.0),
        ("logistic_acid_d0.01", SourceForm::LogisticAcid, 0.01, 1.0),
        ("destabilizing_d1", SourceForm::Destabilizing { gamma: 0.8 }, 1.0, DESTABILIZING_CEILING),
    ];
    runs.into_iter()
        .map(|(name, form, d, ceiling)| {
            let mut p = ModelParams::standard(2.0, 20.0, 100.0, KernelSpec::Dirac);
            p.diffusion = Diffusivity::Constant(d);
            p.source = SourceSpec::new(form, ceiling);
            (name.to_string(), base(p, 200.0))
        })
        .collect()
}

fn dispersion_table() -> Vec<(String, RunConfig)> {
    fig2_params()
        .into_iter()
        .map(|(n, p)| {
            let mut cfg = base(p, 200.0);
            cfg.mode = Mode::StabilityReport;
            (n, cfg)
        })
        .collect()
}

/// Named configurations of a suite.
pub fn entries(suite: SuiteName) -> Vec<(String, RunConfig)> {
    match suite {
        SuiteName::Fig1 => fig1(),
        SuiteName::Fig2 => fig2(),
        SuiteName::Fig3 => fig3(),
        SuiteName::DispersionTable => dispersion_table(),
    }
}

/// Runs every entry into `out/<entry>`, concurrently. `edit` is applied to each
/// configuration before validation.
pub fn run_suite(
    suite: SuiteName,
    out: &Path,
    edit: impl Fn(&mut RunConfig) + Sync,
) -> Vec<(String, CliResult<RunOutcome>)> {
    entries(suite)
        .into_par_iter()
        .map(|(name, mut cfg)| {
            edit(&mut cfg);
            let dir = out.join(&name);
            let result = cfg.validate().and_then(|v| execute(&v, &dir, &name));
            (name, result)
        })
        .collect()
}
