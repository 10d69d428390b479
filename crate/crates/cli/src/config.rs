//! Run configuration: a TOML document with nested tables.
//!
//! Every table rejects unknown keys. After parsing, all defaults are filled
//! in, so [`echo`] writes back a complete document and
//! `parse_config(echo(c)) == c`.

use std::path::PathBuf;

use phtaxis_core::kernels::{Extension, KernelSpec};
use phtaxis_core::kinetic::{EquilibriumDist, TurningParams, VelocitySpace1D};
use phtaxis_core::model::{
    ApplicabilityFlag, Diffusivity, GrowthSpec, InitialCondition, ModelParams, SourceForm,
    SourceSpec,
};
use phtaxis_core::solver::{IntegratorConfig, SimulationConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    StabilityReport,
    KineticValidate,
    ExperimentSuite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteName {
    Fig1,
    Fig2,
    Fig3,
    DispersionTable,
}

impl SuiteName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SuiteName::Fig1 => "fig1",
            SuiteName::Fig2 => "fig2",
            SuiteName::Fig3 => "fig3",
            SuiteName::DispersionTable => "dispersion-table",
        }
    }
}

impl std::str::FromStr for SuiteName {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "fig1" => Ok(SuiteName::Fig1),
            "fig2" => Ok(SuiteName::Fig2),
            "fig3" => Ok(SuiteName::Fig3),
            "dispersion-table" => Ok(SuiteName::DispersionTable),
            other => Err(CliError::Config(format!(
                "unknown suite {other:?}; expected fig1, fig2, fig3 or dispersion-table"
            ))),
        }
    }
}

/// Cell diffusivity: a number or one value per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiffusionConfig {
    Constant(f64),
    Field(Vec<f64>),
}

fn one() -> f64 {
    1.0
}

/// Proton source together with its ceiling H.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    LogisticAcid {
        #[serde(default = "one")]
        h_ceiling: f64,
    },
    Destabilizing {
        gamma: f64,
        #[serde(default = "one")]
        h_ceiling: f64,
    },
    Relaxation {
        rate: f64,
        h_star: f64,
        #[serde(default = "one")]
        h_ceiling: f64,
    },
    Inert {
        #[serde(default = "one")]
        h_ceiling: f64,
    },
    Tabulated {
        u: Vec<f64>,
        h: Vec<f64>,
        values: Vec<f64>,
        #[serde(default = "one")]
        h_ceiling: f64,
    },
}

impl SourceConfig {
    pub fn to_spec(&self) -> SourceSpec {
        match self.clone() {
            SourceConfig::LogisticAcid { h_ceiling } => SourceSpec::new(SourceForm::LogisticAcid, h_ceiling),
            SourceConfig::Destabilizing { gamma, h_ceiling } => {
                SourceSpec::new(SourceForm::Destabilizing { gamma }, h_ceiling)
            }
            SourceConfig::Relaxation { rate, h_star, h_ceiling } => {
                SourceSpec::new(SourceForm::Relaxation { rate, h_star }, h_ceiling)
            }
            SourceConfig::Inert { h_ceiling } => SourceSpec::new(SourceForm::Inert, h_ceiling),
            SourceConfig::Tabulated { u, h, values, h_ceiling } => {
                SourceSpec::new(SourceForm::Tabulated { u, h, values }, h_ceiling)
            }
        }
    }

    pub fn from_spec(spec: &SourceSpec) -> Self {
        let h_ceiling = spec.h_ceiling;
        match spec.form.clone() {
            SourceForm::LogisticAcid => SourceConfig::LogisticAcid { h_ceiling },
            SourceForm::Destabilizing { gamma } => SourceConfig::Destabilizing { gamma, h_ceiling },
            SourceForm::Relaxation { rate, h_star } => SourceConfig::Relaxation { rate, h_star, h_ceiling },
            SourceForm::Inert => SourceConfig::Inert { h_ceiling },
            SourceForm::Tabulated { u, h, values } => SourceConfig::Tabulated { u, h, values, h_ceiling },
        }
    }
}

fn default_source() -> SourceConfig {
    SourceConfig::LogisticAcid { h_ceiling: 1.0 }
}

fn default_growth() -> GrowthSpec {
    GrowthSpec::Rational { mu0: 1.0 }
}

fn default_kernel() -> KernelSpec {
    KernelSpec::Logistic
}

fn default_diffusion() -> DiffusionConfig {
    DiffusionConfig::Constant(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_diffusion")]
    pub d: DiffusionConfig,
    #[serde(default = "one")]
    pub d_h: f64,
    #[serde(default)]
    pub blow_up_study: bool,
    #[serde(default = "default_growth")]
    pub growth: GrowthSpec,
    #[serde(default = "default_source")]
    pub source: SourceConfig,
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
}

impl ModelConfig {
    pub fn to_params(&self) -> ModelParams {
        ModelParams {
            alpha: self.alpha,
            beta: self.beta,
            diffusion: match &self.d {
                DiffusionConfig::Constant(v) => Diffusivity::Constant(*v),
                DiffusionConfig::Field(v) => Diffusivity::Field(v.clone()),
            },
            d_h: self.d_h,
            growth: self.growth.clone(),
            source: self.source.to_spec(),
            kernel: self.kernel,
            blow_up_study: self.blow_up_study,
        }
    }

    pub fn from_params(p: &ModelParams) -> Self {
        Self {
            alpha: p.alpha,
            beta: p.beta,
            d: match &p.diffusion {
                Diffusivity::Constant(v) => DiffusionConfig::Constant(*v),
                Diffusivity::Field(v) => DiffusionConfig::Field(v.clone()),
            },
            d_h: p.d_h,
            blow_up_study: p.blow_up_study,
            growth: p.growth.clone(),
            source: SourceConfig::from_spec(&p.source),
            kernel: p.kernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Half-length of the domain `[-a, a]`.
    pub a: f64,
    pub n_cells: usize,
    pub renormalize_kernel: bool,
    pub extension: Extension,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            a: 20.0,
            n_cells: 400,
            renormalize_kernel: true,
            extension: Extension::Reflect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Write every k-th snapshot as CSV (the first and last are always written).
    pub snapshot_stride: usize,
    pub heatmap: bool,
    pub dispersion_report: bool,
    /// Record the elapsed wall-clock time in the manifest (breaks byte-identical reruns).
    pub wall_clock: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            snapshot_stride: 1,
            heatmap: true,
            dispersion_report: false,
            wall_clock: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompetitionConfig {
    Local,
    Nonlocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub z_max: usize,
    pub competition: CompetitionConfig,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            z_max: 200,
            competition: CompetitionConfig::Nonlocal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticConfig {
    pub s1: f64,
    pub s2: f64,
    pub dist: EquilibriumDist,
    pub lambda0: f64,
    pub a_coef: f64,
    pub b_coef: f64,
    pub eps: f64,
    pub n_particles: usize,
    pub t_end: f64,
    /// Release point of the particle cloud.
    pub x0: f64,
}

impl Default for KineticConfig {
    fn default() -> Self {
        Self {
            s1: 0.0,
            s2: 1.0,
            dist: EquilibriumDist::Uniform,
            lambda0: 1.0,
            a_coef: 0.0,
            b_coef: 0.0,
            eps: 0.1,
            n_particles: 100_000,
            t_end: 1.0,
            x0: 0.0,
        }
    }
}

impl KineticConfig {
    pub fn space(&self) -> CliResult<VelocitySpace1D> {
        Ok(VelocitySpace1D::new(self.s1, self.s2)?)
    }

    pub fn turning(&self) -> TurningParams {
        TurningParams {
            lambda0: self.lambda0,
            a_coef: self.a_coef,
            b_coef: self.b_coef,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Required in experiment-suite mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteName>,
    /// Random seed; used by kinetic-validate only.
    #[serde(default)]
    pub seed: u64,
    /// Required except in kinetic-validate and experiment-suite modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub ic: InitialCondition,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub kinetic: KineticConfig,
}

/// A parsed, validated configuration and the qualifiers found while validating.
#[derive(Debug, Clone, PartialEq)]
pub struct Validated {
    pub config: RunConfig,
    pub flags: Vec<ApplicabilityFlag>,
    pub warnings: Vec<String>,
}

impl RunConfig {
    /// A simulate-mode configuration around `params` with every other section at its default.
    pub fn simulate(params: &ModelParams) -> Self {
        Self {
            mode: Mode::Simulate,
            suite: None,
            seed: 0,
            model: Some(ModelConfig::from_params(params)),
            ic: InitialCondition::default(),
            grid: GridConfig::default(),
            integrator: IntegratorConfig::default(),
            outputs: OutputConfig::default(),
            stability: StabilityConfig::default(),
            kinetic: KineticConfig::default(),
        }
    }

    pub fn params(&self) -> CliResult<ModelParams> {
        self.model
            .as_ref()
            .map(ModelConfig::to_params)
            .ok_or_else(|| CliError::Config("missing required table [model]".into()))
    }

    pub fn simulation_config(&self) -> CliResult<SimulationConfig> {
        let mut sim = SimulationConfig::new(self.params()?, self.grid.a, self.grid.n_cells, self.integrator.clone());
        sim.ic = self.ic.clone();
        sim.renormalize_kernel = self.grid.renormalize_kernel;
        sim.extension = self.grid.extension;
        Ok(sim)
    }

    /// Checks every section the mode uses.
    pub fn validate(&self) -> CliResult<Validated> {
        let mut flags = Vec::new();
        let mut warnings = Vec::new();
        if self.outputs.snapshot_stride == 0 {
            return Err(CliError::Config("outputs.snapshot_stride must be positive".into()));
        }
        match self.mode {
            Mode::Simulate | Mode::StabilityReport => {
                let sim = self.simulation_config()?;
                flags = sim.params.validate()?;
                sim.integrator.validate()?;
                let grid = sim.grid()?;
                sim.stencil(&grid)?;
                sim.initial_state(&grid)?;
                if self.stability.z_max == 0 {
                    return Err(CliError::Config("stability.z_max must be at least 1".into()));
                }
            }
            Mode::KineticValidate => {
                let space = self.kinetic.space()?;
                self.kinetic.turning().validate()?;
                self.kinetic.dist.resolve(&space)?;
                if self.kinetic.n_particles == 0 {
                    return Err(CliError::Config("kinetic.n_particles must be positive".into()));
                }
                if !(self.kinetic.t_end > 0.0) {
                    return Err(CliError::Config("kinetic.t_end must be positive".into()));
                }
                if self.kinetic.x0.abs() > self.grid.a {
                    return Err(CliError::Config(format!(
                        "kinetic.x0 = {} lies outside [-a, a]",
                        self.kinetic.x0
                    )));
                }
                self.integrator.validate()?;
            }
            Mode::ExperimentSuite => {
                if self.suite.is_none() {
                    return Err(CliError::Config("experiment-suite mode needs a `suite` key".into()));
                }
            }
        }
        if flags.contains(&ApplicabilityFlag::BlowUpStudy) {
            warnings.push(
                "alpha > 1 + beta: outside the well-posedness range, running as a blow-up study".to_string(),
            );
        }
        if flags.contains(&ApplicabilityFlag::TheoryNotApplicable) {
            warnings.push("sign-changing kernel: existence theory does not cover this run".to_string());
        }
        Ok(Validated {
            config: self.clone(),
            flags,
            warnings,
        })
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> CliResult<Validated> {
    let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
    config.validate()
}

/// Canonical TOML rendering with every default spelled out.
pub fn echo(config: &RunConfig) -> CliResult<String> {
    toml::to_string(config).map_err(|e| CliError::Config(format!("cannot render config: {e}")))
}
