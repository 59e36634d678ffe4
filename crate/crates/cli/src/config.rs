//! Run configuration: parsing, defaults and construction of core objects.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use sbrl_core::builtin::{
    example2_beta, example2_plant, feedthrough_system, Example1, EXAMPLE2_GAMMA, EXAMPLE2_P,
    EXAMPLE2_X0,
};
use sbrl_core::certify::{default_beta_grid, PStrategy, VSearch};
use sbrl_core::dynamics::{AffineSystem, ControlledSystem, DisturbanceEnsemble, LinearSystem};
use sbrl_core::linalg;
use sbrl_core::noise::derive_seed;
use sbrl_core::{
    DomainBox, ExpectationMode, ExpectationScheme, FeedbackLaw, NoiseModel, Sampling,
    StorageFunction,
};

use crate::error::CliError;

/// Matrix given as a list of rows.
pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    /// Replaces the system's noise model.
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub storage: Option<StorageSpec>,
    #[serde(default)]
    pub law: Option<LawSpec>,
    #[serde(default)]
    pub certificate: CertificateSpec,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Example1(Example1Params),
    /// The controlled three-state plant.
    Example2,
    Linear(LinearSpec),
    /// `x⁺ = ½x`, `z = d·v`.
    Feedthrough { d: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example1Params {
    #[serde(default = "ex1_a")]
    pub a: f64,
    #[serde(default = "ex1_b")]
    pub b: f64,
    #[serde(default = "ex1_c")]
    pub c: f64,
    #[serde(default = "ex1_c")]
    pub c1: f64,
}

fn ex1_a() -> f64 {
    Example1::default().a
}

fn ex1_b() -> f64 {
    Example1::default().b
}

fn ex1_c() -> f64 {
    Example1::default().c
}

impl Default for Example1Params {
    fn default() -> Self {
        let e = Example1::default();
        Self {
            a: e.a,
            b: e.b,
            c: e.c,
            c1: e.c1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "A0")]
    pub a0: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    /// Empty for no feedthrough rows.
    #[serde(rename = "D", default)]
    pub d: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StorageSpec {
    Quadratic {
        #[serde(rename = "P")]
        p: Rows,
    },
    Separable { p: Vec<f64>, d: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    Zero,
    Builtin(BuiltinLaw),
    LinearGain {
        #[serde(rename = "K")]
        k: Rows,
    },
    /// A law registered by embedding code under this name.
    Custom(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinLaw {
    Example2,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    #[serde(default)]
    pub mode: Option<ExpectationMode>,
    #[serde(default)]
    pub samples: Option<usize>,
    /// Defaults to a sub-seed of the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub antithetic: Option<bool>,
}

impl SchemeSpec {
    pub fn scheme(&self) -> ExpectationScheme {
        ExpectationScheme {
            mode: self.mode.unwrap_or(ExpectationMode::ClosedForm),
            samples: self.samples.unwrap_or(100_000),
            seed: self.seed.unwrap_or(0),
            antithetic: self.antithetic.unwrap_or(false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSearchSpec {
    /// Candidates are `s · V` for each scale `s`.
    pub scales: Vec<f64>,
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearBrlSpec {
    /// Fixed `P`; with `beta` this skips the search.
    #[serde(rename = "P", default)]
    pub p: Option<Rows>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
    #[serde(default)]
    pub strategy: Option<PStrategy>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub gamma_search: Option<GammaSearchSpec>,
    /// Also run the internal-stability check with this `c₂`.
    #[serde(default)]
    pub c2: Option<f64>,
    #[serde(default)]
    pub domain: Option<DomainBox>,
    #[serde(default)]
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub search: Option<VSearch>,
    #[serde(default)]
    pub linear_brl: LinearBrlSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub trajectories: Option<usize>,
    #[serde(default)]
    pub disturbances: Option<Vec<DisturbanceEnsemble>>,
    /// Initial state for `simulate`; `gain` always starts at the origin.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Claimed `γ²` for `gain`; defaults to the certificate `γ²`.
    #[serde(default)]
    pub gamma_sq: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Svg,
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn svg(self) -> bool {
        matches!(self, Format::Svg | Format::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub directory: Option<String>,
    #[serde(default)]
    pub format: Option<Format>,
}

/// Parses a configuration file, reporting the field path of any error.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Command-line overrides applied before resolution.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub format: Option<Format>,
}

fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>, CliError> {
    linalg::from_rows(rows).ok_or_else(|| CliError::invalid(format!("{name}: ragged rows")))
}

impl RunConfig {
    pub fn state_dim(&self) -> usize {
        match &self.system {
            SystemSpec::Example1(_) | SystemSpec::Feedthrough { .. } => 1,
            SystemSpec::Example2 => 3,
            SystemSpec::Linear(l) => l.a.len(),
        }
    }

    pub fn is_controlled(&self) -> bool {
        matches!(self.system, SystemSpec::Example2)
    }

    /// Fills every default so that the emitted document reproduces the run.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out {
            self.output.directory = Some(d.clone());
        }
        if let Some(f) = o.format {
            self.output.format = Some(f);
        }
        self.output.directory.get_or_insert_with(|| "out".into());
        self.output.format.get_or_insert(Format::Both);

        let n = self.state_dim();
        if n == 0 {
            return Err(CliError::invalid("system.linear.A: state dimension must be positive"));
        }
        if self.storage.is_none() {
            self.storage = Some(match &self.system {
                SystemSpec::Example1(_) => StorageSpec::Quadratic {
                    p: vec![vec![Example1::default().optimal_p()]],
                },
                SystemSpec::Example2 => StorageSpec::Separable {
                    p: vec![EXAMPLE2_P; 3],
                    d: vec![2, 4, 2],
                },
                _ => StorageSpec::Quadratic {
                    p: linalg::to_rows(&DMatrix::identity(n, n)),
                },
            });
        }
        if self.is_controlled() {
            self.law.get_or_insert(LawSpec::Builtin(BuiltinLaw::Example2));
        } else if self.law.is_some() {
            return Err(CliError::invalid("law: only controlled systems accept a feedback law"));
        }

        let c = &mut self.certificate;
        let (beta, gamma) = match &self.system {
            SystemSpec::Example1(p) => {
                let e = Example1 {
                    a: p.a,
                    b: p.b,
                    c: p.c,
                    c1: p.c1,
                };
                (e.optimal_beta(), e.gamma_star_sq().sqrt())
            }
            SystemSpec::Example2 => (example2_beta(), EXAMPLE2_GAMMA),
            _ => (2.0, 1.0),
        };
        c.beta.get_or_insert(beta);
        c.gamma.get_or_insert(gamma);
        if let Some(gs) = &mut c.gamma_search {
            gs.betas.get_or_insert_with(default_beta_grid);
        }
        if c.domain.is_none() {
            let (half, points) = match n {
                1 => (5.0, 41),
                2 => (2.0, 21),
                _ => (2.0, 7),
            };
            c.domain = Some(
                DomainBox::cube(n, -half, half, Sampling::Grid { points_per_axis: points })
                    .map_err(CliError::Core)?,
            );
        }
        c.scheme.mode.get_or_insert(ExpectationMode::ClosedForm);
        c.scheme.samples.get_or_insert(100_000);
        c.scheme.seed.get_or_insert(derive_seed(self.seed, 1));
        c.scheme.antithetic.get_or_insert(false);
        c.search.get_or_insert(VSearch::Auto);
        if matches!(self.system, SystemSpec::Linear(_)) {
            c.linear_brl.strategy.get_or_insert_with(PStrategy::default);
        }

        let default_horizon = if self.is_controlled() { 300 } else { 200 };
        let e = &mut self.ensemble;
        e.horizon.get_or_insert(default_horizon);
        e.trajectories.get_or_insert(200);
        e.disturbances.get_or_insert_with(|| {
            vec![
                DisturbanceEnsemble::decaying_sine(),
                DisturbanceEnsemble::WhiteNoise { std_dev: 1.0 },
            ]
        });
        e.x0.get_or_insert_with(|| match self.system {
            SystemSpec::Example2 => EXAMPLE2_X0.to_vec(),
            _ => vec![1.0; n],
        });
        let g = self.certificate.gamma.unwrap_or(1.0);
        e.gamma_sq.get_or_insert(g * g);
        Ok(self)
    }

    pub fn format(&self) -> Format {
        self.output.format.unwrap_or(Format::Both)
    }

    pub fn scheme(&self) -> ExpectationScheme {
        self.certificate.scheme.scheme()
    }

    pub fn noise_override(&self) -> Option<&NoiseModel> {
        self.noise.as_ref()
    }

    /// The uncontrolled system, or the closed loop for controlled ones.
    pub fn build_affine(&self, registry: &LawRegistry) -> Result<AffineSystem, CliError> {
        let sys = match &self.system {
            SystemSpec::Example1(p) => Example1 {
                a: p.a,
                b: p.b,
                c: p.c,
                c1: p.c1,
            }
            .system()?,
            SystemSpec::Linear(_) => self.build_linear()?.to_affine(),
            SystemSpec::Feedthrough { d } => feedthrough_system(*d)?,
            SystemSpec::Example2 => {
                let plant = self.build_plant()?;
                let law = self.build_law(registry)?;
                return Ok(sbrl_core::synth::closed_loop(&plant, &law)?);
            }
        };
        match &self.noise {
            Some(nm) => Ok(sys.with_noise(nm.clone())?),
            None => Ok(sys),
        }
    }

    pub fn build_plant(&self) -> Result<ControlledSystem, CliError> {
        match &self.system {
            SystemSpec::Example2 => {
                let plant = example2_plant();
                match &self.noise {
                    Some(nm) => Ok(plant.with_noise(nm.clone())?),
                    None => Ok(plant),
                }
            }
            _ => Err(CliError::invalid("system: not a controlled system")),
        }
    }

    pub fn build_linear(&self) -> Result<LinearSystem, CliError> {
        let SystemSpec::Linear(l) = &self.system else {
            return Err(CliError::invalid("system: linear-brl needs a linear system"));
        };
        let a = matrix("system.linear.A", &l.a)?;
        let b = matrix("system.linear.B", &l.b)?;
        let d = if l.d.is_empty() {
            DMatrix::zeros(0, b.ncols())
        } else {
            matrix("system.linear.D", &l.d)?
        };
        let noise = self.noise.clone().unwrap_or_else(NoiseModel::standard_normal);
        Ok(LinearSystem::with_noise(
            a,
            matrix("system.linear.A0", &l.a0)?,
            b,
            matrix("system.linear.C", &l.c)?,
            d,
            noise,
        )?)
    }

    pub fn build_storage(&self) -> Result<StorageFunction, CliError> {
        let spec = self
            .storage
            .as_ref()
            .ok_or_else(|| CliError::invalid("storage: missing"))?;
        let v = match spec {
            StorageSpec::Quadratic { p } => StorageFunction::quadratic(matrix("storage.P", p)?)?,
            StorageSpec::Separable { p, d } => StorageFunction::separable(p.clone(), d.clone())?,
        };
        if v.dim() != self.state_dim() {
            return Err(CliError::invalid(format!(
                "storage: dimension {} does not match state dimension {}",
                v.dim(),
                self.state_dim()
            )));
        }
        Ok(v)
    }

    pub fn build_law(&self, registry: &LawRegistry) -> Result<FeedbackLaw, CliError> {
        match self.law.as_ref() {
            None | Some(LawSpec::Zero) => Ok(FeedbackLaw::Zero { control_dim: 2 }),
            Some(LawSpec::Builtin(BuiltinLaw::Example2)) => Ok(FeedbackLaw::example2()),
            Some(LawSpec::LinearGain { k }) => Ok(FeedbackLaw::LinearGain(matrix("law.K", k)?)),
            Some(LawSpec::Custom(name)) => registry
                .get(name)
                .cloned()
                .ok_or_else(|| CliError::invalid(format!("law.custom: no law registered as {name:?}"))),
        }
    }

    pub fn domain(&self) -> Result<DomainBox, CliError> {
        let d = self
            .certificate
            .domain
            .clone()
            .ok_or_else(|| CliError::invalid("certificate.domain: missing"))?;
        if d.dim() != self.state_dim() {
            return Err(CliError::invalid(format!(
                "certificate.domain: dimension {} does not match state dimension {}",
                d.dim(),
                self.state_dim()
            )));
        }
        Ok(d)
    }
}

/// Feedback laws registered by embedding code, addressed as `{"custom": name}`.
#[derive(Clone, Default)]
pub struct LawRegistry {
    laws: BTreeMap<String, FeedbackLaw>,
}

impl LawRegistry {
    pub fn register(&mut self, name: impl Into<String>, law: FeedbackLaw) -> &mut Self {
        self.laws.insert(name.into(), law);
        self
    }

    pub fn register_fn<F>(&mut self, name: &str, state_dim: usize, control_dim: usize, f: F) -> &mut Self
    where
        F: Fn(&nalgebra::DVector<f64>, usize) -> nalgebra::DVector<f64> + Send + Sync + 'static,
    {
        let law = FeedbackLaw::Custom {
            name: name.to_string(),
            state_dim,
            control_dim,
            map: Arc::new(f),
        };
        self.register(name, law)
    }

    pub fn get(&self, name: &str) -> Option<&FeedbackLaw> {
        self.laws.get(name)
    }
}
