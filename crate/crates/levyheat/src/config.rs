//! TOML experiment configuration: strict schema, whole-file validation that
//! collects every violation, construction of the runtime objects, and a
//! content hash that names run directories.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::grid::{Field, IntervalGrid};
use crate::integrator::{JumpMode, ModelParams, NoiseModel, StepScheme};
use crate::levy::LevyMeasureSpec;
use crate::noise::{AdditiveNoise, EtaProfile, MultiplicativeNoise};

/// Schema version accepted by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// Top-level experiment file. All physical parameters are mandatory; only
/// bookkeeping knobs carry defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelSection,
    pub domain: DomainSection,
    pub initial: InitialCondition,
    pub noise: NoiseSection,
    #[serde(default = "LevyMeasureSpec::none")]
    pub levy: LevyMeasureSpec,
    pub scheme: SchemeSection,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub alpha: f64,
    pub beta: f64,
    pub m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub length: f64,
    /// interior node count
    pub n: usize,
}

/// Initial datum presets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    /// `u0(x) = amplitude * sin(mode * pi * x / length)`
    Sine { amplitude: f64, mode: u32 },
    /// `u0(x) = amplitude * x * (length - x)`
    Bump { amplitude: f64 },
}

impl InitialCondition {
    pub fn build(&self, grid: IntervalGrid) -> Field {
        match *self {
            InitialCondition::Zero => Field::zeros(grid),
            InitialCondition::Sine { amplitude, mode } => {
                let k = mode as f64 * std::f64::consts::PI / grid.length();
                Field::from_fn(grid, |x| amplitude * (k * x).sin())
            }
            InitialCondition::Bump { amplitude } => {
                let l = grid.length();
                Field::from_fn(grid, |x| amplitude * x * (l - x))
            }
        }
    }
}

/// Noise families expressible in the file format. The additive family is a
/// closed set of presets so that configurations stay serializable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSection {
    None,
    Additive {
        /// amplitude of `sigma(x,t) = a e^{-d t} sin(k pi x / L)`; 0 disables
        sigma_amplitude: f64,
        sigma_decay: f64,
        sigma_mode: u32,
        /// amplitude of `eta(x,t,z) = z a e^{-d t} sin(k pi x / L)`; 0 disables
        eta_amplitude: f64,
        eta_decay: f64,
        eta_mode: u32,
        /// coefficients are treated as zero beyond this time
        decay_horizon: f64,
    },
    Multiplicative {
        sigma: f64,
        eta: EtaProfile,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub dt: f64,
    #[serde(default = "default_jump_mode")]
    pub jump_mode: JumpMode,
}

fn default_jump_mode() -> JumpMode {
    JumpMode::JumpAdapted
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub paths: usize,
    pub master_seed: u64,
    pub horizon: f64,
    #[serde(default = "default_record_stride")]
    pub record_stride: usize,
    #[serde(default = "default_blowup_threshold")]
    pub blowup_threshold: f64,
    /// mean-square detection threshold for `E||u||^2`
    #[serde(default = "default_theta_ms")]
    pub theta_ms: f64,
}

fn default_record_stride() -> usize {
    1
}

fn default_blowup_threshold() -> f64 {
    1e8
}

fn default_theta_ms() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// parent directory for run outputs; the run itself lands in a
    /// subdirectory named by the config hash
    pub dir: Option<String>,
}

/// Runtime objects assembled from a validated configuration.
pub struct BuiltExperiment {
    pub params: ModelParams,
    pub grid: IntervalGrid,
    pub u0: Field,
    pub noise: NoiseModel,
    pub additive: Option<AdditiveNoise>,
    pub multiplicative: Option<MultiplicativeNoise>,
    pub levy: LevyMeasureSpec,
    pub ensemble: EnsembleConfig,
    pub theta_ms: f64,
}

impl ExperimentConfig {
    /// Parses and validates a TOML string. Parse errors surface one at a
    /// time (that is how decoding works); semantic violations are collected
    /// exhaustively into a single [`Error::ConfigInvalid`].
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Collects every semantic violation before reporting.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} is not supported (this build reads {})",
                self.schema_version, SCHEMA_VERSION
            ));
        }
        if !(self.model.alpha >= 0.0 && self.model.alpha.is_finite()) {
            errs.push(format!(
                "model.alpha must be finite and >= 0, got {}",
                self.model.alpha
            ));
        }
        if !(self.model.beta >= 0.0 && self.model.beta.is_finite()) {
            errs.push(format!(
                "model.beta must be finite and >= 0, got {}",
                self.model.beta
            ));
        }
        if !(self.model.m > 1.0 && self.model.m.is_finite()) {
            errs.push(format!("model.m must be finite and > 1, got {}", self.model.m));
        }
        if !(self.domain.length > 0.0 && self.domain.length.is_finite()) {
            errs.push(format!(
                "domain.length must be positive, got {}",
                self.domain.length
            ));
        }
        if self.domain.n < 2 {
            errs.push(format!(
                "domain.n must be >= 2 interior nodes, got {}",
                self.domain.n
            ));
        }
        match &self.initial {
            InitialCondition::Sine { amplitude, mode } => {
                if !amplitude.is_finite() {
                    errs.push("initial.amplitude must be finite".into());
                }
                if *mode == 0 {
                    errs.push("initial.mode must be >= 1".into());
                }
            }
            InitialCondition::Bump { amplitude } => {
                if !amplitude.is_finite() {
                    errs.push("initial.amplitude must be finite".into());
                }
            }
            InitialCondition::Zero => {}
        }
        match &self.noise {
            NoiseSection::Additive {
                sigma_amplitude,
                sigma_decay,
                sigma_mode,
                eta_amplitude,
                eta_decay,
                eta_mode,
                decay_horizon,
            } => {
                for (name, v) in [
                    ("noise.sigma_amplitude", *sigma_amplitude),
                    ("noise.sigma_decay", *sigma_decay),
                    ("noise.eta_amplitude", *eta_amplitude),
                    ("noise.eta_decay", *eta_decay),
                ] {
                    if !v.is_finite() {
                        errs.push(format!("{name} must be finite, got {v}"));
                    }
                }
                if *sigma_decay < 0.0 || *eta_decay < 0.0 {
                    errs.push("noise decay rates must be >= 0".into());
                }
                if *sigma_mode == 0 || *eta_mode == 0 {
                    errs.push("noise mode numbers must be >= 1".into());
                }
                if !(*decay_horizon > 0.0 && decay_horizon.is_finite()) {
                    errs.push(format!(
                        "noise.decay_horizon must be positive and finite, got {decay_horizon}"
                    ));
                }
                if *eta_amplitude != 0.0 && self.levy.total_rate() == 0.0 {
                    errs.push(
                        "noise.eta_amplitude is nonzero but the levy measure is empty".into(),
                    );
                }
            }
            NoiseSection::Multiplicative { sigma, eta } => {
                if !sigma.is_finite() {
                    errs.push("noise.sigma must be finite".into());
                }
                if let Err(e) = MultiplicativeNoise::new(0.0, *eta, &self.levy) {
                    errs.push(format!("noise.eta: {e}"));
                }
            }
            NoiseSection::None => {}
        }
        if let Err(e) = self.levy.validate() {
            errs.push(format!("levy: {e}"));
        }
        if !(self.scheme.dt > 0.0 && self.scheme.dt.is_finite()) {
            errs.push(format!("scheme.dt must be positive, got {}", self.scheme.dt));
        }
        if self.ensemble.paths == 0 {
            errs.push("ensemble.paths must be >= 1".into());
        }
        if !(self.ensemble.horizon > 0.0 && self.ensemble.horizon.is_finite()) {
            errs.push(format!(
                "ensemble.horizon must be positive, got {}",
                self.ensemble.horizon
            ));
        }
        if self.ensemble.record_stride == 0 {
            errs.push("ensemble.record_stride must be >= 1".into());
        }
        if !(self.ensemble.blowup_threshold > 0.0) {
            errs.push("ensemble.blowup_threshold must be positive".into());
        }
        if !(self.ensemble.theta_ms > 0.0) {
            errs.push("ensemble.theta_ms must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(errs))
        }
    }

    /// Assembles the runtime objects. Assumes [`validate`](Self::validate)
    /// has passed.
    pub fn build(&self) -> Result<BuiltExperiment> {
        let params = ModelParams::new(self.model.alpha, self.model.beta, self.model.m)?;
        let grid = IntervalGrid::new(self.domain.length, self.domain.n)?;
        let u0 = self.initial.build(grid);
        let (noise, additive, multiplicative) = match &self.noise {
            NoiseSection::None => (NoiseModel::none(), None, None),
            NoiseSection::Additive {
                sigma_amplitude,
                sigma_decay,
                sigma_mode,
                eta_amplitude,
                eta_decay,
                eta_mode,
                decay_horizon,
            } => {
                let sig = AdditiveNoise::decaying_sine(
                    *sigma_amplitude,
                    *sigma_decay,
                    *sigma_mode,
                    self.domain.length,
                    *decay_horizon,
                )?;
                let eta = AdditiveNoise::decaying_sine_marks(
                    *eta_amplitude,
                    *eta_decay,
                    *eta_mode,
                    self.domain.length,
                    *decay_horizon,
                )?;
                let add = AdditiveNoise::combine(&sig, &eta);
                (NoiseModel::Additive(add.clone()), Some(add), None)
            }
            NoiseSection::Multiplicative { sigma, eta } => {
                let mul = MultiplicativeNoise::new(*sigma, *eta, &self.levy)?;
                (
                    NoiseModel::Multiplicative(mul.clone()),
                    None,
                    Some(mul),
                )
            }
        };
        let ensemble = EnsembleConfig {
            paths: self.ensemble.paths,
            master_seed: self.ensemble.master_seed,
            scheme: StepScheme {
                dt: self.scheme.dt,
                jump_mode: self.scheme.jump_mode,
                record_fields: false,
            },
            horizon: self.ensemble.horizon,
            record_stride: self.ensemble.record_stride,
            blowup_threshold: self.ensemble.blowup_threshold,
        };
        ensemble.validate()?;
        Ok(BuiltExperiment {
            params,
            grid,
            u0,
            noise,
            additive,
            multiplicative,
            levy: self.levy.clone(),
            ensemble,
            theta_ms: self.ensemble.theta_ms,
        })
    }

    /// Content hash of the canonical JSON re-serialization (struct field
    /// order is fixed, so the hash is independent of TOML formatting).
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}
