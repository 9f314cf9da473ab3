//! Run configuration, read from TOML.
//!
//! Every field has a default, so an empty file is a valid configuration:
//!
//! ```toml
//! schema_version = 1
//! horizon = 1.0
//! steps = 4096
//! samples = 10000
//! seed = 1
//! x0 = [0.0, 0.0, 0.0]
//! workers = 0            # 0 = one per core
//! betas = [0.0, 1.0, 2.0, 5.0]
//!
//! [process]
//! kind = "bm"            # bm | bridge | sde
//! # drift = { type = "constant", c = [0.1, 0.0, 0.0] }   (sde only)
//!
//! [cross_section]
//! type = "gaussian"
//! sigma = 0.5
//! mass = 1.0
//!
//! [kgrid]
//! radial = 64
//! n_theta = 16
//! n_phi = 32
//!
//! [gibbs]
//! ess_threshold = 50.0
//!
//! [interact]
//! mode = "both"          # tanaka_rosen | mollified | both
//! pairs = 100
//! separation = 0.0
//!
//! [verify]
//! bridge_samples = 2000
//! decomposition_samples = 2000
//! multi_vortex_triples = 1000
//! tail_samples = 100000
//! tail_steps = 1024
//! mc_samples = 1000000
//! ```

use serde::{Deserialize, Serialize};

use crate::cross_section::CrossSection;
use crate::error::{Error, Result};
use crate::gibbs::{EnsembleSpec, DEFAULT_ESS_THRESHOLD};
use crate::kgrid::{KGrid, KGridSpec};
use crate::paths::{Process, TimeGrid};
use crate::vec3::{self, Vec3};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub horizon: f64,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub x0: Vec3,
    pub workers: usize,
    pub betas: Vec<f64>,
    pub process: Process,
    pub cross_section: CrossSection,
    pub kgrid: KGridSpec,
    pub gibbs: GibbsOptions,
    pub interact: InteractOptions,
    pub verify: VerifyOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            horizon: 1.0,
            steps: 4096,
            samples: 10_000,
            seed: 1,
            x0: [0.0; 3],
            workers: 0,
            betas: vec![0.0, 1.0, 2.0, 5.0],
            process: Process::Bm,
            cross_section: CrossSection::gaussian(0.5, 1.0),
            kgrid: KGridSpec::default(),
            gibbs: GibbsOptions::default(),
            interact: InteractOptions::default(),
            verify: VerifyOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsOptions {
    pub ess_threshold: f64,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self {
            ess_threshold: DEFAULT_ESS_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractMode {
    TanakaRosen,
    Mollified,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractOptions {
    pub mode: InteractMode,
    pub pairs: usize,
    /// Distance between the two starting points along the first axis.
    pub separation: f64,
    /// Mollifier width; `dt^{1/2}` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

impl Default for InteractOptions {
    fn default() -> Self {
        Self {
            mode: InteractMode::Both,
            pairs: 100,
            separation: 0.0,
            eps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    pub bridge_samples: usize,
    pub decomposition_samples: usize,
    pub multi_vortex_triples: usize,
    pub tail_samples: usize,
    pub tail_steps: usize,
    pub mc_samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            bridge_samples: 2000,
            decomposition_samples: 2000,
            multi_vortex_triples: 1000,
            tail_samples: 100_000,
            tail_steps: 1024,
            mc_samples: 1_000_000,
        }
    }
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(field_error(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        TimeGrid::new(self.horizon, self.steps).map_err(|e| field_error("horizon/steps", e))?;
        if self.samples == 0 {
            return Err(field_error("samples", "must be at least 1"));
        }
        if !vec3::is_finite(&self.x0) {
            return Err(field_error("x0", "must be finite"));
        }
        if let Some(b) = self.betas.iter().find(|b| !b.is_finite()) {
            return Err(field_error("betas", format!("{b} is not finite")));
        }
        if let Process::Sde {
            drift: crate::paths::DriftSpec::Constant { c },
        } = &self.process
        {
            if !vec3::is_finite(c) {
                return Err(field_error("process.drift.c", "must be finite"));
            }
        }
        self.cross_section.validate().map_err(|e| field_error("cross_section", e))?;
        self.kgrid.validate().map_err(|e| field_error("kgrid", e))?;
        if !(self.gibbs.ess_threshold >= 0.0) {
            return Err(field_error("gibbs.ess_threshold", "must be nonnegative"));
        }
        if !(self.interact.separation >= 0.0 && self.interact.separation.is_finite()) {
            return Err(field_error("interact.separation", "must be finite and nonnegative"));
        }
        if let Some(eps) = self.interact.eps {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(field_error("interact.eps", "must be positive"));
            }
        }
        if self.interact.pairs == 0 {
            return Err(field_error("interact.pairs", "must be at least 1"));
        }
        if self.verify.tail_steps == 0 {
            return Err(field_error("verify.tail_steps", "must be at least 1"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn kgrid(&self) -> Result<KGrid> {
        KGrid::new(&self.kgrid, &self.cross_section)
    }

    pub fn ensemble(&self) -> Result<EnsembleSpec> {
        Ok(EnsembleSpec {
            process: self.process.clone(),
            grid: self.grid()?,
            x0: self.x0,
            cross_section: self.cross_section.clone(),
            master_seed: self.seed,
            samples: self.samples,
            first_index: 0,
        })
    }
}
