//! Run configuration: one TOML file per run, validated at parse time.

use std::path::{Path, PathBuf};

use multibump::{GridSpec, Model, Nonlinearity, Potential};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub potential: PotentialConfig,
    pub nonlinearity: NonlinearityConfig,
    /// Total mass alpha of the (multi)bump solution.
    pub mass: f64,
    #[serde(default)]
    pub bumps: BumpsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub semiclassical: Option<SemiclassicalConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "L")]
    pub half_width: u32,
    #[serde(rename = "M")]
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum PotentialConfig {
    Constant {
        value: f64,
    },
    Cosine {
        #[serde(rename = "A")]
        amplitude: f64,
        #[serde(default)]
        shift: f64,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub p: f64,
    /// f = 0 instead of the power; the exponent is then only recorded.
    #[serde(default)]
    pub linear: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpsConfig {
    #[serde(default = "one")]
    pub n: usize,
    /// Separations d of evenly spaced configurations.
    #[serde(default)]
    pub separations: Vec<u64>,
    /// Explicit offsets; used instead of the separations when given.
    #[serde(default)]
    pub offsets: Vec<i64>,
    /// Where the single bump is seeded.
    #[serde(default)]
    pub center: f64,
}

fn one() -> usize {
    1
}

impl Default for BumpsConfig {
    fn default() -> Self {
        Self {
            n: 1,
            separations: Vec::new(),
            offsets: Vec::new(),
            center: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub flow_tol: f64,
    pub flow_max_iter: usize,
    pub zero_threshold_rel: f64,
    /// Largest sup-norm residual accepted for an input field.
    pub residual_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-11,
            newton_max_iter: 30,
            flow_tol: 1e-7,
            flow_max_iter: 5000,
            zero_threshold_rel: 1e-6,
            residual_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Seeding {
    None,
    Eigenvector,
    Random,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub dt: f64,
    pub t_end: f64,
    pub amplitude: f64,
    pub seeding: Seeding,
    pub record_stride: usize,
    pub seed: u64,
    /// Orbit-ball radius whose first crossing is reported.
    pub exit_level: f64,
    /// Stop the run once the orbit distance reaches this value.
    pub stop_distance: Option<f64>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 10.0,
            amplitude: 1e-5,
            seeding: Seeding::Eigenvector,
            record_stride: 100,
            seed: 1,
            exit_level: 1e-2,
            stop_distance: Some(5e-2),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiclassicalConfig {
    pub eps_list: Vec<f64>,
    /// Number of peaks for the mass-matched glue; omitted skips it.
    #[serde(default)]
    pub glue_n: Option<usize>,
    /// Offsets in the rescaled frame for the mass-matched glue.
    #[serde(default)]
    pub glue_offsets: Vec<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub exponents: Vec<f64>,
    #[serde(default)]
    pub counts: Vec<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        Ok((cfg, hash_hex(text.as_bytes())))
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        GridSpec::aligned(self.grid.half_width, self.grid.points).map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.nonlinearity.p.is_finite() && self.nonlinearity.p > 2.0) {
            return bad(format!("p = {} must exceed 2", self.nonlinearity.p));
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return bad(format!("mass = {} must be positive", self.mass));
        }
        if self.bumps.n == 0 {
            return bad("bumps.n must be at least 1".into());
        }
        if !self.bumps.offsets.is_empty() && self.bumps.offsets.len() != self.bumps.n {
            return bad(format!(
                "bumps.offsets has {} entries, bumps.n = {}",
                self.bumps.offsets.len(),
                self.bumps.n
            ));
        }
        if let PotentialConfig::Cosine { amplitude, shift } = self.potential {
            if !(amplitude.is_finite() && shift.is_finite()) {
                return bad("potential parameters must be finite".into());
            }
        }
        let d = &self.dynamics;
        if !(d.dt > 0.0 && d.t_end >= 0.0 && d.record_stride > 0 && d.amplitude >= 0.0) {
            return bad("dynamics needs dt > 0, t_end >= 0, record_stride > 0, amplitude >= 0".into());
        }
        if let Some(sc) = &self.semiclassical {
            if sc.eps_list.is_empty() || sc.eps_list.windows(2).any(|w| w[1] >= w[0]) || sc.eps_list.iter().any(|e| *e < 0.0) {
                return bad("semiclassical.eps_list must be nonempty, nonnegative and strictly descending".into());
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.exponents.iter().any(|p| !(*p > 2.0)) {
                return bad("sweep exponents must exceed 2".into());
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::aligned(self.grid.half_width, self.grid.points).expect("validated")
    }

    pub fn potential(&self) -> Potential {
        match self.potential {
            PotentialConfig::Constant { value } => Potential::constant(value),
            PotentialConfig::Cosine { amplitude, shift } => Potential::cosine(amplitude, shift),
        }
    }

    pub fn nonlinearity_with(&self, p: f64) -> Nonlinearity {
        if self.nonlinearity.linear {
            Nonlinearity {
                exponent: p,
                coupling: 0.0,
            }
        } else {
            Nonlinearity::power(p).expect("validated")
        }
    }

    pub fn model(&self) -> Model {
        Model::new(self.potential(), self.nonlinearity_with(self.nonlinearity.p))
    }
}

pub fn hash_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
