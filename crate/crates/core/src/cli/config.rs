//! JSON run configuration.
//!
//! ```json
//! {
//!   "kernel": {"type": "constant", "value": 1.0},
//!   "variant": "isolated",
//!   "N": 32,
//!   "initial": {"shape": "monodisperse", "size": 1, "amount": 1.0},
//!   "integrator": {"rtol": 1e-9, "sample_times": [0, 0.5, 1]},
//!   "outputs": {"time_series": "series.csv"},
//!   "diagnostics": {"sigma": {"power": 1.5}, "lyapunov_profile": {"kind": "ones"}}
//! }
//! ```
//!
//! Only `kernel` and `N` are required.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::analysis::{BalanceProfile, SigmaFunction};
use crate::integrate::{Diagnostics, IntegratorConfig};
use crate::kernels::{make_coagfrag_kernel, make_edg_kernel, BoundCertificate, PairRate, RateKernel};
use crate::state::{InitialShape, Variant};

fn one() -> f64 {
    1.0
}

/// Rate depending on two cluster sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BinaryRateSpec {
    /// `value`
    Constant { value: f64 },
    /// `scale (x + y)`
    Sum {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale x y`
    Product {
        #[serde(default = "one")]
        scale: f64,
    },
}

impl BinaryRateSpec {
    fn parameter(&self) -> f64 {
        match *self {
            BinaryRateSpec::Constant { value } => value,
            BinaryRateSpec::Sum { scale } | BinaryRateSpec::Product { scale } => scale,
        }
    }

    pub fn build(&self) -> Result<PairRate, CliError> {
        let p = self.parameter();
        if !(p.is_finite() && p >= 0.0) {
            return Err(CliError::Config(format!("rate parameter must be finite and nonnegative, got {p}")));
        }
        Ok(match *self {
            BinaryRateSpec::Constant { value } => std::sync::Arc::new(move |_, _| value),
            BinaryRateSpec::Sum { scale } => std::sync::Arc::new(move |x, y| scale * (x + y) as f64),
            BinaryRateSpec::Product { scale } => std::sync::Arc::new(move |x, y| scale * (x * y) as f64),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    Unbounded,
    /// `a(i,j;1) = rate(i,j)`.
    Edg { rate: BinaryRateSpec },
    BoundedExchange {
        max_exchange: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    CoagFrag {
        coag: BinaryRateSpec,
        frag: BinaryRateSpec,
        c00: f64,
    },
    /// CSV table `i,j,k,value`; relative paths are resolved against the config file.
    Table { path: PathBuf },
}

impl KernelSpec {
    pub fn build(&self) -> Result<RateKernel, CliError> {
        let kernel = match self {
            KernelSpec::Constant { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(CliError::Config(format!("constant kernel value must be nonnegative, got {value}")));
                }
                RateKernel::constant(*value)
            }
            KernelSpec::Unbounded => RateKernel::unbounded_example(),
            KernelSpec::Edg { rate } => {
                let f = rate.build()?;
                make_edg_kernel(move |i, j| f(i, j))
            }
            KernelSpec::BoundedExchange { max_exchange, scale } => {
                if *max_exchange == 0 || !(scale.is_finite() && *scale >= 0.0) {
                    return Err(CliError::Config("bounded_exchange needs max_exchange >= 1 and a nonnegative scale".into()));
                }
                RateKernel::bounded_exchange(*max_exchange, *scale)
            }
            KernelSpec::CoagFrag { coag, frag, c00 } => {
                let a = coag.build()?;
                let b = frag.build()?;
                make_coagfrag_kernel(move |i, j| a(i, j), move |i, j| b(i, j), *c00).map_err(|e| CliError::Config(e.to_string()))?
            }
            KernelSpec::Table { path } => RateKernel::load_table_csv(path).map_err(|e| CliError::Config(e.to_string()))?,
        };
        Ok(kernel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Directory for all outputs; `--out` overrides it. Relative to the working directory.
    pub dir: PathBuf,
    pub time_series: PathBuf,
    pub summary: PathBuf,
    pub sweep: PathBuf,
    pub audit: PathBuf,
    pub equilibrium: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("."),
            time_series: "timeseries.csv".into(),
            summary: "summary.json".into(),
            sweep: "sweep.csv".into(),
            audit: "audit.json".into(),
            equilibrium: "equilibrium.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSpec {
    pub power: f64,
    #[serde(default)]
    pub m_sigma: Option<f64>,
}

impl SigmaSpec {
    pub fn build(&self) -> Result<SigmaFunction, CliError> {
        let s = SigmaFunction::power(self.power).map_err(|e| CliError::Config(e.to_string()))?;
        match self.m_sigma {
            Some(m) => s.with_m_sigma(m).map_err(|e| CliError::Config(e.to_string())),
            None => Ok(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Ones,
    /// `O_0..O_M` with `M >= N`; entries beyond `N` are ignored.
    Explicit { values: Vec<f64> },
}

impl ProfileSpec {
    pub fn build(&self, n: usize) -> Result<BalanceProfile, CliError> {
        match self {
            ProfileSpec::Ones => Ok(BalanceProfile::ones(n)),
            ProfileSpec::Explicit { values } => {
                if values.len() < n + 1 {
                    return Err(CliError::Config(format!("profile has {} entries, N = {n} needs {}", values.len(), n + 1)));
                }
                BalanceProfile::new(values[..=n].to_vec()).map_err(|e| CliError::Config(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMode {
    /// A failed structural audit stops the run.
    #[default]
    Strict,
    /// Violations are reported on stderr and the run continues.
    Warn,
}

fn default_drift_threshold() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default)]
    pub sigma: Option<SigmaSpec>,
    #[serde(default)]
    pub lyapunov_profile: Option<ProfileSpec>,
    #[serde(default)]
    pub certificate: Option<BoundCertificate>,
    #[serde(default = "default_drift_threshold")]
    pub drift_threshold: f64,
    #[serde(default)]
    pub audit: AuditMode,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            sigma: None,
            lyapunov_profile: None,
            certificate: None,
            drift_threshold: default_drift_threshold(),
            audit: AuditMode::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    #[serde(default)]
    pub variant: Variant,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default)]
    pub initial: InitialShape,
    #[serde(default)]
    pub bath: Option<f64>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config file; relative table and output paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let KernelSpec::Table { path: table } = &mut config.kernel {
            if table.is_relative() {
                *table = base.join(&*table);
            }
        }
        if config.outputs.dir.is_relative() {
            config.outputs.dir = base.join(&config.outputs.dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 {
            return Err(CliError::Config("N must be at least 1".into()));
        }
        self.integrator.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(b) = self.bath {
            if !(b.is_finite() && b >= 0.0) {
                return Err(CliError::Config(format!("bath must be finite and nonnegative, got {b}")));
            }
        }
        let t = self.diagnostics.drift_threshold;
        if !(t.is_finite() && t >= 0.0) {
            return Err(CliError::Config(format!("drift_threshold must be nonnegative, got {t}")));
        }
        if let Some(cert) = &self.diagnostics.certificate {
            cert.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Bath concentration for the run: the configured value, else the kernel's
    /// own bath in the non-isolated variant. Conflicting values are an error.
    pub fn resolve_bath(&self, kernel: &RateKernel) -> Result<Option<f64>, CliError> {
        match self.variant {
            Variant::Isolated => Ok(None),
            Variant::NonIsolated => match (self.bath, kernel.bath_concentration()) {
                (Some(b), Some(k)) if b != k => Err(CliError::Config(format!(
                    "bath {b} conflicts with the kernel's bath concentration {k}"
                ))),
                (Some(b), _) | (None, Some(b)) => Ok(Some(b)),
                (None, None) => Err(CliError::Config("non_isolated variant requires a bath concentration".into())),
            },
        }
    }

    pub fn diagnostics(&self) -> Result<Diagnostics, CliError> {
        Ok(Diagnostics {
            sigma: self.diagnostics.sigma.as_ref().map(SigmaSpec::build).transpose()?,
            lyapunov_profile: self
                .diagnostics
                .lyapunov_profile
                .as_ref()
                .map(|p| p.build(self.n))
                .transpose()?,
        })
    }

    pub fn output_dir(&self, out: Option<&Path>) -> PathBuf {
        out.map(Path::to_path_buf).unwrap_or_else(|| self.outputs.dir.clone())
    }
}
