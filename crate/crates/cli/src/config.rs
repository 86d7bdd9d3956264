//! Run configuration as read from JSON, and its validation.

use std::path::{Path, PathBuf};

use cmvspec_core::cocycle::LyapunovMethod;
use cmvspec_core::multiscale::{ScaleSchedule, ScheduleParams};
use cmvspec_core::scalar::cis;
use cmvspec_core::spectral::MAX_EIGEN_DIM;
use cmvspec_core::torus::SamplingFunctionSpec;
use cmvspec_core::{
    Complex64, Frequency64, QuasiPeriodicModel64, SamplingFunction64, ScaleSchedule64,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sampling: SamplingFunctionSpec,
    pub frequency: FrequencyConfig,
    /// Coefficients α_n replaced at single sites.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<OverrideSpec>,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldt: Option<LdtConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localize: Option<LocalizeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiscale: Option<MultiscaleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<IdentityConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    pub omega: Vec<f64>,
    /// When present, ω must pass the Diophantine check with these constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diophantine: Option<DiophantineConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiophantineConfig {
    pub p: f64,
    pub q: f64,
    pub k_max: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideSpec {
    pub n: i64,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// β = e^{iβ_θ}, η = e^{iη_θ}.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(default)]
    pub beta_theta: f64,
    #[serde(default)]
    pub eta_theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    /// Explicit θ values; otherwise `grid` equally spaced points on [0, 2π).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    pub n_list: Vec<usize>,
    pub samples: usize,
    #[serde(default = "default_method")]
    pub method: LyapunovMethod,
    /// Doublings for the avalanche method; the reported n is n·2^levels.
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_method() -> LyapunovMethod {
    LyapunovMethod::Direct
}

fn default_levels() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdtConfig {
    pub theta: f64,
    pub n_list: Vec<usize>,
    pub tau: f64,
    pub samples: usize,
    /// Scan log|φ| instead of log‖M_n‖.
    #[serde(default)]
    pub determinant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub arc: [f64; 2],
    pub grid: usize,
    /// Window [−n, n].
    pub n: usize,
    pub tol: f64,
    #[serde(default = "default_phase_samples")]
    pub phase_samples: usize,
    #[serde(default)]
    pub refine_steps: usize,
}

fn default_phase_samples() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeConfig {
    pub x0: Vec<f64>,
    pub n0: usize,
    /// Decay rate; fitted per eigenvalue as L − 3·stderr when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Only eigenvectors peaked within this distance of 0 are profiled (default N₀/4).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_within: Option<i64>,
    #[serde(default = "default_fit_n")]
    pub fit_n: usize,
    #[serde(default = "default_fit_samples")]
    pub fit_samples: usize,
}

fn default_fit_n() -> usize {
    100
}

fn default_fit_samples() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiscaleConfig {
    /// Its `s_max` is the depth the run tries to reach.
    #[serde(default)]
    pub schedule: ScheduleParams,
    /// φ₀ on 𝕋^{d−1}.
    pub phi0: Vec<f64>,
    pub z0_theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_ms_samples")]
    pub samples: usize,
    #[serde(default = "default_extra")]
    pub extra_samples: usize,
    /// Refuse to advance unless (A)-(D) hold at the current depth.
    #[serde(default = "default_true")]
    pub require_conditions: bool,
    #[serde(default = "default_fit_n")]
    pub fit_n: usize,
    #[serde(default = "default_fit_samples")]
    pub fit_samples: usize,
}

fn default_grid() -> usize {
    3
}

fn default_ms_samples() -> usize {
    20
}

fn default_extra() -> usize {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityConfig {
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_cases() -> usize {
    50
}

fn default_max_n() -> usize {
    60
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub unitarity: f64,
    pub factorization: f64,
    pub relation: f64,
    pub green: f64,
    pub poisson: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            unitarity: 1e-12,
            factorization: 1e-13,
            relation: 1e-8,
            green: 1e-8,
            poisson: 1e-9,
        }
    }
}

/// A manifest written by an earlier run; its config is reused as is.
#[derive(Deserialize)]
struct ManifestInput {
    command: String,
    config: RunConfig,
}

/// Reads a config file or a run manifest.
pub fn load(path: &Path, command: &str) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{} is not valid JSON: {e}", path.display())))?;
    let is_manifest = value.get("command").is_some() && value.get("config").is_some();
    if is_manifest {
        let m: ManifestInput = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("bad manifest {}: {e}", path.display())))?;
        if m.command != command {
            return Err(CliError::Config(format!(
                "manifest {} was written by `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        return Ok(m.config);
    }
    serde_json::from_value(value)
        .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
}

/// The pieces every command needs, built and validated up front.
pub struct Prepared {
    pub f: SamplingFunction64,
    pub omega: Frequency64,
    pub model: QuasiPeriodicModel64,
    pub beta: Complex64,
    pub eta: Complex64,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let f = SamplingFunction64::from_spec(&cfg.sampling).map_err(config_err("sampling"))?;
    if cfg.frequency.omega.len() != f.dim() {
        return Err(CliError::Config(format!(
            "frequency has dimension {}, sampling function has {}",
            cfg.frequency.omega.len(),
            f.dim()
        )));
    }
    let omega = Frequency64::new(&cfg.frequency.omega);
    if let Some(d) = &cfg.frequency.diophantine {
        let cert = omega
            .certify(d.p, d.q, d.k_max)
            .map_err(config_err("frequency"))?;
        if !cert.ok {
            return Err(CliError::Config(format!(
                "frequency fails the Diophantine condition at k = {:?} (ratio {:e} < p = {})",
                cert.worst_k, cert.worst_ratio, d.p
            )));
        }
    }
    let mut model =
        QuasiPeriodicModel64::new(f.clone(), omega.clone()).map_err(config_err("model"))?;
    for o in &cfg.overrides {
        model = model
            .with_override(o.n, Complex64::new(o.re, o.im))
            .map_err(config_err("overrides"))?;
    }
    Ok(Prepared {
        f,
        omega,
        model,
        beta: cis(cfg.boundary.beta_theta),
        eta: cis(cfg.boundary.eta_theta),
    })
}

fn config_err(what: &'static str) -> impl Fn(cmvspec_core::CmvError) -> CliError {
    move |e| CliError::Config(format!("{what}: {e}"))
}

fn need<'a, T>(block: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    block
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("config has no `{name}` block")))
}

fn positive(v: usize, name: &str) -> Result<(), CliError> {
    if v == 0 {
        return Err(CliError::Config(format!("{name} must be positive")));
    }
    Ok(())
}

impl RunConfig {
    pub fn lyapunov(&self) -> Result<&LyapunovConfig, CliError> {
        let c = need(&self.lyapunov, "lyapunov")?;
        positive(c.samples, "lyapunov.samples")?;
        if c.n_list.is_empty() || c.n_list.contains(&0) {
            return Err(CliError::Config(
                "lyapunov.n_list must be nonempty and positive".into(),
            ));
        }
        match (&c.thetas, c.grid) {
            (Some(t), None) if !t.is_empty() => Ok(c),
            (None, Some(g)) if g > 0 => Ok(c),
            _ => Err(CliError::Config(
                "lyapunov needs exactly one of a nonempty `thetas` or a positive `grid`".into(),
            )),
        }
    }

    pub fn ldt(&self) -> Result<&LdtConfig, CliError> {
        let c = need(&self.ldt, "ldt")?;
        positive(c.samples, "ldt.samples")?;
        if c.n_list.is_empty() || c.n_list.contains(&0) {
            return Err(CliError::Config(
                "ldt.n_list must be nonempty and positive".into(),
            ));
        }
        if !(c.tau > 0.0 && c.tau < 1.0) {
            return Err(CliError::Config(format!(
                "ldt.tau = {} is outside (0, 1)",
                c.tau
            )));
        }
        Ok(c)
    }

    pub fn spectrum(&self) -> Result<&SpectrumConfig, CliError> {
        let c = need(&self.spectrum, "spectrum")?;
        let [t1, t2] = c.arc;
        if !(t1.is_finite() && t2.is_finite() && t2 > t1) {
            return Err(CliError::Config(format!(
                "spectrum.arc [{t1}, {t2}] must have θ₁ < θ₂"
            )));
        }
        if c.grid < 2 {
            return Err(CliError::Config(
                "spectrum.grid needs at least 2 points".into(),
            ));
        }
        if c.n == 0 || 2 * c.n + 1 > MAX_EIGEN_DIM {
            return Err(CliError::Config(format!(
                "spectrum.n = {} is outside the eigensolver range",
                c.n
            )));
        }
        if c.tol.is_nan() || c.tol <= 0.0 {
            return Err(CliError::Config("spectrum.tol must be positive".into()));
        }
        positive(c.phase_samples, "spectrum.phase_samples")?;
        Ok(c)
    }

    pub fn localize(&self) -> Result<&LocalizeConfig, CliError> {
        let c = need(&self.localize, "localize")?;
        if c.x0.len() != self.sampling.dim {
            return Err(CliError::Config(format!(
                "localize.x0 must have {} coordinates",
                self.sampling.dim
            )));
        }
        if c.n0 < 2 || 2 * c.n0 + 1 > MAX_EIGEN_DIM {
            return Err(CliError::Config(format!(
                "localize.n0 = {} is outside the eigensolver range",
                c.n0
            )));
        }
        positive(c.fit_n, "localize.fit_n")?;
        positive(c.fit_samples, "localize.fit_samples")?;
        Ok(c)
    }

    pub fn multiscale(&self) -> Result<(&MultiscaleConfig, ScaleSchedule64), CliError> {
        let c = need(&self.multiscale, "multiscale")?;
        let schedule =
            ScaleSchedule::from_params(&c.schedule).map_err(config_err("multiscale.schedule"))?;
        if c.phi0.len() + 1 != self.sampling.dim {
            return Err(CliError::Config(format!(
                "multiscale.phi0 must have {} coordinates",
                self.sampling.dim - 1
            )));
        }
        positive(c.samples, "multiscale.samples")?;
        positive(c.fit_n, "multiscale.fit_n")?;
        positive(c.fit_samples, "multiscale.fit_samples")?;
        Ok((c, schedule))
    }

    pub fn identity(&self) -> Result<IdentityConfig, CliError> {
        let c = self.identity.clone().unwrap_or(IdentityConfig {
            cases: default_cases(),
            max_n: default_max_n(),
            thresholds: Thresholds::default(),
        });
        positive(c.cases, "identity.cases")?;
        if c.max_n < 4 || c.max_n > 400 {
            return Err(CliError::Config(format!(
                "identity.max_n = {} is outside [4, 400]",
                c.max_n
            )));
        }
        Ok(c)
    }
}
