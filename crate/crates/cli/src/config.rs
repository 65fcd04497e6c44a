//! Strict JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use jointrecon::baseline::MiConfig;
use jointrecon::dtv::{ProxOptions, DEFAULT_EPS_REL, DEFAULT_GAMMA};
use jointrecon::fidelity::FidelityKind;
use jointrecon::palm::PalmOptions;
use jointrecon::scalespace::{ScaleSchedule, ScaleSpaceConfig};
use jointrecon::simulate::SimulationConfig;
use jointrecon::warp::Parametrization;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Reconstruct,
    Baseline,
    Evaluate,
    Sweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Joint,
    ThreeStep,
    /// Plain total variation, no side information, no registration.
    TvOnly,
    /// Directional total variation with the deformation held fixed.
    DtvFrozen,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Joint => "joint",
            Method::ThreeStep => "three_step",
            Method::TvOnly => "tv_only",
            Method::DtvFrozen => "dtv_frozen",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtvConfig {
    pub gamma: f64,
    pub eps_rel: f64,
    pub nonneg: bool,
}

impl Default for DtvConfig {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, eps_rel: DEFAULT_EPS_REL, nonneg: false }
    }
}

/// Overrides the fidelity implied by the dataset's noise model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityConfig {
    pub kind: FidelityKind,
    /// Background rate `r` of the Kullback-Leibler fidelity.
    #[serde(default)]
    pub background: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProxConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub check_every: usize,
}

impl Default for ProxConfig {
    fn default() -> Self {
        let p = ProxOptions::<f64>::default();
        Self { max_iters: p.max_iters, tol: p.tol, check_every: p.check_every }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PalmConfig {
    pub sigma0: f64,
    pub tau0: f64,
    pub grow: f64,
    pub shrink: f64,
    pub max_halvings: usize,
    /// Leading u-only iterations at the first stage.
    pub warmup: usize,
    pub prox: ProxConfig,
}

impl Default for PalmConfig {
    fn default() -> Self {
        let p = PalmOptions::<f64>::default();
        Self {
            sigma0: 1.0,
            tau0: 1.0,
            grow: p.grow,
            shrink: p.shrink,
            max_halvings: p.max_halvings,
            warmup: p.warmup,
            prox: ProxConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub method: Method,
    #[serde(default)]
    pub schedule: Option<ScaleSchedule>,
    /// Schedule of the side-information-free first step of `three_step`.
    #[serde(default)]
    pub tv_schedule: Option<ScaleSchedule>,
    #[serde(default)]
    pub dtv: DtvConfig,
    #[serde(default)]
    pub fidelity: Option<FidelityConfig>,
    #[serde(default)]
    pub palm: PalmConfig,
    #[serde(default)]
    pub parametrization: Parametrization,
    #[serde(default)]
    pub mi: MiConfig,
    /// Fixed parameters for `dtv_frozen`.
    #[serde(default)]
    pub phi: Option<Vec<f64>>,
    /// A `phi.json` to read the fixed parameters from.
    #[serde(default)]
    pub phi_file: Option<PathBuf>,
}

/// Rigid-angle by scale-space-depth grid of joint runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub thetas: Vec<f64>,
    /// Numbers of scale-space stages.
    pub sizes: Vec<usize>,
    /// Weight at the finest stage.
    pub alpha: f64,
    /// Weight ratio between consecutive stages.
    pub factor: f64,
    pub iterations: usize,
    /// Success threshold on the relative parameter difference, percent.
    #[serde(default = "default_success_rd")]
    pub success_rd: f64,
}

fn default_success_rd() -> f64 {
    20.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub reconstruction: Option<ReconstructionConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub save_stages: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })
    }

    /// Reads `path`; relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(CliError::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.dataset.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.output.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.reconstruction.as_mut().and_then(|r| r.phi_file.as_mut()) {
            resolve(p);
        }
        Ok(cfg)
    }

    /// Checks everything `mode` needs before any computation starts.
    pub fn validate(&self, mode: Mode) -> CliResult<()> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(CliError::config("mode", format!("config is for {m:?}, command is {mode:?}")));
            }
        }
        match mode {
            Mode::Simulate => {
                validate_simulation(self.simulation.as_ref())?;
            }
            Mode::Reconstruct | Mode::Baseline => {
                if self.dataset.is_none() {
                    return Err(CliError::config("dataset", "required"));
                }
                let r = self.reconstruction.as_ref().ok_or_else(|| CliError::config("reconstruction", "required"))?;
                if mode == Mode::Baseline && r.method != Method::ThreeStep {
                    return Err(CliError::config("reconstruction.method", "baseline runs require three_step"));
                }
                r.validate(true)?;
            }
            Mode::Evaluate => {}
            Mode::Sweep => {
                validate_simulation(self.simulation.as_ref())?;
                let r = self.reconstruction.as_ref().ok_or_else(|| CliError::config("reconstruction", "required"))?;
                if r.method != Method::Joint {
                    return Err(CliError::config("reconstruction.method", "sweeps run the joint method"));
                }
                r.validate(false)?;
                let s = self.sweep.as_ref().ok_or_else(|| CliError::config("sweep", "required"))?;
                s.validate()?;
            }
        }
        Ok(())
    }
}

fn validate_simulation(sim: Option<&SimulationConfig>) -> CliResult<()> {
    let sim = sim.ok_or_else(|| CliError::config("simulation", "required"))?;
    if sim.size < 16 {
        return Err(CliError::config("simulation.size", "must be at least 16"));
    }
    Ok(())
}

fn schedule_error(prefix: &str, e: jointrecon::Error) -> CliError {
    match e {
        jointrecon::Error::ScheduleError(msg) => match msg.split_once(": ") {
            Some((field, reason)) if !field.contains(' ') => CliError::config(format!("{prefix}.{field}"), reason),
            _ => CliError::config(prefix, msg),
        },
        other => other.into(),
    }
}

fn positive(field: &str, x: f64) -> CliResult<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(field, format!("must be positive and finite, got {x}")))
    }
}

impl ReconstructionConfig {
    fn validate(&self, needs_schedule: bool) -> CliResult<()> {
        const P: &str = "reconstruction";
        match &self.schedule {
            Some(s) => s.validate().map_err(|e| schedule_error("reconstruction.schedule", e))?,
            None if needs_schedule => return Err(CliError::config(format!("{P}.schedule"), "required")),
            None => {}
        }
        if self.method == Method::ThreeStep {
            let s = self
                .tv_schedule
                .as_ref()
                .ok_or_else(|| CliError::config(format!("{P}.tv_schedule"), "required by three_step"))?;
            s.validate().map_err(|e| schedule_error("reconstruction.tv_schedule", e))?;
            if let Some(main) = &self.schedule {
                if s.target() != main.target() {
                    return Err(CliError::config(
                        format!("{P}.tv_schedule.resolutions"),
                        "must end at the same resolution as the schedule",
                    ));
                }
            }
            self.mi.validate().map_err(|e| match e {
                jointrecon::Error::ConfigError { field, reason } => CliError::config(format!("{P}.{field}"), reason),
                other => other.into(),
            })?;
        }
        if self.method == Method::DtvFrozen {
            match (&self.phi, &self.phi_file) {
                (Some(_), Some(_)) => return Err(CliError::config(format!("{P}.phi"), "give either phi or phi_file")),
                (None, None) => {
                    return Err(CliError::config(format!("{P}.phi"), "dtv_frozen requires phi or phi_file"))
                }
                _ => {}
            }
        }
        if let Some(phi) = &self.phi {
            let n = self.parametrization.n_params();
            if phi.len() != n {
                return Err(CliError::config(
                    format!("{P}.phi"),
                    format!("expected {n} parameters, got {}", phi.len()),
                ));
            }
        }
        let d = &self.dtv;
        if !(0.0..1.0).contains(&d.gamma) {
            return Err(CliError::config(format!("{P}.dtv.gamma"), "must lie in [0, 1)"));
        }
        positive("reconstruction.dtv.eps_rel", d.eps_rel)?;
        if let Some(f) = &self.fidelity {
            if let Some(r) = f.background {
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(CliError::config(format!("{P}.fidelity.background"), "must be nonnegative"));
                }
            }
        }
        let p = &self.palm;
        positive("reconstruction.palm.sigma0", p.sigma0)?;
        positive("reconstruction.palm.tau0", p.tau0)?;
        if !(p.grow >= 1.0 && p.grow.is_finite()) {
            return Err(CliError::config(format!("{P}.palm.grow"), "must be at least 1"));
        }
        if !(p.shrink > 0.0 && p.shrink < 1.0) {
            return Err(CliError::config(format!("{P}.palm.shrink"), "must lie in (0, 1)"));
        }
        if p.prox.max_iters == 0 {
            return Err(CliError::config(format!("{P}.palm.prox.max_iters"), "must be positive"));
        }
        if p.prox.check_every == 0 {
            return Err(CliError::config(format!("{P}.palm.prox.check_every"), "must be positive"));
        }
        positive("reconstruction.palm.prox.tol", p.prox.tol)?;
        Ok(())
    }

    /// Solver settings shared by every method.
    pub fn scalespace_config(&self) -> ScaleSpaceConfig<f64> {
        let p = &self.palm;
        ScaleSpaceConfig {
            gamma: self.dtv.gamma,
            eps_rel: self.dtv.eps_rel,
            nonneg: self.dtv.nonneg,
            param: self.parametrization,
            palm: PalmOptions {
                iterations: self.schedule.as_ref().map_or(0, |s| s.iterations),
                grow: p.grow,
                shrink: p.shrink,
                max_halvings: p.max_halvings,
                prox: ProxOptions { max_iters: p.prox.max_iters, tol: p.prox.tol, check_every: p.prox.check_every },
                update_phi: true,
                warmup: p.warmup,
            },
            sigma0: p.sigma0,
            tau0: p.tau0,
        }
    }
}

impl SweepConfig {
    fn validate(&self) -> CliResult<()> {
        if let Some(t) = self.thetas.iter().find(|t| !t.is_finite()) {
            return Err(CliError::config("sweep.thetas", format!("non-finite angle {t}")));
        }
        if self.sizes.contains(&0) {
            return Err(CliError::config("sweep.sizes", "stage counts must be positive"));
        }
        positive("sweep.alpha", self.alpha)?;
        if !(self.factor > 1.0 && self.factor.is_finite()) {
            return Err(CliError::config("sweep.factor", "must exceed 1 so weights decrease"));
        }
        if self.iterations == 0 {
            return Err(CliError::config("sweep.iterations", "must be positive"));
        }
        positive("sweep.success_rd", self.success_rd)
    }

    pub fn schedule(&self, target: usize, stages: usize) -> jointrecon::Result<ScaleSchedule> {
        ScaleSchedule::halvings(target, stages, self.alpha, self.factor, self.iterations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dataset": "d",
        "reconstruction": {
            "method": "joint",
            "schedule": {"resolutions": [16, 32], "alphas": [0.1, 0.01], "iterations": 5}
        }
    }"#;

    #[test]
    fn minimal_reconstruct_config() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        cfg.validate(Mode::Reconstruct).unwrap();
        let r = cfg.reconstruction.unwrap();
        assert_eq!(r.dtv, DtvConfig::default());
        assert_eq!(r.scalespace_config().palm.iterations, 5);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let text = MINIMAL.replace("\"method\"", "\"colour\": 1, \"method\"");
        match RunConfig::from_json(&text) {
            Err(CliError::Config { field, reason }) => {
                assert_eq!(field, "reconstruction.colour");
                assert!(reason.contains("colour"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn increasing_alphas_name_the_field() {
        let text = MINIMAL.replace("[0.1, 0.01]", "[0.01, 0.1]");
        let cfg = RunConfig::from_json(&text).unwrap();
        match cfg.validate(Mode::Reconstruct) {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "reconstruction.schedule.alphas"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn three_step_needs_tv_schedule() {
        let text = MINIMAL.replace("\"joint\"", "\"three_step\"");
        let cfg = RunConfig::from_json(&text).unwrap();
        match cfg.validate(Mode::Baseline) {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "reconstruction.tv_schedule"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frozen_phi_length_checked() {
        let text = MINIMAL.replace("\"joint\"", "\"dtv_frozen\", \"phi\": [0, 0, 0]");
        let cfg = RunConfig::from_json(&text).unwrap();
        match cfg.validate(Mode::Reconstruct) {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "reconstruction.phi"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mode_mismatch_rejected() {
        let text = MINIMAL.replacen('{', "{\"mode\": \"sweep\",", 1);
        let cfg = RunConfig::from_json(&text).unwrap();
        assert!(matches!(cfg.validate(Mode::Reconstruct), Err(CliError::Config { .. })));
    }
}
