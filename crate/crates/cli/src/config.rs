//! Run configuration: one nested JSON document, every key optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sros_core::harness::StudyConfig;
use sros_core::linsolve::SolverSettings;
use sros_core::problem::{ProblemSpec, VelocitySpec};
use sros_core::darcy::PermeabilitySpec;
use sros_core::Scheme;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config key `{key}`: {message}")]
    Key { key: String, message: String },
}

impl ConfigError {
    fn key(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Key {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub t_final: f64,
    pub dt: f64,
    pub scheme: Scheme,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            dt: 1.0 / 64.0,
            scheme: Scheme::Sros,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Index of the noise realization to drive the run.
    pub realization: u64,
    /// Disables the stochastic forcing.
    pub deterministic: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            realization: 0,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub dt_reference: f64,
    pub dt_list: Vec<f64>,
    pub n_realizations: usize,
    pub schemes: Vec<Scheme>,
}

impl Default for StudySection {
    fn default() -> Self {
        let d = StudyConfig::default();
        Self {
            dt_reference: d.dt_reference,
            dt_list: d.dt_list,
            n_realizations: d.n_realizations,
            schemes: d.schemes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub a: f64,
    pub c: f64,
    pub dt_list: Vec<f64>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            a: 0.01,
            c: -100.0,
            dt_list: vec![1e-3, 5e-3, 1e-2, 1.5e-2, 2e-2, 5e-2, 0.1, 1.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    /// `null` uses every available core.
    pub workers: Option<usize>,
    pub problem: ProblemSpec,
    pub time: TimeConfig,
    pub solver: SolverSettings,
    pub simulate: SimulateConfig,
    pub study: StudySection,
    pub stability: StabilityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: sros_core::DEFAULT_MASTER_SEED,
            workers: None,
            problem: ProblemSpec::default(),
            time: TimeConfig::default(),
            solver: SolverSettings::default(),
            simulate: SimulateConfig::default(),
            study: StudySection::default(),
            stability: StabilityConfig::default(),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::key(key, format!("must be positive and finite, got {v}")))
    }
}

fn at_least_one(key: &str, v: usize) -> Result<(), ConfigError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(ConfigError::key(key, "must be at least 1"))
    }
}

fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let n = r.round();
    ((r - n).abs() <= 1e-9 * r.max(1.0)).then_some(n as usize)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            ConfigError::Key {
                key: if key == "." { "<root>".into() } else { key },
                message: e.into_inner().to_string(),
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.display().to_string(),
                    source,
                })?;
                Self::from_json(&text)
            }
        }
    }

    /// Checks that need more than the type system.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == Some(0) {
            return Err(ConfigError::key("workers", "must be at least 1"));
        }
        let d = &self.problem.domain;
        positive("problem.domain.l1", d.l1)?;
        positive("problem.domain.l2", d.l2)?;
        at_least_one("problem.domain.nx", d.nx)?;
        at_least_one("problem.domain.ny", d.ny)?;
        if !d.dirichlet_value.is_finite() {
            return Err(ConfigError::key("problem.domain.dirichlet_value", "must be finite"));
        }
        let n = &self.problem.noise;
        if !(n.beta + n.eps > 0.0 && n.beta.is_finite() && n.eps.is_finite()) {
            return Err(ConfigError::key("problem.noise.beta", "beta + eps must be positive"));
        }
        at_least_one("problem.noise.n1", n.n1)?;
        at_least_one("problem.noise.n2", n.n2)?;
        if n.n1 * n.n2 < 2 {
            return Err(ConfigError::key("problem.noise.n1", "at least one non-constant mode is needed"));
        }
        match &self.problem.velocity {
            VelocitySpec::Darcy { mu, permeability } => {
                positive("problem.velocity.mu", *mu)?;
                match permeability {
                    PermeabilitySpec::Constant { k0 } => positive("problem.velocity.permeability.k0", *k0)?,
                    PermeabilitySpec::LognormalSpectral {
                        variance,
                        correlation_length,
                        modes,
                        ..
                    } => {
                        if !(*variance >= 0.0) {
                            return Err(ConfigError::key(
                                "problem.velocity.permeability.variance",
                                "must be non-negative",
                            ));
                        }
                        positive("problem.velocity.permeability.correlation_length", correlation_length[0])?;
                        positive("problem.velocity.permeability.correlation_length", correlation_length[1])?;
                        at_least_one("problem.velocity.permeability.modes", *modes)?;
                    }
                }
            }
            VelocitySpec::Constant { q } => {
                if !q.iter().all(|v| v.is_finite()) {
                    return Err(ConfigError::key("problem.velocity.q", "must be finite"));
                }
            }
            VelocitySpec::None => {}
        }

        positive("time.dt", self.time.dt)?;
        if !(self.time.t_final >= 0.0 && self.time.t_final.is_finite()) {
            return Err(ConfigError::key("time.t_final", "must be non-negative"));
        }
        if integer_ratio(self.time.t_final, self.time.dt).is_none() {
            return Err(ConfigError::key("time.dt", "must divide time.t_final"));
        }
        positive("solver.tol", self.solver.tol)?;
        at_least_one("solver.max_iter", self.solver.max_iter)?;

        let s = &self.study;
        positive("study.dt_reference", s.dt_reference)?;
        at_least_one("study.n_realizations", s.n_realizations)?;
        if s.schemes.is_empty() {
            return Err(ConfigError::key("study.schemes", "must name at least one scheme"));
        }
        if s.dt_list.is_empty() {
            return Err(ConfigError::key("study.dt_list", "must not be empty"));
        }
        for (i, &dt) in s.dt_list.iter().enumerate() {
            let key = format!("study.dt_list[{i}]");
            positive(&key, dt)?;
            match integer_ratio(dt, s.dt_reference) {
                Some(f) if f >= 2 && f.is_power_of_two() => {}
                _ => {
                    return Err(ConfigError::key(
                        &key,
                        format!("{dt} is not a dyadic multiple of study.dt_reference"),
                    ))
                }
            }
            if self.time.t_final > 0.0 && integer_ratio(self.time.t_final, dt).is_none() {
                return Err(ConfigError::key(&key, format!("{dt} does not divide time.t_final")));
            }
        }
        for (i, &dt) in self.stability.dt_list.iter().enumerate() {
            positive(&format!("stability.dt_list[{i}]"), dt)?;
        }
        if !self.stability.a.is_finite() {
            return Err(ConfigError::key("stability.a", "must be finite"));
        }
        if !self.stability.c.is_finite() {
            return Err(ConfigError::key("stability.c", "must be finite"));
        }
        Ok(())
    }

    pub fn study(&self) -> StudyConfig {
        StudyConfig {
            problem: self.problem.clone(),
            t_final: self.time.t_final,
            dt_reference: self.study.dt_reference,
            dt_list: self.study.dt_list.clone(),
            n_realizations: self.study.n_realizations,
            schemes: self.study.schemes.clone(),
            master_seed: self.master_seed,
            solver: self.solver,
            workers: self.workers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let err = RunConfig::from_json(r#"{"time": {"dtt": 0.1}}"#).unwrap_err();
        assert!(err.to_string().contains("time"), "{err}");
        assert!(err.to_string().contains("dtt"), "{err}");
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = RunConfig::from_json(r#"{"problem": {"noise": {"beta": "two"}}}"#).unwrap_err();
        assert!(err.to_string().contains("problem.noise.beta"), "{err}");
    }

    #[test]
    fn non_spd_tensor_names_the_key() {
        let err = RunConfig::from_json(r#"{"problem": {"diffusion_tensor": [[1.0, 0.0], [0.0, -1.0]]}}"#).unwrap_err();
        assert!(err.to_string().contains("problem.diffusion_tensor"), "{err}");
    }

    #[test]
    fn semantic_checks_name_the_key() {
        let cfg = RunConfig::from_json(r#"{"time": {"dt": -0.1}}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("time.dt"));
        let cfg = RunConfig::from_json(r#"{"study": {"dt_list": [0.0625, 0.003]}}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("study.dt_list[1]"));
        let cfg = RunConfig::from_json(r#"{"problem": {"domain": {"nx": 0}}}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("problem.domain.nx"));
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }
}
