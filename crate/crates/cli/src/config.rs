//! Experiment configuration: a TOML file with one optional table per
//! subcommand, merged with the global flags and validated up front.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use globcoup::chain::ChainModel;
use globcoup::measure::{Density, DensitySpec, StateSpace};
use globcoup::priming::StepConstants;
use globcoup::ModelSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Race,
    Couple,
    PppCheck,
    Influence,
    Govern,
    Prime,
    Reconstruct,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Race => "race",
            Command::Couple => "couple",
            Command::PppCheck => "ppp-check",
            Command::Influence => "influence",
            Command::Govern => "govern",
            Command::Prime => "prime",
            Command::Reconstruct => "reconstruct",
        }
    }

    /// Library module a runtime failure is attributed to.
    pub fn module(self) -> &'static str {
        match self {
            Command::Race => "race",
            Command::Couple => "coupler",
            Command::PppCheck => "ppp",
            Command::Influence => "chain",
            Command::Govern => "governor",
            Command::Prime => "priming",
            Command::Reconstruct => "reconstruct",
        }
    }

    fn default_replicas(self) -> usize {
        match self {
            Command::Race | Command::Couple | Command::Prime => 100_000,
            Command::PppCheck => 10_000,
            Command::Influence => 2_000,
            Command::Govern => 100,
            Command::Reconstruct => 20_000,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError {
    pub location: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn invalid(location: impl Into<String>, message: impl fmt::Display) -> ConfigError {
    ConfigError {
        location: location.into(),
        message: message.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Standard errors allowed between an estimate and its target.
    pub sigmas: f64,
    /// Smallest acceptable p-value for goodness-of-fit tests.
    pub significance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            sigmas: 3.0,
            significance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaceParams {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Default for RaceParams {
    fn default() -> Self {
        RaceParams {
            p: vec![0.5, 0.5],
            q: vec![0.7, 0.3],
        }
    }
}

fn discrete(p: &[f64]) -> DensitySpec {
    DensitySpec::Discrete {
        probabilities: p.to_vec(),
        reference: None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupleParams {
    pub f: DensitySpec,
    pub g: DensitySpec,
}

impl Default for CoupleParams {
    fn default() -> Self {
        CoupleParams {
            f: discrete(&[0.5, 0.5]),
            g: discrete(&[0.7, 0.3]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PppParams {
    /// Density whose subgraph is queried and spliced.
    pub density: DensitySpec,
}

impl Default for PppParams {
    fn default() -> Self {
        PppParams {
            density: DensitySpec::Linear {
                lo: 0.0,
                hi: 1.0,
                intercept: 0.0,
                slope: 2.0,
            },
        }
    }
}

fn geometric() -> ModelSpec {
    ModelSpec::GeometricBinary { c: 0.3, r: 0.5 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfluenceParams {
    pub model: ModelSpec,
    pub max_n: usize,
}

impl Default for InfluenceParams {
    fn default() -> Self {
        InfluenceParams {
            model: geometric(),
            max_n: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GovernParams {
    pub model: ModelSpec,
    pub length: usize,
}

impl Default for GovernParams {
    fn default() -> Self {
        GovernParams {
            model: geometric(),
            length: 1_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimeParams {
    pub model: ModelSpec,
    pub length: usize,
    pub epsilon: f64,
    pub calibration_replicas: usize,
    /// Skips calibration when given.
    pub constants: Option<Vec<StepConstants>>,
}

impl Default for PrimeParams {
    fn default() -> Self {
        PrimeParams {
            model: geometric(),
            length: 4,
            epsilon: 0.3,
            calibration_replicas: 20_000,
            constants: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleParam {
    /// `"paper"`: blocks `ε = 1/m` with measured repetition counts.
    Named(String),
    /// One stage per listed `ε`.
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructParams {
    pub model: ModelSpec,
    pub epsilon: f64,
    /// Window length; the smallest admissible one when absent.
    pub window: Option<usize>,
    pub horizon: usize,
    pub calibration_replicas: usize,
    pub eta_replicas: usize,
    pub schedule: ScheduleParam,
    pub stages: usize,
    pub alpha_replicas: usize,
    pub stage_replicas: usize,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        ReconstructParams {
            model: geometric(),
            epsilon: 0.15,
            window: None,
            horizon: 8,
            calibration_replicas: 20_000,
            eta_replicas: 2_000,
            schedule: ScheduleParam::Named("paper".into()),
            stages: 12,
            alpha_replicas: 4_000,
            stage_replicas: 2_000,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    tolerances: Option<Tolerances>,
    race: Option<RaceParams>,
    couple: Option<CoupleParams>,
    ppp_check: Option<PppParams>,
    influence: Option<InfluenceParams>,
    govern: Option<GovernParams>,
    prime: Option<PrimeParams>,
    reconstruct: Option<ReconstructParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Race(RaceParams),
    Couple(CoupleParams),
    Ppp(PppParams),
    Influence(InfluenceParams),
    Govern(GovernParams),
    Prime(PrimeParams),
    Reconstruct(ReconstructParams),
}

/// Everything an experiment depends on; artifacts are a function of this alone.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub seed: u64,
    pub replicas: usize,
    pub tolerances: Tolerances,
    pub params: Params,
}

impl ExperimentConfig {
    pub fn load(command: Command, seed: u64, replicas: Option<usize>, path: Option<&Path>) -> Result<Self, ConfigError> {
        let file = match path {
            Some(p) => {
                let loc = p.display().to_string();
                let text = std::fs::read_to_string(p).map_err(|e| invalid(&loc, e))?;
                toml::from_str::<ConfigFile>(&text).map_err(|e| {
                    let at = e
                        .span()
                        .map(|s| {
                            let line = text[..s.start].matches('\n').count() + 1;
                            format!("{loc}:{line}")
                        })
                        .unwrap_or(loc.clone());
                    invalid(at, e.message())
                })?
            }
            None => ConfigFile::default(),
        };
        let params = match command {
            Command::Race => Params::Race(file.race.unwrap_or_default()),
            Command::Couple => Params::Couple(file.couple.unwrap_or_default()),
            Command::PppCheck => Params::Ppp(file.ppp_check.unwrap_or_default()),
            Command::Influence => Params::Influence(file.influence.unwrap_or_default()),
            Command::Govern => Params::Govern(file.govern.unwrap_or_default()),
            Command::Prime => Params::Prime(file.prime.unwrap_or_default()),
            Command::Reconstruct => Params::Reconstruct(file.reconstruct.unwrap_or_default()),
        };
        let cfg = ExperimentConfig {
            command,
            seed,
            replicas: replicas.unwrap_or(command.default_replicas()),
            tolerances: file.tolerances.unwrap_or_default(),
            params,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.replicas == 0 {
            return Err(invalid("--replicas", "must be positive"));
        }
        let t = &self.tolerances;
        if !(t.sigmas > 0.0 && t.sigmas.is_finite()) {
            return Err(invalid("tolerances.sigmas", "must be positive"));
        }
        if !(t.significance > 0.0 && t.significance < 1.0) {
            return Err(invalid("tolerances.significance", "must lie in (0, 1)"));
        }
        Prepared::new(self).map(|_| ())
    }
}

/// Library objects built from a validated configuration.
pub enum Prepared {
    Race { p: Vec<f64>, q: Vec<f64> },
    Couple { space: Arc<StateSpace>, f: Density, g: Density },
    Ppp { density: Density },
    Influence { model: ChainModel, max_n: usize },
    Govern { model: ChainModel, length: usize },
    Prime { model: ChainModel, params: PrimeParams },
    Reconstruct { model: ChainModel, params: ReconstructParams },
}

fn model(key: &str, spec: &ModelSpec) -> Result<ChainModel, ConfigError> {
    ChainModel::new(spec.clone()).map_err(|e| invalid(format!("{key}.model"), e))
}

fn probability(key: &str, v: &[f64]) -> Result<(), ConfigError> {
    if v.is_empty() || v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(invalid(key, "entries must be finite and nonnegative"));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(invalid(key, format!("entries sum to {s}, not 1")));
    }
    Ok(())
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, "must be positive"))
    }
}

fn nonzero(key: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        Err(invalid(key, "must be positive"))
    } else {
        Ok(())
    }
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        Ok(match &cfg.params {
            Params::Race(r) => {
                probability("race.p", &r.p)?;
                probability("race.q", &r.q)?;
                if r.p.len() != r.q.len() {
                    return Err(invalid("race.q", "length differs from race.p"));
                }
                Prepared::Race {
                    p: r.p.clone(),
                    q: r.q.clone(),
                }
            }
            Params::Couple(c) => {
                let space = Arc::new(c.f.space().map_err(|e| invalid("couple.f", e))?);
                let f = c.f.build_on(&space).map_err(|e| invalid("couple.f", e))?;
                let g = c.g.build_on(&space).map_err(|e| invalid("couple.g", e))?;
                for (k, d) in [("couple.f", &f), ("couple.g", &g)] {
                    if !d.is_probability() {
                        return Err(invalid(k, "must be a probability density"));
                    }
                }
                Prepared::Couple { space, f, g }
            }
            Params::Ppp(p) => Prepared::Ppp {
                density: p.density.build().map_err(|e| invalid("ppp-check.density", e))?,
            },
            Params::Influence(i) => {
                nonzero("influence.max_n", i.max_n)?;
                Prepared::Influence {
                    model: model("influence", &i.model)?,
                    max_n: i.max_n,
                }
            }
            Params::Govern(g) => {
                nonzero("govern.length", g.length)?;
                Prepared::Govern {
                    model: model("govern", &g.model)?,
                    length: g.length,
                }
            }
            Params::Prime(p) => {
                positive("prime.epsilon", p.epsilon)?;
                nonzero("prime.calibration_replicas", p.calibration_replicas)?;
                if let Some(c) = &p.constants {
                    if c.len() != p.length {
                        return Err(invalid("prime.constants", "one entry per step is required"));
                    }
                    if c.iter().any(|c| !(c.m >= 1.0 && c.n >= 1.0)) {
                        return Err(invalid("prime.constants", "m and n must be at least 1"));
                    }
                }
                let m = model("prime", &p.model)?;
                if !m.space().is_probability() {
                    return Err(invalid("prime.model", "reference measure must have total mass 1"));
                }
                Prepared::Prime {
                    model: m,
                    params: p.clone(),
                }
            }
            Params::Reconstruct(r) => {
                positive("reconstruct.epsilon", r.epsilon)?;
                for (k, v) in [
                    ("reconstruct.horizon", r.horizon),
                    ("reconstruct.calibration_replicas", r.calibration_replicas),
                    ("reconstruct.eta_replicas", r.eta_replicas),
                    ("reconstruct.stages", r.stages),
                    ("reconstruct.alpha_replicas", r.alpha_replicas),
                    ("reconstruct.stage_replicas", r.stage_replicas),
                ] {
                    nonzero(k, v)?;
                }
                if r.window == Some(0) {
                    return Err(invalid("reconstruct.window", "must be positive"));
                }
                match &r.schedule {
                    ScheduleParam::Named(s) if s == "paper" => {}
                    ScheduleParam::Named(s) => {
                        return Err(invalid("reconstruct.schedule", format!("unknown schedule {s:?}")))
                    }
                    ScheduleParam::Explicit(eps) => {
                        if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
                            return Err(invalid("reconstruct.schedule", "need positive ε values"));
                        }
                    }
                }
                let m = model("reconstruct", &r.model)?;
                if !m.space().is_probability() {
                    return Err(invalid("reconstruct.model", "reference measure must have total mass 1"));
                }
                Prepared::Reconstruct {
                    model: m,
                    params: r.clone(),
                }
            }
        })
    }
}
