//! Scenario configuration files.
//!
//! ```json
//! {
//!   "scenarios": [
//!     {
//!       "name": "h1_two_level",
//!       "initial_datum": { "atoms": [ { "value": 1.5, "weight": 0.5 },
//!                                     { "value": 3.0, "weight": 0.5 } ] },
//!       "control": { "t_max": 200, "record_every": 0.002 },
//!       "lyapunov": ["linear", "square", "quartic", "exp"],
//!       "checks": { "sandwich": false }
//!     }
//!   ]
//! }
//! ```
//!
//! `initial_datum` holds exactly one of `atoms` (`value`, `weight`), `pieces`
//! (`value`, `measure`) or `sampler` (`profile`, `interval`, `samples`,
//! optional `domain_measure`). Omitted `control` fields take the
//! [`StepControl`] defaults, an omitted `lyapunov` list means
//! [`LyapunovCatalog::STANDARD`], and omitted check flags are on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::LyapunovCatalog;
use crate::integrator::StepControl;
use crate::measure::{InitialDatumSpec, Profile, Sampler};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn path(&self) -> &str {
        match self {
            ConfigError::Schema { path, .. } => path,
        }
    }
}

/// Closed-form `u₀` families for the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// `Σ c_k x^k`
    Polynomial { coefficients: Vec<f64> },
    /// `offset + amplitude · sin(frequency · x + phase)`
    Sine {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `offset + scale · exp(rate · x)`
    Exponential { offset: f64, scale: f64, rate: f64 },
}

impl ProfileSpec {
    pub fn to_profile(&self) -> Profile {
        match self.clone() {
            ProfileSpec::Polynomial { coefficients } => Profile::new(move |x| {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }),
            ProfileSpec::Sine {
                offset,
                amplitude,
                frequency,
                phase,
            } => Profile::new(move |x| offset + amplitude * (frequency * x + phase).sin()),
            ProfileSpec::Exponential {
                offset,
                scale,
                rate,
            } => Profile::new(move |x| offset + scale * (rate * x).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomEntry {
    pub value: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceEntry {
    pub value: f64,
    pub measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerEntry {
    pub profile: ProfileSpec,
    pub interval: [f64; 2],
    pub samples: usize,
    #[serde(default)]
    pub domain_measure: Option<f64>,
}

/// The serialized form of an initial datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatumEntry {
    Atoms(Vec<AtomEntry>),
    Pieces(Vec<PieceEntry>),
    Sampler(SamplerEntry),
}

impl DatumEntry {
    pub fn to_spec(&self) -> InitialDatumSpec {
        match self {
            DatumEntry::Atoms(atoms) => {
                InitialDatumSpec::Atoms(atoms.iter().map(|a| (a.value, a.weight)).collect())
            }
            DatumEntry::Pieces(pieces) => {
                InitialDatumSpec::Pieces(pieces.iter().map(|p| (p.value, p.measure)).collect())
            }
            DatumEntry::Sampler(s) => InitialDatumSpec::Sampler(Sampler {
                profile: s.profile.to_profile(),
                lo: s.interval[0],
                hi: s.interval[1],
                samples: s.samples,
                domain_measure: s.domain_measure,
            }),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlOverrides {
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub h_init: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub t_max: Option<f64>,
    pub steady_tol: Option<f64>,
    pub denom_guard: Option<f64>,
    pub record_every: Option<f64>,
}

impl ControlOverrides {
    pub fn apply(&self, base: StepControl) -> StepControl {
        StepControl {
            abs_tol: self.abs_tol.unwrap_or(base.abs_tol),
            rel_tol: self.rel_tol.unwrap_or(base.rel_tol),
            h_init: self.h_init.unwrap_or(base.h_init),
            h_min: self.h_min.unwrap_or(base.h_min),
            h_max: self.h_max.unwrap_or(base.h_max),
            t_max: self.t_max.unwrap_or(base.t_max),
            steady_tol: self.steady_tol.unwrap_or(base.steady_tol),
            denom_guard: self.denom_guard.unwrap_or(base.denom_guard),
            record_every: self.record_every.unwrap_or(base.record_every),
        }
    }
}

fn on() -> bool {
    true
}

/// Which verification groups run after integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckFlags {
    #[serde(default = "on")]
    pub mass: bool,
    #[serde(default = "on")]
    pub interval: bool,
    #[serde(default = "on")]
    pub lyapunov: bool,
    #[serde(default = "on")]
    pub omega_limit: bool,
    #[serde(default = "on")]
    pub characteristic: bool,
    #[serde(default = "on")]
    pub sandwich: bool,
    #[serde(default = "on")]
    pub h2_uniqueness: bool,
}

impl CheckFlags {
    pub const ALL: CheckFlags = CheckFlags {
        mass: true,
        interval: true,
        lyapunov: true,
        omega_limit: true,
        characteristic: true,
        sandwich: true,
        h2_uniqueness: true,
    };
}

impl Default for CheckFlags {
    fn default() -> Self {
        Self::ALL
    }
}

fn default_sandwich_eps() -> f64 {
    0.05
}

fn default_bucket_tol() -> f64 {
    crate::analysis::DEFAULT_BUCKET_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    initial_datum: DatumEntry,
    #[serde(default)]
    control: ControlOverrides,
    #[serde(default)]
    lyapunov: Option<Vec<LyapunovCatalog>>,
    #[serde(default)]
    checks: CheckFlags,
    /// Skip hypothesis validation and run anyway.
    #[serde(default)]
    exploratory: bool,
    #[serde(default = "default_sandwich_eps")]
    sandwich_eps: f64,
    #[serde(default = "default_bucket_tol")]
    bucket_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenarios: Vec<RawScenario>,
}

/// A validated scenario with defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub initial_datum: DatumEntry,
    pub control: StepControl,
    pub lyapunov: Vec<LyapunovCatalog>,
    pub checks: CheckFlags,
    pub exploratory: bool,
    pub sandwich_eps: f64,
    pub bucket_tol: f64,
}

impl ScenarioConfig {
    /// A scenario with every default applied.
    pub fn with_defaults(name: impl Into<String>, initial_datum: DatumEntry) -> Self {
        Self {
            name: name.into(),
            initial_datum,
            control: StepControl::default(),
            lyapunov: LyapunovCatalog::STANDARD.to_vec(),
            checks: CheckFlags::ALL,
            exploratory: false,
            sandwich_eps: default_sandwich_eps(),
            bucket_tol: default_bucket_tol(),
        }
    }

    pub fn datum_spec(&self) -> InitialDatumSpec {
        self.initial_datum.to_spec()
    }
}

pub fn parse_config(text: &str) -> Result<Vec<ScenarioConfig>, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::at(path, e.into_inner().to_string())
    })?;
    if raw.scenarios.is_empty() {
        return Err(ConfigError::at("scenarios", "at least one scenario is required"));
    }
    let mut out: Vec<ScenarioConfig> = Vec::with_capacity(raw.scenarios.len());
    for (i, s) in raw.scenarios.into_iter().enumerate() {
        let base = format!("scenarios[{i}]");
        let cfg = validate_scenario(&base, s)?;
        if out.iter().any(|o| o.name == cfg.name) {
            return Err(ConfigError::at(
                format!("{base}.name"),
                format!("duplicate scenario name {:?}", cfg.name),
            ));
        }
        out.push(cfg);
    }
    Ok(out)
}

fn validate_scenario(base: &str, s: RawScenario) -> Result<ScenarioConfig, ConfigError> {
    if s.name.is_empty() {
        return Err(ConfigError::at(format!("{base}.name"), "name must be non-empty"));
    }
    if !s
        .name
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        || s.name.starts_with('.')
    {
        return Err(ConfigError::at(
            format!("{base}.name"),
            "name may contain only ASCII letters, digits, '_', '-' and '.', and may not start with '.'",
        ));
    }
    validate_datum(&format!("{base}.initial_datum"), &s.initial_datum)?;

    let control = s.control.apply(StepControl::default());
    control
        .validate()
        .map_err(|e| ConfigError::at(format!("{base}.control"), e.to_string()))?;

    if !(s.sandwich_eps >= 0.0 && s.sandwich_eps.is_finite()) {
        return Err(ConfigError::at(
            format!("{base}.sandwich_eps"),
            "must be finite and non-negative",
        ));
    }
    if !(s.bucket_tol > 0.0 && s.bucket_tol.is_finite()) {
        return Err(ConfigError::at(
            format!("{base}.bucket_tol"),
            "must be finite and positive",
        ));
    }

    let mut lyapunov = s
        .lyapunov
        .unwrap_or_else(|| LyapunovCatalog::STANDARD.to_vec());
    let mut seen = Vec::new();
    lyapunov.retain(|e| {
        let fresh = !seen.contains(e);
        seen.push(*e);
        fresh
    });

    Ok(ScenarioConfig {
        name: s.name,
        initial_datum: s.initial_datum,
        control,
        lyapunov,
        checks: s.checks,
        exploratory: s.exploratory,
        sandwich_eps: s.sandwich_eps,
        bucket_tol: s.bucket_tol,
    })
}

fn validate_datum(base: &str, d: &DatumEntry) -> Result<(), ConfigError> {
    let check_pairs = |kind: &str, second: &str, pairs: Vec<(f64, f64)>| {
        if pairs.is_empty() {
            return Err(ConfigError::at(format!("{base}.{kind}"), "must not be empty"));
        }
        for (j, (value, w)) in pairs.into_iter().enumerate() {
            if !value.is_finite() {
                return Err(ConfigError::at(
                    format!("{base}.{kind}[{j}].value"),
                    format!("value must be finite, got {value}"),
                ));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(ConfigError::at(
                    format!("{base}.{kind}[{j}].{second}"),
                    format!("{second} must be positive, got {w}"),
                ));
            }
        }
        Ok(())
    };
    match d {
        DatumEntry::Atoms(atoms) => check_pairs(
            "atoms",
            "weight",
            atoms.iter().map(|a| (a.value, a.weight)).collect(),
        ),
        DatumEntry::Pieces(pieces) => check_pairs(
            "pieces",
            "measure",
            pieces.iter().map(|p| (p.value, p.measure)).collect(),
        ),
        DatumEntry::Sampler(s) => {
            let base = format!("{base}.sampler");
            if s.samples == 0 {
                return Err(ConfigError::at(format!("{base}.samples"), "must be at least 1"));
            }
            let [lo, hi] = s.interval;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ConfigError::at(
                    format!("{base}.interval"),
                    format!("need finite lo < hi, got [{lo}, {hi}]"),
                ));
            }
            if let Some(m) = s.domain_measure {
                if !(m > 0.0 && m.is_finite()) {
                    return Err(ConfigError::at(
                        format!("{base}.domain_measure"),
                        format!("must be positive, got {m}"),
                    ));
                }
            }
            if let ProfileSpec::Polynomial { coefficients } = &s.profile {
                if coefficients.is_empty() {
                    return Err(ConfigError::at(
                        format!("{base}.profile.coefficients"),
                        "must not be empty",
                    ));
                }
            }
            let profile = s.profile.to_profile();
            let n = s.samples as f64;
            for k in 0..s.samples {
                let x = lo + (k as f64 + 0.5) * (hi - lo) / n;
                let v = profile.eval(x);
                if !v.is_finite() {
                    return Err(ConfigError::at(
                        format!("{base}.profile"),
                        format!("profile is not finite at x = {x}"),
                    ));
                }
            }
            Ok(())
        }
    }
}
