//! Scenario definitions and per-trial data synthesis.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{
    diagonal_covariance, draw_signals, random_unitary, rotated_covariance, scale_for_snr, stream_rng, synthesize_with, ArrayGeometry,
    NoiseProfile, SnapshotMatrix, SourceAngles, SourceModel,
};
use crate::music::MusicOptions;
use crate::optimizer::{ApnOptions, Target};
use crate::{Error, Result};

/// RNG stream reserved for drawing the frozen signal matrix.
const SIGNAL_STREAM: u64 = u64::MAX;
/// RNG stream reserved for the random rotation of a correlated covariance.
const ROTATION_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Music,
    Apn(Target),
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Music => "music",
            Estimator::Apn(t) => t.name(),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("music") {
            Ok(Estimator::Music)
        } else {
            s.parse().map(Estimator::Apn)
        }
    }
}

impl Serialize for Estimator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Estimator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated estimator list.
pub fn parse_estimators(list: &str) -> Result<Vec<Estimator>> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    /// Sensor positions in half-wavelengths; overrides `sensors`/`spacing`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<usize>,
    #[serde(default = "one")]
    pub spacing: f64,
}

fn one() -> f64 {
    1.0
}

impl ArraySpec {
    pub fn build(&self) -> Result<ArrayGeometry> {
        match (&self.positions, self.sensors) {
            (Some(p), _) => ArrayGeometry::new(p.clone()),
            (None, Some(m)) => ArrayGeometry::new((0..m).map(|i| i as f64 * self.spacing).collect()),
            (None, None) => Err(Error::InvalidInput("array needs `positions` or `sensors`".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// One signal matrix drawn up front and reused in every trial.
    Deterministic,
    /// Fresh Gaussian signals in every trial.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// Eigenvalues of `R_s`.
    pub powers: Vec<f64>,
    /// Rotate `diag(powers)` by a random unitary matrix.
    #[serde(default)]
    pub correlated: bool,
    /// Seed of the rotation; defaults to a stream of the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", untagged)]
pub enum NoiseTrend {
    Named(TrendName),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendName {
    Uniform,
    /// `1 + 9 (m-1)/(M-1)`.
    Linear,
}

impl NoiseTrend {
    pub fn build(&self, m: usize) -> Result<NoiseProfile> {
        match self {
            NoiseTrend::Named(TrendName::Uniform) => Ok(NoiseProfile::uniform(m)),
            NoiseTrend::Named(TrendName::Linear) if m >= 2 => Ok(NoiseProfile::linear_trend(m)),
            NoiseTrend::Named(TrendName::Linear) => Err(Error::InvalidInput("linear trend needs two sensors".into())),
            NoiseTrend::Values(v) if v.len() == m => NoiseProfile::new(v.clone()),
            NoiseTrend::Values(v) => Err(Error::Dimension(format!("noise trend has {} entries, array has {m}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    pub apn: ApnOptions,
    pub music: MusicOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub array: ArraySpec,
    pub theta: Vec<f64>,
    pub source: SourceSpec,
    pub noise_trend: NoiseTrend,
    pub snapshots: usize,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub estimators: Vec<Estimator>,
    pub seed: u64,
    #[serde(default)]
    pub options: EstimatorOptions,
}

pub const UNCORRELATED_TOML: &str = include_str!("../../../../configs/uncorrelated.toml");
pub const CORRELATED_TOML: &str = include_str!("../../../../configs/correlated.toml");

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Three sources with diagonal `R_s`, one frozen signal matrix.
    pub fn uncorrelated() -> Self {
        Self::from_toml_str(UNCORRELATED_TOML).expect("bundled config")
    }

    /// Three sources with rotated, nearly singular `R_s`.
    pub fn correlated() -> Self {
        Self::from_toml_str(CORRELATED_TOML).expect("bundled config")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "uncorrelated" => Ok(Self::uncorrelated()),
            "correlated" => Ok(Self::correlated()),
            _ => Err(Error::InvalidInput(format!("unknown preset '{name}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.snr_db.is_empty() {
            return Err(Error::InvalidInput("SNR grid is empty".into()));
        }
        if let Some(bad) = self.snr_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("SNR {bad}")));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidInput("no estimators requested".into()));
        }
        if self.snapshots < 1 {
            return Err(Error::InvalidInput("snapshots must be at least 1".into()));
        }
        if self.source.powers.len() != self.theta.len() {
            return Err(Error::Dimension("source powers and angles differ in length".into()));
        }
        self.options.apn.newton.validate()?;
        self.build().map(|_| ())
    }

    pub fn build(&self) -> Result<Scenario> {
        let geometry = self.array.build()?;
        let theta = SourceAngles::new(self.theta.clone())?;
        if theta.len() >= geometry.num_sensors() {
            return Err(Error::InvalidInput("need fewer sources than sensors".into()));
        }
        if let Some(p) = self.source.powers.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidInput(format!("source power {p} is invalid")));
        }
        let rs = if self.source.correlated {
            let mut rng = match self.source.rotation_seed {
                Some(s) => stream_rng(s, 0),
                None => stream_rng(self.seed, ROTATION_STREAM),
            };
            rotated_covariance(&random_unitary(theta.len(), &mut rng), &self.source.powers)
        } else {
            diagonal_covariance(&self.source.powers)
        };
        let model = match self.source.kind {
            SourceKind::Stochastic => SourceModel::stochastic(rs)?,
            SourceKind::Deterministic => {
                let mut rng = stream_rng(self.seed, SIGNAL_STREAM);
                SourceModel::Deterministic { s: draw_signals(&rs, self.snapshots, &mut rng) }
            }
        };
        let trend = self.noise_trend.build(geometry.num_sensors())?;
        Ok(Scenario { geometry, theta, model, trend, snapshots: self.snapshots, seed: self.seed })
    }
}

/// A resolved scenario ready for data synthesis.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub geometry: ArrayGeometry,
    pub theta: SourceAngles,
    pub model: SourceModel,
    pub trend: NoiseProfile,
    pub snapshots: usize,
    pub seed: u64,
}

/// Stream index of trial `trial` at SNR grid index `snr_index`.
pub fn trial_stream(snr_index: usize, trial: usize) -> u64 {
    ((snr_index as u64) << 32) | trial as u64
}

impl Scenario {
    pub fn num_sources(&self) -> usize {
        self.theta.len()
    }

    pub fn noise_at(&self, snr_db: f64) -> Result<NoiseProfile> {
        scale_for_snr(&self.geometry, &self.theta, &self.model, &self.trend, snr_db)
    }

    /// Snapshots for one trial, from its own RNG stream.
    pub fn trial_data(&self, snr_db: f64, snr_index: usize, trial: usize) -> Result<SnapshotMatrix> {
        let mut rng = stream_rng(self.seed, trial_stream(snr_index, trial));
        self.synthesize(snr_db, &mut rng)
    }

    pub fn synthesize<R: Rng + ?Sized>(&self, snr_db: f64, rng: &mut R) -> Result<SnapshotMatrix> {
        let noise = self.noise_at(snr_db)?;
        synthesize_with(&self.geometry, &self.theta, &self.model, &noise, self.snapshots, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        let u = ScenarioConfig::uncorrelated();
        let s = u.build().unwrap();
        assert_eq!(s.geometry.num_sensors(), 11);
        assert!(matches!(s.model, SourceModel::Deterministic { .. }));
        let c = ScenarioConfig::correlated().build().unwrap();
        let eig = c.model.signal_covariance().symmetric_eigen();
        let mut e: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        e.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in e.iter().zip([2.337, 0.06604, 0.0004642]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn toml_round_trip() {
        let u = ScenarioConfig::uncorrelated();
        let back = ScenarioConfig::from_toml_str(&u.to_toml_string().unwrap()).unwrap();
        assert_eq!(u, back);
    }

    #[test]
    fn estimator_names() {
        let list = parse_estimators("music, dmlo,sml-red,SML").unwrap();
        assert_eq!(list, vec![Estimator::Music, Estimator::Apn(Target::DmlO), Estimator::Apn(Target::SmlRed), Estimator::Apn(Target::Sml)]);
        assert!(parse_estimators("foo").is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ScenarioConfig::uncorrelated();
        c.trials = 0;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::uncorrelated();
        c.snr_db.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn trials_share_frozen_signals() {
        let s = ScenarioConfig::uncorrelated().build().unwrap();
        let a = s.trial_data(20.0, 0, 0).unwrap();
        let b = s.trial_data(20.0, 0, 0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, s.trial_data(20.0, 0, 1).unwrap());
    }
}
