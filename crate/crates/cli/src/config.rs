//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use towerlab::observables::ObservableSpec;
use towerlab::tower::TailModel;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every stream used by the experiment.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    ReturnTail(ReturnTailExperiment),
    MeetingTail(MeetingTailExperiment),
    ApproxDecay(ApproxDecayExperiment),
    Clt(CltExperiment),
    Coboundary(CoboundaryExperiment),
    Stationarity(StationarityExperiment),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::ReturnTail(_) => "return-tail",
            Experiment::MeetingTail(_) => "meeting-tail",
            Experiment::ApproxDecay(_) => "approx-decay",
            Experiment::Clt(_) => "clt",
            Experiment::Coboundary(_) => "coboundary",
            Experiment::Stationarity(_) => "stationarity",
        }
    }
}

/// Where the tower comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TowerConfig {
    /// A parametric roof law.
    Model { xi: f64, tail: TailModel },
    /// Empirical first-return law of the LSV map, sampled on its own stream.
    Lsv { xi: f64, alpha: f64, returns: u64, cap: u64 },
    /// A tower file.
    File { path: PathBuf },
}

/// Fit window for log survival against log n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    pub n_min: u64,
    pub n_max: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub gamma: f64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: u32,
}

fn default_bootstrap() -> u32 {
    200
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeCheck {
    pub expected: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnTailExperiment {
    pub alpha: f64,
    pub samples: u64,
    pub cap: u64,
    pub fit: FitWindow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<SlopeCheck>,
}

/// Spearman correlation of `P̂(T >= n) / E[(h - n)_+]` against `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendCheck {
    pub n_min: u64,
    pub max_spearman: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentialCheck {
    pub min_r_squared: f64,
    /// Compare with the exact product-chain survival for `n <= exact_up_to`.
    pub exact_up_to: u64,
    pub sigmas: f64,
    pub pair_limit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeetingTailExperiment {
    pub tower: TowerConfig,
    pub runs: u64,
    pub cap: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitWindow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<SlopeCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trend: Option<TrendCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponential: Option<ExponentialCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayCheck {
    /// Order at which the constant `C` is calibrated.
    pub calibrate_m: u64,
    /// Largest allowed `mc_error / estimate`.
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxDecayExperiment {
    pub tower: TowerConfig,
    pub observable: ObservableSpec,
    pub ms: Vec<u64>,
    pub samples: u64,
    pub outer: u32,
    pub inner: u32,
    pub margin: u64,
    pub r: f64,
    pub meeting_runs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<DecayCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsCheck {
    pub max_distance: f64,
}

/// Plateau and consistency checks on the autocovariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceCheck {
    /// Bound on `(Σ_{k<=200}|γ̂| - Σ_{k<=100}|γ̂|) / Σ_{k<=200}|γ̂|`.
    pub max_increment: f64,
    /// Bound on `|ĉ²(50) - ĉ²(200)| / ĉ²(200)`.
    pub max_cutoff_spread: f64,
    /// Bound on `|n^{-1} Var(S_n) - ĉ²| / ĉ²`.
    pub max_variance_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltExperiment {
    pub tower: TowerConfig,
    pub observable: ObservableSpec,
    pub sum_length: u64,
    pub replicates: u64,
    pub segment_length: u64,
    pub segments: u64,
    pub cutoff: usize,
    pub margin: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<KsCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<CovarianceCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoboundaryExperiment {
    pub tower: TowerConfig,
    /// The transfer function `χ`; the experiment studies `χ∘σ - χ`.
    pub chi: ObservableSpec,
    pub length: u64,
    pub cutoff: usize,
    /// Bound on `ĉ² / Var(v)`.
    pub max_variance_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancyCheck {
    pub steps: u64,
    pub state_limit: usize,
    pub max_tv: f64,
    pub max_kernel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseFrequencyCheck {
    pub steps: u64,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarityExperiment {
    pub tower: TowerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupancy: Option<OccupancyCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_frequency: Option<BaseFrequencyCheck>,
}

fn bad(field: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {why}"))
}

fn positive(field: &str, v: u64) -> Result<(), CliError> {
    if v == 0 {
        Err(bad(field, "must be positive"))
    } else {
        Ok(())
    }
}

fn fraction(field: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(field, format!("must be a positive number, got {v}")))
    }
}

impl TowerConfig {
    fn validate(&self) -> Result<(), CliError> {
        match self {
            TowerConfig::Model { xi, .. } | TowerConfig::Lsv { xi, .. } if !(*xi > 0.0 && *xi < 1.0) => {
                Err(bad("tower.xi", format!("must lie in (0, 1), got {xi}")))
            }
            TowerConfig::Lsv { alpha, returns, cap, .. } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(bad("tower.alpha", format!("must lie in (0, 1), got {alpha}")));
                }
                positive("tower.returns", *returns)?;
                positive("tower.cap", *cap)
            }
            _ => Ok(()),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the configuration with the output directory removed.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output: None,
            ..self.clone()
        };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    /// Checks the fields no library call would reject with a clear name.
    pub fn validate(&self) -> Result<(), CliError> {
        // TOML integers are signed 64-bit
        if self.seed > i64::MAX as u64 {
            return Err(bad("seed", "must fit in a signed 64-bit integer"));
        }
        match &self.experiment {
            Experiment::ReturnTail(e) => {
                if !(e.alpha > 0.0 && e.alpha < 1.0) {
                    return Err(bad("experiment.alpha", format!("must lie in (0, 1), got {}", e.alpha)));
                }
                positive("experiment.samples", e.samples)?;
                positive("experiment.cap", e.cap)?;
            }
            Experiment::MeetingTail(e) => {
                e.tower.validate()?;
                positive("experiment.runs", e.runs)?;
                positive("experiment.cap", e.cap)?;
                if (e.slope.is_some() || e.trend.is_some()) && e.fit.is_none() {
                    return Err(bad("experiment.fit", "required by the slope and trend checks"));
                }
            }
            Experiment::ApproxDecay(e) => {
                e.tower.validate()?;
                if e.ms.is_empty() || e.ms.contains(&0) {
                    return Err(bad("experiment.ms", "must be a non-empty list of positive orders"));
                }
                positive("experiment.samples", e.samples)?;
                positive("experiment.meeting_runs", e.meeting_runs)?;
                fraction("experiment.r", e.r)?;
                if let Some(c) = &e.check {
                    if !e.ms.contains(&c.calibrate_m) {
                        return Err(bad("experiment.check.calibrate_m", "must be one of experiment.ms"));
                    }
                }
            }
            Experiment::Clt(e) => {
                e.tower.validate()?;
                positive("experiment.sum_length", e.sum_length)?;
                positive("experiment.replicates", e.replicates)?;
                positive("experiment.segments", e.segments)?;
                if e.segment_length <= e.cutoff.max(200) as u64 {
                    return Err(bad("experiment.segment_length", "must exceed the largest lag"));
                }
            }
            Experiment::Coboundary(e) => {
                e.tower.validate()?;
                if e.length <= e.cutoff as u64 {
                    return Err(bad("experiment.length", "must exceed the cutoff"));
                }
                fraction("experiment.max_variance_fraction", e.max_variance_fraction)?;
            }
            Experiment::Stationarity(e) => {
                e.tower.validate()?;
                if let Some(o) = &e.occupancy {
                    positive("experiment.occupancy.steps", o.steps)?;
                }
                if let Some(b) = &e.base_frequency {
                    positive("experiment.base_frequency.steps", b.steps)?;
                }
            }
        }
        Ok(())
    }
}
