//! The acceptance suite: fixed configurations whose checks together cover
//! the quantitative claims the library is built to reproduce.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use towerlab::observables::{ObservableSpec, StateFunction};
use towerlab::tower::TailModel;

use crate::config::*;
use crate::experiments::{run_experiment, Outcome};
use crate::output::{header, render, write_files};
use crate::{derive_seed, CliError};

/// Centred marks `±1` by symbol parity, weighted geometrically in the
/// number of base visits.
fn parity_marks(xi: f64) -> ObservableSpec {
    ObservableSpec::geometric(
        StateFunction::RefreshMark {
            values: vec![1.0, -1.0],
            centered: true,
        },
        Some(xi),
    )
}

fn power_tower(beta: f64, cap: u32, xi: f64) -> TowerConfig {
    TowerConfig::Model {
        xi,
        tail: TailModel::Power { beta, scale: 1.0, cap },
    }
}

pub fn return_tail() -> Experiment {
    Experiment::ReturnTail(ReturnTailExperiment {
        alpha: 0.5,
        samples: 10_000_000,
        cap: 8192,
        fit: FitWindow {
            n_min: 16,
            n_max: 1024,
            gamma: 0.0,
            bootstrap: 200,
        },
        slope: Some(SlopeCheck {
            expected: -2.0,
            tolerance: 0.2,
        }),
    })
}

pub fn meeting_tail_power() -> Experiment {
    Experiment::MeetingTail(MeetingTailExperiment {
        tower: power_tower(3.0, 1 << 14, 0.5),
        runs: 1_000_000,
        cap: 4096,
        fit: Some(FitWindow {
            n_min: 8,
            n_max: 512,
            gamma: 0.0,
            bootstrap: 200,
        }),
        slope: Some(SlopeCheck {
            expected: -2.0,
            tolerance: 0.3,
        }),
        trend: Some(TrendCheck {
            n_min: 8,
            max_spearman: 0.2,
        }),
        exponential: None,
    })
}

pub fn meeting_tail_geometric() -> Experiment {
    Experiment::MeetingTail(MeetingTailExperiment {
        tower: TowerConfig::Model {
            xi: 0.5,
            tail: TailModel::Geometric { ratio: 0.5, cap: 40 },
        },
        runs: 1_000_000,
        cap: 200,
        fit: None,
        slope: None,
        trend: None,
        exponential: Some(ExponentialCheck {
            min_r_squared: 0.98,
            exact_up_to: 12,
            sigmas: 3.0,
            pair_limit: 1 << 20,
        }),
    })
}

pub fn approx_decay() -> Experiment {
    Experiment::ApproxDecay(ApproxDecayExperiment {
        tower: power_tower(3.0, 1 << 12, 0.5),
        observable: parity_marks(0.5),
        ms: vec![4, 8, 16, 32],
        samples: 40_000,
        outer: 16,
        inner: 4,
        margin: 48,
        r: 2.0,
        meeting_runs: 200_000,
        check: Some(DecayCheck {
            calibrate_m: 4,
            max_relative_error: 0.2,
        }),
    })
}

pub fn covariance() -> Experiment {
    Experiment::Clt(CltExperiment {
        tower: power_tower(2.5, 1 << 16, 0.8),
        observable: parity_marks(0.8),
        sum_length: 10_000,
        replicates: 5000,
        segment_length: 1_000_000,
        segments: 20,
        cutoff: 200,
        margin: 400,
        ks: None,
        covariance: Some(CovarianceCheck {
            max_increment: 0.02,
            max_cutoff_spread: 0.05,
            max_variance_gap: 0.1,
        }),
    })
}

pub fn clt_lsv() -> Experiment {
    Experiment::Clt(CltExperiment {
        tower: TowerConfig::Lsv {
            xi: 0.8,
            alpha: 0.4,
            returns: 1_000_000,
            cap: 1 << 14,
        },
        observable: parity_marks(0.8),
        sum_length: 10_000,
        replicates: 5000,
        segment_length: 1_000_000,
        segments: 10,
        cutoff: 200,
        margin: 400,
        ks: Some(KsCheck { max_distance: 0.03 }),
        covariance: None,
    })
}

pub fn coboundary() -> Experiment {
    Experiment::Coboundary(CoboundaryExperiment {
        tower: power_tower(3.0, 16, 0.5),
        chi: ObservableSpec::finite(StateFunction::Level, 0),
        length: 1_000_000,
        cutoff: 200,
        max_variance_fraction: 0.01,
    })
}

pub fn occupancy() -> Experiment {
    Experiment::Stationarity(StationarityExperiment {
        tower: power_tower(3.0, 12, 0.5),
        occupancy: Some(OccupancyCheck {
            steps: 10_000_000,
            state_limit: 100,
            max_tv: 0.01,
            max_kernel_error: 1e-12,
        }),
        base_frequency: None,
    })
}

pub fn base_frequency() -> Experiment {
    Experiment::Stationarity(StationarityExperiment {
        tower: power_tower(2.5, 1 << 16, 0.5),
        occupancy: None,
        base_frequency: Some(BaseFrequencyCheck {
            steps: 10_000_000,
            max_relative_error: 0.01,
        }),
    })
}

/// `(directory, experiment)` in run order; each gets its own seed derived
/// from the suite seed and its position.
pub fn suite() -> Vec<(&'static str, Experiment)> {
    vec![
        ("return-tail", return_tail()),
        ("meeting-tail-power", meeting_tail_power()),
        ("meeting-tail-geometric", meeting_tail_geometric()),
        ("approx-decay", approx_decay()),
        ("covariance", covariance()),
        ("clt-lsv", clt_lsv()),
        ("coboundary", coboundary()),
        ("occupancy", occupancy()),
        ("base-frequency", base_frequency()),
    ]
}

/// The suite configuration used for a single subcommand run without a
/// configuration file.
pub fn preset(kind: &str) -> Option<Experiment> {
    suite().into_iter().map(|(_, e)| e).find(|e| e.kind() == kind)
}

pub fn suite_configs(seed: u64) -> Vec<(&'static str, ExperimentConfig)> {
    suite()
        .into_iter()
        .enumerate()
        .map(|(i, (name, experiment))| {
            (
                name,
                ExperimentConfig {
                    seed: derive_seed(seed, 100 + i as u64),
                    output: None,
                    experiment,
                },
            )
        })
        .collect()
}

pub struct SuiteRun {
    pub name: &'static str,
    pub config: ExperimentConfig,
    pub outcome: Outcome,
    /// Wall time; reported on the console only, never written to files.
    pub elapsed: Duration,
}

/// Runs every suite experiment, writes `out/<name>/...` and
/// `out/summary.txt`, and returns the outcomes.
pub fn run_all(seed: u64, out: &Path, mut progress: impl FnMut(&SuiteRun)) -> Result<Vec<SuiteRun>, CliError> {
    let mut runs = Vec::new();
    for (name, config) in suite_configs(seed) {
        let start = Instant::now();
        let outcome = run_experiment(&config)?;
        let run = SuiteRun {
            name,
            config,
            outcome,
            elapsed: start.elapsed(),
        };
        write_files(&out.join(name), &render(&run.config, &run.outcome))?;
        progress(&run);
        runs.push(run);
    }
    let mut summary = header(&["Pass/fail verdict of every acceptance check, one per line."]);
    let _ = writeln!(summary, "seed = {seed}");
    for run in &runs {
        for c in &run.outcome.checks {
            let _ = writeln!(
                summary,
                "{} {}/{}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                run.name,
                c.name,
                c.detail
            );
        }
    }
    let mut files = BTreeMap::new();
    files.insert("summary.txt".to_string(), summary);
    write_files(out, &files)?;
    Ok(runs)
}
