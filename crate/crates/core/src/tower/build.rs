//! Towers from return-time tails, empirical or parametric.

use serde::{Deserialize, Serialize};

use super::{neumaier_sum, Symbol, TowerError, TowerSpec};
use crate::histogram::TailHistogram;

/// Parametric law of the roof `h >= 1` via its survival function
/// `S(n) = P(h >= n)`, truncated at `cap` and renormalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TailModel {
    /// `S(n) = min(1, scale · n^{-beta})` for `n >= 2`.
    Power {
        beta: f64,
        #[serde(default = "one")]
        scale: f64,
        cap: u32,
    },
    /// `S(n) = min(1, scale · n^{-beta} (ln n)^gamma)` for `n >= 3`, made
    /// non-increasing.
    LogPower {
        beta: f64,
        gamma: f64,
        #[serde(default = "one")]
        scale: f64,
        cap: u32,
    },
    /// `S(n) = ratio^{n-1}`.
    Geometric { ratio: f64, cap: u32 },
    /// `h ≡ roof`.
    PointMass { roof: u32 },
}

fn one() -> f64 {
    1.0
}

impl TailModel {
    pub fn cap(&self) -> u32 {
        match *self {
            TailModel::Power { cap, .. } | TailModel::LogPower { cap, .. } | TailModel::Geometric { cap, .. } => cap,
            TailModel::PointMass { roof } => roof,
        }
    }

    fn validate(&self) -> Result<(), TowerError> {
        let bad = |m: &str| Err(TowerError::BadModel(m.to_string()));
        match *self {
            TailModel::Power { beta, scale, cap } | TailModel::LogPower { beta, scale, cap, .. } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    return bad("beta must be positive");
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return bad("scale must be positive");
                }
                if cap == 0 {
                    return bad("cap must be positive");
                }
            }
            TailModel::Geometric { ratio, cap } => {
                if !(ratio > 0.0 && ratio < 1.0) {
                    return bad("ratio must lie in (0, 1)");
                }
                if cap == 0 {
                    return bad("cap must be positive");
                }
            }
            TailModel::PointMass { roof } => {
                if roof == 0 {
                    return bad("roof must be positive");
                }
            }
        }
        if let TailModel::LogPower { gamma, .. } = *self {
            if !gamma.is_finite() {
                return bad("gamma must be finite");
            }
        }
        Ok(())
    }

    /// Untruncated `P(h >= n)`.
    pub fn survival(&self, n: u64) -> f64 {
        if n <= 1 {
            return 1.0;
        }
        let x = n as f64;
        match *self {
            TailModel::Power { beta, scale, .. } => (scale * x.powf(-beta)).min(1.0),
            TailModel::LogPower { beta, gamma, scale, .. } => {
                // non-increasing envelope of the raw formula
                (3..=n)
                    .map(|m| {
                        let y = m as f64;
                        (scale * y.powf(-beta) * y.ln().powf(gamma)).min(1.0)
                    })
                    .fold(1.0, f64::min)
            }
            TailModel::Geometric { ratio, .. } => ratio.powf(x - 1.0),
            TailModel::PointMass { roof } => {
                if n <= roof as u64 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `S(1..=cap+1)` computed in one pass.
    fn survival_table(&self) -> Vec<f64> {
        let cap = self.cap() as u64;
        match *self {
            TailModel::LogPower { beta, gamma, scale, .. } => {
                let mut out = Vec::with_capacity(cap as usize + 1);
                let mut running = 1.0_f64;
                for n in 1..=cap + 1 {
                    if n >= 3 {
                        let y = n as f64;
                        running = running.min((scale * y.powf(-beta) * y.ln().powf(gamma)).min(1.0));
                    }
                    out.push(running);
                }
                out
            }
            _ => (1..=cap + 1).map(|n| self.survival(n)).collect(),
        }
    }
}

/// Where the roof law comes from.
#[derive(Clone, Copy, Debug)]
pub enum TailSource<'a> {
    /// Observed return times; censored observations become truncated mass.
    Empirical(&'a TailHistogram),
    Model(&'a TailModel),
}

/// Alphabet `𝒜 = {n : P(h = n) > 0}` with symbol id `n` and roof `n`.
pub fn build_tower_from_tail(source: TailSource<'_>, xi: f64) -> Result<TowerSpec, TowerError> {
    let (masses, truncated): (Vec<(u32, f64)>, f64) = match source {
        TailSource::Empirical(h) => {
            if h.count(0) > 0 {
                return Err(TowerError::ZeroRoof { index: 0 });
            }
            let k = h.uncensored();
            if k == 0 {
                return Err(TowerError::AllCensored);
            }
            let masses = h
                .counts()
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(n, &c)| (n as u32, c as f64 / k as f64))
                .collect();
            (masses, h.censored_fraction())
        }
        TailSource::Model(model) => {
            model.validate()?;
            let s = model.survival_table();
            let raw: Vec<(u32, f64)> = (0..s.len() - 1)
                .map(|i| ((i + 1) as u32, s[i] - s[i + 1]))
                .filter(|&(_, p)| p > 0.0)
                .collect();
            let total = neumaier_sum(raw.iter().map(|&(_, p)| p));
            if !(total > 0.0) {
                return Err(TowerError::BadModel("no mass below the cap".into()));
            }
            let masses = raw.into_iter().map(|(n, p)| (n, p / total)).collect();
            (masses, s[s.len() - 1])
        }
    };
    let symbols = masses
        .into_iter()
        .map(|(n, weight)| Symbol {
            id: n as u64,
            weight,
            roof: n,
        })
        .collect();
    TowerSpec::with_truncation(symbols, xi, truncated)
}
