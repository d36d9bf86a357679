//! Markov shift towers: an alphabet with probabilities and integer roofs,
//! the suspension state space `G = {(a, ℓ) : 0 <= ℓ < h(a)}`, and the
//! invariant measure of the associated chain.

mod build;
mod io;
mod window;

pub use build::{build_tower_from_tail, TailModel, TailSource};
pub use window::{g0_visits, metric, separation_time, Distance, Separation, TrajectoryWindow};

use thiserror::Error;

use crate::stream::AliasTable;

/// Tolerance on `Σ P(a) = 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TowerError {
    #[error("alphabet is empty")]
    Empty,
    #[error("weight of symbol {index} is negative or not finite: {value}")]
    BadWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, not 1")]
    WeightSum { sum: f64 },
    #[error("roof of symbol {index} is zero")]
    ZeroRoof { index: usize },
    #[error("metric base xi must lie in (0, 1), got {0}")]
    Xi(f64),
    #[error("duplicate symbol id {0}")]
    DuplicateId(u64),
    #[error("state (symbol {symbol}, level {level}) is not in the state space")]
    InvalidState { symbol: u32, level: u32 },
    #[error("innovation symbol {0} is not in the alphabet")]
    InvalidSymbol(u32),
    #[error("window transition into index {index} is not admissible")]
    Inadmissible { index: i64 },
    #[error("windows do not cover the same index range around the same center")]
    WindowMismatch,
    #[error("index range [{from}, {to}] is not inside the window")]
    OutOfWindow { from: i64, to: i64 },
    #[error("window layout is inconsistent: {0}")]
    BadWindow(&'static str),
    #[error("every observation in the tail histogram is censored")]
    AllCensored,
    #[error("tail model is invalid: {0}")]
    BadModel(String),
    #[error("state space has {count} states, above the limit {limit}")]
    TooManyStates { count: usize, limit: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Symbol {
    pub id: u64,
    pub weight: f64,
    pub roof: u32,
}

/// A chain state `(a, ℓ)`; `symbol` is the position of `a` in the alphabet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChainState {
    pub symbol: u32,
    pub level: u32,
}

impl ChainState {
    pub const fn new(symbol: u32, level: u32) -> Self {
        Self { symbol, level }
    }

    /// Membership in the base `G_0 = {(a, 0)}`.
    #[inline]
    pub fn in_base(&self) -> bool {
        self.level == 0
    }
}

pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// The data `(𝒜, P_𝒜, h_𝒜, ξ)` of a Markov shift tower.
#[derive(Clone, Debug)]
pub struct TowerSpec {
    xi: f64,
    symbols: Vec<Symbol>,
    truncated_mass: f64,
    mean_roof: f64,
    innovation: AliasTable,
    stationary: AliasTable,
}

impl PartialEq for TowerSpec {
    fn eq(&self, other: &Self) -> bool {
        self.xi.to_bits() == other.xi.to_bits()
            && self.truncated_mass.to_bits() == other.truncated_mass.to_bits()
            && self.symbols.len() == other.symbols.len()
            && self.symbols.iter().zip(&other.symbols).all(|(a, b)| {
                a.id == b.id && a.roof == b.roof && a.weight.to_bits() == b.weight.to_bits()
            })
    }
}

impl TowerSpec {
    pub fn new(symbols: Vec<Symbol>, xi: f64) -> Result<Self, TowerError> {
        Self::with_truncation(symbols, xi, 0.0)
    }

    /// As [`TowerSpec::new`], recording the probability mass that was cut
    /// off when a countable alphabet was truncated.
    pub fn with_truncation(symbols: Vec<Symbol>, xi: f64, truncated_mass: f64) -> Result<Self, TowerError> {
        if symbols.is_empty() {
            return Err(TowerError::Empty);
        }
        if !(xi > 0.0 && xi < 1.0) {
            return Err(TowerError::Xi(xi));
        }
        let mut ids = std::collections::HashSet::with_capacity(symbols.len());
        for (index, s) in symbols.iter().enumerate() {
            if !(s.weight.is_finite() && s.weight >= 0.0) {
                return Err(TowerError::BadWeight { index, value: s.weight });
            }
            if s.roof == 0 {
                return Err(TowerError::ZeroRoof { index });
            }
            if !ids.insert(s.id) {
                return Err(TowerError::DuplicateId(s.id));
            }
        }
        let sum = neumaier_sum(symbols.iter().map(|s| s.weight));
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(TowerError::WeightSum { sum });
        }
        let weights: Vec<f64> = symbols.iter().map(|s| s.weight).collect();
        let biased: Vec<f64> = symbols.iter().map(|s| s.weight * s.roof as f64).collect();
        let mean_roof = neumaier_sum(biased.iter().copied());
        let innovation = AliasTable::new(&weights).map_err(|_| TowerError::WeightSum { sum })?;
        let stationary = AliasTable::new(&biased).map_err(|_| TowerError::WeightSum { sum })?;
        Ok(Self {
            xi,
            symbols,
            truncated_mass,
            mean_roof,
            innovation,
            stationary,
        })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn alphabet_len(&self) -> usize {
        self.symbols.len()
    }

    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    #[inline]
    pub fn roof(&self, symbol: u32) -> u32 {
        self.symbols[symbol as usize].roof
    }

    #[inline]
    pub fn weight(&self, symbol: u32) -> f64 {
        self.symbols[symbol as usize].weight
    }

    pub fn max_roof(&self) -> u32 {
        self.symbols.iter().map(|s| s.roof).max().unwrap_or(1)
    }

    /// `E[h] = Σ P(a) h(a)`.
    pub fn mean_roof(&self) -> f64 {
        self.mean_roof
    }

    /// `E[h²]`, finite for any truncated alphabet.
    pub fn roof_second_moment(&self) -> f64 {
        neumaier_sum(self.symbols.iter().map(|s| s.weight * (s.roof as f64).powi(2)))
    }

    pub(crate) fn innovation_table(&self) -> &AliasTable {
        &self.innovation
    }

    pub(crate) fn stationary_table(&self) -> &AliasTable {
        &self.stationary
    }

    /// gcd of the roofs carrying positive mass.
    pub fn roof_gcd(&self) -> u64 {
        self.symbols
            .iter()
            .filter(|s| s.weight > 0.0)
            .fold(0, |g, s| gcd(g, s.roof as u64))
    }

    pub fn is_aperiodic(&self) -> bool {
        self.roof_gcd() == 1
    }

    pub fn check_state(&self, state: ChainState) -> Result<(), TowerError> {
        match self.symbols.get(state.symbol as usize) {
            Some(s) if state.level < s.roof => Ok(()),
            _ => Err(TowerError::InvalidState {
                symbol: state.symbol,
                level: state.level,
            }),
        }
    }

    pub fn state_count(&self) -> usize {
        self.symbols.iter().map(|s| s.roof as usize).sum()
    }

    /// All states, symbol-major then by level; the position in this
    /// iterator is the dense state index used by [`TowerSpec::state_index`].
    pub fn states(&self) -> impl Iterator<Item = ChainState> + '_ {
        self.symbols
            .iter()
            .enumerate()
            .flat_map(|(a, s)| (0..s.roof).map(move |l| ChainState::new(a as u32, l)))
    }

    /// Offsets of each symbol's first state in the dense indexing.
    pub fn state_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.symbols.len() + 1);
        let mut acc = 0;
        for s in &self.symbols {
            offsets.push(acc);
            acc += s.roof as usize;
        }
        offsets.push(acc);
        offsets
    }

    /// `P(h >= n)` under `P_𝒜`.
    pub fn roof_survival(&self, n: u64) -> f64 {
        neumaier_sum(
            self.symbols
                .iter()
                .filter(|s| s.roof as u64 >= n)
                .map(|s| s.weight),
        )
    }

    /// `E[(h - n)_+]` for `n = 0..=up_to`.
    pub fn excess_means(&self, up_to: u64) -> Vec<f64> {
        let max = self.max_roof() as usize;
        // pmf by roof value, then survival S(j) = P(h >= j)
        let mut pmf = vec![0.0; max + 2];
        for s in &self.symbols {
            pmf[s.roof as usize] += s.weight;
        }
        let mut survival = vec![0.0; max + 2];
        for j in (1..=max).rev() {
            survival[j] = survival[j + 1] + pmf[j];
        }
        // E[(h - n)_+] = Σ_{j > n} S(j)
        let mut excess = vec![0.0; max + 2];
        for n in (0..=max).rev() {
            excess[n] = excess[n + 1] + survival[n + 1];
        }
        (0..=up_to as usize)
            .map(|n| excess.get(n).copied().unwrap_or(0.0))
            .collect()
    }

    /// Dense invariant measure `ν`, indexed as [`TowerSpec::states`].
    pub fn nu_vector(&self) -> Vec<f64> {
        self.states()
            .map(|g| self.weight(g.symbol) / self.mean_roof)
            .collect()
    }

    /// Row-major transition matrix of the chain, evaluated entry by entry
    /// from the kernel: `(a, ℓ) -> (a, ℓ+1)` with probability 1 below the
    /// roof, `(a, h(a)-1) -> (b, 0)` with probability `P(b)`.
    pub fn transition_matrix(&self, limit: usize) -> Result<Vec<Vec<f64>>, TowerError> {
        let count = self.state_count();
        if count > limit {
            return Err(TowerError::TooManyStates { count, limit });
        }
        let states: Vec<ChainState> = self.states().collect();
        Ok(states
            .iter()
            .map(|from| {
                states
                    .iter()
                    .map(|to| {
                        let h_from = self.roof(from.symbol);
                        if to.level == from.level + 1 && to.level < h_from && to.symbol == from.symbol {
                            1.0
                        } else if to.level == 0 && from.level + 1 == h_from {
                            self.weight(to.symbol)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

/// `ν(a, ℓ) = P(a) / E[h]`.
pub fn nu_mass(spec: &TowerSpec, state: ChainState) -> Result<f64, TowerError> {
    spec.check_state(state)?;
    Ok(spec.weight(state.symbol) / spec.mean_roof())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn spec(entries: &[(f64, u32)], xi: f64) -> TowerSpec {
        let symbols = entries
            .iter()
            .enumerate()
            .map(|(i, &(weight, roof))| Symbol {
                id: i as u64,
                weight,
                roof,
            })
            .collect();
        TowerSpec::new(symbols, xi).unwrap()
    }

    /// `𝒜 = {a, b}`, `P = (1/2, 1/2)`, `h = (1, 2)`.
    pub fn two_symbol() -> TowerSpec {
        spec(&[(0.5, 1), (0.5, 2)], 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn nu_single_symbol() {
        let s = spec(&[(1.0, 1)], 0.5);
        assert_eq!(nu_mass(&s, ChainState::new(0, 0)).unwrap(), 1.0);
    }

    #[test]
    fn nu_two_symbols_is_uniform_over_three_states() {
        let s = two_symbol();
        for g in [ChainState::new(0, 0), ChainState::new(1, 0), ChainState::new(1, 1)] {
            assert!((nu_mass(&s, g).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(nu_mass(&s, ChainState::new(0, 1)).is_err());
        assert!(nu_mass(&s, ChainState::new(2, 0)).is_err());
    }

    #[test]
    fn nu_normalizes() {
        let s = spec(&[(0.1, 3), (0.2, 1), (0.3, 7), (0.4, 2)], 0.3);
        let total = neumaier_sum(s.nu_vector());
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        let sym = |weight, roof| Symbol { id: 0, weight, roof };
        assert_eq!(TowerSpec::new(vec![], 0.5), Err(TowerError::Empty));
        assert_eq!(TowerSpec::new(vec![sym(1.0, 1)], 1.0), Err(TowerError::Xi(1.0)));
        assert_eq!(
            TowerSpec::new(vec![sym(1.0, 0)], 0.5),
            Err(TowerError::ZeroRoof { index: 0 })
        );
        assert!(matches!(
            TowerSpec::new(vec![sym(0.9, 1)], 0.5),
            Err(TowerError::WeightSum { .. })
        ));
        assert_eq!(
            TowerSpec::new(vec![sym(0.5, 1), sym(0.5, 2)], 0.5),
            Err(TowerError::DuplicateId(0))
        );
    }

    #[test]
    fn nu_is_stationary_for_the_kernel() {
        let s = spec(&[(0.15, 1), (0.25, 2), (0.35, 5), (0.25, 9)], 0.5);
        let p = s.transition_matrix(1000).unwrap();
        let nu = s.nu_vector();
        for (j, &nu_j) in nu.iter().enumerate() {
            let pushed: f64 = nu.iter().zip(&p).map(|(ni, row)| ni * row[j]).sum();
            assert!((pushed - nu_j).abs() < 1e-12);
        }
        for row in &p {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn excess_means_match_direct_sums() {
        let s = spec(&[(0.15, 1), (0.25, 2), (0.35, 5), (0.25, 9)], 0.5);
        let ex = s.excess_means(12);
        for (n, e) in ex.iter().enumerate() {
            let direct: f64 = s
                .symbols()
                .iter()
                .map(|a| a.weight * (a.roof as f64 - n as f64).max(0.0))
                .sum();
            assert!((e - direct).abs() < 1e-14, "n={n}");
        }
        assert!((ex[0] - s.mean_roof()).abs() < 1e-14);
    }

    #[test]
    fn periodicity() {
        assert!(!spec(&[(0.5, 2), (0.5, 4)], 0.5).is_aperiodic());
        assert!(spec(&[(0.5, 2), (0.5, 3)], 0.5).is_aperiodic());
        assert!(spec(&[(1.0, 1)], 0.5).is_aperiodic());
    }
}
