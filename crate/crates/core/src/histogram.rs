//! Survival-function histograms for integer-valued waiting times.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Counts of observed values `0..=cap` plus the number of observations
/// still running at `cap` (true value > cap).
///
/// Merging is plain addition, so replicate histograms can be combined in
/// any order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailHistogram {
    counts: Vec<u64>,
    censored: u64,
}

impl TailHistogram {
    pub fn new(cap: u64) -> Self {
        Self {
            counts: vec![0; cap as usize + 1],
            censored: 0,
        }
    }

    pub fn cap(&self) -> u64 {
        self.counts.len() as u64 - 1
    }

    /// Records an uncensored observation; values above the cap count as censored.
    pub fn record(&mut self, value: u64) {
        match self.counts.get_mut(value as usize) {
            Some(c) => *c += 1,
            None => self.censored += 1,
        }
    }

    pub fn record_censored(&mut self) {
        self.censored += 1;
    }

    pub fn merge(&mut self, other: &TailHistogram) {
        assert_eq!(self.cap(), other.cap(), "histogram caps differ");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.censored += other.censored;
    }

    pub fn count(&self, value: u64) -> u64 {
        self.counts.get(value as usize).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn censored(&self) -> u64 {
        self.censored
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.censored
    }

    pub fn uncensored(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn censored_fraction(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.censored as f64 / total as f64
        }
    }

    /// `#{V >= n}` for `n = 0..=cap+1`.
    pub fn survivor_counts(&self) -> Vec<u64> {
        let mut out = vec![0; self.counts.len() + 1];
        let mut acc = self.censored;
        out[self.counts.len()] = acc;
        for (n, c) in self.counts.iter().enumerate().rev() {
            acc += c;
            out[n] = acc;
        }
        out
    }

    pub fn survivors(&self, n: u64) -> u64 {
        if n as usize > self.counts.len() {
            return self.censored;
        }
        self.censored + self.counts[n as usize..].iter().sum::<u64>()
    }

    /// Empirical `P(V >= n)`.
    pub fn survival(&self, n: u64) -> f64 {
        let total = self.total();
        if total == 0 {
            return f64::NAN;
        }
        self.survivors(n) as f64 / total as f64
    }

    pub fn mean_uncensored(&self) -> f64 {
        let k = self.uncensored();
        let s: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(v, &c)| v as f64 * c as f64)
            .sum();
        s / k as f64
    }

    /// CSV with columns `n,survivors,total,censored` for `n = first..=cap`.
    pub fn to_csv(&self, first: u64) -> String {
        let surv = self.survivor_counts();
        let total = self.total();
        let mut out = String::from("n,survivors,total,censored\n");
        for n in first..=self.cap() {
            let _ = writeln!(out, "{},{},{},{}", n, surv[n as usize], total, self.censored);
        }
        out
    }
}
