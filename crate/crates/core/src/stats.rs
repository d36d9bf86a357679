//! Birkhoff sums, autocovariances, Green–Kubo variance, CLT and LIL
//! diagnostics, tail-exponent fits and coboundary checks.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use rayon::prelude::*;

use crate::histogram::TailHistogram;
use crate::observables::{self, Observable, ObservableError, ObservableSpec};
use crate::stream::InnovationStream;
use crate::tower::TowerSpec;

/// Minimum survivors for a point to enter a tail fit.
pub const MIN_SURVIVORS: u64 = 100;
/// Minimum number of points a tail fit needs.
pub const MIN_FIT_POINTS: usize = 5;
/// Ratio between consecutive abscissae of the tail-fit grid.
pub const FIT_GRID_RATIO: f64 = 1.189_207_115_002_721; // 2^(1/4)
/// Default Green–Kubo cutoff and the cutoffs of the sensitivity report.
pub const GREEN_KUBO_CUTOFF: usize = 200;
pub const SENSITIVITY_CUTOFFS: [usize; 3] = [50, 100, 200];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("series is empty")]
    Empty,
    #[error("lag {lag} needs a series longer than {len}")]
    LagTooLarge { lag: usize, len: usize },
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("variance estimate {0} is not positive; the zero-variance diagnostics apply instead")]
    NonPositiveVariance(f64),
    #[error("tail fit window [{n_min}, {n_max}] has {points} usable points, need {MIN_FIT_POINTS}")]
    InsufficientTailData { n_min: u64, n_max: u64, points: usize },
    #[error("invalid fit window [{n_min}, {n_max}]")]
    BadWindow { n_min: u64, n_max: u64 },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Observable(#[from] ObservableError),
}

/// `S_0 = 0`, `S_n = S_{n-1} + x_{n-1}`.
pub fn birkhoff_sums(series: &[f64]) -> Result<Vec<f64>, StatsError> {
    if series.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut out = Vec::with_capacity(series.len() + 1);
    let mut s = 0.0;
    out.push(s);
    for &x in series {
        s += x;
        out.push(s);
    }
    Ok(out)
}

/// Biased autocovariance `γ̂(k) = n^{-1} Σ_{i<n-k} (x_i - x̄)(x_{i+k} - x̄)`
/// for `k = 0..=max_lag`.
pub fn autocovariance(series: &[f64], max_lag: usize) -> Result<Vec<f64>, StatsError> {
    if series.is_empty() {
        return Err(StatsError::Empty);
    }
    if max_lag >= series.len() {
        return Err(StatsError::LagTooLarge {
            lag: max_lag,
            len: series.len(),
        });
    }
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    Ok((0..=max_lag)
        .map(|k| dot(&centered[..n - k], &centered[k..]) / n as f64)
        .collect())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Streaming version of [`autocovariance`] for series too long to store.
///
/// Values are shifted by a caller-supplied constant (ideally close to the
/// mean) before accumulating raw cross-products, which keeps the final
/// mean correction well conditioned.
#[derive(Clone, Debug)]
pub struct AutocovAccumulator {
    max_lag: usize,
    shift: f64,
    n: u64,
    sum: f64,
    cross: Vec<f64>,
    head: Vec<f64>,
    history: Vec<f64>,
    buffer: Vec<f64>,
}

impl AutocovAccumulator {
    pub fn new(max_lag: usize, shift: f64) -> Self {
        Self {
            max_lag,
            shift,
            n: 0,
            sum: 0.0,
            cross: vec![0.0; max_lag + 1],
            head: Vec::with_capacity(max_lag),
            history: Vec::with_capacity(max_lag),
            buffer: Vec::new(),
        }
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn push_slice(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let h = self.history.len();
        self.buffer.clear();
        self.buffer.extend_from_slice(&self.history);
        self.buffer.extend(xs.iter().map(|x| x - self.shift));
        let m = xs.len();
        let new = &self.buffer[h..];
        for k in 0..=self.max_lag {
            // pairs (j - k, j) with j in the new block and j - k >= -h
            let start = k.saturating_sub(h);
            if start >= m {
                continue;
            }
            let a = &self.buffer[h + start - k..h + m - k];
            self.cross[k] += dot(a, &new[start..]);
        }
        self.sum += new.iter().sum::<f64>();
        for &y in new {
            if self.head.len() < self.max_lag {
                self.head.push(y);
            } else {
                break;
            }
        }
        let keep = self.max_lag.min(self.buffer.len());
        self.history.clear();
        self.history.extend_from_slice(&self.buffer[self.buffer.len() - keep..]);
        self.n += m as u64;
    }

    pub fn mean(&self) -> f64 {
        self.shift + self.sum / self.n as f64
    }

    /// `γ̂(0..=max_lag)`, identical in exact arithmetic to [`autocovariance`].
    pub fn finish(&self) -> Result<Vec<f64>, StatsError> {
        let n = self.n as usize;
        if n == 0 {
            return Err(StatsError::Empty);
        }
        if self.max_lag >= n {
            return Err(StatsError::LagTooLarge { lag: self.max_lag, len: n });
        }
        let nf = n as f64;
        let ybar = self.sum / nf;
        let mut head_sum = 0.0;
        let mut tail_sum = 0.0;
        let tail = &self.history;
        let mut out = Vec::with_capacity(self.max_lag + 1);
        for k in 0..=self.max_lag {
            if k > 0 {
                head_sum += self.head[k - 1];
                tail_sum += tail[tail.len() - k];
            }
            // Σ_{i<n-k} y_i = total - last k ; Σ_{i>=k} y_i = total - first k
            let p = self.sum - tail_sum;
            let q = self.sum - head_sum;
            out.push((self.cross[k] - ybar * (p + q) + (nf - k as f64) * ybar * ybar) / nf);
        }
        Ok(out)
    }
}

/// `ĉ² = γ̂(0) + 2 Σ_{k=1..=cutoff} γ̂(k)`.
pub fn green_kubo_variance(cov: &[f64], cutoff: usize) -> Result<f64, StatsError> {
    if cov.is_empty() {
        return Err(StatsError::Empty);
    }
    if cutoff >= cov.len() {
        return Err(StatsError::LagTooLarge {
            lag: cutoff,
            len: cov.len(),
        });
    }
    Ok(cov[0] + 2.0 * cov[1..=cutoff].iter().sum::<f64>())
}

/// Standard error of [`green_kubo_variance`] from `n` observations:
/// `sqrt(2(2K+1)/n) · max(|ĉ²|, sqrt(Σ_{|j|<=K} γ̂(j)²))`. The first term
/// is the usual truncated-window formula; the second keeps the error
/// meaningful when `ĉ²` itself is near zero.
pub fn green_kubo_se(cov: &[f64], cutoff: usize, n: u64) -> Result<f64, StatsError> {
    let c2 = green_kubo_variance(cov, cutoff)?;
    let sq = cov[0] * cov[0] + 2.0 * cov[1..=cutoff].iter().map(|g| g * g).sum::<f64>();
    Ok((2.0 * (2 * cutoff + 1) as f64 / n as f64).sqrt() * c2.abs().max(sq.sqrt()))
}

/// Green–Kubo estimate with its error, the cutoff sensitivity and the
/// zero-variance routing flag.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceSummary {
    pub cutoff: usize,
    pub c_hat2: f64,
    pub se: f64,
    /// `(K, ĉ²(K))` for each sensitivity cutoff available.
    pub sensitivity: Vec<(usize, f64)>,
    /// `ĉ² < 3 SE`: the CLT test is skipped in favour of coboundary checks.
    pub possible_zero_variance: bool,
    /// `ĉ² < 0`.
    pub clipped: bool,
}

pub fn summarize_variance(cov: &[f64], cutoff: usize, n: u64) -> Result<VarianceSummary, StatsError> {
    let c_hat2 = green_kubo_variance(cov, cutoff)?;
    let se = green_kubo_se(cov, cutoff, n)?;
    let sensitivity = SENSITIVITY_CUTOFFS
        .iter()
        .filter(|&&k| k < cov.len())
        .map(|&k| (k, green_kubo_variance(cov, k).expect("checked")))
        .collect();
    Ok(VarianceSummary {
        cutoff,
        c_hat2,
        se,
        sensitivity,
        possible_zero_variance: c_hat2 < 3.0 * se,
        clipped: c_hat2 < 0.0,
    })
}

/// Kolmogorov–Smirnov distance between the empirical law of
/// `samples / sqrt(c_hat2)` and the standard normal.
pub fn clt_test(samples: &[f64], c_hat2: f64) -> Result<f64, StatsError> {
    if samples.len() < 100 {
        return Err(StatsError::TooFew {
            needed: 100,
            got: samples.len(),
        });
    }
    if !(c_hat2 > 0.0) {
        return Err(StatsError::NonPositiveVariance(c_hat2));
    }
    let scale = c_hat2.sqrt();
    let mut z: Vec<f64> = samples.iter().map(|x| x / scale).collect();
    z.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let n = z.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in z.iter().enumerate() {
        let f = normal.cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Asymptotic 95% critical value of the one-sample KS statistic.
pub fn ks_critical_95(n: usize) -> f64 {
    1.358 / (n as f64).sqrt()
}

/// `max_{n in [1000, len]} |S_n| / sqrt(2 ĉ² n log log n)`.
pub fn lil_envelope_check(series: &[f64], c_hat2: f64) -> Result<f64, StatsError> {
    if series.len() < 10_000 {
        return Err(StatsError::TooFew {
            needed: 10_000,
            got: series.len(),
        });
    }
    if !(c_hat2 > 0.0) {
        return Err(StatsError::NonPositiveVariance(c_hat2));
    }
    let mut s = 0.0;
    let mut worst = 0.0_f64;
    for (i, &x) in series.iter().enumerate() {
        s += x;
        let n = (i + 1) as f64;
        if i + 1 >= 1000 {
            worst = worst.max(s.abs() / (2.0 * c_hat2 * n * n.ln().ln()).sqrt());
        }
    }
    Ok(worst)
}

/// Ordinary least squares `y ≈ slope · x + intercept` with `R²`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, my - slope * mx, r2))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: x.len() });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (_, _, r2) = linear_fit(&rx, &ry)?;
    let n = x.len() as f64;
    let mx = (n + 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - mx)).sum();
    Ok(r2.sqrt().copysign(cov))
}

/// Settings for [`tail_exponent_fit`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailFitConfig {
    pub n_min: u64,
    pub n_max: u64,
    /// Log correction: the fit regresses `log S(n) - γ log log n` on `log n`.
    pub gamma: f64,
    pub bootstrap: u32,
    pub seed: u64,
}

impl TailFitConfig {
    pub fn new(n_min: u64, n_max: u64) -> Self {
        Self {
            n_min,
            n_max,
            gamma: 0.0,
            bootstrap: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Percentile bootstrap 95% interval for the slope.
    pub ci_low: f64,
    pub ci_high: f64,
    pub bootstrap_se: f64,
    /// `(n, survivors)` of the points used.
    pub points: Vec<(u64, u64)>,
    pub total: u64,
}

/// Grid `n_min, ⌈n_min r⌉, ...` (ratio `2^{1/4}`), ending at `n_max`.
pub fn fit_grid(n_min: u64, n_max: u64) -> Vec<u64> {
    let mut grid = Vec::new();
    let mut x = n_min as f64;
    while x.round() as u64 <= n_max {
        let n = x.round() as u64;
        if grid.last() != Some(&n) {
            grid.push(n);
        }
        x *= FIT_GRID_RATIO;
    }
    if grid.last() != Some(&n_max) {
        grid.push(n_max);
    }
    grid
}

/// Usable grid points: at most a quarter of the cap (censoring guard) and
/// at least [`MIN_SURVIVORS`] survivors.
pub fn usable_tail_points(hist: &TailHistogram, n_min: u64, n_max: u64) -> Vec<(u64, u64)> {
    let limit = hist.cap() / 4;
    fit_grid(n_min, n_max)
        .into_iter()
        .filter(|&n| n <= limit)
        .map(|n| (n, hist.survivors(n)))
        .filter(|&(_, s)| s >= MIN_SURVIVORS)
        .collect()
}

fn tail_regression(points: &[(u64, u64)], total: u64, gamma: f64) -> Result<(f64, f64, f64), StatsError> {
    let x: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let y: Vec<f64> = points
        .iter()
        .map(|&(n, s)| {
            let mut v = (s as f64 / total as f64).ln();
            if gamma != 0.0 {
                v -= gamma * (n as f64).ln().ln();
            }
            v
        })
        .collect();
    linear_fit(&x, &y)
}

/// Least-squares slope of the log survival function with a multinomial
/// bootstrap over the histogram.
pub fn tail_exponent_fit(hist: &TailHistogram, cfg: &TailFitConfig) -> Result<TailFit, StatsError> {
    let lowest = if cfg.gamma != 0.0 { 2 } else { 1 };
    if cfg.n_min < lowest || cfg.n_max <= cfg.n_min {
        return Err(StatsError::BadWindow {
            n_min: cfg.n_min,
            n_max: cfg.n_max,
        });
    }
    let points = usable_tail_points(hist, cfg.n_min, cfg.n_max);
    if points.len() < MIN_FIT_POINTS {
        return Err(StatsError::InsufficientTailData {
            n_min: cfg.n_min,
            n_max: cfg.n_max,
            points: points.len(),
        });
    }
    let total = hist.total();
    let (slope, intercept, r_squared) = tail_regression(&points, total, cfg.gamma)?;

    // Multinomial resampling over the cells between grid points:
    // cell i holds observations in [n_i, n_{i+1}), the last cell [n_last, ∞).
    let cells: Vec<u64> = points
        .iter()
        .enumerate()
        .map(|(i, &(_, s))| s - points.get(i + 1).map_or(0, |p| p.1))
        .collect();
    let below = total - points[0].1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut slopes = Vec::with_capacity(cfg.bootstrap as usize);
    for _ in 0..cfg.bootstrap {
        let mut remaining = total;
        let mut mass_left = 1.0_f64;
        let p_below = below as f64 / total as f64;
        let drawn_below = draw_binomial(&mut rng, remaining, p_below / mass_left);
        remaining -= drawn_below;
        mass_left -= p_below;
        let mut drawn = Vec::with_capacity(cells.len());
        for (i, &c) in cells.iter().enumerate() {
            let p = c as f64 / total as f64;
            let k = if i + 1 == cells.len() {
                remaining
            } else {
                draw_binomial(&mut rng, remaining, (p / mass_left).min(1.0))
            };
            remaining -= k;
            mass_left -= p;
            drawn.push(k);
        }
        let mut surv = 0;
        let mut resampled = vec![(0, 0); points.len()];
        for i in (0..points.len()).rev() {
            surv += drawn[i];
            resampled[i] = (points[i].0, surv);
        }
        if resampled.iter().all(|&(_, s)| s > 0) {
            slopes.push(tail_regression(&resampled, total, cfg.gamma)?.0);
        }
    }
    let (ci_low, ci_high, bootstrap_se) = if slopes.len() >= 2 {
        slopes.sort_by(f64::total_cmp);
        let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round()) as usize];
        let m = slopes.iter().sum::<f64>() / slopes.len() as f64;
        let var = slopes.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (slopes.len() - 1) as f64;
        (q(0.025), q(0.975), var.sqrt())
    } else {
        (slope, slope, 0.0)
    };
    Ok(TailFit {
        slope,
        intercept,
        r_squared,
        ci_low,
        ci_high,
        bootstrap_se,
        points,
        total,
    })
}

fn draw_binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Hill-type estimate of the tail exponent from observations `>= threshold`,
/// with the integer values measured from `threshold - 1/2`. Censored
/// observations enter at the cap, which biases the estimate
/// upward when censoring is heavy. Diagnostic only.
pub fn hill_estimator(hist: &TailHistogram, threshold: u64) -> Result<f64, StatsError> {
    if threshold == 0 {
        return Err(StatsError::BadWindow {
            n_min: 0,
            n_max: hist.cap(),
        });
    }
    let u = threshold as f64 - 0.5;
    let mut k = 0u64;
    let mut s = 0.0;
    for (v, &c) in hist.counts().iter().enumerate().skip(threshold as usize) {
        k += c;
        s += c as f64 * (v as f64 / u).ln();
    }
    k += hist.censored();
    s += hist.censored() as f64 * (hist.cap() as f64 / u).ln();
    if k < 2 || s <= 0.0 {
        return Err(StatsError::TooFew { needed: 2, got: k as usize });
    }
    Ok(k as f64 / s)
}

/// A transfer function `χ` given as an observable, with `‖χ‖∞` declared by
/// the observable's sup-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct CoboundarySpec {
    pub chi: ObservableSpec,
}

/// The observable `v = χ∘σ - χ`.
pub fn make_coboundary(spec: &CoboundarySpec) -> ObservableSpec {
    ObservableSpec {
        coboundary: true,
        ..spec.chi.clone()
    }
}

/// Outcome of checking `S_n(v) = χ_n - χ_0` along a series.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TelescopingReport {
    pub length: usize,
    pub max_abs_sum: f64,
    /// `2 ‖χ‖∞`.
    pub bound: f64,
    pub max_identity_error: f64,
    /// Allowed floating accumulation `n · 1e-15 · ‖χ‖∞`.
    pub tolerance: f64,
    pub bounded: bool,
    pub exact: bool,
}

/// `chi` holds `χ_0..=χ_n` and `v` holds `v_0..v_{n-1}`.
pub fn verify_telescoping(chi: &[f64], v: &[f64], chi_sup: f64) -> Result<TelescopingReport, StatsError> {
    if chi.len() != v.len() + 1 {
        return Err(StatsError::LengthMismatch(chi.len(), v.len() + 1));
    }
    if v.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = v.len();
    let tolerance = n as f64 * 1e-15 * chi_sup;
    let mut s = 0.0;
    let mut max_abs_sum = 0.0_f64;
    let mut max_err = 0.0_f64;
    for (i, &x) in v.iter().enumerate() {
        s += x;
        max_abs_sum = max_abs_sum.max(s.abs());
        max_err = max_err.max((s - (chi[i + 1] - chi[0])).abs());
    }
    let bound = 2.0 * chi_sup;
    Ok(TelescopingReport {
        length: n,
        max_abs_sum,
        bound,
        max_identity_error: max_err,
        tolerance,
        bounded: max_abs_sum <= bound + tolerance,
        exact: max_err <= tolerance,
    })
}

/// `n^{-1}` times the sample variance of `S_n` across replicates.
pub fn normalized_sum_variance(sums: &[f64], n: u64) -> Result<f64, StatsError> {
    if sums.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: sums.len(),
        });
    }
    let m = sums.iter().sum::<f64>() / sums.len() as f64;
    let var = sums.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (sums.len() - 1) as f64;
    Ok(var / n as f64)
}

/// Summary statistics of one experiment, with everything needed to
/// reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatReport {
    pub autocovariances: Vec<f64>,
    pub variance: VarianceSummary,
    pub ks_distance: Option<f64>,
    pub ks_samples: usize,
    pub tail_fit: Option<TailFit>,
    pub series_length: u64,
    pub sum_length: u64,
    pub seeds: Vec<u64>,
}

impl StatReport {
    /// Builds the report, running the KS test only when the variance is
    /// clearly positive.
    pub fn new(
        autocovariances: Vec<f64>,
        series_length: u64,
        cutoff: usize,
        scaled_sums: &[f64],
        sum_length: u64,
        seeds: Vec<u64>,
    ) -> Result<Self, StatsError> {
        let variance = summarize_variance(&autocovariances, cutoff, series_length)?;
        let ks_distance = if variance.possible_zero_variance || scaled_sums.is_empty() {
            None
        } else {
            Some(clt_test(scaled_sums, variance.c_hat2)?)
        };
        Ok(Self {
            autocovariances,
            variance,
            ks_distance,
            ks_samples: scaled_sums.len(),
            tail_fit: None,
            series_length,
            sum_length,
            seeds,
        })
    }

    /// `key = value` lines; floats with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let v = &self.variance;
        let _ = writeln!(out, "series_length = {}", self.series_length);
        let _ = writeln!(out, "sum_length = {}", self.sum_length);
        let _ = writeln!(out, "seeds = {:?}", self.seeds);
        let _ = writeln!(out, "cutoff = {}", v.cutoff);
        let _ = writeln!(out, "c_hat2 = {:.16e}", v.c_hat2);
        let _ = writeln!(out, "c_hat2_se = {:.16e}", v.se);
        for (k, c) in &v.sensitivity {
            let _ = writeln!(out, "c_hat2_k{} = {:.16e}", k, c);
        }
        let _ = writeln!(out, "possible_zero_variance = {}", v.possible_zero_variance);
        let _ = writeln!(out, "clipped = {}", v.clipped);
        let _ = writeln!(out, "ks_samples = {}", self.ks_samples);
        match self.ks_distance {
            Some(d) => {
                let _ = writeln!(out, "ks_distance = {:.16e}", d);
            }
            None => out.push_str("ks_distance = none\n"),
        }
        if let Some(f) = &self.tail_fit {
            let _ = writeln!(out, "tail_slope = {:.16e}", f.slope);
            let _ = writeln!(out, "tail_ci = [{:.16e}, {:.16e}]", f.ci_low, f.ci_high);
        }
        out
    }

    /// `lag,autocovariance`.
    pub fn autocovariance_csv(&self) -> String {
        let mut out = String::from("lag,autocovariance\n");
        for (k, g) in self.autocovariances.iter().enumerate() {
            let _ = writeln!(out, "{},{:.16e}", k, g);
        }
        out
    }
}

/// Autocovariances of `X_k` averaged over independent stationary segments.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LongRunConfig {
    pub segment_length: u64,
    pub segments: u64,
    pub max_lag: usize,
    /// Extra states on each side of every evaluated block.
    pub margin: u64,
    pub seed: u64,
}

/// Segment `i` uses stream `(seed, i)`; the per-segment biased estimates
/// are averaged in segment order.
pub fn long_run_autocovariance(obs: &Observable, spec: &TowerSpec, cfg: &LongRunConfig) -> Result<Vec<f64>, StatsError> {
    if cfg.segments == 0 {
        return Err(StatsError::Empty);
    }
    let shift = obs.stationary_mean(spec);
    let parts: Vec<Result<Vec<f64>, StatsError>> = (0..cfg.segments)
        .into_par_iter()
        .map(|i| {
            let mut acc = AutocovAccumulator::new(cfg.max_lag, shift);
            observables::stationary_series(
                obs,
                spec,
                cfg.segment_length,
                cfg.margin,
                &mut InnovationStream::new(cfg.seed, i),
                |xs| acc.push_slice(xs),
            )?;
            acc.finish()
        })
        .collect();
    let mut out = vec![0.0; cfg.max_lag + 1];
    for p in parts {
        for (o, g) in out.iter_mut().zip(p?) {
            *o += g / cfg.segments as f64;
        }
    }
    Ok(out)
}

/// Settings of [`clt_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltConfig {
    /// `n` in `S_n`.
    pub sum_length: u64,
    pub replicates: u64,
    pub long_run: LongRunConfig,
    pub cutoff: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltOutcome {
    pub report: StatReport,
    /// `S_n - n E[X]` per replicate.
    pub sums: Vec<f64>,
    /// `n^{-1}` sample variance of the sums.
    pub sum_variance: f64,
}

/// Replicated Birkhoff sums (stream ids `(seed, i)`) tested against a
/// normal law whose variance comes from the Green–Kubo sum of a separate
/// long run (seeded by `long_run.seed`).
pub fn clt_experiment(obs: &Observable, spec: &TowerSpec, cfg: &CltConfig) -> Result<CltOutcome, StatsError> {
    let cov = long_run_autocovariance(obs, spec, &cfg.long_run)?;
    let sums = observables::sum_replicates(obs, spec, cfg.sum_length, cfg.long_run.margin, cfg.replicates, cfg.seed)?;
    let root = (cfg.sum_length as f64).sqrt();
    let scaled: Vec<f64> = sums.iter().map(|s| s / root).collect();
    let series_length = cfg.long_run.segment_length * cfg.long_run.segments;
    let report = StatReport::new(
        cov,
        series_length,
        cfg.cutoff,
        &scaled,
        cfg.sum_length,
        vec![cfg.seed, cfg.long_run.seed],
    )?;
    let sum_variance = normalized_sum_variance(&sums, cfg.sum_length)?;
    Ok(CltOutcome {
        report,
        sums,
        sum_variance,
    })
}
