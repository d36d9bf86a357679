//! The intermittent baker's map, its expanding quotient, and return times
//! to the right half `Y = (1/2, 1]`.
//!
//! On `[0, 1/2]` the quotient is `g(x) = x (1 + 2^α x^α)`, a map with a
//! neutral fixed point at 0; on `(1/2, 1]` it is the doubling branch
//! `2x - 1`. Orbits linger near 0, which gives first-return times to `Y`
//! polynomial tails `P(τ >= n) ~ n^{-1/α}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::histogram::TailHistogram;
use crate::stream::{lanes, InnovationStream};

/// Slack allowed on the unit interval before a coordinate is rejected.
pub const DOMAIN_TOLERANCE: f64 = 1e-12;
/// Target bracket width for `g⁻¹`.
pub const INVERSE_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("intermittency exponent must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("{what} = {value} lies outside {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("root finding for g^-1({0}) did not converge")]
    RootFind(f64),
    #[error("cap must be at least 1")]
    ZeroCap,
    #[error("at least one sample is required")]
    ZeroSamples,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LsvParams {
    alpha: f64,
}

impl LsvParams {
    pub fn new(alpha: f64) -> Result<Self, MapError> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self { alpha })
        } else {
            Err(MapError::InvalidAlpha(alpha))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Exponent of the return-time tail, `1/α`.
    pub fn tail_exponent(&self) -> f64 {
        1.0 / self.alpha
    }

    /// `g` without domain checks. Written as `x + x (2x)^α`, which is exact
    /// at `x = 1/2`.
    #[inline]
    fn g(&self, x: f64) -> f64 {
        x + x * (2.0 * x).powf(self.alpha)
    }

    #[inline]
    fn g_prime(&self, x: f64) -> f64 {
        1.0 + (1.0 + self.alpha) * (2.0 * x).powf(self.alpha)
    }

    /// One step of the quotient map for `x` already known to be in `[0, 1]`.
    #[inline]
    pub fn step(&self, x: f64) -> f64 {
        if x <= 0.5 {
            self.g(x).min(1.0)
        } else {
            2.0 * x - 1.0
        }
    }
}

impl TryFrom<f64> for LsvParams {
    type Error = MapError;
    fn try_from(alpha: f64) -> Result<Self, MapError> {
        Self::new(alpha)
    }
}

impl From<LsvParams> for f64 {
    fn from(p: LsvParams) -> f64 {
        p.alpha
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapPoint {
    pub x: f64,
    pub y: f64,
}

/// One first-return time to `Y`; when `censored`, the orbit had not
/// returned after `tau = cap` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnSample {
    pub tau: u64,
    pub censored: bool,
    pub start: f64,
}

fn check_unit(what: &'static str, value: f64, lo: f64, hi: f64, domain: &'static str) -> Result<f64, MapError> {
    if value.is_finite() && value >= lo - DOMAIN_TOLERANCE && value <= hi + DOMAIN_TOLERANCE {
        Ok(value.clamp(lo, hi))
    } else {
        Err(MapError::Domain { what, value, domain })
    }
}

pub fn lsv_g(x: f64, p: &LsvParams) -> Result<f64, MapError> {
    let x = check_unit("x", x, 0.0, 0.5, "[0, 1/2]")?;
    Ok(p.g(x).min(1.0))
}

/// Inverse of `g` on `[0, 1]`, by safeguarded Newton iteration inside a
/// shrinking bisection bracket.
pub fn lsv_g_inverse(y: f64, p: &LsvParams) -> Result<f64, MapError> {
    let y = check_unit("y", y, 0.0, 1.0, "[0, 1]")?;
    if y == 0.0 {
        return Ok(0.0);
    }
    if y == 1.0 {
        return Ok(0.5);
    }
    // x <= g(x) <= 2x on [0, 1/2] brackets the root in [y/2, y].
    let mut lo = 0.5 * y;
    let mut hi = y.min(0.5);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = p.g(x) - y;
        if f == 0.0 {
            return Ok(x);
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - f / p.g_prime(x);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= f64::EPSILON * x || hi - lo <= INVERSE_TOLERANCE {
            return Ok(next);
        }
        x = next;
    }
    Err(MapError::RootFind(y))
}

pub fn baker_step(pt: MapPoint, params: &LsvParams) -> Result<MapPoint, MapError> {
    let x = check_unit("x", pt.x, 0.0, 1.0, "[0, 1]")?;
    let y = check_unit("y", pt.y, 0.0, 1.0, "[0, 1]")?;
    if x <= 0.5 {
        Ok(MapPoint {
            x: params.g(x).min(1.0),
            y: lsv_g_inverse(y, params)?,
        })
    } else {
        Ok(MapPoint {
            x: 2.0 * x - 1.0,
            y: 0.5 * (y + 1.0),
        })
    }
}

pub fn quotient_step(x: f64, params: &LsvParams) -> Result<f64, MapError> {
    let x = check_unit("x", x, 0.0, 1.0, "[0, 1]")?;
    Ok(params.step(x))
}

/// First return of `x0 ∈ (1/2, 1]` to `(1/2, 1]` under the quotient map.
pub fn return_time(x0: f64, params: &LsvParams, cap: u64) -> Result<ReturnSample, MapError> {
    if cap == 0 {
        return Err(MapError::ZeroCap);
    }
    if !(x0 > 0.5 && x0 <= 1.0 + DOMAIN_TOLERANCE) {
        return Err(MapError::Domain {
            what: "x0",
            value: x0,
            domain: "(1/2, 1]",
        });
    }
    let start = x0.min(1.0);
    let mut x = start;
    for n in 1..=cap {
        x = params.step(x);
        if x > 0.5 {
            return Ok(ReturnSample {
                tau: n,
                censored: false,
                start,
            });
        }
    }
    Ok(ReturnSample {
        tau: cap,
        censored: true,
        start,
    })
}

/// How starting points for return times are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ReturnSampling {
    /// Successive return intervals along long orbits, after a burn-in;
    /// samples `τ` under the induced invariant law.
    Orbit { burn_in: u64 },
    /// Starting points uniform on `(1/2, 1]`. Fast diagnostic only: this is
    /// not the induced invariant law.
    UniformStart,
}

impl Default for ReturnSampling {
    fn default() -> Self {
        ReturnSampling::Orbit { burn_in: 100_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnTailConfig {
    pub samples: u64,
    pub cap: u64,
    pub seed: u64,
    pub sampling: ReturnSampling,
    /// Returns per independent replicate (one orbit per replicate).
    pub chunk: u64,
}

impl ReturnTailConfig {
    pub fn new(samples: u64, cap: u64, seed: u64) -> Self {
        Self {
            samples,
            cap,
            seed,
            sampling: ReturnSampling::default(),
            chunk: 1_000_000,
        }
    }
}

/// Merged outcome of a return-time run.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnRun {
    pub histogram: TailHistogram,
    /// Quotient-map iterations spent measuring returns (burn-in excluded).
    pub orbit_steps: u64,
    /// Orbits restarted after landing exactly on a fixed point of the
    /// floating-point map.
    pub restarts: u64,
}

impl ReturnRun {
    fn empty(cap: u64) -> Self {
        Self {
            histogram: TailHistogram::new(cap),
            orbit_steps: 0,
            restarts: 0,
        }
    }

    fn merge(&mut self, other: &ReturnRun) {
        self.histogram.merge(&other.histogram);
        self.orbit_steps += other.orbit_steps;
        self.restarts += other.restarts;
    }
}

struct Orbit<'a> {
    params: &'a LsvParams,
    stream: InnovationStream,
    x: f64,
    restarts: u64,
}

impl<'a> Orbit<'a> {
    fn new(params: &'a LsvParams, stream: InnovationStream, burn_in: u64) -> Self {
        let mut orbit = Self {
            params,
            stream,
            x: 0.5,
            restarts: 0,
        };
        orbit.reseed(burn_in);
        orbit
    }

    fn reseed(&mut self, burn_in: u64) {
        self.x = self.stream.next_uniform();
        let mut n = 0;
        while n < burn_in {
            self.x = self.params.step(self.x);
            n += 1;
            if self.degenerate() {
                self.x = self.stream.next_uniform();
                n = 0;
            }
        }
    }

    #[inline]
    fn degenerate(&self) -> bool {
        self.x == 1.0 || self.x == 0.0
    }

    /// Advances until the orbit is in `Y`; returns steps taken, restarting
    /// (and re-burning) on a floating-point fixed point.
    fn advance_to_y(&mut self, burn_in: u64) -> u64 {
        let mut steps = 0;
        loop {
            self.x = self.params.step(self.x);
            steps += 1;
            if self.degenerate() {
                self.restarts += 1;
                self.reseed(burn_in);
                return 0;
            }
            if self.x > 0.5 {
                return steps;
            }
        }
    }
}

fn orbit_chunk(params: &LsvParams, cfg: &ReturnTailConfig, burn_in: u64, index: u64, count: u64) -> ReturnRun {
    let stream = InnovationStream::new(cfg.seed, index).fork(lanes::ORBIT);
    let mut orbit = Orbit::new(params, stream, burn_in);
    let mut run = ReturnRun::empty(cfg.cap);
    while orbit.advance_to_y(burn_in) == 0 {}
    let mut recorded = 0;
    while recorded < count {
        let tau = orbit.advance_to_y(burn_in);
        if tau == 0 {
            // restarted: re-enter Y before measuring again
            while orbit.advance_to_y(burn_in) == 0 {}
            continue;
        }
        run.orbit_steps += tau;
        if tau > cfg.cap {
            run.histogram.record_censored();
        } else {
            run.histogram.record(tau);
        }
        recorded += 1;
    }
    run.restarts = orbit.restarts;
    run
}

fn uniform_chunk(params: &LsvParams, cfg: &ReturnTailConfig, index: u64, count: u64) -> ReturnRun {
    let mut stream = InnovationStream::new(cfg.seed, index).fork(lanes::ORBIT);
    let mut run = ReturnRun::empty(cfg.cap);
    for _ in 0..count {
        let x0 = 0.5 + 0.5 * stream.next_uniform();
        let sample = return_time(x0, params, cfg.cap).expect("start lies in (1/2, 1)");
        run.orbit_steps += sample.tau;
        if sample.censored {
            run.histogram.record_censored();
        } else {
            run.histogram.record(sample.tau);
        }
    }
    run
}

/// Samples return times, split into independently seeded replicates of
/// `cfg.chunk` returns each. The merged result does not depend on how
/// replicates are scheduled.
pub fn sample_returns(params: &LsvParams, cfg: &ReturnTailConfig) -> Result<ReturnRun, MapError> {
    if cfg.samples == 0 || cfg.chunk == 0 {
        return Err(MapError::ZeroSamples);
    }
    if cfg.cap == 0 {
        return Err(MapError::ZeroCap);
    }
    let chunks = cfg.samples.div_ceil(cfg.chunk);
    let runs: Vec<ReturnRun> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let count = cfg.chunk.min(cfg.samples - i * cfg.chunk);
            match cfg.sampling {
                ReturnSampling::Orbit { burn_in } => orbit_chunk(params, cfg, burn_in, i, count),
                ReturnSampling::UniformStart => uniform_chunk(params, cfg, i, count),
            }
        })
        .collect();
    let mut total = ReturnRun::empty(cfg.cap);
    for r in &runs {
        total.merge(r);
    }
    Ok(total)
}

pub fn sample_return_tail(
    params: &LsvParams,
    n_samples: u64,
    cap: u64,
    seed: u64,
) -> Result<TailHistogram, MapError> {
    sample_returns(params, &ReturnTailConfig::new(n_samples, cap, seed)).map(|r| r.histogram)
}

/// Fraction of time a stationary quotient orbit spends in `Y`.
pub fn occupation_fraction(params: &LsvParams, steps: u64, burn_in: u64, seed: u64) -> f64 {
    let stream = InnovationStream::new(seed, u64::MAX).fork(lanes::ORBIT);
    let mut orbit = Orbit::new(params, stream, burn_in);
    let mut inside = 0u64;
    for _ in 0..steps {
        orbit.x = params.step(orbit.x);
        if orbit.degenerate() {
            orbit.reseed(burn_in);
        }
        if orbit.x > 0.5 {
            inside += 1;
        }
    }
    inside as f64 / steps as f64
}

#[cfg(test)]
pub(crate) fn baker_inverse(pt: MapPoint, params: &LsvParams) -> MapPoint {
    if pt.y <= 0.5 {
        MapPoint {
            x: lsv_g_inverse(pt.x, params).unwrap(),
            y: params.g(pt.y),
        }
    } else {
        MapPoint {
            x: 0.5 * (pt.x + 1.0),
            y: 2.0 * pt.y - 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(alpha: f64) -> LsvParams {
        LsvParams::new(alpha).unwrap()
    }

    #[test]
    fn alpha_must_be_in_unit_interval() {
        assert!(LsvParams::new(0.0).is_err());
        assert!(LsvParams::new(1.0).is_err());
        assert!(LsvParams::new(-0.2).is_err());
        assert!(LsvParams::new(0.999).is_ok());
    }

    #[test]
    fn g_examples() {
        assert_eq!(lsv_g(0.0, &p(0.5)).unwrap(), 0.0);
        for a in [0.1, 0.5, 0.9] {
            assert_eq!(lsv_g(0.5, &p(a)).unwrap(), 1.0);
        }
        // 0.25 (1 + 2 * 0.25) at alpha = 1; alpha -> 1 limit checked at 1 - 1e-15
        let near_one = lsv_g(0.25, &p(1.0 - 1e-15)).unwrap();
        assert!((near_one - 0.375).abs() < 1e-12);
        assert!(matches!(lsv_g(0.6, &p(0.5)), Err(MapError::Domain { .. })));
        assert_eq!(lsv_g(0.5 + 1e-13, &p(0.5)).unwrap(), 1.0);
    }

    #[test]
    fn baker_examples() {
        let q = baker_step(MapPoint { x: 0.75, y: 0.5 }, &p(0.5)).unwrap();
        assert_eq!(q, MapPoint { x: 0.5, y: 0.75 });
        let q = baker_step(MapPoint { x: 0.0, y: 0.0 }, &p(0.3)).unwrap();
        assert_eq!(q, MapPoint { x: 0.0, y: 0.0 });
        let a1 = p(1.0 - 1e-15);
        let q = baker_step(MapPoint { x: 0.25, y: 0.375 }, &a1).unwrap();
        assert!((q.x - 0.375).abs() < 1e-12);
        assert!((q.y - 0.25).abs() < 1e-12);
    }

    #[test]
    fn quotient_examples() {
        let a = p(0.4);
        assert_eq!(quotient_step(1.0, &a).unwrap(), 1.0);
        assert!((quotient_step(0.6, &a).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(quotient_step(0.5, &a).unwrap(), 1.0);
        assert!(quotient_step(1.1, &a).is_err());
    }

    #[test]
    fn return_time_examples() {
        for a in [0.2, 0.5, 0.8] {
            let r = return_time(0.8, &p(a), 100).unwrap();
            assert_eq!((r.tau, r.censored), (1, false));
            let r = return_time(0.75, &p(a), 100).unwrap();
            assert_eq!((r.tau, r.censored), (2, false));
        }
        let r = return_time(0.8, &p(0.5), 1).unwrap();
        assert_eq!((r.tau, r.censored), (1, false));
        assert_eq!(return_time(0.8, &p(0.5), 0), Err(MapError::ZeroCap));
        assert!(return_time(0.5, &p(0.5), 10).is_err());
    }

    #[test]
    fn long_excursion_is_censored() {
        // lands at ~1e-6 and needs ~10^3 steps to climb out at alpha = 0.5
        let r = return_time(0.5 + 5e-7, &p(0.5), 50).unwrap();
        assert_eq!((r.tau, r.censored), (50, true));
    }

    #[test]
    fn single_sample_histogram() {
        let h = sample_return_tail(&p(0.5), 1, 10, 3).unwrap();
        assert_eq!(h.total(), 1);
    }

    #[test]
    fn uniform_mode_counts() {
        let mut cfg = ReturnTailConfig::new(1000, 64, 9);
        cfg.sampling = ReturnSampling::UniformStart;
        cfg.chunk = 300;
        let run = sample_returns(&p(0.5), &cfg).unwrap();
        assert_eq!(run.histogram.total(), 1000);
        // tau = 1 exactly for starts in (3/4, 1)
        let frac1 = run.histogram.count(1) as f64 / 1000.0;
        assert!((frac1 - 0.5).abs() < 0.06, "{frac1}");
    }

    #[test]
    fn sampling_is_independent_of_scheduling() {
        let mut cfg = ReturnTailConfig::new(20_000, 200, 5);
        cfg.chunk = 5_000;
        cfg.sampling = ReturnSampling::Orbit { burn_in: 1000 };
        let a = sample_returns(&p(0.6), &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| sample_returns(&p(0.6), &cfg).unwrap());
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn g_inverse_round_trips(y in 0.0f64..=1.0, a in 0.05f64..0.95) {
            let params = p(a);
            let x = lsv_g_inverse(y, &params).unwrap();
            prop_assert!((0.0..=0.5).contains(&x));
            prop_assert!((params.g(x) - y).abs() <= 1e-12);
        }

        #[test]
        fn g_is_strictly_increasing(x1 in 0.0f64..0.5, dx in 1e-9f64..0.1, a in 0.05f64..0.95) {
            let x2 = (x1 + dx).min(0.5);
            prop_assume!(x2 > x1);
            let params = p(a);
            prop_assert!(lsv_g(x2, &params).unwrap() > lsv_g(x1, &params).unwrap());
        }

        #[test]
        fn baker_inverse_reconstructs(x in 0.0f64..=1.0, y in 1e-9f64..1.0 - 1e-9, a in 0.05f64..0.95) {
            let params = p(a);
            let pt = MapPoint { x, y };
            let img = baker_step(pt, &params).unwrap();
            prop_assert!((0.0..=1.0).contains(&img.x) && (0.0..=1.0).contains(&img.y));
            let back = baker_inverse(img, &params);
            prop_assert!((back.x - x).abs() <= 1e-10 && (back.y - y).abs() <= 1e-10,
                "{:?} -> {:?} -> {:?}", pt, img, back);
        }
    }
}
