//! Simulation of the tower chain and the synchronous coupling.

use rayon::prelude::*;
use thiserror::Error;

use crate::histogram::TailHistogram;
use crate::stream::{lanes, InnovationStream};
use crate::tower::{ChainState, TowerError, TowerSpec, TrajectoryWindow};

/// Replicates per parallel work item. Fixed, so results do not depend on
/// how many workers run.
pub const CHUNK: u64 = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error("roofs have gcd {gcd}; coupling requires an aperiodic tower")]
    Periodic { gcd: u64 },
    #[error("cap must be positive")]
    ZeroCap,
    #[error("at least one step is required")]
    ZeroLength,
    #[error("at least one replicate is required")]
    ZeroRuns,
}

/// One transition, unchecked: climb the column, or at its top restart at
/// the base of column `eps`.
#[inline]
pub(crate) fn advance(spec: &TowerSpec, g: ChainState, eps: u32) -> ChainState {
    if g.level + 1 < spec.roof(g.symbol) {
        ChainState::new(g.symbol, g.level + 1)
    } else {
        ChainState::new(eps, 0)
    }
}

/// One transition with validated inputs.
pub fn step(spec: &TowerSpec, g: ChainState, eps: u32) -> Result<ChainState, ChainError> {
    spec.check_state(g)?;
    if eps as usize >= spec.alphabet_len() {
        return Err(TowerError::InvalidSymbol(eps).into());
    }
    Ok(advance(spec, g, eps))
}

/// A draw from `ν`: column `a` with probability `P(a) h(a) / E[h]`, then a
/// uniform level. Consumes two slots.
pub fn sample_stationary(spec: &TowerSpec, stream: &mut InnovationStream) -> ChainState {
    let a = stream.next_index(spec.stationary_table()) as u32;
    let level = stream.next_below(spec.roof(a) as u64) as u32;
    ChainState::new(a, level)
}

#[inline]
pub(crate) fn next_innovation(spec: &TowerSpec, stream: &mut InnovationStream) -> u32 {
    stream.next_index(spec.innovation_table()) as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Start {
    /// Drawn from `ν` on the `START` lane of the stream.
    Stationary,
    State(ChainState),
}

/// `n` states `g_0..g_{n-1}` with `ε_i` taken from slot `i` of `stream`
/// (relative to its position at call time). Index 0 is the center.
pub fn simulate(
    spec: &TowerSpec,
    n: usize,
    stream: &mut InnovationStream,
    start: Start,
) -> Result<TrajectoryWindow, ChainError> {
    if n == 0 {
        return Err(ChainError::ZeroLength);
    }
    let g0 = match start {
        Start::Stationary => sample_stationary(spec, &mut stream.fork(lanes::START)),
        Start::State(g) => {
            spec.check_state(g)?;
            g
        }
    };
    let mut states = Vec::with_capacity(n);
    let mut innovations = Vec::with_capacity(n);
    let mut g = g0;
    for i in 0..n {
        let eps = next_innovation(spec, stream);
        if i > 0 {
            g = advance(spec, g, eps);
        }
        states.push(g);
        innovations.push(eps);
    }
    Ok(TrajectoryWindow::new(0, 0, states, innovations)?)
}

/// Drives one path of `steps + 1` states `g_0..=g_steps` through `visit`
/// without storing it. Slots are used as in [`simulate`].
pub fn run_path(
    spec: &TowerSpec,
    steps: u64,
    stream: &mut InnovationStream,
    start: Start,
    mut visit: impl FnMut(ChainState),
) -> Result<(), ChainError> {
    let mut g = match start {
        Start::Stationary => sample_stationary(spec, &mut stream.fork(lanes::START)),
        Start::State(g) => {
            spec.check_state(g)?;
            g
        }
    };
    stream.next_slot();
    visit(g);
    for _ in 0..steps {
        g = advance(spec, g, next_innovation(spec, stream));
        visit(g);
    }
    Ok(())
}

/// Visit counts per state (dense order of [`TowerSpec::states`]) along one
/// stationary path of `steps` transitions, counting `g_1..=g_steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct Occupancy {
    pub counts: Vec<u64>,
    pub steps: u64,
}

impl Occupancy {
    /// `½ Σ |count/steps - ν|`.
    pub fn tv_distance(&self, spec: &TowerSpec) -> f64 {
        let nu = spec.nu_vector();
        0.5 * self
            .counts
            .iter()
            .zip(&nu)
            .map(|(&c, &p)| (c as f64 / self.steps as f64 - p).abs())
            .sum::<f64>()
    }
}

pub fn occupancy(spec: &TowerSpec, steps: u64, seed: u64, state_limit: usize) -> Result<Occupancy, ChainError> {
    if steps == 0 {
        return Err(ChainError::ZeroLength);
    }
    let n = spec.state_count();
    if n > state_limit {
        return Err(TowerError::TooManyStates { count: n, limit: state_limit }.into());
    }
    let offsets = spec.state_offsets();
    let mut counts = vec![0u64; n];
    let mut first = true;
    run_path(spec, steps, &mut InnovationStream::new(seed, 0), Start::Stationary, |g| {
        if first {
            first = false;
        } else {
            counts[offsets[g.symbol as usize] + g.level as usize] += 1;
        }
    })?;
    Ok(Occupancy { counts, steps })
}

/// `θ⁺_u = #{0 < ℓ <= u : g_ℓ ∈ G_0}` along a stationary path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseFrequency {
    pub visits: u64,
    pub steps: u64,
    /// `1 / E[h]`, the limit of `θ⁺_u / u`.
    pub expected: f64,
}

impl BaseFrequency {
    pub fn ratio(&self) -> f64 {
        self.visits as f64 / self.steps as f64
    }

    /// `|θ⁺_u/u - 1/E[h]| / (1/E[h])`.
    pub fn relative_error(&self) -> f64 {
        (self.ratio() - self.expected).abs() / self.expected
    }
}

pub fn base_frequency(spec: &TowerSpec, steps: u64, seed: u64) -> Result<BaseFrequency, ChainError> {
    if steps == 0 {
        return Err(ChainError::ZeroLength);
    }
    let mut visits = 0u64;
    let mut first = true;
    run_path(spec, steps, &mut InnovationStream::new(seed, 0), Start::Stationary, |g| {
        if first {
            first = false;
        } else if g.in_base() {
            visits += 1;
        }
    })?;
    Ok(BaseFrequency {
        visits,
        steps,
        expected: 1.0 / spec.mean_roof(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeetingTimeSample {
    /// Meeting time, or the cap when censored.
    pub t: u64,
    /// True when the chains had not met by the cap (`T > cap`).
    pub censored: bool,
    pub start: ChainState,
    pub start_prime: ChainState,
}

/// Meeting time of two chains started at `a` and `b` and driven by the
/// same innovations (slot `ℓ` of `stream` for the step into time `ℓ`).
pub fn meeting_time_from(
    spec: &TowerSpec,
    a: ChainState,
    b: ChainState,
    stream: &mut InnovationStream,
    cap: u64,
) -> MeetingTimeSample {
    let mut sample = MeetingTimeSample {
        t: 0,
        censored: false,
        start: a,
        start_prime: b,
    };
    if a == b {
        return sample;
    }
    // slot 0 belongs to time 0, as in `simulate`
    stream.next_slot();
    let (mut g, mut h) = (a, b);
    for t in 1..=cap {
        let eps = next_innovation(spec, stream);
        g = advance(spec, g, eps);
        h = advance(spec, h, eps);
        if g == h {
            sample.t = t;
            return sample;
        }
    }
    sample.t = cap;
    sample.censored = true;
    sample
}

/// `T` for independent `ν`-distributed starts drawn on the `START` and
/// `START_PRIME` lanes of `stream`.
pub fn meeting_time(spec: &TowerSpec, stream: &InnovationStream, cap: u64) -> Result<MeetingTimeSample, ChainError> {
    if cap == 0 {
        return Err(ChainError::ZeroCap);
    }
    ensure_aperiodic(spec)?;
    Ok(meeting_time_unchecked(spec, stream, cap))
}

fn meeting_time_unchecked(spec: &TowerSpec, stream: &InnovationStream, cap: u64) -> MeetingTimeSample {
    let a = sample_stationary(spec, &mut stream.fork(lanes::START));
    let b = sample_stationary(spec, &mut stream.fork(lanes::START_PRIME));
    meeting_time_from(spec, a, b, &mut stream.clone(), cap)
}

pub fn ensure_aperiodic(spec: &TowerSpec) -> Result<(), ChainError> {
    match spec.roof_gcd() {
        1 => Ok(()),
        gcd => Err(ChainError::Periodic { gcd }),
    }
}

/// Empirical survival of `T` with the comparator `E[(h - n)_+]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeetingTail {
    pub histogram: TailHistogram,
    /// `E[(h - n)_+]` for `n = 0..=cap`.
    pub comparator: Vec<f64>,
}

impl MeetingTail {
    /// `P̂(T >= n) / E[(h - n)_+]`; `NaN` where the comparator vanishes.
    pub fn ratio(&self, n: u64) -> f64 {
        match self.comparator.get(n as usize) {
            Some(&c) if c > 0.0 => self.histogram.survival(n) / c,
            _ => f64::NAN,
        }
    }

    /// `n,survival,comparator,ratio,survivors,total`.
    pub fn to_csv(&self, ns: &[u64]) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("n,survival,comparator,ratio,survivors,total\n");
        let total = self.histogram.total();
        for &n in ns {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{},{}",
                n,
                self.histogram.survival(n),
                self.comparator.get(n as usize).copied().unwrap_or(0.0),
                self.ratio(n),
                self.histogram.survivors(n),
                total
            );
        }
        out
    }
}

/// `runs` coupled replicates; replicate `i` uses stream id `i`.
pub fn meeting_tail_experiment(spec: &TowerSpec, runs: u64, cap: u64, seed: u64) -> Result<MeetingTail, ChainError> {
    if runs == 0 {
        return Err(ChainError::ZeroRuns);
    }
    if cap == 0 {
        return Err(ChainError::ZeroCap);
    }
    ensure_aperiodic(spec)?;
    let chunks = runs.div_ceil(CHUNK);
    let parts: Vec<TailHistogram> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut h = TailHistogram::new(cap);
            for i in c * CHUNK..((c + 1) * CHUNK).min(runs) {
                let s = meeting_time_unchecked(spec, &InnovationStream::new(seed, i), cap);
                if s.censored {
                    h.record_censored();
                } else {
                    h.record(s.t);
                }
            }
            h
        })
        .collect();
    let mut histogram = TailHistogram::new(cap);
    for p in &parts {
        histogram.merge(p);
    }
    Ok(MeetingTail {
        histogram,
        comparator: spec.excess_means(cap),
    })
}

/// Exact `P(T >= n)` for `n = 0..=n_max` by propagating the law of the
/// product chain on unequal pairs. Needs `state_count()^2 <= pair_limit`.
pub fn exact_meeting_survival(spec: &TowerSpec, n_max: u64, pair_limit: usize) -> Result<Vec<f64>, ChainError> {
    ensure_aperiodic(spec)?;
    let n = spec.state_count();
    if n.saturating_mul(n) > pair_limit {
        return Err(TowerError::TooManyStates {
            count: n * n,
            limit: pair_limit,
        }
        .into());
    }
    let states: Vec<ChainState> = spec.states().collect();
    let offsets = spec.state_offsets();
    let index = |g: ChainState| offsets[g.symbol as usize] + g.level as usize;
    let nu = spec.nu_vector();
    let weights: Vec<f64> = spec.symbols().iter().map(|s| s.weight).collect();

    let mut mass = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            if p != q {
                mass[p * n + q] = nu[p] * nu[q];
            }
        }
    }
    let mut survival = vec![1.0];
    if n_max >= 1 {
        survival.push(mass.iter().sum());
    }
    let mut next = vec![0.0; n * n];
    for _ in 2..=n_max {
        next.iter_mut().for_each(|x| *x = 0.0);
        for p in 0..n {
            let gp = states[p];
            let top_p = gp.level + 1 == spec.roof(gp.symbol);
            for q in 0..n {
                let m = mass[p * n + q];
                if m == 0.0 {
                    continue;
                }
                let gq = states[q];
                let top_q = gq.level + 1 == spec.roof(gq.symbol);
                match (top_p, top_q) {
                    // both refresh to the same base state
                    (true, true) => {}
                    (false, false) => next[(p + 1) * n + q + 1] += m,
                    (true, false) => {
                        for (c, w) in weights.iter().enumerate() {
                            next[index(ChainState::new(c as u32, 0)) * n + q + 1] += m * w;
                        }
                    }
                    (false, true) => {
                        for (c, w) in weights.iter().enumerate() {
                            next[(p + 1) * n + index(ChainState::new(c as u32, 0))] += m * w;
                        }
                    }
                }
            }
        }
        std::mem::swap(&mut mass, &mut next);
        survival.push(mass.iter().sum());
    }
    Ok(survival)
}
