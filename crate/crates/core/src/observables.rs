//! Lipschitz observables `ψ` of two-sided trajectories, the process
//! `X_k = ψ(σ^k g)`, and its approximations:
//!
//! * `X_{m,k}`: average of `ψ` over independent refreshes of the
//!   innovations after `k + m`;
//! * `X̃_{m,k}`: additionally average over independent stationary pasts
//!   before `k - m`, i.e. the conditional expectation given
//!   `ε_{k-m..=k+m}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{self, advance, meeting_tail_experiment, sample_stationary, ChainError, Start};
use crate::histogram::TailHistogram;
use crate::stream::{lanes, InnovationStream};
use crate::tower::{ChainState, TowerError, TowerSpec, TrajectoryWindow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("window [{first}, {last}] cannot evaluate the observable at {center} exactly")]
    WindowTooSmall { first: i64, last: i64, center: i64 },
    #[error("geometric weights need a state function that vanishes off the base")]
    NotSupportedOnBase,
    #[error("weight base {weight_xi} must lie in (0, metric base {metric_xi}]")]
    WeightBase { weight_xi: f64, metric_xi: f64 },
    #[error("scale must be finite, got {0}")]
    BadScale(f64),
    #[error("refresh mark needs at least one finite value")]
    BadMarks,
    #[error("index {0} is outside the window")]
    OutOfWindow(i64),
    #[error("at least one replicate is required")]
    ZeroReplicates,
    #[error("approximation orders must be a nonempty list of positive integers")]
    BadOrders,
    #[error("comparator rate r must be positive, got {0}")]
    BadRate(f64),
}

/// Bounded function `φ` on the state space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateFunction {
    Zero,
    Constant {
        value: f64,
    },
    /// `φ(a, ℓ) = ℓ`.
    Level,
    /// `φ = 1_{G_0}`.
    BaseIndicator,
    /// `φ = 1_{G_0} - 1/E[h]`, mean zero under `ν`.
    CenteredBase,
    /// `φ(a, 0) = values[a mod len]`, zero above the base. With `centered`,
    /// the `P_𝒜`-mean of the marks is subtracted, so `φ` has mean zero
    /// under `ν` and stays supported on the base.
    RefreshMark {
        values: Vec<f64>,
        #[serde(default)]
        centered: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Shape {
    /// Mean of `φ(g_j)` over `|j| <= half_width`.
    FiniteWindow { half_width: u32 },
    /// `Σ_j ξ^{n₀(j)} φ(g_j)` with `n₀(j)` the number of base visits
    /// strictly after `j` up to 0 (for `j <= 0`) or in `(0, j]` (for
    /// `j > 0`). Defaults to the tower's metric base.
    GeometricWeights {
        #[serde(default)]
        xi: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub function: StateFunction,
    pub shape: Shape,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub scale: f64,
    /// Use `χ∘σ - χ` in place of the observable `χ` described above.
    #[serde(default, skip_serializing_if = "is_false")]
    pub coboundary: bool,
}

impl ObservableSpec {
    pub fn finite(function: StateFunction, half_width: u32) -> Self {
        Self {
            function,
            shape: Shape::FiniteWindow { half_width },
            scale: 1.0,
            coboundary: false,
        }
    }

    pub fn geometric(function: StateFunction, xi: Option<f64>) -> Self {
        Self {
            function,
            shape: Shape::GeometricWeights { xi },
            scale: 1.0,
            coboundary: false,
        }
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

/// `ψ` at one center together with a bound on what the window edges cut off.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub truncation_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub values: Vec<f64>,
    /// Largest per-index truncation bound.
    pub truncation_bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Finite(u32),
    Geometric(f64),
}

/// An [`ObservableSpec`] bound to a tower.
#[derive(Clone, Debug)]
pub struct Observable {
    spec: ObservableSpec,
    kind: Kind,
    base: Vec<f64>,
    off_const: f64,
    off_level: f64,
    phi_sup: f64,
    chi_sup: f64,
    chi_lipschitz: f64,
    metric_xi: f64,
}

impl Observable {
    pub fn new(spec: &ObservableSpec, tower: &TowerSpec) -> Result<Self, ObservableError> {
        if !spec.scale.is_finite() {
            return Err(ObservableError::BadScale(spec.scale));
        }
        let n = tower.alphabet_len();
        let inv_mean = 1.0 / tower.mean_roof();
        let (base, off_const, off_level) = match &spec.function {
            StateFunction::Zero => (vec![0.0; n], 0.0, 0.0),
            StateFunction::Constant { value } => (vec![*value; n], *value, 0.0),
            StateFunction::Level => (vec![0.0; n], 0.0, 1.0),
            StateFunction::BaseIndicator => (vec![1.0; n], 0.0, 0.0),
            StateFunction::CenteredBase => (vec![1.0 - inv_mean; n], -inv_mean, 0.0),
            StateFunction::RefreshMark { values, centered } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(ObservableError::BadMarks);
                }
                let marks: Vec<f64> = (0..n).map(|a| values[a % values.len()]).collect();
                let shift = if *centered {
                    marks.iter().zip(tower.symbols()).map(|(v, s)| v * s.weight).sum()
                } else {
                    0.0
                };
                (marks.iter().map(|v| v - shift).collect(), 0.0, 0.0)
            }
        };
        let base: Vec<f64> = base.into_iter().map(|v| v * spec.scale).collect();
        let (off_const, off_level) = (off_const * spec.scale, off_level * spec.scale);
        let top = tower.max_roof().saturating_sub(1) as f64;
        let mut phi_sup = base.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if tower.max_roof() > 1 {
            phi_sup = phi_sup
                .max((off_const + off_level).abs())
                .max((off_const + off_level * top).abs());
        }
        let metric_xi = tower.xi();
        let (kind, chi_sup, chi_lipschitz) = match spec.shape {
            Shape::FiniteWindow { half_width } => {
                // windows agreeing on [-w, w] give equal values, and a
                // disagreement inside forces s <= w
                (
                    Kind::Finite(half_width),
                    phi_sup,
                    2.0 * phi_sup * metric_xi.powi(-(half_width as i32)),
                )
            }
            Shape::GeometricWeights { xi } => {
                let w = xi.unwrap_or(metric_xi);
                if !(w > 0.0 && w <= metric_xi) {
                    return Err(ObservableError::WeightBase {
                        weight_xi: w,
                        metric_xi,
                    });
                }
                if tower.max_roof() > 1 && (off_const != 0.0 || off_level != 0.0) {
                    return Err(ObservableError::NotSupportedOnBase);
                }
                (
                    Kind::Geometric(w),
                    phi_sup * (1.0 + w) / (1.0 - w),
                    4.0 * phi_sup / (1.0 - w),
                )
            }
        };
        Ok(Self {
            spec: spec.clone(),
            kind,
            base,
            off_const,
            off_level,
            phi_sup,
            chi_sup,
            chi_lipschitz,
            metric_xi,
        })
    }

    pub fn spec(&self) -> &ObservableSpec {
        &self.spec
    }

    #[inline]
    pub fn phi(&self, g: ChainState) -> f64 {
        if g.level == 0 {
            self.base[g.symbol as usize]
        } else {
            self.off_const + self.off_level * g.level as f64
        }
    }

    /// `sup |φ|`.
    pub fn phi_sup(&self) -> f64 {
        self.phi_sup
    }

    /// Declared `M = sup |ψ|`.
    pub fn sup_norm(&self) -> f64 {
        if self.spec.coboundary {
            2.0 * self.chi_sup
        } else {
            self.chi_sup
        }
    }

    /// `L` with `|ψ(g) - ψ(g')| <= L ξ^{s(g,g')}`; divide by it to get a
    /// 1-Lipschitz observable.
    pub fn lipschitz(&self) -> f64 {
        if self.spec.coboundary {
            // s(σg, σg') >= s(g, g') - 1
            self.chi_lipschitz * (1.0 + 1.0 / self.metric_xi)
        } else {
            self.chi_lipschitz
        }
    }

    /// Indices left and right of the center that determine `ψ` exactly;
    /// `None` for geometric weights, which look at the whole trajectory.
    pub fn reach(&self) -> Option<(u64, u64)> {
        match self.kind {
            Kind::Finite(w) => Some((w as u64, w as u64 + self.spec.coboundary as u64)),
            Kind::Geometric(_) => None,
        }
    }

    /// `E_ν[φ]`, computed exactly.
    pub fn phi_mean(&self, tower: &TowerSpec) -> f64 {
        tower.states().zip(tower.nu_vector()).map(|(g, p)| p * self.phi(g)).sum()
    }

    /// `E[X_k]` under the stationary law, in closed form. For geometric
    /// weights with base marks `f`: the forward visits carry weights
    /// `ξ, ξ², ...` and fresh marks; backward likewise, except the latest
    /// visit at or before 0 has weight 1 and a size-biased symbol, giving
    /// `E[f h]/E[h] + 2 E[f] ξ/(1-ξ)`.
    pub fn stationary_mean(&self, tower: &TowerSpec) -> f64 {
        if self.spec.coboundary {
            return 0.0;
        }
        match self.kind {
            Kind::Finite(_) => self.phi_mean(tower),
            Kind::Geometric(xi) => {
                let (mut fh, mut f) = (0.0, 0.0);
                for (a, s) in tower.symbols().iter().enumerate() {
                    fh += s.weight * self.base[a] * s.roof as f64;
                    f += s.weight * self.base[a];
                }
                fh / tower.mean_roof() + 2.0 * f * xi / (1.0 - xi)
            }
        }
    }

    pub fn eval(&self, w: &TrajectoryWindow, center: i64) -> Result<Evaluation, ObservableError> {
        self.eval_states(w.states(), w.first(), center)
    }

    pub(crate) fn eval_states(&self, states: &[ChainState], first: i64, center: i64) -> Result<Evaluation, ObservableError> {
        if self.spec.coboundary {
            let a = self.eval_chi(states, first, center)?;
            let b = self.eval_chi(states, first, center + 1)?;
            return Ok(Evaluation {
                value: b.value - a.value,
                truncation_bound: a.truncation_bound + b.truncation_bound,
            });
        }
        self.eval_chi(states, first, center)
    }

    fn eval_chi(&self, states: &[ChainState], first: i64, center: i64) -> Result<Evaluation, ObservableError> {
        let last = first + states.len() as i64 - 1;
        let c = center - first;
        match self.kind {
            Kind::Finite(hw) => {
                let hw = hw as i64;
                if c - hw < 0 || center + hw > last {
                    return Err(ObservableError::WindowTooSmall { first, last, center });
                }
                let sum: f64 = states[(c - hw) as usize..=(c + hw) as usize]
                    .iter()
                    .map(|&g| self.phi(g))
                    .sum();
                Ok(Evaluation {
                    value: sum / (2 * hw + 1) as f64,
                    truncation_bound: 0.0,
                })
            }
            Kind::Geometric(xi) => {
                if c < 0 || center > last {
                    return Err(ObservableError::OutOfWindow(center));
                }
                let c = c as usize;
                let mut value = 0.0;
                let mut weight = 1.0;
                let mut back = 0i32;
                for &g in states[..=c].iter().rev() {
                    value += weight * self.phi(g);
                    if g.in_base() {
                        weight *= xi;
                        back += 1;
                    }
                }
                let mut weight = 1.0;
                let mut fwd = 0i32;
                for &g in &states[c + 1..] {
                    if g.in_base() {
                        weight *= xi;
                        fwd += 1;
                    }
                    value += weight * self.phi(g);
                }
                Ok(Evaluation {
                    value,
                    truncation_bound: self.geometric_tail(xi, back, fwd),
                })
            }
        }
    }

    /// Bound on the terms beyond the window: `j < first` carry at least
    /// `back` base visits, `j > last` at least `fwd + 1`.
    fn geometric_tail(&self, xi: f64, back: i32, fwd: i32) -> f64 {
        self.phi_sup * (xi.powi(back) + xi.powi(fwd + 1)) / (1.0 - xi)
    }

    /// `X_k` for `k` in `from..=to`.
    pub fn series(&self, w: &TrajectoryWindow, from: i64, to: i64) -> Result<Series, ObservableError> {
        if from > to {
            return Ok(Series {
                values: Vec::new(),
                truncation_bound: 0.0,
            });
        }
        if self.spec.coboundary {
            let chi = self.chi_series(w, from, to + 1)?;
            let values = chi.values.windows(2).map(|p| p[1] - p[0]).collect();
            return Ok(Series {
                values,
                truncation_bound: 2.0 * chi.truncation_bound,
            });
        }
        self.chi_series(w, from, to)
    }

    fn chi_series(&self, w: &TrajectoryWindow, from: i64, to: i64) -> Result<Series, ObservableError> {
        let states = w.states();
        let first = w.first();
        match self.kind {
            Kind::Finite(hw) => {
                let hw = hw as i64;
                if from - hw < first || to + hw > w.last() {
                    return Err(ObservableError::WindowTooSmall {
                        first,
                        last: w.last(),
                        center: if from - hw < first { from } else { to },
                    });
                }
                let width = (2 * hw + 1) as f64;
                let values = (from..=to)
                    .map(|k| {
                        let c = (k - first) as usize;
                        let sum: f64 = states[c - hw as usize..=c + hw as usize]
                            .iter()
                            .map(|&g| self.phi(g))
                            .sum();
                        sum / width
                    })
                    .collect();
                Ok(Series {
                    values,
                    truncation_bound: 0.0,
                })
            }
            Kind::Geometric(xi) => {
                if from < first || to > w.last() {
                    return Err(ObservableError::OutOfWindow(if from < first { from } else { to }));
                }
                let (a, b) = ((from - first) as usize, (to - first) as usize);
                // B_k = φ_k + ξ^{1[k ∈ G0]} B_{k-1}
                let mut backward = vec![0.0; b - a + 1];
                let mut back_visits = vec![0i32; b - a + 1];
                let (mut acc, mut visits) = (0.0, 0i32);
                for (i, &g) in states[..=b].iter().enumerate() {
                    if g.in_base() {
                        acc *= xi;
                        visits += 1;
                    }
                    acc += self.phi(g);
                    if i >= a {
                        backward[i - a] = acc;
                        back_visits[i - a] = visits;
                    }
                }
                // F_k = ξ^{1[k+1 ∈ G0]} (φ_{k+1} + F_{k+1})
                let mut values = vec![0.0; b - a + 1];
                let mut bound = 0.0_f64;
                let (mut acc, mut visits) = (0.0, 0i32);
                for i in (a..states.len()).rev() {
                    if i <= b {
                        values[i - a] = backward[i - a] + acc;
                        bound = bound.max(self.geometric_tail(xi, back_visits[i - a], visits));
                    }
                    let g = states[i];
                    acc += self.phi(g);
                    if g.in_base() {
                        acc *= xi;
                        visits += 1;
                    }
                }
                Ok(Series {
                    values,
                    truncation_bound: bound,
                })
            }
        }
    }
}

/// States per block of [`stationary_series`].
pub const SERIES_BLOCK: usize = 1 << 16;

/// `X_0..X_{n-1}` along one stationary path, handed to `sink` block by
/// block. Every block is evaluated with at least `margin` extra states on
/// each side (more if a finite window needs them); returns the largest
/// truncation bound met.
pub fn stationary_series(
    obs: &Observable,
    spec: &TowerSpec,
    n: u64,
    margin: u64,
    stream: &mut InnovationStream,
    mut sink: impl FnMut(&[f64]),
) -> Result<f64, ObservableError> {
    if n == 0 {
        return Err(ChainError::ZeroLength.into());
    }
    let m = match obs.reach() {
        Some((back, fwd)) => margin.max(back).max(fwd),
        None => margin,
    } as i64;
    let mut g = sample_stationary(spec, &mut stream.fork(lanes::START));
    let mut states = vec![g];
    let mut innovations = vec![chain::next_innovation(spec, stream)];
    let mut first = -m;
    let mut produced = 0i64;
    let mut bound = 0.0_f64;
    while (produced as u64) < n {
        let len = (SERIES_BLOCK as u64).min(n - produced as u64) as i64;
        let to = produced + len - 1;
        while first + (states.len() as i64) <= to + m {
            let eps = chain::next_innovation(spec, stream);
            g = advance(spec, g, eps);
            states.push(g);
            innovations.push(eps);
        }
        let w = TrajectoryWindow::new(first, produced, states.clone(), innovations.clone())?;
        let s = obs.series(&w, produced, to)?;
        bound = bound.max(s.truncation_bound);
        sink(&s.values);
        produced = to + 1;
        let drop = (produced - m - first) as usize;
        states.drain(..drop);
        innovations.drain(..drop);
        first += drop as i64;
    }
    Ok(bound)
}

/// Replicates per parallel work item of [`sum_replicates`].
pub const SUM_CHUNK: u64 = 16;

/// `S_n - n·E[X]` for `replicates` independent stationary paths; replicate
/// `i` uses stream `(seed, i)`.
pub fn sum_replicates(
    obs: &Observable,
    spec: &TowerSpec,
    n: u64,
    margin: u64,
    replicates: u64,
    seed: u64,
) -> Result<Vec<f64>, ObservableError> {
    if replicates == 0 {
        return Err(ObservableError::ZeroReplicates);
    }
    let mean = obs.stationary_mean(spec);
    let chunks = replicates.div_ceil(SUM_CHUNK);
    let parts: Vec<Result<Vec<f64>, ObservableError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            (c * SUM_CHUNK..((c + 1) * SUM_CHUNK).min(replicates))
                .map(|i| {
                    let mut total = 0.0;
                    stationary_series(obs, spec, n, margin, &mut InnovationStream::new(seed, i), |xs| {
                        total += xs.iter().map(|x| x - mean).sum::<f64>()
                    })?;
                    Ok(total)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(replicates as usize);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// `ψ(σ^{center} g)` with its truncation bound.
pub fn eval_psi(obs: &Observable, w: &TrajectoryWindow) -> Result<Evaluation, ObservableError> {
    obs.eval(w, w.center())
}

fn offset(w: &TrajectoryWindow, index: i64) -> Result<usize, ObservableError> {
    if index < w.first() || index > w.last() {
        return Err(ObservableError::OutOfWindow(index));
    }
    Ok((index - w.first()) as usize)
}

/// Keeps `g_i` for `i <= k + m` and regenerates every later state from
/// fresh innovations drawn sequentially from `stream`.
pub fn refresh_future(
    spec: &TowerSpec,
    w: &TrajectoryWindow,
    k: i64,
    m: u64,
    stream: &mut InnovationStream,
) -> Result<TrajectoryWindow, ObservableError> {
    offset(w, k)?;
    let pivot = k + m as i64;
    if pivot >= w.last() {
        return Ok(w.clone());
    }
    let p = (pivot - w.first()) as usize;
    let mut states = w.states().to_vec();
    let mut innovations = w.innovations().to_vec();
    for i in p + 1..states.len() {
        let eps = chain::next_innovation(spec, stream);
        innovations[i] = eps;
        states[i] = advance(spec, states[i - 1], eps);
    }
    Ok(TrajectoryWindow::new(w.first(), w.center(), states, innovations)?)
}

/// Replaces everything before `k - m` by an independent stationary path
/// and re-evolves the later states through the recorded innovations.
pub fn refresh_past(
    spec: &TowerSpec,
    w: &TrajectoryWindow,
    k: i64,
    m: u64,
    stream: &mut InnovationStream,
) -> Result<TrajectoryWindow, ObservableError> {
    offset(w, k)?;
    let pivot = k - m as i64;
    if pivot <= w.first() {
        return Ok(w.clone());
    }
    let p = (pivot - w.first()) as usize;
    let mut states = w.states().to_vec();
    let mut innovations = w.innovations().to_vec();
    states[0] = sample_stationary(spec, stream);
    for i in 1..states.len() {
        if i < p {
            innovations[i] = chain::next_innovation(spec, stream);
        }
        states[i] = advance(spec, states[i - 1], innovations[i]);
    }
    Ok(TrajectoryWindow::new(w.first(), w.center(), states, innovations)?)
}

/// Monte Carlo estimate with a certified truncation bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ApproxEstimate {
    pub value: f64,
    /// Total error reported for the estimate (`outer_se + inner_se`).
    pub mc_error: f64,
    /// Standard error across outer replicates.
    pub outer_se: f64,
    /// Mean standard error within outer replicates.
    pub inner_se: f64,
    /// Mean truncation bound of the evaluations averaged.
    pub truncation_bound: f64,
}

/// Welford accumulator; `merge` uses the pairwise update so partial
/// results combine in a fixed order.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    fn mean(&self) -> f64 {
        self.mean
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean; zero for a single value.
    fn se(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Reusable buffers for replicated refresh-and-evaluate loops.
struct Scratch {
    past: Vec<ChainState>,
    future: Vec<ChainState>,
}

impl Scratch {
    fn new(len: usize) -> Self {
        Self {
            past: Vec::with_capacity(len),
            future: Vec::with_capacity(len),
        }
    }

    /// Fills `past` with a fresh stationary prefix of length `p`, then
    /// evolves through `innovations` up to index `q`.
    fn resample_past(
        &mut self,
        spec: &TowerSpec,
        base: &[ChainState],
        innovations: &[u32],
        p: usize,
        q: usize,
        stream: &mut InnovationStream,
    ) {
        self.past.clear();
        if p == 0 {
            self.past.extend_from_slice(&base[..=q]);
            return;
        }
        let mut g = sample_stationary(spec, stream);
        self.past.push(g);
        for (i, &eps) in innovations.iter().enumerate().take(q + 1).skip(1) {
            let e = if i < p { chain::next_innovation(spec, stream) } else { eps };
            g = advance(spec, g, e);
            self.past.push(g);
        }
    }

    /// Copies `past[..=q]` into `future` and extends it to `len` states with
    /// fresh innovations.
    fn refresh_future(&mut self, spec: &TowerSpec, q: usize, len: usize, stream: &mut InnovationStream) {
        self.future.clear();
        self.future.extend_from_slice(&self.past[..=q]);
        let mut g = self.future[q];
        for _ in q + 1..len {
            g = advance(spec, g, chain::next_innovation(spec, stream));
            self.future.push(g);
        }
    }
}

/// `X_{m,k}`: mean of `ψ(σ^k g̃)` over `replicates` independent refreshes
/// of the future after `k + m`.
pub fn estimate_xmk(
    obs: &Observable,
    spec: &TowerSpec,
    w: &TrajectoryWindow,
    k: i64,
    m: u64,
    replicates: u32,
    stream: &mut InnovationStream,
) -> Result<ApproxEstimate, ObservableError> {
    if replicates == 0 {
        return Err(ObservableError::ZeroReplicates);
    }
    offset(w, k)?;
    let q = ((k + m as i64).min(w.last()) - w.first()) as usize;
    let mut scratch = Scratch::new(w.len());
    scratch.past.extend_from_slice(w.states());
    let mut acc = Moments::default();
    let mut bound = 0.0_f64;
    for _ in 0..replicates {
        scratch.refresh_future(spec, q, w.len(), stream);
        let e = obs.eval_states(&scratch.future, w.first(), k)?;
        acc.push(e.value);
        bound += e.truncation_bound;
    }
    let bound = bound / replicates as f64;
    let se = acc.se();
    Ok(ApproxEstimate {
        value: acc.mean(),
        mc_error: se,
        outer_se: se,
        inner_se: 0.0,
        truncation_bound: bound,
    })
}

/// `X̃_{m,k} = E(X_{m,k} | ε_{k-m..=k+m})`: the outer loop draws independent
/// stationary pasts before `k - m` (on the `REFRESH_PAST` lane of
/// `stream`), the inner loop refreshes the future after `k + m` (on the
/// `REFRESH_FUTURE` lane).
#[allow(clippy::too_many_arguments)]
pub fn estimate_tilde_xmk(
    obs: &Observable,
    spec: &TowerSpec,
    w: &TrajectoryWindow,
    k: i64,
    m: u64,
    outer: u32,
    inner: u32,
    stream: &InnovationStream,
) -> Result<ApproxEstimate, ObservableError> {
    if outer == 0 || inner == 0 {
        return Err(ObservableError::ZeroReplicates);
    }
    offset(w, k)?;
    let first = w.first();
    let p = ((k - m as i64).max(first) - first) as usize;
    let q = ((k + m as i64).min(w.last()) - first) as usize;
    let mut past_stream = stream.fork(lanes::REFRESH_PAST);
    let mut future_stream = stream.fork(lanes::REFRESH_FUTURE);
    let mut scratch = Scratch::new(w.len());
    let mut outer_acc = Moments::default();
    let mut inner_se = 0.0;
    let mut bound = 0.0_f64;
    for _ in 0..outer {
        scratch.resample_past(spec, w.states(), w.innovations(), p, q, &mut past_stream);
        let mut inner_acc = Moments::default();
        for _ in 0..inner {
            scratch.refresh_future(spec, q, w.len(), &mut future_stream);
            let e = obs.eval_states(&scratch.future, first, k)?;
            inner_acc.push(e.value);
            bound += e.truncation_bound;
        }
        inner_se += inner_acc.se();
        outer_acc.push(inner_acc.mean());
    }
    let inner_se = inner_se / outer as f64;
    let outer_se = outer_acc.se();
    let bound = bound / (outer as f64 * inner as f64);
    Ok(ApproxEstimate {
        value: outer_acc.mean(),
        mc_error: outer_se + inner_se,
        outer_se,
        inner_se,
        truncation_bound: bound,
    })
}

/// Settings for [`approx_decay_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub ms: Vec<u64>,
    /// Stationary trajectories, one per stream id.
    pub samples: u64,
    pub outer: u32,
    pub inner: u32,
    /// Extra indices kept beyond `max(ms)` on each side of the center.
    pub margin: u64,
    /// Comparator `m^{-r/2} + P̂(T >= ⌊m/r⌋)`.
    pub r: f64,
    /// Coupled runs used for `P̂(T >= n)`.
    pub meeting_runs: u64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayRow {
    pub m: u64,
    /// Mean of `|X̃_{m,0} - X_0|` over the samples.
    pub estimate: f64,
    pub mc_error: f64,
    /// Mean nested Monte Carlo error of the individual `X̃` estimates.
    pub nested_error: f64,
    /// Mean over samples of the truncation bounds of `X_0` and `X̃_{m,0}`,
    /// which bounds the bias of `estimate` from finite windows.
    pub truncation_bound: f64,
    pub meeting_survival: f64,
    pub comparator: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayCurve {
    pub rows: Vec<DecayRow>,
    pub meeting: TailHistogram,
}

impl DecayCurve {
    /// `m,estimate,mc_error,comparator,ratio,nested_error,truncation_bound,meeting_survival`.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out =
            String::from("m,estimate,mc_error,comparator,ratio,nested_error,truncation_bound,meeting_survival\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.m,
                r.estimate,
                r.mc_error,
                r.comparator,
                r.ratio,
                r.nested_error,
                r.truncation_bound,
                r.meeting_survival
            );
        }
        out
    }
}

/// Stream-id offset separating the meeting-time replicates from the
/// trajectory samples.
const MEETING_STREAM_SALT: u64 = 0x6d65_6574_696e_6700;

/// Samples per parallel work item.
const DECAY_CHUNK: u64 = 64;

/// `E|X̃_{m,0} - X_0|` for each `m`, against `m^{-r/2} + P̂(T >= ⌊m/r⌋)`.
pub fn approx_decay_experiment(
    obs: &Observable,
    spec: &TowerSpec,
    cfg: &DecayConfig,
) -> Result<DecayCurve, ObservableError> {
    if cfg.ms.is_empty() || cfg.ms.contains(&0) {
        return Err(ObservableError::BadOrders);
    }
    if !(cfg.r > 0.0 && cfg.r.is_finite()) {
        return Err(ObservableError::BadRate(cfg.r));
    }
    if cfg.samples == 0 || cfg.outer == 0 || cfg.inner == 0 || cfg.meeting_runs == 0 {
        return Err(ObservableError::ZeroReplicates);
    }
    chain::ensure_aperiodic(spec)?;
    let m_max = *cfg.ms.iter().max().unwrap();
    let radius = m_max + cfg.margin;
    let len = (2 * radius + 1) as usize;
    let nm = cfg.ms.len();

    struct Acc {
        diff: Vec<Moments>,
        nested: Vec<f64>,
        bound: Vec<f64>,
    }

    let chunks = cfg.samples.div_ceil(DECAY_CHUNK);
    let parts: Vec<Result<Acc, ObservableError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Acc {
                diff: (0..nm).map(|_| Moments::default()).collect(),
                nested: vec![0.0; nm],
                bound: vec![0.0; nm],
            };
            for i in c * DECAY_CHUNK..((c + 1) * DECAY_CHUNK).min(cfg.samples) {
                let stream = InnovationStream::new(cfg.seed, i);
                let path = chain::simulate(spec, len, &mut stream.clone(), Start::Stationary)?;
                let w = TrajectoryWindow::new(
                    -(radius as i64),
                    0,
                    path.states().to_vec(),
                    path.innovations().to_vec(),
                )?;
                let x = obs.eval(&w, 0)?;
                let approx = stream.fork(lanes::APPROX);
                for (j, &m) in cfg.ms.iter().enumerate() {
                    // only `m + margin` indices on each side enter the estimate
                    let r = (m + cfg.margin) as usize;
                    let span = radius as usize - r..=radius as usize + r;
                    let sub = TrajectoryWindow::new(
                        -(r as i64),
                        0,
                        w.states()[span.clone()].to_vec(),
                        w.innovations()[span].to_vec(),
                    )?;
                    let e = estimate_tilde_xmk(obs, spec, &sub, 0, m, cfg.outer, cfg.inner, &approx.fork(j as u64))?;
                    acc.diff[j].push((e.value - x.value).abs());
                    acc.nested[j] += e.mc_error;
                    acc.bound[j] += e.truncation_bound + x.truncation_bound;
                }
            }
            Ok(acc)
        })
        .collect();

    let mut diff: Vec<Moments> = (0..nm).map(|_| Moments::default()).collect();
    let mut nested = vec![0.0; nm];
    let mut bound = vec![0.0; nm];
    for part in parts {
        let part = part?;
        for j in 0..nm {
            diff[j].merge(&part.diff[j]);
            nested[j] += part.nested[j];
            bound[j] += part.bound[j];
        }
    }

    let meeting_cap = ((m_max as f64 / cfg.r).floor() as u64).max(1);
    let meeting = meeting_tail_experiment(spec, cfg.meeting_runs, meeting_cap, cfg.seed ^ MEETING_STREAM_SALT)?;
    let rows = cfg
        .ms
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let survival = meeting.histogram.survival((m as f64 / cfg.r).floor() as u64);
            let comparator = (m as f64).powf(-cfg.r / 2.0) + survival;
            let estimate = diff[j].mean();
            DecayRow {
                m,
                estimate,
                mc_error: diff[j].se(),
                nested_error: nested[j] / cfg.samples as f64,
                truncation_bound: bound[j] / cfg.samples as f64,
                meeting_survival: survival,
                comparator,
                ratio: estimate / comparator,
            }
        })
        .collect();
    Ok(DecayCurve {
        rows,
        meeting: meeting.histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tower::fixtures::{spec, two_symbol};
    use crate::tower::separation_time;
    use proptest::prelude::*;

    fn st(symbol: u32, level: u32) -> ChainState {
        ChainState::new(symbol, level)
    }

    fn window(states: Vec<ChainState>, first: i64) -> TrajectoryWindow {
        let n = states.len();
        TrajectoryWindow::new(first, 0, states, vec![0; n]).unwrap()
    }

    fn stationary_window(s: &TowerSpec, radius: i64, seed: u64, id: u64) -> TrajectoryWindow {
        let path = chain::simulate(
            s,
            (2 * radius + 1) as usize,
            &mut InnovationStream::new(seed, id),
            Start::Stationary,
        )
        .unwrap();
        TrajectoryWindow::new(-radius, 0, path.states().to_vec(), path.innovations().to_vec()).unwrap()
    }

    #[test]
    fn zero_function_is_zero() {
        let s = two_symbol();
        for shape in [Shape::FiniteWindow { half_width: 1 }, Shape::GeometricWeights { xi: None }] {
            let spec_ = ObservableSpec {
                function: StateFunction::Zero,
                shape,
                scale: 1.0,
                coboundary: false,
            };
            let obs = Observable::new(&spec_, &s).unwrap();
            let w = stationary_window(&s, 5, 1, 0);
            let e = eval_psi(&obs, &w).unwrap();
            assert_eq!(e.value, 0.0);
            assert_eq!(e.truncation_bound, 0.0);
        }
    }

    #[test]
    fn width_zero_level_reads_center() {
        let s = spec(&[(0.5, 1), (0.5, 4)], 0.5);
        let obs = Observable::new(&ObservableSpec::finite(StateFunction::Level, 0), &s).unwrap();
        let w = window(vec![st(1, 1), st(1, 2), st(1, 3)], -1);
        assert_eq!(eval_psi(&obs, &w).unwrap().value, 2.0);
        assert_eq!(obs.sup_norm(), 3.0);
    }

    #[test]
    fn finite_window_needs_room() {
        let s = two_symbol();
        let obs = Observable::new(&ObservableSpec::finite(StateFunction::Level, 2), &s).unwrap();
        let w = window(vec![st(1, 0), st(1, 1), st(0, 0)], -1);
        assert!(matches!(eval_psi(&obs, &w), Err(ObservableError::WindowTooSmall { .. })));
    }

    #[test]
    fn geometric_matches_brute_force_sum() {
        // 9 states, center at index 0 = position 4
        let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 3)], 0.5);
        let states = vec![
            st(2, 1),
            st(2, 2),
            st(0, 0),
            st(1, 0),
            st(1, 1),
            st(2, 0),
            st(2, 1),
            st(2, 2),
            st(0, 0),
        ];
        let w = window(states.clone(), -4);
        let obs = Observable::new(&ObservableSpec::geometric(StateFunction::BaseIndicator, Some(0.5)), &s).unwrap();
        let mut want = 0.0;
        for (idx, g) in states.iter().enumerate() {
            let j = idx as i64 - 4;
            let n0 = if j <= 0 {
                (j + 1..=0).filter(|&i| states[(i + 4) as usize].in_base()).count()
            } else {
                (1..=j).filter(|&i| states[(i + 4) as usize].in_base()).count()
            };
            if g.in_base() {
                want += 0.5f64.powi(n0 as i32);
            }
        }
        // base visits at -2, -1, 1, 4: weights 1, 1/2 (back), 1/2, 1/4 (fwd)
        assert!((want - 2.25).abs() < 1e-15);
        let e = eval_psi(&obs, &w).unwrap();
        assert!((e.value - want).abs() < 1e-15);
        // 2 back visits, 2 forward visits
        assert!((e.truncation_bound - (0.25 + 0.125) / 0.5).abs() < 1e-15);
    }

    #[test]
    fn geometric_rejects_functions_off_the_base() {
        let s = two_symbol();
        assert_eq!(
            Observable::new(&ObservableSpec::geometric(StateFunction::Level, None), &s).unwrap_err(),
            ObservableError::NotSupportedOnBase
        );
        assert!(matches!(
            Observable::new(&ObservableSpec::geometric(StateFunction::BaseIndicator, Some(0.9)), &s),
            Err(ObservableError::WeightBase { .. })
        ));
    }

    #[test]
    fn series_agrees_with_pointwise_evaluation() {
        let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 5)], 0.6);
        let w = stationary_window(&s, 60, 3, 1);
        let marks = StateFunction::RefreshMark {
            values: vec![1.0, -2.0, 0.5],
            centered: true,
        };
        for spec_ in [
            ObservableSpec::geometric(marks.clone(), Some(0.5)),
            ObservableSpec::finite(StateFunction::Level, 3),
            ObservableSpec {
                coboundary: true,
                ..ObservableSpec::finite(StateFunction::Level, 0)
            },
            ObservableSpec {
                coboundary: true,
                ..ObservableSpec::geometric(marks.clone(), None)
            },
        ] {
            let obs = Observable::new(&spec_, &s).unwrap();
            let series = obs.series(&w, -20, 20).unwrap();
            for (i, k) in (-20..=20).enumerate() {
                let e = obs.eval(&w, k).unwrap();
                assert!((series.values[i] - e.value).abs() < 1e-12, "{spec_:?} at {k}");
                assert!(e.truncation_bound <= series.truncation_bound + 1e-15);
            }
        }
    }

    #[test]
    fn centered_functions_have_mean_zero() {
        let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 5)], 0.6);
        for f in [
            StateFunction::CenteredBase,
            StateFunction::RefreshMark {
                values: vec![1.0, -2.0, 0.5],
                centered: true,
            },
        ] {
            let obs = Observable::new(&ObservableSpec::finite(f, 0), &s).unwrap();
            assert!(obs.phi_mean(&s).abs() < 1e-15);
        }
    }

    #[test]
    fn streamed_series_matches_one_window() {
        let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 5)], 0.6);
        let marks = StateFunction::RefreshMark {
            values: vec![1.0, -2.0, 0.5],
            centered: true,
        };
        let n = SERIES_BLOCK as u64 * 2 + 123;
        let m = 40u64;
        let whole = chain::simulate(&s, (n + 2 * m) as usize, &mut InnovationStream::new(4, 2), Start::Stationary).unwrap();
        for spec_ in [
            ObservableSpec::finite(StateFunction::Level, 3),
            ObservableSpec {
                coboundary: true,
                ..ObservableSpec::finite(StateFunction::Level, 0)
            },
            ObservableSpec::geometric(marks.clone(), Some(0.5)),
        ] {
            let obs = Observable::new(&spec_, &s).unwrap();
            let mut got = Vec::new();
            let bound = stationary_series(&obs, &s, n, m, &mut InnovationStream::new(4, 2), |xs| got.extend_from_slice(xs))
                .unwrap();
            let want = obs.series(&whole, m as i64, (n + m - 1) as i64).unwrap();
            assert_eq!(got.len(), want.values.len());
            let tol = bound + want.truncation_bound + 1e-12;
            for (a, b) in got.iter().zip(&want.values) {
                assert!((a - b).abs() <= tol, "{spec_:?}: {a} vs {b}");
            }
            if obs.reach().is_some() {
                assert_eq!(got, want.values);
            }
        }
    }

    #[test]
    fn stationary_mean_matches_closed_forms_and_simulation() {
        let unit = spec(&[(0.25, 1), (0.75, 1)], 0.5);
        let f = StateFunction::RefreshMark {
            values: vec![2.0, 1.0],
            centered: false,
        };
        let obs = Observable::new(&ObservableSpec::geometric(f, Some(0.5)), &unit).unwrap();
        // every index is a visit: E f · (1 + 2ξ/(1-ξ)) = 1.25 · 3
        assert!((obs.stationary_mean(&unit) - 3.75).abs() < 1e-12);

        let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 5)], 0.6);
        let marks = StateFunction::RefreshMark {
            values: vec![1.0, -2.0, 0.5],
            centered: true,
        };
        let obs = Observable::new(&ObservableSpec::geometric(marks, Some(0.5)), &s).unwrap();
        let exact = obs.stationary_mean(&s);
        // marks already have P-mean 0, so only E[f h]/E[h] remains
        assert!((exact - (0.5 * 1.0 - 0.3 * 2.0 * 2.0 + 0.2 * 0.5 * 5.0) / 2.1).abs() < 1e-12, "{exact}");
        let sums = sum_replicates(&obs, &s, 20_000, 60, 64, 3).unwrap();
        let n = 20_000.0 * 64.0;
        let mean_dev = sums.iter().sum::<f64>() / n;
        let sd = (sums.iter().map(|x| x * x).sum::<f64>() / 64.0).sqrt() / 20_000.0 / 8.0;
        assert!(mean_dev.abs() < 4.0 * sd, "{mean_dev} vs sd {sd}");
    }

    #[test]
    fn lipschitz_certificate_on_sampled_pairs() {
        let s = spec(&[(0.45, 1), (0.3, 2), (0.25, 4)], 0.5);
        let marks = StateFunction::RefreshMark {
            values: vec![1.0, -1.0, 0.25],
            centered: true,
        };
        let specs = [
            ObservableSpec::geometric(marks.clone(), None),
            ObservableSpec::geometric(marks, Some(0.3)),
            ObservableSpec::finite(StateFunction::Level, 2),
            ObservableSpec {
                coboundary: true,
                ..ObservableSpec::finite(StateFunction::Level, 1)
            },
        ];
        let radius = 25;
        for (n, spec_) in specs.iter().enumerate() {
            let obs = Observable::new(spec_, &s).unwrap();
            for id in 0..2500u64 {
                let a = stationary_window(&s, radius, 100 + n as u64, id);
                // perturb the innovations on one side, or both
                let mut stream = InnovationStream::new(7, id);
                let cut = (id % 9) as i64 - 4;
                let b = match id % 3 {
                    0 => refresh_future(&s, &a, cut, id % 5, &mut stream).unwrap(),
                    1 => refresh_past(&s, &a, cut, id % 5, &mut stream).unwrap(),
                    _ => {
                        let p = refresh_past(&s, &a, 0, id % 4, &mut stream).unwrap();
                        refresh_future(&s, &p, 0, id % 6, &mut stream).unwrap()
                    }
                };
                let (ea, eb) = (obs.eval(&a, 0).unwrap(), obs.eval(&b, 0).unwrap());
                let sep = separation_time(&a, &b).unwrap();
                let allowed = obs.lipschitz() * s.xi().powi(sep.value as i32) + ea.truncation_bound + eb.truncation_bound;
                assert!(
                    (ea.value - eb.value).abs() <= allowed + 1e-12,
                    "{spec_:?}: {} > {allowed}",
                    (ea.value - eb.value).abs()
                );
            }
        }
    }

    #[test]
    fn refresh_future_leaves_long_horizons_alone() {
        let s = spec(&[(0.5, 1), (0.5, 3)], 0.5);
        let w = stationary_window(&s, 10, 2, 0);
        let mut stream = InnovationStream::new(0, 0);
        assert_eq!(refresh_future(&s, &w, 0, 10, &mut stream).unwrap(), w);
        assert_eq!(refresh_past(&s, &w, 0, 10, &mut stream).unwrap(), w);
        assert!(refresh_future(&s, &w, 11, 0, &mut stream).is_err());
    }

    #[test]
    fn refresh_future_on_unit_roofs_unrolls_the_stream() {
        let s = spec(&[(0.25, 1), (0.25, 1), (0.5, 1)], 0.5);
        let w = stationary_window(&s, 6, 5, 0);
        let fresh = InnovationStream::new(99, 3);
        let out = refresh_future(&s, &w, 2, 0, &mut fresh.clone()).unwrap();
        let mut expect = fresh.clone();
        for i in -6..=6 {
            let g = out.state(i).unwrap();
            if i <= 2 {
                assert_eq!(g, w.state(i).unwrap());
            } else {
                let eps = expect.next_index(s.innovation_table()) as u32;
                assert_eq!(g, st(eps, 0));
            }
        }
        out.check_admissible(&s).unwrap();
        assert_eq!(out, refresh_future(&s, &w, 2, 0, &mut fresh.clone()).unwrap());
    }

    #[test]
    fn refreshed_windows_stay_admissible() {
        let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 7)], 0.5);
        for id in 0..50 {
            let w = stationary_window(&s, 15, 8, id);
            let mut stream = InnovationStream::new(1, id);
            refresh_future(&s, &w, -3, 2, &mut stream).unwrap().check_admissible(&s).unwrap();
            refresh_past(&s, &w, 4, 1, &mut stream).unwrap().check_admissible(&s).unwrap();
        }
    }

    #[test]
    fn xmk_is_exact_when_the_observable_sees_only_kept_states() {
        let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 7)], 0.5);
        let obs = Observable::new(&ObservableSpec::finite(StateFunction::Level, 2), &s).unwrap();
        let w = stationary_window(&s, 12, 4, 0);
        let e = estimate_xmk(&obs, &s, &w, 0, 2, 50, &mut InnovationStream::new(0, 1)).unwrap();
        assert!((e.value - obs.eval(&w, 0).unwrap().value).abs() < 1e-12);
        assert!(e.mc_error < 1e-12);
        let c = Observable::new(&ObservableSpec::finite(StateFunction::Constant { value: 2.5 }, 3), &s).unwrap();
        let e = estimate_xmk(&c, &s, &w, 0, 0, 20, &mut InnovationStream::new(0, 1)).unwrap();
        assert!((e.value - 2.5).abs() < 1e-15);
    }

    /// Exact `X_{2,0}` for a window of half-width 4: the two refreshed
    /// innovations at indices 3 and 4 are enumerated.
    #[test]
    fn xmk_matches_depth_two_enumeration() {
        let s = spec(&[(0.6, 1), (0.4, 2)], 0.5);
        let obs = Observable::new(&ObservableSpec::finite(StateFunction::BaseIndicator, 4), &s).unwrap();
        let w = stationary_window(&s, 4, 12, 0);
        let weights = [0.6, 0.4];
        let mut exact = 0.0;
        for e3 in 0..2u32 {
            for e4 in 0..2u32 {
                let mut states = w.states().to_vec();
                states[7] = advance(&s, states[6], e3);
                states[8] = advance(&s, states[7], e4);
                let v = obs.eval_states(&states, -4, 0).unwrap().value;
                exact += weights[e3 as usize] * weights[e4 as usize] * v;
            }
        }
        let est = estimate_xmk(&obs, &s, &w, 0, 2, 100_000, &mut InnovationStream::new(3, 3)).unwrap();
        assert!(est.mc_error > 0.0);
        assert!((est.value - exact).abs() <= 3.0 * est.mc_error, "{} vs {exact}", est.value);
    }

    /// Exact `X̃_{2,0}` on the two-symbol tower for a window of half-width 3:
    /// enumerate the state before the conditioning block under `ν` and the
    /// single refreshed innovation after it.
    #[test]
    fn tilde_xmk_matches_enumeration() {
        let s = two_symbol();
        let obs = Observable::new(&ObservableSpec::finite(StateFunction::Level, 3), &s).unwrap();
        let nu = s.nu_vector();
        let states: Vec<ChainState> = s.states().collect();
        for id in 0..4 {
            let w = stationary_window(&s, 3, 21, id);
            let eps = w.innovations().to_vec();
            let mut exact = 0.0;
            for (g, p) in states.iter().zip(&nu) {
                for e3 in 0..2u32 {
                    let mut path = vec![*g];
                    for &e in &eps[1..6] {
                        path.push(advance(&s, *path.last().unwrap(), e));
                    }
                    path.push(advance(&s, path[5], e3));
                    exact += p * 0.5 * obs.eval_states(&path, -3, 0).unwrap().value;
                }
            }
            let est = estimate_tilde_xmk(&obs, &s, &w, 0, 2, 4000, 8, &InnovationStream::new(5, id)).unwrap();
            assert!(
                (est.value - exact).abs() <= 3.0 * est.mc_error + 1e-12,
                "{} vs {exact} ± {}",
                est.value,
                est.mc_error
            );
        }
    }

    #[test]
    fn tilde_is_exact_for_unit_roofs_and_wide_conditioning() {
        let s = spec(&[(0.2, 1), (0.5, 1), (0.3, 1)], 0.5);
        let obs = Observable::new(
            &ObservableSpec::finite(
                StateFunction::RefreshMark {
                    values: vec![1.0, 4.0, -2.0],
                    centered: false,
                },
                2,
            ),
            &s,
        )
        .unwrap();
        for id in 0..20 {
            let w = stationary_window(&s, 8, 6, id);
            let x = obs.eval(&w, 0).unwrap().value;
            for m in 2..5 {
                let e = estimate_tilde_xmk(&obs, &s, &w, 0, m, 5, 3, &InnovationStream::new(0, id)).unwrap();
                assert!((e.value - x).abs() < 1e-12);
                assert!(e.mc_error < 1e-12);
            }
        }
    }

    #[test]
    fn tilde_can_differ_for_long_roofs_even_with_wide_conditioning() {
        // Fixing ε_{-m..=m} pins the states only after a synchronous refresh
        // of the true and resampled pasts, which bounded roofs do not force.
        let s = spec(&[(0.4, 1), (0.35, 2), (0.25, 3)], 0.5);
        let obs = Observable::new(&ObservableSpec::finite(StateFunction::Level, 1), &s).unwrap();
        let differs = (0..200).any(|id| {
            let w = stationary_window(&s, 8, 11, id);
            let x = obs.eval(&w, 0).unwrap().value;
            let e = estimate_tilde_xmk(&obs, &s, &w, 0, 3, 8, 1, &InnovationStream::new(3, id)).unwrap();
            (e.value - x).abs() > 1e-12
        });
        assert!(differs);
    }

    #[test]
    fn constant_observable_gives_constant_approximations() {
        let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 7)], 0.5);
        let obs = Observable::new(
            &ObservableSpec::finite(StateFunction::Constant { value: -1.5 }, 2).scaled(2.0),
            &s,
        )
        .unwrap();
        let w = stationary_window(&s, 9, 1, 1);
        let e = estimate_tilde_xmk(&obs, &s, &w, 0, 1, 3, 3, &InnovationStream::new(0, 0)).unwrap();
        assert!((e.value + 3.0).abs() < 1e-15);
    }

    #[test]
    fn tower_property_means_agree() {
        let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 5)], 0.5);
        let obs = Observable::new(
            &ObservableSpec::geometric(
                StateFunction::RefreshMark {
                    values: vec![1.0, -1.0, 2.0],
                    centered: false,
                },
                None,
            ),
            &s,
        )
        .unwrap();
        let (mut x, mut xm, mut xt) = (Moments::default(), Moments::default(), Moments::default());
        for id in 0..3000 {
            let w = stationary_window(&s, 40, 31, id);
            let stream = InnovationStream::new(32, id);
            x.push(obs.eval(&w, 0).unwrap().value);
            xm.push(estimate_xmk(&obs, &s, &w, 0, 2, 2, &mut stream.clone()).unwrap().value);
            xt.push(estimate_tilde_xmk(&obs, &s, &w, 0, 2, 2, 1, &stream).unwrap().value);
        }
        let tol = |a: &Moments, b: &Moments| 4.0 * (a.se().powi(2) + b.se().powi(2)).sqrt();
        assert!((x.mean() - xm.mean()).abs() <= tol(&x, &xm));
        assert!((x.mean() - xt.mean()).abs() <= tol(&x, &xt));
    }

    #[test]
    fn shifting_k_leaves_statistics_unchanged() {
        let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 5)], 0.5);
        let obs = Observable::new(&ObservableSpec::finite(StateFunction::Level, 1), &s).unwrap();
        let (mut a, mut b) = (Moments::default(), Moments::default());
        for id in 0..20_000 {
            let w = stationary_window(&s, 30, 40, id);
            a.push(obs.eval(&w, -10).unwrap().value);
            b.push(obs.eval(&w, 17).unwrap().value);
        }
        assert!((a.mean() - b.mean()).abs() <= 4.0 * (a.se().powi(2) + b.se().powi(2)).sqrt());
        assert!((a.variance() - b.variance()).abs() < 0.05 * a.variance());
    }

    #[test]
    fn decay_curve_vanishes_for_finite_windows_on_unit_roofs() {
        let s = spec(&[(0.4, 1), (0.35, 1), (0.25, 1)], 0.5);
        let marks = StateFunction::RefreshMark {
            values: vec![1.0, -1.0, 3.0],
            centered: false,
        };
        let obs = Observable::new(&ObservableSpec::finite(marks, 1), &s).unwrap();
        let cfg = DecayConfig {
            ms: vec![1, 4, 6],
            samples: 300,
            outer: 3,
            inner: 2,
            margin: 4,
            r: 2.0,
            meeting_runs: 1000,
            seed: 1,
        };
        let curve = approx_decay_experiment(&obs, &s, &cfg).unwrap();
        for row in &curve.rows {
            assert!(row.estimate < 1e-12);
            assert!(row.comparator > 0.0);
        }
        assert!(curve.to_csv().starts_with("m,estimate,mc_error,comparator,ratio"));
    }

    #[test]
    fn decay_experiment_is_independent_of_worker_count() {
        let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 7)], 0.5);
        let obs = Observable::new(
            &ObservableSpec::geometric(
                StateFunction::RefreshMark {
                    values: vec![1.0, -1.0],
                    centered: true,
                },
                None,
            ),
            &s,
        )
        .unwrap();
        let cfg = DecayConfig {
            ms: vec![2, 4],
            samples: 200,
            outer: 2,
            inner: 2,
            margin: 10,
            r: 2.0,
            meeting_runs: 500,
            seed: 4,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| approx_decay_experiment(&obs, &s, &cfg).unwrap().to_csv())
        };
        assert_eq!(run(1), run(4));
    }

    proptest! {
        #[test]
        fn geometric_value_is_bounded(id in 0u64..10_000, xi in 0.1f64..0.5) {
            let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 6)], 0.5);
            let obs = Observable::new(&ObservableSpec::geometric(StateFunction::BaseIndicator, Some(xi)), &s).unwrap();
            let w = stationary_window(&s, 20, 77, id);
            let e = eval_psi(&obs, &w).unwrap();
            prop_assert!(e.value.abs() <= obs.sup_norm() + 1e-12);
        }

        #[test]
        fn scaling_scales_values(id in 0u64..10_000, lambda in -3.0f64..3.0) {
            let s = spec(&[(0.5, 1), (0.3, 2), (0.2, 6)], 0.5);
            let base = ObservableSpec::finite(StateFunction::CenteredBase, 2);
            let a = Observable::new(&base, &s).unwrap();
            let b = Observable::new(&base.clone().scaled(lambda), &s).unwrap();
            let w = stationary_window(&s, 5, 78, id);
            let (x, y) = (a.eval(&w, 0).unwrap().value, b.eval(&w, 0).unwrap().value);
            prop_assert!((lambda * x - y).abs() <= 1e-12);
        }
    }
}
