//! One runner per experiment kind. Each produces a report body, CSV files
//! and named pass/fail checks; nothing here touches the filesystem except
//! reading tower files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use towerlab::chain::{base_frequency, exact_meeting_survival, meeting_tail_experiment, occupancy};
use towerlab::maps::{sample_return_tail, sample_returns, LsvParams, ReturnTailConfig};
use towerlab::observables::{approx_decay_experiment, stationary_series, DecayConfig, Observable};
use towerlab::stats::{
    autocovariance, green_kubo_variance, hill_estimator, lil_envelope_check, linear_fit, spearman,
    summarize_variance, tail_exponent_fit, usable_tail_points, verify_telescoping, make_coboundary,
    clt_experiment, CltConfig, CoboundarySpec, LongRunConfig, TailFit, TailFitConfig, MIN_SURVIVORS,
};
use towerlab::stream::InnovationStream;
use towerlab::tower::{build_tower_from_tail, TailSource, TowerSpec};

use crate::config::*;
use crate::output::{f, header, Report};
use crate::{derive_seed, CliError};

const SALT_TOWER: u64 = 1;
const SALT_BOOTSTRAP: u64 = 2;
const SALT_LONG_RUN: u64 = 3;
const SALT_LIL: u64 = 4;
const SALT_BASE: u64 = 5;

/// A named pass/fail verdict with the numbers behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    /// One line naming the property the run examines.
    pub description: &'static str,
    pub report: String,
    pub files: BTreeMap<String, String>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub fn build_tower(cfg: &TowerConfig, seed: u64) -> Result<TowerSpec, CliError> {
    match cfg {
        TowerConfig::Model { xi, tail } => build_tower_from_tail(TailSource::Model(tail), *xi).map_err(invalid),
        TowerConfig::Lsv { xi, alpha, returns, cap } => {
            let params = LsvParams::new(*alpha).map_err(invalid)?;
            let hist = sample_return_tail(&params, *returns, *cap, derive_seed(seed, SALT_TOWER)).map_err(runtime)?;
            build_tower_from_tail(TailSource::Empirical(&hist), *xi).map_err(runtime)
        }
        TowerConfig::File { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("tower.path {}: {e}", path.display())))?;
            TowerSpec::from_text(&text).map_err(invalid)
        }
    }
}

fn tower_report(r: &mut Report, spec: &TowerSpec) {
    r.kv("tower_symbols", spec.alphabet_len())
        .kv("tower_max_roof", spec.max_roof())
        .float("tower_mean_roof", spec.mean_roof())
        .float("tower_xi", spec.xi())
        .float("tower_truncated_mass", spec.truncated_mass());
}

/// The tower file is kept only when it is small and not reproducible from
/// the configuration alone.
fn keep_tower(files: &mut BTreeMap<String, String>, cfg: &TowerConfig, spec: &TowerSpec) {
    if matches!(cfg, TowerConfig::Lsv { .. }) {
        files.insert("tower.txt".into(), spec.to_text());
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let seed = cfg.seed;
    match &cfg.experiment {
        Experiment::ReturnTail(e) => return_tail(e, seed),
        Experiment::MeetingTail(e) => meeting_tail(e, seed),
        Experiment::ApproxDecay(e) => approx_decay(e, seed),
        Experiment::Clt(e) => clt(e, seed),
        Experiment::Coboundary(e) => coboundary(e, seed),
        Experiment::Stationarity(e) => stationarity(e, seed),
    }
}

fn fit_report(r: &mut Report, fit: &TailFit) {
    r.float("fit_slope", fit.slope)
        .float("fit_intercept", fit.intercept)
        .float("fit_r_squared", fit.r_squared)
        .float("fit_ci_low", fit.ci_low)
        .float("fit_ci_high", fit.ci_high)
        .float("fit_bootstrap_se", fit.bootstrap_se)
        .kv("fit_points", fit.points.len())
        .kv("fit_first_n", fit.points.first().map_or(0, |p| p.0))
        .kv("fit_last_n", fit.points.last().map_or(0, |p| p.0));
}

fn fit_csv(fit: &TailFit, what: &str) -> String {
    let mut out = header(&[
        &format!("Points of the least-squares fit of log {what} against log n"),
        "with the fitted line; only points with at least 100 survivors and n <= cap/4 enter.",
    ]);
    out.push_str("n,survivors,survival,fitted\n");
    for &(n, s) in &fit.points {
        let ln = (n as f64).ln();
        let _ = writeln!(
            out,
            "{n},{s},{},{}",
            f(s as f64 / fit.total as f64),
            f((fit.intercept + fit.slope * ln).exp())
        );
    }
    out
}

fn slope_check(name: &str, fit: &TailFit, check: &SlopeCheck) -> Check {
    let passed = (fit.slope - check.expected).abs() <= check.tolerance;
    Check::new(
        name,
        passed,
        format!(
            "slope {:.4} (95% CI [{:.4}, {:.4}]), required {} ± {}",
            fit.slope, fit.ci_low, fit.ci_high, check.expected, check.tolerance
        ),
    )
}

fn return_tail(e: &ReturnTailExperiment, seed: u64) -> Result<Outcome, CliError> {
    let params = LsvParams::new(e.alpha).map_err(invalid)?;
    let run = sample_returns(&params, &ReturnTailConfig::new(e.samples, e.cap, seed)).map_err(runtime)?;
    let h = &run.histogram;
    let fit_cfg = TailFitConfig {
        n_min: e.fit.n_min,
        n_max: e.fit.n_max,
        gamma: e.fit.gamma,
        bootstrap: e.fit.bootstrap,
        seed: derive_seed(seed, SALT_BOOTSTRAP),
    };
    let mut files = BTreeMap::new();
    let mut csv = header(&[
        "Empirical survival P(tau >= n) of the first return time to the inducing interval [1/2, 1]",
        "of the LSV map; its log-log slope estimates -1/alpha.",
        &format!("alpha = {}, samples = {}, cap = {}", e.alpha, e.samples, e.cap),
    ]);
    csv.push_str("n,survival,survivors\n");
    let survivors = h.survivor_counts();
    for n in 1..=e.cap {
        let s = survivors.get(n as usize).copied().unwrap_or(h.censored());
        if s == 0 {
            break;
        }
        let _ = writeln!(csv, "{n},{},{s}", f(s as f64 / h.total() as f64));
    }
    files.insert("return_tail.csv".into(), csv);

    let mut r = Report::default();
    r.kv("samples", h.total())
        .kv("censored", h.censored())
        .kv("orbit_steps", run.orbit_steps)
        .kv("restarts", run.restarts)
        .float("mean_return_uncensored", h.mean_uncensored());
    if let Ok(b) = hill_estimator(h, e.fit.n_min) {
        r.float("hill_exponent_diagnostic", b);
    }
    let mut checks = Vec::new();
    match tail_exponent_fit(h, &fit_cfg) {
        Ok(fit) => {
            fit_report(&mut r, &fit);
            files.insert("fit_points.csv".into(), fit_csv(&fit, "P(tau >= n)"));
            if let Some(c) = &e.slope {
                checks.push(slope_check("return-time tail slope", &fit, c));
            }
        }
        Err(err) => {
            r.kv("fit_error", &err);
            if e.slope.is_some() {
                checks.push(Check::new("return-time tail slope", false, err.to_string()));
            }
        }
    }
    Ok(Outcome {
        description: "Tail of the first return time of the LSV map to its inducing interval.",
        report: r.finish(),
        files,
        checks,
    })
}

fn meeting_tail(e: &MeetingTailExperiment, seed: u64) -> Result<Outcome, CliError> {
    let spec = build_tower(&e.tower, seed)?;
    let tail = meeting_tail_experiment(&spec, e.runs, e.cap, seed).map_err(invalid)?;
    let h = &tail.histogram;
    let mut files = BTreeMap::new();
    keep_tower(&mut files, &e.tower, &spec);
    let survivors = h.survivor_counts();
    let last = (0..=e.cap).take_while(|&n| survivors.get(n as usize).copied().unwrap_or(h.censored()) > 0);
    let ns: Vec<u64> = last.collect();
    let mut csv = header(&[
        "Survival P(T >= n) of the meeting time of two stationary tower chains driven by shared",
        "innovations, with the comparator E[(h - n)_+] that bounds it up to a constant.",
        &format!("runs = {}, cap = {}", e.runs, e.cap),
    ]);
    csv.push_str(&tail.to_csv(&ns));
    files.insert("meeting_tail.csv".into(), csv);

    let mut r = Report::default();
    tower_report(&mut r, &spec);
    r.kv("runs", h.total())
        .kv("censored", h.censored())
        .float("mean_meeting_time_uncensored", h.mean_uncensored());
    let mut checks = Vec::new();

    if let Some(window) = &e.fit {
        let fit_cfg = TailFitConfig {
            n_min: window.n_min,
            n_max: window.n_max,
            gamma: window.gamma,
            bootstrap: window.bootstrap,
            seed: derive_seed(seed, SALT_BOOTSTRAP),
        };
        match tail_exponent_fit(h, &fit_cfg) {
            Ok(fit) => {
                fit_report(&mut r, &fit);
                files.insert("fit_points.csv".into(), fit_csv(&fit, "P(T >= n)"));
                if let Some(c) = &e.slope {
                    checks.push(slope_check("meeting-time tail slope", &fit, c));
                }
            }
            Err(err) => {
                r.kv("fit_error", &err);
                if e.slope.is_some() {
                    checks.push(Check::new("meeting-time tail slope", false, err.to_string()));
                }
            }
        }
    }

    if let Some(t) = &e.trend {
        let points = usable_tail_points(h, t.n_min, e.cap / 4);
        let xs: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
        let ratios: Vec<f64> = points.iter().map(|p| tail.ratio(p.0)).collect();
        let mut csv = header(&[
            "Ratio of the meeting-time survival to E[(h - n)_+] on the trend-test grid;",
            "a bounded ratio without upward drift is what the comparator predicts.",
        ]);
        csv.push_str("n,ratio,survivors\n");
        for (p, q) in points.iter().zip(&ratios) {
            let _ = writeln!(csv, "{},{},{}", p.0, f(*q), p.1);
        }
        files.insert("comparator_ratio.csv".into(), csv);
        let check = match spearman(&xs, &ratios) {
            Ok(rho) if points.len() >= 3 => {
                r.float("ratio_spearman", rho).kv("ratio_points", points.len());
                Check::new(
                    "comparator ratio trend",
                    rho <= t.max_spearman,
                    format!(
                        "Spearman {rho:.4} over {} points n in [{}, {}], required <= {}",
                        points.len(),
                        points[0].0,
                        points.last().unwrap().0,
                        t.max_spearman
                    ),
                )
            }
            _ => Check::new(
                "comparator ratio trend",
                false,
                format!("only {} usable points", points.len()),
            ),
        };
        checks.push(check);
    }

    if let Some(x) = &e.exponential {
        let points: Vec<u64> = (1..=e.cap).filter(|&n| h.survivors(n) >= MIN_SURVIVORS).collect();
        let xs: Vec<f64> = points.iter().map(|&n| n as f64).collect();
        let ys: Vec<f64> = points.iter().map(|&n| h.survival(n).ln()).collect();
        checks.push(match linear_fit(&xs, &ys) {
            Ok((slope, _, r2)) => {
                r.float("log_survival_slope", slope).float("log_survival_r_squared", r2);
                Check::new(
                    "exponential meeting tail linearity",
                    r2 > x.min_r_squared,
                    format!(
                        "R^2 {r2:.5} of log survival vs n over n in [1, {}], slope {slope:.4}, required > {}",
                        points.last().copied().unwrap_or(0),
                        x.min_r_squared
                    ),
                )
            }
            Err(err) => Check::new("exponential meeting tail linearity", false, err.to_string()),
        });
        let exact = exact_meeting_survival(&spec, x.exact_up_to, x.pair_limit).map_err(invalid)?;
        let mut csv = header(&[
            "Meeting-time survival computed exactly by propagating the product chain on unequal",
            "pairs, against the Monte Carlo estimate and its binomial standard error.",
        ]);
        csv.push_str("n,exact,empirical,sigma,z\n");
        let runs = h.total() as f64;
        let mut worst = 0.0_f64;
        let mut ok = true;
        for (n, &p) in exact.iter().enumerate().skip(1) {
            let q = h.survival(n as u64);
            let sigma = (p * (1.0 - p) / runs).sqrt();
            let z = if sigma > 0.0 {
                (q - p) / sigma
            } else if q == p {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z.abs());
            ok &= z.abs() <= x.sigmas;
            let _ = writeln!(csv, "{n},{},{},{},{}", f(p), f(q), f(sigma), f(z));
        }
        files.insert("exact_survival.csv".into(), csv);
        r.float("exact_max_abs_z", worst);
        checks.push(Check::new(
            "exact product-chain survival agreement",
            ok,
            format!("max |z| {worst:.3} for n in [1, {}], required <= {}", x.exact_up_to, x.sigmas),
        ));
    }

    Ok(Outcome {
        description: "Meeting time of the synchronous coupling of two stationary tower chains.",
        report: r.finish(),
        files,
        checks,
    })
}

fn approx_decay(e: &ApproxDecayExperiment, seed: u64) -> Result<Outcome, CliError> {
    let spec = build_tower(&e.tower, seed)?;
    let obs = Observable::new(&e.observable, &spec).map_err(invalid)?;
    let cfg = DecayConfig {
        ms: e.ms.clone(),
        samples: e.samples,
        outer: e.outer,
        inner: e.inner,
        margin: e.margin,
        r: e.r,
        meeting_runs: e.meeting_runs,
        seed,
    };
    let curve = approx_decay_experiment(&obs, &spec, &cfg).map_err(invalid)?;
    let mut files = BTreeMap::new();
    keep_tower(&mut files, &e.tower, &spec);
    let mut csv = header(&[
        "Mean distance E|X~_{m,0} - X_0| between the observable and its conditional expectation",
        "given the innovations within m of the origin, with the comparator m^{-r/2} + P(T >= m/r).",
    ]);
    csv.push_str(&curve.to_csv());
    files.insert("approx_decay.csv".into(), csv);

    let mut r = Report::default();
    tower_report(&mut r, &spec);
    r.float("observable_sup_norm", obs.sup_norm())
        .float("observable_lipschitz", obs.lipschitz())
        .kv("meeting_runs", curve.meeting.total());
    for row in &curve.rows {
        r.float(&format!("estimate_m{}", row.m), row.estimate)
            .float(&format!("mc_error_m{}", row.m), row.mc_error)
            .float(&format!("nested_error_m{}", row.m), row.nested_error)
            .float(&format!("ratio_m{}", row.m), row.ratio);
    }
    let mut checks = Vec::new();
    if let Some(c) = &e.check {
        let cal = curve.rows.iter().find(|row| row.m == c.calibrate_m).expect("validated");
        let constant = cal.ratio;
        r.float("calibrated_constant", constant);
        let mut detail = format!("C = {constant:.4} at m = {};", cal.m);
        let mut ok = true;
        for row in curve.rows.iter().filter(|row| row.m != c.calibrate_m) {
            let pass = row.estimate <= constant * row.comparator;
            ok &= pass;
            let _ = write!(detail, " m={}: {:.3e} vs {:.3e}", row.m, row.estimate, constant * row.comparator);
        }
        checks.push(Check::new("approximation error below calibrated comparator", ok, detail));
        let mut detail = String::new();
        let mut ok = true;
        for row in &curve.rows {
            let rel = row.mc_error / row.estimate;
            ok &= rel < c.max_relative_error;
            let _ = write!(detail, "m={}: {:.1}% ", row.m, 100.0 * rel);
        }
        let _ = write!(detail, "of the estimate, required < {}%", 100.0 * c.max_relative_error);
        checks.push(Check::new("approximation Monte Carlo error", ok, detail));
    }
    Ok(Outcome {
        description: "Decay of the error made by conditioning an observable on nearby innovations.",
        report: r.finish(),
        files,
        checks,
    })
}

fn abs_partial(cov: &[f64], k: usize) -> f64 {
    cov[..=k].iter().map(|g| g.abs()).sum()
}

fn clt(e: &CltExperiment, seed: u64) -> Result<Outcome, CliError> {
    let spec = build_tower(&e.tower, seed)?;
    let obs = Observable::new(&e.observable, &spec).map_err(invalid)?;
    let max_lag = e.cutoff.max(200);
    let cfg = CltConfig {
        sum_length: e.sum_length,
        replicates: e.replicates,
        long_run: LongRunConfig {
            segment_length: e.segment_length,
            segments: e.segments,
            max_lag,
            margin: e.margin,
            seed: derive_seed(seed, SALT_LONG_RUN),
        },
        cutoff: e.cutoff,
        seed,
    };
    let out = clt_experiment(&obs, &spec, &cfg).map_err(runtime)?;
    let rep = &out.report;
    let c2 = rep.variance.c_hat2;
    let mut files = BTreeMap::new();
    keep_tower(&mut files, &e.tower, &spec);
    let mut csv = header(&[
        "Biased autocovariances of X_k = psi(sigma^k g) along stationary tower paths, averaged over",
        "independent segments; their Green-Kubo sum estimates the limit variance of S_n / sqrt(n).",
    ]);
    csv.push_str(&rep.autocovariance_csv());
    files.insert("autocovariance.csv".into(), csv);
    let mut csv = header(&[
        "Centred Birkhoff sums (S_n - n E[X]) / sqrt(n) of independent stationary replicates,",
        "compared with a normal law of variance c^2 by the Kolmogorov-Smirnov distance.",
        &format!("n = {}", e.sum_length),
    ]);
    csv.push_str("replicate,scaled_sum\n");
    let root = (e.sum_length as f64).sqrt();
    for (i, s) in out.sums.iter().enumerate() {
        let _ = writeln!(csv, "{i},{}", f(s / root));
    }
    files.insert("sums.csv".into(), csv);

    let mut r = Report::default();
    tower_report(&mut r, &spec);
    r.float("observable_mean", obs.stationary_mean(&spec))
        .float("observable_sup_norm", obs.sup_norm())
        .raw(&rep.to_text())
        .float("sum_variance", out.sum_variance);
    let mut lil_series = Vec::with_capacity(e.sum_length.max(10_000) as usize);
    let mean = obs.stationary_mean(&spec);
    stationary_series(
        &obs,
        &spec,
        e.sum_length.max(10_000),
        e.margin,
        &mut InnovationStream::new(derive_seed(seed, SALT_LIL), 0),
        |xs| lil_series.extend(xs.iter().map(|x| x - mean)),
    )
    .map_err(runtime)?;
    if let Ok(l) = lil_envelope_check(&lil_series, c2) {
        r.float("lil_statistic_diagnostic", l);
    }
    let cov = &rep.autocovariances;
    let (a100, a200) = (abs_partial(cov, 100), abs_partial(cov, 200));
    let c50 = green_kubo_variance(cov, 50).map_err(runtime)?;
    let c200 = green_kubo_variance(cov, 200).map_err(runtime)?;
    r.float("abs_cov_sum_k100", a100).float("abs_cov_sum_k200", a200);

    let mut checks = Vec::new();
    if let Some(k) = &e.ks {
        checks.push(match rep.ks_distance {
            Some(d) => Check::new(
                "KS distance to normal",
                d < k.max_distance,
                format!(
                    "D = {d:.5} over {} replicates with c^2 = {c2:.5}, required < {}",
                    rep.ks_samples, k.max_distance
                ),
            ),
            None => Check::new(
                "KS distance to normal",
                false,
                format!("skipped: c^2 = {c2:.3e} is within 3 standard errors of zero"),
            ),
        });
    }
    if let Some(c) = &e.covariance {
        let inc = (a200 - a100) / a200;
        checks.push(Check::new(
            "covariance partial sums plateau",
            inc < c.max_increment,
            format!("increment from K=100 to K=200 is {:.3}% of the total, required < {}%", 100.0 * inc, 100.0 * c.max_increment),
        ));
        let spread = (c50 - c200).abs() / c200;
        checks.push(Check::new(
            "Green-Kubo cutoff stability",
            spread < c.max_cutoff_spread,
            format!(
                "c^2(50) = {c50:.5}, c^2(200) = {c200:.5}, relative gap {:.3}%, required < {}%",
                100.0 * spread,
                100.0 * c.max_cutoff_spread
            ),
        ));
        let gap = (out.sum_variance - c2).abs() / c2;
        checks.push(Check::new(
            "variance of sums matches Green-Kubo",
            gap < c.max_variance_gap,
            format!(
                "Var(S_n)/n = {:.5} at n = {}, c^2 = {c2:.5}, relative gap {:.3}%, required < {}%",
                out.sum_variance,
                e.sum_length,
                100.0 * gap,
                100.0 * c.max_variance_gap
            ),
        ));
    }
    Ok(Outcome {
        description: "Central limit behaviour and autocovariances of Birkhoff sums over a tower.",
        report: r.finish(),
        files,
        checks,
    })
}

fn coboundary(e: &CoboundaryExperiment, seed: u64) -> Result<Outcome, CliError> {
    let spec = build_tower(&e.tower, seed)?;
    let chi_obs = Observable::new(&e.chi, &spec).map_err(invalid)?;
    let v_spec = make_coboundary(&CoboundarySpec { chi: e.chi.clone() });
    let v_obs = Observable::new(&v_spec, &spec).map_err(invalid)?;
    // both series must come from the same path: equal margins, equal stream
    let margin = v_obs.reach().map_or(64, |(a, b)| a.max(b));
    let stream = InnovationStream::new(seed, 0);
    let mut chi = Vec::with_capacity(e.length as usize + 1);
    stationary_series(&chi_obs, &spec, e.length + 1, margin, &mut stream.clone(), |xs| {
        chi.extend_from_slice(xs)
    })
    .map_err(runtime)?;
    let mut v = Vec::with_capacity(e.length as usize);
    stationary_series(&v_obs, &spec, e.length, margin, &mut stream.clone(), |xs| v.extend_from_slice(xs))
        .map_err(runtime)?;
    let chi_sup = chi_obs.sup_norm();
    let tel = verify_telescoping(&chi, &v, chi_sup).map_err(runtime)?;
    let cov = autocovariance(&v, e.cutoff).map_err(runtime)?;
    let var = summarize_variance(&cov, e.cutoff, v.len() as u64).map_err(runtime)?;

    let mut files = BTreeMap::new();
    keep_tower(&mut files, &e.tower, &spec);
    let mut csv = header(&[
        "Birkhoff sums S_n of the coboundary v = chi o sigma - chi, which telescope to chi_n - chi_0",
        "and therefore stay within 2 sup|chi|; sampled on a geometric grid of n.",
    ]);
    csv.push_str("n,sum,chi_difference\n");
    let mut s = 0.0;
    let mut next = 1u64;
    for (i, x) in v.iter().enumerate() {
        s += x;
        let n = i as u64 + 1;
        if n == next || n == e.length {
            let _ = writeln!(csv, "{n},{},{}", f(s), f(chi[i + 1] - chi[0]));
            next = (next as f64 * 1.25).ceil() as u64;
        }
    }
    files.insert("partial_sums.csv".into(), csv);
    let mut csv = header(&["Biased autocovariances of the coboundary series; their Green-Kubo sum is close to zero."]);
    csv.push_str("lag,autocovariance\n");
    for (k, g) in cov.iter().enumerate() {
        let _ = writeln!(csv, "{k},{}", f(*g));
    }
    files.insert("autocovariance.csv".into(), csv);

    let mut r = Report::default();
    tower_report(&mut r, &spec);
    r.kv("length", e.length)
        .float("chi_sup_norm", chi_sup)
        .float("max_abs_sum", tel.max_abs_sum)
        .float("sum_bound", tel.bound)
        .float("max_identity_error", tel.max_identity_error)
        .float("identity_tolerance", tel.tolerance)
        .float("variance_of_v", cov[0])
        .float("c_hat2", var.c_hat2)
        .float("c_hat2_se", var.se)
        .kv("possible_zero_variance", var.possible_zero_variance);
    let checks = vec![
        Check::new(
            "coboundary sums bounded",
            tel.max_abs_sum <= tel.bound + 1e-9,
            format!("max |S_n| = {} for n <= {}, bound 2 sup|chi| = {}", tel.max_abs_sum, e.length, tel.bound),
        ),
        Check::new(
            "telescoping identity",
            tel.exact,
            format!("max |S_n - (chi_n - chi_0)| = {:e}, tolerance {:e}", tel.max_identity_error, tel.tolerance),
        ),
        Check::new(
            "coboundary variance negligible",
            var.c_hat2 < e.max_variance_fraction * cov[0],
            format!(
                "c^2(K={}) = {:.3e} vs Var(v) = {:.5}, required below {} of it",
                e.cutoff, var.c_hat2, cov[0], e.max_variance_fraction
            ),
        ),
    ];
    Ok(Outcome {
        description: "Birkhoff sums of a coboundary over a tower with bounded roof.",
        report: r.finish(),
        files,
        checks,
    })
}

fn stationarity(e: &StationarityExperiment, seed: u64) -> Result<Outcome, CliError> {
    let spec = build_tower(&e.tower, seed)?;
    let mut files = BTreeMap::new();
    keep_tower(&mut files, &e.tower, &spec);
    let mut r = Report::default();
    tower_report(&mut r, &spec);
    let mut checks = Vec::new();
    if let Some(o) = &e.occupancy {
        let occ = occupancy(&spec, o.steps, seed, o.state_limit).map_err(invalid)?;
        let tv = occ.tv_distance(&spec);
        let nu = spec.nu_vector();
        let p = spec.transition_matrix(o.state_limit).map_err(invalid)?;
        let mut kernel_error = 0.0_f64;
        for j in 0..nu.len() {
            let nu_p: f64 = (0..nu.len()).map(|i| nu[i] * p[i][j]).sum();
            kernel_error = kernel_error.max((nu_p - nu[j]).abs());
        }
        let mut csv = header(&[
            "Fraction of time a stationary tower path spends in each state, against the invariant",
            "mass nu(a, l) = P(a) / E[h].",
            &format!("steps = {}", o.steps),
        ]);
        csv.push_str("symbol,level,nu,empirical,count\n");
        for ((g, &c), &m) in spec.states().zip(&occ.counts).zip(&nu) {
            let _ = writeln!(csv, "{},{},{},{},{c}", g.symbol, g.level, f(m), f(c as f64 / o.steps as f64));
        }
        files.insert("occupancy.csv".into(), csv);
        r.kv("states", spec.state_count())
            .kv("occupancy_steps", o.steps)
            .float("total_variation", tv)
            .float("kernel_stationarity_error", kernel_error);
        checks.push(Check::new(
            "occupancy total variation",
            tv < o.max_tv,
            format!("TV {tv:.5} over {} states after {} steps, required < {}", spec.state_count(), o.steps, o.max_tv),
        ));
        checks.push(Check::new(
            "kernel stationarity",
            kernel_error < o.max_kernel_error,
            format!("max |nu P - nu| = {kernel_error:e}, required < {:e}", o.max_kernel_error),
        ));
    }
    if let Some(b) = &e.base_frequency {
        let freq = base_frequency(&spec, b.steps, derive_seed(seed, SALT_BASE)).map_err(invalid)?;
        r.kv("base_steps", b.steps)
            .kv("base_visits", freq.visits)
            .float("base_frequency", freq.ratio())
            .float("inverse_mean_roof", freq.expected)
            .float("base_frequency_relative_error", freq.relative_error());
        checks.push(Check::new(
            "base-return frequency",
            freq.relative_error() < b.max_relative_error,
            format!(
                "visits/u = {:.6} at u = {}, 1/E[h] = {:.6}, relative error {:.4}%, required < {}%",
                freq.ratio(),
                b.steps,
                freq.expected,
                100.0 * freq.relative_error(),
                100.0 * b.max_relative_error
            ),
        ));
    }
    Ok(Outcome {
        description: "Invariant measure and base-visit frequency of the tower chain.",
        report: r.finish(),
        files,
        checks,
    })
}
