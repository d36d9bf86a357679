//! On a tower whose roofs are all 1 the chain is an i.i.d. symbol sequence,
//! so the observables become moving averages with known long-run variance.

use towerlab::chain::meeting_tail_experiment;
use towerlab::observables::{Observable, ObservableSpec, StateFunction};
use towerlab::stats::{clt_experiment, CltConfig, LongRunConfig};
use towerlab::tower::{Symbol, TowerSpec};

fn coin() -> TowerSpec {
    let symbols = (0..2)
        .map(|id| Symbol {
            id,
            weight: 0.5,
            roof: 1,
        })
        .collect();
    TowerSpec::new(symbols, 0.5).unwrap()
}

fn marks() -> StateFunction {
    StateFunction::RefreshMark {
        values: vec![1.0, -1.0],
        centered: true,
    }
}

fn config(seed: u64) -> CltConfig {
    CltConfig {
        sum_length: 1000,
        replicates: 2000,
        long_run: LongRunConfig {
            segment_length: 200_000,
            segments: 5,
            max_lag: 100,
            margin: 64,
            seed: seed + 1,
        },
        cutoff: 60,
        seed,
    }
}

fn check(spec: &ObservableSpec, want: f64, seed: u64) {
    let tower = coin();
    let obs = Observable::new(spec, &tower).unwrap();
    let out = clt_experiment(&obs, &tower, &config(seed)).unwrap();
    let v = &out.report.variance;
    assert!(!v.possible_zero_variance);
    assert!((v.c_hat2 - want).abs() < 0.05 * want, "c^2 {} vs {want}", v.c_hat2);
    // the sample variance of 2000 sums has relative SE about 3%
    assert!((out.sum_variance - want).abs() < 0.12 * want, "Var(S_n)/n {} vs {want}", out.sum_variance);
    let ks = out.report.ks_distance.unwrap();
    assert!(ks < 0.035, "KS {ks}");
}

#[test]
fn single_mark_is_white_noise() {
    check(&ObservableSpec::finite(marks(), 0), 1.0, 10);
}

#[test]
fn window_mean_has_unit_long_run_variance() {
    // the mean of three i.i.d. signs sums to the same total as the signs
    check(&ObservableSpec::finite(marks(), 1), 1.0, 20);
}

#[test]
fn geometric_weights_give_a_two_sided_moving_average() {
    // weights xi^|j|; long-run variance (sum of weights)^2
    let xi: f64 = 0.5;
    let want = ((1.0 + xi) / (1.0 - xi)).powi(2);
    check(&ObservableSpec::geometric(marks(), Some(xi)), want, 30);
}

#[test]
fn coupled_coins_meet_at_once() {
    // distinct starts merge at the first shared innovation
    let tail = meeting_tail_experiment(&coin(), 100_000, 16, 4).unwrap();
    let h = &tail.histogram;
    assert_eq!(h.survivors(2), 0);
    let p = h.survival(1);
    assert!((p - 0.5).abs() < 5.0 * (0.25f64 / 1e5).sqrt(), "P(T >= 1) = {p}");
}
