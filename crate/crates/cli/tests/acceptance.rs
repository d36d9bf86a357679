//! Runs the whole acceptance suite twice (one worker, then several) and
//! prints one verdict line per criterion. Built without the test harness so
//! the verdicts are never captured.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use towerlab_cli::acceptance::{run_all, SuiteRun};
use towerlab_cli::with_workers;

const SEED: u64 = 1;

struct Criterion {
    id: u32,
    title: &'static str,
    /// `(suite directory, check name)` pairs that must all pass.
    checks: &'static [(&'static str, &'static str)],
    /// Wall-time limit for the experiment of the first listed check.
    limit: Option<Duration>,
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        title: "return-time tail slope -2 +- 0.2, <= 2 min single-threaded",
        checks: &[("return-tail", "return-time tail slope")],
        limit: Some(Duration::from_secs(120)),
    },
    Criterion {
        id: 2,
        title: "meeting-time tail slope -2 +- 0.3, <= 5 min",
        checks: &[("meeting-tail-power", "meeting-time tail slope")],
        limit: Some(Duration::from_secs(300)),
    },
    Criterion {
        id: 3,
        title: "no upward trend of survival over comparator",
        checks: &[("meeting-tail-power", "comparator ratio trend")],
        limit: None,
    },
    Criterion {
        id: 4,
        title: "exponential meeting tail and exact product-chain oracle",
        checks: &[
            ("meeting-tail-geometric", "exponential meeting tail linearity"),
            ("meeting-tail-geometric", "exact product-chain survival agreement"),
        ],
        limit: None,
    },
    Criterion {
        id: 5,
        title: "approximation error below calibrated comparator",
        checks: &[
            ("approx-decay", "approximation error below calibrated comparator"),
            ("approx-decay", "approximation Monte Carlo error"),
        ],
        limit: None,
    },
    Criterion {
        id: 6,
        title: "covariance summability and variance agreement",
        checks: &[
            ("covariance", "covariance partial sums plateau"),
            ("covariance", "Green-Kubo cutoff stability"),
            ("covariance", "variance of sums matches Green-Kubo"),
        ],
        limit: None,
    },
    Criterion {
        id: 7,
        title: "CLT with predicted variance, KS < 0.03, <= 15 min",
        checks: &[("clt-lsv", "KS distance to normal")],
        limit: Some(Duration::from_secs(900)),
    },
    Criterion {
        id: 8,
        title: "coboundary: bounded sums, vanishing variance",
        checks: &[
            ("coboundary", "coboundary sums bounded"),
            ("coboundary", "telescoping identity"),
            ("coboundary", "coboundary variance negligible"),
        ],
        limit: None,
    },
    Criterion {
        id: 9,
        title: "occupancy and exact kernel stationarity",
        checks: &[
            ("occupancy", "occupancy total variation"),
            ("occupancy", "kernel stationarity"),
        ],
        limit: None,
    },
    Criterion {
        id: 10,
        title: "base-return frequency within 1%",
        checks: &[("base-frequency", "base-return frequency")],
        limit: None,
    },
];

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn verdict(id: u32, title: &str, passed: bool, detail: &str) -> bool {
    println!("criterion {id:>2} {}: {title}; {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn judge(c: &Criterion, runs: &[SuiteRun]) -> bool {
    let mut passed = true;
    let mut details = Vec::new();
    for (dir, name) in c.checks {
        let run = runs.iter().find(|r| r.name == *dir).expect("suite directory");
        match run.outcome.check(name) {
            Some(check) => {
                passed &= check.passed;
                details.push(check.detail.clone());
            }
            None => {
                passed = false;
                details.push(format!("check {name:?} missing"));
            }
        }
    }
    if let Some(limit) = c.limit {
        let run = runs.iter().find(|r| r.name == c.checks[0].0).unwrap();
        passed &= run.elapsed <= limit;
        details.push(format!("{:.1} s (limit {} s)", run.elapsed.as_secs_f64(), limit.as_secs()));
    }
    verdict(c.id, c.title, passed, &details.join("; "))
}

fn main() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();

    let runs = with_workers(Some(1), || run_all(SEED, first.path(), |_| {}))
        .unwrap()
        .unwrap();
    let again = with_workers(Some(4), || run_all(SEED, second.path(), |_| {}))
        .unwrap()
        .unwrap();

    let mut all = true;
    for c in CRITERIA {
        all &= judge(c, &runs);
    }

    let a = read_tree(first.path());
    let b = read_tree(second.path());
    let differing: Vec<&String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .collect();
    let detail = if differing.is_empty() {
        format!("{} files identical with 1 and 4 workers", a.len())
    } else {
        format!("differing files: {differing:?}")
    };
    all &= verdict(11, "byte-identical output trees", differing.is_empty() && !a.is_empty(), &detail);

    // the second run must reach the same verdicts too
    for (x, y) in runs.iter().zip(&again) {
        assert_eq!(x.outcome.passed(), y.outcome.passed(), "{}", x.name);
    }
    if !all {
        eprintln!("at least one acceptance criterion failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
