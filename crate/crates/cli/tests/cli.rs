use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slds_mse::analysis::{compare_series, CompareGate};
use slds_mse::kalman::{gain_schedule, FilterPlan};
use slds_mse::linalg::Matrix;
use slds_mse::montecarlo::{run_monte_carlo, FilterRunner};
use slds_mse::scenario::{bimodal_4d, to_json};
use slds_mse::{MarkovChain, Scenario};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slds-mse"))
}

fn write_scenario(dir: &TempDir, name: &str, s: &Scenario) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, to_json(s).unwrap()).unwrap();
    path
}

fn run(args: &[&str], scenario: &Path) -> Output {
    bin()
        .args(args)
        .arg("--scenario")
        .arg(scenario)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// (step, filter, remaining columns) from a CSV body.
fn rows(csv: &str) -> Vec<(usize, String, Vec<String>)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<String> = l.split(',').map(str::to_string).collect();
            (
                cols[0].parse().unwrap(),
                cols[1].clone(),
                cols[2..].to_vec(),
            )
        })
        .collect()
}

fn quick(p_d: f64) -> Scenario {
    let mut s = bimodal_4d(p_d);
    s.mc_samples = 4000;
    s
}

#[test]
fn analyze_reference_scenario_orders_the_filters() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(&dir, "s.json", &quick(0.9));
    let svg = dir.path().join("a.svg");
    let out = bin()
        .args(["analyze", "--svg"])
        .arg(&svg)
        .arg("--scenario")
        .arg(&sc)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("step,filter,method,analytic_mse,kept_mass\n"));
    let rows = rows(&text);
    assert_eq!(rows.len(), 4 * 21);
    let mse = |label: &str, n: usize| -> f64 {
        rows.iter()
            .find(|r| r.1 == label && r.0 == n)
            .map(|r| r.2[1].parse().unwrap())
            .unwrap()
    };
    for n in 2..=20 {
        let skf = mse("SKF", n);
        for other in ["KF mode 1", "KF mode 2", "average KF"] {
            assert!(skf < mse(other, n), "n={n} {other}");
        }
    }
    assert!(rows.iter().all(|r| r.2[0] == "aggregate"));
    let chart = std::fs::read_to_string(&svg).unwrap();
    assert!(chart.starts_with("<svg"));
    assert!(chart.contains("average KF") && !chart.contains("href"));
}

#[test]
fn single_mode_system_gives_riccati_trace() {
    let mut s = quick(0.9);
    s.model.modes.truncate(1);
    s.model.chain = MarkovChain::new(
        Matrix::from_element(1, 1, 1.0),
        slds_mse::linalg::Vector::from_element(1, 1.0),
    );
    s.filters
        .retain(|f| !matches!(f.kind, slds_mse::FilterKind::SingleMode(1)));
    let dir = TempDir::new().unwrap();
    let out = run(&["analyze"], &write_scenario(&dir, "s.json", &s));
    assert!(out.status.success(), "{}", stderr(&out));
    let sched = gain_schedule(&s.model.modes[0], &s.model.meas, &s.model.init, 20).unwrap();
    for (n, label, cols) in rows(&stdout(&out)) {
        if n >= 1 {
            let v: f64 = cols[1].parse().unwrap();
            assert!(
                (v - sched.posterior_cov(n).trace()).abs() < 1e-12,
                "{label} n={n}"
            );
        }
    }
}

#[test]
fn exact_past_cap_is_a_capacity_error() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(&dir, "s.json", &quick(0.9));
    let out = run(&["analyze", "--method", "exact", "--horizon", "12"], &sc);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("aggregate"));
}

#[test]
fn pruned_needs_a_budget() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(&dir, "s.json", &quick(0.9));
    assert_eq!(
        run(&["analyze", "--method", "pruned"], &sc).status.code(),
        Some(2)
    );
    let ok = run(
        &[
            "analyze",
            "--method",
            "pruned",
            "--keep",
            "8",
            "--horizon",
            "5",
        ],
        &sc,
    );
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("pruned("));
}

#[test]
fn invalid_scenarios_exit_with_validation_status() {
    let dir = TempDir::new().unwrap();
    let mut s = quick(0.9);
    s.model.chain.transition[(0, 0)] = 0.7;
    let out = run(&["analyze"], &write_scenario(&dir, "bad.json", &s));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("row-stochastic"));

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ \"schema_version\": 1 }").unwrap();
    assert_eq!(run(&["simulate"], &garbage).status.code(), Some(2));

    let mut one = quick(0.9);
    one.model.modes.truncate(1);
    one.model.chain = MarkovChain::new(
        Matrix::from_element(1, 1, 1.0),
        slds_mse::linalg::Vector::from_element(1, 1.0),
    );
    one.filters.truncate(1);
    let out = run(&["recommend"], &write_scenario(&dir, "one.json", &one));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_and_seed_sensitive() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(&dir, "s.json", &quick(0.8));
    let a = run(&["simulate", "--threads", "1"], &sc);
    let b = run(&["simulate", "--threads", "1"], &sc);
    let c = run(&["simulate", "--threads", "3"], &sc);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let other = run(&["simulate", "--seed", "5"], &sc);
    assert_ne!(a.stdout, other.stdout);

    let text = stdout(&a);
    assert!(text.starts_with("step,filter,mc_mse,mc_stderr\n"));
    for (n, _, cols) in rows(&text) {
        if n == 0 {
            let (m, se): (f64, f64) = (cols[0].parse().unwrap(), cols[1].parse().unwrap());
            assert!((m - 4.0).abs() < 4.0 * se);
        }
    }
}

#[test]
fn single_sample_has_nan_stderr() {
    let dir = TempDir::new().unwrap();
    let mut s = quick(0.9);
    s.mc_samples = 1;
    let out = run(&["simulate"], &write_scenario(&dir, "s.json", &s));
    assert!(out.status.success());
    assert!(rows(&stdout(&out)).iter().all(|r| r.2[1] == "NaN"));
}

#[test]
fn compare_verdicts() {
    // The relative gate needs the full sample count: at a few thousand
    // samples MC noise alone exceeds 5% at some steps.
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(&dir, "s.json", &bimodal_4d(0.9));
    let svg = dir.path().join("c.svg");
    let csv = dir.path().join("c.csv");
    let pass = bin()
        .args(["compare", "--scenario"])
        .arg(&sc)
        .arg("--out")
        .arg(&csv)
        .arg("--svg")
        .arg(&svg)
        .output()
        .unwrap();
    assert_eq!(pass.status.code(), Some(0), "{}", stderr(&pass));
    assert!(stderr(&pass).contains("PASS"));
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with(
        "step,filter,method,analytic_mse,mc_mse,mc_stderr,rel_gap,z_score,gated,pass\n"
    ));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("(MC)"));

    let strict = run(&["compare", "--rtol", "0"], &sc);
    assert_eq!(strict.status.code(), Some(4));
    assert!(stderr(&strict).contains("FAIL"));
    assert!(stderr(&strict).contains("rel gap"));
}

#[test]
fn corrupted_gain_fails_comparison() {
    let s = quick(0.9);
    let good = FilterPlan::single(&s.model, 0, s.horizon).unwrap();
    let mut bad = good.clone();
    for k in bad.schedule.gains.iter_mut() {
        *k *= 0.5;
    }
    let analytic = slds_mse::fast::aggregate_series_single(&s.model, &good)
        .unwrap()
        .mse;
    let mc = run_monte_carlo(
        &s.model,
        &[FilterRunner::Plan(bad)],
        s.horizon,
        s.mc_samples,
        s.seed,
    )
    .unwrap();
    let steps = compare_series(
        &analytic,
        &mc.runs[0].empirical_mse(),
        &CompareGate::default(),
    );
    let failing: Vec<usize> = steps.iter().filter(|c| !c.pass).map(|c| c.step).collect();
    assert!(!failing.is_empty());
    assert!(failing.iter().all(|&n| n >= 2));
}

#[test]
fn recommend_outputs() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(&dir, "s.json", &quick(0.9));
    let out = run(&["recommend", "--threshold", "0.1"], &sc);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["recommendation"], "keep both; SKF recommended");
    assert_eq!(json["adjacency"], serde_json::json!([[1], [0]]));

    let all = run(&["recommend", "--threshold", "10"], &sc);
    let json: serde_json::Value = serde_json::from_str(&stdout(&all)).unwrap();
    assert_eq!(json["groups"], serde_json::json!([[1, 2]]));
    assert!(json["recommendation"]
        .as_str()
        .unwrap()
        .contains("single-mode"));

    let mut dup = quick(0.9);
    dup.model.modes.insert(1, dup.model.modes[0].clone());
    dup.model.chain = MarkovChain::new(
        Matrix::from_element(3, 3, 1.0 / 3.0),
        slds_mse::linalg::Vector::from_element(3, 1.0 / 3.0),
    );
    let table = dir.path().join("pairs.csv");
    let out = bin()
        .args(["recommend", "--table"])
        .arg(&table)
        .arg("--scenario")
        .arg(write_scenario(&dir, "dup.json", &dup))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["groups"], serde_json::json!([[1, 2], [3]]));
    let pairs = std::fs::read_to_string(&table).unwrap();
    assert!(pairs.lines().nth(1).unwrap().starts_with("1,2,"));
    assert!(pairs.lines().nth(1).unwrap().contains(",true,"));
}
