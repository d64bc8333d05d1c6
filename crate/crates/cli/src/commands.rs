use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use log::info;
use slds_mse::analysis::{
    analyze_scenario, compare_series, AnalysisOptions, AnalyticSeries, CompareGate, Method,
    StepComparison,
};
use slds_mse::enumeration::{EnumerationOptions, Pruning, SkfGainPolicy};
use slds_mse::fast::{merge_recommendation, ImprovementMetric, MergeBaseline, MergeOptions};
use slds_mse::model::validate_scenario;
use slds_mse::montecarlo::{run_monte_carlo, EmpiricalMse, FilterRunner};
use slds_mse::{scenario, Error, Scenario};

use crate::args::{
    AnalyzeArgs, BaselineArg, Cli, Command, CompareArgs, GainArg, MethodArg, MethodArgs, MetricArg,
    RecommendArgs, ScenarioArgs, SimulateArgs,
};
use crate::chart::{self, Curve};
use crate::output;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Pass,
    Fail,
}

/// Runs one command inside a thread pool sized by `--threads`.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building thread pool")?;
    pool.install(|| match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
        Command::Recommend(a) => recommend(a),
    })
}

/// Reads, applies overrides to, and validates a scenario file.
pub fn load_scenario(args: &ScenarioArgs) -> Result<Scenario> {
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))?;
    let mut s = scenario::from_json(&text)?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(h) = args.horizon {
        s.horizon = h;
    }
    validate_scenario(&s).into_result()?;
    Ok(s)
}

fn gain_policy(arg: GainArg) -> SkfGainPolicy {
    match arg {
        GainArg::ModeSchedule => SkfGainPolicy::ModeSchedule,
        GainArg::DetectedPath => SkfGainPolicy::DetectedPath,
    }
}

fn analysis_options(m: &MethodArgs) -> Result<AnalysisOptions> {
    let method = match m.method {
        MethodArg::Auto => Method::Auto,
        MethodArg::Exact => Method::Exact,
        MethodArg::Aggregate => Method::Aggregate,
        MethodArg::Pruned => match (m.keep, m.mass) {
            (Some(k), _) => Method::Pruned(Pruning::KeepTop(k)),
            (None, Some(p)) => Method::Pruned(Pruning::KeepMass(p)),
            (None, None) => {
                return Err(
                    Error::InvalidArgument("--method pruned needs --keep or --mass".into()).into(),
                )
            }
        },
    };
    Ok(AnalysisOptions {
        method,
        enumeration: EnumerationOptions {
            cap: m.cap,
            renormalize: m.renormalize,
            skf_gains: gain_policy(m.skf_gains),
            ..Default::default()
        },
    })
}

/// Empirical MSE of every scenario filter, in scenario order.
pub fn simulate_scenario(s: &Scenario, policy: SkfGainPolicy) -> Result<Vec<EmpiricalMse>> {
    let runners = s
        .filters
        .iter()
        .map(|f| FilterRunner::from_spec(&s.model, f, &s.detection, s.horizon, policy))
        .collect::<slds_mse::Result<Vec<_>>>()?;
    info!("simulating {} samples, seed {}", s.mc_samples, s.seed);
    let mc = run_monte_carlo(&s.model, &runners, s.horizon, s.mc_samples, s.seed)?;
    Ok(mc.runs.iter().map(|r| r.empirical_mse()).collect())
}

fn labels(s: &Scenario) -> Vec<String> {
    s.filters.iter().map(|f| f.label.clone()).collect()
}

fn write_chart(path: Option<&Path>, title: &str, curves: Vec<Curve>) -> Result<()> {
    match path {
        Some(p) => chart::write(p, title, &curves),
        None => Ok(()),
    }
}

fn analytic_curves(series: &[AnalyticSeries], suffix: &str) -> Vec<Curve> {
    series
        .iter()
        .enumerate()
        .map(|(i, a)| Curve {
            label: format!("{}{suffix}", a.label),
            values: a.mse.values.clone(),
            dashed: false,
            color: i,
        })
        .collect()
}

fn mc_curves(labels: &[String], mc: &[EmpiricalMse], suffix: &str) -> Vec<Curve> {
    labels
        .iter()
        .zip(mc)
        .enumerate()
        .map(|(i, (l, e))| Curve {
            label: format!("{l}{suffix}"),
            values: e.mse.clone(),
            dashed: true,
            color: i,
        })
        .collect()
}

fn analyze(a: &AnalyzeArgs) -> Result<Outcome> {
    let s = load_scenario(&a.scenario)?;
    let series = analyze_scenario(&s, &analysis_options(&a.method)?)?;
    output::write_analysis(output::sink(a.scenario.out.as_deref())?, &series)?;
    write_chart(
        a.svg.as_deref(),
        "Analytic MSE",
        analytic_curves(&series, ""),
    )?;
    Ok(Outcome::Done)
}

fn simulate(a: &SimulateArgs) -> Result<Outcome> {
    let s = load_scenario(&a.scenario)?;
    let mc = simulate_scenario(&s, gain_policy(a.skf_gains))?;
    let labels = labels(&s);
    output::write_simulation(output::sink(a.scenario.out.as_deref())?, &labels, &mc)?;
    write_chart(
        a.svg.as_deref(),
        "Monte Carlo MSE",
        mc_curves(&labels, &mc, ""),
    )?;
    Ok(Outcome::Done)
}

/// Per-filter step comparisons and the overall verdict.
pub fn verdict(
    series: &[AnalyticSeries],
    mc: &[EmpiricalMse],
    gate: &CompareGate,
) -> (Vec<Vec<StepComparison>>, bool) {
    let rows: Vec<Vec<StepComparison>> = series
        .iter()
        .zip(mc)
        .map(|(a, m)| compare_series(&a.mse, m, gate))
        .collect();
    let pass = rows.iter().flatten().all(|c| c.pass);
    (rows, pass)
}

fn compare(a: &CompareArgs) -> Result<Outcome> {
    let s = load_scenario(&a.scenario)?;
    let opts = analysis_options(&a.method)?;
    let series = analyze_scenario(&s, &opts)?;
    let mc = simulate_scenario(&s, opts.enumeration.skf_gains)?;
    let gate = CompareGate {
        rtol: a.rtol,
        ..Default::default()
    };
    let (rows, pass) = verdict(&series, &mc, &gate);
    output::write_comparison(output::sink(a.scenario.out.as_deref())?, &series, &rows)?;

    let mut curves = analytic_curves(&series, " (analytic)");
    curves.extend(mc_curves(&labels(&s), &mc, " (MC)"));
    write_chart(a.svg.as_deref(), "Analytic vs. Monte Carlo MSE", curves)?;

    for (sr, steps) in series.iter().zip(&rows) {
        for c in steps.iter().filter(|c| !c.pass) {
            eprintln!(
                "{} step {}: analytic {:.6e} mc {:.6e} ± {:.2e}  rel gap {:.3}%  z {:.2}",
                sr.label,
                c.step,
                c.analytic,
                c.mc,
                c.stderr,
                100.0 * c.rel_gap,
                c.z
            );
        }
    }
    eprintln!(
        "verdict: {} (rtol {}, |z| <= {}, steps >= {})",
        if pass { "PASS" } else { "FAIL" },
        gate.rtol,
        gate.z_max,
        gate.first_step
    );
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

fn recommend(a: &RecommendArgs) -> Result<Outcome> {
    let s = load_scenario(&a.scenario)?;
    let opts = MergeOptions {
        threshold: a.threshold,
        metric: match a.metric {
            MetricArg::Mean => ImprovementMetric::Mean,
            MetricArg::Max => ImprovementMetric::Max,
            MetricArg::Final => ImprovementMetric::Final,
        },
        baseline: match a.baseline {
            BaselineArg::Modes => MergeBaseline::ModeKfs,
            BaselineArg::ModesOrAverage => MergeBaseline::ModeKfsOrAverage,
        },
    };
    let report = merge_recommendation(&s.model, &s.detection, s.horizon, &opts)?;
    let json = serde_json::to_string_pretty(&output::merge_json(&report))?;
    let mut out = output::sink(a.scenario.out.as_deref())?;
    writeln!(out, "{json}")?;
    if let Some(p) = &a.table {
        output::write_pairs(output::sink(Some(p))?, &report)?;
    }
    eprintln!("{}", report.recommendation());
    Ok(Outcome::Done)
}
