//! Method selection for analytic MSE series and the analytic-vs-simulation
//! agreement check.

use std::fmt;

use crate::enumeration::{
    pruned_moments, single_mode_slds_moments, skf_slds_moments, EnumerationOptions,
    EnumerationResult, Pruning, SkfGainPolicy,
};
use crate::error::{Error, Result};
use crate::fast::{aggregate_series, aggregate_series_single};
use crate::kalman::FilterPlan;
use crate::model::{DetectionModel, FilterKind, FilterSpec, Scenario, SldsModel};
use crate::montecarlo::EmpiricalMse;
use crate::MseSeries;

/// Beam width used when `Auto` has to fall back to pruning.
pub const DEFAULT_BEAM: usize = 1 << 14;

/// Tolerance on "all rows of Z are equal" for picking the aggregate path.
const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Method {
    /// Aggregate if the chain has identical rows, else exact if under the
    /// cap, else a [`DEFAULT_BEAM`]-wide beam.
    #[default]
    Auto,
    Exact,
    Pruned(Pruning),
    Aggregate,
}

/// How a reported series was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodTag {
    Exact,
    /// Carries the smallest kept mass over all steps.
    Pruned(f64),
    Aggregate,
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodTag::Exact => f.write_str("exact"),
            MethodTag::Pruned(mass) => write!(f, "pruned({mass:.6})"),
            MethodTag::Aggregate => f.write_str("aggregate"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSeries {
    pub label: String,
    pub mse: MseSeries,
    pub method: MethodTag,
    /// Probability mass behind each step (all ones unless pruned).
    pub kept_mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalysisOptions {
    pub method: Method,
    pub enumeration: EnumerationOptions,
}

fn enumerate(
    model: &SldsModel,
    det: &DetectionModel,
    horizon: usize,
    kind: FilterKind,
    opts: &EnumerationOptions,
) -> Result<EnumerationResult> {
    match kind {
        FilterKind::Skf => skf_slds_moments(model, det, horizon, opts),
        FilterKind::SingleMode(j) => {
            single_mode_slds_moments(model, &FilterPlan::single(model, j, horizon)?, opts)
        }
        FilterKind::Average => {
            single_mode_slds_moments(model, &FilterPlan::average(model, horizon)?, opts)
        }
    }
}

fn from_enumeration(label: &str, res: EnumerationResult) -> AnalyticSeries {
    let method = if res.approximate {
        MethodTag::Pruned(res.kept_mass.iter().copied().fold(1.0, f64::min))
    } else {
        MethodTag::Exact
    };
    AnalyticSeries {
        label: label.to_string(),
        mse: res.mse,
        method,
        kept_mass: res.kept_mass,
    }
}

fn aggregate(
    model: &SldsModel,
    det: &DetectionModel,
    horizon: usize,
    spec: &FilterSpec,
    opts: &EnumerationOptions,
) -> Result<AnalyticSeries> {
    let res = match spec.kind {
        FilterKind::Skf => {
            if opts.skf_gains != SkfGainPolicy::ModeSchedule {
                return Err(Error::InvalidArgument(
                    "the aggregate method supports only per-mode gain schedules".into(),
                ));
            }
            aggregate_series(model, det, horizon)?
        }
        FilterKind::SingleMode(j) => {
            aggregate_series_single(model, &FilterPlan::single(model, j, horizon)?)?
        }
        FilterKind::Average => {
            aggregate_series_single(model, &FilterPlan::average(model, horizon)?)?
        }
    };
    Ok(AnalyticSeries {
        label: spec.label.clone(),
        mse: res.mse,
        method: MethodTag::Aggregate,
        kept_mass: vec![1.0; horizon + 1],
    })
}

/// Analytic MSE for steps 0..=`horizon` of one filter.
pub fn analyze_filter(
    model: &SldsModel,
    det: &DetectionModel,
    horizon: usize,
    spec: &FilterSpec,
    opts: &AnalysisOptions,
) -> Result<AnalyticSeries> {
    let eopts = &opts.enumeration;
    match opts.method {
        Method::Aggregate => aggregate(model, det, horizon, spec, eopts),
        Method::Exact => {
            let exact = EnumerationOptions {
                pruning: None,
                ..eopts.clone()
            };
            Ok(from_enumeration(
                &spec.label,
                enumerate(model, det, horizon, spec.kind, &exact)?,
            ))
        }
        Method::Pruned(p) => {
            let res = match spec.kind {
                FilterKind::Skf => pruned_moments(model, det, horizon, p, eopts)?,
                kind => {
                    let pruned = EnumerationOptions {
                        pruning: Some(p),
                        ..eopts.clone()
                    };
                    enumerate(model, det, horizon, kind, &pruned)?
                }
            };
            let mut series = from_enumeration(&spec.label, res);
            if series.method == MethodTag::Exact {
                series.method = MethodTag::Pruned(1.0);
            }
            Ok(series)
        }
        Method::Auto => {
            let fits_aggregate = model.chain.has_identical_rows(ROW_TOL)
                && !(spec.kind == FilterKind::Skf
                    && eopts.skf_gains != SkfGainPolicy::ModeSchedule);
            if fits_aggregate {
                return aggregate(model, det, horizon, spec, eopts);
            }
            let exact = AnalysisOptions {
                method: Method::Exact,
                enumeration: eopts.clone(),
            };
            match analyze_filter(model, det, horizon, spec, &exact) {
                Err(Error::CapExceeded { .. }) => {
                    log::info!(
                        "{}: enumeration cap exceeded, keeping the top {DEFAULT_BEAM}",
                        spec.label
                    );
                    let pruned = AnalysisOptions {
                        method: Method::Pruned(Pruning::KeepTop(DEFAULT_BEAM)),
                        enumeration: eopts.clone(),
                    };
                    analyze_filter(model, det, horizon, spec, &pruned)
                }
                other => other,
            }
        }
    }
}

/// Analytic series for every filter of a scenario, in scenario order.
pub fn analyze_scenario(s: &Scenario, opts: &AnalysisOptions) -> Result<Vec<AnalyticSeries>> {
    s.filters
        .iter()
        .map(|f| analyze_filter(&s.model, &s.detection, s.horizon, f, opts))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepComparison {
    pub step: usize,
    pub analytic: f64,
    pub mc: f64,
    pub stderr: f64,
    /// `|analytic − mc| / mc`
    pub rel_gap: f64,
    /// `|analytic − mc| / stderr`
    pub z: f64,
    /// Whether this step is part of the verdict.
    pub gated: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareGate {
    pub rtol: f64,
    pub z_max: f64,
    /// Steps before this one are reported but not judged.
    pub first_step: usize,
}

impl Default for CompareGate {
    fn default() -> Self {
        Self {
            rtol: 0.05,
            z_max: 4.0,
            first_step: 2,
        }
    }
}

/// Joins an analytic series with its empirical counterpart. A gated step
/// passes when its relative gap is within `rtol` and it lies within
/// `z_max` standard errors; a NaN standard error never passes.
pub fn compare_series(
    analytic: &MseSeries,
    mc: &EmpiricalMse,
    gate: &CompareGate,
) -> Vec<StepComparison> {
    let steps = analytic.len().min(mc.mse.len());
    (0..steps)
        .map(|n| {
            let a = analytic.at(n);
            let m = mc.mse[n];
            let se = mc.stderr[n];
            let gap = (a - m).abs();
            let rel_gap = if m != 0.0 {
                gap / m.abs()
            } else if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            let z = if se > 0.0 {
                gap / se
            } else if gap == 0.0 && se == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            let gated = n >= gate.first_step;
            let pass = !gated || (rel_gap <= gate.rtol && z <= gate.z_max);
            StepComparison {
                step: n,
                analytic: a,
                mc: m,
                stderr: se,
                rel_gap,
                z,
                gated,
                pass,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Matrix, Vector};
    use crate::scenario::bimodal_4d;

    fn sticky(mut s: Scenario) -> Scenario {
        s.model.chain.transition = Matrix::from_row_slice(2, 2, &[0.95, 0.05, 0.1, 0.9]);
        s
    }

    #[test]
    fn auto_prefers_aggregate_for_identical_rows() {
        let s = bimodal_4d(0.9);
        let out = analyze_scenario(&s, &AnalysisOptions::default()).unwrap();
        assert!(out.iter().all(|a| a.method == MethodTag::Aggregate));
        assert_eq!(out[0].mse.len(), 21);
    }

    #[test]
    fn auto_enumerates_small_sticky_chains() {
        let mut s = sticky(bimodal_4d(0.9));
        s.horizon = 6;
        let out = analyze_scenario(&s, &AnalysisOptions::default()).unwrap();
        assert!(out.iter().all(|a| a.method == MethodTag::Exact));
    }

    #[test]
    fn auto_falls_back_to_pruning_past_the_cap() {
        let mut s = sticky(bimodal_4d(0.9));
        s.horizon = 12;
        let skf = FilterSpec::new(FilterKind::Skf);
        let a = analyze_filter(
            &s.model,
            &s.detection,
            s.horizon,
            &skf,
            &AnalysisOptions::default(),
        )
        .unwrap();
        match a.method {
            MethodTag::Pruned(mass) => assert!(mass > 0.9 && mass < 1.0, "mass {mass}"),
            other => panic!("expected pruning, got {other}"),
        }
    }

    #[test]
    fn forced_exact_past_cap_errors() {
        let s = bimodal_4d(0.9);
        let opts = AnalysisOptions {
            method: Method::Exact,
            ..Default::default()
        };
        let err = analyze_filter(
            &s.model,
            &s.detection,
            12,
            &FilterSpec::new(FilterKind::Skf),
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, Error::CapExceeded { .. }));
    }

    #[test]
    fn forced_aggregate_rejects_sticky_chain() {
        let s = sticky(bimodal_4d(0.9));
        let opts = AnalysisOptions {
            method: Method::Aggregate,
            ..Default::default()
        };
        let err = analyze_filter(
            &s.model,
            &s.detection,
            5,
            &FilterSpec::new(FilterKind::Skf),
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonUniformChain));
    }

    #[test]
    fn method_tags_render() {
        assert_eq!(MethodTag::Exact.to_string(), "exact");
        assert_eq!(MethodTag::Aggregate.to_string(), "aggregate");
        assert_eq!(MethodTag::Pruned(0.5).to_string(), "pruned(0.500000)");
    }

    fn mc(mse: Vec<f64>, stderr: Vec<f64>) -> EmpiricalMse {
        EmpiricalMse { mse, stderr }
    }

    #[test]
    fn compare_gates() {
        let a = MseSeries::new(vec![4.0, 1.0, 1.0, 1.0]);
        let gate = CompareGate::default();
        let close = compare_series(&a, &mc(vec![9.0, 9.0, 1.01, 0.99], vec![0.1; 4]), &gate);
        assert!(close.iter().all(|c| c.pass));
        assert!(!close[0].gated && !close[1].gated);

        let far_z = compare_series(&a, &mc(vec![4.0, 1.0, 1.01, 1.0], vec![0.001; 4]), &gate);
        assert!(!far_z[2].pass);

        let zero_rtol = CompareGate { rtol: 0.0, ..gate };
        let noisy = compare_series(
            &a,
            &mc(vec![4.0, 1.0, 1.001, 1.0], vec![0.1; 4]),
            &zero_rtol,
        );
        assert!(!noisy[2].pass);

        let nan = compare_series(&a, &mc(vec![4.0, 1.0, 1.0, 1.0], vec![f64::NAN; 4]), &gate);
        assert!(!nan[2].pass);
    }

    #[test]
    fn r1_single_mode_curve_is_riccati_trace() {
        let mut s = bimodal_4d(0.9);
        s.model.modes.truncate(1);
        s.model.chain.transition = Matrix::from_element(1, 1, 1.0);
        s.model.chain.prior = Vector::from_element(1, 1.0);
        let sched =
            crate::kalman::gain_schedule(&s.model.modes[0], &s.model.meas, &s.model.init, 10)
                .unwrap();
        let a = analyze_filter(
            &s.model,
            &s.detection,
            10,
            &FilterSpec::new(FilterKind::SingleMode(0)),
            &AnalysisOptions::default(),
        )
        .unwrap();
        for n in 1..=10 {
            assert!((a.mse.at(n) - sched.posterior_cov(n).trace()).abs() < 1e-12);
        }
    }
}
