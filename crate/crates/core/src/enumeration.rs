//! Error moments in an SLDS by enumerating mode trajectories.
//!
//! For a single filter every true trajectory `l_n` carries its own
//! conditional moments, advanced with [`mismatch_step`] using the trajectory's
//! current mode as the truth. For the SKF the unit is a pair `(l_n, q_n)` of
//! true and detected trajectories, and the filter at step n is the detected
//! mode with its gain. Aggregates are probability-weighted mixtures:
//! `E[e] = Σ π E[e^l]`, `E[e eᵀ] = Σ π (C(e^l) + E[e^l]E[e^l]ᵀ)`.
//!
//! The tree is expanded level by level so each step's live set is final
//! before the next one starts; expansion within a level runs on the rayon
//! pool and keeps enumeration order, so results do not depend on the thread
//! count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kalman::{mode_schedules, riccati_step, FilterPlan, GainSchedule};
use crate::linalg::{symmetrize, Matrix, Vector};
use crate::mismatch::{mismatch_init, mismatch_step, ErrorMoments};
use crate::model::{DetectionModel, MarkovChain, SldsModel};
use crate::MseSeries;

/// Default bound on live trajectories (or pairs) at any step.
pub const DEFAULT_CAP: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub modes: Vec<usize>,
    pub prob: f64,
}

/// A true/detected trajectory pair with its conditional error moments. For
/// single-filter runs `detected` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub truth: Vec<usize>,
    pub detected: Vec<usize>,
    pub prob: f64,
    pub moments: ErrorMoments,
}

/// How the SKF gain for detected mode j is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SkfGainPolicy {
    /// `K_n^j` from mode j's standalone schedule.
    #[default]
    ModeSchedule,
    /// Gain from the Riccati recursion along the detected trajectory itself.
    DetectedPath,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pruning {
    /// Keep the K most probable units at each step.
    KeepTop(usize),
    /// Keep the most probable units until their mass reaches P_c.
    KeepMass(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationOptions {
    pub cap: usize,
    pub pruning: Option<Pruning>,
    /// Divide pruned aggregates by the kept mass.
    pub renormalize: bool,
    pub skf_gains: SkfGainPolicy,
    /// Keep the horizon's live units in the result.
    pub keep_leaves: bool,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_CAP,
            pruning: None,
            renormalize: false,
            skf_gains: SkfGainPolicy::ModeSchedule,
            keep_leaves: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnumerationResult {
    pub mse: MseSeries,
    /// Aggregate moments for steps 0..=N.
    pub moments: Vec<ErrorMoments>,
    /// Probability mass of the live set at each step 0..=N.
    pub kept_mass: Vec<f64>,
    /// Number of live units at each step 0..=N.
    pub live: Vec<usize>,
    /// True when any step dropped units.
    pub approximate: bool,
    pub leaves: Vec<TrajectoryPair>,
}

/// `prior[m₁] · Π Z[m_{k−1}][m_k]`.
pub fn trajectory_prob(chain: &MarkovChain, modes: &[usize]) -> Result<f64> {
    let (&first, rest) = modes
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
    let r = chain.num_modes();
    if modes.iter().any(|&m| m >= r) {
        return Err(Error::InvalidArgument(format!(
            "mode index out of range 0..{r}"
        )));
    }
    let mut p = chain.prior[first];
    let mut prev = first;
    for &m in rest {
        p *= chain.transition[(prev, m)];
        prev = m;
    }
    Ok(p)
}

/// `P(q | l) = Π [p_d if match else (1 − p_d)/(r − 1)]`.
pub fn detection_prob(
    truth: &[usize],
    detected: &[usize],
    det: &DetectionModel,
    num_modes: usize,
) -> Result<f64> {
    if truth.len() != detected.len() {
        return Err(Error::InvalidArgument(format!(
            "true and detected trajectories differ in length ({} vs {})",
            truth.len(),
            detected.len()
        )));
    }
    let mismatch = truth.iter().zip(detected).any(|(a, b)| a != b);
    if num_modes == 1 && mismatch {
        return Err(Error::InvalidArgument(
            "a single-mode system cannot detect a different mode".into(),
        ));
    }
    Ok(truth
        .iter()
        .zip(detected)
        .map(|(&i, &j)| det.step_prob(i, j, num_modes))
        .product())
}

fn transition_prob(chain: &MarkovChain, last: Option<usize>, next: usize) -> f64 {
    match last {
        None => chain.prior[next],
        Some(i) => chain.transition[(i, next)],
    }
}

/// All `r^n` trajectories of length `n` in lexicographic order.
pub fn enumerate_trajectories(chain: &MarkovChain, n: usize) -> Vec<Trajectory> {
    let r = chain.num_modes();
    let mut level = vec![Trajectory {
        modes: Vec::new(),
        prob: 1.0,
    }];
    for _ in 0..n {
        level = level
            .iter()
            .flat_map(|t| {
                (0..r).map(move |i| {
                    let mut modes = t.modes.clone();
                    modes.push(i);
                    Trajectory {
                        prob: t.prob * transition_prob(chain, t.modes.last().copied(), i),
                        modes,
                    }
                })
            })
            .collect();
    }
    level
}

/// All `r^{2n}` (true, detected) pairs of length `n` with joint mass
/// `π_l · P(q | l)`.
pub fn enumerate_pairs(
    chain: &MarkovChain,
    det: &DetectionModel,
    n: usize,
) -> Vec<(Vec<usize>, Vec<usize>, f64)> {
    let r = chain.num_modes();
    let mut level = vec![(Vec::new(), Vec::new(), 1.0)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(level.len() * r * r);
        for (l, q, p) in &level {
            let last: Option<usize> = l.last().copied();
            for i in 0..r {
                let pi = p * transition_prob(chain, last, i);
                for j in 0..r {
                    let mut l2: Vec<usize> = l.clone();
                    let mut q2: Vec<usize> = q.clone();
                    l2.push(i);
                    q2.push(j);
                    next.push((l2, q2, pi * det.step_prob(i, j, r)));
                }
            }
        }
        level = next;
    }
    level
}

/// Probability-weighted mixture of conditional moments. Weights are used as
/// given; pass normalized weights for a proper mixture.
pub fn aggregate_weighted<'a>(
    items: impl IntoIterator<Item = (f64, &'a ErrorMoments)>,
    z: usize,
    step: usize,
) -> ErrorMoments {
    let mut e_mean = Vector::zeros(z);
    let mut ee = Matrix::zeros(z, z);
    let mut x_mean = Vector::zeros(z);
    let mut xx = Matrix::zeros(z, z);
    let mut xhat_mean = Vector::zeros(z);
    let mut xhat_x = Matrix::zeros(z, z);
    for (w, m) in items {
        let xhat = &m.x_mean - &m.e_mean;
        e_mean.axpy(w, &m.e_mean, 1.0);
        ee += (&m.e_cov + &m.e_mean * m.e_mean.transpose()) * w;
        x_mean.axpy(w, &m.x_mean, 1.0);
        xx += (&m.x_cov + &m.x_mean * m.x_mean.transpose()) * w;
        xhat_x += (&m.u + &xhat * m.x_mean.transpose()) * w;
        xhat_mean.axpy(w, &xhat, 1.0);
    }
    let e_cov = symmetrize(&(ee - &e_mean * e_mean.transpose()));
    let x_cov = symmetrize(&(xx - &x_mean * x_mean.transpose()));
    let u = xhat_x - &xhat_mean * x_mean.transpose();
    ErrorMoments {
        step,
        e_mean,
        e_cov,
        x_mean,
        x_cov,
        u,
    }
}

#[derive(Clone)]
struct Node {
    truth: Vec<usize>,
    detected: Vec<usize>,
    prob: f64,
    moments: ErrorMoments,
    filter_cov: Option<Matrix>,
}

enum Target<'a> {
    Single(&'a FilterPlan),
    Skf {
        det: DetectionModel,
        schedules: Vec<GainSchedule>,
        policy: SkfGainPolicy,
    },
}

impl Target<'_> {
    fn branching(&self, r: usize) -> usize {
        match self {
            Target::Single(_) => r,
            Target::Skf { .. } => r * r,
        }
    }
}

fn expand(node: &Node, n: usize, model: &SldsModel, target: &Target<'_>) -> Result<Vec<Node>> {
    let r = model.num_modes();
    let last = node.truth.last().copied();
    let mut out = Vec::with_capacity(target.branching(r));
    for i in 0..r {
        let pi = node.prob * transition_prob(&model.chain, last, i);
        let mut truth = node.truth.clone();
        truth.push(i);
        match target {
            Target::Single(plan) => {
                let moments = mismatch_step(
                    &node.moments,
                    &model.modes[i],
                    plan.mode(n),
                    &model.meas,
                    plan.gain(n),
                )?;
                out.push(Node {
                    truth,
                    detected: Vec::new(),
                    prob: pi,
                    moments,
                    filter_cov: None,
                });
            }
            Target::Skf {
                det,
                schedules,
                policy,
            } => {
                for j in 0..r {
                    let (gain, filter_cov) = match policy {
                        SkfGainPolicy::ModeSchedule => (schedules[j].gain(n).clone(), None),
                        SkfGainPolicy::DetectedPath => {
                            let prev = node.filter_cov.as_ref().unwrap_or(&model.init.cov);
                            let (k, p) = riccati_step(prev, &model.modes[j], &model.meas)?;
                            (k, Some(p))
                        }
                    };
                    let moments = mismatch_step(
                        &node.moments,
                        &model.modes[i],
                        &model.modes[j],
                        &model.meas,
                        &gain,
                    )?;
                    let mut detected = node.detected.clone();
                    detected.push(j);
                    out.push(Node {
                        truth: truth.clone(),
                        detected,
                        prob: pi * det.step_prob(i, j, r),
                        moments,
                        filter_cov,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Indices of the units to keep, in their original order.
fn select(probs: &[f64], pruning: Pruning) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let keep = match pruning {
        Pruning::KeepTop(k) => k.min(order.len()),
        Pruning::KeepMass(target) => {
            if target >= 1.0 {
                order.len()
            } else {
                let mut acc = 0.0;
                order
                    .iter()
                    .position(|&i| {
                        acc += probs[i];
                        acc >= target
                    })
                    .map_or(order.len(), |p| p + 1)
            }
        }
    };
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

fn run(
    model: &SldsModel,
    target: Target<'_>,
    horizon: usize,
    opts: &EnumerationOptions,
) -> Result<EnumerationResult> {
    let r = model.num_modes();
    let z = model.state_dim();
    if let Some(Pruning::KeepTop(0)) = opts.pruning {
        return Err(Error::InvalidArgument("keep K must be >= 1".into()));
    }
    if let Some(Pruning::KeepMass(pc)) = opts.pruning {
        if !(pc > 0.0 && pc <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "kept mass P_c = {pc} outside (0, 1]"
            )));
        }
    }
    if opts.pruning.is_none() {
        let required = (target.branching(r) as f64).powi(horizon as i32);
        if required > opts.cap as f64 {
            return Err(Error::CapExceeded {
                required,
                cap: opts.cap,
            });
        }
    }

    let init = mismatch_init(&model.init);
    let mut level = vec![Node {
        truth: Vec::new(),
        detected: Vec::new(),
        prob: 1.0,
        moments: init.clone(),
        filter_cov: None,
    }];
    let mut moments = vec![init];
    let mut kept_mass = vec![1.0];
    let mut live = vec![1];
    let mut approximate = false;

    for n in 1..=horizon {
        let children: Vec<Vec<Node>> = level
            .par_iter()
            .map(|node| expand(node, n, model, &target))
            .collect::<Result<_>>()?;
        let mut next: Vec<Node> = children.into_iter().flatten().collect();

        if let Some(pruning) = opts.pruning {
            let probs: Vec<f64> = next.iter().map(|c| c.prob).collect();
            let kept = select(&probs, pruning);
            if kept.len() < next.len() {
                approximate = true;
                let mut slots: Vec<Option<Node>> = next.into_iter().map(Some).collect();
                next = kept.into_iter().filter_map(|i| slots[i].take()).collect();
            }
        }
        if next.len() > opts.cap {
            return Err(Error::CapExceeded {
                required: next.len() as f64,
                cap: opts.cap,
            });
        }

        let mass: f64 = next.iter().map(|c| c.prob).sum();
        let scale = if opts.renormalize && mass > 0.0 {
            1.0 / mass
        } else {
            1.0
        };
        moments.push(aggregate_weighted(
            next.iter().map(|c| (c.prob * scale, &c.moments)),
            z,
            n,
        ));
        kept_mass.push(mass);
        live.push(next.len());
        level = next;
    }

    let mse = MseSeries::new(moments.iter().map(ErrorMoments::mse).collect());
    let leaves = if opts.keep_leaves {
        level
            .into_iter()
            .map(|node| TrajectoryPair {
                truth: node.truth,
                detected: node.detected,
                prob: node.prob,
                moments: node.moments,
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(EnumerationResult {
        mse,
        moments,
        kept_mass,
        live,
        approximate,
        leaves,
    })
}

/// A single (possibly mismatched or time-varying) filter applied to the SLDS.
pub fn single_mode_slds_moments(
    model: &SldsModel,
    plan: &FilterPlan,
    opts: &EnumerationOptions,
) -> Result<EnumerationResult> {
    run(model, Target::Single(plan), plan.horizon(), opts)
}

/// The SKF with constant-rate detection applied to the SLDS.
pub fn skf_slds_moments(
    model: &SldsModel,
    det: &DetectionModel,
    horizon: usize,
    opts: &EnumerationOptions,
) -> Result<EnumerationResult> {
    let schedules = match opts.skf_gains {
        SkfGainPolicy::ModeSchedule => mode_schedules(model, horizon)?,
        SkfGainPolicy::DetectedPath => Vec::new(),
    };
    let target = Target::Skf {
        det: *det,
        schedules,
        policy: opts.skf_gains,
    };
    run(model, target, horizon, opts)
}

/// SKF moments over a beam of the most probable (true, detected) pairs,
/// re-pruned at every step. `kept_mass` in the result reports the retained
/// probability per step.
pub fn pruned_moments(
    model: &SldsModel,
    det: &DetectionModel,
    horizon: usize,
    pruning: Pruning,
    opts: &EnumerationOptions,
) -> Result<EnumerationResult> {
    let opts = EnumerationOptions {
        pruning: Some(pruning),
        ..opts.clone()
    };
    skf_slds_moments(model, det, horizon, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::gain_schedule;
    use crate::mismatch::mismatch_series;
    use crate::model::{GaussianBelief, MeasurementModel, ModeModel};
    use crate::scenario::bimodal_4d;
    use approx::assert_abs_diff_eq;

    fn chain2(z: [f64; 4], prior: [f64; 2]) -> MarkovChain {
        MarkovChain::new(
            Matrix::from_row_slice(2, 2, &z),
            Vector::from_row_slice(&prior),
        )
    }

    fn scalar_model(a: &[f64], z: [f64; 4], prior: [f64; 2]) -> SldsModel {
        let s = |v: f64| Matrix::from_element(1, 1, v);
        SldsModel {
            modes: a.iter().map(|&ai| ModeModel::new(s(ai), s(0.01))).collect(),
            meas: MeasurementModel::new(s(1.0), s(0.01)),
            chain: chain2(z, prior),
            init: GaussianBelief::new(Vector::from_element(1, 1.0), s(1.0)),
        }
    }

    #[test]
    fn trajectory_prob_examples() {
        let uniform = chain2([0.5; 4], [0.5, 0.5]);
        assert_abs_diff_eq!(
            trajectory_prob(&uniform, &[0, 1, 1, 0]).unwrap(),
            0.5f64.powi(4)
        );
        let absorbing = chain2([1.0, 0.0, 0.0, 1.0], [1.0, 0.0]);
        assert_eq!(trajectory_prob(&absorbing, &[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(trajectory_prob(&absorbing, &[0, 1, 1]).unwrap(), 0.0);
        let c = chain2([0.9, 0.1, 0.2, 0.8], [1.0, 0.0]);
        assert_abs_diff_eq!(
            trajectory_prob(&c, &[0, 1, 1]).unwrap(),
            0.08,
            epsilon = 1e-15
        );
        assert!(trajectory_prob(&c, &[]).is_err());
    }

    #[test]
    fn detection_prob_examples() {
        let perfect = DetectionModel::new(1.0);
        assert_eq!(detection_prob(&[0, 1], &[0, 1], &perfect, 2).unwrap(), 1.0);
        assert_eq!(detection_prob(&[0, 1], &[0, 0], &perfect, 2).unwrap(), 0.0);
        let d = DetectionModel::new(0.9);
        assert_abs_diff_eq!(
            detection_prob(&[0, 1, 1], &[0, 0, 1], &d, 2).unwrap(),
            0.081,
            epsilon = 1e-15
        );
        let coin = DetectionModel::new(0.5);
        assert_abs_diff_eq!(
            detection_prob(&[0, 0, 1, 0], &[1, 0, 0, 1], &coin, 2).unwrap(),
            0.0625
        );
        assert!(detection_prob(&[0], &[0, 1], &d, 2).is_err());
        assert!(detection_prob(&[0, 0], &[0, 1], &d, 1).is_err());
    }

    #[test]
    fn single_mode_system_reduces_to_matched_kf() {
        let s = scalar_model(&[0.9], [1.0, 0.0, 0.0, 1.0], [1.0, 0.0]);
        let model = SldsModel {
            chain: MarkovChain::new(
                Matrix::from_element(1, 1, 1.0),
                Vector::from_element(1, 1.0),
            ),
            ..s
        };
        let plan = FilterPlan::single(&model, 0, 10).unwrap();
        let res = single_mode_slds_moments(&model, &plan, &EnumerationOptions::default()).unwrap();
        for n in 1..=10 {
            assert_abs_diff_eq!(
                res.mse.at(n),
                plan.schedule.posterior_cov(n).trace(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn degenerate_chain_equals_mismatch_series() {
        let model = scalar_model(&[0.9, 0.46], [1.0, 0.0, 0.0, 1.0], [1.0, 0.0]);
        let plan = FilterPlan::single(&model, 1, 8).unwrap();
        let res = single_mode_slds_moments(&model, &plan, &EnumerationOptions::default()).unwrap();
        let (_, direct) = mismatch_series(
            &model.modes[0],
            &model.modes[1],
            &model.meas,
            &model.init,
            8,
        )
        .unwrap();
        for n in 0..=8 {
            assert_abs_diff_eq!(res.mse.at(n), direct.at(n), epsilon = 1e-10);
        }
    }

    #[test]
    fn perfect_detection_keeps_only_matched_pairs() {
        let s = bimodal_4d(1.0);
        let opts = EnumerationOptions {
            keep_leaves: true,
            ..Default::default()
        };
        let res = skf_slds_moments(&s.model, &s.detection, 4, &opts).unwrap();
        for leaf in &res.leaves {
            if leaf.truth != leaf.detected {
                assert_eq!(leaf.prob, 0.0);
            }
        }
        // Matched pairs have zero-mean error, so the aggregate does too.
        for m in &res.moments {
            assert!(m.e_mean.norm() < 1e-12);
        }
        let diag: f64 = res
            .leaves
            .iter()
            .filter(|l| l.truth == l.detected)
            .map(|l| l.prob * l.moments.mse())
            .sum();
        assert_abs_diff_eq!(res.mse.at(4), diag, epsilon = 1e-12);
    }

    #[test]
    fn identical_modes_skf_equals_matched_kf() {
        let model = scalar_model(&[0.7, 0.7], [0.5; 4], [0.5, 0.5]);
        let matched = gain_schedule(&model.modes[0], &model.meas, &model.init, 6).unwrap();
        for p_d in [0.0, 0.4, 1.0] {
            let res = skf_slds_moments(
                &model,
                &DetectionModel::new(p_d),
                6,
                &EnumerationOptions::default(),
            )
            .unwrap();
            for n in 1..=6 {
                assert_abs_diff_eq!(
                    res.mse.at(n),
                    matched.posterior_cov(n).trace(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn masses_sum_to_one() {
        for r in [2usize, 3] {
            let z = Matrix::from_fn(r, r, |i, j| if i == j { 0.6 } else { 0.4 / (r - 1) as f64 });
            let chain = MarkovChain::new(z, Vector::from_element(r, 1.0 / r as f64));
            for n in 1..=5 {
                let t: f64 = enumerate_trajectories(&chain, n)
                    .iter()
                    .map(|t| t.prob)
                    .sum();
                assert_abs_diff_eq!(t, 1.0, epsilon = 1e-10);
            }
            let p: f64 = enumerate_pairs(&chain, &DetectionModel::new(0.8), 3)
                .iter()
                .map(|x| x.2)
                .sum();
            assert_abs_diff_eq!(p, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn cap_exceeded_is_reported() {
        let s = bimodal_4d(0.9);
        let err = skf_slds_moments(&s.model, &s.detection, 12, &EnumerationOptions::default())
            .unwrap_err();
        match err {
            Error::CapExceeded { required, cap } => {
                assert_eq!(required, 2f64.powi(24));
                assert_eq!(cap, DEFAULT_CAP);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_message_mentions_aggregate());
    }

    fn err_message_mentions_aggregate() -> bool {
        Error::CapExceeded {
            required: 1.0,
            cap: 0,
        }
        .to_string()
        .contains("aggregate")
    }

    #[test]
    fn full_mass_pruning_is_exact() {
        let s = bimodal_4d(0.8);
        let exact =
            skf_slds_moments(&s.model, &s.detection, 5, &EnumerationOptions::default()).unwrap();
        let pruned = pruned_moments(
            &s.model,
            &s.detection,
            5,
            Pruning::KeepMass(1.0),
            &EnumerationOptions::default(),
        )
        .unwrap();
        assert_eq!(exact.mse, pruned.mse);
        assert!(!pruned.approximate);
    }

    #[test]
    fn pruning_reports_mass_and_converges() {
        let model = scalar_model(&[0.9, 0.46], [0.99, 0.01, 0.01, 0.99], [1.0, 0.0]);
        let det = DetectionModel::new(1.0);
        let exact = skf_slds_moments(&model, &det, 6, &EnumerationOptions::default()).unwrap();
        let mut prev_mass = 0.0;
        for k in [1usize, 2, 4, 8, 16, 64] {
            let res = pruned_moments(
                &model,
                &det,
                6,
                Pruning::KeepTop(k),
                &EnumerationOptions::default(),
            )
            .unwrap();
            let mass = *res.kept_mass.last().unwrap();
            assert!(mass >= prev_mass - 1e-15);
            prev_mass = mass;
            assert!(res.live.iter().all(|&l| l <= k));
        }
        let full = pruned_moments(
            &model,
            &det,
            6,
            Pruning::KeepTop(1 << 12),
            &EnumerationOptions::default(),
        )
        .unwrap();
        assert_eq!(full.mse, exact.mse);
    }

    #[test]
    fn renormalized_pruning_divides_by_mass() {
        let model = scalar_model(&[0.9, 0.46], [0.9, 0.1, 0.3, 0.7], [0.6, 0.4]);
        let det = DetectionModel::new(0.9);
        let raw = pruned_moments(
            &model,
            &det,
            4,
            Pruning::KeepTop(3),
            &EnumerationOptions::default(),
        )
        .unwrap();
        let norm = pruned_moments(
            &model,
            &det,
            4,
            Pruning::KeepTop(3),
            &EnumerationOptions {
                renormalize: true,
                ..Default::default()
            },
        )
        .unwrap();
        for n in 1..=4 {
            assert_abs_diff_eq!(
                norm.mse.at(n) * norm.kept_mass[n],
                raw.mse.at(n),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn detected_path_gains_match_schedule_when_detection_perfect() {
        // With perfect detection the detected path is the true path; the two
        // gain policies differ whenever the path switches modes.
        let model = scalar_model(&[0.9, 0.46], [0.5; 4], [0.5, 0.5]);
        let det = DetectionModel::new(1.0);
        let sched = skf_slds_moments(&model, &det, 5, &EnumerationOptions::default()).unwrap();
        let path = skf_slds_moments(
            &model,
            &det,
            5,
            &EnumerationOptions {
                skf_gains: SkfGainPolicy::DetectedPath,
                ..Default::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(sched.mse.at(1), path.mse.at(1), epsilon = 1e-15);
        // The path-conditioned gain is the optimal KF for each true trajectory.
        for n in 2..=5 {
            assert!(path.mse.at(n) <= sched.mse.at(n) + 1e-12);
        }
    }

    #[test]
    fn aggregation_is_order_invariant() {
        let s = bimodal_4d(0.7);
        let opts = EnumerationOptions {
            keep_leaves: true,
            ..Default::default()
        };
        let res = skf_slds_moments(&s.model, &s.detection, 3, &opts).unwrap();
        let forward = aggregate_weighted(res.leaves.iter().map(|l| (l.prob, &l.moments)), 4, 3);
        let backward =
            aggregate_weighted(res.leaves.iter().rev().map(|l| (l.prob, &l.moments)), 4, 3);
        assert!((&forward.e_cov - &backward.e_cov).norm() < 1e-12);
        assert!((&forward.e_mean - &backward.e_mean).norm() < 1e-12);
        assert_abs_diff_eq!(forward.mse(), res.mse.at(3), epsilon = 1e-12);
    }
}
