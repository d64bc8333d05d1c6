//! Scalable paths: the aggregate moment recursion for mode sequences that are
//! independent across steps, and the pairwise mode-merge recommender.
//!
//! When every row of the transition matrix is the same distribution, the mode
//! at step n is independent of `(x_{n-1}, e_{n-1})`. Each (true mode, filter
//! mode) branch then acts on the mixture through the same linear map it applies
//! to a single trajectory, so propagating the first and second mixture moments
//! `E[x]`, `E[e]`, `E[x xᵀ]`, `E[e eᵀ]`, `E[x eᵀ]` is exact and costs
//! `O(N r² z³)` instead of `O(r^{2N})`.

use crate::error::{Error, Result};
use crate::kalman::{mode_schedules, FilterPlan, GainSchedule};
use crate::linalg::{symmetrize, Matrix, Vector};
use crate::mismatch::ErrorMoments;
use crate::model::{
    mode_marginals, DetectionModel, GaussianBelief, MarkovChain, ModeModel, SldsModel,
};
use crate::MseSeries;

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateState {
    pub step: usize,
    pub x_mean: Vector,
    pub e_mean: Vector,
    /// `E[x xᵀ]`
    pub xx: Matrix,
    /// `E[e eᵀ]`
    pub ee: Matrix,
    /// `E[x eᵀ]`
    pub xe: Matrix,
}

impl AggregateState {
    /// State at step 0: `e_0 = x_0 − x_{0|0}`, so `E[x eᵀ] = P_0`.
    pub fn initial(init: &GaussianBelief) -> Self {
        let z = init.dim();
        Self {
            step: 0,
            x_mean: init.mean.clone(),
            e_mean: Vector::zeros(z),
            xx: &init.cov + &init.mean * init.mean.transpose(),
            ee: init.cov.clone(),
            xe: init.cov.clone(),
        }
    }

    /// `tr E[e eᵀ]`.
    pub fn mse(&self) -> f64 {
        self.ee.trace()
    }

    pub fn e_cov(&self) -> Matrix {
        symmetrize(&(&self.ee - &self.e_mean * self.e_mean.transpose()))
    }

    pub fn x_cov(&self) -> Matrix {
        symmetrize(&(&self.xx - &self.x_mean * self.x_mean.transpose()))
    }

    pub fn to_moments(&self) -> ErrorMoments {
        let x_cov = self.x_cov();
        let cov_ex = (&self.xe - &self.x_mean * self.e_mean.transpose()).transpose();
        ErrorMoments {
            step: self.step,
            e_mean: self.e_mean.clone(),
            e_cov: self.e_cov(),
            x_mean: self.x_mean.clone(),
            u: &x_cov - cov_ex,
            x_cov,
        }
    }
}

/// One branch of the step: truth in `truth`, filter predicting with `filt`
/// and applying `gain`, taken with probability `weight`.
pub struct Branch<'a> {
    pub weight: f64,
    pub truth: &'a ModeModel,
    pub filt: &'a ModeModel,
    pub gain: &'a Matrix,
}

/// Weighted sum over branches of the per-branch linear update
/// `x' = A x + ν`, `e' = J x + B A^d e + B ν − K ω`.
pub fn propagate_branches<'a>(
    prev: &AggregateState,
    meas: &crate::model::MeasurementModel,
    branches: impl IntoIterator<Item = Branch<'a>>,
) -> AggregateState {
    let z = prev.x_mean.len();
    let mut next = AggregateState {
        step: prev.step + 1,
        x_mean: Vector::zeros(z),
        e_mean: Vector::zeros(z),
        xx: Matrix::zeros(z, z),
        ee: Matrix::zeros(z, z),
        xe: Matrix::zeros(z, z),
    };
    for b in branches {
        if b.weight == 0.0 {
            continue;
        }
        let a = &b.truth.a;
        let projector = Matrix::identity(z, z) - b.gain * &meas.h;
        let input = &projector * (a - &b.filt.a);
        let carry = &projector * &b.filt.a;
        let w = b.weight;

        next.x_mean.axpy(w, &(a * &prev.x_mean), 1.0);
        next.e_mean
            .axpy(w, &(&input * &prev.x_mean + &carry * &prev.e_mean), 1.0);
        next.xx += (a * &prev.xx * a.transpose() + &b.truth.q) * w;

        let cross = &input * &prev.xe * carry.transpose();
        let ee = &input * &prev.xx * input.transpose()
            + &carry * &prev.ee * carry.transpose()
            + &cross
            + cross.transpose()
            + &projector * &b.truth.q * projector.transpose()
            + b.gain * &meas.r * b.gain.transpose();
        next.ee += ee * w;

        let xe = a * &prev.xx * input.transpose()
            + a * &prev.xe * carry.transpose()
            + &b.truth.q * projector.transpose();
        next.xe += xe * w;
    }
    next.xx = symmetrize(&next.xx);
    next.ee = symmetrize(&next.ee);
    next
}

fn require_independent_modes(chain: &MarkovChain) -> Result<()> {
    if chain.has_identical_rows(ROW_TOL) {
        Ok(())
    } else {
        Err(Error::NonUniformChain)
    }
}

/// SKF step `n` (one-based): branch (i, j) has weight
/// `P(S_n = i) · P(detect j | i)` and uses mode j's gain `gains[j].gain(n)`.
pub fn aggregate_step(
    prev: &AggregateState,
    model: &SldsModel,
    det: &DetectionModel,
    gains: &[GainSchedule],
) -> Result<AggregateState> {
    require_independent_modes(&model.chain)?;
    let n = prev.step + 1;
    let r = model.num_modes();
    let dist = model.chain.independent_step_distribution(n);
    let dist = &dist;
    let branches = (0..r).flat_map(|i| {
        (0..r).map(move |j| Branch {
            weight: dist[i] * det.step_prob(i, j, r),
            truth: &model.modes[i],
            filt: &model.modes[j],
            gain: gains[j].gain(n),
        })
    });
    Ok(propagate_branches(prev, &model.meas, branches))
}

/// Single-filter step `n`: branch i has weight `P(S_n = i)`.
pub fn aggregate_step_single(
    prev: &AggregateState,
    model: &SldsModel,
    plan: &FilterPlan,
) -> Result<AggregateState> {
    require_independent_modes(&model.chain)?;
    let n = prev.step + 1;
    let dist = model.chain.independent_step_distribution(n);
    let branches = model.modes.iter().enumerate().map(|(i, mode)| Branch {
        weight: dist[i],
        truth: mode,
        filt: plan.mode(n),
        gain: plan.gain(n),
    });
    Ok(propagate_branches(prev, &model.meas, branches))
}

#[derive(Debug, Clone)]
pub struct AggregateResult {
    pub mse: MseSeries,
    /// States for steps 0..=N.
    pub states: Vec<AggregateState>,
}

fn finish(states: Vec<AggregateState>) -> AggregateResult {
    AggregateResult {
        mse: MseSeries::new(states.iter().map(AggregateState::mse).collect()),
        states,
    }
}

/// SKF MSE over `horizon` steps without enumerating trajectories.
pub fn aggregate_series(
    model: &SldsModel,
    det: &DetectionModel,
    horizon: usize,
) -> Result<AggregateResult> {
    require_independent_modes(&model.chain)?;
    let gains = mode_schedules(model, horizon)?;
    let mut states = vec![AggregateState::initial(&model.init)];
    for n in 1..=horizon {
        let next = aggregate_step(&states[n - 1], model, det, &gains)?;
        states.push(next);
    }
    Ok(finish(states))
}

/// Single (possibly time-varying) filter in the SLDS, without enumeration.
pub fn aggregate_series_single(model: &SldsModel, plan: &FilterPlan) -> Result<AggregateResult> {
    require_independent_modes(&model.chain)?;
    let mut states = vec![AggregateState::initial(&model.init)];
    for n in 1..=plan.horizon() {
        let next = aggregate_step_single(&states[n - 1], model, plan)?;
        states.push(next);
    }
    Ok(finish(states))
}

/// Scalar summary of a per-step relative improvement curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImprovementMetric {
    #[default]
    Mean,
    Max,
    Final,
}

/// Which single filters the SKF is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeBaseline {
    /// The better of the two per-mode KFs.
    #[default]
    ModeKfs,
    /// The best of the two per-mode KFs and the average KF.
    ModeKfsOrAverage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeOptions {
    /// Relative MSE improvement below which a pair is merged.
    pub threshold: f64,
    pub metric: ImprovementMetric,
    pub baseline: MergeBaseline,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self {
            threshold: 0.10,
            metric: ImprovementMetric::Mean,
            baseline: MergeBaseline::ModeKfs,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairAnalysis {
    pub mode_i: usize,
    pub mode_j: usize,
    pub skf_mse: MseSeries,
    pub best_single_mse: MseSeries,
    pub best_single_label: String,
    pub improvement: f64,
    pub merge: bool,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct MergeReport {
    pub pairs: Vec<PairAnalysis>,
    /// Modes that end up merged together (connected components of the
    /// pairwise merge decisions), each sorted, ordered by smallest member.
    pub groups: Vec<Vec<usize>>,
    /// Replacement dynamics per group: the marginal-probability weighted
    /// average of its members.
    pub group_modes: Vec<ModeModel>,
    /// Edges between groups that were kept apart.
    pub edges: Vec<(usize, usize)>,
    pub options: MergeOptions,
}

impl MergeReport {
    pub fn recommendation(&self) -> String {
        if self.groups.len() <= 1 {
            "merge all modes: a single-mode KF is sufficient".to_string()
        } else if self.groups.iter().all(|g| g.len() == 1) {
            if self.groups.len() == 2 {
                "keep both; SKF recommended".to_string()
            } else {
                format!("keep all {} modes; SKF recommended", self.groups.len())
            }
        } else {
            format!("reduce to {} modes; SKF recommended", self.groups.len())
        }
    }
}

fn uniform_pair(model: &SldsModel, i: usize, j: usize) -> SldsModel {
    SldsModel {
        modes: vec![model.modes[i].clone(), model.modes[j].clone()],
        meas: model.meas.clone(),
        chain: MarkovChain::new(
            Matrix::from_element(2, 2, 0.5),
            Vector::from_element(2, 0.5),
        ),
        init: model.init.clone(),
    }
}

fn improvement_curve(best: &MseSeries, skf: &MseSeries) -> Vec<f64> {
    (1..best.len())
        .map(|n| {
            let b = best.at(n);
            if b > 0.0 {
                (b - skf.at(n)) / b
            } else {
                0.0
            }
        })
        .collect()
}

fn summarize(curve: &[f64], metric: ImprovementMetric) -> f64 {
    match metric {
        ImprovementMetric::Mean => curve.iter().sum::<f64>() / curve.len().max(1) as f64,
        ImprovementMetric::Max => curve.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ImprovementMetric::Final => curve.last().copied().unwrap_or(0.0),
    }
}

/// Compares the SKF against the best baseline filter (lowest summed MSE over
/// steps 1..=N) on every bimodal sub-system with a uniform pairwise chain.
/// A pair is merged when its relative improvement is below the threshold.
pub fn merge_recommendation(
    model: &SldsModel,
    det: &DetectionModel,
    horizon: usize,
    opts: &MergeOptions,
) -> Result<MergeReport> {
    let MergeOptions {
        threshold, metric, ..
    } = *opts;
    let r = model.num_modes();
    if r < 2 {
        return Err(Error::InvalidArgument(
            "merge analysis needs at least two modes".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }

    let mut pairs = Vec::new();
    for i in 0..r {
        for j in (i + 1)..r {
            let sub = uniform_pair(model, i, j);
            let skf = aggregate_series(&sub, det, horizon)?.mse;
            let mut candidates = vec![
                (
                    format!("KF mode {}", i + 1),
                    FilterPlan::single(&sub, 0, horizon)?,
                ),
                (
                    format!("KF mode {}", j + 1),
                    FilterPlan::single(&sub, 1, horizon)?,
                ),
            ];
            if opts.baseline == MergeBaseline::ModeKfsOrAverage {
                candidates.push((
                    "average KF".to_string(),
                    FilterPlan::average(&sub, horizon)?,
                ));
            }
            let mut best: Option<(String, MseSeries, f64)> = None;
            for (label, plan) in candidates {
                let mse = aggregate_series_single(&sub, &plan)?.mse;
                let score = mse.values[1..].iter().sum::<f64>();
                if best.as_ref().is_none_or(|b| score < b.2) {
                    best = Some((label, mse, score));
                }
            }
            let (best_label, best_mse, _) = best.expect("at least two candidates");
            let improvement = summarize(&improvement_curve(&best_mse, &skf), metric);
            pairs.push(PairAnalysis {
                mode_i: i,
                mode_j: j,
                skf_mse: skf,
                best_single_mse: best_mse,
                best_single_label: best_label,
                improvement,
                merge: improvement < threshold,
                threshold,
            });
        }
    }

    // Union-find over merge decisions.
    let mut parent: Vec<usize> = (0..r).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        parent[x] = root;
        root
    }
    for p in pairs.iter().filter(|p| p.merge) {
        let (a, b) = (find(&mut parent, p.mode_i), find(&mut parent, p.mode_j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_of = vec![0usize; r];
    for m in 0..r {
        let root = find(&mut parent, m);
        match groups.iter().position(|g| g[0] == root) {
            Some(g) => {
                groups[g].push(m);
                group_of[m] = g;
            }
            None => {
                group_of[m] = groups.len();
                groups.push(vec![m]);
            }
        }
    }

    let weights = mean_marginals(&model.chain, horizon)?;
    let z = model.state_dim();
    let group_modes = groups
        .iter()
        .map(|g| {
            let total: f64 = g.iter().map(|&m| weights[m]).sum();
            let mut a = Matrix::zeros(z, z);
            let mut q = Matrix::zeros(z, z);
            for &m in g {
                let w = if total > 0.0 {
                    weights[m] / total
                } else {
                    1.0 / g.len() as f64
                };
                a += &model.modes[m].a * w;
                q += &model.modes[m].q * w;
            }
            ModeModel::new(a, symmetrize(&q))
        })
        .collect();

    let mut edges: Vec<(usize, usize)> = pairs
        .iter()
        .filter(|p| !p.merge)
        .map(|p| (group_of[p.mode_i], group_of[p.mode_j]))
        .filter(|(a, b)| a != b)
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    edges.sort_unstable();
    edges.dedup();

    Ok(MergeReport {
        pairs,
        groups,
        group_modes,
        edges,
        options: *opts,
    })
}

fn mean_marginals(chain: &MarkovChain, horizon: usize) -> Result<Vector> {
    let mut acc = Vector::zeros(chain.num_modes());
    for n in 1..=horizon {
        acc += mode_marginals(chain, n)?;
    }
    Ok(acc / horizon as f64)
}
