//! Monte Carlo ground truth for every analytic error series.
//!
//! Random streams: sample `s` draws its trajectory from
//! `ChaCha8Rng::seed_from_u64(seed)` switched to stream `s`; the detector of
//! filter `f` uses `ChaCha8Rng::seed_from_u64(seed + (f + 1)·0x9E3779B97F4A7C15)`
//! on stream `s`. Samples are grouped into fixed blocks of
//! [`BLOCK_SIZE`]; blocks run in parallel and are merged in block order, so
//! results are identical for any number of worker threads.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::enumeration::SkfGainPolicy;
use crate::error::{Error, Result};
use crate::kalman::{mode_schedules, riccati_step, FilterPlan, GainSchedule};
use crate::linalg::{symmetrize, Matrix, Vector};
use crate::model::{DetectionModel, FilterKind, FilterSpec, SldsModel};

pub const BLOCK_SIZE: usize = 256;
const DETECTOR_STREAM_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Draws from `N(0, C)` for a PSD `C` (possibly singular) via `V √Λ`.
#[derive(Debug, Clone)]
struct GaussianFactor {
    factor: Matrix,
}

impl GaussianFactor {
    fn new(cov: &Matrix) -> Self {
        let eig = SymmetricEigen::new(symmetrize(cov));
        let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        Self {
            factor: &eig.eigenvectors * Matrix::from_diagonal(&sqrt),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let n = self.factor.ncols();
        let w = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * w
    }
}

fn categorical<R: Rng + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// One simulated SLDS run. `modes[n-1]` and `measurements[n-1]` belong to
/// step n; `states[n]` is `x_n` for n = 0..=N.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub modes: Vec<usize>,
    pub states: Vec<Vector>,
    pub measurements: Vec<Vector>,
}

/// Precomputed noise factors for repeated simulation of one model.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    model: &'a SldsModel,
    init: GaussianFactor,
    process: Vec<GaussianFactor>,
    meas: GaussianFactor,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a SldsModel) -> Self {
        Self {
            model,
            init: GaussianFactor::new(&model.init.cov),
            process: model
                .modes
                .iter()
                .map(|m| GaussianFactor::new(&m.q))
                .collect(),
            meas: GaussianFactor::new(&model.meas.r),
        }
    }

    pub fn simulate<R: Rng + ?Sized>(&self, horizon: usize, rng: &mut R) -> SimOutput {
        let m = self.model;
        let mut modes = Vec::with_capacity(horizon);
        let mut states = Vec::with_capacity(horizon + 1);
        let mut measurements = Vec::with_capacity(horizon);
        states.push(&m.init.mean + self.init.sample(rng));
        for n in 1..=horizon {
            let mode = match modes.last() {
                None => categorical(m.chain.prior.iter().copied(), rng),
                Some(&prev) => categorical(m.chain.transition.row(prev).iter().copied(), rng),
            };
            let x = &m.modes[mode].a * &states[n - 1] + self.process[mode].sample(rng);
            let y = &m.meas.h * &x + self.meas.sample(rng);
            modes.push(mode);
            states.push(x);
            measurements.push(y);
        }
        SimOutput {
            modes,
            states,
            measurements,
        }
    }
}

/// Draws a mode sequence, a state sequence and a measurement sequence.
pub fn simulate_slds<R: Rng + ?Sized>(model: &SldsModel, horizon: usize, rng: &mut R) -> SimOutput {
    Simulator::new(model).simulate(horizon, rng)
}

/// A filter ready to run on simulated data.
#[derive(Debug, Clone)]
pub enum FilterRunner {
    Plan(FilterPlan),
    Skf {
        det: DetectionModel,
        schedules: Vec<GainSchedule>,
        policy: SkfGainPolicy,
    },
}

impl FilterRunner {
    pub fn from_spec(
        model: &SldsModel,
        spec: &FilterSpec,
        det: &DetectionModel,
        horizon: usize,
        policy: SkfGainPolicy,
    ) -> Result<Self> {
        Ok(match spec.kind {
            FilterKind::SingleMode(j) => Self::Plan(FilterPlan::single(model, j, horizon)?),
            FilterKind::Average => Self::Plan(FilterPlan::average(model, horizon)?),
            FilterKind::Skf => Self::Skf {
                det: *det,
                schedules: mode_schedules(model, horizon)?,
                policy,
            },
        })
    }
}

fn detect<R: Rng + ?Sized>(truth: usize, r: usize, p_d: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if r == 1 || u < p_d {
        truth
    } else {
        let k = rng.random_range(0..r - 1);
        if k >= truth {
            k + 1
        } else {
            k
        }
    }
}

/// Runs `filter` on the measurements of `sim` and returns `e_n = x_n − x̂_{n|n}`
/// for n = 0..=N. `det_rng` drives the SKF's simulated detector.
pub fn run_filter_on_sim<R: Rng + ?Sized>(
    model: &SldsModel,
    sim: &SimOutput,
    filter: &FilterRunner,
    det_rng: &mut R,
) -> Result<Vec<Vector>> {
    let horizon = sim.measurements.len();
    let h = &model.meas.h;
    let mut estimate = model.init.mean.clone();
    let mut errors = Vec::with_capacity(horizon + 1);
    errors.push(&sim.states[0] - &estimate);
    let mut path_cov = model.init.cov.clone();
    for n in 1..=horizon {
        let y = &sim.measurements[n - 1];
        let (a, gain) = match filter {
            FilterRunner::Plan(plan) => {
                if plan.horizon() < n {
                    return Err(Error::InvalidArgument(
                        "filter plan shorter than simulation".into(),
                    ));
                }
                (&plan.mode(n).a, plan.gain(n).clone())
            }
            FilterRunner::Skf {
                det,
                schedules,
                policy,
            } => {
                let r = model.num_modes();
                let j = detect(sim.modes[n - 1], r, det.p_d, det_rng);
                let gain = match policy {
                    SkfGainPolicy::ModeSchedule => schedules[j].gain(n).clone(),
                    SkfGainPolicy::DetectedPath => {
                        let (k, p) = riccati_step(&path_cov, &model.modes[j], &model.meas)?;
                        path_cov = p;
                        k
                    }
                };
                (&model.modes[j].a, gain)
            }
        };
        let predicted = a * &estimate;
        estimate = &predicted + &gain * (y - h * &predicted);
        errors.push(&sim.states[n] - &estimate);
    }
    Ok(errors)
}

/// Per-step running sums for one filter.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub seed: u64,
    pub samples: usize,
    pub sum_e: Vec<Vector>,
    pub sum_ee: Vec<Matrix>,
    /// Σ ‖e‖²
    pub sum_sq: Vec<f64>,
    /// Σ ‖e‖⁴
    pub sum_sq2: Vec<f64>,
}

impl SimRun {
    fn new(seed: u64, horizon: usize, z: usize) -> Self {
        Self {
            seed,
            samples: 0,
            sum_e: vec![Vector::zeros(z); horizon + 1],
            sum_ee: vec![Matrix::zeros(z, z); horizon + 1],
            sum_sq: vec![0.0; horizon + 1],
            sum_sq2: vec![0.0; horizon + 1],
        }
    }

    fn add(&mut self, errors: &[Vector]) {
        self.samples += 1;
        for (n, e) in errors.iter().enumerate() {
            let sq = e.norm_squared();
            self.sum_e[n] += e;
            self.sum_ee[n] += e * e.transpose();
            self.sum_sq[n] += sq;
            self.sum_sq2[n] += sq * sq;
        }
    }

    fn merge(&mut self, other: &SimRun) {
        self.samples += other.samples;
        for n in 0..self.sum_sq.len() {
            self.sum_e[n] += &other.sum_e[n];
            self.sum_ee[n] += &other.sum_ee[n];
            self.sum_sq[n] += other.sum_sq[n];
            self.sum_sq2[n] += other.sum_sq2[n];
        }
    }

    /// Sample mean of `e_n`.
    pub fn error_mean(&self, n: usize) -> Vector {
        &self.sum_e[n] / self.samples as f64
    }

    /// Sample covariance of `e_n` (denominator S − 1).
    pub fn error_cov(&self, n: usize) -> Matrix {
        let s = self.samples as f64;
        let mean = self.error_mean(n);
        (&self.sum_ee[n] - &mean * mean.transpose() * s) / (s - 1.0)
    }

    pub fn empirical_mse(&self) -> EmpiricalMse {
        EmpiricalMse::from_sums(self.samples, &self.sum_sq, &self.sum_sq2)
    }
}

/// Per-step empirical MSE with the standard error of the mean of ‖e‖².
/// With a single sample the standard error is NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMse {
    pub mse: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl EmpiricalMse {
    fn from_sums(samples: usize, sum_sq: &[f64], sum_sq2: &[f64]) -> Self {
        let s = samples as f64;
        let mse: Vec<f64> = sum_sq.iter().map(|v| v / s).collect();
        let stderr = sum_sq
            .iter()
            .zip(sum_sq2)
            .map(|(a, b)| {
                if samples < 2 {
                    f64::NAN
                } else {
                    let var = ((b - a * a / s) / (s - 1.0)).max(0.0);
                    (var / s).sqrt()
                }
            })
            .collect();
        Self { mse, stderr }
    }
}

/// Empirical MSE from raw errors, indexed `[sample][step]`.
pub fn empirical_mse(errors: &[Vec<Vector>]) -> EmpiricalMse {
    let steps = errors.first().map_or(0, Vec::len);
    let mut sum_sq = vec![0.0; steps];
    let mut sum_sq2 = vec![0.0; steps];
    for sample in errors {
        for (n, e) in sample.iter().enumerate() {
            let sq = e.norm_squared();
            sum_sq[n] += sq;
            sum_sq2[n] += sq * sq;
        }
    }
    EmpiricalMse::from_sums(errors.len(), &sum_sq, &sum_sq2)
}

#[derive(Debug, Clone)]
pub struct McResult {
    pub runs: Vec<SimRun>,
    /// `mode_counts[n-1][i]`: samples in mode i at step n.
    pub mode_counts: Vec<Vec<u64>>,
}

struct BlockAccum {
    runs: Vec<SimRun>,
    mode_counts: Vec<Vec<u64>>,
}

fn sample_rng(seed: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    rng
}

fn detector_rng(seed: u64, filter: usize, sample: u64) -> ChaCha8Rng {
    let key = seed.wrapping_add((filter as u64 + 1).wrapping_mul(DETECTOR_STREAM_OFFSET));
    sample_rng(key, sample)
}

/// Simulates `samples` independent runs and applies every filter to each
/// run (common random numbers across filters).
pub fn run_monte_carlo(
    model: &SldsModel,
    filters: &[FilterRunner],
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<McResult> {
    if samples == 0 {
        return Err(Error::InvalidArgument("mc_samples must be >= 1".into()));
    }
    let z = model.state_dim();
    let r = model.num_modes();
    let sim = Simulator::new(model);
    let blocks = samples.div_ceil(BLOCK_SIZE);

    let partials: Vec<BlockAccum> = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<BlockAccum> {
            let mut acc = BlockAccum {
                runs: vec![SimRun::new(seed, horizon, z); filters.len()],
                mode_counts: vec![vec![0; r]; horizon],
            };
            let end = ((b + 1) * BLOCK_SIZE).min(samples);
            for s in (b * BLOCK_SIZE)..end {
                let s = s as u64;
                let out = sim.simulate(horizon, &mut sample_rng(seed, s));
                for (n, &m) in out.modes.iter().enumerate() {
                    acc.mode_counts[n][m] += 1;
                }
                for (f, filter) in filters.iter().enumerate() {
                    let errors =
                        run_filter_on_sim(model, &out, filter, &mut detector_rng(seed, f, s))?;
                    acc.runs[f].add(&errors);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut runs = vec![SimRun::new(seed, horizon, z); filters.len()];
    let mut mode_counts = vec![vec![0u64; r]; horizon];
    for part in &partials {
        for (total, run) in runs.iter_mut().zip(&part.runs) {
            total.merge(run);
        }
        for (total, counts) in mode_counts.iter_mut().zip(&part.mode_counts) {
            for (t, c) in total.iter_mut().zip(counts) {
                *t += c;
            }
        }
    }
    Ok(McResult { runs, mode_counts })
}
