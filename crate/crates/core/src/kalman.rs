//! Kalman filter operator, gain schedules and the average-dynamics filter.

use crate::error::{Error, Result};
use crate::linalg::{spd_solve, symmetrize, Matrix, Vector};
use crate::model::{mode_marginals, GaussianBelief, MeasurementModel, ModeModel, SldsModel};

/// Posterior covariance form used by [`kf_update_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceUpdate {
    /// `P = (I − K H) P⁻`.
    #[default]
    Standard,
    /// `P = (I − K H) P⁻ (I − K H)ᵀ + K R Kᵀ`.
    Joseph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanStepOutput {
    pub predicted: GaussianBelief,
    pub posterior: GaussianBelief,
    pub gain: Matrix,
    pub innovation_cov: Matrix,
}

/// Per-step gains `K_1..K_N` with the matching posterior covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub gains: Vec<Matrix>,
    pub covariances: Vec<Matrix>,
}

impl GainSchedule {
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Gain at step `n` (one-based).
    pub fn gain(&self, n: usize) -> &Matrix {
        &self.gains[n - 1]
    }

    /// Posterior covariance `P_{n|n}` at step `n` (one-based).
    pub fn posterior_cov(&self, n: usize) -> &Matrix {
        &self.covariances[n - 1]
    }
}

fn check_mode(belief: &GaussianBelief, mode: &ModeModel) -> Result<()> {
    let z = belief.dim();
    if mode.a.shape() != (z, z) || mode.q.shape() != (z, z) || belief.cov.shape() != (z, z) {
        return Err(Error::dim(
            "kf_predict",
            format!("{z}x{z}"),
            format!(
                "A {:?}, Q {:?}, P {:?}",
                mode.a.shape(),
                mode.q.shape(),
                belief.cov.shape()
            ),
        ));
    }
    Ok(())
}

/// Time update.
pub fn kf_predict(belief: &GaussianBelief, mode: &ModeModel) -> Result<GaussianBelief> {
    check_mode(belief, mode)?;
    let mean = &mode.a * &belief.mean;
    let cov = &mode.a * &belief.cov * mode.a.transpose() + &mode.q;
    Ok(GaussianBelief::new(mean, symmetrize(&cov)))
}

/// Gain and innovation covariance for a predicted covariance. The gain is
/// obtained from a Cholesky solve of the innovation covariance.
pub fn kalman_gain(predicted_cov: &Matrix, meas: &MeasurementModel) -> Result<(Matrix, Matrix)> {
    let h = &meas.h;
    let z = predicted_cov.nrows();
    if h.ncols() != z || meas.r.shape() != (h.nrows(), h.nrows()) {
        return Err(Error::dim(
            "kalman_gain",
            format!("H with {z} columns and square R"),
            format!("H {:?}, R {:?}", h.shape(), meas.r.shape()),
        ));
    }
    let innovation_cov = symmetrize(&(h * predicted_cov * h.transpose() + &meas.r));
    // Kᵀ = B⁻¹ H P, since B and P are symmetric.
    let gain_t = spd_solve(&innovation_cov, &(h * predicted_cov))?;
    Ok((gain_t.transpose(), innovation_cov))
}

fn posterior_cov(
    predicted_cov: &Matrix,
    gain: &Matrix,
    meas: &MeasurementModel,
    form: CovarianceUpdate,
) -> Matrix {
    let z = predicted_cov.nrows();
    let projector = Matrix::identity(z, z) - gain * &meas.h;
    let cov = match form {
        CovarianceUpdate::Standard => &projector * predicted_cov,
        CovarianceUpdate::Joseph => {
            &projector * predicted_cov * projector.transpose() + gain * &meas.r * gain.transpose()
        }
    };
    symmetrize(&cov)
}

/// Measurement update with the standard covariance form.
pub fn kf_update(
    predicted: &GaussianBelief,
    meas: &MeasurementModel,
    y: &Vector,
) -> Result<KalmanStepOutput> {
    kf_update_with(predicted, meas, y, CovarianceUpdate::Standard)
}

pub fn kf_update_with(
    predicted: &GaussianBelief,
    meas: &MeasurementModel,
    y: &Vector,
    form: CovarianceUpdate,
) -> Result<KalmanStepOutput> {
    if y.len() != meas.h.nrows() {
        return Err(Error::dim("kf_update", meas.h.nrows(), y.len()));
    }
    let (gain, innovation_cov) = kalman_gain(&predicted.cov, meas)?;
    let innovation = y - &meas.h * &predicted.mean;
    let mean = &predicted.mean + &gain * innovation;
    let cov = posterior_cov(&predicted.cov, &gain, meas, form);
    Ok(KalmanStepOutput {
        predicted: predicted.clone(),
        posterior: GaussianBelief::new(mean, cov),
        gain,
        innovation_cov,
    })
}

/// One covariance-only Riccati step: returns `(K_n, P_{n|n})`.
pub fn riccati_step(
    prev_cov: &Matrix,
    mode: &ModeModel,
    meas: &MeasurementModel,
) -> Result<(Matrix, Matrix)> {
    let predicted = symmetrize(&(&mode.a * prev_cov * mode.a.transpose() + &mode.q));
    let (gain, _) = kalman_gain(&predicted, meas)?;
    let cov = posterior_cov(&predicted, &gain, meas, CovarianceUpdate::Standard);
    Ok((gain, cov))
}

/// Gains of a filter that uses `mode` at every step for `horizon` steps.
/// Gains depend only on the covariance recursion, never on measurements.
pub fn gain_schedule(
    mode: &ModeModel,
    meas: &MeasurementModel,
    init: &GaussianBelief,
    horizon: usize,
) -> Result<GainSchedule> {
    gain_schedule_varying(std::iter::repeat_n(mode, horizon), meas, init)
}

/// Gains of a filter whose model at step n is the n-th item of `modes`.
pub fn gain_schedule_varying<'a>(
    modes: impl IntoIterator<Item = &'a ModeModel>,
    meas: &MeasurementModel,
    init: &GaussianBelief,
) -> Result<GainSchedule> {
    let mut cov = init.cov.clone();
    let mut gains = Vec::new();
    let mut covariances = Vec::new();
    for mode in modes {
        check_mode(init, mode)?;
        let (k, p) = riccati_step(&cov, mode, meas)?;
        gains.push(k);
        covariances.push(p.clone());
        cov = p;
    }
    Ok(GainSchedule { gains, covariances })
}

/// Mixture of the mode dynamics weighted by the step-`n` mode marginals;
/// both `A` and `Q` are averaged with the same weights.
pub fn average_mode(model: &SldsModel, n: usize) -> Result<ModeModel> {
    let weights = mode_marginals(&model.chain, n)?;
    let z = model.state_dim();
    let mut a = Matrix::zeros(z, z);
    let mut q = Matrix::zeros(z, z);
    for (w, mode) in weights.iter().zip(&model.modes) {
        a += &mode.a * *w;
        q += &mode.q * *w;
    }
    Ok(ModeModel::new(a, symmetrize(&q)))
}

/// The average filter's model at each step 1..=horizon.
pub fn average_modes(model: &SldsModel, horizon: usize) -> Result<Vec<ModeModel>> {
    (1..=horizon).map(|n| average_mode(model, n)).collect()
}

/// A (possibly time-varying) single filter: its model and gain at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPlan {
    pub modes: Vec<ModeModel>,
    pub schedule: GainSchedule,
}

impl FilterPlan {
    /// Filter using `mode` at every step.
    pub fn fixed(
        mode: &ModeModel,
        meas: &MeasurementModel,
        init: &GaussianBelief,
        horizon: usize,
    ) -> Result<Self> {
        Ok(Self {
            modes: vec![mode.clone(); horizon],
            schedule: gain_schedule(mode, meas, init, horizon)?,
        })
    }

    /// Filter built on mode `j` of the SLDS.
    pub fn single(model: &SldsModel, j: usize, horizon: usize) -> Result<Self> {
        let mode = model
            .modes
            .get(j)
            .ok_or_else(|| Error::InvalidArgument(format!("mode {} does not exist", j + 1)))?;
        Self::fixed(mode, &model.meas, &model.init, horizon)
    }

    /// The average filter.
    pub fn average(model: &SldsModel, horizon: usize) -> Result<Self> {
        let modes = average_modes(model, horizon)?;
        let schedule = gain_schedule_varying(&modes, &model.meas, &model.init)?;
        Ok(Self { modes, schedule })
    }

    pub fn horizon(&self) -> usize {
        self.modes.len()
    }

    /// Model used at step `n` (one-based).
    pub fn mode(&self, n: usize) -> &ModeModel {
        &self.modes[n - 1]
    }

    pub fn gain(&self, n: usize) -> &Matrix {
        self.schedule.gain(n)
    }
}

/// Standalone gain schedule of every mode of the SLDS.
pub fn mode_schedules(model: &SldsModel, horizon: usize) -> Result<Vec<GainSchedule>> {
    model
        .modes
        .iter()
        .map(|m| gain_schedule(m, &model.meas, &model.init, horizon))
        .collect()
}
