//! Exact error moments of a Kalman filter whose dynamics `(A^d, Q^d)` differ
//! from the true single-mode dynamics `(A, Q)`.
//!
//! With `B = I − K H` (the residual projector) and `J = B (A − A^d)`, the
//! error `e_n = x_n − x̂_{n|n}` obeys
//!
//! ```text
//! e_n = J x_{n-1} + B A^d e_{n-1} + B ν_n − K ω_n
//! ```
//!
//! so its first two moments follow from those of `x_{n-1}`, `e_{n-1}` and
//! the cross-covariance `u_{n-1} = C(x̂_{n-1}, x_{n-1})`.

use crate::error::{Error, Result};
use crate::kalman::gain_schedule;
use crate::linalg::{symmetrize, Matrix, Vector};
use crate::model::{GaussianBelief, MeasurementModel, ModeModel};
use crate::MseSeries;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMoments {
    pub step: usize,
    /// `E[e_n]`
    pub e_mean: Vector,
    /// `C(e_n)`
    pub e_cov: Matrix,
    /// `E[x_n]`
    pub x_mean: Vector,
    /// `C(x_n)`
    pub x_cov: Matrix,
    /// `u_n = C(x̂_{n|n}, x_n)`; not symmetric in general.
    pub u: Matrix,
}

impl ErrorMoments {
    /// `E[e]ᵀE[e] + tr C(e)`.
    pub fn mse(&self) -> f64 {
        self.e_mean.norm_squared() + self.e_cov.trace()
    }

    /// `E[e eᵀ]`.
    pub fn second_moment(&self) -> Matrix {
        &self.e_cov + &self.e_mean * self.e_mean.transpose()
    }

    /// `C(e_n, x_n) = C(x_n) − u_n`.
    pub fn cross_cov_ex(&self) -> Matrix {
        &self.x_cov - &self.u
    }

    /// Cauchy–Schwarz check on the stored cross-covariance.
    pub fn cross_cov_consistent(&self, tol: f64) -> bool {
        let c = self.cross_cov_ex();
        let spectral = c.clone().svd(false, false).singular_values.max();
        spectral <= (self.e_cov.trace().max(0.0) * self.x_cov.trace().max(0.0)).sqrt() + tol
    }
}

/// Moments at step 0: the filter starts at the prior mean, so
/// `e_0 ~ N(0, P_0)`, `x_0 ~ N(x_{0|0}, P_0)` and `u_0 = 0`.
pub fn mismatch_init(init: &GaussianBelief) -> ErrorMoments {
    let z = init.dim();
    ErrorMoments {
        step: 0,
        e_mean: Vector::zeros(z),
        e_cov: init.cov.clone(),
        x_mean: init.mean.clone(),
        x_cov: init.cov.clone(),
        u: Matrix::zeros(z, z),
    }
}

/// Advances the moments one step with the truth in mode `truth` and the filter
/// predicting with `filt` and applying gain `gain`.
pub fn mismatch_step(
    prev: &ErrorMoments,
    truth: &ModeModel,
    filt: &ModeModel,
    meas: &MeasurementModel,
    gain: &Matrix,
) -> Result<ErrorMoments> {
    let z = prev.x_mean.len();
    let m = meas.h.nrows();
    if truth.a.shape() != (z, z) || filt.a.shape() != (z, z) || truth.q.shape() != (z, z) {
        return Err(Error::dim(
            "mismatch_step",
            format!("{z}x{z} dynamics"),
            format!(
                "truth A {:?}, filter A {:?}",
                truth.a.shape(),
                filt.a.shape()
            ),
        ));
    }
    if gain.shape() != (z, m) || meas.h.shape() != (m, z) {
        return Err(Error::dim(
            "mismatch_step",
            format!("{z}x{m} gain"),
            format!("{:?}", gain.shape()),
        ));
    }

    let a = &truth.a;
    let kh = gain * &meas.h;
    let projector = Matrix::identity(z, z) - &kh;
    let input = &projector * (a - &filt.a);
    let carry = &projector * &filt.a;

    let x_mean = a * &prev.x_mean;
    let x_cov = symmetrize(&(a * &prev.x_cov * a.transpose() + &truth.q));
    let e_mean = &input * &prev.x_mean + &carry * &prev.e_mean;

    let a_xcov_at = a * &prev.x_cov * a.transpose();
    let u = &carry * &prev.u * a.transpose() + &kh * &a_xcov_at + &kh * &truth.q;

    let cov_xe = prev.cross_cov_ex().transpose();
    let cross = &input * cov_xe * carry.transpose();
    let e_cov = gain * &meas.r * gain.transpose()
        + &input * &prev.x_cov * input.transpose()
        + &projector * &truth.q * projector.transpose()
        + &carry * &prev.e_cov * carry.transpose()
        + &cross
        + cross.transpose();

    Ok(ErrorMoments {
        step: prev.step + 1,
        e_mean,
        e_cov: symmetrize(&e_cov),
        x_mean,
        x_cov,
        u,
    })
}

/// Moments for steps `0..=horizon` of a filter built on `filt` applied to
/// truth `truth`, using the filter's own gain schedule.
pub fn mismatch_series(
    truth: &ModeModel,
    filt: &ModeModel,
    meas: &MeasurementModel,
    init: &GaussianBelief,
    horizon: usize,
) -> Result<(Vec<ErrorMoments>, MseSeries)> {
    let schedule = gain_schedule(filt, meas, init, horizon)?;
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(mismatch_init(init));
    for n in 1..=horizon {
        let next = mismatch_step(&out[n - 1], truth, filt, meas, schedule.gain(n))?;
        out.push(next);
    }
    let mse = MseSeries::new(out.iter().map(ErrorMoments::mse).collect());
    Ok((out, mse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::scaled_identity;
    use crate::scenario::bimodal_4d;
    use approx::assert_abs_diff_eq;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn scalar_setup() -> (ModeModel, ModeModel, MeasurementModel, GaussianBelief) {
        (
            ModeModel::new(scalar(0.9), scalar(0.01)),
            ModeModel::new(scalar(0.46), scalar(0.01)),
            MeasurementModel::new(scalar(1.0), scalar(0.01)),
            GaussianBelief::new(Vector::from_element(1, 1.0), scalar(1.0)),
        )
    }

    #[test]
    fn init_matches_prior() {
        let s = bimodal_4d(0.9);
        let m = mismatch_init(&s.model.init);
        assert_eq!(m.e_mean, Vector::zeros(4));
        assert_eq!(m.e_cov, scaled_identity(4, 1.0));
        assert_eq!(m.x_mean, Vector::from_element(4, 1.0));
        assert_eq!(m.x_cov, scaled_identity(4, 1.0));
        assert_eq!(m.u, Matrix::zeros(4, 4));
        assert_abs_diff_eq!(m.mse(), 4.0);
    }

    #[test]
    fn deterministic_start_has_zero_covariances() {
        let init = GaussianBelief::new(Vector::from_element(2, 3.0), Matrix::zeros(2, 2));
        let m = mismatch_init(&init);
        assert_eq!(m.e_cov, Matrix::zeros(2, 2));
        assert_eq!(m.x_cov, Matrix::zeros(2, 2));
    }

    #[test]
    fn matched_filter_is_unbiased_with_kalman_covariance() {
        let s = bimodal_4d(0.9);
        let mode = &s.model.modes[0];
        let (moments, mse) = mismatch_series(mode, mode, &s.model.meas, &s.model.init, 20).unwrap();
        let sched = gain_schedule(mode, &s.model.meas, &s.model.init, 20).unwrap();
        for n in 1..=20 {
            assert!(moments[n].e_mean.norm() < 1e-12);
            assert!((&moments[n].e_cov - sched.posterior_cov(n)).norm() < 1e-12);
            assert_abs_diff_eq!(mse.at(n), sched.posterior_cov(n).trace(), epsilon = 1e-10);
        }
    }

    #[test]
    fn equal_dynamics_different_noise_stays_unbiased() {
        let (truth, _, meas, init) = scalar_setup();
        let filt = ModeModel::new(truth.a.clone(), scalar(0.5));
        let (moments, _) = mismatch_series(&truth, &filt, &meas, &init, 30).unwrap();
        for m in &moments {
            assert!(m.e_mean.norm() < 1e-15);
        }
    }

    #[test]
    fn one_step_scalar_by_hand() {
        // K = 0.2216/0.2316 for the A^d = 0.46 filter, B = 1 − K.
        let (truth, filt, meas, init) = scalar_setup();
        let (moments, _) = mismatch_series(&truth, &filt, &meas, &init, 1).unwrap();
        let k: f64 = 0.2216 / 0.2316;
        let b = 1.0 - k;
        let e_mean = b * 0.44;
        let e_var = k * k * 0.01
            + (b * 0.44).powi(2)
            + b * b * 0.01
            + (b * 0.46).powi(2)
            + 2.0 * (b * 0.44) * (b * 0.46);
        assert_abs_diff_eq!(moments[1].e_mean[0], e_mean, epsilon = 1e-14);
        assert_abs_diff_eq!(moments[1].e_cov[(0, 0)], e_var, epsilon = 1e-14);
        assert_abs_diff_eq!(moments[1].x_cov[(0, 0)], 0.82, epsilon = 1e-14);
    }

    #[test]
    fn linear_in_initial_mean() {
        let s = bimodal_4d(0.9);
        let (truth, filt) = (&s.model.modes[0], &s.model.modes[1]);
        let mut init2 = s.model.init.clone();
        init2.mean *= 2.0;
        let (m1, _) = mismatch_series(truth, filt, &s.model.meas, &s.model.init, 15).unwrap();
        let (m2, _) = mismatch_series(truth, filt, &s.model.meas, &init2, 15).unwrap();
        for (a, b) in m1.iter().zip(&m2) {
            assert!((&a.e_mean * 2.0 - &b.e_mean).norm() < 1e-13);
            assert!((&a.e_cov - &b.e_cov).norm() < 1e-13);
        }
    }

    #[test]
    fn cross_covariance_is_consistent() {
        let s = bimodal_4d(0.9);
        let (moments, mse) = mismatch_series(
            &s.model.modes[1],
            &s.model.modes[0],
            &s.model.meas,
            &s.model.init,
            25,
        )
        .unwrap();
        for m in &moments {
            assert!(m.cross_cov_consistent(1e-9));
        }
        assert!(mse.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn bad_gain_shape_rejected() {
        let (truth, filt, meas, init) = scalar_setup();
        let prev = mismatch_init(&init);
        assert!(mismatch_step(&prev, &truth, &filt, &meas, &Matrix::zeros(2, 1)).is_err());
    }
}
