//! SLDS data model, detection model and scenario container.
//!
//! Conventions: the transition matrix `Z` is row-stochastic,
//! `Z[i][j] = P(S_n = j | S_{n-1} = i)`, and the prior is the row vector
//! `P(S_1 = i)`. Mode indices are zero-based in the API and one-based in
//! scenario documents.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, min_eigenvalue, Matrix, Vector};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Dynamics of one mode: `x_n = A x_{n-1} + ν_n`, `ν_n ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeModel {
    pub a: Matrix,
    pub q: Matrix,
}

impl ModeModel {
    pub fn new(a: Matrix, q: Matrix) -> Self {
        Self { a, q }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Shared measurement model: `y_n = H x_n + ω_n`, `ω_n ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub h: Matrix,
    pub r: Matrix,
}

impl MeasurementModel {
    pub fn new(h: Matrix, r: Matrix) -> Self {
        Self { h, r }
    }

    pub fn meas_dim(&self) -> usize {
        self.h.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianBelief {
    pub fn new(mean: Vector, cov: Matrix) -> Self {
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub transition: Matrix,
    pub prior: Vector,
}

impl MarkovChain {
    pub fn new(transition: Matrix, prior: Vector) -> Self {
        Self { transition, prior }
    }

    pub fn num_modes(&self) -> usize {
        self.prior.len()
    }

    /// True when every row of the transition matrix is the same distribution,
    /// i.e. the mode at step n ≥ 2 does not depend on earlier modes.
    pub fn has_identical_rows(&self, tol: f64) -> bool {
        let z = &self.transition;
        (1..z.nrows()).all(|i| (0..z.ncols()).all(|j| (z[(i, j)] - z[(0, j)]).abs() <= tol))
    }

    /// Distribution of `S_n` when modes are independent across steps: the
    /// prior at n = 1 and the common transition row afterwards.
    pub(crate) fn independent_step_distribution(&self, n: usize) -> Vector {
        if n <= 1 {
            self.prior.clone()
        } else {
            self.transition.row(0).transpose()
        }
    }
}

/// Probability of each mode at step `n` (n ≥ 1): `prior · Z^{n-1}`.
pub fn mode_marginals(chain: &MarkovChain, n: usize) -> Result<Vector> {
    if n == 0 {
        return Err(Error::ZeroStep);
    }
    let zt = chain.transition.transpose();
    let mut p = chain.prior.clone();
    for _ in 1..n {
        p = &zt * p;
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SldsModel {
    pub modes: Vec<ModeModel>,
    pub meas: MeasurementModel,
    pub chain: MarkovChain,
    pub init: GaussianBelief,
}

impl SldsModel {
    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.init.dim()
    }

    pub fn meas_dim(&self) -> usize {
        self.meas.meas_dim()
    }
}

/// How a false detection picks the reported mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConfusionPolicy {
    /// Uniform over the r − 1 wrong modes.
    #[default]
    UniformOverWrong,
}

/// Constant-rate mode detector: the SKF reports the true mode with
/// probability `p_d` at every step, independently of everything else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionModel {
    pub p_d: f64,
    pub confusion: ConfusionPolicy,
}

impl DetectionModel {
    pub fn new(p_d: f64) -> Self {
        Self {
            p_d,
            confusion: ConfusionPolicy::UniformOverWrong,
        }
    }

    /// P(detected = `detected` | true = `truth`) for one step.
    pub fn step_prob(&self, truth: usize, detected: usize, num_modes: usize) -> f64 {
        if num_modes <= 1 {
            // A single mode can only be detected correctly.
            if truth == detected {
                1.0
            } else {
                0.0
            }
        } else if truth == detected {
            self.p_d
        } else {
            (1.0 - self.p_d) / (num_modes - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    /// Standard KF built on mode `j` (zero-based).
    SingleMode(usize),
    /// KF on the marginal-probability weighted average of all modes.
    Average,
    /// Switching KF driven by the constant-rate detector.
    Skf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub label: String,
}

impl FilterSpec {
    pub fn new(kind: FilterKind) -> Self {
        let label = match kind {
            FilterKind::SingleMode(j) => format!("KF mode {}", j + 1),
            FilterKind::Average => "average KF".to_string(),
            FilterKind::Skf => "SKF".to_string(),
        };
        Self { kind, label }
    }

    pub fn with_label(kind: FilterKind, label: impl Into<String>) -> Self {
        Self {
            kind,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub sym_tol: f64,
    pub psd_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sym_tol: 1e-9,
            psd_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: SldsModel,
    pub horizon: usize,
    pub detection: DetectionModel,
    pub filters: Vec<FilterSpec>,
    pub mc_samples: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    pub(crate) fn push(&mut self, code: &'static str, message: impl Into<String>) {
        self.violations.push(Violation {
            code,
            message: message.into(),
        });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Invalid(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  [{}] {}", v.code, v.message)?;
        }
        Ok(())
    }
}

fn check_shape(
    report: &mut ValidationReport,
    what: &str,
    m: &Matrix,
    rows: usize,
    cols: usize,
) -> bool {
    if m.nrows() != rows || m.ncols() != cols {
        report.push(
            "dimension",
            format!(
                "{what} is {}x{}, expected {rows}x{cols}",
                m.nrows(),
                m.ncols()
            ),
        );
        false
    } else {
        true
    }
}

fn check_covariance(
    report: &mut ValidationReport,
    what: &str,
    c: &Matrix,
    tol: &Tolerances,
    strictly_positive: bool,
) {
    let asym = asymmetry(c);
    if asym > tol.sym_tol {
        report.push(
            "symmetric",
            format!("{what} is not symmetric (max asymmetry {asym:e})"),
        );
    }
    let min_eig = min_eigenvalue(c);
    if strictly_positive {
        if min_eig <= 0.0 {
            report.push(
                "positive-definite",
                format!("{what} must be positive definite (smallest eigenvalue {min_eig:e})"),
            );
        }
    } else if min_eig < -tol.psd_tol {
        report.push(
            "psd",
            format!("{what} is not positive semidefinite (smallest eigenvalue {min_eig:e})"),
        );
    }
}

fn check_distribution(report: &mut ValidationReport, code: &'static str, what: &str, p: &[f64]) {
    if p.iter().any(|v| !(0.0..=1.0).contains(v) || v.is_nan()) {
        report.push(
            "probability-range",
            format!("{what} has entries outside [0, 1]"),
        );
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        report.push(code, format!("{what} sums to {sum}, expected 1"));
    }
}

/// Validates the SLDS alone; appended to by [`validate_scenario`].
pub fn validate_model(model: &SldsModel, tol: &Tolerances) -> ValidationReport {
    let mut report = ValidationReport::default();
    let z = model.init.mean.len();
    let m = model.meas.h.nrows();
    let r = model.modes.len();

    if r == 0 {
        report.push("empty-modes", "at least one mode is required");
    }
    if check_shape(&mut report, "init.cov", &model.init.cov, z, z) {
        check_covariance(&mut report, "init.cov", &model.init.cov, tol, false);
    }
    for (i, mode) in model.modes.iter().enumerate() {
        check_shape(&mut report, &format!("mode {} A", i + 1), &mode.a, z, z);
        if check_shape(&mut report, &format!("mode {} Q", i + 1), &mode.q, z, z) {
            check_covariance(
                &mut report,
                &format!("mode {} Q", i + 1),
                &mode.q,
                tol,
                false,
            );
        }
    }
    check_shape(&mut report, "H", &model.meas.h, m, z);
    if check_shape(&mut report, "R", &model.meas.r, m, m) {
        check_covariance(&mut report, "R", &model.meas.r, tol, true);
    }

    let chain = &model.chain;
    if check_shape(&mut report, "Z", &chain.transition, r, r) {
        for i in 0..r {
            let row: Vec<f64> = chain.transition.row(i).iter().copied().collect();
            check_distribution(
                &mut report,
                "row-stochastic",
                &format!("row {} of Z", i + 1),
                &row,
            );
        }
    }
    if chain.prior.len() != r {
        report.push(
            "dimension",
            format!("prior has {} entries, expected {r}", chain.prior.len()),
        );
    } else {
        check_distribution(&mut report, "prior-sum", "prior", chain.prior.as_slice());
    }
    report
}

pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut report = validate_model(&s.model, &s.tolerances);
    if !(0.0..=1.0).contains(&s.detection.p_d) {
        report.push(
            "p-d-range",
            format!("p_d = {} is outside [0, 1]", s.detection.p_d),
        );
    }
    if s.horizon == 0 {
        report.push("horizon", "horizon must be >= 1");
    }
    if s.mc_samples == 0 {
        report.push("mc-samples", "mc_samples must be >= 1");
    }
    let r = s.model.num_modes();
    for f in &s.filters {
        if let FilterKind::SingleMode(j) = f.kind {
            if j >= r {
                report.push(
                    "filter-mode",
                    format!(
                        "filter '{}' uses mode {} but only {r} modes exist",
                        f.label,
                        j + 1
                    ),
                );
            }
        }
    }
    report
}
