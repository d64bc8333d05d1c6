//! Scenario JSON documents (`schema_version: 1`).
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "modes": [ { "A": [[0.9]], "Q": [[0.01]] }, { "A": [[0.46]], "Q": [[0.01]] } ],
//!   "meas": { "H": [[1.0]], "R": [[0.01]] },
//!   "chain": { "Z": [[0.5, 0.5], [0.5, 0.5]], "prior": [0.5, 0.5] },
//!   "init": { "mean": [1.0], "cov": [[1.0]] },
//!   "detection": { "p_d": 0.9 },
//!   "filters": [ { "kind": "single", "mode": 1 }, { "kind": "average" }, { "kind": "skf" } ],
//!   "horizon": 20,
//!   "mc_samples": 20000,
//!   "seed": 7
//! }
//! ```
//!
//! Matrices are row-major nested arrays. Filter mode indices are one-based.
//! `tolerances` (`{"sym_tol": .., "psd_tol": ..}`) and filter `label`s are
//! optional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_rows, scaled_identity, to_rows, Matrix, Vector};
use crate::model::{
    DetectionModel, FilterKind, FilterSpec, GaussianBelief, MarkovChain, MeasurementModel,
    ModeModel, Scenario, SldsModel, Tolerances, ValidationReport,
};

pub const SCHEMA_VERSION: u32 = 1;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub schema_version: u32,
    pub modes: Vec<ModeDoc>,
    pub meas: MeasDoc,
    pub chain: ChainDoc,
    pub init: BeliefDoc,
    pub detection: DetectionDoc,
    pub filters: Vec<FilterDoc>,
    pub horizon: usize,
    pub mc_samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<TolerancesDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeDoc {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasDoc {
    #[serde(rename = "H")]
    pub h: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDoc {
    #[serde(rename = "Z")]
    pub z: Rows,
    pub prior: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefDoc {
    pub mean: Vec<f64>,
    pub cov: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionDoc {
    pub p_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKindDoc {
    Single,
    Average,
    Skf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterDoc {
    pub kind: FilterKindDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesDoc {
    pub sym_tol: f64,
    pub psd_tol: f64,
}

impl ScenarioDoc {
    /// Converts the document into a [`Scenario`]. Structural problems (ragged
    /// matrices, bad filter entries, wrong schema version) are reported as a
    /// validation failure; numeric invariants are left to
    /// [`crate::model::validate_scenario`].
    pub fn into_scenario(self) -> Result<Scenario> {
        let mut report = ValidationReport::default();
        if self.schema_version != SCHEMA_VERSION {
            report.push(
                "schema-version",
                format!(
                    "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            );
        }

        let mut matrix = |what: &str, rows: &Rows| -> Matrix {
            from_rows(rows).unwrap_or_else(|_| {
                report.push(
                    "ragged-matrix",
                    format!("{what} has rows of unequal length"),
                );
                Matrix::zeros(0, 0)
            })
        };
        let modes: Vec<ModeModel> = self
            .modes
            .iter()
            .enumerate()
            .map(|(i, m)| {
                ModeModel::new(
                    matrix(&format!("mode {} A", i + 1), &m.a),
                    matrix(&format!("mode {} Q", i + 1), &m.q),
                )
            })
            .collect();
        let meas = MeasurementModel::new(matrix("H", &self.meas.h), matrix("R", &self.meas.r));
        let chain = MarkovChain::new(
            matrix("Z", &self.chain.z),
            Vector::from_vec(self.chain.prior.clone()),
        );
        let init = GaussianBelief::new(
            Vector::from_vec(self.init.mean.clone()),
            matrix("init.cov", &self.init.cov),
        );

        let mut filters = Vec::with_capacity(self.filters.len());
        for (idx, f) in self.filters.iter().enumerate() {
            let kind = match (f.kind, f.mode) {
                (FilterKindDoc::Single, Some(j)) if j >= 1 => FilterKind::SingleMode(j - 1),
                (FilterKindDoc::Single, _) => {
                    report.push(
                        "filter-mode",
                        format!(
                            "filter {} of kind 'single' needs a one-based 'mode'",
                            idx + 1
                        ),
                    );
                    continue;
                }
                (FilterKindDoc::Average, _) => FilterKind::Average,
                (FilterKindDoc::Skf, _) => FilterKind::Skf,
            };
            filters.push(match &f.label {
                Some(l) => FilterSpec::with_label(kind, l.clone()),
                None => FilterSpec::new(kind),
            });
        }

        report.into_result()?;
        Ok(Scenario {
            model: SldsModel {
                modes,
                meas,
                chain,
                init,
            },
            horizon: self.horizon,
            detection: DetectionModel::new(self.detection.p_d),
            filters,
            mc_samples: self.mc_samples,
            seed: self.seed,
            tolerances: self
                .tolerances
                .map(|t| Tolerances {
                    sym_tol: t.sym_tol,
                    psd_tol: t.psd_tol,
                })
                .unwrap_or_default(),
        })
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        let m = &s.model;
        let tol = s.tolerances;
        Self {
            schema_version: SCHEMA_VERSION,
            modes: m
                .modes
                .iter()
                .map(|mode| ModeDoc {
                    a: to_rows(&mode.a),
                    q: to_rows(&mode.q),
                })
                .collect(),
            meas: MeasDoc {
                h: to_rows(&m.meas.h),
                r: to_rows(&m.meas.r),
            },
            chain: ChainDoc {
                z: to_rows(&m.chain.transition),
                prior: m.chain.prior.iter().copied().collect(),
            },
            init: BeliefDoc {
                mean: m.init.mean.iter().copied().collect(),
                cov: to_rows(&m.init.cov),
            },
            detection: DetectionDoc {
                p_d: s.detection.p_d,
            },
            filters: s
                .filters
                .iter()
                .map(|f| {
                    let (kind, mode) = match f.kind {
                        FilterKind::SingleMode(j) => (FilterKindDoc::Single, Some(j + 1)),
                        FilterKind::Average => (FilterKindDoc::Average, None),
                        FilterKind::Skf => (FilterKindDoc::Skf, None),
                    };
                    FilterDoc {
                        kind,
                        mode,
                        label: Some(f.label.clone()),
                    }
                })
                .collect(),
            horizon: s.horizon,
            mc_samples: s.mc_samples,
            seed: s.seed,
            tolerances: (tol != Tolerances::default()).then_some(TolerancesDoc {
                sym_tol: tol.sym_tol,
                psd_tol: tol.psd_tol,
            }),
        }
    }
}

pub fn from_json(text: &str) -> Result<Scenario> {
    let doc: ScenarioDoc = serde_json::from_str(text)?;
    doc.into_scenario()
}

pub fn to_json(s: &Scenario) -> Result<String> {
    serde_json::to_string_pretty(&ScenarioDoc::from_scenario(s)).map_err(Error::from)
}

/// Bimodal four-dimensional benchmark: `A¹ = 0.9 I`, `A² = 0.46 I`,
/// `Q = R = 0.01 I`, `H = I`, `x₀ = 1⃗`, `P₀ = I`, uniform chain and prior,
/// with the four standard filters (both single-mode KFs, average KF, SKF).
pub fn bimodal_4d(p_d: f64) -> Scenario {
    let z = 4;
    let q = scaled_identity(z, 0.01);
    let model = SldsModel {
        modes: vec![
            ModeModel::new(scaled_identity(z, 0.9), q.clone()),
            ModeModel::new(scaled_identity(z, 0.46), q),
        ],
        meas: MeasurementModel::new(scaled_identity(z, 1.0), scaled_identity(z, 0.01)),
        chain: MarkovChain::new(
            Matrix::from_element(2, 2, 0.5),
            Vector::from_element(2, 0.5),
        ),
        init: GaussianBelief::new(Vector::from_element(z, 1.0), scaled_identity(z, 1.0)),
    };
    Scenario {
        model,
        horizon: 20,
        detection: DetectionModel::new(p_d),
        filters: vec![
            FilterSpec::new(FilterKind::SingleMode(0)),
            FilterSpec::new(FilterKind::SingleMode(1)),
            FilterSpec::new(FilterKind::Average),
            FilterSpec::new(FilterKind::Skf),
        ],
        mc_samples: 20_000,
        seed: 2024,
        tolerances: Tolerances::default(),
    }
}
