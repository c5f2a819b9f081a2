//! JSON experiment configuration. Matrices are row-major arrays of rows.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Exosystem, FilterParams, LtiPlant, ThetaBox};
use crate::regulator::RegulatorConfig;
use crate::sim::{random_initial_state, ExcitationSpec};
use crate::synth::Weights;

pub const SEED_ENV: &str = "REGULAB_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExosystemSection {
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    #[serde(rename = "C_r")]
    pub c_r: Vec<f64>,
    pub w0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub lambda: Vec<f64>,
    #[serde(rename = "L")]
    pub l: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSection {
    pub amplitudes: Vec<f64>,
    pub omega1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub t_star: f64,
    pub tau_s: f64,
    pub internal_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifierSection {
    pub mu: f64,
    pub theta0: Vec<f64>,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    #[serde(rename = "Q_scale")]
    pub q_scale: f64,
    #[serde(rename = "R_scale")]
    pub r_scale: f64,
    #[serde(default = "one")]
    pub eta_weight: f64,
}

fn one() -> f64 {
    1.0
}

fn default_horizon() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorSection {
    #[serde(rename = "T2")]
    pub t2: f64,
    #[serde(rename = "N_I")]
    pub n_i: usize,
    pub delta: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSection,
    pub exosystem: ExosystemSection,
    pub filter: FilterSection,
    pub excitation: ExcitationSection,
    pub sampling: SamplingSection,
    pub identifier: IdentifierSection,
    pub synthesis: SynthesisSection,
    pub regulator: RegulatorSection,
    pub seed: u64,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != c) {
        return Err(Error::Config {
            field: format!("{field}[{i}]"),
            message: format!("row has {} entries, expected {c}", row.len()),
        });
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().cloned()))
}

fn at(field: &str, e: Error) -> Error {
    match e {
        Error::Dimension(m) => Error::Config {
            field: field.into(),
            message: m,
        },
        Error::Config { field: f, message } if !f.contains('.') => Error::Config {
            field: format!("{field}.{f}"),
            message,
        },
        other => other,
    }
}

impl ExperimentConfig {
    /// The reference experiment: unstable third-order plant tracking a
    /// 2 rad/s sinusoid.
    pub fn reference() -> Self {
        Self {
            plant: PlantSection {
                a: vec![vec![1.0, 1.0, 1.0], vec![-1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]],
                b: vec![0.0, 1.0, 2.0],
                c: vec![-1.0, 1.0, 0.0],
            },
            exosystem: ExosystemSection {
                s: vec![vec![0.0, -2.0], vec![2.0, 0.0]],
                c_r: vec![-2.0, -50.0 / (PI * PI)],
                w0: vec![1.0, 1.0],
            },
            filter: FilterSection {
                lambda: vec![-1.0, -2.0, -3.0],
                l: vec![1.0, 2.0, 3.0],
            },
            excitation: ExcitationSection {
                amplitudes: vec![1.0, 2.0, 3.0, 4.0],
                omega1: 5.0,
            },
            sampling: SamplingSection {
                t_star: 10.0,
                tau_s: 0.1,
                internal_h: 1e-3,
            },
            identifier: IdentifierSection {
                mu: 0.9,
                theta0: vec![1.0, -1.0],
                box_lo: vec![0.5, -1.0],
                box_hi: vec![10.0, 2.0],
            },
            synthesis: SynthesisSection {
                q_scale: 10.0,
                r_scale: 1.0,
                eta_weight: 10.0,
            },
            regulator: RegulatorSection {
                t2: 1.4,
                n_i: 70,
                delta: 1e-6,
                horizon: 100.0,
            },
            seed: 42,
        }
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: path.into(),
            message: format!("{}: {}", e.path(), e.inner()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// Checks that every section builds and that dimensions agree.
    pub fn validate(&self) -> Result<()> {
        let plant = self.plant()?;
        let exo = self.exosystem()?;
        let fp = self.filter()?;
        self.excitation()?;
        if fp.n() != plant.n() {
            return Err(Error::Config {
                field: "filter.lambda".into(),
                message: format!("{} filter poles for a plant of order {}", fp.n(), plant.n()),
            });
        }
        let bbox = self.theta_box()?;
        if bbox.dim() != exo.d() {
            return Err(Error::Config {
                field: "identifier.box_lo".into(),
                message: format!("box has dimension {}, exosystem has d = {}", bbox.dim(), exo.d()),
            });
        }
        let s = &self.sampling;
        for (name, v) in [("t_star", s.t_star), ("tau_s", s.tau_s), ("internal_h", s.internal_h)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    field: format!("sampling.{name}"),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        if s.tau_s < s.internal_h {
            return Err(Error::Config {
                field: "sampling.tau_s".into(),
                message: "sampling period below the integration step".into(),
            });
        }
        self.regulator_config()?.validate()?;
        Ok(())
    }

    pub fn plant(&self) -> Result<LtiPlant> {
        let a = matrix("plant.A", &self.plant.a)?;
        LtiPlant::new(
            a,
            DVector::from_vec(self.plant.b.clone()),
            RowDVector::from_vec(self.plant.c.clone()),
        )
        .map_err(|e| at("plant", e))
    }

    pub fn exosystem(&self) -> Result<Exosystem> {
        let s = matrix("exosystem.S", &self.exosystem.s)?;
        Exosystem::new(
            s,
            RowDVector::from_vec(self.exosystem.c_r.clone()),
            DVector::from_vec(self.exosystem.w0.clone()),
        )
        .map_err(|e| at("exosystem", e))
    }

    pub fn filter(&self) -> Result<FilterParams> {
        FilterParams::new(
            DVector::from_vec(self.filter.lambda.clone()),
            DVector::from_vec(self.filter.l.clone()),
        )
        .map_err(|e| at("filter", e))
    }

    pub fn excitation(&self) -> Result<ExcitationSpec> {
        ExcitationSpec::new(self.excitation.amplitudes.clone(), self.excitation.omega1).map_err(|e| at("excitation", e))
    }

    pub fn theta_box(&self) -> Result<ThetaBox> {
        ThetaBox::new(
            DVector::from_vec(self.identifier.box_lo.clone()),
            DVector::from_vec(self.identifier.box_hi.clone()),
        )
        .map_err(|e| at("identifier", e))
    }

    pub fn weights(&self) -> Weights {
        Weights {
            q_scale: self.synthesis.q_scale,
            eta_weight: self.synthesis.eta_weight,
            r: self.synthesis.r_scale,
        }
    }

    pub fn regulator_config(&self) -> Result<RegulatorConfig> {
        let theta0 = DVector::from_vec(self.identifier.theta0.clone());
        let mut cfg = RegulatorConfig::reference(self.filter()?, self.theta_box()?, theta0);
        cfg.mu = self.identifier.mu;
        cfg.weights = self.weights();
        cfg.t1 = self.sampling.t_star;
        cfg.t2 = self.regulator.t2;
        cfg.n_i = self.regulator.n_i;
        cfg.delta = self.regulator.delta;
        cfg.tau_s = self.sampling.tau_s;
        cfg.horizon = self.regulator.horizon;
        cfg.h = self.sampling.internal_h;
        Ok(cfg)
    }

    /// The configured seed, overridden by `REGULAB_SEED` when set.
    pub fn effective_seed(&self) -> Result<u64> {
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| Error::Config {
                field: SEED_ENV.into(),
                message: format!("not an unsigned integer: {v:?}"),
            }),
            Err(_) => Ok(self.seed),
        }
    }

    /// Plant state at the start of data collection.
    pub fn data_initial_state(&self, seed: u64) -> DVector<f64> {
        random_initial_state(self.plant.b.len(), seed)
    }

    /// Plant state at the start of the closed-loop run.
    pub fn run_initial_state(&self, seed: u64) -> DVector<f64> {
        random_initial_state(self.plant.b.len(), seed.wrapping_add(1))
    }
}
