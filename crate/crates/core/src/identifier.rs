//! Jump-driven least-squares identifier with forgetting and box projection
//! for the internal-model parameter `θ`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, PINV_TOL};
use crate::model::ThetaBox;

/// One regression pair collected at a jump.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    pub alpha: DVector<f64>,
    pub beta: f64,
}

/// `(R, v, θ)` plus the forgetting factor, the admissible box and the jump
/// counter.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierState {
    pub r: DMatrix<f64>,
    pub v: DVector<f64>,
    pub theta: DVector<f64>,
    pub mu: f64,
    pub bbox: ThetaBox,
    pub j: usize,
}

impl IdentifierState {
    pub fn new(theta0: DVector<f64>, mu: f64, bbox: ThetaBox) -> Result<Self> {
        let d = bbox.dim();
        if theta0.len() != d {
            return Err(Error::dim(format!("theta0 has {} entries, box has {d}", theta0.len())));
        }
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::Config {
                field: "identifier.mu".into(),
                message: format!("forgetting factor must lie in (0, 1), got {mu}"),
            });
        }
        if !bbox.contains(&theta0) {
            return Err(Error::Config {
                field: "identifier.theta0".into(),
                message: "initial parameter outside the admissible box".into(),
            });
        }
        Ok(Self {
            r: DMatrix::zeros(d, d),
            v: DVector::zeros(d),
            theta: theta0,
            mu,
            bbox,
            j: 0,
        })
    }

    pub fn d(&self) -> usize {
        self.theta.len()
    }

    /// Unprojected least-squares estimate `R† v`.
    pub fn raw_estimate(&self) -> DVector<f64> {
        linalg::pinv(&self.r, PINV_TOL) * &self.v
    }
}

/// Euclidean projection onto the box: componentwise clamp.
pub fn project_box(theta_raw: &DVector<f64>, bbox: &ThetaBox) -> DVector<f64> {
    DVector::from_fn(theta_raw.len(), |i, _| theta_raw[i].clamp(bbox.lo[i], bbox.hi[i]))
}

/// `R⁺ = μR + ααᵀ`, `v⁺ = μv + αβ`, `θ⁺ = Proj(R⁺† v⁺)`, `j⁺ = j + 1`.
pub fn jump(state: &IdentifierState, sample: &RegressionSample) -> IdentifierState {
    let a = &sample.alpha;
    let r = &state.r * state.mu + a * a.transpose();
    let v = &state.v * state.mu + a * sample.beta;
    let mut next = IdentifierState {
        r,
        v,
        theta: state.theta.clone(),
        mu: state.mu,
        bbox: state.bbox.clone(),
        j: state.j + 1,
    };
    // Symmetrize away rounding so R stays exactly symmetric.
    next.r = (&next.r + next.r.transpose()) * 0.5;
    next.theta = project_box(&next.raw_estimate(), &state.bbox);
    next
}

/// Weighted regressor Gramian over the trailing `window` samples.
fn gramian(history: &[RegressionSample], mu: f64, window: usize) -> Option<DMatrix<f64>> {
    let d = history.first()?.alpha.len();
    let j = history.len();
    let mut g = DMatrix::zeros(d, d);
    for (i, s) in history.iter().enumerate().skip(j - window) {
        g += &s.alpha * s.alpha.transpose() * mu.powi((j - i - 1) as i32);
    }
    Some(g)
}

/// Smallest eigenvalue of `Σ_{i=j-J}^{j-1} μ^{j-i-1} α_i α_iᵀ`; `None` while
/// fewer than `window` samples exist.
pub fn pe_metric(history: &[RegressionSample], mu: f64, window: usize) -> Option<f64> {
    if window == 0 || history.len() < window {
        return None;
    }
    let g = gramian(history, mu, window)?;
    Some(g.symmetric_eigen().eigenvalues.min())
}

/// `Σ_i μ^{j-i-1} (β_i - θᵀα_i)²` over the full history.
pub fn cost_j(history: &[RegressionSample], mu: f64, theta: &DVector<f64>) -> f64 {
    let j = history.len();
    history
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let e = s.beta - theta.dot(&s.alpha);
            mu.powi((j - i - 1) as i32) * e * e
        })
        .sum()
}

/// One line of the identifier log.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpLogRow {
    pub j: usize,
    pub t: f64,
    pub theta: DVector<f64>,
    pub pe_metric: Option<f64>,
    pub cost: f64,
}

pub fn write_jump_log(rows: &[JumpLogRow], path: &Path) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.theta.len());
    let mut f = fs::File::create(path)?;
    let mut header = vec!["j".to_string(), "t".to_string()];
    header.extend((1..=d).map(|i| format!("theta_{i}")));
    header.push("pe_metric".into());
    header.push("cost".into());
    writeln!(f, "{}", header.join(","))?;
    for r in rows {
        let mut row = vec![r.j.to_string(), format!("{:.16e}", r.t)];
        row.extend(r.theta.iter().map(|x| format!("{x:.16e}")));
        row.push(r.pe_metric.map_or("nan".into(), |m| format!("{m:.16e}")));
        row.push(format!("{:.16e}", r.cost));
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}
