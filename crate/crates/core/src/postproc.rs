//! Offline replay of the filters and of the nominal internal model over the
//! recorded dataset, and assembly of the sampled data matrices.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::model::{companion, internal_model_input, FilterParams};
use crate::sim::{rk4_integrate, Dataset};

/// Filter states replayed over the dataset grid. These do not depend on `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterReplay {
    pub zeta_y: Vec<DVector<f64>>,
    pub zeta_u: Vec<DVector<f64>>,
    pub chi: Vec<DVector<f64>>,
}

/// Everything the controller can compute from the dataset for a given `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PostProcessed {
    pub grid: Vec<f64>,
    pub zeta_y: Vec<DVector<f64>>,
    pub zeta_u: Vec<DVector<f64>>,
    pub chi: Vec<DVector<f64>>,
    pub eta_y: Vec<DVector<f64>>,
    pub theta_used: DVector<f64>,
}

#[derive(Clone, Copy)]
enum Channel {
    Input,
    Output,
}

/// Integrates `ż = M z + b s(t)` from `z(t0) = 0`, with `s` the chosen dataset
/// channel interpolated between samples by local cubics.
fn replay_driven(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    ds: &Dataset,
    channel: Channel,
) -> Result<Vec<DVector<f64>>> {
    let z0 = DVector::zeros(m.nrows());
    let tr = rk4_integrate(
        |t, z| {
            let (u, y) = ds.interpolate_cubic(t);
            let s = match channel {
                Channel::Input => u,
                Channel::Output => y,
            };
            m * z + b * s
        },
        &z0,
        ds.t0,
        ds.t_end(),
        ds.dt,
    )?;
    Ok(tr.states)
}

/// `χ(t) = exp(Λ_F (t - t0)) 1_n` on the dataset grid.
pub fn chi_on_grid(ds: &Dataset, fp: &FilterParams) -> Vec<DVector<f64>> {
    (0..ds.len())
        .map(|i| {
            let t = ds.time(i) - ds.t0;
            fp.lambda.map(|l| (l * t).exp())
        })
        .collect()
}

pub fn replay_filters(ds: &Dataset, fp: &FilterParams) -> Result<FilterReplay> {
    let f = fp.f();
    Ok(FilterReplay {
        zeta_y: replay_driven(&f, &fp.l, ds, Channel::Output)?,
        zeta_u: replay_driven(&f, &fp.l, ds, Channel::Input)?,
        chi: chi_on_grid(ds, fp),
    })
}

/// Replays `η̇_y = Φ(θ) η_y + G y` from zero. `Φ(θ)` need not be Hurwitz;
/// a blow-up surfaces as a divergence error.
pub fn replay_internal_model(ds: &Dataset, theta: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let phi = companion(theta)?;
    let g = internal_model_input(theta.len());
    replay_driven(&phi, &g, ds, Channel::Output)
}

impl PostProcessed {
    pub fn from_parts(ds: &Dataset, filters: &FilterReplay, eta_y: Vec<DVector<f64>>, theta: &DVector<f64>) -> Self {
        Self {
            grid: ds.times(),
            zeta_y: filters.zeta_y.clone(),
            zeta_u: filters.zeta_u.clone(),
            chi: filters.chi.clone(),
            eta_y,
            theta_used: theta.clone(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.zeta_y.first().map_or(0, |z| z.len());
        let d = self.theta_used.len();
        let mut f = fs::File::create(path)?;
        let mut header = vec!["t".to_string()];
        for (name, count) in [("zeta_y", n), ("zeta_u", n), ("chi", n), ("eta_y", d)] {
            header.extend((1..=count).map(|i| format!("{name}_{i}")));
        }
        writeln!(f, "{}", header.join(","))?;
        for i in 0..self.grid.len() {
            let mut row = vec![format!("{:.16e}", self.grid[i])];
            for v in [&self.zeta_y[i], &self.zeta_u[i], &self.chi[i], &self.eta_y[i]] {
                row.extend(v.iter().map(|x| format!("{x:.16e}")));
            }
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Full replay for one `θ`.
pub fn post_process(ds: &Dataset, fp: &FilterParams, theta: &DVector<f64>) -> Result<PostProcessed> {
    let filters = replay_filters(ds, fp)?;
    let eta = replay_internal_model(ds, theta)?;
    Ok(PostProcessed::from_parts(ds, &filters, eta, theta))
}

/// Indices of a uniform decimation at period `tau_s`, starting at the first
/// grid point at or after `t_burn`.
pub fn sample_indices(ds: &Dataset, tau_s: f64, t_burn: f64) -> Vec<usize> {
    let step = ((tau_s / ds.dt).round() as usize).max(1);
    let first = (((t_burn - ds.t0) / ds.dt).ceil().max(0.0)) as usize;
    (first..ds.len()).step_by(step).collect()
}

/// Sampling instants used for synthesis: the `tau_s` grid over `[t0, t0 + t1]`.
pub fn synthesis_samples(ds: &Dataset, tau_s: f64, t1: f64) -> Vec<usize> {
    sample_indices(ds, tau_s, ds.t0)
        .into_iter()
        .filter(|&i| ds.time(i) <= ds.t0 + t1 + 1e-9)
        .collect()
}

/// Sampled data matrices; each column is one sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub y: RowDVector<f64>,
    pub u: RowDVector<f64>,
    pub z_eta: DMatrix<f64>,
    pub z_eta_plus: DMatrix<f64>,
    /// `col(ζ_y, ζ_u)` samples, `2n` rows.
    pub z_zeta: DMatrix<f64>,
    pub z_zeta_plus: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub sample_times: Vec<f64>,
}

impl DataMatrices {
    pub fn columns(&self) -> usize {
        self.y.len()
    }

    /// `Z = col(Z_η, Z_ζ)`.
    pub fn z(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.z_eta, &self.z_zeta])
    }

    /// `Z₊ = col(Z_η₊, Z_ζ₊)`.
    pub fn z_plus(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.z_eta_plus, &self.z_zeta_plus])
    }

    /// `[Z_ζ; X]`, the matrix of the excitation condition.
    pub fn excitation_matrix(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.z_zeta, &self.x])
    }

    /// Keeps only the listed columns, in that order.
    pub fn select_columns(&self, cols: &[usize]) -> DataMatrices {
        let pick = |m: &DMatrix<f64>| m.select_columns(cols);
        DataMatrices {
            y: RowDVector::from_iterator(cols.len(), cols.iter().map(|&c| self.y[c])),
            u: RowDVector::from_iterator(cols.len(), cols.iter().map(|&c| self.u[c])),
            z_eta: pick(&self.z_eta),
            z_eta_plus: pick(&self.z_eta_plus),
            z_zeta: pick(&self.z_zeta),
            z_zeta_plus: pick(&self.z_zeta_plus),
            x: pick(&self.x),
            sample_times: cols.iter().map(|&c| self.sample_times[c]).collect(),
        }
    }
}

/// Samples the post-processed record. Derivative columns are the known
/// right-hand sides evaluated at the samples, never finite differences.
pub fn assemble_matrices(
    pp: &PostProcessed,
    ds: &Dataset,
    fp: &FilterParams,
    sample_idx: &[usize],
) -> Result<DataMatrices> {
    let n = fp.n();
    let k1 = sample_idx.len();
    if k1 < 3 * n {
        return Err(Error::InsufficientData { have: k1, need: 3 * n });
    }
    if let Some(&bad) = sample_idx.iter().find(|&&i| i >= pp.grid.len() || i >= ds.len()) {
        return Err(Error::dim(format!("sample index {bad} outside the grid")));
    }
    let theta = &pp.theta_used;
    let d = theta.len();
    let phi = companion(theta)?;
    let g = internal_model_input(d);
    let f = fp.f();

    let y = RowDVector::from_iterator(k1, sample_idx.iter().map(|&i| ds.y[i]));
    let u = RowDVector::from_iterator(k1, sample_idx.iter().map(|&i| ds.u[i]));
    let mut z_eta = DMatrix::zeros(d, k1);
    let mut z_zeta = DMatrix::zeros(2 * n, k1);
    let mut x = DMatrix::zeros(n, k1);
    for (c, &i) in sample_idx.iter().enumerate() {
        z_eta.set_column(c, &pp.eta_y[i]);
        z_zeta.view_mut((0, c), (n, 1)).copy_from(&pp.zeta_y[i]);
        z_zeta.view_mut((n, c), (n, 1)).copy_from(&pp.zeta_u[i]);
        x.set_column(c, &pp.chi[i]);
    }
    let z_eta_plus = &phi * &z_eta + &g * &y;
    let mut z_zeta_plus = DMatrix::zeros(2 * n, k1);
    z_zeta_plus
        .rows_mut(0, n)
        .copy_from(&(&f * z_zeta.rows(0, n) + &fp.l * &y));
    z_zeta_plus
        .rows_mut(n, n)
        .copy_from(&(&f * z_zeta.rows(n, n) + &fp.l * &u));
    Ok(DataMatrices {
        y,
        u,
        z_eta,
        z_eta_plus,
        z_zeta,
        z_zeta_plus,
        x,
        sample_times: sample_idx.iter().map(|&i| pp.grid[i]).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExcitationReport {
    pub rank: usize,
    pub required: usize,
    pub satisfied: bool,
}

/// Numerical rank of `[Z_ζ; X]` against the required `3n`, after scaling the
/// rows to unit norm (filter states of an unstable plant dwarf `χ`).
pub fn excitation_rank(dm: &DataMatrices, rel_tol: f64) -> ExcitationReport {
    let (m, _) = linalg::row_equilibrate(&dm.excitation_matrix());
    let required = m.nrows();
    let rank = linalg::rank(&m, rel_tol);
    ExcitationReport {
        rank,
        required,
        satisfied: rank == required,
    }
}

pub fn excitation_rank_default(dm: &DataMatrices) -> ExcitationReport {
    excitation_rank(dm, RANK_TOL)
}
