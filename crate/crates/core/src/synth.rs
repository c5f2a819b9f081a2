//! Data-driven gain synthesis: estimate the unknown output coupling from the
//! sampled data, rebuild the cascade matrix, and solve the Riccati equation
//! for a stabilizing state-feedback gain.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, PINV_TOL, RANK_TOL};
use crate::model::{companion, internal_model_input, FilterParams};
use crate::postproc::{assemble_matrices, excitation_rank, DataMatrices, FilterReplay, PostProcessed};
use crate::postproc::replay_internal_model;
use crate::sim::Dataset;

/// Known blocks of the sampled cascade, ordered `(η, ζ_y, ζ_u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConstants {
    /// `col(0_d, 0_n, L)`.
    pub cal_bc: DVector<f64>,
    /// `col(G, L, 0_n)`.
    pub cal_d: DVector<f64>,
    /// `diag(Φ(θ), Λ_F, Λ_F)`.
    pub an_theta: DMatrix<f64>,
}

impl CascadeConstants {
    pub fn new(theta: &DVector<f64>, fp: &FilterParams) -> Result<Self> {
        let d = theta.len();
        let n = fp.n();
        let mut cal_bc = DVector::zeros(d + 2 * n);
        cal_bc.rows_mut(d + n, n).copy_from(&fp.l);
        let mut cal_d = DVector::zeros(d + 2 * n);
        cal_d.rows_mut(0, d).copy_from(&internal_model_input(d));
        cal_d.rows_mut(d, n).copy_from(&fp.l);
        let f = fp.f();
        let an_theta = linalg::block_diag(&[&companion(theta)?, &f, &f]);
        Ok(Self {
            cal_bc,
            cal_d,
            an_theta,
        })
    }
}

/// Estimates `𝒟𝒞` from data:
/// `(Z₊ - A_n Z - ℬ_c U) [Z_ζ; X]† [I_2n; 0]`.
pub fn estimate_h(dm: &DataMatrices, theta: &DVector<f64>, fp: &FilterParams, rel_tol: f64) -> Result<DMatrix<f64>> {
    let n = fp.n();
    let d = theta.len();
    if dm.z_eta.nrows() != d || dm.z_zeta.nrows() != 2 * n || dm.x.nrows() != n {
        return Err(Error::dim(format!(
            "estimate_h: data has ({}, {}, {}) rows, expected ({d}, {}, {n})",
            dm.z_eta.nrows(),
            dm.z_zeta.nrows(),
            dm.x.nrows(),
            2 * n
        )));
    }
    let rep = excitation_rank(dm, RANK_TOL);
    if !rep.satisfied {
        return Err(Error::Excitation {
            rank: rep.rank,
            required: rep.required,
        });
    }
    let cc = CascadeConstants::new(theta, fp)?;
    let resid = dm.z_plus() - &cc.an_theta * dm.z() - &cc.cal_bc * &dm.u;
    let coupling = resid * linalg::pinv_row_scaled(&dm.excitation_matrix(), rel_tol);
    Ok(coupling.columns(0, 2 * n).into_owned())
}

/// `Â = A_n + Ĥ [0_{2n×d}  I_2n]`.
pub fn assemble_ahat(h_hat: &DMatrix<f64>, theta: &DVector<f64>, fp: &FilterParams) -> Result<DMatrix<f64>> {
    let d = theta.len();
    let n = fp.n();
    if h_hat.shape() != (d + 2 * n, 2 * n) {
        return Err(Error::dim(format!(
            "assemble_ahat: H is {:?}, expected ({}, {})",
            h_hat.shape(),
            d + 2 * n,
            2 * n
        )));
    }
    let mut a_hat = CascadeConstants::new(theta, fp)?.an_theta;
    let mut block = a_hat.columns_mut(d, 2 * n);
    block += h_hat;
    Ok(a_hat)
}

/// Riccati solution and the associated gain `K = R⁻¹ ℬᵀ P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain {
    pub p: DMatrix<f64>,
    pub k: RowDVector<f64>,
    /// `‖ÂᵀP + PÂ - P ℬ R⁻¹ ℬᵀ P + Q‖_∞`.
    pub residual: f64,
    pub newton_iterations: usize,
}

pub fn care_residual(a: &DMatrix<f64>, b: &DVector<f64>, q: &DMatrix<f64>, r: f64, p: &DMatrix<f64>) -> DMatrix<f64> {
    let pb = p * b;
    a.transpose() * p + p * a - &pb * pb.transpose() / r + q
}

/// PBH stabilizability: `rank [A - λI  B] = N` for every eigenvalue with
/// nonnegative real part.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> bool {
    let n = a.nrows();
    linalg::eigenvalues(a)
        .into_iter()
        .filter(|z| z.re >= -1e-9)
        .all(|lambda| {
            let mut m = DMatrix::from_element(n, n + 1, Complex64::new(0.0, 0.0));
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] = Complex64::new(a[(i, j)], 0.0);
                }
                m[(i, i)] -= lambda;
                m[(i, n)] = Complex64::new(b[i], 0.0);
            }
            linalg::rank_complex(&m, rel_tol) == n
        })
}

/// Stabilizing CARE solution from the matrix sign function of the Hamiltonian.
fn care_sign_function(a: &DMatrix<f64>, b: &DVector<f64>, q: &DMatrix<f64>, r: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let g = b * b.transpose() / r;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    let mut converged = false;
    let mut prev_delta = f64::INFINITY;
    for _ in 0..100 {
        let det = z.determinant().abs();
        let zinv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Synthesis("Hamiltonian has eigenvalues on the imaginary axis".into()))?;
        let c = if det.is_finite() && det > 0.0 {
            det.powf(-1.0 / (2 * n) as f64)
        } else {
            1.0
        };
        let next = (&z * c + zinv / c) * 0.5;
        let delta = (&next - &z).abs().sum();
        let scale = next.abs().sum();
        z = next;
        // Stalling at a small step is roundoff; Newton-Kleinman polishes the rest.
        if delta <= 1e-13 * scale || (delta < 1e-6 * scale && delta >= prev_delta) {
            converged = true;
            break;
        }
        prev_delta = delta;
    }
    if !converged || z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            what: "matrix sign iteration".into(),
            residual: f64::NAN,
        });
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let w11 = z.view((0, 0), (n, n)).into_owned();
    let w12 = z.view((0, n), (n, n)).into_owned();
    let w21 = z.view((n, 0), (n, n)).into_owned();
    let w22 = z.view((n, n), (n, n)).into_owned();
    let lhs = linalg::vstack(&[&w12, &(w22 + &eye)]);
    let rhs = -linalg::vstack(&[&(w11 + &eye), &w21]);
    let p = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Synthesis(format!("sign-function subspace solve: {e}")))?;
    Ok((&p + p.transpose()) * 0.5)
}

/// Solves `ÂᵀP + PÂ - P ℬ R⁻¹ ℬᵀ P + Q = 0` for the stabilizing `P ≻ 0` and
/// returns `K = R⁻¹ ℬᵀ P`, so that `Â - ℬK` is Hurwitz.
///
/// The sign-function solution seeds Newton-Kleinman, which runs until
/// successive iterates agree to 1e-10 relative or the residual drops below
/// 1e-11 relative to `‖P‖`.
pub fn stabilizing_gain(a_hat: &DMatrix<f64>, cal_bc: &DVector<f64>, q: &DMatrix<f64>, r: f64) -> Result<Gain> {
    let n = a_hat.nrows();
    if a_hat.ncols() != n || cal_bc.len() != n || q.shape() != (n, n) {
        return Err(Error::dim("stabilizing_gain: inconsistent A, B, Q"));
    }
    if !(r > 0.0) {
        return Err(Error::Synthesis(format!("R must be positive, got {r}")));
    }
    if !is_stabilizable(a_hat, cal_bc, RANK_TOL) {
        return Err(Error::Unstabilizable("(Â, ℬ_c) has an uncontrollable mode with Re ≥ 0".into()));
    }
    let mut p = care_sign_function(a_hat, cal_bc, q, r)?;
    let mut k = (cal_bc.transpose() * &p) / r;
    if linalg::spectral_abscissa(&(a_hat - cal_bc * &k)) >= 0.0 {
        return Err(Error::Synthesis("sign-function gain is not stabilizing".into()));
    }

    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..50 {
        iterations += 1;
        let acl = a_hat - cal_bc * &k;
        let rhs = q + k.transpose() * &k * r;
        let p_next = linalg::solve_lyapunov(&acl, &rhs)?;
        let change = linalg::max_abs(&(&p_next - &p)) / linalg::max_abs(&p_next).max(f64::MIN_POSITIVE);
        p = p_next;
        k = (cal_bc.transpose() * &p) / r;
        // Large P stalls the step size at roundoff; accept once the equation itself is solved.
        let rel_res = linalg::norm_inf(&care_residual(a_hat, cal_bc, q, r, &p)) / linalg::norm_inf(&p).max(1.0);
        if change < 1e-10 || rel_res < 1e-11 {
            converged = true;
            break;
        }
    }
    let residual = linalg::norm_inf(&care_residual(a_hat, cal_bc, q, r, &p));
    if !converged {
        return Err(Error::Numeric {
            what: "Newton-Kleinman iteration".into(),
            residual,
        });
    }
    let min_eig = p.clone().symmetric_eigen().eigenvalues.min();
    if !(min_eig > 0.0) {
        return Err(Error::Synthesis(format!("Riccati solution not positive definite (min eig {min_eig:e})")));
    }
    Ok(Gain {
        p,
        k,
        residual,
        newton_iterations: iterations,
    })
}

/// LQ weights for the synthesis; `Q = q_scale I`, with the internal-model
/// block of `Q` additionally multiplied by `eta_weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub q_scale: f64,
    pub eta_weight: f64,
    pub r: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            q_scale: 1.0,
            eta_weight: 1.0,
            r: 1.0,
        }
    }
}

impl Weights {
    pub fn q_matrix(&self, d: usize, n: usize) -> DMatrix<f64> {
        let mut q = DMatrix::identity(d + 2 * n, d + 2 * n) * self.q_scale;
        for i in 0..d {
            q[(i, i)] *= self.eta_weight;
        }
        q
    }
}

/// Outcome of the data-driven synthesis for one `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub theta: DVector<f64>,
    pub h_hat: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub k: RowDVector<f64>,
    pub q: DMatrix<f64>,
    pub r: f64,
    pub care_residual: f64,
    pub closed_loop_eigs: Vec<Complex64>,
}

impl SynthesisResult {
    /// `-max Re σ(Â - ℬ_c K)`.
    pub fn stability_margin(&self) -> f64 {
        -self
            .closed_loop_eigs
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_gain_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "index,gain")?;
        for (i, k) in self.k.iter().enumerate() {
            writeln!(f, "{},{k:.16e}", i + 1)?;
        }
        Ok(())
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let fmt_vec = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "theta          = [{}]", fmt_vec(self.theta.as_slice()));
        let _ = writeln!(s, "K              = [{}]", fmt_vec(&self.k.iter().cloned().collect::<Vec<_>>()));
        let _ = writeln!(s, "CARE residual  = {:.3e}  (|P|_inf = {:.3e})", self.care_residual, linalg::norm_inf(&self.p));
        let _ = writeln!(s, "margin         = {:.6}", self.stability_margin());
        let _ = writeln!(s, "closed-loop eigenvalues:");
        let mut eigs = self.closed_loop_eigs.clone();
        eigs.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap().then(b.im.partial_cmp(&a.im).unwrap()));
        for z in eigs {
            let _ = writeln!(s, "  {:+.6} {:+.6}i", z.re, z.im);
        }
        s
    }
}

/// Estimate, assemble and stabilize for the given sampled data.
pub fn synthesize_from_matrices(
    dm: &DataMatrices,
    theta: &DVector<f64>,
    fp: &FilterParams,
    weights: &Weights,
) -> Result<SynthesisResult> {
    let h_hat = estimate_h(dm, theta, fp, PINV_TOL)?;
    let a_hat = assemble_ahat(&h_hat, theta, fp)?;
    let cc = CascadeConstants::new(theta, fp)?;
    let q = weights.q_matrix(theta.len(), fp.n());
    let gain = stabilizing_gain(&a_hat, &cc.cal_bc, &q, weights.r)?;
    let closed_loop_eigs = linalg::eigenvalues(&(&a_hat - &cc.cal_bc * &gain.k));
    Ok(SynthesisResult {
        theta: theta.clone(),
        h_hat,
        a_hat,
        p: gain.p,
        k: gain.k,
        q,
        r: weights.r,
        care_residual: gain.residual,
        closed_loop_eigs,
    })
}

/// The whole offline pipeline for one `θ`: replay the internal model, sample,
/// estimate and solve. `filters` is the `θ`-independent part of the replay.
pub fn synthesize(
    ds: &Dataset,
    filters: &FilterReplay,
    fp: &FilterParams,
    theta: &DVector<f64>,
    sample_idx: &[usize],
    weights: &Weights,
) -> Result<SynthesisResult> {
    let eta = replay_internal_model(ds, theta)?;
    let pp = PostProcessed::from_parts(ds, filters, eta, theta);
    let dm = assemble_matrices(&pp, ds, fp, sample_idx)?;
    synthesize_from_matrices(&dm, theta, fp, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference;

    #[test]
    fn scalar_riccati() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DVector::from_element(1, 1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        let g = stabilizing_gain(&a, &b, &q, 1.0).unwrap();
        let root = 1.0 + 2.0f64.sqrt();
        assert!((g.p[(0, 0)] - root).abs() < 1e-12);
        assert!((g.k[0] - root).abs() < 1e-12);
    }

    #[test]
    fn already_stable_small_gain() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let b = DVector::from_column_slice(&[0.0, 1.0]);
        let q = DMatrix::identity(2, 2) * 1e-6;
        let g = stabilizing_gain(&a, &b, &q, 1.0).unwrap();
        assert!(g.k.amax() < 1e-5);
        assert!(linalg::spectral_abscissa(&(&a - &b * &g.k)) < 0.0);
    }

    #[test]
    fn unstabilizable_pair_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = DVector::from_column_slice(&[0.0, 1.0]);
        let err = stabilizing_gain(&a, &b, &DMatrix::identity(2, 2), 1.0).unwrap_err();
        assert!(matches!(err, Error::Unstabilizable(_)));
    }

    #[test]
    fn care_on_double_integrator() {
        // Known closed form: P = [[√3, 1], [1, √3]], K = [1, √3].
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DVector::from_column_slice(&[0.0, 1.0]);
        let g = stabilizing_gain(&a, &b, &DMatrix::identity(2, 2), 1.0).unwrap();
        let s3 = 3.0f64.sqrt();
        assert!((g.p.clone() - DMatrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3])).amax() < 1e-12);
        assert!((g.k[0] - 1.0).abs() < 1e-12 && (g.k[1] - s3).abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_reproduces_nominal() {
        let fp = reference::filter();
        let theta = DVector::from_column_slice(&[4.0, 0.0]);
        let a = assemble_ahat(&DMatrix::zeros(8, 6), &theta, &fp).unwrap();
        assert_eq!(a, CascadeConstants::new(&theta, &fp).unwrap().an_theta);
        assert!(assemble_ahat(&DMatrix::zeros(8, 5), &theta, &fp).is_err());
    }

    #[test]
    fn cascade_constant_structure() {
        let fp = reference::filter();
        let cc = CascadeConstants::new(&DVector::from_column_slice(&[4.0, 0.0]), &fp).unwrap();
        assert_eq!(cc.cal_bc.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(cc.cal_d.as_slice(), &[0.0, 1.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn weights_matrix() {
        let w = Weights {
            q_scale: 2.0,
            eta_weight: 10.0,
            r: 1.0,
        };
        let q = w.q_matrix(2, 3);
        assert_eq!(q[(0, 0)], 20.0);
        assert_eq!(q[(2, 2)], 2.0);
        assert_eq!(q[(0, 1)], 0.0);
    }
}
