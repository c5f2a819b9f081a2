//! Model-based ground truth: the quantities the data-driven path never sees
//! (Π₁, Π₂, H₁, H₂, M_ρ, 𝒜_c^θ, Ψ), computed from the true plant. Used by
//! tests and by the `verify` command; the regulator does not depend on it.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    cascade_matrices, char_poly_theta, companion, internal_model_input, observability_matrix, Exosystem,
    FilterParams, LtiPlant,
};
use crate::postproc::DataMatrices;
use crate::sim::rk4_integrate;
use crate::synth::CascadeConstants;

/// Solution of the filter-realization equations
/// `Π₁F = (A - Π₁LC)Π₁`, `H₁ = CΠ₁`, `Π₂F = (A - Π₁LC)Π₂`, `Π₂L = B`, `H₂ = CΠ₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiSolution {
    pub pi1: DMatrix<f64>,
    pub pi2: DMatrix<f64>,
    pub h1: RowDVector<f64>,
    pub h2: RowDVector<f64>,
    /// `Π₁L`, the output-injection gain placing `σ(A - Π₁LC)` on `σ(Λ_F)`.
    pub injection: DVector<f64>,
}

impl PiSolution {
    /// Residuals of the five defining relations, in the order listed above.
    pub fn residuals(&self, plant: &LtiPlant, fp: &FilterParams) -> [f64; 5] {
        let f = fp.f();
        let ao = &plant.a - &self.pi1 * &fp.l * &plant.c;
        [
            linalg::max_abs(&(&self.pi1 * &f - &ao * &self.pi1)),
            (&self.h1 - &plant.c * &self.pi1).amax(),
            linalg::max_abs(&(&self.pi2 * &f - &ao * &self.pi2)),
            (&self.pi2 * &fp.l - &plant.b).amax(),
            (&self.h2 - &plant.c * &self.pi2).amax(),
        ]
    }

    pub fn stacked_rank(&self) -> usize {
        let n = self.pi1.nrows();
        let mut m = DMatrix::zeros(n, 2 * n);
        m.columns_mut(0, n).copy_from(&self.pi1);
        m.columns_mut(n, n).copy_from(&self.pi2);
        linalg::rank(&m, linalg::RANK_TOL)
    }
}

/// Unit null vector of `m` (right singular vector of the smallest singular value).
fn null_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    vt.row(imin).transpose()
}

/// Eigenvector matrix of `a` for the prescribed real eigenvalues.
fn eigenvectors_for(a: &DMatrix<f64>, lambdas: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut v = DMatrix::zeros(n, n);
    for (i, &l) in lambdas.iter().enumerate() {
        let shifted = a - DMatrix::identity(n, n) * l;
        v.set_column(i, &null_vector(&shifted));
    }
    v
}

/// Observer gain by Ackermann's formula on the dual pair: `σ(A - K C) = poles`.
pub fn place_observer(a: &DMatrix<f64>, c: &RowDVector<f64>, poles: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    let obs = observability_matrix(a, c);
    let obs_inv = obs
        .try_inverse()
        .ok_or_else(|| Error::Oracle("observer placement: (C, A) not observable".into()))?;
    let mut qa = DMatrix::<f64>::identity(n, n);
    for &p in poles.iter() {
        qa = qa * (a - DMatrix::identity(n, n) * p);
    }
    let mut en = DVector::zeros(n);
    en[n - 1] = 1.0;
    Ok(qa * obs_inv * en)
}

/// Constructs `(Π₁, Π₂, H₁, H₂)`: place `σ(A - Π₁LC) = σ(Λ_F)` by output
/// injection, then read `Π₁`, `Π₂` off the eigenvectors of `A - Π₁LC`.
pub fn solve_pi(plant: &LtiPlant, fp: &FilterParams) -> Result<PiSolution> {
    if plant.n() != fp.n() {
        return Err(Error::dim(format!("plant n = {}, filter n = {}", plant.n(), fp.n())));
    }
    let injection = place_observer(&plant.a, &plant.c, &fp.lambda)?;
    let ao = &plant.a - &injection * &plant.c;
    let v = eigenvectors_for(&ao, &fp.lambda);
    let vinv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Oracle("A - Π₁LC is not diagonalizable".into()))?;
    let c1 = &vinv * &injection;
    let c2 = &vinv * &plant.b;
    let d1 = DVector::from_fn(fp.n(), |i, _| c1[i] / fp.l[i]);
    let d2 = DVector::from_fn(fp.n(), |i, _| c2[i] / fp.l[i]);
    let pi1 = &v * DMatrix::from_diagonal(&d1);
    let pi2 = &v * DMatrix::from_diagonal(&d2);
    let h1 = &plant.c * &pi1;
    let h2 = &plant.c * &pi2;
    let sol = PiSolution {
        pi1,
        pi2,
        h1,
        h2,
        injection,
    };
    if sol.stacked_rank() != plant.n() {
        return Err(Error::Oracle("[Π₁ Π₂] is not full row rank".into()));
    }
    Ok(sol)
}

/// `T_ρ` with `T_ρ (A - Π₁LC) T_ρ⁻¹ = Λ_F` and `M_ρ = C T_ρ⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct MRho {
    pub t_rho: DMatrix<f64>,
    pub m_rho: RowDVector<f64>,
}

/// Diagonalizes `A - Π₁LC` onto `Λ_F`. With `rho0` given, the eigenvector
/// scaling is fixed so that `T_ρ ρ(0) = 1_n`, which is what makes
/// `Cρ(t) = M_ρ χ(t)` hold along a trajectory started at `ρ(0) = rho0`.
pub fn solve_m_rho(plant: &LtiPlant, pi1: &DMatrix<f64>, fp: &FilterParams, rho0: Option<&DVector<f64>>) -> Result<MRho> {
    let n = fp.n();
    for i in 0..n {
        for j in i + 1..n {
            if (fp.lambda[i] - fp.lambda[j]).abs() < 1e-12 {
                return Err(Error::Oracle("repeated filter eigenvalues".into()));
            }
        }
    }
    let ao = &plant.a - pi1 * &fp.l * &plant.c;
    let v = eigenvectors_for(&ao, &fp.lambda);
    let vinv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Oracle("A - Π₁LC is not diagonalizable".into()))?;
    let coords = match rho0 {
        Some(r) => &vinv * r,
        None => DVector::from_element(n, 1.0),
    };
    if coords.iter().any(|c| c.abs() < 1e-12) {
        return Err(Error::Oracle("ρ(0) has no component along some mode of A - Π₁LC".into()));
    }
    let t_rho = DMatrix::from_diagonal(&coords.map(|c| 1.0 / c)) * &vinv;
    let t_inv = &v * DMatrix::from_diagonal(&coords);
    let m_rho = &plant.c * t_inv;
    Ok(MRho { t_rho, m_rho })
}

/// `𝒜_c^θ = [Φ(θ)  G𝒞; 0  𝒜]`.
pub fn ac_theta(theta: &DVector<f64>, fp: &FilterParams, h1: &RowDVector<f64>, h2: &RowDVector<f64>) -> Result<DMatrix<f64>> {
    let d = theta.len();
    let n = fp.n();
    let (cal_a, _, cal_c) = cascade_matrices(fp, h1, h2);
    let mut m = DMatrix::zeros(d + 2 * n, d + 2 * n);
    m.view_mut((0, 0), (d, d)).copy_from(&companion(theta)?);
    m.view_mut((0, d), (d, 2 * n)).copy_from(&(internal_model_input(d) * cal_c));
    m.view_mut((d, d), (2 * n, 2 * n)).copy_from(&cal_a);
    Ok(m)
}

/// Steady-state map of the closed loop driven by the exosystem, in the
/// coordinates `(ρ_e, η_e, ζ_e = ζ_y - ζ_r, ζ_u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiSolution {
    pub psi_rho: DMatrix<f64>,
    pub psi_eta: DMatrix<f64>,
    pub psi_zeta_e: DMatrix<f64>,
    pub psi_zeta_u: DMatrix<f64>,
    /// Closed-loop matrix of the error coordinates.
    pub closed_loop: DMatrix<f64>,
    /// Residuals of the four Sylvester relations.
    pub sylvester_residuals: [f64; 4],
    /// Shift-chain residuals `Ψ_{η,i}S - Ψ_{η,i+1}`, then the last-row identity.
    pub chain_residuals: Vec<f64>,
}

impl PsiSolution {
    /// `Ψ = col(Ψ_η, Ψ_ζe, Ψ_ζu)`, the map defining the attractive subspace.
    pub fn psi(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.psi_eta, &self.psi_zeta_e, &self.psi_zeta_u])
    }

    pub fn max_residual(&self) -> f64 {
        self.sylvester_residuals
            .iter()
            .chain(&self.chain_residuals)
            .cloned()
            .fold(0.0, f64::max)
    }
}

/// Solves the coupled Sylvester system for the closed loop with feedback
/// `u = -K col(η_e, ζ_e, ζ_u)`, `K` being the Riccati gain.
pub fn sylvester_psi(
    plant: &LtiPlant,
    exo: &Exosystem,
    fp: &FilterParams,
    theta: &DVector<f64>,
    k: &RowDVector<f64>,
) -> Result<PsiSolution> {
    let n = plant.n();
    let d = theta.len();
    if exo.d() != d || k.len() != d + 2 * n {
        return Err(Error::dim(format!(
            "sylvester_psi: exo d = {}, θ has {d}, K has {}",
            exo.d(),
            k.len()
        )));
    }
    let pi = solve_pi(plant, fp)?;
    let phi = companion(theta)?;
    let g = internal_model_input(d);
    let f = fp.f();
    let l = &fp.l;
    let c = &plant.c;
    let ao = &plant.a - &pi.pi1 * l * c;
    let k_app = -k;
    let k_eta = k_app.columns(0, d).into_owned();
    let k_ze = k_app.columns(d, n).into_owned();
    let k_zu = k_app.columns(d + n, n).into_owned();

    let nn = 3 * n + d;
    let (r0, e0, z0, u0) = (0, n, n + d, 2 * n + d);
    let mut m = DMatrix::zeros(nn, nn);
    m.view_mut((r0, r0), (n, n)).copy_from(&ao);
    m.view_mut((e0, r0), (d, n)).copy_from(&(&g * c));
    m.view_mut((e0, e0), (d, d)).copy_from(&phi);
    m.view_mut((e0, z0), (d, n)).copy_from(&(&g * &pi.h1));
    m.view_mut((e0, u0), (d, n)).copy_from(&(&g * &pi.h2));
    m.view_mut((z0, r0), (n, n)).copy_from(&(l * c));
    m.view_mut((z0, z0), (n, n)).copy_from(&(&f + l * &pi.h1));
    m.view_mut((z0, u0), (n, n)).copy_from(&(l * &pi.h2));
    m.view_mut((u0, e0), (n, d)).copy_from(&(l * &k_eta));
    m.view_mut((u0, z0), (n, n)).copy_from(&(l * &k_ze));
    m.view_mut((u0, u0), (n, n)).copy_from(&(&f + l * &k_zu));

    if linalg::spectral_abscissa(&m) >= 0.0 {
        return Err(Error::Resonance("closed-loop error dynamics are not Hurwitz".into()));
    }

    let mut forcing = DMatrix::zeros(nn, d);
    forcing.view_mut((r0, 0), (n, d)).copy_from(&(&pi.pi1 * l * &exo.c_r));
    forcing.view_mut((e0, 0), (d, d)).copy_from(&(-(&g * &exo.c_r)));
    forcing.view_mut((z0, 0), (n, d)).copy_from(&(-(l * &exo.c_r)));

    // Ψ S = M Ψ + E  ⇔  M Ψ + Ψ(-S) = -E
    let psi = linalg::solve_sylvester(&m, &(-&exo.s), &(-&forcing))?;
    let psi_rho = psi.rows(r0, n).into_owned();
    let psi_eta = psi.rows(e0, d).into_owned();
    let psi_zeta_e = psi.rows(z0, n).into_owned();
    let psi_zeta_u = psi.rows(u0, n).into_owned();
    let s = &exo.s;
    let cr = &exo.c_r;

    let sylvester_residuals = [
        linalg::max_abs(&(&psi_rho * s - &ao * &psi_rho - &pi.pi1 * l * cr)),
        linalg::max_abs(
            &(&psi_eta * s
                - (&phi * &psi_eta + &g * &pi.h1 * &psi_zeta_e + &g * &pi.h2 * &psi_zeta_u + &g * c * &psi_rho
                    - &g * cr)),
        ),
        linalg::max_abs(
            &(&psi_zeta_e * s
                - ((&f + l * &pi.h1) * &psi_zeta_e + l * &pi.h2 * &psi_zeta_u + l * c * &psi_rho - l * cr)),
        ),
        linalg::max_abs(
            &(&psi_zeta_u * s - (l * &k_eta * &psi_eta + l * &k_ze * &psi_zeta_e + (&f + l * &k_zu) * &psi_zeta_u)),
        ),
    ];

    let mut chain_residuals = Vec::with_capacity(d);
    for i in 0..d.saturating_sub(1) {
        let lhs = psi_eta.row(i) * s;
        chain_residuals.push((lhs - psi_eta.row(i + 1)).amax());
    }
    // Ψ_{η,d} S = -Σ θ_i Ψ_{η,i} + CΨ_x - C_r with CΨ_x = H₁Ψ_ζe + H₂Ψ_ζu + CΨ_ρe.
    let c_psi_x = &pi.h1 * &psi_zeta_e + &pi.h2 * &psi_zeta_u + c * &psi_rho;
    let last = psi_eta.row(d - 1) * s;
    let rhs = -(theta.transpose() * &psi_eta) + c_psi_x - cr;
    chain_residuals.push((last - rhs).amax());

    Ok(PsiSolution {
        psi_rho,
        psi_eta,
        psi_zeta_e,
        psi_zeta_u,
        closed_loop: m,
        sylvester_residuals,
        chain_residuals,
    })
}

/// One line of the residual table.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub name: String,
    pub value: f64,
    pub tol: f64,
}

impl Residual {
    pub fn new(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tol,
        }
    }

    pub fn passed(&self) -> bool {
        self.value.is_finite() && self.value < self.tol
    }
}

pub fn residual_table(rows: &[Residual]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<44} {:>12} {:>10}  status", "relation", "residual", "tol");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<44} {:>12.3e} {:>10.1e}  {}",
            r.name,
            r.value,
            r.tol,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    s
}

/// Ground truth bundle for one `(plant, exosystem, filter, θ, K)`.
#[derive(Debug, Clone)]
pub struct OracleBundle {
    pub pi: PiSolution,
    pub m_rho: MRho,
    pub theta_star: DVector<f64>,
    pub ac_theta: DMatrix<f64>,
    pub psi: PsiSolution,
    pub residuals: Vec<Residual>,
}

impl OracleBundle {
    /// `𝒟𝒞`, the quantity the data-driven estimator targets.
    pub fn dc(&self, fp: &FilterParams) -> DMatrix<f64> {
        let d = self.theta_star.len();
        let n = fp.n();
        let mut cal_d = DVector::zeros(d + 2 * n);
        cal_d.rows_mut(0, d).copy_from(&internal_model_input(d));
        cal_d.rows_mut(d, n).copy_from(&fp.l);
        let mut cal_c = RowDVector::zeros(2 * n);
        cal_c.columns_mut(0, n).copy_from(&self.pi.h1);
        cal_c.columns_mut(n, n).copy_from(&self.pi.h2);
        cal_d * cal_c
    }

    pub fn all_passed(&self) -> bool {
        self.residuals.iter().all(Residual::passed)
    }
}

pub const ORACLE_TOL: f64 = 1e-8;

/// Largest entry of `Z₊ - 𝒜_c^θ Z - ℬ_c U - 𝒟 M_ρ X` with the oracle's
/// `𝒜_c^θ` and `M_ρ`. Zero up to integration error on noise-free data.
pub fn data_equation_residual(dm: &DataMatrices, theta: &DVector<f64>, fp: &FilterParams, bundle: &OracleBundle) -> Result<f64> {
    let cc = CascadeConstants::new(theta, fp)?;
    let ac = ac_theta(theta, fp, &bundle.pi.h1, &bundle.pi.h2)?;
    let r = dm.z_plus() - ac * dm.z() - &cc.cal_bc * &dm.u - &cc.cal_d * &bundle.m_rho.m_rho * &dm.x;
    Ok(linalg::max_abs(&r))
}

pub fn build_oracle(
    plant: &LtiPlant,
    exo: &Exosystem,
    fp: &FilterParams,
    theta: &DVector<f64>,
    k: &RowDVector<f64>,
    rho0: Option<&DVector<f64>>,
) -> Result<OracleBundle> {
    let pi = solve_pi(plant, fp)?;
    let m_rho = solve_m_rho(plant, &pi.pi1, fp, rho0)?;
    let theta_star = char_poly_theta(&exo.s)?;
    let ac = ac_theta(theta, fp, &pi.h1, &pi.h2)?;
    let psi = sylvester_psi(plant, exo, fp, theta, k)?;

    let mut residuals = Vec::new();
    let names = [
        "Pi1 F = (A - Pi1 L C) Pi1",
        "H1 = C Pi1",
        "Pi2 F = (A - Pi1 L C) Pi2",
        "Pi2 L = B",
        "H2 = C Pi2",
    ];
    for (name, r) in names.iter().zip(pi.residuals(plant, fp)) {
        residuals.push(Residual::new(*name, r, ORACLE_TOL));
    }
    let ao = &plant.a - &pi.pi1 * &fp.l * &plant.c;
    residuals.push(Residual::new(
        "T_rho (A - Pi1 L C) T_rho^-1 = Lambda_F",
        linalg::max_abs(&(&m_rho.t_rho * ao * m_rho.t_rho.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(fp.n(), fp.n(), f64::NAN)) - fp.f())),
        1e-6,
    ));
    let syl_names = ["Psi_rho sylvester", "Psi_eta sylvester", "Psi_zeta_e sylvester", "Psi_zeta_u sylvester"];
    for (name, r) in syl_names.iter().zip(psi.sylvester_residuals) {
        residuals.push(Residual::new(*name, r, ORACLE_TOL));
    }
    let d = theta.len();
    for (i, r) in psi.chain_residuals.iter().enumerate() {
        let name = if i + 1 < d {
            format!("Psi_eta,{} S = Psi_eta,{}", i + 1, i + 2)
        } else {
            format!("Psi_eta,{d} S last-row identity")
        };
        residuals.push(Residual::new(name, *r, ORACLE_TOL));
    }
    Ok(OracleBundle {
        pi,
        m_rho,
        theta_star,
        ac_theta: ac,
        psi,
        residuals,
    })
}

/// Least-squares slope of `-ln‖x(t)‖` over the samples with `t ≥ t_from`.
pub fn fit_decay_rate(times: &[f64], norms: &[f64], t_from: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(norms)
        .filter(|(t, n)| **t >= t_from && **n > 0.0 && n.is_finite())
        .map(|(t, n)| (*t, n.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (st, sl) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mt, ml) = (st / m, sl / m);
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mt) * (p.1 - ml), a.1 + (p.0 - mt).powi(2)));
    if den == 0.0 {
        return None;
    }
    Some(-num / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// Fitted exponential rate over the second half of the horizon; `None`
    /// when the trajectory is identically zero.
    pub rate: Option<f64>,
    pub initial_norm: f64,
    pub final_norm: f64,
}

/// Simulates `ρ̇ = (A - Π₁LC)ρ` and fits its decay rate.
pub fn transverse_decay(plant: &LtiPlant, fp: &FilterParams, pi1: &DMatrix<f64>, rho0: &DVector<f64>, horizon: f64) -> Result<DecayReport> {
    let ao = &plant.a - pi1 * &fp.l * &plant.c;
    let tr = rk4_integrate(|_, r| &ao * r, rho0, 0.0, horizon, 1e-3)?;
    let norms: Vec<f64> = tr.states.iter().map(|r| r.norm()).collect();
    Ok(DecayReport {
        rate: fit_decay_rate(&tr.times, &norms, 0.5 * horizon),
        initial_norm: norms[0],
        final_norm: *norms.last().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference;

    #[test]
    fn reference_pi_residuals() {
        let plant = reference::plant();
        let fp = reference::filter();
        let sol = solve_pi(&plant, &fp).unwrap();
        for r in sol.residuals(&plant, &fp) {
            assert!(r < 1e-8, "residual {r}");
        }
        assert_eq!(sol.stacked_rank(), 3);
    }

    #[test]
    fn m_rho_when_already_diagonal() {
        // A - Π₁LC = Λ_F holds with Π₁ = 0 when A = Λ_F.
        let fp = reference::filter();
        let plant = LtiPlant::new(fp.f(), DVector::from_element(3, 1.0), RowDVector::from_row_slice(&[1.0, 1.0, 1.0])).unwrap();
        let m = solve_m_rho(&plant, &DMatrix::zeros(3, 3), &fp, None).unwrap();
        let scaled_eye = m.t_rho.map(|v| v.abs());
        assert!((scaled_eye - DMatrix::identity(3, 3)).amax() < 1e-12);
        assert!((m.m_rho.map(|v| v.abs()) - plant.c).amax() < 1e-12);
    }

    #[test]
    fn decay_of_zero_state() {
        let plant = reference::plant();
        let fp = reference::filter();
        let sol = solve_pi(&plant, &fp).unwrap();
        let rep = transverse_decay(&plant, &fp, &sol.pi1, &DVector::zeros(3), 2.0).unwrap();
        assert_eq!(rep.rate, None);
        assert_eq!(rep.final_norm, 0.0);
    }

    #[test]
    fn fit_recovers_exponential() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let n: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        assert!((fit_decay_rate(&t, &n, 0.0).unwrap() - 0.7).abs() < 1e-12);
    }
}
