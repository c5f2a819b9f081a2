mod common;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use regulab::linalg::{self, RANK_TOL};
use regulab::model::{char_poly_theta, pbh_nonresonance, reference, Exosystem, FilterParams, LtiPlant};
use regulab::oracle::{build_oracle, residual_table, solve_m_rho, solve_pi, sylvester_psi, transverse_decay};
use regulab::sim::{excitation, rk4_integrate, ExcitationSpec};

fn stabilizing_k(plant: &LtiPlant, exo: &Exosystem, fp: &FilterParams) -> RowDVector<f64> {
    // Model-based gain from the exact cascade: enough to exercise the oracle.
    let theta = char_poly_theta(&exo.s).unwrap();
    let pi = solve_pi(plant, fp).unwrap();
    let (cal_a, _, cal_c) = regulab::model::cascade_matrices(fp, &pi.h1, &pi.h2);
    let cc = regulab::synth::CascadeConstants::new(&theta, fp).unwrap();
    let d = theta.len();
    let n = fp.n();
    let mut a = DMatrix::zeros(d + 2 * n, d + 2 * n);
    a.view_mut((0, 0), (d, d)).copy_from(&regulab::model::companion(&theta).unwrap());
    a.view_mut((0, d), (d, 2 * n)).copy_from(&(regulab::model::internal_model_input(d) * cal_c));
    a.view_mut((d, d), (2 * n, 2 * n)).copy_from(&cal_a);
    let q = DMatrix::identity(d + 2 * n, d + 2 * n);
    regulab::synth::stabilizing_gain(&a, &cc.cal_bc, &q, 1.0).unwrap().k
}

#[test]
fn reference_bundle_passes_every_relation() {
    let plant = reference::plant();
    let exo = reference::exosystem();
    let fp = reference::filter();
    let theta = char_poly_theta(&exo.s).unwrap();
    let k = stabilizing_k(&plant, &exo, &fp);
    let rho0 = DVector::from_column_slice(&[0.2, -0.7, 0.4]);
    let b = build_oracle(&plant, &exo, &fp, &theta, &k, Some(&rho0)).unwrap();
    assert!(b.all_passed(), "{}", residual_table(&b.residuals));
    assert_eq!(b.theta_star, DVector::from_column_slice(&[4.0, 0.0]));
    assert_eq!(b.psi.psi().shape(), (8, 2));
    assert!(pbh_nonresonance(&plant, &b.theta_star, RANK_TOL));
    // Last-row identity at θ⋆ is part of the chain residuals.
    assert!(b.psi.chain_residuals[1] < 1e-8);
}

#[test]
fn trivial_chain_plant_builds() {
    let a = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, -1.0]);
    let plant = LtiPlant::new(a, DVector::from_column_slice(&[0.0, 0.0, 1.0]), RowDVector::from_row_slice(&[1.0, 0.0, 0.0])).unwrap();
    let exo = reference::exosystem();
    let fp = reference::filter();
    let theta = char_poly_theta(&exo.s).unwrap();
    let k = stabilizing_k(&plant, &exo, &fp);
    let b = build_oracle(&plant, &exo, &fp, &theta, &k, None).unwrap();
    assert!(b.all_passed(), "{}", residual_table(&b.residuals));
}

#[test]
fn filter_spectrum_is_assigned() {
    let mut rng = common::rng(5);
    for _ in 0..10 {
        let plant = common::random_plant(&mut rng, 3);
        let fp = common::random_filter(&mut rng, 3);
        let pi = solve_pi(&plant, &fp).unwrap();
        let ao = &plant.a - &pi.pi1 * &fp.l * &plant.c;
        let mut eig: Vec<f64> = linalg::eigenvalues(&ao).iter().map(|z| z.re).collect();
        let mut want: Vec<f64> = fp.lambda.iter().cloned().collect();
        eig.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (a, b) in eig.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{eig:?} vs {want:?}");
        }
        assert!(pi.residuals(&plant, &fp).iter().all(|r| *r < 1e-8));
    }
}

#[test]
fn m_rho_reproduces_transverse_output() {
    // With ζ(0) = 0 and x(0) = ρ0: Cx - H₁ζ_y - H₂ζ_u = Cρ = M_ρ χ.
    let plant = reference::plant();
    let fp = reference::filter();
    let pi = solve_pi(&plant, &fp).unwrap();
    let rho0 = DVector::from_column_slice(&[0.5, -0.3, 0.8]);
    let m = solve_m_rho(&plant, &pi.pi1, &fp, Some(&rho0)).unwrap();
    let exc = ExcitationSpec::default();
    let n = 3;
    let f = fp.f();
    let mut s0 = DVector::zeros(3 * n);
    s0.rows_mut(0, n).copy_from(&rho0);
    let tr = rk4_integrate(
        |t, s| {
            let u = excitation(&exc, t);
            let y = (&plant.c * s.rows(0, n))[0];
            let mut ds = DVector::zeros(3 * n);
            ds.rows_mut(0, n).copy_from(&(&plant.a * s.rows(0, n) + &plant.b * u));
            ds.rows_mut(n, n).copy_from(&(&f * s.rows(n, n) + &fp.l * y));
            ds.rows_mut(2 * n, n).copy_from(&(&f * s.rows(2 * n, n) + &fp.l * u));
            ds
        },
        &s0,
        0.0,
        5.0,
        1e-3,
    )
    .unwrap();
    for (t, s) in tr.times.iter().zip(&tr.states).step_by(250) {
        let lhs = (&plant.c * s.rows(0, n))[0] - (&pi.h1 * s.rows(n, n))[0] - (&pi.h2 * s.rows(2 * n, n))[0];
        let chi = fp.lambda.map(|l| (l * t).exp());
        let rhs = (&m.m_rho * chi)[0];
        assert!((lhs - rhs).abs() < 1e-7 * (1.0 + lhs.abs()), "t={t}: {lhs} vs {rhs}");
    }
}

#[test]
fn m_rho_rejects_degenerate_initial_state() {
    let plant = reference::plant();
    let fp = reference::filter();
    let pi = solve_pi(&plant, &fp).unwrap();
    assert!(solve_m_rho(&plant, &pi.pi1, &fp, Some(&DVector::zeros(3))).is_err());
}

#[test]
fn transverse_decay_matches_slowest_filter_pole() {
    let plant = reference::plant();
    let fp = reference::filter();
    let pi = solve_pi(&plant, &fp).unwrap();
    let mut rng = common::rng(11);
    let mut rates = Vec::new();
    for _ in 0..2 {
        let rho0 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let rep = transverse_decay(&plant, &fp, &pi.pi1, &rho0, 10.0).unwrap();
        let rate = rep.rate.unwrap();
        assert!((rate - 1.0).abs() < 0.1, "rate {rate}");
        rates.push(rate);
    }
    assert!((rates[0] - rates[1]).abs() < 0.05 * rates[0]);
}

#[test]
fn psi_with_zero_reference_is_zero() {
    let plant = reference::plant();
    let fp = reference::filter();
    let exo0 = reference::exosystem();
    let exo = Exosystem::new(exo0.s.clone(), RowDVector::zeros(2), exo0.w0.clone()).unwrap();
    let k = stabilizing_k(&plant, &exo0, &fp);
    let psi = sylvester_psi(&plant, &exo, &fp, &DVector::from_column_slice(&[4.0, 0.0]), &k).unwrap();
    assert_eq!(linalg::max_abs(&psi.psi()), 0.0);
}

#[test]
fn psi_rejects_non_stabilizing_gain() {
    let plant = reference::plant();
    let exo = reference::exosystem();
    let fp = reference::filter();
    let k = RowDVector::zeros(8);
    assert!(sylvester_psi(&plant, &exo, &fp, &DVector::from_column_slice(&[4.0, 0.0]), &k).is_err());
}
