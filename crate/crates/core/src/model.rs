//! Domain types for the plant, the exosystem and the filter bank, plus the
//! structural tests (controllability, observability, non-resonance) that
//! every experiment relies on.

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};

/// The SISO plant `ẋ = A x + B u`, `y = C x`.
///
/// Only the simulator and the oracles look inside; the regulator works from
/// recorded input/output data.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
}

impl LtiPlant {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: RowDVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || b.len() != n || c.len() != n {
            return Err(Error::dim(format!(
                "plant: A {:?}, B {}, C {}",
                a.shape(),
                b.len(),
                c.len()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

/// Autonomous reference generator `ẇ = S w`, `y_r = C_r w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exosystem {
    pub s: DMatrix<f64>,
    pub c_r: RowDVector<f64>,
    pub w0: DVector<f64>,
}

impl Exosystem {
    pub fn new(s: DMatrix<f64>, c_r: RowDVector<f64>, w0: DVector<f64>) -> Result<Self> {
        let d = s.nrows();
        if d == 0 || s.ncols() != d || c_r.len() != d || w0.len() != d {
            return Err(Error::dim(format!(
                "exosystem: S {:?}, C_r {}, w0 {}",
                s.shape(),
                c_r.len(),
                w0.len()
            )));
        }
        Ok(Self { s, c_r, w0 })
    }

    pub fn d(&self) -> usize {
        self.s.nrows()
    }

    /// Eigenvalues of `S` are pairwise distinct and lie on the imaginary axis
    /// (both within `tol`).
    pub fn spectrum_is_admissible(&self, tol: f64) -> bool {
        let eig = linalg::eigenvalues(&self.s);
        let on_axis = eig.iter().all(|z| z.re.abs() <= tol);
        let distinct = eig
            .iter()
            .enumerate()
            .all(|(i, a)| eig[i + 1..].iter().all(|b| (a - b).norm() > tol));
        on_axis && distinct
    }
}

/// Componentwise bounds of the admissible parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaBox {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl ThetaBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::dim(format!("box: lo {}, hi {}", lo.len(), hi.len())));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(Error::Config {
                field: "identifier.box".into(),
                message: "lo must not exceed hi componentwise".into(),
            });
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(t, (l, h))| *l <= *t && *t <= *h)
    }

    /// All `2^d` corners, lexicographic in (lo, hi).
    pub fn corners(&self) -> Vec<DVector<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                DVector::from_fn(d, |i, _| {
                    if mask >> (d - 1 - i) & 1 == 1 {
                        self.hi[i]
                    } else {
                        self.lo[i]
                    }
                })
            })
            .collect()
    }
}

/// Input/output filter `ζ̇ = Λ_F ζ + L s` with a diagonal Hurwitz `Λ_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    /// Diagonal of `Λ_F`: strictly negative and pairwise distinct.
    pub lambda: DVector<f64>,
    pub l: DVector<f64>,
}

impl FilterParams {
    pub fn new(lambda: DVector<f64>, l: DVector<f64>) -> Result<Self> {
        let n = lambda.len();
        if n == 0 || l.len() != n {
            return Err(Error::dim(format!("filter: lambda {}, L {}", n, l.len())));
        }
        if lambda.iter().any(|v| !(*v < 0.0)) {
            return Err(Error::Config {
                field: "filter.lambda".into(),
                message: "entries must be strictly negative".into(),
            });
        }
        for i in 0..n {
            for j in i + 1..n {
                if lambda[i] == lambda[j] {
                    return Err(Error::Config {
                        field: "filter.lambda".into(),
                        message: "entries must be pairwise distinct".into(),
                    });
                }
            }
        }
        if l.iter().any(|v| *v == 0.0) {
            return Err(Error::Config {
                field: "filter.L".into(),
                message: "(Λ_F, L) must be controllable: every entry of L nonzero".into(),
            });
        }
        Ok(Self { lambda, l })
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// `Λ_F` as a dense matrix.
    pub fn f(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.lambda)
    }
}

/// Companion matrix `Φ(θ)`: ones on the superdiagonal, last row `-θᵀ`.
///
/// Its characteristic polynomial is `λ^d + θ_d λ^{d-1} + … + θ_1`.
pub fn companion(theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = theta.len();
    if d == 0 {
        return Err(Error::dim("companion: empty parameter vector"));
    }
    let mut phi = DMatrix::zeros(d, d);
    for i in 0..d - 1 {
        phi[(i, i + 1)] = 1.0;
    }
    for j in 0..d {
        phi[(d - 1, j)] = -theta[j];
    }
    Ok(phi)
}

/// `G = (0, …, 0, 1)ᵀ`, the input vector of the internal model.
pub fn internal_model_input(d: usize) -> DVector<f64> {
    let mut g = DVector::zeros(d);
    if d > 0 {
        g[d - 1] = 1.0;
    }
    g
}

/// Coefficients `θ` with `det(λI - S) = λ^d + θ_d λ^{d-1} + … + θ_1`.
///
/// Faddeev-LeVerrier recursion; fine for the low orders used for exosystems.
pub fn char_poly_theta(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = s.nrows();
    if s.ncols() != d {
        return Err(Error::dim(format!("char_poly_theta: S is {:?}", s.shape())));
    }
    // coeffs[k] multiplies λ^k; coeffs[d] = 1.
    let mut coeffs = vec![0.0; d + 1];
    coeffs[d] = 1.0;
    let eye = DMatrix::<f64>::identity(d, d);
    let mut m = DMatrix::<f64>::zeros(d, d);
    for k in 1..=d {
        m = s * &m + &eye * coeffs[d - k + 1];
        coeffs[d - k] = -(s * &m).trace() / k as f64;
    }
    Ok(DVector::from_column_slice(&coeffs[..d]))
}

/// Roots of `p(·, θ)`, computed as the eigenvalues of `Φ(θ)`.
pub fn poly_roots(theta: &DVector<f64>) -> Vec<Complex64> {
    match companion(theta) {
        Ok(phi) => linalg::eigenvalues(&phi),
        Err(_) => Vec::new(),
    }
}

pub fn controllability_matrix(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        out.set_column(k, &col);
        col = a * col;
    }
    out
}

pub fn observability_matrix(a: &DMatrix<f64>, c: &RowDVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut row = c.clone();
    for k in 0..n {
        out.set_row(k, &row);
        row = row * a;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructureReport {
    pub controllable: bool,
    pub observable: bool,
}

pub fn check_structure(plant: &LtiPlant) -> StructureReport {
    check_structure_with_tol(plant, RANK_TOL)
}

pub fn check_structure_with_tol(plant: &LtiPlant, rel_tol: f64) -> StructureReport {
    let n = plant.n();
    StructureReport {
        controllable: linalg::rank(&controllability_matrix(&plant.a, &plant.b), rel_tol) == n,
        observable: linalg::rank(&observability_matrix(&plant.a, &plant.c), rel_tol) == n,
    }
}

/// Rosenbrock matrix `[A - λI  B; C  0]`.
pub fn rosenbrock(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &RowDVector<f64>,
    lambda: Complex64,
) -> DMatrix<Complex64> {
    let n = a.nrows();
    let mut m = DMatrix::from_element(n + 1, n + 1, Complex64::new(0.0, 0.0));
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = Complex64::new(a[(i, j)], 0.0);
        }
        m[(i, i)] -= lambda;
        m[(i, n)] = Complex64::new(b[i], 0.0);
        m[(n, i)] = Complex64::new(c[i], 0.0);
    }
    m
}

fn rosenbrock_full_rank_at_roots(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &RowDVector<f64>,
    theta: &DVector<f64>,
    rel_tol: f64,
) -> bool {
    let n = a.nrows();
    poly_roots(theta)
        .into_iter()
        .all(|lambda| linalg::rank_complex(&rosenbrock(a, b, c, lambda), rel_tol) == n + 1)
}

/// Non-resonance of the plant with respect to every root of `p(·, θ)`.
/// An empty `θ` has no roots and passes vacuously.
pub fn pbh_nonresonance(plant: &LtiPlant, theta: &DVector<f64>, rel_tol: f64) -> bool {
    rosenbrock_full_rank_at_roots(&plant.a, &plant.b, &plant.c, theta, rel_tol)
}

/// Non-resonance of the filter cascade `(𝒜, ℬ, 𝒞)` on `σ(Φ(θ))`.
pub fn pbh_cascade(
    cal_a: &DMatrix<f64>,
    cal_b: &DVector<f64>,
    cal_c: &RowDVector<f64>,
    theta: &DVector<f64>,
    rel_tol: f64,
) -> bool {
    rosenbrock_full_rank_at_roots(cal_a, cal_b, cal_c, theta, rel_tol)
}

/// The cascade `(𝒜, ℬ, 𝒞)` formed by the filters and the output map
/// `y = H₁ ζ_y + H₂ ζ_u`.
pub fn cascade_matrices(
    fp: &FilterParams,
    h1: &RowDVector<f64>,
    h2: &RowDVector<f64>,
) -> (DMatrix<f64>, DVector<f64>, RowDVector<f64>) {
    let n = fp.n();
    let f = fp.f();
    let mut cal_a = DMatrix::zeros(2 * n, 2 * n);
    cal_a.view_mut((0, 0), (n, n)).copy_from(&(&f + &fp.l * h1));
    cal_a.view_mut((0, n), (n, n)).copy_from(&(&fp.l * h2));
    cal_a.view_mut((n, n), (n, n)).copy_from(&f);
    let mut cal_b = DVector::zeros(2 * n);
    cal_b.rows_mut(n, n).copy_from(&fp.l);
    let mut cal_c = RowDVector::zeros(2 * n);
    cal_c.columns_mut(0, n).copy_from(h1);
    cal_c.columns_mut(n, n).copy_from(h2);
    (cal_a, cal_b, cal_c)
}

/// `true` iff every eigenvalue of `m` has real part below `-margin`.
pub fn is_hurwitz(m: &DMatrix<f64>, margin: f64) -> bool {
    m.is_square() && linalg::spectral_abscissa(m) < -margin
}

/// The plant, exosystem and filter used in the reference experiment.
pub mod reference {
    use super::*;
    use std::f64::consts::PI;

    pub fn plant() -> LtiPlant {
        LtiPlant::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, -1.0, 0.0, 1.0, 1.0, 1.0, 0.0]),
            DVector::from_column_slice(&[0.0, 1.0, 2.0]),
            RowDVector::from_row_slice(&[-1.0, 1.0, 0.0]),
        )
        .expect("reference plant")
    }

    pub fn exosystem() -> Exosystem {
        Exosystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]),
            RowDVector::from_row_slice(&[-2.0, -50.0 / (PI * PI)]),
            DVector::from_element(2, 1.0),
        )
        .expect("reference exosystem")
    }

    pub fn filter() -> FilterParams {
        FilterParams::new(
            DVector::from_column_slice(&[-1.0, -2.0, -3.0]),
            DVector::from_column_slice(&[1.0, 2.0, 3.0]),
        )
        .expect("reference filter")
    }

    pub fn theta_box() -> ThetaBox {
        ThetaBox::new(
            DVector::from_column_slice(&[0.5, -1.0]),
            DVector::from_column_slice(&[10.0, 2.0]),
        )
        .expect("reference box")
    }
}
