//! Small dense linear-algebra helpers shared by the structural tests, the
//! synthesis routines and the oracles.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative singular-value threshold used for every rank decision.
pub const RANK_TOL: f64 = 1e-8;

/// Relative cutoff for pseudoinverses.
pub const PINV_TOL: f64 = 1e-10;

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

/// Numerical rank: number of singular values above `rel_tol * sigma_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    count_above(singular_values(m).as_slice(), rel_tol)
}

pub fn rank_complex(m: &DMatrix<Complex64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    count_above(sv.as_slice(), rel_tol)
}

fn count_above(sv: &[f64], rel_tol: f64) -> usize {
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Moore-Penrose pseudoinverse through the SVD, discarding singular values
/// below `rel_tol * sigma_max`.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if m.is_empty() {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(c, r);
    }
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Divides every nonzero row by its Euclidean norm; returns the scaled matrix
/// and the applied factors. Rank is unchanged, conditioning usually improves
/// when rows differ by orders of magnitude.
pub fn row_equilibrate(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let factors = DVector::from_fn(m.nrows(), |i, _| {
        let nrm = m.row(i).norm();
        if nrm > 0.0 {
            1.0 / nrm
        } else {
            1.0
        }
    });
    (DMatrix::from_diagonal(&factors) * m, factors)
}

/// Pseudoinverse computed on the row-equilibrated matrix: `(DM)† D`. Equal to
/// `M†` whenever `M` has full row rank.
pub fn pinv_row_scaled(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (scaled, factors) = row_equilibrate(m);
    pinv(&scaled, rel_tol) * DMatrix::from_diagonal(&factors)
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            out.view_mut((i * br, j * bc), (br, bc))
                .copy_from(&(b * a[(i, j)]));
        }
    }
    out
}

/// Solves `A X + X B = C` through the Kronecker form
/// `(I ⊗ A + Bᵀ ⊗ I) vec(X) = vec(C)`.
///
/// Only meant for the small systems that appear here (a few dozen unknowns).
pub fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, n) = c.shape();
    if a.shape() != (m, m) || b.shape() != (n, n) {
        return Err(Error::dim(format!(
            "sylvester: A {:?}, B {:?}, C {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    let big = kron(&DMatrix::identity(n, n), a) + kron(&b.transpose(), &DMatrix::identity(m, m));
    let rhs = DVector::from_column_slice(c.as_slice());
    // Separation of the spectra, not the conditioning of the Kronecker
    // operator: non-normal but well separated pairs are fine to solve.
    let scale = norm_inf(a).max(norm_inf(b)).max(1.0);
    let (ea, eb) = (eigenvalues(a), eigenvalues(b));
    let sep = ea
        .iter()
        .flat_map(|x| eb.iter().map(move |y| (x + y).norm()))
        .fold(f64::INFINITY, f64::min);
    if sep <= 1e-10 * scale {
        return Err(Error::Resonance(
            "Sylvester operator is singular (spectra of A and -B overlap)".into(),
        ));
    }
    let x = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Resonance("singular Sylvester operator".into()))?;
    Ok(DMatrix::from_column_slice(m, n, x.as_slice()))
}

/// Solves the Lyapunov equation `Aᵀ X + X A + Q = 0`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = solve_sylvester(&a.transpose(), a, &(-q))?;
    Ok((&x + x.transpose()) * 0.5)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Induced infinity norm (maximum absolute row sum).
pub fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.is_empty() {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().cloned().collect()
}

pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Stacks matrices with equal column counts vertically.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack: column mismatch");
        out.view_mut((r0, 0), b.shape()).copy_from(*b);
        r0 += b.nrows();
    }
    out
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(*b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}
