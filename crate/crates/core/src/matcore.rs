//! Dense complex linear algebra with explicitly toleranced predicates.
//!
//! Every rank, positivity and kernel decision in the crate goes through this
//! module. Thresholds are always `atol + rtol * sigma_max(A)` where
//! `sigma_max` is the largest singular value of the matrix under test.
//!
//! Tensor products are ordered input ⊗ output throughout, and vectorization
//! is column stacking, so that `vec(ABC) = (Cᵀ ⊗ A) vec(B)`.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Absolute and scale-relative tolerance for rank-type decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
}

impl Tolerance {
    pub fn new(atol: f64, rtol: f64) -> Result<Self> {
        if !(atol > 0.0 && rtol > 0.0 && atol.is_finite() && rtol.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must be positive and finite (atol={atol}, rtol={rtol})"
            )));
        }
        Ok(Self { atol, rtol })
    }

    /// Decision threshold for a matrix whose largest singular value is `scale`.
    pub fn threshold(&self, scale: f64) -> f64 {
        self.atol + self.rtol * scale
    }

    /// Same tolerance with both components multiplied by `factor`.
    pub fn relaxed(&self, factor: f64) -> Self {
        Self {
            atol: self.atol * factor,
            rtol: self.rtol * factor,
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-10,
        }
    }
}

/// Dense complex matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl ComplexMatrix {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if let Some(pos) = m
            .iter()
            .position(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            // column-major storage
            let (row, col) = (pos % m.nrows(), pos / m.nrows());
            return Err(Error::NonFinite { row, col });
        }
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::Dimension("matrices must have positive size".into()));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_dmatrix(m: DMatrix<C64>) -> Self {
        debug_assert!(m.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        Self(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self::from_dmatrix(DMatrix::from_fn(rows, cols, f))
    }

    /// Builds a matrix from row vectors. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    /// Column vector from its entries.
    pub fn column(entries: &[C64]) -> Self {
        Self::from_dmatrix(DMatrix::from_column_slice(entries.len(), 1, entries))
    }

    /// `|u⟩⟨v|`
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<C64>> {
        (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn conj(&self) -> Self {
        Self(self.0.map(|z| z.conj()))
    }

    pub fn trace(&self) -> C64 {
        self.0.diagonal().iter().sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    pub fn scale_c(&self, s: C64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Hilbert-Schmidt inner product `Tr[A† B]`.
    pub fn hs_inner(&self, other: &Self) -> C64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `(A + A†) / 2`
    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }

    pub fn column_entries(&self, j: usize) -> Vec<C64> {
        self.0.column(j).iter().copied().collect()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.0[idx]
    }
}

impl<'a> Add<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl<'a> Sub<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

impl<'a> Mul<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        ComplexMatrix(-&self.0)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        self.0 += &rhs.0;
    }
}

/// Pauli matrices `σ₀ = 1, σ₁, σ₂, σ₃`.
pub fn pauli(mu: usize) -> ComplexMatrix {
    let m = match mu {
        0 => [[ONE, ZERO], [ZERO, ONE]],
        1 => [[ZERO, ONE], [ONE, ZERO]],
        2 => [[ZERO, -I], [I, ZERO]],
        3 => [[ONE, ZERO], [ZERO, -ONE]],
        _ => panic!("Pauli index {mu} out of range"),
    };
    ComplexMatrix::from_fn(2, 2, |i, j| m[i][j])
}

fn require_square(a: &ComplexMatrix) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        })
    }
}

pub fn singular_values(a: &ComplexMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.0.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn sigma_max(a: &ComplexMatrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

pub fn is_hermitian(a: &ComplexMatrix, tol: Tolerance) -> Result<bool> {
    require_square(a)?;
    let dev = (a - &a.adjoint()).max_abs();
    Ok(dev <= tol.threshold(sigma_max(a)))
}

/// Hermitian eigendecomposition. Eigenvalues ascending; eigenvectors are the
/// columns of the returned matrix, so `A ≈ V diag(λ) V†`.
pub fn eigh(a: &ComplexMatrix, tol: Tolerance) -> Result<(Vec<f64>, ComplexMatrix)> {
    require_square(a)?;
    if !is_hermitian(a, tol)? {
        return Err(Error::NotHermitian {
            deviation: (a - &a.adjoint()).max_abs(),
        });
    }
    Ok(eigh_unchecked(a))
}

pub(crate) fn eigh_unchecked(a: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let n = a.rows();
    let eig = a.hermitian_part().0.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, ComplexMatrix(vectors))
}

/// Smallest eigenvalue plus the decision threshold. Nonnegative iff PSD at `tol`.
pub fn psd_margin(a: &ComplexMatrix, tol: Tolerance) -> Result<f64> {
    let (values, _) = eigh(a, tol)?;
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(values[0] + tol.threshold(scale))
}

pub fn is_psd(a: &ComplexMatrix, tol: Tolerance) -> Result<bool> {
    Ok(psd_margin(a, tol)? >= 0.0)
}

pub fn rank(a: &ComplexMatrix, tol: Tolerance) -> usize {
    let s = singular_values(a);
    let thr = tol.threshold(s.first().copied().unwrap_or(0.0));
    s.iter().filter(|&&x| x > thr).count()
}

/// Orthonormal basis (as column vectors) of the numerical kernel of `a`.
pub fn nullspace(a: &ComplexMatrix, tol: Tolerance) -> Vec<ComplexMatrix> {
    let (m, n) = (a.rows(), a.cols());
    // pad to at least n rows so the SVD returns a complete right basis
    let padded = if m < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(&a.0);
        p
    } else {
        a.0.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let thr = tol.threshold(smax);
    let mut basis: Vec<(f64, ComplexMatrix)> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] <= thr)
        .map(|k| {
            let col: Vec<C64> = v_t.row(k).iter().map(|z| z.conj()).collect();
            (svd.singular_values[k], ComplexMatrix::column(&col))
        })
        .collect();
    basis.sort_by(|x, y| x.0.total_cmp(&y.0));
    basis.into_iter().map(|(_, v)| v).collect()
}

/// Right-singular kernel of a real matrix, with the singular values used for
/// the decision (ascending, padded with zeros up to the column count).
pub(crate) fn real_nullspace(a: &DMatrix<f64>, tol: Tolerance) -> (Vec<DVector<f64>>, Vec<f64>) {
    let (m, n) = a.shape();
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let padded = if m < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let thr = tol.threshold(smax);
    let mut idx: Vec<usize> = (0..sv.len()).collect();
    idx.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let kernel = idx
        .iter()
        .filter(|&&k| sv[k] <= thr)
        .map(|&k| v_t.row(k).transpose())
        .collect();
    let values = idx.iter().map(|&k| sv[k]).collect();
    (kernel, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    First,
    Second,
}

/// Partial trace of an operator on `C^d1 ⊗ C^d2` over the named factor.
pub fn partial_trace(a: &ComplexMatrix, dims: (usize, usize), side: Side) -> Result<ComplexMatrix> {
    let (d1, d2) = dims;
    require_square(a)?;
    if a.rows() != d1 * d2 {
        return Err(Error::Dimension(format!(
            "partial trace of {}x{} over {d1}x{d2}",
            a.rows(),
            a.cols()
        )));
    }
    let out = match side {
        Side::Second => ComplexMatrix::from_fn(d1, d1, |i, j| {
            (0..d2).map(|k| a[(i * d2 + k, j * d2 + k)]).sum()
        }),
        Side::First => ComplexMatrix::from_fn(d2, d2, |i, j| {
            (0..d1).map(|k| a[(k * d2 + i, k * d2 + j)]).sum()
        }),
    };
    Ok(out)
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix(a.0.kronecker(&b.0))
}

/// Column-stacking vectorization.
pub fn vec_columns(a: &ComplexMatrix) -> Vec<C64> {
    a.0.as_slice().to_vec()
}

/// Inverse of [`vec_columns`].
pub fn unvec_columns(v: &[C64], rows: usize, cols: usize) -> Result<ComplexMatrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape {} entries into {rows}x{cols}",
            v.len()
        )));
    }
    ComplexMatrix::new(DMatrix::from_column_slice(rows, cols, v))
}

/// Square root of a PSD matrix, clipping eigenvalues below zero.
pub fn psd_sqrt(a: &ComplexMatrix) -> ComplexMatrix {
    spectral_map(a, |x| x.max(0.0).sqrt())
}

/// Pseudo-inverse square root on the support of a PSD matrix.
pub fn pinv_sqrt(a: &ComplexMatrix, tol: Tolerance) -> ComplexMatrix {
    let (values, _) = eigh_unchecked(a);
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let thr = tol.threshold(scale);
    spectral_map(a, |x| if x > thr { 1.0 / x.sqrt() } else { 0.0 })
}

fn spectral_map(a: &ComplexMatrix, f: impl Fn(f64) -> f64) -> ComplexMatrix {
    let (values, v) = eigh_unchecked(a);
    let n = a.rows();
    let scaled = DMatrix::from_fn(n, n, |r, c| v.0[(r, c)] * f(values[c]));
    ComplexMatrix(&scaled * v.0.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn p_north() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap()
    }

    #[test]
    fn hermitian_examples() {
        assert!(is_hermitian(&pauli(1), tol()).unwrap());
        assert!(!is_hermitian(&pauli(1).scale_c(I), tol()).unwrap());
        assert!(is_hermitian(&ComplexMatrix::zeros(3, 3), tol()).unwrap());
        assert!(matches!(
            is_hermitian(&ComplexMatrix::zeros(2, 3), tol()),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn psd_examples() {
        assert!(is_psd(&p_north(), tol()).unwrap());
        assert!(!is_psd(&pauli(3), tol()).unwrap());
        let z = &ComplexMatrix::identity(3) - &ComplexMatrix::identity(3);
        assert!(is_psd(&z, tol()).unwrap());
        assert!(matches!(
            is_psd(&pauli(1).scale_c(I), tol()),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&p_north(), tol()), 1);
        assert_eq!(rank(&ComplexMatrix::identity(5), tol()), 5);
        assert_eq!(rank(&ComplexMatrix::zeros(3, 3), tol()), 0);
    }

    #[test]
    fn choi_of_two_kraus_has_rank_two() {
        // J = |K0⟫⟪K0| + |K1⟫⟪K1| with independent vec(K0), vec(K1)
        let k0 = ComplexMatrix::from_rows(&[
            vec![C64::new(0.6, 0.1), C64::new(0.0, 0.2)],
            vec![C64::new(0.1, 0.0), C64::new(0.3, -0.4)],
        ])
        .unwrap();
        let k1 = ComplexMatrix::from_rows(&[
            vec![C64::new(0.2, 0.0), C64::new(-0.5, 0.0)],
            vec![C64::new(0.0, 0.3), C64::new(0.1, 0.1)],
        ])
        .unwrap();
        let mut j = ComplexMatrix::zeros(4, 4);
        for k in [&k0, &k1] {
            let v = vec_columns(k);
            j += &ComplexMatrix::outer(&v, &v);
        }
        assert_eq!(rank(&j, tol()), 2);
    }

    #[test]
    fn nullspace_examples() {
        assert!(nullspace(&ComplexMatrix::identity(3), tol()).is_empty());
        let ns = nullspace(&ComplexMatrix::zeros(2, 2), tol());
        assert_eq!(ns.len(), 2);
        let gram = |a: &ComplexMatrix, b: &ComplexMatrix| a.hs_inner(b);
        assert!((gram(&ns[0], &ns[0]).re - 1.0).abs() < 1e-12);
        assert!(gram(&ns[0], &ns[1]).norm() < 1e-12);
    }

    #[test]
    fn nullspace_of_wide_matrix_is_complete() {
        let a = ComplexMatrix::from_real_rows(&[vec![1.0, 1.0, 0.0]]).unwrap();
        let ns = nullspace(&a, tol());
        assert_eq!(ns.len(), 2);
        for v in &ns {
            assert!((&a * v).max_abs() < 1e-12);
        }
    }

    #[test]
    fn partial_trace_examples() {
        let rho = ComplexMatrix::from_rows(&[
            vec![C64::new(0.7, 0.0), C64::new(0.1, -0.2)],
            vec![C64::new(0.1, 0.2), C64::new(0.3, 0.0)],
        ])
        .unwrap();
        let sigma = ComplexMatrix::from_real_rows(&[
            vec![2.0, 0.5, 0.0],
            vec![0.5, 1.0, 0.0],
            vec![0.0, 0.0, 1.5],
        ])
        .unwrap();
        let tr2 = partial_trace(&kron(&rho, &sigma), (2, 3), Side::Second).unwrap();
        assert!((&tr2 - &rho.scale(4.5)).max_abs() < 1e-14);
        let tr1 = partial_trace(
            &kron(&ComplexMatrix::identity(2), &sigma),
            (2, 3),
            Side::First,
        )
        .unwrap();
        assert!((&tr1 - &sigma.scale(2.0)).max_abs() < 1e-14);
        assert!(partial_trace(&sigma, (2, 2), Side::First).is_err());
    }

    #[test]
    fn kron_of_identities() {
        let k = kron(&pauli(0), &pauli(0));
        assert_eq!(k, ComplexMatrix::identity(4));
    }

    #[test]
    fn eigh_of_projection() {
        let p = ComplexMatrix::from_real_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let (vals, _) = eigh(&p, tol()).unwrap();
        assert!(vals[0].abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigh_of_bloch_effect() {
        // E = ½(e⁰σ₀ + e·σ) has eigenvalues ½(e⁰ ± ‖e‖)
        let (e0, e) = (1.2, [0.3, -0.1, 0.4]);
        let mut m = pauli(0).scale(e0);
        for (k, ek) in e.iter().enumerate() {
            m = &m + &pauli(k + 1).scale(*ek);
        }
        let m = m.scale(0.5);
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (vals, _) = eigh(&m, tol()).unwrap();
        assert!((vals[0] - 0.5 * (e0 - norm)).abs() < 1e-14);
        assert!((vals[1] - 0.5 * (e0 + norm)).abs() < 1e-14);
    }

    #[test]
    fn vec_identity() {
        // vec(ABC) = (Cᵀ ⊗ A) vec(B)
        let a = ComplexMatrix::from_fn(2, 3, |i, j| C64::new(i as f64 + 1.0, j as f64));
        let b = ComplexMatrix::from_fn(3, 2, |i, j| C64::new(j as f64 - i as f64, 0.5));
        let c = ComplexMatrix::from_fn(2, 2, |i, j| C64::new(0.3 * i as f64, 1.0 - j as f64));
        let lhs = vec_columns(&(&(&a * &b) * &c));
        let rhs = &kron(&c.transpose(), &a) * &ComplexMatrix::column(&vec_columns(&b));
        for (x, y) in lhs.iter().zip(rhs.column_entries(0)) {
            assert!((x - y).norm() < 1e-13);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let bad = DMatrix::from_element(2, 2, C64::new(f64::NAN, 0.0));
        assert!(ComplexMatrix::new(bad).is_err());
        assert!(Tolerance::new(0.0, 1e-10).is_err());
    }
}
