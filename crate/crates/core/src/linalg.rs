//! Dense complex Hermitian linear algebra for small matrices.
//!
//! Matrices here are tiny (ambient dimension rarely above a dozen), so every
//! routine goes through a full eigendecomposition and favours exact invariant
//! checks over speed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexVec = DVector<Complex64>;
pub type ComplexMatrix = DMatrix<Complex64>;

/// Relative tolerance for accepting user-supplied matrices as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance on `Q*Q - Id` for accepting a basis as orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-12;
/// Eigenvalues above `-PSD_TOL` are treated as zero by the square root.
pub const PSD_TOL: f64 = 1e-10;

/// Largest entry modulus.
pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Hilbert-Schmidt (Frobenius) norm.
pub fn hs_norm(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_norm(v: &ComplexVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Converts a slice of `(re, im)` pairs into a complex vector.
pub fn cvec(pairs: &[(f64, f64)]) -> ComplexVec {
    DVector::from_iterator(pairs.len(), pairs.iter().map(|&(re, im)| Complex64::new(re, im)))
}

/// A square complex matrix equal to its conjugate transpose.
///
/// Every constructor stores the exact symmetrization `(A + A*)/2`, so the
/// stored entries are Hermitian to the last bit.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(ComplexMatrix);

impl HermitianMatrix {
    /// Validates that `m` is square and Hermitian to within [`HERMITIAN_TOL`] relative.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::validation(
                "matrix",
                format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols()),
            ));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::validation("matrix", "non-finite entry"));
        }
        let scale = max_abs(&m).max(1.0);
        let n = m.nrows();
        for j in 0..n {
            for k in j..n {
                let gap = (m[(j, k)] - m[(k, j)].conj()).norm();
                if gap > HERMITIAN_TOL * scale {
                    return Err(Error::validation(
                        format!("matrix[{j}][{k}]"),
                        format!("not Hermitian: |A_jk - conj(A_kj)| = {gap:.3e}"),
                    ));
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Stores `(m + m*)/2` without checking how far `m` was from Hermitian.
    ///
    /// Panics if `m` is not square.
    pub fn symmetrized(m: ComplexMatrix) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "Hermitian matrix must be square");
        let adj = m.adjoint();
        Self((m + adj) * Complex64::new(0.5, 0.0))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&x| Complex64::new(x, 0.0)));
        Self(DMatrix::from_diagonal(&d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|j| self.0[(j, j)].re).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * Complex64::new(s, 0.0))
    }

    /// The real quadratic form `v* A v`.
    pub fn quadratic_form(&self, v: &ComplexVec) -> f64 {
        (v.adjoint() * &self.0 * v)[(0, 0)].re
    }
}

/// Orthonormal columns spanning a complex subspace of `C^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    ambient: usize,
    columns: ComplexMatrix,
}

impl SubspaceBasis {
    /// Accepts `columns` (n x d) if `Q*Q = Id_d` to within [`ORTHONORMAL_TOL`].
    pub fn new(columns: ComplexMatrix) -> Result<Self> {
        let d = columns.ncols();
        if d > columns.nrows() {
            return Err(Error::validation(
                "basis",
                format!("{d} columns cannot be orthonormal in dimension {}", columns.nrows()),
            ));
        }
        let gram = columns.adjoint() * &columns;
        let gap = max_abs(&(gram - DMatrix::identity(d, d)));
        if gap > ORTHONORMAL_TOL {
            return Err(Error::validation(
                "basis",
                format!("columns not orthonormal: max |Q*Q - Id| = {gap:.3e}"),
            ));
        }
        Ok(Self { ambient: columns.nrows(), columns })
    }

    /// The zero subspace of `C^n`.
    pub fn empty(n: usize) -> Self {
        Self { ambient: n, columns: DMatrix::zeros(n, 0) }
    }

    /// Orthonormalizes the columns of `vectors` by modified Gram-Schmidt with one
    /// reorthogonalization pass. A column whose residual norm drops below
    /// `rank_tol` times its original norm is rank deficiency and yields
    /// [`Error::Singular`].
    pub fn orthonormalize(vectors: &ComplexMatrix, rank_tol: f64) -> Result<Self> {
        let n = vectors.nrows();
        let d = vectors.ncols();
        let mut q = DMatrix::<Complex64>::zeros(n, d);
        for j in 0..d {
            let mut v: ComplexVec = vectors.column(j).into_owned();
            let original = vec_norm(&v);
            for _pass in 0..2 {
                for i in 0..j {
                    let qi = q.column(i);
                    let coef = qi.dotc(&v);
                    v.axpy(-coef, &qi, Complex64::new(1.0, 0.0));
                }
            }
            let norm = vec_norm(&v);
            if !(norm > rank_tol * original) || original == 0.0 {
                let ratio = if original > 0.0 { norm / original } else { 0.0 };
                return Err(Error::Singular { sigma_min: ratio, tol: rank_tol });
            }
            q.set_column(j, &(v / Complex64::new(norm, 0.0)));
        }
        Ok(Self { ambient: n, columns: q })
    }

    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn columns(&self) -> &ComplexMatrix {
        &self.columns
    }

    /// The orthogonal projection onto this subspace, `Q Q*`.
    pub fn projector(&self) -> HermitianMatrix {
        HermitianMatrix::symmetrized(&self.columns * self.columns.adjoint())
    }

    /// An orthonormal basis of the orthogonal complement.
    pub fn complement(&self) -> SubspaceBasis {
        let n = self.ambient;
        let want = n - self.dim();
        let mut cols = self.columns.clone();
        let mut out: Vec<ComplexVec> = Vec::with_capacity(want);
        // Greedily adjoin the standard basis vector with the largest residual.
        while out.len() < want {
            let mut best: Option<(f64, ComplexVec)> = None;
            for e in 0..n {
                let mut v = DVector::<Complex64>::zeros(n);
                v[e] = Complex64::new(1.0, 0.0);
                for _pass in 0..2 {
                    for i in 0..cols.ncols() {
                        let qi = cols.column(i);
                        let coef = qi.dotc(&v);
                        v.axpy(-coef, &qi, Complex64::new(1.0, 0.0));
                    }
                }
                let norm = vec_norm(&v);
                if best.as_ref().map_or(true, |(b, _)| norm > *b) {
                    best = Some((norm, v));
                }
            }
            let (norm, v) = best.expect("ambient dimension is positive");
            let v = v / Complex64::new(norm, 0.0);
            let last = cols.ncols();
            cols = cols.insert_column(last, Complex64::new(0.0, 0.0));
            cols.set_column(last, &v);
            out.push(v);
        }
        let mut columns = DMatrix::<Complex64>::zeros(n, want);
        for (j, v) in out.iter().enumerate() {
            columns.set_column(j, v);
        }
        SubspaceBasis { ambient: n, columns }
    }
}

/// Eigenvalues in ascending order and a unitary matrix of eigenvectors (as columns).
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    /// `U diag(g(λ)) U*` for a real function `g` of the eigenvalues.
    pub fn map_spectrum(&self, g: impl Fn(f64) -> f64) -> HermitianMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let gj = Complex64::new(g(lam), 0.0);
            for i in 0..n {
                scaled[(i, j)] *= gj;
            }
        }
        HermitianMatrix::symmetrized(scaled * self.vectors.adjoint())
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Full eigendecomposition `A = U diag(λ) U*` with `λ` ascending.
pub fn hermitian_eig(a: &HermitianMatrix) -> HermitianEigen {
    let n = a.dim();
    if n == 0 {
        return HermitianEigen { values: Vec::new(), vectors: DMatrix::zeros(0, 0) };
    }
    let eig = SymmetricEigen::new(a.as_matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ties in solver order.
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    HermitianEigen { values, vectors }
}

fn check_psd(eig: &HermitianEigen) -> Result<()> {
    let lo = eig.min();
    if lo < -PSD_TOL {
        return Err(Error::Domain(format!("matrix is not positive semi-definite (eigenvalue {lo:.3e})")));
    }
    Ok(())
}

fn check_pd(eig: &HermitianEigen) -> Result<()> {
    let lo = eig.min();
    if !(lo > 0.0) {
        return Err(Error::Domain(format!("matrix is not positive definite (eigenvalue {lo:.3e})")));
    }
    Ok(())
}

/// The PSD square root; eigenvalues in `[-PSD_TOL, 0)` are clamped to zero.
pub fn psd_sqrt(a: &HermitianMatrix) -> Result<HermitianMatrix> {
    let eig = hermitian_eig(a);
    check_psd(&eig)?;
    Ok(eig.map_spectrum(|l| l.max(0.0).sqrt()))
}

/// The inverse square root of a positive-definite matrix.
pub fn psd_inv_sqrt(a: &HermitianMatrix) -> Result<HermitianMatrix> {
    let eig = hermitian_eig(a);
    check_pd(&eig)?;
    Ok(eig.map_spectrum(|l| 1.0 / l.sqrt()))
}

/// Square root, inverse square root and inverse from one eigendecomposition.
#[derive(Debug, Clone)]
pub struct PdRoots {
    pub eigen: HermitianEigen,
    pub sqrt: HermitianMatrix,
    pub inv_sqrt: HermitianMatrix,
    pub inverse: HermitianMatrix,
}

pub fn pd_roots(a: &HermitianMatrix) -> Result<PdRoots> {
    let eigen = hermitian_eig(a);
    check_pd(&eigen)?;
    Ok(PdRoots {
        sqrt: eigen.map_spectrum(f64::sqrt),
        inv_sqrt: eigen.map_spectrum(|l| 1.0 / l.sqrt()),
        inverse: eigen.map_spectrum(|l| 1.0 / l),
        eigen,
    })
}

/// The orthogonal projection whose kernel is the span of `kernel`: `Id - QQ*`.
pub fn proj_with_kernel(kernel: &SubspaceBasis) -> HermitianMatrix {
    let n = kernel.ambient_dim();
    let q = kernel.columns();
    HermitianMatrix::symmetrized(DMatrix::identity(n, n) - q * q.adjoint())
}

/// `log det B` as the sum of log eigenvalues.
pub fn log_det(b: &HermitianMatrix) -> Result<f64> {
    let eig = hermitian_eig(b);
    check_pd(&eig)?;
    Ok(eig.values.iter().map(|l| l.ln()).sum())
}

/// Singular values of a (possibly rectangular) complex matrix, ascending.
pub fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    if m.nrows() == 1 || m.ncols() == 1 {
        return vec![hs_norm(m)];
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(f64::total_cmp);
    s
}
