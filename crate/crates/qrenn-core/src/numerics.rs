//! Dense complex linear algebra primitives.
//!
//! Everything downstream (states, circuits, Lie-algebra analysis) is built on
//! [`ComplexMatrix`], a row-major dense matrix of `Complex<T>`, plus the two
//! validated wrappers [`HermitianOperator`] and [`UnitaryOperator`].
//! Eigendecomposition is delegated to `nalgebra`; matrix exponentials and
//! logarithms go through it so spectral data can be reused elsewhere.

use crate::error::{Error, Result};
use crate::scalar::{cabs, cimag, cis, cnorm_sqr, cone, creal, czero, Scalar, C};
use nalgebra::DMatrix;

/// Entrywise Hermiticity tolerance max |A - A^dag|.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Entrywise unitarity tolerance max |U^dag U - I|.
pub const UNITARITY_TOL: f64 = 1e-10;
/// Round-trip tolerance for the principal matrix logarithm.
pub const LOGM_ROUNDTRIP_TOL: f64 = 1e-8;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    entries: Vec<C<T>>,
}

impl<T: Scalar> ComplexMatrix<T> {
    pub fn new(rows: usize, cols: usize, entries: Vec<C<T>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(
                "matrix dimensions must be at least 1".into(),
            ));
        }
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: entries.len(),
                context: "matrix entry count",
            });
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![czero(); rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.entries[i * dim + i] = cone();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self {
            rows,
            cols,
            entries,
        }
    }

    /// Diagonal matrix from real entries.
    pub fn diag_real(values: &[T]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.entries[i * n + i] = creal(v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn entries(&self) -> &[C<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [C<T>] {
        &mut self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C<T> {
        self.entries[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C<T>) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "matrix addition")?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            entries,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "matrix subtraction")?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            entries,
        })
    }

    pub fn scale(&self, factor: C<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|a| a * factor).collect(),
        }
    }

    pub fn scale_real(&self, factor: T) -> Self {
        self.scale(creal(factor))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
                context: "matrix product inner dimension",
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![czero::<T>(); n * m];
        for i in 0..n {
            let row = &self.entries[i * k..(i + 1) * k];
            let dst = &mut out[i * m..(i + 1) * m];
            for (p, &a) in row.iter().enumerate() {
                if a == czero() {
                    continue;
                }
                let src = &other.entries[p * m..(p + 1) * m];
                for (d, &b) in dst.iter_mut().zip(src.iter()) {
                    *d += a * b;
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            entries: out,
        })
    }

    pub fn matvec(&self, v: &[C<T>]) -> Result<Vec<C<T>>> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: v.len(),
                context: "matrix-vector product",
            });
        }
        let mut out = vec![czero::<T>(); self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.entries[i * self.cols..(i + 1) * self.cols];
            let mut acc = czero::<T>();
            for (a, b) in row.iter().zip(v.iter()) {
                acc += a * b;
            }
            *o = acc;
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn trace(&self) -> C<T> {
        debug_assert!(self.is_square());
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm_sq(&self) -> T {
        self.entries.iter().map(|z| cnorm_sqr(*z)).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn max_abs_entry(&self) -> T {
        self.entries
            .iter()
            .map(|z| cabs(*z))
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        debug_assert_eq!(self.entries.len(), other.entries.len());
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| cabs(a - b))
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    /// Max |A - A^dag| over all entries.
    pub fn hermiticity_deviation(&self) -> T {
        debug_assert!(self.is_square());
        let mut dev = T::zero();
        for i in 0..self.rows {
            for j in i..self.cols {
                let d = cabs(self.get(i, j) - self.get(j, i).conj());
                if d > dev {
                    dev = d;
                }
            }
        }
        dev
    }

    /// Max |U^dag U - I| over all entries.
    pub fn unitarity_deviation(&self) -> T {
        debug_assert!(self.is_square());
        let gram = self.adjoint().matmul(self).expect("square");
        gram.max_abs_diff(&Self::identity(self.rows))
    }

    fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
                context,
            });
        }
        Ok(())
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<C<T>> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }
}

/// Kronecker product; dimensions multiply.
pub fn kron<T: Scalar>(a: &ComplexMatrix<T>, b: &ComplexMatrix<T>) -> ComplexMatrix<T> {
    let rows = a.rows() * b.rows();
    let cols = a.cols() * b.cols();
    let mut out = ComplexMatrix::zeros(rows, cols);
    for ia in 0..a.rows() {
        for ja in 0..a.cols() {
            let f = a.get(ia, ja);
            if f == czero() {
                continue;
            }
            for ib in 0..b.rows() {
                for jb in 0..b.cols() {
                    out.set(ia * b.rows() + ib, ja * b.cols() + jb, f * b.get(ib, jb));
                }
            }
        }
    }
    out
}

/// Commutator `ab - ba` of square matrices of equal dimension.
pub fn commutator<T: Scalar>(
    a: &ComplexMatrix<T>,
    b: &ComplexMatrix<T>,
) -> Result<ComplexMatrix<T>> {
    if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: b.rows(),
            context: "commutator",
        });
    }
    a.matmul(b)?.sub(&b.matmul(a)?)
}

/// Hilbert-Schmidt inner product `tr(a^dag b)`.
pub fn hs_inner<T: Scalar>(a: &ComplexMatrix<T>, b: &ComplexMatrix<T>) -> Result<C<T>> {
    if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: b.rows(),
            context: "Hilbert-Schmidt inner product",
        });
    }
    let mut acc = czero::<T>();
    for (x, y) in a.entries().iter().zip(b.entries().iter()) {
        acc += x.conj() * y;
    }
    Ok(acc)
}

/// Frobenius norm, exposed as sqrt of the HS self-inner product.
pub fn frobenius_norm<T: Scalar>(a: &ComplexMatrix<T>) -> T {
    a.frobenius_norm()
}

/// Validated Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator<T: Scalar> {
    dim: usize,
    matrix: ComplexMatrix<T>,
}

impl<T: Scalar> HermitianOperator<T> {
    pub fn new(matrix: ComplexMatrix<T>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.rows(),
                got: matrix.cols(),
                context: "Hermitian operator must be square",
            });
        }
        let dev = matrix.hermiticity_deviation();
        if dev > T::lit(HERMITICITY_TOL) {
            return Err(Error::NotHermitian {
                deviation: dev.as_f64(),
                tolerance: HERMITICITY_TOL,
            });
        }
        Ok(Self {
            dim: matrix.rows(),
            matrix,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            matrix: ComplexMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            matrix: ComplexMatrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix<T> {
        self.matrix
    }

    pub fn scale_real(&self, factor: T) -> Self {
        Self {
            dim: self.dim,
            matrix: self.matrix.scale_real(factor),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            dim: self.dim,
            matrix: self.matrix.add(&other.matrix)?,
        })
    }

    /// Largest |eigenvalue|.
    pub fn spectral_norm(&self) -> Result<T> {
        let eig = eigh(self)?;
        Ok(eig
            .eigenvalues
            .iter()
            .map(|l| l.abs())
            .fold(T::zero(), |a, b| if b > a { b } else { a }))
    }
}

/// Validated unitary matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryOperator<T: Scalar> {
    dim: usize,
    matrix: ComplexMatrix<T>,
}

impl<T: Scalar> UnitaryOperator<T> {
    pub fn new(matrix: ComplexMatrix<T>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.rows(),
                got: matrix.cols(),
                context: "unitary operator must be square",
            });
        }
        let dev = matrix.unitarity_deviation();
        if dev > T::lit(UNITARITY_TOL) {
            return Err(Error::NotUnitary {
                deviation: dev.as_f64(),
                tolerance: UNITARITY_TOL,
            });
        }
        Ok(Self {
            dim: matrix.rows(),
            matrix,
        })
    }

    /// Construction sites that are unitary by construction (eigenvector
    /// matrices, spectral exponentials, QR factors) skip the O(d^3) check.
    pub(crate) fn new_unchecked(matrix: ComplexMatrix<T>) -> Self {
        debug_assert!(matrix.unitarity_deviation() <= T::lit(UNITARITY_TOL));
        Self {
            dim: matrix.rows(),
            matrix,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            matrix: ComplexMatrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix<T> {
        self.matrix
    }
}

/// Eigendecomposition of a Hermitian operator.
#[derive(Debug, Clone)]
pub struct Eigh<T: Scalar> {
    /// Eigenvalues sorted ascending.
    pub eigenvalues: Vec<T>,
    /// Columns are eigenvectors, ordered to match `eigenvalues`.
    pub eigenvectors: UnitaryOperator<T>,
}

/// Hermitian eigendecomposition `h = V diag(lambda) V^dag`, eigenvalues ascending.
pub fn eigh<T: Scalar>(h: &HermitianOperator<T>) -> Result<Eigh<T>> {
    let dim = h.dim();
    // Symmetrize so round-off in the 1e-12 Hermiticity budget cannot leak in.
    let na = h.matrix().to_nalgebra();
    let na = (na.adjoint() + &na).scale(T::lit(0.5));
    let max_iter = 60 * dim + 2000;
    let eig = na
        .try_symmetric_eigen(T::default_epsilon(), max_iter)
        .ok_or(Error::EighFailed)?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("eigenvalues are finite")
    });
    let eigenvalues: Vec<T> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = ComplexMatrix::from_fn(dim, dim, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(Eigh {
        eigenvalues,
        eigenvectors: UnitaryOperator::new_unchecked(vectors),
    })
}

/// `e^{i * scale * h}` through the eigendecomposition of `h`.
pub fn expm_i<T: Scalar>(h: &HermitianOperator<T>, scale: T) -> Result<UnitaryOperator<T>> {
    let eig = eigh(h)?;
    Ok(expm_i_from_eigh(&eig, scale))
}

/// `e^{i * scale * h}` from a precomputed eigendecomposition.
pub fn expm_i_from_eigh<T: Scalar>(eig: &Eigh<T>, scale: T) -> UnitaryOperator<T> {
    let v = eig.eigenvectors.matrix();
    let dim = v.rows();
    // V diag(e^{i s lambda}) V^dag without forming the diagonal matrix.
    let mut scaled = v.clone();
    for j in 0..dim {
        let phase = cis(scale * eig.eigenvalues[j]);
        for i in 0..dim {
            let val = scaled.get(i, j) * phase;
            scaled.set(i, j, val);
        }
    }
    let out = scaled.matmul(&v.adjoint()).expect("square");
    UnitaryOperator::new_unchecked(out)
}

/// Principal Hermitian logarithm: `u = e^{iH}` with every eigenphase in
/// `(-pi, pi]`; a tie at `-pi` is reported as `+pi`.
///
/// Works on the commuting Hermitian pair `(u + u^dag)/2`, `(u - u^dag)/2i`
/// which share the eigenbasis of the normal matrix `u`.
pub fn logm_unitary<T: Scalar>(u: &UnitaryOperator<T>) -> Result<HermitianOperator<T>> {
    let dim = u.dim();
    let m = u.matrix();
    let madj = m.adjoint();
    let re = HermitianOperator::new(m.add(&madj)?.scale_real(T::lit(0.5)))?;
    let im_mat = m.sub(&madj)?.scale(cimag(T::lit(-0.5)));
    let im = HermitianOperator::new(im_mat)?;

    let joint = simdiag_pair(&re, &im)?;
    let mut phases = Vec::with_capacity(dim);
    for k in 0..dim {
        let mut theta = joint.values_b[k].atan2(joint.values_a[k]);
        // branch convention: fold -pi onto +pi
        if theta <= -T::pi() + T::lit(1e-12) {
            theta = T::pi();
        }
        phases.push(theta);
    }
    let v = &joint.basis;
    let mut scaled = v.clone();
    for (j, &theta) in phases.iter().enumerate() {
        for i in 0..dim {
            let val = scaled.get(i, j) * creal(theta);
            scaled.set(i, j, val);
        }
    }
    let raw = scaled.matmul(&v.adjoint())?;
    // symmetrize away round-off before validating
    let sym = raw.add(&raw.adjoint())?.scale_real(T::lit(0.5));
    let h = HermitianOperator::new(sym)?;
    let roundtrip = expm_i(&h, T::one())?;
    let err = roundtrip.matrix().max_abs_diff(m);
    if err > T::lit(LOGM_ROUNDTRIP_TOL) {
        return Err(Error::JointEigenspaceValidation(format!(
            "unitary log round-trip error {:.3e}",
            err.as_f64()
        )));
    }
    Ok(h)
}

pub(crate) struct SimDiagPair<T: Scalar> {
    pub basis: ComplexMatrix<T>,
    pub values_a: Vec<T>,
    pub values_b: Vec<T>,
}

/// Simultaneously diagonalize two commuting Hermitian operators by
/// eigendecomposing a random real combination and validating per operator.
pub(crate) fn simdiag_pair<T: Scalar>(
    a: &HermitianOperator<T>,
    b: &HermitianOperator<T>,
) -> Result<SimDiagPair<T>> {
    use rand::SeedableRng;
    let dim = a.dim();
    let scale_a = a.matrix().frobenius_norm().max(T::one());
    let scale_b = b.matrix().frobenius_norm().max(T::one());
    let tol = T::lit(1e-8);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x5ed_d1a6);
    for _ in 0..5 {
        let (c1, c2): (f64, f64) = (gauss(&mut rng), gauss(&mut rng));
        let combo = a
            .matrix()
            .scale_real(T::lit(c1))
            .add(&b.matrix().scale_real(T::lit(c2)))?;
        let eig = eigh(&HermitianOperator::new_relaxed(combo))?;
        let v = eig.eigenvectors.matrix();
        let av = a.matrix().matmul(v)?;
        let bv = b.matrix().matmul(v)?;
        let mut values_a = Vec::with_capacity(dim);
        let mut values_b = Vec::with_capacity(dim);
        let mut ok = true;
        'cols: for j in 0..dim {
            let mut la = T::zero();
            let mut lb = T::zero();
            for i in 0..dim {
                la += (v.get(i, j).conj() * av.get(i, j)).re;
                lb += (v.get(i, j).conj() * bv.get(i, j)).re;
            }
            // residuals ||A v - la v||, ||B v - lb v||
            let mut ra = T::zero();
            let mut rb = T::zero();
            for i in 0..dim {
                ra += cnorm_sqr(av.get(i, j) - v.get(i, j) * creal(la));
                rb += cnorm_sqr(bv.get(i, j) - v.get(i, j) * creal(lb));
            }
            if ra.sqrt() > tol * scale_a || rb.sqrt() > tol * scale_b {
                ok = false;
                break 'cols;
            }
            values_a.push(la);
            values_b.push(lb);
        }
        if ok {
            return Ok(SimDiagPair {
                basis: v.clone(),
                values_a,
                values_b,
            });
        }
    }
    Err(Error::JointEigenspaceValidation(
        "random-combination simultaneous diagonalization failed after 5 draws".into(),
    ))
}

impl<T: Scalar> HermitianOperator<T> {
    /// Wrap a matrix that is Hermitian up to round-off by symmetrizing it.
    pub(crate) fn new_relaxed(matrix: ComplexMatrix<T>) -> Self {
        let sym = matrix
            .add(&matrix.adjoint())
            .expect("square")
            .scale_real(T::lit(0.5));
        Self {
            dim: sym.rows(),
            matrix: sym,
        }
    }
}

pub(crate) fn gauss<R: rand::Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one value per call keeps substream accounting simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// HS-orthonormalize `candidate` against an orthonormal `basis`.
///
/// Returns the normalized residual, or `None` if its norm is at most `tol`.
/// Projection runs twice so appending the result keeps the basis orthonormal
/// within 1e-10.
pub fn gram_schmidt_extend<T: Scalar>(
    basis: &[ComplexMatrix<T>],
    candidate: &ComplexMatrix<T>,
    tol: T,
) -> Option<ComplexMatrix<T>> {
    let mut r = candidate.clone();
    for _ in 0..2 {
        for b in basis {
            let coeff = hs_inner(b, &r).expect("basis/candidate dims match");
            if coeff != czero() {
                r = r.sub(&b.scale(coeff)).expect("same shape");
            }
        }
    }
    let norm = r.frobenius_norm();
    if norm <= tol {
        None
    } else {
        Some(r.scale_real(T::one() / norm))
    }
}

/// Single-qubit Pauli axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix<T: Scalar>(self) -> ComplexMatrix<T> {
        let o = czero::<T>();
        let l = cone::<T>();
        let i = cimag(T::one());
        let entries = match self {
            Pauli::I => vec![l, o, o, l],
            Pauli::X => vec![o, l, l, o],
            Pauli::Y => vec![o, -i, i, o],
            Pauli::Z => vec![l, o, o, -l],
        };
        ComplexMatrix::new(2, 2, entries).expect("2x2")
    }
}

/// Tensor product of single-qubit Paulis, leftmost factor most significant.
pub fn pauli_word<T: Scalar>(axes: &[Pauli]) -> ComplexMatrix<T> {
    assert!(!axes.is_empty());
    let mut m = axes[0].matrix();
    for p in &axes[1..] {
        m = kron(&m, &p.matrix());
    }
    m
}

/// Pauli word acting as `p` on qubit `q` of an `n`-qubit register.
pub fn pauli_on<T: Scalar>(n: usize, q: usize, p: Pauli) -> ComplexMatrix<T> {
    let axes: Vec<Pauli> = (0..n).map(|k| if k == q { p } else { Pauli::I }).collect();
    pauli_word(&axes)
}
