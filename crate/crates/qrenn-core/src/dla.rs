//! Numerical dynamical-Lie-algebra analysis.
//!
//! Builds the Lie closure of a circuit's generators by nested commutators,
//! extracts joint eigenspaces of commuting data Hamiltonians, verifies the
//! center-plus-simple-ideals decomposition of the closure, and evaluates the
//! analytic gradient-variance expressions that the sampling experiments are
//! checked against.
//!
//! Conventions: the closure works on skew-Hermitian matrices orthonormal in
//! the Hilbert-Schmidt inner product. The variance predictors consume the
//! generator actually implemented by the circuit; under the
//! `R_P(theta) = e^{-i theta P/2}` convention that generator is `-P/2`, whose
//! squared Frobenius norm is a quarter of the bare Pauli word's. Feed the
//! bare word to predict the variance of the derivative in the `e^{i theta P}`
//! convention instead; the two differ by exactly that factor of four.

use crate::error::{Error, Result};
use crate::numerics::{
    commutator, eigh, gram_schmidt_extend, hs_inner, kron, ComplexMatrix, HermitianOperator,
    Pauli,
};
use crate::qstate::{QuantumState, StateRepr};
use crate::scalar::{cimag, cnorm_sqr, creal, czero, Scalar};
use rand::SeedableRng;

/// Skew-Hermiticity tolerance for Lie-basis elements.
pub const SKEW_TOL: f64 = 1e-10;
/// Default rank tolerance for the Lie closure (relative to unit candidates).
pub const CLOSURE_RANK_TOL: f64 = 1e-7;
/// Default absolute grouping tolerance for joint eigenvalues.
pub const EIGENVALUE_GROUP_TOL: f64 = 1e-8;
/// Span-membership tolerance for the decomposition check.
pub const SPAN_TOL: f64 = 1e-8;

/// HS-orthonormal basis of skew-Hermitian matrices.
#[derive(Debug, Clone)]
pub struct LieBasis<T: Scalar> {
    dim_ambient: usize,
    elements: Vec<ComplexMatrix<T>>,
}

impl<T: Scalar> LieBasis<T> {
    pub fn new(dim_ambient: usize, elements: Vec<ComplexMatrix<T>>) -> Result<Self> {
        for e in &elements {
            if e.rows() != dim_ambient || e.cols() != dim_ambient {
                return Err(Error::DimensionMismatch {
                    expected: dim_ambient,
                    got: e.rows(),
                    context: "Lie basis element dimension",
                });
            }
            let skew_dev = e.add(&e.adjoint())?.max_abs_entry();
            if skew_dev > T::lit(SKEW_TOL) {
                return Err(Error::InvalidArgument(format!(
                    "basis element is not skew-Hermitian (deviation {:.3e})",
                    skew_dev.as_f64()
                )));
            }
        }
        for (i, a) in elements.iter().enumerate() {
            let self_norm = hs_inner(a, a)?.re;
            if (self_norm - T::one()).abs() > T::lit(1e-9) {
                return Err(Error::InvalidArgument(format!(
                    "basis element {i} has HS norm^2 {}",
                    self_norm.as_f64()
                )));
            }
            for (j, b) in elements.iter().enumerate().skip(i + 1) {
                let cross = hs_inner(a, b)?;
                if crate::scalar::cabs(cross) > T::lit(1e-9) {
                    return Err(Error::InvalidArgument(format!(
                        "basis elements {i} and {j} are not orthogonal"
                    )));
                }
            }
        }
        Ok(Self {
            dim_ambient,
            elements,
        })
    }

    pub(crate) fn new_unchecked(dim_ambient: usize, elements: Vec<ComplexMatrix<T>>) -> Self {
        Self {
            dim_ambient,
            elements,
        }
    }

    pub fn dim_ambient(&self) -> usize {
        self.dim_ambient
    }

    pub fn dimension(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[ComplexMatrix<T>] {
        &self.elements
    }

    /// Residual norm of `candidate` after projecting onto this basis.
    pub fn residual_norm(&self, candidate: &ComplexMatrix<T>) -> Result<T> {
        let mut r = candidate.clone();
        for _ in 0..2 {
            for b in &self.elements {
                let coeff = hs_inner(b, &r)?;
                if coeff != czero() {
                    r = r.sub(&b.scale(coeff))?;
                }
            }
        }
        Ok(r.frobenius_norm())
    }
}

/// Lie closure of skew-Hermitian generators under nested commutators.
///
/// Orthonormalizes the generators, then repeatedly commutes every new basis
/// element with every generator, keeping HS-orthogonal residuals above `tol`,
/// until nothing new appears. Errors out if the dimension would exceed
/// `max_dim`, which guards against mis-modelled (non-commuting) data sets.
pub fn lie_closure<T: Scalar>(
    generators: &[ComplexMatrix<T>],
    tol: T,
    max_dim: usize,
) -> Result<LieBasis<T>> {
    if generators.is_empty() {
        return Err(Error::InvalidArgument("no generators".into()));
    }
    let dim = generators[0].rows();
    for g in generators {
        if !g.is_square() || g.rows() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: g.rows(),
                context: "generator dimension",
            });
        }
        let skew_dev = g.add(&g.adjoint())?.max_abs_entry();
        if skew_dev > T::lit(SKEW_TOL) * g.max_abs_entry().max(T::one()) {
            return Err(Error::InvalidArgument(
                "generators must be skew-Hermitian".into(),
            ));
        }
    }

    let mut basis: Vec<ComplexMatrix<T>> = Vec::new();
    let mut frontier: Vec<usize> = Vec::new();
    for g in generators {
        let norm = g.frobenius_norm();
        if norm == T::zero() {
            continue;
        }
        if let Some(r) = gram_schmidt_extend(&basis, &g.scale_real(T::one() / norm), tol) {
            basis.push(r);
            frontier.push(basis.len() - 1);
            if basis.len() > max_dim {
                return Err(Error::LieClosureOverflow { max_dim });
            }
        }
    }

    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &bi in &frontier {
            for g in generators {
                let c = commutator(&basis[bi], g)?;
                let norm = c.frobenius_norm();
                if norm <= T::lit(1e-14) * g.frobenius_norm().max(T::one()) {
                    continue;
                }
                let unit = c.scale_real(T::one() / norm);
                if let Some(r) = gram_schmidt_extend(&basis, &unit, tol) {
                    basis.push(r);
                    next.push(basis.len() - 1);
                    if basis.len() > max_dim {
                        return Err(Error::LieClosureOverflow { max_dim });
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(LieBasis::new_unchecked(dim, basis))
}

/// Joint eigenstructure of a commuting Hermitian set: eigenvalue tuples,
/// projections and multiplicities. Projections are assembled on demand from
/// the stored joint eigenbasis.
#[derive(Debug, Clone)]
pub struct JointEigenstructure<T: Scalar> {
    dim: usize,
    operator_count: usize,
    /// Columns are the joint eigenbasis, grouped by tuple.
    basis: ComplexMatrix<T>,
    /// Column range of each tuple's eigenspace.
    group_ranges: Vec<(usize, usize)>,
    tuples: Vec<Vec<T>>,
}

impl<T: Scalar> JointEigenstructure<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of commuting operators the tuples index.
    pub fn operator_count(&self) -> usize {
        self.operator_count
    }

    /// Number of distinct joint eigenspaces.
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[Vec<T>] {
        &self.tuples
    }

    pub fn multiplicity(&self, k: usize) -> usize {
        let (a, b) = self.group_ranges[k];
        b - a
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        (0..self.len()).map(|k| self.multiplicity(k)).collect()
    }

    /// Materialized projection onto the `k`-th joint eigenspace.
    pub fn projection(&self, k: usize) -> HermitianOperator<T> {
        let (a, b) = self.group_ranges[k];
        let mut p = ComplexMatrix::zeros(self.dim, self.dim);
        for j in a..b {
            for row in 0..self.dim {
                let vr = self.basis.get(row, j);
                for col in 0..self.dim {
                    let add = vr * self.basis.get(col, j).conj();
                    let cur = p.get(row, col);
                    p.set(row, col, cur + add);
                }
            }
        }
        HermitianOperator::new_relaxed(p)
    }

    /// `tr(Pi_k A)` without materializing the projection.
    pub fn trace_with(&self, k: usize, a: &ComplexMatrix<T>) -> Result<T> {
        if a.rows() != self.dim || a.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: a.rows(),
                context: "operator traced against projection",
            });
        }
        let (lo, hi) = self.group_ranges[k];
        let mut acc = czero::<T>();
        #[allow(clippy::needless_range_loop)]
        for j in lo..hi {
            // v_j^dag A v_j
            for row in 0..self.dim {
                let mut av = czero::<T>();
                for col in 0..self.dim {
                    av += a.get(row, col) * self.basis.get(col, j);
                }
                acc += self.basis.get(row, j).conj() * av;
            }
        }
        Ok(acc.re)
    }

    /// `tr(Pi_k rho)` for a quantum state.
    pub fn state_overlap(&self, k: usize, state: &QuantumState<T>) -> Result<T> {
        if state.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: state.dim(),
                context: "state overlapped with projection",
            });
        }
        let (lo, hi) = self.group_ranges[k];
        match state.repr() {
            StateRepr::StateVector(psi) => {
                let mut acc = T::zero();
                for j in lo..hi {
                    let mut inner = czero::<T>();
                    for (row, amp) in psi.iter().enumerate() {
                        inner += self.basis.get(row, j).conj() * amp;
                    }
                    acc += cnorm_sqr(inner);
                }
                Ok(acc)
            }
            StateRepr::DensityMatrix(rho) => self.trace_with(k, rho),
        }
    }
}

/// Simultaneous eigenstructure of pairwise-commuting Hermitian operators via
/// a random real linear combination, validated per operator and re-drawn (at
/// most 5 times) when the combination fails to split the joint eigenspaces.
pub fn joint_eigenspaces<T: Scalar>(
    set: &[HermitianOperator<T>],
    tol: T,
) -> Result<JointEigenstructure<T>> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty operator set".into()));
    }
    let dim = set[0].dim();
    for h in set {
        if h.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: h.dim(),
                context: "joint eigenspace operator dimension",
            });
        }
    }
    for (i, a) in set.iter().enumerate() {
        for b in set.iter().skip(i + 1) {
            let scale = a.matrix().frobenius_norm() * b.matrix().frobenius_norm();
            if scale == T::zero() {
                continue;
            }
            let comm = commutator(a.matrix(), b.matrix())?;
            let rel = comm.frobenius_norm() / scale;
            if rel > T::lit(crate::model::COMMUTATIVITY_REL_TOL) {
                return Err(Error::NonCommuting { norm: rel.as_f64() });
            }
        }
    }

    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x0e16_e2b5);
    let mut last_err = None;
    for _attempt in 0..5 {
        let mut combo = ComplexMatrix::zeros(dim, dim);
        for h in set {
            let coeff = T::lit(crate::numerics::gauss(&mut rng));
            combo = combo.add(&h.matrix().scale_real(coeff))?;
        }
        let eig = eigh(&HermitianOperator::new_relaxed(combo))?;
        match group_and_validate(set, eig.eigenvectors.matrix(), tol) {
            Ok(structure) => return Ok(structure),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err
        .unwrap_or_else(|| Error::JointEigenspaceValidation("no valid combination found".into())))
}

fn group_and_validate<T: Scalar>(
    set: &[HermitianOperator<T>],
    vectors: &ComplexMatrix<T>,
    tol: T,
) -> Result<JointEigenstructure<T>> {
    let dim = set[0].dim();
    // Rayleigh tuple per eigenvector; second-order accurate in the
    // eigenvector error, which is the polishing pass.
    let mut tuples_per_vec: Vec<Vec<T>> = vec![Vec::with_capacity(set.len()); dim];
    for h in set {
        let hv = h.matrix().matmul(vectors)?;
        for (j, tup) in tuples_per_vec.iter_mut().enumerate() {
            let mut acc = czero::<T>();
            for i in 0..dim {
                acc += vectors.get(i, j).conj() * hv.get(i, j);
            }
            tup.push(acc.re);
        }
    }

    // cluster vectors whose tuples agree componentwise within tol
    let mut groups: Vec<(Vec<T>, Vec<usize>)> = Vec::new();
    'vectors: for (j, tup) in tuples_per_vec.iter().enumerate() {
        for (rep, members) in groups.iter_mut() {
            if rep
                .iter()
                .zip(tup.iter())
                .all(|(a, b)| (*a - *b).abs() <= tol)
            {
                // running mean keeps the representative centered
                let w = T::from_usize(members.len()).unwrap();
                for (r, b) in rep.iter_mut().zip(tup.iter()) {
                    *r = (*r * w + *b) / (w + T::one());
                }
                members.push(j);
                continue 'vectors;
            }
        }
        groups.push((tup.clone(), vec![j]));
    }

    // reorder columns so each group is contiguous
    let mut basis = ComplexMatrix::zeros(dim, dim);
    let mut group_ranges = Vec::with_capacity(groups.len());
    let mut tuples = Vec::with_capacity(groups.len());
    let mut col = 0usize;
    for (rep, members) in &groups {
        let start = col;
        for &j in members {
            for i in 0..dim {
                basis.set(i, col, vectors.get(i, j));
            }
            col += 1;
        }
        group_ranges.push((start, col));
        tuples.push(rep.clone());
    }

    let structure = JointEigenstructure {
        dim,
        operator_count: set.len(),
        basis,
        group_ranges,
        tuples,
    };

    // every operator must act as its scalar on each block
    for (t, h) in set.iter().enumerate() {
        let scale = h.matrix().frobenius_norm().max(T::one());
        let threshold = (tol * T::lit(10.0)).max(T::lit(1e-7)) * scale;
        let hv = h.matrix().matmul(&structure.basis)?;
        for (k, &(lo, hi)) in structure.group_ranges.iter().enumerate() {
            let lambda = structure.tuples[k][t];
            for j in lo..hi {
                let mut res = T::zero();
                for i in 0..dim {
                    res += cnorm_sqr(hv.get(i, j) - structure.basis.get(i, j) * creal(lambda));
                }
                if res.sqrt() > threshold {
                    return Err(Error::JointEigenspaceValidation(format!(
                        "operator {t} is not scalar on block {k} (residual {:.3e})",
                        res.sqrt().as_f64()
                    )));
                }
            }
        }
    }
    Ok(structure)
}

/// Closure split into an abelian center and simple ideals, one per joint
/// eigenspace.
#[derive(Debug, Clone)]
pub struct DlaDecomposition<T: Scalar> {
    pub center: LieBasis<T>,
    pub ideals: Vec<LieBasis<T>>,
    pub r: usize,
}

impl<T: Scalar> DlaDecomposition<T> {
    pub fn commutator_ideal_dim(&self) -> usize {
        self.ideals.iter().map(LieBasis::dimension).sum()
    }
}

/// Non-identity `m`-qubit Pauli words, HS-normalized (norm 1).
pub fn normalized_pauli_words<T: Scalar>(m: usize) -> Vec<ComplexMatrix<T>> {
    let count = 4usize.pow(m as u32);
    let norm = T::one() / T::from_usize(1 << m).unwrap().sqrt();
    (1..count)
        .map(|idx| {
            let mut axes = Vec::with_capacity(m);
            let mut rem = idx;
            for _ in 0..m {
                axes.push(match rem % 4 {
                    0 => Pauli::I,
                    1 => Pauli::X,
                    2 => Pauli::Y,
                    _ => Pauli::Z,
                });
                rem /= 4;
            }
            crate::numerics::pauli_word::<T>(&axes).scale_real(norm)
        })
        .collect()
}

/// Verify the center-plus-ideals structure of a closure computed from the
/// circuit's generators: each ideal basis element `(i/sqrt(chi)) P (x) Pi`
/// must lie in the closure's span; the center is the orthogonal complement of
/// the ideals inside the closure and must commute with everything.
pub fn decompose<T: Scalar>(
    closure: &LieBasis<T>,
    m: usize,
    eig: &JointEigenstructure<T>,
) -> Result<DlaDecomposition<T>> {
    let dim_m = 1usize << m;
    if closure.dim_ambient() != dim_m * eig.dim() {
        return Err(Error::DimensionMismatch {
            expected: dim_m * eig.dim(),
            got: closure.dim_ambient(),
            context: "closure ambient dimension",
        });
    }
    let words = normalized_pauli_words::<T>(m);
    let mut ideals = Vec::with_capacity(eig.len());
    for k in 0..eig.len() {
        let chi = T::from_usize(eig.multiplicity(k)).unwrap();
        let proj = eig.projection(k);
        let scale = T::one() / chi.sqrt();
        let mut elements = Vec::with_capacity(words.len());
        for w in &words {
            let e = kron(w, proj.matrix())
                .scale(cimag(T::one()))
                .scale_real(scale);
            let res = closure.residual_norm(&e)?;
            if res > T::lit(SPAN_TOL) {
                return Err(Error::JointEigenspaceValidation(format!(
                    "ideal element for eigenspace {k} escapes the closure span \
                     (residual {:.3e}); decomposition hypothesis violated",
                    res.as_f64()
                )));
            }
            elements.push(e);
        }
        ideals.push(LieBasis::new_unchecked(closure.dim_ambient(), elements));
    }

    // center = closure minus the ideals
    let all_ideal_elements: Vec<&ComplexMatrix<T>> =
        ideals.iter().flat_map(|b| b.elements().iter()).collect();
    let mut center_elements: Vec<ComplexMatrix<T>> = Vec::new();
    for b in closure.elements() {
        let mut r = b.clone();
        for _ in 0..2 {
            for e in &all_ideal_elements {
                let coeff = hs_inner(e, &r)?;
                if coeff != czero() {
                    r = r.sub(&e.scale(coeff))?;
                }
            }
        }
        if let Some(res) = gram_schmidt_extend(&center_elements, &r, T::lit(CLOSURE_RANK_TOL)) {
            center_elements.push(res);
        }
    }

    // the complement must be central
    for c in &center_elements {
        for b in closure.elements() {
            let comm = commutator(c, b)?;
            if comm.frobenius_norm() > T::lit(SPAN_TOL) {
                return Err(Error::JointEigenspaceValidation(format!(
                    "complement of the ideals is not abelian (commutator norm {:.3e})",
                    comm.frobenius_norm().as_f64()
                )));
            }
        }
    }

    Ok(DlaDecomposition {
        center: LieBasis::new_unchecked(closure.dim_ambient(), center_elements),
        r: eig.len(),
        ideals,
    })
}

/// Project `i op` onto an ideal; returns the Hermitian representative of the
/// projection and its squared Frobenius norm.
pub fn project_onto_ideal<T: Scalar>(
    op: &HermitianOperator<T>,
    ideal: &LieBasis<T>,
) -> Result<(ComplexMatrix<T>, T)> {
    if op.dim() != ideal.dim_ambient() {
        return Err(Error::DimensionMismatch {
            expected: ideal.dim_ambient(),
            got: op.dim(),
            context: "operator projected onto ideal",
        });
    }
    let skew = op.matrix().scale(cimag(T::one()));
    let mut proj = ComplexMatrix::zeros(op.dim(), op.dim());
    let mut norm_sq = T::zero();
    for e in ideal.elements() {
        let coeff = hs_inner(e, &skew)?;
        norm_sq += cnorm_sqr(coeff);
        proj = proj.add(&e.scale(coeff))?;
    }
    // back to the Hermitian picture: H = -i S
    let hermitian = proj.scale(cimag(-T::one()));
    Ok((hermitian, norm_sq))
}

/// Killing norm squared of a processing-register generator inside
/// `su(2^m)`: `2^{m+1} ||Omega_0||_F^2` with the trace part projected out.
pub fn killing_norm_sq<T: Scalar>(omega: &HermitianOperator<T>) -> T {
    let dim = omega.dim();
    let tr = omega.matrix().trace().re / T::from_usize(dim).unwrap();
    let mut traceless = omega.matrix().clone();
    for i in 0..dim {
        let v = traceless.get(i, i) - creal(tr);
        traceless.set(i, i, v);
    }
    let factor = T::from_usize(2 * dim).unwrap();
    factor * traceless.frobenius_norm_sq()
}

fn traceless_norm_sq<T: Scalar>(op: &HermitianOperator<T>) -> T {
    let dim = T::from_usize(op.dim()).unwrap();
    let tr = op.matrix().trace().re;
    op.matrix().frobenius_norm_sq() - tr * tr / dim
}

/// Squared Frobenius norm of the traceless part, the quantity the variance
/// expressions see for observables and labelling operators.
pub fn povm_traceless_norm_sq<T: Scalar>(op: &HermitianOperator<T>) -> T {
    traceless_norm_sq(op)
}

fn variance_prefactor<T: Scalar>(m: usize, omega_norm_sq: T, obs_norm_sq: T) -> T {
    let two_m = T::from_usize(1 << m).unwrap();
    let d_ideal = two_m * two_m - T::one();
    let killing_factor = T::lit(2.0) * two_m; // 2^{m+1}
    let state_factor = T::one() - T::one() / two_m; // |0_m> projection onto su
    killing_factor * state_factor * omega_norm_sq * obs_norm_sq / (d_ideal * d_ideal)
}

/// Analytic variance of a processing-angle derivative of the trace-form loss
/// in the deep-circuit limit:
/// `2^{m+1} (1 - 2^{-m}) ||Omega||_F^2 ||O_m||_F^2 / (2^{2m}-1)^2` times
/// `sum_lambda tr(Pi_lambda rho_n)^2`, with `rho_m = |0_m><0_m|` and the
/// traceless parts of `Omega`, `O_m` entering. The per-eigenspace
/// multiplicities cancel between the observable and state projections, so
/// only the overlaps remain.
pub fn predicted_variance_theta<T: Scalar>(
    m: usize,
    eig: &JointEigenstructure<T>,
    rho_n: &QuantumState<T>,
    o_m: &HermitianOperator<T>,
    omega: &HermitianOperator<T>,
) -> Result<T> {
    let pref = variance_prefactor(m, traceless_norm_sq(omega), traceless_norm_sq(o_m));
    let mut acc = T::zero();
    for k in 0..eig.len() {
        let t = eig.state_overlap(k, rho_n)?;
        acc += t * t;
    }
    Ok(pref * acc)
}

/// Analytic variance of a data-weight derivative for a single fixed
/// generator: `2 (2^m - 1) (1 - 2^{-m}) ||O_m||_F^2 / (2^{2m}-1)^2` times
/// `sum_j lambda_j^2 tr(Pi_j rho_n)^2`.
pub fn predicted_variance_phi<T: Scalar>(
    m: usize,
    eig: &JointEigenstructure<T>,
    rho_n: &QuantumState<T>,
    o_m: &HermitianOperator<T>,
) -> Result<T> {
    if eig.operator_count() != 1 {
        return Err(Error::InvalidArgument(
            "data-weight variance needs the eigenstructure of a single generator".into(),
        ));
    }
    let two_m = T::from_usize(1 << m).unwrap();
    let d_ideal = two_m * two_m - T::one();
    let pref = T::lit(2.0) * (two_m - T::one()) * (T::one() - T::one() / two_m)
        * traceless_norm_sq(o_m)
        / (d_ideal * d_ideal);
    let mut acc = T::zero();
    for k in 0..eig.len() {
        let lambda = eig.tuples()[k][0];
        let t = eig.state_overlap(k, rho_n)?;
        acc += lambda * lambda * t * t;
    }
    Ok(pref * acc)
}

/// Diagonal-term lower bound on the batch-loss gradient variance:
/// `(1/Q^2) 2^{m+1} (1 - 2^{-m}) ||Omega||_F^2 / (2^{2m}-1)^2` times
/// `sum_q ||M_q||_F^2 R^2_{X_q}(rho_n)`, where `||M_q||_F^2` must be the
/// traceless-part norm ([`povm_traceless_norm_sq`]) for the bound to hold.
pub fn total_loss_variance_lower_bound<T: Scalar>(
    m: usize,
    sample_eigs: &[JointEigenstructure<T>],
    rho_n: &QuantumState<T>,
    povm_norms_sq: &[T],
    omega: &HermitianOperator<T>,
) -> Result<T> {
    if sample_eigs.len() != povm_norms_sq.len() || sample_eigs.is_empty() {
        return Err(Error::InvalidArgument(
            "need one POVM norm per sample eigenstructure".into(),
        ));
    }
    let q = T::from_usize(sample_eigs.len()).unwrap();
    let mut acc = T::zero();
    for (eig, &mnorm) in sample_eigs.iter().zip(povm_norms_sq) {
        let overlap = crate::overlap::joint_overlap(eig, rho_n, true)?;
        acc += mnorm * overlap.value;
    }
    Ok(variance_prefactor(m, traceless_norm_sq(omega), T::one()) * acc / (q * q))
}

/// Barren-plateau upper-bound diagnostic for a fixed generator: prefactor
/// (with Pauli-scale `||Omega||^2 = ||O_m||^2 = 2^m`) times `chi_max^2` times
/// the eigenspace overlap. Small values flag BP-prone probes such as the
/// maximally mixed one.
pub fn bp_upper_bound_check<T: Scalar>(
    m: usize,
    eig: &JointEigenstructure<T>,
    rho_n: &QuantumState<T>,
    chi_max: usize,
) -> Result<T> {
    let pauli_norm = T::from_usize(1 << m).unwrap();
    let pref = variance_prefactor(m, pauli_norm, pauli_norm);
    let overlap = crate::overlap::joint_overlap(eig, rho_n, true)?;
    let chi = T::from_usize(chi_max).unwrap();
    Ok(pref * chi * chi * overlap.value)
}

/// Skew-Hermitian generator set of the circuit: the processing template's
/// rotation and entangler generators (which close onto `su(2^m)`) tensored
/// with the identity, plus the controlled data generators `i |c><c| (x) H_t`.
pub fn qrenn_generator_set<T: Scalar>(
    m: usize,
    data: &[HermitianOperator<T>],
    control: &str,
) -> Result<Vec<ComplexMatrix<T>>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no data generators".into()));
    }
    let dim_n = data[0].dim();
    let id_n = ComplexMatrix::identity(dim_n);
    let dim_m = 1usize << m;
    let i_unit = cimag(T::one());

    let mut gens: Vec<ComplexMatrix<T>> = Vec::new();
    for q in 0..m {
        for p in [Pauli::Y, Pauli::Z] {
            let w = crate::numerics::pauli_on::<T>(m, q, p);
            gens.push(kron(&w, &id_n).scale(i_unit));
        }
    }
    // traceless CZ-pair generators
    for q in 0..m.saturating_sub(1) {
        let mut proj = ComplexMatrix::zeros(dim_m, dim_m);
        let (b0, b1) = (m - 1 - q, m - 2 - q);
        for idx in 0..dim_m {
            if (idx >> b0) & 1 == 1 && (idx >> b1) & 1 == 1 {
                proj.set(idx, idx, crate::scalar::cone());
            }
        }
        let tr = proj.trace().re / T::from_usize(dim_m).unwrap();
        for idx in 0..dim_m {
            let v = proj.get(idx, idx) - creal(tr);
            proj.set(idx, idx, v);
        }
        gens.push(kron(&proj, &id_n).scale(i_unit));
    }
    for h in data {
        if h.dim() != dim_n {
            return Err(Error::DimensionMismatch {
                expected: dim_n,
                got: h.dim(),
                context: "data generator dimension",
            });
        }
        let embedded = crate::model::control_embed_generator(h, m, control)?;
        gens.push(embedded.matrix().scale(i_unit));
    }
    Ok(gens)
}

/// Default closure cap for the circuit's generator set: the predicted
/// dimension `r (4^m - 1) + r` plus one block of slack so mis-modelled
/// inputs fail fast.
pub fn default_max_closure_dim(m: usize, r: usize) -> usize {
    let four_m = 1usize << (2 * m);
    r * four_m + four_m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::pauli_word;
    use crate::qstate::{basis_state, plus_state};
    use crate::scalar::C;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    type Mx = ComplexMatrix<f64>;

    fn skew(p: &Mx) -> Mx {
        p.scale(C::new(0.0, 1.0))
    }

    fn zop() -> HermitianOperator<f64> {
        HermitianOperator::new(Pauli::Z.matrix()).unwrap()
    }

    fn random_with_spectrum(rng: &mut ChaCha12Rng, dim: usize, r: usize) -> HermitianOperator<f64> {
        let n = dim.trailing_zeros() as usize;
        crate::data::gen_with_spectrum::<f64, _>(n, r, rng).unwrap()
    }

    #[test]
    fn closure_abelian_single_generator() {
        let basis = lie_closure(&[skew(&Pauli::Z.matrix())], 1e-7, 10).unwrap();
        assert_eq!(basis.dimension(), 1);
    }

    #[test]
    fn closure_full_su2() {
        let gens = vec![skew(&Pauli::X.matrix()), skew(&Pauli::Z.matrix())];
        let basis = lie_closure(&gens, 1e-7, 10).unwrap();
        assert_eq!(basis.dimension(), 3);
    }

    #[test]
    fn closure_qrenn_m1_n1_fixed_z_is_seven() {
        let gens = qrenn_generator_set(1, &[zop()], "1").unwrap();
        let basis = lie_closure(&gens, 1e-7, default_max_closure_dim(1, 2)).unwrap();
        assert_eq!(basis.dimension(), 7);
    }

    #[test]
    fn closure_m2_processing_template_spans_su4() {
        // data = identity decouples the registers; the processing factor must
        // close onto su(4), plus the central line from the embedded identity
        let gens = qrenn_generator_set(2, &[HermitianOperator::identity(2)], "11").unwrap();
        let basis = lie_closure(&gens, 1e-7, default_max_closure_dim(2, 1)).unwrap();
        assert_eq!(basis.dimension(), 16);
    }

    #[test]
    fn closure_respects_max_dim() {
        let gens = qrenn_generator_set(1, &[zop()], "1").unwrap();
        assert!(matches!(
            lie_closure(&gens, 1e-7, 5),
            Err(Error::LieClosureOverflow { .. })
        ));
    }

    #[test]
    fn joint_eigenspaces_single_z() {
        let eig = joint_eigenspaces(&[zop()], 1e-8).unwrap();
        assert_eq!(eig.len(), 2);
        let mut tuples: Vec<f64> = eig.tuples().iter().map(|t| t[0]).collect();
        tuples.sort_by(f64::total_cmp);
        assert!((tuples[0] + 1.0).abs() <= 1e-10);
        assert!((tuples[1] - 1.0).abs() <= 1e-10);
        for k in 0..2 {
            let p = eig.projection(k);
            let expect = if eig.tuples()[k][0] > 0.0 {
                Mx::diag_real(&[1.0, 0.0])
            } else {
                Mx::diag_real(&[0.0, 1.0])
            };
            assert!(p.matrix().max_abs_diff(&expect) <= 1e-10);
        }
    }

    #[test]
    fn joint_eigenspaces_two_operators() {
        let zi = HermitianOperator::new(pauli_word::<f64>(&[Pauli::Z, Pauli::I])).unwrap();
        let iz = HermitianOperator::new(pauli_word::<f64>(&[Pauli::I, Pauli::Z])).unwrap();
        let eig = joint_eigenspaces(&[zi, iz], 1e-8).unwrap();
        assert_eq!(eig.len(), 4);
        for k in 0..4 {
            assert_eq!(eig.multiplicity(k), 1);
            let t = &eig.tuples()[k];
            assert!((t[0].abs() - 1.0).abs() <= 1e-10);
            assert!((t[1].abs() - 1.0).abs() <= 1e-10);
        }
        let mut total = Mx::zeros(4, 4);
        for k in 0..4 {
            total = total.add(eig.projection(k).matrix()).unwrap();
        }
        assert!(total.max_abs_diff(&Mx::identity(4)) <= 1e-9);
    }

    #[test]
    fn joint_eigenspaces_identity_fully_degenerate() {
        let eig = joint_eigenspaces(&[HermitianOperator::<f64>::identity(4)], 1e-8).unwrap();
        assert_eq!(eig.len(), 1);
        assert_eq!(eig.multiplicity(0), 4);
        assert!((eig.tuples()[0][0] - 1.0).abs() <= 1e-10);
        assert!(eig.projection(0).matrix().max_abs_diff(&Mx::identity(4)) <= 1e-9);
    }

    #[test]
    fn joint_eigenspaces_rejects_noncommuting() {
        let x = HermitianOperator::new(Pauli::X.matrix()).unwrap();
        assert!(matches!(
            joint_eigenspaces(&[zop(), x], 1e-8),
            Err(Error::NonCommuting { .. })
        ));
    }

    #[test]
    fn projections_idempotent_orthogonal() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let h = random_with_spectrum(&mut rng, 4, 3);
        let h2 = HermitianOperator::new_relaxed(h.matrix().matmul(h.matrix()).unwrap());
        let eig = joint_eigenspaces(&[h, h2], 1e-8).unwrap();
        for k in 0..eig.len() {
            let p = eig.projection(k);
            let pp = p.matrix().matmul(p.matrix()).unwrap();
            assert!(pp.max_abs_diff(p.matrix()) <= 1e-9);
            for k2 in 0..eig.len() {
                if k2 != k {
                    let cross = p.matrix().matmul(eig.projection(k2).matrix()).unwrap();
                    assert!(cross.max_abs_entry() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn decompose_m1_fixed_z() {
        let gens = qrenn_generator_set(1, &[zop()], "1").unwrap();
        let closure = lie_closure(&gens, 1e-7, default_max_closure_dim(1, 2)).unwrap();
        let eig = joint_eigenspaces(&[zop()], 1e-8).unwrap();
        let dec = decompose(&closure, 1, &eig).unwrap();
        assert_eq!(dec.r, 2);
        assert_eq!(dec.ideals.len(), 2);
        assert_eq!(dec.ideals[0].dimension(), 3);
        assert_eq!(dec.ideals[1].dimension(), 3);
        assert_eq!(dec.center.dimension(), 1);
        assert_eq!(dec.commutator_ideal_dim(), 6);
    }

    #[test]
    fn decompose_m1_identity_data() {
        // H = I: r = 1, decoupled registers
        let gens = qrenn_generator_set(1, &[HermitianOperator::identity(2)], "1").unwrap();
        let closure = lie_closure(&gens, 1e-7, default_max_closure_dim(1, 1)).unwrap();
        let eig = joint_eigenspaces(&[HermitianOperator::<f64>::identity(2)], 1e-8).unwrap();
        let dec = decompose(&closure, 1, &eig).unwrap();
        assert_eq!(dec.r, 1);
        assert_eq!(dec.ideals[0].dimension(), 3);
        assert_eq!(dec.commutator_ideal_dim(), 3);
    }

    #[test]
    fn decompose_m2_fixed_two_eigenvalues() {
        // m=2, n=1, H=Z: commutator ideal 2 * 15 = 30
        let gens = qrenn_generator_set(2, &[zop()], "11").unwrap();
        let closure = lie_closure(&gens, 1e-7, default_max_closure_dim(2, 2)).unwrap();
        let eig = joint_eigenspaces(&[zop()], 1e-8).unwrap();
        let dec = decompose(&closure, 2, &eig).unwrap();
        assert_eq!(dec.commutator_ideal_dim(), 30);
        assert_eq!(dec.center.dimension(), 1);
    }

    #[test]
    fn ideals_closed_and_mutually_commuting() {
        let gens = qrenn_generator_set(1, &[zop()], "1").unwrap();
        let closure = lie_closure(&gens, 1e-7, default_max_closure_dim(1, 2)).unwrap();
        let eig = joint_eigenspaces(&[zop()], 1e-8).unwrap();
        let dec = decompose(&closure, 1, &eig).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(62);
        for _ in 0..5 {
            let pick = |basis: &LieBasis<f64>, rng: &mut ChaCha12Rng| {
                let mut acc = Mx::zeros(4, 4);
                for e in basis.elements() {
                    acc = acc.add(&e.scale_real(rng.gen::<f64>() * 2.0 - 1.0)).unwrap();
                }
                acc
            };
            let a = pick(&dec.ideals[0], &mut rng);
            let b = pick(&dec.ideals[0], &mut rng);
            let c = pick(&dec.ideals[1], &mut rng);
            let ab = commutator(&a, &b).unwrap();
            assert!(
                dec.ideals[0].residual_norm(&ab).unwrap() <= 1e-8 * (1.0 + ab.frobenius_norm())
            );
            let ac = commutator(&a, &c).unwrap();
            assert!(
                ac.frobenius_norm() <= 1e-8 * (1.0 + a.frobenius_norm() * c.frobenius_norm())
            );
        }
    }

    #[test]
    fn projection_closed_forms() {
        // ideal of Pi = |0><0| for H = Z at m = 1
        let gens = qrenn_generator_set(1, &[zop()], "1").unwrap();
        let closure = lie_closure(&gens, 1e-7, default_max_closure_dim(1, 2)).unwrap();
        let eig = joint_eigenspaces(&[zop()], 1e-8).unwrap();
        let dec = decompose(&closure, 1, &eig).unwrap();
        let plus_idx = eig.tuples().iter().position(|t| t[0] > 0.0).unwrap();

        // op = Z (x) I -> projection Z (x) Pi with norm^2 = 2
        let zi = HermitianOperator::new(pauli_word::<f64>(&[Pauli::Z, Pauli::I])).unwrap();
        let (proj, norm_sq) = project_onto_ideal(&zi, &dec.ideals[plus_idx]).unwrap();
        let expect = kron(&Pauli::Z.matrix::<f64>(), eig.projection(plus_idx).matrix());
        assert!(proj.max_abs_diff(&expect) <= 1e-9);
        assert!((norm_sq - 2.0).abs() <= 1e-9);

        // identity projects to zero
        let id = HermitianOperator::<f64>::identity(4);
        let (proj0, n0) = project_onto_ideal(&id, &dec.ideals[plus_idx]).unwrap();
        assert!(proj0.max_abs_entry() <= 1e-10);
        assert!(n0 <= 1e-12);

        // rho = |0><0| (x) |+><+|: norm^2 = (1 - 2^{-m}) tr(Pi rho_n)^2 / chi
        let rho = crate::qstate::tensor(&basis_state::<f64>(1, "0").unwrap(), &plus_state::<f64>(1));
        let rho_op = HermitianOperator::new_relaxed(rho.density());
        let (_, nr) = project_onto_ideal(&rho_op, &dec.ideals[plus_idx]).unwrap();
        assert!((nr - 0.125).abs() <= 1e-9);
    }

    #[test]
    fn projection_completeness() {
        let gens = qrenn_generator_set(1, &[zop()], "1").unwrap();
        let closure = lie_closure(&gens, 1e-7, default_max_closure_dim(1, 2)).unwrap();
        let eig = joint_eigenspaces(&[zop()], 1e-8).unwrap();
        let dec = decompose(&closure, 1, &eig).unwrap();

        // an operator supported on the closure splits exactly across
        // center + ideals
        let mut rng = ChaCha12Rng::seed_from_u64(63);
        let mut acc = Mx::zeros(4, 4);
        for e in closure.elements() {
            acc = acc.add(&e.scale_real(rng.gen::<f64>() * 2.0 - 1.0)).unwrap();
        }
        let op = HermitianOperator::new_relaxed(acc.scale(C::new(0.0, -1.0)));
        let total = op.matrix().frobenius_norm_sq();
        let mut sum = 0.0;
        for ideal in &dec.ideals {
            let (_, n) = project_onto_ideal(&op, ideal).unwrap();
            sum += n;
        }
        let (_, nc) = project_onto_ideal(&op, &dec.center).unwrap();
        sum += nc;
        assert!((sum - total).abs() <= 1e-8 * (1.0 + total));
    }

    #[test]
    fn killing_norm_oracle() {
        // direct sum over an orthonormal su(2) basis: sum_k ||[Z, E_k]||_F^2
        let basis: Vec<Mx> = [Pauli::X, Pauli::Y, Pauli::Z]
            .iter()
            .map(|p| skew(&p.matrix()).scale_real(1.0 / 2.0f64.sqrt()))
            .collect();
        let z = Pauli::Z.matrix::<f64>();
        let mut oracle = 0.0;
        for e in &basis {
            oracle += commutator(&z, e).unwrap().frobenius_norm_sq();
        }
        assert!((oracle - 8.0).abs() <= 1e-12);
        assert!((killing_norm_sq(&zop()) - 8.0).abs() <= 1e-12);

        // zero and homogeneity
        assert_eq!(killing_norm_sq(&HermitianOperator::<f64>::zero(2)), 0.0);
        let scaled = zop().scale_real(0.7);
        assert!((killing_norm_sq(&scaled) - 0.49 * 8.0).abs() <= 1e-12);

        // trace part is projected out
        let shifted = HermitianOperator::new(
            Pauli::Z
                .matrix::<f64>()
                .add(&Mx::identity(2).scale_real(3.0))
                .unwrap(),
        )
        .unwrap();
        assert!((killing_norm_sq(&shifted) - 8.0).abs() <= 1e-12);
    }

    #[test]
    fn predicted_variance_theta_plug_in() {
        // m=1, H=Z, rho_n=|+>, O_m=Z, Omega=Z: 4/9 in the e^{i theta Omega}
        // convention (frozen by hand from the exact expression:
        // prefactor 4 * 1/2 * 2 * 2 / 9 = 8/9, overlap sum 1/2)
        let eig = joint_eigenspaces(&[zop()], 1e-8).unwrap();
        let rho_n = plus_state::<f64>(1);
        let v = predicted_variance_theta(1, &eig, &rho_n, &zop(), &zop()).unwrap();
        assert!((v - 4.0 / 9.0).abs() <= 1e-12);

        // the implemented rotation generator -Y/2 scales it by 1/4
        let impl_gen = HermitianOperator::new(Pauli::Y.matrix::<f64>().scale_real(-0.5)).unwrap();
        let vi = predicted_variance_theta(1, &eig, &rho_n, &zop(), &impl_gen).unwrap();
        assert!((vi - 1.0 / 9.0).abs() <= 1e-12);

        // homogeneity in Omega
        let vh =
            predicted_variance_theta(1, &eig, &rho_n, &zop(), &zop().scale_real(0.5)).unwrap();
        assert!((vh - 1.0 / 9.0).abs() <= 1e-12);

        // an eigenstate probe concentrates all overlap in one eigenspace
        let rho0 = basis_state::<f64>(1, "0").unwrap();
        let v0 = predicted_variance_theta(1, &eig, &rho0, &zop(), &zop()).unwrap();
        assert!((v0 - 8.0 / 9.0).abs() <= 1e-12);
    }

    #[test]
    fn predicted_variance_phi_plug_in() {
        // m=1, H=Z, rho_n=|+>, O_m=Z: prefactor 2*1*(1/2)*2/9 = 2/9, weighted
        // overlap sum 1/2 -> 1/9
        let eig = joint_eigenspaces(&[zop()], 1e-8).unwrap();
        let rho_n = plus_state::<f64>(1);
        let v = predicted_variance_phi(1, &eig, &rho_n, &zop()).unwrap();
        assert!((v - 1.0 / 9.0).abs() <= 1e-12);

        // H = 0 -> 0
        let eig0 = joint_eigenspaces(&[HermitianOperator::<f64>::zero(2)], 1e-8).unwrap();
        let v0 = predicted_variance_phi(1, &eig0, &rho_n, &zop()).unwrap();
        assert!(v0.abs() <= 1e-15);

        // H scaled by c scales the variance by c^2
        let eig_scaled = joint_eigenspaces(&[zop().scale_real(0.5)], 1e-8).unwrap();
        let vs = predicted_variance_phi(1, &eig_scaled, &rho_n, &zop()).unwrap();
        assert!((vs - 0.25 / 9.0).abs() <= 1e-12);

        // multi-operator eigenstructure is rejected
        let zi = HermitianOperator::new(pauli_word::<f64>(&[Pauli::Z, Pauli::I])).unwrap();
        let iz = HermitianOperator::new(pauli_word::<f64>(&[Pauli::I, Pauli::Z])).unwrap();
        let eig2 = joint_eigenspaces(&[zi, iz], 1e-8).unwrap();
        let rho2 = plus_state::<f64>(2);
        assert!(predicted_variance_phi(1, &eig2, &rho2, &zop()).is_err());
    }

    #[test]
    fn lower_bound_shapes() {
        let eig = joint_eigenspaces(&[zop()], 1e-8).unwrap();
        let rho_n = plus_state::<f64>(1);
        let m_norm = povm_traceless_norm_sq(
            &HermitianOperator::new(
                Mx::identity(2)
                    .add(&Pauli::Z.matrix())
                    .unwrap()
                    .scale_real(0.5),
            )
            .unwrap(),
        );
        assert!((m_norm - 0.5).abs() <= 1e-12);
        let b =
            total_loss_variance_lower_bound(1, std::slice::from_ref(&eig), &rho_n, &[m_norm], &zop()).unwrap();
        // prefactor(omega=Z) = 4 * 0.5 * 2 / 9 = 4/9; * ||M||^2 (1/2) * R^2 (1/2)
        assert!((b - 4.0 / 9.0 * 0.5 * 0.5).abs() <= 1e-12);

        let b0 = total_loss_variance_lower_bound(1, std::slice::from_ref(&eig), &rho_n, &[0.0], &zop()).unwrap();
        assert!(b0.abs() <= 1e-15);
    }

    #[test]
    fn bp_bound_diagnostics() {
        // maximally mixed probe, nondegenerate H on n qubits: R^2 = 2^{-n}
        for n in [2usize, 3, 4] {
            let dim = 1usize << n;
            let vals: Vec<f64> = (0..dim).map(|k| k as f64).collect();
            let h = HermitianOperator::new(Mx::diag_real(&vals)).unwrap();
            let eig = joint_eigenspaces(&[h], 1e-8).unwrap();
            let rho = crate::qstate::mixed_probe::<f64>(0.0, n).unwrap();
            let bound = bp_upper_bound_check(1, &eig, &rho, 1).unwrap();
            let pref = variance_prefactor(1, 2.0, 2.0);
            assert!((bound - pref * 2.0f64.powi(-(n as i32))).abs() <= 1e-12);
        }
        // eigenstate probe: R^2 = 1, bound not small
        let eig = joint_eigenspaces(&[zop()], 1e-8).unwrap();
        let rho = basis_state::<f64>(1, "0").unwrap();
        let bound = bp_upper_bound_check(1, &eig, &rho, 1).unwrap();
        let pref = variance_prefactor(1, 2.0, 2.0);
        assert!((bound - pref).abs() <= 1e-12);
    }

    #[test]
    fn closure_dimension_law_small_sweep() {
        // random fixed H with r distinct eigenvalues: ideal dim r (4^m - 1)
        let mut rng = ChaCha12Rng::seed_from_u64(64);
        for (m, n, r) in [(1usize, 1usize, 2usize), (1, 2, 3), (2, 1, 2)] {
            let dim = 1usize << n;
            let h = random_with_spectrum(&mut rng, dim, r);
            let gens = qrenn_generator_set(m, std::slice::from_ref(&h), &"1".repeat(m)).unwrap();
            let closure = lie_closure(&gens, 1e-7, default_max_closure_dim(m, r)).unwrap();
            let eig = joint_eigenspaces(&[h], 1e-8).unwrap();
            assert_eq!(eig.len(), r, "m={m} n={n} r={r}");
            let dec = decompose(&closure, m, &eig).unwrap();
            let four_m = 1usize << (2 * m);
            assert_eq!(
                dec.commutator_ideal_dim(),
                r * (four_m - 1),
                "m={m} n={n} r={r}"
            );
            assert_eq!(dec.center.dimension(), 1, "fixed H has a one-line center");
        }
    }
}
