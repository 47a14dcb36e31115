//! Joint eigenspace overlap `R^2_S(O) = sum_lambda tr(Pi_lambda O)^2`:
//! numerical evaluation against a [`JointEigenstructure`], the analytic
//! closed form for involutory operators, and the mixed-probe bound used by
//! the trainability diagnostics.

use crate::dla::JointEigenstructure;
use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, HermitianOperator};
use crate::qstate::{mixed_probe, QuantumState};
use crate::scalar::Scalar;

/// Tolerance for the involutory check `||P^2 - I||_F`.
pub const INVOLUTORY_TOL: f64 = 1e-8;
/// A tuple counts as all-zeros when every component is below this.
pub const ZERO_TUPLE_TOL: f64 = 1e-8;

/// Overlap value with its per-tuple breakdown.
#[derive(Debug, Clone)]
pub struct OverlapReport<T: Scalar> {
    /// `sum tr(Pi_lambda O)^2` over the included tuples.
    pub value: T,
    /// `(tuple, tr(Pi O)^2)` pairs in eigenstructure order.
    pub per_tuple: Vec<(Vec<T>, T)>,
    /// Whether the all-zeros tuple (if any) was included.
    pub included_zero_tuple: bool,
}

/// Overlap of a Hermitian operator with the joint eigenspaces. The all-zeros
/// tuple is skipped when `include_zero_tuple` is false; including everything
/// is the default convention throughout this crate.
pub fn joint_overlap_operator<T: Scalar>(
    eig: &JointEigenstructure<T>,
    o: &HermitianOperator<T>,
    include_zero_tuple: bool,
) -> Result<OverlapReport<T>> {
    if o.dim() != eig.dim() {
        return Err(Error::DimensionMismatch {
            expected: eig.dim(),
            got: o.dim(),
            context: "overlap operator dimension",
        });
    }
    accumulate(eig, include_zero_tuple, |k| eig.trace_with(k, o.matrix()))
}

/// Overlap of a state (pure or mixed) with the joint eigenspaces.
pub fn joint_overlap<T: Scalar>(
    eig: &JointEigenstructure<T>,
    rho: &QuantumState<T>,
    include_zero_tuple: bool,
) -> Result<OverlapReport<T>> {
    if rho.dim() != eig.dim() {
        return Err(Error::DimensionMismatch {
            expected: eig.dim(),
            got: rho.dim(),
            context: "overlap state dimension",
        });
    }
    accumulate(eig, include_zero_tuple, |k| eig.state_overlap(k, rho))
}

fn accumulate<T: Scalar>(
    eig: &JointEigenstructure<T>,
    include_zero_tuple: bool,
    mut trace: impl FnMut(usize) -> Result<T>,
) -> Result<OverlapReport<T>> {
    let mut value = T::zero();
    let mut per_tuple = Vec::with_capacity(eig.len());
    let mut included_zero = false;
    for k in 0..eig.len() {
        let tuple = eig.tuples()[k].clone();
        let is_zero = tuple.iter().all(|l| l.abs() <= T::lit(ZERO_TUPLE_TOL));
        if is_zero && !include_zero_tuple {
            continue;
        }
        if is_zero {
            included_zero = true;
        }
        let t = trace(k)?;
        let sq = t * t;
        value += sq;
        per_tuple.push((tuple, sq));
    }
    Ok(OverlapReport {
        value,
        per_tuple,
        included_zero_tuple: included_zero,
    })
}

/// Closed-form overlap for an involutory operator (`P^2 = I`):
/// `R^2_P(rho) = (1 + tr(P rho)^2) / 2`, computed from the two-projector
/// split without a full eigendecomposition.
pub fn involutory_overlap_analytic<T: Scalar>(
    p: &HermitianOperator<T>,
    rho: &QuantumState<T>,
) -> Result<T> {
    if p.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: p.dim(),
            context: "involutory overlap dimension",
        });
    }
    let sq = p.matrix().matmul(p.matrix())?;
    let dev = sq
        .sub(&ComplexMatrix::identity(p.dim()))?
        .frobenius_norm();
    if dev > T::lit(INVOLUTORY_TOL) {
        return Err(Error::InvalidArgument(format!(
            "operator is not involutory (||P^2 - I||_F = {:.3e})",
            dev.as_f64()
        )));
    }
    let t = crate::qstate::expectation(rho, p)?;
    Ok((T::one() + t * t) * T::lit(0.5))
}

/// Exact overlap of the mixed probe `p |+..+><+..+| + (1-p) I/2^n` against a
/// joint eigenstructure. For `p = 0.5` configurations the caller asserts the
/// `>= 1/4` bound.
pub fn diagonal_probe_overlap_bound<T: Scalar>(
    eig: &JointEigenstructure<T>,
    p_mix: T,
) -> Result<T> {
    let n = eig.dim().trailing_zeros() as usize;
    if 1usize << n != eig.dim() {
        return Err(Error::InvalidArgument(
            "eigenstructure dimension is not a power of two".into(),
        ));
    }
    let probe = mixed_probe(p_mix, n)?;
    Ok(joint_overlap(eig, &probe, true)?.value)
}
