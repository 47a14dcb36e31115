//! Quantum states on qubit registers, pure or mixed, with exact expectation
//! values.
//!
//! Qubit ordering is big-endian: the leftmost bit of a bitstring is the most
//! significant index bit, so the processing register occupies the top qubits
//! and tensor products compose by plain Kronecker order. Measurements are
//! exact expectations; there is no shot sampling.

use crate::error::{Error, Result};
use crate::numerics::{kron, ComplexMatrix, HermitianOperator, UnitaryOperator};
use crate::scalar::{cnorm_sqr, cone, creal, czero, Scalar, C};

/// Norm / trace tolerance for state validation.
pub const STATE_NORM_TOL: f64 = 1e-10;
/// Tolerated negative eigenvalue for density matrices.
pub const PSD_TOL: f64 = 1e-10;
/// Largest imaginary residue accepted when reading off a real expectation.
pub const IMAG_RESIDUE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum StateRepr<T: Scalar> {
    StateVector(Vec<C<T>>),
    DensityMatrix(ComplexMatrix<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState<T: Scalar> {
    qubits: usize,
    repr: StateRepr<T>,
}

impl<T: Scalar> QuantumState<T> {
    /// Validated pure state from amplitudes of length `2^qubits`.
    pub fn from_amplitudes(qubits: usize, amplitudes: Vec<C<T>>) -> Result<Self> {
        let dim = 1usize << qubits;
        if amplitudes.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: amplitudes.len(),
                context: "state vector length",
            });
        }
        let norm_sq: T = amplitudes.iter().map(|a| cnorm_sqr(*a)).sum();
        if (norm_sq - T::one()).abs() > T::lit(STATE_NORM_TOL) {
            return Err(Error::InvalidState(format!(
                "state vector norm^2 = {}, expected 1",
                norm_sq.as_f64()
            )));
        }
        Ok(Self {
            qubits,
            repr: StateRepr::StateVector(amplitudes),
        })
    }

    /// Validated density matrix: Hermitian, unit trace, PSD within tolerance.
    pub fn from_density(qubits: usize, rho: ComplexMatrix<T>) -> Result<Self> {
        let dim = 1usize << qubits;
        if rho.rows() != dim || rho.cols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: rho.rows(),
                context: "density matrix dimension",
            });
        }
        let herm = HermitianOperator::new(rho)?;
        let tr = herm.matrix().trace();
        if (tr.re - T::one()).abs() > T::lit(STATE_NORM_TOL) || tr.im.abs() > T::lit(STATE_NORM_TOL)
        {
            return Err(Error::InvalidState(format!(
                "density matrix trace = {} + {}i, expected 1",
                tr.re.as_f64(),
                tr.im.as_f64()
            )));
        }
        let eig = crate::numerics::eigh(&herm)?;
        if eig.eigenvalues[0] < -T::lit(PSD_TOL) {
            return Err(Error::InvalidState(format!(
                "density matrix has eigenvalue {}",
                eig.eigenvalues[0].as_f64()
            )));
        }
        Ok(Self {
            qubits,
            repr: StateRepr::DensityMatrix(herm.into_matrix()),
        })
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        1usize << self.qubits
    }

    pub fn repr(&self) -> &StateRepr<T> {
        &self.repr
    }

    pub fn is_pure_vector(&self) -> bool {
        matches!(self.repr, StateRepr::StateVector(_))
    }

    /// Density-matrix view of the state, promoting a pure state to |psi><psi|.
    pub fn density(&self) -> ComplexMatrix<T> {
        match &self.repr {
            StateRepr::StateVector(psi) => {
                let d = psi.len();
                ComplexMatrix::from_fn(d, d, |i, j| psi[i] * psi[j].conj())
            }
            StateRepr::DensityMatrix(rho) => rho.clone(),
        }
    }
}

/// Computational basis state |bits> with big-endian bit order.
pub fn basis_state<T: Scalar>(qubits: usize, bits: &str) -> Result<QuantumState<T>> {
    if bits.len() != qubits {
        return Err(Error::InvalidArgument(format!(
            "bitstring length {} does not match {} qubits",
            bits.len(),
            qubits
        )));
    }
    let mut index = 0usize;
    for ch in bits.chars() {
        index <<= 1;
        match ch {
            '0' => {}
            '1' => index |= 1,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "bitstring must contain only 0/1, got {ch:?}"
                )))
            }
        }
    }
    let dim = 1usize << qubits;
    let mut amps = vec![czero::<T>(); dim];
    amps[index] = cone();
    QuantumState::from_amplitudes(qubits, amps)
}

/// Uniform superposition |+>^(x) qubits.
pub fn plus_state<T: Scalar>(qubits: usize) -> QuantumState<T> {
    let dim = 1usize << qubits;
    let amp = creal(T::one() / (T::from_usize(dim).unwrap()).sqrt());
    QuantumState {
        qubits,
        repr: StateRepr::StateVector(vec![amp; dim]),
    }
}

/// |->^(x) qubits; amplitude sign set by bit parity.
pub fn minus_state<T: Scalar>(qubits: usize) -> QuantumState<T> {
    let dim = 1usize << qubits;
    let amp = T::one() / (T::from_usize(dim).unwrap()).sqrt();
    let amps = (0..dim)
        .map(|k| {
            if (k.count_ones() & 1) == 1 {
                creal(-amp)
            } else {
                creal(amp)
            }
        })
        .collect();
    QuantumState {
        qubits,
        repr: StateRepr::StateVector(amps),
    }
}

/// Noisy probe `p |+..+><+..+| + (1-p) I / 2^qubits`.
pub fn mixed_probe<T: Scalar>(p: T, qubits: usize) -> Result<QuantumState<T>> {
    if p < T::zero() || p > T::one() {
        return Err(Error::InvalidArgument(format!(
            "mixture weight {} outside [0, 1]",
            p.as_f64()
        )));
    }
    let dim = 1usize << qubits;
    let plus_amp = T::one() / T::from_usize(dim).unwrap();
    let uniform = (T::one() - p) / T::from_usize(dim).unwrap();
    let rho = ComplexMatrix::from_fn(dim, dim, |i, j| {
        let mut v = creal(p * plus_amp);
        if i == j {
            v += creal(uniform);
        }
        v
    });
    QuantumState::from_density(qubits, rho)
}

/// Joint state on `a.qubits + b.qubits`; stays a state vector when both
/// factors are pure.
pub fn tensor<T: Scalar>(a: &QuantumState<T>, b: &QuantumState<T>) -> QuantumState<T> {
    let qubits = a.qubits + b.qubits;
    match (&a.repr, &b.repr) {
        (StateRepr::StateVector(x), StateRepr::StateVector(y)) => {
            let mut amps = Vec::with_capacity(x.len() * y.len());
            for ax in x {
                for ay in y {
                    amps.push(ax * ay);
                }
            }
            QuantumState {
                qubits,
                repr: StateRepr::StateVector(amps),
            }
        }
        _ => QuantumState {
            qubits,
            repr: StateRepr::DensityMatrix(kron(&a.density(), &b.density())),
        },
    }
}

/// `U |psi>` or `U rho U^dag`.
pub fn apply_unitary<T: Scalar>(
    state: &QuantumState<T>,
    u: &UnitaryOperator<T>,
) -> Result<QuantumState<T>> {
    if u.dim() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: u.dim(),
            context: "unitary applied to state",
        });
    }
    let repr = match &state.repr {
        StateRepr::StateVector(psi) => StateRepr::StateVector(u.matrix().matvec(psi)?),
        StateRepr::DensityMatrix(rho) => {
            let um = u.matrix();
            StateRepr::DensityMatrix(um.matmul(rho)?.matmul(&um.adjoint())?)
        }
    };
    Ok(QuantumState {
        qubits: state.qubits,
        repr,
    })
}

/// `tr(rho O)`, discarding an imaginary residue below tolerance.
pub fn expectation<T: Scalar>(state: &QuantumState<T>, o: &HermitianOperator<T>) -> Result<T> {
    if o.dim() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: o.dim(),
            context: "observable applied to state",
        });
    }
    let value = match &state.repr {
        StateRepr::StateVector(psi) => {
            let opsi = o.matrix().matvec(psi)?;
            psi.iter()
                .zip(opsi.iter())
                .map(|(a, b)| a.conj() * b)
                .sum::<C<T>>()
        }
        StateRepr::DensityMatrix(rho) => {
            // tr(rho O) = sum_ij rho_ij O_ji
            let dim = rho.rows();
            let mut acc = czero::<T>();
            for i in 0..dim {
                for j in 0..dim {
                    acc += rho.get(i, j) * o.matrix().get(j, i);
                }
            }
            acc
        }
    };
    if value.im.abs() > T::lit(IMAG_RESIDUE_TOL) {
        return Err(Error::InvalidState(format!(
            "expectation has imaginary residue {}",
            value.im.as_f64()
        )));
    }
    Ok(value.re)
}
