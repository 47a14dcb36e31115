//! Circuit model: architecture, parameters, controlled data embedding, the
//! processing-block template, loss, prediction and accuracy.
//!
//! `forward` here is the straightforward dense reference; the optimized
//! evaluation used by training and sampling experiments lives in
//! [`crate::engine`] and is cross-checked against this one.

use crate::error::{Error, Result};
use crate::numerics::{
    expm_i, kron, ComplexMatrix, HermitianOperator, Pauli, UnitaryOperator,
};
use crate::qstate::{apply_unitary, expectation, QuantumState};
use crate::scalar::{cis, cone, creal, Scalar};

/// Relative tolerance for the pairwise-commutativity check on embedded data.
pub const COMMUTATIVITY_REL_TOL: f64 = 1e-9;
/// Slack accepted around [0, 1] before a trace loss is considered invalid.
pub const LOSS_RANGE_TOL: f64 = 1e-10;

/// Circuit shape: processing register of `m` qubits, embedding register of
/// `n` qubits, `slots` data queries, `layers` template repetitions per
/// processing block, and the control bitstring (default all-ones).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QrennArchitecture {
    pub m: usize,
    pub n: usize,
    pub slots: usize,
    pub layers: usize,
    pub control: String,
}

impl QrennArchitecture {
    pub fn new(m: usize, n: usize, slots: usize, layers: usize) -> Result<Self> {
        Self::with_control(m, n, slots, layers, "1".repeat(m))
    }

    pub fn with_control(
        m: usize,
        n: usize,
        slots: usize,
        layers: usize,
        control: String,
    ) -> Result<Self> {
        if m < 1 || n < 1 || slots < 1 || layers < 1 {
            return Err(Error::InvalidArgument(
                "architecture requires m, n, slots, layers >= 1".into(),
            ));
        }
        if control.len() != m || !control.chars().all(|c| c == '0' || c == '1') {
            return Err(Error::InvalidArgument(format!(
                "control string {control:?} must be {m} bits"
            )));
        }
        Ok(Self {
            m,
            n,
            slots,
            layers,
            control,
        })
    }

    /// Parameters per processing block: one R_Y and one R_Z angle per qubit
    /// per layer.
    pub fn block_params(&self) -> usize {
        2 * self.m * self.layers
    }

    /// Total rotation-angle count over slots+1 blocks.
    pub fn theta_len(&self) -> usize {
        (self.slots + 1) * self.block_params()
    }

    /// Basis index selected by the control bitstring (big-endian).
    pub fn control_index(&self) -> usize {
        self.control
            .chars()
            .fold(0usize, |acc, c| (acc << 1) | usize::from(c == '1'))
    }

    pub fn total_qubits(&self) -> usize {
        self.m + self.n
    }
}

/// Trainable parameters: rotation angles `theta` and optional per-slot data
/// weights `phi` (all ones when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<T: Scalar> {
    pub theta: Vec<T>,
    pub phi: Option<Vec<T>>,
}

impl<T: Scalar> ParameterVector<T> {
    pub fn new(arch: &QrennArchitecture, theta: Vec<T>, phi: Option<Vec<T>>) -> Result<Self> {
        if theta.len() != arch.theta_len() {
            return Err(Error::DimensionMismatch {
                expected: arch.theta_len(),
                got: theta.len(),
                context: "theta length",
            });
        }
        if let Some(ref p) = phi {
            if p.len() != arch.slots {
                return Err(Error::DimensionMismatch {
                    expected: arch.slots,
                    got: p.len(),
                    context: "phi length",
                });
            }
        }
        Ok(Self { theta, phi })
    }

    pub fn zeros(arch: &QrennArchitecture) -> Self {
        Self {
            theta: vec![T::zero(); arch.theta_len()],
            phi: None,
        }
    }

    /// Angles of block `t`, `t` in `0..=slots`.
    pub fn theta_block<'a>(&'a self, arch: &QrennArchitecture, t: usize) -> &'a [T] {
        let k = arch.block_params();
        &self.theta[t * k..(t + 1) * k]
    }

    /// Data weight of slot `t`; defaults to 1.
    pub fn phi_value(&self, t: usize) -> T {
        match &self.phi {
            Some(p) => p[t],
            None => T::one(),
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len() + self.phi.as_ref().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The per-slot data Hamiltonians `H_1(x) .. H_T(x)` on the embedding
/// register.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedData<T: Scalar> {
    generators: Vec<HermitianOperator<T>>,
}

impl<T: Scalar> EmbeddedData<T> {
    pub fn new(generators: Vec<HermitianOperator<T>>) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::InvalidArgument("embedded data has no slots".into()));
        }
        let dim = generators[0].dim();
        if generators.iter().any(|g| g.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: 0,
                context: "embedded generators must share one dimension",
            });
        }
        Ok(Self { generators })
    }

    /// One fixed generator repeated over every slot.
    pub fn repeated(h: HermitianOperator<T>, slots: usize) -> Result<Self> {
        Self::new(vec![h; slots])
    }

    pub fn generators(&self) -> &[HermitianOperator<T>] {
        &self.generators
    }

    pub fn slots(&self) -> usize {
        self.generators.len()
    }

    pub fn dim(&self) -> usize {
        self.generators[0].dim()
    }

    /// Pairwise commutativity within the relative Frobenius tolerance the
    /// joint-eigenspace analysis assumes.
    pub fn validate_commuting(&self) -> Result<()> {
        for (i, a) in self.generators.iter().enumerate() {
            for b in self.generators.iter().skip(i + 1) {
                let na = a.matrix().frobenius_norm();
                let nb = b.matrix().frobenius_norm();
                let scale = na * nb;
                if scale == T::zero() {
                    continue;
                }
                let comm = crate::numerics::commutator(a.matrix(), b.matrix())?;
                let norm = comm.frobenius_norm();
                if norm > T::lit(COMMUTATIVITY_REL_TOL) * scale {
                    return Err(Error::NonCommuting {
                        norm: (norm / scale).as_f64(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// `|c><c| (x) h` on the full register; its exponential is the controlled
/// evolution of `e^{ih}`.
pub fn control_embed_generator<T: Scalar>(
    h: &HermitianOperator<T>,
    m: usize,
    control: &str,
) -> Result<HermitianOperator<T>> {
    if control.len() != m || !control.chars().all(|c| c == '0' || c == '1') {
        return Err(Error::InvalidArgument(format!(
            "control string {control:?} must be {m} bits"
        )));
    }
    let c_idx = control
        .chars()
        .fold(0usize, |acc, c| (acc << 1) | usize::from(c == '1'));
    let dim_m = 1usize << m;
    let mut proj = ComplexMatrix::zeros(dim_m, dim_m);
    proj.set(c_idx, c_idx, cone());
    HermitianOperator::new(kron(&proj, h.matrix()))
}

pub(crate) fn ry<T: Scalar>(theta: T) -> ComplexMatrix<T> {
    let half = theta * T::lit(0.5);
    let (c, s) = (half.cos(), half.sin());
    ComplexMatrix::new(2, 2, vec![creal(c), creal(-s), creal(s), creal(c)]).expect("2x2")
}

pub(crate) fn rz<T: Scalar>(theta: T) -> ComplexMatrix<T> {
    let half = theta * T::lit(0.5);
    let mut m = ComplexMatrix::zeros(2, 2);
    m.set(0, 0, cis(-half));
    m.set(1, 1, cis(half));
    m
}

fn embed_single_qubit<T: Scalar>(gate: &ComplexMatrix<T>, m: usize, q: usize) -> ComplexMatrix<T> {
    let mut out = ComplexMatrix::identity(1);
    for k in 0..m {
        let factor = if k == q {
            gate.clone()
        } else {
            ComplexMatrix::identity(2)
        };
        out = kron(&out, &factor);
    }
    out
}

fn cz_pair<T: Scalar>(m: usize, q: usize) -> ComplexMatrix<T> {
    let dim = 1usize << m;
    let mut out = ComplexMatrix::identity(dim);
    let (b0, b1) = (m - 1 - q, m - 2 - q);
    for i in 0..dim {
        if (i >> b0) & 1 == 1 && (i >> b1) & 1 == 1 {
            out.set(i, i, -cone::<T>());
        }
    }
    out
}

/// Processing-block template on `m` qubits: per layer, R_Y on every qubit,
/// then R_Z on every qubit, then CZ on neighbouring pairs. Convention
/// `R_P(theta) = e^{-i theta P / 2}`; for `m = 1` the CZ stage is empty.
pub fn processing_block<T: Scalar>(
    m: usize,
    layers: usize,
    theta_block: &[T],
) -> Result<UnitaryOperator<T>> {
    if theta_block.len() != 2 * m * layers {
        return Err(Error::DimensionMismatch {
            expected: 2 * m * layers,
            got: theta_block.len(),
            context: "processing block parameter count",
        });
    }
    let dim = 1usize << m;
    let mut u = ComplexMatrix::identity(dim);
    for l in 0..layers {
        let base = l * 2 * m;
        for q in 0..m {
            u = embed_single_qubit(&ry(theta_block[base + q]), m, q).matmul(&u)?;
        }
        for q in 0..m {
            u = embed_single_qubit(&rz(theta_block[base + m + q]), m, q).matmul(&u)?;
        }
        for q in 0..m.saturating_sub(1) {
            u = cz_pair::<T>(m, q).matmul(&u)?;
        }
    }
    Ok(UnitaryOperator::new_unchecked(u))
}

/// Full controlled embedding `g(U) = |c><c| (x) U + (I - |c><c|) (x) I`.
pub fn control_embed_unitary<T: Scalar>(
    u: &UnitaryOperator<T>,
    m: usize,
    control_index: usize,
) -> UnitaryOperator<T> {
    let dim_n = u.dim();
    let dim = (1usize << m) * dim_n;
    let mut full = ComplexMatrix::identity(dim);
    let off = control_index * dim_n;
    for i in 0..dim_n {
        for j in 0..dim_n {
            full.set(off + i, off + j, u.matrix().get(i, j));
        }
    }
    UnitaryOperator::new_unchecked(full)
}

/// Dense reference forward pass: for each slot, the processing block then the
/// controlled data evolution; a trailing processing block closes the circuit.
pub fn forward<T: Scalar>(
    arch: &QrennArchitecture,
    params: &ParameterVector<T>,
    data: &EmbeddedData<T>,
    rho0: &QuantumState<T>,
) -> Result<QuantumState<T>> {
    if rho0.qubits() != arch.total_qubits() {
        return Err(Error::DimensionMismatch {
            expected: arch.total_qubits(),
            got: rho0.qubits(),
            context: "initial state register size",
        });
    }
    if data.slots() != arch.slots {
        return Err(Error::DimensionMismatch {
            expected: arch.slots,
            got: data.slots(),
            context: "one generator per slot",
        });
    }
    if data.dim() != 1usize << arch.n {
        return Err(Error::DimensionMismatch {
            expected: 1usize << arch.n,
            got: data.dim(),
            context: "generator dimension vs embedding register",
        });
    }
    ParameterVector::new(arch, params.theta.clone(), params.phi.clone())?;

    let id_n = ComplexMatrix::identity(1usize << arch.n);
    let c_idx = arch.control_index();
    let mut state = rho0.clone();
    for t in 0..arch.slots {
        let w = processing_block(arch.m, arch.layers, params.theta_block(arch, t))?;
        let w_full = UnitaryOperator::new_unchecked(kron(w.matrix(), &id_n));
        state = apply_unitary(&state, &w_full)?;

        let u_t = expm_i(&data.generators()[t], params.phi_value(t))?;
        let g = control_embed_unitary(&u_t, arch.m, c_idx);
        state = apply_unitary(&state, &g)?;
    }
    let w = processing_block(arch.m, arch.layers, params.theta_block(arch, arch.slots))?;
    let w_full = UnitaryOperator::new_unchecked(kron(w.matrix(), &id_n));
    apply_unitary(&state, &w_full)
}

/// Single-sample score `tr(rho M)`, clamped to `[0, 1]`.
pub fn trace_loss<T: Scalar>(
    state: &QuantumState<T>,
    povm_element: &HermitianOperator<T>,
) -> Result<T> {
    let v = expectation(state, povm_element)?;
    let tol = T::lit(LOSS_RANGE_TOL);
    if v < -tol || v > T::one() + tol {
        return Err(Error::InvalidArgument(format!(
            "expectation {} outside [0,1]; operator is not a POVM element",
            v.as_f64()
        )));
    }
    Ok(v.clamp(T::zero(), T::one()))
}

/// One labelled batch entry: per-slot generators, the class label, and the
/// labelling POVM element on the processing register.
#[derive(Debug, Clone)]
pub struct BatchSample<T: Scalar> {
    pub data: EmbeddedData<T>,
    pub label: u8,
    pub povm_m: HermitianOperator<T>,
}

/// Batch loss `1 - (1/Q) sum_q tr(U rho U^dag (M_{y_q} (x) I))`.
pub fn total_loss<T: Scalar>(
    arch: &QrennArchitecture,
    params: &ParameterVector<T>,
    batch: &[BatchSample<T>],
    rho0: &QuantumState<T>,
) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let id_n = ComplexMatrix::identity(1usize << arch.n);
    let mut acc = T::zero();
    for sample in batch {
        let out = forward(arch, params, &sample.data, rho0)?;
        let povm_full = HermitianOperator::new(kron(sample.povm_m.matrix(), &id_n))?;
        acc += trace_loss(&out, &povm_full)?;
    }
    Ok(T::one() - acc / T::from_usize(batch.len()).unwrap())
}

/// Observable `Z^(x)m (x) I` used by the prediction rule.
pub fn prediction_observable<T: Scalar>(m: usize, n: usize) -> HermitianOperator<T> {
    let zm = crate::numerics::pauli_word::<T>(&vec![Pauli::Z; m]);
    HermitianOperator::new(kron(&zm, &ComplexMatrix::identity(1usize << n)))
        .expect("Z word is Hermitian")
}

/// Label rule: 0 when the `Z^(x)m (x) I` expectation is negative, 1 otherwise.
pub fn predict<T: Scalar>(
    arch: &QrennArchitecture,
    params: &ParameterVector<T>,
    data: &EmbeddedData<T>,
    rho0: &QuantumState<T>,
) -> Result<u8> {
    let out = forward(arch, params, data, rho0)?;
    let obs = prediction_observable::<T>(arch.m, arch.n);
    let f = expectation(&out, &obs)?;
    Ok(u8::from(f >= T::zero()))
}

/// Fraction of matching labels.
pub fn accuracy(predicted: &[u8], truth: &[u8]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(Error::InvalidArgument(
            "accuracy needs equal-length nonempty label sequences".into(),
        ));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::pauli_word;
    use crate::qstate::{basis_state, plus_state, tensor, StateRepr};
    use crate::scalar::C;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    type Mx = ComplexMatrix<f64>;

    fn zgen() -> HermitianOperator<f64> {
        HermitianOperator::new(Pauli::Z.matrix()).unwrap()
    }

    #[test]
    fn control_embed_generator_block_structure() {
        let g = control_embed_generator(&zgen(), 1, "1").unwrap();
        assert!(g.matrix().max_abs_diff(&Mx::diag_real(&[0.0, 0.0, 1.0, -1.0])) == 0.0);

        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let a = Mx::from_fn(2, 2, |_, _| C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let h = HermitianOperator::new(a.add(&a.adjoint()).unwrap().scale_real(0.5)).unwrap();
        let g2 = control_embed_generator(&h, 2, "11").unwrap();
        for i in 0..8 {
            for j in 0..8 {
                if i < 6 || j < 6 {
                    assert!(g2.matrix().get(i, j).norm() == 0.0);
                }
            }
        }

        assert!(control_embed_generator(&zgen(), 2, "1").is_err());
    }

    #[test]
    fn control_embed_exponential_matches_controlled_unitary() {
        // e^{i |c><c| (x) H} leaves |0_m> (x) |psi> unchanged
        let g = control_embed_generator(&zgen(), 1, "1").unwrap();
        let u = expm_i(&g, 1.0).unwrap();
        let psi0 = tensor(&basis_state::<f64>(1, "0").unwrap(), &plus_state::<f64>(1));
        let out = apply_unitary(&psi0, &u).unwrap();
        assert!(out.density().max_abs_diff(&psi0.density()) <= 1e-12);

        // and equals g(e^{iH}) built block-wise
        let un = expm_i(&zgen(), 1.0).unwrap();
        let g_direct = control_embed_unitary(&un, 1, 1);
        assert!(u.matrix().max_abs_diff(g_direct.matrix()) <= 1e-12);
    }

    #[test]
    fn processing_block_cases() {
        let id = processing_block::<f64>(1, 1, &[0.0, 0.0]).unwrap();
        assert!(id.matrix().max_abs_diff(&Mx::identity(2)) <= 1e-15);

        // R_Y(pi)|0> = |1> up to global phase
        let u = processing_block::<f64>(1, 1, &[std::f64::consts::PI, 0.0]).unwrap();
        let out = u
            .matrix()
            .matvec(&[C::new(1.0, 0.0), C::new(0.0, 0.0)])
            .unwrap();
        assert!(out[0].norm() <= 1e-12);
        assert!((out[1].norm() - 1.0).abs() <= 1e-12);

        // zero angles at m=2 leave only the CZ stage
        let u2 = processing_block::<f64>(2, 1, &[0.0; 4]).unwrap();
        assert!(u2
            .matrix()
            .max_abs_diff(&Mx::diag_real(&[1.0, 1.0, 1.0, -1.0]))
            <= 1e-15);

        assert!(processing_block::<f64>(1, 1, &[0.0]).is_err());
    }

    #[test]
    fn forward_identity_cases() {
        let arch = QrennArchitecture::new(1, 1, 2, 1).unwrap();
        let data = EmbeddedData::repeated(zgen(), 2).unwrap();
        let rho0 = tensor(&basis_state::<f64>(1, "0").unwrap(), &plus_state::<f64>(1));

        // theta = 0, phi = 0: identity circuit
        let params =
            ParameterVector::new(&arch, vec![0.0; arch.theta_len()], Some(vec![0.0, 0.0]))
                .unwrap();
        let out = forward(&arch, &params, &data, &rho0).unwrap();
        assert!(out.density().max_abs_diff(&rho0.density()) <= 1e-12);

        // control never fires from |0_m>
        let params2 = ParameterVector::new(&arch, vec![0.0; arch.theta_len()], None).unwrap();
        let out2 = forward(&arch, &params2, &data, &rho0).unwrap();
        assert!(out2.density().max_abs_diff(&rho0.density()) <= 1e-12);
    }

    #[test]
    fn forward_controlled_not_example() {
        // H = (pi/2)(I - X) embeds a controlled-X; |1> (x) |0> -> |1> (x) |1>
        let arch = QrennArchitecture::new(1, 1, 1, 1).unwrap();
        let hx = Mx::identity(2)
            .sub(&Pauli::X.matrix())
            .unwrap()
            .scale_real(std::f64::consts::FRAC_PI_2);
        let data = EmbeddedData::repeated(HermitianOperator::new(hx).unwrap(), 1).unwrap();
        let rho0 = tensor(
            &basis_state::<f64>(1, "1").unwrap(),
            &basis_state::<f64>(1, "0").unwrap(),
        );
        let params =
            ParameterVector::new(&arch, vec![0.0; arch.theta_len()], Some(vec![1.0])).unwrap();
        let out = forward(&arch, &params, &data, &rho0).unwrap();
        let expect = tensor(
            &basis_state::<f64>(1, "1").unwrap(),
            &basis_state::<f64>(1, "1").unwrap(),
        );
        assert!(out.density().max_abs_diff(&expect.density()) <= 1e-12);
    }

    #[test]
    fn forward_preserves_norm() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let arch = QrennArchitecture::new(2, 2, 3, 2).unwrap();
        let mut gens = Vec::new();
        for _ in 0..3 {
            let a = Mx::from_fn(4, 4, |_, _| {
                C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            gens.push(
                HermitianOperator::new(a.add(&a.adjoint()).unwrap().scale_real(0.5)).unwrap(),
            );
        }
        let data = EmbeddedData::new(gens).unwrap();
        let rho0 = tensor(&basis_state::<f64>(2, "00").unwrap(), &plus_state::<f64>(2));
        let theta = (0..arch.theta_len())
            .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
            .collect();
        let phi = Some((0..arch.slots).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect());
        let params = ParameterVector::new(&arch, theta, phi).unwrap();
        let out = forward(&arch, &params, &data, &rho0).unwrap();
        match out.repr() {
            StateRepr::StateVector(v) => {
                let norm: f64 = v.iter().map(|a| a.norm_sqr()).sum();
                assert!((norm - 1.0).abs() <= 1e-9);
            }
            _ => panic!("pure input stays pure"),
        }
    }

    #[test]
    fn slot_composability() {
        // T=2 equals two T=1 passes with matching slices (m=1 so the zero
        // trailing block is the identity)
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let arch2 = QrennArchitecture::new(1, 2, 2, 2).unwrap();
        let arch1 = QrennArchitecture::new(1, 2, 1, 2).unwrap();
        let k = arch2.block_params();

        let a = Mx::from_fn(4, 4, |_, _| C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let h = HermitianOperator::new(a.add(&a.adjoint()).unwrap().scale_real(0.5)).unwrap();
        let data2 = EmbeddedData::repeated(h.clone(), 2).unwrap();
        let data1 = EmbeddedData::repeated(h, 1).unwrap();

        let mut theta: Vec<f64> = (0..arch2.theta_len())
            .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
            .collect();
        for v in theta.iter_mut().skip(2 * k) {
            *v = 0.0;
        }
        let params2 = ParameterVector::new(&arch2, theta.clone(), None).unwrap();

        let rho0 = tensor(&basis_state::<f64>(1, "0").unwrap(), &plus_state::<f64>(2));
        let full = forward(&arch2, &params2, &data2, &rho0).unwrap();

        let p_first =
            ParameterVector::new(&arch1, [&theta[0..k], &vec![0.0; k][..]].concat(), None)
                .unwrap();
        let mid = forward(&arch1, &p_first, &data1, &rho0).unwrap();
        let p_second =
            ParameterVector::new(&arch1, [&theta[k..2 * k], &vec![0.0; k][..]].concat(), None)
                .unwrap();
        let two_pass = forward(&arch1, &p_second, &data1, &mid).unwrap();

        assert!(full.density().max_abs_diff(&two_pass.density()) <= 1e-10);
    }

    #[test]
    fn trace_loss_cases() {
        let m1 = HermitianOperator::new(Mx::diag_real(&[1.0, 0.0])).unwrap();
        let s = basis_state::<f64>(1, "0").unwrap();
        assert!((trace_loss(&s, &m1).unwrap() - 1.0).abs() <= 1e-12);

        let s1 = basis_state::<f64>(1, "1").unwrap();
        assert!(trace_loss(&s1, &m1).unwrap() <= 1e-12);

        let id = HermitianOperator::new(Mx::identity(2)).unwrap();
        assert!((trace_loss(&s1, &id).unwrap() - 1.0).abs() <= 1e-12);

        let bad = HermitianOperator::new(Mx::diag_real(&[2.0, 0.0])).unwrap();
        assert!(trace_loss(&s, &bad).is_err());
    }

    #[test]
    fn trace_loss_global_phase_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let m = HermitianOperator::new(Mx::diag_real(&[1.0, 0.0, 1.0, 0.0])).unwrap();
        for _ in 0..5 {
            let raw: Vec<C<f64>> = (0..4)
                .map(|_| C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let norm: f64 = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            let amps: Vec<C<f64>> = raw.iter().map(|a| a / norm).collect();
            let s = QuantumState::from_amplitudes(2, amps.clone()).unwrap();
            let phase = C::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU);
            let s2 = QuantumState::from_amplitudes(2, amps.iter().map(|a| a * phase).collect())
                .unwrap();
            let l1 = trace_loss(&s, &m).unwrap();
            let l2 = trace_loss(&s2, &m).unwrap();
            assert!((l1 - l2).abs() <= 1e-12);
        }
    }

    #[test]
    fn povm_scores_sum_to_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(25);
        let zz = pauli_word::<f64>(&[Pauli::Z, Pauli::Z]);
        let m0 =
            HermitianOperator::new(Mx::identity(4).sub(&zz).unwrap().scale_real(0.5)).unwrap();
        let m1 =
            HermitianOperator::new(Mx::identity(4).add(&zz).unwrap().scale_real(0.5)).unwrap();
        for _ in 0..5 {
            let raw: Vec<C<f64>> = (0..4)
                .map(|_| C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let norm: f64 = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            let s =
                QuantumState::from_amplitudes(2, raw.iter().map(|a| a / norm).collect()).unwrap();
            let total = trace_loss(&s, &m0).unwrap() + trace_loss(&s, &m1).unwrap();
            assert!((total - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn total_loss_cases() {
        let arch = QrennArchitecture::new(1, 1, 1, 1).unwrap();
        let rho0 = tensor(
            &basis_state::<f64>(1, "0").unwrap(),
            &basis_state::<f64>(1, "0").unwrap(),
        );
        let params = ParameterVector::zeros(&arch);
        let m_hit = HermitianOperator::new(Mx::diag_real(&[1.0, 0.0])).unwrap();
        let m_miss = HermitianOperator::new(Mx::diag_real(&[0.0, 1.0])).unwrap();
        let sample = |povm: &HermitianOperator<f64>| BatchSample {
            data: EmbeddedData::repeated(zgen(), 1).unwrap(),
            label: 1,
            povm_m: povm.clone(),
        };

        let loss = total_loss(&arch, &params, &[sample(&m_hit)], &rho0).unwrap();
        assert!(loss.abs() <= 1e-12);

        let loss1 = total_loss(&arch, &params, &[sample(&m_miss)], &rho0).unwrap();
        assert!((loss1 - 1.0).abs() <= 1e-12);

        let loss_half =
            total_loss(&arch, &params, &[sample(&m_hit), sample(&m_miss)], &rho0).unwrap();
        assert!((loss_half - 0.5).abs() <= 1e-12);

        assert!(total_loss(&arch, &params, &[], &rho0).is_err());
    }

    #[test]
    fn predict_sign_rule() {
        let arch = QrennArchitecture::new(1, 1, 1, 1).unwrap();
        let rho0 = tensor(
            &basis_state::<f64>(1, "0").unwrap(),
            &basis_state::<f64>(1, "0").unwrap(),
        );
        let data = EmbeddedData::repeated(zgen(), 1).unwrap();
        let params = ParameterVector::zeros(&arch);
        assert_eq!(predict(&arch, &params, &data, &rho0).unwrap(), 1);

        let mut theta = vec![0.0; arch.theta_len()];
        theta[0] = std::f64::consts::PI;
        let params_flip = ParameterVector::new(&arch, theta, None).unwrap();
        assert_eq!(predict(&arch, &params_flip, &data, &rho0).unwrap(), 0);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 1], &[1, 0, 0]).unwrap(), 0.0);
        assert!((accuracy(&[0, 1, 1], &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() <= 1e-15);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn embedded_data_commutativity_check() {
        let x = HermitianOperator::new(Pauli::X.matrix()).unwrap();
        let commuting = EmbeddedData::new(vec![zgen(), zgen()]).unwrap();
        assert!(commuting.validate_commuting().is_ok());
        let clash = EmbeddedData::new(vec![zgen(), x]).unwrap();
        assert!(clash.validate_commuting().is_err());
    }

    #[test]
    fn template_rotation_matches_generator_exponential() {
        let theta = 0.7f64;
        let u = processing_block::<f64>(1, 1, &[theta, 0.0]).unwrap();
        let gen = HermitianOperator::new(Pauli::Y.matrix().scale_real(-0.5)).unwrap();
        let direct = expm_i(&gen, theta).unwrap();
        assert!(u.matrix().max_abs_diff(direct.matrix()) <= 1e-12);
    }
}
