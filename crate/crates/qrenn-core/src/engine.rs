//! Optimized circuit evaluation used by training and sampling harnesses.
//!
//! A circuit is compiled once per data sample: every slot generator is
//! eigendecomposed so controlled evolutions become cached phase
//! multiplications, in a shared basis when the generators allow it. Probe
//! states that are diagonal in that basis (the maximally mixed and noisy
//! probes) split into independent processing-register runs instead of a full
//! density simulation. Results are cross-checked against [`crate::model`]'s
//! dense reference in the tests.

use crate::error::{Error, Result};
use crate::model::{EmbeddedData, ParameterVector, QrennArchitecture};
use crate::numerics::{eigh, ComplexMatrix, HermitianOperator, UnitaryOperator};
use crate::scalar::{cis, cnorm_sqr, cone, creal, czero, Scalar, C};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Probe state of the data embedding register; the processing register is
/// fixed to |0..0> as in every experiment here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeSpec {
    /// |0>^n
    Zeros,
    /// |+>^n
    Plus,
    /// |->^n
    Minus,
    /// p |+..+><+..+| + (1-p) I / 2^n
    MixedPlus { p: f64 },
    /// I / 2^n
    MaximallyMixed,
}

impl ProbeSpec {
    /// Materialize the probe as a state on `n` qubits.
    pub fn state<T: Scalar>(&self, n: usize) -> Result<crate::qstate::QuantumState<T>> {
        use crate::qstate;
        Ok(match self {
            ProbeSpec::Zeros => qstate::basis_state(n, &"0".repeat(n))?,
            ProbeSpec::Plus => qstate::plus_state(n),
            ProbeSpec::Minus => qstate::minus_state(n),
            ProbeSpec::MixedPlus { p } => qstate::mixed_probe(T::lit(*p), n)?,
            ProbeSpec::MaximallyMixed => qstate::mixed_probe(T::zero(), n)?,
        })
    }
}

#[derive(Debug, Clone)]
enum SlotOp<T: Scalar> {
    /// Controlled evolution diagonal in the circuit's shared data basis.
    SharedEigen { eigvals: Vec<T> },
    /// Controlled evolution with its own eigenbasis on the data register.
    OwnEigen {
        basis: ComplexMatrix<T>,
        eigvals: Vec<T>,
    },
    /// Arbitrary fixed full-register unitary (noise-perturbed embeddings).
    /// The slot weight phi is baked in; phi training is rejected.
    Fixed { unitary: ComplexMatrix<T> },
}

/// A circuit specialized to one data sample, with all spectral data cached.
#[derive(Debug, Clone)]
pub struct CompiledCircuit<T: Scalar> {
    pub arch: QrennArchitecture,
    /// Shared data-register eigenbasis, when one diagonalizes every slot.
    /// `None` inside `shared` mode means the computational basis.
    shared_basis: Option<ComplexMatrix<T>>,
    is_shared: bool,
    slots: Vec<SlotOp<T>>,
}

const DIAG_TOL: f64 = 1e-13;

fn is_diagonal<T: Scalar>(m: &ComplexMatrix<T>) -> bool {
    let scale = m.max_abs_entry().max(T::one());
    let tol = T::lit(DIAG_TOL) * scale;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if i != j && crate::scalar::cabs(m.get(i, j)) > tol {
                return false;
            }
        }
    }
    true
}

impl<T: Scalar> CompiledCircuit<T> {
    /// Compile the ideal circuit for one data sample.
    pub fn compile(arch: &QrennArchitecture, data: &EmbeddedData<T>) -> Result<Self> {
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
        let gens = data.generators();

        if gens.iter().all(|g| is_diagonal(g.matrix())) {
            let slot_vals = gens
                .iter()
                .map(|g| (0..g.dim()).map(|i| g.matrix().get(i, i).re).collect())
                .collect::<Vec<Vec<T>>>();
            return Ok(Self {
                arch: arch.clone(),
                shared_basis: None,
                is_shared: true,
                slots: slot_vals
                    .into_iter()
                    .map(|eigvals| SlotOp::SharedEigen { eigvals })
                    .collect(),
            });
        }

        let all_equal = gens[1..]
            .iter()
            .all(|g| g.matrix().max_abs_diff(gens[0].matrix()) == T::zero());
        if all_equal {
            let eig = eigh(&gens[0])?;
            let slots = (0..arch.slots)
                .map(|_| SlotOp::SharedEigen {
                    eigvals: eig.eigenvalues.clone(),
                })
                .collect();
            return Ok(Self {
                arch: arch.clone(),
                shared_basis: Some(eig.eigenvectors.into_matrix()),
                is_shared: true,
                slots,
            });
        }

        let mut slots = Vec::with_capacity(gens.len());
        for g in gens {
            let eig = eigh(g)?;
            slots.push(SlotOp::OwnEigen {
                basis: eig.eigenvectors.into_matrix(),
                eigvals: eig.eigenvalues,
            });
        }
        Ok(Self {
            arch: arch.clone(),
            shared_basis: None,
            is_shared: false,
            slots,
        })
    }

    /// Compile with explicit full-register slot unitaries (noisy embeddings).
    pub fn compile_fixed_slots(
        arch: &QrennArchitecture,
        unitaries: Vec<UnitaryOperator<T>>,
    ) -> Result<Self> {
        if unitaries.len() != arch.slots {
            return Err(Error::DimensionMismatch {
                expected: arch.slots,
                got: unitaries.len(),
                context: "one slot unitary per slot",
            });
        }
        let dim = 1usize << arch.total_qubits();
        if unitaries.iter().any(|u| u.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: 0,
                context: "slot unitary register size",
            });
        }
        Ok(Self {
            arch: arch.clone(),
            shared_basis: None,
            is_shared: false,
            slots: unitaries
                .into_iter()
                .map(|u| SlotOp::Fixed {
                    unitary: u.into_matrix(),
                })
                .collect(),
        })
    }

    fn supports_phi(&self) -> bool {
        !self
            .slots
            .iter()
            .any(|s| matches!(s, SlotOp::Fixed { .. }))
    }

    fn supports_ensemble(&self) -> bool {
        self.is_shared
    }
}

#[derive(Debug, Clone)]
enum PreparedInput<T: Scalar> {
    /// Full-register pure state, already in circuit coordinates.
    Pure(Vec<C<T>>),
    /// Data register diagonal in the shared basis with these weights;
    /// processing register in |0_m>.
    Ensemble(Vec<T>),
    /// Convex mixture of prepared inputs.
    Mix(Vec<(T, PreparedInput<T>)>),
    /// Full density matrix in circuit coordinates.
    Density(ComplexMatrix<T>),
}

/// A ready-to-run loss term: compiled circuit, prepared probe, and a local
/// observable on the processing register.
#[derive(Debug, Clone)]
pub struct Evaluator<T: Scalar> {
    circuit: Arc<CompiledCircuit<T>>,
    input: PreparedInput<T>,
    observable: HermitianOperator<T>,
    obs_diag: Option<Vec<T>>,
}

impl<T: Scalar> Evaluator<T> {
    /// Prepare `|0_m> (x) probe` against `circuit`, measuring `observable_m`
    /// (an operator on the processing register alone).
    pub fn new(
        circuit: Arc<CompiledCircuit<T>>,
        probe: &ProbeSpec,
        observable_m: HermitianOperator<T>,
    ) -> Result<Self> {
        if observable_m.dim() != 1usize << circuit.arch.m {
            return Err(Error::DimensionMismatch {
                expected: 1usize << circuit.arch.m,
                got: observable_m.dim(),
                context: "observable acts on the processing register",
            });
        }
        let input = prepare_input(&circuit, probe)?;
        let obs_diag = is_diagonal(observable_m.matrix()).then(|| {
            (0..observable_m.dim())
                .map(|i| observable_m.matrix().get(i, i).re)
                .collect()
        });
        Ok(Self {
            circuit,
            input,
            observable: observable_m,
            obs_diag,
        })
    }

    pub fn arch(&self) -> &QrennArchitecture {
        &self.circuit.arch
    }

    /// Expectation of the observable after running the circuit at `params`.
    pub fn value(&self, params: &ParameterVector<T>) -> Result<T> {
        if params.phi.is_some() && !self.circuit.supports_phi() {
            return Err(Error::InvalidArgument(
                "phi weights cannot vary on fixed (noise-perturbed) slots".into(),
            ));
        }
        self.eval_input(&self.input, params)
    }

    fn eval_input(&self, input: &PreparedInput<T>, params: &ParameterVector<T>) -> Result<T> {
        match input {
            PreparedInput::Pure(psi0) => {
                let mut psi = psi0.clone();
                run_pure(&self.circuit, params, &mut psi)?;
                Ok(self.expect_local(&psi))
            }
            PreparedInput::Ensemble(weights) => {
                let mut acc = T::zero();
                for (e, &w) in weights.iter().enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    acc += w * self.run_processing_branch(params, e)?;
                }
                Ok(acc)
            }
            PreparedInput::Mix(parts) => {
                let mut acc = T::zero();
                for (w, part) in parts {
                    acc += *w * self.eval_input(part, params)?;
                }
                Ok(acc)
            }
            PreparedInput::Density(rho0) => {
                let rho = run_density(&self.circuit, params, rho0)?;
                Ok(self.expect_local_density(&rho))
            }
        }
    }

    /// Evolve the processing register alone, with the data register frozen in
    /// shared-basis vector `e`.
    fn run_processing_branch(&self, params: &ParameterVector<T>, e: usize) -> Result<T> {
        let arch = &self.circuit.arch;
        let dim_m = 1usize << arch.m;
        let c_idx = arch.control_index();
        let mut psi = vec![czero::<T>(); dim_m];
        psi[0] = cone();
        for (t, slot) in self.circuit.slots.iter().enumerate() {
            apply_block(&mut psi, arch.m, arch.layers, params.theta_block(arch, t), 0);
            let lambda = match slot {
                SlotOp::SharedEigen { eigvals } => eigvals[e],
                _ => unreachable!("ensemble input requires shared mode"),
            };
            psi[c_idx] *= cis(params.phi_value(t) * lambda);
        }
        apply_block(
            &mut psi,
            arch.m,
            arch.layers,
            params.theta_block(arch, arch.slots),
            0,
        );
        Ok(match &self.obs_diag {
            Some(d) => psi
                .iter()
                .zip(d.iter())
                .map(|(a, &o)| o * cnorm_sqr(*a))
                .sum(),
            None => {
                let mut acc = czero::<T>();
                for p in 0..dim_m {
                    for p2 in 0..dim_m {
                        acc += psi[p].conj() * self.observable.matrix().get(p, p2) * psi[p2];
                    }
                }
                acc.re
            }
        })
    }

    fn expect_local(&self, psi: &[C<T>]) -> T {
        let arch = &self.circuit.arch;
        let dim_n = 1usize << arch.n;
        let dim_m = 1usize << arch.m;
        match &self.obs_diag {
            Some(d) => {
                let mut acc = T::zero();
                for p in 0..dim_m {
                    let block = &psi[p * dim_n..(p + 1) * dim_n];
                    let w: T = block.iter().map(|a| cnorm_sqr(*a)).sum();
                    acc += d[p] * w;
                }
                acc
            }
            None => {
                let mut acc = czero::<T>();
                for p in 0..dim_m {
                    for p2 in 0..dim_m {
                        let o = self.observable.matrix().get(p, p2);
                        if o == czero() {
                            continue;
                        }
                        let mut inner = czero::<T>();
                        for e in 0..dim_n {
                            inner += psi[p * dim_n + e].conj() * psi[p2 * dim_n + e];
                        }
                        acc += o * inner;
                    }
                }
                acc.re
            }
        }
    }

    fn expect_local_density(&self, rho: &ComplexMatrix<T>) -> T {
        let arch = &self.circuit.arch;
        let dim_n = 1usize << arch.n;
        let dim_m = 1usize << arch.m;
        // tr(rho (O (x) I)) = sum_{p,p',e} rho[(p,e),(p',e)] O[p',p]
        let mut acc = czero::<T>();
        for p in 0..dim_m {
            for p2 in 0..dim_m {
                let o = self.observable.matrix().get(p2, p);
                if o == czero() {
                    continue;
                }
                let mut diag = czero::<T>();
                for e in 0..dim_n {
                    diag += rho.get(p * dim_n + e, p2 * dim_n + e);
                }
                acc += diag * o;
            }
        }
        acc.re
    }
}

fn prepare_input<T: Scalar>(
    circuit: &CompiledCircuit<T>,
    probe: &ProbeSpec,
) -> Result<PreparedInput<T>> {
    let arch = &circuit.arch;
    let dim_n = 1usize << arch.n;
    match probe {
        ProbeSpec::Zeros | ProbeSpec::Plus | ProbeSpec::Minus => {
            let psi_n = pure_probe_amplitudes::<T>(probe, arch.n);
            Ok(PreparedInput::Pure(lift_pure(circuit, &psi_n)))
        }
        ProbeSpec::MaximallyMixed => {
            if circuit.supports_ensemble() {
                Ok(PreparedInput::Ensemble(vec![
                    T::one() / T::from_usize(dim_n).unwrap();
                    dim_n
                ]))
            } else {
                Ok(PreparedInput::Density(density_probe(circuit, probe)?))
            }
        }
        ProbeSpec::MixedPlus { p } => {
            let p = T::lit(*p);
            if p < T::zero() || p > T::one() {
                return Err(Error::InvalidArgument(
                    "mixture weight outside [0, 1]".into(),
                ));
            }
            if circuit.supports_ensemble() {
                let plus = pure_probe_amplitudes::<T>(&ProbeSpec::Plus, arch.n);
                Ok(PreparedInput::Mix(vec![
                    (p, PreparedInput::Pure(lift_pure(circuit, &plus))),
                    (
                        T::one() - p,
                        PreparedInput::Ensemble(vec![
                            T::one() / T::from_usize(dim_n).unwrap();
                            dim_n
                        ]),
                    ),
                ]))
            } else {
                Ok(PreparedInput::Density(density_probe(circuit, probe)?))
            }
        }
    }
}

fn pure_probe_amplitudes<T: Scalar>(probe: &ProbeSpec, n: usize) -> Vec<C<T>> {
    let dim = 1usize << n;
    match probe {
        ProbeSpec::Zeros => {
            let mut v = vec![czero::<T>(); dim];
            v[0] = cone();
            v
        }
        ProbeSpec::Plus => {
            let a = creal(T::one() / T::from_usize(dim).unwrap().sqrt());
            vec![a; dim]
        }
        ProbeSpec::Minus => {
            let a = T::one() / T::from_usize(dim).unwrap().sqrt();
            (0..dim)
                .map(|k| {
                    if (k.count_ones() & 1) == 1 {
                        creal(-a)
                    } else {
                        creal(a)
                    }
                })
                .collect()
        }
        _ => unreachable!("pure amplitudes of a mixed probe"),
    }
}

/// |0_m> (x) psi_n in circuit coordinates.
fn lift_pure<T: Scalar>(circuit: &CompiledCircuit<T>, psi_n: &[C<T>]) -> Vec<C<T>> {
    let arch = &circuit.arch;
    let dim_n = 1usize << arch.n;
    let rotated = match &circuit.shared_basis {
        Some(v) => {
            // V^dag psi_n
            let mut out = vec![czero::<T>(); dim_n];
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = czero::<T>();
                for (i, amp) in psi_n.iter().enumerate() {
                    acc += v.get(i, j).conj() * amp;
                }
                *o = acc;
            }
            out
        }
        None => psi_n.to_vec(),
    };
    let dim = (1usize << arch.m) * dim_n;
    let mut full = vec![czero::<T>(); dim];
    full[..dim_n].copy_from_slice(&rotated);
    full
}

/// rho_m (x) rho_n (with rho_m = |0_m><0_m|) rotated into circuit coordinates.
fn density_probe<T: Scalar>(
    circuit: &CompiledCircuit<T>,
    probe: &ProbeSpec,
) -> Result<ComplexMatrix<T>> {
    let arch = &circuit.arch;
    let rho_n = probe.state::<T>(arch.n)?.density();
    let rho_n = match &circuit.shared_basis {
        Some(v) => v.adjoint().matmul(&rho_n)?.matmul(v)?,
        None => rho_n,
    };
    let dim_m = 1usize << arch.m;
    let mut proj = ComplexMatrix::zeros(dim_m, dim_m);
    proj.set(0, 0, cone());
    Ok(crate::numerics::kron(&proj, &rho_n))
}

// ---------------------------------------------------------------------------
// state-vector kernels

#[inline]
fn apply_1q<T: Scalar>(
    psi: &mut [C<T>],
    total: usize,
    qubit: usize,
    g: [C<T>; 4],
) {
    let stride = 1usize << (total - 1 - qubit);
    let step = stride << 1;
    let len = psi.len();
    let mut base = 0;
    while base < len {
        for i in base..base + stride {
            let a = psi[i];
            let b = psi[i + stride];
            psi[i] = g[0] * a + g[1] * b;
            psi[i + stride] = g[2] * a + g[3] * b;
        }
        base += step;
    }
}

#[inline]
fn apply_rz_1q<T: Scalar>(psi: &mut [C<T>], total: usize, qubit: usize, half: T) {
    let (d0, d1) = (cis(-half), cis(half));
    let stride = 1usize << (total - 1 - qubit);
    let step = stride << 1;
    let len = psi.len();
    let mut base = 0;
    while base < len {
        for i in base..base + stride {
            psi[i] *= d0;
            psi[i + stride] *= d1;
        }
        base += step;
    }
}

#[inline]
fn apply_cz<T: Scalar>(psi: &mut [C<T>], total: usize, q1: usize, q2: usize) {
    let b1 = total - 1 - q1;
    let b2 = total - 1 - q2;
    for (idx, amp) in psi.iter_mut().enumerate() {
        if (idx >> b1) & 1 == 1 && (idx >> b2) & 1 == 1 {
            *amp = -*amp;
        }
    }
}

/// Apply one processing block to qubits `offset..offset+m` of a state on
/// `offset + m + rest` qubits (the circuits always use `offset = 0`; the
/// parameter keeps the kernel honest about indexing).
fn apply_block<T: Scalar>(psi: &mut [C<T>], m: usize, layers: usize, theta: &[T], offset: usize) {
    let total = (psi.len().trailing_zeros()) as usize;
    debug_assert_eq!(1usize << total, psi.len());
    for l in 0..layers {
        let base = l * 2 * m;
        for q in 0..m {
            let half = theta[base + q] * T::lit(0.5);
            let (c, s) = (half.cos(), half.sin());
            apply_1q(
                psi,
                total,
                offset + q,
                [creal(c), creal(-s), creal(s), creal(c)],
            );
        }
        for q in 0..m {
            apply_rz_1q(psi, total, offset + q, theta[base + m + q] * T::lit(0.5));
        }
        for q in 0..m.saturating_sub(1) {
            apply_cz(psi, total, offset + q, offset + q + 1);
        }
    }
}

fn apply_slot_pure<T: Scalar>(
    circuit: &CompiledCircuit<T>,
    slot: &SlotOp<T>,
    phi: T,
    psi: &mut [C<T>],
) -> Result<()> {
    let arch = &circuit.arch;
    let dim_n = 1usize << arch.n;
    let c_idx = arch.control_index();
    match slot {
        SlotOp::SharedEigen { eigvals } => {
            let block = &mut psi[c_idx * dim_n..(c_idx + 1) * dim_n];
            for (amp, &l) in block.iter_mut().zip(eigvals.iter()) {
                *amp *= cis(phi * l);
            }
        }
        SlotOp::OwnEigen { basis, eigvals } => {
            // block <- V e^{i phi Lambda} V^dag block
            let block = &mut psi[c_idx * dim_n..(c_idx + 1) * dim_n];
            let mut tmp = vec![czero::<T>(); dim_n];
            for (j, t) in tmp.iter_mut().enumerate() {
                let mut acc = czero::<T>();
                for (i, b) in block.iter().enumerate() {
                    acc += basis.get(i, j).conj() * b;
                }
                *t = acc * cis(phi * eigvals[j]);
            }
            for (i, b) in block.iter_mut().enumerate() {
                let mut acc = czero::<T>();
                for (j, t) in tmp.iter().enumerate() {
                    acc += basis.get(i, j) * t;
                }
                *b = acc;
            }
        }
        SlotOp::Fixed { unitary } => {
            let out = unitary.matvec(psi)?;
            psi.copy_from_slice(&out);
        }
    }
    Ok(())
}

fn run_pure<T: Scalar>(
    circuit: &CompiledCircuit<T>,
    params: &ParameterVector<T>,
    psi: &mut [C<T>],
) -> Result<()> {
    let arch = &circuit.arch;
    for (t, slot) in circuit.slots.iter().enumerate() {
        apply_block(psi, arch.m, arch.layers, params.theta_block(arch, t), 0);
        apply_slot_pure(circuit, slot, params.phi_value(t), psi)?;
    }
    apply_block(
        psi,
        arch.m,
        arch.layers,
        params.theta_block(arch, arch.slots),
        0,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// density fallback (small instances and validation only)

fn slot_unitary_full<T: Scalar>(
    circuit: &CompiledCircuit<T>,
    slot: &SlotOp<T>,
    phi: T,
) -> Result<ComplexMatrix<T>> {
    let arch = &circuit.arch;
    let dim_n = 1usize << arch.n;
    match slot {
        SlotOp::SharedEigen { eigvals } => {
            let mut un = ComplexMatrix::zeros(dim_n, dim_n);
            for (i, &l) in eigvals.iter().enumerate() {
                un.set(i, i, cis(phi * l));
            }
            Ok(embed_controlled(arch, &un))
        }
        SlotOp::OwnEigen { basis, eigvals } => {
            let mut scaled = basis.clone();
            for (j, &l) in eigvals.iter().enumerate() {
                let ph = cis(phi * l);
                for i in 0..dim_n {
                    let v = scaled.get(i, j) * ph;
                    scaled.set(i, j, v);
                }
            }
            let un = scaled.matmul(&basis.adjoint())?;
            Ok(embed_controlled(arch, &un))
        }
        SlotOp::Fixed { unitary } => Ok(unitary.clone()),
    }
}

fn embed_controlled<T: Scalar>(
    arch: &QrennArchitecture,
    un: &ComplexMatrix<T>,
) -> ComplexMatrix<T> {
    let dim_n = un.rows();
    let dim = (1usize << arch.m) * dim_n;
    let mut full = ComplexMatrix::identity(dim);
    let off = arch.control_index() * dim_n;
    for i in 0..dim_n {
        for j in 0..dim_n {
            full.set(off + i, off + j, un.get(i, j));
        }
    }
    full
}

fn run_density<T: Scalar>(
    circuit: &CompiledCircuit<T>,
    params: &ParameterVector<T>,
    rho0: &ComplexMatrix<T>,
) -> Result<ComplexMatrix<T>> {
    let arch = &circuit.arch;
    let id_n = ComplexMatrix::identity(1usize << arch.n);
    let mut rho = rho0.clone();
    for (t, slot) in circuit.slots.iter().enumerate() {
        let w = crate::model::processing_block(arch.m, arch.layers, params.theta_block(arch, t))?;
        let w_full = crate::numerics::kron(w.matrix(), &id_n);
        rho = w_full.matmul(&rho)?.matmul(&w_full.adjoint())?;
        let u = slot_unitary_full(circuit, slot, params.phi_value(t))?;
        rho = u.matmul(&rho)?.matmul(&u.adjoint())?;
    }
    let w = crate::model::processing_block(
        arch.m,
        arch.layers,
        params.theta_block(arch, arch.slots),
    )?;
    let w_full = crate::numerics::kron(w.matrix(), &id_n);
    w_full.matmul(&rho)?.matmul(&w_full.adjoint())
}

// ---------------------------------------------------------------------------
// loss functions over evaluators

/// Raw trace-form loss `tr(U rho U^dag (O_m (x) I))` of a single sample.
pub struct TraceLossFn<T: Scalar> {
    pub evaluator: Evaluator<T>,
    theta_len: usize,
    phi_len: usize,
}

impl<T: Scalar> TraceLossFn<T> {
    pub fn new(evaluator: Evaluator<T>, train_phi: bool) -> Self {
        let arch = evaluator.arch();
        let theta_len = arch.theta_len();
        let phi_len = if train_phi { arch.slots } else { 0 };
        Self {
            evaluator,
            theta_len,
            phi_len,
        }
    }
}

impl<T: Scalar> crate::grad::LossFunction<T> for TraceLossFn<T> {
    fn theta_len(&self) -> usize {
        self.theta_len
    }

    fn phi_len(&self) -> usize {
        self.phi_len
    }

    fn evaluate(&self, params: &ParameterVector<T>) -> Result<T> {
        self.evaluator.value(params)
    }
}

/// Batch loss `1 - (1/Q) sum_q <M_{y_q}>` over prepared evaluators.
pub struct BatchLossFn<T: Scalar> {
    pub evaluators: Vec<Evaluator<T>>,
    theta_len: usize,
    phi_len: usize,
}

impl<T: Scalar> BatchLossFn<T> {
    pub fn new(evaluators: Vec<Evaluator<T>>, train_phi: bool) -> Result<Self> {
        let first = evaluators
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let arch = first.arch().clone();
        if evaluators.iter().any(|e| e.arch() != &arch) {
            return Err(Error::InvalidArgument(
                "batch mixes different architectures".into(),
            ));
        }
        Ok(Self {
            theta_len: arch.theta_len(),
            phi_len: if train_phi { arch.slots } else { 0 },
            evaluators,
        })
    }
}

impl<T: Scalar> crate::grad::LossFunction<T> for BatchLossFn<T> {
    fn theta_len(&self) -> usize {
        self.theta_len
    }

    fn phi_len(&self) -> usize {
        self.phi_len
    }

    fn evaluate(&self, params: &ParameterVector<T>) -> Result<T> {
        let mut acc = T::zero();
        for e in &self.evaluators {
            acc += e.value(params)?;
        }
        Ok(T::one() - acc / T::from_usize(self.evaluators.len()).unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, prediction_observable, EmbeddedData};
    use crate::numerics::{expm_i, pauli_word, Pauli};
    use crate::qstate::{expectation, tensor, QuantumState};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    type Mx = ComplexMatrix<f64>;

    fn random_hermitian(rng: &mut ChaCha12Rng, n: usize) -> HermitianOperator<f64> {
        let a = Mx::from_fn(n, n, |_, _| {
            C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        HermitianOperator::new(a.add(&a.adjoint()).unwrap().scale_real(0.5)).unwrap()
    }

    fn random_params(
        rng: &mut ChaCha12Rng,
        arch: &QrennArchitecture,
        with_phi: bool,
    ) -> ParameterVector<f64> {
        let theta = (0..arch.theta_len())
            .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
            .collect();
        let phi =
            with_phi.then(|| (0..arch.slots).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect());
        ParameterVector::new(arch, theta, phi).unwrap()
    }

    fn reference_value(
        arch: &QrennArchitecture,
        params: &ParameterVector<f64>,
        data: &EmbeddedData<f64>,
        probe: &ProbeSpec,
        obs_m: &HermitianOperator<f64>,
    ) -> f64 {
        let rho_m = crate::qstate::basis_state::<f64>(arch.m, &"0".repeat(arch.m)).unwrap();
        let rho_n = probe.state::<f64>(arch.n).unwrap();
        let rho0 = tensor(&rho_m, &rho_n);
        let out = forward(arch, params, data, &rho0).unwrap();
        let full = HermitianOperator::new(crate::numerics::kron(
            obs_m.matrix(),
            &Mx::identity(1usize << arch.n),
        ))
        .unwrap();
        expectation(&out, &full).unwrap()
    }

    fn check_probe_agreement(probe: ProbeSpec, gens: Vec<HermitianOperator<f64>>, seed: u64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let arch = QrennArchitecture::new(2, 2, gens.len(), 2).unwrap();
        let data = EmbeddedData::new(gens).unwrap();
        let obs = HermitianOperator::new(pauli_word::<f64>(&[Pauli::Z, Pauli::Z])).unwrap();
        let circuit = Arc::new(CompiledCircuit::compile(&arch, &data).unwrap());
        let eval = Evaluator::new(circuit, &probe, obs.clone()).unwrap();
        for _ in 0..4 {
            let params = random_params(&mut rng, &arch, true);
            let fast = eval.value(&params).unwrap();
            let slow = reference_value(&arch, &params, &data, &probe, &obs);
            assert!(
                (fast - slow).abs() <= 1e-10,
                "probe {probe:?}: fast {fast} vs reference {slow}"
            );
        }
    }

    #[test]
    fn shared_fixed_generator_agrees_with_reference() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let h = random_hermitian(&mut rng, 4);
        for probe in [ProbeSpec::Zeros, ProbeSpec::Plus, ProbeSpec::Minus] {
            check_probe_agreement(probe, vec![h.clone(); 3], 32);
        }
    }

    #[test]
    fn diagonal_generators_agree_with_reference() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let gens: Vec<HermitianOperator<f64>> = (0..3)
            .map(|_| {
                let d: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 3.0).collect();
                HermitianOperator::new(Mx::diag_real(&d)).unwrap()
            })
            .collect();
        for probe in [
            ProbeSpec::Plus,
            ProbeSpec::MaximallyMixed,
            ProbeSpec::MixedPlus { p: 0.5 },
        ] {
            check_probe_agreement(probe, gens.clone(), 34);
        }
    }

    #[test]
    fn distinct_dense_generators_agree_with_reference() {
        let mut rng = ChaCha12Rng::seed_from_u64(35);
        let gens: Vec<HermitianOperator<f64>> =
            (0..2).map(|_| random_hermitian(&mut rng, 4)).collect();
        for probe in [ProbeSpec::Zeros, ProbeSpec::Plus] {
            check_probe_agreement(probe, gens.clone(), 36);
        }
    }

    #[test]
    fn mixed_probe_on_shared_eigenbasis_agrees() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let h = random_hermitian(&mut rng, 4);
        for probe in [ProbeSpec::MaximallyMixed, ProbeSpec::MixedPlus { p: 0.3 }] {
            check_probe_agreement(probe, vec![h.clone(); 2], 38);
        }
    }

    #[test]
    fn fixed_slots_agree_with_dense_reference() {
        // noisy-style compiled circuit: explicit full unitaries per slot
        let mut rng = ChaCha12Rng::seed_from_u64(39);
        let arch = QrennArchitecture::new(1, 2, 2, 1).unwrap();
        let h = random_hermitian(&mut rng, 4);
        let embedded =
            crate::model::control_embed_generator(&h, arch.m, &arch.control).unwrap();
        let u = expm_i(&embedded, 1.0).unwrap();
        let circuit = Arc::new(
            CompiledCircuit::compile_fixed_slots(&arch, vec![u.clone(), u.clone()]).unwrap(),
        );
        let obs = HermitianOperator::new(Pauli::Z.matrix()).unwrap();
        let eval = Evaluator::new(circuit, &ProbeSpec::Plus, obs.clone()).unwrap();

        let data = EmbeddedData::repeated(h, 2).unwrap();
        for _ in 0..4 {
            let params = random_params(&mut rng, &arch, false);
            let fast = eval.value(&params).unwrap();
            let slow = reference_value(&arch, &params, &data, &ProbeSpec::Plus, &obs);
            assert!((fast - slow).abs() <= 1e-10);
        }

        // phi training on fixed slots is refused
        let params_phi = random_params(&mut rng, &arch, true);
        assert!(eval.value(&params_phi).is_err());
    }

    #[test]
    fn density_fallback_agrees() {
        // force the density path: distinct dense generators + mixed probe
        let mut rng = ChaCha12Rng::seed_from_u64(40);
        let gens: Vec<HermitianOperator<f64>> =
            (0..2).map(|_| random_hermitian(&mut rng, 4)).collect();
        check_probe_agreement(ProbeSpec::MixedPlus { p: 0.4 }, gens, 41);
    }

    #[test]
    fn batch_loss_matches_model_total_loss() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let arch = QrennArchitecture::new(2, 2, 2, 1).unwrap();
        let zz = pauli_word::<f64>(&[Pauli::Z, Pauli::Z]);
        let m0 =
            HermitianOperator::new(Mx::identity(4).sub(&zz).unwrap().scale_real(0.5)).unwrap();
        let m1 =
            HermitianOperator::new(Mx::identity(4).add(&zz).unwrap().scale_real(0.5)).unwrap();

        let mut evaluators = Vec::new();
        let mut batch = Vec::new();
        for k in 0..3 {
            let h = random_hermitian(&mut rng, 4);
            let data = EmbeddedData::repeated(h, 2).unwrap();
            let povm = if k % 2 == 0 { m1.clone() } else { m0.clone() };
            let circuit = Arc::new(CompiledCircuit::compile(&arch, &data).unwrap());
            evaluators.push(Evaluator::new(circuit, &ProbeSpec::Plus, povm.clone()).unwrap());
            batch.push(crate::model::BatchSample {
                data,
                label: (k % 2) as u8,
                povm_m: povm,
            });
        }
        let loss_fn = BatchLossFn::new(evaluators, false).unwrap();

        let rho0 = tensor(
            &crate::qstate::basis_state::<f64>(2, "00").unwrap(),
            &crate::qstate::plus_state::<f64>(2),
        );
        for _ in 0..3 {
            let params = random_params(&mut rng, &arch, false);
            let fast = crate::grad::LossFunction::evaluate(&loss_fn, &params).unwrap();
            let slow = crate::model::total_loss(&arch, &params, &batch, &rho0).unwrap();
            assert!((fast - slow).abs() <= 1e-10);
        }
    }

    #[test]
    fn predict_fast_path_matches_model() {
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let arch = QrennArchitecture::new(1, 2, 2, 2).unwrap();
        let h = random_hermitian(&mut rng, 4);
        let data = EmbeddedData::repeated(h, 2).unwrap();
        let circuit = Arc::new(CompiledCircuit::compile(&arch, &data).unwrap());
        let obs = HermitianOperator::new(Pauli::Z.matrix()).unwrap();
        let eval = Evaluator::new(circuit, &ProbeSpec::Plus, obs).unwrap();

        let rho0 = tensor(
            &crate::qstate::basis_state::<f64>(1, "0").unwrap(),
            &crate::qstate::plus_state::<f64>(2),
        );
        for _ in 0..5 {
            let params = random_params(&mut rng, &arch, false);
            let fast = u8::from(eval.value(&params).unwrap() >= 0.0);
            let slow = crate::model::predict(&arch, &params, &data, &rho0).unwrap();
            assert_eq!(fast, slow);
        }
        let _ = prediction_observable::<f64>(1, 2);
        let _: QuantumState<f64> = ProbeSpec::MixedPlus { p: 0.2 }.state(2).unwrap();
    }
}
