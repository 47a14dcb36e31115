//! Labelled Hamiltonian datasets: feature generators, embedding-generator
//! construction, POVM construction, train/test splitting and on-disk
//! serialization.
//!
//! All generators take an explicit RNG. Dataset builds derive one substream
//! per sample from the master seed, so the split is reproducible regardless
//! of evaluation order.

use crate::error::{Error, Result};
use crate::numerics::{
    logm_unitary, ComplexMatrix, HermitianOperator, Pauli, UnitaryOperator,
};
use crate::scalar::{cone, creal, Scalar, C};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read as _, Write as _};
use std::path::Path;

/// Feature class of a data Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTag {
    Pauli,
    Involutory,
    Diagonal,
    Haar,
    ClusterIsing,
    RandomIsing,
}

impl FeatureTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureTag::Pauli => "pauli",
            FeatureTag::Involutory => "involutory",
            FeatureTag::Diagonal => "diagonal",
            FeatureTag::Haar => "haar",
            FeatureTag::ClusterIsing => "cluster_ising",
            FeatureTag::RandomIsing => "random_ising",
        }
    }
}

/// One data point: the Hamiltonian, its binary label, the feature class it
/// was drawn for, and optional metadata (the coupling for cluster-Ising
/// samples).
#[derive(Debug, Clone)]
pub struct LabeledHamiltonian<T: Scalar> {
    pub operator: HermitianOperator<T>,
    pub label: u8,
    pub feature_tag: FeatureTag,
    pub meta: Option<f64>,
}

/// Train/test split, remembering the seed that produced it.
#[derive(Debug, Clone)]
pub struct DatasetSplit<T: Scalar> {
    pub train: Vec<LabeledHamiltonian<T>>,
    pub test: Vec<LabeledHamiltonian<T>>,
    pub seed: u64,
}

/// Uniform non-identity Pauli word on `n` qubits.
pub fn gen_pauli<T: Scalar, R: Rng>(n: usize, rng: &mut R) -> HermitianOperator<T> {
    assert!(n >= 1);
    // uniform over the 4^n - 1 non-identity words
    let count = 4usize.pow(n as u32);
    let idx = rng.gen_range(1..count);
    let mut axes = Vec::with_capacity(n);
    let mut rem = idx;
    for _ in 0..n {
        axes.push(match rem % 4 {
            0 => Pauli::I,
            1 => Pauli::X,
            2 => Pauli::Y,
            _ => Pauli::Z,
        });
        rem /= 4;
    }
    HermitianOperator::new(crate::numerics::pauli_word::<T>(&axes)).expect("Pauli word")
}

/// Haar-random unitary via QR of a complex Ginibre matrix with the diagonal
/// phase correction.
pub fn haar_unitary<T: Scalar, R: Rng>(dim: usize, rng: &mut R) -> UnitaryOperator<T> {
    let ginibre = nalgebra::DMatrix::<C<T>>::from_fn(dim, dim, |_, _| {
        C::new(
            T::lit(crate::numerics::gauss(rng)),
            T::lit(crate::numerics::gauss(rng)),
        )
    });
    let qr = ginibre.qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = ComplexMatrix::zeros(dim, dim);
    for j in 0..dim {
        let d = r[(j, j)];
        let mag = crate::scalar::cabs(d);
        let phase = if mag > T::zero() {
            d / C::new(mag, T::zero())
        } else {
            cone()
        };
        for i in 0..dim {
            out.set(i, j, q[(i, j)] * phase);
        }
    }
    UnitaryOperator::new(out).expect("QR factor is unitary")
}

/// Random involutory Hermitian `V diag(+-1) V^dag` with a genuine two-sided
/// spectrum (all-equal draws are resampled) and Haar `V`.
pub fn gen_involutory<T: Scalar, R: Rng>(n: usize, rng: &mut R) -> HermitianOperator<T> {
    assert!(n >= 1);
    let dim = 1usize << n;
    let signs: Vec<T> = loop {
        let draw: Vec<T> = (0..dim)
            .map(|_| if rng.gen::<bool>() { T::one() } else { -T::one() })
            .collect();
        if draw.iter().any(|s| *s > T::zero()) && draw.iter().any(|s| *s < T::zero()) {
            break draw;
        }
    };
    let v = haar_unitary::<T, R>(dim, rng);
    let mut scaled = v.matrix().clone();
    for (j, &s) in signs.iter().enumerate() {
        for i in 0..dim {
            let val = scaled.get(i, j) * creal(s);
            scaled.set(i, j, val);
        }
    }
    let m = scaled.matmul(&v.matrix().adjoint()).expect("square");
    HermitianOperator::new_relaxed(m)
}

/// Diagonal Hamiltonian with entries uniform in `[0, pi)`.
pub fn gen_diagonal<T: Scalar, R: Rng>(n: usize, rng: &mut R) -> HermitianOperator<T> {
    assert!(n >= 1);
    let dim = 1usize << n;
    let values: Vec<T> = (0..dim)
        .map(|_| T::lit(rng.gen_range(0.0..std::f64::consts::PI)))
        .collect();
    HermitianOperator::new(ComplexMatrix::diag_real(&values)).expect("diagonal")
}

/// Hermitian generator of a Haar unitary: `H = -i log U` on the principal
/// branch, eigenphases in `(-pi, pi]`.
pub fn gen_haar_hermitian<T: Scalar, R: Rng>(n: usize, rng: &mut R) -> HermitianOperator<T> {
    let u = haar_unitary::<T, R>(1usize << n, rng);
    logm_unitary(&u).expect("unitary log")
}

/// Periodic cluster-Ising chain
/// `H(lambda) = -sum_j X_{j-1} Z_j X_{j+1} + lambda sum_j Y_j Y_{j+1}`.
pub fn gen_cluster_ising<T: Scalar>(n: usize, lambda: T) -> Result<HermitianOperator<T>> {
    if n < 3 {
        return Err(Error::InvalidArgument(
            "cluster-Ising chain needs at least 3 sites".into(),
        ));
    }
    let dim = 1usize << n;
    let mut h = ComplexMatrix::zeros(dim, dim);
    for j in 0..n {
        let prev = (j + n - 1) % n;
        let next = (j + 1) % n;
        let mut axes = vec![Pauli::I; n];
        axes[prev] = Pauli::X;
        axes[j] = Pauli::Z;
        axes[next] = Pauli::X;
        h = h.sub(&crate::numerics::pauli_word::<T>(&axes))?;

        let mut yy = vec![Pauli::I; n];
        yy[j] = Pauli::Y;
        yy[next] = Pauli::Y;
        h = h.add(&crate::numerics::pauli_word::<T>(&yy).scale_real(lambda))?;
    }
    HermitianOperator::new(h)
}

/// Open-boundary random Ising chain
/// `H = sum_{k=0}^{n-2} J_k Z_k Z_{k+1} + sum_{k=0}^{n-1} h_k X_k`,
/// couplings uniform in `[-1, 1]`.
pub fn gen_random_ising<T: Scalar, R: Rng>(n: usize, rng: &mut R) -> Result<HermitianOperator<T>> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "Ising chain needs at least 2 sites".into(),
        ));
    }
    let dim = 1usize << n;
    let mut h = ComplexMatrix::zeros(dim, dim);
    for k in 0..n - 1 {
        let coupling = T::lit(rng.gen_range(-1.0..=1.0));
        let mut axes = vec![Pauli::I; n];
        axes[k] = Pauli::Z;
        axes[k + 1] = Pauli::Z;
        h = h.add(&crate::numerics::pauli_word::<T>(&axes).scale_real(coupling))?;
    }
    for k in 0..n {
        let field = T::lit(rng.gen_range(-1.0..=1.0));
        let mut axes = vec![Pauli::I; n];
        axes[k] = Pauli::X;
        h = h.add(&crate::numerics::pauli_word::<T>(&axes).scale_real(field))?;
    }
    HermitianOperator::new(h)
}

/// Random Hermitian with exactly `r` distinct, well-separated eigenvalues
/// spread over all of an `n`-qubit spectrum, conjugated by a Haar unitary.
pub fn gen_with_spectrum<T: Scalar, R: Rng>(
    n: usize,
    r: usize,
    rng: &mut R,
) -> Result<HermitianOperator<T>> {
    let dim = 1usize << n;
    if r < 1 || r > dim {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= r <= {dim}, got {r}"
        )));
    }
    let mut group_vals = vec![T::zero(); r];
    for (g, gv) in group_vals.iter_mut().enumerate() {
        *gv = T::from_usize(g).unwrap() * T::lit(1.7) + T::lit(rng.gen_range(0.0..0.2));
    }
    let values: Vec<T> = (0..dim).map(|k| group_vals[k % r]).collect();
    let u = haar_unitary::<T, R>(dim, rng);
    let mut scaled = u.matrix().clone();
    for (j, &gv) in values.iter().enumerate() {
        for i in 0..dim {
            let val = scaled.get(i, j) * creal(gv);
            scaled.set(i, j, val);
        }
    }
    let m = scaled.matmul(&u.matrix().adjoint())?;
    Ok(HermitianOperator::new_relaxed(m))
}

/// Embedding generator per feature: `(pi/2)(I - X)` for the involutory-type
/// features (so the embedded unitary is the controlled reflection), the raw
/// operator otherwise.
pub fn embedding_generator<T: Scalar>(
    tag: FeatureTag,
    x: &HermitianOperator<T>,
) -> HermitianOperator<T> {
    match tag {
        FeatureTag::Pauli | FeatureTag::Involutory => {
            let m = ComplexMatrix::identity(x.dim())
                .sub(x.matrix())
                .expect("same dim")
                .scale_real(T::frac_pi_2());
            HermitianOperator::new_relaxed(m)
        }
        _ => x.clone(),
    }
}

/// Two-outcome labelling POVM on the processing register:
/// `M_0 = (I - Z^(x)m)/2`, `M_1 = (I + Z^(x)m)/2`. The caller tensors with
/// the embedding-register identity.
pub fn povm_binary<T: Scalar>(m: usize) -> (HermitianOperator<T>, HermitianOperator<T>) {
    assert!(m >= 1);
    let zm = crate::numerics::pauli_word::<T>(&vec![Pauli::Z; m]);
    let id = ComplexMatrix::identity(1usize << m);
    let m0 = id.sub(&zm).expect("same dim").scale_real(T::lit(0.5));
    let m1 = id.add(&zm).expect("same dim").scale_real(T::lit(0.5));
    (
        HermitianOperator::new(m0).expect("POVM"),
        HermitianOperator::new(m1).expect("POVM"),
    )
}

fn substream(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw one sample of the given feature (label 1) on `n` qubits.
pub fn draw_feature<T: Scalar, R: Rng>(
    tag: FeatureTag,
    n: usize,
    rng: &mut R,
) -> Result<LabeledHamiltonian<T>> {
    let (operator, meta) = match tag {
        FeatureTag::Pauli => (gen_pauli::<T, R>(n, rng), None),
        FeatureTag::Involutory => (gen_involutory::<T, R>(n, rng), None),
        FeatureTag::Diagonal => (gen_diagonal::<T, R>(n, rng), None),
        FeatureTag::Haar => (gen_haar_hermitian::<T, R>(n, rng), None),
        FeatureTag::RandomIsing => (gen_random_ising::<T, R>(n, rng)?, None),
        FeatureTag::ClusterIsing => {
            return Err(Error::InvalidArgument(
                "cluster-Ising samples carry their own labelling; use build_dataset".into(),
            ))
        }
    };
    Ok(LabeledHamiltonian {
        operator,
        label: 1,
        feature_tag: tag,
        meta,
    })
}

/// Build the labelled pool and split it into train/test.
///
/// For every feature except cluster-Ising the pool holds `total/2` feature
/// samples (label 1) and `total/2` Hermitian generators of Haar unitaries
/// (label 0). Cluster-Ising draws `lambda` uniform in `[0, 2]` per sample,
/// labels 0 below the transition at 1, and redraws values within `1e-6` of
/// it. A uniform shuffle then takes the first `train_size` samples as the
/// training batch.
pub fn build_dataset<T: Scalar>(
    tag: FeatureTag,
    n: usize,
    total: usize,
    train_size: usize,
    seed: u64,
) -> Result<DatasetSplit<T>> {
    if train_size >= total {
        return Err(Error::InvalidArgument(format!(
            "train size {train_size} must be below total {total}"
        )));
    }
    if !total.is_multiple_of(2) {
        return Err(Error::InvalidArgument("total must be even".into()));
    }
    let mut pool: Vec<LabeledHamiltonian<T>> = Vec::with_capacity(total);
    match tag {
        FeatureTag::ClusterIsing => {
            for idx in 0..total {
                let mut rng = substream(seed, idx as u64);
                let lambda = loop {
                    let l: f64 = rng.gen_range(0.0..=2.0);
                    if (l - 1.0).abs() >= 1e-6 {
                        break l;
                    }
                };
                let operator = gen_cluster_ising::<T>(n, T::lit(lambda))?;
                pool.push(LabeledHamiltonian {
                    operator,
                    label: u8::from(lambda >= 1.0),
                    feature_tag: tag,
                    meta: Some(lambda),
                });
            }
        }
        _ => {
            let half = total / 2;
            for idx in 0..half {
                let mut rng = substream(seed, idx as u64);
                pool.push(draw_feature::<T, _>(tag, n, &mut rng)?);
            }
            for idx in half..total {
                let mut rng = substream(seed, idx as u64);
                pool.push(LabeledHamiltonian {
                    operator: gen_haar_hermitian::<T, _>(n, &mut rng),
                    label: 0,
                    feature_tag: FeatureTag::Haar,
                    meta: None,
                });
            }
        }
    }

    // uniform split via Fisher-Yates on its own substream
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = substream(seed, u64::MAX);
    for i in (1..total).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut train = Vec::with_capacity(train_size);
    let mut test = Vec::with_capacity(total - train_size);
    for (rank, &idx) in order.iter().enumerate() {
        if rank < train_size {
            train.push(pool[idx].clone());
        } else {
            test.push(pool[idx].clone());
        }
    }
    Ok(DatasetSplit { train, test, seed })
}

// ---------------------------------------------------------------------------
// serialization: a JSON manifest plus a binary matrix file of little-endian
// f64 (re, im) pairs, row-major, samples in manifest order (train then test)

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    feature: FeatureTag,
    n: usize,
    seed: u64,
    dim: usize,
    train: Vec<SampleRecord>,
    test: Vec<SampleRecord>,
    matrix_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    label: u8,
    feature_tag: FeatureTag,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<f64>,
}

fn record<T: Scalar>(s: &LabeledHamiltonian<T>) -> SampleRecord {
    SampleRecord {
        label: s.label,
        feature_tag: s.feature_tag,
        meta: s.meta,
    }
}

/// Write `manifest.json` and `matrices.bin` under `dir`. Matrices are stored
/// as f64 regardless of the in-memory scalar type.
pub fn write_dataset<T: Scalar>(
    split: &DatasetSplit<T>,
    tag: FeatureTag,
    n: usize,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let dim = 1usize << n;
    let manifest = DatasetManifest {
        feature: tag,
        n,
        seed: split.seed,
        dim,
        train: split.train.iter().map(record).collect(),
        test: split.test.iter().map(record).collect(),
        matrix_file: "matrices.bin".into(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;

    let mut bin = std::fs::File::create(dir.join("matrices.bin"))?;
    let mut buf = Vec::with_capacity(dim * dim * 16);
    for s in split.train.iter().chain(split.test.iter()) {
        buf.clear();
        for entry in s.operator.matrix().entries() {
            buf.extend_from_slice(&entry.re.as_f64().to_le_bytes());
            buf.extend_from_slice(&entry.im.as_f64().to_le_bytes());
        }
        bin.write_all(&buf)?;
    }
    Ok(())
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset<T: Scalar>(dir: &Path) -> Result<(DatasetSplit<T>, FeatureTag, usize)> {
    let json = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&json).map_err(|e| Error::Serialization(e.to_string()))?;
    let dim = manifest.dim;
    let mut bin = std::fs::File::open(dir.join(&manifest.matrix_file))?;
    let mut read_one = |rec: &SampleRecord| -> Result<LabeledHamiltonian<T>> {
        let mut bytes = vec![0u8; dim * dim * 16];
        bin.read_exact(&mut bytes)?;
        let mut entries = Vec::with_capacity(dim * dim);
        for chunk in bytes.chunks_exact(16) {
            let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
            let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
            entries.push(C::new(T::lit(re), T::lit(im)));
        }
        let matrix = ComplexMatrix::new(dim, dim, entries)?;
        Ok(LabeledHamiltonian {
            operator: HermitianOperator::new(matrix)?,
            label: rec.label,
            feature_tag: rec.feature_tag,
            meta: rec.meta,
        })
    };
    let mut train = Vec::with_capacity(manifest.train.len());
    for rec in &manifest.train {
        train.push(read_one(rec)?);
    }
    let mut test = Vec::with_capacity(manifest.test.len());
    for rec in &manifest.test {
        test.push(read_one(rec)?);
    }
    Ok((
        DatasetSplit {
            train,
            test,
            seed: manifest.seed,
        },
        manifest.feature,
        manifest.n,
    ))
}
