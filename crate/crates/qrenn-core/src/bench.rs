//! Experiment harnesses: gradient statistics over random initializations,
//! classifier training with optional label and embedding noise, the
//! topological-phase detection run, and eigenspace-overlap scans.
//!
//! Every harness is deterministic given its config and seed: per-sample RNG
//! substreams are keyed by sample index, and parallel reductions collect in
//! index order.

use crate::data::{self, DatasetSplit, FeatureTag, LabeledHamiltonian};
use crate::dla;
use crate::engine::{BatchLossFn, CompiledCircuit, Evaluator, ProbeSpec};
use crate::error::{Error, Result};
use crate::grad::{self, LossFunction};
use crate::model::{EmbeddedData, ParameterVector, QrennArchitecture};
use crate::numerics::{expm_i, HermitianOperator, Pauli, UnitaryOperator};
use crate::scalar::Scalar;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

fn substream(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform_angles<T: Scalar, R: Rng>(count: usize, rng: &mut R) -> Vec<T> {
    (0..count)
        .map(|_| T::lit(rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect()
}

// ---------------------------------------------------------------------------
// gradient statistics

/// Data ensemble sampled per network draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GradFeature {
    /// Random non-identity Pauli word, embedded through the reflection map.
    Pauli,
    /// Random involutory Hamiltonian, embedded through the reflection map.
    Involutory,
    /// Fresh random diagonal Hamiltonian at every slot.
    Diagonal,
    /// Hermitian generator of a Haar unitary, fixed across slots.
    Haar,
    /// Random open-boundary Ising chain, fixed across slots.
    RandomIsing,
    /// The fixed word Z^(x)n; the analytic-variance verification setup.
    FixedPauliZ,
    /// Fixed cluster-Ising chain at the given coupling.
    ClusterIsing { lambda: f64 },
}

impl GradFeature {
    fn default_probe(&self) -> ProbeSpec {
        match self {
            GradFeature::Pauli | GradFeature::Involutory => ProbeSpec::Plus,
            GradFeature::Diagonal => ProbeSpec::MixedPlus { p: 0.5 },
            _ => ProbeSpec::Zeros,
        }
    }
}

/// Which derivative the sampling experiment records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GradTarget {
    /// Rotation angle `theta_{slot,index}` (0-based; default slot 0 index 0).
    Theta { slot: usize, index: usize },
    /// Data weight `phi_slot`.
    Phi { slot: usize },
}

impl Default for GradTarget {
    fn default() -> Self {
        GradTarget::Theta { slot: 0, index: 0 }
    }
}

/// Whether gradients are reported for the implemented rotation angles
/// (`e^{-i theta P/2}`) or rescaled to the bare-generator convention
/// (`e^{i theta P}`), which multiplies the derivative by -2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradConvention {
    #[default]
    Rotation,
    Generator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradStatConfig {
    pub feature: GradFeature,
    pub n_list: Vec<usize>,
    /// Slot-sweep mode: vary T over this list at fixed `n_list[0]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_list: Option<Vec<usize>>,
    pub m: usize,
    #[serde(default = "default_slots")]
    pub slots: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub target: GradTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSpec>,
    #[serde(default)]
    pub convention: GradConvention,
    pub seed: u64,
}

fn default_slots() -> usize {
    16
}
fn default_layers() -> usize {
    3
}
fn default_samples() -> usize {
    500
}

/// One sweep point of a gradient-statistics run.
#[derive(Debug, Clone, Serialize)]
pub struct GradStatRow {
    pub n: usize,
    pub slots: usize,
    pub samples: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    /// Analytic prediction when the configuration admits one.
    pub predicted_variance: Option<f64>,
}

/// Everything a finished experiment reports.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub wall_time_s: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub enum Metrics {
    GradStats {
        rows: Vec<GradStatRow>,
        /// Raw per-point gradient samples, row order; feeds bootstrap CIs.
        raw: Vec<Vec<f64>>,
    },
    Training(TrainingMetrics),
    Spt {
        training: TrainingMetrics,
        per_sample: Vec<SptRow>,
        sweep: Option<Vec<SptSweepRow>>,
    },
    OverlapScan {
        rows: Vec<OverlapRow>,
    },
}

fn draw_generators<T: Scalar>(
    feature: GradFeature,
    n: usize,
    slots: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<HermitianOperator<T>>> {
    Ok(match feature {
        GradFeature::Diagonal => (0..slots)
            .map(|_| data::gen_diagonal::<T, _>(n, rng))
            .collect(),
        GradFeature::Pauli => {
            let x = data::gen_pauli::<T, _>(n, rng);
            vec![data::embedding_generator(FeatureTag::Pauli, &x); slots]
        }
        GradFeature::Involutory => {
            let x = data::gen_involutory::<T, _>(n, rng);
            vec![data::embedding_generator(FeatureTag::Involutory, &x); slots]
        }
        GradFeature::Haar => vec![data::gen_haar_hermitian::<T, _>(n, rng); slots],
        GradFeature::RandomIsing => vec![data::gen_random_ising::<T, _>(n, rng)?; slots],
        GradFeature::FixedPauliZ => {
            let z = HermitianOperator::new(crate::numerics::pauli_word::<T>(&vec![Pauli::Z; n]))
                .expect("Z word");
            vec![z; slots]
        }
        GradFeature::ClusterIsing { lambda } => {
            vec![data::gen_cluster_ising::<T>(n, T::lit(lambda))?; slots]
        }
    })
}

struct GradSampleOutcome {
    gradient: f64,
    predicted: Option<f64>,
}

fn grad_one_sample<T: Scalar>(
    cfg: &GradStatConfig,
    arch: &QrennArchitecture,
    probe: &ProbeSpec,
    obs: &HermitianOperator<T>,
    n: usize,
    sample_rng: &mut ChaCha12Rng,
) -> Result<GradSampleOutcome> {
    let gens = draw_generators::<T>(cfg.feature, n, arch.slots, sample_rng)?;
    let with_phi = matches!(cfg.target, GradTarget::Phi { .. });

    let theta = uniform_angles::<T, _>(arch.theta_len(), sample_rng);
    let phi = with_phi.then(|| uniform_angles::<T, _>(arch.slots, sample_rng));
    let params = ParameterVector::new(arch, theta, phi)?;

    let data = EmbeddedData::new(gens.clone())?;
    let circuit = Arc::new(CompiledCircuit::compile(arch, &data)?);
    let eval = Evaluator::new(circuit, probe, obs.clone())?;
    let loss = crate::engine::TraceLossFn::new(eval, with_phi);

    let gradient = match cfg.target {
        GradTarget::Theta { slot, index } => {
            let flat = slot * arch.block_params() + index;
            let raw = grad::param_shift(&loss, &params, flat)?;
            match cfg.convention {
                GradConvention::Rotation => raw,
                GradConvention::Generator => -T::lit(2.0) * raw,
            }
        }
        GradTarget::Phi { slot } => {
            let flat = arch.theta_len() + slot;
            grad::central_diff(&loss, &params, flat, T::lit(grad::DEFAULT_FD_STEP))?
        }
    };

    // analytic prediction for this draw, in the same convention
    let rho_n = probe.state::<T>(n)?;
    let predicted = match cfg.target {
        GradTarget::Theta { index, .. } => {
            let eig = dla::joint_eigenspaces(&gens, T::lit(dla::EIGENVALUE_GROUP_TOL))?;
            // theta_{t,index}: R_Y for index < m, R_Z for m <= index < 2m
            let within = index % (2 * arch.m);
            let (qubit, axis) = if within < arch.m {
                (within, Pauli::Y)
            } else {
                (within - arch.m, Pauli::Z)
            };
            let word = crate::numerics::pauli_on::<T>(arch.m, qubit, axis);
            let omega = match cfg.convention {
                GradConvention::Rotation => {
                    HermitianOperator::new_relaxed(word.scale_real(-T::lit(0.5)))
                }
                GradConvention::Generator => HermitianOperator::new_relaxed(word),
            };
            Some(
                dla::predicted_variance_theta(arch.m, &eig, &rho_n, obs, &omega)?
                    .as_f64(),
            )
        }
        GradTarget::Phi { .. } => {
            if gens[1..]
                .iter()
                .all(|g| g.matrix().max_abs_diff(gens[0].matrix()) == T::zero())
            {
                let eig =
                    dla::joint_eigenspaces(&gens[..1], T::lit(dla::EIGENVALUE_GROUP_TOL))?;
                Some(dla::predicted_variance_phi(arch.m, &eig, &rho_n, obs)?.as_f64())
            } else {
                None
            }
        }
    };

    Ok(GradSampleOutcome {
        gradient: gradient.as_f64(),
        predicted,
    })
}

/// Sample gradient statistics over randomly initialized networks, per
/// embedding-register size (or per slot count in slot-sweep mode).
///
/// Each sample draws fresh data per the feature protocol and a uniform
/// parameter vector, evaluates the target derivative exactly, and reports the
/// sample mean, unbiased variance and standard error of the mean, next to the
/// data-averaged analytic prediction where one applies.
pub fn gradient_statistics<T: Scalar>(cfg: &GradStatConfig) -> Result<RunResult> {
    if cfg.samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    if cfg.n_list.is_empty() {
        return Err(Error::InvalidArgument("empty n list".into()));
    }
    let start = Instant::now();
    let points: Vec<(usize, usize)> = match &cfg.t_list {
        Some(ts) => {
            if ts.is_empty() {
                return Err(Error::InvalidArgument("empty slot list".into()));
            }
            ts.iter().map(|&t| (cfg.n_list[0], t)).collect()
        }
        None => cfg.n_list.iter().map(|&n| (n, cfg.slots)).collect(),
    };
    let probe = cfg.probe.unwrap_or_else(|| cfg.feature.default_probe());
    let obs = HermitianOperator::new(crate::numerics::pauli_word::<T>(&vec![Pauli::Z; cfg.m]))
        .expect("Z word");

    let mut rows = Vec::with_capacity(points.len());
    let mut raw = Vec::with_capacity(points.len());
    for (pt, &(n, slots)) in points.iter().enumerate() {
        let arch = QrennArchitecture::new(cfg.m, n, slots, cfg.layers)?;
        if let GradTarget::Theta { slot, index } = cfg.target {
            if slot > slots || index >= arch.block_params() {
                return Err(Error::InvalidArgument(format!(
                    "target theta_({slot},{index}) outside the parameter grid"
                )));
            }
        }
        if let GradTarget::Phi { slot } = cfg.target {
            if slot >= slots {
                return Err(Error::InvalidArgument(format!(
                    "target phi_{slot} outside the slot range"
                )));
            }
        }
        let outcomes: Vec<Result<GradSampleOutcome>> = (0..cfg.samples)
            .into_par_iter()
            .map(|s| {
                let mut rng = substream(cfg.seed, ((pt as u64) << 32) | s as u64);
                grad_one_sample::<T>(cfg, &arch, &probe, &obs, n, &mut rng)
            })
            .collect();
        let mut gradients = Vec::with_capacity(cfg.samples);
        let mut predictions = Vec::new();
        for o in outcomes {
            let o = o?;
            gradients.push(o.gradient);
            if let Some(p) = o.predicted {
                predictions.push(p);
            }
        }
        let (mean, variance) = mean_and_variance(&gradients);
        let stderr = (variance / gradients.len() as f64).sqrt();
        let predicted_variance = if predictions.len() == gradients.len() {
            Some(predictions.iter().sum::<f64>() / predictions.len() as f64)
        } else {
            None
        };
        rows.push(GradStatRow {
            n,
            slots,
            samples: cfg.samples,
            mean,
            variance,
            stderr,
            predicted_variance,
        });
        raw.push(gradients);
    }

    Ok(RunResult {
        seed: cfg.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        metrics: Metrics::GradStats { rows, raw },
    })
}

/// Sample mean and unbiased variance.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Percentile bootstrap confidence interval for the sample variance.
pub fn bootstrap_variance_ci(
    values: &[f64],
    resamples: usize,
    alpha: f64,
    seed: u64,
) -> (f64, f64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = values.len();
    let mut vars = Vec::with_capacity(resamples);
    let mut scratch = vec![0.0f64; n];
    for _ in 0..resamples {
        for v in scratch.iter_mut() {
            *v = values[rng.gen_range(0..n)];
        }
        vars.push(mean_and_variance(&scratch).1);
    }
    vars.sort_by(f64::total_cmp);
    let lo_idx = ((alpha / 2.0) * resamples as f64).floor() as usize;
    let hi_idx = (((1.0 - alpha / 2.0) * resamples as f64).ceil() as usize).min(resamples - 1);
    (vars[lo_idx], vars[hi_idx])
}

// ---------------------------------------------------------------------------
// training

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    #[default]
    None,
    /// Flip each training label independently with this probability.
    LabelFlip { rate: f64 },
    /// Perturb every controlled embedding by `delta H_0`, `||H_0||_inf <= 1`.
    Crosstalk { delta: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub feature: FeatureTag,
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_train_slots")]
    pub slots: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_total")]
    pub total: usize,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSpec>,
    /// Optional rescaling of the embedded generator.
    #[serde(default = "default_embed_scale")]
    pub embed_scale: f64,
    pub seed: u64,
}

fn default_train_slots() -> usize {
    4
}
fn default_total() -> usize {
    600
}
fn default_train_size() -> usize {
    100
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    200
}
fn default_embed_scale() -> f64 {
    1.0
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("need at least one epoch".into()));
        }
        if let NoiseSpec::LabelFlip { rate } = self.noise {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidArgument("flip rate outside [0, 1]".into()));
            }
        }
        Ok(())
    }

    fn probe(&self) -> ProbeSpec {
        self.probe.unwrap_or(match self.feature {
            FeatureTag::Pauli | FeatureTag::Involutory => ProbeSpec::Plus,
            FeatureTag::Diagonal => ProbeSpec::MixedPlus { p: 0.5 },
            _ => ProbeSpec::Zeros,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingMetrics {
    pub loss_curve: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub predictions: Vec<u8>,
    pub truth: Vec<u8>,
    /// Mean and variance of the final epoch's gradient entries.
    pub grad_mean: f64,
    pub grad_variance: f64,
    pub trained: Vec<f64>,
}

/// Flip each training label independently with probability `rate`; test
/// labels stay untouched.
pub fn label_flip<T: Scalar, R: Rng>(
    dataset: &DatasetSplit<T>,
    rate: f64,
    rng: &mut R,
) -> Result<DatasetSplit<T>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument("flip rate outside [0, 1]".into()));
    }
    let mut out = dataset.clone();
    for s in &mut out.train {
        if rng.gen_range(0.0..1.0) < rate {
            s.label = 1 - s.label;
        }
    }
    Ok(out)
}

/// Exponential of the noise-perturbed controlled generator
/// `e^{i(|c><c| (x) H + delta H_0)}`; exactly unitary by construction.
pub fn crosstalk_embed<T: Scalar>(
    h_embedded: &HermitianOperator<T>,
    delta: T,
    h0: &HermitianOperator<T>,
) -> Result<UnitaryOperator<T>> {
    if h0.dim() != h_embedded.dim() {
        return Err(Error::DimensionMismatch {
            expected: h_embedded.dim(),
            got: h0.dim(),
            context: "crosstalk perturbation dimension",
        });
    }
    let norm = h0.spectral_norm()?;
    if norm > T::one() + T::lit(1e-9) {
        return Err(Error::InvalidArgument(format!(
            "||H_0||_inf = {} exceeds 1",
            norm.as_f64()
        )));
    }
    let perturbed = h_embedded.add(&h0.scale_real(delta))?;
    expm_i(&perturbed, T::one())
}

/// Random dense Hermitian rescaled to unit spectral norm.
fn unit_spectral_hermitian<T: Scalar, R: Rng>(dim: usize, rng: &mut R) -> Result<HermitianOperator<T>> {
    let a = crate::numerics::ComplexMatrix::from_fn(dim, dim, |_, _| {
        crate::scalar::C::new(
            T::lit(crate::numerics::gauss(rng)),
            T::lit(crate::numerics::gauss(rng)),
        )
    });
    let h = HermitianOperator::new_relaxed(a);
    let norm = h.spectral_norm()?;
    Ok(h.scale_real(T::one() / norm))
}

struct PreparedSample<T: Scalar> {
    evaluator: Evaluator<T>,
    predictor: Evaluator<T>,
    label: u8,
    meta: Option<f64>,
}

struct TaskOperators<T: Scalar> {
    povm0: HermitianOperator<T>,
    povm1: HermitianOperator<T>,
    observable: HermitianOperator<T>,
    crosstalk_h0: Option<HermitianOperator<T>>,
}

fn prepare_sample<T: Scalar>(
    cfg: &TrainConfig,
    arch: &QrennArchitecture,
    probe: &ProbeSpec,
    sample: &LabeledHamiltonian<T>,
    ops: &TaskOperators<T>,
) -> Result<PreparedSample<T>> {
    // the embedding map is a property of the task, applied to every sample
    let gen = data::embedding_generator(cfg.feature, &sample.operator)
        .scale_real(T::lit(cfg.embed_scale));
    let circuit = match (&cfg.noise, &ops.crosstalk_h0) {
        (NoiseSpec::Crosstalk { delta }, Some(h0)) => {
            let embedded = crate::model::control_embed_generator(&gen, arch.m, &arch.control)?;
            let noisy = crosstalk_embed(&embedded, T::lit(*delta), h0)?;
            CompiledCircuit::compile_fixed_slots(arch, vec![noisy; arch.slots])?
        }
        _ => {
            let data = EmbeddedData::repeated(gen, arch.slots)?;
            CompiledCircuit::compile(arch, &data)?
        }
    };
    let circuit = Arc::new(circuit);
    let povm = if sample.label == 1 {
        &ops.povm1
    } else {
        &ops.povm0
    };
    Ok(PreparedSample {
        evaluator: Evaluator::new(circuit.clone(), probe, povm.clone())?,
        predictor: Evaluator::new(circuit, probe, ops.observable.clone())?,
        label: sample.label,
        meta: sample.meta,
    })
}

fn minimize<T: Scalar>(
    loss: &BatchLossFn<T>,
    mut params: ParameterVector<T>,
    kind: OptimizerKind,
    learning_rate: f64,
    epochs: usize,
) -> Result<(ParameterVector<T>, Vec<f64>, Vec<f64>)> {
    let dim = loss.theta_len();
    let lr = T::lit(learning_rate);
    let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
    let mut m1 = vec![T::zero(); dim];
    let mut m2 = vec![T::zero(); dim];
    let mut curve = Vec::with_capacity(epochs);
    let mut last_grad = vec![0.0f64; dim];
    for epoch in 0..epochs {
        let value = loss.evaluate(&params)?;
        if !value.as_f64().is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "loss became non-finite at epoch {epoch}"
            )));
        }
        curve.push(value.as_f64());

        let grads: Vec<Result<T>> = (0..dim)
            .into_par_iter()
            .map(|idx| grad::param_shift(loss, &params, idx))
            .collect();
        let mut gradient = Vec::with_capacity(dim);
        for g in grads {
            gradient.push(g?);
        }
        for (i, &g) in gradient.iter().enumerate() {
            last_grad[i] = g.as_f64();
        }
        match kind {
            OptimizerKind::GradientDescent => {
                for (p, g) in params.theta.iter_mut().zip(&gradient) {
                    *p -= lr * *g;
                }
            }
            OptimizerKind::Adam => {
                let t = T::from_usize(epoch + 1).unwrap();
                for i in 0..dim {
                    m1[i] = b1 * m1[i] + (T::one() - b1) * gradient[i];
                    m2[i] = b2 * m2[i] + (T::one() - b2) * gradient[i] * gradient[i];
                    let m1_hat = m1[i] / (T::one() - b1.powf(t));
                    let m2_hat = m2[i] / (T::one() - b2.powf(t));
                    params.theta[i] -= lr * m1_hat / (m2_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok((params, curve, last_grad))
}

/// Generic first-order minimization of any loss function over its rotation
/// angles; used by the optimizer sanity checks.
pub fn minimize_loss<T: Scalar>(
    loss: &impl LossFunction<T>,
    mut params: ParameterVector<T>,
    kind: OptimizerKind,
    learning_rate: f64,
    steps: usize,
) -> Result<(ParameterVector<T>, Vec<f64>)> {
    let dim = loss.theta_len();
    let lr = T::lit(learning_rate);
    let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
    let mut m1 = vec![T::zero(); dim];
    let mut m2 = vec![T::zero(); dim];
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        curve.push(loss.evaluate(&params)?.as_f64());
        for i in 0..dim {
            let g = grad::param_shift(loss, &params, i)?;
            match kind {
                OptimizerKind::GradientDescent => params.theta[i] -= lr * g,
                OptimizerKind::Adam => {
                    let t = T::from_usize(step + 1).unwrap();
                    m1[i] = b1 * m1[i] + (T::one() - b1) * g;
                    m2[i] = b2 * m2[i] + (T::one() - b2) * g * g;
                    let m1_hat = m1[i] / (T::one() - b1.powf(t));
                    let m2_hat = m2[i] / (T::one() - b2.powf(t));
                    params.theta[i] -= lr * m1_hat / (m2_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok((params, curve))
}

fn run_training<T: Scalar>(
    cfg: &TrainConfig,
    dataset: &DatasetSplit<T>,
) -> Result<(TrainingMetrics, Vec<SptRow>)> {
    cfg.validate()?;
    let arch = QrennArchitecture::new(cfg.m, cfg.n, cfg.slots, cfg.layers)?;
    let probe = cfg.probe();
    let (povm0, povm1) = data::povm_binary::<T>(cfg.m);
    let obs = HermitianOperator::new(crate::numerics::pauli_word::<T>(&vec![Pauli::Z; cfg.m]))
        .expect("Z word");

    // label noise on the training half only
    let working = match cfg.noise {
        NoiseSpec::LabelFlip { rate } => {
            let mut rng = substream(cfg.seed, (1 << 40) + 2);
            label_flip(dataset, rate, &mut rng)?
        }
        _ => dataset.clone(),
    };

    let crosstalk_h0 = match cfg.noise {
        NoiseSpec::Crosstalk { .. } => {
            let mut rng = substream(cfg.seed, (1 << 40) + 3);
            Some(unit_spectral_hermitian::<T, _>(
                1usize << arch.total_qubits(),
                &mut rng,
            )?)
        }
        _ => None,
    };
    let ops = TaskOperators {
        povm0,
        povm1,
        observable: obs,
        crosstalk_h0,
    };

    let prepare = |s: &LabeledHamiltonian<T>| prepare_sample(cfg, &arch, &probe, s, &ops);
    let train: Vec<PreparedSample<T>> = working
        .train
        .par_iter()
        .map(prepare)
        .collect::<Result<_>>()?;

    let loss = BatchLossFn::new(train.iter().map(|s| s.evaluator.clone()).collect(), false)?;
    let mut rng = substream(cfg.seed, (1 << 40) + 1);
    let init = ParameterVector::new(&arch, uniform_angles::<T, _>(arch.theta_len(), &mut rng), None)?;
    let (trained, loss_curve, last_grad) = minimize(
        &loss,
        init,
        cfg.optimizer,
        cfg.learning_rate,
        cfg.epochs,
    )?;

    // evaluation: note the train accuracy is reported against the (possibly
    // flipped) training labels actually optimized
    let train_preds: Vec<u8> = train
        .par_iter()
        .map(|s| s.predictor.value(&trained).map(|v| u8::from(v >= T::zero())))
        .collect::<Result<_>>()?;
    let train_truth: Vec<u8> = train.iter().map(|s| s.label).collect();
    let train_accuracy = crate::model::accuracy(&train_preds, &train_truth)?;

    let test: Vec<PreparedSample<T>> = working
        .test
        .par_iter()
        .map(prepare)
        .collect::<Result<_>>()?;
    let mut per_sample = Vec::with_capacity(test.len());
    let fhats: Vec<T> = test
        .par_iter()
        .map(|s| s.predictor.value(&trained))
        .collect::<Result<_>>()?;
    let mut predictions = Vec::with_capacity(test.len());
    let mut truth = Vec::with_capacity(test.len());
    for (s, fhat) in test.iter().zip(fhats) {
        let pred = u8::from(fhat >= T::zero());
        predictions.push(pred);
        truth.push(s.label);
        per_sample.push(SptRow {
            lambda: s.meta.unwrap_or(f64::NAN),
            truth: s.label,
            predicted: pred,
            fhat: fhat.as_f64(),
        });
    }
    let test_accuracy = crate::model::accuracy(&predictions, &truth)?;
    let (grad_mean, grad_variance) = mean_and_variance(&last_grad);

    Ok((
        TrainingMetrics {
            loss_curve,
            train_accuracy,
            test_accuracy,
            predictions,
            truth,
            grad_mean,
            grad_variance,
            trained: trained.theta.iter().map(|t| t.as_f64()).collect(),
        },
        per_sample,
    ))
}

/// Train the binary classifier of the configured feature against Haar
/// negatives and report test accuracy.
pub fn train_classifier<T: Scalar>(cfg: &TrainConfig) -> Result<RunResult> {
    let start = Instant::now();
    let dataset = data::build_dataset::<T>(cfg.feature, cfg.n, cfg.total, cfg.train_size, cfg.seed)?;
    let (metrics, _) = run_training(cfg, &dataset)?;
    Ok(RunResult {
        seed: cfg.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        metrics: Metrics::Training(metrics),
    })
}

/// Per-test-sample record of a phase-detection run.
#[derive(Debug, Clone, Serialize)]
pub struct SptRow {
    pub lambda: f64,
    pub truth: u8,
    pub predicted: u8,
    pub fhat: f64,
}

/// One point of the training-size sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SptSweepRow {
    pub train_size: usize,
    pub repeats: usize,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SptConfig {
    pub train: TrainConfig,
    /// Optional training-size sweep, re-splitting the same pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_sizes: Option<Vec<usize>>,
    #[serde(default = "default_sweep_repeats")]
    pub sweep_repeats: usize,
}

fn default_sweep_repeats() -> usize {
    20
}

/// Phase-detection experiment on the cluster-Ising data: train, report
/// per-coupling predictions, and optionally sweep the training size.
pub fn spt_experiment<T: Scalar>(cfg: &SptConfig) -> Result<RunResult> {
    if cfg.train.feature != FeatureTag::ClusterIsing {
        return Err(Error::InvalidArgument(
            "phase detection runs on the cluster-Ising feature".into(),
        ));
    }
    let start = Instant::now();
    let dataset = data::build_dataset::<T>(
        cfg.train.feature,
        cfg.train.n,
        cfg.train.total,
        cfg.train.train_size,
        cfg.train.seed,
    )?;
    let (training, per_sample) = run_training(&cfg.train, &dataset)?;

    let sweep = match &cfg.train_sizes {
        None => None,
        Some(sizes) => {
            let mut rows = Vec::with_capacity(sizes.len());
            for &size in sizes {
                let mut accs = Vec::with_capacity(cfg.sweep_repeats);
                for rep in 0..cfg.sweep_repeats {
                    let mut sub = cfg.train.clone();
                    sub.train_size = size;
                    // fresh split of the same pool per repeat
                    sub.seed = cfg
                        .train
                        .seed
                        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(rep as u64 + 1));
                    let ds = data::build_dataset::<T>(
                        sub.feature,
                        sub.n,
                        sub.total,
                        sub.train_size,
                        sub.seed,
                    )?;
                    let (m, _) = run_training(&sub, &ds)?;
                    accs.push(m.test_accuracy);
                }
                let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                rows.push(SptSweepRow {
                    train_size: size,
                    repeats: cfg.sweep_repeats,
                    mean_accuracy: mean,
                    min_accuracy: accs.iter().copied().fold(f64::INFINITY, f64::min),
                    max_accuracy: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                });
            }
            Some(rows)
        }
    };

    Ok(RunResult {
        seed: cfg.train.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        metrics: Metrics::Spt {
            training,
            per_sample,
            sweep,
        },
    })
}

// ---------------------------------------------------------------------------
// overlap scans

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapScanConfig {
    pub n_list: Vec<usize>,
    pub lambda_start: f64,
    pub lambda_stop: f64,
    pub lambda_points: usize,
    pub probes: Vec<ProbeSpec>,
    #[serde(default = "default_include_zero")]
    pub include_zero_tuple: bool,
}

fn default_include_zero() -> bool {
    true
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlapRow {
    pub n: usize,
    pub lambda: f64,
    pub probe: String,
    pub r2: f64,
}

fn probe_name(p: &ProbeSpec) -> String {
    match p {
        ProbeSpec::Zeros => "zeros".into(),
        ProbeSpec::Plus => "plus".into(),
        ProbeSpec::Minus => "minus".into(),
        ProbeSpec::MixedPlus { p } => format!("mixed_plus_{p}"),
        ProbeSpec::MaximallyMixed => "maximally_mixed".into(),
    }
}

/// Eigenspace overlap of each probe against the cluster-Ising Hamiltonian
/// over a coupling grid.
pub fn overlap_scan<T: Scalar>(cfg: &OverlapScanConfig) -> Result<RunResult> {
    if cfg.lambda_points < 1 {
        return Err(Error::InvalidArgument("need at least one grid point".into()));
    }
    let start = Instant::now();
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        for k in 0..cfg.lambda_points {
            let frac = if cfg.lambda_points == 1 {
                0.0
            } else {
                k as f64 / (cfg.lambda_points - 1) as f64
            };
            let lambda = cfg.lambda_start + frac * (cfg.lambda_stop - cfg.lambda_start);
            let h = data::gen_cluster_ising::<T>(n, T::lit(lambda))?;
            let eig = dla::joint_eigenspaces(&[h], T::lit(dla::EIGENVALUE_GROUP_TOL))?;
            for probe in &cfg.probes {
                let rho = probe.state::<T>(n)?;
                let rep = crate::overlap::joint_overlap(&eig, &rho, cfg.include_zero_tuple)?;
                rows.push(OverlapRow {
                    n,
                    lambda,
                    probe: probe_name(probe),
                    r2: rep.value.as_f64(),
                });
            }
        }
    }
    Ok(RunResult {
        seed: 0,
        wall_time_s: start.elapsed().as_secs_f64(),
        metrics: Metrics::OverlapScan { rows },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_gradstats(feature: GradFeature, target: GradTarget) -> GradStatConfig {
        GradStatConfig {
            feature,
            n_list: vec![1],
            t_list: None,
            m: 1,
            slots: 4,
            layers: 1,
            samples: 40,
            target,
            probe: None,
            convention: GradConvention::Rotation,
            seed: 11,
        }
    }

    #[test]
    fn sanity_circuit_statistics() {
        // the single-qubit R_Y circuit measured in Z has loss cos(theta) and
        // derivative -sin(theta); over theta ~ U[0, 2pi) the mean is 0 and
        // the variance 1/2. exercises the same substream + stats pipeline
        // the sampling harness uses.
        let samples = 500;
        let mut grads = Vec::with_capacity(samples);
        for s in 0..samples {
            let mut rng = substream(123, s as u64);
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            grads.push(-theta.sin());
        }
        let (mean, var) = mean_and_variance(&grads);
        let stderr = (var / samples as f64).sqrt();
        assert!(mean.abs() <= 3.0 * stderr);
        // sd of the sample variance of a bounded variable ~ sqrt(2/N)
        assert!((var - 0.5).abs() <= 3.0 * (2.0 / samples as f64).sqrt() * 0.5);
    }

    #[test]
    fn gradstats_zero_mean_and_determinism() {
        let cfg = tiny_gradstats(GradFeature::FixedPauliZ, GradTarget::default());
        let run = gradient_statistics::<f64>(&cfg).unwrap();
        let rows = match &run.metrics {
            Metrics::GradStats { rows, .. } => rows.clone(),
            _ => panic!(),
        };
        assert_eq!(rows.len(), 1);
        assert!(rows[0].mean.abs() <= 3.0 * rows[0].stderr);
        assert!(rows[0].predicted_variance.is_some());

        // bit-identical reruns
        let rerun = gradient_statistics::<f64>(&cfg).unwrap();
        match (&run.metrics, &rerun.metrics) {
            (Metrics::GradStats { raw: a, .. }, Metrics::GradStats { raw: b, .. }) => {
                assert_eq!(a, b);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn gradstats_convention_scaling() {
        let mut cfg = tiny_gradstats(GradFeature::FixedPauliZ, GradTarget::default());
        cfg.probe = Some(ProbeSpec::Plus);
        let rot = gradient_statistics::<f64>(&cfg).unwrap();
        cfg.convention = GradConvention::Generator;
        let gen = gradient_statistics::<f64>(&cfg).unwrap();
        match (&rot.metrics, &gen.metrics) {
            (
                Metrics::GradStats { rows: r1, raw: g1 },
                Metrics::GradStats { rows: r2, raw: g2 },
            ) => {
                // samples scale by -2, variance by 4, and so does the predictor
                for (a, b) in g1[0].iter().zip(g2[0].iter()) {
                    assert!((b + 2.0 * a).abs() <= 1e-12);
                }
                assert!((r2[0].variance - 4.0 * r1[0].variance).abs() <= 1e-9);
                let (p1, p2) = (
                    r1[0].predicted_variance.unwrap(),
                    r2[0].predicted_variance.unwrap(),
                );
                assert!((p2 - 4.0 * p1).abs() <= 1e-9);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn gradstats_phi_target() {
        let cfg = tiny_gradstats(GradFeature::FixedPauliZ, GradTarget::Phi { slot: 0 });
        let run = gradient_statistics::<f64>(&cfg).unwrap();
        match &run.metrics {
            Metrics::GradStats { rows, .. } => {
                assert!(rows[0].predicted_variance.is_some());
                assert!(rows[0].variance > 0.0);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn gradstats_slot_sweep_mode() {
        let mut cfg = tiny_gradstats(GradFeature::Diagonal, GradTarget::default());
        cfg.t_list = Some(vec![2, 4]);
        cfg.samples = 10;
        let run = gradient_statistics::<f64>(&cfg).unwrap();
        match &run.metrics {
            Metrics::GradStats { rows, .. } => {
                assert_eq!(rows.len(), 2);
                assert_eq!(rows[0].slots, 2);
                assert_eq!(rows[1].slots, 4);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn bootstrap_ci_brackets_variance() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let values: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, var) = mean_and_variance(&values);
        let (lo, hi) = bootstrap_variance_ci(&values, 500, 0.01, 7);
        assert!(lo <= var && var <= hi);
        assert!(lo > 0.0);
        // deterministic
        let again = bootstrap_variance_ci(&values, 500, 0.01, 7);
        assert_eq!((lo, hi), again);
    }

    #[test]
    fn label_flip_cases() {
        let split = data::build_dataset::<f64>(FeatureTag::Pauli, 1, 20, 10, 5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let same = label_flip(&split, 0.0, &mut rng).unwrap();
        for (a, b) in split.train.iter().zip(same.train.iter()) {
            assert_eq!(a.label, b.label);
        }
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let flipped = label_flip(&split, 1.0, &mut rng).unwrap();
        for (a, b) in split.train.iter().zip(flipped.train.iter()) {
            assert_eq!(a.label, 1 - b.label);
        }
        for (a, b) in split.test.iter().zip(flipped.test.iter()) {
            assert_eq!(a.label, b.label);
        }
        assert!(label_flip(&split, 1.5, &mut rng).is_err());

        // rate 0.05 over many labels: binomial count within 3 sigma
        let big = data::build_dataset::<f64>(FeatureTag::Pauli, 1, 800, 400, 6).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let noisy = label_flip(&big, 0.05, &mut rng).unwrap();
        let flips = big
            .train
            .iter()
            .zip(noisy.train.iter())
            .filter(|(a, b)| a.label != b.label)
            .count() as f64;
        let expect = 0.05 * 400.0;
        let sigma = (400.0f64 * 0.05 * 0.95).sqrt();
        assert!((flips - expect).abs() <= 3.0 * sigma);
    }

    #[test]
    fn crosstalk_embed_cases() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let h = data::gen_involutory::<f64, _>(1, &mut rng);
        let gen = data::embedding_generator(FeatureTag::Involutory, &h);
        let embedded = crate::model::control_embed_generator(&gen, 1, "1").unwrap();
        let h0 = unit_spectral_hermitian::<f64, _>(4, &mut rng).unwrap();

        // delta = 0 reproduces the ideal gate
        let ideal = crosstalk_embed(&embedded, 0.0, &h0).unwrap();
        let direct = expm_i(&embedded, 1.0).unwrap();
        assert!(ideal.matrix().max_abs_diff(direct.matrix()) <= 1e-12);

        // unitary at any delta, and first-order close at delta = 0.01
        let noisy = crosstalk_embed(&embedded, 0.01, &h0).unwrap();
        assert!(noisy.matrix().unitarity_deviation() <= 1e-9);
        let dist = noisy.matrix().sub(direct.matrix()).unwrap().frobenius_norm();
        assert!(dist <= 2.0 * 0.01 * 2.0); // 2 delta sqrt(dim)

        // spectral-norm bound enforced
        let big = h0.scale_real(1.5);
        assert!(crosstalk_embed(&embedded, 0.01, &big).is_err());
    }

    #[test]
    fn optimizer_convex_slice() {
        // single rotation, single sample: loss = sin^2(theta/2)
        struct Slice;
        impl LossFunction<f64> for Slice {
            fn theta_len(&self) -> usize {
                1
            }
            fn phi_len(&self) -> usize {
                0
            }
            fn evaluate(&self, p: &ParameterVector<f64>) -> Result<f64> {
                Ok((p.theta[0] / 2.0).sin().powi(2))
            }
        }
        let init = ParameterVector {
            theta: vec![2.0],
            phi: None,
        };
        let (_, curve) =
            minimize_loss(&Slice, init, OptimizerKind::Adam, 0.1, 200).unwrap();
        assert!(curve.last().unwrap() <= &1e-6, "final {:?}", curve.last());

        let init_gd = ParameterVector {
            theta: vec![1.0],
            phi: None,
        };
        let (_, curve_gd) =
            minimize_loss(&Slice, init_gd, OptimizerKind::GradientDescent, 0.5, 200).unwrap();
        assert!(curve_gd.last().unwrap() <= &1e-6);
    }

    #[test]
    fn training_runs_and_is_deterministic() {
        let cfg = TrainConfig {
            feature: FeatureTag::Pauli,
            n: 2,
            m: 1,
            slots: 2,
            layers: 1,
            total: 24,
            train_size: 8,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.1,
            epochs: 10,
            noise: NoiseSpec::None,
            probe: None,
            embed_scale: 1.0,
            seed: 17,
        };
        let run = train_classifier::<f64>(&cfg).unwrap();
        let m1 = match &run.metrics {
            Metrics::Training(m) => m.clone(),
            _ => panic!(),
        };
        assert_eq!(m1.loss_curve.len(), 10);
        assert!((0.0..=1.0).contains(&m1.test_accuracy));
        assert!(m1.loss_curve.iter().all(|l| l.is_finite()));
        // loss should move downhill overall
        assert!(m1.loss_curve.last().unwrap() <= &m1.loss_curve[0]);

        let rerun = train_classifier::<f64>(&cfg).unwrap();
        match &rerun.metrics {
            Metrics::Training(m2) => {
                assert_eq!(m1.loss_curve, m2.loss_curve);
                assert_eq!(m1.predictions, m2.predictions);
                assert_eq!(m1.test_accuracy, m2.test_accuracy);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn zero_epoch_rejected_and_label_rate_checked() {
        let mut cfg = TrainConfig {
            feature: FeatureTag::Pauli,
            n: 1,
            m: 1,
            slots: 1,
            layers: 1,
            total: 8,
            train_size: 4,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.1,
            epochs: 0,
            noise: NoiseSpec::None,
            probe: None,
            embed_scale: 1.0,
            seed: 1,
        };
        assert!(train_classifier::<f64>(&cfg).is_err());
        cfg.epochs = 1;
        cfg.noise = NoiseSpec::LabelFlip { rate: 2.0 };
        assert!(train_classifier::<f64>(&cfg).is_err());
    }

    #[test]
    fn overlap_scan_rows() {
        let cfg = OverlapScanConfig {
            n_list: vec![3],
            lambda_start: 0.0,
            lambda_stop: 2.0,
            lambda_points: 3,
            probes: vec![ProbeSpec::Zeros, ProbeSpec::Minus],
            include_zero_tuple: true,
        };
        let run = overlap_scan::<f64>(&cfg).unwrap();
        match &run.metrics {
            Metrics::OverlapScan { rows } => {
                assert_eq!(rows.len(), 6);
                for r in rows {
                    assert!((0.0..=1.0 + 1e-10).contains(&r.r2));
                }
            }
            _ => panic!(),
        }
    }

    #[test]
    fn spt_rejects_wrong_feature() {
        let cfg = SptConfig {
            train: TrainConfig {
                feature: FeatureTag::Pauli,
                n: 3,
                m: 1,
                slots: 2,
                layers: 1,
                total: 12,
                train_size: 4,
                optimizer: OptimizerKind::Adam,
                learning_rate: 0.1,
                epochs: 2,
                noise: NoiseSpec::None,
                probe: None,
                embed_scale: 1.0,
                seed: 2,
            },
            train_sizes: None,
            sweep_repeats: 1,
        };
        assert!(spt_experiment::<f64>(&cfg).is_err());
    }

    #[test]
    fn spt_tiny_run() {
        let cfg = SptConfig {
            train: TrainConfig {
                feature: FeatureTag::ClusterIsing,
                n: 3,
                m: 1,
                slots: 2,
                layers: 1,
                total: 16,
                train_size: 6,
                optimizer: OptimizerKind::Adam,
                learning_rate: 0.1,
                epochs: 5,
                noise: NoiseSpec::None,
                probe: Some(ProbeSpec::Plus),
                embed_scale: 1.0,
                seed: 3,
            },
            train_sizes: None,
            sweep_repeats: 1,
        };
        let run = spt_experiment::<f64>(&cfg).unwrap();
        match &run.metrics {
            Metrics::Spt {
                per_sample,
                training,
                sweep,
            } => {
                assert_eq!(per_sample.len(), 10);
                for row in per_sample {
                    assert!(row.lambda.is_finite());
                    assert!((0.0..=2.0).contains(&row.lambda));
                }
                assert!((0.0..=1.0).contains(&training.test_accuracy));
                assert!(sweep.is_none());
            }
            _ => panic!(),
        }
    }
}
