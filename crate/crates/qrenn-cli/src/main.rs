//! `qrenn` — batch experiment runner.
//!
//! Usage: `qrenn <subcommand> --config <path> [--seed N] [--output DIR]
//! [--threads K]`. Each run executes one experiment, writes CSV tables and a
//! JSON manifest into the output directory, and prints a one-line summary.
//! CSV contents are a pure function of (config, seed, code version).

use anyhow::Context;
use qrenn_cli::{config, output};
use clap::Parser;
use config::{CommandName, CommandParams};
use qrenn_core::bench::{self, Metrics};
use qrenn_core::dla;
use qrenn_core::numerics::{pauli_word, HermitianOperator, Pauli};
use serde_json::json;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(
    name = "qrenn",
    about = "Controlled-embedding recurrent circuit experiments"
)]
struct Cli {
    /// Subcommand: gradstats | train | spt | dla-analyze | overlap-scan | dataset-gen
    command: String,
    /// Path to the TOML config
    #[arg(long)]
    config: PathBuf,
    /// Seed override (required for stochastic commands if absent from the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (0 = auto); falls back to QRENN_THREADS
    #[arg(long)]
    threads: Option<usize>,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
        }
        Err(err) => {
            // machine-readable error record on stderr
            let record = json!({ "error": format!("{err:#}") });
            eprintln!("{record}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let text = std::fs::read_to_string(&cli.config)
        .with_context(|| format!("reading config {}", cli.config.display()))?;
    let mut cfg = config::parse_config(&text, cli.seed)?;
    if cfg.command.as_str() != cli.command {
        anyhow::bail!(
            "config is for `{}` but the `{}` subcommand was invoked",
            cfg.command.as_str(),
            cli.command
        );
    }
    if let Some(dir) = cli.output {
        cfg.output_dir = dir;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    } else if let Ok(env) = std::env::var("QRENN_THREADS") {
        cfg.threads = env
            .parse()
            .context("QRENN_THREADS must be a non-negative integer")?;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("initializing the worker pool")?;
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    // effective configuration with defaults applied, reparseable as-is
    std::fs::write(
        cfg.output_dir.join("config.effective.toml"),
        config::serialize_config(&cfg)?,
    )?;

    let started = Instant::now();
    let echo = config::config_echo_json(&cfg)?;
    let dir = cfg.output_dir.clone();
    let mut outputs: Vec<String> = Vec::new();

    let (summary, summary_json) = match &cfg.params {
        CommandParams::Gradstats(p) => {
            let result = bench::gradient_statistics::<f64>(p)?;
            let Metrics::GradStats { rows, .. } = &result.metrics else {
                unreachable!()
            };
            let path = output::write_gradstats_csv(&dir, rows)?;
            outputs.push(file_name(&path));
            let last = rows.last().expect("at least one row");
            (
                format!(
                    "gradstats: {} points, last variance {:.4e} (predicted {})",
                    rows.len(),
                    last.variance,
                    last.predicted_variance
                        .map(|p| format!("{p:.4e}"))
                        .unwrap_or_else(|| "n/a".into())
                ),
                json!({ "rows": rows.len(), "last_variance": last.variance,
                        "last_predicted_variance": last.predicted_variance }),
            )
        }
        CommandParams::Train(p) => {
            let result = bench::train_classifier::<f64>(p)?;
            let Metrics::Training(m) = &result.metrics else {
                unreachable!()
            };
            outputs.push(file_name(&output::write_loss_csv(&dir, &m.loss_curve)?));
            outputs.push(file_name(&output::write_predictions_csv(&dir, m)?));
            (
                format!(
                    "train[{}]: test_accuracy {:.4}, final loss {:.4}",
                    p.feature.as_str(),
                    m.test_accuracy,
                    m.loss_curve.last().copied().unwrap_or(f64::NAN)
                ),
                json!({
                    "test_accuracy": m.test_accuracy,
                    "train_accuracy": m.train_accuracy,
                    "final_loss": m.loss_curve.last(),
                    "grad_mean": m.grad_mean,
                    "grad_variance": m.grad_variance,
                }),
            )
        }
        CommandParams::Spt(p) => {
            let result = bench::spt_experiment::<f64>(p)?;
            let Metrics::Spt {
                training,
                per_sample,
                sweep,
            } = &result.metrics
            else {
                unreachable!()
            };
            outputs.push(file_name(&output::write_loss_csv(&dir, &training.loss_curve)?));
            outputs.push(file_name(&output::write_spt_csv(&dir, per_sample)?));
            if let Some(rows) = sweep {
                outputs.push(file_name(&output::write_sweep_csv(&dir, rows)?));
            }
            (
                format!("spt: test_accuracy {:.4}", training.test_accuracy),
                json!({
                    "test_accuracy": training.test_accuracy,
                    "train_accuracy": training.train_accuracy,
                    "final_loss": training.loss_curve.last(),
                }),
            )
        }
        CommandParams::DlaAnalyze(p) => {
            let report = dla_analyze(p)?;
            let path = dir.join("dla.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record([
                "m",
                "n",
                "r",
                "closure_dim",
                "commutator_ideal_dim",
                "center_dim",
            ])?;
            w.write_record([
                p.m.to_string(),
                p.n.to_string(),
                report.r.to_string(),
                report.closure_dim.to_string(),
                report.commutator_ideal_dim.to_string(),
                report.center_dim.to_string(),
            ])?;
            w.flush()?;
            outputs.push(file_name(&path));
            (
                format!(
                    "dla-analyze: closure_dim={} ideal_dims={:?} center_dim={} ({})",
                    report.closure_dim, report.ideal_dims, report.center_dim, report.center_matches
                ),
                json!({
                    "closure_dim": report.closure_dim,
                    "ideal_dims": report.ideal_dims,
                    "commutator_ideal_dim": report.commutator_ideal_dim,
                    "center_dim": report.center_dim,
                    "center_matches": report.center_matches,
                    "r": report.r,
                }),
            )
        }
        CommandParams::OverlapScan(p) => {
            let result = bench::overlap_scan::<f64>(p)?;
            let Metrics::OverlapScan { rows } = &result.metrics else {
                unreachable!()
            };
            outputs.push(file_name(&output::write_overlap_csv(&dir, rows)?));
            // flatness report per (n, probe): max/min ratio over the grid,
            // reported rather than asserted
            let mut keys: Vec<(usize, String)> = rows
                .iter()
                .map(|r| (r.n, r.probe.clone()))
                .collect();
            keys.sort();
            keys.dedup();
            let mut flatness = Vec::new();
            for (n, probe) in keys {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.n == n && r.probe == probe)
                    .map(|r| r.r2)
                    .collect();
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                flatness.push(json!({
                    "n": n,
                    "probe": probe,
                    "max_r2": max,
                    "min_r2": min,
                    "max_over_min": if min > 0.0 { max / min } else { f64::INFINITY },
                }));
            }
            (
                format!("overlap-scan: {} rows", rows.len()),
                json!({ "rows": rows.len(), "flatness": flatness }),
            )
        }
        CommandParams::DatasetGen(p) => {
            let split =
                qrenn_core::data::build_dataset::<f64>(p.feature, p.n, p.total, p.train_size, p.seed)?;
            qrenn_core::data::write_dataset(&split, p.feature, p.n, &dir)?;
            outputs.push("manifest.json".into());
            outputs.push("matrices.bin".into());
            let hash = output::sha256_file(&dir.join("matrices.bin"))?;
            (
                format!(
                    "dataset-gen[{}]: {} train / {} test, sha256 {}",
                    p.feature.as_str(),
                    split.train.len(),
                    split.test.len(),
                    &hash[..16]
                ),
                json!({
                    "train": split.train.len(),
                    "test": split.test.len(),
                    "dataset_sha256": hash,
                }),
            )
        }
    };

    let mut dataset_hashes = serde_json::Map::new();
    let matrices = dir.join("matrices.bin");
    if matrices.exists() {
        dataset_hashes.insert("matrices.bin".into(), output::sha256_file(&matrices)?.into());
    }

    let manifest = json!({
        "command": cfg.command.as_str(),
        "config": echo,
        "seed": cfg.seed,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "outputs": outputs,
        "dataset_hashes": dataset_hashes,
        "summary": summary_json,
    });
    let manifest_path = if cfg.command == CommandName::DatasetGen {
        // the dataset writer owns manifest.json; keep the run record separate
        dir.join("run.json")
    } else {
        dir.join("manifest.json")
    };
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    Ok(summary)
}

fn file_name(p: &std::path::Path) -> String {
    p.file_name().unwrap().to_string_lossy().into_owned()
}

struct DlaReport {
    closure_dim: usize,
    ideal_dims: Vec<usize>,
    commutator_ideal_dim: usize,
    center_dim: usize,
    r: usize,
    center_matches: &'static str,
}

fn dla_analyze(p: &config::DlaAnalyzeConfig) -> anyhow::Result<DlaReport> {
    use qrenn_core::scalar::Scalar;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(p.seed);
    let h: HermitianOperator<f64> = match p.hamiltonian {
        config::HamiltonianSpec::PauliZ => {
            HermitianOperator::new(pauli_word::<f64>(&vec![Pauli::Z; p.n]))
                .expect("Z word is Hermitian")
        }
        config::HamiltonianSpec::RandomSpectrum { r } => {
            qrenn_core::data::gen_with_spectrum::<f64, _>(p.n, r, &mut rng)?
        }
        config::HamiltonianSpec::ClusterIsing { lambda } => {
            qrenn_core::data::gen_cluster_ising::<f64>(p.n, lambda)?
        }
        config::HamiltonianSpec::Diagonal => qrenn_core::data::gen_diagonal::<f64, _>(p.n, &mut rng),
    };
    let eig = dla::joint_eigenspaces(std::slice::from_ref(&h), f64::lit(dla::EIGENVALUE_GROUP_TOL))?;
    let r = eig.len();
    let control = "1".repeat(p.m);
    let gens = dla::qrenn_generator_set(p.m, std::slice::from_ref(&h), &control)?;
    let max_dim = p.max_dim.unwrap_or_else(|| dla::default_max_closure_dim(p.m, r));
    let closure = dla::lie_closure(&gens, p.tol, max_dim)?;
    let dec = dla::decompose(&closure, p.m, &eig)?;
    let center_dim = dec.center.dimension();
    let center_matches = if center_dim == 1 {
        "fixed_generator_span"
    } else if center_dim == r {
        "projector_span"
    } else {
        "other"
    };
    Ok(DlaReport {
        closure_dim: closure.dimension(),
        ideal_dims: dec.ideals.iter().map(|b| b.dimension()).collect(),
        commutator_ideal_dim: dec.commutator_ideal_dim(),
        center_dim,
        r,
        center_matches,
    })
}
