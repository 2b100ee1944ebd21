//! Command-line surface: dataset generation, reference FEM solving,
//! training, prediction, evaluation, and benchmarking.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use pixelfem::preset;
use rand::rngs::StdRng;
use rand::SeedableRng;

use pixelfem::bundle::{BundleReader, BundleWriter};
use pixelfem::dataset::{generate_dataset, read_dataset, write_dataset, Dataset, GenConfig};
use pixelfem::evalrep::{eval_l2, export_field, ExportFormat};
use pixelfem::fem::{solve_linear, solve_nonlinear, wall_time_probe};
use pixelfem::nn::WeightsMode;
use pixelfem::physics::{JClampPolicy, Material, PhysicsKind};
use pixelfem::residual::ResidualEngine;
use pixelfem::scalar::Scalar;
use pixelfem::tape::Tape;
use pixelfem::train::{
    load_checkpoint, predict_mean, predict_uq, save_checkpoint, train, TrainConfig,
};
use pixelfem::{Error, FieldTensor, Result};

#[derive(Parser)]
#[command(name = "pixelfem", about = "Label-free weak-form PDE solver toolkit", version)]
struct Cli {
    /// Master random seed applied where a config does not pin one.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Numeric precision for training and prediction.
    #[arg(long, global = true, default_value = "f32", value_parser = ["f32", "f64"])]
    precision: String,

    /// Worker threads for independent solves; 1 is bitwise reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Preset directory.
    #[arg(long, global = true, default_value = "presets")]
    presets_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a BVP dataset from a config file or a preset.
    Gen {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Use the preset's held-out evaluation recipe instead.
        #[arg(long, default_value_t = false)]
        eval_split: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve dataset records with the classical FEM reference.
    Fem {
        #[arg(long)]
        dataset: PathBuf,
        /// Solve only this record id.
        #[arg(long)]
        record: Option<usize>,
        #[arg(long, default_value_t = 10)]
        load_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Run the preset's Bayesian phase (requires --warm-start).
        #[arg(long, default_value_t = false)]
        bayes: bool,
        #[arg(long)]
        warm_start: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict solutions from a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        record: Option<usize>,
        /// Monte Carlo samples (Bayesian checkpoints).
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long, default_value_t = 1e-8)]
        sigma1: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also export grayscale images of each mean field.
        #[arg(long, default_value_t = false)]
        images: bool,
    },
    /// Compare predictions against reference solutions.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the NN forward pass against the FEM solve.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        record: usize,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 10)]
        load_steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List or validate shipped presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    Validate { name: String },
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 1 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 4,
        Error::SolverDiverged { .. }
        | Error::NewtonDiverged { .. }
        | Error::SingularDeformation { .. }
        | Error::NonFinite { .. }
        | Error::WellPosedness(_)
        | Error::TrainingAborted { .. } => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, preset, eval_split, out } => {
            let mut gen_config: GenConfig = match (&config, &preset) {
                (Some(path), None) => read_json(path)?,
                (None, Some(name)) => {
                    let p = preset::load_preset(&cli.presets_dir, name)?;
                    if eval_split {
                        p.eval_gen.unwrap_or(p.gen)
                    } else {
                        p.gen
                    }
                }
                _ => return Err(Error::Config("gen needs --config or --preset".into())),
            };
            if let Some(seed) = cli.seed {
                gen_config.seed = seed;
            }
            let dataset = generate_dataset(&gen_config)?;
            write_dataset(&dataset, &out)?;
            println!(
                "generated {} records ({} items with augmentation) -> {}",
                dataset.records.len(),
                dataset.len(),
                out.display()
            );
            Ok(())
        }
        Command::Fem { dataset, record, load_steps, out } => {
            let ds = read_dataset(&dataset)?;
            let ids: Vec<usize> = match record {
                Some(id) => vec![id],
                None => (0..ds.records.len()).collect(),
            };
            std::fs::create_dir_all(&out)?;
            let mut reactions_csv = String::from("# pixelfem-reactions-v1\nrecord,component,reaction\n");
            for &id in &ids {
                let rec = ds
                    .records
                    .get(id)
                    .ok_or_else(|| Error::Config(format!("record {id} not in dataset")))?;
                let material = rec.material()?;
                let field = match material {
                    Material::Nonlinear(_) => {
                        solve_nonlinear(&rec.channels, &material, &ds.grid, load_steps)?.field
                    }
                    _ => solve_linear(&rec.channels, &material, &ds.grid)?,
                };
                let engine =
                    ResidualEngine::<f64>::new(ds.grid, material, JClampPolicy::disabled());
                let bundle = engine.bundle(&field, &rec.channels)?;
                let reactions = engine.reaction_forces(&bundle.total, &rec.channels);
                for (c, r) in reactions[0].iter().enumerate() {
                    reactions_csv.push_str(&format!("{id},{c},{r:.17e}\n"));
                }
                let mut w = BundleWriter::new();
                w.add("solution", &field);
                w.meta(serde_json::json!({
                    "record": id,
                    "reduced_residual_rms": bundle.reduced.rms(),
                }));
                w.write(&out.join(format!("record_{id:05}")))?;
            }
            std::fs::write(out.join("reactions.csv"), reactions_csv)?;
            println!("solved {} record(s) -> {}", ids.len(), out.display());
            Ok(())
        }
        Command::Train { dataset, config, preset, bayes, warm_start, out } => {
            let ds = read_dataset(&dataset)?;
            let (mut train_config, arch) = match (&config, &preset) {
                (Some(path), None) => {
                    #[derive(serde::Deserialize)]
                    struct FileConfig {
                        train: TrainConfig,
                        arch: pixelfem::nn::ArchSpec,
                    }
                    let fc: FileConfig = read_json(path)?;
                    (fc.train, fc.arch)
                }
                (None, Some(name)) => {
                    let p = preset::load_preset(&cli.presets_dir, name)?;
                    let cfg = if bayes {
                        p.bayes.ok_or_else(|| {
                            Error::Config(format!("preset {name} has no Bayesian phase"))
                        })?
                    } else {
                        p.train
                    };
                    (cfg, p.arch)
                }
                _ => return Err(Error::Config("train needs --config or --preset".into())),
            };
            if let Some(seed) = cli.seed {
                train_config.seed = seed;
            }
            let warm_path = warm_start
                .clone()
                .or_else(|| train_config.warm_start.clone().map(PathBuf::from));
            match cli.precision.as_str() {
                "f64" => run_train::<f64>(&ds, &arch, &train_config, warm_path.as_deref(), &out),
                _ => run_train::<f32>(&ds, &arch, &train_config, warm_path.as_deref(), &out),
            }
        }
        Command::Predict { checkpoint, dataset, record, samples, sigma1, out, images } => {
            let ds = read_dataset(&dataset)?;
            match cli.precision.as_str() {
                "f64" => run_predict::<f64>(&checkpoint, &ds, record, samples, sigma1, &out, images, cli.seed),
                _ => run_predict::<f32>(&checkpoint, &ds, record, samples, sigma1, &out, images, cli.seed),
            }
        }
        Command::Eval { predictions, references, dataset, out } => {
            let ds = read_dataset(&dataset)?;
            let mut preds = Vec::new();
            let mut refs = Vec::new();
            let mut masks = Vec::new();
            let mut has_neumann = Vec::new();
            for rec in &ds.records {
                let id = rec.meta.id;
                let p = BundleReader::open(&predictions.join(format!("record_{id:05}")))?;
                let r = BundleReader::open(&references.join(format!("record_{id:05}")))?;
                let name = if p.has("mean") { "mean" } else { "solution" };
                preds.push(p.get::<f64>(name)?);
                refs.push(r.get::<f64>("solution")?);
                masks.push(pixelfem::residual::build_masks(&rec.channels).m_bulk);
                has_neumann.push(rec.meta.has_neumann);
            }
            let report = eval_l2(&preds, &refs, &masks, &has_neumann)?;
            write_eval_csv(&out, &report)?;
            println!(
                "aggregate L2 {:.6e} (range-normalized {:.6e}) over {} BVP(s) -> {}",
                report.aggregate,
                report.aggregate_range_normalized,
                report.per_bvp_rms.len(),
                out.display()
            );
            Ok(())
        }
        Command::Bench { checkpoint, dataset, record, repeats, load_steps, out } => {
            let ds = read_dataset(&dataset)?;
            match cli.precision.as_str() {
                "f64" => run_bench::<f64>(&checkpoint, &ds, record, repeats, load_steps, out.as_deref()),
                _ => run_bench::<f32>(&checkpoint, &ds, record, repeats, load_steps, out.as_deref()),
            }
        }
        Command::Preset { action } => match action {
            PresetAction::List => {
                for (name, description) in preset::list_presets(&cli.presets_dir)? {
                    println!("{name}: {description}");
                }
                Ok(())
            }
            PresetAction::Validate { name } => {
                let p = preset::load_preset(&cli.presets_dir, &name)?;
                let report = preset::validate_preset(&p)?;
                println!("{}", serde_json::to_string_pretty(&report)?);
                Ok(())
            }
        },
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run_train<T: Scalar>(
    ds: &Dataset,
    arch: &pixelfem::nn::ArchSpec,
    config: &TrainConfig,
    warm: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let warm_model = warm.map(load_checkpoint::<T>).transpose()?;
    let clamp = match ds.physics {
        PhysicsKind::NonlinearElasticity => JClampPolicy::enabled(),
        _ => JClampPolicy::disabled(),
    };
    let result = train::<T>(ds, arch, config, warm_model.as_ref(), clamp)?;
    save_checkpoint(&result.model, out)?;
    let mut csv = String::from("# pixelfem-history-v1\nepoch,loss,sigma2,zero_init\n");
    for h in &result.history {
        csv.push_str(&format!(
            "{},{:.17e},{},{}\n",
            h.epoch,
            h.loss,
            h.sigma2.map(|s| format!("{s:.17e}")).unwrap_or_default(),
            h.zero_init
        ));
    }
    std::fs::write(out.join("history.csv"), csv)?;
    let last = result.history.last();
    println!(
        "trained {} epochs (final loss {:.6e}) -> {}",
        result.history.len(),
        last.map(|h| h.loss).unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_predict<T: Scalar>(
    checkpoint: &Path,
    ds: &Dataset,
    record: Option<usize>,
    samples: usize,
    sigma1: f64,
    out: &Path,
    images: bool,
    seed: Option<u64>,
) -> Result<()> {
    let model = load_checkpoint::<T>(checkpoint)?;
    let ids: Vec<usize> = match record {
        Some(id) => vec![id],
        None => (0..ds.records.len()).collect(),
    };
    std::fs::create_dir_all(out)?;
    let mut rng = StdRng::seed_from_u64(seed.unwrap_or(0));
    for &id in &ids {
        let rec = ds
            .records
            .get(id)
            .ok_or_else(|| Error::Config(format!("record {id} not in dataset")))?;
        let (mean, std) = match model.mode {
            pixelfem::nn::ModelMode::Bayesian => {
                predict_uq(&model, rec, samples, sigma1, &mut rng)?
            }
            pixelfem::nn::ModelMode::Deterministic => {
                let mean = predict_mean(&model, rec, &mut rng)?;
                let std = FieldTensor::filled(mean.shape(), sigma1.sqrt());
                (mean, std)
            }
        };
        let dir = out.join(format!("record_{id:05}"));
        let mut w = BundleWriter::new();
        w.add("mean", &mean).add("std", &std);
        w.meta(serde_json::json!({"record": id, "samples": samples}));
        w.write(&dir)?;
        if images {
            for c in 0..mean.shape()[3] {
                export_field(&mean, c, &dir.join(format!("mean_{c}.pgm")), ExportFormat::Pgm)?;
            }
        }
    }
    println!("predicted {} record(s) -> {}", ids.len(), out.display());
    Ok(())
}

fn run_bench<T: Scalar>(
    checkpoint: &Path,
    ds: &Dataset,
    record: usize,
    repeats: usize,
    load_steps: usize,
    out: Option<&Path>,
) -> Result<()> {
    let model = load_checkpoint::<T>(checkpoint)?;
    let rec = ds
        .records
        .get(record)
        .ok_or_else(|| Error::Config(format!("record {record} not in dataset")))?;
    let material = rec.material()?;
    let repeats = repeats.max(3);

    // Warmup + timed NN forwards (model load excluded).
    let mut rng = StdRng::seed_from_u64(1);
    let input: FieldTensor<T> = pixelfem::dataset::assemble_input(rec, Some(&mut rng));
    let mut nn_times = Vec::with_capacity(repeats);
    for i in 0..repeats + 2 {
        let (_, ms) = wall_time_probe(|| {
            let mut tape = Tape::new();
            model
                .forward(&mut tape, &input, None, WeightsMode::Mean, None)
                .map(|p| tape.value(p.output).sum())
        });
        if i >= 2 {
            nn_times.push(ms);
        }
    }

    let fem_repeats = repeats.min(7);
    let mut fem_times = Vec::with_capacity(fem_repeats);
    for i in 0..fem_repeats + 1 {
        let (res, ms) = wall_time_probe(|| match material {
            Material::Nonlinear(_) => {
                solve_nonlinear(&rec.channels, &material, &ds.grid, load_steps).map(|r| r.field)
            }
            _ => solve_linear(&rec.channels, &material, &ds.grid),
        });
        res?;
        if i >= 1 {
            fem_times.push(ms);
        }
    }

    let median = |v: &mut Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let nn_ms = median(&mut nn_times.clone());
    let fem_ms = median(&mut fem_times.clone());
    let ratio = fem_ms / nn_ms;
    let cov = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        var.sqrt() / mean
    };
    println!(
        "nn_forward_ms={nn_ms:.4} fem_solve_ms={fem_ms:.4} ratio={ratio:.1} nn_cov={:.3}",
        cov(&nn_times)
    );
    if let Some(path) = out {
        let csv = format!(
            "# pixelfem-bench-v1\nmetric,value\nnn_forward_ms,{nn_ms:.6}\nfem_solve_ms,{fem_ms:.6}\nratio,{ratio:.4}\nnn_cov,{:.6}\nfem_cov,{:.6}\n",
            cov(&nn_times),
            cov(&fem_times)
        );
        std::fs::write(path, csv)?;
    }
    Ok(())
}

fn write_eval_csv(path: &Path, report: &pixelfem::evalrep::EvalReport) -> Result<()> {
    let mut csv = String::new();
    if !path.exists() {
        csv.push_str("# pixelfem-eval-v1\nrecord,rms,range_rms,has_neumann\n");
    }
    for (i, ((rms, range), neumann)) in report
        .per_bvp_rms
        .iter()
        .zip(&report.per_bvp_range_rms)
        .zip(&report.has_neumann)
        .enumerate()
    {
        csv.push_str(&format!("{i},{rms:.17e},{range:.17e},{neumann}\n"));
    }
    csv.push_str(&format!(
        "aggregate,{:.17e},{:.17e},\n",
        report.aggregate, report.aggregate_range_normalized
    ));
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(csv.as_bytes())?;
    Ok(())
}
