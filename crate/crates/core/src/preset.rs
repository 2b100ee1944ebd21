//! Shipped preset configurations: named, self-contained scenario files
//! bundling dataset recipe, architecture, training schedule, and the
//! acceptance thresholds that gate them.

use std::path::{Path, PathBuf};

use crate::dataset::GenConfig;
use crate::nn::ArchSpec;
use crate::train::TrainConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AcceptanceSpec {
    /// Range-normalized L2 ceiling for the deterministic model.
    pub l2_range_max: Option<f64>,
    /// Bayesian-mean error allowed as a multiple of the deterministic error.
    pub bayes_factor_max: Option<f64>,
    /// Probe-line coverage floor for the mean +- 2 std band.
    pub coverage_min: Option<f64>,
    /// FEM-solve / NN-forward wall-time ratio floor.
    pub speed_ratio_min: Option<f64>,
    /// Monte Carlo samples for the Bayesian statistics.
    pub uq_samples: Option<usize>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub gen: GenConfig,
    /// Held-out BVPs for evaluation; falls back to `gen` when absent.
    pub eval_gen: Option<GenConfig>,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub bayes: Option<TrainConfig>,
    /// Load-stepping count for the nonlinear reference solver.
    #[serde(default = "default_load_steps")]
    pub fem_load_steps: usize,
    pub acceptance: AcceptanceSpec,
}

fn default_load_steps() -> usize {
    10
}

pub fn preset_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

pub fn load_preset(dir: &Path, name: &str) -> Result<Preset> {
    let path = preset_path(dir, name);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Error::Config(format!("unknown preset {name}: cannot read {}: {e}", path.display()))
    })?;
    let preset: Preset = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("preset {name} is malformed: {e}")))?;
    if preset.name != name {
        return Err(Error::Config(format!(
            "preset file {name}.json declares name {:?}",
            preset.name
        )));
    }
    Ok(preset)
}

pub fn list_presets(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("no preset directory {}: {e}", dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            name.strip_suffix(".json").map(str::to_string)
        })
        .collect();
    names.sort();
    for name in names {
        let preset = load_preset(dir, &name)?;
        out.push((preset.name, preset.description));
    }
    Ok(out)
}

/// Dry-run validation: the dataset recipe generates, the architecture
/// builds, and the shapes line up with the dataset.
pub fn validate_preset(preset: &Preset) -> Result<PresetReport> {
    preset.train.validate()?;
    if let Some(b) = &preset.bayes {
        b.validate()?;
    }
    let dataset = crate::dataset::generate_dataset(&preset.gen)?;
    for rec in &dataset.records {
        rec.channels.validate()?;
    }
    if let Some(eval_gen) = &preset.eval_gen {
        let eval_ds = crate::dataset::generate_dataset(eval_gen)?;
        if eval_ds.physics != dataset.physics || eval_ds.grid.n != dataset.grid.n {
            return Err(Error::Config(
                "eval_gen physics/grid differs from the training recipe".into(),
            ));
        }
    }
    let (out_n, out_c) = preset.arch.output_shape()?;
    if out_n != dataset.grid.n || out_c != dataset.physics.dof() {
        return Err(Error::Config(format!(
            "architecture output ({out_n}, {out_c}) does not match dataset ({}, {})",
            dataset.grid.n,
            dataset.physics.dof()
        )));
    }
    let mut rng = rand::SeedableRng::seed_from_u64(0);
    let det: crate::nn::Model<f32> = crate::nn::build(
        &preset.arch,
        crate::nn::ModelMode::Deterministic,
        &mut rng,
    )?;
    let bayes: crate::nn::Model<f32> =
        crate::nn::build(&preset.arch, crate::nn::ModelMode::Bayesian, &mut rng)?;
    Ok(PresetReport {
        name: preset.name.clone(),
        records: dataset.records.len(),
        augmented_len: dataset.len(),
        deterministic_parameters: det.parameter_count(),
        bayesian_parameters: bayes.parameter_count(),
    })
}

#[derive(Debug, serde::Serialize)]
pub struct PresetReport {
    pub name: String,
    pub records: usize,
    pub augmented_len: usize,
    pub deterministic_parameters: usize,
    pub bayesian_parameters: usize,
}
