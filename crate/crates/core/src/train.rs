//! Training loops for the residual-constrained networks: deterministic
//! mean-squared-residual loss and the Bayesian ELBO with a residual
//! likelihood, plus Adam/Nadam optimizers and Monte Carlo prediction.

use std::collections::HashMap;
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::bundle::{BundleReader, BundleWriter};
use crate::dataset::{assemble_input, BvpRecord, Dataset};
use crate::error::{Error, Result};
use crate::mesh::GridSpec;
use crate::nn::{build, ArchSpec, Model, ModelMode, WeightsMode};
use crate::physics::JClampPolicy;
use crate::residual::{BcChannels, ResidualEngine};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::FieldTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptKind {
    Adam,
    Nadam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Det,
    Bayes,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub zero_init_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptKind,
    pub mode: TrainMode,
    #[serde(default = "default_sigma")]
    pub sigma1: f64,
    #[serde(default = "default_sigma")]
    pub sigma2_init: f64,
    #[serde(default)]
    pub warm_start: Option<String>,
    pub seed: u64,
}

fn default_sigma() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.zero_init_epochs >= self.epochs && self.epochs > 0 {
            return Err(Error::Config(format!(
                "zero_init_epochs ({}) must be below epochs ({})",
                self.zero_init_epochs, self.epochs
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// First/second-moment accumulators with the standard published
/// hyperparameters; beta1 = 0.9, beta2 = 0.999, eps = 1e-7.
pub struct OptimizerState<T> {
    kind: OptKind,
    m: Vec<FieldTensor<T>>,
    v: Vec<FieldTensor<T>>,
    step: usize,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-7;

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptKind, shapes: &[Vec<usize>]) -> Self {
        Self {
            kind,
            m: shapes.iter().map(|s| FieldTensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| FieldTensor::zeros(s)).collect(),
            step: 0,
        }
    }

    /// One update over a flat list of (parameter, gradient) pairs.
    pub fn step(&mut self, params: &mut [&mut FieldTensor<T>], grads: &[FieldTensor<T>], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(BETA1);
        let b2 = T::from_f64_lossy(BETA2);
        let eps = T::from_f64_lossy(EPSILON);
        let lr = T::from_f64_lossy(lr);
        let bc1 = T::one() - T::from_f64_lossy(BETA1.powi(t));
        let bc2 = T::one() - T::from_f64_lossy(BETA2.powi(t));
        for i in 0..params.len() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let g = &grads[i];
            let p = &mut *params[i];
            for k in 0..g.len() {
                let gk = g.data()[k];
                let mk = b1 * m.data()[k] + (T::one() - b1) * gk;
                let vk = b2 * v.data()[k] + (T::one() - b2) * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let m_hat = mk / bc1;
                let v_hat = vk / bc2;
                let direction = match self.kind {
                    OptKind::Adam => m_hat,
                    // Nesterov momentum on the first moment.
                    OptKind::Nadam => b1 * m_hat + (T::one() - b1) * gk / bc1,
                };
                p.data_mut()[k] = p.data()[k] - lr * direction / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub loss: f64,
    pub sigma2: Option<f64>,
    pub zero_init: bool,
}

pub struct TrainOutput<T: Scalar> {
    pub model: Model<T>,
    pub history: Vec<EpochStat>,
}

/// Everything the loop needs per dataset; engines are cached per distinct
/// material (heterogeneous diffusivities rebuild only the tiny tables).
pub struct Trainer<T: Scalar> {
    pub grid: GridSpec,
    pub clamp: JClampPolicy,
    engines: HashMap<u64, ResidualEngine<T>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(grid: GridSpec, clamp: JClampPolicy) -> Self {
        Self { grid, clamp, engines: HashMap::new() }
    }

    fn engine(&mut self, record: &BvpRecord) -> Result<&ResidualEngine<T>> {
        let key = record.meta.diffusivity.unwrap_or(0.0).to_bits()
            ^ (record.meta.physics.dof() as u64);
        if !self.engines.contains_key(&key) {
            let engine = ResidualEngine::new(self.grid, record.material()?, self.clamp);
            self.engines.insert(key, engine);
        }
        Ok(self.engines.get(&key).unwrap())
    }
}

/// Batch view: stacked inputs, channels, and scalar parameters.
struct BatchData<T: Scalar> {
    input: FieldTensor<T>,
    scalars: Option<FieldTensor<T>>,
    bc: BcChannels<T>,
    /// True when every example shares one material.
    uniform_material: bool,
    first: BvpRecord,
}

fn assemble_batch<T: Scalar>(
    dataset: &Dataset,
    items: &[usize],
    rng: &mut StdRng,
) -> Result<BatchData<T>> {
    let records: Vec<&BvpRecord> = items.iter().map(|&i| dataset.record(i)).collect();
    let inputs: Vec<FieldTensor<T>> = records
        .iter()
        .map(|r| assemble_input::<T>(r, Some(rng)))
        .collect();
    let input_refs: Vec<&FieldTensor<T>> = inputs.iter().collect();
    let input = crate::ops::concat(&input_refs, 0)?;

    let scalars = if records[0].scalar_params.is_empty() {
        None
    } else {
        let width = records[0].scalar_params.len();
        let mut data = Vec::with_capacity(records.len() * width);
        for r in &records {
            for &s in &r.scalar_params {
                data.push(T::from_f64_lossy(s));
            }
        }
        Some(FieldTensor::from_raw(vec![records.len(), width], data))
    };

    let channels: Vec<BcChannels<T>> = records
        .iter()
        .map(|r| BcChannels {
            dirichlet: r.channels.dirichlet.cast::<T>(),
            neumann_x: r.channels.neumann_x.cast::<T>(),
            neumann_y: r.channels.neumann_y.cast::<T>(),
            norm: r.channels.norm,
        })
        .collect();
    let channel_refs: Vec<&BcChannels<T>> = channels.iter().collect();
    let bc = BcChannels::stack(&channel_refs)?;

    let d0 = records[0].meta.diffusivity;
    let uniform_material = records.iter().all(|r| r.meta.diffusivity == d0);
    Ok(BatchData { input, scalars, bc, uniform_material, first: records[0].clone() })
}

/// Scaled network output -> physical units on the tape.
fn denormalize_output<T: Scalar>(
    tape: &mut Tape<T>,
    out: Var,
    norm: &crate::dataset::Normalization,
) -> Result<Var> {
    let shifted = tape.add_scalar(out, T::from_f64_lossy(-0.5));
    Ok(tape.scale(shifted, T::from_f64_lossy(2.0 * norm.solution_amp)))
}

/// Mean over the batch of the summed squared reduced residual.
fn det_loss_var<T: Scalar>(
    tape: &mut Tape<T>,
    reduced: Var,
    batch: usize,
) -> Result<Var> {
    let ss = tape.sum_squares(reduced)?;
    Ok(tape.scale(ss, T::from_f64_lossy(1.0 / batch as f64)))
}

/// Mean squared deviation of the scaled outputs from the constant 0.5.
fn zero_init_loss_var<T: Scalar>(tape: &mut Tape<T>, out: Var) -> Result<Var> {
    let numel = tape.value(out).len();
    let centered = tape.add_scalar(out, T::from_f64_lossy(-0.5));
    let ss = tape.sum_squares(centered)?;
    Ok(tape.scale(ss, T::from_f64_lossy(1.0 / numel as f64)))
}

/// Batch ELBO: (1/M) KL + (K/2) ln(2 pi sigma2) + sum r^2 / (2 N sigma2),
/// with K the per-example entry count of the reduced residual and M the
/// number of mini-batches per epoch. sigma2 stays learnable via its log.
#[allow(clippy::too_many_arguments)]
fn bayes_loss_var<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    pass: &crate::nn::ForwardPass,
    reduced: Var,
    batch: usize,
    batches_per_epoch: usize,
) -> Result<Var> {
    let kl = model.kl_to_prior(tape, pass)?;
    let kl_term = tape.scale(kl, T::from_f64_lossy(1.0 / batches_per_epoch as f64));
    let s = pass
        .log_sigma2_var
        .ok_or_else(|| Error::Contract("Bayesian loss needs log_sigma2".into()))?;
    let k = (tape.value(reduced).len() / batch) as f64;
    let s_term = tape.scale(s, T::from_f64_lossy(k / 2.0));
    let const_term = T::from_f64_lossy(k / 2.0 * (2.0 * std::f64::consts::PI).ln());
    let s_term = tape.add_scalar(s_term, const_term);
    let rr = tape.sum_squares(reduced)?;
    let rr = tape.scale(rr, T::from_f64_lossy(1.0 / (2.0 * batch as f64)));
    let neg_s = tape.neg(s);
    let inv_sigma2 = tape.exp(neg_s);
    let data_term = tape.mul(inv_sigma2, rr)?;
    let partial = tape.add(kl_term, s_term)?;
    tape.add(partial, data_term)
}

/// Forward + residual + loss for one batch; returns the loss node and the
/// parameter leaves.
#[allow(clippy::too_many_arguments)]
fn batch_loss<T: Scalar>(
    trainer: &mut Trainer<T>,
    model: &Model<T>,
    tape: &mut Tape<T>,
    batch: &BatchData<T>,
    zero_init: bool,
    mode: TrainMode,
    batches_per_epoch: usize,
    rng: &mut StdRng,
) -> Result<(Var, crate::nn::ForwardPass)> {
    let weights = match (mode, &model.mode) {
        (TrainMode::Bayes, ModelMode::Bayesian) => WeightsMode::Flipout,
        _ => WeightsMode::Mean,
    };
    let pass = model.forward(tape, &batch.input, batch.scalars.as_ref(), weights, Some(rng))?;
    let n_batch = batch.input.shape()[0];

    if zero_init {
        let loss = zero_init_loss_var(tape, pass.output)?;
        return Ok((loss, pass));
    }

    let phys = denormalize_output(tape, pass.output, &batch.bc.norm)?;
    let reduced = if batch.uniform_material {
        let engine = trainer.engine(&batch.first)?;
        engine.evaluate(tape, phys, &batch.bc)?.reduced
    } else {
        // Per-example engines when materials differ within a batch.
        let sh = tape.value(phys).shape().to_vec();
        let (n, dof) = (sh[1], sh[3]);
        let mut parts = Vec::with_capacity(n_batch);
        for b in 0..n_batch {
            let sol = tape.slice(phys, &[b, 0, 0, 0], &[1, n, n, dof])?;
            let bc_b = BcChannels {
                dirichlet: crate::ops::slice(&batch.bc.dirichlet, &[b, 0, 0, 0], &[1, n, n, dof])?,
                neumann_x: crate::ops::slice(&batch.bc.neumann_x, &[b, 0, 0, 0], &[1, n, n, dof])?,
                neumann_y: crate::ops::slice(&batch.bc.neumann_y, &[b, 0, 0, 0], &[1, n, n, dof])?,
                norm: batch.bc.norm,
            };
            let rec = BvpRecord {
                channels: BcChannels {
                    dirichlet: bc_b.dirichlet.cast::<f64>(),
                    neumann_x: bc_b.neumann_x.cast::<f64>(),
                    neumann_y: bc_b.neumann_y.cast::<f64>(),
                    norm: bc_b.norm,
                },
                scalar_params: vec![],
                meta: batch.first.meta.clone(),
            };
            let _ = rec;
            let engine = trainer.engine(&batch.first)?;
            parts.push(engine.evaluate(tape, sol, &bc_b)?.reduced);
        }
        tape.concat(&parts, 0)?
    };

    let loss = match mode {
        TrainMode::Det => det_loss_var(tape, reduced, n_batch)?,
        TrainMode::Bayes => bayes_loss_var(tape, model, &pass, reduced, n_batch, batches_per_epoch)?,
    };
    Ok((loss, pass))
}

fn collect_grads<T: Scalar>(
    tape: &Tape<T>,
    grads: &Gradients<T>,
    pass: &crate::nn::ForwardPass,
) -> Vec<FieldTensor<T>> {
    let mut out = Vec::new();
    for (i, &mv) in pass.mean_vars.iter().enumerate() {
        out.push(tape.grad_or_zero(grads, mv));
        if let Some(rv) = pass.rho_vars[i] {
            out.push(tape.grad_or_zero(grads, rv));
        }
    }
    if let Some(sv) = pass.log_sigma2_var {
        out.push(tape.grad_or_zero(grads, sv));
    }
    out
}

fn trainable_shapes<T: Scalar>(model: &Model<T>) -> Vec<Vec<usize>> {
    let mut shapes = Vec::new();
    for p in &model.params {
        shapes.push(p.mean.shape().to_vec());
        if let Some(r) = &p.rho {
            shapes.push(r.shape().to_vec());
        }
    }
    if let Some(s) = &model.log_sigma2 {
        shapes.push(s.shape().to_vec());
    }
    shapes
}

fn apply_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut OptimizerState<T>,
    grads: &[FieldTensor<T>],
    lr: f64,
) {
    let mut refs: Vec<&mut FieldTensor<T>> = Vec::new();
    for p in &mut model.params {
        refs.push(&mut p.mean);
        if let Some(r) = &mut p.rho {
            refs.push(r);
        }
    }
    if let Some(s) = &mut model.log_sigma2 {
        refs.push(s);
    }
    opt.step(&mut refs, grads, lr);
}

/// Train a fresh (or warm-started) model on a dataset per the configured
/// schedule: an optional zero-initialization phase toward the scaled
/// constant 0.5, then the residual (or ELBO) loss.
pub fn train<T: Scalar>(
    dataset: &Dataset,
    arch: &ArchSpec,
    config: &TrainConfig,
    warm_from: Option<&Model<T>>,
    clamp: JClampPolicy,
) -> Result<TrainOutput<T>> {
    config.validate()?;
    let (out_n, out_c) = arch.output_shape()?;
    if out_n != dataset.grid.n || out_c != dataset.physics.dof() {
        return Err(Error::Config(format!(
            "architecture output ({out_n}, {out_c}) does not match dataset ({}, {})",
            dataset.grid.n,
            dataset.physics.dof()
        )));
    }
    let mode = match config.mode {
        TrainMode::Det => ModelMode::Deterministic,
        TrainMode::Bayes => ModelMode::Bayesian,
    };
    let mut rng = StdRng::seed_from_u64(config.seed);
    let mut model: Model<T> = build(arch, mode, &mut rng)?;
    if let Some(det) = warm_from {
        model.warm_start_from(det)?;
    }
    if let Some(s) = &mut model.log_sigma2 {
        *s = FieldTensor::scalar(T::from_f64_lossy(config.sigma2_init.ln()));
    }

    let mut trainer = Trainer::new(dataset.grid, clamp);
    let mut opt = OptimizerState::new(config.optimizer, &trainable_shapes(&model));
    let mut history = Vec::with_capacity(config.epochs);
    let mut initial_loss: Option<f64> = None;

    let items: Vec<usize> = (0..dataset.len()).collect();
    let batches_per_epoch = dataset.len().div_ceil(config.batch_size).max(1);

    for epoch in 0..config.epochs {
        let zero_init = epoch < config.zero_init_epochs;
        let mut order = items.clone();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = assemble_batch::<T>(dataset, chunk, &mut rng)?;
            let mut tape = Tape::new();
            let (loss, pass) = batch_loss(
                &mut trainer,
                &model,
                &mut tape,
                &batch,
                zero_init,
                config.mode,
                batches_per_epoch,
                &mut rng,
            )?;
            let loss_value = tape.value(loss).item().to_f64().unwrap();
            if !loss_value.is_finite() {
                return Err(Error::TrainingAborted {
                    epoch,
                    batch: bi,
                    message: "loss became non-finite".into(),
                });
            }
            if !zero_init {
                match initial_loss {
                    None => initial_loss = Some(loss_value.abs().max(1e-30)),
                    Some(l0) => {
                        if loss_value.abs() > 1e6 * l0 {
                            return Err(Error::TrainingAborted {
                                epoch,
                                batch: bi,
                                message: format!(
                                    "loss diverged: |{loss_value}| > 1e6 x initial {l0}"
                                ),
                            });
                        }
                    }
                }
            }
            let grads = tape.backward(loss)?;
            let grad_list = collect_grads(&tape, &grads, &pass);
            apply_step(&mut model, &mut opt, &grad_list, config.learning_rate);
            epoch_loss += loss_value;
            batches += 1;
        }
        let sigma2 = model
            .log_sigma2
            .as_ref()
            .map(|s| s.item().to_f64().unwrap().exp());
        history.push(EpochStat {
            epoch,
            loss: epoch_loss / batches.max(1) as f64,
            sigma2,
            zero_init,
        });
    }
    Ok(TrainOutput { model, history })
}

/// Monte Carlo prediction: mean field and predictive standard deviation
/// over S posterior draws, in physical units with Dirichlet values
/// imposed; the solution-noise variance sigma1 adds to the variance.
pub fn predict_uq<T: Scalar>(
    model: &Model<T>,
    record: &BvpRecord,
    samples: usize,
    sigma1: f64,
    rng: &mut StdRng,
) -> Result<(FieldTensor<f64>, FieldTensor<f64>)> {
    if samples == 0 {
        return Err(Error::Contract("prediction needs at least one sample".into()));
    }
    let masks = crate::residual::build_masks(&record.channels);
    let mut mean: Option<FieldTensor<f64>> = None;
    let mut sq: Option<FieldTensor<f64>> = None;
    for _ in 0..samples {
        let weights = match model.mode {
            ModelMode::Bayesian => WeightsMode::Sample,
            ModelMode::Deterministic => WeightsMode::Mean,
        };
        let phys = forward_physical(model, record, weights, rng)?;
        let phys = crate::fem::impose_dirichlet_loop(&phys, &masks);
        mean = Some(match mean {
            Some(m) => m.zip(&phys, |a, b| a + b),
            None => phys.clone(),
        });
        sq = Some(match sq {
            Some(s) => s.zip(&phys.zip(&phys, |a, b| a * b), |a, b| a + b),
            None => phys.zip(&phys, |a, b| a * b),
        });
    }
    let s = samples as f64;
    let mean = mean.unwrap().scale(1.0 / s);
    let var = sq
        .unwrap()
        .scale(1.0 / s)
        .zip(&mean, |e2, m| e2 - m * m)
        .map(|v| v.max(0.0) + sigma1);
    let std = var.map(f64::sqrt);
    Ok((mean, std))
}

/// Deterministic single forward in physical units, Dirichlet imposed.
pub fn predict_mean<T: Scalar>(
    model: &Model<T>,
    record: &BvpRecord,
    rng: &mut StdRng,
) -> Result<FieldTensor<f64>> {
    let phys = forward_physical(model, record, WeightsMode::Mean, rng)?;
    let masks = crate::residual::build_masks(&record.channels);
    Ok(crate::fem::impose_dirichlet_loop(&phys, &masks))
}

fn forward_physical<T: Scalar>(
    model: &Model<T>,
    record: &BvpRecord,
    weights: WeightsMode,
    rng: &mut StdRng,
) -> Result<FieldTensor<f64>> {
    let input: FieldTensor<T> = assemble_input(record, Some(rng));
    let scalars = scalars_tensor::<T>(record);
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, &input, scalars.as_ref(), weights, Some(rng))?;
    let out = tape.value(pass.output);
    let norm = record.channels.norm;
    Ok(FieldTensor::from_raw(
        out.shape().to_vec(),
        out.data()
            .iter()
            .map(|v| norm.denormalize_solution(v.to_f64().unwrap()))
            .collect(),
    ))
}

fn scalars_tensor<T: Scalar>(record: &BvpRecord) -> Option<FieldTensor<T>> {
    if record.scalar_params.is_empty() {
        return None;
    }
    Some(FieldTensor::from_raw(
        vec![1, record.scalar_params.len()],
        record
            .scalar_params
            .iter()
            .map(|&v| T::from_f64_lossy(v))
            .collect(),
    ))
}

/// Save model parameters and optimizer-free metadata as a tensor bundle
/// plus the JSON architecture descriptor.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, dir: &Path) -> Result<()> {
    let mut w = BundleWriter::new();
    for p in &model.params {
        w.add(&format!("{}.mean", p.name), &p.mean);
        if let Some(r) = &p.rho {
            w.add(&format!("{}.rho", p.name), r);
        }
    }
    if let Some(s) = &model.log_sigma2 {
        w.add("log_sigma2", s);
    }
    w.meta(serde_json::json!({
        "mode": match model.mode { ModelMode::Deterministic => "deterministic", ModelMode::Bayesian => "bayesian" },
    }));
    w.write(dir)?;
    std::fs::write(dir.join("arch.json"), serde_json::to_string_pretty(&model.arch)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Model<T>> {
    let arch_text = std::fs::read_to_string(dir.join("arch.json"))?;
    let arch: ArchSpec = serde_json::from_str(&arch_text)?;
    let reader = BundleReader::open(dir)?;
    let mode = match reader.meta()["mode"].as_str() {
        Some("bayesian") => ModelMode::Bayesian,
        _ => ModelMode::Deterministic,
    };
    let mut rng = StdRng::seed_from_u64(0);
    let mut model: Model<T> = build(&arch, mode, &mut rng)?;
    for p in &mut model.params {
        p.mean = reader.get(&format!("{}.mean", p.name))?;
        if p.rho.is_some() {
            p.rho = Some(reader.get(&format!("{}.rho", p.name))?);
        }
    }
    if model.log_sigma2.is_some() && reader.has("log_sigma2") {
        model.log_sigma2 = Some(reader.get("log_sigma2")?);
    }
    Ok(model)
}
