//! Encoder-decoder network construction: deterministic layers and
//! Flipout-perturbed Bayesian layers with mean-field Gaussian posteriors.
//!
//! Bayesian mode stores a (mean, rho) pair per kernel with sigma =
//! softplus(rho); biases stay deterministic and the residual-noise variance
//! is carried as one extra learnable log(sigma2) parameter.

use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::FieldTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Marker layer: interior fill markers are replaced with uniform draws
    /// during batch assembly, before the tensor enters the network.
    FillRandom,
    Conv { filters: usize, kernel: usize, activation: Activation },
    Maxpool,
    Upsample,
    Flatten,
    Dense { units: usize, activation: Activation },
    Reshape { shape: [usize; 3] },
    /// Concatenate scalar parameter inputs onto the flattened vector.
    ConcatScalars,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Deterministic,
    Bayesian,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArchSpec {
    pub input_n: usize,
    pub input_channels: usize,
    #[serde(default)]
    pub scalar_inputs: usize,
    pub mode: ModelMode,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// Walk the layer list symbolically, returning (spatial extent or
    /// flattened width, channels) per stage and validating shapes.
    fn validate(&self) -> Result<()> {
        let mut state = Shape::Image { n: self.input_n, c: self.input_channels };
        for (li, layer) in self.layers.iter().enumerate() {
            state = next_shape(state, layer, self.scalar_inputs)
                .map_err(|message| Error::ModelBuild { layer: li, message })?;
        }
        Ok(())
    }

    pub fn output_shape(&self) -> Result<(usize, usize)> {
        let mut state = Shape::Image { n: self.input_n, c: self.input_channels };
        for (li, layer) in self.layers.iter().enumerate() {
            state = next_shape(state, layer, self.scalar_inputs)
                .map_err(|message| Error::ModelBuild { layer: li, message })?;
        }
        match state {
            Shape::Image { n, c } => Ok((n, c)),
            Shape::Flat { .. } => Err(Error::ModelBuild {
                layer: self.layers.len(),
                message: "network must end with an image-shaped output".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Image { n: usize, c: usize },
    Flat { width: usize },
}

fn next_shape(state: Shape, layer: &LayerSpec, scalar_inputs: usize) -> std::result::Result<Shape, String> {
    match (state, layer) {
        (s, LayerSpec::FillRandom) => Ok(s),
        (Shape::Image { n, .. }, LayerSpec::Conv { filters, .. }) => {
            Ok(Shape::Image { n, c: *filters })
        }
        (Shape::Image { n, c }, LayerSpec::Maxpool) => Ok(Shape::Image { n: n.div_ceil(2), c }),
        (Shape::Image { n, c }, LayerSpec::Upsample) => Ok(Shape::Image { n: 2 * n, c }),
        (Shape::Image { n, c }, LayerSpec::Flatten) => Ok(Shape::Flat { width: n * n * c }),
        (Shape::Flat { width }, LayerSpec::Dense { units, .. }) => {
            let _ = width;
            Ok(Shape::Flat { width: *units })
        }
        (Shape::Flat { width }, LayerSpec::Reshape { shape }) => {
            let target = shape[0] * shape[1] * shape[2];
            if target != width {
                return Err(format!(
                    "reshape to {shape:?} needs {target} values, have {width}"
                ));
            }
            if shape[0] != shape[1] {
                return Err("reshape target must be square".into());
            }
            Ok(Shape::Image { n: shape[0], c: shape[2] })
        }
        (Shape::Flat { width }, LayerSpec::ConcatScalars) => {
            Ok(Shape::Flat { width: width + scalar_inputs })
        }
        (s, l) => Err(format!("layer {l:?} cannot follow {s:?}")),
    }
}

/// One parameter tensor; `rho` present only on Bayesian kernels.
#[derive(Debug, Clone)]
pub struct ParamTensor<T> {
    pub name: String,
    pub mean: FieldTensor<T>,
    pub rho: Option<FieldTensor<T>>,
}

/// Mean-field posterior spread used when warm-starting Bayesian models.
pub const DEFAULT_SIGMA_INIT: f64 = 1e-3;

pub fn softplus_inverse(sigma: f64) -> f64 {
    // ln(e^s - 1), stable for small sigma.
    if sigma > 30.0 {
        sigma
    } else {
        (sigma.exp_m1()).ln()
    }
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub arch: ArchSpec,
    pub mode: ModelMode,
    pub params: Vec<ParamTensor<T>>,
    /// log(sigma2): learnable residual-noise variance (Bayesian mode).
    pub log_sigma2: Option<FieldTensor<T>>,
}

/// Weight treatment for one forward pass.
pub enum WeightsMode {
    /// Posterior means / deterministic weights.
    Mean,
    /// Shared base perturbation with per-example rank-one sign flips.
    Flipout,
    /// One full weight draw from the posterior (Monte Carlo prediction).
    Sample,
}

/// Handles to the parameter leaves of one forward pass, for gradient
/// extraction; indices parallel `Model::params`.
pub struct ForwardPass {
    pub output: Var,
    pub mean_vars: Vec<Var>,
    pub rho_vars: Vec<Option<Var>>,
    pub log_sigma2_var: Option<Var>,
}

pub fn build<T: Scalar>(arch: &ArchSpec, mode: ModelMode, rng: &mut StdRng) -> Result<Model<T>> {
    arch.validate()?;
    let mut params = Vec::new();
    let mut state = Shape::Image { n: arch.input_n, c: arch.input_channels };
    let rho_init = T::from_f64_lossy(softplus_inverse(DEFAULT_SIGMA_INIT));
    for (li, layer) in arch.layers.iter().enumerate() {
        match (state, layer) {
            (Shape::Image { c, .. }, LayerSpec::Conv { filters, kernel, .. }) => {
                let fan_in = kernel * kernel * c;
                let fan_out = kernel * kernel * filters;
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let shape = [*kernel, *kernel, c, *filters];
                let mean = FieldTensor::from_fn(&shape, |_| {
                    T::from_f64_lossy(rng.gen_range(-limit..limit))
                });
                let rho = matches!(mode, ModelMode::Bayesian)
                    .then(|| FieldTensor::filled(&shape, rho_init));
                params.push(ParamTensor { name: format!("layer{li}.kernel"), mean, rho });
                params.push(ParamTensor {
                    name: format!("layer{li}.bias"),
                    mean: FieldTensor::zeros(&[*filters]),
                    rho: None,
                });
            }
            (Shape::Flat { width }, LayerSpec::Dense { units, .. }) => {
                let limit = (6.0 / (width + units) as f64).sqrt();
                let shape = [width, *units];
                let mean = FieldTensor::from_fn(&shape, |_| {
                    T::from_f64_lossy(rng.gen_range(-limit..limit))
                });
                let rho = matches!(mode, ModelMode::Bayesian)
                    .then(|| FieldTensor::filled(&shape, rho_init));
                params.push(ParamTensor { name: format!("layer{li}.kernel"), mean, rho });
                params.push(ParamTensor {
                    name: format!("layer{li}.bias"),
                    mean: FieldTensor::zeros(&[*units]),
                    rho: None,
                });
            }
            _ => {}
        }
        state = next_shape(state, layer, arch.scalar_inputs)
            .map_err(|message| Error::ModelBuild { layer: li, message })?;
    }
    let log_sigma2 = matches!(mode, ModelMode::Bayesian)
        .then(|| FieldTensor::scalar(T::from_f64_lossy(1e-8f64.ln())));
    Ok(Model { arch: arch.clone(), mode, params, log_sigma2 })
}

impl<T: Scalar> Model<T> {
    pub fn parameter_count(&self) -> usize {
        let weights: usize = self
            .params
            .iter()
            .map(|p| p.mean.len() * if p.rho.is_some() { 2 } else { 1 })
            .sum();
        weights + usize::from(self.log_sigma2.is_some())
    }

    /// Initialize Bayesian posterior means from a deterministic model with
    /// the identical architecture.
    pub fn warm_start_from(&mut self, det: &Model<T>) -> Result<()> {
        if det.params.len() != self.params.len() {
            return Err(Error::Contract(
                "warm start requires an identical architecture".into(),
            ));
        }
        for (dst, src) in self.params.iter_mut().zip(&det.params) {
            if dst.mean.shape() != src.mean.shape() {
                return Err(Error::Contract(format!(
                    "warm start shape mismatch on {}",
                    dst.name
                )));
            }
            dst.mean = src.mean.clone();
        }
        Ok(())
    }

    /// Set every posterior spread to sigma (e.g. effectively zero to
    /// reproduce the deterministic forward).
    pub fn set_sigma(&mut self, sigma: f64) {
        let rho = T::from_f64_lossy(softplus_inverse(sigma));
        for p in &mut self.params {
            if let Some(r) = &mut p.rho {
                *r = FieldTensor::filled(r.shape(), rho);
            }
        }
    }

    /// Forward pass for a batch input (B, n, n, c_in) with optional per-
    /// example scalar parameters (B, S). The input must already have its
    /// fill markers replaced.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        input: &FieldTensor<T>,
        scalars: Option<&FieldTensor<T>>,
        weights: WeightsMode,
        mut rng: Option<&mut StdRng>,
    ) -> Result<ForwardPass> {
        let batch = input.shape()[0];
        if input.shape()[3] != self.arch.input_channels || input.shape()[1] != self.arch.input_n {
            return Err(Error::Dimension(format!(
                "input shape {:?} does not match architecture ({}, {})",
                input.shape(),
                self.arch.input_n,
                self.arch.input_channels
            )));
        }
        if self.arch.scalar_inputs > 0 {
            let ok = scalars.map(|s| s.shape() == [batch, self.arch.scalar_inputs]);
            if ok != Some(true) {
                return Err(Error::Dimension(format!(
                    "architecture expects scalar inputs ({}, {})",
                    batch, self.arch.scalar_inputs
                )));
            }
        }

        let mut mean_vars = Vec::with_capacity(self.params.len());
        let mut rho_vars: Vec<Option<Var>> = Vec::with_capacity(self.params.len());
        let mut cur = tape.constant(input.clone());
        let mut param_idx = 0;

        for (li, layer) in self.arch.layers.iter().enumerate() {
            match layer {
                LayerSpec::FillRandom => {}
                LayerSpec::Conv { activation, .. } | LayerSpec::Dense { activation, .. } => {
                    let kernel_param = &self.params[param_idx];
                    let bias_param = &self.params[param_idx + 1];
                    let kernel = tape.leaf(kernel_param.mean.clone());
                    let bias = tape.leaf(bias_param.mean.clone());
                    mean_vars.push(kernel);
                    mean_vars.push(bias);

                    let is_conv = matches!(layer, LayerSpec::Conv { .. });
                    let apply = |tape: &mut Tape<T>, x: Var, k: Var| -> Result<Var> {
                        if is_conv {
                            tape.conv2d(x, k, Padding::Same)
                        } else {
                            tape.matmul(x, k)
                        }
                    };

                    let rho_var = kernel_param.rho.as_ref().map(|rho| tape.leaf(rho.clone()));
                    rho_vars.push(rho_var);
                    rho_vars.push(None);

                    let mut out = match (&weights, rho_var) {
                        (WeightsMode::Mean, _) | (_, None) => apply(tape, cur, kernel)?,
                        (WeightsMode::Sample, Some(rho_var)) => {
                            let rng = rng.as_deref_mut().ok_or_else(|| {
                                Error::Contract("sampled forward needs an RNG".into())
                            })?;
                            let eps = FieldTensor::from_fn(tape.value(rho_var).shape(), |_| {
                                T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal))
                            });
                            let sigma = tape.softplus(rho_var);
                            let delta = tape.mask_mul(sigma, eps)?;
                            let w = tape.add(kernel, delta)?;
                            apply(tape, cur, w)?
                        }
                        (WeightsMode::Flipout, Some(rho_var)) => {
                            let rng = rng.as_deref_mut().ok_or_else(|| {
                                Error::Contract("flipout forward needs an RNG".into())
                            })?;
                            // Shared base perturbation for the batch.
                            let eps = FieldTensor::from_fn(tape.value(rho_var).shape(), |_| {
                                T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal))
                            });
                            let sigma = tape.softplus(rho_var);
                            let delta = tape.mask_mul(sigma, eps)?;
                            // Per-example sign masks on input and output
                            // channels decorrelate the examples.
                            let (c_in, c_out) = kernel_io(kernel_param.mean.shape(), is_conv);
                            let s_signs = sign_matrix::<T>(batch, c_in, rng);
                            let r_signs = sign_matrix::<T>(batch, c_out, rng);
                            let s_mask =
                                broadcast_signs(&s_signs, tape.value(cur).shape(), c_in);
                            let xs = tape.mask_mul(cur, s_mask)?;
                            let pert = apply(tape, xs, delta)?;
                            let r_mask =
                                broadcast_signs(&r_signs, tape.value(pert).shape(), c_out);
                            let pert = tape.mask_mul(pert, r_mask)?;
                            let base = apply(tape, cur, kernel)?;
                            tape.add(base, pert)?
                        }
                    };
                    out = tape.bias_add(out, bias)?;
                    cur = match activation {
                        Activation::Relu => tape.relu(out),
                        Activation::Linear => out,
                    };
                    param_idx += 2;
                }
                LayerSpec::Maxpool => cur = tape.maxpool2d(cur),
                LayerSpec::Upsample => cur = tape.upsample2d(cur),
                LayerSpec::Flatten => {
                    let sh = tape.value(cur).shape().to_vec();
                    cur = tape.reshape(cur, &[sh[0], sh[1] * sh[2] * sh[3]])?;
                }
                LayerSpec::Reshape { shape } => {
                    let sh = tape.value(cur).shape().to_vec();
                    cur = tape.reshape(cur, &[sh[0], shape[0], shape[1], shape[2]])?;
                }
                LayerSpec::ConcatScalars => {
                    let s = scalars.ok_or_else(|| Error::ModelBuild {
                        layer: li,
                        message: "concat_scalars without scalar inputs".into(),
                    })?;
                    let sc = tape.constant(s.clone());
                    cur = tape.concat(&[cur, sc], 1)?;
                }
            }
        }

        let log_sigma2_var = self.log_sigma2.as_ref().map(|s| tape.leaf(s.clone()));
        Ok(ForwardPass { output: cur, mean_vars, rho_vars, log_sigma2_var })
    }

    /// Closed-form KL divergence of the mean-field posterior to the
    /// standard-normal prior, summed over all Bayesian kernels:
    /// sum [ -ln sigma + (sigma^2 + mu^2)/2 - 1/2 ].
    pub fn kl_to_prior(&self, tape: &mut Tape<T>, pass: &ForwardPass) -> Result<Var> {
        let half = T::from_f64_lossy(0.5);
        let mut acc: Option<Var> = None;
        for (idx, rho_var) in pass.rho_vars.iter().enumerate() {
            let Some(rho_var) = rho_var else { continue };
            let mu = pass.mean_vars[idx];
            let sigma = tape.softplus(*rho_var);
            let ln_sigma = tape.ln(sigma);
            let sig2 = tape.mul(sigma, sigma)?;
            let mu2 = tape.mul(mu, mu)?;
            let sum2 = tape.add(sig2, mu2)?;
            let halved = tape.scale(sum2, half);
            let neg_ln = tape.neg(ln_sigma);
            let terms = tape.add(neg_ln, halved)?;
            let shifted = tape.add_scalar(terms, -half);
            let rank = tape.value(shifted).shape().len();
            let axes: Vec<usize> = (0..rank).collect();
            let total = tape.reduce_sum(shifted, &axes)?;
            acc = Some(match acc {
                Some(prev) => tape.add(prev, total)?,
                None => total,
            });
        }
        acc.ok_or_else(|| Error::Contract("kl_to_prior on a deterministic model".into()))
    }

}

fn kernel_io(shape: &[usize], is_conv: bool) -> (usize, usize) {
    if is_conv {
        (shape[2], shape[3])
    } else {
        (shape[0], shape[1])
    }
}

/// Random +-1 entries, one row per batch example.
fn sign_matrix<T: Scalar>(batch: usize, width: usize, rng: &mut StdRng) -> Vec<T> {
    (0..batch * width)
        .map(|_| {
            if rng.gen_bool(0.5) {
                T::one()
            } else {
                -T::one()
            }
        })
        .collect()
}

/// Expand per-example channel signs to a full activation-shaped mask.
fn broadcast_signs<T: Scalar>(signs: &[T], shape: &[usize], channels: usize) -> FieldTensor<T> {
    let per_example: usize = shape[1..].iter().product();
    debug_assert_eq!(per_example % channels, 0);
    FieldTensor::from_fn(shape, |flat| {
        let b = flat / per_example;
        let c = flat % channels;
        signs[b * channels + c]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_arch(mode: ModelMode) -> ArchSpec {
        ArchSpec {
            input_n: 8,
            input_channels: 3,
            scalar_inputs: 0,
            mode,
            layers: vec![
                LayerSpec::FillRandom,
                LayerSpec::Conv { filters: 4, kernel: 3, activation: Activation::Relu },
                LayerSpec::Maxpool,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 32, activation: Activation::Relu },
                LayerSpec::Reshape { shape: [4, 4, 2] },
                LayerSpec::Upsample,
                LayerSpec::Conv { filters: 1, kernel: 3, activation: Activation::Relu },
            ],
        }
    }

    #[test]
    fn parameter_counts_match_hand_totals() {
        let mut rng = StdRng::seed_from_u64(0);
        let det: Model<f64> =
            build(&tiny_arch(ModelMode::Deterministic), ModelMode::Deterministic, &mut rng)
                .unwrap();
        // conv1: 3*3*3*4 + 4 = 112; dense: 64*32 + 32 = 2080;
        // conv2: 3*3*2*1 + 1 = 19. Total 2211.
        assert_eq!(det.parameter_count(), 2211);

        let bayes: Model<f64> =
            build(&tiny_arch(ModelMode::Bayesian), ModelMode::Bayesian, &mut rng).unwrap();
        // Kernels double (108 + 2048 + 18), biases stay single (4 + 32 + 1),
        // plus the learnable sigma2.
        assert_eq!(bayes.parameter_count(), 2 * (108 + 2048 + 18) + 37 + 1);
    }

    #[test]
    fn single_dense_unit_has_two_parameters() {
        let arch = ArchSpec {
            input_n: 1,
            input_channels: 1,
            scalar_inputs: 0,
            mode: ModelMode::Deterministic,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 1, activation: Activation::Linear },
            ],
        };
        let mut rng = StdRng::seed_from_u64(0);
        let m: Model<f64> = build(&arch, ModelMode::Deterministic, &mut rng).unwrap();
        assert_eq!(m.parameter_count(), 2);
    }

    #[test]
    fn inconsistent_reshape_is_a_build_error() {
        let mut arch = tiny_arch(ModelMode::Deterministic);
        arch.layers[5] = LayerSpec::Reshape { shape: [4, 4, 4] };
        let mut rng = StdRng::seed_from_u64(0);
        match build::<f64>(&arch, ModelMode::Deterministic, &mut rng) {
            Err(Error::ModelBuild { layer: 5, .. }) => {}
            other => panic!("expected build error naming layer 5, got {other:?}"),
        }
    }

    #[test]
    fn zero_weight_network_outputs_bias() {
        let mut rng = StdRng::seed_from_u64(1);
        let mut m: Model<f64> =
            build(&tiny_arch(ModelMode::Deterministic), ModelMode::Deterministic, &mut rng)
                .unwrap();
        for p in &mut m.params {
            let zero = FieldTensor::zeros(p.mean.shape());
            p.mean = zero;
        }
        // Set the last bias to a constant.
        let last = m.params.len() - 1;
        m.params[last].mean = FieldTensor::filled(&[1], 0.625);
        let input = FieldTensor::zeros(&[2, 8, 8, 3]);
        let mut tape = Tape::new();
        let pass = m.forward(&mut tape, &input, None, WeightsMode::Mean, None).unwrap();
        let out = tape.value(pass.output);
        assert!(out.data().iter().all(|&v| v == 0.625));
    }

    #[test]
    fn forward_is_batch_permutation_equivariant() {
        let mut rng = StdRng::seed_from_u64(2);
        let m: Model<f64> =
            build(&tiny_arch(ModelMode::Deterministic), ModelMode::Deterministic, &mut rng)
                .unwrap();
        let a = FieldTensor::from_fn(&[1, 8, 8, 3], |i| (i as f64 * 0.37).sin());
        let b = FieldTensor::from_fn(&[1, 8, 8, 3], |i| (i as f64 * 0.11).cos());
        let ab = crate::ops::concat(&[&a, &b], 0).unwrap();
        let ba = crate::ops::concat(&[&b, &a], 0).unwrap();
        let run = |input: &FieldTensor<f64>| {
            let mut tape = Tape::new();
            let pass = m.forward(&mut tape, input, None, WeightsMode::Mean, None).unwrap();
            tape.value(pass.output).clone()
        };
        let out_ab = run(&ab);
        let out_ba = run(&ba);
        let (b0, rest): (usize, usize) = (1, out_ab.len() / 2);
        let _ = b0;
        assert_eq!(&out_ab.data()[..rest], &out_ba.data()[rest..]);
        assert_eq!(&out_ab.data()[rest..], &out_ba.data()[..rest]);
    }

    #[test]
    fn flipout_with_zero_sigma_equals_mean_forward() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut m: Model<f64> =
            build(&tiny_arch(ModelMode::Bayesian), ModelMode::Bayesian, &mut rng).unwrap();
        m.set_sigma(1e-300);
        let input = FieldTensor::from_fn(&[2, 8, 8, 3], |i| ((i % 7) as f64) * 0.1);
        let mut tape = Tape::new();
        let mean_pass = m.forward(&mut tape, &input, None, WeightsMode::Mean, None).unwrap();
        let mean_out = tape.value(mean_pass.output).clone();
        let mut rng2 = StdRng::seed_from_u64(4);
        let mut tape2 = Tape::new();
        let flip_pass = m
            .forward(&mut tape2, &input, None, WeightsMode::Flipout, Some(&mut rng2))
            .unwrap();
        let flip_out = tape2.value(flip_pass.output).clone();
        let diff = mean_out.zip(&flip_out, |a, b| a - b).max_abs();
        assert!(diff == 0.0, "zero-sigma flipout deviates by {diff}");
    }

    #[test]
    fn flipout_decorrelates_identical_examples() {
        let mut rng = StdRng::seed_from_u64(5);
        let m: Model<f64> =
            build(&tiny_arch(ModelMode::Bayesian), ModelMode::Bayesian, &mut rng).unwrap();
        let one = FieldTensor::from_fn(&[1, 8, 8, 3], |i| ((i % 5) as f64) * 0.2);
        let input = crate::ops::concat(&[&one, &one], 0).unwrap();
        let mut rng2 = StdRng::seed_from_u64(6);
        let mut tape = Tape::new();
        let pass = m
            .forward(&mut tape, &input, None, WeightsMode::Flipout, Some(&mut rng2))
            .unwrap();
        let out = tape.value(pass.output);
        let half = out.len() / 2;
        let differs = out.data()[..half]
            .iter()
            .zip(&out.data()[half..])
            .any(|(a, b)| a != b);
        assert!(differs, "identical examples saw identical perturbed weights");
    }

    #[test]
    fn kl_is_zero_for_standard_normal_and_half_per_unit_mean() {
        // A 1-parameter model: mu = 0, sigma = 1 -> KL = 0; mu = 1 -> 0.5.
        let arch = ArchSpec {
            input_n: 1,
            input_channels: 1,
            scalar_inputs: 0,
            mode: ModelMode::Bayesian,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 1, activation: Activation::Linear },
            ],
        };
        let mut rng = StdRng::seed_from_u64(7);
        let mut m: Model<f64> = build(&arch, ModelMode::Bayesian, &mut rng).unwrap();
        m.params[0].mean = FieldTensor::zeros(&[1, 1]);
        m.params[0].rho = Some(FieldTensor::filled(&[1, 1], softplus_inverse(1.0)));
        let input = FieldTensor::zeros(&[1, 1, 1, 1]);
        let mut tape = Tape::new();
        let pass = m.forward(&mut tape, &input, None, WeightsMode::Mean, None).unwrap();
        let kl = m.kl_to_prior(&mut tape, &pass).unwrap();
        assert!(tape.value(kl).item().abs() < 1e-12);

        m.params[0].mean = FieldTensor::filled(&[1, 1], 1.0);
        let mut tape = Tape::new();
        let pass = m.forward(&mut tape, &input, None, WeightsMode::Mean, None).unwrap();
        let kl = m.kl_to_prior(&mut tape, &pass).unwrap();
        assert!((tape.value(kl).item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo_estimate() {
        // E_Q[log Q - log P] over 1e5 draws for a handful of weights.
        let mus = [0.3, -0.8, 1.2, 0.0];
        let sigmas = [0.5, 1.5, 0.9, 2.0];
        let closed: f64 = mus
            .iter()
            .zip(&sigmas)
            .map(|(&m, &s): (&f64, &f64)| -s.ln() + (s * s + m * m) / 2.0 - 0.5)
            .sum();
        let mut rng = StdRng::seed_from_u64(8);
        let samples = 100_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            for (&m, &s) in mus.iter().zip(&sigmas) {
                let eps: f64 = rng.sample(StandardNormal);
                let w = m + s * eps;
                let log_q = -(s * (2.0 * std::f64::consts::PI).sqrt()).ln()
                    - (w - m) * (w - m) / (2.0 * s * s);
                let log_p = -(2.0 * std::f64::consts::PI).sqrt().ln() - w * w / 2.0;
                acc += log_q - log_p;
            }
        }
        let mc = acc / samples as f64;
        let rel = (mc - closed).abs() / closed.abs();
        assert!(rel <= 2e-2, "MC {mc} vs closed form {closed} (rel {rel})");
    }

    #[test]
    fn flipout_perturbation_is_zero_mean() {
        // Over sign draws, the perturbation output averages to zero within
        // 3 standard errors, entrywise on a probe pixel.
        let arch = ArchSpec {
            input_n: 4,
            input_channels: 2,
            scalar_inputs: 0,
            mode: ModelMode::Bayesian,
            layers: vec![LayerSpec::Conv {
                filters: 2,
                kernel: 3,
                activation: Activation::Linear,
            }],
        };
        let mut rng = StdRng::seed_from_u64(9);
        let m: Model<f64> = build(&arch, ModelMode::Bayesian, &mut rng).unwrap();
        let input = FieldTensor::from_fn(&[1, 4, 4, 2], |i| ((i % 3) as f64) - 1.0);

        let mut tape = Tape::new();
        let mean_pass = m.forward(&mut tape, &input, None, WeightsMode::Mean, None).unwrap();
        let base = tape.value(mean_pass.output).clone();

        let draws = 10_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut rng2 = StdRng::seed_from_u64(10);
        for _ in 0..draws {
            let mut t = Tape::new();
            let pass = m
                .forward(&mut t, &input, None, WeightsMode::Flipout, Some(&mut rng2))
                .unwrap();
            let v = t.value(pass.output).at4(0, 2, 2, 0) - base.at4(0, 2, 2, 0);
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / draws as f64;
        let var = sum2 / draws as f64 - mean * mean;
        let stderr = (var / draws as f64).sqrt();
        assert!(
            mean.abs() <= 3.0 * stderr.max(1e-12),
            "perturbation mean {mean} exceeds 3 x stderr {stderr}"
        );
    }
}
