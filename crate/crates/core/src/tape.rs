//! Define-by-run reverse-mode automatic differentiation.
//!
//! A `Tape` records every operation as a node in execution order, which is a
//! topological order by construction; `backward` walks the nodes once in
//! reverse, accumulating adjoints. Tapes are rebuilt per forward pass.

use crate::error::{Error, Result};
use crate::ops::{self, Padding};
use crate::scalar::Scalar;
use crate::tensor::FieldTensor;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Scalar> {
    /// Differentiable input (parameters, fields under test).
    Leaf,
    /// Non-differentiable input (masks, gather kernels, boundary data).
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Recip(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Matmul(Var, Var),
    Conv2d { input: Var, kernel: Var, padding: Padding },
    BiasAdd { input: Var, bias: Var },
    Roll { input: Var, shifts: Vec<isize>, axes: Vec<usize> },
    ReduceSum { input: Var, axes: Vec<usize> },
    Reshape { input: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
    Upsample(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, starts: Vec<usize> },
}

struct Node<T: Scalar> {
    value: FieldTensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Per-node adjoints produced by a backward pass.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<FieldTensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&FieldTensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &FieldTensor<T> {
        &self.nodes[v.0].value
    }

    /// Adjoint of `v`, or zeros when the output does not depend on it.
    pub fn grad_or_zero(&self, grads: &Gradients<T>, v: Var) -> FieldTensor<T> {
        grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| FieldTensor::zeros(self.value(v).shape()))
    }

    fn push(&mut self, value: FieldTensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => self.op_inputs(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn op_inputs(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::BiasAdd { input, bias } => vec![*input, *bias],
            Op::Neg(a)
            | Op::Recip(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Softplus(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _) => vec![*a],
            Op::Roll { input, .. }
            | Op::ReduceSum { input, .. }
            | Op::Reshape { input }
            | Op::MaxPool { input, .. }
            | Op::Upsample(input)
            | Op::Slice { input, .. } => vec![*input],
            Op::Concat { parts, .. } => parts.clone(),
        }
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: FieldTensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Non-differentiable input; gradients never flow into it.
    pub fn constant(&mut self, value: FieldTensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{what} shape mismatch: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a))
    }

    /// Elementwise reciprocal; caller guarantees non-zero entries.
    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| T::one() / x);
        self.push(v, Op::Recip(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln());
        self.push(v, Op::Ln(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(ops::softplus_scalar);
        self.push(v, Op::Softplus(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a, c))
    }

    /// Elementwise product with a constant field (mask application).
    pub fn mask_mul(&mut self, a: Var, mask: FieldTensor<T>) -> Result<Var> {
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// Add a constant field.
    pub fn add_field(&mut self, a: Var, field: FieldTensor<T>) -> Result<Var> {
        let f = self.constant(field);
        self.add(a, f)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, padding: Padding) -> Result<Var> {
        let v = ops::conv2d(self.value(input), self.value(kernel), padding)?;
        Ok(self.push(v, Op::Conv2d { input, kernel, padding }))
    }

    /// Add a per-channel bias (last axis) to every entry.
    pub fn bias_add(&mut self, input: Var, bias: Var) -> Result<Var> {
        let ish = self.value(input).shape().to_vec();
        let bsh = self.value(bias).shape();
        let channels = *ish.last().unwrap();
        if bsh != [channels] {
            return Err(Error::Dimension(format!(
                "bias shape {bsh:?} does not match channel count {channels}"
            )));
        }
        let bias_data = self.value(bias).data().to_vec();
        let v = FieldTensor::from_raw(
            ish.clone(),
            self.value(input)
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bias_data[i % channels])
                .collect(),
        );
        Ok(self.push(v, Op::BiasAdd { input, bias }))
    }

    pub fn roll(&mut self, input: Var, shifts: &[isize], axes: &[usize]) -> Result<Var> {
        let v = ops::roll(self.value(input), shifts, axes)?;
        Ok(self.push(
            v,
            Op::Roll { input, shifts: shifts.to_vec(), axes: axes.to_vec() },
        ))
    }

    pub fn reduce_sum(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        let v = ops::reduce_sum(self.value(input), axes)?;
        Ok(self.push(v, Op::ReduceSum { input, axes: axes.to_vec() }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(input).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape { input }))
    }

    pub fn maxpool2d(&mut self, input: Var) -> Var {
        let (v, argmax) = ops::maxpool2d(self.value(input));
        self.push(v, Op::MaxPool { input, argmax })
    }

    pub fn upsample2d(&mut self, input: Var) -> Var {
        let v = ops::upsample2d(self.value(input));
        self.push(v, Op::Upsample(input))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&FieldTensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat(&tensors, axis)?;
        Ok(self.push(v, Op::Concat { parts: parts.to_vec(), axis }))
    }

    pub fn slice(&mut self, input: Var, starts: &[usize], lens: &[usize]) -> Result<Var> {
        let v = ops::slice(self.value(input), starts, lens)?;
        Ok(self.push(v, Op::Slice { input, starts: starts.to_vec() }))
    }

    /// Sum of squared entries as a scalar node.
    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let sq = self.mul(a, a)?;
        let rank = self.value(sq).shape().len();
        let axes: Vec<usize> = (0..rank).collect();
        self.reduce_sum(sq, &axes)
    }

    /// Reverse pass from a scalar output; returns adjoints for every node
    /// that the output depends on. Leaves off the path receive no entry.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<FieldTensor<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(FieldTensor::filled(self.value(output).shape(), T::one()));

        for id in (0..=output.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<FieldTensor<T>>], v: Var, delta: FieldTensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                let acc = g.zip(&delta, |a, b| a + b);
                *g = acc;
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, id: usize, g: &FieldTensor<T>, grads: &mut [Option<FieldTensor<T>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.zip(self.value(*b), |x, y| x * y));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, g.zip(self.value(*a), |x, y| x * y));
                }
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|x| -x)),
            Op::Recip(a) => {
                // d(1/x) = -g / x^2 = -g * out^2
                let out = &node.value;
                self.accumulate(grads, *a, g.zip(out, |gv, o| -gv * o * o));
            }
            Op::Relu(a) => {
                let d = g.zip(self.value(*a), |gv, x| if x > T::zero() { gv } else { T::zero() });
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, g.zip(&node.value, |gv, o| gv * o));
            }
            Op::Ln(a) => {
                self.accumulate(grads, *a, g.zip(self.value(*a), |gv, x| gv / x));
            }
            Op::Softplus(a) => {
                let d = g.zip(self.value(*a), |gv, x| gv * ops::sigmoid_scalar(x));
                self.accumulate(grads, *a, d);
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c)),
            Op::AddScalar(a, _) => self.accumulate(grads, *a, g.clone()),
            Op::Matmul(a, b) => {
                let (ga, gb) = ops::matmul_backward(self.value(*a), self.value(*b), g);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Conv2d { input, kernel, padding } => {
                let need_input = self.nodes[input.0].requires_grad;
                let need_kernel = self.nodes[kernel.0].requires_grad;
                if need_input || need_kernel {
                    let (gi, gk) =
                        ops::conv2d_backward(self.value(*input), self.value(*kernel), *padding, g);
                    if need_input {
                        self.accumulate(grads, *input, gi);
                    }
                    if need_kernel {
                        self.accumulate(grads, *kernel, gk);
                    }
                }
            }
            Op::BiasAdd { input, bias } => {
                self.accumulate(grads, *input, g.clone());
                if self.nodes[bias.0].requires_grad {
                    let channels = self.value(*bias).len();
                    let mut gb = vec![T::zero(); channels];
                    for (i, &gv) in g.data().iter().enumerate() {
                        gb[i % channels] += gv;
                    }
                    self.accumulate(grads, *bias, FieldTensor::from_raw(vec![channels], gb));
                }
            }
            Op::Roll { input, shifts, axes } => {
                // Adjoint of a cyclic shift is the inverse shift.
                let inv: Vec<isize> = shifts.iter().map(|s| -s).collect();
                let gi = ops::roll(g, &inv, axes).expect("roll backward");
                self.accumulate(grads, *input, gi);
            }
            Op::ReduceSum { input, axes } => {
                let gi = ops::reduce_sum_backward(self.value(*input).shape(), axes, g);
                self.accumulate(grads, *input, gi);
            }
            Op::Reshape { input } => {
                let gi = g.clone().reshaped(self.value(*input).shape()).expect("reshape backward");
                self.accumulate(grads, *input, gi);
            }
            Op::MaxPool { input, argmax } => {
                let mut gi = FieldTensor::zeros(self.value(*input).shape());
                for (o, &src) in argmax.iter().enumerate() {
                    gi.data_mut()[src] += g.data()[o];
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Upsample(input) => {
                self.accumulate(grads, *input, ops::upsample2d_backward(g));
            }
            Op::Concat { parts, axis } => {
                let mut start = 0usize;
                for &p in parts {
                    let psh = self.value(p).shape().to_vec();
                    let mut starts = vec![0usize; psh.len()];
                    starts[*axis] = start;
                    let gp = ops::slice(g, &starts, &psh).expect("concat backward");
                    start += psh[*axis];
                    self.accumulate(grads, p, gp);
                }
            }
            Op::Slice { input, starts } => {
                let gi = ops::slice_backward(self.value(*input).shape(), starts, g);
                self.accumulate(grads, *input, gi);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: &[usize], rng: &mut StdRng) -> FieldTensor<f64> {
        FieldTensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_gradient_is_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(FieldTensor::scalar(3.0_f64));
        let grads = tape.backward(x).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let mut tape = Tape::new();
        let xv = FieldTensor::<f64>::from_raw(vec![4], vec![1.0, -2.0, 0.5, 3.0]);
        let x = tape.leaf(xv.clone());
        let loss = tape.sum_squares(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(x).unwrap();
        for (gv, xv) in g.data().iter().zip(xv.data()) {
            assert!((gv - 2.0 * xv).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_output() {
        let mut tape = Tape::new();
        let x = tape.leaf(FieldTensor::<f64>::zeros(&[3]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_leaf_gets_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(FieldTensor::scalar(1.0_f64));
        let y = tape.leaf(FieldTensor::scalar(2.0_f64));
        let loss = tape.sum_squares(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(y).is_none());
        assert_eq!(tape.grad_or_zero(&grads, y).item(), 0.0);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(FieldTensor::from_raw(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]));
        let p = tape.maxpool2d(x);
        assert_eq!(tape.value(p).data(), &[4.0]);
        let s = tape.reduce_sum(p, &[0, 1, 2, 3]).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(FieldTensor::from_raw(vec![2], vec![-1.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
    }

    /// Scalar-valued composite touching every differentiable op, checked
    /// against central finite differences.
    fn composite_loss(tape: &mut Tape<f64>, x: Var, kernel: Var, dense: Var, bias: Var) -> Var {
        let c = tape.conv2d(x, kernel, Padding::Same).unwrap();
        let r = tape.relu(c);
        let p = tape.maxpool2d(r);
        let u = tape.upsample2d(p);
        let rolled = tape.roll(u, &[1, -1], &[1, 2]).unwrap();
        let masked = tape
            .mask_mul(rolled, FieldTensor::from_fn(&[1, 6, 6, 2], |i| ((i % 3) as f64) * 0.5))
            .unwrap();
        let part = tape.slice(masked, &[0, 1, 1, 0], &[1, 4, 4, 2]).unwrap();
        let flat = tape.reshape(part, &[4, 8]).unwrap();
        let dm = tape.matmul(flat, dense).unwrap();
        let db = tape.bias_add(dm, bias).unwrap();
        let cat = tape.concat(&[db, dm], 1).unwrap();
        let sp = tape.softplus(cat);
        let e = tape.scale(sp, 0.05);
        let ex = tape.exp(e);
        let shifted = tape.add_scalar(ex, 1.0);
        let l = tape.ln(shifted);
        let rec = tape.recip(shifted);
        let mixed = tape.mul(l, rec).unwrap();
        let neg = tape.neg(mixed);
        let s1 = tape.sub(l, neg).unwrap();
        tape.sum_squares(s1).unwrap()
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(42);
        let x0 = rand_tensor(&[1, 6, 6, 1], &mut rng);
        let k0 = rand_tensor(&[3, 3, 1, 2], &mut rng);
        let d0 = rand_tensor(&[8, 3], &mut rng);
        let b0 = rand_tensor(&[3], &mut rng);

        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let k = tape.leaf(k0.clone());
        let d = tape.leaf(d0.clone());
        let b = tape.leaf(b0.clone());
        let loss = composite_loss(&mut tape, x, k, d, b);
        let grads = tape.backward(loss).unwrap();

        let eval = |x0: &FieldTensor<f64>,
                    k0: &FieldTensor<f64>,
                    d0: &FieldTensor<f64>,
                    b0: &FieldTensor<f64>| {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone());
            let k = t.leaf(k0.clone());
            let d = t.leaf(d0.clone());
            let b = t.leaf(b0.clone());
            let l = composite_loss(&mut t, x, k, d, b);
            t.value(l).item()
        };

        let h = 1e-6;
        let inputs: [(&FieldTensor<f64>, Var); 4] = [(&x0, x), (&k0, k), (&d0, d), (&b0, b)];
        for (tensor, var) in inputs {
            let g = grads.get(var).unwrap();
            for i in 0..tensor.len() {
                let mut plus = tensor.clone();
                plus.data_mut()[i] += h;
                let mut minus = tensor.clone();
                minus.data_mut()[i] -= h;
                let (fp, fm) = match var {
                    v if v == x => (eval(&plus, &k0, &d0, &b0), eval(&minus, &k0, &d0, &b0)),
                    v if v == k => (eval(&x0, &plus, &d0, &b0), eval(&x0, &minus, &d0, &b0)),
                    v if v == d => (eval(&x0, &k0, &plus, &b0), eval(&x0, &k0, &minus, &b0)),
                    _ => (eval(&x0, &k0, &d0, &plus), eval(&x0, &k0, &d0, &minus)),
                };
                let fd = (fp - fm) / (2.0 * h);
                let an = g.data()[i];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom <= 1e-5,
                    "grad mismatch at {i}: analytic {an}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn backward_is_linear_in_the_output() {
        let mut rng = StdRng::seed_from_u64(7);
        let x0 = rand_tensor(&[5], &mut rng);
        let (alpha, beta) = (1.7, -0.6);

        // grad(alpha*f + beta*g) == alpha*grad(f) + beta*grad(g)
        let build = |weights: Option<(f64, f64)>| -> FieldTensor<f64> {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let f = tape.sum_squares(x).unwrap();
            let e = tape.exp(x);
            let g = tape.reduce_sum(e, &[0]).unwrap();
            let out = match weights {
                Some((a, b)) => {
                    let fa = tape.scale(f, a);
                    let gb = tape.scale(g, b);
                    tape.add(fa, gb).unwrap()
                }
                None => f,
            };
            let grads = tape.backward(out).unwrap();
            let gf = tape.grad_or_zero(&grads, x);
            if weights.is_none() {
                // Also return grad of g alone via a second pass.
                let grads_g = tape.backward(g).unwrap();
                let gg = tape.grad_or_zero(&grads_g, x);
                return gf.zip(&gg, |a, b| alpha * a + beta * b);
            }
            gf
        };

        let combined = build(Some((alpha, beta)));
        let separate = build(None);
        let diff = combined.zip(&separate, |a, b| a - b).max_abs();
        assert!(diff < 1e-12, "linearity violated by {diff}");
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(FieldTensor::from_raw(vec![2], vec![1.0, 2.0]));
        let c = tape.constant(FieldTensor::from_raw(vec![2], vec![3.0, 4.0]));
        let y = tape.mul(x, c).unwrap();
        let loss = tape.reduce_sum(y, &[0]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
    }
}
