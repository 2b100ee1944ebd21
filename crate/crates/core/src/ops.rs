//! Raw tensor kernels shared by the autodiff tape and by direct callers.
//!
//! Convolution follows cross-correlation semantics with stride 1. "Same"
//! padding distributes the k-1 pad as top = (k-1)/2, bottom = k-1-top, so an
//! even kernel reads at offsets {0, 1} and zero-pads the trailing row/column.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::FieldTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

pub(crate) fn conv_out_extent(input: usize, k: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => input,
        Padding::Valid => input + 1 - k,
    }
}

fn pad_before(k: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => (k - 1) / 2,
        Padding::Valid => 0,
    }
}

pub fn check_conv_shapes<T: Scalar>(
    input: &FieldTensor<T>,
    kernel: &FieldTensor<T>,
    padding: Padding,
) -> Result<[usize; 4]> {
    let (ish, ksh) = (input.shape(), kernel.shape());
    if ish.len() != 4 || ksh.len() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d expects 4-axis input and kernel, got {ish:?} and {ksh:?}"
        )));
    }
    let (kh, kw, ci, co) = (ksh[0], ksh[1], ksh[2], ksh[3]);
    if ish[3] != ci {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input has {}, kernel expects {}",
            ish[3], ci
        )));
    }
    // "Same" padding admits kernels larger than the image (the bottleneck
    // convolutions rely on this); "valid" output would be empty.
    if padding == Padding::Valid && (kh > ish[1] || kw > ish[2]) {
        return Err(Error::Dimension(format!(
            "kernel {kh}x{kw} larger than input {}x{} with valid padding",
            ish[1], ish[2]
        )));
    }
    let ho = conv_out_extent(ish[1], kh, padding);
    let wo = conv_out_extent(ish[2], kw, padding);
    Ok([ish[0], ho, wo, co])
}

/// Lay out every receptive field of one batch image as a row of `cols`:
/// (ho*wo) x (kh*kw*ci), zero-filled outside the input.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    input: &[T],
    h: usize,
    w: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    padding: Padding,
    cols: &mut [T],
) {
    let ho = conv_out_extent(h, kh, padding);
    let wo = conv_out_extent(w, kw, padding);
    let (pt, pl) = (pad_before(kh, padding), pad_before(kw, padding));
    let row_len = kh * kw * ci;
    for v in cols.iter_mut() {
        *v = T::zero();
    }
    for oi in 0..ho {
        for oj in 0..wo {
            let row = (oi * wo + oj) * row_len;
            for di in 0..kh {
                let ii = oi + di;
                if ii < pt || ii - pt >= h {
                    continue;
                }
                let src_row = ((ii - pt) * w) * ci;
                for dj in 0..kw {
                    let jj = oj + dj;
                    if jj < pl || jj - pl >= w {
                        continue;
                    }
                    let src = src_row + (jj - pl) * ci;
                    let dst = row + (di * kw + dj) * ci;
                    cols[dst..dst + ci].copy_from_slice(&input[src..src + ci]);
                }
            }
        }
    }
}

/// Scatter-add of column gradients back onto the input image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    h: usize,
    w: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    padding: Padding,
    input_grad: &mut [T],
) {
    let ho = conv_out_extent(h, kh, padding);
    let wo = conv_out_extent(w, kw, padding);
    let (pt, pl) = (pad_before(kh, padding), pad_before(kw, padding));
    let row_len = kh * kw * ci;
    for oi in 0..ho {
        for oj in 0..wo {
            let row = (oi * wo + oj) * row_len;
            for di in 0..kh {
                let ii = oi + di;
                if ii < pt || ii - pt >= h {
                    continue;
                }
                let dst_row = ((ii - pt) * w) * ci;
                for dj in 0..kw {
                    let jj = oj + dj;
                    if jj < pl || jj - pl >= w {
                        continue;
                    }
                    let dst = dst_row + (jj - pl) * ci;
                    let src = row + (di * kw + dj) * ci;
                    for c in 0..ci {
                        input_grad[dst + c] += cols[src + c];
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Scalar>(
    input: &FieldTensor<T>,
    kernel: &FieldTensor<T>,
    padding: Padding,
) -> Result<FieldTensor<T>> {
    let out_shape = check_conv_shapes(input, kernel, padding)?;
    let [b, ho, wo, co] = out_shape;
    let (h, w, ci) = (input.shape()[1], input.shape()[2], input.shape()[3]);
    let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
    let row_len = kh * kw * ci;
    let mut cols = vec![T::zero(); ho * wo * row_len];
    let mut out = vec![T::zero(); b * ho * wo * co];
    let image = h * w * ci;
    for bi in 0..b {
        im2col(
            &input.data()[bi * image..(bi + 1) * image],
            h,
            w,
            ci,
            kh,
            kw,
            padding,
            &mut cols,
        );
        T::gemm(
            ho * wo,
            row_len,
            co,
            T::one(),
            &cols,
            kernel.data(),
            T::zero(),
            &mut out[bi * ho * wo * co..(bi + 1) * ho * wo * co],
        );
    }
    Ok(FieldTensor::from_raw(out_shape.to_vec(), out))
}

/// Gradients of conv2d w.r.t. (input, kernel) given the output adjoint.
pub fn conv2d_backward<T: Scalar>(
    input: &FieldTensor<T>,
    kernel: &FieldTensor<T>,
    padding: Padding,
    grad_out: &FieldTensor<T>,
) -> (FieldTensor<T>, FieldTensor<T>) {
    let (h, w, ci) = (input.shape()[1], input.shape()[2], input.shape()[3]);
    let (kh, kw, co) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[3]);
    let b = input.shape()[0];
    let (ho, wo) = (grad_out.shape()[1], grad_out.shape()[2]);
    let row_len = kh * kw * ci;
    let image = h * w * ci;
    let out_image = ho * wo * co;

    let mut cols = vec![T::zero(); ho * wo * row_len];
    let mut col_grad = vec![T::zero(); ho * wo * row_len];
    let mut grad_input = FieldTensor::zeros(input.shape());
    let mut grad_kernel = FieldTensor::zeros(kernel.shape());
    for bi in 0..b {
        let go = &grad_out.data()[bi * out_image..(bi + 1) * out_image];
        // dK += cols^T(row_len, ho*wo) @ grad_out(ho*wo, co)
        im2col(
            &input.data()[bi * image..(bi + 1) * image],
            h,
            w,
            ci,
            kh,
            kw,
            padding,
            &mut cols,
        );
        T::gemm_strided(
            row_len,
            ho * wo,
            co,
            T::one(),
            &cols,
            1,
            row_len as isize,
            go,
            co as isize,
            1,
            T::one(),
            grad_kernel.data_mut(),
        );
        // dCols = grad_out(ho*wo, co) @ K^T(co, row_len), then scatter back.
        T::gemm_strided(
            ho * wo,
            co,
            row_len,
            T::one(),
            go,
            co as isize,
            1,
            kernel.data(),
            1,
            co as isize,
            T::zero(),
            &mut col_grad,
        );
        col2im(
            &col_grad,
            h,
            w,
            ci,
            kh,
            kw,
            padding,
            &mut grad_input.data_mut()[bi * image..(bi + 1) * image],
        );
    }
    (grad_input, grad_kernel)
}

/// Row-major (m,k) x (k,n) matrix product.
pub fn matmul<T: Scalar>(a: &FieldTensor<T>, b: &FieldTensor<T>) -> Result<FieldTensor<T>> {
    let (ash, bsh) = (a.shape(), b.shape());
    if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
        return Err(Error::Dimension(format!(
            "matmul shape mismatch: {ash:?} x {bsh:?}"
        )));
    }
    let (m, k, n) = (ash[0], ash[1], bsh[1]);
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a.data(), b.data(), T::zero(), &mut out);
    Ok(FieldTensor::from_raw(vec![m, n], out))
}

pub fn matmul_backward<T: Scalar>(
    a: &FieldTensor<T>,
    b: &FieldTensor<T>,
    grad_out: &FieldTensor<T>,
) -> (FieldTensor<T>, FieldTensor<T>) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut ga = vec![T::zero(); m * k];
    let mut gb = vec![T::zero(); k * n];
    // dA = dC @ B^T
    T::gemm_strided(
        m,
        n,
        k,
        T::one(),
        grad_out.data(),
        n as isize,
        1,
        b.data(),
        1,
        n as isize,
        T::zero(),
        &mut ga,
    );
    // dB = A^T @ dC
    T::gemm_strided(
        k,
        m,
        n,
        T::one(),
        a.data(),
        1,
        k as isize,
        grad_out.data(),
        n as isize,
        1,
        T::zero(),
        &mut gb,
    );
    (
        FieldTensor::from_raw(vec![m, k], ga),
        FieldTensor::from_raw(vec![k, n], gb),
    )
}

/// Cyclic shift along the given axes; entry at index i moves to i + shift.
pub fn roll<T: Scalar>(
    input: &FieldTensor<T>,
    shifts: &[isize],
    axes: &[usize],
) -> Result<FieldTensor<T>> {
    if shifts.len() != axes.len() {
        return Err(Error::Dimension(format!(
            "roll needs one shift per axis, got {} shifts for {} axes",
            shifts.len(),
            axes.len()
        )));
    }
    let rank = input.shape().len();
    let mut total = vec![0isize; rank];
    for (&s, &a) in shifts.iter().zip(axes) {
        if a >= rank {
            return Err(Error::Dimension(format!(
                "roll axis {a} out of range for rank {rank}"
            )));
        }
        let extent = input.shape()[a] as isize;
        if s.abs() >= extent {
            return Err(Error::Dimension(format!(
                "roll shift {s} out of range for extent {extent}"
            )));
        }
        total[a] = (total[a] + s).rem_euclid(extent);
    }
    let shape = input.shape().to_vec();
    let strides = row_major_strides(&shape);
    let mut out = vec![T::zero(); input.len()];
    let mut idx = vec![0usize; rank];
    for (flat, &v) in input.data().iter().enumerate() {
        unravel(flat, &strides, &mut idx);
        let mut dst = 0;
        for a in 0..rank {
            let e = shape[a];
            let moved = (idx[a] + total[a] as usize) % e;
            dst += moved * strides[a];
        }
        out[dst] = v;
    }
    Ok(FieldTensor::from_raw(shape, out))
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    strides
}

#[inline]
fn unravel(mut flat: usize, strides: &[usize], idx: &mut [usize]) {
    for (a, &s) in strides.iter().enumerate() {
        idx[a] = flat / s;
        flat %= s;
    }
}

/// Sum over the listed axes; the output drops them.
pub fn reduce_sum<T: Scalar>(input: &FieldTensor<T>, axes: &[usize]) -> Result<FieldTensor<T>> {
    let rank = input.shape().len();
    for &a in axes {
        if a >= rank {
            return Err(Error::Dimension(format!(
                "reduce_sum axis {a} out of range for rank {rank}"
            )));
        }
    }
    let keep: Vec<usize> = (0..rank).filter(|a| !axes.contains(a)).collect();
    let out_shape: Vec<usize> = if keep.is_empty() {
        vec![1]
    } else {
        keep.iter().map(|&a| input.shape()[a]).collect()
    };
    let out_strides = row_major_strides(&out_shape);
    let in_strides = row_major_strides(input.shape());
    let mut out = vec![T::zero(); out_shape.iter().product()];
    let mut idx = vec![0usize; rank];
    for (flat, &v) in input.data().iter().enumerate() {
        unravel(flat, &in_strides, &mut idx);
        let mut dst = 0;
        for (pos, &a) in keep.iter().enumerate() {
            dst += idx[a] * out_strides[pos];
        }
        out[dst] += v;
    }
    Ok(FieldTensor::from_raw(out_shape, out))
}

/// Broadcast a reduced adjoint back over the summed axes.
pub fn reduce_sum_backward<T: Scalar>(
    input_shape: &[usize],
    axes: &[usize],
    grad_out: &FieldTensor<T>,
) -> FieldTensor<T> {
    let rank = input_shape.len();
    let keep: Vec<usize> = (0..rank).filter(|a| !axes.contains(a)).collect();
    let out_shape: Vec<usize> = if keep.is_empty() {
        vec![1]
    } else {
        keep.iter().map(|&a| input_shape[a]).collect()
    };
    let out_strides = row_major_strides(&out_shape);
    let in_strides = row_major_strides(input_shape);
    let mut grad = vec![T::zero(); input_shape.iter().product()];
    let mut idx = vec![0usize; rank];
    for (flat, g) in grad.iter_mut().enumerate() {
        unravel(flat, &in_strides, &mut idx);
        let mut src = 0;
        for (pos, &a) in keep.iter().enumerate() {
            src += idx[a] * out_strides[pos];
        }
        *g = grad_out.data()[src];
    }
    FieldTensor::from_raw(input_shape.to_vec(), grad)
}

/// 2x2 max pooling with stride 2 and "same" padding; windows are clipped at
/// the image border, which is equivalent to padding with negative infinity.
/// Returns the pooled tensor and the flat input index of each selected entry.
pub fn maxpool2d<T: Scalar>(input: &FieldTensor<T>) -> (FieldTensor<T>, Vec<usize>) {
    let sh = input.shape();
    assert_eq!(sh.len(), 4, "maxpool2d expects (batch, rows, cols, channels)");
    let (b, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![T::zero(); b * ho * wo * c];
    let mut argmax = vec![0usize; out.len()];
    for bi in 0..b {
        for oi in 0..ho {
            for oj in 0..wo {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0usize;
                    for di in 0..2 {
                        let ii = 2 * oi + di;
                        if ii >= h {
                            continue;
                        }
                        for dj in 0..2 {
                            let jj = 2 * oj + dj;
                            if jj >= w {
                                continue;
                            }
                            let idx = input.idx4(bi, ii, jj, ch);
                            let v = input.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((bi * ho + oi) * wo + oj) * c + ch;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    (FieldTensor::from_raw(vec![b, ho, wo, c], out), argmax)
}

/// Nearest-neighbor x2 upsampling: every pixel becomes a 2x2 block.
pub fn upsample2d<T: Scalar>(input: &FieldTensor<T>) -> FieldTensor<T> {
    let sh = input.shape();
    assert_eq!(sh.len(), 4, "upsample2d expects (batch, rows, cols, channels)");
    let (b, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
    let mut out = vec![T::zero(); b * 4 * h * w * c];
    let (ho, wo) = (2 * h, 2 * w);
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                let src = input.idx4(bi, i, j, 0);
                for di in 0..2 {
                    for dj in 0..2 {
                        let dst = ((bi * ho + 2 * i + di) * wo + 2 * j + dj) * c;
                        out[dst..dst + c].copy_from_slice(&input.data()[src..src + c]);
                    }
                }
            }
        }
    }
    FieldTensor::from_raw(vec![b, ho, wo, c], out)
}

pub fn upsample2d_backward<T: Scalar>(grad_out: &FieldTensor<T>) -> FieldTensor<T> {
    let sh = grad_out.shape();
    let (b, ho, wo, c) = (sh[0], sh[1], sh[2], sh[3]);
    let (h, w) = (ho / 2, wo / 2);
    let mut grad = FieldTensor::zeros(&[b, h, w, c]);
    for bi in 0..b {
        for i in 0..ho {
            for j in 0..wo {
                for ch in 0..c {
                    let dst = grad.idx4(bi, i / 2, j / 2, ch);
                    grad.data_mut()[dst] += grad_out.at4(bi, i, j, ch);
                }
            }
        }
    }
    grad
}

/// Concatenate same-rank tensors along one axis.
pub fn concat<T: Scalar>(parts: &[&FieldTensor<T>], axis: usize) -> Result<FieldTensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::Dimension(format!(
            "concat axis {axis} out of range for rank {rank}"
        )));
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = 0;
    for p in parts {
        if p.shape().len() != rank {
            return Err(Error::Dimension("concat rank mismatch".into()));
        }
        for a in 0..rank {
            if a != axis && p.shape()[a] != first.shape()[a] {
                return Err(Error::Dimension(format!(
                    "concat shape mismatch on axis {a}: {:?} vs {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
        }
        out_shape[axis] += p.shape()[axis];
    }
    // Views as (outer, axis_extent * inner) blocks.
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let out_block = out_shape[axis] * inner;
    let mut out = vec![T::zero(); outer * out_block];
    let mut offset = 0;
    for p in parts {
        let block = p.shape()[axis] * inner;
        for o in 0..outer {
            let src = &p.data()[o * block..(o + 1) * block];
            out[o * out_block + offset..o * out_block + offset + block].copy_from_slice(src);
        }
        offset += block;
    }
    Ok(FieldTensor::from_raw(out_shape, out))
}

/// Extract a rectangular sub-block: out[idx] = in[starts + idx].
pub fn slice<T: Scalar>(
    input: &FieldTensor<T>,
    starts: &[usize],
    lens: &[usize],
) -> Result<FieldTensor<T>> {
    let rank = input.shape().len();
    if starts.len() != rank || lens.len() != rank {
        return Err(Error::Dimension(format!(
            "slice needs {rank} starts and lens"
        )));
    }
    for a in 0..rank {
        if lens[a] == 0 || starts[a] + lens[a] > input.shape()[a] {
            return Err(Error::Dimension(format!(
                "slice [{}..{}) out of range on axis {a} (extent {})",
                starts[a],
                starts[a] + lens[a],
                input.shape()[a]
            )));
        }
    }
    let in_strides = row_major_strides(input.shape());
    let out_strides = row_major_strides(lens);
    let numel: usize = lens.iter().product();
    let mut out = vec![T::zero(); numel];
    let mut idx = vec![0usize; rank];
    for (flat, o) in out.iter_mut().enumerate() {
        unravel(flat, &out_strides, &mut idx);
        let mut src = 0;
        for a in 0..rank {
            src += (starts[a] + idx[a]) * in_strides[a];
        }
        *o = input.data()[src];
    }
    Ok(FieldTensor::from_raw(lens.to_vec(), out))
}

/// Scatter a slice adjoint back into a zero tensor of the input shape.
pub fn slice_backward<T: Scalar>(
    input_shape: &[usize],
    starts: &[usize],
    grad_out: &FieldTensor<T>,
) -> FieldTensor<T> {
    let rank = input_shape.len();
    let in_strides = row_major_strides(input_shape);
    let out_strides = row_major_strides(grad_out.shape());
    let mut grad = FieldTensor::zeros(input_shape);
    let mut idx = vec![0usize; rank];
    for (flat, &g) in grad_out.data().iter().enumerate() {
        unravel(flat, &out_strides, &mut idx);
        let mut dst = 0;
        for a in 0..rank {
            dst += (starts[a] + idx[a]) * in_strides[a];
        }
        grad.data_mut()[dst] = g;
    }
    grad
}

/// Numerically stable log(1 + exp(x)).
pub fn softplus_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (T::one() + (-x).exp()).ln()
    } else {
        (T::one() + x.exp()).ln()
    }
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng_data(n: usize, seed: u64) -> Vec<f64> {
        // Small deterministic LCG; values in [-1, 1].
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    /// Direct nested-loop convolution used as the oracle.
    fn conv2d_naive(
        input: &FieldTensor<f64>,
        kernel: &FieldTensor<f64>,
        padding: Padding,
    ) -> FieldTensor<f64> {
        let (b, h, w, ci) = (
            input.shape()[0],
            input.shape()[1],
            input.shape()[2],
            input.shape()[3],
        );
        let (kh, kw, co) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[3]);
        let ho = conv_out_extent(h, kh, padding);
        let wo = conv_out_extent(w, kw, padding);
        let (pt, pl) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => (0, 0),
        };
        let mut out = FieldTensor::zeros(&[b, ho, wo, co]);
        for bi in 0..b {
            for oi in 0..ho {
                for oj in 0..wo {
                    for oc in 0..co {
                        let mut acc = 0.0;
                        for di in 0..kh {
                            for dj in 0..kw {
                                let (ii, jj) = (oi + di, oj + dj);
                                if ii < pt || jj < pl || ii - pt >= h || jj - pl >= w {
                                    continue;
                                }
                                for ic in 0..ci {
                                    acc += input.at4(bi, ii - pt, jj - pl, ic)
                                        * kernel.data()
                                            [((di * kw + dj) * ci + ic) * co + oc];
                                }
                            }
                        }
                        let idx = out.idx4(bi, oi, oj, oc);
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_naive_oracle() {
        for (pad, seed) in [(Padding::Same, 3), (Padding::Valid, 4)] {
            let input = FieldTensor::from_raw(vec![2, 8, 8, 3], rng_data(2 * 8 * 8 * 3, seed));
            let kernel = FieldTensor::from_raw(vec![3, 3, 3, 5], rng_data(3 * 3 * 3 * 5, seed + 10));
            let fast = conv2d(&input, &kernel, pad).unwrap();
            let slow = conv2d_naive(&input, &kernel, pad);
            assert_eq!(fast.shape(), slow.shape());
            let diff = fast.zip(&slow, |a, b| a - b).max_abs();
            assert!(diff <= 1e-12, "conv deviates from oracle by {diff}");
        }
    }

    #[test]
    fn conv2d_one_hot_kernel_is_identity_selection() {
        // A 2x2 kernel hot at (0,0) under same padding reproduces the input.
        let input = FieldTensor::from_raw(vec![1, 5, 5, 1], rng_data(25, 7));
        let kernel = FieldTensor::<f64>::from_raw(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 0.0]);
        let out = conv2d(&input, &kernel, Padding::Same).unwrap();
        assert_eq!(out.data(), input.data());

        // Hot at (0,1): shifted selection with zero pad on the trailing column.
        let kernel = FieldTensor::from_raw(vec![2, 2, 1, 1], vec![0.0, 1.0, 0.0, 0.0]);
        let out = conv2d(&input, &kernel, Padding::Same).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if j + 1 < 5 { input.at4(0, i, j + 1, 0) } else { 0.0 };
                assert_eq!(out.at4(0, i, j, 0), expect);
            }
        }
    }

    #[test]
    fn conv2d_zero_input_gives_zero_output() {
        let input = FieldTensor::<f64>::zeros(&[1, 6, 6, 2]);
        let kernel = FieldTensor::from_raw(vec![3, 3, 2, 4], rng_data(3 * 3 * 2 * 4, 9));
        let out = conv2d(&input, &kernel, Padding::Same).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let input = FieldTensor::<f64>::zeros(&[1, 4, 4, 3]);
        let kernel = FieldTensor::zeros(&[2, 2, 2, 1]);
        assert!(matches!(
            conv2d(&input, &kernel, Padding::Same),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn roll_shifts_cyclically() {
        let x = FieldTensor::from_raw(vec![3], vec![1.0, 2.0, 3.0]);
        let r = roll(&x, &[1], &[0]).unwrap();
        assert_eq!(r.data(), &[3.0, 1.0, 2.0]);
        let r0 = roll(&x, &[0], &[0]).unwrap();
        assert_eq!(r0.data(), x.data());
    }

    #[test]
    fn roll_round_trips() {
        let x = FieldTensor::from_raw(vec![2, 4, 3, 2], rng_data(48, 11));
        for (s, a) in [(1isize, 1usize), (-2, 2), (1, 3)] {
            let fwd = roll(&x, &[s], &[a]).unwrap();
            let back = roll(&fwd, &[-s], &[a]).unwrap();
            assert_eq!(back.data(), x.data());
        }
        let both = roll(&x, &[1, 1], &[1, 2]).unwrap();
        let undone = roll(&both, &[-1, -1], &[1, 2]).unwrap();
        assert_eq!(undone.data(), x.data());
    }

    #[test]
    fn roll_rejects_bad_axis_and_shift() {
        let x = FieldTensor::<f64>::zeros(&[3, 3]);
        assert!(roll(&x, &[1], &[2]).is_err());
        assert!(roll(&x, &[3], &[0]).is_err());
    }

    #[test]
    fn reduce_sum_is_shift_invariant() {
        let x = FieldTensor::from_raw(vec![4, 5], rng_data(20, 13));
        let rolled = roll(&x, &[2], &[1]).unwrap();
        let a = reduce_sum(&x, &[0, 1]).unwrap().item();
        let b = reduce_sum(&rolled, &[0, 1]).unwrap().item();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn reduce_sum_over_one_axis() {
        let x = FieldTensor::from_raw(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = reduce_sum(&x, &[0]).unwrap();
        assert_eq!(s.shape(), &[3]);
        assert_eq!(s.data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn maxpool_selects_max_and_argmax() {
        let x = FieldTensor::from_raw(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let (out, argmax) = maxpool2d(&x);
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(argmax, vec![3]);
    }

    #[test]
    fn maxpool_odd_extent_clips_border() {
        let x = FieldTensor::from_fn(&[1, 5, 5, 1], |i| i as f64);
        let (out, _) = maxpool2d(&x);
        assert_eq!(out.shape(), &[1, 3, 3, 1]);
        // Bottom-right window is the single entry (4,4).
        assert_eq!(out.at4(0, 2, 2, 0), 24.0);
    }

    #[test]
    fn upsample_repeats_blocks_and_backward_sums() {
        let x = FieldTensor::from_raw(vec![1, 2, 1, 1], vec![5.0, 7.0]);
        let up = upsample2d(&x);
        assert_eq!(up.shape(), &[1, 4, 2, 1]);
        assert_eq!(up.data(), &[5.0, 5.0, 5.0, 5.0, 7.0, 7.0, 7.0, 7.0]);
        let grad = upsample2d_backward(&FieldTensor::filled(&[1, 4, 2, 1], 1.0));
        assert_eq!(grad.data(), &[4.0, 4.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = FieldTensor::from_raw(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = FieldTensor::from_raw(vec![2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let cat = concat(&[&a, &b], 1).unwrap();
        assert_eq!(cat.shape(), &[2, 5]);
        assert_eq!(cat.data(), &[1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]);
        let back = slice(&cat, &[0, 2], &[2, 3]).unwrap();
        assert_eq!(back.data(), b.data());
    }

    #[test]
    fn matmul_matches_hand_product() {
        let a = FieldTensor::from_raw(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = FieldTensor::from_raw(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }
}
