//! Forward and backward kernels for the non-convolution primitives.
//!
//! These are plain functions over tensors; the autodiff graph in
//! [`crate::autodiff`] records calls to them and replays the backward halves.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Passes gradient where the input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &[T]) -> Vec<T> {
    input
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

fn pool_geometry(shape: &[usize], kernel: usize, stride: usize) -> Result<[usize; 6]> {
    if kernel < 1 || stride < 1 {
        return Err(Error::InvalidArgument(format!(
            "avg_pool2d kernel {kernel} and stride {stride} must be >= 1"
        )));
    }
    let &[n, c, h, w] = shape else {
        return Err(Error::shape("avg_pool2d", format!("input must be NCHW, got {shape:?}")));
    };
    if h < kernel || w < kernel {
        return Err(Error::shape(
            "avg_pool2d",
            format!("kernel {kernel} larger than input {h}x{w}"),
        ));
    }
    Ok([n, c, h, w, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
}

/// Mean over `kernel x kernel` windows; partial windows are dropped.
pub fn avg_pool2d<T: Scalar>(input: &Tensor<T>, kernel: usize, stride: usize) -> Result<Tensor<T>> {
    let [n, c, h, w, ho, wo] = pool_geometry(input.shape(), kernel, stride)?;
    let scale = T::one() / T::from_usize(kernel * kernel).expect("small int");
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in x.chunks_exact(h * w) {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for ky in 0..kernel {
                    let row = (oy * stride + ky) * w + ox * stride;
                    for &v in &plane[row..row + kernel] {
                        acc += v;
                    }
                }
                out.push(acc * scale);
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

pub fn avg_pool2d_backward<T: Scalar>(
    input_shape: &[usize],
    kernel: usize,
    stride: usize,
    grad_out: &[T],
) -> Result<Vec<T>> {
    let [n, c, h, w, ho, wo] = pool_geometry(input_shape, kernel, stride)?;
    let scale = T::one() / T::from_usize(kernel * kernel).expect("small int");
    let mut dx = vec![T::zero(); n * c * h * w];
    for (plane, go) in dx.chunks_exact_mut(h * w).zip(grad_out.chunks_exact(ho * wo)) {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = go[oy * wo + ox] * scale;
                for ky in 0..kernel {
                    let row = (oy * stride + ky) * w + ox * stride;
                    for v in &mut plane[row..row + kernel] {
                        *v += g;
                    }
                }
            }
        }
    }
    Ok(dx)
}

fn linear_dims<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (&[n, f], &[f_out, f_w]) = (input.shape(), weight.shape()) else {
        return Err(Error::shape(
            "linear",
            format!("input {:?} and weight {:?} must be 2-D", input.shape(), weight.shape()),
        ));
    };
    if f != f_w {
        return Err(Error::shape("linear", format!("input has {f} features, weight expects {f_w}")));
    }
    if bias.shape() != [f_out] {
        return Err(Error::shape("linear", format!("bias {:?}, expected [{f_out}]", bias.shape())));
    }
    Ok((n, f, f_out))
}

/// `input · weightᵀ + bias`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f, f_out) = linear_dims(input, weight, bias)?;
    let mut out = Vec::with_capacity(n * f_out);
    for row in input.data().chunks_exact(f) {
        for (wrow, &b) in weight.data().chunks_exact(f).zip(bias.data()) {
            let mut acc = b;
            for (&x, &w) in row.iter().zip(wrow) {
                acc += x * w;
            }
            out.push(acc);
        }
    }
    Tensor::new(vec![n, f_out], out)
}

pub struct LinearGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &[T],
    want: [bool; 3],
) -> Result<LinearGrads<T>> {
    let (n, f, f_out) = linear_dims(input, weight, bias)?;
    if grad_out.len() != n * f_out {
        return Err(Error::shape("linear_backward", "upstream gradient length"));
    }
    let x = input.data();
    let w = weight.data();
    let d_input = want[0].then(|| {
        let mut dx = vec![T::zero(); n * f];
        for (dx_row, go) in dx.chunks_exact_mut(f).zip(grad_out.chunks_exact(f_out)) {
            for (&g, wrow) in go.iter().zip(w.chunks_exact(f)) {
                for (d, &wv) in dx_row.iter_mut().zip(wrow) {
                    *d += g * wv;
                }
            }
        }
        dx
    });
    let d_weight = want[1].then(|| {
        let mut dw = vec![T::zero(); f_out * f];
        for (x_row, go) in x.chunks_exact(f).zip(grad_out.chunks_exact(f_out)) {
            for (&g, dw_row) in go.iter().zip(dw.chunks_exact_mut(f)) {
                for (d, &xv) in dw_row.iter_mut().zip(x_row) {
                    *d += g * xv;
                }
            }
        }
        dw
    });
    let d_bias = want[2].then(|| {
        let mut db = vec![T::zero(); f_out];
        for go in grad_out.chunks_exact(f_out) {
            for (d, &g) in db.iter_mut().zip(go) {
                *d += g;
            }
        }
        db
    });
    Ok(LinearGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}

fn interleave_dims(a: &[usize], b: &[usize], groups: usize) -> Result<(usize, usize, usize)> {
    if a != b {
        return Err(Error::shape("interleave", format!("{a:?} vs {b:?}")));
    }
    let &[n, c, h, w] = a else {
        return Err(Error::shape("interleave", format!("features must be NCHW, got {a:?}")));
    };
    if groups == 0 || c % groups != 0 {
        return Err(Error::shape(
            "interleave",
            format!("{c} channels per branch not divisible by {groups} groups"),
        ));
    }
    Ok((n, c, h * w))
}

/// Merges two branches channel-wise so that every one of `groups` consecutive
/// channel blocks holds `C / groups` channels of `a` followed by the same
/// channels of `b`. `groups == 1` is plain concatenation.
pub fn interleave<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let (n, c, hw) = interleave_dims(a.shape(), b.shape(), groups)?;
    let block = c / groups * hw;
    let mut out = Vec::with_capacity(2 * a.len());
    for (sa, sb) in a.data().chunks_exact(c * hw).zip(b.data().chunks_exact(c * hw)) {
        for (ba, bb) in sa.chunks_exact(block).zip(sb.chunks_exact(block)) {
            out.extend_from_slice(ba);
            out.extend_from_slice(bb);
        }
    }
    let s = a.shape();
    Tensor::new(vec![n, 2 * c, s[2], s[3]], out)
}

/// Splits an interleaved gradient back into the two branch gradients.
pub fn interleave_backward<T: Scalar>(branch_shape: &[usize], groups: usize, grad_out: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let (n, c, hw) = interleave_dims(branch_shape, branch_shape, groups)?;
    if grad_out.len() != 2 * n * c * hw {
        return Err(Error::shape("interleave_backward", "upstream gradient length"));
    }
    let block = c / groups * hw;
    let mut ga = Vec::with_capacity(n * c * hw);
    let mut gb = Vec::with_capacity(n * c * hw);
    for pair in grad_out.chunks_exact(2 * block) {
        ga.extend_from_slice(&pair[..block]);
        gb.extend_from_slice(&pair[block..]);
    }
    Ok((ga, gb))
}

/// Selects rows along the leading axis.
pub fn gather_rows<T: Scalar>(input: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let rows = input.shape()[0];
    if indices.is_empty() {
        return Err(Error::Empty("gather indices"));
    }
    let row_len = input.len() / rows;
    let mut out = Vec::with_capacity(indices.len() * row_len);
    for &i in indices {
        if i >= rows {
            return Err(Error::shape("gather", format!("row {i} out of range for {rows} rows")));
        }
        out.extend_from_slice(&input.data()[i * row_len..(i + 1) * row_len]);
    }
    let mut shape = input.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(shape, out)
}

pub fn gather_rows_backward<T: Scalar>(input_shape: &[usize], indices: &[usize], grad_out: &[T]) -> Vec<T> {
    let rows = input_shape[0];
    let total: usize = input_shape.iter().product();
    let row_len = total / rows;
    let mut dx = vec![T::zero(); total];
    for (&i, go) in indices.iter().zip(grad_out.chunks_exact(row_len)) {
        for (d, &g) in dx[i * row_len..(i + 1) * row_len].iter_mut().zip(go) {
            *d += g;
        }
    }
    dx
}
