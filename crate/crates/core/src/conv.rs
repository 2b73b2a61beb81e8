//! Grouped 2-D convolution (cross-correlation, no kernel flip).
//!
//! Every kernel lowers one (sample, group) slice to an im2col matrix and
//! accumulates in a fixed order: bias first, then the reduction index
//! `k = (ic * kernel_h + ky) * kernel_w + kx` ascending. Vectorization only
//! happens across independent output positions, so results are reproducible
//! bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Square kernel, single group.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ConvSpec {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            groups,
            ..
        } = *self;
        if in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 || groups == 0 {
            return Err(Error::InvalidSpec(format!("conv fields must be positive: {self:?}")));
        }
        if in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::InvalidSpec(format!(
                "channels {in_channels}->{out_channels} not divisible by {groups} groups"
            )));
        }
        Ok(())
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_per_group(), self.kernel_h, self.kernel_w]
    }

    pub fn fan_in(&self) -> usize {
        self.in_per_group() * self.kernel_h * self.kernel_w
    }

    /// Output spatial size, `floor((size + 2 * padding - kernel) / stride) + 1`.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let out = |size: usize, k: usize| -> Option<usize> {
            let padded = size + 2 * self.padding;
            padded.checked_sub(k).map(|r| r / self.stride + 1)
        };
        match (out(h, self.kernel_h), out(w, self.kernel_w)) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {}x{} with padding {} does not fit input {h}x{w}",
                    self.kernel_h, self.kernel_w, self.padding
                ),
            )),
        }
    }
}

/// Resolved geometry for one call.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

fn check(input: &[usize], weight: &[usize], bias: &[usize], spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let &[n, c, h, w] = input else {
        return Err(Error::shape("conv2d", format!("input must be NCHW, got {input:?}")));
    };
    if c != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, spec expects {}", spec.in_channels),
        ));
    }
    if weight != spec.weight_shape() {
        return Err(Error::shape(
            "conv2d",
            format!("weight {weight:?}, expected {:?}", spec.weight_shape()),
        ));
    }
    if bias != [spec.out_channels] {
        return Err(Error::shape(
            "conv2d",
            format!("bias {bias:?}, expected [{}]", spec.out_channels),
        ));
    }
    let (ho, wo) = spec.output_hw(h, w)?;
    Ok(Geometry { n, h, w, ho, wo })
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Fills `col` (`[fan_in, positions]`) for one sample/group slice.
/// `plane` holds the group's `in_per_group` input channels.
fn im2col<T: Scalar>(plane: &[T], spec: &ConvSpec, g: &Geometry, col: &mut [T]) {
    let p_len = g.positions();
    let pad = spec.padding as isize;
    let mut row = 0;
    for ic in 0..spec.in_per_group() {
        let chan = &plane[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let dst = &mut col[row * p_len..(row + 1) * p_len];
                for oy in 0..g.ho {
                    let iy = (oy * spec.stride + ky) as isize - pad;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds `dcol` back into the group's input-gradient plane, same
/// traversal order as [`im2col`].
fn col2im<T: Scalar>(dcol: &[T], spec: &ConvSpec, g: &Geometry, plane: &mut [T]) {
    let p_len = g.positions();
    let pad = spec.padding as isize;
    let mut row = 0;
    for ic in 0..spec.in_per_group() {
        let chan = &mut plane[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let src = &dcol[row * p_len..(row + 1) * p_len];
                for oy in 0..g.ho {
                    let iy = (oy * spec.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * spec.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = check(input.shape(), weight.shape(), bias.shape(), spec)?;
    let (cig, cog, fan_in, p_len) = (spec.in_per_group(), spec.out_per_group(), spec.fan_in(), g.positions());
    let in_plane = cig * g.h * g.w;
    let mut out = vec![T::zero(); g.n * spec.out_channels * p_len];
    let mut col = vec![T::zero(); fan_in * p_len];
    let (x, wt, b) = (input.data(), weight.data(), bias.data());

    for n in 0..g.n {
        for grp in 0..spec.groups {
            let in_off = (n * spec.in_channels + grp * cig) * g.h * g.w;
            im2col(&x[in_off..in_off + in_plane], spec, &g, &mut col);
            for oc in grp * cog..(grp + 1) * cog {
                let o = (n * spec.out_channels + oc) * p_len;
                let dst = &mut out[o..o + p_len];
                dst.fill(b[oc]);
                let wrow = &wt[oc * fan_in..(oc + 1) * fan_in];
                for (k, &wk) in wrow.iter().enumerate() {
                    axpy(dst, wk, &col[k * p_len..(k + 1) * p_len]);
                }
            }
        }
    }
    Tensor::new(vec![g.n, spec.out_channels, g.ho, g.wo], out)
}

/// Gradients of [`conv2d`]; each part is computed only when requested.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &[T],
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> Result<ConvGrads<T>> {
    let g = check(input.shape(), weight.shape(), bias.shape(), spec)?;
    let (cig, cog, fan_in, p_len) = (spec.in_per_group(), spec.out_per_group(), spec.fan_in(), g.positions());
    if grad_out.len() != g.n * spec.out_channels * p_len {
        return Err(Error::shape("conv2d_backward", "upstream gradient length"));
    }
    let in_plane = cig * g.h * g.w;
    let x = input.data();
    let wt = weight.data();

    let mut d_bias = want_bias.then(|| vec![T::zero(); spec.out_channels]);
    if let Some(db) = d_bias.as_mut() {
        for n in 0..g.n {
            for (oc, acc) in db.iter_mut().enumerate() {
                let o = (n * spec.out_channels + oc) * p_len;
                for &v in &grad_out[o..o + p_len] {
                    *acc += v;
                }
            }
        }
    }

    let mut d_weight = want_weight.then(|| vec![T::zero(); weight.len()]);
    let mut d_input = want_input.then(|| vec![T::zero(); input.len()]);
    if d_weight.is_none() && d_input.is_none() {
        return Ok(ConvGrads {
            input: None,
            weight: None,
            bias: d_bias,
        });
    }

    let mut col = vec![T::zero(); fan_in * p_len];
    let mut col_t = vec![T::zero(); fan_in * p_len];
    let mut dcol = vec![T::zero(); fan_in * p_len];
    for n in 0..g.n {
        for grp in 0..spec.groups {
            let in_off = (n * spec.in_channels + grp * cig) * g.h * g.w;
            if let Some(dw) = d_weight.as_mut() {
                im2col(&x[in_off..in_off + in_plane], spec, &g, &mut col);
                for k in 0..fan_in {
                    for p in 0..p_len {
                        col_t[p * fan_in + k] = col[k * p_len + p];
                    }
                }
                for oc in grp * cog..(grp + 1) * cog {
                    let o = (n * spec.out_channels + oc) * p_len;
                    let dw_row = &mut dw[oc * fan_in..(oc + 1) * fan_in];
                    for (p, &go) in grad_out[o..o + p_len].iter().enumerate() {
                        axpy(dw_row, go, &col_t[p * fan_in..(p + 1) * fan_in]);
                    }
                }
            }
            if let Some(dx) = d_input.as_mut() {
                dcol.fill(T::zero());
                for oc in grp * cog..(grp + 1) * cog {
                    let o = (n * spec.out_channels + oc) * p_len;
                    let go = &grad_out[o..o + p_len];
                    let wrow = &wt[oc * fan_in..(oc + 1) * fan_in];
                    for (k, &wk) in wrow.iter().enumerate() {
                        axpy(&mut dcol[k * p_len..(k + 1) * p_len], wk, go);
                    }
                }
                col2im(&dcol, spec, &g, &mut dx[in_off..in_off + in_plane]);
            }
        }
    }
    Ok(ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}
