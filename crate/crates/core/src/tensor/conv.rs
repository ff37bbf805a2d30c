//! Direct (loop-based) 2-D convolution and max-pool kernels.
//!
//! Convolution is cross-correlation over NCHW input with an OCKK kernel.
//! The inner loops are arranged so the stride-1 case reduces to scaled
//! row additions and row dot products, which the compiler vectorizes.

use super::{shape_err, Graph, NodeId, Op, TensorError};
#[cfg(test)]
use super::Tensor;

pub(crate) fn conv_out_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize, TensorError> {
    if stride == 0 {
        return Err(shape_err("stride must be >= 1"));
    }
    let padded = input + 2 * padding;
    if padded < kernel || kernel == 0 {
        return Err(shape_err(format!(
            "kernel {kernel} does not fit input {input} with padding {padding}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn dims4(shape: &[usize], what: &str) -> Result<[usize; 4], TensorError> {
    if shape.len() != 4 {
        return Err(shape_err(format!("{what} must be 4-d, got {shape:?}")));
    }
    Ok([shape[0], shape[1], shape[2], shape[3]])
}

/// Valid output-column range for a given kernel column: all `ow` with
/// `0 <= ow*stride + kw - padding < w`.
fn col_range(kw: usize, padding: usize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let off = kw as isize - padding as isize;
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let max_iw = w as isize - 1 - off;
    if max_iw < 0 {
        return (0, 0);
    }
    let hi = (max_iw as usize / stride + 1).min(wo);
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_values(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    k: &[f64],
    [o, _, kh, kw]: [usize; 4],
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n * o * ho * wo];
    for ni in 0..n {
        for oi in 0..o {
            let out_plane = &mut out[(ni * o + oi) * ho * wo..][..ho * wo];
            for ci in 0..c {
                let x_plane = &x[(ni * c + ci) * h * w..][..h * w];
                let k_plane = &k[(oi * c + ci) * kh * kw..][..kh * kw];
                for khi in 0..kh {
                    for kwi in 0..kw {
                        let weight = k_plane[khi * kw + kwi];
                        let (lo, hi) = col_range(kwi, padding, stride, w, wo);
                        if lo >= hi {
                            continue;
                        }
                        let off = kwi as isize - padding as isize;
                        for oh in 0..ho {
                            let ih = (oh * stride + khi) as isize - padding as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let x_row = &x_plane[ih as usize * w..][..w];
                            let out_row = &mut out_plane[oh * wo..][..wo];
                            if stride == 1 {
                                let start = (lo as isize + off) as usize;
                                for (acc, &xv) in out_row[lo..hi]
                                    .iter_mut()
                                    .zip(&x_row[start..start + (hi - lo)])
                                {
                                    *acc += weight * xv;
                                }
                            } else {
                                for ow in lo..hi {
                                    let iw = (ow * stride) as isize + off;
                                    out_row[ow] += weight * x_row[iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_grad_input(
    dout: &[f64],
    x_dims: [usize; 4],
    k: &[f64],
    k_dims: [usize; 4],
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let [n, c, h, w] = x_dims;
    let [o, _, kh, kw] = k_dims;
    let mut dx = vec![0.0; n * c * h * w];
    for ni in 0..n {
        for ci in 0..c {
            let dx_plane = &mut dx[(ni * c + ci) * h * w..][..h * w];
            for oi in 0..o {
                let dout_plane = &dout[(ni * o + oi) * ho * wo..][..ho * wo];
                let k_plane = &k[(oi * c + ci) * kh * kw..][..kh * kw];
                for khi in 0..kh {
                    for kwi in 0..kw {
                        let weight = k_plane[khi * kw + kwi];
                        let (lo, hi) = col_range(kwi, padding, stride, w, wo);
                        if lo >= hi {
                            continue;
                        }
                        let off = kwi as isize - padding as isize;
                        for oh in 0..ho {
                            let ih = (oh * stride + khi) as isize - padding as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let dx_row = &mut dx_plane[ih as usize * w..][..w];
                            let dout_row = &dout_plane[oh * wo..][..wo];
                            if stride == 1 {
                                let start = (lo as isize + off) as usize;
                                for (dxv, &g) in dx_row[start..start + (hi - lo)]
                                    .iter_mut()
                                    .zip(&dout_row[lo..hi])
                                {
                                    *dxv += weight * g;
                                }
                            } else {
                                for ow in lo..hi {
                                    let iw = (ow * stride) as isize + off;
                                    dx_row[iw as usize] += weight * dout_row[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_grad_kernel(
    dout: &[f64],
    x: &[f64],
    x_dims: [usize; 4],
    k_dims: [usize; 4],
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let [n, c, h, w] = x_dims;
    let [o, _, kh, kw] = k_dims;
    let mut dk = vec![0.0; o * c * kh * kw];
    for ni in 0..n {
        for oi in 0..o {
            let dout_plane = &dout[(ni * o + oi) * ho * wo..][..ho * wo];
            for ci in 0..c {
                let x_plane = &x[(ni * c + ci) * h * w..][..h * w];
                let dk_plane = &mut dk[(oi * c + ci) * kh * kw..][..kh * kw];
                for khi in 0..kh {
                    for kwi in 0..kw {
                        let (lo, hi) = col_range(kwi, padding, stride, w, wo);
                        if lo >= hi {
                            continue;
                        }
                        let off = kwi as isize - padding as isize;
                        let mut acc = 0.0;
                        for oh in 0..ho {
                            let ih = (oh * stride + khi) as isize - padding as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let x_row = &x_plane[ih as usize * w..][..w];
                            let dout_row = &dout_plane[oh * wo..][..wo];
                            if stride == 1 {
                                let start = (lo as isize + off) as usize;
                                for (&g, &xv) in dout_row[lo..hi]
                                    .iter()
                                    .zip(&x_row[start..start + (hi - lo)])
                                {
                                    acc += g * xv;
                                }
                            } else {
                                for ow in lo..hi {
                                    let iw = (ow * stride) as isize + off;
                                    acc += dout_row[ow] * x_row[iw as usize];
                                }
                            }
                        }
                        dk_plane[khi * kw + kwi] += acc;
                    }
                }
            }
        }
    }
    dk
}

impl Graph {
    /// Cross-correlation of an NCHW input with an OCKK kernel.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let x_dims = dims4(self.shape(input), "conv input")?;
        let k_dims = dims4(self.shape(kernel), "conv kernel")?;
        if k_dims[1] != x_dims[1] {
            return Err(shape_err(format!(
                "kernel expects {} input channels, input has {}",
                k_dims[1], x_dims[1]
            )));
        }
        if k_dims[2] != k_dims[3] {
            return Err(shape_err(format!(
                "only square kernels are supported, got {}x{}",
                k_dims[2], k_dims[3]
            )));
        }
        let ho = conv_out_dim(x_dims[2], k_dims[2], stride, padding)?;
        let wo = conv_out_dim(x_dims[3], k_dims[3], stride, padding)?;
        let values = conv2d_values(
            self.values(input),
            x_dims,
            self.values(kernel),
            k_dims,
            stride,
            padding,
            ho,
            wo,
        );
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(
            vec![x_dims[0], k_dims[0], ho, wo],
            values,
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
            needs,
        ))
    }

    /// Max-pool over NCHW input; ties route the gradient to the first
    /// (row-major) maximal element.
    pub fn maxpool2d(
        &mut self,
        input: NodeId,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let [n, c, h, w] = dims4(self.shape(input), "maxpool input")?;
        let ho = conv_out_dim(h, kernel, stride, padding)?;
        let wo = conv_out_dim(w, kernel, stride, padding)?;
        let x = self.values(input);
        let mut values = vec![0.0; n * c * ho * wo];
        let mut argmax = vec![usize::MAX; n * c * ho * wo];
        for ni in 0..n {
            for ci in 0..c {
                let x_plane = &x[(ni * c + ci) * h * w..][..h * w];
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for kh in 0..kernel {
                            let ih = (oh * stride + kh) as isize - padding as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kw in 0..kernel {
                                let iw = (ow * stride + kw) as isize - padding as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let v = x_plane[ih as usize * w + iw as usize];
                                if v > best {
                                    best = v;
                                    best_idx = (ni * c + ci) * h * w + ih as usize * w + iw as usize;
                                }
                            }
                        }
                        let flat = ((ni * c + ci) * ho + oh) * wo + ow;
                        values[flat] = if best_idx == usize::MAX { 0.0 } else { best };
                        argmax[flat] = best_idx;
                    }
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(
            vec![n, c, ho, wo],
            values,
            Op::MaxPool2d { input, argmax },
            needs,
        ))
    }
}

/// Reference convolution used by tests: six explicit nested loops, no
/// range precomputation shared with the production kernel.
#[cfg(test)]
pub(crate) fn conv2d_reference(
    x: &Tensor,
    k: &Tensor,
    stride: usize,
    padding: usize,
) -> Tensor {
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (o, kk) = (k.shape[0], k.shape[2]);
    let ho = (h + 2 * padding - kk) / stride + 1;
    let wo = (w + 2 * padding - kk) / stride + 1;
    let mut out = Tensor::zeros(vec![n, o, ho, wo]);
    for ni in 0..n {
        for oi in 0..o {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for kh in 0..kk {
                            for kw in 0..kk {
                                let ih = (oh * stride + kh) as isize - padding as isize;
                                let iw = (ow * stride + kw) as isize - padding as isize;
                                if ih < 0 || ih >= h as isize || iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let xv = x.values
                                    [((ni * c + ci) * h + ih as usize) * w + iw as usize];
                                let kv = k.values[((oi * c + ci) * kk + kh) * kk + kw];
                                acc += xv * kv;
                            }
                        }
                    }
                    out.values[((ni * o + oi) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
    out
}
