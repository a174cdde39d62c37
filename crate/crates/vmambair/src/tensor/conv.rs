//! 2-D convolution (cross-correlation convention, no kernel flip) with
//! grouping, plus the depthwise special case.

use super::ops::dims4;
use super::{Element, Tensor};
use crate::error::{Result, TensorError};

struct ConvDims {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    groups: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn check_dims<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<ConvDims> {
    let (b, cin, h, w) = dims4(x, "conv2d input")?;
    let ws = weight.shape();
    if ws.len() != 4 {
        return Err(TensorError::Dim(format!("conv2d weight {ws:?}")));
    }
    let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if kh != kw {
        return Err(TensorError::Dim(format!("conv2d kernel must be square, got {kh}x{kw}")));
    }
    let k = kh;
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(TensorError::Dim(format!(
            "conv2d groups {groups} incompatible with cin={cin}, cout={cout}"
        )));
    }
    if cin_g != cin / groups {
        return Err(TensorError::Dim(format!(
            "conv2d: weight expects cin/groups={cin_g}, input has cin={cin} with groups={groups}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(TensorError::Dim(format!(
            "conv2d bias {:?} vs cout {cout}",
            bias.shape()
        )));
    }
    if stride == 0 || stride > 2 {
        return Err(TensorError::Dim(format!("conv2d stride {stride} unsupported")));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(TensorError::Dim(format!(
            "conv2d: input {h}x{w} (pad {pad}) smaller than kernel {k}"
        )));
    }
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    Ok(ConvDims {
        b,
        cin,
        h,
        w,
        cout,
        k,
        groups,
        stride,
        pad,
        oh,
        ow,
    })
}

fn conv_forward<T: Element>(x: &[T], wt: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let mut out = vec![T::zero(); d.b * d.cout * d.oh * d.ow];
    let cin_g = d.cin / d.groups;
    let cout_g = d.cout / d.groups;
    let ohw = d.oh * d.ow;
    if d.k == 1 && d.stride == 1 && d.pad == 0 {
        // 1x1 fast path: per-sample matmul over the spatial axis.
        let hw = d.h * d.w;
        for bi in 0..d.b {
            for g in 0..d.groups {
                for co_l in 0..cout_g {
                    let co = g * cout_g + co_l;
                    let orow = &mut out[(bi * d.cout + co) * hw..(bi * d.cout + co + 1) * hw];
                    orow.fill(bias[co]);
                    for ci_l in 0..cin_g {
                        let ci = g * cin_g + ci_l;
                        let wv = wt[co * cin_g + ci_l];
                        let xrow = &x[(bi * d.cin + ci) * hw..(bi * d.cin + ci + 1) * hw];
                        for s in 0..hw {
                            orow[s] += wv * xrow[s];
                        }
                    }
                }
            }
        }
        return out;
    }
    for bi in 0..d.b {
        for g in 0..d.groups {
            for co_l in 0..cout_g {
                let co = g * cout_g + co_l;
                let obase = (bi * d.cout + co) * ohw;
                out[obase..obase + ohw].fill(bias[co]);
                for ci_l in 0..cin_g {
                    let ci = g * cin_g + ci_l;
                    let xbase = (bi * d.cin + ci) * d.h * d.w;
                    let wbase = ((co * cin_g + ci_l) * d.k) * d.k;
                    for kh in 0..d.k {
                        for kw in 0..d.k {
                            let wv = wt[wbase + kh * d.k + kw];
                            if wv == T::zero() {
                                continue;
                            }
                            for ohi in 0..d.oh {
                                let ih = (ohi * d.stride + kh) as isize - d.pad as isize;
                                if ih < 0 || ih as usize >= d.h {
                                    continue;
                                }
                                let xrow = xbase + ih as usize * d.w;
                                let orow = obase + ohi * d.ow;
                                // valid ow range so that 0 <= iw < w
                                let iw0 = kw as isize - d.pad as isize;
                                let lo = if iw0 < 0 {
                                    ((-iw0) as usize).div_ceil(d.stride)
                                } else {
                                    0
                                };
                                let hi_excl = {
                                    // iw = ow*stride + iw0 < w
                                    let max = d.w as isize - iw0;
                                    if max <= 0 {
                                        0
                                    } else {
                                        (((max - 1) as usize) / d.stride + 1).min(d.ow)
                                    }
                                };
                                for owi in lo..hi_excl {
                                    let iw = (owi * d.stride) as isize + iw0;
                                    out[orow + owi] += wv * x[xrow + iw as usize];
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
fn conv_backward<T: Element>(
    g: &[T],
    x: &[T],
    wt: &[T],
    d: &ConvDims,
    gx: Option<&mut [T]>,
    gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let cin_g = d.cin / d.groups;
    let cout_g = d.cout / d.groups;
    let ohw = d.oh * d.ow;
    if let Some(gb) = gb {
        for bi in 0..d.b {
            for co in 0..d.cout {
                let base = (bi * d.cout + co) * ohw;
                let mut acc = T::zero();
                for s in 0..ohw {
                    acc += g[base + s];
                }
                gb[co] += acc;
            }
        }
    }
    if d.k == 1 && d.stride == 1 && d.pad == 0 {
        let hw = d.h * d.w;
        if let Some(gx) = gx {
            for bi in 0..d.b {
                for gr in 0..d.groups {
                    for ci_l in 0..cin_g {
                        let ci = gr * cin_g + ci_l;
                        let gxrow = &mut gx[(bi * d.cin + ci) * hw..(bi * d.cin + ci + 1) * hw];
                        for co_l in 0..cout_g {
                            let co = gr * cout_g + co_l;
                            let wv = wt[co * cin_g + ci_l];
                            let grow = &g[(bi * d.cout + co) * hw..(bi * d.cout + co + 1) * hw];
                            for s in 0..hw {
                                gxrow[s] += wv * grow[s];
                            }
                        }
                    }
                }
            }
        }
        if let Some(gw) = gw {
            for bi in 0..d.b {
                for gr in 0..d.groups {
                    for co_l in 0..cout_g {
                        let co = gr * cout_g + co_l;
                        let grow = &g[(bi * d.cout + co) * hw..(bi * d.cout + co + 1) * hw];
                        for ci_l in 0..cin_g {
                            let ci = gr * cin_g + ci_l;
                            let xrow = &x[(bi * d.cin + ci) * hw..(bi * d.cin + ci + 1) * hw];
                            let mut acc = T::zero();
                            for s in 0..hw {
                                acc += grow[s] * xrow[s];
                            }
                            gw[co * cin_g + ci_l] += acc;
                        }
                    }
                }
            }
        }
        return;
    }
    // General case: scatter from each output position.
    let gx_present = gx.is_some();
    let gw_present = gw.is_some();
    let mut gx_buf = gx;
    let mut gw_buf = gw;
    for bi in 0..d.b {
        for gr in 0..d.groups {
            for co_l in 0..cout_g {
                let co = gr * cout_g + co_l;
                let obase = (bi * d.cout + co) * ohw;
                for ci_l in 0..cin_g {
                    let ci = gr * cin_g + ci_l;
                    let xbase = (bi * d.cin + ci) * d.h * d.w;
                    let wbase = (co * cin_g + ci_l) * d.k * d.k;
                    for kh in 0..d.k {
                        for kw in 0..d.k {
                            let wv = wt[wbase + kh * d.k + kw];
                            let mut wacc = T::zero();
                            for ohi in 0..d.oh {
                                let ih = (ohi * d.stride + kh) as isize - d.pad as isize;
                                if ih < 0 || ih as usize >= d.h {
                                    continue;
                                }
                                let xrow = xbase + ih as usize * d.w;
                                let orow = obase + ohi * d.ow;
                                let iw0 = kw as isize - d.pad as isize;
                                let lo = if iw0 < 0 {
                                    ((-iw0) as usize).div_ceil(d.stride)
                                } else {
                                    0
                                };
                                let hi_excl = {
                                    let max = d.w as isize - iw0;
                                    if max <= 0 {
                                        0
                                    } else {
                                        (((max - 1) as usize) / d.stride + 1).min(d.ow)
                                    }
                                };
                                for owi in lo..hi_excl {
                                    let iw = ((owi * d.stride) as isize + iw0) as usize;
                                    let go = g[orow + owi];
                                    if gx_present {
                                        gx_buf.as_mut().unwrap()[xrow + iw] += wv * go;
                                    }
                                    if gw_present {
                                        wacc += go * x[xrow + iw];
                                    }
                                }
                            }
                            if gw_present {
                                gw_buf.as_mut().unwrap()[wbase + kh * d.k + kw] += wacc;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Grouped 2-D cross-correlation. `pad = (k-1)/2` gives same-size output at
/// stride 1.
pub fn conv2d_grouped<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let d = check_dims(x, weight, bias, stride, pad, groups)?;
    let data = conv_forward(&x.data(), &weight.data(), &bias.data(), &d);
    let shape = vec![d.b, d.cout, d.oh, d.ow];
    let (px, pw, pb) = (x.clone(), weight.clone(), bias.clone());
    Ok(Tensor::from_op(
        shape,
        data,
        &[x, weight, bias],
        move |g| {
            let xd = px.data().clone();
            let wd = pw.data().clone();
            if px.requires_grad() {
                px.accum_grad(|gx| conv_backward(g, &xd, &wd, &d, Some(gx), None, None));
            }
            if pw.requires_grad() {
                pw.accum_grad(|gw| conv_backward(g, &xd, &wd, &d, None, Some(gw), None));
            }
            if pb.requires_grad() {
                pb.accum_grad(|gb| conv_backward(g, &xd, &wd, &d, None, None, Some(gb)));
            }
        },
    ))
}

/// Dense 2-D convolution.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    conv2d_grouped(x, weight, bias, stride, pad, 1)
}

/// Depthwise convolution: one `[1,k,k]` filter per channel, same-size
/// padding, channel c of the output depends only on channel c of the input.
pub fn dwconv2d<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.shape().get(1).copied().unwrap_or(0);
    let k = weight.shape().get(2).copied().unwrap_or(0);
    if k % 2 == 0 {
        return Err(TensorError::Dim(format!("dwconv2d kernel {k} must be odd")));
    }
    conv2d_grouped(x, weight, bias, 1, (k - 1) / 2, c)
}
