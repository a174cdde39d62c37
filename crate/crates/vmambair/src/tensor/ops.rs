//! Elementwise, reduction, shape and normalization operations.
//!
//! Broadcasting is deliberately limited: scalar-times-tensor and
//! `[B,C,1,1]` against `[B,C,H,W]` (channel fusion). Everything else must
//! match shapes exactly or returns a dimension error.

use super::{Element, Tensor};
use crate::error::{Result, TensorError};

fn same_shape<T: Element>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Dim(format!(
            "{what}: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "add")?;
        let data: Vec<T> = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(x, y)| *x + *y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, other],
            move |g| {
                pa.accum_grad(|ga| ga.iter_mut().zip(g).for_each(|(d, s)| *d += *s));
                pb.accum_grad(|gb| gb.iter_mut().zip(g).for_each(|(d, s)| *d += *s));
            },
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "sub")?;
        let data: Vec<T> = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(x, y)| *x - *y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, other],
            move |g| {
                pa.accum_grad(|ga| ga.iter_mut().zip(g).for_each(|(d, s)| *d += *s));
                pb.accum_grad(|gb| gb.iter_mut().zip(g).for_each(|(d, s)| *d -= *s));
            },
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "mul")?;
        let data: Vec<T> = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(x, y)| *x * *y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, other],
            move |g| {
                {
                    let bd = pb.data();
                    pa.accum_grad(|ga| {
                        for i in 0..g.len() {
                            ga[i] += g[i] * bd[i];
                        }
                    });
                }
                let ad = pa.data();
                pb.accum_grad(|gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                });
            },
        ))
    }

    pub fn neg(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|x| -*x).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |g| {
            p.accum_grad(|gp| gp.iter_mut().zip(g).for_each(|(d, s)| *d -= *s));
        })
    }

    pub fn scale(&self, k: T) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|x| *x * k).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |g| {
            p.accum_grad(|gp| gp.iter_mut().zip(g).for_each(|(d, s)| *d += *s * k));
        })
    }

    pub fn exp(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|x| x.exp_fast()).collect();
        let p = self.clone();
        let saved = data.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |g| {
            p.accum_grad(|gp| {
                for i in 0..g.len() {
                    gp[i] += g[i] * saved[i];
                }
            });
        })
    }

    pub fn abs(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|x| x.abs()).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |g| {
            let xd = p.data().clone();
            p.accum_grad(|gp| {
                for i in 0..g.len() {
                    let s = if xd[i] > T::zero() {
                        T::one()
                    } else if xd[i] < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    gp[i] += g[i] * s;
                }
            });
        })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|x| T::one() / (T::one() + (-*x).exp_fast()))
            .collect();
        let p = self.clone();
        let y = data.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |g| {
            p.accum_grad(|gp| {
                for i in 0..g.len() {
                    gp[i] += g[i] * y[i] * (T::one() - y[i]);
                }
            });
        })
    }

    /// x * sigmoid(x)
    pub fn silu(&self) -> Tensor<T> {
        let xd = self.to_vec();
        let data: Vec<T> = xd
            .iter()
            .map(|x| *x / (T::one() + (-*x).exp_fast()))
            .collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |g| {
            let xd = p.data().clone();
            p.accum_grad(|gp| {
                for i in 0..g.len() {
                    let s = T::one() / (T::one() + (-xd[i]).exp_fast());
                    gp[i] += g[i] * s * (T::one() + xd[i] * (T::one() - s));
                }
            });
        })
    }

    /// ln(1 + e^x), linear branch above 20 to avoid overflow.
    pub fn softplus(&self) -> Tensor<T> {
        let hi = T::of_f64(20.0);
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|x| {
                if *x > hi {
                    *x
                } else {
                    (T::one() + x.exp_fast()).ln()
                }
            })
            .collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |g| {
            let xd = p.data().clone();
            p.accum_grad(|gp| {
                for i in 0..g.len() {
                    let s = T::one() / (T::one() + (-xd[i]).exp_fast());
                    gp[i] += g[i] * s;
                }
            });
        })
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let p = self.clone();
        Tensor::from_op(vec![1], vec![s], &[self], move |g| {
            let go = g[0];
            p.accum_grad(|gp| gp.iter_mut().for_each(|d| *d += go));
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::of_f64(self.numel() as f64);
        let s: T = self.data().iter().copied().sum();
        let p = self.clone();
        Tensor::from_op(vec![1], vec![s / n], &[self], move |g| {
            let go = g[0] / n;
            p.accum_grad(|gp| gp.iter_mut().for_each(|d| *d += go));
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::Dim(format!(
                "reshape {:?} -> {:?}",
                self.shape(),
                shape
            )));
        }
        let p = self.clone();
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            &[self],
            move |g| {
                p.accum_grad(|gp| gp.iter_mut().zip(g).for_each(|(d, s)| *d += *s));
            },
        ))
    }

    /// Reverse along one axis (used for the backward channel scan).
    pub fn reverse_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Dim(format!(
                "reverse_axis {axis} out of range for {shape:?}"
            )));
        }
        let idx = reverse_index(&shape, axis);
        let src = self.data();
        let mut data = vec![T::zero(); src.len()];
        for (dst, s) in idx.iter().enumerate() {
            data[dst] = src[*s];
        }
        drop(src);
        let p = self.clone();
        Ok(Tensor::from_op(shape, data, &[self], move |g| {
            p.accum_grad(|gp| {
                for (dst, s) in idx.iter().enumerate() {
                    gp[*s] += g[dst];
                }
            });
        }))
    }

    /// Elementwise product against a `[B,C,1,1]` tensor broadcast over H,W.
    pub fn mul_channel(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = dims4(self, "mul_channel input")?;
        let ss = s.shape();
        if ss != [b, c, 1, 1] {
            return Err(TensorError::Dim(format!(
                "mul_channel: expected [{b},{c},1,1], got {ss:?}"
            )));
        }
        let hw = h * w;
        let mut data = vec![T::zero(); self.numel()];
        {
            let xd = self.data();
            let sd = s.data();
            for bc in 0..b * c {
                let k = sd[bc];
                let base = bc * hw;
                for i in 0..hw {
                    data[base + i] = xd[base + i] * k;
                }
            }
        }
        let (px, ps) = (self.clone(), s.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, s],
            move |g| {
                {
                    let sd = ps.data();
                    px.accum_grad(|gx| {
                        for bc in 0..b * c {
                            let k = sd[bc];
                            let base = bc * hw;
                            for i in 0..hw {
                                gx[base + i] += g[base + i] * k;
                            }
                        }
                    });
                }
                let xd = px.data();
                ps.accum_grad(|gs| {
                    for bc in 0..b * c {
                        let base = bc * hw;
                        let mut acc = T::zero();
                        for i in 0..hw {
                            acc += g[base + i] * xd[base + i];
                        }
                        gs[bc] += acc;
                    }
                });
            },
        ))
    }

    /// Add a `[B,C,1,1]` tensor broadcast over H,W.
    pub fn add_channel(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = dims4(self, "add_channel input")?;
        if s.shape() != [b, c, 1, 1] {
            return Err(TensorError::Dim(format!(
                "add_channel: expected [{b},{c},1,1], got {:?}",
                s.shape()
            )));
        }
        let hw = h * w;
        let mut data = self.to_vec();
        {
            let sd = s.data();
            for bc in 0..b * c {
                let k = sd[bc];
                for i in 0..hw {
                    data[bc * hw + i] += k;
                }
            }
        }
        let (px, ps) = (self.clone(), s.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, s],
            move |g| {
                px.accum_grad(|gx| gx.iter_mut().zip(g).for_each(|(d, v)| *d += *v));
                ps.accum_grad(|gs| {
                    for bc in 0..b * c {
                        let mut acc = T::zero();
                        for i in 0..hw {
                            acc += g[bc * hw + i];
                        }
                        gs[bc] += acc;
                    }
                });
            },
        ))
    }

    /// Mean over the spatial axes: `[B,C,H,W] -> [B,C,1,1]`.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        let (b, c, h, w) = dims4(self, "global_avg_pool")?;
        let hw = h * w;
        let inv = T::of_f64(1.0 / hw as f64);
        let mut data = vec![T::zero(); b * c];
        {
            let xd = self.data();
            for bc in 0..b * c {
                let mut acc = T::zero();
                for i in 0..hw {
                    acc += xd[bc * hw + i];
                }
                data[bc] = acc * inv;
            }
        }
        let p = self.clone();
        Ok(Tensor::from_op(vec![b, c, 1, 1], data, &[self], move |g| {
            p.accum_grad(|gp| {
                for bc in 0..b * c {
                    let go = g[bc] * inv;
                    for i in 0..hw {
                        gp[bc * hw + i] += go;
                    }
                }
            });
        }))
    }

    /// `[B, C·r², H, W] -> [B, C, rH, rW]`, PyTorch channel ordering.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Tensor<T>> {
        let (b, cin, h, w) = dims4(self, "pixel_shuffle")?;
        if cin % (r * r) != 0 {
            return Err(TensorError::Dim(format!(
                "pixel_shuffle: channels {cin} not divisible by r²={}",
                r * r
            )));
        }
        let c = cin / (r * r);
        let (oh, ow) = (h * r, w * r);
        let mut data = vec![T::zero(); b * c * oh * ow];
        {
            let xd = self.data();
            for bi in 0..b {
                for ci in 0..c {
                    for dy in 0..r {
                        for dx in 0..r {
                            let cs = ci * r * r + dy * r + dx;
                            for y in 0..h {
                                for x in 0..w {
                                    let src = ((bi * cin + cs) * h + y) * w + x;
                                    let dst =
                                        ((bi * c + ci) * oh + y * r + dy) * ow + x * r + dx;
                                    data[dst] = xd[src];
                                }
                            }
                        }
                    }
                }
            }
        }
        let p = self.clone();
        Ok(Tensor::from_op(
            vec![b, c, oh, ow],
            data,
            &[self],
            move |g| {
                p.accum_grad(|gp| {
                    for bi in 0..b {
                        for ci in 0..c {
                            for dy in 0..r {
                                for dx in 0..r {
                                    let cs = ci * r * r + dy * r + dx;
                                    for y in 0..h {
                                        for x in 0..w {
                                            let src = ((bi * cin + cs) * h + y) * w + x;
                                            let dst = ((bi * c + ci) * oh + y * r + dy) * ow
                                                + x * r
                                                + dx;
                                            gp[src] += g[dst];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            },
        ))
    }

    /// Exact inverse of [`Tensor::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Tensor<T>> {
        let (b, c, h, w) = dims4(self, "pixel_unshuffle")?;
        if h % r != 0 || w % r != 0 {
            return Err(TensorError::Dim(format!(
                "pixel_unshuffle: spatial {h}x{w} not divisible by r={r}"
            )));
        }
        let (oh, ow) = (h / r, w / r);
        let cout = c * r * r;
        let mut data = vec![T::zero(); b * cout * oh * ow];
        {
            let xd = self.data();
            for bi in 0..b {
                for ci in 0..c {
                    for dy in 0..r {
                        for dx in 0..r {
                            let cd = ci * r * r + dy * r + dx;
                            for y in 0..oh {
                                for x in 0..ow {
                                    let src = ((bi * c + ci) * h + y * r + dy) * w + x * r + dx;
                                    let dst = ((bi * cout + cd) * oh + y) * ow + x;
                                    data[dst] = xd[src];
                                }
                            }
                        }
                    }
                }
            }
        }
        let p = self.clone();
        Ok(Tensor::from_op(
            vec![b, cout, oh, ow],
            data,
            &[self],
            move |g| {
                p.accum_grad(|gp| {
                    for bi in 0..b {
                        for ci in 0..c {
                            for dy in 0..r {
                                for dx in 0..r {
                                    let cd = ci * r * r + dy * r + dx;
                                    for y in 0..oh {
                                        for x in 0..ow {
                                            let src = ((bi * c + ci) * h + y * r + dy) * w
                                                + x * r
                                                + dx;
                                            let dst = ((bi * cout + cd) * oh + y) * ow + x;
                                            gp[src] += g[dst];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            },
        ))
    }

    /// Layer normalization over the channel axis per spatial site, epsilon
    /// 1e-6, affine parameters per channel.
    pub fn layernorm_chan(&self, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = dims4(self, "layernorm")?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::Dim(format!(
                "layernorm: gamma/beta must be [{c}], got {:?}/{:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let hw = h * w;
        let eps = T::of_f64(1e-6);
        let cn = T::of_f64(c as f64);
        let n = self.numel();
        let mut data = vec![T::zero(); n];
        let mut xhat = vec![T::zero(); n];
        let mut istd = vec![T::zero(); b * hw];
        {
            let xd = self.data();
            let gd = gamma.data();
            let bd = beta.data();
            for bi in 0..b {
                for s in 0..hw {
                    let mut mean = T::zero();
                    for ci in 0..c {
                        mean += xd[(bi * c + ci) * hw + s];
                    }
                    mean = mean / cn;
                    let mut var = T::zero();
                    for ci in 0..c {
                        let d = xd[(bi * c + ci) * hw + s] - mean;
                        var += d * d;
                    }
                    var = var / cn;
                    let inv = T::one() / (var + eps).sqrt();
                    istd[bi * hw + s] = inv;
                    for ci in 0..c {
                        let i = (bi * c + ci) * hw + s;
                        let xh = (xd[i] - mean) * inv;
                        xhat[i] = xh;
                        data[i] = gd[ci] * xh + bd[ci];
                    }
                }
            }
        }
        let (px, pg, pb) = (self.clone(), gamma.clone(), beta.clone());
        let xhat2 = xhat.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, gamma, beta],
            move |g| {
                let gd = pg.data().clone();
                px.accum_grad(|gx| {
                    for bi in 0..b {
                        for s in 0..hw {
                            let inv = istd[bi * hw + s];
                            let mut m1 = T::zero();
                            let mut m2 = T::zero();
                            for ci in 0..c {
                                let i = (bi * c + ci) * hw + s;
                                let gg = g[i] * gd[ci];
                                m1 += gg;
                                m2 += gg * xhat2[i];
                            }
                            m1 = m1 / cn;
                            m2 = m2 / cn;
                            for ci in 0..c {
                                let i = (bi * c + ci) * hw + s;
                                let gg = g[i] * gd[ci];
                                gx[i] += (gg - m1 - xhat2[i] * m2) * inv;
                            }
                        }
                    }
                });
                pg.accum_grad(|gg| {
                    for bi in 0..b {
                        for ci in 0..c {
                            let mut acc = T::zero();
                            for s in 0..hw {
                                let i = (bi * c + ci) * hw + s;
                                acc += g[i] * xhat2[i];
                            }
                            gg[ci] += acc;
                        }
                    }
                });
                pb.accum_grad(|gb| {
                    for bi in 0..b {
                        for ci in 0..c {
                            let mut acc = T::zero();
                            for s in 0..hw {
                                acc += g[(bi * c + ci) * hw + s];
                            }
                            gb[ci] += acc;
                        }
                    }
                });
            },
        ))
    }

    /// Per-token linear map over the last axis: `[B,L,D] x [O,D] -> [B,L,O]`.
    pub fn linear_seq(&self, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let sh = self.shape();
        if sh.len() != 3 {
            return Err(TensorError::Dim(format!("linear_seq input {sh:?}")));
        }
        let (b, l, d) = (sh[0], sh[1], sh[2]);
        let ws = w.shape();
        if ws.len() != 2 || ws[1] != d {
            return Err(TensorError::Dim(format!(
                "linear_seq weight {ws:?} vs input depth {d}"
            )));
        }
        let o = ws[0];
        if let Some(bi) = bias {
            if bi.shape() != [o] {
                return Err(TensorError::Dim(format!(
                    "linear_seq bias {:?} vs out {o}",
                    bi.shape()
                )));
            }
        }
        let bl = b * l;
        let mut data = vec![T::zero(); bl * o];
        {
            let xd = self.data();
            let wd = w.data();
            let bd = bias.map(|t| t.to_vec());
            for t in 0..bl {
                let xrow = &xd[t * d..(t + 1) * d];
                let out = &mut data[t * o..(t + 1) * o];
                for oi in 0..o {
                    let wrow = &wd[oi * d..(oi + 1) * d];
                    let mut acc = T::zero();
                    for k in 0..d {
                        acc += xrow[k] * wrow[k];
                    }
                    out[oi] = acc;
                }
                if let Some(bd) = &bd {
                    for oi in 0..o {
                        out[oi] += bd[oi];
                    }
                }
            }
        }
        let px = self.clone();
        let pw = w.clone();
        let pbias = bias.cloned();
        let mut parents: Vec<&Tensor<T>> = vec![self, w];
        if let Some(bi) = bias {
            parents.push(bi);
        }
        Ok(Tensor::from_op(
            vec![b, l, o],
            data,
            &parents,
            move |g| {
                {
                    let wd = pw.data();
                    px.accum_grad(|gx| {
                        for t in 0..bl {
                            let grow = &g[t * o..(t + 1) * o];
                            let gxrow = &mut gx[t * d..(t + 1) * d];
                            for oi in 0..o {
                                let go = grow[oi];
                                if go == T::zero() {
                                    continue;
                                }
                                let wrow = &wd[oi * d..(oi + 1) * d];
                                for k in 0..d {
                                    gxrow[k] += go * wrow[k];
                                }
                            }
                        }
                    });
                }
                {
                    let xd = px.data();
                    pw.accum_grad(|gw| {
                        for t in 0..bl {
                            let grow = &g[t * o..(t + 1) * o];
                            let xrow = &xd[t * d..(t + 1) * d];
                            for oi in 0..o {
                                let go = grow[oi];
                                if go == T::zero() {
                                    continue;
                                }
                                let gwrow = &mut gw[oi * d..(oi + 1) * d];
                                for k in 0..d {
                                    gwrow[k] += go * xrow[k];
                                }
                            }
                        }
                    });
                }
                if let Some(pb) = &pbias {
                    pb.accum_grad(|gb| {
                        for t in 0..bl {
                            for oi in 0..o {
                                gb[oi] += g[t * o + oi];
                            }
                        }
                    });
                }
            },
        ))
    }

    /// Split along an axis into parts with the given extents.
    pub fn split(&self, axis: usize, parts: &[usize]) -> Result<Vec<Tensor<T>>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Dim(format!(
                "split axis {axis} out of range for {shape:?}"
            )));
        }
        if parts.iter().sum::<usize>() != shape[axis] {
            return Err(TensorError::Dim(format!(
                "split parts {parts:?} do not sum to extent {}",
                shape[axis]
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let total_axis = shape[axis];
        let src = self.data();
        let mut outs = Vec::with_capacity(parts.len());
        let mut offset = 0usize;
        for &p in parts {
            let mut out_shape = shape.clone();
            out_shape[axis] = p;
            let mut data = vec![T::zero(); outer * p * inner];
            for oi in 0..outer {
                let sbase = (oi * total_axis + offset) * inner;
                let dbase = oi * p * inner;
                data[dbase..dbase + p * inner]
                    .copy_from_slice(&src[sbase..sbase + p * inner]);
            }
            let parent = self.clone();
            let off = offset;
            outs.push(Tensor::from_op(out_shape, data, &[self], move |g| {
                parent.accum_grad(|gp| {
                    for oi in 0..outer {
                        let dbase = (oi * total_axis + off) * inner;
                        let sbase = oi * p * inner;
                        for i in 0..p * inner {
                            gp[dbase + i] += g[sbase + i];
                        }
                    }
                });
            }));
            offset += p;
        }
        Ok(outs)
    }
}

/// Concatenate along an axis.
pub fn concat<T: Element>(tensors: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    if tensors.is_empty() {
        return Err(TensorError::Dim("concat of zero tensors".into()));
    }
    let base = tensors[0].shape().to_vec();
    if axis >= base.len() {
        return Err(TensorError::Dim(format!(
            "concat axis {axis} out of range for {base:?}"
        )));
    }
    for t in tensors {
        let s = t.shape();
        if s.len() != base.len()
            || s.iter()
                .zip(base.iter())
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(TensorError::Dim(format!(
                "concat: incompatible shapes {base:?} vs {s:?}"
            )));
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let extents: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let mut data = vec![T::zero(); outer * total * inner];
    {
        let mut offset = 0usize;
        for (t, &e) in tensors.iter().zip(&extents) {
            let src = t.data();
            for oi in 0..outer {
                let sbase = oi * e * inner;
                let dbase = (oi * total + offset) * inner;
                data[dbase..dbase + e * inner].copy_from_slice(&src[sbase..sbase + e * inner]);
            }
            offset += e;
        }
    }
    let parents_owned: Vec<Tensor<T>> = tensors.iter().map(|t| (*t).clone()).collect();
    let exts = extents.clone();
    Ok(Tensor::from_op(out_shape, data, tensors, move |g| {
        let mut offset = 0usize;
        for (t, &e) in parents_owned.iter().zip(&exts) {
            t.accum_grad(|gp| {
                for oi in 0..outer {
                    let dbase = oi * e * inner;
                    let sbase = (oi * total + offset) * inner;
                    for i in 0..e * inner {
                        gp[dbase + i] += g[sbase + i];
                    }
                }
            });
            offset += e;
        }
    }))
}

pub(crate) fn dims4<T: Element>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(TensorError::Dim(format!("{what}: expected rank 4, got {s:?}")));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

fn reverse_index(shape: &[usize], axis: usize) -> Vec<usize> {
    let outer: usize = shape[..axis].iter().product();
    let e = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut idx = vec![0usize; shape.iter().product()];
    for oi in 0..outer {
        for a in 0..e {
            for i in 0..inner {
                idx[(oi * e + a) * inner + i] = (oi * e + (e - 1 - a)) * inner + i;
            }
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(data: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::new(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn silu_at_zero() {
        let x = t64(&[0.0], &[1]);
        assert_eq!(x.silu().item(), 0.0);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let x = t64(&[0.0], &[1]);
        assert!((x.softplus().item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_saturates() {
        let x = t64(&[50.0], &[1]);
        assert!((x.sigmoid().item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn add_then_sub_roundtrip() {
        let a = t64(&[1.0, -2.5, 3.0], &[3]);
        let b = t64(&[0.5, 4.0, -1.0], &[3]);
        let r = a.add(&b).unwrap().sub(&b).unwrap();
        for (x, y) in r.data().iter().zip(a.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mul_by_zeros() {
        let a = t64(&[1.0, 2.0], &[2]);
        let z = Tensor::zeros(&[2]);
        assert_eq!(a.mul(&z).unwrap().to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = t64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let b = t64(&[7.0, 8.0, 9.0, 10.0], &[2, 2]);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        let parts = c.split(1, &[3, 2]).unwrap();
        assert_eq!(parts[0].to_vec(), a.to_vec());
        assert_eq!(parts[1].to_vec(), b.to_vec());
    }

    #[test]
    fn concat_axis_out_of_range() {
        let a = t64(&[1.0], &[1]);
        assert!(matches!(concat(&[&a], 3), Err(TensorError::Dim(_))));
    }

    #[test]
    fn split_extent_mismatch() {
        let a = t64(&[1.0, 2.0], &[2]);
        assert!(a.split(0, &[3]).is_err());
    }

    #[test]
    fn pixel_shuffle_definition() {
        // [a,b,c,d] over 4 channels of a 1x1 map -> 2x2 [[a,b],[c,d]]
        let x = t64(&[1.0, 2.0, 3.0, 4.0], &[1, 4, 1, 1]);
        let y = x.pixel_shuffle(2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pixel_shuffle_roundtrip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..2 * 8 * 3 * 5).map(|_| rng.gen::<f64>()).collect();
        let x = t64(&data, &[2, 8, 3, 5]);
        let y = x.pixel_shuffle(2).unwrap().pixel_unshuffle(2).unwrap();
        assert_eq!(y.to_vec(), data);
    }

    #[test]
    fn pixel_shuffle_shape_law() {
        let x = Tensor::<f64>::zeros(&[1, 16, 4, 4]);
        assert_eq!(x.pixel_shuffle(4).unwrap().shape(), &[1, 1, 16, 16]);
    }

    #[test]
    fn pixel_shuffle_indivisible_errors() {
        let x = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        assert!(matches!(x.pixel_shuffle(2), Err(TensorError::Dim(_))));
    }

    #[test]
    fn gap_constant_and_mean() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 0.7);
        assert!((x.global_avg_pool().unwrap().item() - 0.7).abs() < 1e-15);
        let y = t64(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        assert!((y.global_avg_pool().unwrap().item() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn layernorm_constant_input_zeros() {
        let x = Tensor::<f64>::full(&[1, 5, 2, 2], 3.0);
        let gamma = Tensor::<f64>::full(&[5], 1.0);
        let beta = Tensor::<f64>::zeros(&[5]);
        let y = x.layernorm_chan(&gamma, &beta).unwrap();
        for v in y.data().iter() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layernorm_zero_gamma_gives_beta() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..1 * 4 * 3 * 3).map(|_| rng.gen::<f64>()).collect();
        let x = t64(&data, &[1, 4, 3, 3]);
        let gamma = Tensor::<f64>::zeros(&[4]);
        let beta = t64(&[0.1, 0.2, 0.3, 0.4], &[4]);
        let y = x.layernorm_chan(&gamma, &beta).unwrap();
        let yd = y.data();
        for c in 0..4 {
            for s in 0..9 {
                assert!((yd[c * 9 + s] - (0.1 + 0.1 * c as f64)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layernorm_moments() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (b, c, h, w) = (2usize, 8usize, 3usize, 4usize);
        let data: Vec<f64> = (0..b * c * h * w).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let x = t64(&data, &[b, c, h, w]);
        let gamma = Tensor::<f64>::full(&[c], 1.0);
        let beta = Tensor::<f64>::zeros(&[c]);
        let y = x.layernorm_chan(&gamma, &beta).unwrap();
        let yd = y.data();
        let hw = h * w;
        for bi in 0..b {
            for s in 0..hw {
                let mut mean = 0.0;
                let mut var = 0.0;
                for ci in 0..c {
                    mean += yd[(bi * c + ci) * hw + s];
                }
                mean /= c as f64;
                for ci in 0..c {
                    let d = yd[(bi * c + ci) * hw + s] - mean;
                    var += d * d;
                }
                var /= c as f64;
                assert!(mean.abs() < 1e-10, "mean {mean}");
                assert!((var - 1.0).abs() < 1e-4, "var {var}");
            }
        }
    }

    #[test]
    fn reverse_axis_twice_is_identity() {
        let x = t64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1, 3, 2]);
        let y = x.reverse_axis(1).unwrap();
        assert_eq!(y.to_vec(), vec![5.0, 6.0, 3.0, 4.0, 1.0, 2.0]);
        assert_eq!(y.reverse_axis(1).unwrap().to_vec(), x.to_vec());
    }
}
