//! Small parameterized layers shared by the OSS blocks and the model.

use crate::error::Result;
use crate::init::{trunc_normal, InitRng};
use crate::tensor::{Element, Tensor};

pub const INIT_STD: f64 = 0.02;

/// Convolution layer with owned weights. `groups == cin` gives the depthwise
/// case.
pub struct Conv2dLayer<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl<T: Element> Conv2dLayer<T> {
    pub fn new(rng: &mut InitRng, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Self::grouped(rng, cin, cout, k, stride, 1)
    }

    pub fn depthwise(rng: &mut InitRng, c: usize, k: usize) -> Self {
        Self::grouped(rng, c, c, k, 1, c)
    }

    pub fn grouped(
        rng: &mut InitRng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
    ) -> Self {
        let n = cout * (cin / groups) * k * k;
        Conv2dLayer {
            weight: Tensor::param(trunc_normal(rng, n, INIT_STD), &[cout, cin / groups, k, k])
                .unwrap(),
            bias: Tensor::param(vec![T::zero(); cout], &[cout]).unwrap(),
            stride,
            pad: (k - 1) / 2,
            groups,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        crate::tensor::conv2d_grouped(x, &self.weight, &self.bias, self.stride, self.pad, self.groups)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }

    pub fn num_params(&self) -> u64 {
        (self.weight.numel() + self.bias.numel()) as u64
    }

    /// 2 FLOPs per multiply-accumulate at the given output size; the bias
    /// add is not counted.
    pub fn flops(&self, hout: u64, wout: u64) -> u64 {
        2 * self.weight.numel() as u64 * hout * wout
    }
}

pub struct LayerNorm<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Element> LayerNorm<T> {
    pub fn new(c: usize) -> Self {
        LayerNorm {
            gamma: Tensor::param(vec![T::one(); c], &[c]).unwrap(),
            beta: Tensor::param(vec![T::zero(); c], &[c]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layernorm_chan(&self.gamma, &self.beta)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}
