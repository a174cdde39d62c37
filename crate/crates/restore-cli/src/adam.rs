//! Adam with bias correction over a flat list of named parameter tensors.

use vmambair::{Element, Tensor};

pub struct Adam<T: Element> {
    params: Vec<Tensor<T>>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(params: Vec<Tensor<T>>, beta1: f64, beta2: f64) -> Self {
        let m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        let v = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        Adam {
            params,
            m,
            v,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
        }
    }

    /// One update with the given learning rate; parameters whose gradient is
    /// unset are left untouched. Clears all gradients afterwards.
    pub fn step(&mut self, lr: f64) {
        self.t += 1;
        let b1 = T::of_f64(self.beta1);
        let b2 = T::of_f64(self.beta2);
        let one = T::one();
        let bc1 = T::of_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::of_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr_t = T::of_f64(lr);
        let eps = T::of_f64(self.eps);
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.apply(|data| {
                for j in 0..data.len() {
                    m[j] = b1 * m[j] + (one - b1) * g[j];
                    v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    data[j] = data[j] - lr_t * mhat / (vhat.sqrt() + eps);
                }
            });
            p.zero_grad();
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
