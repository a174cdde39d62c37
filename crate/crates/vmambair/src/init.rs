//! Seedable parameter initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Element;

pub type InitRng = ChaCha8Rng;

/// Truncated normal: resample anything beyond two standard deviations.
pub fn trunc_normal<T: Element>(rng: &mut InitRng, n: usize, std: f64) -> Vec<T> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            out.push(T::of_f64(z * std));
        }
    }
    out
}

pub fn uniform<T: Element>(rng: &mut InitRng, n: usize, lo: f64, hi: f64) -> Vec<T> {
    (0..n).map(|_| T::of_f64(rng.gen_range(lo..hi))).collect()
}

/// Timescale bias init: softplus(dt_bias) drawn log-uniformly from
/// [dt_min, dt_max].
pub fn dt_bias_init<T: Element>(rng: &mut InitRng, n: usize, dt_min: f64, dt_max: f64) -> Vec<T> {
    (0..n)
        .map(|_| {
            let ln_dt = rng.gen_range(dt_min.ln()..dt_max.ln());
            let dt = ln_dt.exp();
            // inverse softplus
            let b = (dt.exp() - 1.0).ln();
            T::of_f64(b)
        })
        .collect()
}
