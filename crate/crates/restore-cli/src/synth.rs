//! Synthetic data: procedural clean textures, additive rain streaks, and
//! antialiased bicubic ×4 downscaling. Everything is a pure function of its
//! seed. Images are planar `[3,H,W]` f32 in [0,1].

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct RainParams {
    /// Streak count per pixel; n = density·h·w.
    pub density: f64,
    /// Streak direction, degrees from the horizontal axis.
    pub angle_deg: f64,
    /// Streak length in pixels.
    pub length: usize,
    /// Base additive brightness of a streak.
    pub intensity: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        RainParams {
            density: 0.01,
            angle_deg: 70.0,
            length: 12,
            intensity: 0.5,
        }
    }
}

/// One procedural clean texture: a smooth gradient, a checkerboard, or
/// low-pass filtered noise, chosen and parameterized by the rng.
pub fn gen_clean(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f32> {
    match rng.gen_range(0u32..3) {
        0 => gradient(rng, h, w),
        1 => checker(rng, h, w),
        _ => filtered_noise(rng, h, w),
    }
}

/// Deterministic corpus of clean images.
pub fn make_corpus(seed: u64, count: usize, h: usize, w: usize) -> Vec<Vec<f32>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64 * 0x9e37_79b9));
            gen_clean(&mut rng, h, w)
        })
        .collect()
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
}

fn gradient(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f32> {
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let hw = h * w;
    let mut img = vec![0.0f32; 3 * hw];
    for y in 0..h {
        for x in 0..w {
            let t = 0.5
                + 0.5 * (dx * (x as f64 / w as f64 - 0.5) + dy * (y as f64 / h as f64 - 0.5));
            let t = t.clamp(0.0, 1.0) as f32;
            for c in 0..3 {
                img[c * hw + y * w + x] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }
    img
}

fn checker(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f32> {
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let cell = rng.gen_range(4..=12usize);
    let hw = h * w;
    let mut img = vec![0.0f32; 3 * hw];
    for y in 0..h {
        for x in 0..w {
            let pick = ((x / cell) + (y / cell)) % 2 == 0;
            let col = if pick { &c0 } else { &c1 };
            for c in 0..3 {
                img[c * hw + y * w + x] = col[c];
            }
        }
    }
    img
}

fn filtered_noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f32> {
    let hw = h * w;
    let passes = rng.gen_range(2..=4usize);
    let mut img: Vec<f32> = (0..3 * hw).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut tmp = vec![0.0f32; 3 * hw];
    for _ in 0..passes {
        // 3x3 box blur with clamped borders
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                            let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                            acc += img[c * hw + yy * w + xx];
                        }
                    }
                    tmp[c * hw + y * w + x] = acc / 9.0;
                }
            }
        }
        std::mem::swap(&mut img, &mut tmp);
    }
    // stretch the contrast back after blurring
    let (mut lo, mut hi) = (1.0f32, 0.0f32);
    for v in &img {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = (hi - lo).max(1e-6);
    for v in &mut img {
        *v = (*v - lo) / span;
    }
    img
}

/// Additive rain: `density·h·w` streaks of the given length and angle,
/// identical across the RGB channels, intensity jittered per streak,
/// clipped to [0,1]. Fully determined by the seed.
pub fn synth_rain(clean: &[f32], h: usize, w: usize, p: &RainParams, seed: u64) -> Vec<f32> {
    let hw = h * w;
    assert_eq!(clean.len(), 3 * hw);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (p.density * hw as f64).round() as usize;
    let mut layer = vec![0.0f32; hw];
    let a = p.angle_deg.to_radians();
    let (dx, dy) = (a.cos(), a.sin());
    for _ in 0..n {
        let x0 = rng.gen_range(0.0..w as f64);
        let y0 = rng.gen_range(0.0..h as f64);
        // Gaussian jitter via Box-Muller, floored at zero so streaks only add
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        let amp = (p.intensity * (1.0 + 0.3 * z)).max(0.0) as f32;
        for t in 0..p.length {
            let x = x0 + dx * t as f64;
            let y = y0 + dy * t as f64;
            if x < 0.0 || y < 0.0 {
                continue;
            }
            let (xi, yi) = (x as usize, y as usize);
            if xi < w && yi < h {
                layer[yi * w + xi] += amp;
            }
        }
    }
    let mut out = clean.to_vec();
    for c in 0..3 {
        for i in 0..hw {
            out[c * hw + i] = (out[c * hw + i] + layer[i]).clamp(0.0, 1.0);
        }
    }
    out
}

fn cubic(x: f64) -> f64 {
    // Keys kernel, a = -0.5
    let a = -0.5;
    let x = x.abs();
    if x < 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

fn down4_axis(src: &[f32], len: usize, stride: usize, count: usize, out: &mut [f32]) {
    // antialiased: kernel stretched by the scale factor, support 2*4
    let scale = 4.0;
    let olen = len / 4;
    for o in 0..olen {
        let center = (o as f64 + 0.5) * scale - 0.5;
        let lo = (center - 2.0 * scale).ceil() as i64;
        let hi = (center + 2.0 * scale).floor() as i64;
        let mut wsum = 0.0;
        let mut weights = Vec::with_capacity((hi - lo + 1) as usize);
        for s in lo..=hi {
            let wgt = cubic((s as f64 - center) / scale);
            weights.push(wgt);
            wsum += wgt;
        }
        for lane in 0..count {
            let mut acc = 0.0;
            for (k, s) in (lo..=hi).enumerate() {
                let si = s.clamp(0, len as i64 - 1) as usize;
                acc += weights[k] * src[lane * stride * len + si * stride] as f64;
            }
            out[lane * stride * olen + o * stride] = (acc / wsum) as f32;
        }
    }
}

/// Bicubic ×4 downscale (Keys a=−0.5, antialiased, replicated borders).
pub fn bicubic_down4(hq: &[f32], h: usize, w: usize) -> Result<Vec<f32>> {
    if h % 4 != 0 || w % 4 != 0 {
        bail!("bicubic_down4: extents {h}x{w} not divisible by 4");
    }
    let hw = h * w;
    assert_eq!(hq.len(), 3 * hw);
    let (oh, ow) = (h / 4, w / 4);
    // rows first: [3,h,w] -> [3,h,ow]
    let mut mid = vec![0.0f32; 3 * h * ow];
    for c in 0..3 {
        for y in 0..h {
            let row = &hq[c * hw + y * w..c * hw + (y + 1) * w];
            let orow = &mut mid[c * h * ow + y * ow..c * h * ow + (y + 1) * ow];
            down4_axis(row, w, 1, 1, orow);
        }
    }
    // then columns: [3,h,ow] -> [3,oh,ow]
    let mut out = vec![0.0f32; 3 * oh * ow];
    for c in 0..3 {
        for x in 0..ow {
            let col: Vec<f32> = (0..h).map(|y| mid[c * h * ow + y * ow + x]).collect();
            let mut ocol = vec![0.0f32; oh];
            down4_axis(&col, h, 1, 1, &mut ocol);
            for (y, v) in ocol.iter().enumerate() {
                out[c * oh * ow + y * ow + x] = *v;
            }
        }
    }
    Ok(out)
}
