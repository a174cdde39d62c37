//! Y-channel image quality metrics. Images are planar RGB `[3,H,W]` slices
//! with values in [0,1]; the luma uses full-range BT.601 coefficients.

use anyhow::{bail, Result};

pub const PSNR_CAP_DB: f64 = 100.0;

/// BT.601 full-range luma of a planar `[3,H,W]` image.
pub fn y_channel(rgb: &[f64], h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    assert_eq!(rgb.len(), 3 * hw);
    (0..hw)
        .map(|i| 0.299 * rgb[i] + 0.587 * rgb[hw + i] + 0.114 * rgb[2 * hw + i])
        .collect()
}

/// PSNR between the Y channels, capped at 100 dB for (near-)identical
/// images.
pub fn psnr_y(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.len() != 3 * h * w {
        bail!("psnr: shape mismatch ({} vs {} vs 3*{h}*{w})", a.len(), b.len());
    }
    let ya = y_channel(a, h, w);
    let yb = y_channel(b, h, w);
    let mse = ya
        .iter()
        .zip(&yb)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / ya.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut w: Vec<f64> = (0..size * size)
        .map(|i| {
            let dy = (i / size) as isize - half;
            let dx = (i % size) as isize - half;
            (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Mean SSIM between the Y channels over all fully-contained 11×11
/// Gaussian windows (σ=1.5, K1=0.01, K2=0.03, dynamic range 1).
pub fn ssim_y(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    const WIN: usize = 11;
    if a.len() != b.len() || a.len() != 3 * h * w {
        bail!("ssim: shape mismatch ({} vs {} vs 3*{h}*{w})", a.len(), b.len());
    }
    if h < WIN || w < WIN {
        bail!("ssim: image {h}x{w} smaller than the {WIN}x{WIN} window");
    }
    let ya = y_channel(a, h, w);
    let yb = y_channel(b, h, w);
    let win = gaussian_window(WIN, 1.5);
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - WIN {
        for ox in 0..=w - WIN {
            let (mut ma, mut mb) = (0.0, 0.0);
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
            for ky in 0..WIN {
                for kx in 0..WIN {
                    let g = win[ky * WIN + kx];
                    let pa = ya[(oy + ky) * w + ox + kx];
                    let pb = yb[(oy + ky) * w + ox + kx];
                    ma += g * pa;
                    mb += g * pb;
                    saa += g * pa * pa;
                    sbb += g * pb * pb;
                    sab += g * pa * pb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
        (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 16, 16);
        assert_eq!(psnr_y(&a, &a, 16, 16, 1.0).unwrap(), PSNR_CAP_DB);
        assert!((ssim_y(&a, &a, 16, 16).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_gives_twenty_db() {
        let a = vec![0.5; 3 * 16 * 16];
        let b = vec![0.6; 3 * 16 * 16];
        let p = psnr_y(&a, &b, 16, 16, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn psnr_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 12, 12);
        let b = random_image(&mut rng, 12, 12);
        let pab = psnr_y(&a, &b, 12, 12, 1.0).unwrap();
        let pba = psnr_y(&b, &a, 12, 12, 1.0).unwrap();
        assert!((pab - pba).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric_and_below_one_for_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        let sab = ssim_y(&a, &b, 16, 16).unwrap();
        let sba = ssim_y(&b, &a, 16, 16).unwrap();
        assert!((sab - sba).abs() < 1e-12);
        assert!(sab < 1.0);
    }

    #[test]
    fn negative_image_scores_below_zero() {
        // structured content vs its negative: luminance terms cancel but the
        // covariance is strongly negative
        let h = 24;
        let mut a = vec![0.0; 3 * h * h];
        for y in 0..h {
            for x in 0..h {
                let v = 0.5 + 0.45 * ((x as f64 * 0.8).sin() * (y as f64 * 0.6).cos());
                for c in 0..3 {
                    a[c * h * h + y * h + x] = v;
                }
            }
        }
        let b: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        assert!(ssim_y(&a, &b, h, h).unwrap() < 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = vec![0.0; 3 * 16 * 16];
        let b = vec![0.0; 3 * 8 * 8];
        assert!(psnr_y(&a, &b, 16, 16, 1.0).is_err());
        assert!(ssim_y(&a, &b, 16, 16).is_err());
    }
}
