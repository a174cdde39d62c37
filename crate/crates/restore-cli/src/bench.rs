//! Runtime scaling measurement: times one block forward pass across a
//! sweep of square inputs and fits the log-log slope of seconds against
//! pixel count. A linear-time implementation sits near slope 1.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use rand::SeedableRng;
use vmambair::init::InitRng;
use vmambair::oss::{FusionKind, OssBlock, OssConfig};
use vmambair::ssm::ZohMode;
use vmambair::Tensor;

#[derive(Debug, Clone)]
pub struct BenchPoint {
    pub side: usize,
    pub pixels: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    /// Least-squares slope of ln(seconds) against ln(pixels).
    pub slope: f64,
    /// Time ratio per doubling of the pixel count, one entry per
    /// consecutive pair of sweep points (normalized when a step grows the
    /// pixel count by more than 2x).
    pub doubling_ratios: Vec<f64>,
}

fn bench_block(channels: usize) -> OssBlock<f32> {
    let cfg = OssConfig {
        channels,
        d_inner: channels * 3 / 2,
        state_size: 8,
        channel_state_size: 8,
        shared_direction_params: false,
        omni_scan: true,
        channel_scan: true,
        fusion: FusionKind::GatedResidual,
        zoh: ZohMode::Exact,
    };
    let mut rng = InitRng::seed_from_u64(42);
    OssBlock::new(&mut rng, cfg, Some(channels * 2))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Time a forward pass at each side length (`warmup` throwaway runs, then
/// the median of `reps`).
pub fn bench_scaling(sides: &[usize], channels: usize, reps: usize, warmup: usize) -> Result<BenchReport> {
    let block = bench_block(channels);
    let mut points = Vec::with_capacity(sides.len());
    for &side in sides {
        let x = Tensor::new(vec![0.1f32; channels * side * side], &[1, channels, side, side])?;
        for _ in 0..warmup {
            let _ = block.forward(&x)?;
        }
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t0 = Instant::now();
            let y = block.forward(&x)?;
            // touch the output so the pass cannot be elided
            std::hint::black_box(y.data()[0]);
            times.push(t0.elapsed().as_secs_f64());
        }
        points.push(BenchPoint {
            side,
            pixels: side * side,
            seconds: median(times),
        });
    }
    let slope = loglog_slope(&points);
    let doubling_ratios = points
        .windows(2)
        .map(|w| {
            let growth = w[1].pixels as f64 / w[0].pixels as f64;
            let per_double = std::f64::consts::LN_2 / growth.ln();
            (w[1].seconds / w[0].seconds).powf(per_double)
        })
        .collect();
    Ok(BenchReport {
        points,
        slope,
        doubling_ratios,
    })
}

fn loglog_slope(points: &[BenchPoint]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| (p.pixels as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.seconds.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn write_csv(path: &Path, report: &BenchReport) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .with_context(|| format!("creating bench log {}", path.display()))?;
    writeln!(f, "side,pixels,seconds")?;
    for p in &report.points {
        writeln!(f, "{},{},{}", p.side, p.pixels, p.seconds)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_linear_data_is_one() {
        let points: Vec<BenchPoint> = [32usize, 64, 128]
            .iter()
            .map(|&s| BenchPoint {
                side: s,
                pixels: s * s,
                seconds: 1e-6 * (s * s) as f64,
            })
            .collect();
        assert!((loglog_slope(&points) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slope_of_quadratic_data_is_two() {
        let points: Vec<BenchPoint> = [16usize, 32, 64]
            .iter()
            .map(|&s| BenchPoint {
                side: s,
                pixels: s * s,
                seconds: 1e-9 * ((s * s) as f64).powi(2),
            })
            .collect();
        assert!((loglog_slope(&points) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_sweep_produces_monotone_points() {
        let report = bench_scaling(&[8, 16], 4, 1, 0).unwrap();
        assert_eq!(report.points.len(), 2);
        assert!(report.points[0].seconds > 0.0);
        assert_eq!(report.doubling_ratios.len(), 1);
    }
}
