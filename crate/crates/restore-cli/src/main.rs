//! `restore`: train, evaluate, and benchmark the image restoration model
//! on synthetic data, entirely on CPU.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use vmambair::checkpoint;
use vmambair::model::{Model, ModelConfig};
use vmambair::Tensor;

use restore_cli::bench::{bench_scaling, write_csv};
use restore_cli::metrics::{psnr_y, ssim_y};
use restore_cli::ppm::{read_ppm, write_ppm, Image};
use restore_cli::synth::{bicubic_down4, make_corpus, synth_rain};
use restore_cli::train::{baseline, evaluate, train, DerainData, TrainConfig};

#[derive(Parser)]
#[command(name = "restore", about = "SSM-based image restoration harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the synthetic deraining corpus and write a checkpoint.
    Train {
        /// Model preset: tiny, derain, real_sr.
        #[arg(long, default_value = "tiny")]
        preset: String,
        /// key=value config file (model and training keys).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inline key=value override, repeatable.
        #[arg(long = "set", value_name = "KEY=VAL")]
        sets: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for the checkpoint and metrics CSV.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Report PSNR/SSIM: either for a PPM pair, or for a checkpoint on the
    /// synthetic evaluation set.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Degraded input image (PPM).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Ground-truth image (PPM).
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VAL")]
        sets: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a checkpoint on one PPM image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Time one block forward across input sizes and fit the scaling slope.
    Bench {
        /// Square side lengths to time.
        #[arg(long, value_delimiter = ',', default_values_t = vec![32usize, 64, 128, 256])]
        sides: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the parameter and FLOP budget per module.
    Count {
        #[arg(long, default_value = "real_sr")]
        preset: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VAL")]
        sets: Vec<String>,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
    },
    /// Emit a synthetic clean/degraded PPM dataset.
    Synth {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Also write bicubic 4x downscales of the clean images.
        #[arg(long, default_value_t = false)]
        lq4x: bool,
        #[arg(long = "set", value_name = "KEY=VAL")]
        sets: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn preset(name: &str) -> Result<ModelConfig> {
    Ok(match name {
        "tiny" => ModelConfig::tiny(),
        "derain" => ModelConfig::derain(),
        "real_sr" => ModelConfig::real_sr(),
        _ => bail!("unknown preset '{name}' (expected tiny, derain, real_sr)"),
    })
}

/// Apply one `key=value` string to the training config first, then to the
/// model config.
fn apply_kv(mc: &mut ModelConfig, tc: &mut TrainConfig, kv: &str) -> Result<()> {
    let (key, val) = kv
        .split_once('=')
        .with_context(|| format!("override '{kv}' is not key=value"))?;
    let (key, val) = (key.trim(), val.trim());
    if tc.set(key, val)? {
        return Ok(());
    }
    mc.set(key, val).map_err(|e| anyhow::anyhow!("{e}"))
}

fn build_configs(
    preset_name: &str,
    config: Option<&Path>,
    sets: &[String],
    seed: u64,
) -> Result<(ModelConfig, TrainConfig)> {
    let mut mc = preset(preset_name)?;
    let mut tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            apply_kv(&mut mc, &mut tc, line)?;
        }
    }
    for kv in sets {
        apply_kv(&mut mc, &mut tc, kv)?;
    }
    mc.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    tc.validate()?;
    Ok((mc, tc))
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    let cfg = checkpoint::read_config(path).map_err(|e| anyhow::anyhow!("{e}"))?;
    let model = Model::new(cfg, 0).map_err(|e| anyhow::anyhow!("{e}"))?;
    checkpoint::load_into(path, &model).map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(model)
}

fn forward_image(model: &Model<f32>, img: &Image) -> Result<Vec<f64>> {
    let x = Tensor::new(img.to_planar_f32(), &[1, 3, img.h, img.w])?;
    let y = model.forward(&x)?;
    let out = y.data().iter().map(|v| (*v as f64).clamp(0.0, 1.0)).collect();
    Ok(out)
}

fn human(n: u64) -> String {
    if n >= 1_000_000_000 {
        format!("{:.2} G", n as f64 / 1e9)
    } else if n >= 1_000_000 {
        format!("{:.2} M", n as f64 / 1e6)
    } else {
        format!("{n}")
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train {
            preset,
            config,
            sets,
            seed,
            out,
        } => {
            let (mc, tc) = build_configs(&preset, config.as_deref(), &sets, seed)?;
            std::fs::create_dir_all(&out)?;
            let model: Model<f32> =
                Model::new(mc, seed).map_err(|e| anyhow::anyhow!("{e}"))?;
            println!(
                "model: {} parameters, seed {seed}, {} iterations",
                human(model.num_params()),
                tc.iterations
            );
            let outcome = train(&model, &tc, Some(&out.join("metrics.csv")), false)?;
            let ckpt = out.join("model.ckpt");
            checkpoint::save(&ckpt, &model).map_err(|e| anyhow::anyhow!("{e}"))?;
            println!(
                "done: psnr {:.2} dB (baseline {:.2} dB), checkpoint {}",
                outcome.final_psnr,
                outcome.baseline_psnr,
                ckpt.display()
            );
        }
        Cmd::Eval {
            checkpoint: ckpt,
            input,
            target,
            sets,
            seed,
        } => match (input, target) {
            (Some(inp), Some(tgt)) => {
                let a = read_ppm(&inp)?;
                let b = read_ppm(&tgt)?;
                if (a.w, a.h) != (b.w, b.h) {
                    bail!("image sizes differ: {}x{} vs {}x{}", a.w, a.h, b.w, b.h);
                }
                let restored: Vec<f64> = match &ckpt {
                    Some(path) => forward_image(&load_model(path)?, &a)?,
                    None => a.to_planar_f32().iter().map(|v| *v as f64).collect(),
                };
                let truth: Vec<f64> = b.to_planar_f32().iter().map(|v| *v as f64).collect();
                let p = psnr_y(&restored, &truth, a.h, a.w, 1.0)?;
                let s = ssim_y(&restored, &truth, a.h, a.w)?;
                println!("psnr {p:.2} dB  ssim {s:.4}");
            }
            (None, None) => {
                let path = ckpt.context("eval needs --checkpoint or --input/--target")?;
                let model = load_model(&path)?;
                let mut tc = TrainConfig {
                    seed,
                    ..TrainConfig::default()
                };
                for kv in &sets {
                    let (k, v) = kv
                        .split_once('=')
                        .with_context(|| format!("override '{kv}' is not key=value"))?;
                    if !tc.set(k.trim(), v.trim())? {
                        bail!("unknown training key '{k}'");
                    }
                }
                let data = DerainData::new(&tc);
                let (bp, bs) = baseline(&data, &tc)?;
                let (p, s) = evaluate(&model, &data, &tc)?;
                println!("baseline: psnr {bp:.2} dB  ssim {bs:.4}");
                println!("restored: psnr {p:.2} dB  ssim {s:.4}");
            }
            _ => bail!("--input and --target must be given together"),
        },
        Cmd::Infer {
            checkpoint: ckpt,
            input,
            output,
        } => {
            let model = load_model(&ckpt)?;
            let img = read_ppm(&input)?;
            let restored = forward_image(&model, &img)?;
            let as_f32: Vec<f32> = restored.iter().map(|v| *v as f32).collect();
            write_ppm(&output, &Image::from_planar_f32(&as_f32, img.h, img.w))?;
            println!("wrote {}", output.display());
        }
        Cmd::Bench {
            sides,
            channels,
            reps,
            csv,
        } => {
            let report = bench_scaling(&sides, channels, reps, 2)?;
            println!("pixels,seconds");
            for p in &report.points {
                println!("{},{:.6}", p.pixels, p.seconds);
            }
            println!("log-log slope: {:.3}", report.slope);
            for (w, r) in report.points.windows(2).zip(&report.doubling_ratios) {
                println!(
                    "{} -> {} pixels: time ratio {:.2} per doubling",
                    w[0].pixels, w[1].pixels, r
                );
            }
            if let Some(path) = csv {
                write_csv(&path, &report)?;
                println!("wrote {}", path.display());
            }
        }
        Cmd::Count {
            preset,
            config,
            sets,
            height,
            width,
        } => {
            let (mc, _) = build_configs(&preset, config.as_deref(), &sets, 0)?;
            let is_real_sr = mc.dims == ModelConfig::real_sr().dims;
            let model: Model<f32> =
                Model::new(mc, 0).map_err(|e| anyhow::anyhow!("{e}"))?;
            let report = model
                .count_flops(height, width)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("{:<24}{:>14}{:>16}", "module", "params", "flops");
            for row in &report.rows {
                println!("{:<24}{:>14}{:>16}", row.name, row.params, row.flops);
            }
            println!(
                "total: {} parameters, {}FLOPs at {height}x{width}",
                human(report.params),
                human(report.flops)
            );
            if is_real_sr {
                // published VMambaIR real-SR figures: 10.50 M params, 20.5 G
                let (rp, rf) = (10.50e6, 20.5e9);
                println!(
                    "vs published real-SR model: params {:+.1}%, flops {:+.1}%",
                    100.0 * (report.params as f64 - rp) / rp,
                    100.0 * (report.flops as f64 - rf) / rf
                );
            }
        }
        Cmd::Synth {
            out,
            count,
            size,
            lq4x,
            sets,
            seed,
        } => {
            let mut tc = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            for kv in &sets {
                let (k, v) = kv
                    .split_once('=')
                    .with_context(|| format!("override '{kv}' is not key=value"))?;
                if !tc.set(k.trim(), v.trim())? {
                    bail!("unknown training key '{k}'");
                }
            }
            std::fs::create_dir_all(&out)?;
            let corpus = make_corpus(seed, count, size, size);
            for (i, clean) in corpus.iter().enumerate() {
                let rainy = synth_rain(clean, size, size, &tc.rain, seed ^ (i as u64) << 20);
                write_ppm(
                    &out.join(format!("clean_{i:03}.ppm")),
                    &Image::from_planar_f32(clean, size, size),
                )?;
                write_ppm(
                    &out.join(format!("rainy_{i:03}.ppm")),
                    &Image::from_planar_f32(&rainy, size, size),
                )?;
                if lq4x {
                    let lq = bicubic_down4(clean, size, size)?;
                    write_ppm(
                        &out.join(format!("lq4x_{i:03}.ppm")),
                        &Image::from_planar_f32(&lq, size / 4, size / 4),
                    )?;
                }
            }
            println!("wrote {count} image pairs to {}", out.display());
        }
    }
    Ok(())
}
