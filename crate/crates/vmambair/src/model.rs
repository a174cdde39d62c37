//! The restoration UNet: shallow conv, three encoder levels with
//! downsampling, a bottleneck, mirrored decoder levels with skip fusion,
//! refinement blocks, and a task head. Also parameter and FLOP accounting.

use crate::error::{Result, TensorError};
use crate::init::InitRng;
use crate::nn::Conv2dLayer;
use crate::oss::{FusionKind, OssBlock, OssConfig};
use crate::ssm::ZohMode;
use crate::tensor::{concat, Element, Tensor};

use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskHead {
    /// Two pixel-shuffle ×2 stages to 4× resolution.
    Sr4x,
    /// Same-size output, `I_out = I_in + tail(F_R)`.
    Residual,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Channels per level, doubling downward.
    pub dims: Vec<usize>,
    /// OSS blocks per level; the last entry is the bottleneck.
    pub enc_blocks: Vec<usize>,
    pub refine_blocks: usize,
    pub task: TaskHead,
    /// State size of the planar scans.
    pub state_size: usize,
    pub channel_state_size: usize,
    /// Internal stream width as a multiple of the level channels.
    pub stream_expand: f64,
    /// Feed-forward hidden width as a multiple of the level channels.
    pub effn_expand: usize,
    pub shared_direction_params: bool,
    pub omni_scan: bool,
    pub channel_scan: bool,
    pub effn: bool,
    pub fusion: FusionKind,
    pub zoh: ZohMode,
}

impl ModelConfig {
    /// Real-world 4× super-resolution configuration.
    pub fn real_sr() -> ModelConfig {
        ModelConfig {
            dims: vec![48, 96, 192, 384],
            enc_blocks: vec![6, 2, 2, 1],
            refine_blocks: 6,
            task: TaskHead::Sr4x,
            state_size: 16,
            channel_state_size: 8,
            stream_expand: 1.5,
            effn_expand: 2,
            shared_direction_params: false,
            omni_scan: true,
            channel_scan: true,
            effn: true,
            fusion: FusionKind::GatedResidual,
            zoh: ZohMode::Exact,
        }
    }

    /// Deraining configuration.
    pub fn derain() -> ModelConfig {
        ModelConfig {
            dims: vec![48, 96, 192, 384],
            enc_blocks: vec![4, 4, 6, 8],
            refine_blocks: 2,
            task: TaskHead::Residual,
            ..ModelConfig::real_sr()
        }
    }

    /// Small configuration for fast end-to-end runs.
    pub fn tiny() -> ModelConfig {
        ModelConfig {
            dims: vec![8, 16, 32, 64],
            enc_blocks: vec![1, 1, 1, 1],
            refine_blocks: 1,
            task: TaskHead::Residual,
            state_size: 8,
            channel_state_size: 8,
            ..ModelConfig::real_sr()
        }
    }

    pub fn levels(&self) -> usize {
        self.dims.len()
    }

    /// Spatial divisibility the forward pass requires.
    pub fn required_multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn d_inner(&self, c: usize) -> usize {
        ((c as f64) * self.stream_expand).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(TensorError::Config("config: need at least two levels".into()));
        }
        if self.dims.len() != self.enc_blocks.len() {
            return Err(TensorError::Config(format!(
                "config: dims has {} levels but enc_blocks has {}",
                self.dims.len(),
                self.enc_blocks.len()
            )));
        }
        for w in self.dims.windows(2) {
            if w[1] != 2 * w[0] {
                return Err(TensorError::Config(format!(
                    "config: dims must double per level, got {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if self.enc_blocks.iter().any(|b| *b == 0) {
            return Err(TensorError::Config("config: enc_blocks must be positive".into()));
        }
        if self.state_size == 0 || self.channel_state_size == 0 {
            return Err(TensorError::Config("config: state sizes must be positive".into()));
        }
        if self.stream_expand <= 0.0 || self.effn_expand == 0 {
            return Err(TensorError::Config("config: expansions must be positive".into()));
        }
        Ok(())
    }

    fn oss_config(&self, c: usize) -> OssConfig {
        OssConfig {
            channels: c,
            d_inner: self.d_inner(c),
            state_size: self.state_size,
            channel_state_size: self.channel_state_size,
            shared_direction_params: self.shared_direction_params,
            omni_scan: self.omni_scan,
            channel_scan: self.channel_scan,
            fusion: self.fusion,
            zoh: self.zoh,
        }
    }

    fn effn_hidden(&self, c: usize) -> Option<usize> {
        self.effn.then_some(self.effn_expand * c)
    }

    /// Plain-text key=value form used by checkpoints.
    pub fn to_kv(&self) -> String {
        let list = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        format!(
            "dims={}\nenc_blocks={}\nrefine_blocks={}\ntask={}\nstate_size={}\n\
             channel_state_size={}\nstream_expand={}\neffn_expand={}\n\
             shared_direction_params={}\nomni_scan={}\nchannel_scan={}\neffn={}\n\
             fusion={}\nzoh={}\n",
            list(&self.dims),
            list(&self.enc_blocks),
            self.refine_blocks,
            match self.task {
                TaskHead::Sr4x => "sr4x",
                TaskHead::Residual => "residual",
            },
            self.state_size,
            self.channel_state_size,
            self.stream_expand,
            self.effn_expand,
            self.shared_direction_params,
            self.omni_scan,
            self.channel_scan,
            self.effn,
            match self.fusion {
                FusionKind::GatedResidual => "gated",
                FusionKind::Additive => "additive",
            },
            match self.zoh {
                ZohMode::Exact => "exact",
                ZohMode::Euler => "euler",
            },
        )
    }

    pub fn from_kv(text: &str) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::real_sr();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| TensorError::Config(format!("config line without '=': {line}")))?;
            cfg.set(key.trim(), val.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply a single `key=value` override.
    pub fn set(&mut self, key: &str, val: &str) -> Result<()> {
        let bad = |what: &str| TensorError::Config(format!("config: bad {what}: {val}"));
        let parse_list = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| bad("list")))
                .collect()
        };
        match key {
            "dims" => self.dims = parse_list(val)?,
            "enc_blocks" => self.enc_blocks = parse_list(val)?,
            "refine_blocks" => self.refine_blocks = val.parse().map_err(|_| bad(key))?,
            "task" => {
                self.task = match val {
                    "sr4x" => TaskHead::Sr4x,
                    "residual" => TaskHead::Residual,
                    _ => return Err(bad(key)),
                }
            }
            "state_size" => self.state_size = val.parse().map_err(|_| bad(key))?,
            "channel_state_size" => {
                self.channel_state_size = val.parse().map_err(|_| bad(key))?
            }
            "stream_expand" => self.stream_expand = val.parse().map_err(|_| bad(key))?,
            "effn_expand" => self.effn_expand = val.parse().map_err(|_| bad(key))?,
            "shared_direction_params" => {
                self.shared_direction_params = val.parse().map_err(|_| bad(key))?
            }
            "omni_scan" => self.omni_scan = val.parse().map_err(|_| bad(key))?,
            "channel_scan" => self.channel_scan = val.parse().map_err(|_| bad(key))?,
            "effn" => self.effn = val.parse().map_err(|_| bad(key))?,
            "fusion" => {
                self.fusion = match val {
                    "gated" => FusionKind::GatedResidual,
                    "additive" => FusionKind::Additive,
                    _ => return Err(bad(key)),
                }
            }
            "zoh" => {
                self.zoh = match val {
                    "exact" => ZohMode::Exact,
                    "euler" => ZohMode::Euler,
                    _ => return Err(bad(key)),
                }
            }
            _ => return Err(TensorError::Config(format!("config: unknown key '{key}'"))),
        }
        Ok(())
    }
}

enum Tail<T: Element> {
    Residual(Conv2dLayer<T>),
    Sr4x {
        up1: Conv2dLayer<T>,
        mid: Conv2dLayer<T>,
        out: Conv2dLayer<T>,
    },
}

pub struct Model<T: Element> {
    pub cfg: ModelConfig,
    shallow: Conv2dLayer<T>,
    enc: Vec<Vec<OssBlock<T>>>,
    down: Vec<Conv2dLayer<T>>,
    bottleneck: Vec<OssBlock<T>>,
    up: Vec<Conv2dLayer<T>>,
    fuse: Vec<Conv2dLayer<T>>,
    dec: Vec<Vec<OssBlock<T>>>,
    refine: Vec<OssBlock<T>>,
    tail: Tail<T>,
}

impl<T: Element> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Model<T>> {
        cfg.validate()?;
        let mut rng = InitRng::seed_from_u64(seed);
        let rng = &mut rng;
        let levels = cfg.levels();
        let dims = &cfg.dims;
        let blocks = |rng: &mut InitRng, cfg: &ModelConfig, c: usize, count: usize| {
            (0..count)
                .map(|_| OssBlock::new(rng, cfg.oss_config(c), cfg.effn_hidden(c)))
                .collect::<Vec<_>>()
        };
        let shallow = Conv2dLayer::new(rng, 3, dims[0], 3, 1);
        let enc: Vec<_> = (0..levels - 1)
            .map(|i| blocks(rng, &cfg, dims[i], cfg.enc_blocks[i]))
            .collect();
        let down: Vec<_> = (0..levels - 1)
            .map(|i| Conv2dLayer::new(rng, 4 * dims[i], dims[i + 1], 1, 1))
            .collect();
        let bottleneck = blocks(rng, &cfg, dims[levels - 1], cfg.enc_blocks[levels - 1]);
        let up: Vec<_> = (0..levels - 1)
            .map(|i| Conv2dLayer::new(rng, dims[i + 1], 2 * dims[i + 1], 1, 1))
            .collect();
        let fuse: Vec<_> = (0..levels - 1)
            .map(|i| Conv2dLayer::new(rng, 2 * dims[i], dims[i], 1, 1))
            .collect();
        let dec: Vec<_> = (0..levels - 1)
            .map(|i| blocks(rng, &cfg, dims[i], cfg.enc_blocks[i]))
            .collect();
        let refine = blocks(rng, &cfg, dims[0], cfg.refine_blocks);
        let tail = match cfg.task {
            TaskHead::Residual => Tail::Residual(Conv2dLayer::new(rng, dims[0], 3, 3, 1)),
            TaskHead::Sr4x => Tail::Sr4x {
                up1: Conv2dLayer::new(rng, dims[0], 4 * dims[0], 3, 1),
                mid: Conv2dLayer::new(rng, dims[0], 4 * dims[0], 3, 1),
                out: Conv2dLayer::new(rng, dims[0], 3, 3, 1),
            },
        };
        Ok(Model {
            cfg,
            shallow,
            enc,
            down,
            bottleneck,
            up,
            fuse,
            dec,
            refine,
            tail,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_cb(x, &mut |_, _| {})
    }

    /// Forward pass reporting every stage output to `cb` (used by the NaN
    /// probe in the training harness).
    pub fn forward_cb(
        &self,
        x: &Tensor<T>,
        cb: &mut dyn FnMut(&str, &Tensor<T>),
    ) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(TensorError::Dim(format!("forward: expected [B,3,H,W], got {s:?}")));
        }
        let m = self.cfg.required_multiple();
        if s[2] % m != 0 || s[3] % m != 0 {
            return Err(TensorError::Dim(format!(
                "forward: H and W must be divisible by {m}, got {}x{}",
                s[2], s[3]
            )));
        }
        let levels = self.cfg.levels();
        let mut f = self.shallow.forward(x)?;
        cb("shallow", &f);
        let mut skips = Vec::with_capacity(levels - 1);
        for i in 0..levels - 1 {
            for (j, blk) in self.enc[i].iter().enumerate() {
                f = blk.forward(&f)?;
                cb(&format!("enc{i}.block{j}"), &f);
            }
            skips.push(f.clone());
            f = self.down[i].forward(&f.pixel_unshuffle(2)?)?;
            cb(&format!("down{i}"), &f);
        }
        for (j, blk) in self.bottleneck.iter().enumerate() {
            f = blk.forward(&f)?;
            cb(&format!("bottleneck.block{j}"), &f);
        }
        for i in (0..levels - 1).rev() {
            f = self.up[i].forward(&f)?.pixel_shuffle(2)?;
            cb(&format!("up{i}"), &f);
            f = self.fuse[i].forward(&concat(&[&skips[i], &f], 1)?)?;
            cb(&format!("fuse{i}"), &f);
            for (j, blk) in self.dec[i].iter().enumerate() {
                f = blk.forward(&f)?;
                cb(&format!("dec{i}.block{j}"), &f);
            }
        }
        for (j, blk) in self.refine.iter().enumerate() {
            f = blk.forward(&f)?;
            cb(&format!("refine.block{j}"), &f);
        }
        let out = match &self.tail {
            Tail::Residual(conv) => x.add(&conv.forward(&f)?)?,
            Tail::Sr4x { up1, mid, out } => {
                let f = up1.forward(&f)?.pixel_shuffle(2)?;
                let f = mid.forward(&f)?.pixel_shuffle(2)?;
                out.forward(&f)?
            }
        };
        cb("tail", &out);
        Ok(out)
    }

    /// Run the forward pass and report the first stage whose output is not
    /// finite, if any.
    pub fn probe_nonfinite(&self, x: &Tensor<T>) -> Result<Option<String>> {
        let mut first: Option<String> = None;
        self.forward_cb(x, &mut |name, t| {
            if first.is_none() && !t.all_finite() {
                first = Some(name.to_string());
            }
        })?;
        Ok(first)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.shallow.named_params("shallow", &mut out);
        for (i, level) in self.enc.iter().enumerate() {
            for (j, blk) in level.iter().enumerate() {
                blk.named_params(&format!("enc{i}.block{j}"), &mut out);
            }
        }
        for (i, d) in self.down.iter().enumerate() {
            d.named_params(&format!("down{i}"), &mut out);
        }
        for (j, blk) in self.bottleneck.iter().enumerate() {
            blk.named_params(&format!("bottleneck.block{j}"), &mut out);
        }
        for (i, u) in self.up.iter().enumerate() {
            u.named_params(&format!("up{i}"), &mut out);
        }
        for (i, f) in self.fuse.iter().enumerate() {
            f.named_params(&format!("fuse{i}"), &mut out);
        }
        for (i, level) in self.dec.iter().enumerate() {
            for (j, blk) in level.iter().enumerate() {
                blk.named_params(&format!("dec{i}.block{j}"), &mut out);
            }
        }
        for (j, blk) in self.refine.iter().enumerate() {
            blk.named_params(&format!("refine.block{j}"), &mut out);
        }
        match &self.tail {
            Tail::Residual(conv) => conv.named_params("tail", &mut out),
            Tail::Sr4x { up1, mid, out: o } => {
                up1.named_params("tail.up1", &mut out);
                mid.named_params("tail.mid", &mut out);
                o.named_params("tail.out", &mut out);
            }
        }
        out
    }

    pub fn num_params(&self) -> u64 {
        self.named_params().iter().map(|(_, t)| t.numel() as u64).sum()
    }

    /// Parameter and FLOP accounting at the given input size. FLOPs count 2
    /// per multiply-accumulate for convs and linear projections; scans add
    /// their per-token state updates and output contractions.
    pub fn count_flops(&self, h: usize, w: usize) -> Result<FlopReport> {
        let m = self.cfg.required_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(TensorError::Dim(format!(
                "count_flops: H and W must be divisible by {m}"
            )));
        }
        let levels = self.cfg.levels();
        let mut rows: Vec<FlopRow> = Vec::new();
        let mut push = |name: String, params: u64, flops: u64| {
            rows.push(FlopRow { name, params, flops });
        };
        let (h, w) = (h as u64, w as u64);
        let hw_at = |i: usize| (h >> i, w >> i);
        push(
            "shallow".into(),
            self.shallow.num_params(),
            self.shallow.flops(h, w),
        );
        for i in 0..levels - 1 {
            let (lh, lw) = hw_at(i);
            let p: u64 = self.enc[i].iter().map(|b| b.num_params()).sum();
            let f: u64 = self.enc[i].iter().map(|b| b.flops(lh, lw)).sum();
            push(format!("enc{i}"), p, f);
            let (dh, dw) = hw_at(i + 1);
            push(
                format!("down{i}"),
                self.down[i].num_params(),
                self.down[i].flops(dh, dw),
            );
        }
        {
            let (lh, lw) = hw_at(levels - 1);
            let p: u64 = self.bottleneck.iter().map(|b| b.num_params()).sum();
            let f: u64 = self.bottleneck.iter().map(|b| b.flops(lh, lw)).sum();
            push("bottleneck".into(), p, f);
        }
        for i in (0..levels - 1).rev() {
            let (ph, pw) = hw_at(i + 1);
            push(format!("up{i}"), self.up[i].num_params(), self.up[i].flops(ph, pw));
            let (lh, lw) = hw_at(i);
            push(
                format!("fuse{i}"),
                self.fuse[i].num_params(),
                self.fuse[i].flops(lh, lw),
            );
            let p: u64 = self.dec[i].iter().map(|b| b.num_params()).sum();
            let f: u64 = self.dec[i].iter().map(|b| b.flops(lh, lw)).sum();
            push(format!("dec{i}"), p, f);
        }
        {
            let p: u64 = self.refine.iter().map(|b| b.num_params()).sum();
            let f: u64 = self.refine.iter().map(|b| b.flops(h, w)).sum();
            push("refine".into(), p, f);
        }
        match &self.tail {
            Tail::Residual(conv) => push("tail".into(), conv.num_params(), conv.flops(h, w)),
            Tail::Sr4x { up1, mid, out } => {
                let p = up1.num_params() + mid.num_params() + out.num_params();
                let f = up1.flops(h, w) + mid.flops(2 * h, 2 * w) + out.flops(4 * h, 4 * w);
                push("tail".into(), p, f);
            }
        }
        let params = rows.iter().map(|r| r.params).sum();
        let flops = rows.iter().map(|r| r.flops).sum();
        Ok(FlopReport { params, flops, rows })
    }
}

#[derive(Debug, Clone)]
pub struct FlopRow {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone)]
pub struct FlopReport {
    pub params: u64,
    pub flops: u64,
    pub rows: Vec<FlopRow>,
}
