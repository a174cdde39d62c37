//! Omni selective scan: directional grid serialization, the OSS module
//! (four planar scans + pooled bidirectional channel scan with gated
//! fusion), the gated feed-forward block, and their pre-norm residual
//! composition.

use crate::error::{Result, TensorError};
use crate::init::InitRng;
use crate::nn::{Conv2dLayer, LayerNorm};
use crate::ssm::{SsmLayer, ZohMode};
use crate::tensor::{dims4, Element, Tensor};

/// Scan orders over a feature map. Planar directions walk the H×W grid;
/// channel directions walk the channel axis. Each backward order is the
/// exact reversal of its forward order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Row-major, top-left to bottom-right.
    HForward,
    HBackward,
    /// Column-major starting at the bottom-left, up each column, columns
    /// left to right.
    WForward,
    WBackward,
    /// Channel axis front to back.
    CForward,
    CBackward,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::HForward,
        Direction::HBackward,
        Direction::WForward,
        Direction::WBackward,
        Direction::CForward,
        Direction::CBackward,
    ];
    pub const PLANAR: [Direction; 4] = [
        Direction::HForward,
        Direction::HBackward,
        Direction::WForward,
        Direction::WBackward,
    ];

    pub fn is_planar(self) -> bool {
        !matches!(self, Direction::CForward | Direction::CBackward)
    }
}

/// Token order for a planar direction: `order[l]` is the flat spatial index
/// (`h*W + w`) visited at sequence position `l`.
pub fn planar_order(dir: Direction, h: usize, w: usize) -> Vec<usize> {
    let hw = h * w;
    let mut ord: Vec<usize> = match dir {
        Direction::HForward | Direction::HBackward => (0..hw).collect(),
        Direction::WForward | Direction::WBackward => (0..hw)
            .map(|l| {
                let col = l / h;
                let row = h - 1 - (l % h);
                row * w + col
            })
            .collect(),
        _ => panic!("planar_order on channel direction"),
    };
    if matches!(dir, Direction::HBackward | Direction::WBackward) {
        ord.reverse();
    }
    ord
}

/// Token order for a channel direction over `c` channels.
pub fn channel_order(dir: Direction, c: usize) -> Vec<usize> {
    match dir {
        Direction::CForward => (0..c).collect(),
        Direction::CBackward => (0..c).rev().collect(),
        _ => panic!("channel_order on planar direction"),
    }
}

/// Reorder a `[B,C,H,W]` map into a scan sequence: `[B,H·W,C]` for planar
/// directions, `[B,C,H·W]` for channel directions (which is `[B,C,1]` after
/// pooling). Pure permutation, differentiable, exactly invertible by
/// [`deserialize`].
pub fn serialize<T: Element>(x: &Tensor<T>, dir: Direction) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4(x, "serialize input")?;
    let hw = h * w;
    if dir.is_planar() {
        let ord = planar_order(dir, h, w);
        let mut data = vec![T::zero(); b * hw * c];
        {
            let xd = x.data();
            for bi in 0..b {
                for (l, &s) in ord.iter().enumerate() {
                    for ci in 0..c {
                        data[(bi * hw + l) * c + ci] = xd[(bi * c + ci) * hw + s];
                    }
                }
            }
        }
        let px = x.clone();
        Ok(Tensor::from_op(vec![b, hw, c], data, &[x], move |g| {
            px.accum_grad(|gx| {
                for bi in 0..b {
                    for (l, &s) in ord.iter().enumerate() {
                        for ci in 0..c {
                            gx[(bi * c + ci) * hw + s] += g[(bi * hw + l) * c + ci];
                        }
                    }
                }
            });
        }))
    } else {
        let ord = channel_order(dir, c);
        let mut data = vec![T::zero(); b * c * hw];
        {
            let xd = x.data();
            for bi in 0..b {
                for (l, &ci) in ord.iter().enumerate() {
                    let src = (bi * c + ci) * hw;
                    let dst = (bi * c + l) * hw;
                    data[dst..dst + hw].copy_from_slice(&xd[src..src + hw]);
                }
            }
        }
        let px = x.clone();
        Ok(Tensor::from_op(vec![b, c, hw], data, &[x], move |g| {
            px.accum_grad(|gx| {
                for bi in 0..b {
                    for (l, &ci) in ord.iter().enumerate() {
                        let dst = (bi * c + ci) * hw;
                        let src = (bi * c + l) * hw;
                        for k in 0..hw {
                            gx[dst + k] += g[src + k];
                        }
                    }
                }
            });
        }))
    }
}

/// Inverse of [`serialize`]: scatter a scan sequence back onto the
/// `[B,C,H,W]` grid.
pub fn deserialize<T: Element>(
    y: &Tensor<T>,
    dir: Direction,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let ys = y.shape();
    if ys.len() != 3 {
        return Err(TensorError::Dim(format!("deserialize: rank {ys:?}")));
    }
    let b = ys[0];
    let hw = h * w;
    if dir.is_planar() {
        let (l_len, c) = (ys[1], ys[2]);
        if l_len != hw {
            return Err(TensorError::Dim(format!(
                "deserialize: sequence length {l_len} vs grid {h}x{w}"
            )));
        }
        let ord = planar_order(dir, h, w);
        let mut data = vec![T::zero(); b * c * hw];
        {
            let yd = y.data();
            for bi in 0..b {
                for (l, &s) in ord.iter().enumerate() {
                    for ci in 0..c {
                        data[(bi * c + ci) * hw + s] = yd[(bi * hw + l) * c + ci];
                    }
                }
            }
        }
        let py = y.clone();
        Ok(Tensor::from_op(vec![b, c, h, w], data, &[y], move |g| {
            py.accum_grad(|gy| {
                for bi in 0..b {
                    for (l, &s) in ord.iter().enumerate() {
                        for ci in 0..c {
                            gy[(bi * hw + l) * c + ci] += g[(bi * c + ci) * hw + s];
                        }
                    }
                }
            });
        }))
    } else {
        let (c, inner) = (ys[1], ys[2]);
        if inner != hw {
            return Err(TensorError::Dim(format!(
                "deserialize: inner width {inner} vs grid {h}x{w}"
            )));
        }
        let ord = channel_order(dir, c);
        let mut data = vec![T::zero(); b * c * hw];
        {
            let yd = y.data();
            for bi in 0..b {
                for (l, &ci) in ord.iter().enumerate() {
                    let dst = (bi * c + ci) * hw;
                    let src = (bi * c + l) * hw;
                    data[dst..dst + hw].copy_from_slice(&yd[src..src + hw]);
                }
            }
        }
        let py = y.clone();
        Ok(Tensor::from_op(vec![b, c, h, w], data, &[y], move |g| {
            py.accum_grad(|gy| {
                for bi in 0..b {
                    for (l, &ci) in ord.iter().enumerate() {
                        let src = (bi * c + ci) * hw;
                        let dst = (bi * c + l) * hw;
                        for k in 0..hw {
                            gy[dst + k] += g[src + k];
                        }
                    }
                }
            });
        }))
    }
}

/// How the pooled channel-scan response is folded back into the gated
/// feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    /// `F = G + G ⊙ sigmoid(F_OC)` broadcast over H,W.
    GatedResidual,
    /// Plain additive broadcast `F = G + F_OC`.
    Additive,
}

#[derive(Debug, Clone, Copy)]
pub struct OssConfig {
    pub channels: usize,
    /// Width of each internal stream.
    pub d_inner: usize,
    /// State size of the planar scans.
    pub state_size: usize,
    /// State size of the pooled channel scan.
    pub channel_state_size: usize,
    /// One set of scan parameters reused by all planar directions instead
    /// of per-direction sets.
    pub shared_direction_params: bool,
    /// When off, only the row-major forward direction is scanned.
    pub omni_scan: bool,
    /// When off, the pooled channel pathway is removed entirely.
    pub channel_scan: bool,
    pub fusion: FusionKind,
    pub zoh: ZohMode,
}

impl OssConfig {
    pub fn planar_directions(&self) -> &'static [Direction] {
        if self.omni_scan {
            &Direction::PLANAR
        } else {
            &Direction::PLANAR[..1]
        }
    }
}

/// The OSS module: two streams from a 1×1 conv, planar scans on the
/// depthwise-convolved stream, multiplicative merge, pooled channel scan,
/// gated fusion, 1×1 projection back.
pub struct OssModule<T: Element> {
    pub in_conv: Conv2dLayer<T>,
    pub dwconv: Conv2dLayer<T>,
    pub dir_ssm: Vec<SsmLayer<T>>,
    pub chan_ssm: Option<SsmLayer<T>>,
    pub out_conv: Conv2dLayer<T>,
    pub cfg: OssConfig,
}

impl<T: Element> OssModule<T> {
    pub fn new(rng: &mut InitRng, cfg: OssConfig) -> Self {
        let c = cfg.channels;
        let di = cfg.d_inner;
        let n_sets = if cfg.shared_direction_params {
            1
        } else {
            cfg.planar_directions().len()
        };
        let in_conv = Conv2dLayer::new(rng, c, 2 * di, 1, 1);
        let dwconv = Conv2dLayer::depthwise(rng, di, 3);
        // The planar scans merge by addition, so the per-direction skip
        // gains start at 1/K to keep the merged output at unit scale.
        let skip0 = T::of_f64(1.0 / cfg.planar_directions().len() as f64);
        let dir_ssm: Vec<SsmLayer<T>> = (0..n_sets)
            .map(|_| {
                let layer = SsmLayer::new(rng, di, cfg.state_size, cfg.zoh);
                layer.d_skip.apply(|d| d.fill(skip0));
                layer
            })
            .collect();
        OssModule {
            in_conv,
            dwconv,
            dir_ssm,
            chan_ssm: cfg
                .channel_scan
                .then(|| SsmLayer::new(rng, 1, cfg.channel_state_size, cfg.zoh)),
            out_conv: Conv2dLayer::new(rng, di, c, 1, 1),
            cfg,
        }
    }

    fn ssm_for(&self, i: usize) -> &SsmLayer<T> {
        if self.cfg.shared_direction_params {
            &self.dir_ssm[0]
        } else {
            &self.dir_ssm[i]
        }
    }

    /// Additive merge of the planar direction scans, summed in a fixed
    /// direction order.
    pub fn plane_scan(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, _, h, w) = dims4(f, "plane_scan input")?;
        let mut acc: Option<Tensor<T>> = None;
        for (i, dir) in self.cfg.planar_directions().iter().enumerate() {
            let seq = serialize(f, *dir)?;
            let y = self.ssm_for(i).forward(&seq)?;
            let plane = deserialize(&y, *dir, h, w)?;
            acc = Some(match acc {
                Some(a) => a.add(&plane)?,
                None => plane,
            });
        }
        Ok(acc.unwrap())
    }

    /// Pool to one vector per channel, scan it forward and backward along
    /// the channel axis with shared parameters, add the two responses.
    pub fn channel_scan(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let ssm = self
            .chan_ssm
            .as_ref()
            .expect("channel_scan called with the channel pathway disabled");
        let v = g.global_avg_pool()?;
        let mut acc: Option<Tensor<T>> = None;
        for dir in [Direction::CForward, Direction::CBackward] {
            let seq = serialize(&v, dir)?;
            let y = ssm.forward(&seq)?;
            let back = deserialize(&y, dir, 1, 1)?;
            acc = Some(match acc {
                Some(a) => a.add(&back)?,
                None => back,
            });
        }
        Ok(acc.unwrap())
    }

    /// Scan geometry and fusion on the two prepared streams.
    pub fn oss_scan(&self, f_o1: &Tensor<T>, f_o2: &Tensor<T>) -> Result<Tensor<T>> {
        if f_o1.shape() != f_o2.shape() {
            return Err(TensorError::Dim("oss_scan: stream shape mismatch".into()));
        }
        let f_op = self.plane_scan(f_o1)?;
        let g = f_op.mul(f_o2)?;
        if !self.cfg.channel_scan {
            return Ok(g);
        }
        let f_oc = self.channel_scan(&g)?;
        match self.cfg.fusion {
            FusionKind::GatedResidual => g.add(&g.mul_channel(&f_oc.sigmoid())?),
            FusionKind::Additive => g.add_channel(&f_oc),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let di = self.cfg.d_inner;
        let streams = self.in_conv.forward(x)?.split(1, &[di, di])?;
        let f_o1 = self.dwconv.forward(&streams[0])?.silu();
        let f_o2 = streams[1].silu();
        let f_oss = self.oss_scan(&f_o1, &f_o2)?;
        self.out_conv.forward(&f_oss)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.in_conv.named_params(&format!("{prefix}.in_conv"), out);
        self.dwconv.named_params(&format!("{prefix}.dwconv"), out);
        for (i, s) in self.dir_ssm.iter().enumerate() {
            s.named_params(&format!("{prefix}.dir{i}"), out);
        }
        if let Some(cs) = &self.chan_ssm {
            cs.named_params(&format!("{prefix}.chan"), out);
        }
        self.out_conv.named_params(&format!("{prefix}.out_conv"), out);
    }

    pub fn num_params(&self) -> u64 {
        let mut n = self.in_conv.num_params() + self.dwconv.num_params() + self.out_conv.num_params();
        n += self.dir_ssm.iter().map(|s| s.num_params()).sum::<u64>();
        if let Some(cs) = &self.chan_ssm {
            n += cs.num_params();
        }
        n
    }

    /// Multiply-accumulate based count (2 FLOPs per MAC) of the convs, the
    /// per-token projections, and the scan recurrences.
    pub fn flops(&self, h: u64, w: u64) -> u64 {
        let c = self.cfg.channels as u64;
        let di = self.cfg.d_inner as u64;
        let hw = h * w;
        let mut f = 2 * c * 2 * di * hw; // in_conv 1x1
        f += 2 * di * 9 * hw; // depthwise 3x3
        let per_dir = self.dir_ssm[0].flops(hw);
        f += per_dir * self.cfg.planar_directions().len() as u64;
        if let Some(cs) = &self.chan_ssm {
            f += 2 * cs.flops(di);
        }
        f += 2 * di * c * hw; // out_conv 1x1
        f
    }
}

/// Gated feed-forward: expand 1×1 to 2·e·C, depthwise 3×3, split in half,
/// `g1 ⊙ silu(g2)`, project back to C.
pub struct Effn<T: Element> {
    pub expand: Conv2dLayer<T>,
    pub dwconv: Conv2dLayer<T>,
    pub project: Conv2dLayer<T>,
    hidden: usize,
}

impl<T: Element> Effn<T> {
    /// `hidden = e·C` where `e` is the expansion factor.
    pub fn new(rng: &mut InitRng, c: usize, hidden: usize) -> Self {
        Effn {
            expand: Conv2dLayer::new(rng, c, 2 * hidden, 1, 1),
            dwconv: Conv2dLayer::depthwise(rng, 2 * hidden, 3),
            project: Conv2dLayer::new(rng, hidden, c, 1, 1),
            hidden,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.dwconv.forward(&self.expand.forward(x)?)?;
        let gates = h.split(1, &[self.hidden, self.hidden])?;
        self.project.forward(&gates[0].mul(&gates[1].silu())?)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.expand.named_params(&format!("{prefix}.expand"), out);
        self.dwconv.named_params(&format!("{prefix}.dwconv"), out);
        self.project.named_params(&format!("{prefix}.project"), out);
    }

    pub fn num_params(&self) -> u64 {
        self.expand.num_params() + self.dwconv.num_params() + self.project.num_params()
    }

    pub fn flops(&self, h: u64, w: u64, c: u64) -> u64 {
        let hd = self.hidden as u64;
        let hw = h * w;
        2 * c * 2 * hd * hw + 2 * 2 * hd * 9 * hw + 2 * hd * c * hw
    }
}

/// Pre-norm residual composition: `Y1 = X + oss(LN(X))`,
/// `Y = Y1 + effn(LN(Y1))`.
pub struct OssBlock<T: Element> {
    pub norm1: LayerNorm<T>,
    pub oss: OssModule<T>,
    pub norm2: Option<LayerNorm<T>>,
    pub effn: Option<Effn<T>>,
}

impl<T: Element> OssBlock<T> {
    pub fn new(rng: &mut InitRng, cfg: OssConfig, effn_hidden: Option<usize>) -> Self {
        let c = cfg.channels;
        OssBlock {
            norm1: LayerNorm::new(c),
            oss: OssModule::new(rng, cfg),
            norm2: effn_hidden.map(|_| LayerNorm::new(c)),
            effn: effn_hidden.map(|hd| Effn::new(rng, c, hd)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y1 = x.add(&self.oss.forward(&self.norm1.forward(x)?)?)?;
        match (&self.norm2, &self.effn) {
            (Some(n2), Some(ff)) => y1.add(&ff.forward(&n2.forward(&y1)?)?),
            _ => Ok(y1),
        }
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.norm1.named_params(&format!("{prefix}.norm1"), out);
        self.oss.named_params(&format!("{prefix}.oss"), out);
        if let Some(n2) = &self.norm2 {
            n2.named_params(&format!("{prefix}.norm2"), out);
        }
        if let Some(ff) = &self.effn {
            ff.named_params(&format!("{prefix}.effn"), out);
        }
    }

    pub fn num_params(&self) -> u64 {
        let c = self.oss.cfg.channels as u64;
        let mut n = 2 * c + self.oss.num_params();
        if self.effn.is_some() {
            n += 2 * c;
        }
        if let Some(ff) = &self.effn {
            n += ff.num_params();
        }
        n
    }

    pub fn flops(&self, h: u64, w: u64) -> u64 {
        let c = self.oss.cfg.channels as u64;
        let mut f = self.oss.flops(h, w);
        if let Some(ff) = &self.effn {
            f += ff.flops(h, w, c);
        }
        f
    }
}
