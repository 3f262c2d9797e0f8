//! U-Net and U-Net++ backbones and the fused segmentation model.
//!
//! A [`SegModel`] holds one or two branches. Single-modality, early and intermediate fusion
//! use one branch; late fusion uses two single-channel branches whose outputs are averaged.
//! Intermediate fusion is a branch with two encoders whose features are concatenated at
//! every scale before the shared decoder.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{BackboneConfig, BackboneKind, FusionConfig, SkipSource, Strategy};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{ConvBlock, Head, UpConv};
use crate::params::{BufferUpdate, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct Encoder {
    /// Input channel taken from the model input, or the whole input when `None`.
    channel: Option<usize>,
    blocks: Vec<ConvBlock>,
}

impl Encoder {
    fn forward(&self, g: &mut Graph, x: NodeId) -> Result<Vec<NodeId>> {
        let mut cur = match self.channel {
            Some(c) => g.select(x, c, 1)?,
            None => x,
        };
        let mut feats = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                cur = g.maxpool(cur)?;
            }
            cur = b.forward(g, cur)?;
            feats.push(cur);
        }
        Ok(feats)
    }
}

#[derive(Debug, Clone)]
enum Decoder {
    /// Index `i` holds the up-convolution from level `i + 1` and the block at level `i`.
    Unet { ups: Vec<UpConv>, blocks: Vec<ConvBlock> },
    /// Keyed by node `(i, j)` with `j ≥ 1`.
    Nested {
        ups: BTreeMap<(usize, usize), UpConv>,
        blocks: BTreeMap<(usize, usize), ConvBlock>,
    },
}

#[derive(Debug, Clone)]
struct Branch {
    depth: usize,
    encoders: Vec<Encoder>,
    skips: SkipSource,
    decoder: Decoder,
    heads: Vec<Head>,
}

impl Branch {
    /// `channel` selects the input channel of each encoder; `[None]` feeds the whole input.
    fn build(
        cfg: &BackboneConfig,
        channels: &[Option<usize>],
        in_per_encoder: usize,
        skips: SkipSource,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.depth;
        let k = |i: usize| cfg.filters(i);
        let encoders: Vec<Encoder> = channels
            .iter()
            .enumerate()
            .map(|(e, &channel)| Encoder {
                channel,
                blocks: (0..=d)
                    .map(|i| {
                        let cin = if i == 0 { in_per_encoder } else { k(i - 1) };
                        let name = format!("{prefix}enc{e}.level{i}");
                        ConvBlock::new(store, &name, cin, k(i), true, cfg.bn_order, rng)
                    })
                    .collect(),
            })
            .collect();
        let ne = encoders.len();
        let fused = |i: usize| i == d || skips == SkipSource::Both;
        let enc_ch = |i: usize| if fused(i) { ne * k(i) } else { k(i) };
        let (decoder, head_in) = match cfg.kind {
            BackboneKind::Unet => {
                let mut ups = Vec::with_capacity(d);
                let mut blocks = Vec::with_capacity(d);
                for i in 0..d {
                    let up_in = if i + 1 == d { enc_ch(d) } else { k(i + 1) };
                    ups.push(UpConv::new(store, &format!("{prefix}dec.up{i}"), up_in, k(i), rng));
                }
                for i in 0..d {
                    let name = format!("{prefix}dec.level{i}");
                    blocks.push(ConvBlock::new(store, &name, enc_ch(i) + k(i), k(i), false, cfg.bn_order, rng));
                }
                (Decoder::Unet { ups, blocks }, vec![k(0)])
            }
            BackboneKind::Unetpp => {
                let mut ups = BTreeMap::new();
                let mut blocks = BTreeMap::new();
                for j in 1..=d {
                    for i in 0..=d - j {
                        let up_in = if j == 1 { enc_ch(i + 1) } else { k(i + 1) };
                        let name = format!("{prefix}node{i}_{j}");
                        ups.insert((i, j), UpConv::new(store, &format!("{name}.up"), up_in, k(i), rng));
                        let cin = enc_ch(i) + j * k(i);
                        blocks.insert((i, j), ConvBlock::new(store, &name, cin, k(i), true, cfg.bn_order, rng));
                    }
                }
                let heads = if cfg.deep_supervision { d } else { 1 };
                (Decoder::Nested { ups, blocks }, vec![k(0); heads])
            }
        };
        let heads = head_in
            .iter()
            .enumerate()
            .map(|(h, &c)| Head::new(store, &format!("{prefix}head{h}"), c, rng))
            .collect();
        Self {
            depth: d,
            encoders,
            skips,
            decoder,
            heads,
        }
    }

    /// Sigmoid output of every head.
    fn forward(&self, g: &mut Graph, x: NodeId) -> Result<Vec<NodeId>> {
        let d = self.depth;
        let per: Vec<Vec<NodeId>> = self
            .encoders
            .iter()
            .map(|e| e.forward(g, x))
            .collect::<Result<_>>()?;
        let mut feats = Vec::with_capacity(d + 1);
        for i in 0..=d {
            if per.len() == 1 || (i < d && self.skips == SkipSource::First) {
                feats.push(per[0][i]);
            } else {
                let level: Vec<NodeId> = per.iter().map(|f| f[i]).collect();
                feats.push(g.concat(&level)?);
            }
        }
        let tops = match &self.decoder {
            Decoder::Unet { ups, blocks } => {
                let mut cur = feats[d];
                for i in (0..d).rev() {
                    let u = ups[i].forward(g, cur)?;
                    let c = g.concat(&[feats[i], u])?;
                    cur = blocks[i].forward(g, c)?;
                }
                vec![cur]
            }
            Decoder::Nested { ups, blocks } => {
                let mut x: Vec<Vec<NodeId>> = feats.iter().map(|&f| vec![f]).collect();
                for j in 1..=d {
                    for i in 0..=d - j {
                        let u = ups[&(i, j)].forward(g, x[i + 1][j - 1])?;
                        let mut inputs = x[i][..j].to_vec();
                        inputs.push(u);
                        let c = g.concat(&inputs)?;
                        let node = blocks[&(i, j)].forward(g, c)?;
                        x[i].push(node);
                    }
                }
                if self.heads.len() == 1 {
                    vec![x[0][d]]
                } else {
                    x[0][1..=d].to_vec()
                }
            }
        };
        self.heads
            .iter()
            .zip(tops)
            .map(|(h, t)| h.forward(g, t))
            .collect()
    }
}

/// Node ids of one forward pass: per-branch head outputs, per-branch outputs (head mean)
/// and the final fused output.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub heads: Vec<Vec<NodeId>>,
    pub branches: Vec<NodeId>,
    pub output: NodeId,
}

/// Materialized outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub heads: Vec<Vec<Tensor>>,
    pub branches: Vec<Tensor>,
    pub output: Tensor,
}

/// Result of one training-mode forward and backward pass.
#[derive(Debug)]
pub struct TrainStep {
    pub loss: f64,
    /// Aligned with the model's parameter list.
    pub grads: Vec<Tensor>,
    pub updates: Vec<BufferUpdate>,
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct SegModel {
    backbone: BackboneConfig,
    fusion: FusionConfig,
    store: ParamStore,
    branches: Vec<Branch>,
}

/// Plain U-Net on `cfg.input_channels` channels.
pub fn build_unet(cfg: &BackboneConfig, seed: u64) -> Result<SegModel> {
    if cfg.kind != BackboneKind::Unet {
        return Err(Error::InvalidConfig("build_unet needs kind unet".into()));
    }
    SegModel::build_raw(cfg, seed)
}

/// Plain U-Net++ on `cfg.input_channels` channels.
pub fn build_unetpp(cfg: &BackboneConfig, seed: u64) -> Result<SegModel> {
    if cfg.kind != BackboneKind::Unetpp {
        return Err(Error::InvalidConfig("build_unetpp needs kind unetpp".into()));
    }
    SegModel::build_raw(cfg, seed)
}

pub fn build_fused(backbone: &BackboneConfig, fusion: &FusionConfig, seed: u64) -> Result<SegModel> {
    SegModel::build(backbone, fusion, seed)
}

/// Voxelwise mean of two probability maps.
pub fn fuse_decisions(p1: &Tensor, p2: &Tensor) -> Result<Tensor> {
    if p1.shape() != p2.shape() {
        return Err(Error::Shape(format!("fusing {:?} with {:?}", p1.shape(), p2.shape())));
    }
    let data = p1.data().iter().zip(p2.data()).map(|(a, b)| 0.5 * (a + b)).collect();
    Tensor::new(p1.shape().to_vec(), data)
}

impl SegModel {
    fn build_raw(cfg: &BackboneConfig, seed: u64) -> Result<Self> {
        let fusion = if cfg.input_channels == 2 {
            FusionConfig::early()
        } else if cfg.input_channels == 1 {
            FusionConfig::single(crate::config::Modality::Bmode)
        } else {
            return Err(Error::InvalidConfig(format!(
                "{} input channels; models take one or two modalities",
                cfg.input_channels
            )));
        };
        Self::build(cfg, &fusion, seed)
    }

    /// Builds and initializes a model; `seed` drives weight initialization.
    pub fn build(backbone: &BackboneConfig, fusion: &FusionConfig, seed: u64) -> Result<Self> {
        backbone.validate()?;
        fusion.validate()?;
        if backbone.input_channels != fusion.input_channels() {
            return Err(Error::InvalidConfig(format!(
                "{fusion} fusion takes {} input channels, backbone declares {}",
                fusion.input_channels(),
                backbone.input_channels
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let skips = fusion.intermediate_skips;
        let branches = match fusion.strategy {
            Strategy::Single | Strategy::Early => {
                let c = backbone.input_channels;
                vec![Branch::build(backbone, &[None], c, skips, &mut store, "", &mut rng)]
            }
            Strategy::Intermediate => vec![Branch::build(
                backbone,
                &[Some(0), Some(1)],
                1,
                skips,
                &mut store,
                "",
                &mut rng,
            )],
            Strategy::Late => ["bmode.", "doppler."]
                .iter()
                .enumerate()
                .map(|(c, p)| Branch::build(backbone, &[Some(c)], 1, skips, &mut store, p, &mut rng))
                .collect(),
        };
        Ok(Self {
            backbone: *backbone,
            fusion: *fusion,
            store,
            branches,
        })
    }

    pub fn backbone(&self) -> &BackboneConfig {
        &self.backbone
    }

    pub fn fusion(&self) -> &FusionConfig {
        &self.fusion
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn input_channels(&self) -> usize {
        self.fusion.input_channels()
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn heads_per_branch(&self) -> usize {
        self.branches[0].heads.len()
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let (n, c, dims) = x.dims5()?;
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if c != self.input_channels() {
            return Err(Error::Shape(format!(
                "{c} input channels, {} fusion expects {}",
                self.fusion,
                self.input_channels()
            )));
        }
        let f = 1usize << self.backbone.depth;
        if dims.iter().any(|&d| d == 0 || d % f != 0) {
            return Err(Error::Shape(format!(
                "spatial shape {dims:?} not divisible by 2^{}",
                self.backbone.depth
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `g`.
    pub fn forward_graph(&self, g: &mut Graph, x: NodeId) -> Result<ForwardNodes> {
        let heads: Vec<Vec<NodeId>> = self
            .branches
            .iter()
            .map(|b| b.forward(g, x))
            .collect::<Result<_>>()?;
        let branches: Vec<NodeId> = heads
            .iter()
            .map(|h| if h.len() == 1 { Ok(h[0]) } else { g.mean(h) })
            .collect::<Result<_>>()?;
        let output = if branches.len() == 1 {
            branches[0]
        } else {
            g.mean(&branches)?
        };
        Ok(ForwardNodes {
            heads,
            branches,
            output,
        })
    }

    /// Forward pass returning every head, branch and the fused output. Training mode uses
    /// batch statistics but leaves the running statistics untouched.
    pub fn forward_outputs(&self, x: &Tensor, train: bool) -> Result<Outputs> {
        self.check_input(x)?;
        let mut g = Graph::new(&self.store, train);
        let xi = g.input(x.clone())?;
        let f = self.forward_graph(&mut g, xi)?;
        Ok(Outputs {
            heads: f
                .heads
                .iter()
                .map(|h| h.iter().map(|&n| g.value(n).clone()).collect())
                .collect(),
            branches: f.branches.iter().map(|&n| g.value(n).clone()).collect(),
            output: g.value(f.output).clone(),
        })
    }

    /// Inference-mode probability map of shape `(n, 1, x, y, z)`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut g = Graph::new(&self.store, false);
        let xi = g.input(x.clone())?;
        let f = self.forward_graph(&mut g, xi)?;
        Ok(g.value(f.output).clone())
    }

    /// Training-mode forward and backward pass. `loss` maps one head's probability map to its
    /// value and gradient. The total is the mean over heads within a branch, averaged over
    /// branches, so each late-fusion branch sees only its own loss.
    pub fn train_step<F>(&self, x: &Tensor, mut loss: F) -> Result<TrainStep>
    where
        F: FnMut(&Tensor) -> (f64, Tensor),
    {
        self.check_input(x)?;
        let mut g = Graph::new(&self.store, true);
        let xi = g.input(x.clone())?;
        let f = self.forward_graph(&mut g, xi)?;
        let nb = f.heads.len() as f64;
        let mut total = 0.0;
        let mut seeds = Vec::new();
        for heads in &f.heads {
            let w = 1.0 / (nb * heads.len() as f64);
            for &h in heads {
                let (l, mut grad) = loss(g.value(h));
                total += w * l;
                grad.scale(w);
                seeds.push((h, grad));
            }
        }
        let grads = g.backward(seeds)?;
        let output = g.value(f.output).clone();
        let updates = g.take_updates();
        Ok(TrainStep {
            loss: total,
            grads,
            updates,
            output,
        })
    }

    pub fn apply_updates(&mut self, updates: Vec<BufferUpdate>) {
        self.store.apply_updates(updates);
    }
}
