//! The split-encoder network.
//!
//! Parameter naming: `c0.weight`, `g{G}.b{B}.{norm1,conv1,norm2,conv2,proj}.*`,
//! `final.norm.*`, `main.fc.*`, `ss.rot.*`, `ss.alpha.*` and
//! `bridge.{conv}.alpha_d`. Groups are numbered from 1 in names and from 0 in
//! code.

mod bridge;

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssdn_engine::{Real, Tape, Tensor, Var};

pub use bridge::{bridge_weights, AlphaSignal, BridgeConfig, BridgeLayer};

use crate::error::{contract, Error, Result};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint};
use crate::nn::{
    conv, group_norm, kaiming_normal, residual_block_forward, ArchConfig, BlockWeights, BoundParams, ConvWeight,
    Group, ParamRegistry, NORM_EPS,
};

/// An encoder stage whose output can be probed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockId {
    Stem,
    Block { group: usize, index: usize },
}

impl BlockId {
    /// First block of 0-based group `g`.
    pub fn group(g: usize) -> Self {
        BlockId::Block { group: g, index: 0 }
    }

    /// Name prefix shared by this stage's parameters.
    pub fn prefix(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockId::Stem => f.write_str("c0"),
            BlockId::Block { group, index } => write!(f, "g{}.b{index}", group + 1),
        }
    }
}

impl FromStr for BlockId {
    type Err = Error;

    /// Accepts `c0`, `g2` (first block of the group) and `g2.b1`, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "c0" {
            return Ok(BlockId::Stem);
        }
        let bad = || contract(format!("unknown block id `{s}`"));
        let rest = lower.strip_prefix('g').ok_or_else(bad)?;
        let (g, b) = match rest.split_once(".b") {
            Some((g, b)) => (g, b.parse::<usize>().map_err(|_| bad())?),
            None => (rest, 0),
        };
        let g: usize = g.parse().map_err(|_| bad())?;
        if g == 0 {
            return Err(bad());
        }
        Ok(BlockId::Block { group: g - 1, index: b })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ConvSpec {
    name: String,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl ConvSpec {
    fn param(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kernel, self.kernel]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct BlockSpec {
    id: BlockId,
    stride: usize,
    conv1: ConvSpec,
    conv2: ConvSpec,
    proj: Option<ConvSpec>,
    split: bool,
}

impl BlockSpec {
    fn prefix(&self) -> String {
        self.id.prefix()
    }

    fn convs(&self) -> impl Iterator<Item = &ConvSpec> {
        [&self.conv1, &self.conv2].into_iter().chain(self.proj.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    stem: ConvSpec,
    stem_split: bool,
    blocks: Vec<BlockSpec>,
    bridges: Vec<BridgeLayer>,
}

impl Layout {
    fn new(arch: &ArchConfig, bridge: &BridgeConfig) -> Layout {
        let stem = ConvSpec {
            name: "c0".into(),
            c_in: arch.in_channels,
            c_out: arch.c0_channels,
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        let mut blocks = Vec::new();
        let mut c_in = arch.c0_channels;
        for g in 0..arch.num_groups {
            let c_out = arch.group_widths[g];
            for b in 0..arch.blocks_per_group {
                let id = BlockId::Block { group: g, index: b };
                let stride = if b == 0 { arch.group_stride(g) } else { 1 };
                let spec = |suffix: &str, c_in, kernel, stride, pad| ConvSpec {
                    name: format!("{id}.{suffix}"),
                    c_in,
                    c_out,
                    kernel,
                    stride,
                    pad,
                };
                let proj = (stride != 1 || c_in != c_out).then(|| spec("proj", c_in, 1, stride, 0));
                blocks.push(BlockSpec {
                    id,
                    stride,
                    conv1: spec("conv1", c_in, 3, stride, 1),
                    conv2: spec("conv2", c_out, 3, 1, 1),
                    proj,
                    split: bridge.splits_group(g),
                });
                c_in = c_out;
            }
        }

        let stem_split = bridge.splits_stem();
        let mut bridged: Vec<&ConvSpec> = Vec::new();
        if stem_split {
            bridged.push(&stem);
        }
        for b in blocks.iter().filter(|b| b.split) {
            bridged.extend(b.convs());
        }
        let mut offset = 0;
        let bridges = bridged
            .into_iter()
            .map(|c| {
                let layer = BridgeLayer {
                    conv: c.name.clone(),
                    source_param: c.param(),
                    alpha_d: bridge.data.then(|| format!("bridge.{}.alpha_d", c.name)),
                    out_filters: c.c_out,
                    src_filters: c.c_out,
                    offset,
                };
                offset += layer.alpha_len();
                layer
            })
            .collect();
        Layout { stem, stem_split, blocks, bridges }
    }

    fn alpha_dim(&self) -> usize {
        self.bridges.iter().map(BridgeLayer::alpha_len).sum()
    }
}

/// Self-supervised branch output.
#[derive(Debug, Clone)]
pub struct SsOutput {
    /// `[N, num_rotation_classes]`
    pub rotation_logits: Var,
    /// Present on bridged models.
    pub alpha: Option<AlphaSignal>,
    pub encoded: Encoded,
}

/// Main branch output.
#[derive(Debug, Clone)]
pub struct MainOutput {
    /// `[N, num_classes]`
    pub logits: Var,
    /// The signal consumed by the bridges, when the signal bridge is enabled.
    pub alpha: Option<AlphaSignal>,
    pub encoded: Encoded,
}

/// Pooled features and every stage's output from one encoder pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[N, C]` after the final norm, ReLU and global average pooling.
    pub features: Var,
    pub stages: Vec<(BlockId, Var)>,
}

impl Encoded {
    pub fn stage(&self, id: BlockId) -> Option<Var> {
        self.stages.iter().find(|(b, _)| *b == id).map(|(_, v)| *v)
    }
}

/// A network with its parameters. Cloning deep-copies the registry.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub arch: ArchConfig,
    pub bridge: BridgeConfig,
    pub registry: ParamRegistry<T>,
    layout: Layout,
}

/// Builds and initializes a model. Convolution and head weights are
/// He-normal from a ChaCha stream seeded by `seed`; normalization scales
/// are 1, shifts and head biases 0, `α^d` the identity and the `α^s`
/// output layer zero. Bridge parameters are initialized last, so the shared
/// weights do not depend on the bridge configuration.
///
/// The `α^s` predictor exists on every bridged model; only a model with the
/// signal bridge feeds its output to the main branch.
pub fn build_model<T: Real>(arch: &ArchConfig, bridge: &BridgeConfig, seed: u64) -> Result<Model<T>> {
    arch.validate()?;
    bridge.validate()?;
    let layout = Layout::new(arch, bridge);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = ParamRegistry::new();
    let enc_group = |split: bool| if split { Group::EncoderSs } else { Group::EncoderShared };

    let mut add_conv = |reg: &mut ParamRegistry<T>, c: &ConvSpec, group| {
        let w = kaiming_normal(&c.shape(), c.c_in * c.kernel * c.kernel, &mut rng);
        reg.insert(c.param(), w, group)
    };
    add_conv(&mut reg, &layout.stem, enc_group(layout.stem_split))?;
    let add_norm = |reg: &mut ParamRegistry<T>, prefix: &str, c: usize, group| -> Result<()> {
        reg.insert(format!("{prefix}.gamma"), Tensor::ones([c]), group)?;
        reg.insert(format!("{prefix}.beta"), Tensor::zeros([c]), group)
    };
    for b in &layout.blocks {
        let g = enc_group(b.split);
        let p = b.prefix();
        add_norm(&mut reg, &format!("{p}.norm1"), b.conv1.c_in, g)?;
        add_conv(&mut reg, &b.conv1, g)?;
        add_norm(&mut reg, &format!("{p}.norm2"), b.conv2.c_in, g)?;
        add_conv(&mut reg, &b.conv2, g)?;
        if let Some(proj) = &b.proj {
            add_conv(&mut reg, proj, g)?;
        }
    }
    let feat = arch.feature_width();
    add_norm(&mut reg, "final.norm", feat, Group::EncoderShared)?;
    reg.insert("main.fc.weight", kaiming_normal(&[feat, arch.num_classes], feat, &mut rng), Group::MainHead)?;
    reg.insert("main.fc.bias", Tensor::zeros([arch.num_classes]), Group::MainHead)?;
    reg.insert("ss.rot.weight", kaiming_normal(&[feat, arch.num_rotation_classes], feat, &mut rng), Group::SsHead)?;
    reg.insert("ss.rot.bias", Tensor::zeros([arch.num_rotation_classes]), Group::SsHead)?;

    let d = layout.alpha_dim();
    if bridge.is_enabled() {
        reg.insert("ss.alpha.weight", Tensor::zeros([feat, d]), Group::BridgePredictor)?;
        reg.insert("ss.alpha.bias", Tensor::zeros([d]), Group::BridgePredictor)?;
    }
    for l in &layout.bridges {
        if let Some(name) = &l.alpha_d {
            reg.insert(name.clone(), Tensor::eye(l.src_filters), Group::BridgeData)?;
        }
    }
    Ok(Model { arch: arch.clone(), bridge: *bridge, registry: reg, layout })
}

/// Scalar parameter count implied by the configs, computed without building.
pub fn param_count(arch: &ArchConfig, bridge: &BridgeConfig) -> usize {
    let mut total = arch.in_channels * arch.c0_channels * 9;
    let mut c_in = arch.c0_channels;
    let mut d = if bridge.splits_stem() { arch.c0_channels * arch.c0_channels } else { 0 };
    for g in 0..arch.num_groups {
        let w = arch.group_widths[g];
        for b in 0..arch.blocks_per_group {
            let proj = (b == 0 && arch.group_stride(g) != 1) || c_in != w;
            let block = 2 * c_in + 9 * c_in * w + 2 * w + 9 * w * w + if proj { c_in * w } else { 0 };
            total += block;
            if bridge.splits_group(g) {
                d += (2 + usize::from(proj)) * w * w;
            }
            c_in = w;
        }
    }
    let feat = c_in;
    total += 2 * feat + (feat + 1) * (arch.num_classes + arch.num_rotation_classes);
    if bridge.is_enabled() {
        total += (feat + 1) * d;
    }
    if bridge.data {
        total += d;
    }
    total
}

impl<T: Real> Model<T> {
    /// Length `D` of the flattened `α^s` vector.
    pub fn alpha_dim(&self) -> usize {
        self.layout.alpha_dim()
    }

    pub fn bridge_layers(&self) -> &[BridgeLayer] {
        &self.layout.bridges
    }

    /// Every probe-able stage, input to output.
    pub fn stages(&self) -> Vec<BlockId> {
        std::iter::once(BlockId::Stem).chain(self.layout.blocks.iter().map(|b| b.id)).collect()
    }

    /// Registry names owned by one stage.
    pub fn stage_params(&self, id: BlockId) -> Result<Vec<String>> {
        if !self.stages().contains(&id) {
            return Err(contract(format!("model has no block `{id}`")));
        }
        let prefix = format!("{id}.");
        Ok(self.registry.names().filter(|n| n.starts_with(&prefix)).map(str::to_string).collect())
    }

    /// Binds the registry onto `tape`; see [`ParamRegistry::bind`].
    pub fn bind(&self, tape: &Tape<T>, trainable: impl Fn(&str, Group) -> bool) -> BoundParams {
        self.registry.bind(tape, trainable)
    }

    fn check_input(&self, tape: &Tape<T>, x: Var) -> Result<()> {
        let s = tape.shape_of(x)?;
        if s.len() != 4 || s[1] != self.arch.in_channels {
            return Err(contract(format!("model input {s:?}, expected [N,{},H,W]", self.arch.in_channels)));
        }
        Ok(())
    }

    /// C0 → groups → final norm → ReLU → GAP. Convs named in `main` use the
    /// given filters; all others use their registry weights.
    fn encode(
        &self,
        tape: &Tape<T>,
        p: &BoundParams,
        x: Var,
        main: Option<&HashMap<String, ConvWeight>>,
    ) -> Result<Encoded> {
        self.check_input(tape, x)?;
        let weight = |c: &ConvSpec| -> Result<ConvWeight> {
            match main.and_then(|m| m.get(&c.name)) {
                Some(w) => Ok(w.clone()),
                None => Ok(ConvWeight::Shared(p.var(&c.param())?)),
            }
        };
        let norm = |prefix: String| -> Result<(Var, Var)> {
            Ok((p.var(&format!("{prefix}.gamma"))?, p.var(&format!("{prefix}.beta"))?))
        };
        let stem = &self.layout.stem;
        let mut h = conv(tape, x, &weight(stem)?, stem.stride, stem.pad)?;
        let mut stages = vec![(BlockId::Stem, h)];
        for b in &self.layout.blocks {
            let prefix = b.prefix();
            let w = BlockWeights {
                norm1: norm(format!("{prefix}.norm1"))?,
                conv1: weight(&b.conv1)?,
                norm2: norm(format!("{prefix}.norm2"))?,
                conv2: weight(&b.conv2)?,
                proj: b.proj.as_ref().map(weight).transpose()?,
            };
            h = residual_block_forward(tape, h, &w, b.stride, self.arch.norm_groups)?;
            stages.push((b.id, h));
        }
        let (gamma, beta) = norm("final.norm".into())?;
        let h = group_norm(tape, h, self.arch.norm_groups, gamma, beta, NORM_EPS)?;
        let h = tape.relu(h)?;
        let features = tape.global_avg_pool(h)?;
        Ok(Encoded { features, stages })
    }

    fn head(&self, tape: &Tape<T>, p: &BoundParams, features: Var, name: &str) -> Result<Var> {
        Ok(tape.affine(features, p.var(&format!("{name}.weight"))?, p.var(&format!("{name}.bias"))?)?)
    }

    /// C0 → E_s → E_sm → S: rotation logits and, for a bridged model, the
    /// predicted `α^s`.
    pub fn forward_ss(&self, tape: &Tape<T>, p: &BoundParams, x: Var) -> Result<SsOutput> {
        let encoded = self.encode(tape, p, x, None)?;
        let rotation_logits = self.head(tape, p, encoded.features, "ss.rot")?;
        let alpha = if self.bridge.is_enabled() {
            let values = self.head(tape, p, encoded.features, "ss.alpha")?;
            Some(AlphaSignal { values, layers: self.layout.bridges.clone() })
        } else {
            None
        };
        Ok(SsOutput { rotation_logits, alpha, encoded })
    }

    /// Synthesizes E_m's filters from the live E_s weights.
    fn derived_filters(
        &self,
        tape: &Tape<T>,
        p: &BoundParams,
        alpha: Option<&AlphaSignal>,
        batch: usize,
    ) -> Result<HashMap<String, ConvWeight>> {
        let mut out = HashMap::new();
        for (li, layer) in self.layout.bridges.iter().enumerate() {
            let src = p.var(&layer.source_param)?;
            let ad = layer.alpha_d.as_deref().map(|n| p.var(n)).transpose()?;
            let w = match alpha {
                None => ConvWeight::Shared(bridge_weights(tape, layer, ad, None, src)?),
                Some(sig) => ConvWeight::PerSample(
                    (0..batch)
                        .map(|s| bridge_weights(tape, layer, ad, Some(sig.matrix(tape, s, li)?), src))
                        .collect::<Result<_>>()?,
                ),
            };
            out.insert(layer.conv.clone(), w);
        }
        Ok(out)
    }

    /// One-pass hierarchical inference: S predicts `α^s` from `x`, the
    /// bridges synthesize E_m, then C0 → E_m → E_sm → M. Without bridges
    /// this is the plain shared-encoder forward.
    pub fn forward_main(&self, tape: &Tape<T>, p: &BoundParams, x: Var) -> Result<MainOutput> {
        if !self.bridge.is_enabled() {
            return self.forward_unsplit(tape, p, x);
        }
        let alpha = if self.bridge.signal { self.forward_ss(tape, p, x)?.alpha } else { None };
        let batch = tape.shape_of(x)?[0];
        let derived = self.derived_filters(tape, p, alpha.as_ref(), batch)?;
        let encoded = self.encode(tape, p, x, Some(&derived))?;
        let logits = self.head(tape, p, encoded.features, "main.fc")?;
        Ok(MainOutput { logits, alpha, encoded })
    }

    /// Main head on the self-supervised copy of every layer, ignoring the
    /// bridges: the joint-training architecture on the same weights.
    pub fn forward_unsplit(&self, tape: &Tape<T>, p: &BoundParams, x: Var) -> Result<MainOutput> {
        let encoded = self.encode(tape, p, x, None)?;
        let logits = self.head(tape, p, encoded.features, "main.fc")?;
        Ok(MainOutput { logits, alpha: None, encoded })
    }

    /// Main-task logits for a batch, without gradients.
    pub fn predict_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.bind(&tape, |_, _| false);
        let xv = tape.constant(x.clone());
        let out = self.forward_main(&tape, &p, xv)?;
        Ok(tape.value_of(out.logits)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write_checkpoint(&mut out, &self.arch, Some(&self.bridge), &self.registry)?;
        std::io::Write::flush(&mut out)?;
        Ok(())
    }

    /// Loads a checkpoint, checking its tensors against the layout its
    /// configs imply.
    pub fn load(path: impl AsRef<Path>) -> Result<Model<T>> {
        let (header, registry) = read_checkpoint::<T, _>(BufReader::new(File::open(path)?))?;
        let bridge = header.bridge.unwrap_or(BridgeConfig::none());
        let mut model = build_model::<T>(&header.arch, &bridge, 0)?;
        let mismatch = model.registry.len() != registry.len()
            || model.registry.iter().zip(registry.iter()).any(|((na, a), (nb, b))| {
                na != nb || a.group != b.group || a.value.shape() != b.value.shape()
            });
        if mismatch {
            return Err(Error::Format("checkpoint tensors do not match the stored configuration".into()));
        }
        model.registry = registry;
        Ok(model)
    }
}
