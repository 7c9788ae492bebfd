//! Building networks from a [`NetworkSpec`], attaching the domain-adaptation
//! heads and decoders, and running the forward pass.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::convm::{self, ConvMConfig};
use super::spec::{FeatureShape, LayerKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{he_normal, normal_init, Bound, ParamStore};
use crate::tensor::kernels::{Conv2dParams, IndexMap};
use crate::tensor::{Scalar, Tensor};

/// Std of the label predictor's output weights at attach time.
pub const HEAD_OUTPUT_STD: f64 = 0.01;

/// Two-layer label predictor placed on the pooled encoder features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub hidden: usize,
    pub classes: usize,
    pub lr_mult: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderStage {
    /// Max-pooling layer whose indices drive this stage's unpooling.
    pub pool: usize,
    /// Output channels of the stage's 3×3 convolution; equals the channel
    /// count of the pooled tensor so the indices apply plane by plane.
    pub width: usize,
}

/// Conv/unpool chain from an encoder tap back to input resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub name: String,
    /// Layer number whose output feeds the decoder.
    pub tap: usize,
    pub stages: Vec<DecoderStage>,
    pub out_channels: usize,
    pub lr_mult: f64,
}

impl DecoderSpec {
    /// Decoder from `tap` using every max-pooling before it, deepest first.
    pub fn for_tap(name: &str, spec: &NetworkSpec, tap: usize, lr_mult: f64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let stages = spec
            .maxpool_indices()
            .into_iter()
            .filter(|&p| p < tap)
            .rev()
            .map(|pool| DecoderStage { pool, width: shapes[pool - 1].channels })
            .collect();
        Ok(DecoderSpec { name: name.into(), tap, stages, out_channels: spec.input_shape()?.channels, lr_mult })
    }

    /// Convolutions in the decoder (stages plus the final 1×1 projection).
    pub fn conv_count(&self) -> usize {
        self.stages.len() + 1
    }

    /// Layers in the decoder: one convolution and one unpooling per stage,
    /// plus the final projection.
    pub fn layer_count(&self) -> usize {
        2 * self.stages.len() + 1
    }
}

/// Everything needed to allocate a model's parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub network: NetworkSpec,
    #[serde(default)]
    pub head: Option<HeadSpec>,
    #[serde(default)]
    pub decoders: Vec<DecoderSpec>,
}

/// Shape and learning-rate multiplier of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub lr_mult: f64,
    /// Layer number for encoder parameters; `None` for heads and decoders.
    pub layer: Option<usize>,
    /// Fixed initializer std; `None` means He-normal from `fan_in`.
    pub init_std: Option<f64>,
}

impl ParamShape {
    pub fn init<T: Scalar>(&self, seed: u64) -> Tensor<T> {
        match self.init_std {
            Some(std) => normal_init(seed, &self.name, &self.shape, std),
            None => he_normal(seed, &self.name, &self.shape, self.fan_in),
        }
    }
}

impl Architecture {
    pub fn new(network: NetworkSpec) -> Self {
        Architecture { network, head: None, decoders: Vec::new() }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("architecture serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn param_shapes(&self) -> Result<Vec<ParamShape>> {
        let shapes = self.network.shapes()?;
        let mut out = Vec::new();
        for (i, layer) in self.network.layers.iter().enumerate() {
            let index = i + 1;
            let lr_mult = if layer.freeze { 0.0 } else { layer.lr_mult };
            let prev = if i > 0 { shapes[i - 1] } else { shapes[0] };
            let mut push = |name: String, shape: Vec<usize>, fan_in: usize| {
                out.push(ParamShape { name, shape, fan_in, lr_mult, layer: Some(index), init_std: None })
            };
            match &layer.kind {
                LayerKind::Conv { out_channels, kernel, .. } => {
                    push(format!("l{index}.w"), vec![*out_channels, prev.channels, *kernel, *kernel], prev.channels * kernel * kernel)
                }
                LayerKind::ConvM(cfg) => {
                    for slot in cfg.slots() {
                        push(format!("l{index}.{}", slot.name), slot.weight_shape().to_vec(), slot.fan_in());
                    }
                }
                LayerKind::Linear { out_features } => {
                    let din = prev.channels * prev.height * prev.width;
                    push(format!("l{index}.w"), vec![*out_features, din], din)
                }
                LayerKind::Input { .. } | LayerKind::MaxPool { .. } | LayerKind::AvgPool { .. } => {}
            }
        }
        if let Some(head) = &self.head {
            let feat = self.feature_width()?;
            out.push(ParamShape {
                name: "head.fc1".into(),
                shape: vec![head.hidden, feat],
                fan_in: feat,
                lr_mult: head.lr_mult,
                layer: None,
                init_std: None,
            });
            // Near-zero logits at attach time, so the first fine-tuning steps
            // do not push large gradients into the pretrained encoder.
            out.push(ParamShape {
                name: "head.fc2".into(),
                shape: vec![head.classes, head.hidden],
                fan_in: head.hidden,
                lr_mult: head.lr_mult,
                layer: None,
                init_std: Some(HEAD_OUTPUT_STD),
            });
        }
        for dec in &self.decoders {
            let mut cin = shapes[dec.tap - 1].channels;
            for (s, stage) in dec.stages.iter().enumerate() {
                out.push(ParamShape {
                    name: format!("{}.s{s}", dec.name),
                    shape: vec![stage.width, cin, 3, 3],
                    fan_in: cin * 9,
                    lr_mult: dec.lr_mult,
                    layer: None,
                    init_std: None,
                });
                cin = stage.width;
            }
            out.push(ParamShape {
                name: format!("{}.out", dec.name),
                shape: vec![dec.out_channels, cin, 1, 1],
                fan_in: cin,
                lr_mult: dec.lr_mult,
                layer: None,
                init_std: None,
            });
        }
        Ok(out)
    }

    /// Width of the flattened encoder output that feeds the heads.
    pub fn feature_width(&self) -> Result<usize> {
        let shapes = self.network.shapes()?;
        let last = shapes.last().expect("non-empty");
        Ok(last.channels * last.height * last.width)
    }

    /// Shapes after each decoder op: for every stage the convolved then the
    /// unpooled shape, then the final projection.
    pub fn decoder_shapes(&self, dec: &DecoderSpec) -> Result<Vec<FeatureShape>> {
        let shapes = self.network.shapes()?;
        let mut cur = shapes[dec.tap - 1];
        let mut out = Vec::new();
        for stage in &dec.stages {
            let src = shapes[stage.pool - 2];
            let pooled = shapes[stage.pool - 1];
            if (cur.height, cur.width) != (pooled.height, pooled.width) {
                return Err(Error::Layer {
                    index: stage.pool,
                    message: format!("decoder {} reaches {cur} but pooling produced {pooled}", dec.name),
                });
            }
            cur = FeatureShape { channels: stage.width, ..cur };
            out.push(cur);
            cur = FeatureShape { channels: stage.width, height: src.height, width: src.width };
            out.push(cur);
        }
        cur = FeatureShape { channels: dec.out_channels, ..cur };
        out.push(cur);
        Ok(out)
    }
}

/// Forward-pass settings.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Enables dropout.
    pub training: bool,
    /// Runs attached decoders.
    pub decoders: bool,
}

pub struct Forward {
    /// Logits when a classifier or head is present, otherwise the last
    /// layer's output.
    pub output: Var,
    /// Flattened output of the last encoder layer before any classifier.
    pub features: Var,
    /// Output of each layer, indexed by layer number − 1.
    pub layers: Vec<Var>,
    pub pools: BTreeMap<usize, Arc<IndexMap>>,
    /// C3, DiC2 and DeC2 branch outputs of each Conv-M layer.
    pub branches: BTreeMap<usize, [Var; 3]>,
    pub reconstructions: Vec<Var>,
}

impl Forward {
    pub fn layer(&self, index: usize) -> Var {
        self.layers[index - 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    arch: Architecture,
    params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Validates `network` and allocates He-initialized, bias-free weights.
    pub fn build(network: NetworkSpec, seed: u64) -> Result<Self> {
        Self::from_architecture(Architecture::new(network), seed)
    }

    pub fn from_architecture(arch: Architecture, seed: u64) -> Result<Self> {
        let mut params = ParamStore::default();
        for p in arch.param_shapes()? {
            params.insert(&p.name, p.init(seed), p.lr_mult)?;
        }
        Ok(Model { arch, params })
    }

    /// Rebuilds a model around existing parameters, checking every shape.
    pub fn with_params(arch: Architecture, params: ParamStore<T>) -> Result<Self> {
        let expected = arch.param_shapes()?;
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!("expected {} parameter tensors, found {}", expected.len(), params.len())));
        }
        for (e, p) in expected.iter().zip(params.iter()) {
            if e.name != p.name || e.shape != p.value.shape() {
                return Err(Error::Checkpoint(format!("parameter `{}` {:?} does not match `{}` {:?}", p.name, p.value.shape(), e.name, e.shape)));
            }
        }
        Ok(Model { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.arch.network
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Number of allocated weight elements.
    pub fn census(&self) -> u64 {
        self.params.census()
    }

    /// Removes the trailing classification linear layer.
    pub fn strip_classifier(&mut self) -> Result<()> {
        let n = self.arch.network.layers.len();
        if !matches!(self.arch.network.layers.last().map(|l| &l.kind), Some(LayerKind::Linear { .. })) {
            return Err(Error::invalid("network has no trailing classifier to remove"));
        }
        if !self.arch.decoders.is_empty() || self.arch.head.is_some() {
            return Err(Error::invalid("strip the classifier before attaching heads or decoders"));
        }
        self.arch.network.layers.pop();
        let prefix = format!("l{n}.");
        self.params.remove_where(|name| name.starts_with(&prefix));
        Ok(())
    }

    /// Adds `linear(→hidden) → ReLU → linear(→classes)` on the pooled features.
    pub fn attach_da_heads(&mut self, classes: usize, hidden: usize, lr_mult: f64, seed: u64) -> Result<()> {
        if classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
        }
        if matches!(self.arch.network.layers.last().map(|l| &l.kind), Some(LayerKind::Linear { .. })) {
            return Err(Error::invalid("remove the classification layer before attaching heads"));
        }
        if self.arch.head.is_some() {
            return Err(Error::invalid("heads already attached"));
        }
        self.arch.head = Some(HeadSpec { hidden, classes, lr_mult });
        self.rebuild_tail(seed)
    }

    /// Adds the two reconstruction decoders: one tapping the last Conv-M,
    /// one tapping the last Conv-M before the final max-pooling.
    pub fn attach_decoders(&mut self, lr_mult: f64, seed: u64) -> Result<()> {
        if !self.arch.decoders.is_empty() {
            return Err(Error::invalid("decoders already attached"));
        }
        for (name, tap) in default_decoder_taps(&self.arch.network)? {
            let dec = DecoderSpec::for_tap(name, &self.arch.network, tap, lr_mult)?;
            self.arch.decoder_shapes(&dec)?;
            self.arch.decoders.push(dec);
        }
        self.rebuild_tail(seed)
    }

    /// Drops decoder parameters, leaving the encoder and label predictor.
    pub fn strip_decoders(&mut self) {
        let names: Vec<String> = self.arch.decoders.iter().map(|d| format!("{}.", d.name)).collect();
        self.params.remove_where(|p| names.iter().any(|n| p.starts_with(n)));
        self.arch.decoders.clear();
    }

    fn rebuild_tail(&mut self, seed: u64) -> Result<()> {
        for p in self.arch.param_shapes()? {
            if self.params.position(&p.name).is_none() {
                self.params.insert(&p.name, p.init(seed), p.lr_mult)?;
            }
        }
        Ok(())
    }

    /// Sets the learning-rate multiplier of every parameter of a layer.
    pub fn set_layer_lr_mult(&mut self, layer: usize, mult: f64) -> Result<()> {
        let spec = self.arch.network.layer_mut(layer).ok_or_else(|| Error::invalid(format!("no layer {layer}")))?;
        spec.lr_mult = mult;
        spec.freeze = mult == 0.0;
        let prefix = format!("l{layer}.");
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(&prefix)) {
            p.lr_mult = mult;
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        self.params.bind(g, false)
    }

    /// Runs the encoder (and heads/decoders when attached) on `input`, an
    /// `[n, c, h, w]` node matching the spec's input layer.
    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph<T>, bound: &Bound, input: Var, opts: ForwardOptions, rng: &mut R) -> Result<Forward> {
        let spec = &self.arch.network;
        let want = spec.input_shape()?;
        let dims = g.value(input).dims4("network input")?;
        if (dims[1], dims[2], dims[3]) != (want.channels, want.height, want.width) {
            return Err(Error::Layer { index: 1, message: format!("input {dims:?} does not match {want}") });
        }
        let mut layers = vec![input];
        let mut pools = BTreeMap::new();
        let mut branches = BTreeMap::new();
        let mut x = input;
        let mut features = None;
        for (i, layer) in spec.layers.iter().enumerate().skip(1) {
            let index = i + 1;
            let at = |e: Error| Error::Layer { index, message: e.to_string() };
            x = match &layer.kind {
                LayerKind::Input { .. } => return Err(at(Error::invalid("input may only appear first"))),
                LayerKind::Conv { stride, padding, .. } => {
                    let w = bound.var(&format!("l{index}.w"))?;
                    let y = g.conv2d(x, w, Conv2dParams { stride: *stride, padding: *padding, ..Default::default() }).map_err(at)?;
                    g.relu(y)?
                }
                LayerKind::MaxPool { kernel, stride } => {
                    let (y, map) = g.maxpool2d(x, *kernel, *stride).map_err(at)?;
                    pools.insert(index, map);
                    y
                }
                LayerKind::ConvM(cfg) => {
                    let out = convm::forward(g, bound, &format!("l{index}"), cfg, x, opts.training, rng).map_err(at)?;
                    branches.insert(index, out.branches);
                    out.output
                }
                LayerKind::AvgPool { kernel, stride } => g.avgpool2d(x, *kernel, *stride).map_err(at)?,
                LayerKind::Linear { .. } => {
                    let flat = g.flatten(x)?;
                    features.get_or_insert(flat);
                    let w = bound.var(&format!("l{index}.w"))?;
                    g.linear(flat, w).map_err(at)?
                }
            };
            layers.push(x);
        }
        let features = match features {
            Some(f) => f,
            None => g.flatten(x)?,
        };
        let mut output = x;
        if self.arch.head.is_some() {
            let h = g.linear(features, bound.var("head.fc1")?)?;
            let h = g.relu(h)?;
            output = g.linear(h, bound.var("head.fc2")?)?;
        }
        let mut reconstructions = Vec::new();
        if opts.decoders {
            for dec in &self.arch.decoders {
                reconstructions.push(self.decode(g, bound, dec, &layers, &pools)?);
            }
        }
        Ok(Forward { output, features, layers, pools, branches, reconstructions })
    }

    fn decode(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        dec: &DecoderSpec,
        layers: &[Var],
        pools: &BTreeMap<usize, Arc<IndexMap>>,
    ) -> Result<Var> {
        let mut x = layers[dec.tap - 1];
        for (s, stage) in dec.stages.iter().enumerate() {
            let map = pools.get(&stage.pool).ok_or(Error::MissingIndices(stage.pool))?;
            x = g.conv2d(x, bound.var(&format!("{}.s{s}", dec.name))?, Conv2dParams { padding: 1, ..Default::default() })?;
            x = g.relu(x)?;
            x = g.unpool2d(x, map, map.input_shape)?;
        }
        g.conv2d(x, bound.var(&format!("{}.out", dec.name))?, Conv2dParams::default())
    }

    /// Convenience forward in evaluation mode on a plain tensor, returning
    /// the output values.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.input(input.clone());
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let out = self.forward(&mut g, &bound, x, ForwardOptions::default(), &mut rng)?;
        Ok(g.value(out.output).clone())
    }
}

/// `(name, tap layer)` for the two reconstruction decoders.
pub fn default_decoder_taps(spec: &NetworkSpec) -> Result<Vec<(&'static str, usize)>> {
    let conv_ms = spec.conv_m_indices();
    let last = *conv_ms.last().ok_or_else(|| Error::invalid("network has no Conv-M layer to tap"))?;
    let last_pool = *spec.maxpool_indices().last().ok_or_else(|| Error::invalid("network has no max-pooling layer"))?;
    let mut taps = vec![("d1", last)];
    if let Some(&second) = conv_ms.iter().rev().find(|&&i| i < last_pool) {
        if second != last {
            taps.push(("d2", second));
        }
    }
    Ok(taps)
}

/// Conv-M layers touched by a mutable closure; used by ablations.
pub fn map_conv_m(spec: &mut NetworkSpec, mut f: impl FnMut(&mut ConvMConfig)) {
    for layer in &mut spec.layers {
        if let LayerKind::ConvM(cfg) = &mut layer.kind {
            f(cfg);
        }
    }
}
