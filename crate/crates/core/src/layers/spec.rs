//! Declarative network descriptions and shape propagation.

use serde::{Deserialize, Serialize};

use super::convm::ConvMConfig;
use crate::error::{Error, Result};
use crate::tensor::kernels::{conv_out_extent, pool_out_extent, Conv2dParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Input { height: usize, width: usize, channels: usize },
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    MaxPool { kernel: usize, stride: usize },
    ConvM(ConvMConfig),
    AvgPool { kernel: usize, stride: usize },
    Linear { out_features: usize },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv { .. } => "convolution",
            LayerKind::MaxPool { .. } => "max-pooling",
            LayerKind::ConvM(_) => "conv-m",
            LayerKind::AvgPool { .. } => "avg-pooling",
            LayerKind::Linear { .. } => "linear",
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub freeze: bool,
    #[serde(default = "one")]
    pub lr_mult: f64,
}

impl From<LayerKind> for LayerSpec {
    fn from(kind: LayerKind) -> Self {
        LayerSpec { kind, freeze: false, lr_mult: 1.0 }
    }
}

/// `channels × height × width` of one layer's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl std::fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}×{}×{}", self.height, self.width, self.channels)
    }
}

/// Ordered layer list. Layers are numbered from 1, the input being layer 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(default)]
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

/// Conv-M channel plans of the reference network, keyed by layer number.
pub const REFERENCE_CONVM: [(usize, usize, [usize; 9]); 7] = [
    (4, 64, [64, 64, 64, 64, 64, 64, 32, 32, 32]),
    (6, 160, [128, 128, 128, 128, 128, 128, 64, 64, 64]),
    (7, 320, [128, 128, 128, 128, 128, 128, 64, 64, 64]),
    (9, 320, [144, 256, 256, 144, 256, 256, 64, 64, 64]),
    (10, 576, [144, 256, 256, 144, 256, 256, 64, 64, 64]),
    (12, 576, [160, 256, 280, 160, 256, 280, 64, 128, 128]),
    (13, 688, [160, 256, 280, 160, 256, 280, 64, 128, 128]),
];

impl NetworkSpec {
    /// The full 224×224 network with its 1000-way classifier.
    pub fn reference() -> Self {
        use LayerKind::*;
        let cm = |i: usize| {
            let (_, n_in, maps) = REFERENCE_CONVM.iter().find(|r| r.0 == i).expect("reference row");
            ConvM(ConvMConfig::new(*n_in, *maps))
        };
        let pool = || MaxPool { kernel: 3, stride: 2 };
        let kinds = vec![
            Input { height: 224, width: 224, channels: 3 },
            Conv { out_channels: 64, kernel: 7, stride: 1, padding: 3 },
            pool(),
            cm(4),
            pool(),
            cm(6),
            cm(7),
            pool(),
            cm(9),
            cm(10),
            pool(),
            cm(12),
            cm(13),
            AvgPool { kernel: 14, stride: 1 },
            Linear { out_features: 1000 },
        ];
        NetworkSpec { name: "reference".into(), layers: kinds.into_iter().map(LayerSpec::from).collect() }
    }

    /// Desk-scale variant: 32×32 input, channel counts divided by 8 (rounded
    /// up to a multiple of the group count), and three pooling stages; the
    /// last pair of Conv-M modules runs at the same 4×4 scale as the pair
    /// before it.
    pub fn tiny(classes: usize) -> Self {
        use LayerKind::*;
        let scale = |c: usize| (c.div_ceil(8)).div_ceil(4) * 4;
        let mut kinds = vec![Input { height: 32, width: 32, channels: 3 }, Conv { out_channels: 8, kernel: 7, stride: 1, padding: 3 }];
        let mut n_in = 8;
        for (i, _, maps) in REFERENCE_CONVM {
            if matches!(i, 4 | 6 | 9) {
                kinds.push(MaxPool { kernel: 3, stride: 2 });
            }
            let cfg = ConvMConfig::new(n_in, maps.map(scale));
            n_in = cfg.out_channels();
            kinds.push(ConvM(cfg));
        }
        kinds.push(AvgPool { kernel: 4, stride: 1 });
        kinds.push(Linear { out_features: classes });
        NetworkSpec { name: "tiny".into(), layers: kinds.into_iter().map(LayerSpec::from).collect() }
    }

    /// Layer by 1-based number.
    pub fn layer(&self, index: usize) -> Option<&LayerSpec> {
        index.checked_sub(1).and_then(|i| self.layers.get(i))
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut LayerSpec> {
        index.checked_sub(1).and_then(move |i| self.layers.get_mut(i))
    }

    /// 1-based numbers of every layer matching `pred`.
    pub fn indices_where(&self, pred: impl Fn(&LayerKind) -> bool) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| pred(&l.kind)).map(|(i, _)| i + 1).collect()
    }

    pub fn conv_m_indices(&self) -> Vec<usize> {
        self.indices_where(|k| matches!(k, LayerKind::ConvM(_)))
    }

    pub fn maxpool_indices(&self) -> Vec<usize> {
        self.indices_where(|k| matches!(k, LayerKind::MaxPool { .. }))
    }

    pub fn input_shape(&self) -> Result<FeatureShape> {
        match self.layers.first().map(|l| &l.kind) {
            Some(LayerKind::Input { height, width, channels }) => {
                Ok(FeatureShape { channels: *channels, height: *height, width: *width })
            }
            _ => Err(Error::Layer { index: 1, message: "first layer must be the input".into() }),
        }
    }

    /// Output shape of every layer, in order. Fails with the offending layer
    /// number when two neighbours are incompatible.
    pub fn shapes(&self) -> Result<Vec<FeatureShape>> {
        let mut shapes = vec![self.input_shape()?];
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let index = i + 1;
            let err = |message: String| Error::Layer { index, message };
            let prev = *shapes.last().expect("input pushed");
            let next = match &layer.kind {
                LayerKind::Input { .. } => return Err(err("input may only appear first".into())),
                LayerKind::Conv { out_channels, kernel, stride, padding } => {
                    let p = Conv2dParams { stride: *stride, padding: *padding, ..Default::default() };
                    if *out_channels == 0 || *kernel == 0 || *stride == 0 {
                        return Err(err("convolution sizes must be positive".into()));
                    }
                    let h = conv_out_extent(prev.height, *kernel, &p);
                    let w = conv_out_extent(prev.width, *kernel, &p);
                    match (h, w) {
                        (Some(height), Some(width)) => FeatureShape { channels: *out_channels, height, width },
                        _ => return Err(err(format!("kernel {kernel} does not fit {prev}"))),
                    }
                }
                LayerKind::MaxPool { kernel, stride } | LayerKind::AvgPool { kernel, stride } => {
                    match (pool_out_extent(prev.height, *kernel, *stride), pool_out_extent(prev.width, *kernel, *stride)) {
                        (Some(height), Some(width)) => FeatureShape { channels: prev.channels, height, width },
                        _ => return Err(err(format!("pool window {kernel}/{stride} does not fit {prev}"))),
                    }
                }
                LayerKind::ConvM(cfg) => {
                    cfg.validate().map_err(|e| err(e.to_string()))?;
                    if cfg.n_in != prev.channels {
                        return Err(err(format!("Conv-M expects {} input maps, previous layer gives {}", cfg.n_in, prev.channels)));
                    }
                    FeatureShape { channels: cfg.out_channels(), ..prev }
                }
                LayerKind::Linear { out_features } => {
                    if *out_features == 0 {
                        return Err(err("linear layer needs at least one output".into()));
                    }
                    FeatureShape { channels: *out_features, height: 1, width: 1 }
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }
}
