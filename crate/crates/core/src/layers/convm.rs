//! The three-branch Conv-M module.
//!
//! ```text
//!        ┌ C1(1×1) ─ C2(k×k,g) ─ C3(k×k,g) ─ dropout ┐
//! input ─┼ C4(1×1) ─ DiC1(dil)  ─ DiC2(dil)  ─ dropout ┼─ concat
//!        └ C5(1×1) ─ DeC1(deconv) ─ DeC2(deconv) ─ dropout ┘
//! ```
//!
//! Every convolution is followed by ReLU, none carries a bias, and every
//! deconvolution is cropped back to its input size so the module preserves
//! spatial extent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::Bound;
use crate::tensor::kernels::Conv2dParams;
use crate::tensor::Scalar;

fn default_kernel() -> usize {
    3
}
fn default_groups() -> usize {
    4
}
fn default_dilation() -> [usize; 2] {
    [2, 3]
}
fn default_dropout() -> f64 {
    0.2
}

/// Channel plan and settings of one Conv-M module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvMConfig {
    /// Input channel count (N_P).
    pub n_in: usize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub c4: usize,
    pub dic1: usize,
    pub dic2: usize,
    pub c5: usize,
    pub dec1: usize,
    pub dec2: usize,
    /// Kernel size of the six non-projection convolutions.
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    /// Group count of the six non-projection convolutions.
    #[serde(default = "default_groups")]
    pub groups: usize,
    /// Dilation rates of DiC1 and DiC2.
    #[serde(default = "default_dilation")]
    pub dilation: [usize; 2],
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Replace dilated and transposed convolutions by regular ones with the
    /// same channel plan (the "regular convolution only" ablation).
    #[serde(default)]
    pub regular_only: bool,
}

/// The nine convolutions in branch order.
pub const CONV_NAMES: [&str; 9] = ["c1", "c2", "c3", "c4", "dic1", "dic2", "c5", "dec1", "dec2"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Projection,
    Regular,
    Dilated(usize),
    Transposed,
}

/// One convolution of the module: name, input/output channels, kernel, groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSlot {
    pub name: &'static str,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub groups: usize,
    pub kind: ConvKind,
}

impl ConvSlot {
    /// Weight tensor shape; transposed convolutions store `[cin, cout/g, k, k]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            ConvKind::Transposed => [self.cin, self.cout / self.groups, self.kernel, self.kernel],
            _ => [self.cout, self.cin / self.groups, self.kernel, self.kernel],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.cin / self.groups * self.kernel * self.kernel
    }
}

impl ConvMConfig {
    /// Config with the default kernel, groups, dilation and dropout.
    pub fn new(n_in: usize, maps: [usize; 9]) -> Self {
        let [c1, c2, c3, c4, dic1, dic2, c5, dec1, dec2] = maps;
        ConvMConfig {
            n_in,
            c1,
            c2,
            c3,
            c4,
            dic1,
            dic2,
            c5,
            dec1,
            dec2,
            kernel: default_kernel(),
            groups: default_groups(),
            dilation: default_dilation(),
            dropout: default_dropout(),
            regular_only: false,
        }
    }

    pub fn maps(&self) -> [usize; 9] {
        [self.c1, self.c2, self.c3, self.c4, self.dic1, self.dic2, self.c5, self.dec1, self.dec2]
    }

    pub fn out_channels(&self) -> usize {
        self.c3 + self.dic2 + self.dec2
    }

    /// The nine convolutions with their channel plan, in branch order.
    pub fn slots(&self) -> [ConvSlot; 9] {
        let (k, g) = (self.kernel, self.groups);
        let proj = |name, cout| ConvSlot { name, cin: self.n_in, cout, kernel: 1, groups: 1, kind: ConvKind::Projection };
        let inner = |name, cin, cout, kind| ConvSlot { name, cin, cout, kernel: k, groups: g, kind };
        let (dil1, dil2, deconv) = if self.regular_only {
            (ConvKind::Regular, ConvKind::Regular, ConvKind::Regular)
        } else {
            (ConvKind::Dilated(self.dilation[0]), ConvKind::Dilated(self.dilation[1]), ConvKind::Transposed)
        };
        [
            proj("c1", self.c1),
            inner("c2", self.c1, self.c2, ConvKind::Regular),
            inner("c3", self.c2, self.c3, ConvKind::Regular),
            proj("c4", self.c4),
            inner("dic1", self.c4, self.dic1, dil1),
            inner("dic2", self.dic1, self.dic2, dil2),
            proj("c5", self.c5),
            inner("dec1", self.c5, self.dec1, deconv),
            inner("dec2", self.dec1, self.dec2, deconv),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.maps().contains(&0) {
            return Err(Error::invalid("Conv-M feature-map counts must be positive"));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("Conv-M kernel {} must be odd to preserve size", self.kernel)));
        }
        if self.dilation.contains(&0) {
            return Err(Error::invalid("dilation rates must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        for slot in self.slots() {
            if slot.groups == 0 || slot.cin % slot.groups != 0 || slot.cout % slot.groups != 0 {
                return Err(Error::Groups(format!(
                    "{}: {}→{} channels not divisible by {} groups",
                    slot.name, slot.cin, slot.cout, slot.groups
                )));
            }
        }
        Ok(())
    }
}

/// Side length of the receptive field for dilation factor `d`: `2^(d+1) − 1`.
pub fn receptive_field(d: u32) -> Result<u64> {
    if d < 1 {
        return Err(Error::invalid("dilation factor must be ≥ 1"));
    }
    Ok((1u64 << (d + 1)) - 1)
}

/// Dilation rate at which a 3×3 kernel spans `receptive_field(d)`:
/// `2·rate + 1 = 2^(d+1) − 1`, so `rate = 2^d − 1`.
pub fn dilation_rate_for(d: u32) -> Result<u64> {
    Ok((receptive_field(d)? - 1) / 2)
}

/// Branch outputs (after dropout) and their concatenation.
#[derive(Clone, Copy, Debug)]
pub struct ConvMOutput {
    pub output: Var,
    /// C3, DiC2 and DeC2 branch outputs.
    pub branches: [Var; 3],
}

pub(crate) fn forward<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    cfg: &ConvMConfig,
    x: Var,
    training: bool,
    rng: &mut R,
) -> Result<ConvMOutput> {
    let mut weights = [x; 9];
    for (w, name) in weights.iter_mut().zip(CONV_NAMES) {
        *w = bound.var(&format!("{prefix}.{name}"))?;
    }
    forward_with(g, &weights, cfg, x, training, rng)
}

/// Runs one module on `x` with the nine weights given in [`CONV_NAMES`] order.
pub fn forward_with<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    weights: &[Var; 9],
    cfg: &ConvMConfig,
    x: Var,
    training: bool,
    rng: &mut R,
) -> Result<ConvMOutput> {
    cfg.validate()?;
    let slots = cfg.slots();
    let mut branches = [x; 3];
    for (b, chain) in slots.chunks(3).enumerate() {
        let mut h = x;
        for (j, slot) in chain.iter().enumerate() {
            let w = weights[3 * b + j];
            if g.value(w).shape() != slot.weight_shape() {
                return Err(Error::shape(format!("{} weight {:?}, expected {:?}", slot.name, g.value(w).shape(), slot.weight_shape())));
            }
            h = match slot.kind {
                ConvKind::Projection => g.conv2d(h, w, Conv2dParams::default())?,
                ConvKind::Regular => g.conv2d(h, w, Conv2dParams { padding: slot.kernel / 2, groups: slot.groups, ..Default::default() })?,
                ConvKind::Dilated(d) => {
                    g.conv2d(h, w, Conv2dParams { padding: d * (slot.kernel / 2), dilation: d, groups: slot.groups, stride: 1 })?
                }
                ConvKind::Transposed => g.conv_transpose_cropped(h, w, 1, slot.groups)?,
            };
            h = g.relu(h)?;
        }
        branches[b] = g.dropout(h, cfg.dropout, training, rng)?;
    }
    let output = g.concat_channels(&branches)?;
    Ok(ConvMOutput { output, branches })
}
