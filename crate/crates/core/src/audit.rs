//! Closed-form parameter counting, independent of tensor allocation.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::spec::{LayerKind, NetworkSpec};
use crate::layers::ConvMConfig;

/// Per-layer counts of the reference network, by layer number.
pub const REFERENCE_COUNTS: [(usize, u64); 9] = [
    (2, 9_408),
    (4, 51_712),
    (6, 217_088),
    (7, 268_288),
    (9, 591_872),
    (10, 681_984),
    (12, 783_360),
    (13, 826_368),
    (15, 688_000),
];

pub const REFERENCE_TOTAL: u64 = 4_118_080;

fn grouped(cin: usize, cout: usize, k: usize, g: usize) -> Result<u64> {
    let full = (cin * cout * k * k) as u64;
    if g == 0 || full % g as u64 != 0 {
        return Err(Error::Groups(format!("{cin}·{cout}·{k}² is not divisible by g={g}")));
    }
    Ok(full / g as u64)
}

fn branch(cfg: &ConvMConfig, maps: [usize; 3]) -> Result<u64> {
    let [a, b, c] = maps;
    Ok((cfg.n_in * a) as u64 + grouped(a, b, cfg.kernel, cfg.groups)? + grouped(b, c, cfg.kernel, cfg.groups)?)
}

/// Regular branch: `N_P·N_C1 + N_C1·N_C2·k²/g + N_C2·N_C3·k²/g`.
pub fn count_branch1(cfg: &ConvMConfig) -> Result<u64> {
    branch(cfg, [cfg.c1, cfg.c2, cfg.c3])
}

/// Dilated branch; the dilation rate does not enter the count.
pub fn count_branch2(cfg: &ConvMConfig) -> Result<u64> {
    branch(cfg, [cfg.c4, cfg.dic1, cfg.dic2])
}

/// Transposed branch; the crop does not enter the count.
pub fn count_branch3(cfg: &ConvMConfig) -> Result<u64> {
    branch(cfg, [cfg.c5, cfg.dec1, cfg.dec2])
}

pub fn count_conv_m(cfg: &ConvMConfig) -> Result<u64> {
    Ok(count_branch1(cfg)? + count_branch2(cfg)? + count_branch3(cfg)?)
}

/// The unique group count `g` for which the module has `target` weights.
pub fn solve_groups(cfg: &ConvMConfig, target: u64) -> Result<usize> {
    let none = || Error::NoGroupSolution { target };
    let projection = (cfg.n_in * (cfg.c1 + cfg.c4 + cfg.c5)) as u64;
    let k2 = (cfg.kernel * cfg.kernel) as u64;
    let inner = k2
        * [(cfg.c1, cfg.c2), (cfg.c2, cfg.c3), (cfg.c4, cfg.dic1), (cfg.dic1, cfg.dic2), (cfg.c5, cfg.dec1), (cfg.dec1, cfg.dec2)]
            .iter()
            .map(|&(a, b)| (a * b) as u64)
            .sum::<u64>();
    let rest = target.checked_sub(projection).filter(|&r| r > 0).ok_or_else(none)?;
    if inner % rest != 0 {
        return Err(none());
    }
    let g = usize::try_from(inner / rest).map_err(|_| none())?;
    let trial = ConvMConfig { groups: g, ..cfg.clone() };
    match count_conv_m(&trial) {
        Ok(n) if n == target => Ok(g),
        _ => Err(none()),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditRow {
    pub layer: usize,
    pub kind: &'static str,
    pub computed: u64,
    pub reference: Option<u64>,
    pub diff: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub rows: Vec<AuditRow>,
    pub total: u64,
    /// Whether any reference values were supplied.
    pub has_reference: bool,
}

impl ParamReport {
    /// True when every compared layer matches its reference.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.diff.is_none_or(|d| d == 0))
    }

    pub fn computed(&self, layer: usize) -> Option<u64> {
        self.rows.iter().find(|r| r.layer == layer).map(|r| r.computed)
    }

    pub fn nonzero_diffs(&self) -> Vec<usize> {
        self.rows.iter().filter(|r| r.diff.is_some_and(|d| d != 0)).map(|r| r.layer).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["layer", "kind", "computed", "reference", "diff"])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.rows {
            out.write_record([
                r.layer.to_string(),
                r.kind.to_string(),
                r.computed.to_string(),
                opt(r.reference.map(|v| v.to_string())),
                opt(r.diff.map(|v| v.to_string())),
            ])?;
        }
        out.write_record(["total".into(), String::new(), self.total.to_string(), String::new(), String::new()])?;
        out.flush()?;
        Ok(())
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let group = |n: u64| {
            let s = n.to_string();
            let mut out = String::new();
            for (i, c) in s.chars().enumerate() {
                if i > 0 && (s.len() - i) % 3 == 0 {
                    out.push(',');
                }
                out.push(c);
            }
            out
        };
        if self.has_reference {
            writeln!(f, "{:>5}  {:<12} {:>12} {:>12} {:>8}", "layer", "kind", "computed", "reference", "diff")?;
        } else {
            writeln!(f, "{:>5}  {:<12} {:>12}", "layer", "kind", "computed")?;
        }
        for r in &self.rows {
            write!(f, "{:>5}  {:<12} {:>12}", r.layer, r.kind, group(r.computed))?;
            if self.has_reference {
                let reference = r.reference.map(group).unwrap_or_default();
                let diff = r.diff.map(|d| d.to_string()).unwrap_or_default();
                write!(f, " {reference:>12} {diff:>8}")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "{:>5}  {:<12} {:>12}", "", "total", group(self.total))
    }
}

/// Weight count of every layer, in order.
pub fn count_network(spec: &NetworkSpec) -> Result<ParamReport> {
    audit(spec, &[])
}

/// Counts `spec` and compares against `reference` (layer number, count).
pub fn audit(spec: &NetworkSpec, reference: &[(usize, u64)]) -> Result<ParamReport> {
    let shapes = spec.shapes()?;
    for &(layer, _) in reference {
        if spec.layer(layer).is_none() {
            return Err(Error::invalid(format!("reference names layer {layer}, the spec has {}", spec.layers.len())));
        }
    }
    let mut rows = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let index = i + 1;
        let at = |e: Error| Error::Layer { index, message: e.to_string() };
        let computed = match &layer.kind {
            LayerKind::Input { .. } | LayerKind::MaxPool { .. } | LayerKind::AvgPool { .. } => 0,
            LayerKind::Conv { out_channels, kernel, .. } => grouped(shapes[i - 1].channels, *out_channels, *kernel, 1).map_err(at)?,
            LayerKind::ConvM(cfg) => count_conv_m(cfg).map_err(at)?,
            LayerKind::Linear { out_features } => {
                let s = shapes[i - 1];
                (s.channels * s.height * s.width * out_features) as u64
            }
        };
        let reference = reference.iter().find(|r| r.0 == index).map(|r| r.1);
        let diff = reference.map(|r| computed as i64 - r as i64);
        rows.push(AuditRow { layer: index, kind: layer.kind.name(), computed, reference, diff });
    }
    let total = rows.iter().map(|r| r.computed).sum();
    Ok(ParamReport { rows, total, has_reference: !reference.is_empty() })
}
