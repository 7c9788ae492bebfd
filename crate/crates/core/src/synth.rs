//! Seeded two-domain image benchmark: class-specific shapes on noisy
//! backgrounds, with the domain shift applied to the target only.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::da::data::{stream_rng, Dataset};
use crate::error::{Error, Result};

/// Number of distinct class shapes available.
pub const MAX_CLASSES: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shift {
    /// Rotates every colour around the grey axis.
    Hue,
    /// Overlays oriented stripes on the background.
    Texture,
    /// Widens rotation, scale and shear jitter.
    Affine,
}

impl FromStr for Shift {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hue" => Ok(Shift::Hue),
            "texture" => Ok(Shift::Texture),
            "affine" => Ok(Shift::Affine),
            other => Err(Error::Config(format!("unknown shift `{other}` (hue, texture, affine, none)"))),
        }
    }
}

impl fmt::Display for Shift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shift::Hue => "hue",
            Shift::Texture => "texture",
            Shift::Affine => "affine",
        })
    }
}

/// Parses `hue+affine`, `texture` or `none`.
pub fn parse_shifts(s: &str) -> Result<Vec<Shift>> {
    if s == "none" || s.is_empty() {
        return Ok(Vec::new());
    }
    let mut v = s.split('+').map(str::parse).collect::<Result<Vec<Shift>>>()?;
    v.sort();
    v.dedup();
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub shift: Vec<Shift>,
    pub seed: u64,
    /// Hue rotation of the target, degrees.
    pub hue_degrees: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { classes: 10, per_class: 200, size: 32, shift: vec![Shift::Hue, Shift::Texture, Shift::Affine], seed: 0, hue_degrees: 150.0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return Err(Error::Config(format!("classes must be in 2..={MAX_CLASSES}, got {}", self.classes)));
        }
        if self.per_class == 0 || self.size < 8 {
            return Err(Error::Config(format!("need per_class ≥ 1 and size ≥ 8, got {} and {}", self.per_class, self.size)));
        }
        Ok(())
    }
}

const SOURCE_STREAM: u64 = 11;
const TARGET_STREAM: u64 = 12;

/// Generates `(source, target)`, class-major, labels `0..classes`.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let source = domain(cfg, &[], &mut stream_rng(cfg.seed, SOURCE_STREAM))?;
    let target = domain(cfg, &cfg.shift, &mut stream_rng(cfg.seed, TARGET_STREAM))?;
    Ok((source, target))
}

fn domain(cfg: &SynthConfig, shift: &[Shift], rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let n = cfg.classes * cfg.per_class;
    let mut images = Vec::with_capacity(n * 3 * cfg.size * cfg.size);
    let mut labels = Vec::with_capacity(n);
    for class in 0..cfg.classes {
        for _ in 0..cfg.per_class {
            images.extend(render(class, cfg, shift, rng));
            labels.push(class);
        }
    }
    Dataset::new([3, cfg.size, cfg.size], images, labels)
}

/// Signed coverage of class `c` at shape-frame point `(u, v)`: positive inside.
fn shape_field(c: usize, u: f64, v: f64) -> f64 {
    let (au, av) = (u.abs(), v.abs());
    match c {
        0 => 1.0 - (u * u + v * v).sqrt(),
        1 => 0.8 - au.max(av),
        2 => (0.8 - v).min(v + 0.8 - 1.6 * au),
        3 => (0.28 - au).max(0.28 - av).min(0.9 - au.max(av)),
        4 => 0.25 - ((u * u + v * v).sqrt() - 0.7).abs(),
        5 => (0.22 - (av - 0.5).abs()).min(0.9 - au),
        6 => (0.22 - (au - 0.5).abs()).min(0.9 - av),
        7 => (0.22 - (u - v).abs() / 2f64.sqrt()).max(0.22 - (u + v).abs() / 2f64.sqrt()).min(0.85 - au.max(av)),
        8 => (0.22 - (v + 0.55).abs()).min(0.85 - au).max((0.22 - au).min(0.85 - v).min(v + 0.77)),
        9 => (1.0 - (u * u + v * v).sqrt()).min(-v),
        10 => (0.25 - (u + 0.55).abs()).max(0.25 - (v - 0.55).abs()).min(0.8 - au.max(av)),
        _ => 0.2 - (au.max(av) - 0.65).abs(),
    }
}

fn hue_matrix(degrees: f64) -> [[f64; 3]; 3] {
    let (s, c) = (degrees.to_radians().sin(), degrees.to_radians().cos());
    let k = (1.0 - c) / 3.0;
    let r = s / 3f64.sqrt();
    [[c + k, k - r, k + r], [k + r, c + k, k - r], [k - r, k + r, c + k]]
}

fn render(class: usize, cfg: &SynthConfig, shift: &[Shift], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let size = cfg.size;
    let affine = shift.contains(&Shift::Affine);
    let (rot_max, scale_lo, scale_hi, shear_max) = if affine { (25.0, 0.45, 0.8, 0.3) } else { (10.0, 0.55, 0.7, 0.0) };
    let angle = rng.random_range(-rot_max..=rot_max as f64).to_radians();
    let scale = rng.random_range(scale_lo..=scale_hi);
    let shear = if shear_max > 0.0 { rng.random_range(-shear_max..=shear_max) } else { 0.0 };
    let (cx, cy) = (rng.random_range(-0.15..=0.15), rng.random_range(-0.15..=0.15));
    // Warm foreground on a cool, darker background.
    let fg_hue = rng.random_range(-30.0..=40.0);
    let fg = rotate([0.95, 0.25, 0.1], fg_hue).map(|v| v * rng.random_range(0.8..=1.0));
    let bg_base = rotate([0.15, 0.25, 0.5], rng.random_range(-20.0..=20.0)).map(|v| v * rng.random_range(0.7..=1.1));
    let grad = [rng.random_range(-0.1..=0.1), rng.random_range(-0.1..=0.1)];
    let texture = shift.contains(&Shift::Texture).then(|| {
        let theta = rng.random_range(0.0..PI);
        let freq = rng.random_range(2.5..=5.0);
        (theta.cos() * freq * PI, theta.sin() * freq * PI, rng.random_range(0.0..2.0 * PI), rng.random_range(0.2..=0.35))
    });
    let hue = shift.contains(&Shift::Hue).then(|| hue_matrix(cfg.hue_degrees + rng.random_range(-15.0..=15.0)));
    let (sin, cos) = angle.sin_cos();
    let mut pixels = vec![[0f64; 3]; size * size];
    for (i, px) in pixels.iter_mut().enumerate() {
        let (row, col) = (i / size, i % size);
        let x = (col as f64 + 0.5) / size as f64 * 2.0 - 1.0;
        let y = (row as f64 + 0.5) / size as f64 * 2.0 - 1.0;
        let (dx, dy) = (x - cx, y - cy);
        let (rx, ry) = (cos * dx + sin * dy, -sin * dx + cos * dy);
        let (u, v) = ((rx - shear * ry) / scale, ry / scale);
        let inside = (shape_field(class, u, v) * size as f64 * scale / 2.0 + 0.5).clamp(0.0, 1.0);
        let mut bg = bg_base.map(|b| b + grad[0] * x + grad[1] * y);
        if let Some((fx, fy, phase, amp)) = texture {
            let t = amp * (fx * x + fy * y + phase).sin();
            bg = [bg[0] + t, bg[1] + t * 0.8, bg[2] + t * 0.6];
        }
        for ch in 0..3 {
            px[ch] = inside * fg[ch] + (1.0 - inside) * bg[ch];
        }
    }
    let mut out = vec![0f32; 3 * size * size];
    for (i, px) in pixels.iter().enumerate() {
        let px = match &hue {
            Some(m) => [0, 1, 2].map(|r| m[r][0] * px[0] + m[r][1] * px[1] + m[r][2] * px[2]),
            None => *px,
        };
        for ch in 0..3 {
            let noise: f64 = rng.random_range(-0.05..=0.05);
            out[ch * size * size + i] = (px[ch] + noise).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

fn rotate(rgb: [f64; 3], degrees: f64) -> [f64; 3] {
    let m = hue_matrix(degrees);
    [0, 1, 2].map(|r| (m[r][0] * rgb[0] + m[r][1] * rgb[1] + m[r][2] * rgb[2]).clamp(0.0, 1.0))
}

/// Per-channel mean and standard deviation over every pixel of `data`.
pub fn channel_stats(data: &Dataset) -> Vec<(f64, f64)> {
    let [c, h, w] = data.shape;
    let plane = h * w;
    (0..c)
        .map(|ch| {
            let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
            for i in 0..data.len() {
                for &v in &data.image(i)[ch * plane..(ch + 1) * plane] {
                    sum += v as f64;
                    sq += (v as f64) * (v as f64);
                    n += 1;
                }
            }
            let mean = sum / n as f64;
            (mean, (sq / n as f64 - mean * mean).max(0.0).sqrt().max(1e-6))
        })
        .collect()
}

/// Standardizes every channel in place with the given statistics.
pub fn normalize(data: &mut Dataset, stats: &[(f64, f64)]) {
    let plane = data.shape[1] * data.shape[2];
    let per = data.image_len();
    for img in data.images.chunks_mut(per) {
        for (ch, &(mean, std)) in stats.iter().enumerate() {
            for v in &mut img[ch * plane..(ch + 1) * plane] {
                *v = ((*v as f64 - mean) / std) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_cover_a_reasonable_area() {
        for c in 0..MAX_CLASSES {
            let n = 64;
            let inside = (0..n * n)
                .filter(|i| {
                    let u = (i % n) as f64 / n as f64 * 2.0 - 1.0;
                    let v = (i / n) as f64 / n as f64 * 2.0 - 1.0;
                    shape_field(c, u, v) > 0.0
                })
                .count();
            let frac = inside as f64 / (n * n) as f64;
            assert!((0.1..0.8).contains(&frac), "class {c} covers {frac}");
        }
    }

    #[test]
    fn hue_rotation_keeps_grey() {
        let m = hue_matrix(77.0);
        for row in m {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parses_shift_lists() {
        assert_eq!(parse_shifts("none").unwrap(), vec![]);
        assert_eq!(parse_shifts("affine+hue").unwrap(), vec![Shift::Hue, Shift::Affine]);
        assert!(parse_shifts("blur").is_err());
    }
}
