//! On-disk datasets: one TDF file per image plus `manifest.csv`
//! (`path,label,domain`) and a `normalization.json` sidecar holding the
//! per-channel statistics of the source domain.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use convm::da::Dataset;
use convm::io::tdf::{self, TdfTensor};
use convm::synth::{channel_stats, generate, normalize};
use convm::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::DataConfig;

pub const MANIFEST: &str = "manifest.csv";
pub const STATS: &str = "normalization.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: usize,
    pub domain: Domain,
}

/// Per-channel mean and standard deviation of the source domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn of(source: &Dataset) -> Self {
        let (mean, std) = channel_stats(source).into_iter().unzip();
        Normalization { mean, std }
    }

    pub fn apply(&self, data: &mut Dataset) {
        let stats: Vec<(f64, f64)> = self.mean.iter().copied().zip(self.std.iter().copied()).collect();
        normalize(data, &stats);
    }
}

/// Both domains, normalized with the source statistics.
pub struct Domains {
    pub source: Dataset,
    pub target: Dataset,
    pub normalization: Normalization,
}

impl Domains {
    pub fn classes(&self) -> usize {
        self.source.classes().max(self.target.classes())
    }

    /// `(train, test)` where every `holdout`-th image of each class is held out.
    pub fn source_split(&self, holdout: usize) -> (Dataset, Dataset) {
        let mut seen = vec![0usize; self.source.classes()];
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &label) in self.source.labels.iter().enumerate() {
            if seen[label] % holdout == holdout - 1 {
                test.push(i);
            } else {
                train.push(i);
            }
            seen[label] += 1;
        }
        (self.source.subset(&train), self.source.subset(&test))
    }
}

pub fn write_manifest(dir: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(MANIFEST))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST);
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().collect::<std::result::Result<_, _>>().with_context(|| format!("parsing {}", path.display()))
}

/// Writes both domains as raw (unnormalized) images.
pub fn write_dataset(dir: &Path, source: &Dataset, target: &Dataset) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::with_capacity(source.len() + target.len());
    for (domain, data) in [(Domain::Source, source), (Domain::Target, target)] {
        fs::create_dir_all(dir.join(domain.name()))?;
        let [c, h, w] = data.shape;
        for i in 0..data.len() {
            let rel = format!("{}/{i:05}.tdf", domain.name());
            let t = Tensor::from_vec(&[c, h, w], data.image(i).to_vec())?;
            tdf::write_file(dir.join(&rel), &TdfTensor::from_tensor(&t))?;
            rows.push(ManifestRow { path: rel, label: data.labels[i], domain });
        }
    }
    write_manifest(dir, &rows)?;
    write_stats(dir, &Normalization::of(source))?;
    Ok(rows)
}

pub fn write_stats(dir: &Path, n: &Normalization) -> Result<()> {
    fs::write(dir.join(STATS), serde_json::to_string_pretty(n)? + "\n")?;
    Ok(())
}

/// Loads the raw images of one domain in manifest order.
pub fn read_domain(dir: &Path, rows: &[ManifestRow], domain: Domain) -> Result<Dataset> {
    let mut shape: Option<[usize; 3]> = None;
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for row in rows.iter().filter(|r| r.domain == domain) {
        let path = dir.join(&row.path);
        let t: Tensor<f32> = tdf::read_file(&path)?.to_tensor().with_context(|| format!("decoding {}", path.display()))?;
        let s: [usize; 3] = t.shape().try_into().with_context(|| format!("{} is not a [c, h, w] image", path.display()))?;
        match shape {
            None => shape = Some(s),
            Some(prev) if prev != s => bail!("{} has shape {s:?}, expected {prev:?}", path.display()),
            _ => {}
        }
        images.extend_from_slice(t.data());
        labels.push(row.label);
    }
    let Some(shape) = shape else { bail!("no {} images in {}", domain.name(), dir.display()) };
    Ok(Dataset::new(shape, images, labels)?)
}

/// Reads a dataset directory and normalizes both domains.
pub fn load_dir(dir: &Path) -> Result<Domains> {
    let rows = read_manifest(dir)?;
    let mut source = read_domain(dir, &rows, Domain::Source)?;
    let mut target = read_domain(dir, &rows, Domain::Target)?;
    let stats_path = dir.join(STATS);
    let normalization = match fs::read_to_string(&stats_path) {
        Ok(text) => serde_json::from_str(&text).with_context(|| format!("parsing {}", stats_path.display()))?,
        Err(_) => Normalization::of(&source),
    };
    normalization.apply(&mut source);
    normalization.apply(&mut target);
    Ok(Domains { source, target, normalization })
}

/// Loads `cfg.dir`, or generates the synthetic benchmark in memory.
pub fn load(cfg: &DataConfig) -> Result<Domains> {
    if let Some(dir) = &cfg.dir {
        return load_dir(dir);
    }
    let (mut source, mut target) = generate(&cfg.synth)?;
    let normalization = Normalization::of(&source);
    normalization.apply(&mut source);
    normalization.apply(&mut target);
    Ok(Domains { source, target, normalization })
}

/// Converts `src/<class>/*.png` into TDF images of `size × size`, appending
/// to the manifest in `out`. Classes are numbered in sorted directory order.
pub fn import_images(src: &Path, domain: Domain, out: &Path, size: u32) -> Result<usize> {
    let mut classes: Vec<PathBuf> = fs::read_dir(src)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    classes.sort();
    if classes.is_empty() {
        bail!("{} has no class subdirectories", src.display());
    }
    fs::create_dir_all(out.join(domain.name()))?;
    let mut rows = if out.join(MANIFEST).exists() { read_manifest(out)? } else { Vec::new() };
    rows.retain(|r| r.domain != domain);
    let mut added = 0;
    for (label, class_dir) in classes.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(class_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for file in files {
            let img = image::open(&file).with_context(|| format!("decoding {}", file.display()))?;
            let rgb = img.resize_exact(size, size, image::imageops::FilterType::Triangle).to_rgb8();
            let plane = (size * size) as usize;
            let mut data = vec![0f32; 3 * plane];
            for (i, px) in rgb.pixels().enumerate() {
                for ch in 0..3 {
                    data[ch * plane + i] = px[ch] as f32 / 255.0;
                }
            }
            let rel = format!("{}/{added:05}.tdf", domain.name());
            let t = Tensor::from_vec(&[3, size as usize, size as usize], data)?;
            tdf::write_file(out.join(&rel), &TdfTensor::from_tensor(&t))?;
            rows.push(ManifestRow { path: rel, label, domain });
            added += 1;
        }
    }
    write_manifest(out, &rows)?;
    if rows.iter().any(|r| r.domain == Domain::Source) {
        write_stats(out, &Normalization::of(&read_domain(out, &rows, Domain::Source)?))?;
    }
    Ok(added)
}
