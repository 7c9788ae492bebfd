//! In-memory image sets, the target-ratio schedule and the batch sampler.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Images `[n, c, h, w]` stored as f32 with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[c, h, w]` of each image.
    pub shape: [usize; 3],
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(shape: [usize; 3], images: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        let per = shape.iter().product::<usize>();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::shape(format!("{} values for {} images of {shape:?}", images.len(), labels.len())));
        }
        Ok(Dataset { shape, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Stacks the chosen images into `[idx.len(), c, h, w]`.
    pub fn gather<T: Scalar>(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(idx.len() * self.image_len());
        for &i in idx {
            data.extend(self.image(i).iter().map(|&v| T::from_f64(v as f64)));
        }
        let [c, h, w] = self.shape;
        Tensor::from_vec(&[idx.len(), c, h, w], data)
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(idx.len() * self.image_len());
        for &i in idx {
            images.extend_from_slice(self.image(i));
        }
        Dataset { shape: self.shape, images, labels: self.labels_of(idx) }
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }
}

/// Target share at `step`: `(1 − t)·start + t·end` with `t = step/total`,
/// which returns `start` and `end` exactly at the endpoints.
pub fn sampling_ratio(step: usize, total_steps: usize, start: f64, end: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::invalid(format!("step {step} outside [0, {total_steps}]")));
    }
    let t = step as f64 / total_steps as f64;
    Ok((1.0 - t) * start + t * end)
}

/// Independent ChaCha stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws indices without replacement within an epoch, reshuffling when the
/// pool is exhausted.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(len: usize, rng: ChaCha8Rng) -> Self {
        EpochSampler { order: (0..len).collect(), cursor: len, epoch: 0, rng }
    }

    /// Completed reshuffles so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// `k` indices. When `k` exceeds the pool the draw uses replacement and
    /// the returned flag is set.
    pub fn draw(&mut self, k: usize) -> (Vec<usize>, bool) {
        let n = self.order.len();
        if n == 0 {
            return (Vec::new(), k > 0);
        }
        if k > n {
            return ((0..k).map(|_| self.rng.random_range(0..n)).collect(), true);
        }
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.cursor == n {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            let take = (k - out.len()).min(n - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        (out, false)
    }
}

/// Source rows first, then target rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBatch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub source_count: usize,
    pub target_count: usize,
    /// Set when a pool was smaller than its share and was sampled with
    /// replacement.
    pub with_replacement: bool,
}

impl<T> DomainBatch<T> {
    pub fn len(&self) -> usize {
        self.source_count + self.target_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 0 for source rows, 1 for target rows.
    pub fn domains(&self) -> Vec<u8> {
        let mut d = vec![0; self.source_count];
        d.resize(self.len(), 1);
        d
    }
}

/// Samplers for both domains, each on its own RNG stream.
#[derive(Clone, Debug)]
pub struct DomainSampler {
    pub source: EpochSampler,
    pub target: EpochSampler,
}

pub const SOURCE_STREAM: u64 = 1;
pub const TARGET_STREAM: u64 = 2;

impl DomainSampler {
    pub fn new(source_len: usize, target_len: usize, seed: u64) -> Self {
        DomainSampler {
            source: EpochSampler::new(source_len, stream_rng(seed, SOURCE_STREAM)),
            target: EpochSampler::new(target_len, stream_rng(seed, TARGET_STREAM)),
        }
    }
}

/// Splits `batch` into `round(ratio·batch)` target and the rest source rows.
pub fn make_batch<T: Scalar>(
    source: &Dataset,
    target: &Dataset,
    sampler: &mut DomainSampler,
    batch: usize,
    ratio: f64,
) -> Result<DomainBatch<T>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("target ratio {ratio} outside [0, 1]")));
    }
    if source.shape != target.shape {
        return Err(Error::shape(format!("domains disagree on image shape: {:?} vs {:?}", source.shape, target.shape)));
    }
    let nt = (ratio * batch as f64).round() as usize;
    let ns = batch - nt;
    if ns == 0 || source.is_empty() {
        return Err(Error::invalid("batch has no source samples"));
    }
    if nt > 0 && target.is_empty() {
        return Err(Error::invalid("target pool is empty"));
    }
    let (s_idx, s_rep) = sampler.source.draw(ns);
    let (t_idx, t_rep) = sampler.target.draw(nt);
    let s = source.gather::<T>(&s_idx)?;
    let images = if nt > 0 { Tensor::stack_outer(&[&s, &target.gather::<T>(&t_idx)?])? } else { s };
    Ok(DomainBatch {
        images,
        labels: source.labels_of(&s_idx),
        source_count: ns,
        target_count: nt,
        with_replacement: s_rep || t_rep,
    })
}

/// Batch of `batch` source images only, drawn from the source stream.
pub fn source_batch<T: Scalar>(source: &Dataset, sampler: &mut EpochSampler, batch: usize) -> Result<(Tensor<T>, Vec<usize>, bool)> {
    if source.is_empty() || batch == 0 {
        return Err(Error::invalid("empty source batch"));
    }
    let (idx, rep) = sampler.draw(batch);
    Ok((source.gather(&idx)?, source.labels_of(&idx), rep))
}
