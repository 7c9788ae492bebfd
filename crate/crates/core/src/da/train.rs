//! Training loops, metrics history and evaluation.

use std::io::Write;

use super::config::{DAConfig, SolverConfig};
use super::data::{make_batch, Dataset, source_batch, stream_rng, DomainSampler, EpochSampler, SOURCE_STREAM};
use super::loss::{da_loss, LossComponents};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::network::ForwardOptions;
use crate::layers::{LayerKind, Model};
use crate::optim::{poly_lr, Sgd};
use crate::tensor::Scalar;

/// First dropout stream; step `i` uses stream `DROPOUT_STREAM + i`.
const DROPOUT_STREAM: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub ratio: f64,
    pub loss: LossComponents,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rows: Vec<MetricsRow>,
    pub warnings: Vec<String>,
}

pub const METRICS_HEADER: [&str; 10] = [
    "step",
    "lr",
    "ratio",
    "loss_total",
    "loss_ce",
    "loss_mmd_tap1",
    "loss_mmd_tap2",
    "loss_mmd_tap3",
    "loss_recon_d1",
    "loss_recon_d2",
];

impl History {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(METRICS_HEADER)?;
        let opt = |v: Option<&Option<f64>>| v.copied().flatten().map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let l = &r.loss;
            out.write_record([
                r.step.to_string(),
                r.lr.to_string(),
                r.ratio.to_string(),
                l.total.to_string(),
                l.ce.to_string(),
                opt(l.mmd.first()),
                opt(l.mmd.get(1)),
                opt(l.mmd.get(2)),
                opt(l.recon.first()),
                opt(l.recon.get(1)),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.rows.last().map_or(0, |r| r.epoch + 1)
    }

    /// Mean over the epoch's steps of the per-step mean across taps.
    pub fn epoch_mean_mmd(&self, epoch: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.epoch == epoch)
            .filter_map(|r| {
                let taps: Vec<f64> = r.loss.mmd.iter().flatten().copied().collect();
                (!taps.is_empty()).then(|| taps.iter().sum::<f64>() / taps.len() as f64)
            })
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub struct Trained<T> {
    pub model: Model<T>,
    pub history: History,
}

/// Removes a trailing classifier, attaches the label predictor and decoders
/// when missing, and freezes the configured layers. Idempotent.
pub fn prepare_da_model<T: Scalar>(model: &mut Model<T>, cfg: &DAConfig, classes: usize, seed: u64) -> Result<()> {
    cfg.validate()?;
    if matches!(model.spec().layers.last().map(|l| &l.kind), Some(LayerKind::Linear { .. })) {
        model.strip_classifier()?;
    }
    if model.architecture().head.is_none() {
        model.attach_da_heads(classes, cfg.head_hidden, cfg.head_lr_multiplier, seed)?;
    }
    if model.architecture().decoders.is_empty() && !cfg.no_recons {
        model.attach_decoders(cfg.head_lr_multiplier, seed)?;
    }
    for layer in cfg.frozen_layers(model.spec()) {
        model.set_layer_lr_mult(layer, 0.0)?;
    }
    Ok(())
}

fn steps_per_epoch(samples: usize, batch: usize) -> usize {
    samples.div_ceil(batch).max(1)
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged { step, loss: f64::NAN },
        e => e,
    }
}

/// Fine-tunes with the full objective. Frozen layers never move; the
/// returned model has its decoders removed.
pub fn train_da<T: Scalar>(
    mut model: Model<T>,
    source: &Dataset,
    target: &Dataset,
    cfg: &DAConfig,
    solver: &SolverConfig,
    mut on_step: impl FnMut(&MetricsRow),
) -> Result<Trained<T>> {
    solver.validate()?;
    let classes = source.classes().max(2);
    prepare_da_model(&mut model, cfg, classes, solver.seed)?;
    let mut sgd = Sgd::new(solver.sgd);
    let mut history = History::default();
    let epoch_len = steps_per_epoch(source.len() + target.len(), solver.batch);
    let mut domains = DomainSampler::new(source.len(), target.len(), solver.seed);
    let mut source_only = EpochSampler::new(source.len(), stream_rng(solver.seed, SOURCE_STREAM));
    for step in 0..solver.max_steps {
        let lr = poly_lr(solver.base_lr, step, solver.max_steps, solver.power)?;
        let ratio = if cfg.uses_target() {
            super::data::sampling_ratio(step, solver.max_steps, cfg.ratio_start, cfg.ratio_end)?
        } else {
            0.0
        };
        let batch = if cfg.uses_target() {
            make_batch::<T>(source, target, &mut domains, solver.batch, ratio)?
        } else {
            let (images, labels, rep) = source_batch::<T>(source, &mut source_only, solver.batch)?;
            super::data::DomainBatch { images, labels, source_count: solver.batch, target_count: 0, with_replacement: rep }
        };
        if batch.with_replacement && history.warnings.is_empty() {
            history.warnings.push(format!("step {step}: a pool is smaller than its batch share; sampled with replacement"));
        }
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let mut rng = stream_rng(solver.seed, DROPOUT_STREAM + step as u64);
        let loss = da_loss(&model, &mut g, &bound, &batch, cfg, true, &mut rng).map_err(|e| diverged(step, e))?;
        if !loss.components.total.is_finite() {
            return Err(Error::Diverged { step, loss: loss.components.total });
        }
        g.backward(loss.total).map_err(|e| diverged(step, e))?;
        let grads = model.params().collect_grads(&mut g, &bound);
        sgd.step(model.params_mut(), &grads, lr)?;
        let row = MetricsRow { step, epoch: step / epoch_len, lr, ratio, loss: loss.components };
        on_step(&row);
        history.rows.push(row);
    }
    model.strip_decoders();
    Ok(Trained { model, history })
}

/// Cross-entropy training on source batches only. With a prepared model and
/// the same solver this follows the same sample and dropout streams as
/// [`train_da`] with both alignment terms disabled.
pub fn train_supervised<T: Scalar>(
    mut model: Model<T>,
    source: &Dataset,
    solver: &SolverConfig,
    mut on_step: impl FnMut(&MetricsRow),
) -> Result<Trained<T>> {
    solver.validate()?;
    let mut sgd = Sgd::new(solver.sgd);
    let mut history = History::default();
    let epoch_len = steps_per_epoch(source.len(), solver.batch);
    let mut sampler = EpochSampler::new(source.len(), stream_rng(solver.seed, SOURCE_STREAM));
    for step in 0..solver.max_steps {
        let lr = poly_lr(solver.base_lr, step, solver.max_steps, solver.power)?;
        let (images, labels, rep) = source_batch::<T>(source, &mut sampler, solver.batch)?;
        if rep && history.warnings.is_empty() {
            history.warnings.push(format!("step {step}: source pool smaller than the batch; sampled with replacement"));
        }
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let mut rng = stream_rng(solver.seed, DROPOUT_STREAM + step as u64);
        let x = g.input(images);
        let out = model.forward(&mut g, &bound, x, ForwardOptions { training: true, decoders: false }, &mut rng).map_err(|e| diverged(step, e))?;
        let ce = g.softmax_cross_entropy(out.output, &labels)?;
        let value = g.scalar(ce).as_f64();
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        g.backward(ce).map_err(|e| diverged(step, e))?;
        let grads = model.params().collect_grads(&mut g, &bound);
        sgd.step(model.params_mut(), &grads, lr)?;
        let loss = LossComponents { total: value, ce: value, mmd: Vec::new(), sigma: Vec::new(), recon: Vec::new() };
        let row = MetricsRow { step, epoch: step / epoch_len, lr, ratio: 0.0, loss };
        on_step(&row);
        history.rows.push(row);
    }
    Ok(Trained { model, history })
}

/// Predicted class of every image, in evaluation mode.
pub fn predict<T: Scalar>(model: &Model<T>, data: &Dataset, batch: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let logits = model.predict(&data.gather::<T>(chunk)?)?;
        let [n, k] = logits.dims2("logits")?;
        for i in 0..n {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Top-1 accuracy over a labelled set.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let pred = predict(model, data, batch)?;
    let hits = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}
