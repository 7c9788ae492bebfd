use rand::Rng;

use super::config::DAConfig;
use super::data::DomainBatch;
use super::mmd::median_bandwidth;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::network::ForwardOptions;
use crate::layers::Model;
use crate::params::Bound;
use crate::tensor::Scalar;

/// Scalar values of each objective term; `None` marks a term that was not
/// computed (ablated, no target rows, or a degenerate bandwidth).
#[derive(Clone, Debug, PartialEq)]
pub struct LossComponents {
    pub total: f64,
    pub ce: f64,
    pub mmd: Vec<Option<f64>>,
    /// Bandwidth used at each tap.
    pub sigma: Vec<Option<f64>>,
    pub recon: Vec<Option<f64>>,
}

pub struct DaLoss {
    pub total: Var,
    pub components: LossComponents,
}

/// `CE(source) + mmd_weight·Σ_taps MMD + recon_weight·mean_decoders MSE`.
///
/// Cross-entropy uses source rows only; reconstruction uses every row. Each
/// tap's bandwidth is the median pairwise distance of that batch's pooled
/// features and is held constant for differentiation.
pub fn da_loss<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bound: &Bound,
    batch: &DomainBatch<T>,
    cfg: &DAConfig,
    training: bool,
    rng: &mut R,
) -> Result<DaLoss> {
    da_loss_with_bandwidths(model, g, bound, batch, cfg, training, None, rng)
}

/// [`da_loss`] with each tap's bandwidth supplied instead of estimated.
#[allow(clippy::too_many_arguments)]
pub fn da_loss_with_bandwidths<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bound: &Bound,
    batch: &DomainBatch<T>,
    cfg: &DAConfig,
    training: bool,
    bandwidths: Option<&[f64]>,
    rng: &mut R,
) -> Result<DaLoss> {
    let (ns, nt) = (batch.source_count, batch.target_count);
    if ns == 0 {
        return Err(Error::invalid("batch has no source samples; cross-entropy is undefined"));
    }
    if model.architecture().head.is_none() {
        return Err(Error::invalid("attach the label predictor before computing the adaptation loss"));
    }
    let decoders = !cfg.no_recons;
    if decoders && model.architecture().decoders.is_empty() {
        return Err(Error::invalid("reconstruction requested but no decoders are attached"));
    }
    let taps = cfg.taps(model.spec())?;
    let input = g.input(batch.images.clone());
    let out = model.forward(g, bound, input, ForwardOptions { training, decoders }, rng)?;
    let logits = if nt > 0 { g.rows(out.output, 0, ns)? } else { out.output };
    let ce = g.softmax_cross_entropy(logits, &batch.labels)?;
    let mut terms = vec![(ce, 1.0)];
    if bandwidths.is_some_and(|b| b.len() != taps.len()) {
        return Err(Error::invalid(format!("{} bandwidths for {} taps", bandwidths.map_or(0, <[f64]>::len), taps.len())));
    }
    let mut mmd = vec![None; taps.len()];
    let mut sigmas = vec![None; taps.len()];
    if !cfg.no_gmmd && nt > 0 {
        for (i, &tap) in taps.iter().enumerate() {
            let f = g.flatten(out.layer(tap))?;
            let d = g.value(f).shape()[1];
            let sigma = match bandwidths {
                Some(b) => b[i],
                None => match median_bandwidth(g.value(f).data(), ns + nt, d) {
                    Ok(s) => s,
                    Err(_) => continue,
                },
            };
            let s = g.rows(f, 0, ns)?;
            let t = g.rows(f, ns, ns + nt)?;
            let m = g.mmd(s, t, sigma)?;
            mmd[i] = Some(g.scalar(m).as_f64());
            sigmas[i] = Some(sigma);
            terms.push((m, cfg.mmd_weight));
        }
    }
    let mut recon = vec![None; model.architecture().decoders.len()];
    if decoders {
        let w = cfg.recon_weight / out.reconstructions.len() as f64;
        for (slot, &r) in recon.iter_mut().zip(&out.reconstructions) {
            let e = g.mse(r, input)?;
            *slot = Some(g.scalar(e).as_f64());
            terms.push((e, w));
        }
    }
    let total = if terms.len() == 1 { ce } else { g.combine(&terms)? };
    let components = LossComponents { total: g.scalar(total).as_f64(), ce: g.scalar(ce).as_f64(), mmd, sigma: sigmas, recon };
    Ok(DaLoss { total, components })
}
