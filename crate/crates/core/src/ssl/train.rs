use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{build_views, cross_network_loss, cross_view_loss, DualEncoder, HeadVars, PositivePairing, RelationHead};
use super::{RelationLoss, ViewConfig};
use crate::encoder::{EncoderModel, EncoderVars};
use crate::error::{Error, Result};
use crate::graph::{Path, SparsePath};
use crate::numerics::{cosine_lr, AdamW, AdamWConfig, ExprGraph, Scalar, Var};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub views: ViewConfig,
    pub lr: f64,
    pub adamw: AdamWConfig,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub pairing: PositivePairing,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            views: ViewConfig::default(),
            lr: 1e-3,
            adamw: AdamWConfig::default(),
            epochs: 400,
            warmup_epochs: 40,
            batch_size: 32,
            pairing: PositivePairing::SameView,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.views.validate()?;
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup ({} epochs) must be shorter than training ({} epochs)",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Mean losses over one epoch, and the learning rate of its last step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub lrec: f64,
    pub lcn: f64,
    pub lcv: f64,
    pub total: f64,
    pub lr: f64,
}

/// Passed to the observer after each optimizer step, before the momentum update.
pub struct PretrainStep<'a, T> {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub main: &'a EncoderModel<T>,
}

/// Both encoders and the head bound into one graph. The auxiliary encoder's
/// parameters are graph leaves, but its outputs are detached before use.
pub struct BoundDual {
    pub main: EncoderVars,
    pub aux: EncoderVars,
    pub head: HeadVars,
}

impl BoundDual {
    pub fn new<T: Scalar>(g: &mut ExprGraph<T>, dual: &DualEncoder<T>, head: &RelationHead<T>) -> Self {
        BoundDual {
            main: dual.main.bind(g, true),
            aux: dual.aux.bind(g, true),
            head: head.bind(g, true),
        }
    }
}

pub struct BatchLosses {
    pub rec: Var,
    pub cn: RelationLoss,
    pub cv: RelationLoss,
    pub total: Var,
}

/// Reconstruction (from view 1) plus both relation losses for one batch.
pub fn batch_losses<T: Scalar>(
    g: &mut ExprGraph<T>,
    bound: &BoundDual,
    paths: &[Path],
    views: &[(SparsePath, SparsePath)],
    pairing: PositivePairing,
    rng: &mut Rng,
) -> Result<BatchLosses> {
    let v1: Vec<SparsePath> = views.iter().map(|v| v.0.clone()).collect();
    let v2: Vec<SparsePath> = views.iter().map(|v| v.1.clone()).collect();
    let e1 = bound.main.encode(g, &v1)?;
    let e2 = bound.main.encode(g, &v2)?;
    let pr1 = e1.prs(g)?;
    let pr2 = e2.prs(g)?;
    let a1 = bound.aux.encode(g, &v1)?;
    let a2 = bound.aux.encode(g, &v2)?;
    let ap1 = a1.prs(g)?;
    let ap1 = g.detach(ap1);
    let ap2 = a2.prs(g)?;
    let ap2 = g.detach(ap2);

    let decoded = bound.main.decode(g, &e1, &v1)?;
    let rec = bound.main.reconstruction_loss(g, decoded, paths, &v1)?;
    let cn = cross_network_loss(g, &bound.head, [pr1, pr2], [ap1, ap2], pairing, rng)?;
    let cv = cross_view_loss(g, &bound.head, pr1, pr2, rng)?;
    let total = g.add(rec, cn.loss)?;
    let total = g.add(total, cv.loss)?;
    Ok(BatchLosses { rec, cn, cv, total })
}

/// Splits `0..n` (in `order`) into batches of `size`, folding a trailing
/// singleton into the previous batch so every batch has a negative.
pub(crate) fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// Joint pretraining: per batch, `L_rec + L_cn + L_cv` is minimised over
/// the main encoder and the head with AdamW, then the auxiliary encoder
/// takes a momentum step towards the main one.
pub fn pretrain<T: Scalar>(
    dual: &mut DualEncoder<T>,
    head: &mut RelationHead<T>,
    paths: &[Path],
    config: &PretrainConfig,
    seed: u64,
    mut observer: impl FnMut(&PretrainStep<'_, T>),
) -> Result<Vec<PretrainEpoch>> {
    config.validate()?;
    if paths.len() < 2 {
        return Err(Error::invalid("pretraining needs at least 2 paths"));
    }
    if head.width() != dual.main.config().d_model {
        return Err(Error::Config("relation head width differs from the encoder width".into()));
    }
    let per_epoch = batches(&(0..paths.len()).collect::<Vec<_>>(), config.batch_size).len() as u64;
    let total_steps = per_epoch * config.epochs as u64;
    let warmup_steps = per_epoch * config.warmup_epochs as u64;

    let mut shuffle_rng = rng::fork(seed, "shuffle");
    let mut view_rng = rng::fork(seed, "views");
    let mut neg_rng = rng::fork(seed, "negatives");
    let mut opt_main = AdamW::new(config.adamw, dual.main.params());
    let mut opt_head = AdamW::new(config.adamw, head.params());
    let mut order: Vec<usize> = (0..paths.len()).collect();
    let mut step = 0u64;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 4];
        let mut n_batches = 0usize;
        let mut lr = 0.0;
        for batch in batches(&order, config.batch_size) {
            let batch_paths: Vec<Path> = batch.iter().map(|&i| paths[i].clone()).collect();
            let views = batch_paths
                .iter()
                .map(|p| build_views(p, &config.views, &mut view_rng))
                .collect::<Result<Vec<_>>>()?;

            let mut g = ExprGraph::new();
            let bound = BoundDual::new(&mut g, dual, head);
            let losses = batch_losses(&mut g, &bound, &batch_paths, &views, config.pairing, &mut neg_rng)?;
            let grads = g.backward(losses.total)?;
            for (s, v) in sums
                .iter_mut()
                .zip([losses.rec, losses.cn.loss, losses.cv.loss, losses.total])
            {
                *s += g.value(v).item().as_f64();
            }
            n_batches += 1;

            lr = cosine_lr(step, warmup_steps, total_steps, config.lr)?;
            opt_main.step(dual.main.params_mut(), &bound.main.grads(&g, &grads), lr)?;
            opt_head.step(head.params_mut(), &bound.head.grads(&g, &grads), lr)?;
            step += 1;
            observer(&PretrainStep {
                epoch,
                step,
                lr,
                main: &dual.main,
            });
            dual.momentum_update()?;
        }
        let k = n_batches as f64;
        history.push(PretrainEpoch {
            epoch,
            lrec: sums[0] / k,
            lcn: sums[1] / k,
            lcv: sums[2] / k,
            total: sums[3] / k,
            lr,
        });
    }
    Ok(history)
}

/// Fraction of relation pairs (cross-network and cross-view, positives and
/// negatives) the head classifies correctly at threshold 0.5.
pub fn relation_accuracy<T: Scalar>(
    dual: &DualEncoder<T>,
    head: &RelationHead<T>,
    paths: &[Path],
    config: &PretrainConfig,
    seed: u64,
) -> Result<f64> {
    let mut view_rng = rng::fork(seed, "eval-views");
    let mut neg_rng = rng::fork(seed, "eval-negatives");
    let order: Vec<usize> = (0..paths.len()).collect();
    let (mut correct, mut total) = (0usize, 0usize);
    for batch in batches(&order, config.batch_size) {
        if batch.len() < 2 {
            continue;
        }
        let batch_paths: Vec<Path> = batch.iter().map(|&i| paths[i].clone()).collect();
        let views = batch_paths
            .iter()
            .map(|p| build_views(p, &config.views, &mut view_rng))
            .collect::<Result<Vec<_>>>()?;
        let mut g = ExprGraph::new();
        let bound = BoundDual::new(&mut g, dual, head);
        let losses = batch_losses(&mut g, &bound, &batch_paths, &views, config.pairing, &mut neg_rng)?;
        for rl in [&losses.cn, &losses.cv] {
            for (p, t) in g.value(rl.probs).data().iter().zip(&rl.targets) {
                correct += usize::from((p.as_f64() > 0.5) == (*t > 0.5));
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("accuracy needs at least 2 paths"));
    }
    Ok(correct as f64 / total as f64)
}

pub fn write_pretrain_log(w: &mut impl Write, history: &[PretrainEpoch]) -> Result<()> {
    writeln!(w, "epoch,lrec,lcn,lcv,total,lr")?;
    for e in history {
        writeln!(w, "{},{},{},{},{},{}", e.epoch, e.lrec, e.lcn, e.lcv, e.total, e.lr)?;
    }
    Ok(())
}
