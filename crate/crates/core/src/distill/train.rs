use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{glkd_loss, Softening};
use crate::encoder::{sparsify, EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::graph::{Path, SparsePath};
use crate::numerics::{cosine_lr, AdamW, AdamWConfig, ExprGraph, Scalar};
use crate::rng;
use crate::ssl::batches;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub softening: Softening,
    /// Reduction ratio of the view shown to both encoders.
    pub gamma: f64,
    pub student_layers: usize,
    pub student_heads: usize,
    pub lr: f64,
    pub adamw: AdamWConfig,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.6,
            temperature: 9.0,
            softening: Softening::Exp,
            gamma: 0.6,
            student_layers: 2,
            student_heads: 1,
            lr: 1e-3,
            adamw: AdamWConfig::default(),
            epochs: 50,
            warmup_epochs: 5,
            batch_size: 32,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("reduction ratio {} outside [0, 1)", self.gamma)));
        }
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(Error::Config("warmup must be shorter than training".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch size and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Student architecture: fewer layers, `student_heads` heads, no decoder,
/// everything else as in the teacher.
pub fn student_config(teacher: &EncoderConfig, config: &DistillConfig) -> Result<EncoderConfig> {
    if config.student_layers == 0 || config.student_layers >= teacher.layers {
        return Err(Error::Config(format!(
            "student needs fewer layers than the teacher ({} vs {})",
            config.student_layers, teacher.layers
        )));
    }
    let c = EncoderConfig {
        layers: config.student_layers,
        heads: config.student_heads,
        dec_layers: 0,
        ..teacher.clone()
    };
    c.validate()?;
    Ok(c)
}

/// Fresh student sharing the teacher's edge embedding table.
pub fn new_student<T: Scalar>(teacher: &EncoderModel<T>, config: &DistillConfig, seed: u64) -> Result<EncoderModel<T>> {
    let mut student = EncoderModel::new(student_config(teacher.config(), config)?, seed)?;
    let id = teacher.params().id("edge_embedding")?;
    student.import_edge_embeddings(teacher.params().get(id).clone())?;
    Ok(student)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillEpoch {
    pub epoch: usize,
    pub lglobal: f64,
    pub llocal: f64,
    pub glkd: f64,
    pub lr: f64,
}

/// Trains `student` to match the frozen `teacher` on shared sparse views.
pub fn distill<T: Scalar>(
    teacher: &EncoderModel<T>,
    student: &mut EncoderModel<T>,
    paths: &[Path],
    config: &DistillConfig,
    seed: u64,
) -> Result<Vec<DistillEpoch>> {
    config.validate()?;
    if paths.is_empty() {
        return Err(Error::invalid("distillation needs at least one path"));
    }
    let (tc, sc) = (teacher.config(), student.config());
    if tc.d_model != sc.d_model || tc.vocab != sc.vocab || tc.max_len != sc.max_len {
        return Err(Error::Config("teacher and student must share width, vocabulary and length".into()));
    }
    let per_epoch = batches(&(0..paths.len()).collect::<Vec<_>>(), config.batch_size).len() as u64;
    let total_steps = per_epoch * config.epochs as u64;
    let warmup_steps = per_epoch * config.warmup_epochs as u64;
    let mut shuffle_rng = rng::fork(seed, "distill-shuffle");
    let mut view_rng = rng::fork(seed, "distill-views");
    let mut opt = AdamW::new(config.adamw, student.params());
    let mut order: Vec<usize> = (0..paths.len()).collect();
    let mut step = 0u64;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 3];
        let mut n_batches = 0usize;
        let mut lr = 0.0;
        for batch in batches(&order, config.batch_size) {
            let views = batch
                .iter()
                .map(|&i| sparsify(&paths[i], config.gamma, &mut view_rng))
                .collect::<Result<Vec<SparsePath>>>()?;
            let mut g = ExprGraph::new();
            let tv = teacher.bind(&mut g, false);
            let sv = student.bind(&mut g, true);
            let te = tv.encode(&mut g, &views)?;
            let se = sv.encode(&mut g, &views)?;
            let l = glkd_loss(&mut g, &te, &se, config.alpha, config.temperature, config.softening)?;
            let grads = g.backward(l.glkd)?;
            for (s, v) in sums.iter_mut().zip([l.global, l.local, l.glkd]) {
                *s += g.value(v).item().as_f64();
            }
            n_batches += 1;
            lr = cosine_lr(step, warmup_steps, total_steps, config.lr)?;
            opt.step(student.params_mut(), &sv.grads(&g, &grads), lr)?;
            step += 1;
        }
        let k = n_batches as f64;
        history.push(DistillEpoch {
            epoch,
            lglobal: sums[0] / k,
            llocal: sums[1] / k,
            glkd: sums[2] / k,
            lr,
        });
    }
    Ok(history)
}

pub fn write_distill_log(w: &mut impl Write, history: &[DistillEpoch]) -> Result<()> {
    writeln!(w, "epoch,lglobal,llocal,glkd,lr")?;
    for e in history {
        writeln!(w, "{},{},{},{},{}", e.epoch, e.lglobal, e.llocal, e.glkd, e.lr)?;
    }
    Ok(())
}
