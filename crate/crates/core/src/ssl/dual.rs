use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RelationHead;
use crate::encoder::{load_checkpoint, save_checkpoint, sparsify, EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::graph::{Path, SparsePath};
use crate::numerics::{ParameterSet, Scalar};

/// Reduction ratios of the two views of each path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            gamma1: 0.4,
            gamma2: 0.8,
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        for g in [self.gamma1, self.gamma2] {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::Config(format!("reduction ratio {} outside [0, 1)", g)));
            }
        }
        if self.gamma1 == self.gamma2 {
            return Err(Error::Config("the two views need different reduction ratios".into()));
        }
        Ok(())
    }
}

/// Two independent sparsifications of `path`.
pub fn build_views<R: Rng + ?Sized>(path: &Path, views: &ViewConfig, rng: &mut R) -> Result<(SparsePath, SparsePath)> {
    views.validate()?;
    Ok((sparsify(path, views.gamma1, rng)?, sparsify(path, views.gamma2, rng)?))
}

/// Main encoder and its momentum-averaged auxiliary copy.
#[derive(Clone, Debug, PartialEq)]
pub struct DualEncoder<T> {
    pub main: EncoderModel<T>,
    pub aux: EncoderModel<T>,
    momentum: f64,
}

/// `aux ← m·aux + (1−m)·main`, elementwise over every parameter.
pub fn momentum_fold<T: Scalar>(aux: &mut ParameterSet<T>, main: &ParameterSet<T>, m: f64) -> Result<()> {
    if !aux.same_layout(main) {
        return Err(Error::shape("momentum_update", "main and auxiliary layouts differ"));
    }
    let (m, rest) = (T::lit(m), T::lit(1.0 - m));
    for ((_, a), (_, p)) in aux.iter_mut().zip(main.iter()) {
        for (x, &y) in a.data_mut().iter_mut().zip(p.data()) {
            *x = m * *x + rest * y;
        }
    }
    Ok(())
}

impl<T: Scalar> DualEncoder<T> {
    /// The auxiliary encoder starts as an exact copy of `main`.
    pub fn new(main: EncoderModel<T>, momentum: f64) -> Result<Self> {
        check_momentum(momentum)?;
        Ok(DualEncoder {
            aux: main.clone(),
            main,
            momentum,
        })
    }

    pub fn from_parts(main: EncoderModel<T>, aux: EncoderModel<T>, momentum: f64) -> Result<Self> {
        check_momentum(momentum)?;
        if main.config() != aux.config() || !main.params().same_layout(aux.params()) {
            return Err(Error::Config("main and auxiliary encoders differ in architecture".into()));
        }
        Ok(DualEncoder { main, aux, momentum })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn momentum_update(&mut self) -> Result<()> {
        momentum_fold(self.aux.params_mut(), self.main.params(), self.momentum)
    }
}

fn check_momentum(m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Config(format!("momentum {} outside [0, 1]", m)));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DualCheckpoint {
    encoder: EncoderConfig,
    momentum: f64,
    head_width: usize,
}

/// Writes both encoders and the relation head to one checkpoint.
pub fn save_pretrained<T: Scalar>(file: impl AsRef<FsPath>, dual: &DualEncoder<T>, head: &RelationHead<T>) -> Result<()> {
    let params = ParameterSet::merged([
        ("main.", dual.main.params()),
        ("aux.", dual.aux.params()),
        ("head.", head.params()),
    ])?;
    let config = DualCheckpoint {
        encoder: dual.main.config().clone(),
        momentum: dual.momentum,
        head_width: head.width(),
    };
    save_checkpoint(file, &config, &params)
}

pub fn load_pretrained<T: Scalar>(file: impl AsRef<FsPath>) -> Result<(DualEncoder<T>, RelationHead<T>)> {
    let (config, params): (DualCheckpoint, ParameterSet<T>) = load_checkpoint(file)?;
    let main = EncoderModel::from_params(config.encoder.clone(), params.with_prefix("main."))?;
    let aux = EncoderModel::from_params(config.encoder, params.with_prefix("aux."))?;
    let head = RelationHead::from_params(config.head_width, params.with_prefix("head."))?;
    Ok((DualEncoder::from_parts(main, aux, config.momentum)?, head))
}
