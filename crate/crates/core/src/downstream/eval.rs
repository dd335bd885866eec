use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{metric_report, GbrConfig, GradientBoostedRegressor, MetricReport};
use crate::encoder::{sparsify, EncoderModel};
use crate::error::{Error, Result};
use crate::graph::{Path, PathDataset, PathRecord, SparsePath, Split};
use crate::numerics::{Scalar, Tensor};
use crate::rng;

/// Path representations of `paths`, `[K × d]`. With `gamma_eval` zero the
/// full paths are encoded and `seed` is unused.
pub fn embed_dataset<T: Scalar>(encoder: &EncoderModel<T>, paths: &[Path], gamma_eval: f64, seed: u64) -> Result<Tensor<T>> {
    if gamma_eval == 0.0 {
        return encoder.embed_paths(paths);
    }
    let mut r = rng::fork(seed, "eval-sparsify");
    let d = encoder.config().d_model;
    let mut data = Vec::with_capacity(paths.len() * d);
    for p in paths {
        let s: SparsePath = sparsify(p, gamma_eval, &mut r)?;
        data.extend_from_slice(encoder.encode(&s)?.pr.data());
    }
    Tensor::new([paths.len(), d], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TravelTime,
    Ranking,
}

impl Task {
    fn label(self, r: &PathRecord) -> Option<f64> {
        match self {
            Task::TravelTime => r.travel_time,
            Task::Ranking => r.rank,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::TravelTime => "travel_time",
            Task::Ranking => "ranking",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "travel_time" | "tte" => Ok(Task::TravelTime),
            "ranking" | "rank" => Ok(Task::Ranking),
            other => Err(Error::invalid(format!("unknown task `{}`", other))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub gbr: GbrConfig,
    pub gamma_eval: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub config: EvalConfig,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: MetricReport,
}

fn labelled(records: Vec<&PathRecord>, task: Task, split: Split) -> Result<(Vec<Path>, Vec<f64>)> {
    if records.len() < 2 {
        return Err(Error::MissingLabels(format!("{} split has {} paths", split, records.len())));
    }
    let mut paths = Vec::with_capacity(records.len());
    let mut y = Vec::with_capacity(records.len());
    for r in records {
        let v = task
            .label(r)
            .ok_or_else(|| Error::MissingLabels(format!("path {} has no {} label", r.id, task)))?;
        paths.push(r.path.clone());
        y.push(v);
    }
    Ok((paths, y))
}

fn features<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.to_f64_vec()
}

/// Embeds the train and test splits with the frozen encoder, fits a GBR on
/// the train split and scores the test split.
pub fn eval_task<T: Scalar>(
    encoder: &EncoderModel<T>,
    dataset: &PathDataset,
    task: Task,
    config: &EvalConfig,
    seed: u64,
) -> Result<TaskReport> {
    let (train_paths, y_train) = labelled(dataset.split(Split::Train), task, Split::Train)?;
    let (test_paths, y_test) = labelled(dataset.split(Split::Test), task, Split::Test)?;
    let d = encoder.config().d_model;
    let x_train = features(&embed_dataset(encoder, &train_paths, config.gamma_eval, rng::derive_seed(seed, "train"))?);
    let x_test = features(&embed_dataset(encoder, &test_paths, config.gamma_eval, rng::derive_seed(seed, "test"))?);
    let model = GradientBoostedRegressor::fit(&x_train, d, &y_train, config.gbr)?;
    let pred = model.predict_rows(&x_test, d);
    let metrics = metric_report(&y_test, &pred, task == Task::TravelTime)?;
    Ok(TaskReport {
        task,
        config: *config,
        seed,
        n_train: y_train.len(),
        n_test: y_test.len(),
        metrics,
    })
}

pub fn write_report(w: &mut impl Write, report: &TaskReport) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, report)?;
    writeln!(w)?;
    Ok(())
}
