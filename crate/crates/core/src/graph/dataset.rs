use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::Path;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{}`", other))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub id: u64,
    pub path: Path,
    /// Travel time in seconds.
    pub travel_time: Option<f64>,
    /// Ranking score in [0, 1].
    pub rank: Option<f64>,
    pub split: Option<Split>,
}

impl PathRecord {
    pub fn unlabeled(id: u64, path: Path) -> Self {
        PathRecord {
            id,
            path,
            travel_time: None,
            rank: None,
            split: None,
        }
    }
}

/// Paths with optional labels and split tags. Ids are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathDataset {
    records: Vec<PathRecord>,
}

impl PathDataset {
    pub fn new(records: Vec<PathRecord>) -> Result<Self> {
        let mut ds = PathDataset::default();
        for r in records {
            ds.push(r)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, record: PathRecord) -> Result<()> {
        check_labels(&record)?;
        if self.records.iter().any(|r| r.id == record.id) {
            return Err(Error::invalid(format!("duplicate path id {}", record.id)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[PathRecord] {
        &self.records
    }

    pub fn records_mut(&mut self) -> &mut [PathRecord] {
        &mut self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.records.iter().map(|r| &r.path)
    }

    pub fn max_path_len(&self) -> usize {
        self.paths().map(Path::len).max().unwrap_or(0)
    }

    /// Records tagged with `split`, in dataset order.
    pub fn split(&self, split: Split) -> Vec<&PathRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }

    /// Tags records train/val/test by a seeded shuffle.
    pub fn assign_splits(&mut self, train_frac: f64, val_frac: f64, seed: u64) -> Result<()> {
        if !(0.0..=1.0).contains(&train_frac)
            || !(0.0..=1.0).contains(&val_frac)
            || train_frac + val_frac > 1.0
        {
            return Err(Error::invalid("split fractions must lie in [0,1] and sum to at most 1"));
        }
        let n = self.records.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::fork(seed, "splits"));
        let n_train = (train_frac * n as f64).round() as usize;
        let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train);
        for (rank, &i) in order.iter().enumerate() {
            self.records[i].split = Some(if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
        Ok(())
    }
}

pub(crate) fn check_labels(r: &PathRecord) -> Result<()> {
    if let Some(s) = r.rank {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid(format!("ranking score {} of path {} outside [0,1]", s, r.id)));
        }
    }
    if let Some(t) = r.travel_time {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::invalid(format!("travel time {} of path {} is invalid", t, r.id)));
        }
    }
    Ok(())
}
