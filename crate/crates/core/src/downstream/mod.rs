//! Frozen-encoder evaluation: path embeddings, boosted regression trees and
//! error/rank metrics.

mod eval;
mod gbr;
mod metrics;

pub use eval::{embed_dataset, eval_task, write_report, EvalConfig, Task, TaskReport};
pub use gbr::{GbrConfig, GradientBoostedRegressor, Node};
pub use metrics::{average_ranks, kendall_tau, mae, mape, mare, metric_report, spearman_rho, MetricReport};
