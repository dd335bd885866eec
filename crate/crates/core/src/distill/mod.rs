//! Global-local knowledge distillation into a slimmer student encoder.

mod loss;
mod train;

pub use loss::{global_kd_loss, glkd_loss, local_kd_loss, soften, GlkdLoss, Softening};
pub use train::{distill, new_student, student_config, write_distill_log, DistillConfig, DistillEpoch};
