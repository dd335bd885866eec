//! Relational-reasoning pretraining with a momentum-averaged auxiliary encoder.

mod dual;
mod head;
mod loss;
mod train;

pub use dual::{build_views, load_pretrained, momentum_fold, save_pretrained, DualEncoder, ViewConfig};
pub use head::{HeadVars, RelationHead};
pub use loss::{cross_network_loss, cross_view_loss, draw_negatives, PositivePairing, RelationLoss};
pub(crate) use train::batches;
pub use train::{
    batch_losses, pretrain, relation_accuracy, write_pretrain_log, BatchLosses, BoundDual, PretrainConfig,
    PretrainEpoch, PretrainStep,
};
