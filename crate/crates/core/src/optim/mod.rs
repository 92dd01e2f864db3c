//! Scene initialization, per-group Adam and the training loop.

mod adam;
mod fit;
mod init;

pub use adam::{adam_step, AdamState, ParamGroupConfig};
pub use fit::{fit, fit_observed, parse_metrics_log, FitOutput, MetricsRecord, PoseWeighting, TrainConfig};
pub use init::{init_from_pointcloud, init_sphere, INIT_OPACITY};
