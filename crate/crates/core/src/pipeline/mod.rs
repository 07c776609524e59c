//! Training orchestration, compaction, FLOPs accounting, metrics and
//! checkpoints.

mod checkpoint;
mod compact;
mod config;
mod metrics;
mod report;
mod train;

pub use checkpoint::{
    decode_checkpoint, decode_header, encode_checkpoint, load_checkpoint, save_checkpoint, ArrayEntry,
    CheckpointHeader, FORMAT_VERSION, MAGIC,
};
pub use compact::{compact, count_flops};
pub use config::{KlMode, NetworkChoice, Precision, TrainConfig};
pub use metrics::{layer_sparsity, snr_summaries, LayerSparsity, MetricsLog, MetricsRow, SnrSummary, SNR_HIST_EDGES};
pub use report::SparsityReport;
pub use train::{
    build_network, kl_scales, network_inputs, test_error, train, train_with, TrainError, TrainOutcome,
};
