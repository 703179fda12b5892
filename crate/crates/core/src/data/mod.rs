//! Datasets, caption vectors, the synthetic generator, and checkpoints.

mod caption;
mod checkpoint;
mod dataset;
mod synth;

pub use caption::{vectorize_caption, with_class, AttributeMask};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointFormat, CHECKPOINT_VERSION};
pub use dataset::{
    load_dataset, read_dataset, save_dataset, write_dataset, Dataset, DatasetHeader, Sample, DATASET_FORMAT_VERSION,
};
pub use synth::{generate_synthetic, Splits, SubgroupSpec, SynthSpec};
