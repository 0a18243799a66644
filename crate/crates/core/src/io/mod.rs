//! File formats: the binary tensor container, key=value manifests,
//! datasets, and checkpoints.

mod checkpoint;
mod dataset;
mod manifest;
mod tensor_file;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{load_dataset, save_dataset, Dataset, ShapeRecord};
pub use manifest::Manifest;
pub use tensor_file::{load_tensor, read_tensor_file, save_tensor, write_tensor_file, TENSOR_MAGIC};
