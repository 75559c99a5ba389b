//! Dataset layout, in-memory batches, resampling and colour perturbation.

mod batch;
mod dataset;
mod jitter;
mod synthetic;

pub use batch::{ImageBatch, LabelMap};
pub use dataset::{load_batch, load_image, load_mask, BatchSampler, Dataset, DatasetSpec, Split};
pub use jitter::{apply_jitter, JitterFactors, JitterStrength};
pub use synthetic::{make_synthetic_dataset, render_sample};
