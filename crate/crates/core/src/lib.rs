//! Semi-supervised binary segmentation with dual-scale consistency.
//!
//! A shared encoder feeds a full-resolution decoder and a half-resolution
//! decoder; their hidden features are fused level by level into a third
//! decoder whose output is the final prediction. Unlabelled images are used
//! through scale consistency (each scale learns from the other's hard
//! predictions), perturbation consistency under colour jitter, and
//! cross-reconstruction of clean and perturbed images from each other's
//! logits.
//!
//! ```no_run
//! use decseg::{fit, FitOptions, TrainConfig};
//!
//! let mut cfg = TrainConfig::default();
//! cfg.data_root = "data/synthetic".into();
//! let summary = fit(&cfg, &FitOptions::default())?;
//! println!("{}", summary.checkpoint.display());
//! # Ok::<(), decseg::Error>(())
//! ```

pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use decseg_tensor as tensor;
pub use decseg_tensor::{Array, Elem, Tape, Var};

pub use config::{Recipe, TrainConfig};
pub use data::{DatasetSpec, ImageBatch, LabelMap, Split};
pub use error::{Error, Result};
pub use eval::{eval_dataset, predict_file, Predictor};
pub use losses::LossReport;
pub use metrics::{ImageScores, MetricsReport};
pub use model::{DecSegNet, ModelConfig};
pub use train::{fit, poly_lr, FitOptions, FitSummary, Trainer};
