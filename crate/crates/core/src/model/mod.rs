//! The segmentation network: shared encoder with cross-level attention
//! fusion, full- and half-scale decoders, the fused decoder and the
//! reconstruction generators.

mod cfa;
mod dcf;
mod decoder;
mod encoder;
mod generator;
mod net;
mod res2net;

pub use cfa::{Cfa, CfaOutput};
pub use dcf::{BasicFusion, Dcf, DcfOutput, Fusion, FusionKind};
pub use decoder::{Decoder, DecoderState, Scale, SegOutput, NUM_CLASSES};
pub use encoder::{level_size, Backbone, Encoder, FeaturePyramid};
pub use generator::Generator;
pub use net::{DecSegNet, DualOutput, ModelConfig};
pub use res2net::{torch_key_to_local, Res2Net50, RES2NET50_CHANNELS};
