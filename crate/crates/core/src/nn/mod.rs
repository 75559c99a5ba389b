//! Parameter storage and the small set of layers the networks are built from.

mod layers;
mod params;
mod session;

pub use layers::{BatchNorm2d, Conv2d, ConvBnRelu, ConvTranspose2d};
pub use params::{Init, ParamId, ParamKind, ParamStore};
pub use session::Session;
