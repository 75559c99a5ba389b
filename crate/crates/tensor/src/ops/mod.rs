mod activation;
mod arith;
mod conv;
mod loss;
mod norm;
mod pool;
mod shape;

pub use activation::softmax_channels;
pub use conv::conv_out_len;
pub use norm::BatchStats;
pub use pool::{resize_bilinear, AvgPoolOptions};
