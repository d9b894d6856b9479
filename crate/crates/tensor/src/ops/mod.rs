pub mod channel;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

pub use channel::{gather_channels, scale_channels, scatter_add_channels};
pub use conv::{conv2d, conv_out_dim, Conv2dParams};
pub use elementwise::{add, flatten, mean, mul, relu, relu6, reshape, scale, sigmoid, sum};
pub use linear::linear;
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use norm::{batch_norm2d, RunningStats, BN_EPS, BN_MOMENTUM};
pub use pool::{adaptive_avg_pool_1x1, max_pool2d};
