//! Forward and backward passes for every layer the networks use.

mod matmul;

pub mod batchnorm;
pub mod conv;
pub mod head;
pub mod linear;
pub mod phase;
pub mod pool;

pub use batchnorm::{
    bn_backward, bn_forward_eval, bn_forward_train, bn_train_math, BatchNormParams, BnCache,
    BnGrads,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub use head::{
    global_avg_pool_backward, global_avg_pool_forward, relu_backward, relu_forward,
    softmax_cross_entropy_backward, softmax_cross_entropy_forward, CrossEntropy,
};
pub use linear::{linear_backward, linear_forward, LinearGrads, LinearParams};
pub use phase::{
    dilated_pooling_backward, dilated_pooling_forward, phase_decompose, phase_reassemble,
    PhaseGrids,
};
pub use pool::{pool2d_forward, pool_backward, window_pool_forward, PoolCache, PoolKind};
