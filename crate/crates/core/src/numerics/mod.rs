//! Dense tensors and the layer zoo used by the regression network.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod sgd;
pub mod tensor;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport, LayerCheck, LossNetwork};
pub use layers::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool_backward, maxpool_forward,
    pooled_len, relu_backward, relu_forward, Hyper, LayerKind, LayerParams,
};
pub use loss::euclidean_loss;
pub use sgd::Sgd;
pub use tensor::{gemm, MatRef, Scalar, Tensor};
