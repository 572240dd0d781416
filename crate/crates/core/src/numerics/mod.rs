//! Dense linear algebra and the neural-network substrate.

pub mod linalg;
pub mod nn;
pub mod tensor;

pub use linalg::{sym_eig, EigenResult, SymmetricMatrix};
pub use nn::{
    batch_cross_entropy, nn_backward, nn_forward, sgd_step, softmax, softmax_cross_entropy,
    Activation, Backward, Conv2d, Dense, Layer, LayerStack, Tape,
};
pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor};
