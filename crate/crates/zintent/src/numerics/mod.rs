pub mod gradcheck;
mod matrix;
pub mod ops;
pub mod optim;

pub use matrix::Matrix;
#[cfg(test)]
pub(crate) use matrix::numeric_rank;
pub use ops::{
    cosine_similarity, dropout_backward, dropout_forward, l2_normalize, l2_normalize_rows,
    l2_normalize_rows_backward, linear_backward, linear_forward, matmul, mean_pool,
    mean_pool_backward, relu_backward, relu_forward, softmax, softmax_cross_entropy,
};
pub use optim::{AdamState, PlateauScheduler};
