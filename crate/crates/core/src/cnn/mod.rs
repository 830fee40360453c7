//! A compact convolutional classifier with hand-written backpropagation.
//!
//! The network is generic over [`Real`] so the same code trains in `f32`
//! and is gradient-checked in `f64`. Training is single-threaded and fully
//! determined by the seed.

mod arch;
mod net;
mod real;
#[cfg(all(feature = "std", target_arch = "x86_64"))]
mod sgemm;
mod tensor;
mod train;

pub use arch::{Architecture, LayerSpec, Shape};
pub use net::{argmax, softmax, LossGrad, Network, Prediction, Workspace, LOG_FLOOR};
pub use real::Real;
pub use tensor::Tensor;
pub use train::{
    evaluate, train, train_with, Dataset, EpochRecord, Optimizer, TrainConfig, TrainingHistory,
};
