//! Siamese group-convolution networks that regress representational
//! dissimilarity matrices (RDMs) from image pairs, together with the RSA
//! statistics used to score them.
//!
//! * [`tensor`], [`conv`], [`ops`], [`autodiff`], [`gradcheck`]: dense f32
//!   tensors, the layer kernels and a tape-based reverse-mode autodiff.
//! * [`model`]: `ModelSpec`, model construction and the weight-shared
//!   Siamese forward pass.
//! * [`train`]: loss, SGD with momentum, cyclical schedules, the LR range
//!   test and the frozen/unfrozen training loop.
//! * [`rsa`], [`baseline`]: RDMs, normalization, Spearman, noise ceilings,
//!   explained variance, and the layer-RDM regression baseline.
//! * [`data`], [`io`]: pair datasets, seeded batching and file formats.
//! * [`synthetic`]: seeded fixtures with a known ground-truth RDM.

pub mod autodiff;
pub mod baseline;
pub mod conv;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod ops;
pub mod rsa;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use baseline::{baseline_fit, BaselineFit};
pub use conv::ConvSpec;
pub use data::{batch_iter, make_pairs, Dataset, PairSample};
pub use error::{Error, FormatError, Result};
pub use gradcheck::grad_check;
pub use model::{BodyLayer, HeadSpec, ImportReport, Init, Model, ModelSpec, PoolSpec};
pub use rsa::{
    explained_variance, group_average, noise_ceiling_lower, noise_ceiling_upper, normalize_rdm, predict_rdm,
    spearman, EvalReport, Rdm, UpperTriangle,
};
pub use tensor::{Scalar, Tensor};
pub use train::{
    euclidean_loss, lr_find, train, train_with, triangular_lr, LrFindConfig, LrFindResult, Schedule, Sgd, Stage,
    TrainConfig, TrainHistory,
};
