//! Learned adversarial protection of images against guided diffusion models.
//!
//! A UNet protector maps an image `I` to a visually close twin `I'`, trained so
//! that a frozen diffusion oracle produces degraded outputs from `I'`. The crate
//! carries its own small autograd engine so the whole chain
//! `protector -> oracle -> losses` is differentiable on the CPU.

pub mod autograd;
pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod imagecore;
pub mod nn;
pub mod objective;
pub mod perceptual;
pub mod plot;
pub mod protector;
pub mod tensor;
pub mod training;

pub use autograd::{Graph, Var};
pub use diffusion::{OracleConfig, OracleMode, OracleWeights};
pub use error::{Error, Result};
pub use imagecore::{DatasetSplit, ImageTensor, MaskSpec};
pub use objective::{BalanceProfile, LossBreakdown, LossWeights};
pub use protector::{Protector, UNetSpec};
pub use tensor::{Real, Shape, Tensor};
pub use training::{LossVariant, TrainConfig, TrainReport};
