//! Low-light image enhancement for nighttime tracking pipelines.
//!
//! The enhancer works on the gray channel: color is converted to per-pixel
//! channel proportions, the gray image is brightened by a per-pixel gamma
//! curve, and color is restored afterwards. Three mechanisms shape the curve:
//!
//! * a **range mask** from a small CNN with symmetric skip concatenations,
//!   giving every pixel its own enhancement range,
//! * a **transformer parameter head** that reads a 32×32 downsample of the
//!   scene and produces the global curve constraint `alpha` and the
//!   truncation threshold `beta`,
//! * a **soft truncation** term that subtracts a cubic penalty from pixels
//!   darker than `beta`, so amplified sensor noise in dark regions is pushed
//!   back down.
//!
//! Training is unpaired: four non-reference losses (dark-area noise, spatial
//! consistency, exposure control, illumination smoothness) are optimized with
//! ADAM on a self-contained reverse-mode autodiff engine ([`tensor`]).
//!
//! The [`eval`] module provides PSNR/SSIM and a deterministic normalized
//! cross-correlation tracker under one-pass evaluation, so the enhancer's
//! effect on downstream tracking can be measured A/B.
//!
//! See the `examples/` directory for one runnable example per capability and
//! [`cli`] for the command-line surface.

pub mod cli;
pub mod enhancer;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod imgio;
pub mod losses;
pub mod tensor;
pub mod trainer;

pub use enhancer::{enhance, EnhanceConfig, EnhanceOutput, ModelWeights};
pub use error::{Error, Result};
pub use losses::{LossReport, LossWeights};
pub use tensor::{Tape, Tensor, Var};
pub use trainer::{train, TrainConfig};
