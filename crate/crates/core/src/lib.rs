//! Volumetric brain MRI inpainting toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] – dense tensors, a reverse-mode autodiff tape with the 3D
//!   primitives a U-Net needs, and the Adam optimizer.
//! * [`unet`] – the encoder/decoder network and its checkpoint format.
//! * [`volume`] – NIfTI-1 and raw sidecar I/O, center cropping and stitching.
//! * [`masks`] – healthy-tissue mask synthesis, mirror/rotate augmentation
//!   and voided-image construction.
//! * [`metrics`] – masked MAE + SSIM training loss, region-restricted
//!   evaluation and summary statistics.
//! * [`train`] – k-fold planning, the training loop, normalization and
//!   full-volume inference.

pub mod error;
pub mod masks;
pub mod metrics;
pub mod rng;
pub mod ssim;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod unet;
pub mod volume;

pub use error::{Error, Result};
pub use ssim::SsimParams;
pub use tensor::{Element, Tape, Tensor, TensorError, Var};
pub use unet::{UNetConfig, UNetModel};
pub use volume::{Domain, MaskRole, MaskVolume, Volume};
