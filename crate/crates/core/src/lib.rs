//! Line detection with a Hough-transform layer embedded in a small
//! convolutional network.
//!
//! * [`tensor`]: dense arrays, convolution, ReLU, Gaussian blur and their gradients.
//! * [`fht`]: fast Hough transform over dyadic lines, its adjoint, and
//!   conversions between Hough cells and image lines.
//! * [`synthgen`]: seeded synthetic line dataset and its on-disk format.
//! * [`lnet`]: the two network variants, forward/backward passes, FLOP
//!   accounting and checkpoints.
//! * [`trainer`]: targets, weighted MSE, Adam and the training loop.
//! * [`detect`]: Hough-space peak picking, the classical baseline and
//!   network-based detection.
//! * [`eval`]: line distance, matching, precision/recall and AP.

pub mod detect;
pub mod error;
pub mod eval;
pub mod fht;
mod kernels;
pub mod lnet;
pub mod par;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use par::{configure_threads, Execution};
