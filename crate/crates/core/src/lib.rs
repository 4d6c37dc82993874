//! Alpha-Net style convolutional networks trained on a CPU.
//!
//! Three block structures (plain, residual, alpha) share one tensor core,
//! one trainer and one experiment harness so they can be compared cell by
//! cell. The guide in `book/` walks through each part; its code blocks are
//! compiled and run as doctests of this crate.
//!
//! ```
//! use alphanet::net::{NetOptions, NetworkSpec, Structure, Version};
//!
//! let spec = NetworkSpec::new(Version::V1, Structure::Alpha, 16, 10, 0, NetOptions::default()).unwrap();
//! assert_eq!(spec.weighted_layers, 8);
//! ```

pub mod data;
pub mod encode;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod net;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::PrngStream;
pub use tensor::{Precision, Scalar, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/tensors.md")]
    pub struct Tensors;
    #[doc = include_str!("../../../book/src/layers.md")]
    pub struct Layers;
    #[doc = include_str!("../../../book/src/losses.md")]
    pub struct Losses;
    #[doc = include_str!("../../../book/src/networks.md")]
    pub struct Networks;
    #[doc = include_str!("../../../book/src/inputs.md")]
    pub struct Inputs;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
    #[doc = include_str!("../../../book/src/verification.md")]
    pub struct Verification;
}
