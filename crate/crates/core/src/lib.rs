//! Input augmentation for medical image segmentation with prior maps derived
//! from a foundation segmentation model's mask proposals.
//!
//! The pipeline, in module order:
//!
//! 1. [`masks`]: mask sets (bitmaps + stability scores) and their JSON/RLE file format
//! 2. [`priors`]: segmentation and boundary prior maps
//! 3. [`fusion`]: the fused three-channel input image
//! 4. [`model`] and [`training`]: a pluggable model, losses, the weighted objective, Adam
//! 5. [`deployment`]: aug-only, ensemble and entropy-select inference
//! 6. [`metrics`]: Dice, F-score, AJI, object Dice
//! 7. [`data`]: dataset layouts, cropping, synthetic data
//! 8. [`cli`]: the `samaug` command
//!
//! The `book/` directory holds a longer guide; its code listings run as doctests.

pub mod cli;
pub mod data;
pub mod deployment;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod priors;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/priors.md")]
    mod priors {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/deployment.md")]
    mod deployment {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
