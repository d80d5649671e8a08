//! Differentiable emission-absorption rendering of implicit radiance fields
//! conditioned on warp-conditioned ray embeddings.

pub mod data;
pub mod diff;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod raster;
pub mod renderer;
pub mod training;
pub mod wcr;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/geometry.md")]
    struct Geometry;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    struct Autodiff;
    #[doc = include_str!("../../../book/src/fields.md")]
    struct Fields;
    #[doc = include_str!("../../../book/src/embedding.md")]
    struct Embedding;
    #[doc = include_str!("../../../book/src/rendering.md")]
    struct Rendering;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
