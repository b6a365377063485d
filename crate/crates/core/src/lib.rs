//! Regularization of tensor distributions on coordinate charts with a
//! connection: geodesics, parallel transport, mollifier kernels, the
//! embedding into generalized fields and their Lie derivatives.

pub mod density;
pub mod distributions;
pub mod calculus;
pub mod embedding;
pub mod error;
pub mod fd;
pub mod fit;
pub mod geodesics;
pub mod geometry;
pub mod mollifiers;
pub mod ode;
pub mod quadrature;
pub mod samples;
pub mod tensor;
pub mod transport;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/geodesics.md")]
    mod geodesics {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/mollifiers.md")]
    mod mollifiers {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    mod distributions {}
    #[doc = include_str!("../../../book/src/embedding.md")]
    mod embedding {}
    #[doc = include_str!("../../../book/src/calculus.md")]
    mod calculus {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
