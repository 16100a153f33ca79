//! Heading-error simulator for continuously pumped, RF-driven alkali-metal
//! scalar magnetometers.
//!
//! The pipeline runs
//! [`spin`] -> [`model`] -> [`reduction`] -> [`response`] -> [`analysis`],
//! with [`oracle`] as an independent brute-force check and [`validation`]
//! collecting the invariant suite.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod error;
pub mod spin;
pub mod model;
pub mod superop;
pub mod reduction;
pub mod response;
pub mod analysis;
pub mod oracle;
pub mod validation;

pub use error::{Error, Result};

// The guide's snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/basis.md")]
    mod basis {}
    #[doc = include_str!("../../../book/src/master-equation.md")]
    mod master_equation {}
    #[doc = include_str!("../../../book/src/elimination.md")]
    mod elimination {}
    #[doc = include_str!("../../../book/src/response.md")]
    mod response {}
    #[doc = include_str!("../../../book/src/heading-error.md")]
    mod heading_error {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/checks.md")]
    mod checks {}
}
