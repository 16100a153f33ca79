//! Configuration, sweeps and table output for the `headerr` binary.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod run;
pub mod sweep;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book {}
