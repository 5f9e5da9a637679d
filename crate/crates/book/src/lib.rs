//! The guide in `book/` compiled as doc-tests, one module per chapter, so
//! `cargo test --doc -p mtjlab-book` keeps every listing honest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/dynamics.md")]
pub mod dynamics {}
#[doc = include_str!("../../../book/src/mtj.md")]
pub mod mtj {}
#[doc = include_str!("../../../book/src/bitstreams.md")]
pub mod bitstreams {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/polar.md")]
pub mod polar {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
