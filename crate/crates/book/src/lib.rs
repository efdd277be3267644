//! Compiles the guide's code listings as doc-tests so they stay in sync with
//! the library. One module per chapter, which points a failure at its file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/masks.md")]
pub mod masks {}
#[doc = include_str!("../../../book/src/pruning.md")]
pub mod pruning {}
#[doc = include_str!("../../../book/src/synthesis.md")]
pub mod synthesis {}
#[doc = include_str!("../../../book/src/density.md")]
pub mod density {}
#[doc = include_str!("../../../book/src/priming.md")]
pub mod priming {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
