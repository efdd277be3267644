//! Desk-scale data priming for automatic checkout.
//!
//! The crate turns a small catalog of single-product exemplars into annotated
//! checkout scenes, generates density-map supervision for counting, and
//! selects reliable unlabeled checkout images by checking that a detector
//! and a counter agree on how many items an image holds.
//!
//! ```
//! use checkout_priming::density::{count_from_density, generate_density, KernelParams};
//!
//! let map = generate_density(&[(40.0, 40.0), (100.0, 60.0)], (128, 128), &KernelParams::default()).unwrap();
//! assert!((count_from_density(&map) - 2.0).abs() < 1e-9);
//! ```

pub mod catalog;
pub mod cli;
pub mod config;
pub mod density;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod mask;
pub mod mask_extraction;
pub mod metrics;
pub mod pose_pruning;
pub mod priming;
pub mod synthesis;

pub use catalog::{CategoryId, ExemplarImage, ViewId};
pub use density::DensityMap;
pub use error::{Error, Result};
pub use geometry::{AffinePose, BBox};
pub use mask::BinaryMask;
pub use metrics::ShoppingList;
pub use priming::{Counter, Detection, Detector};
pub use synthesis::{Difficulty, PrunedCatalog, SynthesizedScene};
