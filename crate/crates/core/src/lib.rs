//! Greedy layer-wise search over image augmentation policies.
//!
//! The crate is organised bottom-up:
//!
//! - [`image`]: the 8-bit RGB raster every transform acts on.
//! - [`ops`]: the twenty augmentation techniques and their magnitude scale.
//! - [`policy`]: policies, chains, the discrete search grid and the JSON schema.
//! - [`search`]: the greedy chain search, magnitude refinement and budget ledger.
//! - [`selection`]: power-law chain selection and dataset expansion.
//! - [`eval`]: a small softmax-regression child evaluator.

pub mod dataset;
pub mod eval;
pub mod image;
pub mod ops;
pub mod policy;
pub mod rng;
pub mod search;
pub mod selection;
pub mod synthetic;

pub use dataset::{Item, LabeledDataset, Provenance};
pub use image::Image;
pub use ops::{MagnitudeLevel, Technique};
pub use policy::{Policy, PolicyChain, Probability, ScoredChain};
