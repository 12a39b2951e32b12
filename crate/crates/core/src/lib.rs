//! Multi-manifold embedding learning for out-of-distribution detection.
//!
//! The crate trains a small projection network with joint hypersphere and
//! hyperbolic objectives, scores test samples with a prototype-aware
//! k-nearest-neighbor rule, supports test-time enrollment of OOD and
//! novel-class prototypes, and evaluates detection quality with FPR95/AUC.
//!
//! Modules:
//! - [`geometry`]: Poincaré ball / Klein model primitives
//! - [`autodiff`]: minimal reverse-mode tape over `f64` matrices
//! - [`losses`]: compactness, disparity, hyperbolic contrastive, and
//!   cross-entropy losses with analytic gradients
//! - [`network`]: the three-headed projection network and its SGD trainer
//! - [`scoring`]: reference index, PKNN/Mahalanobis scores, enrollment
//! - [`metrics`]: FPR95, AUC, histograms
//! - [`datagen`]: deterministic synthetic ID/OOD generators
//! - [`persist`]: binary embedding/checkpoint formats and text reports

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod persist;
pub mod scoring;

pub use error::{Error, Result};
pub use geometry::{Curvature, KleinVector, PoincareVector};
pub use losses::{LabeledEmbeddingBatch, LossReport, PoincareBatch, PrototypeSet};
