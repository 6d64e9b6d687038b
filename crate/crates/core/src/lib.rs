//! Triplet-network embeddings with an inductive conformal prediction (ICP)
//! assurance monitor for low-dimensional sensor classification.
//!
//! The pipeline is:
//!
//! 1. [`dataset`]: load and split labelled sensor rows into proper-training,
//!    calibration and test sets, with z-score normalization fitted on the
//!    proper-training part only.
//! 2. [`neural`] + [`training`]: a fully connected network trained either as
//!    the shared branch of a triplet network (hardest-positive / all
//!    hard-negative mining) or as a plain softmax classifier. Embeddings are
//!    the pre-activation output of the fourth layer.
//! 3. [`index`]: frozen proper-training embeddings in exact k-d trees plus
//!    class centroids.
//! 4. [`ncm`]: k-NN, 1-NN and nearest-centroid nonconformity measures.
//! 5. [`icp`]: calibration scores, empirical p-values, prediction sets and
//!    the monitor decision (no prediction / single prediction / reject).
//! 6. [`evaluation`]: silhouette, accuracy, calibration and efficiency
//!    curves, significance-level estimation and resource accounting.
//!
//! ```
//! use triplet_icp::dataset::{gen_blobs, split, BlobConfig};
//! use triplet_icp::icp::{calibrate, InclusionRule, Monitor};
//! use triplet_icp::index::EmbeddingIndex;
//! use triplet_icp::ncm::NcmKind;
//! use triplet_icp::training::{train_triplet, TrainConfig};
//!
//! let samples = gen_blobs(&BlobConfig {
//!     n_per_class: 30,
//!     num_classes: 2,
//!     dim: 4,
//!     separation: 10.0,
//!     spread: 0.5,
//!     seed: 1,
//! })
//! .unwrap();
//! let data = split(&samples, 0.1, 0.2, 7).unwrap().normalize();
//! let cfg = TrainConfig { epochs: 2, hidden: vec![16, 16, 16, 4], ..TrainConfig::default() };
//! let model = train_triplet(&data, &cfg).unwrap().model;
//! let index = EmbeddingIndex::build(&model, &data.proper_training).unwrap();
//! let ncm = NcmKind::NearestCentroid;
//! let scores = calibrate(&model, &index, ncm, &data.calibration).unwrap();
//! let monitor = Monitor::new(&model, &index, &scores, InclusionRule::AtLeast);
//! let decision = monitor.decide(&data.test[0].features, 0.05).unwrap();
//! println!("{:?}", decision.decision);
//! ```

pub mod artifact;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod icp;
pub mod index;
pub mod kdtree;
pub mod ncm;
pub mod neural;
pub mod training;

pub use error::{Error, Result};
