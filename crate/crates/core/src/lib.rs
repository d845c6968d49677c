//! End-to-end functional-connectivity classification with explanations.
//!
//! The pipeline: parcellated ROI time series are filtered by head-motion
//! (framewise displacement), converted to Fisher-z connectivity feature
//! vectors, reduced 6670 -> 1000 by SVM-RFE, classified by a stacked sparse
//! autoencoder fine-tuned with a softmax head, and then explained by seven
//! attribution methods whose rankings are benchmarked with remove-and-retrain
//! and aggregated into per-ROI importance reports. A planted-biomarker
//! synthetic generator provides the ground truth for validating every stage.

pub mod attribution;
pub mod chart;
pub mod connectome;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod linalg;
pub mod nn;
pub mod roar;
pub mod roi_report;
pub mod seed;
pub mod ssae;
pub mod svm_rfe;

pub use error::{Error, Result};
