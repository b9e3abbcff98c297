//! Edge-level differentially private node classification.
//!
//! Features are encoded by a public MLP, propagated over the private graph
//! with personalized-PageRank style operators, and fed to a linear model
//! trained by objective perturbation. The modules follow the pipeline order:
//! [`graph`], [`propagation`], [`sensitivity`], [`objective`],
//! [`calibration`], [`noise`], [`encoder`], [`trainer`], [`inference`].

pub mod artifact;
pub mod calibration;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod inference;
pub mod noise;
pub mod objective;
pub mod propagation;
pub mod sensitivity;
pub mod trainer;

pub use artifact::ModelArtifact;
pub use calibration::{calibrate, CalibrationResult, PrivacyBudget};
pub use error::{Error, Result};
pub use graph::{Graph, NormalizedAdjacency, Split, Topology};
pub use inference::{infer, micro_f1, InferenceConfig, InferenceMode};
pub use objective::{LossKind, LossSpec, ObjectiveContext};
pub use propagation::{PropagationConfig, Step};
pub use trainer::{train, TrainConfig};
