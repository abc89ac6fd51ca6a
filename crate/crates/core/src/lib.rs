//! Channel-chart-based CSI prediction for distributed massive MIMO.
//!
//! The crate covers the whole offline pipeline: synthetic CSI generation,
//! phase-invariant features, fused geodesic dissimilarities, a Siamese-trained
//! forward charting function, Delaunay-based CSI interpolation, the
//! phase-invariant multi-step Wiener predictor, and the sum-rate evaluation
//! harness that compares them over prediction horizons.

// `!(x > 0.0)` guards are written that way so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chart_metrics;
pub mod charting;
pub mod dataset;
pub mod dissimilarity;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod latent_predict;
pub mod phase_linalg;
pub mod pipeline;
pub mod predictors;
pub mod tensor;
pub mod wiener;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

pub use chart_metrics::MetricReport;
pub use charting::{ChartPosition, FcfModel, TrainConfig};
pub use dataset::{Dataset, DatasetMeta, ScenarioConfig, Snapshot};
pub use dissimilarity::DissimilarityMatrix;
pub use eval::{HorizonReport, NoiseModel};
pub use geometry::{Barycentric, Location, Triangulation};
pub use phase_linalg::AutocorrMatrix;
pub use predictors::{Method, Prediction};
pub use tensor::CsiTensor;
pub use wiener::{CorrelationModel, WienerBank, WienerFilter};
