//! Experiment orchestration over the reconstruction pipeline: dataset
//! generation, view-count and view-combination ablations, the view-angle
//! sensitivity heatmap and calibration quality summaries.

pub mod bank;
pub mod dataset;
pub mod experiments;
pub mod heatmap;
pub mod plans;
pub mod qa;

pub use bank::ViewBank;
pub use dataset::{gen_dataset, DatasetOptions, Manifest};
pub use experiments::{ExperimentConfig, TrialRecord};
pub use heatmap::{HeatmapResult, HeatmapSpec};
pub use plans::ViewPlan;
