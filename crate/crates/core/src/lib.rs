//! Fiducial-based calibration, vertebra localization and silhouette carving
//! for few-view intraoperative X-ray reconstruction.

pub mod calibration;
pub mod carve;
pub mod drr;
pub mod error;
pub mod geometry;
pub mod hash;
pub mod image;
pub mod localize;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Camera = geometry::CameraMatrix<f64>;
pub type Crop = geometry::CropTransform<f64>;
pub type Drr = drr::DrrImage<f64>;
pub type Prepared = drr::PreparedVolume<f64>;
pub type Labels = drr::LabelGrid<f64>;
pub type Grid = carve::OccupancyGrid;
pub type Window = localize::CropWindow<f64>;
