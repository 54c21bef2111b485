//! Projective camera model.

mod camera;
mod crop;
mod pose;
mod triangulate;

pub use camera::{compose_camera, decompose_camera, CameraDecomposition, CameraFile, CameraMatrix};
pub use crop::{adjust_for_crop, CropTransform};
pub use pose::{
    protocol_angles, sample_pose_protocol, Pose, ViewClass, DEFAULT_DETECTOR_PX, DEFAULT_FOCAL_LEN_MM,
    DEFAULT_PIXEL_PITCH_MM, DEFAULT_SPHERE_DIAMETER_MM, MISC_POSES,
};
pub use triangulate::{triangulate_origin, triangulation_system};
