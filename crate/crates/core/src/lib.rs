//! Monocular ground-plane localization for a fixed camera.
//!
//! The crate calibrates a camera (intrinsics from planar-pattern
//! correspondences, extrinsics from field landmarks), maps detection
//! bounding boxes to ground-contact pixels with per-class linear regression,
//! and back-projects those pixels onto the field plane to obtain metric
//! positions and bearings. An evaluation harness and a deterministic
//! synthetic scene generator close the loop.

pub mod camera;
pub mod error;
pub mod eval;
pub mod extrinsics;
pub mod intrinsics;
pub mod io;
pub mod optim;
pub mod pipeline;
pub mod regression;
pub mod synth;

pub use camera::{
    back_project_to_plane, camera_center, euler_from_pose, pose_from_euler, project, undistort,
    CameraIntrinsics, CameraPose, Distortion, EulerAngles, PixelPoint, WorldPoint,
};
pub use error::{Error, Result};
