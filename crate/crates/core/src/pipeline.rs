//! Detection to field position: ground-pixel regression, undistortion,
//! back-projection onto the carpet and conversion to the reporting frame.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::camera::{
    back_project_to_plane, wrap_degrees, CameraIntrinsics, CameraPose, PixelPoint, WorldPoint,
};
use crate::error::{Error, Result};
use crate::regression::{BoundingBox, GroundRegressor, ObjectClass};

pub const DEFAULT_MIN_SCORE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: String,
    pub class: ObjectClass,
    pub score: f64,
    pub bbox: BoundingBox,
}

/// Frame in which positions are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameConvention {
    /// Field coordinates, millimeters.
    Field,
    /// Camera-relative ground coordinates: `x` to the right, `y` forward.
    #[default]
    Camera,
}

impl std::str::FromStr for FrameConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "field" => Ok(FrameConvention::Field),
            "camera" => Ok(FrameConvention::Camera),
            other => Err(Error::InvalidInput(format!(
                "unknown frame '{other}' (expected field|camera)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedObject {
    pub frame_id: String,
    pub class: ObjectClass,
    /// Position in the requested frame, millimeters.
    pub position: (f64, f64),
    /// Bearing of `position`, degrees in `(-180, 180]`.
    pub bearing_deg: f64,
    pub ground_pixel: PixelPoint,
}

/// A detection that could not be placed on the field.
#[derive(Debug, Clone, PartialEq)]
pub struct Unlocalizable {
    pub frame_id: String,
    pub class: ObjectClass,
    pub ground_pixel: Option<PixelPoint>,
    pub reason: Error,
}

/// Direction of the position seen from the camera, `atan2(x, y)` in degrees
/// (forward axis `y`, lateral axis `x`).
pub fn bearing(x: f64, y: f64) -> Result<f64> {
    if x == 0.0 && y == 0.0 {
        return Err(Error::UndefinedBearing);
    }
    Ok(wrap_degrees(x.atan2(y).to_degrees()))
}

/// Bearing of a reported position; a position exactly at the frame origin
/// reports 0 rather than failing.
pub fn reported_bearing(x: f64, y: f64) -> f64 {
    bearing(x, y).unwrap_or(0.0)
}

/// Field point expressed relative to the camera's ground projection, with
/// `+y` along the camera's forward ground direction and `+x` to its right.
pub fn frame_convert(p_field: &WorldPoint, pose: &CameraPose) -> (f64, f64) {
    let center = pose.camera_center();
    let forward = pose.direction_to_world(&nalgebra::Vector3::z());
    let (mut fx, mut fy) = (forward.x, forward.y);
    if fx.hypot(fy) < 1e-9 {
        // Looking straight down: use the image "up" direction instead.
        let up = pose.direction_to_world(&(-nalgebra::Vector3::y()));
        fx = up.x;
        fy = up.y;
    }
    let norm = fx.hypot(fy);
    let (fx, fy) = (fx / norm, fy / norm);
    let (dx, dy) = (p_field.x - center.x, p_field.y - center.y);
    (dx * fy - dy * fx, dx * fx + dy * fy)
}

/// Places one detection on the field plane `z = 0`.
pub fn localize(
    d: &Detection,
    regressor: &GroundRegressor,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    conv: FrameConvention,
) -> std::result::Result<LocalizedObject, Unlocalizable> {
    let fail = |ground_pixel, reason| Unlocalizable {
        frame_id: d.frame_id.clone(),
        class: d.class,
        ground_pixel,
        reason,
    };
    let ground_pixel = regressor
        .predict(d.class, &d.bbox)
        .map_err(|e| fail(None, e))?;
    if !ground_pixel.is_finite() {
        return Err(fail(
            None,
            Error::InvalidInput("non-finite ground pixel".into()),
        ));
    }
    let field = back_project_to_plane(ground_pixel, k, pose, 0.0)
        .map_err(|e| fail(Some(ground_pixel), e))?;
    let position = match conv {
        FrameConvention::Field => (field.x, field.y),
        FrameConvention::Camera => frame_convert(&field, pose),
    };
    let bearing_deg = reported_bearing(position.0, position.1);
    if !(position.0.is_finite() && position.1.is_finite()) {
        return Err(fail(Some(ground_pixel), Error::PointNotOnGround));
    }
    Ok(LocalizedObject {
        frame_id: d.frame_id.clone(),
        class: d.class,
        position,
        bearing_deg,
        ground_pixel,
    })
}

/// One record of the detection JSON-lines format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: String,
    pub class: String,
    pub score: f64,
    pub bbox: [f64; 4],
}

impl DetectionRecord {
    pub fn from_detection(d: &Detection) -> Self {
        Self {
            frame: d.frame_id.clone(),
            class: d.class.to_string(),
            score: d.score,
            bbox: d.bbox.to_array(),
        }
    }

    pub fn into_detection(self) -> Result<Detection> {
        let class: ObjectClass = self.class.parse()?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidInput(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(Detection {
            frame_id: self.frame,
            class,
            score: self.score,
            bbox: BoundingBox::from_array(self.bbox)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestResult {
    pub detections: Vec<Detection>,
    /// Number of well-formed records dropped by the score threshold.
    pub filtered: usize,
    pub diagnostics: Vec<Diagnostic>,
}

/// Parses JSON-lines detections, keeping records with `score >= min_score`.
/// Malformed lines produce diagnostics and are skipped.
pub fn ingest_detections<R: BufRead>(reader: R, min_score: f64) -> IngestResult {
    let mut out = IngestResult::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                out.diagnostics.push(Diagnostic {
                    line: line_no,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<DetectionRecord>(&line)
            .map_err(|e| Error::InvalidInput(e.to_string()))
            .and_then(DetectionRecord::into_detection);
        match parsed {
            Ok(d) if d.score >= min_score => out.detections.push(d),
            Ok(_) => out.filtered += 1,
            Err(e) => out.diagnostics.push(Diagnostic {
                line: line_no,
                message: e.to_string(),
            }),
        }
    }
    out
}

/// One record of the localization JSON-lines output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub frame: String,
    pub class: String,
    pub x_mm: Option<f64>,
    pub y_mm: Option<f64>,
    pub theta_deg: Option<f64>,
    pub ground_pixel: Option<[f64; 2]>,
    pub status: String,
}

impl LocalizationRecord {
    pub fn from_outcome(outcome: &std::result::Result<LocalizedObject, Unlocalizable>) -> Self {
        match outcome {
            Ok(o) => Self {
                frame: o.frame_id.clone(),
                class: o.class.to_string(),
                x_mm: Some(o.position.0),
                y_mm: Some(o.position.1),
                theta_deg: Some(o.bearing_deg),
                ground_pixel: Some([o.ground_pixel.u, o.ground_pixel.v]),
                status: "ok".into(),
            },
            Err(u) => Self {
                frame: u.frame_id.clone(),
                class: u.class.to_string(),
                x_mm: None,
                y_mm: None,
                theta_deg: None,
                ground_pixel: u.ground_pixel.map(|p| [p.u, p.v]),
                status: format!("unlocalizable:{}", u.reason.tag()),
            },
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}
