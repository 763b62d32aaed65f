//! On-disk formats: calibration, pattern views, landmark markings and
//! regression training samples.

use std::io::BufRead;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::{
    euler_from_pose, CameraIntrinsics, CameraPose, EulerAngles, PixelPoint, WorldPoint,
};
use crate::error::{Error, Result};
use crate::extrinsics::{
    field_landmarks, FieldGeometry, FieldLandmark, FrameTransform, LandmarkCatalog,
    PnpCorrespondence,
};
use crate::intrinsics::{CalibrationFlags, Correspondence, PatternPoint, PlanarView};
use crate::regression::{BoundingBox, ObjectClass, RegressionSample};

/// Reads a file, naming the path in the error.
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

pub fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("{what}: {e}")))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&read_text(path)?, &path.display().to_string())
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Row-major world-to-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(pose: &CameraPose) -> Self {
        let r = pose.rotation();
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[3 * i + j] = r[(i, j)];
            }
        }
        let t = pose.translation();
        Self {
            rotation,
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn to_pose(&self) -> Result<CameraPose> {
        let r = Matrix3::from_row_slice(&self.rotation);
        CameraPose::new(r, Vector3::from(self.translation))
    }
}

/// Intrinsics plus (optionally) the extrinsic pose, with derived Euler angles
/// and camera center kept for readability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub intrinsics: CameraIntrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub euler_deg: Option<EulerAngles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_center_mm: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_px: Option<f64>,
}

impl CalibrationFile {
    pub fn new(k: CameraIntrinsics, pose: Option<&CameraPose>, rmse_px: Option<f64>) -> Self {
        let euler = pose.and_then(|p| euler_from_pose(p).ok());
        let center = pose.map(|p| {
            let c = p.camera_center();
            [c.x, c.y, c.z]
        });
        Self {
            intrinsics: k,
            pose: pose.map(PoseRecord::from_pose),
            euler_deg: euler.map(|e| e.0),
            camera_center_mm: center,
            rmse_px,
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        self.intrinsics.validate()?;
        Ok(self.intrinsics)
    }

    pub fn pose(&self) -> Result<CameraPose> {
        self.pose
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("calibration has no pose".into()))?
            .to_pose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPoint {
    pub pixel: [f64; 2],
    pub pattern: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub id: String,
    pub points: Vec<ViewPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagsRecord {
    #[serde(default = "yes")]
    pub fix_skew: bool,
    #[serde(default = "yes")]
    pub fix_k3: bool,
}

fn yes() -> bool {
    true
}

impl Default for FlagsRecord {
    fn default() -> Self {
        Self {
            fix_skew: true,
            fix_k3: true,
        }
    }
}

/// Planar-pattern correspondences for intrinsic calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewsFile {
    #[serde(default)]
    pub flags: FlagsRecord,
    pub views: Vec<ViewRecord>,
}

impl ViewsFile {
    pub fn from_views(views: &[PlanarView], flags: CalibrationFlags) -> Self {
        Self {
            flags: FlagsRecord {
                fix_skew: flags.fix_skew,
                fix_k3: flags.fix_k3,
            },
            views: views
                .iter()
                .map(|v| ViewRecord {
                    id: v.id.clone(),
                    points: v
                        .correspondences
                        .iter()
                        .map(|c| ViewPoint {
                            pixel: [c.pixel.u, c.pixel.v],
                            pattern: [c.pattern.x, c.pattern.y],
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn flags(&self) -> CalibrationFlags {
        CalibrationFlags {
            fix_skew: self.flags.fix_skew,
            fix_k3: self.flags.fix_k3,
        }
    }

    pub fn to_views(&self) -> Result<Vec<PlanarView>> {
        self.views
            .iter()
            .map(|v| {
                let corr = v
                    .points
                    .iter()
                    .map(|p| Correspondence {
                        pixel: PixelPoint::new(p.pixel[0], p.pixel[1]),
                        pattern: PatternPoint::new(p.pattern[0], p.pattern[1]),
                    })
                    .collect();
                PlanarView::new(v.id.clone(), corr)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedLandmark {
    pub name: String,
    pub pixel: [f64; 2],
}

/// A marked point whose world position is given directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedPoint {
    pub pixel: [f64; 2],
    pub world: [f64; 3],
}

/// Hand-marked landmark pixels for extrinsic calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarksFile {
    #[serde(default = "FieldGeometry::division_b")]
    pub field_geometry: FieldGeometry,
    /// Placement of the canonical landmark catalog in the calibration frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<FrameTransform>,
    #[serde(default)]
    pub points: Vec<MarkedLandmark>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<MarkedPoint>,
}

impl LandmarksFile {
    pub fn catalog(&self) -> Result<LandmarkCatalog> {
        let c = field_landmarks(&self.field_geometry)?;
        Ok(match &self.frame {
            Some(f) => c.transformed(f),
            None => c,
        })
    }

    pub fn correspondences(&self) -> Result<Vec<PnpCorrespondence>> {
        let catalog = self.catalog()?;
        let mut out = Vec::with_capacity(self.points.len() + self.extra.len());
        for p in &self.points {
            out.push(PnpCorrespondence {
                pixel: PixelPoint::new(p.pixel[0], p.pixel[1]),
                landmark: catalog.lookup(&p.name)?.clone(),
            });
        }
        for (i, p) in self.extra.iter().enumerate() {
            out.push(PnpCorrespondence {
                pixel: PixelPoint::new(p.pixel[0], p.pixel[1]),
                landmark: FieldLandmark {
                    name: format!("extra_{i}"),
                    world: WorldPoint::new(p.world[0], p.world[1], p.world[2]),
                },
            });
        }
        Ok(out)
    }
}

/// One line of the regression training JSON-lines format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub class: String,
    pub bbox: [f64; 4],
    pub ground_pixel: [f64; 2],
}

impl TrainingRecord {
    pub fn from_sample(s: &RegressionSample) -> Self {
        Self {
            class: s.class.to_string(),
            bbox: s.bbox.to_array(),
            ground_pixel: [s.ground_pixel.u, s.ground_pixel.v],
        }
    }

    pub fn into_sample(self) -> Result<RegressionSample> {
        let class: ObjectClass = self.class.parse()?;
        let ground_pixel = PixelPoint::new(self.ground_pixel[0], self.ground_pixel[1]);
        if !ground_pixel.is_finite() {
            return Err(Error::InvalidInput("non-finite ground pixel".into()));
        }
        Ok(RegressionSample {
            class,
            bbox: BoundingBox::from_array(self.bbox)?,
            ground_pixel,
        })
    }
}

/// Parses training samples; unlike detections, any bad line fails the whole file.
pub fn read_training_samples<R: BufRead>(reader: R) -> Result<Vec<RegressionSample>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::InvalidInput(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_json::<TrainingRecord>(&line, &format!("line {}", idx + 1))
            .and_then(TrainingRecord::into_sample)
            .map_err(|e| Error::InvalidInput(format!("line {}: {e}", idx + 1)))?;
        out.push(sample);
    }
    Ok(out)
}

/// Serializes records as JSON lines.
pub fn to_json_lines<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("serializable record"));
        s.push('\n');
    }
    s
}
