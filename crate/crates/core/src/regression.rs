//! Per-class linear regression from a bounding box to its ground-contact pixel.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::camera::PixelPoint;
use crate::error::{Error, Result};
use crate::optim::linear_least_squares;

/// Minimum number of samples per class for a fit.
pub const MIN_SAMPLES_PER_CLASS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Ball,
    Robot,
    Goal,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Ball, ObjectClass::Robot, ObjectClass::Goal];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Ball => "ball",
            ObjectClass::Robot => "robot",
            ObjectClass::Goal => "goal",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ball" => Ok(ObjectClass::Ball),
            "robot" => Ok(ObjectClass::Robot),
            "goal" => Ok(ObjectClass::Goal),
            other => Err(Error::UnknownClass(other.to_string())),
        }
    }
}

/// Axis-aligned box in pixels with `xmin < xmax` and `ymin < ymax`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl BoundingBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBoundingBox("non-finite coordinate".into()));
        }
        if !(xmin < xmax) {
            return Err(Error::InvalidBoundingBox(format!(
                "xmin {xmin} >= xmax {xmax}"
            )));
        }
        if !(ymin < ymax) {
            return Err(Error::InvalidBoundingBox(format!(
                "ymin {ymin} >= ymax {ymax}"
            )));
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    pub fn ymin(&self) -> f64 {
        self.ymin
    }

    pub fn xmax(&self) -> f64 {
        self.xmax
    }

    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    /// `[xmin, ymin, xmax, ymax, 1]`.
    pub fn features(&self) -> [f64; 5] {
        [self.xmin, self.ymin, self.xmax, self.ymax, 1.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSample {
    pub class: ObjectClass,
    pub bbox: BoundingBox,
    pub ground_pixel: PixelPoint,
}

/// `[u, v]^T = W [xmin, ymin, xmax, ymax, 1]^T`.
pub type Weights = [[f64; 5]; 2];

/// Bottom-center of the box: `((xmin + xmax) / 2, ymax)`.
pub const BOTTOM_CENTER_WEIGHTS: Weights = [[0.5, 0.0, 0.5, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 0.0]];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub weights: Weights,
    /// Training RMS over u and v residual components; `None` for untrained defaults.
    pub rmse_px: Option<f64>,
}

impl ClassModel {
    pub fn apply(&self, bbox: &BoundingBox) -> PixelPoint {
        let f = bbox.features();
        let dot = |w: &[f64; 5]| w.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
        PixelPoint::new(dot(&self.weights[0]), dot(&self.weights[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundRegressor {
    pub classes: BTreeMap<ObjectClass, ClassModel>,
}

impl GroundRegressor {
    /// Independent ordinary least-squares fits of `u` and `v` for every class present.
    pub fn fit(samples: &[RegressionSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut grouped: BTreeMap<ObjectClass, Vec<&RegressionSample>> = BTreeMap::new();
        for s in samples {
            grouped.entry(s.class).or_default().push(s);
        }
        let mut classes = BTreeMap::new();
        for (class, group) in grouped {
            classes.insert(class, fit_class(class, &group)?);
        }
        Ok(Self { classes })
    }

    /// Adds bottom-center defaults for classes without a trained model.
    pub fn with_defaults(mut self) -> Self {
        for class in ObjectClass::ALL {
            self.classes.entry(class).or_insert(ClassModel {
                weights: BOTTOM_CENTER_WEIGHTS,
                rmse_px: None,
            });
        }
        self
    }

    pub fn bottom_center() -> Self {
        Self::default().with_defaults()
    }

    pub fn model(&self, class: ObjectClass) -> Result<&ClassModel> {
        self.classes
            .get(&class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    pub fn predict(&self, class: ObjectClass, bbox: &BoundingBox) -> Result<PixelPoint> {
        Ok(self.model(class)?.apply(bbox))
    }
}

fn fit_class(class: ObjectClass, group: &[&RegressionSample]) -> Result<ClassModel> {
    if group.len() < MIN_SAMPLES_PER_CLASS {
        return Err(Error::InsufficientSamples {
            class: class.to_string(),
            needed: MIN_SAMPLES_PER_CLASS,
            got: group.len(),
        });
    }
    let design = DMatrix::from_fn(group.len(), 5, |i, j| group[i].bbox.features()[j]);
    let us = DVector::from_iterator(group.len(), group.iter().map(|s| s.ground_pixel.u));
    let vs = DVector::from_iterator(group.len(), group.iter().map(|s| s.ground_pixel.v));
    let wu = linear_least_squares(&design, &us)?;
    let wv = linear_least_squares(&design, &vs)?;
    let ru = &design * &wu - us;
    let rv = &design * &wv - vs;
    let rmse = ((ru.norm_squared() + rv.norm_squared()) / (2 * group.len()) as f64).sqrt();
    let mut weights = [[0.0; 5]; 2];
    weights[0].copy_from_slice(wu.as_slice());
    weights[1].copy_from_slice(wv.as_slice());
    Ok(ClassModel {
        weights,
        rmse_px: Some(rmse),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn bbox(i: usize) -> BoundingBox {
        let x = 50.0 + 17.0 * i as f64 + (i as f64 * 1.3).sin() * 9.0;
        let y = 80.0 + 11.0 * i as f64;
        let w = 10.0 + (i % 5) as f64 * 3.0;
        let h = 12.0 + (i % 3) as f64 * 4.0 + (i as f64 * 0.7).cos();
        BoundingBox::new(x, y, x + w, y + h).unwrap()
    }

    fn apply(w: &Weights, b: &BoundingBox) -> PixelPoint {
        ClassModel {
            weights: *w,
            rmse_px: None,
        }
        .apply(b)
    }

    #[test]
    fn recovers_linear_map_exactly() {
        let truth: Weights = [[0.45, 0.02, 0.55, -0.03, 1.5], [0.01, 0.1, -0.01, 0.9, 2.0]];
        let samples: Vec<_> = (0..30)
            .map(|i| RegressionSample {
                class: ObjectClass::Ball,
                bbox: bbox(i),
                ground_pixel: apply(&truth, &bbox(i)),
            })
            .collect();
        let r = GroundRegressor::fit(&samples).unwrap();
        let m = r.model(ObjectClass::Ball).unwrap();
        assert!(m.rmse_px.unwrap() < 1e-9);
        for row in 0..2 {
            for col in 0..5 {
                assert!((m.weights[row][col] - truth[row][col]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bottom_center_forced_weights() {
        let samples: Vec<_> = (0..12)
            .map(|i| {
                let b = bbox(i);
                RegressionSample {
                    class: ObjectClass::Robot,
                    bbox: b,
                    ground_pixel: PixelPoint::new((b.xmin() + b.xmax()) / 2.0, b.ymax()),
                }
            })
            .collect();
        let r = GroundRegressor::fit(&samples).unwrap();
        let w = r.model(ObjectClass::Robot).unwrap().weights;
        for row in 0..2 {
            for col in 0..5 {
                assert!(
                    (w[row][col] - BOTTOM_CENTER_WEIGHTS[row][col]).abs() < 1e-9,
                    "{w:?}"
                );
            }
        }
    }

    #[test]
    fn noisy_ball_grid_within_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let samples: Vec<_> = (0..30)
            .map(|i| {
                let (gx, gy) = ((i % 5) as f64, (i / 5) as f64);
                let u = 200.0 + 60.0 * gx + rng.gen_range(-2.0..2.0);
                let v = 260.0 + 35.0 * gy;
                let d = 40.0 - 4.0 * gy;
                let h = d * rng.gen_range(0.9..1.1);
                let w = d * rng.gen_range(0.9..1.1);
                let b = BoundingBox::new(u - w / 2.0, v - h, u + w / 2.0, v).unwrap();
                RegressionSample {
                    class: ObjectClass::Ball,
                    bbox: b,
                    ground_pixel: PixelPoint::new(
                        u + noise.sample(&mut rng),
                        v + 2.0 + noise.sample(&mut rng),
                    ),
                }
            })
            .collect();
        let r = GroundRegressor::fit(&samples).unwrap();
        let rmse = r.model(ObjectClass::Ball).unwrap().rmse_px.unwrap();
        assert!(rmse <= 2.0, "rmse {rmse}");
    }

    #[test]
    fn predict_bottom_center_and_unknown() {
        let r = GroundRegressor::bottom_center();
        let b = BoundingBox::new(100.0, 100.0, 140.0, 140.0).unwrap();
        assert_eq!(
            r.predict(ObjectClass::Ball, &b).unwrap(),
            PixelPoint::new(120.0, 140.0)
        );

        let ball_only = GroundRegressor::fit(
            &(0..6)
                .map(|i| RegressionSample {
                    class: ObjectClass::Ball,
                    bbox: bbox(i),
                    ground_pixel: apply(&BOTTOM_CENTER_WEIGHTS, &bbox(i)),
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(matches!(
            ball_only.predict(ObjectClass::Goal, &b),
            Err(Error::UnknownClass(_))
        ));
        assert!(
            matches!("goalpost".parse::<ObjectClass>(), Err(Error::UnknownClass(s)) if s == "goalpost")
        );
    }

    #[test]
    fn rank_deficient_and_insufficient() {
        let same: Vec<_> = (0..8)
            .map(|i| RegressionSample {
                class: ObjectClass::Ball,
                bbox: bbox(0),
                ground_pixel: PixelPoint::new(i as f64, 0.0),
            })
            .collect();
        assert_eq!(
            GroundRegressor::fit(&same).unwrap_err(),
            Error::RankDeficient
        );
        let few: Vec<_> = same[..4].to_vec();
        assert!(matches!(
            GroundRegressor::fit(&few),
            Err(Error::InsufficientSamples { got: 4, .. })
        ));
    }

    #[test]
    fn classes_are_independent() {
        let wa: Weights = [[0.5, 0.0, 0.5, 0.0, 3.0], [0.0, 0.2, 0.0, 0.8, -1.0]];
        let wb: Weights = [[0.4, 0.1, 0.6, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 5.0]];
        let mk = |class, w: &Weights, range: std::ops::Range<usize>| {
            range
                .map(|i| RegressionSample {
                    class,
                    bbox: bbox(i),
                    ground_pixel: apply(w, &bbox(i)),
                })
                .collect::<Vec<_>>()
        };
        let mut base = mk(ObjectClass::Ball, &wa, 0..10);
        base.extend(mk(ObjectClass::Robot, &wb, 0..10));
        let before = GroundRegressor::fit(&base).unwrap();
        // Noisy extra ball samples.
        let mut extra = mk(ObjectClass::Ball, &wb, 10..20);
        extra.iter_mut().for_each(|s| s.ground_pixel.u += 3.0);
        base.extend(extra);
        let after = GroundRegressor::fit(&base).unwrap();
        assert_eq!(
            before.classes[&ObjectClass::Robot],
            after.classes[&ObjectClass::Robot]
        );
        assert_ne!(
            before.classes[&ObjectClass::Ball],
            after.classes[&ObjectClass::Ball]
        );
    }

    #[test]
    fn invalid_boxes() {
        assert!(BoundingBox::new(10.0, 0.0, 5.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 5.0, 5.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, f64::NAN, 5.0, 5.0).is_err());
    }

    proptest! {
        #[test]
        fn predict_is_affine(
            a in prop::array::uniform4(0.0f64..300.0),
            b in prop::array::uniform4(0.0f64..300.0),
            t in 0.0f64..1.0,
        ) {
            let mk = |p: [f64; 4]| BoundingBox::new(p[0], p[1], p[0] + 1.0 + p[2], p[1] + 1.0 + p[3]).unwrap();
            let (ba, bb) = (mk(a), mk(b));
            let lerp = |x: f64, y: f64| x + t * (y - x);
            let mid = BoundingBox::new(
                lerp(ba.xmin(), bb.xmin()),
                lerp(ba.ymin(), bb.ymin()),
                lerp(ba.xmax(), bb.xmax()),
                lerp(ba.ymax(), bb.ymax()),
            ).unwrap();
            let m = ClassModel { weights: [[0.3, -0.2, 0.7, 0.1, 4.0], [0.05, 0.15, -0.05, 0.85, -2.0]], rmse_px: None };
            let (pa, pb, pm) = (m.apply(&ba), m.apply(&bb), m.apply(&mid));
            prop_assert!((pm.u - lerp(pa.u, pb.u)).abs() < 1e-9);
            prop_assert!((pm.v - lerp(pa.v, pb.v)).abs() < 1e-9);
        }
    }
}
