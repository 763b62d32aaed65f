//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use groundloc_core::extrinsics::{
    field_landmarks, solve_pnp, FieldGeometry, PnpCorrespondence, CALIBRATION_LANDMARKS,
};
use groundloc_core::intrinsics::{calibrate, CalibrationFlags};
use groundloc_core::optim::{
    levenberg_marquardt, numeric_jacobian_with_step, FnProblem, LmOptions,
};
use groundloc_core::pipeline::bearing;
use groundloc_core::regression::{
    BoundingBox, GroundRegressor, ObjectClass, RegressionSample, Weights, BOTTOM_CENTER_WEIGHTS,
};
use groundloc_core::synth::{
    generate_views, reference_intrinsics, SceneConfig, DEFAULT_LANDMARK_FRAME,
    REFERENCE_CAMERA_CENTER_MM, REFERENCE_EULER_DEG,
};
use groundloc_core::{euler_from_pose, pose_from_euler, project, PixelPoint, WorldPoint};

type Outcome = Result<String, String>;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_groundloc")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin())
        .args(args)
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn rmse_field(report: &str) -> Result<f64, String> {
    let v: serde_json::Value = serde_json::from_str(report).map_err(|e| e.to_string())?;
    v["rmse_mm"]
        .as_f64()
        .ok_or_else(|| "report has no rmse_mm".to_string())
}

fn within_time(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:.0?}"))
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let pairs = fixtures().join("nearest_four_pairs.csv");
    let report = run(&["evaluate", pairs.to_str().unwrap()])?;
    let rmse = rmse_field(&report)?;
    within_time(start.elapsed(), Duration::from_secs(1))?;
    if (rmse - 14.37).abs() <= 0.05 {
        Ok(format!("four-point rmse {rmse:.4} mm"))
    } else {
        Err(format!(
            "four-point rmse {rmse:.4} mm, expected 14.37 +/- 0.05"
        ))
    }
}

fn criterion_2() -> Outcome {
    let cases = [
        ((250.0, 750.0), 18.43),
        ((-250.0, 750.0), -18.43),
        ((0.0, 500.0), 0.0),
    ];
    let mut got = Vec::new();
    for ((x, y), want) in cases {
        let b = bearing(x, y).map_err(|e| e.to_string())?;
        if (b - want).abs() > 0.01 {
            return Err(format!("bearing({x}, {y}) = {b:.4}, expected {want}"));
        }
        got.push(format!("{b:.2}"));
    }
    Ok(format!("bearings {}", got.join(", ")))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let c = REFERENCE_CAMERA_CENTER_MM;
    let center = WorldPoint::new(c[0], c[1], c[2]);
    let pose = pose_from_euler(&REFERENCE_EULER_DEG, &center);
    let (e, back) = euler_from_pose(&pose).map_err(|e| e.to_string())?;
    let angle_err = (e.omega - REFERENCE_EULER_DEG.omega)
        .abs()
        .max((e.phi - REFERENCE_EULER_DEG.phi).abs())
        .max((e.kappa - REFERENCE_EULER_DEG.kappa).abs());
    let center_err = back.distance(&center);
    if angle_err > 1e-6 || center_err > 1e-6 {
        return Err(format!(
            "round trip: angle error {angle_err:e} deg, center error {center_err:e} mm"
        ));
    }
    let k = reference_intrinsics();
    let catalog = field_landmarks(&FieldGeometry::division_b())
        .map_err(|e| e.to_string())?
        .transformed(&DEFAULT_LANDMARK_FRAME);
    let corr = CALIBRATION_LANDMARKS
        .iter()
        .map(|name| {
            let lm = catalog.lookup(name).map_err(|e| e.to_string())?.clone();
            let pixel = project(&lm.world, &k, &pose).map_err(|e| e.to_string())?;
            Ok(PnpCorrespondence {
                pixel,
                landmark: lm,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let sol = solve_pnp(&corr, &k).map_err(|e| e.to_string())?;
    let pnp_err = sol.pose.camera_center().distance(&center);
    within_time(start.elapsed(), Duration::from_secs(1))?;
    if pnp_err <= 1e-4 {
        Ok(format!(
            "round trip {:.1e}, PnP center error {pnp_err:.1e} mm from {} points",
            angle_err.max(center_err),
            corr.len()
        ))
    } else {
        Err(format!("PnP center error {pnp_err:e} mm"))
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    run(&["synth", "--seed", "4", "--out", &d("scene")])?;
    run(&[
        "fit-regressor",
        &d("scene/regression.jsonl"),
        "--out",
        &d("model.json"),
    ])?;
    run(&[
        "localize",
        &d("scene/detections.jsonl"),
        "--calibration",
        &d("scene/calibration.json"),
        "--model",
        &d("model.json"),
        "--out",
        &d("loc.jsonl"),
    ])?;
    let report = run(&[
        "evaluate",
        "--truth",
        &d("scene/truth.csv"),
        "--localizations",
        &d("loc.jsonl"),
    ])?;
    let rmse = rmse_field(&report)?;
    let v: serde_json::Value = serde_json::from_str(&report).map_err(|e| e.to_string())?;
    let count = v["count"].as_u64().unwrap_or(0);
    within_time(start.elapsed(), Duration::from_secs(5))?;
    if count != 30 {
        return Err(format!("{count} points evaluated, expected 30"));
    }
    if rmse < 1e-6 {
        Ok(format!("{count} points, rmse {rmse:.1e} mm"))
    } else {
        Err(format!("rmse {rmse:e} mm"))
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let truth = reference_intrinsics();
    let clean = SceneConfig::default();
    let (views, _) = generate_views(&clean, 100).map_err(|e| e.to_string())?;
    let sol = calibrate(&views, CalibrationFlags::default()).map_err(|e| e.to_string())?;
    let k = sol.intrinsics;
    let rel = [
        (k.alpha_x - truth.alpha_x) / truth.alpha_x,
        (k.alpha_y - truth.alpha_y) / truth.alpha_y,
        (k.u0 - truth.u0) / truth.u0,
        (k.v0 - truth.v0) / truth.v0,
    ]
    .iter()
    .fold(0.0f64, |m, v| m.max(v.abs()));
    if rel > 1e-3 {
        return Err(format!("noiseless relative error {rel:e}"));
    }
    let noisy = SceneConfig {
        noise_px: 0.5,
        ..SceneConfig::default()
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for seed in 1..=20 {
        let (views, _) = generate_views(&noisy, seed).map_err(|e| e.to_string())?;
        let sol = calibrate(&views, CalibrationFlags::default())
            .map_err(|e| format!("seed {seed}: {e}"))?;
        lo = lo.min(sol.rmse);
        hi = hi.max(sol.rmse);
        if !(0.3..=0.7).contains(&sol.rmse) {
            return Err(format!(
                "seed {seed}: rmse {:.4} px outside [0.3, 0.7]",
                sol.rmse
            ));
        }
    }
    within_time(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "noiseless rel error {rel:.1e}; noisy rmse {lo:.3}..{hi:.3} px over 20 seeds"
    ))
}

fn strictly_decreasing(name: &str, history: &[f64]) -> Result<(), String> {
    match history.windows(2).position(|w| w[1] >= w[0]) {
        None => Ok(()),
        Some(i) => Err(format!(
            "{name}: accepted step {} did not lower the cost",
            i + 1
        )),
    }
}

fn criterion_6() -> Outcome {
    let opts = LmOptions::default();
    let rosenbrock = FnProblem::new(2, 2, |x: &DVector<f64>| {
        DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]])
    });
    let res = levenberg_marquardt(&rosenbrock, &DVector::from_vec(vec![-1.2, 1.0]), &opts)
        .map_err(|e| e.to_string())?;
    strictly_decreasing("rosenbrock", &res.cost_history)?;
    let dist = ((res.solution[0] - 1.0).powi(2) + (res.solution[1] - 1.0).powi(2)).sqrt();
    if dist > 1e-6 {
        return Err(format!("rosenbrock ended {dist:e} from (1, 1)"));
    }

    // Exponential decay fit and Powell's singular function.
    let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
    let ys: Vec<f64> = ts.iter().map(|t| 3.0 * (-0.7 * t).exp() + 0.5).collect();
    let expo = FnProblem::new(3, ts.len(), |x: &DVector<f64>| {
        DVector::from_iterator(
            ts.len(),
            ts.iter()
                .zip(&ys)
                .map(|(t, y)| x[0] * (-x[1] * t).exp() + x[2] - y),
        )
    });
    let r = levenberg_marquardt(&expo, &DVector::from_vec(vec![1.0, 0.1, 0.0]), &opts)
        .map_err(|e| e.to_string())?;
    strictly_decreasing("exponential", &r.cost_history)?;
    let powell = FnProblem::new(4, 4, |x: &DVector<f64>| {
        DVector::from_vec(vec![
            x[0] + 10.0 * x[1],
            5f64.sqrt() * (x[2] - x[3]),
            (x[1] - 2.0 * x[2]).powi(2),
            10f64.sqrt() * (x[0] - x[3]).powi(2),
        ])
    });
    let r = levenberg_marquardt(
        &powell,
        &DVector::from_vec(vec![3.0, -1.0, 0.0, 1.0]),
        &opts,
    )
    .map_err(|e| e.to_string())?;
    strictly_decreasing("powell", &r.cost_history)?;

    // Central differences: halving the step quarters the error.
    let smooth = FnProblem::new(2, 2, |x: &DVector<f64>| {
        DVector::from_vec(vec![x[0].sin() * x[1].exp(), x[0].powi(3) * x[1].cos()])
    });
    let x = DVector::from_vec(vec![0.7f64, -0.4]);
    let exact = nalgebra::DMatrix::from_row_slice(
        2,
        2,
        &[
            x[0].cos() * x[1].exp(),
            x[0].sin() * x[1].exp(),
            3.0 * x[0].powi(2) * x[1].cos(),
            -x[0].powi(3) * x[1].sin(),
        ],
    );
    let err = |h: f64| -> Result<f64, String> {
        let j = numeric_jacobian_with_step(&smooth, &x, h).map_err(|e| e.to_string())?;
        Ok((j - &exact).abs().max())
    };
    let ratio = err(1e-2)? / err(5e-3)?;
    if !(3.0..=5.0).contains(&ratio) {
        return Err(format!("step-halving error ratio {ratio:.3}"));
    }
    Ok(format!(
        "costs decrease on 3 problems; rosenbrock error {dist:.1e}; halving ratio {ratio:.3}"
    ))
}

fn sample_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<BoundingBox> {
    (0..n)
        .map(|_| {
            let x = rng.gen_range(0.0..600.0);
            let y = rng.gen_range(0.0..440.0);
            let w = rng.gen_range(5.0..80.0);
            let h = rng.gen_range(5.0..80.0);
            BoundingBox::new(x, y, x + w, y + h).unwrap()
        })
        .collect()
}

fn apply(w: &Weights, b: &BoundingBox) -> PixelPoint {
    let f = b.features();
    let dot = |r: &[f64; 5]| r.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
    PixelPoint::new(dot(&w[0]), dot(&w[1]))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mut w: Weights = [[0.0; 5]; 2];
        for v in w.iter_mut().flatten() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let samples: Vec<_> = sample_boxes(&mut rng, 40)
            .into_iter()
            .map(|b| RegressionSample {
                class: ObjectClass::Robot,
                bbox: b,
                ground_pixel: apply(&w, &b),
            })
            .collect();
        let model = GroundRegressor::fit(&samples).map_err(|e| e.to_string())?;
        for s in &samples {
            let p = model.predict(s.class, &s.bbox).map_err(|e| e.to_string())?;
            worst = worst.max(
                (p.u - s.ground_pixel.u)
                    .abs()
                    .max((p.v - s.ground_pixel.v).abs()),
            );
        }
    }
    if worst >= 1e-9 {
        return Err(format!("linear-map residual {worst:e} px"));
    }
    let samples: Vec<_> = sample_boxes(&mut rng, 40)
        .into_iter()
        .map(|b| RegressionSample {
            class: ObjectClass::Ball,
            bbox: b,
            ground_pixel: PixelPoint::new((b.xmin() + b.xmax()) / 2.0, b.ymax()),
        })
        .collect();
    let model = GroundRegressor::fit(&samples).map_err(|e| e.to_string())?;
    let fitted = model.classes[&ObjectClass::Ball].weights;
    let dev = fitted
        .iter()
        .flatten()
        .zip(BOTTOM_CENTER_WEIGHTS.iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if dev > 1e-12 {
        return Err(format!("bottom-center weights off by {dev:e}"));
    }
    Ok(format!(
        "max residual {worst:.1e} px over 10 maps; bottom-center weight deviation {dev:.1e}"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("four-point RMSE from the fixture", criterion_1),
        ("bearing formula", criterion_2),
        ("calibration self-consistency", criterion_3),
        ("end-to-end synthetic closure", criterion_4),
        ("intrinsic calibration recovery", criterion_5),
        ("optimizer properties", criterion_6),
        ("ground-regressor identity", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        match outcome {
            Ok(detail) => println!(
                "criterion {}: PASS  {name}: {detail} [{elapsed:.2?}]",
                i + 1
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "criterion {}: FAIL  {name}: {detail} [{elapsed:.2?}]",
                    i + 1
                );
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
