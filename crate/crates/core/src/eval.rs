//! Accuracy metrics over (ground truth, estimate) pairs: RMSE, per-axis error
//! statistics and distance-bucketed summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::wrap_degrees;
use crate::error::{Error, Result};
use crate::pipeline::{reported_bearing, FrameConvention, LocalizationRecord};

/// Default distance bucket boundaries, millimeters.
pub const DEFAULT_BUCKETS_MM: [f64; 3] = [1000.0, 2000.0, 3000.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Ours,
    Reference,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Ours => "ours",
            Source::Reference => "reference",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(Source::Ours),
            "reference" => Ok(Source::Reference),
            other => Err(Error::InvalidInput(format!("unknown source '{other}'"))),
        }
    }
}

/// Planar position (mm) plus bearing (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarEstimate {
    pub x: f64,
    pub y: f64,
    pub theta_deg: f64,
}

impl PlanarEstimate {
    pub const fn new(x: f64, y: f64, theta_deg: f64) -> Self {
        Self { x, y, theta_deg }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta_deg.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub truth: PlanarEstimate,
    pub estimate: PlanarEstimate,
    pub source: Source,
}

impl EvalPair {
    pub fn new(truth: PlanarEstimate, estimate: PlanarEstimate, source: Source) -> Result<Self> {
        if !truth.is_finite() || !estimate.is_finite() {
            return Err(Error::InvalidInput("non-finite evaluation pair".into()));
        }
        Ok(Self {
            truth,
            estimate,
            source,
        })
    }

    pub fn squared_error(&self) -> f64 {
        let dx = self.estimate.x - self.truth.x;
        let dy = self.estimate.y - self.truth.y;
        dx * dx + dy * dy
    }

    /// `estimate - truth` for x, y and the wrapped angle difference.
    pub fn errors(&self) -> [f64; 3] {
        [
            self.estimate.x - self.truth.x,
            self.estimate.y - self.truth.y,
            wrap_degrees(self.estimate.theta_deg - self.truth.theta_deg),
        ]
    }
}

/// Root mean square Euclidean XY error.
pub fn rmse(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = pairs.iter().map(EvalPair::squared_error).sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub x_mm: MeanStd,
    pub y_mm: MeanStd,
    pub theta_deg: MeanStd,
}

pub fn error_stats(pairs: &[EvalPair]) -> Result<ErrorStats> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = pairs.len() as f64;
    let errs: Vec<[f64; 3]> = pairs.iter().map(EvalPair::errors).collect();
    let axis = |i: usize| {
        let mean = errs.iter().map(|e| e[i]).sum::<f64>() / n;
        let var = errs.iter().map(|e| (e[i] - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    };
    Ok(ErrorStats {
        x_mm: axis(0),
        y_mm: axis(1),
        theta_deg: axis(2),
    })
}

/// Pairs whose ground-truth distance from the origin lies in `[lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub lo_mm: f64,
    /// `None` for the open-ended last bucket.
    pub hi_mm: Option<f64>,
    pub pairs: Vec<EvalPair>,
}

fn check_boundaries(boundaries: &[f64]) -> Result<()> {
    if boundaries.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::InvalidInput(
            "bucket boundaries must be finite and non-negative".into(),
        ));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "bucket boundaries must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Splits pairs by ground-truth distance from `origin`. `n` boundaries give
/// `n + 1` buckets; a point on a boundary goes to the upper bucket.
pub fn bucket_by_distance(
    pairs: &[EvalPair],
    boundaries: &[f64],
    origin: (f64, f64),
) -> Result<Vec<Bucket>> {
    check_boundaries(boundaries)?;
    let mut buckets: Vec<Bucket> = (0..=boundaries.len())
        .map(|i| Bucket {
            lo_mm: if i == 0 { 0.0 } else { boundaries[i - 1] },
            hi_mm: boundaries.get(i).copied(),
            pairs: Vec::new(),
        })
        .collect();
    for p in pairs {
        let d = (p.truth.x - origin.0).hypot(p.truth.y - origin.1);
        let idx = boundaries.partition_point(|b| *b <= d);
        buckets[idx].pairs.push(*p);
    }
    Ok(buckets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub lo_mm: f64,
    pub hi_mm: Option<f64>,
    pub count: usize,
    /// `None` for an empty bucket.
    pub rmse_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub rmse_mm: f64,
    pub stats: ErrorStats,
    pub boundaries_mm: Vec<f64>,
    pub buckets: Vec<BucketSummary>,
}

pub fn evaluate(pairs: &[EvalPair], boundaries: &[f64], origin: (f64, f64)) -> Result<EvalReport> {
    let total = rmse(pairs)?;
    let stats = error_stats(pairs)?;
    let buckets = bucket_by_distance(pairs, boundaries, origin)?
        .into_iter()
        .map(|b| BucketSummary {
            lo_mm: b.lo_mm,
            hi_mm: b.hi_mm,
            count: b.pairs.len(),
            rmse_mm: rmse(&b.pairs).ok(),
        })
        .collect();
    Ok(EvalReport {
        count: pairs.len(),
        rmse_mm: total,
        stats,
        boundaries_mm: boundaries.to_vec(),
        buckets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceComparison {
    pub ours: EvalReport,
    pub reference: EvalReport,
}

fn sorted_truths(pairs: &[EvalPair]) -> Vec<(f64, f64)> {
    let mut t: Vec<(f64, f64)> = pairs.iter().map(|p| (p.truth.x, p.truth.y)).collect();
    t.sort_by(|a, b| a.partial_cmp(b).expect("finite truths"));
    t
}

/// Side-by-side reports for two estimate sources over the same ground truth.
pub fn compare_sources(
    ours: &[EvalPair],
    reference: &[EvalPair],
    boundaries: &[f64],
    origin: (f64, f64),
) -> Result<SourceComparison> {
    if sorted_truths(ours) != sorted_truths(reference) {
        return Err(Error::MismatchedGroundTruth);
    }
    Ok(SourceComparison {
        ours: evaluate(ours, boundaries, origin)?,
        reference: evaluate(reference, boundaries, origin)?,
    })
}

/// Splits mixed pairs by their source tag.
pub fn split_sources(pairs: &[EvalPair]) -> (Vec<EvalPair>, Vec<EvalPair>) {
    pairs.iter().partition(|p| p.source == Source::Ours)
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    gt_x: f64,
    gt_y: f64,
    gt_theta: f64,
    est_x: f64,
    est_y: f64,
    est_theta: f64,
    source: Source,
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::InvalidInput(format!("line {}: {e}", pos.line())),
        None => Error::InvalidInput(e.to_string()),
    }
}

/// Reads `gt_x,gt_y,gt_theta,est_x,est_y,est_theta,source` rows. Lines
/// starting with `#` are comments.
pub fn read_pairs_csv<R: Read>(reader: R) -> Result<Vec<EvalPair>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<PairRow>() {
        let r = row.map_err(csv_error)?;
        out.push(EvalPair::new(
            PlanarEstimate::new(r.gt_x, r.gt_y, r.gt_theta),
            PlanarEstimate::new(r.est_x, r.est_y, r.est_theta),
            r.source,
        )?);
    }
    Ok(out)
}

pub fn write_pairs_csv<W: Write>(writer: W, pairs: &[EvalPair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "gt_x",
        "gt_y",
        "gt_theta",
        "est_x",
        "est_y",
        "est_theta",
        "source",
    ])
    .map_err(csv_error)?;
    for p in pairs {
        w.write_record([
            fixed(p.truth.x),
            fixed(p.truth.y),
            fixed(p.truth.theta_deg),
            fixed(p.estimate.x),
            fixed(p.estimate.y),
            fixed(p.estimate.theta_deg),
            p.source.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Fixed-decimal formatting used by all text outputs.
pub fn fixed(v: f64) -> String {
    let s = format!("{v:.9}");
    // No "-0.000000000".
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn opt_fixed(v: Option<f64>) -> String {
    v.map(fixed).unwrap_or_default()
}

const REPORT_HEADER: [&str; 12] = [
    "source",
    "bucket",
    "lo_mm",
    "hi_mm",
    "count",
    "rmse_mm",
    "x_mean_mm",
    "x_std_mm",
    "y_mean_mm",
    "y_std_mm",
    "theta_mean_deg",
    "theta_std_deg",
];

fn report_rows(source: &str, r: &EvalReport, rows: &mut Vec<Vec<String>>) {
    let s = &r.stats;
    rows.push(vec![
        source.to_string(),
        "all".into(),
        String::new(),
        String::new(),
        r.count.to_string(),
        fixed(r.rmse_mm),
        fixed(s.x_mm.mean),
        fixed(s.x_mm.std),
        fixed(s.y_mm.mean),
        fixed(s.y_mm.std),
        fixed(s.theta_deg.mean),
        fixed(s.theta_deg.std),
    ]);
    for (i, b) in r.buckets.iter().enumerate() {
        let mut row = vec![
            source.to_string(),
            i.to_string(),
            fixed(b.lo_mm),
            opt_fixed(b.hi_mm),
            b.count.to_string(),
            opt_fixed(b.rmse_mm),
        ];
        row.resize(REPORT_HEADER.len(), String::new());
        rows.push(row);
    }
}

fn rows_to_csv(rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER).map_err(csv_error)?;
    for r in rows {
        w.write_record(r).map_err(csv_error)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn report_csv(source: Source, report: &EvalReport) -> Result<String> {
    let mut rows = Vec::new();
    report_rows(source.as_str(), report, &mut rows);
    rows_to_csv(&rows)
}

pub fn comparison_csv(c: &SourceComparison) -> Result<String> {
    let mut rows = Vec::new();
    report_rows(Source::Ours.as_str(), &c.ours, &mut rows);
    report_rows(Source::Reference.as_str(), &c.reference, &mut rows);
    rows_to_csv(&rows)
}

/// Plot-ready points: each distinct ground truth once (series `truth`),
/// then every estimate under its source name.
pub fn scatter_csv(pairs: &[EvalPair]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "series"]).map_err(csv_error)?;
    let mut seen: Vec<(f64, f64)> = Vec::new();
    for p in pairs {
        let t = (p.truth.x, p.truth.y);
        if !seen.contains(&t) {
            seen.push(t);
            w.write_record([fixed(t.0), fixed(t.1), "truth".into()])
                .map_err(csv_error)?;
        }
    }
    for p in pairs {
        w.write_record([
            fixed(p.estimate.x),
            fixed(p.estimate.y),
            p.source.to_string(),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// One row of a scene's ground-truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub frame: String,
    pub class: String,
    pub field_x: f64,
    pub field_y: f64,
    pub rel_x: f64,
    pub rel_y: f64,
    pub rel_theta: f64,
}

pub fn read_truth_csv<R: Read>(reader: R) -> Result<Vec<TruthRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize::<TruthRecord>()
        .map(|r| r.map_err(csv_error))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinResult {
    pub pairs: Vec<EvalPair>,
    /// Truth rows with no successful localization, as `frame/class`.
    pub missing: Vec<String>,
    /// Localizations with no truth row, as `frame/class`.
    pub unmatched: Vec<String>,
}

/// Pairs truth rows with successful localizations by frame and class, in the
/// frame selected by `conv`.
pub fn join_localizations(
    truth: &[TruthRecord],
    localizations: &[LocalizationRecord],
    conv: FrameConvention,
) -> Result<JoinResult> {
    let key = |f: &str, c: &str| format!("{f}/{c}");
    let mut estimates: BTreeMap<String, (f64, f64, f64)> = BTreeMap::new();
    for l in localizations.iter().filter(|l| l.is_ok()) {
        let (Some(x), Some(y), Some(t)) = (l.x_mm, l.y_mm, l.theta_deg) else {
            continue;
        };
        if estimates
            .insert(key(&l.frame, &l.class), (x, y, t))
            .is_some()
        {
            return Err(Error::InvalidInput(format!(
                "duplicate localization for {}",
                key(&l.frame, &l.class)
            )));
        }
    }
    let mut out = JoinResult::default();
    for t in truth {
        let k = key(&t.frame, &t.class);
        let Some(e) = estimates.remove(&k) else {
            out.missing.push(k);
            continue;
        };
        let (gx, gy, gt) = match conv {
            FrameConvention::Field => {
                (t.field_x, t.field_y, reported_bearing(t.field_x, t.field_y))
            }
            FrameConvention::Camera => (t.rel_x, t.rel_y, t.rel_theta),
        };
        out.pairs.push(EvalPair::new(
            PlanarEstimate::new(gx, gy, gt),
            PlanarEstimate::new(e.0, e.1, e.2),
            Source::Ours,
        )?);
    }
    out.unmatched = estimates.into_keys().collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pair(gt: (f64, f64, f64), est: (f64, f64, f64)) -> EvalPair {
        EvalPair::new(
            PlanarEstimate::new(gt.0, gt.1, gt.2),
            PlanarEstimate::new(est.0, est.1, est.2),
            Source::Ours,
        )
        .unwrap()
    }

    // Four nearest points of the reference experiment.
    fn nearest_four() -> Vec<EvalPair> {
        vec![
            pair((0.0, 500.0, 0.0), (-0.03, 508.86, 0.0)),
            pair((-250.0, 750.0, -18.43), (-259.17, 762.23, -18.78)),
            pair((0.0, 750.0, 0.0), (-1.08, 772.20, -0.08)),
            pair((250.0, 750.0, 18.43), (247.12, 753.32, 18.16)),
        ]
    }

    #[test]
    fn nearest_four_rmse() {
        let r = rmse(&nearest_four()).unwrap();
        assert!((r - 14.37).abs() < 0.05, "{r}");
    }

    #[test]
    fn nearest_four_means() {
        let s = error_stats(&nearest_four()).unwrap();
        assert_abs_diff_eq!(s.x_mm.mean, -3.29, epsilon = 1e-9);
        assert_abs_diff_eq!(s.theta_deg.mean, -0.175, epsilon = 1e-9);
    }

    #[test]
    fn trivial_rmse_values() {
        assert_eq!(rmse(&[]), Err(Error::EmptyInput));
        assert_eq!(error_stats(&[]), Err(Error::EmptyInput));
        let p = pair((10.0, 10.0, 0.0), (13.0, 14.0, 0.0));
        assert_abs_diff_eq!(rmse(&[p]).unwrap(), 5.0, epsilon = 1e-12);
        let same = pair((1.0, 2.0, 3.0), (1.0, 2.0, 3.0));
        assert_eq!(rmse(&[same, same]).unwrap(), 0.0);
        let s = error_stats(&[same, same]).unwrap();
        for m in [s.x_mm, s.y_mm, s.theta_deg] {
            assert_eq!(m.mean, 0.0);
            assert_eq!(m.std, 0.0);
        }
    }

    #[test]
    fn angle_errors_wrap() {
        let p = pair((0.0, 1.0, 179.0), (0.0, 1.0, -179.0));
        assert_abs_diff_eq!(p.errors()[2], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn buckets_half_open() {
        let ps = [
            pair((0.0, 800.0, 0.0), (0.0, 800.0, 0.0)),
            pair((0.0, 1500.0, 0.0), (0.0, 1500.0, 0.0)),
            pair((0.0, 2500.0, 0.0), (0.0, 2500.0, 0.0)),
        ];
        let b = bucket_by_distance(&ps, &[1000.0, 2000.0], (0.0, 0.0)).unwrap();
        let sizes: Vec<_> = b.iter().map(|b| b.pairs.len()).collect();
        assert_eq!(sizes, vec![1, 1, 1]);

        let all = bucket_by_distance(&ps, &[], (0.0, 0.0)).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].pairs.len(), 3);

        let edge = [pair((0.0, 1000.0, 0.0), (0.0, 1000.0, 0.0))];
        let b = bucket_by_distance(&edge, &[1000.0, 2000.0], (0.0, 0.0)).unwrap();
        assert_eq!(b[1].pairs.len(), 1);

        assert!(bucket_by_distance(&ps, &[2000.0, 1000.0], (0.0, 0.0)).is_err());
    }

    #[test]
    fn origin_shifts_distance() {
        let ps = [pair((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))];
        let b = bucket_by_distance(&ps, &[400.0], (0.0, -500.0)).unwrap();
        assert_eq!(b[1].pairs.len(), 1);
    }

    #[test]
    fn compare_sources_checks_truth() {
        let ours = nearest_four();
        let same = compare_sources(&ours, &ours, &DEFAULT_BUCKETS_MM, (0.0, 0.0)).unwrap();
        assert_eq!(same.ours, same.reference);

        let mut reference: Vec<_> = ours
            .iter()
            .rev()
            .map(|p| EvalPair {
                source: Source::Reference,
                estimate: PlanarEstimate::new(p.truth.x + 10.0, p.truth.y, p.truth.theta_deg),
                ..*p
            })
            .collect();
        let c = compare_sources(&ours, &reference, &DEFAULT_BUCKETS_MM, (0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(c.reference.rmse_mm, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.reference.stats.x_mm.std, 0.0, epsilon = 1e-12);

        reference[0].truth.x += 1.0;
        assert_eq!(
            compare_sources(&ours, &reference, &[], (0.0, 0.0)),
            Err(Error::MismatchedGroundTruth)
        );
        let csv = comparison_csv(&c).unwrap();
        assert!(csv.lines().any(|l| l.starts_with("reference,all,")));
    }

    #[test]
    fn csv_round_trip() {
        let ps = nearest_four();
        let mut buf = Vec::new();
        write_pairs_csv(&mut buf, &ps).unwrap();
        let back = read_pairs_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ps);

        let bad = "gt_x,gt_y,gt_theta,est_x,est_y,est_theta,source\n1,2,3,4,5,x,ours\n";
        assert!(matches!(
            read_pairs_csv(bad.as_bytes()),
            Err(Error::InvalidInput(_))
        ));
        let scatter = scatter_csv(&ps).unwrap();
        assert_eq!(scatter.lines().count(), 1 + 4 + 4);
    }

    fn arb_pairs() -> impl Strategy<Value = Vec<EvalPair>> {
        prop::collection::vec(
            (
                -3000.0..3000.0f64,
                0.0..4000.0f64,
                -50.0..50.0f64,
                -50.0..50.0f64,
            ),
            1..40,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, ex, ey)| pair((x, y, 0.0), (x + ex, y + ey, 0.0)))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn buckets_recombine(pairs in arb_pairs()) {
            let report = evaluate(&pairs, &DEFAULT_BUCKETS_MM, (0.0, 0.0)).unwrap();
            let total: f64 = pairs.iter().map(EvalPair::squared_error).sum();
            let recombined: f64 = report
                .buckets
                .iter()
                .map(|b| b.count as f64 * b.rmse_mm.unwrap_or(0.0).powi(2))
                .sum();
            prop_assert!((total - recombined).abs() <= 1e-9 * total.max(1e-300));
            prop_assert_eq!(report.buckets.iter().map(|b| b.count).sum::<usize>(), pairs.len());
        }

        #[test]
        fn rmse_permutation_and_scale(pairs in arb_pairs(), k in 0.1..10.0f64) {
            let r = rmse(&pairs).unwrap();
            let mut rev = pairs.clone();
            rev.reverse();
            prop_assert!((rmse(&rev).unwrap() - r).abs() <= 1e-9 * r.max(1.0));
            let scaled: Vec<_> = pairs
                .iter()
                .map(|p| {
                    let e = p.errors();
                    pair(
                        (p.truth.x, p.truth.y, 0.0),
                        (p.truth.x + k * e[0], p.truth.y + k * e[1], 0.0),
                    )
                })
                .collect();
            prop_assert!((rmse(&scaled).unwrap() - k * r).abs() <= 1e-8 * (k * r).max(1.0));
        }
    }
}
