//! Trajectory accuracy metrics and experiment harnesses: absolute error,
//! segment-relative errors in the odometry-benchmark convention, and the
//! K-sweep success table.

use crate::detector::{DetectorConfig, LoopCandidate, LoopDetector, ScanMode};
use crate::features;
use crate::posegraph::{wrap_angle, PoseSE2};
use crate::synth::{self, FeatureMode, SynthDataset};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trajectory lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least 2 poses")]
    TooFewPoses,
    #[error("trajectory arc length {arc:.3} m is shorter than the smallest segment {min:.3} m")]
    TooShort { arc: f64, min: f64 },
    #[error("dataset {0} has no revisit pairs")]
    NoRevisits(String),
    #[error(transparent)]
    Detector(#[from] crate::detector::DetectorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Align {
    None,
    Rigid2d,
}

/// Trajectory error summary.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub ate_rmse: f64,
    pub trans_err_percent: f64,
    pub rot_err_deg_per_meter: f64,
    pub segment_lengths: Vec<f64>,
}

/// Absolute trajectory error: RMSE of positions, optionally after the
/// closed-form 2-D rigid alignment that minimizes the squared error.
pub fn ate(estimated: &[PoseSE2], gt: &[PoseSE2], align: Align) -> Result<f64, MetricsError> {
    if estimated.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            a: estimated.len(),
            b: gt.len(),
        });
    }
    if estimated.len() < 2 {
        return Err(MetricsError::TooFewPoses);
    }
    let n = estimated.len() as f64;
    let sq_sum: f64 = match align {
        Align::None => estimated
            .iter()
            .zip(gt)
            .map(|(e, g)| (e.x - g.x).powi(2) + (e.y - g.y).powi(2))
            .sum(),
        Align::Rigid2d => {
            let (mut ex, mut ey, mut gx, mut gy) = (0.0, 0.0, 0.0, 0.0);
            for (e, g) in estimated.iter().zip(gt) {
                ex += e.x;
                ey += e.y;
                gx += g.x;
                gy += g.y;
            }
            let (ex, ey, gx, gy) = (ex / n, ey / n, gx / n, gy / n);
            // Rotation angle minimizing sum |R e' - g'|^2.
            let (mut dot, mut cross) = (0.0, 0.0);
            for (e, g) in estimated.iter().zip(gt) {
                let (ax, ay) = (e.x - ex, e.y - ey);
                let (bx, by) = (g.x - gx, g.y - gy);
                dot += ax * bx + ay * by;
                cross += ax * by - ay * bx;
            }
            let phi = cross.atan2(dot);
            let (s, c) = phi.sin_cos();
            estimated
                .iter()
                .zip(gt)
                .map(|(e, g)| {
                    let (ax, ay) = (e.x - ex, e.y - ey);
                    let (rx, ry) = (c * ax - s * ay, s * ax + c * ay);
                    (rx - (g.x - gx)).powi(2) + (ry - (g.y - gy)).powi(2)
                })
                .sum()
        }
    };
    Ok((sq_sum / n).sqrt())
}

/// Default segment lengths of the odometry-benchmark convention, meters.
pub fn default_segment_lengths() -> Vec<f64> {
    (1..=8).map(|i| 100.0 * i as f64).collect()
}

/// Segment lengths scaled down for short synthetic worlds, preserving the
/// 100..800-in-steps-of-100 shape.
pub fn scaled_segment_lengths(scale_factor: f64) -> Vec<f64> {
    default_segment_lengths()
        .iter()
        .map(|l| l * scale_factor)
        .collect()
}

/// Segment-relative errors over fixed gt arc lengths: for each start pose
/// and each segment length, the estimated relative motion is compared to
/// the ground-truth one. Translation error is reported as a percent of the
/// segment's actual arc length, rotation error in degrees per meter,
/// averaged over every (start, length) cell with a valid segment.
pub fn kitti_rel_errors(
    estimated: &[PoseSE2],
    gt: &[PoseSE2],
    segment_lengths: &[f64],
) -> Result<(f64, f64), MetricsError> {
    if estimated.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            a: estimated.len(),
            b: gt.len(),
        });
    }
    if gt.len() < 2 {
        return Err(MetricsError::TooFewPoses);
    }
    let mut arc = Vec::with_capacity(gt.len());
    arc.push(0.0f64);
    for w in gt.windows(2) {
        let d = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
        let last = *arc.last().unwrap();
        arc.push(last + d);
    }
    let total = *arc.last().unwrap();
    let min_len = segment_lengths
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if total < min_len {
        return Err(MetricsError::TooShort {
            arc: total,
            min: min_len,
        });
    }

    let mut trans_sum = 0.0;
    let mut rot_sum = 0.0;
    let mut cells = 0usize;
    for start in 0..gt.len() {
        for &len in segment_lengths {
            // First pose at least `len` further along the gt arc.
            let target = arc[start] + len;
            let end = match arc[start..].iter().position(|&a| a >= target) {
                Some(off) => start + off,
                None => continue,
            };
            let seg_arc = arc[end] - arc[start];
            if seg_arc <= 0.0 {
                continue;
            }
            let gt_rel = gt[start].between(&gt[end]);
            let est_rel = estimated[start].between(&estimated[end]);
            let err = gt_rel.between(&est_rel);
            let t_err = (err.x * err.x + err.y * err.y).sqrt();
            let r_err = wrap_angle(err.theta).abs();
            trans_sum += t_err / seg_arc * 100.0;
            rot_sum += r_err.to_degrees() / seg_arc;
            cells += 1;
        }
    }
    if cells == 0 {
        return Err(MetricsError::TooShort {
            arc: total,
            min: min_len,
        });
    }
    Ok((trans_sum / cells as f64, rot_sum / cells as f64))
}

/// One sweep cell: did the detector find a true loop in this dataset at
/// this K?
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub dataset: String,
    pub k: usize,
    pub success: bool,
}

/// The success table over (dataset, K) plus the derived summaries.
#[derive(Clone, Debug)]
pub struct SweepReport {
    /// Sorted by dataset name, then K.
    pub rows: Vec<SweepRow>,
    /// Smallest swept K at which every dataset succeeds.
    pub minimal_k: Option<usize>,
    /// Per-dataset smallest K with success.
    pub per_dataset_minimal_k: Vec<(String, Option<usize>)>,
    /// Datasets whose success column is not monotone non-decreasing in K.
    pub anomalous: Vec<String>,
}

impl SweepReport {
    fn from_rows(mut rows: Vec<SweepRow>, k_range: &[usize]) -> SweepReport {
        rows.sort_by(|a, b| a.dataset.cmp(&b.dataset).then(a.k.cmp(&b.k)));
        let mut names: Vec<String> = rows.iter().map(|r| r.dataset.clone()).collect();
        names.dedup();

        let mut anomalous = Vec::new();
        let mut per_dataset_minimal_k = Vec::new();
        for name in &names {
            let series: Vec<&SweepRow> = rows.iter().filter(|r| &r.dataset == name).collect();
            if series.windows(2).any(|w| w[0].success && !w[1].success) {
                anomalous.push(name.clone());
            }
            per_dataset_minimal_k
                .push((name.clone(), series.iter().find(|r| r.success).map(|r| r.k)));
        }
        let minimal_k = k_range
            .iter()
            .find(|&&k| {
                names.iter().all(|name| {
                    rows.iter()
                        .any(|r| &r.dataset == name && r.k == k && r.success)
                })
            })
            .copied();
        SweepReport {
            rows,
            minimal_k,
            per_dataset_minimal_k,
            anomalous,
        }
    }

    /// Fraction of datasets succeeding at each K, for plotting.
    pub fn success_rate_series(&self) -> Vec<(usize, f64)> {
        let mut ks: Vec<usize> = self.rows.iter().map(|r| r.k).collect();
        ks.sort_unstable();
        ks.dedup();
        ks.into_iter()
            .map(|k| {
                let cells: Vec<&SweepRow> = self.rows.iter().filter(|r| r.k == k).collect();
                let hit = cells.iter().filter(|r| r.success).count();
                (k, hit as f64 / cells.len() as f64)
            })
            .collect()
    }
}

/// True when some loop event lands within `tol` frames of some
/// ground-truth revisit pair on both endpoints.
pub fn event_matches_revisit(
    events: &[LoopCandidate],
    revisit_pairs: &[(usize, usize)],
    tol: usize,
) -> bool {
    events.iter().any(|e| {
        revisit_pairs
            .iter()
            .any(|&(i, j)| e.matched_index.abs_diff(i) <= tol && e.current_index.abs_diff(j) <= tol)
    })
}

/// Frame tolerance for counting a detection as a true loop.
pub const SUCCESS_TOLERANCE_FRAMES: usize = 2;

/// Extracts detector-ready keyframes from a dataset: image-mode frames get
/// their full (uncapped) feature lists so per-K runs only re-rank.
pub fn prepared_frames(ds: &SynthDataset) -> Vec<crate::detector::Keyframe> {
    ds.keyframes
        .iter()
        .map(|kf| {
            if ds.spec.feature_mode == FeatureMode::Images {
                let img = kf
                    .image
                    .as_ref()
                    .expect("images mode keyframes carry images");
                let feats = features::extract_top_k(img, kf.mask.as_ref(), 20, 256)
                    .expect("synthetic views satisfy extraction minimums");
                crate::detector::Keyframe::with_features(kf.index, kf.pose, feats)
            } else {
                kf.clone()
            }
        })
        .collect()
}

/// Runs the full detector for every (dataset, K) cell and tabulates
/// success. `make_config` maps K to the detector configuration, so sweeps
/// can hold thresholds fixed or scale them with K.
///
/// Image features are extracted once per dataset (uncapped) and re-ranked
/// per K; the detector's own top-K selection makes this identical to
/// re-running extraction at each K.
pub fn success_sweep<F>(
    corpus: &[(String, SynthDataset)],
    k_range: &[usize],
    make_config: F,
) -> Result<SweepReport, MetricsError>
where
    F: Fn(usize) -> DetectorConfig + Sync,
{
    success_sweep_with_mode(corpus, k_range, make_config, ScanMode::Windowed)
}

/// [`success_sweep`] with an explicit scan mode; the full-scan variant is
/// the upper-bound baseline the windowed sweep is measured against.
pub fn success_sweep_with_mode<F>(
    corpus: &[(String, SynthDataset)],
    k_range: &[usize],
    make_config: F,
    scan: ScanMode,
) -> Result<SweepReport, MetricsError>
where
    F: Fn(usize) -> DetectorConfig + Sync,
{
    for (name, ds) in corpus {
        if ds.revisit_pairs.is_empty() {
            return Err(MetricsError::NoRevisits(name.clone()));
        }
    }

    let prepared: Vec<(String, Vec<crate::detector::Keyframe>, &SynthDataset)> = corpus
        .iter()
        .map(|(name, ds)| (name.clone(), prepared_frames(ds), ds))
        .collect();

    let cells: Vec<(usize, usize)> = (0..prepared.len())
        .flat_map(|d| k_range.iter().map(move |&k| (d, k)))
        .collect();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(d, k)| {
            let (name, frames, ds) = &prepared[d];
            let config = DetectorConfig {
                k,
                ..make_config(k)
            };
            let mut detector = LoopDetector::with_scan_mode(config, scan)?;
            let mut events = Vec::new();
            for frame in frames.iter().cloned() {
                if let crate::detector::DetectionEvent::Loop(c) = detector.process_frame(frame)? {
                    events.push(c);
                }
            }
            let success =
                event_matches_revisit(&events, &ds.revisit_pairs, SUCCESS_TOLERANCE_FRAMES);
            Ok(SweepRow {
                dataset: name.clone(),
                k,
                success,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    Ok(SweepReport::from_rows(rows, k_range))
}

/// Generates every world of [`synth::standard_corpus`].
pub fn standard_corpus_datasets() -> Vec<(String, SynthDataset)> {
    synth::standard_corpus()
        .into_iter()
        .map(|(name, spec)| {
            let ds = synth::generate(&spec).expect("standard corpus specs are valid");
            (name, ds)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, plant_matches, Shape, WorldSpec};

    fn line(n: usize) -> Vec<PoseSE2> {
        (0..n).map(|i| PoseSE2::new(i as f64, 0.0, 0.0)).collect()
    }

    #[test]
    fn ate_identical_is_zero() {
        let t = line(30);
        assert_eq!(ate(&t, &t, Align::None).unwrap(), 0.0);
        assert_eq!(ate(&t, &t, Align::Rigid2d).unwrap(), 0.0);
    }

    #[test]
    fn ate_rigid_alignment_absorbs_offsets() {
        let t = line(30);
        let shifted: Vec<PoseSE2> = t
            .iter()
            .map(|p| PoseSE2::new(p.x + 3.0, p.y + 4.0, p.theta))
            .collect();
        assert!((ate(&shifted, &t, Align::Rigid2d).unwrap()).abs() < 1e-9);
        // Without alignment the 3-4-5 offset shows up whole.
        assert!((ate(&shifted, &t, Align::None).unwrap() - 5.0).abs() < 1e-12);
        // A rotation about an arbitrary point is absorbed too.
        let rotated: Vec<PoseSE2> = t
            .iter()
            .map(|p| {
                let (s, c) = 0.7f64.sin_cos();
                PoseSE2::new(
                    c * p.x - s * p.y + 1.0,
                    s * p.x + c * p.y - 2.0,
                    p.theta + 0.7,
                )
            })
            .collect();
        assert!(ate(&rotated, &t, Align::Rigid2d).unwrap() < 1e-9);
    }

    #[test]
    fn ate_length_mismatch() {
        let t = line(10);
        assert!(matches!(
            ate(&t, &line(9), Align::None),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn rel_errors_zero_for_identical() {
        let t = line(200);
        let (te, re) = kitti_rel_errors(&t, &t, &[10.0, 20.0]).unwrap();
        assert_eq!(te, 0.0);
        assert_eq!(re, 0.0);
    }

    #[test]
    fn uniform_scale_shows_as_its_percentage() {
        // On a straight line a 2 percent scale about the start inflates
        // every relative translation by exactly 2 percent of arc length.
        let t = line(200);
        let scaled: Vec<PoseSE2> = t
            .iter()
            .map(|p| PoseSE2::new(p.x * 1.02, p.y * 1.02, p.theta))
            .collect();
        let (te, re) = kitti_rel_errors(&scaled, &t, &[10.0, 20.0, 40.0, 80.0]).unwrap();
        assert!((te - 2.0).abs() < 0.05, "translation error {te}");
        assert!(re.abs() < 1e-9);
    }

    #[test]
    fn too_short_trajectory_is_an_error() {
        let t = line(5);
        assert!(matches!(
            kitti_rel_errors(&t, &t, &[100.0]),
            Err(MetricsError::TooShort { .. })
        ));
    }

    #[test]
    fn drift_correction_strictly_reduces_relative_error() {
        // Drifted square before vs after loop closure and optimization.
        let spec = WorldSpec {
            num_poses: 40,
            drift_rot_per_step: 0.004,
            noise_seed: 3,
            ..WorldSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let lengths = scaled_segment_lengths(0.1); // 10..80 m world
        let (before, _) = kitti_rel_errors(&ds.odom_poses, &ds.gt_poses, &lengths).unwrap();

        // Close the loop with the true relative pose and optimize.
        let mut graph = crate::posegraph::PoseGraph::build_from_trajectory(
            &ds.odom_poses,
            crate::posegraph::default_odometry_information(),
        )
        .unwrap();
        let (i, j) = *ds.revisit_pairs.first().expect("square world revisits");
        graph
            .add_loop_edge_between(
                i,
                j,
                ds.gt_poses[i].between(&ds.gt_poses[j]),
                crate::posegraph::default_loop_information(),
            )
            .unwrap();
        let (optimized, _) = crate::posegraph::optimize(&graph, 100, 1e-9).unwrap();
        let (after, _) = kitti_rel_errors(optimized.vertices(), &ds.gt_poses, &lengths).unwrap();
        assert!(after < before, "after {after} >= before {before}");
    }

    #[test]
    fn sweep_success_is_monotone_on_a_planted_dataset() {
        let spec = WorldSpec {
            num_poses: 75,
            ..WorldSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let corpus = vec![("sq".to_string(), ds)];
        let ks: Vec<usize> = (4..=18).collect();
        let report = success_sweep(&corpus, &ks, |_| DetectorConfig::default()).unwrap();
        assert!(report.anomalous.is_empty());
        assert!(report.minimal_k.is_some());
        let at_15 = report.rows.iter().find(|r| r.k == 15).unwrap();
        assert!(at_15.success);
    }

    #[test]
    fn sweep_flags_non_monotone_configs() {
        // Planted overlap of 10 with min_matches = ceil(K/2): acceptance
        // needs ceil(K/2) <= 10, so success holds up to K = 20 and fails
        // beyond, flipping from true to false as K grows past 20.
        let spec = WorldSpec {
            num_poses: 75,
            landmarks_per_cell: 1,
            noise_seed: 11,
            ..WorldSpec::default()
        };
        let ds = plant_matches(generate(&spec).unwrap(), 10).unwrap();
        let corpus = vec![("planted".to_string(), ds)];
        let ks: Vec<usize> = vec![8, 12, 16, 20, 21, 24];
        let report = success_sweep(&corpus, &ks, |k| DetectorConfig {
            min_matches: k.div_ceil(2),
            ..DetectorConfig::default()
        })
        .unwrap();
        let by_k: Vec<(usize, bool)> = report.rows.iter().map(|r| (r.k, r.success)).collect();
        assert_eq!(
            by_k,
            vec![
                (8, true),
                (12, true),
                (16, true),
                (20, true),
                (21, false),
                (24, false)
            ]
        );
        assert_eq!(report.anomalous, vec!["planted".to_string()]);
    }

    #[test]
    fn full_scan_sweep_is_an_upper_bound_on_windowed_success() {
        // Per (dataset, K) cell: if the windowed detector succeeds, so does
        // the full scan with identical thresholds.
        let corpus: Vec<(String, crate::synth::SynthDataset)> = [(7u64, 75usize), (9, 80)]
            .iter()
            .map(|&(seed, n)| {
                let spec = WorldSpec {
                    num_poses: n,
                    noise_seed: seed,
                    ..WorldSpec::default()
                };
                (format!("w{seed}"), generate(&spec).unwrap())
            })
            .collect();
        let ks: Vec<usize> = (5..=16).collect();
        let windowed = success_sweep(&corpus, &ks, |_| DetectorConfig::default()).unwrap();
        let full = success_sweep_with_mode(
            &corpus,
            &ks,
            |_| DetectorConfig::default(),
            crate::detector::ScanMode::FullScan,
        )
        .unwrap();
        for (w, f) in windowed.rows.iter().zip(full.rows.iter()) {
            assert_eq!((&w.dataset, w.k), (&f.dataset, f.k));
            assert!(
                f.success || !w.success,
                "windowed succeeded but full scan failed at ({}, {})",
                w.dataset,
                w.k
            );
        }
    }

    #[test]
    fn line_corpus_is_rejected() {
        let spec = WorldSpec {
            shape: Shape::Line,
            num_poses: 60,
            ..WorldSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let corpus = vec![("line".to_string(), ds)];
        assert!(matches!(
            success_sweep(&corpus, &[15], |_| DetectorConfig::default()),
            Err(MetricsError::NoRevisits(_))
        ));
    }
}
