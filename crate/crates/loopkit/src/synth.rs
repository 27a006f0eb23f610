//! Synthetic ground-truth worlds.
//!
//! Generates planar loop trajectories with simulated odometry drift and a
//! re-observable landmark field, at two fidelity tiers: `Descriptors`
//! (keyframes carry landmark signatures directly, exact and fast) and
//! `Images` (keyframes carry a rendered 128x128 top-down view, exercising
//! the whole feature pipeline). Everything is a pure function of the world
//! spec; reruns are byte-identical.

use crate::detector::Keyframe;
use crate::features::{Descriptor256, GrayImage, InformativeFeature, Keypoint};
use crate::posegraph::PoseSE2;
use crate::rng::Lcg64;
use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid world spec: {0}")]
    SpecError(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Circle,
    FigureEight,
    Line,
}

impl Shape {
    pub fn parse(s: &str) -> Option<Shape> {
        match s {
            "square" => Some(Shape::Square),
            "circle" => Some(Shape::Circle),
            "figure-eight" => Some(Shape::FigureEight),
            "line" => Some(Shape::Line),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::FigureEight => "figure-eight",
            Shape::Line => "line",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureMode {
    Images,
    Descriptors,
}

impl FeatureMode {
    pub fn parse(s: &str) -> Option<FeatureMode> {
        match s {
            "images" => Some(FeatureMode::Images),
            "descriptors" => Some(FeatureMode::Descriptors),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureMode::Images => "images",
            FeatureMode::Descriptors => "descriptors",
        }
    }
}

/// World description. Loop shapes complete one circuit every
/// [`POSES_PER_LAP`] poses; more poses continue into further laps.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    pub shape: Shape,
    pub num_poses: usize,
    /// Square side / circle radius / lemniscate half-width, meters.
    pub scale: f64,
    pub drift_rot_per_step: f64,
    pub drift_trans_per_step: f64,
    pub noise_seed: u64,
    pub feature_mode: FeatureMode,
    pub landmarks_per_cell: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            shape: Shape::Square,
            num_poses: 40,
            scale: 10.0,
            drift_rot_per_step: 0.0,
            drift_trans_per_step: 0.0,
            noise_seed: 0,
            feature_mode: FeatureMode::Descriptors,
            landmarks_per_cell: 2,
        }
    }
}

/// Poses per circuit of a loop shape.
pub const POSES_PER_LAP: usize = 40;

/// Ground-truth revisit gap: matches the detector's default recent-history
/// exclusion so planted loops are actually detectable.
pub const REVISIT_GAP: usize = 30;

/// Rendered view edge, pixels.
pub const IMAGE_SIZE: u32 = 128;

/// Pixels per meter of the rendered top-down view.
pub const PIXELS_PER_METER: f64 = 16.0;

const BLOB: i64 = 8;

/// A world landmark: position plus a fixed 256-bit signature that doubles
/// as its visual blob pattern in images mode.
#[derive(Clone, Debug)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub signature: Descriptor256,
}

/// A generated dataset. Keyframe poses carry the drift-corrupted odometry
/// (what the SLAM system believes); images are rendered at the true
/// positions (what the camera actually sees).
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub spec: WorldSpec,
    pub gt_poses: Vec<PoseSE2>,
    pub odom_poses: Vec<PoseSE2>,
    pub keyframes: Vec<Keyframe>,
    /// (i, j) with i < j, ground-truth positions within the revisit radius
    /// and j - i >= [`REVISIT_GAP`].
    pub revisit_pairs: Vec<(usize, usize)>,
    pub landmarks: Vec<Landmark>,
}

impl SynthDataset {
    /// 1.5x the pose spacing: the radius within which two poses count as
    /// the same place.
    pub fn revisit_radius(&self) -> f64 {
        1.5 * spacing_of(&self.spec)
    }
}

pub fn se2_to_isometry(p: &PoseSE2) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(p.x, p.y, 0.0),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), p.theta),
    )
}

fn perimeter_of(shape: Shape, scale: f64) -> f64 {
    match shape {
        Shape::Square => 4.0 * scale,
        Shape::Circle => std::f64::consts::TAU * scale,
        Shape::FigureEight => lemniscate_table(scale).1,
        Shape::Line => 4.0 * scale, // same spacing convention as the square
    }
}

/// Pose spacing along the path.
pub fn spacing_of(spec: &WorldSpec) -> f64 {
    perimeter_of(spec.shape, spec.scale) / POSES_PER_LAP as f64
}

/// Arc-length table of the Gerono lemniscate (x, y) = (scale sin t,
/// scale sin t cos t): sampled positions plus total length.
fn lemniscate_table(scale: f64) -> (Vec<(f64, f64)>, f64) {
    let n = 4096;
    let mut pts = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = std::f64::consts::TAU * i as f64 / n as f64;
        pts.push((scale * t.sin(), scale * t.sin() * t.cos()));
    }
    let mut total = 0.0;
    for w in pts.windows(2) {
        total += ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
    }
    (pts, total)
}

/// Position at arc length s along the shape (s already reduced mod
/// perimeter for loop shapes).
fn position_at(shape: Shape, scale: f64, s: f64) -> (f64, f64) {
    match shape {
        Shape::Line => (s, 0.0),
        Shape::Square => {
            let side = scale;
            if s < side {
                (s, 0.0)
            } else if s < 2.0 * side {
                (side, s - side)
            } else if s < 3.0 * side {
                (3.0 * side - s, side)
            } else {
                (0.0, 4.0 * side - s)
            }
        }
        Shape::Circle => {
            let a = s / scale;
            (scale * a.cos(), scale * a.sin())
        }
        Shape::FigureEight => {
            let (pts, total) = lemniscate_table(scale);
            let mut acc = 0.0;
            let target = s.min(total);
            for w in pts.windows(2) {
                let seg = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
                if acc + seg >= target || seg == 0.0 {
                    let u = if seg > 0.0 { (target - acc) / seg } else { 0.0 };
                    return (
                        w[0].0 + u * (w[1].0 - w[0].0),
                        w[0].1 + u * (w[1].1 - w[0].1),
                    );
                }
                acc += seg;
            }
            pts.last().map(|&(x, y)| (x, y)).unwrap()
        }
    }
}

fn gt_pose(spec: &WorldSpec, index: usize) -> PoseSE2 {
    let spacing = spacing_of(spec);
    let arc = |i: usize| -> f64 {
        match spec.shape {
            Shape::Line => i as f64 * spacing,
            // Reduce by lap index, not by fmod, so that repeated laps
            // land on bit-identical positions.
            _ => (i % POSES_PER_LAP) as f64 * spacing,
        }
    };
    let (x, y) = position_at(spec.shape, spec.scale, arc(index));
    let (nx, ny) = position_at(
        spec.shape,
        spec.scale,
        match spec.shape {
            Shape::Line => arc(index) + spacing,
            _ => arc(index + 1),
        },
    );
    let theta = (ny - y).atan2(nx - x);
    PoseSE2::new(x, y, theta)
}

fn validate(spec: &WorldSpec) -> Result<(), SynthError> {
    if spec.num_poses < 4 {
        return Err(SynthError::SpecError(format!(
            "num_poses = {} below minimum 4",
            spec.num_poses
        )));
    }
    if spec.scale.is_nan() || spec.scale <= 0.0 {
        return Err(SynthError::SpecError(format!(
            "scale = {} must be > 0",
            spec.scale
        )));
    }
    if spec.landmarks_per_cell == 0 {
        return Err(SynthError::SpecError(
            "landmarks_per_cell must be >= 1".into(),
        ));
    }
    Ok(())
}

/// Landmark sensing radius, meters.
fn sensing_radius(spec: &WorldSpec) -> f64 {
    2.0 * spacing_of(spec)
}

fn build_landmarks(spec: &WorldSpec, gt: &[PoseSE2], rng: &mut Lcg64) -> Vec<Landmark> {
    let cell = spacing_of(spec);
    let margin = sensing_radius(spec) + cell;
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for p in gt {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let (lo_x, lo_y) = (min_x - margin, min_y - margin);
    let cols = ((max_x + margin - lo_x) / cell).ceil() as usize + 1;
    let rows = ((max_y + margin - lo_y) / cell).ceil() as usize + 1;
    let mut landmarks = Vec::with_capacity(cols * rows * spec.landmarks_per_cell);
    for cy in 0..rows {
        for cx in 0..cols {
            for _ in 0..spec.landmarks_per_cell {
                let x = lo_x + (cx as f64 + rng.next_f64()) * cell;
                let y = lo_y + (cy as f64 + rng.next_f64()) * cell;
                landmarks.push(Landmark {
                    x,
                    y,
                    signature: Descriptor256(rng.next_bytes32()),
                });
            }
        }
    }
    landmarks
}

/// Renders the top-down view at a true position. Blobs are stamped on a
/// fixed world-pixel raster and the view origin snaps to that raster, so
/// two visits to the same place produce pixel-identical patches.
fn render_view(landmarks: &[Landmark], cx: f64, cy: f64) -> GrayImage {
    let half = IMAGE_SIZE as i64 / 2;
    let origin_x = (cx * PIXELS_PER_METER).round() as i64 - half;
    let origin_y = (cy * PIXELS_PER_METER).round() as i64 - half;
    let mut pixels = vec![30u8; (IMAGE_SIZE * IMAGE_SIZE) as usize];
    for lm in landmarks {
        let ax = (lm.x * PIXELS_PER_METER).round() as i64 - BLOB / 2;
        let ay = (lm.y * PIXELS_PER_METER).round() as i64 - BLOB / 2;
        // Skip blobs entirely outside the view.
        if ax + BLOB <= origin_x
            || ay + BLOB <= origin_y
            || ax >= origin_x + IMAGE_SIZE as i64
            || ay >= origin_y + IMAGE_SIZE as i64
        {
            continue;
        }
        for by in 0..BLOB {
            for bx in 0..BLOB {
                let (px, py) = (ax + bx - origin_x, ay + by - origin_y);
                if px < 0 || py < 0 || px >= IMAGE_SIZE as i64 || py >= IMAGE_SIZE as i64 {
                    continue;
                }
                let bit = lm.signature.bit((by * BLOB + bx) as usize);
                pixels[(py * IMAGE_SIZE as i64 + px) as usize] = if bit { 255 } else { 60 };
            }
        }
    }
    GrayImage::new(IMAGE_SIZE, IMAGE_SIZE, pixels).expect("exact buffer")
}

/// Landmark signatures visible from a true position, as descriptor-only
/// features in landmark order.
fn visible_features(
    landmarks: &[Landmark],
    x: f64,
    y: f64,
    radius: f64,
) -> Vec<InformativeFeature> {
    let mut feats = Vec::new();
    let mut fi: u32 = 0;
    for lm in landmarks {
        if ((lm.x - x).powi(2) + (lm.y - y).powi(2)).sqrt() <= radius {
            feats.push(InformativeFeature::new(
                Keypoint {
                    x: 16 + (fi % 96),
                    y: 16 + (fi / 96) % 96,
                    response: 0.0,
                    orientation: 0.0,
                },
                lm.signature,
            ));
            fi += 1;
        }
    }
    feats
}

/// Generates the dataset for a spec. Deterministic for a fixed spec.
pub fn generate(spec: &WorldSpec) -> Result<SynthDataset, SynthError> {
    validate(spec)?;
    let mut rng = Lcg64::new(spec.noise_seed);

    let gt_poses: Vec<PoseSE2> = (0..spec.num_poses).map(|i| gt_pose(spec, i)).collect();

    // Odometry: integrate the true relative motions corrupted by a
    // per-step bias plus zero-mean noise scaled by the same magnitudes.
    // With both magnitudes zero there is nothing to integrate and the
    // odometry is the ground truth itself, exactly.
    let odom_poses: Vec<PoseSE2> =
        if spec.drift_rot_per_step == 0.0 && spec.drift_trans_per_step == 0.0 {
            gt_poses.clone()
        } else {
            let mut odom = Vec::with_capacity(spec.num_poses);
            odom.push(gt_poses[0]);
            for i in 0..spec.num_poses - 1 {
                let rel = gt_poses[i].between(&gt_poses[i + 1]);
                let df = spec.drift_trans_per_step * (1.0 + 0.5 * rng.uniform(-1.0, 1.0));
                let dl = spec.drift_trans_per_step * 0.5 * rng.uniform(-1.0, 1.0);
                let dr = spec.drift_rot_per_step * (1.0 + 0.5 * rng.uniform(-1.0, 1.0));
                let corrupted = PoseSE2::new(rel.x + df, rel.y + dl, rel.theta + dr);
                let prev = *odom.last().expect("non-empty");
                odom.push(prev.compose(&corrupted));
            }
            odom
        };

    let landmarks = build_landmarks(spec, &gt_poses, &mut rng);
    let sense = sensing_radius(spec);

    let keyframes: Vec<Keyframe> = (0..spec.num_poses)
        .map(|i| {
            let pose = se2_to_isometry(&odom_poses[i]);
            match spec.feature_mode {
                FeatureMode::Images => Keyframe::with_image(
                    i,
                    pose,
                    render_view(&landmarks, gt_poses[i].x, gt_poses[i].y),
                ),
                FeatureMode::Descriptors => Keyframe::with_features(
                    i,
                    pose,
                    visible_features(&landmarks, gt_poses[i].x, gt_poses[i].y, sense),
                ),
            }
        })
        .collect();

    let revisit_radius = 1.5 * spacing_of(spec);
    let mut revisit_pairs = Vec::new();
    for j in 0..spec.num_poses {
        for i in 0..j {
            if j - i >= REVISIT_GAP {
                let d = ((gt_poses[i].x - gt_poses[j].x).powi(2)
                    + (gt_poses[i].y - gt_poses[j].y).powi(2))
                .sqrt();
                if d <= revisit_radius {
                    revisit_pairs.push((i, j));
                }
            }
        }
    }

    Ok(SynthDataset {
        spec: spec.clone(),
        gt_poses,
        odom_poses,
        keyframes,
        revisit_pairs,
        landmarks,
    })
}

/// Rewrites the later frame of every revisit pair so that exactly
/// `overlap_count` of its descriptors are copies of the earlier frame's
/// best features and the rest are fresh random signatures. Controls how
/// many descriptors re-appear at a revisit, for K-sweep boundary tests.
/// Descriptor-mode datasets only.
pub fn plant_matches(
    mut dataset: SynthDataset,
    overlap_count: usize,
) -> Result<SynthDataset, SynthError> {
    if dataset.spec.feature_mode != FeatureMode::Descriptors {
        return Err(SynthError::SpecError(
            "plant_matches requires a descriptors-mode dataset".into(),
        ));
    }
    let mut rng = Lcg64::new(dataset.spec.noise_seed ^ 0x9E37_79B9_7F4A_7C15);
    // One plant per distinct later frame: when several pairs share it, the
    // earliest matched frame donates.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for &(i, j) in &dataset.revisit_pairs {
        if !pairs.iter().any(|&(_, pj)| pj == j) {
            pairs.push((i, j));
        }
    }
    for &(i, j) in &pairs {
        let count_j = dataset.keyframes[j].features.len();
        if overlap_count > count_j || overlap_count > dataset.keyframes[i].features.len() {
            return Err(SynthError::SpecError(format!(
                "overlap {} exceeds features per frame ({} / {})",
                overlap_count,
                dataset.keyframes[i].features.len(),
                count_j
            )));
        }
        let donors = crate::features::select_top_k(&dataset.keyframes[i].features, overlap_count);
        let mut fresh = Vec::with_capacity(count_j);
        fresh.extend(donors);
        while fresh.len() < count_j {
            let kp = Keypoint {
                x: 16 + (fresh.len() as u32 % 96),
                y: 16,
                response: 0.0,
                orientation: 0.0,
            };
            fresh.push(InformativeFeature::new(
                kp,
                Descriptor256(rng.next_bytes32()),
            ));
        }
        dataset.keyframes[j].features = fresh;
    }
    Ok(dataset)
}

/// The standard five-world corpus used by the experiment harnesses: all
/// looped, images mode, seeds 1 through 5, between 1.75 and 2.25 laps so
/// every world contains sustained retraces.
pub fn standard_corpus() -> Vec<(String, WorldSpec)> {
    let world = |shape, num_poses, scale, seed| WorldSpec {
        shape,
        num_poses,
        scale,
        noise_seed: seed,
        feature_mode: FeatureMode::Images,
        ..WorldSpec::default()
    };
    vec![
        ("square-10".to_string(), world(Shape::Square, 75, 10.0, 1)),
        ("circle-8".to_string(), world(Shape::Circle, 80, 8.0, 2)),
        (
            "eight-12".to_string(),
            world(Shape::FigureEight, 75, 12.0, 3),
        ),
        ("square-14".to_string(), world(Shape::Square, 90, 14.0, 4)),
        ("circle-12".to_string(), world(Shape::Circle, 70, 12.0, 5)),
    ]
}
