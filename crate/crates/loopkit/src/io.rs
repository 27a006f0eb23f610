//! Dataset and artifact persistence.
//!
//! Text trajectory formats (12-value pose matrices and timestamped
//! quaternion lines), binary PGM images, the versioned feature cache, the
//! pose-graph text format, detection reports, revisit ground truth, and
//! world manifests. Every parser works on untrusted bytes: malformed input
//! yields a structured error with a location, never a panic.

use crate::detector::DetectionReport;
use crate::features::{Descriptor256, GrayImage, InformativeFeature, Keypoint};
use crate::posegraph::{EdgeKind, PoseEdge, PoseGraph, PoseSE2};
use crate::synth::{FeatureMode, Shape, WorldSpec};
use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("empty file")]
    EmptyFile,
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("map point {point} references keyframe {owner} but only {len} exist")]
    BadIndex {
        point: usize,
        owner: usize,
        len: usize,
    },
    #[error("trajectory lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::ParseError {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, IoError> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("bad number {tok:?}")))
}

fn parse_usize(tok: &str, line: usize) -> Result<usize, IoError> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(line, format!("bad index {tok:?}")))
}

// ---------------------------------------------------------------------------
// Planar embedding
// ---------------------------------------------------------------------------

/// Which pose components carry the planar motion. `Xy` keeps (x, y) with
/// yaw about z; `Xz` keeps (x, z) with yaw about y, the usual camera-frame
/// convention of driving datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AxisMap {
    #[default]
    Xy,
    Xz,
}

impl AxisMap {
    pub fn parse(s: &str) -> Option<AxisMap> {
        match s {
            "xy" => Some(AxisMap::Xy),
            "xz" => Some(AxisMap::Xz),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AxisMap::Xy => "xy",
            AxisMap::Xz => "xz",
        }
    }
}

/// Extracts the planar pose under the axis map.
pub fn pose3_to_se2(pose: &Isometry3<f64>, map: AxisMap) -> PoseSE2 {
    let t = pose.translation.vector;
    let r = pose.rotation.to_rotation_matrix();
    let m = r.matrix();
    match map {
        AxisMap::Xy => PoseSE2::new(t.x, t.y, m[(1, 0)].atan2(m[(0, 0)])),
        // Rotation about +y by phi moves planar (x, z) clockwise, so the
        // planar heading is -phi.
        AxisMap::Xz => PoseSE2::new(t.x, t.z, -m[(0, 2)].atan2(m[(2, 2)])),
    }
}

/// Embeds a planar pose back into 3-D under the axis map.
pub fn se2_to_pose3(p: &PoseSE2, map: AxisMap) -> Isometry3<f64> {
    match map {
        AxisMap::Xy => Isometry3::from_parts(
            Translation3::new(p.x, p.y, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), p.theta),
        ),
        AxisMap::Xz => Isometry3::from_parts(
            Translation3::new(p.x, 0.0, p.y),
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -p.theta),
        ),
    }
}

/// Carries the out-of-plane components (z, roll, pitch) of `original`
/// through a planar correction: the residual between the original pose and
/// its planar embedding is re-applied on top of the corrected embedding.
pub fn reattach_passengers(
    original: &Isometry3<f64>,
    old_se2: &PoseSE2,
    new_se2: &PoseSE2,
    map: AxisMap,
) -> Isometry3<f64> {
    let residual = se2_to_pose3(old_se2, map).inverse() * original;
    se2_to_pose3(new_se2, map) * residual
}

// ---------------------------------------------------------------------------
// 12-value pose-matrix trajectories (KITTI convention)
// ---------------------------------------------------------------------------

/// Poses plus non-fatal read diagnostics.
#[derive(Clone, Debug)]
pub struct TrajectoryLoad {
    pub poses: Vec<Isometry3<f64>>,
    pub warnings: Vec<String>,
}

/// Parses lines of 12 ASCII decimals: a row-major 3x4 [R | t]. Rotation
/// orthonormality is not enforced; defects beyond 1e-3 produce a warning.
pub fn parse_kitti(text: &str) -> Result<TrajectoryLoad, IoError> {
    let mut poses = Vec::new();
    let mut warnings = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.len() != 12 {
            return Err(parse_err(
                line,
                format!("expected 12 fields, got {}", toks.len()),
            ));
        }
        let mut v = [0.0f64; 12];
        for (i, tok) in toks.iter().enumerate() {
            v[i] = parse_f64(tok, line)?;
            if !v[i].is_finite() {
                return Err(parse_err(line, format!("non-finite value {tok:?}")));
            }
        }
        let m = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let defect = (m * m.transpose() - Matrix3::identity()).abs().max();
        if defect > 1e-3 {
            warnings.push(format!(
                "line {line}: rotation orthonormality defect {defect:.2e}"
            ));
        }
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        poses.push(Isometry3::from_parts(
            Translation3::new(v[3], v[7], v[11]),
            rot,
        ));
    }
    if poses.is_empty() {
        return Err(IoError::EmptyFile);
    }
    Ok(TrajectoryLoad { poses, warnings })
}

pub fn format_kitti(poses: &[Isometry3<f64>]) -> String {
    let mut out = String::new();
    for p in poses {
        let r = p.rotation.to_rotation_matrix();
        let m = r.matrix();
        let t = p.translation.vector;
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            t.x,
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            t.y,
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
            t.z
        );
    }
    out
}

pub fn load_kitti(path: impl AsRef<Path>) -> Result<TrajectoryLoad, IoError> {
    parse_kitti(&std::fs::read_to_string(path)?)
}

pub fn save_kitti(poses: &[Isometry3<f64>], path: impl AsRef<Path>) -> Result<(), IoError> {
    Ok(std::fs::write(path, format_kitti(poses))?)
}

// ---------------------------------------------------------------------------
// Timestamped quaternion trajectories (TUM convention)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TimestampedPose {
    pub timestamp: f64,
    pub pose: Isometry3<f64>,
}

#[derive(Clone, Debug)]
pub struct TumLoad {
    pub poses: Vec<TimestampedPose>,
    pub warnings: Vec<String>,
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines. Quaternions are
/// normalized on read; unit-norm defects beyond 1e-3 and non-monotone
/// timestamps are warnings (order is preserved).
pub fn parse_tum(text: &str) -> Result<TumLoad, IoError> {
    let mut poses: Vec<TimestampedPose> = Vec::new();
    let mut warnings = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 8 {
            return Err(parse_err(
                line,
                format!("expected 8 fields, got {}", toks.len()),
            ));
        }
        let mut v = [0.0f64; 8];
        for (i, tok) in toks.iter().enumerate() {
            v[i] = parse_f64(tok, line)?;
            if !v[i].is_finite() {
                return Err(parse_err(line, format!("non-finite value {tok:?}")));
            }
        }
        let norm = (v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]).sqrt();
        if norm < 1e-9 {
            return Err(parse_err(line, "zero-norm quaternion"));
        }
        if (norm - 1.0).abs() > 1e-3 {
            warnings.push(format!(
                "line {line}: quaternion norm {norm:.6}, normalized on read"
            ));
        }
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[7], v[4], v[5], v[6]));
        if let Some(prev) = poses.last() {
            if v[0] < prev.timestamp {
                warnings.push(format!(
                    "line {line}: timestamp {} precedes {}, order preserved",
                    v[0], prev.timestamp
                ));
            }
        }
        poses.push(TimestampedPose {
            timestamp: v[0],
            pose: Isometry3::from_parts(Translation3::new(v[1], v[2], v[3]), q),
        });
    }
    if poses.is_empty() {
        return Err(IoError::EmptyFile);
    }
    Ok(TumLoad { poses, warnings })
}

pub fn format_tum(poses: &[TimestampedPose]) -> String {
    let mut out = String::new();
    for p in poses {
        let t = p.pose.translation.vector;
        let q = p.pose.rotation.quaternion();
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            p.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        );
    }
    out
}

pub fn load_tum(path: impl AsRef<Path>) -> Result<TumLoad, IoError> {
    parse_tum(&std::fs::read_to_string(path)?)
}

pub fn save_tum(poses: &[TimestampedPose], path: impl AsRef<Path>) -> Result<(), IoError> {
    Ok(std::fs::write(path, format_tum(poses))?)
}

// ---------------------------------------------------------------------------
// Binary PGM (P5, maxval 255)
// ---------------------------------------------------------------------------

/// Reads one header token, skipping whitespace and `#` comments.
fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, IoError> {
    if bytes.is_empty() {
        return Err(IoError::EmptyFile);
    }
    let mut pos = 0usize;
    let magic = pgm_token(bytes, &mut pos).ok_or(IoError::EmptyFile)?;
    match magic {
        b"P5" => {}
        b"P1" | b"P2" | b"P3" | b"P4" | b"P6" | b"P7" => {
            return Err(IoError::UnsupportedFormat(format!(
                "magic {:?}, only binary P5 is supported",
                String::from_utf8_lossy(magic)
            )));
        }
        other => {
            return Err(parse_err(
                1,
                format!("bad magic {:?}", String::from_utf8_lossy(other)),
            ));
        }
    }
    let mut header_num = |name: &str| -> Result<u64, IoError> {
        let tok =
            pgm_token(bytes, &mut pos).ok_or_else(|| parse_err(1, format!("missing {name}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| parse_err(1, format!("bad {name}")))
    };
    let width = header_num("width")?;
    let height = header_num("height")?;
    let maxval = header_num("maxval")?;
    if maxval > 255 {
        return Err(IoError::UnsupportedFormat(format!(
            "maxval {maxval}, only 255 supported"
        )));
    }
    if maxval == 0 {
        return Err(parse_err(1, "maxval 0"));
    }
    if width == 0 || height == 0 || width > 1 << 16 || height > 1 << 16 {
        return Err(parse_err(1, format!("bad dimensions {width}x{height}")));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(parse_err(1, "missing header terminator"));
    }
    pos += 1;
    let need = (width * height) as usize;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(parse_err(
            1,
            format!("pixel data truncated: {} of {need} bytes", data.len()),
        ));
    }
    GrayImage::new(width as u32, height as u32, data[..need].to_vec())
        .map_err(|e| parse_err(1, e.to_string()))
}

pub fn format_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage, IoError> {
    parse_pgm(&std::fs::read(path)?)
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), IoError> {
    Ok(std::fs::write(path, format_pgm(img))?)
}

// ---------------------------------------------------------------------------
// Feature cache (LCFC 1)
// ---------------------------------------------------------------------------

/// Per-frame retained features, at most `k` each.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCache {
    pub k: usize,
    pub frames: Vec<(usize, Vec<InformativeFeature>)>,
}

fn hex_of(d: &Descriptor256) -> String {
    let mut s = String::with_capacity(64);
    for b in &d.0 {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn descriptor_of_hex(hex: &str, line: usize) -> Result<Descriptor256, IoError> {
    if hex.len() != 64 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(parse_err(line, "descriptor must be 64 hex characters"));
    }
    let mut bytes = [0u8; 32];
    for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
        let s = std::str::from_utf8(chunk).map_err(|_| parse_err(line, "bad hex"))?;
        bytes[i] = u8::from_str_radix(s, 16).map_err(|_| parse_err(line, "bad hex"))?;
    }
    Ok(Descriptor256(bytes))
}

pub fn format_feature_cache(cache: &FeatureCache) -> String {
    let mut out = format!("LCFC 1 {}\n", cache.k);
    for (index, feats) in &cache.frames {
        let _ = writeln!(out, "FRAME {} {}", index, feats.len());
        for f in feats {
            let _ = writeln!(
                out,
                "FEAT {} {} {} {} {} {}",
                f.keypoint.x,
                f.keypoint.y,
                f.keypoint.response,
                f.keypoint.orientation,
                f.score,
                hex_of(&f.descriptor)
            );
        }
    }
    out
}

pub fn parse_feature_cache(text: &str) -> Result<FeatureCache, IoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(IoError::EmptyFile)?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 || toks[0] != "LCFC" {
        return Err(parse_err(1, "expected header `LCFC 1 <K>`"));
    }
    if toks[1] != "1" {
        return Err(IoError::UnsupportedFormat(format!(
            "feature cache version {}",
            toks[1]
        )));
    }
    let k = parse_usize(toks[2], 1)?;
    let mut frames: Vec<(usize, Vec<InformativeFeature>)> = Vec::new();
    let mut remaining = 0usize;
    for (ln, raw) in lines {
        let line = ln + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks[0] {
            "FRAME" => {
                if remaining > 0 {
                    return Err(parse_err(line, "FRAME before previous frame completed"));
                }
                if toks.len() != 3 {
                    return Err(parse_err(line, "expected `FRAME <index> <count>`"));
                }
                let index = parse_usize(toks[1], line)?;
                let count = parse_usize(toks[2], line)?;
                if count > k {
                    return Err(parse_err(line, format!("count {count} exceeds K = {k}")));
                }
                frames.push((index, Vec::with_capacity(count)));
                remaining = count;
            }
            "FEAT" => {
                if remaining == 0 {
                    return Err(parse_err(line, "FEAT outside a frame"));
                }
                if toks.len() != 7 {
                    return Err(parse_err(line, "expected 7 fields"));
                }
                let x = parse_usize(toks[1], line)? as u32;
                let y = parse_usize(toks[2], line)? as u32;
                let response = toks[3]
                    .parse::<f32>()
                    .map_err(|_| parse_err(line, "bad response"))?;
                let orientation = toks[4]
                    .parse::<f32>()
                    .map_err(|_| parse_err(line, "bad orientation"))?;
                let score = toks[5]
                    .parse::<u16>()
                    .map_err(|_| parse_err(line, "bad score"))?;
                let descriptor = descriptor_of_hex(toks[6], line)?;
                if score != descriptor.popcount() {
                    return Err(parse_err(
                        line,
                        format!("score {score} is not the descriptor popcount"),
                    ));
                }
                let kp = Keypoint {
                    x,
                    y,
                    response,
                    orientation,
                };
                frames
                    .last_mut()
                    .expect("remaining > 0 implies a frame")
                    .1
                    .push(InformativeFeature {
                        keypoint: kp,
                        descriptor,
                        score,
                    });
                remaining -= 1;
            }
            other => return Err(parse_err(line, format!("unknown record {other:?}"))),
        }
    }
    if remaining > 0 {
        return Err(parse_err(
            text.lines().count(),
            "truncated: frame incomplete",
        ));
    }
    Ok(FeatureCache { k, frames })
}

pub fn load_feature_cache(path: impl AsRef<Path>) -> Result<FeatureCache, IoError> {
    parse_feature_cache(&std::fs::read_to_string(path)?)
}

pub fn save_feature_cache(cache: &FeatureCache, path: impl AsRef<Path>) -> Result<(), IoError> {
    Ok(std::fs::write(path, format_feature_cache(cache))?)
}

// ---------------------------------------------------------------------------
// Pose-graph text format
// ---------------------------------------------------------------------------

/// One record per line: `VERTEX_SE2 <id> <x> <y> <theta>` and
/// `EDGE_SE2 <from> <to> <dx> <dy> <dtheta> <i11> <i12> <i13> <i22> <i23>
/// <i33>` with the information matrix upper-triangular. Consecutive-vertex
/// edges load as odometry, all others as loop edges.
pub fn format_pose_graph(graph: &PoseGraph) -> String {
    let mut out = String::new();
    for (id, v) in graph.vertices().iter().enumerate() {
        let _ = writeln!(out, "VERTEX_SE2 {} {} {} {}", id, v.x, v.y, v.theta);
    }
    for e in graph.edges() {
        let m = &e.measurement;
        let i = &e.information;
        let _ = writeln!(
            out,
            "EDGE_SE2 {} {} {} {} {} {} {} {} {} {} {}",
            e.from,
            e.to,
            m.x,
            m.y,
            m.theta,
            i[(0, 0)],
            i[(0, 1)],
            i[(0, 2)],
            i[(1, 1)],
            i[(1, 2)],
            i[(2, 2)]
        );
    }
    out
}

pub fn parse_pose_graph(text: &str) -> Result<PoseGraph, IoError> {
    let mut vertices: Vec<Option<PoseSE2>> = Vec::new();
    let mut raw_edges: Vec<(usize, PoseEdge)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        match toks[0] {
            "VERTEX_SE2" => {
                if toks.len() != 5 {
                    return Err(parse_err(
                        line,
                        "expected `VERTEX_SE2 <id> <x> <y> <theta>`",
                    ));
                }
                let id = parse_usize(toks[1], line)?;
                if id > 1 << 24 {
                    return Err(parse_err(line, format!("vertex id {id} out of range")));
                }
                let x = parse_f64(toks[2], line)?;
                let y = parse_f64(toks[3], line)?;
                let theta = parse_f64(toks[4], line)?;
                if vertices.len() <= id {
                    vertices.resize(id + 1, None);
                }
                if vertices[id].is_some() {
                    return Err(parse_err(line, format!("duplicate vertex {id}")));
                }
                vertices[id] = Some(PoseSE2::new(x, y, theta));
            }
            "EDGE_SE2" => {
                if toks.len() != 12 {
                    return Err(parse_err(
                        line,
                        format!("expected 12 fields, got {}", toks.len()),
                    ));
                }
                let from = parse_usize(toks[1], line)?;
                let to = parse_usize(toks[2], line)?;
                let mut v = [0.0f64; 9];
                for (i, tok) in toks[3..].iter().enumerate() {
                    v[i] = parse_f64(tok, line)?;
                }
                let measurement = PoseSE2::new(v[0], v[1], v[2]);
                let information =
                    Matrix3::new(v[3], v[4], v[5], v[4], v[6], v[7], v[5], v[7], v[8]);
                let kind = if to == from + 1 {
                    EdgeKind::Odometry
                } else {
                    EdgeKind::Loop
                };
                let edge = PoseEdge::new(from, to, measurement, information, kind)
                    .map_err(|e| parse_err(line, e.to_string()))?;
                raw_edges.push((line, edge));
            }
            other => return Err(parse_err(line, format!("unknown record {other:?}"))),
        }
    }
    if vertices.is_empty() {
        return Err(IoError::EmptyFile);
    }
    let vertices: Vec<PoseSE2> = vertices
        .into_iter()
        .enumerate()
        .map(|(id, v)| v.ok_or_else(|| parse_err(0, format!("missing vertex {id}"))))
        .collect::<Result<_, _>>()?;
    let mut edges = Vec::with_capacity(raw_edges.len());
    for (line, e) in raw_edges {
        if e.from >= vertices.len() || e.to >= vertices.len() {
            return Err(parse_err(line, "edge references missing vertex"));
        }
        edges.push(e);
    }
    PoseGraph::new(vertices, edges, 0).map_err(|e| parse_err(0, e.to_string()))
}

pub fn load_pose_graph(path: impl AsRef<Path>) -> Result<PoseGraph, IoError> {
    parse_pose_graph(&std::fs::read_to_string(path)?)
}

pub fn save_pose_graph(graph: &PoseGraph, path: impl AsRef<Path>) -> Result<(), IoError> {
    Ok(std::fs::write(path, format_pose_graph(graph))?)
}

// ---------------------------------------------------------------------------
// Detection report
// ---------------------------------------------------------------------------

/// A detection report read back from disk.
#[derive(Clone, Debug, Default)]
pub struct ReportFile {
    pub config: Vec<(String, String)>,
    /// (currentIndex, matchedIndex, numPairs)
    pub loops: Vec<(usize, usize, usize)>,
    pub fullscan_loops: Vec<(usize, usize, usize)>,
    pub comparisons: Option<(u64, u64)>,
    pub features_stored: Option<usize>,
    pub notes: Vec<(String, String)>,
}

/// Serializes a report. `config` echoes the fully resolved run
/// configuration for reproducibility.
pub fn format_detection_report(report: &DetectionReport, config: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in config {
        let _ = writeln!(out, "CONFIG {k} {v}");
    }
    for e in &report.events {
        let _ = writeln!(
            out,
            "LOOP {} {} {}",
            e.current_index,
            e.matched_index,
            e.pairs.len()
        );
    }
    if let Some(baseline) = &report.baseline_events {
        for e in baseline {
            let _ = writeln!(
                out,
                "LOOP_FULLSCAN {} {} {}",
                e.current_index,
                e.matched_index,
                e.pairs.len()
            );
        }
    }
    let _ = writeln!(
        out,
        "COMPARISONS {} {}",
        report.comparisons_windowed, report.comparisons_fullscan
    );
    let _ = writeln!(out, "FEATURES_STORED {}", report.features_stored);
    let _ = writeln!(
        out,
        "NOTE frames_without_mask {}",
        report.frames_without_mask
    );
    out
}

pub fn parse_detection_report(text: &str) -> Result<ReportFile, IoError> {
    let mut file = ReportFile::default();
    let mut saw_any = false;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        saw_any = true;
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        match toks[0] {
            "CONFIG" if toks.len() >= 3 => {
                file.config.push((toks[1].to_string(), toks[2..].join(" ")));
            }
            "LOOP" if toks.len() == 4 => {
                file.loops.push((
                    parse_usize(toks[1], line)?,
                    parse_usize(toks[2], line)?,
                    parse_usize(toks[3], line)?,
                ));
            }
            "LOOP_FULLSCAN" if toks.len() == 4 => {
                file.fullscan_loops.push((
                    parse_usize(toks[1], line)?,
                    parse_usize(toks[2], line)?,
                    parse_usize(toks[3], line)?,
                ));
            }
            "COMPARISONS" if toks.len() == 3 => {
                let w = toks[1]
                    .parse::<u64>()
                    .map_err(|_| parse_err(line, "bad comparison count"))?;
                let f = toks[2]
                    .parse::<u64>()
                    .map_err(|_| parse_err(line, "bad comparison count"))?;
                file.comparisons = Some((w, f));
            }
            "FEATURES_STORED" if toks.len() == 2 => {
                file.features_stored = Some(parse_usize(toks[1], line)?);
            }
            "NOTE" if toks.len() >= 3 => {
                file.notes.push((toks[1].to_string(), toks[2..].join(" ")));
            }
            other => {
                return Err(parse_err(line, format!("malformed record {other:?}")));
            }
        }
    }
    if !saw_any {
        return Err(IoError::EmptyFile);
    }
    Ok(file)
}

pub fn load_detection_report(path: impl AsRef<Path>) -> Result<ReportFile, IoError> {
    parse_detection_report(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Revisit ground truth
// ---------------------------------------------------------------------------

pub fn format_revisits(pairs: &[(usize, usize)]) -> String {
    let mut out = String::new();
    for &(i, j) in pairs {
        let _ = writeln!(out, "REVISIT {i} {j}");
    }
    out
}

pub fn parse_revisits(text: &str) -> Result<Vec<(usize, usize)>, IoError> {
    let mut pairs = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 3 || toks[0] != "REVISIT" {
            return Err(parse_err(line, "expected `REVISIT <i> <j>`"));
        }
        pairs.push((parse_usize(toks[1], line)?, parse_usize(toks[2], line)?));
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// World manifest
// ---------------------------------------------------------------------------

pub fn format_world_spec(spec: &WorldSpec) -> String {
    format!(
        "shape {}\nposes {}\nscale {}\ndrift_rot {}\ndrift_trans {}\nseed {}\nmode {}\nlandmarks_per_cell {}\n",
        spec.shape.name(),
        spec.num_poses,
        spec.scale,
        spec.drift_rot_per_step,
        spec.drift_trans_per_step,
        spec.noise_seed,
        spec.feature_mode.name(),
        spec.landmarks_per_cell
    )
}

pub fn parse_world_spec(text: &str) -> Result<WorldSpec, IoError> {
    let mut spec = WorldSpec::default();
    let mut saw_any = false;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(line, "expected `<key> <value>`"));
        }
        saw_any = true;
        match toks[0] {
            "shape" => {
                spec.shape = Shape::parse(toks[1])
                    .ok_or_else(|| parse_err(line, format!("unknown shape {:?}", toks[1])))?;
            }
            "poses" => spec.num_poses = parse_usize(toks[1], line)?,
            "scale" => spec.scale = parse_f64(toks[1], line)?,
            "drift_rot" => spec.drift_rot_per_step = parse_f64(toks[1], line)?,
            "drift_trans" => spec.drift_trans_per_step = parse_f64(toks[1], line)?,
            "seed" => {
                spec.noise_seed = toks[1]
                    .parse::<u64>()
                    .map_err(|_| parse_err(line, "bad seed"))?;
            }
            "mode" => {
                spec.feature_mode = FeatureMode::parse(toks[1])
                    .ok_or_else(|| parse_err(line, format!("unknown mode {:?}", toks[1])))?;
            }
            "landmarks_per_cell" => spec.landmarks_per_cell = parse_usize(toks[1], line)?,
            other => return Err(parse_err(line, format!("unknown key {other:?}"))),
        }
    }
    if !saw_any {
        return Err(IoError::EmptyFile);
    }
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Map correction
// ---------------------------------------------------------------------------

/// A 3-D map point owned by the keyframe that first observed it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub owner: usize,
}

/// Re-expresses map points through their owner keyframes after a
/// trajectory correction: p' = T_after(owner) * T_before(owner)^-1 * p.
/// The planar transform acts on (x, y); z passes through.
pub fn apply_correction(
    points: &[MapPoint],
    before: &[PoseSE2],
    after: &[PoseSE2],
) -> Result<Vec<MapPoint>, IoError> {
    if before.len() != after.len() {
        return Err(IoError::LengthMismatch {
            a: before.len(),
            b: after.len(),
        });
    }
    points
        .iter()
        .enumerate()
        .map(|(pi, p)| {
            if p.owner >= before.len() {
                return Err(IoError::BadIndex {
                    point: pi,
                    owner: p.owner,
                    len: before.len(),
                });
            }
            let delta = after[p.owner].compose(&before[p.owner].inverse());
            let (x, y) = delta.transform_point(p.x, p.y);
            Ok(MapPoint {
                x,
                y,
                z: p.z,
                owner: p.owner,
            })
        })
        .collect()
}
