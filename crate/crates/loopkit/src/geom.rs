//! Planar geometry for the loop-detection search area.
//!
//! Poses are projected to the ground plane; the current motion segment is
//! extended into a ray, intersected against the earlier trajectory, and the
//! result is snapped to a contiguous index range of past keyframes. Only
//! frames inside that range are considered for loop matching.

use nalgebra::Isometry3;
use thiserror::Error;

/// Determinant / collinearity tolerance for the linear intersection solves.
/// Below this the ray and segment are treated as parallel.
const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("pose has non-finite translation")]
    InvalidPose,
    #[error("direction vector has zero or non-finite length")]
    InvalidDirection,
    #[error("segment endpoints coincide")]
    DegenerateSegment,
    #[error("need at least 3 projected poses, current index >= 2")]
    TooFewPoses,
}

/// A point on the ground plane, in meters. Coordinates are expected to be
/// finite; constructors of [`Ray`] and [`Segment`] reject non-finite input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub fn new(x: f64, y: f64) -> Self {
        PlanarPoint { x, y }
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A 2-D direction vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(&self, other: &Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(&self, other: &Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Rotated by +90 degrees (counter-clockwise).
    pub fn rot90(&self) -> Vec2 {
        Vec2 {
            x: -self.y,
            y: self.x,
        }
    }
}

fn diff(a: &PlanarPoint, b: &PlanarPoint) -> Vec2 {
    Vec2 {
        x: a.x - b.x,
        y: a.y - b.y,
    }
}

fn advance(p: &PlanarPoint, d: &Vec2, t: f64) -> PlanarPoint {
    PlanarPoint {
        x: p.x + t * d.x,
        y: p.y + t * d.y,
    }
}

/// A half-line: origin plus a unit direction, parameter domain t >= 0.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    origin: PlanarPoint,
    direction: Vec2,
}

impl Ray {
    /// Builds a ray, normalizing `direction`. Fails on zero-length or
    /// non-finite input.
    pub fn new(origin: PlanarPoint, direction: Vec2) -> Result<Ray, GeomError> {
        if !origin.is_finite() {
            return Err(GeomError::InvalidPose);
        }
        let n = direction.norm();
        if !n.is_finite() || n < PARALLEL_EPS {
            return Err(GeomError::InvalidDirection);
        }
        Ok(Ray {
            origin,
            direction: Vec2 {
                x: direction.x / n,
                y: direction.y / n,
            },
        })
    }

    /// Ray from `origin` through `target`.
    pub fn through(origin: PlanarPoint, target: PlanarPoint) -> Result<Ray, GeomError> {
        Ray::new(origin, diff(&target, &origin))
    }

    pub fn origin(&self) -> PlanarPoint {
        self.origin
    }

    pub fn direction(&self) -> Vec2 {
        self.direction
    }

    pub fn at(&self, t: f64) -> PlanarPoint {
        advance(&self.origin, &self.direction, t)
    }
}

/// A closed segment between two distinct points.
#[derive(Clone, Copy, Debug)]
pub struct Segment {
    a: PlanarPoint,
    b: PlanarPoint,
}

impl Segment {
    pub fn new(a: PlanarPoint, b: PlanarPoint) -> Result<Segment, GeomError> {
        if !a.is_finite() || !b.is_finite() {
            return Err(GeomError::InvalidPose);
        }
        if diff(&a, &b).norm() < PARALLEL_EPS {
            return Err(GeomError::DegenerateSegment);
        }
        Ok(Segment { a, b })
    }

    pub fn a(&self) -> PlanarPoint {
        self.a
    }

    pub fn b(&self) -> PlanarPoint {
        self.b
    }
}

/// An infinite line: point plus unit direction, parameter domain all of R.
#[derive(Clone, Copy, Debug)]
pub struct Line {
    pub point: PlanarPoint,
    pub direction: Vec2,
}

/// The contiguous range of past keyframes to match against, bounded by the
/// intersection points of the motion ray and its perpendicular with the
/// earlier trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchWindow {
    pub start_index: usize,
    pub end_index: usize,
    pub p_start: PlanarPoint,
    pub p_end: Option<PlanarPoint>,
}

/// Drops a rigid 3-D pose onto the ground plane: keeps (t_x, t_y), discards
/// z and all rotation.
pub fn project_pose(pose: &Isometry3<f64>) -> Result<PlanarPoint, GeomError> {
    let t = pose.translation.vector;
    if !(t.x.is_finite() && t.y.is_finite() && t.z.is_finite()) {
        return Err(GeomError::InvalidPose);
    }
    Ok(PlanarPoint { x: t.x, y: t.y })
}

/// Intersects a ray (t >= 0) with a closed segment.
///
/// Returns the intersection point and the ray parameter. A parallel,
/// collinear overlap yields the nearest overlap point (smallest parameter):
/// a robot retracing its own path is the canonical loop case and must not
/// be reported as "no intersection".
pub fn ray_segment_intersect(ray: &Ray, seg: &Segment) -> Option<(PlanarPoint, f64)> {
    let d = ray.direction;
    let e = diff(&seg.b, &seg.a);
    let det = d.cross(&e);
    let ao = diff(&seg.a, &ray.origin);
    if det.abs() < PARALLEL_EPS * e.norm() {
        // Parallel. Collinear only if seg.a sits on the ray's line
        // (d is unit, so the cross product is the signed distance).
        if d.cross(&ao).abs() > PARALLEL_EPS {
            return None;
        }
        let ta = ao.dot(&d);
        let tb = diff(&seg.b, &ray.origin).dot(&d);
        let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        if hi < 0.0 {
            return None;
        }
        let t = lo.max(0.0);
        return Some((ray.at(t), t));
    }
    let t = ao.cross(&e) / det;
    let u = ao.cross(&d) / det;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some((ray.at(t), t))
    } else {
        None
    }
}

/// The line through the ray origin perpendicular to the ray (direction
/// rotated +90 degrees). Cuts the far end of the search window.
pub fn perpendicular_at(ray: &Ray) -> Line {
    Line {
        point: ray.origin,
        direction: ray.direction.rot90(),
    }
}

/// Ray-ray intersection, both parameters >= 0. Returns the parameter on `a`.
fn ray_ray_intersect(a: &Ray, b: &Ray) -> Option<(PlanarPoint, f64)> {
    let det = a.direction.cross(&b.direction);
    let bo = diff(&b.origin, &a.origin);
    if det.abs() < PARALLEL_EPS {
        if a.direction.cross(&bo).abs() > PARALLEL_EPS {
            return None;
        }
        // Collinear rays: b covers a-parameters t >= t0 (same direction)
        // or t <= t0 (opposite), clipped to t >= 0.
        let t0 = bo.dot(&a.direction);
        let same_dir = a.direction.dot(&b.direction) > 0.0;
        let t = if same_dir {
            t0.max(0.0)
        } else if t0 >= 0.0 {
            0.0
        } else {
            return None;
        };
        return Some((a.at(t), t));
    }
    let t = bo.cross(&b.direction) / det;
    let s = bo.cross(&a.direction) / det;
    if t >= 0.0 && s >= 0.0 {
        Some((a.at(t), t))
    } else {
        None
    }
}

/// Line-segment intersection. Returns the point and the line parameter;
/// a collinear overlap yields the overlap point nearest the line's anchor.
fn line_segment_intersect(line: &Line, seg: &Segment) -> Option<(PlanarPoint, f64)> {
    let d = line.direction;
    let e = diff(&seg.b, &seg.a);
    let det = d.cross(&e);
    let ao = diff(&seg.a, &line.point);
    if det.abs() < PARALLEL_EPS * e.norm() {
        if d.cross(&ao).abs() > PARALLEL_EPS {
            return None;
        }
        let ta = ao.dot(&d);
        let tb = diff(&seg.b, &line.point).dot(&d);
        let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        let t = if lo <= 0.0 && 0.0 <= hi {
            0.0
        } else if lo > 0.0 {
            lo
        } else {
            hi
        };
        return Some((advance(&line.point, &d, t), t));
    }
    let t = ao.cross(&e) / det;
    let u = ao.cross(&d) / det;
    if (0.0..=1.0).contains(&u) {
        Some((advance(&line.point, &d, t), t))
    } else {
        None
    }
}

/// Index of the trajectory vertex in `projected[..=last]` nearest to `p`,
/// ties broken by the smaller index.
fn nearest_vertex(projected: &[PlanarPoint], last: usize, p: &PlanarPoint) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, v) in projected.iter().enumerate().take(last + 1) {
        let d = v.distance(p);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Builds the search window for the pose at `current_index`.
///
/// The motion ray runs from the previous projected position through the
/// current one. Every earlier trajectory segment up to
/// `current_index - min_loop_gap`, plus the backward extension of the very
/// first segment, is intersected against it; the hit with the smallest ray
/// parameter anchors the window start. The perpendicular through the
/// current position cuts the window's far end. If the ray hits nothing the
/// search falls back to the initial position, i.e. the whole eligible
/// prefix.
///
/// Returns `Ok(None)` when no past frame is old enough to be eligible.
pub fn compute_search_window(
    projected: &[PlanarPoint],
    current_index: usize,
    min_loop_gap: usize,
) -> Result<Option<SearchWindow>, GeomError> {
    if current_index < 2 || projected.len() <= current_index {
        return Err(GeomError::TooFewPoses);
    }
    let eligible_end = match current_index.checked_sub(min_loop_gap) {
        Some(e) => e,
        None => return Ok(None),
    };

    let motion = Ray::through(projected[current_index - 1], projected[current_index]);

    let mut best: Option<(PlanarPoint, f64)> = None;
    let mut consider = |hit: Option<(PlanarPoint, f64)>| {
        if let Some((p, t)) = hit {
            if best.is_none_or(|(_, bt)| t < bt) {
                best = Some((p, t));
            }
        }
    };

    if let Ok(ref ray) = motion {
        for k in 1..=eligible_end {
            if let Ok(seg) = Segment::new(projected[k - 1], projected[k]) {
                consider(ray_segment_intersect(ray, &seg));
            }
        }
        // Backward extension of the first segment: the trajectory may be
        // re-entered ahead of where recording started.
        if eligible_end >= 1 {
            if let Ok(back) = Ray::through(projected[1], projected[0]) {
                let from_start =
                    Ray::new(projected[0], back.direction()).expect("direction already normalized");
                consider(ray_ray_intersect(ray, &from_start));
            }
        }
    }

    let window = match (best, motion) {
        (Some((p, _)), Ok(ray)) => {
            let start_index = nearest_vertex(projected, eligible_end, &p);
            let perp = perpendicular_at(&Ray::new(projected[current_index], ray.direction())?);
            let mut p_end: Option<(PlanarPoint, f64)> = None;
            for k in 1..=eligible_end {
                if let Ok(seg) = Segment::new(projected[k - 1], projected[k]) {
                    if let Some((q, t)) = line_segment_intersect(&perp, &seg) {
                        if p_end.is_none_or(|(_, bt)| t.abs() < bt.abs()) {
                            p_end = Some((q, t));
                        }
                    }
                }
            }
            let (end_index, p_end) = match p_end {
                Some((q, _)) => {
                    let snapped = nearest_vertex(projected, eligible_end, &q);
                    if snapped > start_index {
                        (snapped, Some(q))
                    } else {
                        (eligible_end, Some(q))
                    }
                }
                None => (eligible_end, None),
            };
            SearchWindow {
                start_index,
                end_index,
                p_start: p,
                p_end,
            }
        }
        _ => SearchWindow {
            start_index: 0,
            end_index: eligible_end,
            p_start: projected[0],
            p_end: None,
        },
    };
    Ok(Some(window))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};

    fn p(x: f64, y: f64) -> PlanarPoint {
        PlanarPoint::new(x, y)
    }

    /// Dense-sampling intersection oracle: walk the ray in 1e-4 steps,
    /// bracket the minimum distance to the segment, then bisect. Fully
    /// independent of the closed-form solve.
    fn dense_oracle(ray: &Ray, seg: &Segment, t_max: f64) -> Option<(PlanarPoint, f64)> {
        fn dist_to_segment(q: &PlanarPoint, seg: &Segment) -> f64 {
            let e = Vec2::new(seg.b().x - seg.a().x, seg.b().y - seg.a().y);
            let w = Vec2::new(q.x - seg.a().x, q.y - seg.a().y);
            let len2 = e.dot(&e);
            let t = (w.dot(&e) / len2).clamp(0.0, 1.0);
            let proj = PlanarPoint::new(seg.a().x + t * e.x, seg.a().y + t * e.y);
            proj.distance(q)
        }
        let step = 1e-4;
        let n = (t_max / step).ceil() as usize;
        let mut best_t = 0.0;
        let mut best_d = f64::INFINITY;
        for i in 0..=n {
            let t = i as f64 * step;
            let d = dist_to_segment(&ray.at(t), seg);
            if d < best_d {
                best_d = d;
                best_t = t;
            }
        }
        // Refine around the bracket by ternary search.
        let mut lo = (best_t - step).max(0.0);
        let mut hi = best_t + step;
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if dist_to_segment(&ray.at(m1), seg) < dist_to_segment(&ray.at(m2), seg) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let t = 0.5 * (lo + hi);
        if dist_to_segment(&ray.at(t), seg) < 1e-9 {
            Some((ray.at(t), t))
        } else {
            None
        }
    }

    #[test]
    fn project_identity_is_origin() {
        let pose = Isometry3::identity();
        assert_eq!(project_pose(&pose).unwrap(), p(0.0, 0.0));
    }

    #[test]
    fn project_drops_z_and_rotation() {
        let pose = Isometry3::from_parts(
            Translation3::new(1.0, 2.0, 3.0),
            UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1),
        );
        assert_eq!(project_pose(&pose).unwrap(), p(1.0, 2.0));
    }

    #[test]
    fn project_is_yaw_invariant() {
        let a = Isometry3::from_parts(
            Translation3::new(4.0, -1.0, 0.5),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.7),
        );
        let b = Isometry3::from_parts(
            Translation3::new(4.0, -1.0, 0.5),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -2.1),
        );
        assert_eq!(project_pose(&a).unwrap(), project_pose(&b).unwrap());
    }

    #[test]
    fn project_rejects_non_finite() {
        let pose = Isometry3::from_parts(
            Translation3::new(f64::NAN, 0.0, 0.0),
            UnitQuaternion::identity(),
        );
        assert_eq!(project_pose(&pose), Err(GeomError::InvalidPose));
    }

    #[test]
    fn axis_aligned_crossing() {
        let ray = Ray::new(p(0.0, 0.0), Vec2::new(1.0, 0.0)).unwrap();
        let seg = Segment::new(p(2.0, -1.0), p(2.0, 1.0)).unwrap();
        let (q, t) = ray_segment_intersect(&ray, &seg).unwrap();
        assert_eq!(q, p(2.0, 0.0));
        assert_eq!(t, 2.0);
    }

    #[test]
    fn segment_behind_origin_misses() {
        let ray = Ray::new(p(0.0, 0.0), Vec2::new(1.0, 0.0)).unwrap();
        let seg = Segment::new(p(-2.0, -1.0), p(-2.0, 1.0)).unwrap();
        assert!(ray_segment_intersect(&ray, &seg).is_none());
    }

    #[test]
    fn oblique_crossing_matches_hand_solve_and_dense_oracle() {
        // Hand solve: point (0.6t, 0.8t) reaches y = 2 at t = 2.5,
        // x = 1.5 which lies inside [0, 3].
        let ray = Ray::new(p(0.0, 0.0), Vec2::new(0.6, 0.8)).unwrap();
        let seg = Segment::new(p(0.0, 2.0), p(3.0, 2.0)).unwrap();
        let (q, t) = ray_segment_intersect(&ray, &seg).unwrap();
        assert!((q.x - 1.5).abs() < 1e-12);
        assert!((q.y - 2.0).abs() < 1e-12);
        assert!((t - 2.5).abs() < 1e-12);

        let (oq, ot) = dense_oracle(&ray, &seg, 10.0).unwrap();
        assert!(oq.distance(&q) < 1e-6);
        assert!((ot - t).abs() < 1e-6);
    }

    #[test]
    fn collinear_overlap_returns_nearest_point() {
        let ray = Ray::new(p(0.0, 0.0), Vec2::new(1.0, 0.0)).unwrap();
        // Segment ahead on the same line: nearest overlap is its near end.
        let seg = Segment::new(p(3.0, 0.0), p(5.0, 0.0)).unwrap();
        let (q, t) = ray_segment_intersect(&ray, &seg).unwrap();
        assert_eq!(q, p(3.0, 0.0));
        assert_eq!(t, 3.0);
        // Segment straddling the origin: nearest overlap is the origin.
        let seg = Segment::new(p(-1.0, 0.0), p(2.0, 0.0)).unwrap();
        let (q, t) = ray_segment_intersect(&ray, &seg).unwrap();
        assert_eq!(q, p(0.0, 0.0));
        assert_eq!(t, 0.0);
        // Segment entirely behind: no overlap.
        let seg = Segment::new(p(-5.0, 0.0), p(-1.0, 0.0)).unwrap();
        assert!(ray_segment_intersect(&ray, &seg).is_none());
    }

    #[test]
    fn perpendicular_examples() {
        let ray = Ray::new(p(0.0, 0.0), Vec2::new(1.0, 0.0)).unwrap();
        let line = perpendicular_at(&ray);
        assert_eq!(line.point, p(0.0, 0.0));
        assert!((line.direction.x - 0.0).abs() < 1e-12);
        assert!((line.direction.y - 1.0).abs() < 1e-12);

        let ray = Ray::new(p(3.0, 4.0), Vec2::new(0.0, 1.0)).unwrap();
        let line = perpendicular_at(&ray);
        assert_eq!(line.point, p(3.0, 4.0));
        assert!((line.direction.x - -1.0).abs() < 1e-12);
        assert!((line.direction.y - 0.0).abs() < 1e-12);
    }

    #[test]
    fn perpendicular_is_orthogonal_for_random_rays() {
        let mut rng = crate::rng::Lcg64::new(901);
        for _ in 0..100 {
            let origin = p(rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0));
            let dir = Vec2::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            if dir.norm() < 1e-3 {
                continue;
            }
            let ray = Ray::new(origin, dir).unwrap();
            let line = perpendicular_at(&ray);
            assert!(ray.direction().dot(&line.direction).abs() < 1e-12);
        }
    }

    /// Axis-aligned square loop, side 10, 1 m spacing, counter-clockwise,
    /// starting at the origin heading +x. 40 poses make exactly one lap.
    fn square_loop(n: usize) -> Vec<PlanarPoint> {
        (0..n)
            .map(|i| {
                let s = (i % 40) as f64;
                if s < 10.0 {
                    p(s, 0.0)
                } else if s < 20.0 {
                    p(10.0, s - 10.0)
                } else if s < 30.0 {
                    p(30.0 - s, 10.0)
                } else {
                    p(0.0, 40.0 - s)
                }
            })
            .collect()
    }

    /// Exhaustive search-window oracle. Independent intersection and
    /// snapping code: the motion ray is modeled as a long segment and
    /// intersected with the classic orientation predicate.
    pub(crate) fn oracle_search_window(
        projected: &[PlanarPoint],
        current: usize,
        gap: usize,
    ) -> Option<SearchWindow> {
        fn seg_seg(
            p1: PlanarPoint,
            q1: PlanarPoint,
            p2: PlanarPoint,
            q2: PlanarPoint,
        ) -> Option<PlanarPoint> {
            // Closed-form via parametric solve, written against the segment
            // pair rather than ray/segment.
            let r = diff(&q1, &p1);
            let s = diff(&q2, &p2);
            let denom = r.cross(&s);
            let qp = diff(&p2, &p1);
            if denom.abs() < 1e-12 * r.norm() * s.norm() {
                if r.cross(&qp).abs() > 1e-9 * r.norm() {
                    return None;
                }
                // Collinear: pick the overlap point nearest p1.
                let len2 = r.dot(&r);
                let t0 = qp.dot(&r) / len2;
                let t1 = diff(&q2, &p1).dot(&r) / len2;
                let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
                let lo_c = lo.max(0.0);
                if lo_c > hi.min(1.0) {
                    return None;
                }
                return Some(advance(&p1, &r, lo_c));
            }
            let t = qp.cross(&s) / denom;
            let u = qp.cross(&r) / denom;
            if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
                Some(advance(&p1, &r, t))
            } else {
                None
            }
        }

        if current < 2 || projected.len() <= current {
            return None;
        }
        let eligible_end = current.checked_sub(gap)?;
        let o = projected[current - 1];
        let tgt = projected[current];
        let dir = diff(&tgt, &o);
        let span: f64 = projected.iter().map(|q| q.distance(&o)).fold(0.0, f64::max);
        let far_scale = 10.0 * (span + 1.0) / dir.norm().max(1e-12);
        let ray_far = advance(&o, &dir, far_scale);

        let mut best: Option<(PlanarPoint, f64)> = None;
        if dir.norm() >= 1e-9 {
            for k in 1..=eligible_end {
                if projected[k - 1].distance(&projected[k]) < 1e-9 {
                    continue;
                }
                if let Some(q) = seg_seg(o, ray_far, projected[k - 1], projected[k]) {
                    let t = q.distance(&o);
                    if best.is_none_or(|(_, bt)| t < bt) {
                        best = Some((q, t));
                    }
                }
            }
            if eligible_end >= 1 && projected[0].distance(&projected[1]) >= 1e-9 {
                let bdir = diff(&projected[0], &projected[1]);
                let bfar = advance(&projected[0], &bdir, far_scale * 10.0);
                if let Some(q) = seg_seg(o, ray_far, projected[0], bfar) {
                    let t = q.distance(&o);
                    if best.is_none_or(|(_, bt)| t < bt) {
                        best = Some((q, t));
                    }
                }
            }
        }

        let snap = |q: &PlanarPoint| -> usize {
            let mut bi = 0;
            let mut bd = f64::INFINITY;
            for (i, v) in projected.iter().enumerate().take(eligible_end + 1) {
                let d = v.distance(q);
                if d < bd {
                    bd = d;
                    bi = i;
                }
            }
            bi
        };

        match best {
            None => Some(SearchWindow {
                start_index: 0,
                end_index: eligible_end,
                p_start: projected[0],
                p_end: None,
            }),
            Some((q, _)) => {
                let start_index = snap(&q);
                // Perpendicular through the current pose, modeled as two
                // long half-segments anchored at the pose so a collinear
                // overlap resolves to the point nearest the pose.
                let n = dir.rot90();
                let plus = advance(&tgt, &n, far_scale);
                let minus = advance(&tgt, &n, -far_scale);
                let mut p_end: Option<(PlanarPoint, f64)> = None;
                for k in 1..=eligible_end {
                    if projected[k - 1].distance(&projected[k]) < 1e-9 {
                        continue;
                    }
                    for half in [plus, minus] {
                        if let Some(q2) = seg_seg(tgt, half, projected[k - 1], projected[k]) {
                            let t = q2.distance(&tgt);
                            if p_end.is_none_or(|(_, bt)| t < bt) {
                                p_end = Some((q2, t));
                            }
                        }
                    }
                }
                let (end_index, p_end) = match p_end {
                    Some((q2, _)) => {
                        let s = snap(&q2);
                        if s > start_index {
                            (s, Some(q2))
                        } else {
                            (eligible_end, Some(q2))
                        }
                    }
                    None => (eligible_end, None),
                };
                Some(SearchWindow {
                    start_index,
                    end_index,
                    p_start: q,
                    p_end,
                })
            }
        }
    }

    #[test]
    fn square_loop_window_anchors_at_start_edge() {
        let pts = square_loop(40);
        let current = 39;
        let w = compute_search_window(&pts, current, 5).unwrap().unwrap();
        // Oracle: exhaustive scan with independent intersection code.
        let ow = oracle_search_window(&pts, current, 5).unwrap();
        assert_eq!(w.start_index, ow.start_index);
        assert_eq!(w.end_index, ow.end_index);
        // Heading back down the left side the motion ray hits the first
        // segment at the origin; the window must contain the index-0 edge.
        assert_eq!(w.start_index, 0);
        assert!(w.p_start.distance(&p(0.0, 0.0)) < 1e-9);
        assert!(w.end_index <= current - 5);
    }

    #[test]
    fn straight_line_falls_back_to_initial_position() {
        let pts: Vec<PlanarPoint> = (0..21).map(|i| p(i as f64, 0.0)).collect();
        for current in [10, 15, 20] {
            let w = compute_search_window(&pts, current, 5).unwrap().unwrap();
            assert_eq!(w.start_index, 0);
            assert_eq!(w.end_index, current - 5);
            assert!(w.p_end.is_none());
            assert_eq!(w.p_start, p(0.0, 0.0));
        }
    }

    #[test]
    fn circle_window_prunes_prefix() {
        let n = 360;
        let pts: Vec<PlanarPoint> = (0..n)
            .map(|i| {
                let a = (i as f64).to_radians();
                p(10.0 * a.cos(), 10.0 * a.sin())
            })
            .collect();
        let current = 350;
        let w = compute_search_window(&pts, current, 30).unwrap().unwrap();
        let ow = oracle_search_window(&pts, current, 30).unwrap();
        assert_eq!(w.start_index, ow.start_index);
        assert_eq!(w.end_index, ow.end_index);
        // Anchored near the 0-degree start region.
        assert!(w.start_index <= 3);
        // The window prunes: shorter than the whole eligible prefix.
        let prefix_len = current - 30 + 1;
        let window_len = w.end_index - w.start_index + 1;
        assert!(window_len < prefix_len);
    }

    #[test]
    fn too_few_poses_is_an_error() {
        let pts = vec![p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.0)];
        assert_eq!(
            compute_search_window(&pts, 1, 5).unwrap_err(),
            GeomError::TooFewPoses
        );
        assert_eq!(
            compute_search_window(&pts, 5, 2).unwrap_err(),
            GeomError::TooFewPoses
        );
    }

    #[test]
    fn no_eligible_prefix_yields_none() {
        let pts = square_loop(10);
        assert!(compute_search_window(&pts, 5, 30).unwrap().is_none());
    }

    #[test]
    fn window_indices_respect_invariant() {
        let pts = square_loop(80);
        for current in 2..80 {
            if let Some(w) = compute_search_window(&pts, current, 7).unwrap() {
                assert!(w.start_index <= w.end_index);
                assert!(w.end_index <= current - 7);
            }
        }
    }

    #[test]
    fn window_matches_oracle_on_square_and_circle_sweeps() {
        let square = square_loop(75);
        let circle: Vec<PlanarPoint> = (0..90)
            .map(|i| {
                let a = (i as f64) * std::f64::consts::TAU / 60.0;
                p(8.0 * a.cos(), 8.0 * a.sin())
            })
            .collect();
        for pts in [&square, &circle] {
            for current in 2..pts.len() {
                let w = compute_search_window(pts, current, 30).unwrap();
                let ow = oracle_search_window(pts, current, 30);
                match (w, ow) {
                    (None, None) => {}
                    (Some(w), Some(ow)) => {
                        assert_eq!(w.start_index, ow.start_index, "current={current}");
                        assert_eq!(w.end_index, ow.end_index, "current={current}");
                    }
                    (w, ow) => panic!("presence mismatch at {current}: {w:?} vs {ow:?}"),
                }
            }
        }
    }

    #[test]
    fn window_is_invariant_under_rigid_motion() {
        let pts = square_loop(75);
        let transforms = [
            (0.0, 3.0, -4.0),
            (std::f64::consts::FRAC_PI_2, 10.0, 2.0),
            (1.2345, -7.0, 0.5),
            (-2.7, 100.0, -50.0),
        ];
        for current in [35, 50, 74] {
            let base = compute_search_window(&pts, current, 30).unwrap().unwrap();
            for &(ang, dx, dy) in &transforms {
                let moved: Vec<PlanarPoint> = pts
                    .iter()
                    .map(|q| {
                        p(
                            q.x * ang.cos() - q.y * ang.sin() + dx,
                            q.x * ang.sin() + q.y * ang.cos() + dy,
                        )
                    })
                    .collect();
                let w = compute_search_window(&moved, current, 30).unwrap().unwrap();
                assert_eq!(w.start_index, base.start_index);
                assert_eq!(w.end_index, base.end_index);
            }
        }
    }

    #[test]
    fn random_rays_agree_with_dense_oracle() {
        let mut rng = crate::rng::Lcg64::new(77);
        let mut hits = 0;
        for _ in 0..300 {
            let origin = p(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0));
            let dir = Vec2::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            if dir.norm() < 1e-3 {
                continue;
            }
            let ray = Ray::new(origin, dir).unwrap();
            let a = p(rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0));
            let b = p(rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0));
            let seg = match Segment::new(a, b) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let got = ray_segment_intersect(&ray, &seg);
            let want = dense_oracle(&ray, &seg, 40.0);
            match (got, want) {
                (None, None) => {}
                (Some((q, t)), Some((oq, ot))) => {
                    hits += 1;
                    assert!(q.distance(&oq) < 1e-6);
                    assert!((t - ot).abs() < 1e-6);
                }
                (g, w) => panic!("oracle disagreement: {g:?} vs {w:?}"),
            }
        }
        assert!(hits > 20, "fixture too easy: only {hits} intersections");
    }
}
