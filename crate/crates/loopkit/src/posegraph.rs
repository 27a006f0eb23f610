//! SE(2) pose-graph construction and nonlinear least-squares optimization.
//!
//! Vertices are planar poses, edges are relative-pose measurements with
//! 3x3 information matrices. After a loop edge is added the whole
//! trajectory is corrected by Levenberg-Marquardt on the total objective
//! sum(r' * Omega * r), with one anchor vertex held fixed to pin the gauge.

use crate::detector::LoopCandidate;
use nalgebra::{Cholesky, DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PoseGraphError {
    #[error("need at least 2 poses")]
    TooFewPoses,
    #[error("edge references vertex {index} but graph has {len} vertices")]
    BadIndex { index: usize, len: usize },
    #[error("edge endpoints must differ")]
    SelfEdge,
    #[error("information matrix is not symmetric positive-definite")]
    BadInformation,
    #[error("graph is not connected")]
    Disconnected,
    #[error("optimization diverged (damping exceeded 1e8)")]
    Diverged,
}

/// Wraps an angle to (-pi, pi]. In-range values pass through untouched so
/// that already-normalized angles stay bit-identical.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let a = (theta + PI).rem_euclid(TAU) - PI;
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// A planar rigid motion: translation plus heading in (-pi, pi].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PoseSE2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        PoseSE2 {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        PoseSE2 {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    /// Group composition: `self` followed by `other` in `self`'s frame.
    pub fn compose(&self, other: &PoseSE2) -> PoseSE2 {
        let (s, c) = self.theta.sin_cos();
        PoseSE2 {
            x: self.x + c * other.x - s * other.y,
            y: self.y + s * other.x + c * other.y,
            theta: wrap_angle(self.theta + other.theta),
        }
    }

    pub fn inverse(&self) -> PoseSE2 {
        let (s, c) = self.theta.sin_cos();
        PoseSE2 {
            x: -(c * self.x + s * self.y),
            y: s * self.x - c * self.y,
            theta: wrap_angle(-self.theta),
        }
    }

    /// Relative pose taking `self` to `other`: inverse(self) * other.
    /// Written out directly (not as inverse-then-compose) so that the
    /// residual evaluation can reproduce it bit for bit.
    pub fn between(&self, other: &PoseSE2) -> PoseSE2 {
        let (s, c) = self.theta.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        PoseSE2 {
            x: c * dx + s * dy,
            y: -s * dx + c * dy,
            theta: wrap_angle(other.theta - self.theta),
        }
    }

    /// Applies the motion to a planar point.
    pub fn transform_point(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Odometry,
    Loop,
}

/// A relative-pose constraint between two vertices. The measurement is
/// expressed in the `from` vertex frame; the information matrix must be
/// symmetric positive-definite.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseEdge {
    pub from: usize,
    pub to: usize,
    pub measurement: PoseSE2,
    pub information: Matrix3<f64>,
    pub kind: EdgeKind,
}

impl PoseEdge {
    pub fn new(
        from: usize,
        to: usize,
        measurement: PoseSE2,
        information: Matrix3<f64>,
        kind: EdgeKind,
    ) -> Result<Self, PoseGraphError> {
        if from == to {
            return Err(PoseGraphError::SelfEdge);
        }
        let sym_defect = (information - information.transpose()).abs().max();
        if sym_defect > 1e-9 * information.abs().max().max(1.0) {
            return Err(PoseGraphError::BadInformation);
        }
        if Cholesky::new(information).is_none() {
            return Err(PoseGraphError::BadInformation);
        }
        Ok(PoseEdge {
            from,
            to,
            measurement,
            information,
            kind,
        })
    }
}

/// Default odometry information: diag(100, 100, 400) in 1/m^2 and 1/rad^2.
pub fn default_odometry_information() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(100.0, 100.0, 400.0))
}

/// Default loop-closure information: diag(1000, 1000, 4000).
pub fn default_loop_information() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1000.0, 1000.0, 4000.0))
}

/// Vertices, edges and the fixed anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGraph {
    vertices: Vec<PoseSE2>,
    edges: Vec<PoseEdge>,
    anchor_index: usize,
}

impl PoseGraph {
    pub fn new(
        vertices: Vec<PoseSE2>,
        edges: Vec<PoseEdge>,
        anchor_index: usize,
    ) -> Result<Self, PoseGraphError> {
        let len = vertices.len();
        if len < 2 {
            return Err(PoseGraphError::TooFewPoses);
        }
        if anchor_index >= len {
            return Err(PoseGraphError::BadIndex {
                index: anchor_index,
                len,
            });
        }
        for e in &edges {
            for &i in [e.from, e.to].iter() {
                if i >= len {
                    return Err(PoseGraphError::BadIndex { index: i, len });
                }
            }
        }
        Ok(PoseGraph {
            vertices,
            edges,
            anchor_index,
        })
    }

    /// One vertex per pose, one odometry edge between each consecutive
    /// pair, anchored at vertex 0. Edge measurements are the relative
    /// poses of the input itself, so the fresh graph has zero residual.
    pub fn build_from_trajectory(
        poses: &[PoseSE2],
        odom_info: Matrix3<f64>,
    ) -> Result<Self, PoseGraphError> {
        if poses.len() < 2 {
            return Err(PoseGraphError::TooFewPoses);
        }
        let mut edges = Vec::with_capacity(poses.len() - 1);
        for i in 0..poses.len() - 1 {
            edges.push(PoseEdge::new(
                i,
                i + 1,
                poses[i].between(&poses[i + 1]),
                odom_info,
                EdgeKind::Odometry,
            )?);
        }
        Ok(PoseGraph {
            vertices: poses.to_vec(),
            edges,
            anchor_index: 0,
        })
    }

    /// Appends a loop edge from the matched (older) frame to the current
    /// one. Duplicate loop edges are allowed; each contributes to the
    /// objective.
    pub fn add_loop_edge(
        &mut self,
        candidate: &LoopCandidate,
        measurement: PoseSE2,
        loop_info: Matrix3<f64>,
    ) -> Result<(), PoseGraphError> {
        self.add_loop_edge_between(
            candidate.matched_index,
            candidate.current_index,
            measurement,
            loop_info,
        )
    }

    pub fn add_loop_edge_between(
        &mut self,
        from: usize,
        to: usize,
        measurement: PoseSE2,
        loop_info: Matrix3<f64>,
    ) -> Result<(), PoseGraphError> {
        let len = self.vertices.len();
        for &i in [from, to].iter() {
            if i >= len {
                return Err(PoseGraphError::BadIndex { index: i, len });
            }
        }
        self.edges.push(PoseEdge::new(
            from,
            to,
            measurement,
            loop_info,
            EdgeKind::Loop,
        )?);
        Ok(())
    }

    pub fn vertices(&self) -> &[PoseSE2] {
        &self.vertices
    }

    pub fn edges(&self) -> &[PoseEdge] {
        &self.edges
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor_index
    }

    fn is_connected(&self) -> bool {
        let n = self.vertices.len();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.from].push(e.to);
            adj[e.to].push(e.from);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.anchor_index];
        seen[self.anchor_index] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

fn rot(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// d/dtheta of R(theta)^T.
fn drot_t(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(-s, c, -c, -s)
}

fn residual_of(edge: &PoseEdge, from: &PoseSE2, to: &PoseSE2) -> Vector3<f64> {
    // between(measurement, between(from, to)); the predicted relative pose
    // uses the same expression as `between` so that a graph built from its
    // own vertices has exactly zero residual.
    let predicted = from.between(to);
    let m = &edge.measurement;
    let (sm, cm) = m.theta.sin_cos();
    let dx = predicted.x - m.x;
    let dy = predicted.y - m.y;
    Vector3::new(
        cm * dx + sm * dy,
        -sm * dx + cm * dy,
        wrap_angle(predicted.theta - m.theta),
    )
}

/// Residual of an edge against the graph's current vertex values:
/// the log-coordinates of measurement^-1 * (v_from^-1 * v_to), with the
/// angle wrapped to (-pi, pi].
pub fn edge_residual(edge: &PoseEdge, graph: &PoseGraph) -> Vector3<f64> {
    residual_of(edge, &graph.vertices[edge.from], &graph.vertices[edge.to])
}

/// Analytic Jacobians of the residual w.r.t. the from- and to-vertex
/// parameters (x, y, theta).
pub fn edge_jacobians(
    edge: &PoseEdge,
    from: &PoseSE2,
    to: &PoseSE2,
) -> (Matrix3<f64>, Matrix3<f64>) {
    let rm_t = rot(edge.measurement.theta).transpose();
    let ri_t = rot(from.theta).transpose();
    let dt = Vector2::new(to.x - from.x, to.y - from.y);

    let a_tt = -rm_t * ri_t;
    let a_tth = rm_t * drot_t(from.theta) * dt;
    let b_tt = rm_t * ri_t;

    let mut a = Matrix3::zeros();
    a.fixed_view_mut::<2, 2>(0, 0).copy_from(&a_tt);
    a.fixed_view_mut::<2, 1>(0, 2).copy_from(&a_tth);
    a[(2, 2)] = -1.0;

    let mut b = Matrix3::zeros();
    b.fixed_view_mut::<2, 2>(0, 0).copy_from(&b_tt);
    b[(2, 2)] = 1.0;

    (a, b)
}

fn objective(vertices: &[PoseSE2], edges: &[PoseEdge]) -> f64 {
    edges
        .iter()
        .map(|e| {
            let r = residual_of(e, &vertices[e.from], &vertices[e.to]);
            (r.transpose() * e.information * r)[(0, 0)]
        })
        .sum()
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizeStats {
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
}

const LAMBDA_INIT: f64 = 1e-4;
const LAMBDA_MAX: f64 = 1e8;

/// Levenberg-Marquardt over the whole graph with the anchor vertex fixed.
///
/// Terminates when the relative objective decrease of an accepted step
/// falls below `tol` or after `max_iters` iterations. The damping factor
/// starts at 1e-4, multiplies by 10 on a rejected step and divides by 10
/// on an accepted one; escalation past 1e8 is reported as divergence.
/// The returned objective is never above the initial one.
pub fn optimize(
    graph: &PoseGraph,
    max_iters: usize,
    tol: f64,
) -> Result<(PoseGraph, OptimizeStats), PoseGraphError> {
    for e in &graph.edges {
        if Cholesky::new(e.information).is_none() {
            return Err(PoseGraphError::BadInformation);
        }
    }
    if !graph.is_connected() {
        return Err(PoseGraphError::Disconnected);
    }

    let n = graph.vertices.len();
    let anchor = graph.anchor_index;
    // Parameter layout: three values per non-anchor vertex.
    let param_base: Vec<Option<usize>> = {
        let mut next = 0;
        (0..n)
            .map(|i| {
                if i == anchor {
                    None
                } else {
                    let b = next;
                    next += 3;
                    Some(b)
                }
            })
            .collect()
    };
    let dim = 3 * (n - 1);

    let mut vertices = graph.vertices.clone();
    let mut f = objective(&vertices, &graph.edges);
    let stats_initial = f;
    let mut iterations = 0usize;

    if f == 0.0 {
        let out = PoseGraph {
            vertices,
            edges: graph.edges.clone(),
            anchor_index: anchor,
        };
        return Ok((
            out,
            OptimizeStats {
                iterations: 0,
                initial_objective: stats_initial,
                final_objective: 0.0,
            },
        ));
    }

    let mut lambda = LAMBDA_INIT;
    for _ in 0..max_iters {
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        for e in &graph.edges {
            let r = residual_of(e, &vertices[e.from], &vertices[e.to]);
            let (ja, jb) = edge_jacobians(e, &vertices[e.from], &vertices[e.to]);
            let omega = &e.information;
            let blocks = [(param_base[e.from], ja), (param_base[e.to], jb)];
            for (bi, ji) in &blocks {
                let Some(bi) = bi else { continue };
                let g = ji.transpose() * omega * r;
                for k in 0..3 {
                    b[bi + k] -= g[k];
                }
                for (bj, jj) in &blocks {
                    let Some(bj) = bj else { continue };
                    let hij = ji.transpose() * omega * jj;
                    for rr in 0..3 {
                        for cc in 0..3 {
                            h[(bi + rr, bj + cc)] += hij[(rr, cc)];
                        }
                    }
                }
            }
        }

        // Inner damping loop: escalate lambda until a step is accepted.
        let accepted = loop {
            let mut damped = h.clone();
            for i in 0..dim {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let step = Cholesky::new(damped).map(|ch| ch.solve(&b));
            if let Some(step) = step {
                let mut cand = vertices.clone();
                for (i, base) in param_base.iter().enumerate() {
                    if let Some(base) = base {
                        cand[i] = PoseSE2::new(
                            cand[i].x + step[*base],
                            cand[i].y + step[base + 1],
                            cand[i].theta + step[base + 2],
                        );
                    }
                }
                let f_new = objective(&cand, &graph.edges);
                if f_new.is_finite() && f_new <= f {
                    lambda = (lambda / 10.0).max(1e-15);
                    break Some((cand, f_new));
                }
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                break None;
            }
        };

        let Some((cand, f_new)) = accepted else {
            return Err(PoseGraphError::Diverged);
        };
        iterations += 1;
        let rel = (f - f_new) / f.max(f64::MIN_POSITIVE);
        vertices = cand;
        f = f_new;
        if rel < tol {
            break;
        }
    }

    let out = PoseGraph {
        vertices,
        edges: graph.edges.clone(),
        anchor_index: anchor,
    };
    Ok((
        out,
        OptimizeStats {
            iterations,
            initial_objective: stats_initial,
            final_objective: f,
        },
    ))
}

/// Default iteration cap and tolerance for [`optimize`].
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-9;
