//! Loop-closure detection for planar visual SLAM.
//!
//! The pipeline keeps a small, fixed number of informative binary features
//! per keyframe, prunes the set of past frames to compare against with a
//! geometric search window built from the projected trajectory, matches
//! frames in Hamming space, and corrects the trajectory with an SE(2)
//! pose-graph optimizer once a loop is confirmed.
//!
//! Modules follow the pipeline stages:
//!
//! - [`geom`]: planar trajectory geometry and search-window construction
//! - [`features`]: FAST corners, oriented binary descriptors, top-K retention
//! - [`matching`]: Hamming-space frame matching and the loop decision
//! - [`detector`]: the frame-by-frame detection loop and its report
//! - [`posegraph`]: SE(2) pose-graph construction and Levenberg–Marquardt
//! - [`synth`]: ground-truth worlds with odometry drift for testing
//! - [`metrics`]: trajectory error metrics and the K-sweep harness
//! - [`io`]: trajectory/image/feature-cache/pose-graph file formats
//! - [`cli`]: the `loopkit` command-line front end

pub mod cli;
pub mod detector;
pub mod features;
pub mod geom;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod posegraph;
pub mod rng;
pub mod synth;
