//! The `loopkit` command line: dataset generation, loop detection,
//! trajectory optimization, evaluation, and K sweeps.
//!
//! Exit codes: 0 success, 1 ran-but-negative (detect found no loop),
//! 2 usage or input error, 3 internal numeric failure.

use crate::detector::{run_sequence_with, DetectorConfig, Keyframe, LoopCandidate};
use crate::io::{self, AxisMap};
use crate::metrics::{self, Align};
use crate::posegraph::{self, PoseGraph, PoseSE2};
use crate::rng::Lcg64;
use crate::synth::{self, FeatureMode, Shape, SynthDataset, WorldSpec};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unreadable/malformed input: exit 2.
    Usage(String),
    /// Numeric failure in the solver: exit 3.
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<crate::synth::SynthError> for CliError {
    fn from(e: crate::synth::SynthError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<crate::detector::DetectorError> for CliError {
    fn from(e: crate::detector::DetectorError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<crate::metrics::MetricsError> for CliError {
    fn from(e: crate::metrics::MetricsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<crate::posegraph::PoseGraphError> for CliError {
    fn from(e: crate::posegraph::PoseGraphError) -> Self {
        match e {
            crate::posegraph::PoseGraphError::Diverged => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "loopkit",
    version,
    about = "Loop-closure detection and pose-graph correction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world into a dataset directory.
    Synth(SynthArgs),
    /// Run the loop detector over a dataset directory.
    Detect(DetectArgs),
    /// Close detected loops and optimize a trajectory.
    Optimize(OptimizeArgs),
    /// Compare an estimated trajectory against ground truth.
    Evaluate(EvaluateArgs),
    /// Sweep the per-frame feature budget K over a corpus of datasets.
    Sweep(SweepArgs),
}

/// Detector tunables, resolved as flags > config file > defaults.
#[derive(Args, Clone)]
struct ConfigFlags {
    /// Informative features kept per frame.
    #[arg(long)]
    k: Option<usize>,
    /// Check for loops every N frames.
    #[arg(long)]
    cadence: Option<usize>,
    /// FAST corner threshold.
    #[arg(long)]
    fast_threshold: Option<u8>,
    /// Hamming distance ceiling for a match.
    #[arg(long = "max-dist")]
    max_dist: Option<u32>,
    /// Matched pairs needed to accept a loop.
    #[arg(long = "min-matches")]
    min_matches: Option<usize>,
    /// Recent frames excluded from the search.
    #[arg(long = "min-gap")]
    min_gap: Option<usize>,
    /// Config file with `<key> <value>` lines.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<DetectorConfig, CliError> {
        let mut cfg = DetectorConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            for (ln, raw) in text.lines().enumerate() {
                let trimmed = raw.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let toks: Vec<&str> = trimmed.split_whitespace().collect();
                if toks.len() != 2 {
                    return Err(CliError::Usage(format!(
                        "config line {}: expected `<key> <value>`",
                        ln + 1
                    )));
                }
                let bad = |what: &str| {
                    CliError::Usage(format!("config line {}: bad {what} {:?}", ln + 1, toks[1]))
                };
                match toks[0] {
                    "k" => cfg.k = toks[1].parse().map_err(|_| bad("k"))?,
                    "cadence" => cfg.cadence_n = toks[1].parse().map_err(|_| bad("cadence"))?,
                    "fast-threshold" => {
                        cfg.fast_threshold = toks[1].parse().map_err(|_| bad("threshold"))?
                    }
                    "max-dist" => {
                        cfg.max_distance = toks[1].parse().map_err(|_| bad("max-dist"))?
                    }
                    "min-matches" => {
                        cfg.min_matches = toks[1].parse().map_err(|_| bad("min-matches"))?
                    }
                    "min-gap" => cfg.min_loop_gap = toks[1].parse().map_err(|_| bad("min-gap"))?,
                    other => {
                        return Err(CliError::Usage(format!(
                            "config line {}: unknown key {other:?}",
                            ln + 1
                        )));
                    }
                }
            }
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(c) = self.cadence {
            cfg.cadence_n = c;
        }
        if let Some(t) = self.fast_threshold {
            cfg.fast_threshold = t;
        }
        if let Some(d) = self.max_dist {
            cfg.max_distance = d;
        }
        if let Some(m) = self.min_matches {
            cfg.min_matches = m;
        }
        if let Some(g) = self.min_gap {
            cfg.min_loop_gap = g;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn config_echo(cfg: &DetectorConfig) -> Vec<(String, String)> {
    vec![
        ("k".into(), cfg.k.to_string()),
        ("cadence".into(), cfg.cadence_n.to_string()),
        ("fast-threshold".into(), cfg.fast_threshold.to_string()),
        ("max-dist".into(), cfg.max_distance.to_string()),
        ("min-matches".into(), cfg.min_matches.to_string()),
        ("min-gap".into(), cfg.min_loop_gap.to_string()),
    ]
}

#[derive(Args)]
struct SynthArgs {
    /// square | circle | figure-eight | line
    #[arg(long)]
    shape: String,
    #[arg(long)]
    poses: usize,
    #[arg(long, default_value_t = 10.0)]
    scale: f64,
    #[arg(long = "drift-rot", default_value_t = 0.0)]
    drift_rot: f64,
    #[arg(long = "drift-trans", default_value_t = 0.0)]
    drift_trans: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// images | descriptors
    #[arg(long, default_value = "images")]
    mode: String,
    #[arg(long = "landmarks-per-cell", default_value_t = 2)]
    landmarks_per_cell: usize,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

fn write_dataset_dir(dir: &Path, ds: &SynthDataset) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    std::fs::write(dir.join("world.txt"), io::format_world_spec(&ds.spec))
        .map_err(io::IoError::from)?;
    let gt3: Vec<_> = ds
        .gt_poses
        .iter()
        .map(|p| io::se2_to_pose3(p, AxisMap::Xy))
        .collect();
    let od3: Vec<_> = ds
        .odom_poses
        .iter()
        .map(|p| io::se2_to_pose3(p, AxisMap::Xy))
        .collect();
    io::save_kitti(&gt3, dir.join("gt.txt"))?;
    io::save_kitti(&od3, dir.join("odom.txt"))?;
    std::fs::write(
        dir.join("revisits.txt"),
        io::format_revisits(&ds.revisit_pairs),
    )
    .map_err(io::IoError::from)?;
    match ds.spec.feature_mode {
        FeatureMode::Images => {
            let frames = dir.join("frames");
            std::fs::create_dir_all(&frames).map_err(io::IoError::from)?;
            for kf in &ds.keyframes {
                let img = kf.image.as_ref().expect("images mode");
                io::save_pgm(img, frames.join(format!("{:06}.pgm", kf.index)))?;
            }
        }
        FeatureMode::Descriptors => {
            let cache = io::FeatureCache {
                k: 256,
                frames: ds
                    .keyframes
                    .iter()
                    .map(|kf| (kf.index, kf.features.clone()))
                    .collect(),
            };
            io::save_feature_cache(&cache, dir.join("features.lcfc"))?;
        }
    }
    Ok(())
}

/// Rebuilds a dataset from a directory written by `synth`.
fn load_dataset_dir(dir: &Path) -> Result<SynthDataset, CliError> {
    let read = |name: &str| -> Result<String, CliError> {
        std::fs::read_to_string(dir.join(name))
            .map_err(|e| CliError::Usage(format!("{}/{name}: {e}", dir.display())))
    };
    let spec = io::parse_world_spec(&read("world.txt")?)?;
    let gt = io::parse_kitti(&read("gt.txt")?)?;
    let odom = io::parse_kitti(&read("odom.txt")?)?;
    let revisit_pairs = io::parse_revisits(&read("revisits.txt")?)?;
    let gt_poses: Vec<PoseSE2> = gt
        .poses
        .iter()
        .map(|p| io::pose3_to_se2(p, AxisMap::Xy))
        .collect();
    let odom_poses: Vec<PoseSE2> = odom
        .poses
        .iter()
        .map(|p| io::pose3_to_se2(p, AxisMap::Xy))
        .collect();
    if gt_poses.len() != odom_poses.len() {
        return Err(CliError::Usage(format!(
            "gt has {} poses but odometry has {}",
            gt_poses.len(),
            odom_poses.len()
        )));
    }
    let keyframes: Vec<Keyframe> = match spec.feature_mode {
        FeatureMode::Images => (0..odom_poses.len())
            .map(|i| {
                let path = dir.join("frames").join(format!("{i:06}.pgm"));
                let img = io::load_pgm(&path)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                Ok(Keyframe::with_image(
                    i,
                    io::se2_to_pose3(&odom_poses[i], AxisMap::Xy),
                    img,
                ))
            })
            .collect::<Result<_, CliError>>()?,
        FeatureMode::Descriptors => {
            let cache = io::load_feature_cache(dir.join("features.lcfc"))?;
            let mut by_index = vec![Vec::new(); odom_poses.len()];
            for (index, feats) in cache.frames {
                if index >= by_index.len() {
                    return Err(CliError::Usage(format!(
                        "feature cache frame {index} outside trajectory"
                    )));
                }
                by_index[index] = feats;
            }
            by_index
                .into_iter()
                .enumerate()
                .map(|(i, feats)| {
                    Keyframe::with_features(i, io::se2_to_pose3(&odom_poses[i], AxisMap::Xy), feats)
                })
                .collect()
        }
    };
    Ok(SynthDataset {
        spec,
        gt_poses,
        odom_poses,
        keyframes,
        revisit_pairs,
        landmarks: Vec::new(),
    })
}

fn cmd_synth(args: &SynthArgs) -> Result<i32, CliError> {
    let shape = Shape::parse(&args.shape)
        .ok_or_else(|| CliError::Usage(format!("unknown shape {:?}", args.shape)))?;
    let mode = FeatureMode::parse(&args.mode)
        .ok_or_else(|| CliError::Usage(format!("unknown mode {:?}", args.mode)))?;
    let spec = WorldSpec {
        shape,
        num_poses: args.poses,
        scale: args.scale,
        drift_rot_per_step: args.drift_rot,
        drift_trans_per_step: args.drift_trans,
        noise_seed: args.seed,
        feature_mode: mode,
        landmarks_per_cell: args.landmarks_per_cell,
    };
    let ds = synth::generate(&spec)?;
    write_dataset_dir(&args.out, &ds)?;
    println!(
        "wrote {}: {} poses, {} revisit pairs, {} landmarks, mode {}",
        args.out.display(),
        ds.gt_poses.len(),
        ds.revisit_pairs.len(),
        ds.landmarks.len(),
        spec.feature_mode.name()
    );
    Ok(0)
}

#[derive(Args)]
struct DetectArgs {
    /// Dataset directory written by `synth`.
    dataset: PathBuf,
    #[command(flatten)]
    config: ConfigFlags,
    /// Also execute the full-scan baseline: `--baseline fullscan`.
    #[arg(long)]
    baseline: Option<String>,
    /// Report path (default: <dataset>/report.txt).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_detect(args: &DetectArgs) -> Result<i32, CliError> {
    let cfg = args.config.resolve()?;
    let baseline = match args.baseline.as_deref() {
        None => false,
        Some("fullscan") => true,
        Some(other) => {
            return Err(CliError::Usage(format!("unknown baseline {other:?}")));
        }
    };
    let ds = load_dataset_dir(&args.dataset)?;
    let report = run_sequence_with(ds.keyframes.clone(), &cfg, baseline)?;

    let mut echo = config_echo(&cfg);
    echo.push(("dataset".into(), args.dataset.display().to_string()));
    echo.push((
        "baseline".into(),
        if baseline {
            "fullscan".into()
        } else {
            "none".into()
        },
    ));
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.dataset.join("report.txt"));
    std::fs::write(&out, io::format_detection_report(&report, &echo)).map_err(io::IoError::from)?;

    for e in &report.events {
        println!(
            "LOOP {} {} {}",
            e.current_index,
            e.matched_index,
            e.pairs.len()
        );
    }
    println!(
        "COMPARISONS {} {}",
        report.comparisons_windowed, report.comparisons_fullscan
    );
    println!("FEATURES_STORED {}", report.features_stored);
    println!("WALL_MS {:.3}", report.wall.as_secs_f64() * 1e3);
    println!("report written to {}", out.display());
    Ok(if report.events.is_empty() { 1 } else { 0 })
}

#[derive(Args)]
struct OptimizeArgs {
    /// Input trajectory file.
    #[arg(long)]
    trajectory: PathBuf,
    /// Detection report with LOOP lines.
    #[arg(long)]
    report: PathBuf,
    /// Ground-truth trajectory; loop measurements become the true relative
    /// poses (plus optional noise) instead of identity.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// kitti | tum
    #[arg(long, default_value = "kitti")]
    format: String,
    /// xy | xz: which pose components carry planar motion.
    #[arg(long = "axis-map", default_value = "xy")]
    axis_map: String,
    /// Gaussian noise added to loop measurements, meters.
    #[arg(long = "loop-noise-trans", default_value_t = 0.0)]
    loop_noise_trans: f64,
    /// Gaussian noise added to loop measurements, radians.
    #[arg(long = "loop-noise-rot", default_value_t = 0.0)]
    loop_noise_rot: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

enum Trajectory {
    Kitti(Vec<nalgebra::Isometry3<f64>>),
    Tum(Vec<io::TimestampedPose>),
}

impl Trajectory {
    fn load(path: &Path, format: &str) -> Result<(Trajectory, Vec<String>), CliError> {
        match format {
            "kitti" => {
                let l = io::load_kitti(path)?;
                Ok((Trajectory::Kitti(l.poses), l.warnings))
            }
            "tum" => {
                let l = io::load_tum(path)?;
                Ok((Trajectory::Tum(l.poses), l.warnings))
            }
            other => Err(CliError::Usage(format!("unknown format {other:?}"))),
        }
    }

    fn poses3(&self) -> Vec<nalgebra::Isometry3<f64>> {
        match self {
            Trajectory::Kitti(p) => p.clone(),
            Trajectory::Tum(p) => p.iter().map(|t| t.pose).collect(),
        }
    }

    fn save_with(
        &self,
        corrected: &[nalgebra::Isometry3<f64>],
        path: &Path,
    ) -> Result<(), CliError> {
        match self {
            Trajectory::Kitti(_) => io::save_kitti(corrected, path)?,
            Trajectory::Tum(orig) => {
                let stamped: Vec<io::TimestampedPose> = orig
                    .iter()
                    .zip(corrected)
                    .map(|(o, p)| io::TimestampedPose {
                        timestamp: o.timestamp,
                        pose: *p,
                    })
                    .collect();
                io::save_tum(&stamped, path)?;
            }
        }
        Ok(())
    }
}

fn cmd_optimize(args: &OptimizeArgs) -> Result<i32, CliError> {
    let axis_map = AxisMap::parse(&args.axis_map)
        .ok_or_else(|| CliError::Usage(format!("unknown axis map {:?}", args.axis_map)))?;
    let (traj, warnings) = Trajectory::load(&args.trajectory, &args.format)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let poses3 = traj.poses3();
    let se2: Vec<PoseSE2> = poses3
        .iter()
        .map(|p| io::pose3_to_se2(p, axis_map))
        .collect();

    let report = io::load_detection_report(&args.report)?;
    let gt_se2: Option<Vec<PoseSE2>> = match &args.gt {
        Some(path) => {
            let (gt, _) = Trajectory::load(path, &args.format)?;
            Some(
                gt.poses3()
                    .iter()
                    .map(|p| io::pose3_to_se2(p, axis_map))
                    .collect(),
            )
        }
        None => None,
    };

    let mut graph =
        PoseGraph::build_from_trajectory(&se2, posegraph::default_odometry_information())?;
    let mut rng = Lcg64::new(args.seed);
    for &(current, matched, pairs) in &report.loops {
        if current >= se2.len() || matched >= se2.len() {
            return Err(CliError::Usage(format!(
                "report loop ({current}, {matched}) outside trajectory of {}",
                se2.len()
            )));
        }
        let mut measurement = match &gt_se2 {
            Some(gt) => {
                if gt.len() != se2.len() {
                    return Err(CliError::Usage(format!(
                        "gt has {} poses but trajectory has {}",
                        gt.len(),
                        se2.len()
                    )));
                }
                gt[matched].between(&gt[current])
            }
            // Without ground truth a loop is taken at face value: the two
            // frames show the same place, so the measured relative pose is
            // the identity.
            None => PoseSE2::identity(),
        };
        if args.loop_noise_trans > 0.0 || args.loop_noise_rot > 0.0 {
            measurement = PoseSE2::new(
                measurement.x + args.loop_noise_trans * rng.next_gaussian(),
                measurement.y + args.loop_noise_trans * rng.next_gaussian(),
                measurement.theta + args.loop_noise_rot * rng.next_gaussian(),
            );
        }
        let candidate = LoopCandidate {
            current_index: current,
            matched_index: matched,
            pairs: Vec::new(),
        };
        let _ = pairs;
        graph.add_loop_edge(
            &candidate,
            measurement,
            posegraph::default_loop_information(),
        )?;
    }

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.out.display())))?;
    io::save_pose_graph(&graph, args.out.join("pose_graph_in.txt"))?;
    let (optimized, stats) =
        posegraph::optimize(&graph, posegraph::DEFAULT_MAX_ITERS, posegraph::DEFAULT_TOL)?;
    io::save_pose_graph(&optimized, args.out.join("pose_graph_out.txt"))?;

    let corrected3: Vec<nalgebra::Isometry3<f64>> = poses3
        .iter()
        .zip(se2.iter().zip(optimized.vertices()))
        .map(|(orig, (old, new))| io::reattach_passengers(orig, old, new, axis_map))
        .collect();
    traj.save_with(&corrected3, &args.out.join("trajectory_out.txt"))?;

    println!(
        "optimized {} vertices, {} edges: objective {:.6e} -> {:.6e} in {} iterations",
        optimized.vertices().len(),
        optimized.edges().len(),
        stats.initial_objective,
        stats.final_objective,
        stats.iterations
    );
    println!("outputs in {}", args.out.display());
    Ok(0)
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated trajectory.
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth trajectory.
    #[arg(long)]
    gt: PathBuf,
    /// kitti | tum
    #[arg(long, default_value = "kitti")]
    format: String,
    /// xy | xz
    #[arg(long = "axis-map", default_value = "xy")]
    axis_map: String,
    /// rigid2d | none
    #[arg(long, default_value = "none")]
    align: String,
    /// Comma-separated segment lengths in meters (default 100..800).
    #[arg(long = "segment-lengths")]
    segment_lengths: Option<String>,
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<i32, CliError> {
    let axis_map = AxisMap::parse(&args.axis_map)
        .ok_or_else(|| CliError::Usage(format!("unknown axis map {:?}", args.axis_map)))?;
    let align = match args.align.as_str() {
        "rigid2d" => Align::Rigid2d,
        "none" => Align::None,
        other => return Err(CliError::Usage(format!("unknown alignment {other:?}"))),
    };
    let lengths: Vec<f64> = match &args.segment_lengths {
        None => metrics::default_segment_lengths(),
        Some(csv) => csv
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("bad segment length {s:?}")))
            })
            .collect::<Result<_, _>>()?,
    };
    let (est, _) = Trajectory::load(&args.est, &args.format)?;
    let (gt, _) = Trajectory::load(&args.gt, &args.format)?;
    let est2: Vec<PoseSE2> = est
        .poses3()
        .iter()
        .map(|p| io::pose3_to_se2(p, axis_map))
        .collect();
    let gt2: Vec<PoseSE2> = gt
        .poses3()
        .iter()
        .map(|p| io::pose3_to_se2(p, axis_map))
        .collect();

    let ate = metrics::ate(&est2, &gt2, align)?;
    let (trans, rot) = metrics::kitti_rel_errors(&est2, &gt2, &lengths)?;
    println!("metric\tvalue");
    println!("ate_rmse_m\t{ate}");
    println!("trans_err_percent\t{trans}");
    println!("rot_err_deg_per_m\t{rot}");
    println!(
        "segment_lengths_m\t{}",
        lengths
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    Ok(0)
}

#[derive(Args)]
struct SweepArgs {
    /// Directory whose subdirectories are datasets written by `synth`.
    corpus: PathBuf,
    #[arg(long = "k-min", default_value_t = 4)]
    k_min: usize,
    #[arg(long = "k-max", default_value_t = 18)]
    k_max: usize,
    /// Worker threads for sweep cells.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    config: ConfigFlags,
    /// Where to write sweep.tsv and sweep_series.tsv (default: corpus dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32, CliError> {
    if args.k_min < 1 || args.k_min > args.k_max {
        return Err(CliError::Usage(format!(
            "bad K range {}..{}",
            args.k_min, args.k_max
        )));
    }
    let cfg = args.config.resolve()?;
    let mut corpus: Vec<(String, SynthDataset)> = Vec::new();
    let entries = std::fs::read_dir(&args.corpus)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.corpus.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("world.txt").exists())
        .collect();
    dirs.sort();
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        corpus.push((name, load_dataset_dir(&dir)?));
    }
    if corpus.is_empty() {
        return Err(CliError::Usage(format!(
            "no dataset directories under {}",
            args.corpus.display()
        )));
    }

    let ks: Vec<usize> = (args.k_min..=args.k_max).collect();
    let run = || metrics::success_sweep(&corpus, &ks, |_| cfg.clone());
    let report = match args.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(run),
        None => run(),
    }?;

    let mut table = String::from("dataset\tk\tsuccess\n");
    for row in &report.rows {
        table.push_str(&format!(
            "{}\t{}\t{}\n",
            row.dataset, row.k, row.success as u8
        ));
    }
    let mut series = String::from("k\tsuccess_rate\n");
    for (k, rate) in report.success_rate_series() {
        series.push_str(&format!("{k}\t{rate}\n"));
    }
    let out = args.out.clone().unwrap_or_else(|| args.corpus.clone());
    std::fs::create_dir_all(&out).map_err(io::IoError::from)?;
    std::fs::write(out.join("sweep.tsv"), &table).map_err(io::IoError::from)?;
    std::fs::write(out.join("sweep_series.tsv"), &series).map_err(io::IoError::from)?;

    print!("{table}");
    match report.minimal_k {
        Some(k) => println!("MINIMAL_K {k}"),
        None => println!("MINIMAL_K none"),
    }
    for (name, mk) in &report.per_dataset_minimal_k {
        match mk {
            Some(k) => println!("DATASET_MINIMAL_K {name} {k}"),
            None => println!("DATASET_MINIMAL_K {name} none"),
        }
    }
    for name in &report.anomalous {
        println!("ANOMALOUS {name}");
    }
    Ok(0)
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Keep clap's rendering but force usage errors onto exit 2.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(2),
            };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
