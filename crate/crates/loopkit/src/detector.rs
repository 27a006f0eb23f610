//! Frame-by-frame loop detection.
//!
//! Each submitted keyframe has its informative features extracted (or
//! pre-supplied in descriptor-only mode) and reduced to the top K. Every
//! `cadence_n`-th frame the geometric search window is computed over the
//! projected trajectory and the current frame is matched against the
//! frames inside it. Only poses and retained features are stored; whole
//! images never are.

use crate::features::{self, GrayImage, InformativeFeature, MappedMask};
use crate::geom::{self, PlanarPoint};
use crate::matching::{self, MatchPair};
use nalgebra::Isometry3;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("frame index {got} does not follow {expected}")]
    IndexOrder { expected: usize, got: usize },
    #[error("frame {index} carries neither an image nor features")]
    EmptyFrame { index: usize },
    #[error("empty keyframe sequence")]
    EmptySequence,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
}

/// Tunables of the detection loop.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Informative features retained per frame.
    pub k: usize,
    /// Check for loops once every this many frames.
    pub cadence_n: usize,
    /// FAST segment-test threshold, intensity units.
    pub fast_threshold: u8,
    /// Hamming ceiling for a feature pair to count as a match.
    pub max_distance: u32,
    /// Pairs required to accept a frame match.
    pub min_matches: usize,
    /// Recent frames excluded from the search; without this gap the
    /// current segment would always "intersect" its own endpoint.
    pub min_loop_gap: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            k: 15,
            cadence_n: 1,
            fast_threshold: 20,
            max_distance: 40,
            min_matches: 7,
            min_loop_gap: 30,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.k < 1 || self.k > 256 {
            return Err(DetectorError::BadConfig(format!(
                "k={} outside 1..=256",
                self.k
            )));
        }
        if self.cadence_n < 1 {
            return Err(DetectorError::BadConfig("cadence_n must be >= 1".into()));
        }
        if self.min_loop_gap < 2 {
            return Err(DetectorError::BadConfig("min_loop_gap must be >= 2".into()));
        }
        Ok(())
    }
}

/// An incoming frame: pose plus either pixels (and optionally the mapped
/// mask) or pre-extracted features.
#[derive(Clone, Debug)]
pub struct Keyframe {
    pub index: usize,
    pub pose: Isometry3<f64>,
    pub image: Option<GrayImage>,
    pub mask: Option<MappedMask>,
    pub features: Vec<InformativeFeature>,
}

impl Keyframe {
    pub fn with_image(index: usize, pose: Isometry3<f64>, image: GrayImage) -> Self {
        Keyframe {
            index,
            pose,
            image: Some(image),
            mask: None,
            features: Vec::new(),
        }
    }

    pub fn with_features(
        index: usize,
        pose: Isometry3<f64>,
        features: Vec<InformativeFeature>,
    ) -> Self {
        Keyframe {
            index,
            pose,
            image: None,
            mask: None,
            features,
        }
    }
}

/// A detected loop: the current frame, the matched past frame, and the
/// feature pairs that carried the decision.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopCandidate {
    pub current_index: usize,
    pub matched_index: usize,
    pub pairs: Vec<MatchPair>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DetectionEvent {
    None,
    Loop(LoopCandidate),
}

/// How candidate frames are selected at each check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanMode {
    /// Geometric search window (the normal mode).
    Windowed,
    /// Match against the whole eligible prefix; the baseline the window
    /// is measured against.
    FullScan,
}

/// What the detector keeps per frame: the projected position and the
/// retained features. Deliberately no image field.
#[derive(Clone, Debug)]
struct StoredFrame {
    projected: PlanarPoint,
    features: Vec<InformativeFeature>,
}

/// Sequential detector state. Frames must arrive with strictly
/// consecutive indices starting at 0.
pub struct LoopDetector {
    config: DetectorConfig,
    scan: ScanMode,
    frames: Vec<StoredFrame>,
    comparisons_windowed: u64,
    comparisons_fullscan: u64,
    frames_without_mask: usize,
}

impl LoopDetector {
    pub fn new(config: DetectorConfig) -> Result<Self, DetectorError> {
        Self::with_scan_mode(config, ScanMode::Windowed)
    }

    pub fn with_scan_mode(config: DetectorConfig, scan: ScanMode) -> Result<Self, DetectorError> {
        config.validate()?;
        Ok(LoopDetector {
            config,
            scan,
            frames: Vec::new(),
            comparisons_windowed: 0,
            comparisons_fullscan: 0,
            frames_without_mask: 0,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn frames_stored(&self) -> usize {
        self.frames.len()
    }

    pub fn features_stored(&self) -> usize {
        self.frames.iter().map(|f| f.features.len()).sum()
    }

    pub fn comparison_counts(&self) -> (u64, u64) {
        (self.comparisons_windowed, self.comparisons_fullscan)
    }

    pub fn frames_without_mask(&self) -> usize {
        self.frames_without_mask
    }

    /// Retained features of a stored frame (for inspection and tests).
    pub fn stored_features(&self, index: usize) -> Option<&[InformativeFeature]> {
        self.frames.get(index).map(|f| f.features.as_slice())
    }

    /// Ingests the next keyframe and reports a loop if one is confirmed.
    pub fn process_frame(&mut self, frame: Keyframe) -> Result<DetectionEvent, DetectorError> {
        let expected = self.frames.len();
        if frame.index != expected {
            return Err(DetectorError::IndexOrder {
                expected,
                got: frame.index,
            });
        }
        if frame.image.is_none() && frame.features.is_empty() {
            return Err(DetectorError::EmptyFrame { index: frame.index });
        }

        let features = match &frame.image {
            Some(img) => {
                if frame.mask.is_none() {
                    // No mapped-pixel information supplied: fall back to
                    // full-image detection and surface it in the report.
                    self.frames_without_mask += 1;
                }
                features::extract_top_k(
                    img,
                    frame.mask.as_ref(),
                    self.config.fast_threshold,
                    self.config.k,
                )?
            }
            None => features::select_top_k(&frame.features, self.config.k),
        };

        let projected = geom::project_pose(&frame.pose)?;
        self.frames.push(StoredFrame {
            projected,
            features,
        });

        let current = frame.index;
        if current < self.config.min_loop_gap + 2 || !current.is_multiple_of(self.config.cadence_n)
        {
            return Ok(DetectionEvent::None);
        }

        let eligible_end = current - self.config.min_loop_gap;
        let range = match self.scan {
            ScanMode::FullScan => Some((0, eligible_end)),
            ScanMode::Windowed => {
                let projected: Vec<PlanarPoint> = self.frames.iter().map(|f| f.projected).collect();
                geom::compute_search_window(&projected, current, self.config.min_loop_gap)?
                    .map(|w| (w.start_index, w.end_index))
            }
        };
        let Some((start, end)) = range else {
            return Ok(DetectionEvent::None);
        };

        self.comparisons_windowed += (end - start + 1) as u64;
        self.comparisons_fullscan += (eligible_end + 1) as u64;

        let current_features = &self.frames[current].features;
        let candidate = matching::detect_in_window(
            current,
            current_features,
            (start..=end).map(|i| (i, self.frames[i].features.as_slice())),
            self.config.max_distance,
            self.config.min_matches,
        );
        Ok(match candidate {
            Some(c) => DetectionEvent::Loop(c),
            None => DetectionEvent::None,
        })
    }
}

/// The outcome of a whole run: loop events, pruning counters, and the
/// memory footprint actually kept.
#[derive(Clone, Debug)]
pub struct DetectionReport {
    pub events: Vec<LoopCandidate>,
    /// Full-scan events, present when the baseline was executed.
    pub baseline_events: Option<Vec<LoopCandidate>>,
    pub comparisons_windowed: u64,
    pub comparisons_fullscan: u64,
    pub features_stored: usize,
    pub frames_processed: usize,
    pub frames_without_mask: usize,
    pub wall: Duration,
}

/// Runs the detector over a full stream.
pub fn run_sequence<I>(frames: I, config: &DetectorConfig) -> Result<DetectionReport, DetectorError>
where
    I: IntoIterator<Item = Keyframe>,
{
    run_sequence_with(frames, config, false)
}

/// Like [`run_sequence`]; when `execute_baseline` is set the full-scan
/// detector also runs on the same stream and its events are recorded.
/// Full-scan comparison counts are always accumulated (counting is free,
/// matching is not).
pub fn run_sequence_with<I>(
    frames: I,
    config: &DetectorConfig,
    execute_baseline: bool,
) -> Result<DetectionReport, DetectorError>
where
    I: IntoIterator<Item = Keyframe>,
{
    let start = Instant::now();
    let mut detector = LoopDetector::new(config.clone())?;
    let mut baseline = if execute_baseline {
        Some(LoopDetector::with_scan_mode(
            config.clone(),
            ScanMode::FullScan,
        )?)
    } else {
        None
    };
    let mut events = Vec::new();
    let mut baseline_events = Vec::new();
    let mut processed = 0usize;
    for frame in frames {
        if let Some(b) = baseline.as_mut() {
            if let DetectionEvent::Loop(c) = b.process_frame(frame.clone())? {
                baseline_events.push(c);
            }
        }
        match detector.process_frame(frame) {
            Ok(DetectionEvent::Loop(c)) => events.push(c),
            Ok(DetectionEvent::None) => {}
            Err(e) => return Err(e),
        }
        processed += 1;
    }
    if processed == 0 {
        return Err(DetectorError::EmptySequence);
    }
    let (cw, cf) = detector.comparison_counts();
    Ok(DetectionReport {
        events,
        baseline_events: baseline.map(|_| baseline_events),
        comparisons_windowed: cw,
        comparisons_fullscan: cf,
        features_stored: detector.features_stored(),
        frames_processed: processed,
        frames_without_mask: detector.frames_without_mask(),
        wall: start.elapsed(),
    })
}
