//! Keypoint detection and informative-feature retention.
//!
//! Per frame the pipeline is: FAST-9 corners (optionally restricted to
//! mapped pixels), intensity-centroid orientation, a rotation-steered
//! 256-bit binary descriptor, a popcount informativeness score, and
//! retention of the top K features by that score.

use crate::rng::Lcg64;
use std::sync::OnceLock;
use thiserror::Error;

/// Pixels a keypoint must keep clear of every image border so that the
/// rotated descriptor patch always fits.
pub const PATCH_MARGIN: u32 = 16;

/// Radius of the circular patch used for the orientation moments.
pub const ORIENTATION_RADIUS: u32 = 15;

/// Seed of the fixed descriptor sampling pattern.
const PATTERN_SEED: u64 = 0xB121F;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("pixel buffer length {len} does not match {width}x{height}")]
    BadDimensions { width: u32, height: u32, len: usize },
    #[error("mask is {mask_w}x{mask_h} but image is {img_w}x{img_h}")]
    MaskMismatch {
        img_w: u32,
        img_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("image {width}x{height} is below the 32x32 minimum for extraction")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("patch around ({x}, {y}) leaves the image")]
    PatchOutOfBounds { x: u32, y: u32 },
    #[error("threshold must be at least 1")]
    BadThreshold,
}

/// Row-major 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, FeatureError> {
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(FeatureError::BadDimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = v;
    }

    #[inline]
    fn get_i(&self, x: i64, y: i64) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }
}

/// One boolean per pixel marking the positions the front end actually
/// mapped; detection candidates are restricted to them when present.
#[derive(Clone, Debug, PartialEq)]
pub struct MappedMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl MappedMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, FeatureError> {
        if bits.len() != (width as usize) * (height as usize) {
            return Err(FeatureError::BadDimensions {
                width,
                height,
                len: bits.len(),
            });
        }
        Ok(MappedMask {
            width,
            height,
            bits,
        })
    }

    pub fn full(width: u32, height: u32) -> Self {
        MappedMask {
            width,
            height,
            bits: vec![true; (width as usize) * (height as usize)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn is_set(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }
}

/// A detected corner. `x`/`y` stay at least [`PATCH_MARGIN`] pixels away
/// from every border.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: u32,
    pub y: u32,
    pub response: f32,
    /// Radians in (-pi, pi].
    pub orientation: f32,
}

/// 256-bit binary descriptor stored as 32 octets, bit i at byte i/8,
/// position i%8 (LSB first).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Descriptor256(pub [u8; 32]);

impl Descriptor256 {
    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 8] >> (i % 8)) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize) {
        self.0[i / 8] |= 1 << (i % 8);
    }

    pub fn popcount(&self) -> u16 {
        self.0.iter().map(|b| b.count_ones() as u16).sum()
    }
}

impl std::fmt::Debug for Descriptor256 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// A keypoint with its descriptor and informativeness score. The score is
/// always the popcount of the descriptor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InformativeFeature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor256,
    pub score: u16,
}

impl InformativeFeature {
    pub fn new(keypoint: Keypoint, descriptor: Descriptor256) -> Self {
        let score = descriptor.popcount();
        InformativeFeature {
            keypoint,
            descriptor,
            score,
        }
    }
}

/// Offsets of the 16-pixel Bresenham circle of radius 3, clockwise from
/// the top.
const RING: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Segment test: does the ring around (x, y) contain >= 9 contiguous
/// pixels all brighter than c+t or all darker than c-t? Returns the
/// response (sum of absolute differences over the best qualifying run)
/// or None.
fn segment_test(img: &GrayImage, x: u32, y: u32, threshold: u8) -> Option<f32> {
    let c = img.get(x, y) as i32;
    let t = threshold as i32;
    let mut class = [0i8; 16]; // +1 bright, -1 dark, 0 neither
    let mut vals = [0i32; 16];
    for (i, &(dx, dy)) in RING.iter().enumerate() {
        let v = img.get_i(x as i64 + dx as i64, y as i64 + dy as i64) as i32;
        vals[i] = v;
        class[i] = if v > c + t {
            1
        } else if v < c - t {
            -1
        } else {
            0
        };
    }
    let mut best: Option<f32> = None;
    for target in [1i8, -1i8] {
        if class.iter().all(|&cl| cl == target) {
            // Full ring qualifies.
            let sad: i32 = vals.iter().map(|&v| (v - c).abs()).sum();
            best = Some(best.map_or(sad as f32, |b: f32| b.max(sad as f32)));
            continue;
        }
        // Walk maximal circular runs. Start each run just after a
        // non-matching position so wraparound runs are counted once.
        let mut i = 0;
        while i < 16 {
            if class[i] != target || class[(i + 15) % 16] == target {
                i += 1;
                continue;
            }
            let mut len = 0;
            let mut sad = 0i32;
            while len < 16 && class[(i + len) % 16] == target {
                sad += (vals[(i + len) % 16] - c).abs();
                len += 1;
            }
            if len >= 9 {
                best = Some(best.map_or(sad as f32, |b: f32| b.max(sad as f32)));
            }
            i += 1;
        }
    }
    best
}

/// FAST-9 corner detection with 3x3 non-maximum suppression.
///
/// Candidates are restricted to the [`PATCH_MARGIN`] interior so every
/// returned keypoint can take a descriptor. Suppression runs on the full
/// corner field before the mask filter so that masking can only ever
/// remove corners, never create new survivors.
pub fn fast_corners(
    img: &GrayImage,
    mask: Option<&MappedMask>,
    threshold: u8,
) -> Result<Vec<Keypoint>, FeatureError> {
    if threshold == 0 {
        return Err(FeatureError::BadThreshold);
    }
    if img.width < 32 || img.height < 32 {
        return Err(FeatureError::ImageTooSmall {
            width: img.width,
            height: img.height,
        });
    }
    if let Some(m) = mask {
        if m.width != img.width || m.height != img.height {
            return Err(FeatureError::MaskMismatch {
                img_w: img.width,
                img_h: img.height,
                mask_w: m.width,
                mask_h: m.height,
            });
        }
    }

    let w = img.width as usize;
    let mut response = vec![0f32; w * img.height as usize];
    let mut candidates: Vec<(u32, u32, f32)> = Vec::new();
    for y in PATCH_MARGIN..img.height - PATCH_MARGIN {
        for x in PATCH_MARGIN..img.width - PATCH_MARGIN {
            if let Some(r) = segment_test(img, x, y, threshold) {
                response[y as usize * w + x as usize] = r;
                candidates.push((x, y, r));
            }
        }
    }

    let mut out = Vec::new();
    'cand: for &(x, y, r) in &candidates {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                let nr = response[ny as usize * w + nx as usize];
                if nr > r || (nr == r && nr > 0.0 && (ny, nx) < (y as i64, x as i64)) {
                    continue 'cand;
                }
            }
        }
        if let Some(m) = mask {
            if !m.is_set(x, y) {
                continue;
            }
        }
        out.push(Keypoint {
            x,
            y,
            response: r,
            orientation: 0.0,
        });
    }
    Ok(out)
}

/// Intensity-centroid orientation over a circular patch.
///
/// theta = atan2(m01, m10) with m01 = sum(dy * I), m10 = sum(dx * I),
/// offsets relative to the keypoint. Returns 0 when both moments vanish.
pub fn orientation(img: &GrayImage, kp: &Keypoint, radius: u32) -> Result<f32, FeatureError> {
    let r = radius as i64;
    let (x, y) = (kp.x as i64, kp.y as i64);
    if x - r < 0 || y - r < 0 || x + r >= img.width as i64 || y + r >= img.height as i64 {
        return Err(FeatureError::PatchOutOfBounds { x: kp.x, y: kp.y });
    }
    let r2 = r * r;
    let mut m01 = 0i64;
    let mut m10 = 0i64;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r2 {
                continue;
            }
            let v = img.get_i(x + dx, y + dy) as i64;
            m10 += dx * v;
            m01 += dy * v;
        }
    }
    if (m01.abs() as f64) < 1e-9 && (m10.abs() as f64) < 1e-9 {
        return Ok(0.0);
    }
    Ok((m01 as f64).atan2(m10 as f64) as f32)
}

/// 256 sampling-point pairs, patch-relative integer offsets.
pub type SamplingPattern = [((i32, i32), (i32, i32)); 256];

/// The fixed descriptor sampling pattern: 256 point pairs inside the
/// radius-15 disc, Gaussian-concentrated toward the patch center, drawn
/// once from a fixed seed. The disc constraint keeps every rotated,
/// rounded sample within [`PATCH_MARGIN`] of the keypoint.
pub fn sampling_pattern() -> &'static SamplingPattern {
    static PATTERN: OnceLock<SamplingPattern> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = Lcg64::new(PATTERN_SEED);
        let sigma = 31.0 / 5.0;
        let draw_point = |rng: &mut Lcg64| -> (i32, i32) {
            loop {
                let px = (rng.next_gaussian() * sigma).round();
                let py = (rng.next_gaussian() * sigma).round();
                if px * px + py * py <= 15.0 * 15.0 {
                    return (px as i32, py as i32);
                }
            }
        };
        let mut pattern = [((0, 0), (0, 0)); 256];
        for pair in pattern.iter_mut() {
            loop {
                let a = draw_point(&mut rng);
                let b = draw_point(&mut rng);
                if a != b {
                    *pair = (a, b);
                    break;
                }
            }
        }
        pattern
    })
}

/// Rotation-steered binary descriptor: bit i is set iff the intensity at
/// rotated pattern point a_i is strictly less than at b_i. Equal
/// intensities leave the bit clear so flat patches stay deterministic.
pub fn brief_descriptor(
    img: &GrayImage,
    kp: &Keypoint,
    pattern: &SamplingPattern,
) -> Result<Descriptor256, FeatureError> {
    let (x, y) = (kp.x as i64, kp.y as i64);
    let m = PATCH_MARGIN as i64;
    if x - m < 0 || y - m < 0 || x + m >= img.width as i64 || y + m >= img.height as i64 {
        return Err(FeatureError::PatchOutOfBounds { x: kp.x, y: kp.y });
    }
    let (sin_t, cos_t) = (kp.orientation as f64).sin_cos();
    let sample = |p: (i32, i32)| -> u8 {
        let (px, py) = (p.0 as f64, p.1 as f64);
        let rx = (px * cos_t - py * sin_t).round() as i64;
        let ry = (px * sin_t + py * cos_t).round() as i64;
        img.get_i(x + rx, y + ry)
    };
    let mut desc = Descriptor256([0u8; 32]);
    for (i, &(a, b)) in pattern.iter().enumerate() {
        if sample(a) < sample(b) {
            desc.set_bit(i);
        }
    }
    Ok(desc)
}

/// Population count of the descriptor, the "informativeness" used for
/// per-frame feature retention.
pub fn informativeness_score(d: &Descriptor256) -> u16 {
    d.popcount()
}

/// Keeps the K highest-scoring features. Ties break toward the higher
/// keypoint response, then raster order (y, x). Output is sorted by
/// descending score; fewer than K inputs are returned whole.
pub fn select_top_k(features: &[InformativeFeature], k: usize) -> Vec<InformativeFeature> {
    let mut sorted: Vec<InformativeFeature> = features.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .cmp(&a.score)
            .then(b.keypoint.response.total_cmp(&a.keypoint.response))
            .then(a.keypoint.y.cmp(&b.keypoint.y))
            .then(a.keypoint.x.cmp(&b.keypoint.x))
    });
    sorted.truncate(k);
    sorted
}

/// The full per-frame pipeline: detect, orient, describe, score, retain.
pub fn extract_top_k(
    img: &GrayImage,
    mask: Option<&MappedMask>,
    threshold: u8,
    k: usize,
) -> Result<Vec<InformativeFeature>, FeatureError> {
    let pattern = sampling_pattern();
    let mut feats = Vec::new();
    for mut kp in fast_corners(img, mask, threshold)? {
        kp.orientation = orientation(img, &kp, ORIENTATION_RADIUS)?;
        let desc = brief_descriptor(img, &kp, pattern)?;
        feats.push(InformativeFeature::new(kp, desc));
    }
    Ok(select_top_k(&feats, k))
}
