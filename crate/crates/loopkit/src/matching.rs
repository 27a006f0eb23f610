//! Hamming-space matching of retained features and the loop decision.

use crate::detector::LoopCandidate;
use crate::features::{Descriptor256, InformativeFeature};

/// A matched feature pair: indices into the current and past feature lists
/// plus their Hamming distance in bits (0..=256).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchPair {
    pub index_current: usize,
    pub index_past: usize,
    pub distance: u32,
}

/// The outcome of matching one past frame against the current one.
/// `accepted` holds exactly when the pair count reaches `min_matches`.
#[derive(Clone, Debug)]
pub struct FrameMatchResult {
    pub frame_index: usize,
    pub pairs: Vec<MatchPair>,
    pub accepted: bool,
}

/// Number of differing bits between two descriptors.
pub fn hamming(a: &Descriptor256, b: &Descriptor256) -> u32 {
    a.0.iter()
        .zip(b.0.iter())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// Mutual-nearest-neighbor matching under a distance ceiling.
///
/// A pair is kept when each side is the other's nearest neighbor (ties
/// break toward the lower index) and the distance is at most
/// `max_distance`. Every feature appears in at most one pair. With only a
/// handful of descriptors per frame a ratio test would be too noisy, so
/// mutuality is the whole filter.
pub fn match_frames(
    current: &[InformativeFeature],
    past: &[InformativeFeature],
    past_frame_index: usize,
    max_distance: u32,
    min_matches: usize,
) -> FrameMatchResult {
    let nearest =
        |from: &[InformativeFeature], to: &[InformativeFeature]| -> Vec<Option<(usize, u32)>> {
            from.iter()
                .map(|f| {
                    let mut best: Option<(usize, u32)> = None;
                    for (j, g) in to.iter().enumerate() {
                        let d = hamming(&f.descriptor, &g.descriptor);
                        if best.is_none_or(|(_, bd)| d < bd) {
                            best = Some((j, d));
                        }
                    }
                    best
                })
                .collect()
        };

    let fwd = nearest(current, past);
    let bwd = nearest(past, current);

    let mut pairs = Vec::new();
    for (i, hit) in fwd.iter().enumerate() {
        if let Some((j, d)) = *hit {
            if d <= max_distance && bwd[j] == Some((i, d)) {
                pairs.push(MatchPair {
                    index_current: i,
                    index_past: j,
                    distance: d,
                });
            }
        }
    }
    let accepted = pairs.len() >= min_matches;
    FrameMatchResult {
        frame_index: past_frame_index,
        pairs,
        accepted,
    }
}

/// Runs [`match_frames`] over every frame in the window, in ascending
/// index order, and returns the accepted frame with the most pairs (ties
/// go to the lowest index). `None` when no frame is accepted.
pub fn detect_in_window<'a>(
    current_index: usize,
    current: &[InformativeFeature],
    window_frames: impl IntoIterator<Item = (usize, &'a [InformativeFeature])>,
    max_distance: u32,
    min_matches: usize,
) -> Option<LoopCandidate> {
    let mut best: Option<FrameMatchResult> = None;
    for (idx, feats) in window_frames {
        let result = match_frames(current, feats, idx, max_distance, min_matches);
        if !result.accepted {
            continue;
        }
        if best
            .as_ref()
            .is_none_or(|b| result.pairs.len() > b.pairs.len())
        {
            best = Some(result);
        }
    }
    best.map(|b| LoopCandidate {
        current_index,
        matched_index: b.frame_index,
        pairs: b.pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Keypoint;
    use crate::rng::Lcg64;

    fn kp(i: usize) -> Keypoint {
        Keypoint {
            x: 16 + i as u32,
            y: 16,
            response: 0.0,
            orientation: 0.0,
        }
    }

    fn feat(desc: Descriptor256, i: usize) -> InformativeFeature {
        InformativeFeature::new(kp(i), desc)
    }

    fn random_feat(rng: &mut Lcg64, i: usize) -> InformativeFeature {
        feat(Descriptor256(rng.next_bytes32()), i)
    }

    #[test]
    fn hamming_identity_and_complement() {
        let mut rng = Lcg64::new(3);
        let d = Descriptor256(rng.next_bytes32());
        assert_eq!(hamming(&d, &d), 0);
        let mut inv = [0u8; 32];
        for (i, b) in d.0.iter().enumerate() {
            inv[i] = !b;
        }
        assert_eq!(hamming(&d, &Descriptor256(inv)), 256);
    }

    #[test]
    fn hamming_counts_xor_bits() {
        // 0xFF in byte 0 vs 0x0F in byte 0: four differing bits.
        let mut a = [0u8; 32];
        let mut b = [0u8; 32];
        a[0] = 0xFF;
        b[0] = 0x0F;
        let (da, db) = (Descriptor256(a), Descriptor256(b));
        // Direct bit-iteration oracle.
        let direct = (0..256).filter(|&i| da.bit(i) != db.bit(i)).count() as u32;
        assert_eq!(direct, 4);
        assert_eq!(hamming(&da, &db), 4);
    }

    #[test]
    fn identical_sets_self_match() {
        let mut rng = Lcg64::new(8);
        let feats: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
        let r = match_frames(&feats, &feats, 0, 0, 15);
        assert_eq!(r.pairs.len(), 15);
        assert!(r.accepted);
        for p in &r.pairs {
            assert_eq!(p.index_current, p.index_past);
            assert_eq!(p.distance, 0);
        }
    }

    #[test]
    fn empty_current_yields_nothing() {
        let mut rng = Lcg64::new(9);
        let past: Vec<_> = (0..10).map(|i| random_feat(&mut rng, i)).collect();
        let r = match_frames(&[], &past, 0, 40, 7);
        assert!(r.pairs.is_empty());
        assert!(!r.accepted);
    }

    /// Exhaustive O(n^2) mutual-nearest oracle.
    fn oracle_mutual(
        current: &[InformativeFeature],
        past: &[InformativeFeature],
        max_distance: u32,
    ) -> Vec<(usize, usize, u32)> {
        let mut pairs = Vec::new();
        for (i, c) in current.iter().enumerate() {
            for (j, p) in past.iter().enumerate() {
                let d = hamming(&c.descriptor, &p.descriptor);
                if d > max_distance {
                    continue;
                }
                let i_best = past.iter().enumerate().all(|(j2, p2)| {
                    let d2 = hamming(&c.descriptor, &p2.descriptor);
                    d2 > d || (d2 == d && j2 >= j)
                });
                let j_best = current.iter().enumerate().all(|(i2, c2)| {
                    let d2 = hamming(&c2.descriptor, &p.descriptor);
                    d2 > d || (d2 == d && i2 >= i)
                });
                if i_best && j_best {
                    pairs.push((i, j, d));
                }
            }
        }
        pairs
    }

    #[test]
    fn planted_pairs_are_recovered() {
        let mut rng = Lcg64::new(17);
        let mut current: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
        let mut past: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
        // Plant 7 equal descriptors at scattered positions.
        let planted: Vec<usize> = vec![0, 2, 5, 7, 9, 12, 14];
        for &i in &planted {
            past[i].descriptor = current[i].descriptor;
            past[i].score = past[i].descriptor.popcount();
        }
        // Shuffle the past frame so index equality is not an artifact.
        for i in (1..past.len()).rev() {
            past.swap(i, rng.next_usize(i + 1));
        }
        for i in (1..current.len()).rev() {
            current.swap(i, rng.next_usize(i + 1));
        }
        let r = match_frames(&current, &past, 3, 40, 7);
        assert_eq!(r.pairs.len(), 7, "exactly the planted pairs");
        assert!(r.accepted);
        for p in &r.pairs {
            assert_eq!(p.distance, 0);
            assert_eq!(
                current[p.index_current].descriptor,
                past[p.index_past].descriptor
            );
        }
        let oracle = oracle_mutual(&current, &past, 40);
        let got: Vec<(usize, usize, u32)> = r
            .pairs
            .iter()
            .map(|p| (p.index_current, p.index_past, p.distance))
            .collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn matches_agree_with_oracle_on_random_frames() {
        let mut rng = Lcg64::new(23);
        for _ in 0..100 {
            let n = 1 + rng.next_usize(20);
            let m = 1 + rng.next_usize(20);
            let current: Vec<_> = (0..n).map(|i| random_feat(&mut rng, i)).collect();
            let past: Vec<_> = (0..m).map(|i| random_feat(&mut rng, i)).collect();
            let r = match_frames(&current, &past, 0, 200, 1);
            let got: Vec<(usize, usize, u32)> = r
                .pairs
                .iter()
                .map(|p| (p.index_current, p.index_past, p.distance))
                .collect();
            assert_eq!(got, oracle_mutual(&current, &past, 200));
        }
    }

    #[test]
    fn acceptance_is_symmetric_and_injective() {
        let mut rng = Lcg64::new(31);
        for _ in 0..50 {
            let current: Vec<_> = (0..12).map(|i| random_feat(&mut rng, i)).collect();
            let past: Vec<_> = (0..9).map(|i| random_feat(&mut rng, i)).collect();
            let a = match_frames(&current, &past, 0, 140, 5);
            let b = match_frames(&past, &current, 0, 140, 5);
            assert_eq!(a.pairs.len(), b.pairs.len());
            let mut seen_c = std::collections::HashSet::new();
            let mut seen_p = std::collections::HashSet::new();
            for p in &a.pairs {
                assert!(seen_c.insert(p.index_current));
                assert!(seen_p.insert(p.index_past));
            }
        }
    }

    #[test]
    fn window_with_no_shared_descriptors_detects_nothing() {
        let mut rng = Lcg64::new(41);
        let current: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
        let frames: Vec<Vec<InformativeFeature>> = (0..5)
            .map(|_| (0..15).map(|i| random_feat(&mut rng, i)).collect())
            .collect();
        // Exhaustive check that no frame reaches the acceptance bar.
        for f in &frames {
            assert!(!match_frames(&current, f, 0, 40, 7).accepted);
        }
        let got = detect_in_window(
            60,
            &current,
            frames.iter().enumerate().map(|(i, f)| (i, f.as_slice())),
            40,
            7,
        );
        assert!(got.is_none());
    }

    #[test]
    fn copied_frame_matches_in_full() {
        let mut rng = Lcg64::new(43);
        let current: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
        let other: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
        let frames = vec![(4usize, other.as_slice()), (9usize, current.as_slice())];
        let got = detect_in_window(50, &current, frames, 40, 7).unwrap();
        assert_eq!(got.matched_index, 9);
        assert_eq!(got.current_index, 50);
        assert_eq!(got.pairs.len(), current.len());
    }

    #[test]
    fn frame_with_more_pairs_wins() {
        let mut rng = Lcg64::new(47);
        let current: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
        let mut eight: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
        let mut twelve: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
        for i in 0..8 {
            eight[i].descriptor = current[i].descriptor;
        }
        for i in 0..12 {
            twelve[i].descriptor = current[i].descriptor;
        }
        let frames = vec![(2usize, eight.as_slice()), (5usize, twelve.as_slice())];
        let got = detect_in_window(70, &current, frames, 40, 7).unwrap();
        assert_eq!(got.matched_index, 5);
        assert_eq!(got.pairs.len(), 12);
    }

    #[test]
    fn detection_is_invariant_under_feature_permutation() {
        let mut rng = Lcg64::new(53);
        let current: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
        let mut past: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
        for i in 0..9 {
            past[i].descriptor = current[i].descriptor;
        }
        let base = detect_in_window(40, &current, vec![(1usize, past.as_slice())], 40, 7)
            .map(|c| (c.matched_index, c.pairs.len()));
        let mut shuffled = past.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.next_usize(i + 1));
        }
        let perm = detect_in_window(40, &current, vec![(1usize, shuffled.as_slice())], 40, 7)
            .map(|c| (c.matched_index, c.pairs.len()));
        assert_eq!(base, perm);
    }

    #[test]
    fn random_frames_never_false_accept_at_default_thresholds() {
        let mut rng = Lcg64::new(59);
        // Random 256-bit descriptors concentrate near distance 128,
        // far above the 40-bit ceiling.
        for _ in 0..200 {
            let a: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
            let b: Vec<_> = (0..15).map(|i| random_feat(&mut rng, i)).collect();
            let r = match_frames(&a, &b, 0, 40, 7);
            assert!(!r.accepted);
            assert!(r.pairs.is_empty());
        }
    }
}
