//! Steered BRIEF descriptors.
//!
//! The sampling pattern is a fixed table of 256 point pairs inside a 31x31
//! patch. It was generated with SplitMix64 seeded by [`PATTERN_SEED`]: each
//! coordinate is `round(6.2 * z)` clipped to `[-15, 15]`, where `z` is a
//! Box-Muller normal `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)` and `u = (next >> 11) / 2^53`.
//! Coordinates are drawn in the order `x1, y1, x2, y2` for each pair.

use serde::{Deserialize, Serialize};

use super::fast::{Keypoint, Pyramid};

pub const PATTERN_SEED: u64 = 0x0B0B_1E5E_ED00_2024;
/// Keypoints closer than this to the border of their pyramid level are dropped.
pub const BORDER: f64 = 20.0;
pub(crate) const DESCRIPTOR_SIGMA: f64 = 2.0;

/// 256-bit binary descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    #[inline]
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }
}

/// Computes descriptors for keypoints detected on `pyramid`. Returns the
/// keypoints that were kept (in input order) alongside their descriptors.
pub(crate) fn describe(pyramid: &Pyramid, kps: &[Keypoint]) -> (Vec<Keypoint>, Vec<Descriptor>) {
    let mut kept = Vec::with_capacity(kps.len());
    let mut descs = Vec::with_capacity(kps.len());
    for kp in kps {
        let level = match pyramid.levels.get(kp.octave as usize) {
            Some(l) => l,
            None => continue,
        };
        let (lx, ly) = level.base_to_level(kp.x, kp.y);
        let (w, h) = (level.width as f64, level.height as f64);
        if lx < BORDER || ly < BORDER || lx > w - 1.0 - BORDER || ly > h - 1.0 - BORDER {
            continue;
        }
        let (s, c) = kp.angle.sin_cos();
        let img = &level.smoothed;
        let sample = |px: i8, py: i8| -> f64 {
            let (px, py) = (px as f64, py as f64);
            let x = (lx + c * px - s * py).round() as isize;
            let y = (ly + s * px + c * py).round() as isize;
            let x = x.clamp(0, level.width as isize - 1) as usize;
            let y = y.clamp(0, level.height as isize - 1) as usize;
            img[y * level.width + x]
        };
        let mut bits = [0u64; 4];
        for (i, p) in PATTERN.iter().enumerate() {
            if sample(p[0], p[1]) < sample(p[2], p[3]) {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        kept.push(*kp);
        descs.push(Descriptor(bits));
    }
    (kept, descs)
}

#[rustfmt::skip]
pub(crate) const PATTERN: [[i8; 4]; 256] = [
    [3, -3, 5, 2],
    [-6, -14, 0, 5],
    [-9, 4, 3, 7],
    [4, -7, -1, -5],
    [1, -4, 8, 0],
    [-5, -6, -2, -4],
    [0, 0, -9, -1],
    [4, -3, -6, 10],
    [8, -10, 5, -13],
    [3, -1, -3, 5],
    [-2, -4, -2, 7],
    [-3, 2, -11, 4],
    [-9, -6, -4, 8],
    [-10, -6, -6, 1],
    [1, 5, -5, 4],
    [-2, -2, 4, 2],
    [-6, 11, 8, 0],
    [-3, -8, 5, -7],
    [-10, 5, 0, 7],
    [-2, 3, -6, -6],
    [-5, -9, 7, -3],
    [10, 0, -6, 10],
    [2, -8, 8, -2],
    [1, 5, 6, -3],
    [1, 5, -10, -5],
    [9, 7, 1, -6],
    [8, -8, 4, -2],
    [-6, 0, 9, -3],
    [9, -5, -3, 2],
    [-2, 0, -1, -1],
    [2, -10, -3, 2],
    [-3, 5, -10, 14],
    [1, -14, 3, -5],
    [3, -1, 8, -4],
    [3, 0, 4, -11],
    [8, -3, -1, -6],
    [-6, 4, 0, -9],
    [-2, -10, -3, 4],
    [5, -8, -7, 0],
    [-5, -1, 3, 5],
    [7, 4, 10, 6],
    [-1, -6, -1, 9],
    [6, 3, -8, 10],
    [8, -7, 3, -5],
    [0, 10, 10, -12],
    [-8, 5, 3, 2],
    [-7, 6, -4, -6],
    [-6, -3, -7, -2],
    [-9, -6, -5, 10],
    [6, -12, 5, -1],
    [-8, 0, -2, -1],
    [-6, 0, 6, -7],
    [4, -4, -6, 0],
    [2, -2, -7, -7],
    [4, 12, 3, -5],
    [0, -4, -1, -2],
    [5, 0, 7, 8],
    [-10, -8, -5, 2],
    [2, 1, 2, 13],
    [-3, -5, 4, 1],
    [1, 5, 2, -4],
    [10, -4, 13, -4],
    [-3, 5, -5, -9],
    [3, 8, -9, -6],
    [9, -2, -1, -7],
    [-1, -8, -2, -3],
    [-3, 4, 1, 2],
    [5, -2, 7, 4],
    [-1, 3, 4, 12],
    [-1, -6, 9, 5],
    [0, -5, 13, 2],
    [-3, 6, -7, 0],
    [2, 0, -12, 4],
    [7, 0, 5, 4],
    [-6, 4, -2, -7],
    [6, 11, -2, 3],
    [3, 0, -8, 6],
    [-5, 3, -11, -15],
    [-2, 6, -7, 1],
    [0, -7, -1, 9],
    [-10, -5, 8, 4],
    [8, 7, 8, -1],
    [10, -1, 0, -5],
    [13, 6, -4, -6],
    [4, 0, -3, 4],
    [1, 7, 1, 1],
    [-2, 1, -9, 10],
    [7, 0, -1, -2],
    [-15, 2, 1, -7],
    [5, 9, 5, 1],
    [9, -10, -5, 4],
    [8, 0, 2, -1],
    [13, -13, 5, 8],
    [1, 9, -6, 6],
    [-7, -2, -4, 3],
    [0, -4, 3, -8],
    [12, 9, -10, -1],
    [-3, -9, -15, -9],
    [-3, -3, 1, 11],
    [2, 3, 3, -10],
    [-7, -1, 6, 2],
    [-4, 6, -4, 4],
    [1, 6, 7, -7],
    [10, -1, 0, -2],
    [4, -8, -1, 6],
    [6, -7, -5, -1],
    [2, 1, 3, -6],
    [-5, -8, -15, 1],
    [-3, -8, -7, 2],
    [6, 0, 9, -4],
    [-2, -3, -1, 2],
    [-7, -4, -12, -9],
    [14, 3, 6, 7],
    [3, -2, -1, -1],
    [4, 2, 2, 0],
    [-6, 6, 4, 0],
    [2, 1, 8, -2],
    [7, -5, 2, -1],
    [-8, 10, -6, 4],
    [0, -3, 7, -7],
    [9, 3, 5, -6],
    [-10, 1, 3, 5],
    [-5, -1, 0, -3],
    [-5, 8, -5, 3],
    [5, 4, 0, -10],
    [4, 1, 6, -1],
    [-5, -12, -3, 6],
    [11, 2, 1, 2],
    [3, -5, 13, 5],
    [-5, -5, 11, 2],
    [1, 1, -6, 4],
    [-11, -1, -2, -1],
    [4, 0, 5, -2],
    [6, -4, 1, 0],
    [-2, -1, -3, 5],
    [-1, 2, -6, 1],
    [3, -2, -5, -1],
    [-2, -8, -4, 5],
    [4, -7, -12, 3],
    [0, 4, 3, -4],
    [0, -2, 5, 1],
    [-5, 10, -10, 4],
    [0, -2, -2, -10],
    [-2, -4, -4, 3],
    [-2, -6, -5, 10],
    [2, -10, -9, 9],
    [-11, -4, 2, -2],
    [-8, 9, 6, -13],
    [-8, 0, 3, -5],
    [12, 5, 5, 10],
    [7, -12, 7, 4],
    [2, -5, -3, 8],
    [-3, -2, 2, 11],
    [4, -9, 0, -4],
    [1, -6, 1, -4],
    [-12, -2, -9, -4],
    [6, -7, 2, -2],
    [2, -3, -11, 3],
    [-9, -5, -1, -3],
    [-9, 3, -9, -2],
    [-5, 5, 15, -4],
    [1, -1, 4, -4],
    [-6, -4, 1, 10],
    [6, -6, 3, 3],
    [-8, 3, -5, -3],
    [0, 4, -2, -3],
    [3, -4, 3, -5],
    [1, -3, -1, -9],
    [5, 6, -5, 0],
    [-2, -2, -3, -5],
    [-5, -5, 2, -8],
    [-3, 13, -4, -7],
    [12, -2, 0, -12],
    [-15, -8, -3, 0],
    [-6, -1, -7, -4],
    [4, 8, -9, 11],
    [-7, -1, -6, -3],
    [-15, 0, -4, 3],
    [13, -3, -10, -2],
    [1, -6, -15, -7],
    [7, 9, 3, -3],
    [3, -4, 0, 12],
    [1, 3, -1, 5],
    [-5, 2, 5, -3],
    [-3, -11, 0, 5],
    [5, 2, 8, 2],
    [-6, -1, 4, -4],
    [-4, -12, 3, -9],
    [0, -4, -15, 1],
    [2, 1, -4, 4],
    [-4, 3, -7, -1],
    [2, 0, -3, -10],
    [5, 7, 1, -15],
    [3, 3, 3, -6],
    [-1, -5, 2, 0],
    [5, 1, 11, -9],
    [-6, -7, -14, -6],
    [1, -9, 8, -5],
    [4, -4, -3, 4],
    [15, -6, -3, -10],
    [-4, 9, 2, -4],
    [7, -2, 7, 1],
    [-5, 10, -4, 1],
    [3, 1, 1, -3],
    [10, 3, -6, 11],
    [1, -4, 3, 3],
    [-7, -2, -6, 15],
    [4, -1, 1, 0],
    [1, 2, 5, 1],
    [15, 5, 13, -12],
    [10, -6, 6, 3],
    [5, -12, 3, 0],
    [-3, -9, 4, -4],
    [-1, -3, 1, -13],
    [2, 6, 11, 2],
    [1, -2, 5, 3],
    [4, 4, -4, -7],
    [3, -9, 5, -4],
    [-3, 5, -2, 8],
    [-4, -1, 8, 11],
    [-1, -1, -4, 4],
    [-6, 5, 6, -7],
    [1, -1, -14, 5],
    [-4, 0, -12, 0],
    [2, -5, 4, 2],
    [9, -6, -2, -1],
    [-6, 3, 2, -3],
    [-3, 6, 11, 4],
    [-8, -2, 1, -5],
    [-9, 14, -11, -12],
    [2, 5, -1, 1],
    [5, 2, 6, 10],
    [3, -1, 1, -2],
    [-15, 1, 0, -1],
    [-10, -5, 4, -1],
    [7, -3, -4, -9],
    [-5, 9, -4, -2],
    [4, 3, 6, 1],
    [-13, 2, -1, -2],
    [0, -8, 0, -3],
    [2, -10, -9, 0],
    [-8, 2, -10, -2],
    [-4, -3, 2, 3],
    [1, 1, -3, -1],
    [3, 3, 6, -2],
    [-10, -5, -6, 8],
    [-10, 4, -1, -9],
    [4, 2, 0, -7],
    [7, 9, 7, 9],
    [3, 2, 3, 8],
    [-7, -2, 10, 15],
    [-9, 0, -5, 0],
    [0, 4, -1, -2],
    [-6, -1, 0, -2],
    [3, -1, -3, -7],
    [-3, -5, 7, 15],
];

#[cfg(test)]
mod tests {
    use super::*;

    struct SplitMix64(u64);

    impl SplitMix64 {
        fn next(&mut self) -> u64 {
            self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        }

        fn uniform(&mut self) -> f64 {
            (self.next() >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    #[test]
    fn pattern_table_matches_generator() {
        let mut rng = SplitMix64(PATTERN_SEED);
        let mut coord = || {
            let u1 = 1.0 - rng.uniform();
            let u2 = rng.uniform();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            ((z * 31.0 / 5.0).round() as i64).clamp(-15, 15) as i8
        };
        for row in PATTERN.iter() {
            let expected = [coord(), coord(), coord(), coord()];
            assert_eq!(*row, expected);
        }
    }

    #[test]
    fn hamming_distance() {
        let a = Descriptor([0, 0, 0, 0]);
        let b = Descriptor([u64::MAX, 1, 0, 3]);
        assert_eq!(a.hamming(&b), 64 + 1 + 2);
        assert_eq!(b.hamming(&b), 0);
        assert!(b.bit(64) && !b.bit(65));
    }
}
