//! Oriented FAST keypoints on a small image pyramid.

use serde::{Deserialize, Serialize};

use super::brief::{BORDER, DESCRIPTOR_SIGMA};
use crate::filters::gaussian_blur_raw;
use crate::imgcore::GrayImage;

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
pub(crate) const CIRCLE: [(isize, isize); 16] = [
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
/// Minimum contiguous arc for FAST-9.
pub(crate) const ARC: usize = 9;
const HARRIS_K: f64 = 0.04;
const HARRIS_HALF_BLOCK: isize = 3;
const ORIENTATION_RADIUS: isize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Position in full-resolution pixel coordinates.
    pub x: f64,
    pub y: f64,
    /// Harris corner response.
    pub response: f64,
    /// Intensity-centroid orientation, radians in (-pi, pi].
    pub angle: f64,
    /// Pyramid level the keypoint was found on.
    pub octave: u8,
}

pub(crate) struct Level {
    pub width: usize,
    pub height: usize,
    pub scale: f64,
    pub data: Vec<f64>,
    pub smoothed: Vec<f64>,
}

impl Level {
    pub fn level_to_base(&self, x: f64, y: f64) -> (f64, f64) {
        ((x + 0.5) * self.scale - 0.5, (y + 0.5) * self.scale - 0.5)
    }

    pub fn base_to_level(&self, x: f64, y: f64) -> (f64, f64) {
        ((x + 0.5) / self.scale - 0.5, (y + 0.5) / self.scale - 0.5)
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }
}

pub(crate) struct Pyramid {
    pub levels: Vec<Level>,
}

impl Pyramid {
    pub fn new(img: &GrayImage, levels: usize, scale_factor: f64) -> Self {
        let (w0, h0) = img.dims();
        let mut out = Vec::with_capacity(levels);
        for l in 0..levels.max(1) {
            let scale = scale_factor.powi(l as i32);
            let (w, h) = (
                ((w0 as f64 / scale).round() as usize).max(1),
                ((h0 as f64 / scale).round() as usize).max(1),
            );
            let data = if l == 0 {
                img.data().to_vec()
            } else {
                resample(img, w, h, scale)
            };
            let smoothed = gaussian_blur_raw(&data, w, h, DESCRIPTOR_SIGMA);
            out.push(Level {
                width: w,
                height: h,
                scale,
                data,
                smoothed,
            });
        }
        Pyramid { levels: out }
    }
}

fn resample(img: &GrayImage, w: usize, h: usize, scale: f64) -> Vec<f64> {
    let (sw, sh) = img.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = ((y as f64 + 0.5) * scale - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for x in 0..w {
            let sx = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bot = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// FAST-9 segment test. Returns the corner score (sum of the excess
/// differences over the threshold on the circle) or `None`.
#[inline]
pub(crate) fn segment_test(data: &[f64], w: usize, x: usize, y: usize, threshold: f64) -> Option<f64> {
    let p = data[y * w + x];
    let classify = |k: usize| -> i8 {
        let (dx, dy) = CIRCLE[k];
        let v = data[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
        if v > p + threshold {
            1
        } else if v < p - threshold {
            -1
        } else {
            0
        }
    };
    // Every 9-arc covers position 0 or 8, and at least two of the four
    // compass points.
    let (c0, c8) = (classify(0), classify(8));
    if c0 == 0 && c8 == 0 {
        return None;
    }
    let compass = [c0, classify(4), c8, classify(12)];
    let bright = compass.iter().filter(|c| **c == 1).count();
    let dark = compass.iter().filter(|c| **c == -1).count();
    if bright < 2 && dark < 2 {
        return None;
    }
    let class: [i8; 16] = std::array::from_fn(classify);
    let mut found = false;
    for target in [1i8, -1] {
        let mut run = 0;
        for k in 0..32 {
            if class[k % 16] == target {
                run += 1;
                if run >= ARC {
                    found = true;
                    break;
                }
            } else {
                run = 0;
            }
        }
        if found {
            break;
        }
    }
    if !found {
        return None;
    }
    let score = CIRCLE
        .iter()
        .map(|(dx, dy)| {
            let v = data[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            ((v - p).abs() - threshold).max(0.0)
        })
        .sum();
    Some(score)
}

fn harris(level: &Level, x: usize, y: usize) -> f64 {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let (xi, yi) = (x as isize, y as isize);
    for dy in -HARRIS_HALF_BLOCK..=HARRIS_HALF_BLOCK {
        for dx in -HARRIS_HALF_BLOCK..=HARRIS_HALF_BLOCK {
            let (px, py) = (xi + dx, yi + dy);
            let ix = (level.at(px + 1, py - 1) + 2.0 * level.at(px + 1, py) + level.at(px + 1, py + 1))
                - (level.at(px - 1, py - 1) + 2.0 * level.at(px - 1, py) + level.at(px - 1, py + 1));
            let iy = (level.at(px - 1, py + 1) + 2.0 * level.at(px, py + 1) + level.at(px + 1, py + 1))
                - (level.at(px - 1, py - 1) + 2.0 * level.at(px, py - 1) + level.at(px + 1, py - 1));
            a += ix * ix;
            b += iy * iy;
            c += ix * iy;
        }
    }
    a * b - c * c - HARRIS_K * (a + b) * (a + b)
}

/// Sub-pixel corner position: the point minimizing the squared projections
/// of image gradients onto the vectors from it to each window pixel. Returns
/// the offset from `(x, y)`, or zero when the window holds a straight edge only.
fn subpixel_offset(level: &Level, x: usize, y: usize) -> (f64, f64) {
    const R: isize = 4;
    const SIGMA2: f64 = 2.0 * 2.5 * 2.5;
    let (mut cx, mut cy) = (x as isize, y as isize);
    let mut offset = (0.0, 0.0);
    for _ in 0..3 {
        let (mut gxx, mut gxy, mut gyy, mut bx, mut by) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for dy in -R..=R {
            for dx in -R..=R {
                let (px, py) = (cx + dx, cy + dy);
                let ix = 0.5 * (level.at(px + 1, py) - level.at(px - 1, py));
                let iy = 0.5 * (level.at(px, py + 1) - level.at(px, py - 1));
                let w = (-((dx * dx + dy * dy) as f64) / SIGMA2).exp();
                let (a, b, c) = (w * ix * ix, w * ix * iy, w * iy * iy);
                gxx += a;
                gxy += b;
                gyy += c;
                bx += a * dx as f64 + b * dy as f64;
                by += b * dx as f64 + c * dy as f64;
            }
        }
        let det = gxx * gyy - gxy * gxy;
        let trace = gxx + gyy;
        if trace <= 0.0 || det < 1e-3 * trace * trace {
            return offset;
        }
        let ox = (gyy * bx - gxy * by) / det;
        let oy = (gxx * by - gxy * bx) / det;
        let (nx, ny) = (cx as f64 + ox - x as f64, cy as f64 + oy - y as f64);
        if nx.abs() > 2.0 || ny.abs() > 2.0 {
            return offset;
        }
        offset = (nx, ny);
        let (rx, ry) = ((x as f64 + nx).round() as isize, (y as f64 + ny).round() as isize);
        if rx == cx && ry == cy {
            break;
        }
        cx = rx;
        cy = ry;
    }
    offset
}

fn orientation(level: &Level, x: usize, y: usize) -> f64 {
    let (mut m10, mut m01) = (0.0, 0.0);
    let r2 = ORIENTATION_RADIUS * ORIENTATION_RADIUS;
    for dy in -ORIENTATION_RADIUS..=ORIENTATION_RADIUS {
        for dx in -ORIENTATION_RADIUS..=ORIENTATION_RADIUS {
            if dx * dx + dy * dy > r2 {
                continue;
            }
            let v = level.at(x as isize + dx, y as isize + dy);
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    let a = m01.atan2(m10);
    if a <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

/// FAST-9 corners with 3x3 non-maximum suppression on one level, restricted
/// to the region where descriptors can be computed.
fn level_corners(level: &Level, threshold: f64, octave: u8) -> Vec<Keypoint> {
    let (w, h) = (level.width, level.height);
    let margin = BORDER.ceil() as usize;
    if w <= 2 * margin || h <= 2 * margin {
        return Vec::new();
    }
    let mut scores = vec![0.0f64; w * h];
    for y in margin..h - margin {
        for x in margin..w - margin {
            if let Some(s) = segment_test(&level.data, w, x, y, threshold) {
                scores[y * w + x] = s;
            }
        }
    }
    let mut out = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let s = scores[y * w + x];
            if s <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = scores[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                    // Equal scores: the earlier pixel in raster order wins.
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > s || (earlier && n == s) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let response = harris(level, x, y);
            if response <= 0.0 {
                continue;
            }
            let (ox, oy) = subpixel_offset(level, x, y);
            let (bx, by) = level.level_to_base(x as f64 + ox, y as f64 + oy);
            out.push(Keypoint {
                x: bx,
                y: by,
                response,
                angle: orientation(level, x, y),
                octave,
            });
        }
    }
    out
}

pub(crate) fn detect_on_pyramid(pyramid: &Pyramid, threshold: f64, max_kp: usize) -> Vec<Keypoint> {
    let mut all: Vec<Keypoint> = pyramid
        .levels
        .iter()
        .enumerate()
        .flat_map(|(i, l)| level_corners(l, threshold, i as u8))
        .collect();
    all.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.octave.cmp(&b.octave))
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    all.truncate(max_kp);
    all
}
