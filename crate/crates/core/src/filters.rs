//! The eight-filter bank applied to test and reference images before they are
//! compared.
//!
//! Sobel outputs are scaled by the kernel's maximum response so that every
//! filter maps `[0, 1]` intensities to `[0, 1]`. Canny outputs are binary.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{equalize_hist, GrayImage};

/// Smallest image side accepted by [`apply_filter`].
pub const MIN_FILTER_SIDE: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterId {
    #[serde(rename = "no-filter")]
    NoFilter,
    #[serde(rename = "equal-hist")]
    EqualHist,
    #[serde(rename = "sobel")]
    Sobel,
    #[serde(rename = "sobel-v")]
    SobelV,
    #[serde(rename = "sobel-h")]
    SobelH,
    #[serde(rename = "canny-2")]
    Canny2,
    #[serde(rename = "canny-2.5")]
    Canny2_5,
    #[serde(rename = "canny-3")]
    Canny3,
}

impl FilterId {
    /// Canonical order; position in this array is the filter's feature index.
    pub const ALL: [FilterId; 8] = [
        FilterId::NoFilter,
        FilterId::EqualHist,
        FilterId::Sobel,
        FilterId::SobelV,
        FilterId::SobelH,
        FilterId::Canny2,
        FilterId::Canny2_5,
        FilterId::Canny3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterId::NoFilter => "no-filter",
            FilterId::EqualHist => "equal-hist",
            FilterId::Sobel => "sobel",
            FilterId::SobelV => "sobel-v",
            FilterId::SobelH => "sobel-h",
            FilterId::Canny2 => "canny-2",
            FilterId::Canny2_5 => "canny-2.5",
            FilterId::Canny3 => "canny-3",
        }
    }

    /// Gaussian sigma of the Canny variants.
    pub fn canny_sigma(self) -> Option<f64> {
        match self {
            FilterId::Canny2 => Some(2.0),
            FilterId::Canny2_5 => Some(2.5),
            FilterId::Canny3 => Some(3.0),
            _ => None,
        }
    }
}

impl fmt::Display for FilterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterId::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown filter '{s}'")))
    }
}

/// Horizontal and vertical Sobel responses, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl Gradients {
    pub fn magnitude(&self) -> Vec<f64> {
        self.gx
            .iter()
            .zip(&self.gy)
            .map(|(x, y)| (x * x + y * y).sqrt())
            .collect()
    }
}

pub fn sobel_gradients(img: &GrayImage) -> Result<Gradients> {
    img.require_min_side(3)?;
    Ok(sobel_raw(img.data(), img.width(), img.height()))
}

/// 3x3 Sobel correlation with edge replication:
/// `Gx = [[-1,0,1],[-2,0,2],[-1,0,1]]`, `Gy = Gx^T`.
pub(crate) fn sobel_raw(data: &[f64], w: usize, h: usize) -> Gradients {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let r0 = &data[y.saturating_sub(1) * w..][..w];
        let r1 = &data[y * w..][..w];
        let r2 = &data[(y + 1).min(h - 1) * w..][..w];
        let (ox, oy) = (&mut gx[y * w..][..w], &mut gy[y * w..][..w]);
        let mut px = |x: usize, xm: usize, xp: usize| {
            let (a, b, c) = (r0[xm], r0[x], r0[xp]);
            let (d, f) = (r1[xm], r1[xp]);
            let (g, hh, i) = (r2[xm], r2[x], r2[xp]);
            ox[x] = (c + 2.0 * f + i) - (a + 2.0 * d + g);
            oy[x] = (g + 2.0 * hh + i) - (a + 2.0 * b + c);
        };
        px(0, 0, 1.min(w - 1));
        for x in 1..w.saturating_sub(1) {
            px(x, x - 1, x + 1);
        }
        if w > 1 {
            px(w - 1, w - 2, w - 1);
        }
    }
    Gradients {
        width: w,
        height: h,
        gx,
        gy,
    }
}

/// Sampled, normalized 1-D Gaussian with radius `ceil(3 sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with edge replication. The separable form equals
/// convolution with the normalized, sampled 2-D Gaussian.
pub(crate) fn gaussian_blur_raw(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    let tap = |row: &[f64], x: usize| -> f64 {
        k.iter()
            .enumerate()
            .map(|(j, kv)| kv * row[(x as isize + j as isize - r).clamp(0, w as isize - 1) as usize])
            .sum()
    };
    let ru = r as usize;
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        let dst = &mut tmp[y * w..(y + 1) * w];
        if w > 2 * ru {
            for x in 0..ru {
                dst[x] = tap(row, x);
            }
            for x in ru..w - ru {
                let win = &row[x - ru..=x + ru];
                dst[x] = k.iter().zip(win).map(|(a, b)| a * b).sum();
            }
            for x in w - ru..w {
                dst[x] = tap(row, x);
            }
        } else {
            for x in 0..w {
                dst[x] = tap(row, x);
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (j, kv) in k.iter().enumerate() {
            let sy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    // Round-off can push a convex combination a few ulps past the range.
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let data = gaussian_blur_raw(img.data(), img.width(), img.height(), sigma);
    GrayImage::from_raw(img.width(), img.height(), data)
}

/// Magnitudes below this are treated as zero gradient.
const ZERO_GRADIENT: f64 = 1e-9;
const TAN_22_5: f64 = std::f64::consts::SQRT_2 - 1.0;
const TAN_67_5: f64 = std::f64::consts::SQRT_2 + 1.0;

/// Binary Canny edge map: Gaussian blur, Sobel, non-maximum suppression and
/// hysteresis with adaptive thresholds (high = 90th percentile of the nonzero
/// gradient magnitudes, low = half of high).
pub fn canny(img: &GrayImage, sigma: f64) -> GrayImage {
    let (w, h) = img.dims();
    let blurred = gaussian_blur_raw(img.data(), w, h, sigma);
    let grad = sobel_raw(&blurred, w, h);
    let mag = grad.magnitude();

    let mut nonzero: Vec<f64> = mag.iter().copied().filter(|m| *m > ZERO_GRADIENT).collect();
    if nonzero.is_empty() {
        return GrayImage::filled(w, h, 0.0);
    }
    let rank = ((0.9 * nonzero.len() as f64).ceil() as usize).clamp(1, nonzero.len());
    let high = *nonzero.select_nth_unstable_by(rank - 1, f64::total_cmp).1;
    let low = 0.5 * high;

    let thin = non_maximum_suppression(&mag, &grad);
    hysteresis(&thin, w, h, low, high)
}

fn non_maximum_suppression(mag: &[f64], grad: &Gradients) -> Vec<f64> {
    let (w, h) = (grad.width, grad.height);
    let at = |x: isize, y: isize| -> f64 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        mag[y * w + x]
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m <= ZERO_GRADIENT {
                continue;
            }
            // Fold the gradient into the upper half plane and quantize its
            // direction to 45 degrees with tangent tests.
            let (gx, gy) = if grad.gy[i] < 0.0 {
                (-grad.gx[i], -grad.gy[i])
            } else {
                (grad.gx[i], grad.gy[i])
            };
            let ax = gx.abs();
            let (dx, dy) = if (gx >= 0.0 && gy < TAN_22_5 * ax) || (gx < 0.0 && gy <= TAN_22_5 * ax) {
                (1, 0)
            } else if (gx >= 0.0 && gy >= TAN_67_5 * ax) || (gx < 0.0 && gy > TAN_67_5 * ax) {
                (0, 1)
            } else if gx > 0.0 {
                (1, 1)
            } else {
                (-1, 1)
            };
            let (xi, yi) = (x as isize, y as isize);
            let ahead = at(xi + dx, yi + dy);
            let behind = at(xi - dx, yi - dy);
            // Asymmetric comparison keeps exactly one of two equal maxima.
            if m > ahead && m >= behind {
                out[i] = m;
            }
        }
    }
    out
}

fn hysteresis(thin: &[f64], w: usize, h: usize, low: f64, high: f64) -> GrayImage {
    let mut out = vec![0.0; w * h];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m > 0.0 && m >= high {
            out[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && thin[j] > 0.0 && thin[j] >= low {
                    out[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    GrayImage::from_raw(w, h, out)
}

pub fn apply_filter(img: &GrayImage, id: FilterId) -> Result<GrayImage> {
    img.require_min_side(MIN_FILTER_SIDE)?;
    let (w, h) = img.dims();
    let out = match id {
        FilterId::NoFilter => img.clone(),
        FilterId::EqualHist => equalize_hist(img),
        FilterId::Sobel | FilterId::SobelV | FilterId::SobelH => {
            let g = sobel_raw(img.data(), w, h);
            let data = match id {
                FilterId::SobelV => g.gx.iter().map(|v| (v.abs() / 4.0).min(1.0)).collect(),
                FilterId::SobelH => g.gy.iter().map(|v| (v.abs() / 4.0).min(1.0)).collect(),
                _ => g
                    .gx
                    .iter()
                    .zip(&g.gy)
                    .map(|(x, y)| ((x * x + y * y).sqrt() / (4.0 * std::f64::consts::SQRT_2)).min(1.0))
                    .collect(),
            };
            GrayImage::from_raw(w, h, data)
        }
        FilterId::Canny2 | FilterId::Canny2_5 | FilterId::Canny3 => {
            canny(img, id.canny_sigma().expect("canny variant"))
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, _| if x < w / 2 { 0.0 } else { 1.0 })
    }

    #[test]
    fn names_round_trip() {
        for f in FilterId::ALL {
            assert_eq!(f.name().parse::<FilterId>().unwrap(), f);
            assert_eq!(
                serde_json::to_string(&f).unwrap(),
                format!("\"{}\"", f.name())
            );
        }
        assert_eq!(FilterId::Canny3.index(), 7);
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = GrayImage::filled(12, 10, 0.4);
        for f in FilterId::ALL {
            let out = apply_filter(&img, f).unwrap();
            match f {
                FilterId::NoFilter | FilterId::EqualHist => assert_eq!(out, img),
                _ => assert!(out.data().iter().all(|v| *v == 0.0), "{f}"),
            }
        }
    }

    #[test]
    fn sobel_step_response() {
        let img = step(16, 12);
        let v = apply_filter(&img, FilterId::SobelV).unwrap();
        let hz = apply_filter(&img, FilterId::SobelH).unwrap();
        for y in 0..12 {
            assert_eq!(v.get(7, y), 1.0);
            assert_eq!(v.get(8, y), 1.0);
            assert_eq!(v.get(3, y), 0.0);
        }
        for y in 1..11 {
            for x in 0..16 {
                assert_eq!(hz.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn canny_step_is_one_pixel_wide() {
        let img = step(40, 30);
        for f in [FilterId::Canny2, FilterId::Canny2_5, FilterId::Canny3] {
            let e = apply_filter(&img, f).unwrap();
            assert!(e.data().iter().all(|v| *v == 0.0 || *v == 1.0));
            let first: Vec<usize> = (0..40).filter(|&x| e.get(x, 0) == 1.0).collect();
            assert_eq!(first.len(), 1, "{f}");
            assert!(first[0] == 19 || first[0] == 20);
            for y in 0..30 {
                let cols: Vec<usize> = (0..40).filter(|&x| e.get(x, y) == 1.0).collect();
                assert_eq!(cols, first, "{f} row {y}");
            }
        }
    }

    #[test]
    fn too_small() {
        let img = GrayImage::filled(6, 20, 0.0);
        assert!(matches!(
            apply_filter(&img, FilterId::Sobel),
            Err(Error::ImageTooSmall { .. })
        ));
        assert!(sobel_gradients(&GrayImage::filled(2, 2, 0.0)).is_err());
    }

    #[test]
    fn kernel_is_normalized() {
        let k = gaussian_kernel(2.5);
        assert_eq!(k.len(), 17);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
