//! Full-reference image quality metrics: MSE, NRMSE and SSIM.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::GrayImage;

/// Side of the uniform SSIM window.
pub const SSIM_WINDOW: usize = 7;
/// Data range of normalized intensities.
const DATA_RANGE: f64 = 1.0;
const C1: f64 = (0.01 * DATA_RANGE) * (0.01 * DATA_RANGE);
const C2: f64 = (0.03 * DATA_RANGE) * (0.03 * DATA_RANGE);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricId {
    Mse,
    Nrmse,
    Ssim,
}

impl MetricId {
    pub const ALL: [MetricId; 3] = [MetricId::Mse, MetricId::Nrmse, MetricId::Ssim];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Mse => "mse",
            MetricId::Nrmse => "nrmse",
            MetricId::Ssim => "ssim",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown metric '{s}'")))
    }
}

fn same_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Root MSE normalized by the root mean square of the reference.
pub fn nrmse(test: &GrayImage, reference: &GrayImage) -> Result<f64> {
    same_dims(test, reference)?;
    let ref_ms = reference.data().iter().map(|v| v * v).sum::<f64>() / reference.data().len() as f64;
    if ref_ms == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((mse(test, reference)?).sqrt() / ref_ms.sqrt())
}

/// Summed-area table with a zero top row and left column.
struct Integral {
    stride: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, value: impl Fn(usize) -> f64) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += value(y * w + x);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    #[inline]
    fn window(&self, x: usize, y: usize, side: usize) -> f64 {
        let s = self.stride;
        let (x1, y1) = (x + side, y + side);
        self.sums[y1 * s + x1] - self.sums[y * s + x1] - self.sums[y1 * s + x] + self.sums[y * s + x]
    }
}

/// Mean SSIM over every fully contained 7x7 window, using unbiased window
/// (co)variances.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_dims(a, b)?;
    a.require_min_side(SSIM_WINDOW)?;
    let (w, h) = a.dims();
    let (da, db) = (a.data(), b.data());
    let sa = Integral::new(w, h, |i| da[i]);
    let sb = Integral::new(w, h, |i| db[i]);
    let saa = Integral::new(w, h, |i| da[i] * da[i]);
    let sbb = Integral::new(w, h, |i| db[i] * db[i]);
    let sab = Integral::new(w, h, |i| da[i] * db[i]);

    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let (nx, ny) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    for y in 0..ny {
        for x in 0..nx {
            let (ta, tb) = (sa.window(x, y, SSIM_WINDOW), sb.window(x, y, SSIM_WINDOW));
            let (mu_a, mu_b) = (ta / n, tb / n);
            let var_a = (saa.window(x, y, SSIM_WINDOW) - ta * mu_a) / (n - 1.0);
            let var_b = (sbb.window(x, y, SSIM_WINDOW) - tb * mu_b) / (n - 1.0);
            let cov = (sab.window(x, y, SSIM_WINDOW) - ta * mu_b) / (n - 1.0);
            total += ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2))
                / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
        }
    }
    Ok(total / (nx * ny) as f64)
}

pub fn compare(test: &GrayImage, reference: &GrayImage, metric: MetricId) -> Result<f64> {
    match metric {
        MetricId::Mse => mse(test, reference),
        MetricId::Nrmse => nrmse(test, reference),
        MetricId::Ssim => ssim(test, reference),
    }
}

/// Metric value turned into a distance (larger = more different).
pub fn distance(test: &GrayImage, reference: &GrayImage, metric: MetricId) -> Result<f64> {
    let v = compare(test, reference, metric)?;
    Ok(match metric {
        MetricId::Ssim => 1.0 - v,
        _ => v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities() {
        let img = GrayImage::from_fn(9, 8, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        assert_eq!(mse(&img, &img).unwrap(), 0.0);
        assert_eq!(nrmse(&img, &img).unwrap(), 0.0);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_cases() {
        let zeros = GrayImage::filled(8, 8, 0.0);
        let ones = GrayImage::filled(8, 8, 1.0);
        assert_eq!(mse(&zeros, &ones).unwrap(), 1.0);
        let q = GrayImage::filled(8, 8, 0.25);
        let h = GrayImage::filled(8, 8, 0.5);
        assert!((nrmse(&q, &h).unwrap() - 0.5).abs() < 1e-15);
        let expected = (2.0 * 0.125 + 1e-4) / (0.3125 + 1e-4);
        assert!((ssim(&h, &q).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.80006).abs() < 1e-5);
    }

    #[test]
    fn errors() {
        let a = GrayImage::filled(8, 8, 0.1);
        let b = GrayImage::filled(9, 8, 0.1);
        assert!(matches!(mse(&a, &b), Err(Error::DimensionMismatch(..))));
        let z = GrayImage::filled(8, 8, 0.0);
        assert!(matches!(nrmse(&a, &z), Err(Error::ZeroReference)));
        let small = GrayImage::filled(6, 6, 0.1);
        assert!(matches!(ssim(&small, &small), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn metric_names() {
        for m in MetricId::ALL {
            assert_eq!(m.name().parse::<MetricId>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
    }
}
