//! Raster images with intensities normalized to `[0, 1]`, plus the handful of
//! whole-image operations the pipeline needs (decoding, channel reduction,
//! histogram equalization and cropping).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Three-channel (R, G, B) image, row-major and interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Either kind of decoded raster.
#[derive(Clone, Debug, PartialEq)]
pub enum Image {
    Gray(GrayImage),
    Color(ColorImage),
}

/// Rectangular region of interest, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// How a color image is reduced to one channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrayMode {
    /// Rec. 601 luma weights.
    #[default]
    WeightedSum,
    GreenOnly,
}

fn check_range(data: &[f64]) -> Result<()> {
    match data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::InvalidArgument(format!(
            "intensity {v} outside [0, 1]"
        ))),
        None => Ok(()),
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("empty image".into()));
        }
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                width * height,
                data.len()
            )));
        }
        check_range(&data)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image without validating the range; callers guarantee `[0, 1]`.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)), "range");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        assert!(width > 0 && height > 0);
        Self::from_raw(width, height, vec![value; width * height])
    }

    /// Builds an image from `f(x, y)`; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self::from_raw(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn transpose(&self) -> GrayImage {
        GrayImage::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    pub fn full_roi(&self) -> Roi {
        Roi {
            x: 0,
            y: 0,
            w: self.width,
            h: self.height,
        }
    }

    pub(crate) fn min_side(&self) -> usize {
        self.width.min(self.height)
    }

    pub(crate) fn require_min_side(&self, min: usize) -> Result<()> {
        if self.min_side() < min {
            return Err(Error::ImageTooSmall {
                width: self.width,
                height: self.height,
                min,
            });
        }
        Ok(())
    }
}

impl ColorImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("empty image".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        check_range(&data)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        3
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

impl Image {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Image::Gray(g) => (g.width, g.height),
            Image::Color(c) => (c.width, c.height),
        }
    }

    /// Reduces to one channel; grayscale inputs pass through unchanged.
    pub fn into_gray(self, mode: GrayMode) -> GrayImage {
        match self {
            Image::Gray(g) => g,
            Image::Color(c) => to_gray(&c, mode),
        }
    }
}

pub fn to_gray(img: &ColorImage, mode: GrayMode) -> GrayImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| match mode {
            // Weights sum to 1, so the result stays in [0, 1] up to rounding.
            GrayMode::WeightedSum => (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).min(1.0),
            GrayMode::GreenOnly => p[1],
        })
        .collect();
    GrayImage::from_raw(img.width, img.height, data)
}

/// Index of the 256-level histogram bin an intensity falls into.
#[inline]
pub(crate) fn bin_of(v: f64) -> usize {
    (v * 255.0).round() as usize
}

/// Histogram equalization on 256 bins. Constant images are returned unchanged.
pub fn equalize_hist(img: &GrayImage) -> GrayImage {
    let mut hist = [0usize; 256];
    for &v in &img.data {
        hist[bin_of(v)] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist.iter()) {
        acc += h;
        *c = acc;
    }
    let n = img.data.len();
    let cdf_min = hist
        .iter()
        .zip(cdf.iter())
        .find(|(h, _)| **h > 0)
        .map(|(_, c)| *c)
        .unwrap_or(0);
    if n == cdf_min {
        return img.clone();
    }
    let denom = (n - cdf_min) as f64;
    let lut: Vec<f64> = cdf
        .iter()
        .map(|&c| {
            let c = c.max(cdf_min);
            ((c - cdf_min) as f64 / denom * 255.0).round() / 255.0
        })
        .collect();
    let data = img.data.iter().map(|&v| lut[bin_of(v)]).collect();
    GrayImage::from_raw(img.width, img.height, data)
}

pub fn crop(img: &GrayImage, roi: Roi) -> Result<GrayImage> {
    if roi.w == 0 || roi.h == 0 || roi.x + roi.w > img.width || roi.y + roi.h > img.height {
        return Err(Error::RoiOutOfBounds {
            roi,
            width: img.width,
            height: img.height,
        });
    }
    let mut data = Vec::with_capacity(roi.w * roi.h);
    for y in roi.y..roi.y + roi.h {
        let start = y * img.width + roi.x;
        data.extend_from_slice(&img.data[start..start + roi.w]);
    }
    Ok(GrayImage::from_raw(roi.w, roi.h, data))
}

impl Roi {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    /// Region `inner`, given relative to this region, in absolute coordinates.
    pub fn compose(&self, inner: Roi) -> Roi {
        Roi {
            x: self.x + inner.x,
            y: self.y + inner.y,
            w: inner.w,
            h: inner.h,
        }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }
}

impl std::str::FromStr for Roi {
    type Err = Error;

    /// Parses `x,y,w,h`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("window '{s}': {e}")))?;
        match parts.as_slice() {
            [x, y, w, h] => Ok(Roi::new(*x, *y, *w, *h)),
            _ => Err(Error::Parse(format!("window '{s}' must be x,y,w,h"))),
        }
    }
}

impl std::fmt::Display for Roi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let reader = ImageReader::new(BufReader::new(File::open(path)?)).with_guessed_format()?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
        Some(f) => return Err(Error::UnsupportedFormat(format!("{f:?}"))),
        None => {
            return Err(Error::UnsupportedFormat(format!(
                "unrecognized file {}",
                path.display()
            )))
        }
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => Error::UnsupportedFormat(u.to_string()),
        image::ImageError::IoError(io) => Error::CorruptData(io.to_string()),
        other => Error::CorruptData(other.to_string()),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        image::DynamicImage::ImageLuma8(buf) => {
            let data = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Ok(Image::Gray(GrayImage::from_raw(w, h, data)))
        }
        image::DynamicImage::ImageRgb8(buf) => {
            let data = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Ok(Image::Color(ColorImage {
                width: w,
                height: h,
                data,
            }))
        }
        other => Err(Error::UnsupportedFormat(format!(
            "color type {:?}",
            other.color()
        ))),
    }
}

/// Loads any supported raster and reduces it to grayscale.
pub fn load_gray(path: impl AsRef<Path>, mode: GrayMode) -> Result<GrayImage> {
    Ok(load_image(path)?.into_gray(mode))
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "pgm" || e == "ppm" || e == "pnm"
    )
}

fn write_raster(path: &Path, bytes: &[u8], w: usize, h: usize, color: ExtendedColorType) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let res = if is_pnm(path) {
        let subtype = match color {
            ExtendedColorType::L8 => PnmSubtype::Graymap(SampleEncoding::Binary),
            _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
        };
        PnmEncoder::new(file)
            .with_subtype(subtype)
            .write_image(bytes, w as u32, h as u32, color)
    } else {
        PngEncoder::new(file).write_image(bytes, w as u32, h as u32, color)
    };
    res.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::UnsupportedFormat(other.to_string()),
    })
}

/// Writes PNG, or binary PGM/PPM when the extension asks for it.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    match img {
        Image::Gray(g) => save_gray(g, path),
        Image::Color(c) => {
            let bytes: Vec<u8> = c.data.iter().map(|&v| quantize(v)).collect();
            write_raster(path.as_ref(), &bytes, c.width, c.height, ExtendedColorType::Rgb8)
        }
    }
}

pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    write_raster(path.as_ref(), &bytes, img.width, img.height, ExtendedColorType::L8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn color(w: usize, h: usize, px: &[[f64; 3]]) -> ColorImage {
        ColorImage::new(w, h, px.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn weighted_sum_and_green() {
        let c = color(3, 1, &[[1.0, 0.0, 0.0], [0.2, 0.7, 0.4], [0.3, 0.3, 0.3]]);
        let w = to_gray(&c, GrayMode::WeightedSum);
        assert!((w.get(0, 0) - 0.299).abs() < 1e-15);
        assert!((w.get(2, 0) - 0.3).abs() < 1e-12);
        let g = to_gray(&c, GrayMode::GreenOnly);
        assert_eq!(g.get(1, 0), 0.7);
    }

    #[test]
    fn equalize_constant_is_identity() {
        let img = GrayImage::filled(5, 4, 0.5);
        assert_eq!(equalize_hist(&img), img);
    }

    #[test]
    fn equalize_two_levels() {
        let img = GrayImage::from_fn(4, 4, |x, _| if x < 2 { 100.0 / 255.0 } else { 200.0 / 255.0 });
        let eq = equalize_hist(&img);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(eq.get(x, y), if x < 2 { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn crop_interior_and_errors() {
        let ramp = GrayImage::from_fn(4, 4, |x, y| (y * 4 + x) as f64 / 15.0);
        let c = crop(&ramp, Roi::new(1, 1, 2, 2)).unwrap();
        assert_eq!(c.data(), &[5.0 / 15.0, 6.0 / 15.0, 9.0 / 15.0, 10.0 / 15.0]);
        assert_eq!(crop(&ramp, ramp.full_roi()).unwrap(), ramp);
        assert!(matches!(
            crop(&ramp, Roi::new(2, 0, 3, 1)),
            Err(Error::RoiOutOfBounds { .. })
        ));
    }

    #[test]
    fn roi_parse() {
        let r: Roi = "1, 2,3,4".parse().unwrap();
        assert_eq!(r, Roi::new(1, 2, 3, 4));
        assert!("1,2,3".parse::<Roi>().is_err());
        assert_eq!(r.to_string(), "1,2,3,4");
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.5]).is_err());
    }
}
