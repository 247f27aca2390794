//! Deterministic synthetic bottle-print corpus.
//!
//! An image is composed from three layers:
//!
//! * the bottle: a dark body with a bright vertical highlight band and a faint
//!   glass texture, moved by the per-instance process jitter;
//! * the print: procedurally generated glyph strokes (capsules and arcs) with
//!   anti-aliased coverage, moved by the same jitter;
//! * reflections: soft elliptical highlights near the bottle sides, drawn per
//!   instance and independent of the jitter.
//!
//! Defects act on the print coverage only, so a rotated print is rotated
//! relative to the bottle texture underneath it.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::bilinear;
use crate::error::{Error, Result};
use crate::imgcore::{save_gray, GrayImage, Roi};

const INK: f64 = 0.85;
const SUPERSAMPLE: usize = 4;
const GLYPH_COLS: usize = 10;
const GLYPH_ROWS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectKind {
    Rotation,
    Smear,
    Shift,
    Crop,
    Erasure,
}

impl DefectKind {
    pub const ALL: [DefectKind; 5] = [
        DefectKind::Rotation,
        DefectKind::Smear,
        DefectKind::Shift,
        DefectKind::Crop,
        DefectKind::Erasure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DefectKind::Rotation => "rotation",
            DefectKind::Smear => "smear",
            DefectKind::Shift => "shift",
            DefectKind::Crop => "crop",
            DefectKind::Erasure => "erasure",
        }
    }

    /// Largest accepted magnitude (degrees, px, px, fraction, fraction).
    pub fn max_magnitude(self) -> f64 {
        match self {
            DefectKind::Rotation => 45.0,
            DefectKind::Smear => 64.0,
            DefectKind::Shift => 64.0,
            DefectKind::Crop => 0.9,
            DefectKind::Erasure => 0.9,
        }
    }
}

impl fmt::Display for DefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DefectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DefectKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown defect kind '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub magnitude: f64,
}

/// Per-kind values, in [`DefectKind::ALL`] order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerKind<T> {
    pub rotation: T,
    pub smear: T,
    pub shift: T,
    pub crop: T,
    pub erasure: T,
}

impl<T: Copy> PerKind<T> {
    pub fn get(&self, kind: DefectKind) -> T {
        match kind {
            DefectKind::Rotation => self.rotation,
            DefectKind::Smear => self.smear,
            DefectKind::Shift => self.shift,
            DefectKind::Crop => self.crop,
            DefectKind::Erasure => self.erasure,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub width: usize,
    pub height: usize,
    pub master_seed: u64,
    /// Seed of the glyph pattern; the print is identical for every instance.
    pub glyph_seed: u64,
    pub acceptable: usize,
    pub unacceptable: usize,
    pub reflections_min: usize,
    pub reflections_max: usize,
    pub reflection_intensity: (f64, f64),
    /// Maximum absolute jitter rotation, degrees.
    pub jitter_rotation_deg: f64,
    /// Maximum absolute jitter shift per axis, px.
    pub jitter_shift_px: f64,
    /// Amplitude of the slow sinusoidal part of the jitter rotation, degrees.
    pub drift_amplitude_deg: f64,
    pub drift_period_s: f64,
    pub start_time: DateTime<Utc>,
    pub interval_s: i64,
    /// A defect strictly above its threshold makes a print unacceptable.
    pub thresholds: PerKind<f64>,
    /// Magnitude ranges sampled for unacceptable prints.
    pub defect_ranges: PerKind<(f64, f64)>,
    /// Relative frequency of each defect kind among unacceptable prints.
    pub defect_weights: PerKind<f64>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            master_seed: 0,
            glyph_seed: 0x6C79_7068,
            acceptable: 83,
            unacceptable: 83,
            reflections_min: 1,
            reflections_max: 3,
            reflection_intensity: (0.35, 0.6),
            jitter_rotation_deg: 1.5,
            jitter_shift_px: 3.0,
            drift_amplitude_deg: 1.0,
            drift_period_s: 400.0,
            start_time: DateTime::from_timestamp(1_680_000_000, 0).expect("valid epoch"),
            interval_s: 10,
            thresholds: PerKind {
                rotation: 2.0,
                smear: 4.0,
                shift: 5.0,
                crop: 0.05,
                erasure: 0.05,
            },
            defect_ranges: PerKind {
                rotation: (2.5, 5.0),
                smear: (5.0, 10.0),
                shift: (5.5, 8.0),
                crop: (0.25, 0.45),
                erasure: (0.08, 0.2),
            },
            defect_weights: PerKind {
                rotation: 1.0,
                smear: 1.0,
                shift: 1.0,
                crop: 1.0,
                erasure: 1.0,
            },
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::InvalidArgument("corpus images must be at least 64x64".into()));
        }
        if self.reflections_min > self.reflections_max {
            return Err(Error::InvalidArgument("reflections_min > reflections_max".into()));
        }
        for kind in DefectKind::ALL {
            let (lo, hi) = self.defect_ranges.get(kind);
            if !(lo <= hi && lo > self.thresholds.get(kind) && hi <= kind.max_magnitude()) {
                return Err(Error::InvalidArgument(format!(
                    "defect range for {kind} must lie above its threshold and within bounds"
                )));
            }
        }
        if DefectKind::ALL.iter().all(|k| self.defect_weights.get(*k) <= 0.0) && self.unacceptable > 0 {
            return Err(Error::InvalidArgument("all defect weights are zero".into()));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.width.min(self.height) as f64 / 256.0
    }

    fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    /// Print extent (width, height) in pixels.
    fn print_size(&self) -> (f64, f64) {
        (0.6 * self.width as f64, 0.36 * self.height as f64)
    }

    /// Axis-aligned bounding box of the print at the nominal pose.
    pub fn print_bbox(&self) -> Roi {
        let (pw, ph) = self.print_size();
        let (cx, cy) = self.center();
        let x0 = (cx - pw / 2.0).round() as usize;
        let y0 = (cy - ph / 2.0).round() as usize;
        Roi::new(x0, y0, pw.round() as usize, ph.round() as usize)
    }

    /// Default comparison window: the central 60% (per side) of the print box.
    pub fn default_window(&self) -> Roi {
        let b = self.print_bbox();
        let (w, h) = ((b.w as f64 * 0.6).round() as usize, (b.h as f64 * 0.6).round() as usize);
        Roi::new(b.x + (b.w - w) / 2, b.y + (b.h - h) / 2, w, h)
    }

    pub fn is_defective(&self, defects: &[DefectSpec]) -> bool {
        defects
            .iter()
            .any(|d| d.magnitude > self.thresholds.get(d.kind))
    }
}

/// Rigid placement of the bottle (and print) in the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation_deg: f64,
    pub shift: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reflection {
    pub x: f64,
    pub y: f64,
    pub sx: f64,
    pub sy: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub pose: Pose,
    pub reflections: Vec<Reflection>,
}

#[derive(Clone, Copy, Debug)]
enum Stroke {
    Capsule {
        a: (f64, f64),
        b: (f64, f64),
        r: f64,
    },
    Arc {
        c: (f64, f64),
        radius: f64,
        r: f64,
        start: f64,
        sweep: f64,
    },
}

impl Stroke {
    fn contains(&self, p: (f64, f64)) -> bool {
        match *self {
            Stroke::Capsule { a, b, r } => {
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
                qx * qx + qy * qy <= r * r
            }
            Stroke::Arc {
                c,
                radius,
                r,
                start,
                sweep,
            } => {
                let (dx, dy) = (p.0 - c.0, p.1 - c.1);
                if (dx.hypot(dy) - radius).abs() > r {
                    return false;
                }
                let ang = (dy.atan2(dx) - start).rem_euclid(2.0 * PI);
                ang <= sweep
            }
        }
    }
}

/// Glyph strokes bucketed by grid cell, in print-local coordinates (origin at
/// the print center, pixels at nominal scale).
struct GlyphPattern {
    half: (f64, f64),
    cell: (f64, f64),
    cells: Vec<Vec<Stroke>>,
}

impl GlyphPattern {
    fn new(cfg: &CorpusConfig) -> Self {
        let (pw, ph) = cfg.print_size();
        let cell = (pw / GLYPH_COLS as f64, ph / GLYPH_ROWS as f64);
        let s = cfg.scale();
        let r = 1.7 * s;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.glyph_seed);
        let mut cells = Vec::with_capacity(GLYPH_COLS * GLYPH_ROWS);
        for row in 0..GLYPH_ROWS {
            for col in 0..GLYPH_COLS {
                let x0 = -pw / 2.0 + col as f64 * cell.0;
                let y0 = -ph / 2.0 + row as f64 * cell.1;
                let inset = r + 1.5 * s;
                let (ix0, iy0) = (x0 + inset, y0 + inset);
                let (iw, ih) = (cell.0 - 2.0 * inset, cell.1 - 2.0 * inset);
                let pt = |rng: &mut ChaCha8Rng| {
                    (ix0 + rng.random::<f64>() * iw, iy0 + rng.random::<f64>() * ih)
                };
                let n = rng.random_range(2..=4);
                let mut strokes = Vec::with_capacity(n);
                for _ in 0..n {
                    let stroke = match rng.random_range(0..4) {
                        0 => {
                            let (x, y) = pt(&mut rng);
                            Stroke::Capsule {
                                a: (ix0, y),
                                b: (x.max(ix0 + 0.5 * iw), y),
                                r,
                            }
                        }
                        1 => {
                            let (x, y) = pt(&mut rng);
                            Stroke::Capsule {
                                a: (x, iy0),
                                b: (x, y.max(iy0 + 0.6 * ih)),
                                r,
                            }
                        }
                        2 => Stroke::Capsule {
                            a: pt(&mut rng),
                            b: pt(&mut rng),
                            r,
                        },
                        _ => {
                            let radius = (0.25 + 0.2 * rng.random::<f64>()) * iw.min(ih);
                            let c = (
                                ix0 + radius + rng.random::<f64>() * (iw - 2.0 * radius).max(0.0),
                                iy0 + radius + rng.random::<f64>() * (ih - 2.0 * radius).max(0.0),
                            );
                            Stroke::Arc {
                                c,
                                radius,
                                r,
                                start: rng.random::<f64>() * 2.0 * PI,
                                sweep: PI * (0.6 + 0.9 * rng.random::<f64>()),
                            }
                        }
                    };
                    strokes.push(stroke);
                }
                cells.push(strokes);
            }
        }
        Self {
            half: (pw / 2.0, ph / 2.0),
            cell,
            cells,
        }
    }

    fn contains(&self, p: (f64, f64)) -> bool {
        if p.0 < -self.half.0 || p.1 < -self.half.1 || p.0 >= self.half.0 || p.1 >= self.half.1 {
            return false;
        }
        let col = (((p.0 + self.half.0) / self.cell.0) as usize).min(GLYPH_COLS - 1);
        let row = (((p.1 + self.half.1) / self.cell.1) as usize).min(GLYPH_ROWS - 1);
        self.cells[row * GLYPH_COLS + col].iter().any(|s| s.contains(p))
    }
}

/// Maps image coordinates to object-local coordinates for a pose about `center`.
#[derive(Clone, Copy)]
struct Placement {
    center: (f64, f64),
    cos: f64,
    sin: f64,
    shift: (f64, f64),
}

impl Placement {
    fn new(center: (f64, f64), pose: Pose) -> Self {
        let (sin, cos) = pose.rotation_deg.to_radians().sin_cos();
        Self {
            center,
            cos,
            sin,
            shift: pose.shift,
        }
    }

    #[inline]
    fn to_local(self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.center.0 - self.shift.0;
        let dy = y - self.center.1 - self.shift.1;
        (self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy)
    }
}

/// Separately stored layers of one rendered instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PrintLayers {
    pub width: usize,
    pub height: usize,
    /// Bottle body intensities.
    pub bottle: Vec<f64>,
    /// Print coverage in [0, 1].
    pub coverage: Vec<f64>,
    /// Reflection strength in [0, 1], screen-blended on top.
    pub reflections: Vec<f64>,
    pub pose: Pose,
    print_size: (f64, f64),
}

impl PrintLayers {
    pub fn compose(&self) -> GrayImage {
        let data = self
            .bottle
            .iter()
            .zip(&self.coverage)
            .zip(&self.reflections)
            .map(|((b, a), r)| {
                let base = b * (1.0 - a) + INK * a;
                (1.0 - (1.0 - base) * (1.0 - r)).clamp(0.0, 1.0)
            })
            .collect();
        GrayImage::from_raw(self.width, self.height, data)
    }

    fn placement(&self) -> Placement {
        let center = ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0);
        Placement::new(center, self.pose)
    }

    /// Center of the print in image coordinates.
    fn print_center(&self) -> (f64, f64) {
        (
            (self.width as f64 - 1.0) / 2.0 + self.pose.shift.0,
            (self.height as f64 - 1.0) / 2.0 + self.pose.shift.1,
        )
    }

    fn coverage_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.coverage.clone())
    }
}

fn bottle_intensity(cfg: &CorpusConfig, texture: &[(f64, f64, f64, f64)], p: (f64, f64)) -> f64 {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let band = 0.17 * (-(p.0 / (0.28 * w)).powi(2)).exp();
    let vertical = 0.04 * (p.1 / h + 0.5);
    let tex: f64 = texture
        .iter()
        .map(|(amp, kx, ky, phase)| amp * (kx * p.0 + ky * p.1 + phase).sin())
        .sum();
    (0.1 + band + vertical + tex).clamp(0.0, 1.0)
}

fn bottle_texture(cfg: &CorpusConfig) -> Vec<(f64, f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.glyph_seed ^ 0x7465_7874);
    let s = cfg.scale();
    (0..6)
        .map(|_| {
            let wavelength = (10.0 + 30.0 * rng.random::<f64>()) * s;
            let dir = rng.random::<f64>() * PI;
            let k = 2.0 * PI / wavelength;
            (0.007, k * dir.cos(), k * dir.sin(), rng.random::<f64>() * 2.0 * PI)
        })
        .collect()
}

/// Renders the layers of one instance.
pub fn render_layers(cfg: &CorpusConfig, params: &InstanceParams) -> PrintLayers {
    let (w, h) = (cfg.width, cfg.height);
    let glyphs = GlyphPattern::new(cfg);
    let texture = bottle_texture(cfg);
    let place = Placement::new(cfg.center(), params.pose);
    let (hx, hy) = glyphs.half;

    let mut bottle = vec![0.0; w * h];
    let mut coverage = vec![0.0; w * h];
    let mut reflections = vec![0.0; w * h];
    let step = 1.0 / SUPERSAMPLE as f64;
    bottle
        .par_chunks_mut(w)
        .zip(coverage.par_chunks_mut(w))
        .zip(reflections.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((brow, crow), rrow))| {
            for x in 0..w {
                let (xf, yf) = (x as f64, y as f64);
                let local = place.to_local(xf, yf);
                brow[x] = bottle_intensity(cfg, &texture, local);
                if local.0.abs() <= hx + 2.0 && local.1.abs() <= hy + 2.0 {
                    let mut hits = 0;
                    for sy in 0..SUPERSAMPLE {
                        for sx in 0..SUPERSAMPLE {
                            let px = xf - 0.5 + (sx as f64 + 0.5) * step;
                            let py = yf - 0.5 + (sy as f64 + 0.5) * step;
                            if glyphs.contains(place.to_local(px, py)) {
                                hits += 1;
                            }
                        }
                    }
                    crow[x] = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                }
                let mut keep = 1.0;
                for r in &params.reflections {
                    let (dx, dy) = ((xf - r.x) / r.sx, (yf - r.y) / r.sy);
                    keep *= 1.0 - r.intensity * (-(dx * dx + dy * dy)).exp();
                }
                rrow[x] = 1.0 - keep;
            }
        });
    PrintLayers {
        width: w,
        height: h,
        bottle,
        coverage,
        reflections,
        pose: params.pose,
        print_size: cfg.print_size(),
    }
}

fn sample_reflections(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> Vec<Reflection> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let s = cfg.scale();
    let n = rng.random_range(cfg.reflections_min..=cfg.reflections_max);
    (0..n)
        .map(|_| {
            let left = rng.random::<bool>();
            let fx = 0.05 + 0.2 * rng.random::<f64>();
            Reflection {
                x: if left { fx * w } else { (1.0 - fx) * w },
                y: (0.1 + 0.8 * rng.random::<f64>()) * h,
                sx: (3.0 + 4.0 * rng.random::<f64>()) * s,
                sy: (15.0 + 25.0 * rng.random::<f64>()) * s,
                intensity: cfg.reflection_intensity.0
                    + (cfg.reflection_intensity.1 - cfg.reflection_intensity.0) * rng.random::<f64>(),
            }
        })
        .collect()
}

/// Draws jitter and reflections for an instance.
pub fn sample_instance(cfg: &CorpusConfig, instance_seed: u64) -> InstanceParams {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
    let rot = cfg.jitter_rotation_deg * (2.0 * rng.random::<f64>() - 1.0);
    let sx = cfg.jitter_shift_px * (2.0 * rng.random::<f64>() - 1.0);
    let sy = cfg.jitter_shift_px * (2.0 * rng.random::<f64>() - 1.0);
    InstanceParams {
        pose: Pose {
            rotation_deg: rot,
            shift: (sx, sy),
        },
        reflections: sample_reflections(cfg, &mut rng),
    }
}

/// Clean (defect-free) instance with random process jitter and reflections.
pub fn render_clean(cfg: &CorpusConfig, instance_seed: u64) -> GrayImage {
    render_layers(cfg, &sample_instance(cfg, instance_seed)).compose()
}

/// The reference print: nominal pose, reflections from a fixed seed.
pub fn render_reference(cfg: &CorpusConfig) -> GrayImage {
    let mut params = sample_instance(cfg, derive_seed(cfg.master_seed, u64::MAX));
    params.pose = Pose::default();
    render_layers(cfg, &params).compose()
}

/// Mixes a master seed and a stream index into an independent seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rotate_about(cov: &GrayImage, center: (f64, f64), degrees: f64) -> Vec<f64> {
    let (s, c) = degrees.to_radians().sin_cos();
    let (w, h) = cov.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - center.0, y as f64 - center.1);
            let u = center.0 + c * dx + s * dy;
            let v = center.1 - s * dx + c * dy;
            out.push(bilinear(cov, u, v).unwrap_or(0.0));
        }
    }
    out
}

fn translate(cov: &GrayImage, d: (f64, f64)) -> Vec<f64> {
    let (w, h) = cov.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(bilinear(cov, x as f64 - d.0, y as f64 - d.1).unwrap_or(0.0));
        }
    }
    out
}

/// Applies one defect to the print layer.
pub fn apply_defect(layers: &PrintLayers, spec: DefectSpec, seed: u64) -> Result<PrintLayers> {
    let max = spec.kind.max_magnitude();
    if !(0.0..=max).contains(&spec.magnitude) {
        return Err(Error::MagnitudeOutOfRange {
            kind: spec.kind.name(),
            magnitude: spec.magnitude,
            max,
        });
    }
    if spec.magnitude == 0.0 {
        return Ok(layers.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cov = layers.coverage_image();
    let place = layers.placement();
    let (pw, ph) = layers.print_size;
    let m = spec.magnitude;
    let coverage = match spec.kind {
        DefectKind::Rotation => rotate_about(&cov, layers.print_center(), m),
        DefectKind::Shift => {
            let dir = rng.random::<f64>() * 2.0 * PI;
            translate(&cov, (m * dir.cos(), m * dir.sin()))
        }
        DefectKind::Smear => {
            // Region of half the print width and 70% of its height, centered
            // within the middle of the print.
            let (rw, rh) = (0.5 * pw, 0.7 * ph);
            let cx = (rng.random::<f64>() - 0.5) * 0.3 * pw;
            let cy = (rng.random::<f64>() - 0.5) * 0.2 * ph;
            let dir = rng.random::<f64>() * PI;
            let (dx, dy) = (dir.cos(), dir.sin());
            let taps = m.ceil() as usize + 1;
            let mut out = layers.coverage.clone();
            for y in 0..layers.height {
                for x in 0..layers.width {
                    let l = place.to_local(x as f64, y as f64);
                    if (l.0 - cx).abs() > rw / 2.0 || (l.1 - cy).abs() > rh / 2.0 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for t in 0..taps {
                        let off = -m / 2.0 + m * t as f64 / (taps - 1) as f64;
                        acc += bilinear(&cov, x as f64 + off * dx, y as f64 + off * dy).unwrap_or(0.0);
                    }
                    out[y * layers.width + x] = (acc / taps as f64).clamp(0.0, 1.0);
                }
            }
            out
        }
        DefectKind::Crop => {
            let edge = rng.random_range(0..4);
            let mut out = layers.coverage.clone();
            for y in 0..layers.height {
                for x in 0..layers.width {
                    let (lx, ly) = place.to_local(x as f64, y as f64);
                    let cut = match edge {
                        0 => lx < -pw / 2.0 + m * pw,
                        1 => lx > pw / 2.0 - m * pw,
                        2 => ly < -ph / 2.0 + m * ph,
                        _ => ly > ph / 2.0 - m * ph,
                    };
                    if cut {
                        out[y * layers.width + x] = 0.0;
                    }
                }
            }
            out
        }
        DefectKind::Erasure => {
            // Blocks on a 20x12 grid over the print area until the erased
            // fraction reaches the magnitude.
            const GX: usize = 20;
            const GY: usize = 12;
            let mut erased = vec![false; GX * GY];
            let target = (m * (GX * GY) as f64).round() as usize;
            let mut count = 0;
            while count < target {
                let (bw, bh) = (rng.random_range(2..=4), rng.random_range(2..=3));
                let bx = rng.random_range(0..=GX - bw);
                let by = rng.random_range(0..=GY - bh);
                for j in by..by + bh {
                    for i in bx..bx + bw {
                        if !erased[j * GX + i] && count < target {
                            erased[j * GX + i] = true;
                            count += 1;
                        }
                    }
                }
            }
            let mut out = layers.coverage.clone();
            for y in 0..layers.height {
                for x in 0..layers.width {
                    let (lx, ly) = place.to_local(x as f64, y as f64);
                    let (u, v) = ((lx + pw / 2.0) / pw, (ly + ph / 2.0) / ph);
                    if !(0.0..1.0).contains(&u) || !(0.0..1.0).contains(&v) {
                        continue;
                    }
                    let (i, j) = ((u * GX as f64) as usize, (v * GY as f64) as usize);
                    if erased[j * GX + i] {
                        out[y * layers.width + x] = 0.0;
                    }
                }
            }
            out
        }
    };
    Ok(PrintLayers {
        coverage,
        ..layers.clone()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Acceptable,
    Unacceptable,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Acceptable => "acceptable",
            Label::Unacceptable => "unacceptable",
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Unacceptable
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acceptable" => Ok(Label::Acceptable),
            "unacceptable" => Ok(Label::Unacceptable),
            _ => Err(Error::Parse(format!("unknown label '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Image path relative to the corpus directory.
    pub path: String,
    pub label: Label,
    pub defects: Vec<DefectSpec>,
    pub jitter_rotation_deg: f64,
    pub jitter_shift_px: (f64, f64),
    pub timestamp: String,
}

impl ManifestEntry {
    pub fn timestamp_secs(&self) -> Result<f64> {
        parse_timestamp(&self.timestamp)
    }
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_timestamp(s: &str) -> Result<f64> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp() as f64 + t.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("invalid timestamp '{s}'")))
}

/// Fully specified instance before rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedInstance {
    pub entry: ManifestEntry,
    pub params: InstanceParams,
    pub defect_seed: u64,
}

/// Decides labels, jitter, defects and timestamps for every corpus image.
pub fn plan_corpus(cfg: &CorpusConfig) -> Result<Vec<PlannedInstance>> {
    cfg.validate()?;
    let total = cfg.acceptable + cfg.unacceptable;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Acceptable, cfg.acceptable)
        .chain(std::iter::repeat_n(Label::Unacceptable, cfg.unacceptable))
        .collect();
    // Fisher-Yates with the master stream.
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let weight_sum: f64 = DefectKind::ALL.iter().map(|k| cfg.defect_weights.get(*k).max(0.0)).sum();
    let width = total.saturating_sub(1).to_string().len().max(3);
    let mut out = Vec::with_capacity(total);
    for (i, label) in labels.into_iter().enumerate() {
        let mut irng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, i as u64));
        let t = cfg.start_time + chrono::Duration::seconds(cfg.interval_s * i as i64);
        let secs = (cfg.interval_s * i as i64) as f64;
        let drift = cfg.drift_amplitude_deg.min(cfg.jitter_rotation_deg)
            * (2.0 * PI * secs / cfg.drift_period_s).sin();
        let spread = (cfg.jitter_rotation_deg - cfg.drift_amplitude_deg).max(0.0);
        let rot = drift + spread * (2.0 * irng.random::<f64>() - 1.0);
        let shift = (
            cfg.jitter_shift_px * (2.0 * irng.random::<f64>() - 1.0),
            cfg.jitter_shift_px * (2.0 * irng.random::<f64>() - 1.0),
        );
        let reflections = sample_reflections(cfg, &mut irng);
        let mut defects = Vec::new();
        if label == Label::Unacceptable {
            let mut pick = irng.random::<f64>() * weight_sum;
            let mut kind = DefectKind::Erasure;
            for k in DefectKind::ALL {
                let wk = cfg.defect_weights.get(k).max(0.0);
                if wk > 0.0 && pick < wk {
                    kind = k;
                    break;
                }
                pick -= wk;
            }
            let (lo, hi) = cfg.defect_ranges.get(kind);
            defects.push(DefectSpec {
                kind,
                magnitude: lo + (hi - lo) * irng.random::<f64>(),
            });
        }
        let id = format!("img_{i:0width$}");
        out.push(PlannedInstance {
            entry: ManifestEntry {
                path: format!("{id}.png"),
                id,
                label,
                defects,
                jitter_rotation_deg: rot,
                jitter_shift_px: shift,
                timestamp: format_timestamp(t),
            },
            params: InstanceParams {
                pose: Pose {
                    rotation_deg: rot,
                    shift,
                },
                reflections,
            },
            defect_seed: irng.random(),
        });
    }
    Ok(out)
}

/// Renders a planned instance, defects included.
pub fn render_planned(cfg: &CorpusConfig, planned: &PlannedInstance) -> Result<GrayImage> {
    let mut layers = render_layers(cfg, &planned.params);
    for (k, d) in planned.entry.defects.iter().enumerate() {
        layers = apply_defect(&layers, *d, derive_seed(planned.defect_seed, k as u64))?;
    }
    Ok(layers.compose())
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REFERENCE_FILE: &str = "reference.png";
pub const CORPUS_FILE: &str = "corpus.json";

/// Corpus-level metadata written next to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub config: CorpusConfig,
    pub reference: String,
    pub window: Roi,
    pub count: usize,
}

/// Writes reference, images, manifest and corpus metadata into `dir`.
pub fn generate_corpus(cfg: &CorpusConfig, dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let dir = dir.as_ref();
    let plan = plan_corpus(cfg)?;
    fs::create_dir_all(dir)?;
    save_gray(&render_reference(cfg), dir.join(REFERENCE_FILE))?;
    plan.par_iter()
        .map(|p| {
            let img = render_planned(cfg, p)?;
            save_gray(&img, dir.join(&p.entry.path))
        })
        .collect::<Result<Vec<()>>>()?;
    let entries: Vec<ManifestEntry> = plan.into_iter().map(|p| p.entry).collect();
    write_manifest(&entries, dir.join(MANIFEST_FILE))?;
    let info = CorpusInfo {
        config: cfg.clone(),
        reference: REFERENCE_FILE.to_string(),
        window: cfg.default_window(),
        count: entries.len(),
    };
    fs::write(dir.join(CORPUS_FILE), serde_json::to_string_pretty(&info)? + "\n")?;
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn read_corpus_info(dir: impl AsRef<Path>) -> Result<CorpusInfo> {
    let path: PathBuf = dir.as_ref().join(CORPUS_FILE);
    if !path.exists() {
        return Err(Error::FileNotFound(path));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            width: 128,
            height: 128,
            acceptable: 3,
            unacceptable: 3,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn render_is_deterministic() {
        let cfg = small();
        assert_eq!(render_clean(&cfg, 7), render_clean(&cfg, 7));
        assert_ne!(render_clean(&cfg, 7), render_clean(&cfg, 8));
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let cfg = small();
        let layers = render_layers(&cfg, &sample_instance(&cfg, 1));
        for kind in DefectKind::ALL {
            let out = apply_defect(&layers, DefectSpec { kind, magnitude: 0.0 }, 3).unwrap();
            assert_eq!(out, layers);
        }
    }

    #[test]
    fn magnitude_bounds() {
        let cfg = small();
        let layers = render_layers(&cfg, &sample_instance(&cfg, 1));
        let bad = DefectSpec {
            kind: DefectKind::Crop,
            magnitude: 0.95,
        };
        assert!(matches!(
            apply_defect(&layers, bad, 0),
            Err(Error::MagnitudeOutOfRange { .. })
        ));
    }

    #[test]
    fn plan_counts_and_labels() {
        let cfg = CorpusConfig {
            acceptable: 10,
            unacceptable: 7,
            ..small()
        };
        let plan = plan_corpus(&cfg).unwrap();
        assert_eq!(plan.len(), 17);
        let bad = plan.iter().filter(|p| p.entry.label == Label::Unacceptable).count();
        assert_eq!(bad, 7);
        for p in &plan {
            assert_eq!(cfg.is_defective(&p.entry.defects), p.entry.label == Label::Unacceptable);
            assert!(p.entry.jitter_rotation_deg.abs() <= cfg.jitter_rotation_deg + 1e-12);
        }
    }

    #[test]
    fn window_inside_print() {
        let cfg = CorpusConfig::default();
        let b = cfg.print_bbox();
        let w = cfg.default_window();
        assert!(w.x > b.x && w.x + w.w < b.x + b.w);
        assert!(w.fits(cfg.width, cfg.height));
    }

    #[test]
    fn timestamps_parse() {
        let t = format_timestamp(DateTime::from_timestamp(1_680_000_010, 0).unwrap());
        assert_eq!(parse_timestamp(&t).unwrap(), 1_680_000_010.0);
        assert_eq!(parse_timestamp("12.5").unwrap(), 12.5);
    }
}
