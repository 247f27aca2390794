//! Keypoint-based registration of a test image onto the reference image.
//!
//! The chain is FAST-9 corners ranked by Harris response on a 3-level
//! pyramid, intensity-centroid orientation, steered BRIEF descriptors,
//! ratio-tested cross-checked Hamming matching, and a RANSAC homography that
//! maps test coordinates onto reference coordinates. The test image is then
//! warped into the reference frame.
//!
//! Failure to register is reported in [`AlignmentResult::succeeded`], never as
//! an error, so callers can carry on with the unaligned image.

mod brief;
mod fast;
mod homography;
mod matcher;
mod warp;

use serde::{Deserialize, Serialize};

pub use brief::{Descriptor, BORDER as DESCRIPTOR_BORDER, PATTERN_SEED};
pub use fast::Keypoint;
pub use homography::{
    dlt, estimate_homography, ransac_homography, rotation_from_homography, Homography, Point,
    RansacParams, RansacResult,
};
pub use matcher::{match_descriptors, Match};
pub use warp::warp_image;

pub(crate) use warp::bilinear;

use crate::error::Result;
use crate::imgcore::GrayImage;
use fast::Pyramid;

/// Smallest image side accepted by keypoint detection.
pub const MIN_ALIGN_SIDE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub max_kp: usize,
    pub fast_threshold: f64,
    pub pyramid_levels: usize,
    pub scale_factor: f64,
    pub ratio: f64,
    pub ransac_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            max_kp: 500,
            fast_threshold: 0.08,
            pyramid_levels: 3,
            scale_factor: 1.2,
            ratio: 0.75,
            ransac_px: 3.0,
            confidence: 0.99,
            max_iterations: 2000,
            min_inliers: 15,
        }
    }
}

impl AlignConfig {
    pub fn ransac(&self) -> RansacParams {
        RansacParams {
            threshold_px: self.ransac_px,
            confidence: self.confidence,
            max_iterations: self.max_iterations,
        }
    }
}

pub fn detect_keypoints(img: &GrayImage, cfg: &AlignConfig) -> Result<Vec<Keypoint>> {
    img.require_min_side(MIN_ALIGN_SIDE)?;
    let pyr = Pyramid::new(img, cfg.pyramid_levels, cfg.scale_factor);
    Ok(fast::detect_on_pyramid(&pyr, cfg.fast_threshold, cfg.max_kp))
}

/// Descriptors for `kps`. Keypoints within [`DESCRIPTOR_BORDER`] pixels of
/// their level's border are dropped; the returned keypoints are the kept ones.
pub fn compute_descriptors(
    img: &GrayImage,
    kps: &[Keypoint],
    cfg: &AlignConfig,
) -> (Vec<Keypoint>, Vec<Descriptor>) {
    let levels = kps
        .iter()
        .map(|k| k.octave as usize + 1)
        .max()
        .unwrap_or(1)
        .max(cfg.pyramid_levels);
    let pyr = Pyramid::new(img, levels, cfg.scale_factor);
    brief::describe(&pyr, kps)
}

/// Keypoints and descriptors of one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageFeatures {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl ImageFeatures {
    pub fn compute(img: &GrayImage, cfg: &AlignConfig) -> Result<Self> {
        img.require_min_side(MIN_ALIGN_SIDE)?;
        let pyr = Pyramid::new(img, cfg.pyramid_levels, cfg.scale_factor);
        let kps = fast::detect_on_pyramid(&pyr, cfg.fast_threshold, cfg.max_kp);
        let (keypoints, descriptors) = brief::describe(&pyr, &kps);
        Ok(Self {
            keypoints,
            descriptors,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    /// Maps test coordinates onto reference coordinates.
    pub homography: Homography,
    pub inlier_count: usize,
    pub total_matches: usize,
    /// Rotation of the test image relative to the reference, degrees.
    pub rotation_deg: f64,
    pub warped: GrayImage,
    pub succeeded: bool,
}

impl AlignmentResult {
    fn failed(test: &GrayImage, total_matches: usize, inlier_count: usize) -> Self {
        Self {
            homography: Homography::identity(),
            inlier_count,
            total_matches,
            rotation_deg: 0.0,
            warped: test.clone(),
            succeeded: false,
        }
    }

    /// Result for a test image used as is, without registration.
    pub fn unaligned(test: &GrayImage) -> Self {
        Self::failed(test, 0, 0)
    }

    /// Displacement of the reference point `p` in the test image.
    pub fn displacement_at(&self, p: Point) -> Point {
        match self.homography.inverse() {
            Ok(inv) => {
                let q = inv.apply(p);
                (q.0 - p.0, q.1 - p.1)
            }
            Err(_) => (0.0, 0.0),
        }
    }

    pub fn record(&self) -> AlignmentRecord {
        AlignmentRecord {
            rotation_deg: self.rotation_deg,
            inliers: self.inlier_count,
            matches: self.total_matches,
            succeeded: self.succeeded,
        }
    }
}

/// Per-image summary exported for rotation monitoring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub rotation_deg: f64,
    pub inliers: usize,
    pub matches: usize,
    pub succeeded: bool,
}

/// Aligns `test` onto a reference whose features were computed beforehand.
pub fn align_to_features(
    test: &GrayImage,
    reference: &GrayImage,
    ref_features: &ImageFeatures,
    cfg: &AlignConfig,
    seed: u64,
) -> AlignmentResult {
    let test_features = match ImageFeatures::compute(test, cfg) {
        Ok(f) => f,
        Err(_) => return AlignmentResult::failed(test, 0, 0),
    };
    let matches = match match_descriptors(&test_features.descriptors, &ref_features.descriptors, cfg.ratio) {
        Ok(m) => m,
        Err(_) => return AlignmentResult::failed(test, 0, 0),
    };
    if matches.len() < 4 {
        return AlignmentResult::failed(test, matches.len(), 0);
    }
    let fit = match estimate_homography(
        &matches,
        &test_features.keypoints,
        &ref_features.keypoints,
        &cfg.ransac(),
        seed,
    ) {
        Ok(f) => f,
        Err(_) => return AlignmentResult::failed(test, matches.len(), 0),
    };
    let inliers = fit.inlier_count();
    if inliers < cfg.min_inliers.max(4) {
        return AlignmentResult::failed(test, matches.len(), inliers);
    }
    let rotation = fit
        .homography
        .inverse()
        .and_then(|inv| rotation_from_homography(&inv));
    let warped = warp_image(test, &fit.homography, reference.dims());
    match (rotation, warped) {
        (Ok(rotation_deg), Ok(warped)) => AlignmentResult {
            homography: fit.homography,
            inlier_count: inliers,
            total_matches: matches.len(),
            rotation_deg,
            warped,
            succeeded: true,
        },
        _ => AlignmentResult::failed(test, matches.len(), inliers),
    }
}

pub fn align(test: &GrayImage, reference: &GrayImage, cfg: &AlignConfig, seed: u64) -> AlignmentResult {
    match ImageFeatures::compute(reference, cfg) {
        Ok(rf) => align_to_features(test, reference, &rf, cfg, seed),
        Err(_) => AlignmentResult::failed(test, 0, 0),
    }
}
