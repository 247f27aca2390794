//! Projective transforms, normalized DLT and RANSAC.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fast::Keypoint;
use super::matcher::Match;
use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// 3x3 projective transform normalized so that `h33 = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homography(pub [[f64; 3]; 3]);

const SINGULAR_DET: f64 = 1e-12;

impl Homography {
    pub fn identity() -> Self {
        Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
    }

    /// Rotation by `degrees` (image convention, y pointing down) followed by
    /// isotropic `scale`, about the point `(cx, cy)`.
    pub fn similarity(degrees: f64, scale: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let (a, b) = (scale * c, scale * s);
        Homography([
            [a, -b, cx - a * cx + b * cy],
            [b, a, cy - b * cx - a * cy],
            [0.0, 0.0, 1.0],
        ])
    }

    /// Normalizes `m` by its bottom-right entry.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let h33 = m[(2, 2)];
        if !h33.is_finite() || h33.abs() < 1e-15 {
            return Err(Error::SingularHomography);
        }
        let m = m / h33;
        let h = Homography([
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]);
        if h.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::SingularHomography);
        }
        Ok(h)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.0[r][c])
    }

    pub fn det(&self) -> f64 {
        self.matrix().determinant()
    }

    pub fn inverse(&self) -> Result<Self> {
        if self.det().abs() <= SINGULAR_DET {
            return Err(Error::SingularHomography);
        }
        let inv = self.matrix().try_inverse().ok_or(Error::SingularHomography)?;
        Self::from_matrix(inv)
    }

    pub fn compose(&self, then: &Homography) -> Result<Self> {
        Self::from_matrix(then.matrix() * self.matrix())
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        let h = &self.0;
        let w = h[2][0] * p.0 + h[2][1] * p.1 + h[2][2];
        (
            (h[0][0] * p.0 + h[0][1] * p.1 + h[0][2]) / w,
            (h[1][0] * p.0 + h[1][1] * p.1 + h[1][2]) / w,
        )
    }

    pub fn reprojection_error(&self, src: Point, dst: Point) -> f64 {
        let p = self.apply(src);
        (p.0 - dst.0).hypot(p.1 - dst.1)
    }
}

/// Rotation angle in degrees, range (-180, 180], of the closest rotation to
/// the upper-left 2x2 block (the orthogonal factor of its polar decomposition).
pub fn rotation_from_homography(h: &Homography) -> Result<f64> {
    if h.det().abs() <= SINGULAR_DET {
        return Err(Error::SingularHomography);
    }
    let [[a, b, _], [c, d, _], _] = h.0;
    // For a 2x2 block with positive determinant the orthogonal polar factor is
    // the rotation by atan2(c - b, a + d).
    let angle = (c - b).atan2(a + d).to_degrees();
    Ok(if angle <= -180.0 { 180.0 } else { angle })
}

/// Similarity transform moving the centroid to the origin with mean distance sqrt(2).
fn normalizer(pts: &[Point]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let (cx, cy) = pts
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0 / n, acc.1 + p.1 / n));
    let mean_dist = pts.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform over all correspondences (at least 4).
pub fn dlt(src: &[Point], dst: &[Point]) -> Result<Homography> {
    if src.len() != dst.len() {
        return Err(Error::InvalidArgument("correspondence lists differ in length".into()));
    }
    if src.len() < 4 {
        return Err(Error::TooFewMatches(src.len()));
    }
    let (ts, td) = (normalizer(src), normalizer(dst));
    let norm = |t: &Matrix3<f64>, p: &Point| {
        let v = t * Vector3::new(p.0, p.1, 1.0);
        (v[0], v[1])
    };
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let (x, y) = norm(&ts, s);
        let (u, v) = norm(&td, d);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration)?;
    let (min_i, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .ok_or(Error::DegenerateConfiguration)?;
    let h = v_t.row(min_i);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(Error::DegenerateConfiguration)?;
    let m = td_inv * hn * ts;
    let out = Homography::from_matrix(m).map_err(|_| Error::DegenerateConfiguration)?;
    if out.det().abs() <= SINGULAR_DET {
        return Err(Error::DegenerateConfiguration);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    /// Inlier reprojection threshold in pixels.
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold_px: 3.0,
            confidence: 0.99,
            max_iterations: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacResult {
    pub homography: Homography,
    pub inliers: Vec<bool>,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

fn collinear(a: Point, b: Point, c: Point) -> bool {
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    cross.abs() < 1e-6
}

fn degenerate_sample(pts: &[Point; 4]) -> bool {
    let idx = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    idx.iter().any(|&(i, j, k)| collinear(pts[i], pts[j], pts[k]))
}

fn score(h: &Homography, src: &[Point], dst: &[Point], thr: f64) -> (Vec<bool>, usize, f64) {
    let mut mask = Vec::with_capacity(src.len());
    let (mut count, mut err_sum) = (0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let e = h.reprojection_error(*s, *d);
        let ok = e.is_finite() && e < thr;
        if ok {
            count += 1;
            err_sum += e;
        }
        mask.push(ok);
    }
    (mask, count, err_sum)
}

/// RANSAC over 4-point normalized DLT hypotheses with adaptive termination,
/// followed by a refit on all inliers.
pub fn ransac_homography(src: &[Point], dst: &[Point], params: &RansacParams, seed: u64) -> Result<RansacResult> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::InvalidArgument("correspondence lists differ in length".into()));
    }
    if n < 4 {
        return Err(Error::TooFewMatches(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Homography, usize, f64)> = None;
    let mut needed = params.max_iterations;
    let mut iter = 0;
    while iter < needed.min(params.max_iterations) {
        iter += 1;
        let mut idx = [0usize; 4];
        let mut k = 0;
        while k < 4 {
            let c = rng.random_range(0..n);
            if !idx[..k].contains(&c) {
                idx[k] = c;
                k += 1;
            }
        }
        let s4 = idx.map(|i| src[i]);
        let d4 = idx.map(|i| dst[i]);
        if degenerate_sample(&s4) || degenerate_sample(&d4) {
            continue;
        }
        let h = match dlt(&s4, &d4) {
            Ok(h) => h,
            Err(_) => continue,
        };
        let (_, count, err) = score(&h, src, dst, params.threshold_px);
        let better = match &best {
            None => true,
            Some((_, bc, be)) => count > *bc || (count == *bc && err < *be),
        };
        if better {
            best = Some((h, count, err));
            let w = count as f64 / n as f64;
            let p_fail = 1.0 - w.powi(4);
            needed = if p_fail <= f64::EPSILON {
                0
            } else {
                let est = (1.0 - params.confidence).ln() / p_fail.ln();
                if est.is_finite() {
                    est.ceil().max(1.0) as usize
                } else {
                    params.max_iterations
                }
            };
        }
    }
    let (h, count, _) = best.ok_or(Error::DegenerateConfiguration)?;
    let (mask, _, _) = score(&h, src, dst, params.threshold_px);
    let mut result = RansacResult {
        homography: h,
        inliers: mask,
    };
    if count >= 4 {
        let (s, d): (Vec<Point>, Vec<Point>) = src
            .iter()
            .zip(dst)
            .zip(&result.inliers)
            .filter(|(_, ok)| **ok)
            .map(|((s, d), _)| (*s, *d))
            .unzip();
        if let Some(refit) = refit_inliers(&s, &d) {
            let (mask, refit_count, _) = score(&refit, src, dst, params.threshold_px);
            // The sampled model is tuned to its own consensus set; the refit may
            // trade a handful of marginal inliers for a far better overall fit.
            if refit_count as f64 >= REFIT_KEEP * count as f64 {
                result = RansacResult {
                    homography: refit,
                    inliers: mask,
                };
            }
        }
    }
    Ok(result)
}

/// Fraction of the sampled consensus the least-squares refit must retain.
const REFIT_KEEP: f64 = 0.95;

/// A lower-order model is kept unless the full homography fits noticeably better.
const MODEL_RESIDUAL_SLACK: f64 = 1.1;

fn median_residual(h: &Homography, src: &[Point], dst: &[Point]) -> f64 {
    let mut r: Vec<f64> = src.iter().zip(dst).map(|(s, d)| h.reprojection_error(*s, *d)).collect();
    r.sort_by(f64::total_cmp);
    r[r.len() / 2]
}

/// Least-squares refit on the consensus set. Similarity, affine and full
/// projective models are tried in order; the first whose median residual is within
/// a small factor of the projective one wins, so keypoint noise is not absorbed
/// into spurious shear or perspective terms.
fn refit_inliers(src: &[Point], dst: &[Point]) -> Option<Homography> {
    let full = dlt(src, dst).ok()?;
    let limit = median_residual(&full, src, dst) * MODEL_RESIDUAL_SLACK + 1e-9;
    [fit_similarity(src, dst), fit_affine(src, dst)]
        .into_iter()
        .flatten()
        .find(|h| median_residual(h, src, dst) <= limit)
        .or(Some(full))
}

/// Least-squares similarity (rotation, isotropic scale, translation).
pub(crate) fn fit_similarity(src: &[Point], dst: &[Point]) -> Option<Homography> {
    let n = src.len() as f64;
    if src.len() < 2 {
        return None;
    }
    let mean = |p: &[Point]| p.iter().fold((0.0, 0.0), |a, q| (a.0 + q.0 / n, a.1 + q.1 / n));
    let (ms, md) = (mean(src), mean(dst));
    let (mut dot, mut cross, mut var) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (sx, sy) = (s.0 - ms.0, s.1 - ms.1);
        let (dx, dy) = (d.0 - md.0, d.1 - md.1);
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
        var += sx * sx + sy * sy;
    }
    if var <= SINGULAR_DET {
        return None;
    }
    let (a, b) = (dot / var, cross / var);
    Homography::from_matrix(Matrix3::new(
        a,
        -b,
        md.0 - a * ms.0 + b * ms.1,
        b,
        a,
        md.1 - b * ms.0 - a * ms.1,
        0.0,
        0.0,
        1.0,
    ))
    .ok()
}

/// Least-squares affine map.
pub(crate) fn fit_affine(src: &[Point], dst: &[Point]) -> Option<Homography> {
    if src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let mean = |p: &[Point]| p.iter().fold((0.0, 0.0), |a, q| (a.0 + q.0 / n, a.1 + q.1 / n));
    let (ms, md) = (mean(src), mean(dst));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut ux, mut uy, mut vx, mut vy) = (0.0, 0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (sx, sy) = (s.0 - ms.0, s.1 - ms.1);
        let (dx, dy) = (d.0 - md.0, d.1 - md.1);
        sxx += sx * sx;
        sxy += sx * sy;
        syy += sy * sy;
        ux += sx * dx;
        uy += sy * dx;
        vx += sx * dy;
        vy += sy * dy;
    }
    let det = sxx * syy - sxy * sxy;
    if det.abs() <= SINGULAR_DET * (sxx * syy).max(1.0) {
        return None;
    }
    let a = (syy * ux - sxy * uy) / det;
    let b = (sxx * uy - sxy * ux) / det;
    let c = (syy * vx - sxy * vy) / det;
    let d = (sxx * vy - sxy * vx) / det;
    Homography::from_matrix(Matrix3::new(
        a,
        b,
        md.0 - a * ms.0 - b * ms.1,
        c,
        d,
        md.1 - c * ms.0 - d * ms.1,
        0.0,
        0.0,
        1.0,
    ))
    .ok()
}

/// Homography mapping query keypoints onto train keypoints.
pub fn estimate_homography(
    matches: &[Match],
    query_kps: &[Keypoint],
    train_kps: &[Keypoint],
    params: &RansacParams,
    seed: u64,
) -> Result<RansacResult> {
    if matches.len() < 4 {
        return Err(Error::TooFewMatches(matches.len()));
    }
    let mut src = Vec::with_capacity(matches.len());
    let mut dst = Vec::with_capacity(matches.len());
    for m in matches {
        let q = query_kps
            .get(m.query)
            .ok_or_else(|| Error::InvalidArgument(format!("query index {} out of range", m.query)))?;
        let t = train_kps
            .get(m.train)
            .ok_or_else(|| Error::InvalidArgument(format!("train index {} out of range", m.train)))?;
        src.push((q.x, q.y));
        dst.push((t.x, t.y));
    }
    ransac_homography(&src, &dst, params, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_angles() {
        assert_eq!(rotation_from_homography(&Homography::identity()).unwrap(), 0.0);
        let h = Homography::similarity(5.0, 1.0, 0.0, 0.0);
        assert!((rotation_from_homography(&h).unwrap() - 5.0).abs() < 1e-12);
        let h = Homography::similarity(5.0, 1.1, 30.0, 40.0);
        assert!((rotation_from_homography(&h).unwrap() - 5.0).abs() < 1e-9);
        let h = Homography::similarity(180.0, 1.0, 0.0, 0.0);
        assert_eq!(rotation_from_homography(&h).unwrap(), 180.0);
    }

    #[test]
    fn singular() {
        let h = Homography([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(rotation_from_homography(&h), Err(Error::SingularHomography)));
        assert!(h.inverse().is_err());
    }

    #[test]
    fn too_few() {
        let p = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
        assert!(matches!(
            ransac_homography(&p, &p, &RansacParams::default(), 0),
            Err(Error::TooFewMatches(3))
        ));
    }

    #[test]
    fn inverse_round_trip() {
        let h = Homography([[1.1, 0.05, 3.0], [-0.02, 0.95, -7.0], [1e-4, -2e-4, 1.0]]);
        let back = h.compose(&h.inverse().unwrap()).unwrap();
        for (r, row) in back.0.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
    }
}
