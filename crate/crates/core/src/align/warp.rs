use super::homography::Homography;
use crate::error::Result;
use crate::imgcore::GrayImage;

/// Coordinates within this distance of an integer are sampled exactly.
const SNAP: f64 = 1e-9;

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

/// Bilinear sample; `None` outside the image.
#[inline]
pub(crate) fn bilinear(img: &GrayImage, u: f64, v: f64) -> Option<f64> {
    let (w, h) = img.dims();
    let (u, v) = (snap(u), snap(v));
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    if fx == 0.0 && fy == 0.0 {
        return Some(img.get(x0, y0));
    }
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bot = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    Some((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0))
}

/// Resamples `img` into an image of `out_dims` such that output pixel `p`
/// takes the source value at `h^-1 p`. Pixels mapping outside the source are 0.
pub fn warp_image(img: &GrayImage, h: &Homography, out_dims: (usize, usize)) -> Result<GrayImage> {
    let inv = h.inverse()?;
    let (w, ht) = out_dims;
    let mut data = Vec::with_capacity(w * ht);
    for y in 0..ht {
        for x in 0..w {
            let (u, v) = inv.apply((x as f64, y as f64));
            data.push(bilinear(img, u, v).unwrap_or(0.0));
        }
    }
    Ok(GrayImage::from_raw(w, ht, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn pattern(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| (((x * 37 + y * 91) % 101) as f64) / 100.0)
    }

    #[test]
    fn identity_is_exact() {
        let img = pattern(20, 15);
        assert_eq!(warp_image(&img, &Homography::identity(), (20, 15)).unwrap(), img);
    }

    #[test]
    fn integer_translation_is_exact() {
        let img = pattern(30, 20);
        let out = warp_image(&img, &Homography::translation(5.0, 3.0), (30, 20)).unwrap();
        for y in 0..20 {
            for x in 0..30 {
                if x >= 5 && y >= 3 {
                    assert_eq!(out.get(x, y), img.get(x - 5, y - 3));
                } else {
                    assert_eq!(out.get(x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn singular_rejected() {
        let img = pattern(8, 8);
        let h = Homography([[0.0; 3], [0.0; 3], [0.0, 0.0, 1.0]]);
        assert!(matches!(warp_image(&img, &h, (8, 8)), Err(Error::SingularHomography)));
    }
}
