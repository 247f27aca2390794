use printqc::filters::{apply_filter, sobel_gradients, FilterId};
use printqc::imgcore::GrayImage;
use printqc::iqm::{mse, nrmse, ssim};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.random::<f64>())
}

fn px(img: &GrayImage, x: usize, y: usize) -> f64 {
    img.data()[y * img.width() + x]
}

fn mse_oracle(a: &GrayImage, b: &GrayImage) -> f64 {
    let mut s = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let d = px(a, x, y) - px(b, x, y);
            s += d * d;
        }
    }
    s / (a.width() * a.height()) as f64
}

fn nrmse_oracle(t: &GrayImage, r: &GrayImage) -> f64 {
    let mut rr = 0.0;
    for y in 0..r.height() {
        for x in 0..r.width() {
            rr += px(r, x, y) * px(r, x, y);
        }
    }
    let n = (r.width() * r.height()) as f64;
    mse_oracle(t, r).sqrt() / (rr / n).sqrt()
}

/// Direct two-pass window statistics, no summed-area tables.
fn ssim_oracle(a: &GrayImage, b: &GrayImage) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let k = 7;
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut windows = 0;
    for y0 in 0..=a.height() - k {
        for x0 in 0..=a.width() - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for y in y0..y0 + k {
                for x in x0..x0 + k {
                    ma += px(a, x, y);
                    mb += px(b, x, y);
                }
            }
            ma /= n;
            mb /= n;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in y0..y0 + k {
                for x in x0..x0 + k {
                    let (da, db) = (px(a, x, y) - ma, px(b, x, y) - mb);
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= n - 1.0;
            vb /= n - 1.0;
            cov /= n - 1.0;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    total / windows as f64
}

#[test]
fn metrics_match_double_loop_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        assert!((mse(&a, &b).unwrap() - mse_oracle(&a, &b)).abs() < 1e-12);
        assert!((nrmse(&a, &b).unwrap() - nrmse_oracle(&a, &b)).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn ssim_oracle_on_correlated_and_rectangular_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (w, h) in [(7, 7), (9, 20), (31, 8)] {
        let a = random_image(&mut rng, w, h);
        let b = GrayImage::from_fn(w, h, |x, y| (0.7 * px(&a, x, y) + 0.3 * rng.random::<f64>()).min(1.0));
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn identical_images_are_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = random_image(&mut rng, 24, 18);
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
    assert_eq!(nrmse(&a, &a).unwrap(), 0.0);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

fn clamped(img: &GrayImage, x: isize, y: isize) -> f64 {
    let cx = x.clamp(0, img.width() as isize - 1) as usize;
    let cy = y.clamp(0, img.height() as isize - 1) as usize;
    px(img, cx, cy)
}

#[test]
fn sobel_matches_explicit_kernels() {
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let img = random_image(&mut rng, 13, 10);
    let g = sobel_gradients(&img).unwrap();
    let v = apply_filter(&img, FilterId::SobelV).unwrap();
    let hz = apply_filter(&img, FilterId::SobelH).unwrap();
    let m = apply_filter(&img, FilterId::Sobel).unwrap();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..3 {
                for i in 0..3 {
                    let p = clamped(&img, x as isize + i as isize - 1, y as isize + j as isize - 1);
                    gx += kx[j][i] * p;
                    gy += kx[i][j] * p;
                }
            }
            let k = y * img.width() + x;
            assert!((g.gx[k] - gx).abs() < 1e-12);
            assert!((g.gy[k] - gy).abs() < 1e-12);
            assert!((v.data()[k] - gx.abs() / 4.0).abs() < 1e-12);
            assert!((hz.data()[k] - gy.abs() / 4.0).abs() < 1e-12);
            let mag = (gx * gx + gy * gy).sqrt() / (4.0 * 2f64.sqrt());
            assert!((m.data()[k] - mag).abs() < 1e-12);
        }
    }
}

#[test]
fn every_filter_stays_in_unit_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let img = random_image(&mut rng, 40, 33);
    for f in FilterId::ALL {
        let out = apply_filter(&img, f).unwrap();
        assert_eq!(out.dims(), img.dims());
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)), "{f}");
    }
}

#[test]
fn canny_finds_a_step_edge_only_near_the_step() {
    let img = GrayImage::from_fn(64, 48, |x, _| if x < 32 { 0.1 } else { 0.9 });
    for f in [FilterId::Canny2, FilterId::Canny2_5, FilterId::Canny3] {
        let e = apply_filter(&img, f).unwrap();
        assert!(e.data().iter().all(|v| *v == 0.0 || *v == 1.0));
        let mut hits = 0;
        for y in 0..48 {
            for x in 0..64 {
                if px(&e, x, y) == 1.0 {
                    assert!((30..=33).contains(&x), "{f}: edge pixel at x={x}");
                    hits += 1;
                }
            }
        }
        assert!(hits >= 40, "{f}: {hits}");
    }
    let flat = GrayImage::filled(32, 32, 0.4);
    assert!(apply_filter(&flat, FilterId::Canny2).unwrap().data().iter().all(|v| *v == 0.0));
}
