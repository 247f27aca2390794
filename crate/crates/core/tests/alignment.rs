use printqc::align::{
    align, detect_keypoints, dlt, match_descriptors, ransac_homography, AlignConfig, Descriptor, Homography, Point,
    RansacParams,
};
use printqc::imgcore::GrayImage;
use printqc::synth::{render_layers, render_reference, sample_instance, CorpusConfig, InstanceParams, Pose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn posed(cfg: &CorpusConfig, seed: u64, rotation_deg: f64, shift: (f64, f64)) -> GrayImage {
    let params = InstanceParams {
        pose: Pose { rotation_deg, shift },
        reflections: sample_instance(cfg, seed).reflections,
    };
    render_layers(cfg, &params).compose()
}

#[test]
fn fast_fires_on_square_corners_only() {
    let img = GrayImage::from_fn(96, 96, |x, y| {
        if (30..66).contains(&x) && (30..66).contains(&y) {
            0.9
        } else {
            0.1
        }
    });
    let cfg = AlignConfig {
        pyramid_levels: 1,
        ..Default::default()
    };
    let kps = detect_keypoints(&img, &cfg).unwrap();
    assert!(!kps.is_empty());
    let corners = [(30.0, 30.0), (65.0, 30.0), (30.0, 65.0), (65.0, 65.0)];
    for kp in &kps {
        let d = corners
            .iter()
            .map(|c: &(f64, f64)| ((kp.x - c.0).powi(2) + (kp.y - c.1).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(d < 3.0, "keypoint ({}, {}) is {d:.2} px from any corner", kp.x, kp.y);
    }
    let flat = GrayImage::filled(96, 96, 0.5);
    assert!(detect_keypoints(&flat, &cfg).unwrap().is_empty());
}

/// Straightforward restatement of ratio test + mutual best match.
fn match_oracle(q: &[Descriptor], t: &[Descriptor], ratio: f64) -> Vec<(usize, usize)> {
    let best_of = |d: &Descriptor, pool: &[Descriptor]| -> (usize, u32, u32) {
        let mut order: Vec<(u32, usize)> = pool.iter().enumerate().map(|(i, p)| (d.hamming(p), i)).collect();
        order.sort();
        let second = order.get(1).map(|o| o.0).unwrap_or(u32::MAX);
        (order[0].1, order[0].0, second)
    };
    let mut out = Vec::new();
    for (qi, d) in q.iter().enumerate() {
        let (ti, best, second) = best_of(d, t);
        if second != u32::MAX && (second == 0 || best as f64 >= ratio * second as f64) {
            continue;
        }
        if best_of(&t[ti], q).0 == qi {
            out.push((qi, ti));
        }
    }
    out
}

#[test]
fn matcher_agrees_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..20 {
        let train: Vec<Descriptor> = (0..60).map(|_| Descriptor(rng.random())).collect();
        let query: Vec<Descriptor> = (0..45)
            .map(|i| {
                if i % 3 == 0 {
                    Descriptor(rng.random())
                } else {
                    let mut d = train[(i * 7 + trial) % 60].0;
                    for _ in 0..rng.random_range(0..40) {
                        let b = rng.random_range(0..256);
                        d[b / 64] ^= 1 << (b % 64);
                    }
                    Descriptor(d)
                }
            })
            .collect();
        let got: Vec<(usize, usize)> = match_descriptors(&query, &train, 0.75)
            .unwrap()
            .iter()
            .map(|m| (m.query, m.train))
            .collect();
        assert_eq!(got, match_oracle(&query, &train, 0.75));
        assert!(!got.is_empty());
    }
}

fn known_homography() -> Homography {
    Homography([[0.98, -0.12, 14.0], [0.10, 1.03, -6.0], [2e-4, -1e-4, 1.0]])
}

#[test]
fn ransac_rejects_gross_outliers() {
    let h = known_homography();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src: Vec<Point> = (0..20)
            .map(|_| (rng.random_range(0.0..400.0), rng.random_range(0.0..300.0)))
            .collect();
        let mut dst: Vec<Point> = src.iter().map(|p| h.apply(*p)).collect();
        for d in dst.iter_mut().take(6) {
            *d = (rng.random_range(0.0..400.0), rng.random_range(0.0..300.0));
        }
        let r = ransac_homography(&src, &dst, &RansacParams::default(), seed).unwrap();
        for i in 6..20 {
            assert!(r.inliers[i]);
            assert!(r.homography.reprojection_error(src[i], dst[i]) < 1.0);
        }
    }
}

#[test]
fn exact_correspondences_give_exact_homography() {
    let h = known_homography();
    let src: Vec<Point> = (0..20).map(|i| ((i * 37 % 400) as f64, (i * 53 % 300) as f64)).collect();
    let dst: Vec<Point> = src.iter().map(|p| h.apply(*p)).collect();
    let r = ransac_homography(&src, &dst, &RansacParams::default(), 0).unwrap();
    assert_eq!(r.inlier_count(), 20);
    for (s, d) in src.iter().zip(&dst) {
        assert!(r.homography.reprojection_error(*s, *d) < 1e-6);
    }
    let corners: Vec<Point> = vec![(0.0, 0.0), (400.0, 10.0), (390.0, 300.0), (5.0, 280.0)];
    let mapped: Vec<Point> = corners.iter().map(|p| h.apply(*p)).collect();
    let four = dlt(&corners, &mapped).unwrap();
    for (s, d) in src.iter().zip(&dst) {
        assert!(four.reprojection_error(*s, *d) < 1e-6);
    }
}

#[test]
fn recovers_rotation_of_synthetic_print() {
    let cfg = CorpusConfig::default();
    let reference = render_reference(&cfg);
    for (seed, theta) in [(1, 5.0), (2, -5.0), (3, 1.5)] {
        let test = posed(&cfg, seed, theta, (0.0, 0.0));
        let r = align(&test, &reference, &AlignConfig::default(), seed);
        assert!(r.succeeded);
        assert!((r.rotation_deg - theta).abs() < 0.5, "θ={theta}: got {}", r.rotation_deg);
    }
}

#[test]
fn recovers_translation_of_synthetic_print() {
    let cfg = CorpusConfig::default();
    let reference = render_reference(&cfg);
    let test = posed(&cfg, 4, 0.0, (5.0, 3.0));
    let r = align(&test, &reference, &AlignConfig::default(), 0);
    assert!(r.succeeded);
    let c = (127.5, 127.5);
    let d = r.displacement_at(c);
    assert!((d.0 - 5.0).abs() < 0.5 && (d.1 - 3.0).abs() < 0.5, "{d:?}");
    assert!(r.rotation_deg.abs() < 0.5);
}

#[test]
fn steered_descriptors_survive_quarter_turn() {
    let cfg = CorpusConfig::default();
    let reference = render_reference(&cfg);
    // Quarter turn clockwise about the image center (square image).
    let n = reference.width();
    let turned = GrayImage::from_fn(n, n, |x, y| reference.data()[(n - 1 - x) * n + y]);
    let r = align(&turned, &reference, &AlignConfig::default(), 0);
    assert!(r.succeeded);
    assert!((r.rotation_deg.abs() - 90.0).abs() < 0.5, "{}", r.rotation_deg);
}

#[test]
fn featureless_image_fails_gracefully() {
    let cfg = CorpusConfig::default();
    let reference = render_reference(&cfg);
    let blank = GrayImage::filled(256, 256, 0.3);
    let r = align(&blank, &reference, &AlignConfig::default(), 0);
    assert!(!r.succeeded);
    assert_eq!(r.warped, blank);
    assert_eq!(r.rotation_deg, 0.0);
}
