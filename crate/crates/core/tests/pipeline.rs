use printqc::align::AlignConfig;
use printqc::features::{extract_corpus, extract_features, read_feature_table, write_feature_table, ExtractConfig, FeatureVector};
use printqc::filters::FilterId;
use printqc::imgcore::crop;
use printqc::iqm::{mse, MetricId};
use printqc::monitor::{detect_anomalies, fit_sinusoid_auto, RotationSample};
use printqc::preselect::{preselect, Partition, PreselectConfig};
use printqc::synth::{
    apply_defect, generate_corpus, read_corpus_info, render_layers, render_reference, sample_instance, CorpusConfig,
    DefectKind, DefectSpec, Label,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn small_corpus() -> CorpusConfig {
    CorpusConfig {
        width: 128,
        height: 128,
        acceptable: 5,
        unacceptable: 5,
        ..Default::default()
    }
}

fn assert_identity_features(fv: &FeatureVector, tol: f64) {
    for f in FilterId::ALL {
        assert!(fv.get(f, MetricId::Mse) <= tol, "{f} mse");
        assert!(fv.get(f, MetricId::Nrmse) <= tol.sqrt(), "{f} nrmse");
        assert!(fv.get(f, MetricId::Ssim) >= 1.0 - tol.sqrt(), "{f} ssim");
    }
}

#[test]
fn reference_against_itself_gives_identity_features() {
    let cfg = CorpusConfig::default();
    let r = render_reference(&cfg);
    let window = cfg.default_window();
    let (plain, a) = extract_features(&r, &r, window, &AlignConfig::default(), false, 0).unwrap();
    assert!(!a.succeeded);
    for f in FilterId::ALL {
        assert_eq!(plain.get(f, MetricId::Mse), 0.0);
        assert_eq!(plain.get(f, MetricId::Nrmse), 0.0);
        assert!((plain.get(f, MetricId::Ssim) - 1.0).abs() < 1e-12);
    }
    // Registration of an image onto itself is the identity up to sub-pixel noise.
    let (aligned, a) = extract_features(&r, &r, window, &AlignConfig::default(), true, 0).unwrap();
    assert!(a.succeeded);
    assert!(a.rotation_deg.abs() < 0.05);
    assert_identity_features(&aligned, 1e-3);
}

#[test]
fn smear_distance_grows_with_magnitude() {
    let cfg = CorpusConfig::default();
    let mut params = sample_instance(&cfg, 5);
    params.pose = Default::default();
    let clean = render_layers(&cfg, &params);
    let window = cfg.default_window();
    let base = crop(&clean.compose(), window).unwrap();
    let mut last = 0.0;
    for m in [1.0, 3.0, 6.0, 10.0] {
        let smeared = apply_defect(&clean, DefectSpec { kind: DefectKind::Smear, magnitude: m }, 7).unwrap();
        let d = mse(&crop(&smeared.compose(), window).unwrap(), &base).unwrap();
        assert!(d > last, "smear {m}: {d} <= {last}");
        last = d;
    }
}

#[test]
fn corpus_generation_and_extraction_are_deterministic() {
    let cfg = small_corpus();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ea = generate_corpus(&cfg, a.path()).unwrap();
    let eb = generate_corpus(&cfg, b.path()).unwrap();
    assert_eq!(ea, eb);
    assert_eq!(ea.iter().filter(|e| e.label == Label::Unacceptable).count(), 5);
    for e in &ea {
        let pa = std::fs::read(a.path().join(&e.path)).unwrap();
        let pb = std::fs::read(b.path().join(&e.path)).unwrap();
        assert_eq!(pa, pb, "{}", e.id);
    }
    let info = read_corpus_info(a.path()).unwrap();
    assert_eq!(info.count, 10);

    let ecfg = ExtractConfig::default();
    let ra = extract_corpus(a.path(), None, &ecfg, 0).unwrap();
    let rb = extract_corpus(b.path(), None, &ecfg, 0).unwrap();
    let sa: Vec<_> = ra.into_iter().map(|r| r.0).collect();
    let sb: Vec<_> = rb.into_iter().map(|r| r.0).collect();
    assert_eq!(sa, sb);
    let (ta, tb) = (a.path().join("f.csv"), b.path().join("f.csv"));
    write_feature_table(&sa, &ta).unwrap();
    write_feature_table(&sb, &tb).unwrap();
    assert_eq!(std::fs::read(&ta).unwrap(), std::fs::read(&tb).unwrap());
    assert_eq!(read_feature_table(&ta).unwrap(), sa);
}

#[test]
fn preselect_flags_gross_defects() {
    let cfg = CorpusConfig::default();
    let reference = render_reference(&cfg);
    let mut images = Vec::new();
    // The rule compares against the batch mean, so defects must be rare.
    for i in 0..40u64 {
        let layers = render_layers(&cfg, &sample_instance(&cfg, 100 + i));
        let layers = if i < 2 {
            apply_defect(&layers, DefectSpec { kind: DefectKind::Erasure, magnitude: 0.6 }, i).unwrap()
        } else {
            layers
        };
        images.push((format!("p{i:02}"), layers.compose()));
    }
    let r = preselect(&images, &reference, cfg.default_window(), &PreselectConfig::default(), 0).unwrap();
    assert_eq!(r.entries[0].partition, Partition::PotentialUnacceptable);
    assert_eq!(r.entries[1].partition, Partition::PotentialUnacceptable);
    // Deviation is two-sided: a clean print may only be flagged for being unusually close.
    for e in &r.entries[2..] {
        assert!(e.partition != Partition::PotentialUnacceptable || e.score < r.mean_score, "{e:?}");
    }
}

#[test]
fn monitor_recovers_noisy_sinusoid_and_flags_spike() {
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let omega = 2.0 * std::f64::consts::PI / 400.0;
    let mut series: Vec<RotationSample> = (0..300)
        .map(|i| {
            let t = 10.0 * i as f64;
            RotationSample {
                timestamp: t,
                angle: 3.0 * (omega * t).sin() + 0.5 + noise.sample(&mut rng),
            }
        })
        .collect();
    series[123].angle += 3.0;
    let fit = fit_sinusoid_auto(&series).unwrap();
    assert!((fit.amplitude - 3.0).abs() < 0.15);
    assert!((fit.offset - 0.5).abs() < 0.1);
    assert!((fit.omega - omega).abs() / omega < 0.01);
    let flags = detect_anomalies(&series, &fit, 3.0);
    assert_eq!(flags.len(), 1);
    assert_eq!(flags[0].timestamp, series[123].timestamp);
}
