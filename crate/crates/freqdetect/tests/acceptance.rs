//! Acceptance suite: one test per release gate, each printing a single
//! `[PASS] ...` line with the measured numbers. Covers the transform and
//! gradient oracles, attack invariants, metric arithmetic against the
//! published benchmark tables, the desk-scale detection pipeline, the
//! ε trend, end-to-end determinism, and serialization round-trips.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use freqdetect::attacks::{fgsm, pgd, square_attack, AttackBudget, AttackKind};
use freqdetect::data::{decode_cifar10, encode_cifar10, Image};
use freqdetect::detectors::{logreg_gradient, logreg_loss, Detector, DetectorKind};
use freqdetect::harness::{
    build_features, cmd_pipeline, prepare_target, run_cascade, train_and_evaluate, AttackPool,
    ExperimentConfig,
};
use freqdetect::metrics::{self, ReportConfig};
use freqdetect::smallnet::{Architecture, LayerSpec, Network};
use freqdetect::spectral::{dft2_brute, fft2, FeatureMode, FeatureVector};

fn random_image(channels: usize, h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..channels * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    Image::new(channels, h, w, pixels).unwrap()
}

fn tiny_arch() -> Architecture {
    Architecture {
        input: (3, 8, 8),
        layers: vec![
            LayerSpec::Conv2d { in_ch: 3, out_ch: 4, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { inputs: 4, outputs: 2 },
        ],
    }
}

#[test]
fn transform_oracle() {
    let start = Instant::now();
    let sizes = [2usize, 3, 4, 5, 8, 12, 16, 32];
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for &r in &sizes {
        for &c in &sizes {
            let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = fft2(&data, r, c).unwrap();
            let brute = dft2_brute(&data, r, c).unwrap();
            let norm = brute.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
            let err =
                fast.iter().zip(&brute).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(err / norm);
            assert!(err / norm < 1e-9, "{r}x{c}: relative error {}", err / norm);
        }
    }
    // Parseval and linearity on 100 random matrices
    for i in 0..100u64 {
        let r = sizes[(i % 8) as usize];
        let c = sizes[((i / 8) % 8) as usize];
        let a: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fa = fft2(&a, r, c).unwrap();
        let fb = fft2(&b, r, c).unwrap();
        let spatial: f64 = a.iter().map(|v| v * v).sum();
        let spectral: f64 =
            fa.iter().map(|z| z.norm_sqr()).sum::<f64>() / (r * c) as f64;
        assert!(
            (spatial - spectral).abs() <= 1e-9 * spatial.max(1.0),
            "Parseval {r}x{c}: {spatial} vs {spectral}"
        );
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x + 3.0 * y).collect();
        let fc = fft2(&combo, r, c).unwrap();
        for ((z, x), y) in fc.iter().zip(&fa).zip(&fb) {
            assert!((z - (2.0 * x + 3.0 * y)).norm() <= 1e-9 * (1.0 + z.norm()));
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!(
        "[PASS] transform oracle: fast transform matches brute-force definition on 64 size pairs \
         (worst rel err {worst:.2e}), Parseval+linearity on 100 matrices, {elapsed:.2?} < 10s"
    );
}

#[test]
fn gradient_oracles() {
    let start = Instant::now();

    // Network input gradient vs central finite differences, 100 coordinates.
    let net = Network::new(Architecture::default_for(2), 31).unwrap();
    let img = random_image(3, 32, 32, 32);
    let grad = net.input_gradient(&img, 1).unwrap();
    // h small enough that central differences rarely straddle a relu kink
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let h = 1e-6;
    let mut worst_net = 0.0f64;
    for _ in 0..100 {
        let idx = rng.gen_range(0..img.pixels.len());
        let mut plus = img.clone();
        plus.pixels[idx] += h;
        let mut minus = img.clone();
        minus.pixels[idx] -= h;
        let fd = (net.loss(&plus, 1).unwrap() - net.loss(&minus, 1).unwrap()) / (2.0 * h);
        let rel = (grad.data[idx] - fd).abs() / grad.data[idx].abs().max(fd.abs()).max(1e-6);
        worst_net = worst_net.max(rel);
        assert!(rel < 1e-3, "coordinate {idx}: analytic {} vs fd {fd}", grad.data[idx]);
    }

    // Logistic-regression loss gradient vs central finite differences.
    let dim = 120;
    let n = 40;
    let rows: Vec<Vec<f64>> =
        (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let weights: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let bias = 0.3;
    let lambda = 1e-4;
    let (gw, gb) = logreg_gradient(&weights, bias, &rows, &labels, lambda);
    // larger step than the net check: the smooth logistic loss is rounding-
    // dominated, not kink-limited
    let hh = 1e-5;
    let mut worst_lr = 0.0f64;
    let mut check = |analytic: f64, fd: f64, what: &str| {
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        worst_lr = worst_lr.max(rel);
        assert!(rel < 1e-6, "{what}: analytic {analytic} vs fd {fd}");
    };
    for _ in 0..99 {
        let idx = rng.gen_range(0..dim);
        let mut wp = weights.clone();
        wp[idx] += hh;
        let mut wm = weights.clone();
        wm[idx] -= hh;
        let fd = (logreg_loss(&wp, bias, &rows, &labels, lambda)
            - logreg_loss(&wm, bias, &rows, &labels, lambda))
            / (2.0 * hh);
        check(gw[idx], fd, "weight");
    }
    let fd_bias = (logreg_loss(&weights, bias + hh, &rows, &labels, lambda)
        - logreg_loss(&weights, bias - hh, &rows, &labels, lambda))
        / (2.0 * hh);
    check(gb, fd_bias, "bias");

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "[PASS] gradient oracles: net input gradient rel err {worst_net:.2e} < 1e-3, \
         logistic-regression gradient rel err {worst_lr:.2e} < 1e-6, 100 coords each, \
         {elapsed:.2?} < 30s"
    );
}

#[test]
fn attack_invariants() {
    let net = Network::new(tiny_arch(), 41).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..1000u64 {
        let epsilon = rng.gen_range(1..=16) as f64 / 255.0;
        let label = rng.gen_range(0..2usize);
        let img = random_image(3, 8, 8, 5000 + i);
        let budget = AttackBudget {
            epsilon,
            steps: 5,
            step_size: epsilon / 4.0,
            seed: 6000 + i,
            random_start: true,
        };
        let outcome = match i % 3 {
            0 => fgsm(&net, &img, label, &budget, i as usize).unwrap(),
            1 => pgd(&net, &img, label, &budget, i as usize).unwrap(),
            _ => square_attack(&net, &img, label, &budget, i as usize).unwrap(),
        };
        let dist = outcome.original.linf_distance(&outcome.adversarial);
        assert!(dist <= epsilon + 1e-9, "outcome {i}: L-inf {dist} > ε {epsilon}");
        assert!(
            outcome.adversarial.pixels.iter().all(|p| (0.0..=1.0).contains(p)),
            "outcome {i}: pixel outside [0,1]"
        );
    }

    // Single-step projected descent without random start degenerates to the
    // one-shot sign attack, bit for bit.
    let big = Network::new(Architecture::default_for(2), 43).unwrap();
    for i in 0..20u64 {
        let (net, img) = if i < 16 {
            (&net, random_image(3, 8, 8, 7000 + i))
        } else {
            (&big, random_image(3, 32, 32, 7000 + i))
        };
        let epsilon = 8.0 / 255.0;
        let budget = AttackBudget {
            epsilon,
            steps: 1,
            step_size: epsilon,
            seed: 0,
            random_start: false,
        };
        let label = net.predict(&img).unwrap();
        let a = pgd(net, &img, label, &budget, i as usize).unwrap();
        let b = fgsm(net, &img, label, &budget, i as usize).unwrap();
        assert_eq!(a.adversarial.pixels, b.adversarial.pixels, "sample {i} differs");
    }
    println!(
        "[PASS] attack invariants: 1000 randomized outcomes inside the ε-ball and [0,1], \
         single-step degenerate case bit-identical to the one-shot attack"
    );
}

/// Published (ASR, FNR, ASRD) percentage triples from the two benchmark
/// result tables this library mirrors. The final score column is defined as
/// FNR·ASR, so each printed triple is re-derivable from the other two.
const TABLE_TRIPLES: &[(f64, f64, f64)] = &[
    (100.0, 0.0, 0.0),
    (100.0, 0.3, 0.3),
    (93.1, 5.3, 4.9),
    (49.6, 22.7, 11.3),
    (12.3, 46.7, 5.8),
    (100.0, 0.0, 0.0),
    (100.0, 5.0, 5.0),
    (93.1, 5.0, 4.6),
    (49.6, 37.3, 18.5),
    (12.3, 52.0, 6.4),
    (100.0, 0.7, 0.7),
    (100.0, 8.7, 8.7),
    (100.0, 28.0, 28.0),
    (99.9, 43.7, 43.6),
    (96.9, 42.0, 40.7),
    (100.0, 1.3, 1.3),
    (100.0, 2.7, 2.7),
    (100.0, 16.7, 16.7),
    (99.9, 30.7, 30.6),
    (100.0, 0.0, 0.0),
    (100.0, 15.0, 15.0),
    (93.1, 28.7, 26.7),
    (49.6, 41.3, 20.5),
    (12.3, 48.3, 6.0),
    (100.0, 2.7, 2.7),
    (100.0, 18.0, 18.0),
    (93.1, 35.0, 32.6),
    (49.6, 46.0, 22.8),
    (100.0, 16.3, 16.3),
    (100.0, 36.0, 36.0),
    (100.0, 44.3, 44.3),
    (99.9, 50.7, 50.6),
    (96.9, 40.7, 39.4),
    (100.0, 3.0, 3.0),
    (100.0, 7.7, 7.7),
    (100.0, 20.7, 20.7),
    (99.9, 40.7, 40.6),
    (96.9, 50.0, 48.5),
];

/// Rows of the source tables that contradict their own defining identity
/// (printed score, actual FNR·ASR product). They cannot match any correct
/// implementation within 0.1pp and are asserted at their observed offsets.
const INCONSISTENT_TRIPLES: &[(f64, f64, f64, f64)] =
    &[(12.3, 50.0, 6.0, 6.15), (96.9, 41.0, 38.1, 39.729)];

#[test]
fn table_arithmetic_oracle() {
    for &(asr_pct, fnr_pct, asrd_pct) in TABLE_TRIPLES {
        let computed = 100.0 * metrics::asrd(fnr_pct / 100.0, asr_pct / 100.0);
        assert!(
            (computed - asrd_pct).abs() <= 0.1 + 1e-12,
            "ASR {asr_pct} x FNR {fnr_pct} -> {computed:.3}, printed {asrd_pct}"
        );
    }
    for &(asr_pct, fnr_pct, printed, actual) in INCONSISTENT_TRIPLES {
        let computed = 100.0 * metrics::asrd(fnr_pct / 100.0, asr_pct / 100.0);
        assert!((computed - actual).abs() <= 1e-9);
        // The printed value genuinely breaks the identity; flag if a future
        // transcription fix makes it consistent again.
        assert!((computed - printed).abs() > 0.1);
    }
    println!(
        "[PASS] table arithmetic oracle: {} published triples reproduce FNR·ASR within 0.1pp; \
         2 known-inconsistent source rows verified at their actual products",
        TABLE_TRIPLES.len()
    );
}

#[test]
fn desk_scale_pipeline() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.out_dir = dir.path().join("run");
    let summary = cmd_pipeline(&cfg).unwrap();
    let elapsed = start.elapsed();

    assert!(summary.test_accuracy >= 0.90, "test accuracy {}", summary.test_accuracy);
    let (_, asr) = summary.asr_per_epsilon[0];
    assert!(asr >= 0.90, "ASR {asr}");
    let cell = &summary.cells[0];
    assert_eq!((cell.mode.as_str(), cell.detector.as_str()), ("black", "rf"));
    assert!(cell.report.f1 >= 0.90, "F1 {}", cell.report.f1);
    assert!(cell.report.fnr <= 0.10, "FNR {}", cell.report.fnr);
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    println!(
        "[PASS] desk-scale pipeline: accuracy {:.3} ≥ 0.90, ASR {:.3} ≥ 0.90, F1 {:.3} ≥ 0.90, \
         FNR {:.3} ≤ 0.10, {elapsed:.1?} < 300s",
        summary.test_accuracy, asr, cell.report.f1, cell.report.fnr
    );
}

#[test]
fn epsilon_trend() {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = freqdetect::harness::DatasetSource::Synthetic {
        classes: 2,
        per_class: 750,
        size: 32,
    };
    cfg.epochs = 8;
    cfg.attack_samples = 600;
    cfg.epsilons = vec![8.0 / 255.0, 2.0 / 255.0, 0.5 / 255.0];

    let target = prepare_target(&cfg).unwrap();
    let pool = AttackPool { images: target.pool_images, labels: target.pool_labels };
    let mut medians = Vec::new();
    for &epsilon in &cfg.epsilons.clone() {
        let (outcomes, _) = run_cascade(&cfg, &target.net, &pool, epsilon).unwrap();
        let asr = metrics::compute_asr(&outcomes).unwrap();
        let mut f1s = Vec::new();
        for seed in 0..5u64 {
            let mut per_seed = cfg.clone();
            per_seed.seed = 1000 * seed + 17;
            let ds = build_features(
                &per_seed,
                &target.net,
                &pool.images,
                &outcomes,
                &FeatureMode::Black,
            )
            .unwrap();
            let report_cfg = ReportConfig {
                epsilon,
                mode: "black".into(),
                detector: "rf".into(),
                seed: per_seed.seed,
            };
            let (_, report) =
                train_and_evaluate(&ds, DetectorKind::Forest, asr, report_cfg).unwrap();
            f1s.push(report.f1);
        }
        f1s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(f1s[2]);
    }
    assert!(
        medians[0] >= medians[1] && medians[1] >= medians[2],
        "median F1 not non-increasing: {medians:?}"
    );
    assert!(
        medians[0] - medians[2] >= 0.15,
        "largest-to-smallest ε F1 gap {:.3} < 0.15 ({medians:?})",
        medians[0] - medians[2]
    );
    println!(
        "[PASS] ε trend: median F1 over 5 seeds {:.3}/{:.3}/{:.3} at ε = 8/255, 2/255, 0.5/255 \
         (non-increasing, gap {:.3} ≥ 0.15)",
        medians[0],
        medians[1],
        medians[2],
        medians[0] - medians[2]
    );
}

fn collect_files(root: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, base, out);
        } else {
            let rel = path.strip_prefix(base).unwrap().to_string_lossy().into_owned();
            out.insert(rel, std::fs::read(&path).unwrap());
        }
    }
}

#[test]
fn pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = freqdetect::harness::DatasetSource::Synthetic {
        classes: 2,
        per_class: 100,
        size: 32,
    };
    cfg.epochs = 5;
    cfg.attack_samples = 20;
    cfg.attacks = vec![AttackKind::Fgsm, AttackKind::Pgd];
    cfg.steps = 5;
    cfg.modes =
        vec![FeatureMode::Black, FeatureMode::White { layers: vec!["relu3".to_string()] }];
    cfg.seed = 5;

    // Rerun into the same directory: the config echo embeds the output path,
    // so only a true rerun is comparable byte for byte.
    cfg.out_dir = dir.path().join("run");
    cmd_pipeline(&cfg).unwrap();
    let mut a = BTreeMap::new();
    collect_files(&cfg.out_dir, &cfg.out_dir, &mut a);
    cmd_pipeline(&cfg).unwrap();
    let mut b = BTreeMap::new();
    collect_files(&cfg.out_dir, &cfg.out_dir, &mut b);
    a.remove("manifest.txt");
    b.remove("manifest.txt");
    let names_a: Vec<&String> = a.keys().collect();
    let names_b: Vec<&String> = b.keys().collect();
    assert_eq!(names_a, names_b, "emitted file sets differ");
    assert!(a.len() > 5, "suspiciously few artifacts: {names_a:?}");
    for (name, bytes) in &a {
        assert_eq!(bytes, &b[name], "artifact {name} differs between runs");
    }
    println!(
        "[PASS] determinism: two identical pipeline runs produced {} byte-identical artifacts \
         (manifest excluded)",
        a.len()
    );
}

#[test]
fn serialization_round_trips() {
    // Network
    let net = Network::new(Architecture::default_for(3), 91).unwrap();
    let mut bytes = Vec::new();
    net.save(&mut bytes).unwrap();
    let reloaded = Network::load(&mut bytes.as_slice()).unwrap();
    let mut bytes2 = Vec::new();
    reloaded.save(&mut bytes2).unwrap();
    assert_eq!(bytes, bytes2, "network bytes changed across a round trip");
    let img = random_image(3, 32, 32, 92);
    assert_eq!(
        net.forward(&img, &[]).unwrap().0.data,
        reloaded.forward(&img, &[]).unwrap().0.data
    );

    // Detectors, both kinds
    let mut rng = ChaCha8Rng::seed_from_u64(93);
    let features: Vec<FeatureVector> = (0..24)
        .map(|i| {
            let mut f =
                FeatureVector::unlabeled((0..12).map(|_| rng.gen_range(0.0..1.0)).collect());
            f.label = (i % 2) as u8;
            f
        })
        .collect();
    let refs: Vec<&FeatureVector> = features.iter().collect();
    for kind in [DetectorKind::LogReg, DetectorKind::Forest] {
        let det = Detector::train(&refs, kind, 94).unwrap();
        let mut db = Vec::new();
        det.save(&mut db).unwrap();
        let back = Detector::load(&mut db.as_slice()).unwrap();
        let mut db2 = Vec::new();
        back.save(&mut db2).unwrap();
        assert_eq!(db, db2, "{kind:?} bytes changed across a round trip");
        for f in &features {
            // f64 predictions must agree bit-exactly
            assert_eq!(
                det.predict(&f.values).unwrap().to_bits(),
                back.predict(&f.values).unwrap().to_bits()
            );
        }
    }

    // Image-record format
    let mut record_bytes = Vec::new();
    for i in 0..4u8 {
        record_bytes.push(i % 10);
        record_bytes.extend((0..3072).map(|j| ((i as usize * 37 + j * 11) % 256) as u8));
    }
    let decoded = decode_cifar10(&record_bytes).unwrap();
    let reencoded = encode_cifar10(&decoded).unwrap();
    assert_eq!(record_bytes, reencoded, "record bytes changed across a round trip");

    println!(
        "[PASS] serialization: network, both detector kinds, and the binary image-record \
         format round-trip bit-exactly"
    );
}
