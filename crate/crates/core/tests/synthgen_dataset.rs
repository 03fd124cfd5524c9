use std::path::Path;

use lnet_core::synthgen::{
    generate_dataset, generate_sample, sample_seed, DatasetManifest, GenConfig, KindTag, SegmentKind, Split,
};
use lnet_core::Execution;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn small_config() -> GenConfig {
    GenConfig {
        image_size: 64,
        ..GenConfig::default()
    }
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        out.push((rel, std::fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn saved_samples_load_back_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let manifest = generate_dataset(7, 6, 4, dir.path(), &cfg, Execution::Sequential).unwrap();
    assert_eq!(manifest.entries.len(), 6);
    assert_eq!(manifest.entries(Some(Split::Train)).count(), 4);
    assert_eq!(manifest.entries(Some(Split::Test)).count(), 2);

    let loaded = DatasetManifest::load(dir.path()).unwrap();
    for (i, entry) in loaded.entries.iter().enumerate() {
        let back = loaded.load_sample(entry).unwrap();
        let orig = generate_sample(sample_seed(7, i as u64), &cfg).unwrap();
        let worst = back
            .image
            .pixels()
            .iter()
            .zip(orig.image.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1.0 / 510.0 + 1e-12, "sample {i}: {worst}");
        assert_eq!(back.gt_lines, orig.gt_lines);
        assert_eq!(back.seed, orig.seed);
        assert_eq!(back.noise_amplitude, orig.noise_amplitude);
        assert_eq!(back.blur_sigma, orig.blur_sigma);
    }
}

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(3, 5, 4, a.path(), &small_config(), Execution::Sequential).unwrap();
    generate_dataset(3, 5, 4, b.path(), &small_config(), Execution::default()).unwrap();
    let (fa, fb) = (read_all(a.path()), read_all(b.path()));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);
}

#[test]
fn truncated_image_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(1, 2, 1, dir.path(), &small_config(), Execution::Sequential).unwrap();
    let entry = &manifest.entries[0];
    let path = dir.path().join(&entry.image);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = DatasetManifest::load(dir.path()).unwrap().load_sample(entry).unwrap_err();
    assert!(err.to_string().contains(&entry.image), "{err}");
}

#[test]
fn empty_dataset_iterates_nothing() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(1, 0, 0, dir.path(), &small_config(), Execution::Sequential).unwrap();
    let m = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(m.entries(None).count(), 0);
    assert!(m.load_split(None, Execution::Sequential).unwrap().is_empty());
}

#[test]
fn line_counts_are_uniform() {
    let cfg = small_config();
    let mut counts = [0usize; 5];
    let total = 10_000;
    for i in 0..total {
        let s = generate_sample(sample_seed(11, i), &cfg).unwrap();
        counts[s.gt_lines.len() - 1] += 1;
    }
    let expected = total as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(4.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "counts {counts:?}: chi2 {chi2}, p {p}");
}

#[test]
fn dotted_segments_draw_period_and_duty_from_their_ranges() {
    let mut cfg = small_config();
    cfg.overrides.kind = Some(KindTag::Dotted);
    let mut seen = 0;
    let mut i = 0;
    while seen < 10_000 {
        let s = generate_sample(sample_seed(12, i), &cfg).unwrap();
        i += 1;
        for seg in &s.segments {
            let SegmentKind::Dotted { period, duty } = seg.kind else {
                panic!("expected only dotted segments, got {:?}", seg.kind);
            };
            assert!((0.07..=0.25).contains(&period), "period {period}");
            assert!((0.6..=0.9).contains(&duty), "duty {duty}");
            seen += 1;
        }
        assert!(s.image.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn default_config_is_the_published_setup() {
    let cfg = GenConfig::default();
    assert_eq!(cfg.image_size, 256);
    assert_eq!(cfg.line_count, (1, 5));
    assert_eq!(cfg.dotted_period, (0.07, 0.25));
    assert_eq!(cfg.dotted_duty, (0.6, 0.9));
    assert_eq!((cfg.noise_max, cfg.blur_sigma_max), (0.25, 1.5));
}

#[test]
fn complex_segments_fit_on_small_images() {
    for n in [16, 32] {
        let cfg = GenConfig {
            image_size: n,
            ..GenConfig::default()
        };
        let mut cfg_complex = cfg.clone();
        cfg_complex.overrides.kind = Some(KindTag::Complex);
        for i in 0..300 {
            generate_sample(sample_seed(4, i), &cfg).unwrap_or_else(|e| panic!("N={n} sample {i}: {e}"));
            let s = generate_sample(sample_seed(5, i), &cfg_complex).unwrap_or_else(|e| panic!("N={n} sample {i}: {e}"));
            for seg in &s.segments {
                let SegmentKind::Complex { pieces } = &seg.kind else {
                    panic!("expected only complex segments");
                };
                let length = (seg.b[0] - seg.a[0]).hypot(seg.b[1] - seg.a[1]);
                assert!(pieces.iter().all(|p| (p.1 - p.0) * length >= cfg.min_piece_length - 1e-9));
                assert!((0..pieces.len())
                    .any(|i| (i + 1..pieces.len()).any(|j| pieces[i].1 < pieces[j].0 || pieces[j].1 < pieces[i].0)));
            }
        }
    }
}
