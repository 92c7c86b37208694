use std::fs;
use std::path::Path;

use c2f_core::data::pnm::{self, PnmImage};
use c2f_core::data::{count_components, resize_sample, synth_generate, synth_sample, DatasetManifest, Split, SynthParams};
use c2f_core::Error;

fn params(seed: u64, count: usize) -> SynthParams {
    SynthParams { seed, count, size: 64, contrast: 0.1, max_objects: 3 }
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["images", "masks"] {
        let mut names: Vec<_> = fs::read_dir(root.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap()));
        }
    }
    out.push(("manifest.txt".into(), fs::read(root.join("manifest.txt")).unwrap()));
    out
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth_generate(a.path(), &params(1, 8)).unwrap();
    synth_generate(b.path(), &params(1, 8)).unwrap();
    let ta = tree(a.path());
    assert_eq!(ta.len(), 17);
    assert_eq!(ta, tree(b.path()));

    let c = tempfile::tempdir().unwrap();
    synth_generate(c.path(), &params(2, 8)).unwrap();
    assert_ne!(ta, tree(c.path()));
}

#[test]
fn manifest_lists_every_pair() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("train");
    let m = synth_generate(&root, &params(5, 3)).unwrap();
    let text = fs::read_to_string(root.join("manifest.txt")).unwrap();
    assert_eq!(text.lines().collect::<Vec<_>>(), vec!["seed=5", "00000", "00001", "00002"]);
    let loaded = DatasetManifest::load(&root).unwrap();
    assert_eq!(loaded, m);
    assert_eq!(loaded.split, Some(Split::Train));
    let samples = loaded.load_all().unwrap();
    assert_eq!(samples.len(), 3);
    // Files hold exactly what the generator produced.
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(s, &synth_sample(&params(5, 3), i));
    }
}

#[test]
fn manifest_with_missing_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    synth_generate(dir.path(), &params(5, 3)).unwrap();
    fs::remove_file(dir.path().join("masks/00001.pgm")).unwrap();
    let err = DatasetManifest::load(dir.path()).unwrap_err();
    assert!(err.to_string().contains("00001"), "{err}");
}

#[test]
fn masks_have_between_one_and_max_components() {
    for max_objects in [1, 3, 5] {
        let p = SynthParams { max_objects, ..params(7, 40) };
        let mut seen_multiple = false;
        for i in 0..p.count {
            let s = synth_sample(&p, i);
            let mask: Vec<bool> = s.mask.data().iter().map(|&v| v == 1.0).collect();
            assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            let n = count_components(&mask, 64, 64);
            assert!((1..=max_objects).contains(&n), "image {i}: {n} components, max {max_objects}");
            seen_multiple |= n > 1;
        }
        assert_eq!(seen_multiple, max_objects > 1, "max_objects {max_objects}");
    }
}

#[test]
fn inside_outside_contrast_matches_parameter() {
    for contrast in [0.05, 0.1, 0.2] {
        let p = SynthParams { contrast, ..params(11, 100) };
        let mut total = 0.0;
        for i in 0..p.count {
            let s = synth_sample(&p, i);
            let mask = s.mask.data();
            let (mut inside, mut outside, mut n_in, mut n_out) = (0.0, 0.0, 0usize, 0usize);
            for c in 0..3 {
                for (j, &m) in mask.iter().enumerate() {
                    let v = s.rgb.data()[c * mask.len() + j] as f64;
                    if m == 1.0 {
                        inside += v;
                        n_in += 1;
                    } else {
                        outside += v;
                        n_out += 1;
                    }
                }
            }
            total += (inside / n_in as f64 - outside / n_out as f64).abs();
        }
        let mean = total / p.count as f64;
        assert!(mean > 0.5 * contrast && mean < 1.5 * contrast, "contrast {contrast}: measured {mean}");
    }
}

#[test]
fn invalid_generator_parameters() {
    let dir = tempfile::tempdir().unwrap();
    for p in [
        SynthParams { size: 48, ..params(1, 2) },
        SynthParams { contrast: 0.0, ..params(1, 2) },
        SynthParams { contrast: 0.6, ..params(1, 2) },
        SynthParams { max_objects: 0, ..params(1, 2) },
    ] {
        assert!(matches!(synth_generate(dir.path(), &p), Err(Error::Param { .. })), "{p:?}");
    }
}

#[test]
fn multi_scale_sizes_and_binary_masks() {
    let s = synth_sample(&params(3, 1), 0);
    for (scale, side) in [(0.75, 64), (1.0, 64), (1.25, 96), (0.5, 32)] {
        let r = resize_sample(&s, scale);
        assert_eq!(r.size(), (side, side), "scale {scale}");
        assert_eq!(r.rgb.shape().h, side);
        assert!(r.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
    assert_eq!(resize_sample(&s, 1.0), s);
}

#[test]
fn pnm_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let gray = PnmImage::gray(3, 2, vec![0, 128, 255, 64, 1, 2]);
    let rgb = PnmImage::rgb(2, 1, vec![10, 20, 30, 40, 50, 60]);
    for (name, img) in [("a.pgm", &gray), ("b.ppm", &rgb)] {
        let path = dir.path().join(name);
        pnm::write(&path, img).unwrap();
        let back = pnm::read(&path).unwrap();
        assert_eq!(&back, img);
        assert_eq!(back.encode(), fs::read(&path).unwrap());
    }
    assert!(pnm::read_ppm(&dir.path().join("a.pgm")).is_err());
    fs::write(dir.path().join("short.pgm"), b"P5\n2 2\n255\n\x00\x01").unwrap();
    assert!(matches!(pnm::read(&dir.path().join("short.pgm")), Err(Error::Pnm { .. })));
}
