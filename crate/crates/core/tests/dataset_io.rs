//! File-level dataset behaviors on real directories: load validation,
//! fold splitting, augmentation bookkeeping and the mirrored-frame
//! correspondence.

use std::path::PathBuf;

use xstereo_core::data::{extract_patch, load_dataset, load_fold_spec, DisparityPoint, FoldEntry};
use xstereo_core::synth::{generate_dataset, SynthConfig};
use xstereo_core::Error;

const PATCH: usize = 12;
const D_MAX: usize = 32;

fn fresh_dataset(name: &str, frames: usize) -> PathBuf {
    let root = std::env::temp_dir().join(format!("xstereo_dsio_{name}"));
    let _ = std::fs::remove_dir_all(&root);
    let cfg = SynthConfig {
        shapes_per_frame: 2,
        points_per_shape: 1,
        seed: 77,
        ..SynthConfig::default()
    };
    generate_dataset(&cfg, frames, &root).unwrap();
    root
}

fn fold(
    train: std::ops::Range<usize>,
    val: std::ops::Range<usize>,
    test: std::ops::Range<usize>,
) -> FoldEntry {
    let ids = |r: std::ops::Range<usize>| r.map(|i| format!("s{i:04}")).collect::<Vec<_>>();
    FoldEntry {
        id: "fold1".into(),
        train: ids(train),
        val: ids(val),
        test: ids(test),
    }
}

#[test]
fn loads_counts_and_stats() {
    let root = fresh_dataset("load", 6);
    let manifest = load_dataset(&root, PATCH, D_MAX).unwrap();
    assert_eq!(manifest.frames.len(), 6);
    assert_eq!(manifest.points.len(), 12);
    assert_eq!(manifest.rejected_points, 0);
    for f in &manifest.frames {
        assert!(f.rgb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(f.lwir.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    // real statistics, not the identity placeholder
    assert!(manifest.stats.rgb.mean.iter().any(|&m| m != 0.0));
    assert!(manifest.stats.lwir.std.iter().all(|&s| s > 0.0));
    std::fs::remove_dir_all(&root).ok();
}

#[test]
fn missing_pieces_are_fatal() {
    let root = fresh_dataset("missing", 3);
    std::fs::remove_file(root.join("lwir/s0001.png")).unwrap();
    let err = load_dataset(&root, PATCH, D_MAX).unwrap_err();
    assert!(err.to_string().contains("s0001"), "{err}");

    let root2 = fresh_dataset("missing2", 3);
    std::fs::remove_file(root2.join("points.csv")).unwrap();
    assert!(load_dataset(&root2, PATCH, D_MAX).is_err());

    let root3 = fresh_dataset("missing3", 3);
    std::fs::remove_dir_all(root3.join("rgb")).unwrap();
    assert!(load_dataset(&root3, PATCH, D_MAX).is_err());
    for r in [root, root2, root3] {
        std::fs::remove_dir_all(&r).ok();
    }
}

#[test]
fn unknown_frame_and_out_of_bounds_points_are_fatal() {
    let root = fresh_dataset("badpoints", 3);
    let csv = root.join("points.csv");
    let mut text = std::fs::read_to_string(&csv).unwrap();
    text.push_str("ghost,5,5,1\n");
    std::fs::write(&csv, &text).unwrap();
    let err = load_dataset(&root, PATCH, D_MAX).unwrap_err();
    assert!(err.to_string().contains("ghost"), "{err}");

    let mut text = std::fs::read_to_string(&csv).unwrap();
    text = text.replace("ghost,5,5,1", "s0000,99999,5,1");
    std::fs::write(&csv, &text).unwrap();
    assert!(load_dataset(&root, PATCH, D_MAX).is_err());
    std::fs::remove_dir_all(&root).ok();
}

#[test]
fn oversized_disparities_are_rejected_with_count() {
    let root = fresh_dataset("reject", 3);
    let csv = root.join("points.csv");
    let mut text = std::fs::read_to_string(&csv).unwrap();
    let before = text.lines().count() - 1;
    text.push_str("s0000,30,30,29\ns0001,40,40,-21\n");
    std::fs::write(&csv, &text).unwrap();
    let manifest = load_dataset(&root, PATCH, D_MAX).unwrap();
    assert_eq!(manifest.rejected_points, 2, "|d| > 16 must be rejected");
    assert_eq!(manifest.points.len(), before);
    std::fs::remove_dir_all(&root).ok();
}

#[test]
fn split_augments_train_only_and_propagates_stats() {
    let root = fresh_dataset("split", 6);
    let manifest = load_dataset(&root, PATCH, D_MAX).unwrap();
    let (train_m, val_m, test_m) = manifest
        .split_folds(&fold(0..3, 3..5, 5..6), true, PATCH)
        .unwrap();
    let original_train = manifest
        .points
        .iter()
        .filter(|p| p.frame_id.as_str() <= "s0002")
        .count();
    assert_eq!(
        train_m.points.len() + train_m.dropped_neighbors,
        original_train * 10
    );
    assert!(train_m.augmented);
    assert!(!val_m.augmented && !test_m.augmented);
    assert_eq!(val_m.points.len(), 4);
    assert_eq!(test_m.points.len(), 2);
    assert_eq!(train_m.stats, val_m.stats);
    assert_eq!(train_m.stats, test_m.stats);
    // augmentation off leaves train untouched
    let (plain_train, ..) = manifest
        .split_folds(&fold(0..3, 3..5, 5..6), false, PATCH)
        .unwrap();
    assert_eq!(plain_train.points.len(), original_train);

    // standardized train patches have near-zero mean and unit spread
    let mut rgb_vals: Vec<f64> = Vec::new();
    let mut lwir_vals: Vec<f64> = Vec::new();
    for p in &plain_train.points {
        let (rgb, lwir) = plain_train.images_for(p).unwrap();
        let rp = extract_patch(
            rgb,
            p.x as i64,
            p.y as i64,
            PATCH,
            PATCH,
            &plain_train.stats.rgb,
        );
        let lp = extract_patch(
            lwir,
            p.x as i64 + p.d as i64,
            p.y as i64,
            PATCH,
            PATCH,
            &plain_train.stats.lwir,
        );
        rgb_vals.extend(rp.iter().map(|v| *v as f64));
        lwir_vals.extend(lp.iter().map(|v| *v as f64));
    }
    for vals in [rgb_vals, lwir_vals] {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!(mean.abs() < 0.05, "standardized mean {mean}");
        assert!((std - 1.0).abs() < 0.1, "standardized std {std}");
    }
    std::fs::remove_dir_all(&root).ok();
}

#[test]
fn bad_folds_are_fatal() {
    let root = fresh_dataset("folds", 4);
    let manifest = load_dataset(&root, PATCH, D_MAX).unwrap();
    // overlap
    let mut f = fold(0..2, 2..3, 3..4);
    f.val.push("s0000".into());
    assert!(matches!(
        manifest.split_folds(&f, true, PATCH),
        Err(Error::FoldSpec(_))
    ));
    // unknown frame
    let mut f = fold(0..2, 2..3, 3..4);
    f.test.push("sXXXX".into());
    assert!(manifest.split_folds(&f, true, PATCH).is_err());
    // pointed frame not covered
    let f = fold(0..2, 2..3, 3..3);
    assert!(manifest.split_folds(&f, true, PATCH).is_err());
    std::fs::remove_dir_all(&root).ok();
}

#[test]
fn fold_spec_file_roundtrip() {
    let dir = std::env::temp_dir().join("xstereo_foldspec");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("folds.toml");
    std::fs::write(
        &path,
        "[[fold]]\nid = \"a\"\ntrain = [\"f1\"]\nval = [\"f2\"]\ntest = [\"f3\"]\n\n[[fold]]\nid = \"b\"\ntrain = [\"f3\"]\nval = [\"f1\"]\ntest = [\"f2\"]\n",
    )
    .unwrap();
    let folds = load_fold_spec(&path).unwrap();
    assert_eq!(folds.len(), 2);
    assert_eq!(folds[1].id, "b");
    assert_eq!(folds[0].train, vec!["f1"]);
    std::fs::write(&path, "not folds at all = 3\n").unwrap();
    assert!(load_fold_spec(&path).is_err());
    std::fs::remove_dir_all(&dir).ok();
}

/// Mirroring the frame and negating d preserves the correspondence
/// pixel-exactly: the mirrored point samples the same visible pixel, and
/// its match column x' + d' lands on the same thermal pixel.
#[test]
fn mirrored_points_keep_the_correspondence_pixel_exact() {
    let root = fresh_dataset("mirror", 4);
    let manifest = load_dataset(&root, PATCH, D_MAX).unwrap();
    let (train_m, ..) = manifest
        .split_folds(&fold(0..2, 2..3, 3..4), true, PATCH)
        .unwrap();
    let mut checked = 0;
    for p in train_m.points.iter().filter(|p| p.mirrored) {
        let (rgb_mirrored, lwir_mirrored) = train_m.images_for(p).unwrap();
        let w = rgb_mirrored.width;
        // the unmirrored twin of this augmented point
        let twin = DisparityPoint::new(p.frame_id.clone(), w - 1 - p.x, p.y, -p.d);
        let (rgb_orig, lwir_orig) = train_m.images_for(&twin).unwrap();

        for c in 0..3 {
            assert_eq!(
                rgb_mirrored.get(c, p.y, p.x),
                rgb_orig.get(c, twin.y, twin.x),
                "visible pixel must survive mirroring"
            );
        }
        let mirrored_match = (p.x as i64 + p.d as i64) as usize;
        let original_match = (twin.x as i64 + twin.d as i64) as usize;
        assert_eq!(mirrored_match, w - 1 - original_match);
        assert_eq!(
            lwir_mirrored.get(0, p.y, mirrored_match),
            lwir_orig.get(0, twin.y, original_match),
            "thermal match pixel must survive mirroring"
        );

        // and the training pair stays internally aligned: the visible and
        // thermal windows shift together, so their contents relate the
        // same way as the original pair's (same silhouette offsets)
        let stats = xstereo_core::data::ChannelStats::identity(1);
        let rgb_patch = extract_patch(
            &rgb_mirrored.gray(),
            p.x as i64,
            p.y as i64,
            PATCH,
            PATCH,
            &stats,
        );
        let lwir_patch = extract_patch(
            lwir_mirrored,
            p.x as i64 + p.d as i64,
            p.y as i64,
            PATCH,
            PATCH,
            &stats,
        );
        assert_eq!(rgb_patch.dim(), lwir_patch.dim());
        checked += 1;
    }
    assert!(checked > 0, "augmented split must contain mirrored points");
    std::fs::remove_dir_all(&root).ok();
}
