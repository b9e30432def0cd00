//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with --nocapture). Criteria 8-10 drive the
//! full pipeline on synthetic data; the expensive training runs are
//! shared through a OnceLock so each run happens exactly once.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xstereo_core::data::{
    augment_points, extract_patch, load_dataset, mirror_points, DisparityPoint, FoldEntry,
};
use xstereo_core::eval::{
    estimate, evaluate_manifest, recall, sweep, EvalSettings, SweepMode, SweepResult,
};
use xstereo_core::model::{
    concatenate, correlate, head_loss, total_loss, ExtractorConfig, FusionMode, HeadConfig,
    HeadOutput, Model, Stream, Variant,
};
use xstereo_core::synth::{generate_dataset, SynthConfig};
use xstereo_core::train::{probe_gradients, probe_loss, train, Hyperparams, TrainOptions};

const TINY_PATCH: usize = 12;
const E2E_D_MAX: usize = 32;

fn pass(id: &str, info: String) {
    println!("ACCEPTANCE {id}: PASS — {info}");
}

fn fail(id: &str, msg: String) -> ! {
    println!("ACCEPTANCE {id}: FAIL — {msg}");
    panic!("criterion {id} failed: {msg}");
}

fn check(id: &str, cond: bool, msg: impl Fn() -> String) {
    if !cond {
        fail(id, msg());
    }
}

fn tiny_extractor(variant: Variant) -> ExtractorConfig {
    ExtractorConfig {
        input_channels: 3,
        patch_size: TINY_PATCH,
        base_channels: 8,
        stage_channels: vec![vec![8], vec![8, 16], vec![8, 16, 32]],
        blocks_per_branch: 1,
        out_channels: 16,
        variant,
    }
}

fn tiny_heads() -> HeadConfig {
    HeadConfig {
        hidden: vec![32, 16],
    }
}

// ---------------------------------------------------------------------
// 1. Metric oracle
// ---------------------------------------------------------------------

#[test]
fn criterion_01_metric_oracle() {
    let id = "01 metric-oracle";
    let start = Instant::now();
    let preds = [10.0, 12.0, 20.0];
    let gts = [10.0, 10.0, 15.0];
    check(id, recall(&preds, &gts, 1.0).unwrap() == 1.0 / 3.0, || {
        "n=1".into()
    });
    check(id, recall(&preds, &gts, 3.0).unwrap() == 2.0 / 3.0, || {
        "n=3".into()
    });
    check(id, recall(&preds, &gts, 5.0).unwrap() == 1.0, || {
        "n=5".into()
    });

    // 200 randomized cases against an independent brute-force counter
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let n_pts = rng.gen_range(1..60);
        let preds: Vec<f64> = (0..n_pts)
            .map(|_| rng.gen_range(-32i32..=32) as f64 + rng.gen_range(-0.5..0.5))
            .collect();
        let gts: Vec<f64> = (0..n_pts)
            .map(|_| rng.gen_range(-32i32..=32) as f64)
            .collect();
        for n in [1.0, 3.0, 5.0] {
            // brute force: explicit loop, explicit counter
            let mut hits = 0usize;
            for i in 0..n_pts {
                let err = if preds[i] >= gts[i] {
                    preds[i] - gts[i]
                } else {
                    gts[i] - preds[i]
                };
                if err <= n {
                    hits += 1;
                }
            }
            let expected = hits as f64 / n_pts as f64;
            let got = recall(&preds, &gts, n).unwrap();
            check(id, got == expected, || {
                format!("case {case}, n={n}: got {got}, brute force {expected}")
            });
        }
    }
    let dt = start.elapsed().as_secs_f64();
    check(id, dt < 1.0, || format!("runtime {dt:.3}s exceeds 1s"));
    pass(
        id,
        format!("exact fractions + 200 randomized cases in {dt:.3}s"),
    );
}

// ---------------------------------------------------------------------
// 2. Shape contracts at the default configuration
// ---------------------------------------------------------------------

#[test]
fn criterion_02_shape_contracts() {
    let id = "02 shape-contracts";
    let start = Instant::now();
    let model = Model::<f32>::new(&ExtractorConfig::default(), &HeadConfig::default(), 1)
        .unwrap_or_else(|e| fail(id, format!("default build: {e}")));

    let rgb_patch = Array3::from_shape_fn((3, 36, 36), |(c, y, x)| {
        (((c + y) * 7 + x) % 13) as f32 / 13.0 - 0.5
    });
    let f_rgb = model.extract(Stream::Rgb, &rgb_patch).unwrap();
    check(
        id,
        (f_rgb.height(), f_rgb.width(), f_rgb.channels()) == (36, 36, 64),
        || {
            format!(
                "extract(36x36) gave {}x{}x{}",
                f_rgb.height(),
                f_rgb.width(),
                f_rgb.channels()
            )
        },
    );

    let wide_patch = Array3::from_shape_fn((1, 36, 100), |(_, y, x)| {
        ((y * 5 + x) % 11) as f32 / 11.0 - 0.5
    });
    let f_wide = model.extract(Stream::Lwir, &wide_patch).unwrap();
    check(
        id,
        (f_wide.height(), f_wide.width(), f_wide.channels()) == (36, 100, 64),
        || {
            format!(
                "extract(36x100) gave {}x{}x{}",
                f_wide.height(),
                f_wide.width(),
                f_wide.channels()
            )
        },
    );

    let lwir_patch = wide_patch.slice(ndarray::s![.., .., 0..36]).to_owned();
    let f_lwir = model.extract(Stream::Lwir, &lwir_patch).unwrap();
    let corr = correlate(&f_rgb, &f_lwir).unwrap();
    check(
        id,
        (corr.height(), corr.width(), corr.channels()) == (36, 36, 64),
        || {
            format!(
                "correlate gave {}x{}x{}",
                corr.height(),
                corr.width(),
                corr.channels()
            )
        },
    );
    let cat = concatenate(&f_rgb, &f_lwir).unwrap();
    check(
        id,
        (cat.height(), cat.width(), cat.channels()) == (72, 36, 64),
        || {
            format!(
                "concatenate gave {}x{}x{}",
                cat.height(),
                cat.width(),
                cat.channels()
            )
        },
    );

    let sw = sweep(
        &model,
        &rgb_patch,
        &wide_patch,
        64,
        FusionMode::Both,
        SweepMode::Wide,
    )
    .unwrap_or_else(|e| fail(id, format!("sweep: {e}")));
    check(id, sw.candidates() == 65, || {
        format!("K = {}", sw.candidates())
    });
    let y_corr = sw.y_corr.as_ref().unwrap();
    let y_concat = sw.y_concat.as_ref().unwrap();
    check(id, y_corr.len() == 65 && y_concat.len() == 65, || {
        format!("vector lengths {} / {}", y_corr.len(), y_concat.len())
    });
    check(
        id,
        y_corr
            .iter()
            .chain(y_concat)
            .all(|p| (0.0..=1.0).contains(p)),
        || "probabilities outside [0,1]".into(),
    );
    let dt = start.elapsed().as_secs_f64();
    check(id, dt < 30.0, || format!("runtime {dt:.1}s exceeds 30s"));
    pass(
        id,
        format!("36x36x64, 36x100x64, 72x36x64, K=65 in {dt:.1}s"),
    );
}

// ---------------------------------------------------------------------
// 3. Loss closed forms
// ---------------------------------------------------------------------

#[test]
fn criterion_03_loss_closed_forms() {
    let id = "03 loss-closed-forms";
    let ln2 = std::f64::consts::LN_2;
    let uniform = HeadOutput([0.5, 0.5]);
    let l_corr = head_loss(&[uniform], &[1]).unwrap();
    let l_concat = head_loss(&[uniform], &[0]).unwrap();
    check(id, (l_corr - ln2).abs() < 1e-9, || {
        format!("corr {l_corr} vs ln2")
    });
    check(id, (l_concat - ln2).abs() < 1e-9, || {
        format!("concat {l_concat} vs ln2")
    });
    let total = total_loss(l_corr, l_concat);
    check(id, (total - 2.0 * ln2).abs() < 1e-9, || {
        format!("total {total} vs 2ln2")
    });
    let perfect = head_loss(&[HeadOutput([0.0, 1.0]), HeadOutput([1.0, 0.0])], &[1, 0]).unwrap();
    check(id, perfect.abs() < 1e-9, || {
        format!("perfect one-hot gave {perfect}")
    });
    pass(id, "ln2, 2ln2 and one-hot zero all within 1e-9".into());
}

// ---------------------------------------------------------------------
// 4. Gradient check (64-bit, tiny config)
// ---------------------------------------------------------------------

#[test]
fn criterion_04_gradient_check() {
    let id = "04 gradient-check";
    let start = Instant::now();
    let model = Model::<f64>::new(&tiny_extractor(Variant::Scales), &tiny_heads(), 7)
        .unwrap_or_else(|e| fail(id, format!("build: {e}")));
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n = 3;
    let rgb = Array4::from_shape_fn((n, 3, TINY_PATCH, TINY_PATCH), |_| rng.gen_range(-1.5..1.5));
    let lwir = Array4::from_shape_fn((n, 1, TINY_PATCH, TINY_PATCH), |_| rng.gen_range(-1.5..1.5));
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();

    let (losses, grads) = probe_gradients(&model, &rgb, &lwir, &labels, FusionMode::Both).unwrap();
    check(id, losses.total().is_finite(), || "non-finite loss".into());

    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let i = rng.gen_range(0..model.param_count());
        let mut probe = model.clone();
        probe.params.values_mut()[i] += step;
        let hi = probe_loss(&probe, &rgb, &lwir, &labels, FusionMode::Both).unwrap();
        probe.params.values_mut()[i] -= 2.0 * step;
        let lo = probe_loss(&probe, &rgb, &lwir, &labels, FusionMode::Both).unwrap();
        let fd = (hi - lo) / (2.0 * step);
        let an = grads[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max(rel);
        check(id, rel < 1e-3, || {
            format!("coordinate {k} (param {i}): fd={fd:.9e} analytic={an:.9e} rel={rel:.2e}")
        });
    }
    let dt = start.elapsed().as_secs_f64();
    check(id, dt < 300.0, || format!("runtime {dt:.0}s exceeds 5 min"));
    pass(
        id,
        format!("100 coordinates, worst relative error {worst:.2e}, {dt:.1}s"),
    );
}

// ---------------------------------------------------------------------
// 5. Augmentation count and mirror involution
// ---------------------------------------------------------------------

#[test]
fn criterion_05_augmentation_count() {
    let id = "05 augmentation-count";
    let (w, h) = (128usize, 96usize);
    let points: Vec<DisparityPoint> = (0..1000)
        .map(|i| {
            DisparityPoint::new(
                format!("s{:04}", i % 25),
                8 + (i * 7) % (w - 16),
                8 + (i * 13) % (h - 16),
                (i as i32 % 17) - 8,
            )
        })
        .collect();
    check(
        id,
        points
            .iter()
            .all(|p| p.x >= 1 && p.x < w - 1 && p.y >= 1 && p.y < h - 1),
        || "test points must be interior".into(),
    );
    let (augmented, dropped) = augment_points(&points, w, h);
    check(id, augmented.len() == 10_000, || {
        format!(
            "{} augmented points, expected exactly 10000",
            augmented.len()
        )
    });
    check(id, dropped == 0, || format!("{dropped} neighbors dropped"));
    let restored = mirror_points(&mirror_points(&points, w), w);
    check(id, restored == points, || {
        "mirror involution must restore the originals".into()
    });
    pass(
        id,
        "1000 interior points -> exactly 10000; involution exact".into(),
    );
}

// ---------------------------------------------------------------------
// 6. Argmax invariance under positive score scaling
// ---------------------------------------------------------------------

#[test]
fn criterion_06_argmax_invariance() {
    let id = "06 argmax-invariance";
    // 50 real sweeps from a tiny model over synthetic points
    let root = std::env::temp_dir().join("xstereo_acceptance_c6");
    let _ = std::fs::remove_dir_all(&root);
    let synth = SynthConfig {
        shapes_per_frame: 2,
        points_per_shape: 2,
        seed: 60,
        ..SynthConfig::default()
    };
    generate_dataset(&synth, 13, &root).unwrap();
    let manifest = load_dataset(&root, TINY_PATCH, E2E_D_MAX).unwrap();
    let model = Model::<f32>::new(&tiny_extractor(Variant::Scales), &tiny_heads(), 3).unwrap();

    let mut sweeps: Vec<SweepResult> = Vec::new();
    for point in manifest.points.iter().take(50) {
        let (rgb, lwir) = manifest.images_for(point).unwrap();
        let rgb_patch = extract_patch(
            rgb,
            point.x as i64,
            point.y as i64,
            TINY_PATCH,
            TINY_PATCH,
            &manifest.stats.rgb,
        );
        let wide = extract_patch(
            lwir,
            point.x as i64,
            point.y as i64,
            TINY_PATCH,
            TINY_PATCH + E2E_D_MAX,
            &manifest.stats.lwir,
        );
        sweeps.push(
            sweep(
                &model,
                &rgb_patch,
                &wide,
                E2E_D_MAX,
                FusionMode::Both,
                SweepMode::Wide,
            )
            .unwrap(),
        );
    }
    check(id, sweeps.len() == 50, || {
        format!("only {} sweep points", sweeps.len())
    });

    for (i, sw) in sweeps.iter().enumerate() {
        let base = estimate(sw);
        for c in [0.1, 1.0, 7.3] {
            let scale = |l: &Option<Vec<[f64; 2]>>| {
                l.as_ref()
                    .map(|v| v.iter().map(|p| [p[0] * c, p[1] * c]).collect::<Vec<_>>())
            };
            let corr_scaled = SweepResult::from_logits(
                sw.d_max,
                scale(&sw.logits_corr),
                sw.logits_concat.clone(),
            );
            check(id, estimate(&corr_scaled) == base, || {
                format!("sweep {i}: scaling corr scores by {c} moved the estimate")
            });
            let concat_scaled = SweepResult::from_logits(
                sw.d_max,
                sw.logits_corr.clone(),
                scale(&sw.logits_concat),
            );
            check(id, estimate(&concat_scaled) == base, || {
                format!("sweep {i}: scaling concat scores by {c} moved the estimate")
            });
        }
    }
    std::fs::remove_dir_all(&root).ok();
    pass(
        id,
        "50 sweeps x scales {0.1, 1, 7.3}: every d_hat unchanged".into(),
    );
}

// ---------------------------------------------------------------------
// 7. Estimation arithmetic
// ---------------------------------------------------------------------

#[test]
fn criterion_07_estimation_arithmetic() {
    let id = "07 estimation-arithmetic";
    let peaked = |d_max: usize, peak: usize| {
        let mut v = vec![[2.0f64, -2.0]; d_max + 1];
        v[peak] = [-2.0, 2.0];
        v
    };
    let sw = SweepResult::from_logits(64, Some(peaked(64, 12)), Some(peaked(64, 14)));
    let est = estimate(&sw);
    check(id, est.d_corr == Some(-20), || {
        format!("d_corr {:?}", est.d_corr)
    });
    check(id, est.d_concat == Some(-18), || {
        format!("d_concat {:?}", est.d_concat)
    });
    check(id, est.d_hat == -19.0, || format!("d_hat {}", est.d_hat));
    let sw = SweepResult::from_logits(64, Some(peaked(64, 12)), Some(peaked(64, 13)));
    let est = estimate(&sw);
    check(id, est.d_hat == -19.5, || {
        format!("fractional d_hat {}", est.d_hat)
    });
    pass(id, "(12,14) -> -19 and (12,13) -> -19.5, exact".into());
}

// ---------------------------------------------------------------------
// 8-9. Synthetic end-to-end training (shared runs)
// ---------------------------------------------------------------------

struct E2eOutcome {
    /// (seed, test recalls [r1, r3, r5]) for fusion_mode = both.
    per_seed: Vec<(u64, [f64; 3])>,
    /// recall@3 of the seed-1 run per mode: (both, correlation, concatenation).
    ablation_r3: (f64, f64, f64),
    /// seed-1 comparison of the two sweep modes: (windowed recall@3,
    /// wide recall@3, fraction of points whose estimates agree within 1 px).
    sweep_mode_proximity: (f64, f64, f64),
    train_seconds: f64,
}

fn e2e_runs() -> &'static E2eOutcome {
    static RUNS: OnceLock<E2eOutcome> = OnceLock::new();
    RUNS.get_or_init(|| {
        let root = std::env::temp_dir().join("xstereo_acceptance_e2e");
        let _ = std::fs::remove_dir_all(&root);
        let synth = SynthConfig {
            height: 96,
            width: 128,
            shapes_per_frame: 2,
            max_disparity: 8,
            texture_density: 0.25,
            blur_radius: 1,
            noise_std: 0.02,
            points_per_shape: 1,
            seed: 1000,
        };
        generate_dataset(&synth, 80, &root).expect("synthetic dataset");
        let ids = |r: std::ops::Range<usize>| r.map(|i| format!("s{i:04}")).collect::<Vec<_>>();
        let fold = FoldEntry {
            id: "fold1".into(),
            train: ids(0..60),
            val: ids(60..70),
            test: ids(70..80),
        };
        let manifest = load_dataset(&root, TINY_PATCH, E2E_D_MAX).expect("load");
        let (train_m, val_m, test_m) = manifest
            .split_folds(&fold, true, TINY_PATCH)
            .expect("split");

        let run = |seed: u64, mode: FusionMode| {
            let hyper = Hyperparams {
                epochs: 30,
                d_max: E2E_D_MAX,
                seed,
                fusion_mode: mode,
                ..Hyperparams::default()
            };
            let (ckpt, _history) = train(
                &train_m,
                &val_m,
                &tiny_extractor(Variant::Scales),
                &tiny_heads(),
                &hyper,
                &TrainOptions {
                    fold_id: "fold1".into(),
                    ..TrainOptions::default()
                },
            )
            .expect("training");
            let eval_with = |sweep_mode: SweepMode| {
                evaluate_manifest(
                    &ckpt.model,
                    &ckpt.stats,
                    &test_m,
                    "fold1",
                    EvalSettings {
                        d_max: E2E_D_MAX,
                        fusion_mode: mode,
                        sweep_mode,
                        workers: 1,
                    },
                )
                .expect("evaluation")
            };
            let (report, rows) = eval_with(SweepMode::Windowed);
            let recalls = [report.recalls[0], report.recalls[1], report.recalls[2]];
            (recalls, rows, eval_with(SweepMode::Wide).1)
        };

        let t0 = Instant::now();
        let mut per_seed = Vec::new();
        let mut sweep_mode_proximity = (0.0, 0.0, 0.0);
        for seed in [1u64, 2, 3] {
            let (recalls, windowed_rows, wide_rows) = run(seed, FusionMode::Both);
            if seed == 1 {
                let close = windowed_rows
                    .iter()
                    .zip(&wide_rows)
                    .filter(|(a, b)| (a.estimate.d_hat - b.estimate.d_hat).abs() <= 1.0)
                    .count();
                let wide_hits = wide_rows
                    .iter()
                    .filter(|r| (r.estimate.d_hat - r.gt_d as f64).abs() <= 3.0)
                    .count();
                sweep_mode_proximity = (
                    recalls[1],
                    wide_hits as f64 / wide_rows.len() as f64,
                    close as f64 / windowed_rows.len() as f64,
                );
            }
            per_seed.push((seed, recalls));
        }
        let train_seconds = t0.elapsed().as_secs_f64();
        let both_r3 = per_seed[0].1[1];
        let corr_r3 = run(1, FusionMode::CorrelationOnly).0[1];
        let concat_r3 = run(1, FusionMode::ConcatenationOnly).0[1];
        std::fs::remove_dir_all(&root).ok();
        E2eOutcome {
            per_seed,
            ablation_r3: (both_r3, corr_r3, concat_r3),
            sweep_mode_proximity,
            train_seconds,
        }
    })
}

#[test]
fn criterion_08_synthetic_end_to_end() {
    let id = "08 synthetic-end-to-end";
    let outcome = e2e_runs();
    let mut hits = 0;
    for (seed, recalls) in &outcome.per_seed {
        let ok = recalls[1] >= 0.85 && recalls[0] >= 0.60;
        println!(
            "  seed {seed}: recall@1 = {:.3}, recall@3 = {:.3}, recall@5 = {:.3} {}",
            recalls[0],
            recalls[1],
            recalls[2],
            if ok {
                "(meets thresholds)"
            } else {
                "(below thresholds)"
            }
        );
        if ok {
            hits += 1;
        }
    }
    check(id, hits >= 2, || {
        format!("only {hits}/3 seeds reached recall@3 >= 0.85 and recall@1 >= 0.60")
    });
    check(id, outcome.train_seconds <= 1200.0, || {
        format!(
            "three training runs took {:.0}s (> 20 min)",
            outcome.train_seconds
        )
    });
    pass(
        id,
        format!(
            "{hits}/3 seeds met thresholds; 3 runs in {:.0}s",
            outcome.train_seconds
        ),
    );
}

#[test]
fn criterion_09_fusion_ablation_direction() {
    let id = "09 fusion-ablation";
    let (both, corr, concat) = e2e_runs().ablation_r3;
    println!(
        "  recall@3: both={both:.3} correlation_only={corr:.3} concatenation_only={concat:.3}"
    );
    check(id, both >= corr - 0.05, || {
        format!("both ({both:.3}) fell more than 0.05 below correlation_only ({corr:.3})")
    });
    check(id, both >= concat - 0.05, || {
        format!("both ({both:.3}) fell more than 0.05 below concatenation_only ({concat:.3})")
    });
    pass(
        id,
        format!("both={both:.3} vs corr={corr:.3}, concat={concat:.3} (tolerance 0.05)"),
    );
}

/// Not a numbered criterion: on a trained model, slicing the wide strip's
/// feature map must make nearly the decisions of featurizing each window
/// independently. With 12-pixel patches every column sits inside the
/// receptive-field margin of a window border, so the modes are compared
/// by estimate proximity and recall parity rather than exact index
/// equality (which only stabilizes at larger patch sizes).
#[test]
fn sweep_modes_agree_on_interior_points_after_training() {
    let (windowed_r3, wide_r3, within_1px) = e2e_runs().sweep_mode_proximity;
    println!(
        "  windowed recall@3 {windowed_r3:.3}, wide recall@3 {wide_r3:.3}, estimates within 1 px: {within_1px:.3}"
    );
    assert!(
        within_1px >= 0.7,
        "windowed and wide estimates drift apart on {:.0}% of interior points",
        (1.0 - within_1px) * 100.0
    );
    assert!(
        wide_r3 >= windowed_r3 - 0.15,
        "wide-mode recall@3 {wide_r3:.3} fell too far below windowed {windowed_r3:.3}"
    );
}

// ---------------------------------------------------------------------
// 10. Byte-identical CLI determinism
// ---------------------------------------------------------------------

#[test]
fn criterion_10_cli_determinism() {
    let id = "10 cli-determinism";
    let base = std::env::temp_dir().join("xstereo_acceptance_c10");
    let _ = std::fs::remove_dir_all(&base);
    std::fs::create_dir_all(&base).unwrap();
    let config_path = base.join("config.toml");
    let fold_path = base.join("folds.toml");
    let dataset = base.join("dataset");
    std::fs::write(
        &config_path,
        format!(
            r#"
dataset_root = "{dataset}"
fold_file = "{folds}"
out_dir = "{out}"
fold_id = "fold1"
patch_size = 12
base_channels = 8
stage1_channels = [8]
stage2_channels = [8, 16]
stage3_channels = [8, 16, 32]
blocks_per_branch = 1
out_channels = 16
head_hidden = [32, 16]
epochs = 5
d_max = 32
seed = 9
synth_frames = 12
synth_shapes_per_frame = 2
synth_points_per_shape = 1
synth_max_disparity = 8
workers = 1
"#,
            dataset = dataset.display(),
            folds = fold_path.display(),
            out = base.join("out_a").display()
        ),
    )
    .unwrap();
    let ids = |r: std::ops::Range<usize>| {
        r.map(|i| format!("\"s{i:04}\""))
            .collect::<Vec<_>>()
            .join(", ")
    };
    std::fs::write(
        &fold_path,
        format!(
            "[[fold]]\nid = \"fold1\"\ntrain = [{}]\nval = [{}]\ntest = [{}]\n",
            ids(0..8),
            ids(8..10),
            ids(10..12)
        ),
    )
    .unwrap();

    let bin = env!("CARGO_BIN_EXE_xstereo");
    let cli = |args: &[&str]| {
        let out = std::process::Command::new(bin).args(args).output().unwrap();
        if !out.status.success() {
            fail(
                id,
                format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)),
            );
        }
    };
    let config = config_path.to_str().unwrap();
    cli(&["synth", "--config", config]);

    let run_into = |out_dir: PathBuf| -> Vec<u8> {
        // retarget out_dir by rewriting the config's out_dir line
        let text = std::fs::read_to_string(&config_path).unwrap();
        let retargeted: String = text
            .lines()
            .map(|l| {
                if l.starts_with("out_dir") {
                    format!("out_dir = \"{}\"", out_dir.display())
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        let cfg2 = out_dir.with_extension("toml");
        std::fs::write(&cfg2, retargeted).unwrap();
        let cfg2 = cfg2.to_str().unwrap().to_string();
        cli(&["train", "--config", &cfg2, "--workers", "1"]);
        let ckpt = out_dir.join("checkpoint.bin");
        cli(&[
            "eval",
            "--config",
            &cfg2,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--workers",
            "1",
        ]);
        std::fs::read(out_dir.join("predictions.csv")).unwrap()
    };
    let a = run_into(base.join("out_a"));
    let b = run_into(base.join("out_b"));
    check(id, a == b, || {
        format!("prediction CSVs differ ({} vs {} bytes)", a.len(), b.len())
    });
    check(id, !a.is_empty(), || "empty predictions".into());
    std::fs::remove_dir_all(&base).ok();
    pass(
        id,
        format!("two train+eval runs byte-identical ({} bytes)", a.len()),
    );
}
