//! Synthetic rectified cross-spectral pairs with known per-shape disparity.
//!
//! Each scene renders random blob silhouettes on a textured background.
//! The visible view fills shapes with saturated color plus high-frequency
//! "logo" texture; the thermal view shows the same silhouettes shifted
//! horizontally by an integer disparity and filled with a smooth
//! temperature gradient (texture removed), then blurred and noised.
//! Pixel patterns therefore do not match across spectra; only silhouette
//! geometry does.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{points::DisparityPoint, write_dataset, ImageBuf, RectifiedPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub shapes_per_frame: usize,
    /// Disparities are drawn uniformly from [-max_disparity, +max_disparity].
    pub max_disparity: i32,
    /// Fraction of each shape's area covered by texture patches.
    pub texture_density: f64,
    /// Box-blur radius applied to the thermal view (0 disables).
    pub blur_radius: usize,
    /// Standard deviation of Gaussian noise on the thermal view.
    pub noise_std: f64,
    pub points_per_shape: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 96,
            width: 128,
            shapes_per_frame: 2,
            max_disparity: 8,
            texture_density: 0.25,
            blur_radius: 1,
            noise_std: 0.02,
            points_per_shape: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// The sweep can only reach |d| <= d_max/2; reject configs that would
    /// generate unreachable ground truth.
    pub fn validate_against(&self, d_max: usize) -> Result<()> {
        if self.max_disparity as i64 > (d_max / 2) as i64 {
            return Err(Error::Config(format!(
                "synth max_disparity {} exceeds d_max/2 = {}",
                self.max_disparity,
                d_max / 2
            )));
        }
        if self.shapes_per_frame == 0 || self.points_per_shape == 0 {
            return Err(Error::Config(
                "need at least one shape and one point per shape".into(),
            ));
        }
        Ok(())
    }
}

/// Generator bookkeeping for one rendered shape.
#[derive(Debug, Clone)]
pub struct ShapeRecord {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub d: i32,
    /// Inclusive visible-view bounding box (x0, y0, x1, y1).
    pub bbox: (usize, usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub pair: RectifiedPair,
    pub points: Vec<DisparityPoint>,
    pub shapes: Vec<ShapeRecord>,
}

struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    // low-order boundary perturbation: r(theta) = 1 + sum a_k cos(k theta + phi_k)
    amp: [f64; 3],
    phase: [f64; 3],
    d: i32,
    color: [f32; 3],
    warm_base: f64,
    warm_grad: f64,
    warm_angle: f64,
}

impl Blob {
    fn boundary(&self, theta: f64) -> f64 {
        let mut r = 1.0;
        for (k, (a, p)) in self.amp.iter().zip(&self.phase).enumerate() {
            r += a * ((k as f64 + 2.0) * theta + p).cos();
        }
        r
    }

    /// Inside test in visible-view coordinates.
    fn contains(&self, x: f64, y: f64) -> bool {
        let u = (x - self.cx) / self.rx;
        let v = (y - self.cy) / self.ry;
        let rho = (u * u + v * v).sqrt();
        rho <= self.boundary(v.atan2(u))
    }

    /// Smooth per-shape temperature in [0.5, 0.95], evaluated in
    /// visible-view coordinates so the field travels with the silhouette.
    fn temperature(&self, x: f64, y: f64) -> f64 {
        let u = (x - self.cx) / self.rx;
        let v = (y - self.cy) / self.ry;
        let rho = (u * u + v * v).sqrt();
        let along = u * self.warm_angle.cos() + v * self.warm_angle.sin();
        (self.warm_base + self.warm_grad * along + 0.15 * (1.0 - rho)).clamp(0.5, 0.95)
    }
}

fn saturated_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let hi: f32 = rng.gen_range(0.6..0.92);
    let lo: f32 = rng.gen_range(0.05..(hi - 0.4));
    let mid = rng.gen_range(lo..hi);
    let mut c = [hi, mid, lo];
    // random channel order
    for i in (1..3).rev() {
        let j = rng.gen_range(0..=i);
        c.swap(i, j);
    }
    c
}

/// Render scene `scene_index` for `config`. Pure function of
/// (config, scene_index): the RNG stream is keyed by the index, so frames
/// can be generated in any order or in parallel.
pub fn generate_scene(config: &SynthConfig, scene_index: usize) -> Result<Scene> {
    let (h, w) = (config.height, config.width);
    let d_range = config.max_disparity;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(scene_index as u64 + 1);

    // grid placement: one shape per cell keeps silhouettes disjoint in
    // both views and in-frame after the horizontal shift
    let n = config.shapes_per_frame;
    let cols = ((n as f64 * w as f64 / h as f64).sqrt().ceil() as usize).max(1);
    let rows = n.div_ceil(cols);
    let (cell_h, cell_w) = (h / rows, w / cols);
    let margin_x = d_range as f64 + 2.0;
    let margin_y = 2.0;

    let mut blobs = Vec::with_capacity(n);
    for i in 0..n {
        let (row, col) = (i / cols, i % cols);
        // boundary perturbation first: the placement budget must cover the
        // blob's worst-case reach, or a shifted silhouette could leave the
        // frame
        let amp = [
            rng.gen_range(0.0..0.12),
            rng.gen_range(0.0..0.10),
            rng.gen_range(0.0..0.08),
        ];
        let reach = 1.0 + amp.iter().sum::<f64>();
        let max_rx = (cell_w as f64 / 2.0 - margin_x) / reach;
        let max_ry = (cell_h as f64 / 2.0 - margin_y) / reach;
        if max_rx < 5.0 || max_ry < 5.0 {
            return Err(Error::Config(format!(
                "synth config cannot fit {n} shapes of useful size in {h}x{w} with max_disparity {d_range}"
            )));
        }
        let rx = rng.gen_range(max_rx * 0.6..max_rx);
        let ry = rng.gen_range(max_ry * 0.6..max_ry);
        let jx = cell_w as f64 / 2.0 - rx * reach - margin_x;
        let jy = cell_h as f64 / 2.0 - ry * reach - margin_y;
        let cx = (col * cell_w) as f64 + cell_w as f64 / 2.0 + rng.gen_range(-1.0..1.0) * jx;
        let cy = (row * cell_h) as f64 + cell_h as f64 / 2.0 + rng.gen_range(-1.0..1.0) * jy;
        blobs.push(Blob {
            cx,
            cy,
            rx,
            ry,
            amp,
            phase: [
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ],
            d: rng.gen_range(-d_range..=d_range),
            color: saturated_color(&mut rng),
            warm_base: rng.gen_range(0.62..0.8),
            warm_grad: rng.gen_range(-0.22..0.22),
            warm_angle: rng.gen_range(0.0..std::f64::consts::TAU),
        });
    }

    // visible view: grayscale background (channel-equal) so saturation
    // separates silhouettes from background
    let bg_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut rgb = ImageBuf::new(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let g = 0.42
                + 0.08 * ((x as f64 * 0.05 + bg_phase).sin() * (y as f64 * 0.04).cos())
                + rng.gen_range(-0.02..0.02);
            for c in 0..3 {
                rgb.set(c, y, x, g as f32);
            }
        }
    }
    let lwir_bg_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut lwir = ImageBuf::new(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let g = 0.12
                + 0.05 * ((x as f64 * 0.03 + lwir_bg_phase).cos() + (y as f64 * 0.05).sin()) / 2.0;
            lwir.set(0, y, x, g as f32);
        }
    }

    // silhouette fills
    for blob in &blobs {
        let (x0, x1, y0, y1) = blob_bbox(blob, w, h);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if blob.contains(x as f64, y as f64) {
                    for (c, base) in blob.color.iter().enumerate() {
                        let v = base + rng.gen_range(-0.02f32..0.02);
                        rgb.set(c, y, x, v.clamp(0.0, 1.0));
                    }
                }
            }
        }
        // thermal silhouette: same support shifted by +d columns
        for y in y0..=y1 {
            for x in x0..=x1 {
                if blob.contains(x as f64, y as f64) {
                    let lx = x as i64 + blob.d as i64;
                    debug_assert!(
                        lx >= 0 && (lx as usize) < w,
                        "shape left the frame after shift"
                    );
                    lwir.set(
                        0,
                        y,
                        lx as usize,
                        blob.temperature(x as f64, y as f64) as f32,
                    );
                }
            }
        }
    }

    // high-frequency visible-only texture: small contrasting patches
    for blob in &blobs {
        let area = std::f64::consts::PI * blob.rx * blob.ry;
        let patches = (config.texture_density * area / 18.0).round() as usize;
        for _ in 0..patches {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let rho = rng.gen_range(0.0..0.75f64).sqrt();
            let px = blob.cx + blob.rx * rho * theta.cos();
            let py = blob.cy + blob.ry * rho * theta.sin();
            let size = rng.gen_range(2..5usize);
            let color = saturated_color(&mut rng);
            for dy in 0..size {
                for dx in 0..size {
                    let (x, y) = (px as i64 + dx as i64, py as i64 + dy as i64);
                    if x >= 0
                        && y >= 0
                        && (x as usize) < w
                        && (y as usize) < h
                        && blob.contains(x as f64, y as f64)
                    {
                        for (c, v) in color.iter().enumerate() {
                            rgb.set(c, y as usize, x as usize, *v);
                        }
                    }
                }
            }
        }
    }

    if config.blur_radius > 0 {
        lwir = box_blur(&lwir, config.blur_radius);
    }
    if config.noise_std > 0.0 {
        let normal =
            Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        for v in lwir.data_mut() {
            *v = (*v + normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
        }
    }

    // ground truth near the left/right silhouette extremes, where the
    // epipolar (horizontal) localization signal is strongest
    let frame_id = format!("s{scene_index:04}");
    let mut points = Vec::new();
    let mut shapes = Vec::new();
    for blob in &blobs {
        let mut emitted = 0usize;
        let mut attempt = 0usize;
        while emitted < config.points_per_shape && attempt < 64 {
            attempt += 1;
            let side = if (emitted + attempt).is_multiple_of(2) {
                0.0
            } else {
                std::f64::consts::PI
            };
            let theta = side + rng.gen_range(-0.45..0.45);
            let pull = rng.gen_range(0.72..0.86);
            let rb = blob.boundary(theta) * pull;
            let x = (blob.cx + blob.rx * rb * theta.cos()).round();
            let y = (blob.cy + blob.ry * rb * theta.sin()).round();
            if x < 0.0 || y < 0.0 || x as usize >= w || y as usize >= h {
                continue;
            }
            if !blob.contains(x, y) {
                continue;
            }
            points.push(DisparityPoint::new(
                frame_id.clone(),
                x as usize,
                y as usize,
                blob.d,
            ));
            emitted += 1;
        }
        if emitted == 0 {
            // degenerate boundary draw; the centroid is always inside
            points.push(DisparityPoint::new(
                frame_id.clone(),
                blob.cx.round() as usize,
                blob.cy.round() as usize,
                blob.d,
            ));
        }
        let (x0, x1, y0, y1) = blob_bbox(blob, w, h);
        shapes.push(ShapeRecord {
            cx: blob.cx,
            cy: blob.cy,
            rx: blob.rx,
            ry: blob.ry,
            d: blob.d,
            bbox: (x0, y0, x1, y1),
        });
    }

    Ok(Scene {
        pair: RectifiedPair {
            frame_id,
            rgb,
            lwir,
        },
        points,
        shapes,
    })
}

fn blob_bbox(blob: &Blob, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let reach = 1.35; // boundary perturbation never exceeds this factor
    let x0 = ((blob.cx - blob.rx * reach).floor().max(0.0)) as usize;
    let x1 = ((blob.cx + blob.rx * reach).ceil() as usize).min(w - 1);
    let y0 = ((blob.cy - blob.ry * reach).floor().max(0.0)) as usize;
    let y1 = ((blob.cy + blob.ry * reach).ceil() as usize).min(h - 1);
    (x0, x1, y0, y1)
}

/// Separable box blur with edge clamping.
fn box_blur(img: &ImageBuf, radius: usize) -> ImageBuf {
    let r = radius as i64;
    let norm = 1.0 / (2 * radius + 1) as f32;
    let horizontal = ImageBuf::from_fn(img.height, img.width, img.channels, |c, y, x| {
        let mut acc = 0.0;
        for dx in -r..=r {
            acc += img.get_clamped(c, y as i64, x as i64 + dx);
        }
        acc * norm
    });
    ImageBuf::from_fn(img.height, img.width, img.channels, |c, y, x| {
        let mut acc = 0.0;
        for dy in -r..=r {
            acc += horizontal.get_clamped(c, y as i64 + dy, x as i64);
        }
        acc * norm
    })
}

/// Generate `n_frames` scenes and write them in the dataset layout.
pub fn generate_dataset(
    config: &SynthConfig,
    n_frames: usize,
    root: &std::path::Path,
) -> Result<()> {
    let mut pairs = Vec::with_capacity(n_frames);
    let mut points = Vec::new();
    for i in 0..n_frames {
        let scene = generate_scene(config, i)?;
        pairs.push(scene.pair);
        points.extend(scene.points);
    }
    write_dataset(root, &pairs, &points)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    /// Binary silhouette support recovered from the images alone.
    fn rgb_support(img: &ImageBuf) -> Vec<Vec<bool>> {
        (0..img.height)
            .map(|y| {
                (0..img.width)
                    .map(|x| {
                        let (r, g, b) = (img.get(0, y, x), img.get(1, y, x), img.get(2, y, x));
                        let spread = r.max(g).max(b) - r.min(g).min(b);
                        spread > 0.15
                    })
                    .collect()
            })
            .collect()
    }

    fn lwir_support(img: &ImageBuf) -> Vec<Vec<bool>> {
        (0..img.height)
            .map(|y| (0..img.width).map(|x| img.get(0, y, x) > 0.35).collect())
            .collect()
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = generate_scene(&cfg, 3).unwrap();
        let b = generate_scene(&cfg, 3).unwrap();
        assert_eq!(a.pair.rgb, b.pair.rgb);
        assert_eq!(a.pair.lwir, b.pair.lwir);
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn zero_shift_supports_coincide() {
        // force d=0 by max_disparity=0, disable blur/noise for exactness
        let cfg = SynthConfig {
            shapes_per_frame: 1,
            max_disparity: 0,
            blur_radius: 0,
            noise_std: 0.0,
            ..SynthConfig::default()
        };
        let scene = generate_scene(&cfg, 0).unwrap();
        assert_eq!(scene.shapes[0].d, 0);
        let rs = rgb_support(&scene.pair.rgb);
        let ls = lwir_support(&scene.pair.lwir);
        assert_eq!(rs, ls, "zero-shift silhouettes must coincide pixel-exactly");
        assert!(rs.iter().flatten().any(|&v| v), "support must be non-empty");
    }

    /// Independent oracle: slide the binarized visible silhouette across
    /// the binarized thermal view; the best alignment must be the
    /// generator's disparity, for every shape.
    #[test]
    fn template_matching_recovers_disparities_exactly() {
        let cfg = SynthConfig {
            shapes_per_frame: 5,
            points_per_shape: 2,
            ..SynthConfig::default()
        };
        for scene_index in 0..4 {
            let scene = generate_scene(&cfg, scene_index).unwrap();
            assert!(scene.points.len() >= 5);
            let rs = rgb_support(&scene.pair.rgb);
            let ls = lwir_support(&scene.pair.lwir);
            for shape in &scene.shapes {
                let (x0, y0, x1, y1) = shape.bbox;
                let mut best = (i64::MIN, 0i32);
                for s in -cfg.max_disparity..=cfg.max_disparity {
                    let mut score = 0i64;
                    for y in y0..=y1 {
                        for x in x0..=x1 {
                            if rs[y][x] {
                                let lx = x as i64 + s as i64;
                                if lx >= 0
                                    && (lx as usize) < scene.pair.lwir.width
                                    && ls[y][lx as usize]
                                {
                                    score += 1;
                                }
                            }
                        }
                    }
                    if score > best.0 {
                        best = (score, s);
                    }
                }
                assert_eq!(
                    best.1, shape.d,
                    "scene {scene_index}: shape at ({}, {}) mismatched",
                    shape.cx, shape.cy
                );
            }
            // every emitted point carries its shape's disparity and sits inside the support
            for p in &scene.points {
                assert!(rs[p.y][p.x], "point ({}, {}) must be interior", p.x, p.y);
            }
        }
    }

    #[test]
    fn spectra_are_uncorrelated_inside_shapes() {
        let cfg = SynthConfig {
            shapes_per_frame: 4,
            ..SynthConfig::default()
        };
        let mut total = 0.0;
        let mut count = 0usize;
        for scene_index in 0..6 {
            let scene = generate_scene(&cfg, scene_index).unwrap();
            let gray = scene.pair.rgb.gray();
            let rs = rgb_support(&scene.pair.rgb);
            for shape in &scene.shapes {
                let (x0, y0, x1, y1) = shape.bbox;
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if rs[y][x] {
                            let lx = x as i64 + shape.d as i64;
                            if lx >= 0 && (lx as usize) < scene.pair.lwir.width {
                                xs.push(gray.get(0, y, x) as f64);
                                ys.push(scene.pair.lwir.get(0, y, lx as usize) as f64);
                            }
                        }
                    }
                }
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let cov: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
                let vx: f64 = xs.iter().map(|a| (a - mx) * (a - mx)).sum();
                let vy: f64 = ys.iter().map(|b| (b - my) * (b - my)).sum();
                let r = if vx > 0.0 && vy > 0.0 {
                    cov / (vx * vy).sqrt()
                } else {
                    0.0
                };
                total += r.abs();
                count += 1;
            }
        }
        let mean_abs_r = total / count as f64;
        assert!(
            mean_abs_r < 0.5,
            "mean |r| between spectra should be low, got {mean_abs_r}"
        );
    }

    #[test]
    fn dataset_roundtrips_through_loader() {
        let root = std::env::temp_dir().join("xstereo_synth_roundtrip");
        let _ = std::fs::remove_dir_all(&root);
        let cfg = SynthConfig::default();
        generate_dataset(&cfg, 10, &root).unwrap();
        assert_eq!(std::fs::read_dir(root.join("rgb")).unwrap().count(), 10);
        assert_eq!(std::fs::read_dir(root.join("lwir")).unwrap().count(), 10);
        let manifest = crate::data::load_dataset(&root, 12, 32).unwrap();
        assert_eq!(manifest.frames.len(), 10);
        assert_eq!(
            manifest.points.len(),
            10 * cfg.shapes_per_frame * cfg.points_per_shape
        );
        assert_eq!(manifest.rejected_points, 0);
        std::fs::remove_dir_all(&root).ok();
    }

    #[test]
    fn oversized_disparity_is_rejected() {
        let cfg = SynthConfig {
            max_disparity: 20,
            ..SynthConfig::default()
        };
        assert!(cfg.validate_against(32).is_err());
        assert!(cfg.validate_against(64).is_ok());
    }
}
