//! On-disk dataset format, manifest construction, fold splitting and
//! augmentation.
//!
//! Layout: `root/rgb/<frame_id>.png` (8-bit color), `root/lwir/<frame_id>.png`
//! (8-bit single channel), `root/points.csv` with header `frame_id,x,y,d`.

pub mod image;
pub mod patch;
pub mod points;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use image::ImageBuf;
pub use patch::{extract_patch, raw_patch, stats_of_patches, ChannelStats, NormStats};
pub use points::{augment_points, mirror_points, parse_points_csv, DisparityPoint};

/// Co-registered, row-rectified visible + thermal frame.
#[derive(Debug, Clone)]
pub struct RectifiedPair {
    pub frame_id: String,
    pub rgb: ImageBuf,
    pub lwir: ImageBuf,
}

impl RectifiedPair {
    pub fn flipped(&self) -> RectifiedPair {
        RectifiedPair {
            frame_id: self.frame_id.clone(),
            rgb: self.rgb.flipped_horizontal(),
            lwir: self.lwir.flipped_horizontal(),
        }
    }
}

/// Loaded dataset (or fold split of one): frames, points and the
/// normalization statistics patches are standardized with.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub frames: Vec<RectifiedPair>,
    /// Mirrored copies, materialized only when mirrored points exist.
    flipped: Vec<Option<RectifiedPair>>,
    index: HashMap<String, usize>,
    pub points: Vec<DisparityPoint>,
    pub stats: NormStats,
    pub augmented: bool,
    /// Points rejected at load because |d| exceeds the sweep range.
    pub rejected_points: usize,
    /// Neighbor candidates dropped at image borders during augmentation.
    pub dropped_neighbors: usize,
}

/// One cross-validation fold: disjoint train/val/test frame lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldEntry {
    pub id: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FoldFile {
    fold: Vec<FoldEntry>,
}

/// Parse a fold-spec TOML file mapping fold ids to frame lists.
pub fn load_fold_spec(path: &Path) -> Result<Vec<FoldEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: FoldFile =
        toml::from_str(&text).map_err(|e| Error::FoldSpec(format!("{}: {e}", path.display())))?;
    if file.fold.is_empty() {
        return Err(Error::FoldSpec(format!(
            "{}: no folds defined",
            path.display()
        )));
    }
    Ok(file.fold)
}

pub fn fold_spec_string(folds: &[FoldEntry]) -> String {
    toml::to_string(&FoldFile {
        fold: folds.to_vec(),
    })
    .expect("fold spec serializes")
}

/// Load a dataset root. `patch_size` fixes the window used for the
/// normalization statistics; points with |d| > d_max/2 are rejected (the
/// sweep could never reach them) and counted.
pub fn load_dataset(root: &Path, patch_size: usize, d_max: usize) -> Result<DatasetManifest> {
    let rgb_dir = root.join("rgb");
    let lwir_dir = root.join("lwir");
    let points_path = root.join("points.csv");
    for dir in [&rgb_dir, &lwir_dir] {
        if !dir.is_dir() {
            return Err(Error::Dataset(format!(
                "missing directory {}",
                dir.display()
            )));
        }
    }
    if !points_path.is_file() {
        return Err(Error::Dataset(format!(
            "missing points file {}",
            points_path.display()
        )));
    }

    let mut ids: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(&rgb_dir).map_err(|e| Error::io(&rgb_dir, e))? {
        let entry = entry.map_err(|e| Error::io(&rgb_dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            let stem = path.file_stem().and_then(|s| s.to_str()).ok_or_else(|| {
                Error::Dataset(format!("unreadable file name {}", path.display()))
            })?;
            ids.push(stem.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Dataset(format!(
            "no png frames in {}",
            rgb_dir.display()
        )));
    }

    let mut frames = Vec::with_capacity(ids.len());
    let mut index = HashMap::new();
    for id in &ids {
        let rgb = ImageBuf::load_rgb(&rgb_dir.join(format!("{id}.png")))?;
        let lwir_path = lwir_dir.join(format!("{id}.png"));
        if !lwir_path.is_file() {
            return Err(Error::Dataset(format!(
                "frame {id}: missing {}",
                lwir_path.display()
            )));
        }
        let lwir = ImageBuf::load_gray(&lwir_path)?;
        if rgb.height != lwir.height || rgb.width != lwir.width {
            return Err(Error::Dataset(format!(
                "frame {id}: rgb is {}x{} but lwir is {}x{}",
                rgb.height, rgb.width, lwir.height, lwir.width
            )));
        }
        index.insert(id.clone(), frames.len());
        frames.push(RectifiedPair {
            frame_id: id.clone(),
            rgb,
            lwir,
        });
    }

    let text = std::fs::read_to_string(&points_path).map_err(|e| Error::io(&points_path, e))?;
    let parsed = parse_points_csv(&points_path, &text)?;
    let half_range = (d_max / 2) as i32;
    let mut points = Vec::with_capacity(parsed.len());
    let mut rejected = 0usize;
    for p in parsed {
        let Some(&fi) = index.get(&p.frame_id) else {
            return Err(Error::Dataset(format!(
                "point references unknown frame '{}'",
                p.frame_id
            )));
        };
        let frame = &frames[fi];
        if p.x >= frame.rgb.width || p.y >= frame.rgb.height {
            return Err(Error::Dataset(format!(
                "point ({}, {}) outside frame '{}' ({}x{})",
                p.x, p.y, p.frame_id, frame.rgb.height, frame.rgb.width
            )));
        }
        if p.d.abs() > half_range {
            rejected += 1;
            continue;
        }
        points.push(p);
    }
    if rejected > 0 {
        eprintln!(
            "warning: rejected {rejected} points with |d| > {half_range} (outside sweep range)"
        );
    }

    let mut manifest = DatasetManifest {
        root: root.to_path_buf(),
        flipped: vec![None; frames.len()],
        index,
        frames,
        points,
        stats: NormStats::identity(),
        augmented: false,
        rejected_points: rejected,
        dropped_neighbors: 0,
    };
    manifest.stats = manifest.compute_stats(patch_size);
    Ok(manifest)
}

impl DatasetManifest {
    pub fn frame(&self, id: &str) -> Result<&RectifiedPair> {
        self.index
            .get(id)
            .map(|&i| &self.frames[i])
            .ok_or_else(|| Error::Dataset(format!("unknown frame '{id}'")))
    }

    /// RGB and LWIR planes a point's patches come from, resolving the
    /// mirrored tag to the flipped copy of the frame.
    pub fn images_for(&self, p: &DisparityPoint) -> Result<(&ImageBuf, &ImageBuf)> {
        let &i = self
            .index
            .get(&p.frame_id)
            .ok_or_else(|| Error::Dataset(format!("unknown frame '{}'", p.frame_id)))?;
        if p.mirrored {
            let pair = self.flipped[i].as_ref().ok_or_else(|| {
                Error::Dataset(format!("mirrored frame '{}' not materialized", p.frame_id))
            })?;
            Ok((&pair.rgb, &pair.lwir))
        } else {
            let pair = &self.frames[i];
            Ok((&pair.rgb, &pair.lwir))
        }
    }

    /// Patch-population statistics at this manifest's points.
    fn compute_stats(&self, patch_size: usize) -> NormStats {
        let mut rgb_patches = Vec::with_capacity(self.points.len());
        let mut lwir_patches = Vec::with_capacity(self.points.len());
        for p in &self.points {
            let Ok((rgb, lwir)) = self.images_for(p) else {
                continue;
            };
            rgb_patches.push(raw_patch(
                rgb, p.x as i64, p.y as i64, patch_size, patch_size,
            ));
            lwir_patches.push(raw_patch(
                lwir,
                p.x as i64 + p.d as i64,
                p.y as i64,
                patch_size,
                patch_size,
            ));
        }
        if rgb_patches.is_empty() {
            return NormStats::identity();
        }
        NormStats {
            rgb: stats_of_patches(&rgb_patches, 3),
            lwir: stats_of_patches(&lwir_patches, 1),
        }
    }

    fn subset(&self, frame_ids: &[String]) -> DatasetManifest {
        let keep: HashSet<&String> = frame_ids.iter().collect();
        let mut frames = Vec::new();
        let mut index = HashMap::new();
        for f in &self.frames {
            if keep.contains(&f.frame_id) {
                index.insert(f.frame_id.clone(), frames.len());
                frames.push(f.clone());
            }
        }
        let points: Vec<DisparityPoint> = self
            .points
            .iter()
            .filter(|p| keep.contains(&p.frame_id))
            .cloned()
            .collect();
        DatasetManifest {
            root: self.root.clone(),
            flipped: vec![None; frames.len()],
            index,
            frames,
            points,
            stats: NormStats::identity(),
            augmented: false,
            rejected_points: 0,
            dropped_neighbors: 0,
        }
    }

    /// Split into train/val/test sub-manifests per the fold entry.
    /// Augmentation (when enabled) applies to the train split only;
    /// normalization statistics are computed on the un-augmented train
    /// points and propagated to val and test.
    pub fn split_folds(
        &self,
        fold: &FoldEntry,
        augment: bool,
        patch_size: usize,
    ) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
        // every listed frame must exist
        for id in fold.train.iter().chain(&fold.val).chain(&fold.test) {
            if !self.index.contains_key(id) {
                return Err(Error::FoldSpec(format!(
                    "fold '{}' references frame '{id}' absent from the dataset",
                    fold.id
                )));
            }
        }
        // pairwise disjoint
        let mut seen: HashSet<&String> = HashSet::new();
        for id in fold.train.iter().chain(&fold.val).chain(&fold.test) {
            if !seen.insert(id) {
                return Err(Error::FoldSpec(format!(
                    "fold '{}': frame '{id}' appears in more than one split",
                    fold.id
                )));
            }
        }
        // frames carrying points must be covered
        for p in &self.points {
            if !seen.contains(&p.frame_id) {
                return Err(Error::FoldSpec(format!(
                    "fold '{}' does not cover frame '{}' which has ground-truth points",
                    fold.id, p.frame_id
                )));
            }
        }

        let mut train = self.subset(&fold.train);
        let mut val = self.subset(&fold.val);
        let mut test = self.subset(&fold.test);

        train.stats = train.compute_stats(patch_size);
        val.stats = train.stats.clone();
        test.stats = train.stats.clone();

        if augment {
            let dims: HashMap<&str, (usize, usize)> = train
                .frames
                .iter()
                .map(|f| (f.frame_id.as_str(), (f.rgb.width, f.rgb.height)))
                .collect();
            let (aug, dropped) =
                points::augment_points_by(&train.points, |p| dims[p.frame_id.as_str()]);
            train.points = aug;
            train.dropped_neighbors = dropped;
            train.augmented = true;
            for i in 0..train.frames.len() {
                train.flipped[i] = Some(train.frames[i].flipped());
            }
        }
        Ok((train, val, test))
    }
}

/// Write a dataset in the on-disk layout. Fails if the target files cannot
/// be created; existing files are overwritten (the CLI guards with --force).
pub fn write_dataset(
    root: &Path,
    pairs: &[RectifiedPair],
    points: &[DisparityPoint],
) -> Result<()> {
    let rgb_dir = root.join("rgb");
    let lwir_dir = root.join("lwir");
    std::fs::create_dir_all(&rgb_dir).map_err(|e| Error::io(&rgb_dir, e))?;
    std::fs::create_dir_all(&lwir_dir).map_err(|e| Error::io(&lwir_dir, e))?;
    for pair in pairs {
        pair.rgb
            .save_png(&rgb_dir.join(format!("{}.png", pair.frame_id)))?;
        pair.lwir
            .save_png(&lwir_dir.join(format!("{}.png", pair.frame_id)))?;
    }
    let csv = points::points_csv_string(points);
    let path = root.join("points.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Summary written by `prepare`: counts and per-fold statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestCache {
    pub root: String,
    pub n_frames: usize,
    pub n_points: usize,
    pub rejected_points: usize,
    pub folds: Vec<FoldCache>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldCache {
    pub fold_id: String,
    pub train_frames: usize,
    pub val_frames: usize,
    pub test_frames: usize,
    pub train_points: usize,
    pub val_points: usize,
    pub test_points: usize,
    pub augmented_train_points: usize,
    pub dropped_neighbors: usize,
    pub stats: NormStats,
}

impl ManifestCache {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("cache serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Dataset(format!("bad manifest cache: {e}")))
    }
}
