//! Ground-truth correspondences and the two augmentation transforms:
//! Manhattan-1 neighbor propagation (x5) and y-axis mirroring (x2).

use std::path::Path;

use crate::error::{Error, Result};

/// One sparse ground-truth correspondence. The matching LWIR column for a
/// point is `x + d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisparityPoint {
    pub frame_id: String,
    pub x: usize,
    pub y: usize,
    pub d: i32,
    /// True when the point lives on the mirrored copy of its frame.
    pub mirrored: bool,
}

impl DisparityPoint {
    pub fn new(frame_id: impl Into<String>, x: usize, y: usize, d: i32) -> Self {
        DisparityPoint {
            frame_id: frame_id.into(),
            x,
            y,
            d,
            mirrored: false,
        }
    }
}

/// Parse `points.csv`: header `frame_id,x,y,d`, one point per line.
pub fn parse_points_csv(path: &Path, text: &str) -> Result<Vec<DisparityPoint>> {
    let err = |line: usize, message: String| Error::PointsCsv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == "frame_id,x,y,d" => {}
        Some((_, header)) => {
            return Err(err(
                1,
                format!("expected header 'frame_id,x,y,d', got '{header}'"),
            ))
        }
        None => return Err(err(1, "empty file".into())),
    }
    let mut points = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(err(
                line_no,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let frame_id = fields[0].trim().to_string();
        if frame_id.is_empty() {
            return Err(err(line_no, "empty frame_id".into()));
        }
        let x: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("bad x '{}'", fields[1])))?;
        let y: usize = fields[2]
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("bad y '{}'", fields[2])))?;
        let d: i32 = fields[3]
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("bad d '{}'", fields[3])))?;
        points.push(DisparityPoint::new(frame_id, x, y, d));
    }
    Ok(points)
}

pub fn points_csv_string(points: &[DisparityPoint]) -> String {
    let mut s = String::from("frame_id,x,y,d\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.frame_id, p.x, p.y, p.d));
    }
    s
}

/// Mirror a point set over the y axis of frames of width `width`:
/// x -> width-1-x, d -> -d, mirrored flag toggled. Applying it twice is
/// the identity.
pub fn mirror_points(points: &[DisparityPoint], width: usize) -> Vec<DisparityPoint> {
    points
        .iter()
        .map(|p| DisparityPoint {
            frame_id: p.frame_id.clone(),
            x: width - 1 - p.x,
            y: p.y,
            d: -p.d,
            mirrored: !p.mirrored,
        })
        .collect()
}

/// Neighbor propagation then mirroring, with per-point frame dimensions
/// supplied by `dims` (width, height). Every input point contributes
/// itself plus its four Manhattan-distance-1 neighbors (same disparity),
/// and the resulting set is duplicated onto mirrored frames. Neighbors
/// falling outside the image are dropped; the drop count is returned.
pub fn augment_points_by(
    points: &[DisparityPoint],
    dims: impl Fn(&DisparityPoint) -> (usize, usize),
) -> (Vec<DisparityPoint>, usize) {
    let mut out = Vec::with_capacity(points.len() * 10);
    let mut dropped = 0usize;
    for p in points {
        let (width, height) = dims(p);
        let candidates: [(i64, i64); 5] = [
            (p.x as i64, p.y as i64),
            (p.x as i64 - 1, p.y as i64),
            (p.x as i64 + 1, p.y as i64),
            (p.x as i64, p.y as i64 - 1),
            (p.x as i64, p.y as i64 + 1),
        ];
        for (x, y) in candidates {
            if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                dropped += 1;
                continue;
            }
            out.push(DisparityPoint {
                frame_id: p.frame_id.clone(),
                x: x as usize,
                y: y as usize,
                d: p.d,
                mirrored: p.mirrored,
            });
        }
    }
    let mirrored: Vec<DisparityPoint> = out
        .iter()
        .map(|p| {
            let (width, _) = dims(p);
            DisparityPoint {
                frame_id: p.frame_id.clone(),
                x: width - 1 - p.x,
                y: p.y,
                d: -p.d,
                mirrored: !p.mirrored,
            }
        })
        .collect();
    out.extend(mirrored);
    (out, dropped)
}

/// [`augment_points_by`] for a dataset of uniform image dimensions.
pub fn augment_points(
    points: &[DisparityPoint],
    width: usize,
    height: usize,
) -> (Vec<DisparityPoint>, usize) {
    augment_points_by(points, |_| (width, height))
}
