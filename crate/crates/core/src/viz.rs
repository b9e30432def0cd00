//! Report rendering: recall-vs-threshold plot images, prediction overlays
//! and plain-text tables.

use std::path::Path;

use crate::data::ImageBuf;
use crate::error::Result;
use crate::eval::{AggregateReport, PredictionRow};

const PLOT_W: usize = 640;
const PLOT_H: usize = 440;
const MARGIN_L: usize = 56;
const MARGIN_R: usize = 24;
const MARGIN_T: usize = 28;
const MARGIN_B: usize = 48;

type Color = [f32; 3];
const BLACK: Color = [0.0, 0.0, 0.0];
const GRAY: Color = [0.82, 0.82, 0.82];
const FOLD_COLOR: Color = [0.45, 0.62, 0.86];
const MEAN_COLOR: Color = [0.84, 0.22, 0.18];

/// 3x5 bitmap glyphs for axis labels.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        _ => [0; 5],
    }
}

struct Canvas {
    img: ImageBuf,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Canvas {
        Canvas {
            img: ImageBuf::from_fn(h, w, 3, |_, _, _| 1.0),
        }
    }

    fn put(&mut self, x: i64, y: i64, color: Color) {
        if x >= 0 && y >= 0 && (x as usize) < self.img.width && (y as usize) < self.img.height {
            for (c, v) in color.iter().enumerate() {
                self.img.set(c, y as usize, x as usize, *v);
            }
        }
    }

    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: Color, thick: bool) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let x = (x0 + t * (x1 - x0)).round() as i64;
            let y = (y0 + t * (y1 - y0)).round() as i64;
            self.put(x, y, color);
            if thick {
                self.put(x + 1, y, color);
                self.put(x, y + 1, color);
            }
        }
    }

    fn text(&mut self, x: i64, y: i64, s: &str, scale: i64, color: Color) {
        let mut cx = x;
        for ch in s.chars() {
            let rows = glyph(ch);
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..3 {
                    if bits & (0b100 >> rx) != 0 {
                        for sy in 0..scale {
                            for sx in 0..scale {
                                self.put(
                                    cx + rx as i64 * scale + sx,
                                    y + ry as i64 * scale + sy,
                                    color,
                                );
                            }
                        }
                    }
                }
            }
            cx += 4 * scale;
        }
    }
}

/// Recall-vs-threshold curves: one light line per fold, the cross-fold
/// mean emphasized.
pub fn render_recall_plot(report: &AggregateReport, path: &Path) -> Result<()> {
    let mut canvas = Canvas::new(PLOT_W, PLOT_H);
    let x_axis = (MARGIN_L as f64, (PLOT_W - MARGIN_R) as f64);
    let y_axis = ((PLOT_H - MARGIN_B) as f64, MARGIN_T as f64);
    let t_max = report
        .thresholds
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max)
        .max(1.0);
    let xpos = |t: f64| x_axis.0 + (t / t_max) * (x_axis.1 - x_axis.0);
    let ypos = |r: f64| y_axis.0 + r.clamp(0.0, 1.0) * (y_axis.1 - y_axis.0);

    // grid and axes
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        canvas.line(x_axis.0, ypos(frac), x_axis.1, ypos(frac), GRAY, false);
    }
    canvas.line(x_axis.0, y_axis.0, x_axis.1, y_axis.0, BLACK, false);
    canvas.line(x_axis.0, y_axis.0, x_axis.0, y_axis.1, BLACK, false);
    canvas.text(8, ypos(1.0) as i64 - 4, "1", 2, BLACK);
    canvas.text(8, ypos(0.5) as i64 - 4, "0.5", 2, BLACK);
    canvas.text(8, ypos(0.0) as i64 - 4, "0", 2, BLACK);
    for &t in &report.thresholds {
        let x = xpos(t);
        canvas.line(x, y_axis.0, x, y_axis.0 + 4.0, BLACK, false);
        canvas.text(
            x as i64 - 3,
            y_axis.0 as i64 + 8,
            &format!("{t:.0}"),
            2,
            BLACK,
        );
    }

    let draw_poly = |canvas: &mut Canvas, recalls: &[f64], color: Color, thick: bool| {
        for w in recalls.windows(2).zip(report.thresholds.windows(2)) {
            let (r, t) = w;
            canvas.line(xpos(t[0]), ypos(r[0]), xpos(t[1]), ypos(r[1]), color, thick);
        }
        for (r, t) in recalls.iter().zip(&report.thresholds) {
            let (x, y) = (xpos(*t), ypos(*r));
            canvas.line(x - 2.0, y, x + 2.0, y, color, thick);
            canvas.line(x, y - 2.0, x, y + 2.0, color, thick);
        }
    };
    for fold in &report.folds {
        draw_poly(&mut canvas, &fold.recalls, FOLD_COLOR, false);
    }
    draw_poly(&mut canvas, &report.mean, MEAN_COLOR, true);

    canvas.img.save_png(path)
}

/// Plain-text table of per-fold and aggregate recalls.
pub fn report_table(report: &AggregateReport) -> String {
    let mut s = String::new();
    let header: Vec<String> = report
        .thresholds
        .iter()
        .map(|t| format!("recall@{t:.0}"))
        .collect();
    s.push_str(&format!("{:<14}", "fold"));
    for h in &header {
        s.push_str(&format!("{h:>12}"));
    }
    s.push('\n');
    for fold in &report.folds {
        s.push_str(&format!("{:<14}", fold.fold_id));
        for r in &fold.recalls {
            s.push_str(&format!("{:>12.4}", r));
        }
        s.push('\n');
    }
    s.push_str(&format!("{:<14}", "mean"));
    for m in &report.mean {
        s.push_str(&format!("{m:>12.4}"));
    }
    s.push('\n');
    s.push_str(&format!("{:<14}", "std"));
    for d in &report.std {
        s.push_str(&format!("{d:>12.4}"));
    }
    s.push('\n');
    if report.single_fold {
        s.push_str("(single fold: standard deviation degenerate)\n");
    }
    s
}

/// Draw ground-truth (green) and predicted (red) match columns on the
/// visible frame; the query point is marked in blue.
pub fn render_overlay(rgb: &ImageBuf, rows: &[&PredictionRow], path: &Path) -> Result<()> {
    let mut canvas = Canvas { img: rgb.clone() };
    for row in rows {
        let (x, y) = (row.x as i64, row.y as i64);
        let gt_col = x + row.gt_d as i64;
        let pred_col = x + row.estimate.d_hat.round() as i64;
        for dy in -5..=5 {
            canvas.put(gt_col, y + dy, [0.1, 0.85, 0.2]);
            canvas.put(pred_col, y + dy, [0.9, 0.15, 0.1]);
        }
        for d in -3i64..=3 {
            canvas.put(x + d, y, [0.15, 0.3, 0.95]);
            canvas.put(x, y + d, [0.15, 0.3, 0.95]);
        }
    }
    canvas.img.save_png(path)
}
