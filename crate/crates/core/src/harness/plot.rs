//! Figure emission: training-curve plots and gaze-overlay images.
//!
//! Everything is rendered from scratch onto RGB buffers — lines with
//! Bresenham stepping and text with a built-in 5×7 bitmap font — so the
//! output is deterministic across platforms and needs no font files.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::ArrayView2;

use crate::data::BatchProvider;
use crate::error::{Error, Result};
use crate::nets::{forward_regressor, ParamStore};
use crate::Elem;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
/// Series palette (blue, orange, green, red, purple, brown).
const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
];
/// Overlay arrow colors: ground truth, pre-adaptation, post-adaptation.
const TRUTH_COLOR: Rgb<u8> = Rgb([44, 160, 44]);
const PRE_COLOR: Rgb<u8> = Rgb([214, 39, 40]);
const POST_COLOR: Rgb<u8> = Rgb([31, 119, 180]);

/// One named sequence of (x, y) points.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// What curve emission did: legend entries in draw order, malformed rows
/// skipped across all inputs, and how many series had no points at all.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEmit {
    pub legend: Vec<String>,
    pub skipped_rows: usize,
    pub empty_series: usize,
}

/// Reads two named numeric columns from a CSV trace. Rows that fail to
/// parse — wrong field count, missing value, non-numeric or non-finite —
/// are skipped and counted rather than aborting the plot.
pub fn load_trace_csv(path: &Path, x_col: &str, y_col: &str) -> Result<(Vec<(f64, f64)>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Ingestion(format!("cannot open trace {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingestion(format!("bad trace header in {}: {e}", path.display())))?;
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Ingestion(format!(
                "column '{name}' not found in {} (have: {})",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let xi = col(x_col)?;
    let yi = col(y_col)?;
    let mut points = Vec::new();
    let mut skipped = 0usize;
    for record in reader.records() {
        let parsed = record.ok().and_then(|rec| {
            let x: f64 = rec.get(xi)?.trim().parse().ok()?;
            let y: f64 = rec.get(yi)?.trim().parse().ok()?;
            (x.is_finite() && y.is_finite()).then_some((x, y))
        });
        match parsed {
            Some(p) => points.push(p),
            None => skipped += 1,
        }
    }
    Ok((points, skipped))
}

/// Renders named traces into one curve plot and writes it as a PNG.
pub fn emit_training_curves(
    inputs: &[(String, PathBuf)],
    x_col: &str,
    y_col: &str,
    out_png: &Path,
) -> Result<CurveEmit> {
    let mut series = Vec::with_capacity(inputs.len());
    let mut skipped_rows = 0;
    for (name, path) in inputs {
        let (points, skipped) = load_trace_csv(path, x_col, y_col)?;
        skipped_rows += skipped;
        series.push(Series { name: name.clone(), points });
    }
    let empty_series = series.iter().filter(|s| s.points.is_empty()).count();
    let img = render_curve_plot(&series, x_col, y_col);
    save_png(&img, out_png)?;
    Ok(CurveEmit {
        legend: series.iter().map(|s| s.name.clone()).collect(),
        skipped_rows,
        empty_series,
    })
}

/// Pure plot renderer: axes, ticks, one polyline per series, legend.
/// Series with no points contribute a legend entry but no geometry, so an
/// empty trace still yields a complete (blank) plot.
pub fn render_curve_plot(series: &[Series], x_label: &str, y_label: &str) -> RgbImage {
    const W: u32 = 640;
    const H: u32 = 480;
    const L: i64 = 64;
    const R: i64 = 620;
    const T: i64 = 16;
    const B: i64 = 440;
    let mut img = RgbImage::from_pixel(W, H, WHITE);

    // Data extent over every finite point of every series.
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    let (x0, x1) = padded_range(&xs);
    let (y0, y1) = padded_range(&ys);

    // Frame.
    draw_rect(&mut img, L, T, R, B, BLACK);

    // Ticks and labels.
    for k in 0..=4 {
        let fx = k as f64 / 4.0;
        let px = L + ((R - L) as f64 * fx).round() as i64;
        draw_line(&mut img, px, B, px, B + 4, BLACK);
        let label = fmt_tick(x0 + fx * (x1 - x0));
        let tw = text_width(&label);
        draw_text(&mut img, px - tw as i64 / 2, B + 8, &label, BLACK);

        let fy = k as f64 / 4.0;
        let py = B - ((B - T) as f64 * fy).round() as i64;
        draw_line(&mut img, L - 4, py, L, py, BLACK);
        let label = fmt_tick(y0 + fy * (y1 - y0));
        let tw = text_width(&label);
        draw_text(&mut img, L - 8 - tw as i64, py - 3, &label, BLACK);
    }
    let xw = text_width(x_label);
    draw_text(
        &mut img,
        L + ((R - L) - xw as i64) / 2,
        B + 24,
        x_label,
        BLACK,
    );
    draw_text(&mut img, 4, T, y_label, BLACK);

    // Polylines.
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let px = L + ((x - x0) / (x1 - x0) * (R - L) as f64).round() as i64;
        let py = B - ((y - y0) / (y1 - y0) * (B - T) as f64).round() as i64;
        (px, py)
    };
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if s.points.len() == 1 {
            let (px, py) = to_px(s.points[0].0, s.points[0].1);
            draw_dot(&mut img, px, py, color);
        }
        for pair in s.points.windows(2) {
            let (ax, ay) = to_px(pair[0].0, pair[0].1);
            let (bx, by) = to_px(pair[1].0, pair[1].1);
            draw_line(&mut img, ax, ay, bx, by, color);
        }
    }

    // Legend, top-right corner of the frame.
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let ty = T + 8 + si as i64 * 12;
        let tw = text_width(&s.name);
        let tx = R - 12 - tw as i64;
        draw_line(&mut img, tx - 22, ty + 3, tx - 6, ty + 3, color);
        draw_text(&mut img, tx, ty, &s.name, BLACK);
    }
    img
}

/// Gaze overlays: for each of the first `count` labeled samples, renders
/// the eye image with the true gaze and both predictors' gazes drawn as
/// arrows from the image center, and writes one PNG per sample.
///
/// Arrow direction for a gaze (gx, gy, gz) is (gx, -gy) normalized in
/// pixel coordinates — the same sign convention the renderer uses to place
/// the iris, with the row axis growing downward.
pub fn emit_overlay_figure(
    pre: &ParamStore<Elem>,
    post: &ParamStore<Elem>,
    data: &dyn BatchProvider,
    count: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if !data.is_labeled() {
        return Err(Error::Evaluation(
            "overlay figure needs labeled samples for ground-truth arrows".into(),
        ));
    }
    let n = count.min(data.len());
    if n == 0 {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let indices: Vec<usize> = (0..n).collect();
    let batch = data.materialize(&indices);
    let truth = batch
        .gazes
        .as_ref()
        .expect("labeled provider must materialize gazes");
    let y_pre = forward_regressor(pre, &batch.images)?.y;
    let y_post = forward_regressor(post, &batch.images)?.y;

    let mut files = Vec::with_capacity(n);
    for i in 0..n {
        let g = |m: &ndarray::Array2<Elem>| {
            let r = m.row(i);
            [r[0] as f64, r[1] as f64, r[2] as f64]
        };
        let img = render_overlay(
            batch.images.index_axis(ndarray::Axis(0), i).index_axis(ndarray::Axis(0), 0),
            g(truth),
            g(&y_pre),
            g(&y_post),
        );
        let path = out_dir.join(format!("overlay_{i:03}.png"));
        save_png(&img, &path)?;
        files.push(path);
    }
    Ok(files)
}

/// Renders one grayscale image (values in [-1, 1]) upscaled 8× with three
/// gaze arrows: truth, pre-adaptation prediction, post-adaptation
/// prediction. Identical gaze vectors paint identical pixels.
pub fn render_overlay(
    image: ArrayView2<Elem>,
    truth: [f64; 3],
    pre: [f64; 3],
    post: [f64; 3],
) -> RgbImage {
    const SCALE: u32 = 8;
    let (rows, cols) = image.dim();
    let (w, h) = (cols as u32 * SCALE, rows as u32 * SCALE);
    let mut img = RgbImage::new(w, h);
    for (py, px, pixel) in img.enumerate_pixels_mut().map(|(x, y, p)| (y, x, p)) {
        let v = image[((py / SCALE) as usize, (px / SCALE) as usize)];
        let gray = (((v as f64 + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0).round() as u8;
        *pixel = Rgb([gray, gray, gray]);
    }
    let center = (((w - 1) as f64) / 2.0, ((h - 1) as f64) / 2.0);
    let len = 0.4 * w.min(h) as f64;
    for (gaze, color) in [(truth, TRUTH_COLOR), (pre, PRE_COLOR), (post, POST_COLOR)] {
        match arrow_segments(center, gaze, len) {
            Some(segments) => {
                for ((ax, ay), (bx, by)) in segments {
                    draw_line(
                        &mut img,
                        ax.round() as i64,
                        ay.round() as i64,
                        bx.round() as i64,
                        by.round() as i64,
                        color,
                    );
                }
            }
            // Gaze straight along the camera axis: no in-plane direction.
            None => draw_dot(&mut img, center.0.round() as i64, center.1.round() as i64, color),
        }
    }
    img
}

/// Shaft and two head strokes for a gaze arrow, or `None` when the gaze
/// has no in-plane component. Pure geometry, so two equal gazes always get
/// byte-identical strokes.
pub(crate) fn arrow_segments(
    center: (f64, f64),
    gaze: [f64; 3],
    len: f64,
) -> Option<[((f64, f64), (f64, f64)); 3]> {
    let (dx, dy) = (gaze[0], -gaze[1]);
    let norm = (dx * dx + dy * dy).sqrt();
    if norm < 1e-9 {
        return None;
    }
    let u = (dx / norm, dy / norm);
    let tip = (center.0 + len * u.0, center.1 + len * u.1);
    let head = len * 0.22;
    let barb = |angle: f64| {
        let (s, c) = angle.sin_cos();
        // Rotate the reversed shaft direction by ±angle.
        let rx = -u.0 * c - -u.1 * s;
        let ry = -u.0 * s + -u.1 * c;
        (tip.0 + head * rx, tip.1 + head * ry)
    };
    Some([
        (center, tip),
        (tip, barb(0.45)),
        (tip, barb(-0.45)),
    ])
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Finite extent of `vals` padded by 4% on each side; degenerate or empty
/// input falls back to a unit span so the axes still render.
fn padded_range(vals: &[f64]) -> (f64, f64) {
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.04;
    (lo - pad, hi + pad)
}

/// Short numeric label for an axis tick.
fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(0.01..10000.0).contains(&a) {
        return format!("{v:.1e}");
    }
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn put_pixel(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_dot(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    for dy in -1..=1 {
        for dx in -1..=1 {
            put_pixel(img, x + dx, y + dy, color);
        }
    }
}

/// Bresenham line; endpoints are clipped per pixel so off-canvas geometry
/// is safe.
fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let (mut x, mut y) = (x0, y0);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put_pixel(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn draw_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    draw_line(img, x0, y0, x1, y0, color);
    draw_line(img, x0, y1, x1, y1, color);
    draw_line(img, x0, y0, x0, y1, color);
    draw_line(img, x1, y0, x1, y1, color);
}

const GLYPH_W: i64 = 6;

fn text_width(s: &str) -> u32 {
    (s.chars().count() as i64 * GLYPH_W) as u32
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch.to_ascii_lowercase());
        let ox = x + i as i64 * GLYPH_W;
        for (ry, row) in rows.iter().enumerate() {
            for (rx, bit) in row.bytes().enumerate() {
                if bit == b'1' {
                    put_pixel(img, ox + rx as i64, y + ry as i64, color);
                }
            }
        }
    }
}

/// 5×7 pixel glyphs; rows are strings of '0'/'1', top to bottom.
fn glyph(c: char) -> [&'static str; 7] {
    match c {
        '0' => ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
        '1' => ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
        '2' => ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
        '3' => ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
        '4' => ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
        '5' => ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
        '6' => ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
        '7' => ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
        '8' => ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
        '9' => ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
        'a' => ["00000", "00000", "01110", "00001", "01111", "10001", "01111"],
        'b' => ["10000", "10000", "10110", "11001", "10001", "10001", "11110"],
        'c' => ["00000", "00000", "01110", "10000", "10000", "10001", "01110"],
        'd' => ["00001", "00001", "01101", "10011", "10001", "10001", "01111"],
        'e' => ["00000", "00000", "01110", "10001", "11111", "10000", "01110"],
        'f' => ["00110", "01001", "01000", "11100", "01000", "01000", "01000"],
        'g' => ["00000", "01111", "10001", "10001", "01111", "00001", "01110"],
        'h' => ["10000", "10000", "10110", "11001", "10001", "10001", "10001"],
        'i' => ["00100", "00000", "01100", "00100", "00100", "00100", "01110"],
        'j' => ["00010", "00000", "00110", "00010", "00010", "10010", "01100"],
        'k' => ["10000", "10000", "10010", "10100", "11000", "10100", "10010"],
        'l' => ["01100", "00100", "00100", "00100", "00100", "00100", "01110"],
        'm' => ["00000", "00000", "11010", "10101", "10101", "10101", "10101"],
        'n' => ["00000", "00000", "10110", "11001", "10001", "10001", "10001"],
        'o' => ["00000", "00000", "01110", "10001", "10001", "10001", "01110"],
        'p' => ["00000", "00000", "11110", "10001", "11110", "10000", "10000"],
        'q' => ["00000", "00000", "01101", "10011", "01111", "00001", "00001"],
        'r' => ["00000", "00000", "10110", "11001", "10000", "10000", "10000"],
        's' => ["00000", "00000", "01110", "10000", "01110", "00001", "11110"],
        't' => ["01000", "01000", "11100", "01000", "01000", "01001", "00110"],
        'u' => ["00000", "00000", "10001", "10001", "10001", "10011", "01101"],
        'v' => ["00000", "00000", "10001", "10001", "10001", "01010", "00100"],
        'w' => ["00000", "00000", "10001", "10101", "10101", "10101", "01010"],
        'x' => ["00000", "00000", "10001", "01010", "00100", "01010", "10001"],
        'y' => ["00000", "00000", "10001", "10001", "01111", "00001", "01110"],
        'z' => ["00000", "00000", "11111", "00010", "00100", "01000", "11111"],
        '.' => ["00000", "00000", "00000", "00000", "00000", "01100", "01100"],
        ',' => ["00000", "00000", "00000", "00000", "00110", "00100", "01000"],
        '-' => ["00000", "00000", "00000", "11111", "00000", "00000", "00000"],
        '+' => ["00000", "00100", "00100", "11111", "00100", "00100", "00000"],
        '_' => ["00000", "00000", "00000", "00000", "00000", "00000", "11111"],
        '/' => ["00001", "00010", "00010", "00100", "01000", "01000", "10000"],
        ':' => ["00000", "01100", "01100", "00000", "01100", "01100", "00000"],
        '=' => ["00000", "00000", "11111", "00000", "11111", "00000", "00000"],
        ' ' => ["00000", "00000", "00000", "00000", "00000", "00000", "00000"],
        _ => ["11111", "10001", "10001", "10001", "10001", "10001", "11111"],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Arch;
    use crate::pipeline::source::testutil::toy_task;
    use ndarray::Array2;

    #[test]
    fn trace_loader_skips_malformed_rows_with_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        std::fs::write(
            &path,
            "iter,loss\n0,2.0\n1,oops\n2\n3,1.0\n4,NaN\n",
        )
        .unwrap();
        let (points, skipped) = load_trace_csv(&path, "iter", "loss").unwrap();
        assert_eq!(points, vec![(0.0, 2.0), (3.0, 1.0)]);
        assert_eq!(skipped, 3);

        let err = load_trace_csv(&path, "iter", "acc").unwrap_err();
        assert!(err.to_string().contains("column 'acc' not found"));
    }

    #[test]
    fn empty_trace_still_plots_and_reports_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "iter,loss\n").unwrap();
        let out = dir.path().join("curve.png");
        let emit = emit_training_curves(
            &[("run-a".to_string(), path)],
            "iter",
            "loss",
            &out,
        )
        .unwrap();
        assert_eq!(emit.empty_series, 1);
        assert_eq!(emit.skipped_rows, 0);
        assert!(out.exists());
        let img = image::open(&out).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (640, 480));
    }

    #[test]
    fn legend_matches_run_names_for_overlaid_traces() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, "iter,loss\n0,1.0\n1,0.5\n").unwrap();
        std::fs::write(&b, "iter,loss\n0,2.0\n1,1.5\n").unwrap();
        let out = dir.path().join("overlay.png");
        let emit = emit_training_curves(
            &[("gan-c3".to_string(), a), ("wgan-c5".to_string(), b)],
            "iter",
            "loss",
            &out,
        )
        .unwrap();
        assert_eq!(emit.legend, vec!["gan-c3".to_string(), "wgan-c5".to_string()]);
        assert!(out.exists());
    }

    #[test]
    fn monotone_trace_matches_golden_file() {
        let points: Vec<(f64, f64)> = (0..40)
            .map(|i| (i as f64, 10.0 - 0.2 * i as f64))
            .collect();
        let series = [Series {
            name: "stage1".to_string(),
            points,
        }];
        let img = render_curve_plot(&series, "iter", "error");
        let golden_path = concat!(env!("CARGO_MANIFEST_DIR"), "/testdata/golden_curve.png");
        if std::env::var_os("GOLDEN_REWRITE").is_some() {
            save_png(&img, Path::new(golden_path)).unwrap();
        }
        let golden = image::open(golden_path)
            .expect("golden plot missing; run with GOLDEN_REWRITE=1 to create it")
            .to_rgb8();
        assert_eq!(golden.dimensions(), img.dimensions());
        assert!(
            golden.pixels().eq(img.pixels()),
            "rendered monotone curve differs from golden file"
        );
    }

    #[test]
    fn arrow_projection_follows_image_axes() {
        let center = (100.0, 100.0);
        // Positive gx points right (+x in pixels).
        let [shaft, _, _] = arrow_segments(center, [0.8, 0.0, 0.6], 50.0).unwrap();
        assert!((shaft.1 .0 - 150.0).abs() < 1e-9);
        assert!((shaft.1 .1 - 100.0).abs() < 1e-9);
        // Positive gy points up, i.e. toward smaller row indices.
        let [shaft, _, _] = arrow_segments(center, [0.0, 0.8, 0.6], 50.0).unwrap();
        assert!((shaft.1 .0 - 100.0).abs() < 1e-9);
        assert!((shaft.1 .1 - 50.0).abs() < 1e-9);
        // No in-plane component: no arrow.
        assert!(arrow_segments(center, [0.0, 0.0, 1.0], 50.0).is_none());
    }

    #[test]
    fn identical_gazes_paint_identical_pixels() {
        let g = [0.5, 0.3, 0.8];
        let a = arrow_segments((60.0, 60.0), g, 40.0).unwrap();
        let b = arrow_segments((60.0, 60.0), g, 40.0).unwrap();
        assert_eq!(a, b);

        // When truth, pre and post coincide, the later arrows overdraw the
        // earlier ones exactly: only the last color remains.
        let image = Array2::<Elem>::zeros((19, 25));
        let img = render_overlay(image.view(), g, g, g);
        let mut truth_px = 0usize;
        let mut pre_px = 0usize;
        let mut post_px = 0usize;
        for p in img.pixels() {
            if *p == TRUTH_COLOR {
                truth_px += 1;
            } else if *p == PRE_COLOR {
                pre_px += 1;
            } else if *p == POST_COLOR {
                post_px += 1;
            }
        }
        assert_eq!((truth_px, pre_px), (0, 0));
        assert!(post_px > 0);

        // Distinct gazes leave all three colors visible.
        let img = render_overlay(image.view(), [0.5, 0.0, 0.8], [-0.5, 0.0, 0.8], [0.0, 0.5, 0.8]);
        assert!(img.pixels().any(|p| *p == TRUTH_COLOR));
        assert!(img.pixels().any(|p| *p == PRE_COLOR));
        assert!(img.pixels().any(|p| *p == POST_COLOR));
    }

    #[test]
    fn overlay_emission_writes_one_file_per_sample() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy_task(5, 3);
        let params = ParamStore::<Elem>::init(&Arch::tiny(), 1).unwrap();
        let files =
            emit_overlay_figure(&params, &params, &data, 4, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        for f in &files {
            assert!(f.exists(), "{} missing", f.display());
        }
        // Count capped by the dataset size.
        let files = emit_overlay_figure(&params, &params, &data, 99, dir.path()).unwrap();
        assert_eq!(files.len(), 5);
    }
}
