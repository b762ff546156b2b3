//! Static PNG line charts for harness outputs. Self-contained: axes, tick
//! labels, legend, and series rendered with an embedded 5x7 bitmap font.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const WIDTH: u32 = 860;
const HEIGHT: u32 = 520;
const MARGIN_L: u32 = 80;
const MARGIN_R: u32 = 30;
const MARGIN_T: u32 = 50;
const MARGIN_B: u32 = 60;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const FG: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

pub const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
}

/// 5x7 glyphs, one u8 per row, low 5 bits used (MSB-left).
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        '@' => [0x0E, 0x11, 0x17, 0x15, 0x17, 0x10, 0x0E],
        '%' => [0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13],
        ' ' => [0; 7],
        _ => [0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F], // box for unknown
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.chars() {
        let g = glyph(c);
        for (row, bits) in g.iter().enumerate() {
            for col in 0..5 {
                if bits & (1 << (4 - col)) != 0 {
                    let px = cx + col as i64;
                    let py = y + row as i64;
                    if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height()
                    {
                        img.put_pixel(px as u32, py as u32, color);
                    }
                }
            }
        }
        cx += 6;
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
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

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let span = hi - lo;
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    } * mag;
    let start = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut v = start;
    while v <= hi + step * 1e-9 {
        out.push(v);
        v += step;
    }
    out
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1000.0 {
        format!("{v:.0}")
    } else if a >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

/// Render a line chart to a PNG file.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<()> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::EmptyInput("no points to plot".into()));
    }
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BG);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let pad = (y_hi - y_lo) * 0.05;
    y_lo -= pad;
    y_hi += pad;

    let plot_w = (WIDTH - MARGIN_L - MARGIN_R) as f64;
    let plot_h = (HEIGHT - MARGIN_T - MARGIN_B) as f64;
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let px = MARGIN_L as f64 + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let py = (HEIGHT - MARGIN_B) as f64 - (y - y_lo) / (y_hi - y_lo) * plot_h;
        (px.round() as i64, py.round() as i64)
    };

    // gridlines and ticks
    for tx in nice_ticks(x_lo, x_hi, 8) {
        let (px, _) = to_px(tx, y_lo);
        draw_line(&mut img, px, MARGIN_T as i64, px, (HEIGHT - MARGIN_B) as i64, GRID);
        let label = format_tick(tx);
        draw_text(
            &mut img,
            px - (label.len() as i64 * 6) / 2,
            (HEIGHT - MARGIN_B + 8) as i64,
            &label,
            FG,
        );
    }
    for ty in nice_ticks(y_lo, y_hi, 6) {
        let (_, py) = to_px(x_lo, ty);
        draw_line(&mut img, MARGIN_L as i64, py, (WIDTH - MARGIN_R) as i64, py, GRID);
        let label = format_tick(ty);
        draw_text(
            &mut img,
            MARGIN_L as i64 - 8 - label.len() as i64 * 6,
            py - 3,
            &label,
            FG,
        );
    }
    // axes
    draw_line(
        &mut img,
        MARGIN_L as i64,
        MARGIN_T as i64,
        MARGIN_L as i64,
        (HEIGHT - MARGIN_B) as i64,
        FG,
    );
    draw_line(
        &mut img,
        MARGIN_L as i64,
        (HEIGHT - MARGIN_B) as i64,
        (WIDTH - MARGIN_R) as i64,
        (HEIGHT - MARGIN_B) as i64,
        FG,
    );
    draw_text(&mut img, MARGIN_L as i64, 18, title, FG);
    draw_text(
        &mut img,
        (WIDTH / 2) as i64 - x_label.len() as i64 * 3,
        (HEIGHT - 22) as i64,
        x_label,
        FG,
    );
    draw_text(&mut img, 8, (MARGIN_T - 18) as i64, y_label, FG);

    // series
    for (si, s) in series.iter().enumerate() {
        let color = Rgb(s.color);
        let mut prev: Option<(i64, i64)> = None;
        for &(x, y) in &s.points {
            let p = to_px(x, y);
            if let Some(q) = prev {
                draw_line(&mut img, q.0, q.1, p.0, p.1, color);
            }
            // point marker
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    let (mx, my) = (p.0 + dx, p.1 + dy);
                    if mx >= 0 && my >= 0 && (mx as u32) < WIDTH && (my as u32) < HEIGHT {
                        img.put_pixel(mx as u32, my as u32, color);
                    }
                }
            }
            prev = Some(p);
        }
        // legend
        let ly = MARGIN_T as i64 + 14 * si as i64;
        let lx = (WIDTH - MARGIN_R) as i64 - 150;
        for dx in 0..10 {
            for dy in 0..8 {
                let (mx, my) = (lx + dx, ly + dy);
                if mx >= 0 && my >= 0 && (mx as u32) < WIDTH && (my as u32) < HEIGHT {
                    img.put_pixel(mx as u32, my as u32, color);
                }
            }
        }
        draw_text(&mut img, lx + 14, ly, &s.label, FG);
    }

    img.save(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot write plot {}: {e}", path.display())))?;
    Ok(())
}
