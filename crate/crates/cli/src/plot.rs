//! Minimal raster rendering of validation curves.

use std::path::Path;

use image::{Rgb, RgbImage};

use cordseg::metrics::MeanStd;

use crate::commands::train::CurvePoint;
use crate::error::{CliError, Result};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 360;
const MARGIN: u32 = 24;

const GM: Rgb<u8> = Rgb([200, 30, 30]);
const WM: Rgb<u8> = Rgb([30, 150, 30]);
const CE: Rgb<u8> = Rgb([40, 60, 200]);

fn lighten(c: Rgb<u8>) -> Rgb<u8> {
    Rgb(c.0.map(|v| v / 4 + 191))
}

/// GM DSC (red), WM DSC (green) and cross-entropy (blue, clipped to 1)
/// against iteration on a [0, 1] axis, each with a ± one std band.
pub fn render_curves(points: &[CurvePoint]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (x0, x1) = (MARGIN, WIDTH - MARGIN);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    for x in x0..=x1 {
        img.put_pixel(x, y0, Rgb([0, 0, 0]));
    }
    for y in y1..=y0 {
        img.put_pixel(x0, y, Rgb([0, 0, 0]));
    }
    let max_it = points.iter().map(|p| p.iteration).max().unwrap_or(1).max(1) as f64;
    let px = |it: u64| x0 as f64 + (x1 - x0) as f64 * it as f64 / max_it;
    let py = |v: f64| y0 as f64 - (y0 - y1) as f64 * v.clamp(0.0, 1.0);
    let series: [(fn(&CurvePoint) -> MeanStd, Rgb<u8>); 3] = [
        (|p| p.gm_dsc, GM),
        (|p| p.wm_dsc, WM),
        (|p| p.cross_entropy, CE),
    ];
    for (get, color) in series {
        for p in points {
            let m = get(p);
            let x = px(p.iteration).round() as u32;
            let (lo, hi) = (py(m.mean + m.std).round() as u32, py(m.mean - m.std).round() as u32);
            for y in lo..=hi {
                img.put_pixel(x, y, lighten(color));
            }
        }
    }
    for (get, color) in series {
        for w in points.windows(2) {
            let (a, b) = ((px(w[0].iteration), py(get(&w[0]).mean)), (px(w[1].iteration), py(get(&w[1]).mean)));
            let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
                img.put_pixel(x.round() as u32, y.round() as u32, color);
            }
        }
    }
    img
}

pub fn save_curves_png(path: &Path, points: &[CurvePoint]) -> Result<()> {
    render_curves(points)
        .save(path)
        .map_err(|e| CliError::Core(cordseg::Error::from(e)))
}
