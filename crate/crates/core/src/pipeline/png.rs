//! PNG import/export for single channels, label maps and contour overlays.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::types::{LabelMap, MultiChannelSlice, BACKGROUND, GM};
use crate::error::{Error, Result};
use crate::metrics::boundary;

const AUTO_GM: [u8; 3] = [230, 25, 25];
const AUTO_CORD: [u8; 3] = [25, 200, 25];
const REF_GM: [u8; 3] = [40, 70, 240];
const REF_CORD: [u8; 3] = [220, 40, 220];

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

/// Min-max scaled 8-bit rendering of one channel.
pub fn channel_to_gray(slice: &MultiChannelSlice, channel: usize) -> Result<GrayImage> {
    if channel >= slice.channels {
        return Err(Error::invalid(format!(
            "channel {channel} out of range for {} channels",
            slice.channels
        )));
    }
    let plane = slice.channel(channel);
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    Ok(ImageBuffer::from_fn(slice.width as u32, slice.height as u32, |x, y| {
        let v = plane[y as usize * slice.width + x as usize];
        Luma([((v - lo) / range * 255.0).round() as u8])
    }))
}

pub fn save_channel_png(path: impl AsRef<Path>, slice: &MultiChannelSlice, channel: usize) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    channel_to_gray(slice, channel)?.save(path)?;
    Ok(())
}

/// Reads any PNG as a one-channel slice of luma values in `[0, 255]`.
pub fn load_png(path: impl AsRef<Path>, spacing_mm: (f64, f64)) -> Result<MultiChannelSlice> {
    let img = image::open(path.as_ref())?.to_luma8();
    let (w, h) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0[0] as f64).collect();
    MultiChannelSlice::new(h as usize, w as usize, 1, pixels, spacing_mm, Default::default())
}

/// Palette rendering: background black, GM light gray, WM white.
pub fn save_labels_png(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let img: GrayImage = ImageBuffer::from_fn(labels.width as u32, labels.height as u32, |x, y| {
        Luma([match labels.at(y as usize, x as usize) {
            BACKGROUND => 0,
            GM => 160,
            _ => 255,
        }])
    });
    img.save(path)?;
    Ok(())
}

fn paint(img: &mut RgbImage, labels: &LabelMap, gm: [u8; 3], cord: [u8; 3]) {
    let (h, w) = (labels.height, labels.width);
    let cord_mask: Vec<bool> = labels.labels.iter().map(|&l| l != BACKGROUND).collect();
    for (mask, colour) in [(cord_mask, cord), (labels.mask(GM), gm)] {
        for (i, on) in boundary(&mask, h, w).into_iter().enumerate() {
            if on {
                img.put_pixel((i % w) as u32, (i / w) as u32, Rgb(colour));
            }
        }
    }
}

/// Channel `channel` in gray with automatic GM (red) and cord (green)
/// contours, and reference GM (blue) and cord (magenta) contours.
pub fn overlay(
    slice: &MultiChannelSlice,
    channel: usize,
    auto: &LabelMap,
    reference: Option<&LabelMap>,
) -> Result<RgbImage> {
    let gray = channel_to_gray(slice, channel)?;
    for l in std::iter::once(auto).chain(reference) {
        if l.height != slice.height || l.width != slice.width {
            return Err(Error::ShapeMismatch {
                op: "overlay",
                lhs: vec![slice.height, slice.width],
                rhs: vec![l.height, l.width],
            });
        }
    }
    let mut img: RgbImage = ImageBuffer::from_fn(gray.width(), gray.height(), |x, y| {
        let v = gray.get_pixel(x, y).0[0];
        Rgb([v, v, v])
    });
    if let Some(r) = reference {
        paint(&mut img, r, REF_GM, REF_CORD);
    }
    paint(&mut img, auto, AUTO_GM, AUTO_CORD);
    Ok(img)
}

pub fn save_overlay_png(
    path: impl AsRef<Path>,
    slice: &MultiChannelSlice,
    channel: usize,
    auto: &LabelMap,
    reference: Option<&LabelMap>,
) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    overlay(slice, channel, auto, reference)?.save(path)?;
    Ok(())
}
