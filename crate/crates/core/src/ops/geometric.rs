//! Geometric transforms. Nearest-neighbour inverse mapping everywhere except
//! the bilinear crop; pixels mapped from outside the frame become black.

use crate::image::{Image, Rgb};

pub const FILL: Rgb = [0, 0, 0];

pub fn flip_lr(img: &Image) -> Image {
    let w = img.width();
    img.remap(|x, y| img.get(w - 1 - x, y))
}

pub fn flip_ud(img: &Image) -> Image {
    let h = img.height();
    img.remap(|x, y| img.get(x, h - 1 - y))
}

#[inline]
fn center(img: &Image) -> (f64, f64) {
    ((img.width() as f64 - 1.0) / 2.0, (img.height() as f64 - 1.0) / 2.0)
}

#[inline]
fn sample_nearest(img: &Image, sx: f64, sy: f64) -> Rgb {
    img.get_signed(sx.round() as i64, sy.round() as i64).unwrap_or(FILL)
}

/// Rotates counter-clockwise (as displayed, y pointing down) about the
/// image centre by `degrees`.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    let (cx, cy) = center(img);
    let (sin, cos) = degrees.to_radians().sin_cos();
    img.remap(|x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        sample_nearest(img, cos * dx - sin * dy + cx, sin * dx + cos * dy + cy)
    })
}

/// Horizontal shear: row `y` is displaced by `factor * (y - cy)`.
pub fn shear_x(img: &Image, factor: f64) -> Image {
    let (_, cy) = center(img);
    img.remap(|x, y| sample_nearest(img, x as f64 + factor * (y as f64 - cy), y as f64))
}

/// Vertical shear: column `x` is displaced by `factor * (x - cx)`.
pub fn shear_y(img: &Image, factor: f64) -> Image {
    let (cx, _) = center(img);
    img.remap(|x, y| sample_nearest(img, x as f64, y as f64 + factor * (x as f64 - cx)))
}

/// Moves content right by `dx` pixels (left when negative).
pub fn translate_x(img: &Image, dx: i64) -> Image {
    img.remap(|x, y| img.get_signed(x as i64 - dx, y as i64).unwrap_or(FILL))
}

/// Moves content down by `dy` pixels (up when negative).
pub fn translate_y(img: &Image, dy: i64) -> Image {
    img.remap(|x, y| img.get_signed(x as i64, y as i64 - dy).unwrap_or(FILL))
}

/// Removes `margin` pixels from each side and scales the remainder back to
/// the original size with bilinear interpolation. The margin is clamped so
/// at least one row and column survive.
pub fn crop_bilinear(img: &Image, margin: usize) -> Image {
    let (w, h) = (img.width(), img.height());
    let mx = margin.min((w - 1) / 2);
    let my = margin.min((h - 1) / 2);
    img.resize_region_bilinear((mx, my, w - 2 * mx, h - 2 * my), w, h)
}
