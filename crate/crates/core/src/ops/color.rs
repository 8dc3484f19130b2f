//! Point-wise and histogram colour transforms. Histogram operations work on
//! each channel independently.

use crate::image::{clamp_u8, Image, Rgb};

pub fn invert(img: &Image) -> Image {
    img.map_channels(|v| 255 - v)
}

/// Keeps the `bits` most significant bits of every channel.
pub fn posterize(img: &Image, bits: u8) -> Image {
    let bits = bits.min(8);
    let mask = if bits == 0 { 0 } else { 0xFFu8 << (8 - bits) };
    img.map_channels(|v| v & mask)
}

/// Inverts every channel value at or above `threshold`; 256 leaves the image
/// untouched, 0 inverts everything.
pub fn solarize(img: &Image, threshold: u16) -> Image {
    img.map_channels(|v| if u16::from(v) >= threshold { 255 - v } else { v })
}

fn channel_histograms(img: &Image) -> [[u32; 256]; 3] {
    let mut hist = [[0u32; 256]; 3];
    for p in img.pixels() {
        for c in 0..3 {
            hist[c][p[c] as usize] += 1;
        }
    }
    hist
}

fn apply_luts(img: &Image, luts: &[[u8; 256]; 3]) -> Image {
    let pixels = img
        .pixels()
        .iter()
        .map(|p| [luts[0][p[0] as usize], luts[1][p[1] as usize], luts[2][p[2] as usize]])
        .collect();
    Image::new(img.width(), img.height(), pixels).expect("dimensions unchanged")
}

fn identity_lut() -> [u8; 256] {
    std::array::from_fn(|i| i as u8)
}

/// Stretches each channel so its darkest value maps to 0 and its brightest to
/// 255. Constant channels are left as they are.
pub fn auto_contrast(img: &Image) -> Image {
    let hist = channel_histograms(img);
    let luts = std::array::from_fn(|c| {
        let lo = hist[c].iter().position(|&n| n > 0).unwrap_or(0);
        let hi = hist[c].iter().rposition(|&n| n > 0).unwrap_or(255);
        if hi <= lo {
            return identity_lut();
        }
        let span = hi - lo;
        std::array::from_fn(|v| {
            let v = v.clamp(lo, hi);
            (((v - lo) * 255 + span / 2) / span) as u8
        })
    });
    apply_luts(img, &luts)
}

/// Integer cumulative-histogram equalisation per channel.
pub fn equalize(img: &Image) -> Image {
    let hist = channel_histograms(img);
    let luts = std::array::from_fn(|c| {
        let h = &hist[c];
        let nonzero: Vec<usize> = (0..256).filter(|&i| h[i] > 0).collect();
        if nonzero.len() <= 1 {
            return identity_lut();
        }
        let last = h[*nonzero.last().unwrap()];
        let total: u32 = h.iter().sum();
        let step = (total - last) / 255;
        if step == 0 {
            return identity_lut();
        }
        let mut lut = [0u8; 256];
        let mut n = step / 2;
        for (i, slot) in lut.iter_mut().enumerate() {
            *slot = (n / step).min(255) as u8;
            n += h[i];
        }
        lut
    });
    apply_luts(img, &luts)
}

#[inline]
fn luma(p: Rgb) -> f64 {
    (299.0 * p[0] as f64 + 587.0 * p[1] as f64 + 114.0 * p[2] as f64) / 1000.0
}

/// `degenerate + factor * (img - degenerate)`, saturated.
fn blend(degenerate: &Image, img: &Image, factor: f64) -> Image {
    let pixels = degenerate
        .pixels()
        .iter()
        .zip(img.pixels())
        .map(|(d, p)| std::array::from_fn(|c| clamp_u8(d[c] as f64 + factor * (p[c] as f64 - d[c] as f64))))
        .collect();
    Image::new(img.width(), img.height(), pixels).expect("dimensions unchanged")
}

/// Saturation: blends towards the grayscale version.
pub fn color(img: &Image, factor: f64) -> Image {
    let gray = img.remap(|x, y| [clamp_u8(luma(img.get(x, y))); 3]);
    blend(&gray, img, factor)
}

/// Blends towards a flat image at the mean luma.
pub fn contrast(img: &Image, factor: f64) -> Image {
    let sum: f64 = img.pixels().iter().map(|p| clamp_u8(luma(*p)) as f64).sum();
    let mean = clamp_u8(sum / img.pixels().len() as f64);
    blend(&Image::filled(img.width(), img.height(), [mean; 3]), img, factor)
}

/// Blends towards black.
pub fn brightness(img: &Image, factor: f64) -> Image {
    blend(&Image::filled(img.width(), img.height(), [0; 3]), img, factor)
}

/// Blends towards a 3x3 smoothed copy (centre weight 5, the rest 1); border
/// pixels of the smoothed copy are kept from the source.
pub fn sharpness(img: &Image, factor: f64) -> Image {
    let (w, h) = (img.width(), img.height());
    let smoothed = img.remap(|x, y| {
        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
            return img.get(x, y);
        }
        let mut acc = [0u32; 3];
        for ky in 0..3 {
            for kx in 0..3 {
                let weight = if kx == 1 && ky == 1 { 5 } else { 1 };
                let p = img.get(x + kx - 1, y + ky - 1);
                for c in 0..3 {
                    acc[c] += weight * p[c] as u32;
                }
            }
        }
        acc.map(|a| ((a + 6) / 13) as u8)
    });
    blend(&smoothed, img, factor)
}
