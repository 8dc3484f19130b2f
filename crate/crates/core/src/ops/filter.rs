//! Local neighbourhood filters and cutout.

use crate::image::{Image, Rgb};

pub const CUTOUT_FILL: Rgb = [128, 128, 128];

/// 3x3 integer convolution with edge replication and a kernel summing to 9.
fn convolve9(img: &Image, kernel: [[u32; 3]; 3]) -> Image {
    img.remap(|x, y| {
        let mut acc = [0u32; 3];
        for (ky, row) in kernel.iter().enumerate() {
            for (kx, &weight) in row.iter().enumerate() {
                if weight == 0 {
                    continue;
                }
                let p = img.get_clamped(x as i64 + kx as i64 - 1, y as i64 + ky as i64 - 1);
                for c in 0..3 {
                    acc[c] += weight * p[c] as u32;
                }
            }
        }
        acc.map(|a| ((a + 4) / 9) as u8)
    })
}

/// 3x3 box filter.
pub fn blur(img: &Image) -> Image {
    convolve9(img, [[1, 1, 1], [1, 1, 1], [1, 1, 1]])
}

/// Low-pass: centre weight 5, 4-neighbours 1, corners 0.
pub fn smooth(img: &Image) -> Image {
    convolve9(img, [[0, 1, 0], [1, 5, 1], [0, 1, 0]])
}

/// Half-open pixel rectangle `(x0, y0, x1, y1)` of a `side`-wide square
/// centred on `(cx, cy)`, clipped to the frame.
pub fn cutout_region(width: usize, height: usize, cx: usize, cy: usize, side: usize) -> (usize, usize, usize, usize) {
    let half = side / 2;
    let x0 = cx.saturating_sub(half);
    let y0 = cy.saturating_sub(half);
    let x1 = (cx + side - half).min(width);
    let y1 = (cy + side - half).min(height);
    (x0, y0, x1, y1)
}

pub fn cutout(img: &Image, cx: usize, cy: usize, side: usize) -> Image {
    let (x0, y0, x1, y1) = cutout_region(img.width(), img.height(), cx, cy, side);
    let mut out = img.clone();
    for y in y0..y1 {
        for x in x0..x1 {
            out.set(x, y, CUTOUT_FILL);
        }
    }
    out
}
