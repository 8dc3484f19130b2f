use std::fmt;

use thiserror::Error;

/// One RGB pixel, 8 bits per channel.
pub type Rgb = [u8; 3];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image has {actual} pixels, expected {width}x{height} = {expected}")]
    PixelCount { width: usize, height: usize, expected: usize, actual: usize },
    #[error("image dimensions must be nonzero, got {width}x{height}")]
    Empty { width: usize, height: usize },
}

/// Row-major 8-bit RGB raster.
///
/// The pixel buffer always holds exactly `width * height` entries; the
/// constructors enforce it and no public API can break it.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty { width, height });
        }
        let expected = width * height;
        if pixels.len() != expected {
            return Err(ImageError::PixelCount { width, height, expected, actual: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        Self { width, height, pixels: vec![color; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: Rgb) {
        self.pixels[y * self.width + x] = px;
    }

    /// Pixel at signed coordinates, or `None` outside the frame.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> Option<Rgb> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.get(x as usize, y as usize))
        }
    }

    /// Pixel with coordinates clamped to the frame (edge replication).
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> Rgb {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.get(x, y)
    }

    pub fn map_channels(&self, mut f: impl FnMut(u8) -> u8) -> Self {
        let pixels = self.pixels.iter().map(|p| [f(p[0]), f(p[1]), f(p[2])]).collect();
        Self { width: self.width, height: self.height, pixels }
    }

    /// Same dimensions, every pixel produced by `f(x, y)`.
    pub fn remap(&self, f: impl FnMut(usize, usize) -> Rgb) -> Self {
        Self::from_fn(self.width, self.height, f)
    }

    /// Bilinear resample of the sub-rectangle `[x0, x0+w) x [y0, y0+h)` to
    /// `out_w x out_h`, pixel-centre aligned with edge clamping.
    pub fn resize_region_bilinear(
        &self,
        (x0, y0, w, h): (usize, usize, usize, usize),
        out_w: usize,
        out_h: usize,
    ) -> Self {
        assert!(w > 0 && h > 0 && x0 + w <= self.width && y0 + h <= self.height);
        let sx = w as f64 / out_w as f64;
        let sy = h as f64 / out_h as f64;
        Self::from_fn(out_w, out_h, |ox, oy| {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - ix as f64, fy - iy as f64);
            let ix1 = (ix + 1).min(w - 1);
            let iy1 = (iy + 1).min(h - 1);
            let p00 = self.get(x0 + ix, y0 + iy);
            let p10 = self.get(x0 + ix1, y0 + iy);
            let p01 = self.get(x0 + ix, y0 + iy1);
            let p11 = self.get(x0 + ix1, y0 + iy1);
            let mut out = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
                let bot = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
                out[c] = clamp_u8(top * (1.0 - ty) + bot * ty);
            }
            out
        })
    }

    pub fn resize_bilinear(&self, out_w: usize, out_h: usize) -> Self {
        self.resize_region_bilinear((0, 0, self.width, self.height), out_w, out_h)
    }

    /// True when every pixel has equal R, G and B.
    pub fn is_gray(&self) -> bool {
        self.pixels.iter().all(|p| p[0] == p[1] && p[1] == p[2])
    }
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

/// Rounds half away from zero and saturates to `[0, 255]`.
#[inline]
pub fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
