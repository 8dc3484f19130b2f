//! The twenty augmentation techniques and their discrete magnitude scale.
//!
//! Every transform is a pure function of `(image, technique, level, rng)`.
//! Randomness (direction signs, cutout placement, the application coin flip)
//! comes only from the caller's stream, so a seeded stream reproduces the
//! output bit for bit.

pub mod color;
pub mod filter;
pub mod geometric;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::policy::{Policy, PolicyChain};

/// Augmentation technique, in fixed table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Technique {
    FlipLR,
    FlipUD,
    AutoContrast,
    Equalize,
    Invert,
    Rotate,
    Posterize,
    CropBilinear,
    Solarize,
    Color,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Cutout,
    Blur,
    Smooth,
}

impl Technique {
    pub const COUNT: usize = 20;

    pub const ALL: [Technique; Technique::COUNT] = [
        Technique::FlipLR,
        Technique::FlipUD,
        Technique::AutoContrast,
        Technique::Equalize,
        Technique::Invert,
        Technique::Rotate,
        Technique::Posterize,
        Technique::CropBilinear,
        Technique::Solarize,
        Technique::Color,
        Technique::Contrast,
        Technique::Brightness,
        Technique::Sharpness,
        Technique::ShearX,
        Technique::ShearY,
        Technique::TranslateX,
        Technique::TranslateY,
        Technique::Cutout,
        Technique::Blur,
        Technique::Smooth,
    ];

    /// Zero-based position in the table order; also the tie-break rank.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Technique::FlipLR => "FlipLR",
            Technique::FlipUD => "FlipUD",
            Technique::AutoContrast => "AutoContrast",
            Technique::Equalize => "Equalize",
            Technique::Invert => "Invert",
            Technique::Rotate => "Rotate",
            Technique::Posterize => "Posterize",
            Technique::CropBilinear => "CropBilinear",
            Technique::Solarize => "Solarize",
            Technique::Color => "Color",
            Technique::Contrast => "Contrast",
            Technique::Brightness => "Brightness",
            Technique::Sharpness => "Sharpness",
            Technique::ShearX => "ShearX",
            Technique::ShearY => "ShearY",
            Technique::TranslateX => "TranslateX",
            Technique::TranslateY => "TranslateY",
            Technique::Cutout => "Cutout",
            Technique::Blur => "Blur",
            Technique::Smooth => "Smooth",
        }
    }

    /// Techniques whose output does not depend on the magnitude level.
    pub fn is_parameterless(self) -> bool {
        matches!(
            self,
            Technique::FlipLR
                | Technique::FlipUD
                | Technique::AutoContrast
                | Technique::Equalize
                | Technique::Invert
                | Technique::Blur
                | Technique::Smooth
        )
    }

    /// Geometric techniques that resample with interpolation and therefore
    /// need at least a 2x2 image.
    pub fn needs_interpolation(self) -> bool {
        matches!(self, Technique::Rotate | Technique::ShearX | Technique::ShearY | Technique::CropBilinear)
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown technique {0:?}")]
pub struct UnknownTechnique(pub String);

impl FromStr for Technique {
    type Err = UnknownTechnique;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Technique::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| UnknownTechnique(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("magnitude level {0} outside [1, 10]")]
pub struct LevelOutOfRange(pub i64);

/// Discrete magnitude level in `[1, 10]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct MagnitudeLevel(u8);

impl MagnitudeLevel {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 10;

    pub fn new(level: u8) -> Result<Self, LevelOutOfRange> {
        Self::try_from(i64::from(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// All levels, lowest first.
    pub fn all() -> impl Iterator<Item = MagnitudeLevel> {
        (Self::MIN..=Self::MAX).map(MagnitudeLevel)
    }
}

impl TryFrom<i64> for MagnitudeLevel {
    type Error = LevelOutOfRange;

    fn try_from(v: i64) -> Result<Self, Self::Error> {
        if (i64::from(Self::MIN)..=i64::from(Self::MAX)).contains(&v) {
            Ok(MagnitudeLevel(v as u8))
        } else {
            Err(LevelOutOfRange(v))
        }
    }
}

impl From<MagnitudeLevel> for u8 {
    fn from(l: MagnitudeLevel) -> u8 {
        l.0
    }
}

impl fmt::Display for MagnitudeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Concrete transform parameter a magnitude level maps to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Param {
    /// The technique ignores the level.
    Unit,
    /// Rotation angle magnitude; the sign is drawn per application.
    Degrees(f64),
    /// Shear factor magnitude; the sign is drawn per application.
    Shear(f64),
    /// Translation offset, crop margin per side, or cutout side length.
    Pixels(usize),
    /// Most significant bits kept per channel.
    Bits(u8),
    /// Channel values at or above this are inverted.
    Threshold(u16),
    /// Enhancement blend factor; 1.0 is the identity.
    Factor(f64),
}

/// Maps a level to its transform parameter. All ranges are linear in the
/// level and sized for 32x32 inputs.
pub fn magnitude_params(technique: Technique, level: MagnitudeLevel) -> Param {
    let l = level.get() as usize;
    match technique {
        t if t.is_parameterless() => Param::Unit,
        Technique::Rotate => Param::Degrees((3 * l) as f64),
        Technique::ShearX | Technique::ShearY => Param::Shear((3 * l) as f64 / 100.0),
        Technique::TranslateX | Technique::TranslateY | Technique::CropBilinear => Param::Pixels(l),
        Technique::Cutout => Param::Pixels(2 * l),
        // 8 - round(4L/10); 4L/10 never lands on a half.
        Technique::Posterize => Param::Bits(8 - ((4 * l + 5) / 10) as u8),
        // 256 - round(25.6L) = 256 - floor((256L + 5) / 10)
        Technique::Solarize => Param::Threshold(256 - ((256 * l + 5) / 10) as u16),
        Technique::Color | Technique::Contrast | Technique::Brightness | Technique::Sharpness => {
            Param::Factor((10 + 18 * l) as f64 / 100.0)
        }
        _ => unreachable!("parameterless techniques handled above"),
    }
}

/// Output of a single technique application.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transformed {
    pub image: Image,
    /// Set when an interpolating geometric transform was skipped because the
    /// input is smaller than 2x2.
    pub degenerate: bool,
}

#[inline]
fn random_sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Applies one technique unconditionally. The input is never mutated.
pub fn apply_technique<R: Rng + ?Sized>(
    img: &Image,
    technique: Technique,
    level: MagnitudeLevel,
    rng: &mut R,
) -> Transformed {
    if technique.needs_interpolation() && (img.width() < 2 || img.height() < 2) {
        return Transformed { image: img.clone(), degenerate: true };
    }
    let param = magnitude_params(technique, level);
    let image = match (technique, param) {
        (Technique::FlipLR, _) => geometric::flip_lr(img),
        (Technique::FlipUD, _) => geometric::flip_ud(img),
        (Technique::AutoContrast, _) => color::auto_contrast(img),
        (Technique::Equalize, _) => color::equalize(img),
        (Technique::Invert, _) => color::invert(img),
        (Technique::Blur, _) => filter::blur(img),
        (Technique::Smooth, _) => filter::smooth(img),
        (Technique::Rotate, Param::Degrees(d)) => geometric::rotate(img, random_sign(rng) * d),
        (Technique::ShearX, Param::Shear(s)) => geometric::shear_x(img, random_sign(rng) * s),
        (Technique::ShearY, Param::Shear(s)) => geometric::shear_y(img, random_sign(rng) * s),
        (Technique::TranslateX, Param::Pixels(p)) => geometric::translate_x(img, random_sign(rng) as i64 * p as i64),
        (Technique::TranslateY, Param::Pixels(p)) => geometric::translate_y(img, random_sign(rng) as i64 * p as i64),
        (Technique::CropBilinear, Param::Pixels(p)) => geometric::crop_bilinear(img, p),
        (Technique::Posterize, Param::Bits(b)) => color::posterize(img, b),
        (Technique::Solarize, Param::Threshold(t)) => color::solarize(img, t),
        (Technique::Color, Param::Factor(f)) => color::color(img, f),
        (Technique::Contrast, Param::Factor(f)) => color::contrast(img, f),
        (Technique::Brightness, Param::Factor(f)) => color::brightness(img, f),
        (Technique::Sharpness, Param::Factor(f)) => color::sharpness(img, f),
        (Technique::Cutout, Param::Pixels(side)) => {
            let cx = rng.gen_range(0..img.width() as u32) as usize;
            let cy = rng.gen_range(0..img.height() as u32) as usize;
            filter::cutout(img, cx, cy, side)
        }
        (t, p) => unreachable!("{t} mapped to mismatched parameter {p:?}"),
    };
    Transformed { image, degenerate: false }
}

/// Applies the policy's technique with the policy's probability, consuming
/// exactly one uniform draw for the decision.
pub fn apply_policy<R: Rng + ?Sized>(img: &Image, policy: &Policy, rng: &mut R) -> Image {
    if rng.gen::<f64>() < policy.probability.value() {
        apply_technique(img, policy.technique, policy.level, rng).image
    } else {
        img.clone()
    }
}

/// Applies every policy of the chain in order. The empty chain is the
/// identity.
pub fn apply_chain<R: Rng + ?Sized>(img: &Image, chain: &PolicyChain, rng: &mut R) -> Image {
    chain.iter().fold(img.clone(), |acc, p| apply_policy(&acc, p, rng))
}
