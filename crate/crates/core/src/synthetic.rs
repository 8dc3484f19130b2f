//! Procedural datasets for tests, demos and offline runs.

use rand::Rng;

use crate::dataset::LabeledDataset;
use crate::image::{clamp_u8, Image};
use crate::ops::geometric::flip_lr;
use crate::rng::{derive_tagged, stream};

/// Two-class task with a planted left-right shift between train and test.
///
/// Each image is dim noise with one bright square. The class is the blob's
/// vertical half (0 = top, 1 = bottom). Training blobs always sit in the
/// left third; test images are generated the same way and then mirrored,
/// so their blobs sit in the right third. A learner only generalises if its
/// training data is mirrored too.
pub fn mirrored_blob_task(n_train: usize, n_test: usize, size: usize, seed: u64) -> (LabeledDataset, LabeledDataset) {
    assert!(size >= 16, "blob task needs at least 16x16 images");
    let mut rng = stream(derive_tagged(seed, "blob-task"));
    let blob = size / 5;
    let make = |rng: &mut crate::rng::StreamRng, label: usize| {
        let bx = rng.gen_range(0..(size / 3 - blob) as u32) as usize;
        let half = size / 2;
        let by = rng.gen_range(0..(half - blob) as u32) as usize + label * half;
        let tint: [u8; 3] = [rng.gen_range(180..=255), rng.gen_range(180..=255), rng.gen_range(180..=255)];
        let noise: Vec<[u8; 3]> = (0..size * size).map(|_| [rng.gen_range(0..60), rng.gen_range(0..60), rng.gen_range(0..60)]).collect();
        Image::from_fn(size, size, |x, y| {
            if (bx..bx + blob).contains(&x) && (by..by + blob).contains(&y) {
                tint
            } else {
                noise[y * size + x]
            }
        })
    };
    let train = (0..n_train).map(|i| (make(&mut rng, i % 2), i % 2)).collect::<Vec<_>>();
    let test = (0..n_test).map(|i| (flip_lr(&make(&mut rng, i % 2)), i % 2)).collect::<Vec<_>>();
    (
        LabeledDataset::from_pairs(train, 2).expect("valid train set"),
        LabeledDataset::from_pairs(test, 2).expect("valid test set"),
    )
}

/// Ten-class 32x32 natural-texture stand-in with the CIFAR-10 layout.
///
/// Class `c` is an oriented colour grating (orientation, frequency and
/// palette fixed per class) with random phase, contrast, brightness and
/// per-pixel noise, plus a random occluding patch.
pub fn textured_classes(n: usize, seed: u64) -> LabeledDataset {
    const CLASSES: usize = 10;
    const SIZE: usize = 32;
    let mut rng = stream(derive_tagged(seed, "textures"));
    let items = (0..n)
        .map(|i| {
            let c = i % CLASSES;
            let angle = c as f64 * std::f64::consts::PI / CLASSES as f64;
            let freq = 0.25 + 0.08 * (c % 4) as f64;
            let palette = [
                0.35 + 0.06 * c as f64,
                0.9 - 0.07 * c as f64,
                0.3 + 0.05 * ((c * 3) % 10) as f64,
            ];
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let contrast = rng.gen_range(30.0..80.0);
            let bright = rng.gen_range(70.0..170.0);
            let (px, py, ps) = (rng.gen_range(0..SIZE as u32) as usize, rng.gen_range(0..SIZE as u32) as usize, rng.gen_range(4..12u32) as usize);
            let patch: [u8; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let (sin, cos) = angle.sin_cos();
            let noise: Vec<f64> = (0..SIZE * SIZE * 3).map(|_| rng.gen_range(-25.0..25.0)).collect();
            let img = Image::from_fn(SIZE, SIZE, |x, y| {
                if (px..px + ps).contains(&x) && (py..py + ps).contains(&y) {
                    return patch;
                }
                let t = (freq * (x as f64 * cos + y as f64 * sin) + phase).sin();
                let k = (y * SIZE + x) * 3;
                std::array::from_fn(|ch| clamp_u8(bright * palette[ch] * 1.4 + contrast * t + noise[k + ch]))
            });
            (img, c)
        })
        .collect::<Vec<_>>();
    LabeledDataset::from_pairs(items, CLASSES).expect("valid dataset")
}
