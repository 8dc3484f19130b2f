use serde::Serialize;
use thiserror::Error;

use crate::image::Image;

/// Where an item came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    /// Generated from original item `source` with chain `chain` of the
    /// selection set.
    Augmented { source: usize, chain: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Item {
    pub image: Image,
    pub label: usize,
    pub provenance: Provenance,
}

impl Item {
    pub fn original(image: Image, label: usize) -> Self {
        Self { image, label, provenance: Provenance::Original }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("class count must be positive")]
    NoClasses,
    #[error("item {index} has label {label}, but class count is {class_count}")]
    LabelOutOfRange { index: usize, label: usize, class_count: usize },
    #[error("item {index} is {found_w}x{found_h}, expected {width}x{height}")]
    MixedSizes { index: usize, width: usize, height: usize, found_w: usize, found_h: usize },
}

/// Labelled images of one common size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDataset {
    items: Vec<Item>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(items: Vec<Item>, class_count: usize) -> Result<Self, DatasetError> {
        if class_count == 0 {
            return Err(DatasetError::NoClasses);
        }
        let first = items.first().ok_or(DatasetError::Empty)?;
        let (width, height) = (first.image.width(), first.image.height());
        for (index, item) in items.iter().enumerate() {
            if item.label >= class_count {
                return Err(DatasetError::LabelOutOfRange { index, label: item.label, class_count });
            }
            let (found_w, found_h) = (item.image.width(), item.image.height());
            if (found_w, found_h) != (width, height) {
                return Err(DatasetError::MixedSizes { index, width, height, found_w, found_h });
            }
        }
        Ok(Self { items, class_count })
    }

    /// Builds a dataset of original items from `(image, label)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Image, usize)>, class_count: usize) -> Result<Self, DatasetError> {
        Self::new(pairs.into_iter().map(|(img, label)| Item::original(img, label)).collect(), class_count)
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn into_items(self) -> Vec<Item> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// `(width, height)` shared by every image.
    pub fn image_size(&self) -> (usize, usize) {
        let img = &self.items[0].image;
        (img.width(), img.height())
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.class_count];
        for item in &self.items {
            hist[item.label] += 1;
        }
        hist
    }

    /// Number of classes with at least one item.
    pub fn classes_present(&self) -> usize {
        self.class_histogram().iter().filter(|&&n| n > 0).count()
    }

    pub fn originals(&self) -> impl Iterator<Item = &Item> {
        self.items.iter().filter(|i| i.provenance == Provenance::Original)
    }
}
