use crate::error::{Error, Result};

/// Marks a pixel without a ground-truth label.
pub const UNLABELED: u8 = 255;

pub const STROMA: u8 = 0;
pub const BENIGN: u8 = 1;
pub const MALIGNANT: u8 = 2;
pub const PDCG: u8 = 3;

pub const CLASS_NAMES: [&str; 4] = ["stroma", "benign", "malignant", "pdcg"];

/// Per-pixel class indices, row-major, with [`UNLABELED`] as the sentinel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "label mask",
                format!("{width}x{height} mask needs {} bytes, got {}", width * height, data.len()),
            ));
        }
        Ok(LabelMask { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        LabelMask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn labeled_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != UNLABELED).count()
    }

    pub fn has_sentinel(&self) -> bool {
        self.data.contains(&UNLABELED)
    }

    /// Checks that every value is a class below `num_classes` or the sentinel.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .position(|&v| v != UNLABELED && v as usize >= num_classes)
        {
            Some(pixel) => Err(Error::InvalidLabel {
                label: self.data[pixel],
                pixel,
                num_classes,
            }),
            None => Ok(()),
        }
    }
}
