use crate::error::{Error, Result};

/// Binary per-pixel lane mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LaneMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl LaneMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "mask",
                format!("{height}×{width} needs {} pixels, got {}", height * width, data.len()),
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[bool] {
        &self.data
    }

    pub fn lane_pixels(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &LaneMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}
