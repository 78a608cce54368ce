//! Metric depth maps.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("depth map has {got} values, expected {width}x{height}")]
    SizeMismatch { width: u32, height: u32, got: usize },
    #[error("depth map value at ({x}, {y}) is negative or non-finite")]
    InvalidValue { x: u32, y: u32 },
}

/// Per-pixel depth along the optical axis in meters; `0` marks a missing
/// reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, DepthError> {
        if values.len() != width as usize * height as usize {
            return Err(DepthError::SizeMismatch {
                width,
                height,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(DepthError::InvalidValue {
                x: (i % width as usize) as u32,
                y: (i / width as usize) as u32,
            });
        }
        Ok(DepthMap { width, height, values })
    }

    /// A map holding `value` everywhere.
    pub fn constant(width: u32, height: u32, value: f32) -> Self {
        DepthMap {
            width,
            height,
            values: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.get(x, y) > 0.0
    }

    /// Whether this map covers the same field of view as a `width x height`
    /// image (identical aspect ratio).
    pub fn is_registered_to(&self, width: u32, height: u32) -> bool {
        self.width as u64 * height as u64 == self.height as u64 * width as u64
    }

    /// Depth at the pixel of this map under pixel `(x, y)` of a registered
    /// `width x height` raster.
    pub fn sample_for(&self, x: u32, y: u32, width: u32, height: u32) -> f32 {
        let dx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as u32).min(self.width - 1);
        let dy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as u32).min(self.height - 1);
        self.get(dx, dy)
    }
}
