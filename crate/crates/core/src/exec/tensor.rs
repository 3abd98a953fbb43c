use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NodeId;

/// Dense `(channels, height, width)` tensor, row-major: element
/// `(c, y, x)` lives at `(c * height + y) * width + x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorValue {
    pub shape: (usize, usize, usize),
    pub data: Vec<f64>,
}

impl TensorValue {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            shape: (channels, height, width),
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn new(shape: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.0 * shape.1 * shape.2 {
            return Err(Error::Parameter(format!(
                "tensor of shape {shape:?} needs {} values, got {}",
                shape.0 * shape.1 * shape.2,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn channels(&self) -> usize {
        self.shape.0
    }

    pub fn height(&self) -> usize {
        self.shape.1
    }

    pub fn width(&self) -> usize {
        self.shape.2
    }

    pub fn plane(&self) -> usize {
        self.shape.1 * self.shape.2
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape.1 + y) * self.shape.2 + x]
    }

    pub fn check_finite(&self, node: NodeId) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(node))
        }
    }

    pub(crate) fn add_scaled(&mut self, other: &TensorValue, scale: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub(crate) fn dot(&self, other: &TensorValue) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}
