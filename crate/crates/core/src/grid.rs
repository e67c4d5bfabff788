use serde::{Deserialize, Serialize};

/// Row-major `height x width` grid of `f32`, used for images and scalar fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Per-pixel displacement magnitude along one axis, in pixels.
pub type ScalarField = Grid;

impl Grid {
    pub fn new(height: usize, width: usize, fill: f32) -> Self {
        Self {
            height,
            width,
            data: vec![fill; height * width],
        }
    }

    /// Panics if `data.len() != height * width`.
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width, "grid data length");
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sub-window starting at `(row, col)`. Panics if it does not fit.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> Grid {
        assert!(row + height <= self.height && col + width <= self.width, "window out of range");
        let mut data = Vec::with_capacity(height * width);
        for r in row..row + height {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + width]);
        }
        Grid { height, width, data }
    }

    /// Centered `size x size` window.
    pub fn center_window(&self, size: usize) -> Grid {
        self.window((self.height - size) / 2, (self.width - size) / 2, size, size)
    }
}

/// Dense `(u, v)` displacement: `u` along columns (x), `v` along rows (y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub u: ScalarField,
    pub v: ScalarField,
}

impl DisplacementField {
    /// Panics if the channels differ in size.
    pub fn new(u: ScalarField, v: ScalarField) -> Self {
        assert_eq!(u.dims(), v.dims(), "u and v must share a resolution");
        Self { u, v }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            u: Grid::new(height, width, 0.0),
            v: Grid::new(height, width, 0.0),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    pub fn max_abs(&self) -> f32 {
        self.u.max_abs().max(self.v.max_abs())
    }

    pub fn center_window(&self, size: usize) -> Self {
        Self {
            u: self.u.center_window(size),
            v: self.v.center_window(size),
        }
    }
}
