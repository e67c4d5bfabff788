//! Backward warping with a Catmull-Rom bicubic kernel.

use thiserror::Error;

use crate::grid::{DisplacementField, Grid};

#[derive(Debug, Error, PartialEq)]
pub enum WarpError {
    #[error("image is {image:?} but field is {field:?}")]
    SizeMismatch { image: (usize, usize), field: (usize, usize) },
    #[error("displacement field has a non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("center crop expects an even square image, got {0}x{1}")]
    CropSize(usize, usize),
}

/// Catmull-Rom weights for taps at offsets -1, 0, 1, 2 from `floor(x)`.
pub fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Separable bicubic interpolation with clamp-to-edge indexing. `x` runs along
/// columns and `y` along rows.
pub fn bicubic_sample(img: &Grid, x: f64, y: f64) -> f64 {
    let (h, w) = img.dims();
    let (fx, fy) = (x.floor(), y.floor());
    let wx = catmull_rom_weights(x - fx);
    let wy = catmull_rom_weights(y - fy);
    let clamp = |k: f64, n: usize| k.clamp(0.0, (n - 1) as f64) as usize;
    let cols: [usize; 4] = std::array::from_fn(|i| clamp(fx + i as f64 - 1.0, w));
    let mut acc = 0.0;
    for (j, wyj) in wy.iter().enumerate() {
        if *wyj == 0.0 {
            continue;
        }
        let r = clamp(fy + j as f64 - 1.0, h);
        let row: f64 = cols
            .iter()
            .zip(&wx)
            .map(|(&c, &wxi)| wxi * img.get(r, c) as f64)
            .sum();
        acc += wyj * row;
    }
    acc
}

/// `out(x, y) = img(x - u(x, y), y - v(x, y))`, clipped to `[0, 1]`.
pub fn warp_image(img: &Grid, field: &DisplacementField) -> Result<Grid, WarpError> {
    if img.dims() != field.dims() {
        return Err(WarpError::SizeMismatch {
            image: img.dims(),
            field: field.dims(),
        });
    }
    let (h, w) = img.dims();
    for r in 0..h {
        for c in 0..w {
            if !(field.u.get(r, c).is_finite() && field.v.get(r, c).is_finite()) {
                return Err(WarpError::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(Grid::from_fn(h, w, |r, c| {
        let sx = c as f64 - field.u.get(r, c) as f64;
        let sy = r as f64 - field.v.get(r, c) as f64;
        bicubic_sample(img, sx, sy).clamp(0.0, 1.0) as f32
    }))
}

/// Central `n/2 x n/2` window of an `n x n` image: rows and columns `[n/4, 3n/4)`.
pub fn center_crop(img: &Grid) -> Result<Grid, WarpError> {
    let (h, w) = img.dims();
    if h != w || h % 2 != 0 || h == 0 {
        return Err(WarpError::CropSize(h, w));
    }
    Ok(img.center_window(h / 2))
}
