use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Elem;

pub const IMAGE_ROWS: usize = 35;
pub const IMAGE_COLS: usize = 55;

/// ITU-R BT.601 luma, rounded to the nearest integer level.
pub fn luma_bt601(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round() as u8
}

/// Center-crops to 35x55 (ties broken toward the top-left) and maps
/// 0..=255 onto [-1, 1] via `v/127.5 - 1`.
pub fn preprocess(raw: &Array2<u8>) -> Result<Array2<Elem>> {
    let cropped = center_crop(raw)?;
    Ok(cropped.mapv(scale_pixel))
}

/// The crop half of [`preprocess`], kept separate so datasets can cache
/// cropped 8-bit grids and defer the float conversion to batch time.
pub fn center_crop(raw: &Array2<u8>) -> Result<Array2<u8>> {
    let (h, w) = raw.dim();
    if h < IMAGE_ROWS || w < IMAGE_COLS {
        return Err(Error::Ingestion(format!(
            "image is {h}x{w}, smaller than the required {IMAGE_ROWS}x{IMAGE_COLS}"
        )));
    }
    // floor division leaves the larger margin on the bottom/right, i.e.
    // ties go toward the top-left corner
    let top = (h - IMAGE_ROWS) / 2;
    let left = (w - IMAGE_COLS) / 2;
    Ok(raw
        .slice(ndarray::s![top..top + IMAGE_ROWS, left..left + IMAGE_COLS])
        .to_owned())
}

/// `v/127.5 - 1`: 0 maps to -1, 255 to +1.
pub fn scale_pixel(v: u8) -> Elem {
    (v as f64 / 127.5 - 1.0) as Elem
}
