//! Binary greyscale PGM (P5) export for attention maps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Min-max scales `values` to `0..=255`, rounding to nearest. A constant map
/// has no range and becomes all zeros.
pub fn normalize(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range.is_nan() || range <= 0.0 || range.is_infinite() {
        return vec![0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / range * 255.0).round() as u8).collect()
}

/// `P5\n<width> <height>\n255\n` followed by the row-major pixels.
pub fn encode(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::Format(format!("{} values for a {height}x{width} image", values.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(normalize(values));
    Ok(out)
}

pub fn save(values: &[f64], height: usize, width: usize, path: &Path) -> Result<()> {
    fs::write(path, encode(values, height, width)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_is_black() {
        assert_eq!(normalize(&[0.3; 4]), vec![0; 4]);
    }

    #[test]
    fn one_hot_is_single_white_pixel() {
        assert_eq!(normalize(&[0.0, 0.0, 1.0, 0.0]), vec![0, 0, 255, 0]);
    }
}
