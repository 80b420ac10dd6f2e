//! Attention maps as binary PPM (P6) images.
//!
//! One pixel per `tile_px` x `tile_px` block of the slide. Attention is
//! min-max normalised; a constant map renders as 0.5. Colour runs from
//! black (0) to yellow (1), background black.

use std::path::Path;

use crate::bag::SlideBag;
use crate::error::{Error, Result};

pub const DEFAULT_TILE_PX: u64 = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = 3 * (y * self.width + x);
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

/// Min-max normalisation with the constant case mapped to 0.5.
pub fn normalize_attention(attention: &[f64]) -> Result<Vec<f64>> {
    if attention.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidInput("attention contains non-finite values".into()));
    }
    let lo = attention.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = attention.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    Ok(attention
        .iter()
        .map(|&a| if span > 0.0 { (a - lo) / span } else { 0.5 })
        .collect())
}

pub fn render_attention(bag: &SlideBag, attention: &[f64], tile_px: u64) -> Result<Image> {
    if bag.n_tiles() == 0 {
        return Err(Error::InvalidInput("cannot render a bag with zero tiles".into()));
    }
    if attention.len() != bag.n_tiles() {
        return Err(Error::InvalidInput(format!(
            "attention has {} entries for {} tiles",
            attention.len(),
            bag.n_tiles()
        )));
    }
    if tile_px == 0 {
        return Err(Error::InvalidInput("tile_px must be positive".into()));
    }
    let width = bag.geometry.width_px.div_ceil(tile_px) as usize;
    let height = bag.geometry.height_px.div_ceil(tile_px) as usize;
    let mut rgb = vec![0u8; 3 * width * height];
    for (c, v) in bag.coords.iter().zip(normalize_attention(attention)?) {
        // Tiles on the far edge (x == W) fold into the last column.
        let px = ((c.x_px / tile_px) as usize).min(width - 1);
        let py = ((c.y_px / tile_px) as usize).min(height - 1);
        let level = (255.0 * v).round() as u8;
        let o = 3 * (py * width + px);
        rgb[o] = level;
        rgb[o + 1] = level;
        rgb[o + 2] = 0;
    }
    Ok(Image { width, height, rgb })
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    std::fs::write(path, image.to_ppm()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bag::{SlideGeometry, TileCoord};

    fn bag(coords: &[(u64, u64)]) -> SlideBag {
        SlideBag::new(
            "s",
            SlideGeometry::new(1000, 600).unwrap(),
            coords.iter().map(|&(x, y)| TileCoord { x_px: x, y_px: y }).collect(),
            1,
            vec![0.0; coords.len()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn endpoints_and_background() {
        let b = bag(&[(0, 0), (512, 256)]);
        let img = render_attention(&b, &[0.1, 0.9], 256).unwrap();
        assert_eq!((img.width, img.height), (4, 3));
        assert_eq!(img.pixel(0, 0), [0, 0, 0]);
        assert_eq!(img.pixel(2, 1), [255, 255, 0]);
        assert_eq!(img.pixel(3, 2), [0, 0, 0]);
        assert!(img.to_ppm().starts_with(b"P6\n4 3\n255\n"));
    }

    #[test]
    fn constant_attention_is_mid_grey_yellow() {
        let b = bag(&[(0, 0), (256, 0), (1000, 600)]);
        let img = render_attention(&b, &[0.3; 3], 256).unwrap();
        for (x, y) in [(0, 0), (1, 0), (3, 2)] {
            assert_eq!(img.pixel(x, y), [128, 128, 0]);
        }
    }

    #[test]
    fn rejects_length_mismatch() {
        let b = bag(&[(0, 0)]);
        assert!(render_attention(&b, &[0.1, 0.2], 256).is_err());
    }
}
