use image::{Rgb, RgbImage};

use super::AugmentError;
use crate::data::DecodedImage;
use crate::engine::Real;

/// Row-major, channel-last pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f32>,
    ) -> Result<Self, AugmentError> {
        if channels != 1 && channels != 3 {
            return Err(AugmentError::Shape(format!("{channels} channels")));
        }
        if width == 0 || height == 0 || pixels.len() != width * height * channels {
            return Err(AugmentError::Shape(format!(
                "{} values for {width}×{height}×{channels}",
                pixels.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("valid dimensions")
    }

    /// Raw 8-bit values as floats, not yet rescaled.
    pub fn from_decoded(img: &DecodedImage) -> Self {
        Self::new(
            img.width as usize,
            img.height as usize,
            3,
            img.pixels.iter().map(|&v| v as f32).collect(),
        )
        .expect("decoder yields width·height·3 bytes")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        ImageBuffer {
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Appends the pixels in channel-first order.
    pub fn write_chw<T: Real>(&self, out: &mut Vec<T>) {
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.push(T::lit(self.get(x, y, c) as f64));
                }
            }
        }
    }

    /// 8-bit RGB view of a [0, 1] image.
    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c: usize| {
                let c = if self.channels == 1 { 0 } else { c };
                (self.get(x as usize, y as usize, c).clamp(0.0, 1.0) * 255.0).round() as u8
            };
            Rgb([px(0), px(1), px(2)])
        })
    }
}

/// Lays equally sized tiles out row by row, `cols` per row, 2-pixel gutters.
pub fn contact_sheet(tiles: &[ImageBuffer], cols: usize) -> RgbImage {
    const GAP: u32 = 2;
    let cols = cols.max(1);
    let Some(first) = tiles.first() else {
        return RgbImage::new(1, 1);
    };
    let (tw, th) = (first.width() as u32, first.height() as u32);
    let rows = tiles.len().div_ceil(cols) as u32;
    let mut sheet = RgbImage::new(
        cols as u32 * (tw + GAP) + GAP,
        rows * (th + GAP) + GAP,
    );
    for (i, tile) in tiles.iter().enumerate() {
        let ox = GAP + (i % cols) as u32 * (tw + GAP);
        let oy = GAP + (i / cols) as u32 * (th + GAP);
        image::imageops::replace(&mut sheet, &tile.to_rgb8(), ox as i64, oy as i64);
    }
    sheet
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(ImageBuffer::new(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(ImageBuffer::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageBuffer::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn chw_layout() {
        let img = ImageBuffer::new(2, 1, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut out = Vec::<f64>::new();
        img.write_chw(&mut out);
        assert_eq!(out, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn sheet_dimensions() {
        let tiles = vec![ImageBuffer::filled(8, 6, 3, 0.5); 5];
        let sheet = contact_sheet(&tiles, 3);
        assert_eq!(sheet.dimensions(), (3 * 10 + 2, 2 * 8 + 2));
        assert_eq!(sheet.get_pixel(2, 2).0, [128, 128, 128]);
    }
}
