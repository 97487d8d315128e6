use std::path::Path;

use image::{DynamicImage, ImageReader};
use sha2::{Digest, Sha256};

/// Smallest accepted width and height.
pub const MIN_SIDE: u32 = 32;

/// An 8-bit image converted to interleaved RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl DecodedImage {
    /// SHA-256 over dimensions and decoded RGB bytes, so re-encodings of the
    /// same pixels (PNG vs lossless, grey vs grey-as-RGB) hash identically.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update([3u8]);
        h.update(&self.pixels);
        hex::encode(h.finalize())
    }
}

/// Decodes a PNG or JPEG. Accepts 8-bit grey, grey+alpha, RGB and RGBA (alpha
/// dropped); anything else is an error string for the caller's report.
pub fn decode_rgb8(path: &Path) -> Result<DecodedImage, String> {
    let reader = ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    let img = reader.decode().map_err(|e| e.to_string())?;
    let rgb = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => return Err(format!("unsupported pixel format {:?}", other.color())),
    };
    Ok(DecodedImage {
        width: rgb.width(),
        height: rgb.height(),
        pixels: rgb.into_raw(),
    })
}
