use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::image::Image;

/// Float to byte: `round(v * 255)` with halves rounded up, after clamping.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn dequantize(b: u8) -> f64 {
    f64::from(b) / 255.0
}

pub fn to_rgb8(img: &Image) -> RgbImage {
    let bytes = img.data().iter().map(|&v| quantize(v)).collect();
    RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("raster matches dimensions")
}

pub fn from_rgb8(rgb: &RgbImage) -> Image {
    let data = rgb.as_raw().iter().map(|&b| dequantize(b)).collect();
    Image::from_vec(rgb.width() as usize, rgb.height() as usize, data).expect("raster matches dimensions")
}

/// Reads an image file as RGB in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let reader = image::ImageReader::open(path)?
        .with_guessed_format()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let decoded = reader.decode().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(from_rgb8(&decoded.to_rgb8()))
}

/// Writes an 8-bit RGB PNG.
pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    to_rgb8(img)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Format(format!("{}: {other}", path.display())),
        })
}
