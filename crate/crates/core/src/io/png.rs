//! 8-bit RGB PNG codec.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::frame::Image;

/// Rounds a `[0, 1]` channel value to 8 bits, clamping out-of-range values.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// The image as it will read back after an 8-bit round trip.
pub fn quantized(image: &Image) -> Image {
    let data = image.data().iter().map(|&v| quantize(v) as f64 / 255.0).collect();
    Image::from_data(image.width(), image.height(), data).expect("same shape")
}

pub fn encode_rgb8(image: &Image) -> RgbImage {
    let raw: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    ImageBuffer::<Rgb<u8>, _>::from_raw(image.width() as u32, image.height() as u32, raw).expect("buffer size")
}

pub fn write_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    encode_rgb8(image).save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads any 8-bit PNG as RGB with channels scaled to `[0, 1]`.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Image::from_data(img.width() as usize, img.height() as usize, data)
}
