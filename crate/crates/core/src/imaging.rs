//! Small image helpers shared by the pipeline stages.

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{GrayImage, ImageEncoder, RgbImage};
use sha2::{Digest, Sha256};

use crate::gaze_mask::CropRegion;

/// Encodes an RGB image as PNG. Output is deterministic for identical input.
pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Sub)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .expect("in-memory PNG encoding cannot fail");
    out
}

pub fn encode_png_gray(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Sub)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::L8)
        .expect("in-memory PNG encoding cannot fail");
    out
}

/// Reads only the PNG header and returns `(width, height)`.
pub fn png_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    let reader = image::ImageReader::with_format(std::io::Cursor::new(bytes), image::ImageFormat::Png);
    reader.into_dimensions().ok()
}

pub fn decode_png_rgb(bytes: &[u8]) -> Option<RgbImage> {
    image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .ok()
        .map(|img| img.to_rgb8())
}

pub fn decode_png_gray(bytes: &[u8]) -> Option<GrayImage> {
    image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .ok()
        .map(|img| img.to_luma8())
}

/// Copies the square `region` out of `canvas`.
pub fn crop(canvas: &RgbImage, region: &CropRegion) -> RgbImage {
    image::imageops::crop_imm(canvas, region.x0, region.y0, region.side, region.side).to_image()
}

/// Writes `patch` into `canvas` with its top-left corner at `(x0, y0)`.
pub fn paste(canvas: &mut RgbImage, patch: &RgbImage, x0: u32, y0: u32) {
    let width = patch.width() as usize * 3;
    let stride = canvas.width() as usize * 3;
    let dst = canvas.as_mut();
    for (row, src) in patch.as_raw().chunks_exact(width).enumerate() {
        let start = (y0 as usize + row) * stride + x0 as usize * 3;
        dst[start..start + width].copy_from_slice(src);
    }
}

/// Rec. 601 luma of one pixel.
pub fn luminance(px: &[u8]) -> f64 {
    0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
}

/// Mean luminance over pixels where `mask` is nonzero; `None` if the mask is empty.
pub fn mean_masked_luminance(img: &RgbImage, mask: &GrayImage) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (px, m) in img.pixels().zip(mask.pixels()) {
        if m.0[0] != 0 {
            sum += luminance(&px.0);
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Hex SHA-256 over dimensions and raw pixels.
pub fn image_hash(img: &RgbImage) -> String {
    let mut hasher = Sha256::new();
    hasher.update(img.width().to_le_bytes());
    hasher.update(img.height().to_le_bytes());
    hasher.update(img.as_raw());
    hex(&hasher.finalize())
}

pub fn bytes_hash(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
