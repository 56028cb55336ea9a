//! PNG and JSON helpers shared by every stage.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::color::{gray_to_rgb, lab_to_rgb, luminance_of, rgb_pixel_to_lab, GrayImage, LabImage, RgbImage};
use crate::error::{Error, Result};
use crate::imaging::EdgeMap;

fn rgb_from_dynamic(img: DynamicImage) -> Result<RgbImage> {
    let buf = img.to_rgb8();
    RgbImage::new(buf.width() as usize, buf.height() as usize, buf.into_raw())
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    rgb_from_dynamic(image::load_from_memory_with_format(bytes, ImageFormat::Png)?)
}

/// Decodes a PNG as a gray image of lightness / 100. Gray PNGs are read as
/// neutral sRGB levels, color PNGs through their lightness.
pub fn decode_gray_png(bytes: &[u8]) -> Result<GrayImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    if img.color().has_color() {
        return Ok(luminance_of(&rgb_from_dynamic(img)?));
    }
    let buf = img.to_luma8();
    let lut: Vec<f64> = (0..=255u8).map(|v| rgb_pixel_to_lab([v, v, v])[0] / 100.0).collect();
    GrayImage::new(
        buf.width() as usize,
        buf.height() as usize,
        buf.into_raw().into_iter().map(|v| lut[usize::from(v)].clamp(0.0, 1.0)).collect(),
    )
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| Error::Format("rgb buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(buf).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn encode_luma8_png(width: usize, height: usize, data: Vec<u8>) -> Result<Vec<u8>> {
    let buf = image::GrayImage::from_raw(width as u32, height as u32, data)
        .ok_or_else(|| Error::Format("gray buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma8(buf).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Edge map as an 8-bit 0/255 PNG.
pub fn encode_edge_png(edges: &EdgeMap) -> Result<Vec<u8>> {
    let data = edges.data().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    encode_luma8_png(edges.width(), edges.height(), data)
}

pub fn encode_gray_png(gray: &GrayImage) -> Result<Vec<u8>> {
    let rgb = gray_to_rgb(gray);
    let data = rgb.pixels().map(|p| p[0]).collect();
    encode_luma8_png(gray.width(), gray.height(), data)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_rgb_png(path: &Path) -> Result<RgbImage> {
    decode_rgb_png(&read_bytes(path)?)
}

pub fn load_gray_png(path: &Path) -> Result<GrayImage> {
    decode_gray_png(&read_bytes(path)?)
}

pub fn save_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_rgb_png(img)?)
}

pub fn save_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    write_bytes(path, &encode_gray_png(img)?)
}

pub fn save_lab_png(path: &Path, img: &LabImage) -> Result<()> {
    save_rgb_png(path, &lab_to_rgb(img))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
