//! PNG images (RGB in `[0, 1]`) and binary masks (`{0, 255}` on disk).

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, ImageReader, RgbImage};

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::grid::Grid;

fn image_error(e: image::ImageError) -> Error {
    Error::format(0, format!("PNG: {e}"))
}

fn reader(bytes: &[u8]) -> ImageReader<Cursor<&[u8]>> {
    let mut r = ImageReader::new(Cursor::new(bytes));
    r.set_format(ImageFormat::Png);
    r
}

/// Width and height from the PNG header, without decoding pixels.
pub fn png_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let (w, h) = reader(bytes).into_dimensions().map_err(image_error)?;
    Ok((w as usize, h as usize))
}

/// Decodes any PNG colour type to a 3-channel grid in `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Result<Grid> {
    let img = reader(bytes).decode().map_err(image_error)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Grid::from_vec(w, h, 3, data)
}

/// 8-bit RGB PNG from a 1- or 3-channel grid in `[0, 1]`.
pub fn encode_png(image: &Grid) -> Result<Vec<u8>> {
    let c = image.channels();
    if c != 1 && c != 3 {
        return Err(Error::invalid("PNG writer expects 1 or 3 channels"));
    }
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let raw: Vec<u8> = (0..image.pixel_count())
        .flat_map(|p| (0..3).map(move |k| (p, k)))
        .map(|(p, k)| to_u8(image.data()[p * c + if c == 3 { k } else { 0 }]))
        .collect();
    let img = RgbImage::from_raw(image.width() as u32, image.height() as u32, raw)
        .expect("buffer sized from the grid");
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(image_error)?;
    Ok(out)
}

/// Masks are written as 8-bit grayscale with foreground (> 0.5) as 255.
pub fn encode_mask_png(mask: &Grid) -> Result<Vec<u8>> {
    if mask.channels() != 1 {
        return Err(Error::invalid("mask must have one channel"));
    }
    let raw = mask.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer sized from the grid");
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(image_error)?;
    Ok(out)
}

/// Reads a mask PNG; pixels above mid-gray become 1.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Grid> {
    let img = reader(bytes).decode().map_err(image_error)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| if v > 127 { 1.0 } else { 0.0 }).collect();
    Grid::from_vec(w, h, 1, data)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Grid> {
    decode_png(&read_bytes(path.as_ref())?)
}

pub fn write_png(path: impl AsRef<Path>, image: &Grid) -> Result<()> {
    write_bytes(path.as_ref(), &encode_png(image)?)
}

pub fn read_png_mask(path: impl AsRef<Path>) -> Result<Grid> {
    decode_mask_png(&read_bytes(path.as_ref())?)
}

pub fn write_png_mask(path: impl AsRef<Path>, mask: &Grid) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask_png(mask)?)
}
