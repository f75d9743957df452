//! Mask files: 8-bit binary PGM, 0 = none and 255 = positive.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder};

use crate::bitmap::Bitmap;
use crate::error::Result;

pub const EOS_SUFFIX: &str = ".eos.pgm";
pub const BZ_SUFFIX: &str = ".bz.pgm";
pub const TISSUE_SUFFIX: &str = ".tissue.pgm";

/// Reads a greyscale image; any nonzero sample is positive.
pub fn read_pgm(path: &Path) -> Result<Bitmap> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Bitmap::from_vec(w, h, img.into_raw().into_iter().map(|v| v != 0).collect())
}

pub fn write_pgm(path: &Path, bitmap: &Bitmap) -> Result<()> {
    let raw: Vec<u8> = bitmap.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(bitmap.width() as u32, bitmap.height() as u32, raw)
        .expect("buffer length matches dimensions");
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)?;
    Ok(())
}
