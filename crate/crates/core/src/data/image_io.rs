use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::tensor::Tensor;

use super::DataError;

/// Decode an 8-bit binary PPM (P6) or PGM (P5) into a `3 x H x W` tensor
/// with values in `[0, 1]`. Grayscale is replicated across the three
/// channels.
pub fn load_image(path: &Path) -> Result<Tensor, DataError> {
    let bytes = std::fs::read(path)?;
    let shown = || path.display().to_string();
    if !(bytes.starts_with(b"P5") || bytes.starts_with(b"P6")) {
        return Err(DataError::UnsupportedImage { path: shown() });
    }
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).map_err(|e| DataError::BadImage {
        path: shown(),
        message: e.to_string(),
    })?;
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageLuma8(gray) => DynamicImage::ImageLuma8(gray).to_rgb8(),
        _ => {
            return Err(DataError::BadImage {
                path: shown(),
                message: "only 8-bit samples are supported".into(),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    let mut data = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for p in 0..h * w {
            data[c * h * w + p] = raw[p * 3 + c] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(&[3, h, w], data)?)
}

/// Write a `3 x H x W` tensor in `[0, 1]` as binary PPM, rounding to 8 bits.
pub fn save_ppm(path: &Path, image: &Tensor) -> Result<(), DataError> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(DataError::BadImage {
            path: path.display().to_string(),
            message: format!("cannot write shape {s:?} as RGB"),
        });
    }
    let (h, w) = (s[1], s[2]);
    let d = image.data();
    let mut raw = vec![0u8; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            raw[p * 3 + c] = (d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let bad = |message: String| DataError::BadImage {
        path: path.display().to_string(),
        message,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&raw, w as u32, h as u32, ExtendedColorType::Rgb8)
        .map_err(|e| bad(e.to_string()))?;
    std::io::Write::flush(&mut out)?;
    Ok(())
}
