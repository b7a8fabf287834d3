use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use ndarray::Array3;

use super::Image;
use crate::error::{Error, Result};

const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Reads an 8- or 16-bit raster and rescales it into `[0, 1]`.
///
/// Fully opaque alpha channels are dropped; translucent ones are rejected.
/// With `grayscale` set, colour input is reduced with Rec. 601 luma weights.
pub fn load_image(path: impl AsRef<Path>, grayscale: bool) -> Result<Image> {
    let path = path.as_ref();
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .with_guessed_format()?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;

    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (samples, channels, max): (Vec<f64>, usize, f64) = match &decoded {
        DynamicImage::ImageLuma8(b) => (to_f64(b.as_raw()), 1, 255.0),
        DynamicImage::ImageLumaA8(b) => (to_f64(b.as_raw()), 2, 255.0),
        DynamicImage::ImageRgb8(b) => (to_f64(b.as_raw()), 3, 255.0),
        DynamicImage::ImageRgba8(b) => (to_f64(b.as_raw()), 4, 255.0),
        DynamicImage::ImageLuma16(b) => (to_f64(b.as_raw()), 1, 65535.0),
        DynamicImage::ImageLumaA16(b) => (to_f64(b.as_raw()), 2, 65535.0),
        DynamicImage::ImageRgb16(b) => (to_f64(b.as_raw()), 3, 65535.0),
        DynamicImage::ImageRgba16(b) => (to_f64(b.as_raw()), 4, 65535.0),
        other => {
            return Err(Error::Format(format!(
                "{}: {:?} is not an 8- or 16-bit integer raster",
                path.display(),
                other.color()
            )))
        }
    };

    let colour = match channels {
        2 | 4 => channels - 1,
        c => c,
    };
    if colour != channels {
        let alpha_ok = samples.chunks_exact(channels).all(|px| px[channels - 1] == max);
        if !alpha_ok {
            return Err(Error::Format(format!("{}: translucent alpha channel", path.display())));
        }
    }

    let out_channels = if grayscale { 1 } else { colour };
    let data = Array3::from_shape_fn((height, width, out_channels), |(r, c, k)| {
        let px = &samples[(r * width + c) * channels..][..channels];
        if grayscale && colour == 3 {
            LUMA_WEIGHTS.iter().zip(px).map(|(w, v)| w * v).sum::<f64>() / max
        } else {
            px[k] / max
        }
    });
    Image::new(data)
}

fn to_f64<T: Copy + Into<f64>>(raw: &[T]) -> Vec<f64> {
    raw.iter().map(|&v| v.into()).collect()
}

/// Writes an 8-bit PNG after clamping to `[0, 1]`.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = img.dim();
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let dynamic = if c == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w as u32, h as u32, bytes).expect("buffer sized from image"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer sized from image"))
    };
    dynamic.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
