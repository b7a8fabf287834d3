use ndarray::{Array2, ArrayView2};

use super::Image;
use crate::error::{Error, Result};

/// Side of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean squared error over all elements.
pub fn mse(x: &Image, reference: &Image) -> Result<f64> {
    Ok(x.distance_sq(reference)? / x.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for data range 1.
///
/// Identical images give `f64::INFINITY`.
pub fn psnr(x: &Image, reference: &Image) -> Result<f64> {
    let mse = mse(x, reference)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable 'valid' filtering: output is `(h − 10) × (w − 10)`.
fn filter_valid(plane: &Array2<f64>, k: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut horiz = Array2::<f64>::zeros((h, ow));
    for r in 0..h {
        for c in 0..ow {
            horiz[[r, c]] = (0..SSIM_WINDOW).map(|j| k[j] * plane[[r, c + j]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for r in 0..oh {
        for c in 0..ow {
            out[[r, c]] = (0..SSIM_WINDOW).map(|i| k[i] * horiz[[r + i, c]]).sum();
        }
    }
    out
}

fn ssim_plane(x: ArrayView2<f64>, y: ArrayView2<f64>, k: &[f64; SSIM_WINDOW]) -> f64 {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let x = x.to_owned();
    let y = y.to_owned();
    let mu_x = filter_valid(&x, k);
    let mu_y = filter_valid(&y, k);
    let xx = filter_valid(&(&x * &x), k);
    let yy = filter_valid(&(&y * &y), k);
    let xy = filter_valid(&(&x * &y), k);

    let mut total = 0.0;
    for ((((mx, my), sxx), syy), sxy) in mu_x.iter().zip(&mu_y).zip(&xx).zip(&yy).zip(&xy) {
        let var_x = sxx - mx * mx;
        let var_y = syy - my * my;
        let cov = sxy - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
    }
    total / mu_x.len() as f64
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `K₁ = 0.01`, `K₂ = 0.03` and data range 1. Colour images average the
/// per-channel scores.
pub fn ssim(x: &Image, reference: &Image) -> Result<f64> {
    x.check_same_shape(reference, "ssim")?;
    if x.height().min(x.width()) < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            x.height(),
            x.width()
        )));
    }
    let k = gaussian_window();
    let channels = x.channels();
    let sum: f64 = (0..channels)
        .map(|c| ssim_plane(x.channel(c), reference.channel(c), &k))
        .sum();
    Ok(sum / channels as f64)
}

/// Channel-0 values along one row.
pub fn line_profile(img: &Image, row: usize) -> Result<Vec<f64>> {
    if row >= img.height() {
        return Err(Error::Index {
            index: row,
            len: img.height(),
        });
    }
    Ok(img.channel(0).row(row).to_vec())
}
