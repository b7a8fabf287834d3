//! Image container, degradation simulation and full-reference metrics.

mod io;
mod metrics;
mod noise;

pub use io::{load_image, save_image};
pub use metrics::{line_profile, mse, psnr, ssim, SSIM_WINDOW};
pub use noise::{add_noise, NoiseKind, NoiseSpec};

use ndarray::{Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Smallest spatial extent accepted by [`Image`].
pub const MIN_SIDE: usize = 8;

/// A `height × width × channels` raster of finite reals.
///
/// Values are nominally in `[0, 1]`, but that is not enforced: noisy
/// observations leave the unit interval and are kept as they are.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::dim(format!(
                "image is {h}x{w}, both sides must be at least {MIN_SIDE}"
            )));
        }
        if c != 1 && c != 3 {
            return Err(Error::Format(format!("{c} channels, expected 1 or 3")));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite pixel value {v}")));
        }
        Ok(Image { data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, channels), value))
    }

    pub fn from_fn<F>(height: usize, width: usize, channels: usize, f: F) -> Result<Self>
    where
        F: FnMut((usize, usize, usize)) -> f64,
    {
        Self::new(Array3::from_shape_fn((height, width, channels), f))
    }

    /// Wraps an array produced by an operation that preserves the invariants.
    pub(crate) fn from_array_unchecked(data: Array3<f64>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Image { data }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// `(height, width, channels)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn pixel_count(&self) -> usize {
        self.height() * self.width()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[[row, col, channel]]
    }

    pub fn channel(&self, channel: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(2), channel)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dim() == other.dim()
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.dim(),
                other.dim()
            )))
        }
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Result<Image> {
        Image::new(self.data.mapv(f))
    }

    /// Values clamped to `[0, 1]`.
    pub fn clipped(&self) -> Image {
        Image::from_array_unchecked(self.data.mapv(|v| v.clamp(0.0, 1.0)))
    }

    /// Euclidean inner product over every element.
    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other, "inner product")?;
        Ok(self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum())
    }

    /// Squared Euclidean distance `‖self − other‖²`.
    pub fn distance_sq(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other, "distance")?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.check_same_shape(other, "subtraction")?;
        Ok(Image::from_array_unchecked(&self.data - &other.data))
    }

    /// Mean over channels, returned as a single-channel image.
    pub fn to_gray(&self) -> Image {
        if self.channels() == 1 {
            return self.clone();
        }
        let mean = self.data.mean_axis(Axis(2)).expect("three channels");
        Image::from_array_unchecked(mean.insert_axis(Axis(2)))
    }
}
