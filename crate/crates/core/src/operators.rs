//! Linear forward operators and the finite-difference gradient/divergence pair.
//!
//! Differences are forward differences with a zero trailing boundary, so the
//! total variation of a constant image is exactly zero and `div = −gradᵀ`
//! holds to rounding.

use std::path::Path;

use ndarray::{s, Array2, Array3, Array4, Zip};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// A normalized blur kernel with odd side lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel(Array2<f64>);

impl Kernel {
    const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(weights: Array2<f64>) -> Result<Self> {
        let (kh, kw) = weights.dim();
        if kh == 0 || kw == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim(format!("kernel must have odd sides, got {kh}x{kw}")));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("kernel contains non-finite weights".into()));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidValue(format!("kernel sums to {total}, expected 1")));
        }
        Ok(Kernel(weights))
    }

    /// Uniform `size × size` box blur.
    pub fn box_blur(size: usize) -> Result<Self> {
        Self::new(Array2::from_elem((size, size), 1.0 / (size * size) as f64))
    }

    /// Normalized isotropic Gaussian of the given odd side.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        let half = (size / 2) as f64;
        let mut w = Array2::from_shape_fn((size, size), |(i, j)| {
            let (di, dj) = (i as f64 - half, j as f64 - half);
            (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
        });
        let total = w.sum();
        w.mapv_inplace(|v| v / total);
        Self::new(w)
    }

    /// Parses whitespace-separated rows, one kernel row per non-empty line.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>()
                            .map_err(|e| Error::InvalidValue(format!("kernel entry `{tok}`: {e}")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::dim("kernel rows have different lengths"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let weights = Array2::from_shape_vec((height, width), flat).map_err(|e| Error::dim(e.to_string()))?;
        Self::new(weights)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.0
    }
}

/// The linear degradation `H` in `g = H u + η`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ForwardOperator {
    #[default]
    Identity,
    /// 2-D convolution per channel with replicate boundary.
    Convolution(Kernel),
}

impl ForwardOperator {
    pub fn apply(&self, u: &Image) -> Result<Image> {
        match self {
            ForwardOperator::Identity => Ok(u.clone()),
            ForwardOperator::Convolution(k) => {
                check_fits(k, u)?;
                Ok(Image::from_array_unchecked(convolve(k, u.data(), false)))
            }
        }
    }

    /// Exact adjoint of [`apply`](Self::apply), boundary handling included.
    pub fn apply_adjoint(&self, v: &Image) -> Result<Image> {
        match self {
            ForwardOperator::Identity => Ok(v.clone()),
            ForwardOperator::Convolution(k) => {
                check_fits(k, v)?;
                Ok(Image::from_array_unchecked(convolve(k, v.data(), true)))
            }
        }
    }
}

fn check_fits(k: &Kernel, u: &Image) -> Result<()> {
    let (kh, kw) = k.weights().dim();
    if kh > u.height() || kw > u.width() {
        return Err(Error::dim(format!(
            "kernel {kh}x{kw} larger than image {}x{}",
            u.height(),
            u.width()
        )));
    }
    Ok(())
}

/// `out[r,c] = Σ k[i,j] · u[clamp(r + a − i), clamp(c + b − j)]`; the adjoint
/// scatters along the same index map.
fn convolve(k: &Kernel, u: &Array3<f64>, adjoint: bool) -> Array3<f64> {
    let (h, w, ch) = u.dim();
    let kw = k.weights();
    let (kh, kwid) = kw.dim();
    let (a, b) = ((kh / 2) as isize, (kwid / 2) as isize);
    let clamp = |x: isize, n: usize| x.clamp(0, n as isize - 1) as usize;
    let mut out = Array3::<f64>::zeros((h, w, ch));
    for r in 0..h {
        for c in 0..w {
            for ((i, j), &wt) in kw.indexed_iter() {
                let sr = clamp(r as isize + a - i as isize, h);
                let sc = clamp(c as isize + b - j as isize, w);
                for k in 0..ch {
                    if adjoint {
                        out[[sr, sc, k]] += wt * u[[r, c, k]];
                    } else {
                        out[[r, c, k]] += wt * u[[sr, sc, k]];
                    }
                }
            }
        }
    }
    out
}

/// Per-pixel, per-channel forward differences `(D_h u, D_v u)`.
///
/// Stored as `height × width × channels × 2`, index 0 horizontal and 1 vertical.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    data: Array4<f64>,
}

impl GradientField {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        let (h, w, c, two) = data.dim();
        if two != 2 || h == 0 || w == 0 || c == 0 {
            return Err(Error::dim(format!(
                "gradient field shape {:?} is not h×w×c×2",
                data.dim()
            )));
        }
        Ok(GradientField { data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        GradientField {
            data: Array4::zeros((height, width, channels, 2)),
        }
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array4<f64> {
        &mut self.data
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

    pub fn pixel_count(&self) -> usize {
        self.height() * self.width()
    }

    /// The `2·C` components belonging to pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> Vec<f64> {
        self.data.slice(s![row, col, .., ..]).iter().copied().collect()
    }

    pub fn same_shape(&self, other: &GradientField) -> bool {
        self.data.dim() == other.data.dim()
    }

    pub(crate) fn check_same_shape(&self, other: &GradientField, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "{what}: field shapes {:?} and {:?} differ",
                self.data.dim(),
                other.data.dim()
            )))
        }
    }

    pub fn dot(&self, other: &GradientField) -> Result<f64> {
        self.check_same_shape(other, "inner product")?;
        Ok(self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self + alpha · other`.
    pub fn axpy(&self, alpha: f64, other: &GradientField) -> Result<GradientField> {
        self.check_same_shape(other, "axpy")?;
        let mut data = self.data.clone();
        Zip::from(&mut data).and(&other.data).for_each(|a, &b| *a += alpha * b);
        Ok(GradientField { data })
    }

    pub fn scaled(&self, alpha: f64) -> GradientField {
        GradientField {
            data: self.data.mapv(|v| alpha * v),
        }
    }
}

/// Forward differences with zero in the last column (horizontal) and last row (vertical).
pub fn grad(u: &Image) -> GradientField {
    grad_array(u.data())
}

pub(crate) fn grad_array(u: &Array3<f64>) -> GradientField {
    let (h, w, ch) = u.dim();
    let mut data = Array4::<f64>::zeros((h, w, ch, 2));
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                let here = u[[r, c, k]];
                if c + 1 < w {
                    data[[r, c, k, 0]] = u[[r, c + 1, k]] - here;
                }
                if r + 1 < h {
                    data[[r, c, k, 1]] = u[[r + 1, c, k]] - here;
                }
            }
        }
    }
    GradientField { data }
}

/// Discrete divergence, the negative adjoint of [`grad`].
pub fn div(p: &GradientField) -> Array3<f64> {
    let (h, w, ch, _) = p.data.dim();
    let mut out = Array3::<f64>::zeros((h, w, ch));
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                let ph = p.data[[r, c, k, 0]];
                let pv = p.data[[r, c, k, 1]];
                // gradᵀ contributes −p at the pixel and +p at its forward neighbour.
                if c + 1 < w {
                    out[[r, c, k]] += ph;
                    out[[r, c + 1, k]] -= ph;
                }
                if r + 1 < h {
                    out[[r, c, k]] += pv;
                    out[[r + 1, c, k]] -= pv;
                }
            }
        }
    }
    out
}

/// Divergence wrapped as an [`Image`]; fails only if the field is smaller
/// than the minimum image size.
pub fn div_image(p: &GradientField) -> Result<Image> {
    Image::new(div(p))
}

/// Joint Euclidean norm of the `2·C` components at every pixel.
pub fn pointwise_magnitude(p: &GradientField) -> Array2<f64> {
    let (h, w, _, _) = p.data.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        p.data.slice(s![r, c, .., ..]).iter().map(|v| v * v).sum::<f64>().sqrt()
    })
}

/// Isotropic (vectorial) total variation `Σᵢ ‖(D u)ᵢ‖₂`.
pub fn total_variation(u: &Image) -> f64 {
    pointwise_magnitude(&grad(u)).sum()
}

/// Weighted total variation `Σᵢ μᵢ ‖(D u)ᵢ‖₂`.
pub fn weighted_total_variation(u: &Image, weights: &Array2<f64>) -> Result<f64> {
    let mag = pointwise_magnitude(&grad(u));
    if mag.dim() != weights.dim() {
        return Err(Error::dim(format!(
            "weight map {:?} does not match image {:?}",
            weights.dim(),
            mag.dim()
        )));
    }
    Ok(mag.iter().zip(weights.iter()).map(|(m, w)| m * w).sum())
}
