use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
}

/// Additive noise model. `sigma` is on the 0–255 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Gaussian,
            sigma,
            seed,
        }
    }

    /// Standard deviation on the internal `[0, 1]` scale.
    pub fn unit_sigma(&self) -> f64 {
        self.sigma / 255.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidValue(format!(
                "noise sigma must be finite and non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Returns `img + η` with `η` i.i.d. `N(0, (sigma/255)²)`; the result is not clipped.
///
/// The generator is seeded from `spec.seed` inside the call, so equal seeds
/// give bit-identical output.
pub fn add_noise(img: &Image, spec: &NoiseSpec) -> Result<Image> {
    spec.validate()?;
    if spec.sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.unit_sigma()).map_err(|e| Error::InvalidValue(e.to_string()))?;
    let mut data = img.data().clone();
    for v in data.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(Image::from_array_unchecked(data))
}
