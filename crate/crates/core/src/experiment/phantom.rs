use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const PHANTOM_BACKGROUND: f64 = 0.1;
pub const PHANTOM_BODY: f64 = 0.3;
pub const LOW_CONTRAST: f64 = 0.08;
pub const HIGH_CONTRAST: f64 = 0.6;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disk { cy: f64, cx: f64, r: f64 },
    Rect { cy: f64, cx: f64, hh: f64, hw: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Rect { cy, cx, hh, hw } => (y - cy).abs() <= hh && (x - cx).abs() <= hw,
        }
    }

    fn radius(&self) -> f64 {
        match *self {
            Shape::Disk { r, .. } => r,
            Shape::Rect { hh, hw, .. } => hh.hypot(hw),
        }
    }

    fn center(&self) -> (f64, f64) {
        match *self {
            Shape::Disk { cy, cx, .. } | Shape::Rect { cy, cx, .. } => (cy, cx),
        }
    }
}

/// Piecewise-constant grayscale test object of side `size` (≥ 64).
///
/// An elliptical body on a dark background holds five non-overlapping
/// inserts: large and small disks at low (+0.08) and high (+0.6) contrast
/// and a low-contrast rectangle. The seed only moves the inserts, so every
/// phantom takes exactly the values {0.1, 0.3, 0.38, 0.9}.
pub fn make_synthetic_tomo(size: usize, seed: u64) -> Result<Image> {
    if size < 64 {
        return Err(Error::dim(format!("phantom size must be at least 64, got {size}")));
    }
    let n = size as f64;
    let (cy, cx) = (n / 2.0, n / 2.0);
    let (ay, ax) = (0.40 * n, 0.44 * n);
    let inside_body = |y: f64, x: f64| ((y - cy) / ay).powi(2) + ((x - cx) / ax).powi(2) <= 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates: [(f64, bool, f64); 5] = [
        // (size as a fraction of n, is_disk, contrast)
        (0.12, true, LOW_CONTRAST),
        (0.045, true, LOW_CONTRAST),
        (0.10, true, HIGH_CONTRAST),
        (0.04, true, HIGH_CONTRAST),
        (0.07, false, LOW_CONTRAST),
    ];
    // Greedy placement; a layout that gets stuck is discarded and redrawn.
    let placed = 'layout: loop {
        let mut placed: Vec<(Shape, f64)> = Vec::with_capacity(templates.len());
        for &(frac, disk, contrast) in &templates {
            let extent = frac * n;
            let mut found = None;
            for _ in 0..200 {
                let sy = rng.random_range(cy - ay..cy + ay);
                let sx = rng.random_range(cx - ax..cx + ax);
                let candidate = if disk {
                    Shape::Disk {
                        cy: sy,
                        cx: sx,
                        r: extent,
                    }
                } else {
                    Shape::Rect {
                        cy: sy,
                        cx: sx,
                        hh: extent,
                        hw: 1.6 * extent,
                    }
                };
                let margin = candidate.radius() + 2.0;
                let fits = [(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)]
                    .iter()
                    .all(|(dy, dx)| inside_body(sy + dy * margin, sx + dx * margin));
                let clear = placed.iter().all(|(other, _)| {
                    let (oy, ox) = other.center();
                    (sy - oy).hypot(sx - ox) > candidate.radius() + other.radius() + 3.0
                });
                if fits && clear {
                    found = Some(candidate);
                    break;
                }
            }
            match found {
                Some(shape) => placed.push((shape, contrast)),
                None => continue 'layout,
            }
        }
        break placed;
    };

    Image::from_fn(size, size, 1, |(r, c, _)| {
        let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
        if !inside_body(y, x) {
            return PHANTOM_BACKGROUND;
        }
        placed
            .iter()
            .find(|(s, _)| s.contains(y, x))
            .map_or(PHANTOM_BODY, |(_, contrast)| PHANTOM_BODY + contrast)
    })
}
