//! Show how the space-variant weights respond to edges.
//!
//! Flat regions get large weights (strong smoothing), edges small ones.

use dip_restore::admm::update_mu;
use dip_restore::experiment::make_synthetic_tomo;
use dip_restore::imaging::{add_noise, save_image};
use dip_restore::operators::{grad, pointwise_magnitude};
use dip_restore::{Image, NoiseSpec};

fn main() -> dip_restore::Result<()> {
    let truth = make_synthetic_tomo(96, 4)?;
    let noisy = add_noise(&truth, &NoiseSpec::gaussian(15.0, 8))?;
    let field = grad(&truth);
    let residual_sq = noisy.distance_sq(&truth)?;
    let mu = update_mu(residual_sq, &field, 1e-8, 1e-12);
    let mag = pointwise_magnitude(&field);

    let (mut flat, mut edge) = (Vec::new(), Vec::new());
    for (m, w) in mag.iter().zip(mu.iter()) {
        if *m > 0.05 {
            edge.push(*w)
        } else if *m == 0.0 {
            flat.push(*w)
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    println!("{} flat pixels, median weight {:.3e}", flat.len(), median(&mut flat));
    println!("{} edge pixels, median weight {:.3e}", edge.len(), median(&mut edge));

    // log-scaled weight map for viewing
    let logs = mu.mapv(f64::ln);
    let (lo, hi) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let view = Image::from_fn(96, 96, 1, |(r, c, _)| (logs[[r, c]] - lo) / (hi - lo).max(1e-12))?;
    save_image(&view, "adaptive_weights.png")?;
    println!("log-weight map written to adaptive_weights.png");
    Ok(())
}
