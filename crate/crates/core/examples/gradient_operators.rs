//! Finite differences, total variation and the group shrinkage on a small image.

use dip_restore::admm::group_shrink;
use dip_restore::operators::{div, grad, total_variation};
use dip_restore::Image;

fn main() -> dip_restore::Result<()> {
    let ramp = Image::from_fn(8, 8, 1, |(_, c, _)| c as f64 / 7.0)?;
    let g = grad(&ramp);
    println!(
        "horizontal differences on row 0: {:?}",
        (0..8).map(|c| g.pixel(0, c)[0]).collect::<Vec<_>>()
    );
    println!("TV of the ramp: {:.4}", total_variation(&ramp));

    // <grad u, p> = -<u, div p>
    let p = g.scaled(0.5);
    let lhs = g.dot(&p)?;
    let rhs = -(ramp.data() * &div(&p)).sum();
    println!("adjoint check: {lhs:.12} vs {rhs:.12}");

    for tau in [0.0, 2.5, 5.0, 7.0] {
        println!("shrink (3, 4) by {tau}: {:?}", group_shrink(&[3.0, 4.0], tau));
    }
    Ok(())
}
