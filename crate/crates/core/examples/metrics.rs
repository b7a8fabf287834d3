//! PSNR and SSIM of the phantom under increasing noise.

use dip_restore::experiment::make_synthetic_tomo;
use dip_restore::imaging::{add_noise, mse, psnr, ssim};
use dip_restore::NoiseSpec;

fn main() -> dip_restore::Result<()> {
    let truth = make_synthetic_tomo(128, 0)?;
    println!("{:>6} {:>10} {:>8} {:>7}", "sigma", "mse", "psnr", "ssim");
    for sigma in [5.0, 10.0, 20.0, 30.0, 50.0] {
        let noisy = add_noise(&truth, &NoiseSpec::gaussian(sigma, 0))?;
        println!(
            "{sigma:>6} {:>10.3e} {:>8.3} {:>7.4}",
            mse(&noisy, &truth)?,
            psnr(&noisy, &truth)?,
            ssim(&noisy, &truth)?
        );
    }
    Ok(())
}
