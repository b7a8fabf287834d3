//! Deblur and denoise with a Gaussian forward operator.
//!
//! `cargo run --release --example blur_operator -- [outer_iters]`

use dip_restore::admm::run;
use dip_restore::experiment::make_synthetic_tomo;
use dip_restore::imaging::{add_noise, psnr};
use dip_restore::operators::Kernel;
use dip_restore::{AdmmConfig, ForwardOperator, GeneratorConfig, NoiseSpec, SolverMode};

fn main() -> dip_restore::Result<()> {
    let outer: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let truth = make_synthetic_tomo(64, 1)?;
    let blur = ForwardOperator::Convolution(Kernel::gaussian(7, 1.5)?);
    let observed = add_noise(&blur.apply(&truth)?, &NoiseSpec::gaussian(5.0, 2))?;
    println!("observation: {:.2} dB", psnr(&observed, &truth)?);

    let gen = GeneratorConfig {
        seed: 3,
        ..Default::default()
    };
    for mode in [SolverMode::Dip, SolverMode::DipWtv] {
        let cfg = AdmmConfig::new(mode, outer, 5);
        let out = run(&cfg, &observed, &blur, &gen, 4, Some(&truth))?;
        let best = out.best.expect("ground truth was given");
        println!(
            "{mode}: best {:.2} dB at {}, final {:.2} dB",
            best.psnr,
            best.iteration,
            psnr(&out.output, &truth)?
        );
    }
    Ok(())
}
