//! Denoise the synthetic phantom with the adaptive-weight solver and save the results.
//!
//! `cargo run --release --example denoise_phantom -- [outer_iters] [out_dir]`

use dip_restore::admm::run;
use dip_restore::experiment::make_synthetic_tomo;
use dip_restore::imaging::{add_noise, psnr, save_image};
use dip_restore::{AdmmConfig, ForwardOperator, GeneratorConfig, NoiseSpec, SolverMode};

fn main() -> dip_restore::Result<()> {
    let mut args = std::env::args().skip(1);
    let outer: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let out_dir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "denoise_phantom_out".into()));
    std::fs::create_dir_all(&out_dir)?;

    let truth = make_synthetic_tomo(64, 0)?;
    let noisy = add_noise(&truth, &NoiseSpec::gaussian(25.0, 1))?;
    println!("noisy input: {:.2} dB", psnr(&noisy, &truth)?);

    let cfg = AdmmConfig::new(SolverMode::DipWtv, outer, 5);
    let gen = GeneratorConfig {
        seed: 2,
        ..Default::default()
    };
    let out = run(&cfg, &noisy, &ForwardOperator::Identity, &gen, 3, Some(&truth))?;

    let best = out.best.expect("ground truth was given");
    println!("best: {:.2} dB at iteration {}", best.psnr, best.iteration);
    println!("final: {:.2} dB", psnr(&out.output, &truth)?);

    save_image(&truth, out_dir.join("truth.png"))?;
    save_image(&noisy, out_dir.join("noisy.png"))?;
    save_image(&out.output, out_dir.join("restored.png"))?;
    save_image(&best.image, out_dir.join("best.png"))?;
    println!("images written to {}", out_dir.display());
    Ok(())
}
