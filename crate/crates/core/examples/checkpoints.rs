//! Write periodic checkpoints and restore the network from one of them.

use dip_restore::experiment::{checkpoint_path, run_experiment, ExperimentConfig};
use dip_restore::generator::{build_generator, load_checkpoint, sample_input, BnMode};
use dip_restore::imaging::psnr;

fn main() -> dip_restore::Result<()> {
    let dir = std::env::temp_dir().join("dip_restore_checkpoints");
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{
            "schema_version": 1,
            "phantom": {{"size": 64, "seed": 2}},
            "degradation": {{"sigma": 20}},
            "method": {{"mode": "dip", "outer_iters": 20, "inner_iters": 5, "checkpoint_every": 5}},
            "seeds": {{"noise": 1, "weights": 2, "input": 3}},
            "output_dir": "{}"
        }}"#,
        dir.display()
    ))?;
    let result = run_experiment(&cfg)?;

    let gen_cfg = cfg.generator_config(1);
    let (net, template) = build_generator(&gen_cfg)?;
    let z = sample_input(&gen_cfg, 64, 64, cfg.seeds.input)?;
    for k in [5, 10, 15, 20] {
        let params = load_checkpoint(checkpoint_path(&cfg.output_dir, k), &template)?;
        let img = net.forward(&params, &z, BnMode::Train)?;
        let traced = result.outcome.trace.records[k - 1].psnr.unwrap_or(f64::NAN);
        println!(
            "iteration {k:>2}: reloaded {:.6} dB, traced {traced:.6} dB",
            psnr(&img, &result.data.ground_truth)?
        );
    }
    Ok(())
}
