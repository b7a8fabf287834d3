//! Emit a line profile through a low-contrast insert and print it as a coarse table.
//!
//! `cargo run --release --example line_profiles -- [outer_iters]`

use dip_restore::experiment::{run_experiment, ExperimentConfig};

fn main() -> dip_restore::Result<()> {
    let outer: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let dir = std::env::temp_dir().join("dip_restore_profiles");
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{
            "schema_version": 1,
            "phantom": {{"size": 128, "seed": 0}},
            "degradation": {{"sigma": 25}},
            "method": {{"mode": "dip_wtv", "outer_iters": {outer}, "inner_iters": 5}},
            "seeds": {{"noise": 1, "weights": 2, "input": 3}},
            "output_dir": "{}",
            "emit": {{"profiles": [90]}}
        }}"#,
        dir.display()
    ))?;
    run_experiment(&cfg)?;
    let mut rdr = csv::Reader::from_path(dir.join("profiles_90.csv"))?;
    println!("column  truth  noisy  restored");
    for rec in rdr.records().step_by(8) {
        let rec = rec?;
        let v: Vec<f64> = rec.iter().skip(1).map(|x| x.parse().unwrap_or(f64::NAN)).collect();
        println!("{:>6}  {:.3}  {:.3}  {:.3}", &rec[0], v[0], v[1], v[2]);
    }
    Ok(())
}
