//! Run the three solvers on one observation and print the comparison table.
//!
//! `cargo run --release --example compare_methods -- [outer_iters]`

use dip_restore::experiment::{compare_methods, write_comparison_csv, ExperimentConfig};

fn config(mode: &str, outer: usize, dir: &std::path::Path) -> dip_restore::Result<ExperimentConfig> {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "schema_version": 1,
            "phantom": {{"size": 64, "seed": 0}},
            "degradation": {{"sigma": 25}},
            "method": {{"mode": "{mode}", "outer_iters": {outer}, "inner_iters": 5, "mu": 0.05}},
            "seeds": {{"noise": 1, "weights": 2, "input": 3}},
            "output_dir": "{}"
        }}"#,
        dir.join(mode).display()
    ))
}

fn main() -> dip_restore::Result<()> {
    let outer: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let dir = std::env::temp_dir().join("dip_restore_compare");
    let cfgs = ["dip", "dip_tv", "dip_wtv"]
        .iter()
        .map(|m| config(m, outer, &dir))
        .collect::<dip_restore::Result<Vec<_>>>()?;
    let rows = compare_methods(&cfgs)?;
    write_comparison_csv(&rows, std::io::stdout().lock())?;
    println!("run directories under {}", dir.display());
    Ok(())
}
