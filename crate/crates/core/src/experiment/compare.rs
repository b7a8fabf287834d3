use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::runner::{run_experiment, RunSummary};
use crate::admm::SolverMode;
use crate::error::{Error, Result};

/// One line of a method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: SolverMode,
    pub best_psnr: f64,
    pub best_ssim: Option<f64>,
    pub final_psnr: f64,
    pub final_ssim: Option<f64>,
    pub best_iteration: usize,
    pub stability_gap: f64,
}

impl From<&RunSummary> for ComparisonRow {
    fn from(s: &RunSummary) -> Self {
        ComparisonRow {
            method: s.mode,
            best_psnr: s.best_psnr,
            best_ssim: s.best_ssim,
            final_psnr: s.final_psnr,
            final_ssim: s.final_ssim,
            best_iteration: s.best_iteration,
            stability_gap: s.stability_gap,
        }
    }
}

/// Rejects config sets that do not restore the same observation.
pub fn check_comparable(cfgs: &[ExperimentConfig]) -> Result<()> {
    let first = cfgs
        .first()
        .ok_or_else(|| Error::Protocol("nothing to compare".into()))?;
    for (i, c) in cfgs.iter().enumerate().skip(1) {
        let same_input =
            c.input_path == first.input_path && c.phantom == first.phantom && c.grayscale == first.grayscale;
        if !same_input {
            return Err(Error::Protocol(format!("config {i} uses a different ground truth")));
        }
        if c.degradation != first.degradation || c.seeds.noise != first.seeds.noise {
            return Err(Error::Protocol(format!("config {i} uses a different degradation")));
        }
        if c.seeds.input != first.seeds.input {
            return Err(Error::Protocol(format!("config {i} uses a different input seed")));
        }
    }
    Ok(())
}

/// Runs every config in order and returns one row per run.
pub fn compare_methods(cfgs: &[ExperimentConfig]) -> Result<Vec<ComparisonRow>> {
    check_comparable(cfgs)?;
    cfgs.iter()
        .map(|c| run_experiment(c).map(|r| ComparisonRow::from(&r.summary)))
        .collect()
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "best_psnr",
        "best_ssim",
        "final_psnr",
        "final_ssim",
        "best_iteration",
        "stability_gap",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for r in rows {
        w.write_record([
            r.method.to_string(),
            format!("{:.6}", r.best_psnr),
            opt(r.best_ssim),
            format!("{:.6}", r.final_psnr),
            opt(r.final_ssim),
            r.best_iteration.to_string(),
            format!("{:.6}", r.stability_gap),
        ])?;
    }
    w.flush()?;
    Ok(())
}
