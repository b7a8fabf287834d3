use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Seeds};
use super::phantom::make_synthetic_tomo;
use crate::admm::{run_observed, IterationRecord, Problem, RunObserver, RunOutcome, RunTrace, SolverMode};
use crate::error::{Error, Result};
use crate::generator::{save_checkpoint, GeneratorParams};
use crate::imaging::{add_noise, line_profile, load_image, psnr, save_image, Image};
use crate::operators::{ForwardOperator, Kernel};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Ground truth, observation and operator of one experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub ground_truth: Image,
    pub observed: Image,
    pub operator: ForwardOperator,
}

/// Loads or synthesizes the ground truth and applies blur plus noise.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let ground_truth = match (&cfg.phantom, &cfg.input_path) {
        (Some(p), _) => make_synthetic_tomo(p.size, p.seed)?,
        (None, Some(path)) => load_image(path, cfg.grayscale)?,
        (None, None) => return Err(Error::config("input_path", "one of input_path or phantom is required")),
    };
    let operator = match &cfg.degradation.blur_kernel_path {
        Some(path) => ForwardOperator::Convolution(Kernel::load(path)?),
        None => ForwardOperator::Identity,
    };
    let blurred = operator.apply(&ground_truth)?;
    let observed = add_noise(&blurred, &cfg.noise_spec())?;
    Ok(PreparedData {
        ground_truth,
        observed,
        operator,
    })
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: SolverMode,
    pub noisy_psnr: f64,
    pub best_psnr: f64,
    pub best_ssim: Option<f64>,
    pub best_iteration: usize,
    pub final_psnr: f64,
    pub final_ssim: Option<f64>,
    pub stability_gap: f64,
    pub iterations: usize,
}

impl RunSummary {
    pub fn from_trace(mode: SolverMode, noisy_psnr: f64, trace: &RunTrace) -> Result<Self> {
        let last = trace
            .records
            .last()
            .ok_or_else(|| Error::Protocol("empty trace".into()))?;
        let best = trace
            .records
            .iter()
            .filter(|r| r.psnr.is_some())
            .fold(None::<&IterationRecord>, |acc, r| match acc {
                Some(b) if b.psnr >= r.psnr => Some(b),
                _ => Some(r),
            })
            .ok_or_else(|| Error::Protocol("trace carries no PSNR values".into()))?;
        let best_psnr = best.psnr.unwrap_or(f64::NAN);
        let final_psnr = last.psnr.unwrap_or(f64::NAN);
        Ok(RunSummary {
            mode,
            noisy_psnr,
            best_psnr,
            best_ssim: best.ssim,
            best_iteration: best.iteration,
            final_psnr,
            final_ssim: last.ssim,
            stability_gap: best_psnr - final_psnr,
            iterations: last.iteration,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    /// SHA-256 of the resolved config as pretty JSON.
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub files: Vec<String>,
    pub summary: RunSummary,
}

/// Everything a finished experiment produced.
#[derive(Debug)]
pub struct ExperimentResult {
    pub summary: RunSummary,
    pub outcome: RunOutcome,
    pub data: PreparedData,
    pub files: Vec<PathBuf>,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_json().as_bytes()))
}

struct CheckpointWriter {
    dir: PathBuf,
    every: usize,
    written: Vec<PathBuf>,
}

impl RunObserver for CheckpointWriter {
    fn on_iteration(&mut self, record: &IterationRecord, output: &Image, params: &GeneratorParams) -> Result<()> {
        if self.every == 0 || !record.iteration.is_multiple_of(self.every) {
            return Ok(());
        }
        fs::create_dir_all(&self.dir)?;
        let stem = format!("iter_{:06}", record.iteration);
        let bin = self.dir.join(format!("{stem}.bin"));
        let png = self.dir.join(format!("{stem}.png"));
        save_checkpoint(params, &bin)?;
        save_image(output, &png)?;
        log::info!("checkpoint {}", bin.display());
        self.written.extend([bin, png]);
        Ok(())
    }
}

/// Path of the parameter checkpoint written after outer iteration `k`.
pub fn checkpoint_path(output_dir: &Path, k: usize) -> PathBuf {
    output_dir.join(CHECKPOINT_DIR).join(format!("iter_{k:06}.bin"))
}

fn write_profile(path: &Path, row: usize, gt: &Image, noisy: &Image, restored: &Image) -> Result<()> {
    let (a, b, c) = (
        line_profile(gt, row)?,
        line_profile(noisy, row)?,
        line_profile(restored, row)?,
    );
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["column", "ground_truth", "noisy", "restored"])?;
    for (i, ((x, y), z)) in a.iter().zip(&b).zip(&c).enumerate() {
        w.write_record([
            i.to_string(),
            format!("{x:.17e}"),
            format!("{y:.17e}"),
            format!("{z:.17e}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one configured experiment and writes its artifacts under `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let (gt, g) = (&data.ground_truth, &data.observed);
    for &row in &cfg.emit.profiles {
        if row >= gt.height() {
            return Err(Error::config(
                "emit.profiles",
                format!("row {row} outside image height {}", gt.height()),
            ));
        }
    }
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let admm = cfg.admm_config();
    let gen_cfg = cfg.generator_config(g.channels());
    let mut observer = CheckpointWriter {
        dir: out.join(CHECKPOINT_DIR),
        every: admm.checkpoint_every,
        written: Vec::new(),
    };
    let problem = Problem {
        observed: g,
        operator: &data.operator,
        ground_truth: Some(gt),
    };
    log::info!("running {} for {}x{}", admm.mode, admm.outer_iters, admm.inner_iters);
    let outcome = run_observed(&admm, problem, &gen_cfg, cfg.seeds.input, &mut observer)?;

    let noisy_psnr = psnr(g, gt)?;
    let summary = RunSummary::from_trace(admm.mode, noisy_psnr, &outcome.trace)?;
    let mut files = Vec::new();
    let noisy_path = out.join("noisy.png");
    save_image(g, &noisy_path)?;
    files.push(noisy_path);
    if cfg.emit.restored {
        let p = out.join("restored.png");
        save_image(&outcome.output, &p)?;
        files.push(p);
    }
    if cfg.emit.best {
        if let Some(best) = &outcome.best {
            let p = out.join("best.png");
            save_image(&best.image, &p)?;
            files.push(p);
        }
    }
    if cfg.emit.trace_csv {
        let p = out.join(TRACE_FILE);
        outcome.trace.write_csv(BufWriter::new(fs::File::create(&p)?))?;
        files.push(p);
    }
    for &row in &cfg.emit.profiles {
        let p = out.join(format!("profiles_{row}.csv"));
        write_profile(&p, row, gt, g, &outcome.output)?;
        files.push(p);
    }
    files.extend(observer.written);

    let manifest_path = out.join(MANIFEST_FILE);
    let mut listed: Vec<String> = files
        .iter()
        .map(|p| p.strip_prefix(out).unwrap_or(p).to_string_lossy().into_owned())
        .collect();
    listed.push(MANIFEST_FILE.to_string());
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        seeds: cfg.seeds,
        files: listed,
        summary: summary.clone(),
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    files.push(manifest_path);
    log::info!(
        "best {:.3} dB at {}, final {:.3} dB",
        summary.best_psnr,
        summary.best_iteration,
        summary.final_psnr
    );
    Ok(ExperimentResult {
        summary,
        outcome,
        data,
        files,
    })
}
