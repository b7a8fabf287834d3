//! Reproducible experiment harness: config parsing, degradation, dispatch and artifacts.
//!
//! A run directory holds `noisy.png`, `restored.png`, `best.png`, `trace.csv`,
//! optional `profiles_<row>.csv` and `checkpoints/`, and a `manifest.json`
//! listing all of them next to the resolved config and its hash.

mod compare;
mod config;
mod phantom;
mod runner;

pub use compare::{check_comparable, compare_methods, write_comparison_csv, ComparisonRow};
pub use config::{
    parse_config, Degradation, EmitSection, ExperimentConfig, GeneratorSection, MethodSection, NoiseModel, PhantomSpec,
    Seeds, MIN_PHANTOM_SIZE, SCHEMA_VERSION,
};
pub use phantom::make_synthetic_tomo;
pub use runner::{
    checkpoint_path, config_hash, prepare_data, run_experiment, ExperimentResult, Manifest, PreparedData, RunSummary,
    CHECKPOINT_DIR, MANIFEST_FILE, TRACE_FILE,
};
