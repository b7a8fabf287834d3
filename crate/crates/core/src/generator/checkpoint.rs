//! Binary parameter checkpoints.
//!
//! Layout, little endian: magic `DIPCKPT\0`, `u32` version, `u64` trainable
//! count, `u64` statistics count, then the trainable values, running means
//! and running variances as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::GeneratorParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DIPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(params: &GeneratorParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.values.len() as u64).to_le_bytes())?;
    w.write_all(&(params.running_mean.len() as u64).to_le_bytes())?;
    for v in params
        .values
        .iter()
        .chain(&params.running_mean)
        .chain(&params.running_var)
    {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint into the layout of `template` (same architecture).
pub fn load_checkpoint(path: impl AsRef<Path>, template: &GeneratorParams) -> Result<GeneratorParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let n_values = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf)?;
    let n_stats = u64::from_le_bytes(u64buf) as usize;
    if n_values != template.values.len() || n_stats != template.running_mean.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {n_values}/{n_stats} values, architecture needs {}/{}",
            template.values.len(),
            template.running_mean.len()
        )));
    }
    let mut read_vec = |n: usize| -> Result<Vec<f64>> {
        (0..n)
            .map(|_| {
                r.read_exact(&mut u64buf)?;
                Ok(f64::from_le_bytes(u64buf))
            })
            .collect()
    };
    let values = read_vec(n_values)?;
    let running_mean = read_vec(n_stats)?;
    let running_var = read_vec(n_stats)?;
    Ok(GeneratorParams {
        values,
        running_mean,
        running_var,
        entries: template.entries.clone(),
    })
}
