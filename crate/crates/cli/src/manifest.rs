use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    config_sha256: String,
    config: &'a C,
    cli_version: &'a str,
    library_version: &'a str,
    seeds: &'a [u64],
    threads: usize,
    wall_time_secs: f64,
}

/// SHA-256 of the compact JSON form of the effective configuration.
pub fn config_hash<C: Serialize>(config: &C) -> CliResult<String> {
    let bytes = serde_json::to_vec(config).map_err(|e| CliError::Runtime(e.into()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `run-manifest.json`, the one output that varies between reruns.
pub fn write_run_manifest<C: Serialize>(
    dir: &Path,
    command: &str,
    config: &C,
    seeds: &[u64],
    start: Instant,
) -> CliResult<()> {
    let manifest = RunManifest {
        command,
        config_sha256: config_hash(config)?,
        config,
        cli_version: env!("CARGO_PKG_VERSION"),
        library_version: iterdre::VERSION,
        seeds,
        threads: rayon::current_num_threads(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    iterdre::synthetic::write_json(&dir.join("run-manifest.json"), &manifest)?;
    Ok(())
}
