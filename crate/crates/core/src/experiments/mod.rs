//! Experiment drivers producing plot-ready tables.
//!
//! Every driver is a deterministic function of its configuration: samples are
//! drawn from seeds derived with [`derive_seed`], cells are evaluated in a
//! fixed order, and aggregates use compensated sums.

mod geometric;
mod rate;
mod saturation;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::numeric::{fit_line, mean};

pub use geometric::{
    run_geometric_benchmark, write_geometric_outputs, BenchmarkTableRow, GeometricConfig, GeometricResult, GeometricRun,
    MethodStats,
};
pub use rate::{run_rate_study, write_rate_outputs, RateCurve, RateRecord, RateStudyConfig, RateStudyResult};
pub use saturation::{
    run_mixture_saturation_study, saturation_mixture, write_saturation_outputs, SaturationCell, SaturationConfig,
    SaturationRecord, SaturationResult, SaturationTuning,
};

/// Mixes a base seed with a cell coordinate (SplitMix64 finalizer).
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(salt.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Percentile (linear interpolation) of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 95% percentile interval of `stat` over seed resamples. `values[s]` holds
/// the observations of seed `s`; resampling draws whole seeds.
pub fn bootstrap_interval<T, F>(values: &[T], resamples: usize, seed: u64, stat: F) -> Option<[f64; 2]>
where
    F: Fn(&[&T]) -> Option<f64>,
{
    if values.is_empty() || resamples == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut pick: Vec<&T> = Vec::with_capacity(values.len());
    for _ in 0..resamples {
        pick.clear();
        for _ in 0..values.len() {
            pick.push(&values[rng.random_range(0..values.len())]);
        }
        if let Some(s) = stat(&pick) {
            if s.is_finite() {
                stats.push(s);
            }
        }
    }
    if stats.is_empty() {
        return None;
    }
    stats.sort_by(f64::total_cmp);
    Some([percentile(&stats, 0.025), percentile(&stats, 0.975)])
}

/// Slope of `log y` against `log x`, with residuals.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, Vec<f64>)> {
    if ys.iter().any(|&y| !(y > 0.0 && y.is_finite())) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let fit = fit_line(&lx, &ly)?;
    let residuals = lx.iter().zip(&ly).map(|(x, y)| y - (fit.intercept + fit.slope * x)).collect();
    Some((fit.slope, fit.intercept, residuals))
}

/// Sidecar written next to every experiment output.
#[derive(Debug, Clone, Serialize)]
pub struct OutputManifest<'a, C: Serialize> {
    pub experiment: &'a str,
    pub version: &'a str,
    pub config: &'a C,
    pub seeds: &'a [u64],
    pub files: Vec<String>,
}

pub(crate) fn write_manifest<C: Serialize>(
    dir: &Path,
    name: &str,
    experiment: &str,
    config: &C,
    seeds: &[u64],
    files: &[&str],
) -> Result<()> {
    let manifest = OutputManifest {
        experiment,
        version: env!("CARGO_PKG_VERSION"),
        config,
        seeds,
        files: files.iter().map(|f| f.to_string()).collect(),
    };
    crate::synthetic::write_json(&dir.join(name), &manifest)
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(mean(values))
    }
}
