use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "iterdre", version, about = "Iterated Tikhonov density-ratio estimation")]
pub struct Cli {
    /// Worker threads (default: all available cores; 1 runs serially).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log progress at debug level.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a known density ratio.
    Generate(GenerateArgs),
    /// Fit a ratio model to a dataset, optionally selecting lambda and t.
    Fit(FitArgs),
    /// Benchmark on random Gaussian-mixture pairs.
    Benchmark(BenchmarkArgs),
    /// Error-versus-sample-size study on the known-regularity problem.
    RateStudy(RateStudyArgs),
    /// Non-iterated versus iterated KuLSIF on 1-D mixtures.
    Saturation(SaturationArgs),
    /// Importance-weighted ensemble of candidate predictions.
    Ensemble(EnsembleArgs),
}

/// Reads the config file (if any) and fills every field the command line
/// left unset.
pub trait Merge: Sized + DeserializeOwned + Serialize {
    fn config_path(&self) -> Option<&Path>;
    fn fill_from(&mut self, file: Self);

    fn resolve(mut self) -> CliResult<Self> {
        if let Some(path) = self.config_path() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            let file: Self = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
            self.fill_from(file);
        }
        Ok(self)
    }
}

macro_rules! mergeable {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl Merge for $ty {
            fn config_path(&self) -> Option<&Path> {
                self.config.as_deref()
            }

            fn fill_from(&mut self, file: Self) {
                $( if self.$field.is_none() { self.$field = file.$field; } )*
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Geometric,
    Regularity,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateArgs {
    /// JSON config; keys mirror the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Problem family.
    #[arg(long, value_enum)]
    pub kind: Option<DatasetKind>,
    /// Seed for problem parameters and draws [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dimension of the geometric problem [default: 50].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Numerator draws (geometric) [default: 1000].
    #[arg(long)]
    pub m: Option<usize>,
    /// Denominator draws (geometric) [default: 1000].
    #[arg(long)]
    pub n: Option<usize>,
    /// Total draws for the regularity problem, split by the class prior [default: 1000].
    #[arg(long)]
    pub size: Option<usize>,
    /// Even smoothness exponent of the regularity problem [default: 2].
    #[arg(long)]
    pub alpha: Option<u32>,
    /// Source-condition index of the regularity problem [default: 1.25].
    #[arg(long)]
    pub r: Option<f64>,
    /// Quadrature grid size of the regularity problem [default: 4096].
    #[arg(long)]
    pub grid_size: Option<usize>,
}
mergeable!(GenerateArgs { kind, seed, out, dim, m, n, size, alpha, r, grid_size });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
    Sobolev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Balanced,
    Pooled,
}

impl From<Weighting> for iterdre::SampleWeighting {
    fn from(w: Weighting) -> Self {
        match w {
            Weighting::Balanced => iterdre::SampleWeighting::Balanced,
            Weighting::Pooled => iterdre::SampleWeighting::Pooled,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    /// JSON config; keys mirror the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset CSV with header label,x1,...,xd.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Loss family: kulsif, lr, exp or sq [default: kulsif].
    #[arg(long)]
    pub family: Option<String>,
    /// Kernel [default: gaussian].
    #[arg(long, value_enum)]
    pub kernel: Option<KernelKind>,
    /// Gaussian bandwidth [default: median pairwise distance].
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Sobolev kernel order [default: 2].
    #[arg(long)]
    pub order: Option<u32>,
    /// Regularization strength [default: 0.01].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Number of Tikhonov iterations [default: 1].
    #[arg(long)]
    pub t: Option<usize>,
    /// Sample weighting of the data term [default: balanced].
    #[arg(long, value_enum)]
    pub weighting: Option<Weighting>,
    /// Target precision of the final CG iterate [default: 1e-6].
    #[arg(long)]
    pub target_eps: Option<f64>,
    /// Select lambda and t on a validation split instead of using --lambda/--t.
    #[arg(long)]
    pub select: Option<bool>,
    /// Lambda grid for --select [default: 1e-6,...,1e4].
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Iteration grid for --select [default: 1,...,10].
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Option<Vec<usize>>,
    /// Split fractions for --select [default: 0.8,0.2].
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
    /// Split seed for --select [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
}
mergeable!(FitArgs {
    data, family, kernel, bandwidth, order, lambda, t, weighting, target_eps, select, lambda_grid, t_grid, split,
    seed, out
});

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkArgs {
    /// JSON config; keys mirror the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Families to compare [default: kulsif].
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    /// Number of random datasets [default: 5].
    #[arg(long)]
    pub datasets: Option<usize>,
    /// Seed for dataset parameters [default: 0].
    #[arg(long)]
    pub dataset_seed: Option<u64>,
    /// Dimension [default: 10].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Draws per distribution [default: 1000].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Number of draws per dataset; seeds are 0..N [default: 5].
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Lambda grid [default: 1e-6,...,1e4].
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Iteration grid of the iterated column [default: 1,...,10].
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Option<Vec<usize>>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
}
mergeable!(BenchmarkArgs { families, datasets, dataset_seed, dim, samples, seeds, lambda_grid, t_grid, out });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateStudyArgs {
    /// JSON config; keys mirror the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Even smoothness exponent [default: 2].
    #[arg(long)]
    pub alpha: Option<u32>,
    /// Source-condition index [default: 1.25].
    #[arg(long)]
    pub r: Option<f64>,
    /// Iteration counts to compare [default: 1,8].
    #[arg(long, value_delimiter = ',')]
    pub t_values: Option<Vec<usize>>,
    /// Pooled sample sizes [default: 250,500,1000,2000,4000].
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Number of seeds; seeds are 0..N [default: 10].
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Constants of the lambda schedule [default: 0.1,1,10].
    #[arg(long, value_delimiter = ',')]
    pub c_values: Option<Vec<f64>>,
    /// Quadrature grid size [default: 4096].
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Loss family [default: lr].
    #[arg(long)]
    pub family: Option<String>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
}
mergeable!(RateStudyArgs { alpha, r, t_values, sizes, seeds, c_values, grid_size, family, out });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationArgs {
    /// JSON config; keys mirror the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Component counts of the numerator mixture [default: 1,2,3].
    #[arg(long, value_delimiter = ',')]
    pub components: Option<Vec<usize>>,
    /// Draws per distribution [default: 400,800,1600].
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Number of seeds; seeds are 0..N [default: 10].
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Lambda grid [default: 1e-6,...,1e4].
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Iteration grid of the iterated fit [default: 1,...,10].
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Option<Vec<usize>>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
}
mergeable!(SaturationArgs { components, sizes, seeds, lambda_grid, t_grid, out });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    Weighted,
    Unweighted,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleArgs {
    /// JSON config; keys mirror the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Source candidate files, sample_id,c1,...,ck.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<PathBuf>>,
    /// Source labels, sample_id,label.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Importance weights, sample_id,weight.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Ratio model JSON used instead of --weights.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Source features for --model, sample_id,x1,...,xd.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Target candidate files [default: the source candidates].
    #[arg(long, value_delimiter = ',')]
    pub target_candidates: Option<Vec<PathBuf>>,
    /// Target labels [default: the source labels].
    #[arg(long)]
    pub target_labels: Option<PathBuf>,
    /// Truncation thresholds [default: 1e-4,1e-3,1e-2,1e-1].
    #[arg(long, value_delimiter = ',')]
    pub rcond: Option<Vec<f64>>,
    /// Truncate before (weighted) or without (unweighted) importance weighting [default: weighted].
    #[arg(long, value_enum)]
    pub truncation: Option<Truncation>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
}
mergeable!(EnsembleArgs {
    candidates, labels, weights, model, features, target_candidates, target_labels, rcond, truncation, out
});
