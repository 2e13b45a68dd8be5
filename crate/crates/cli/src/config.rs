//! Run configuration: command-line flags layered over an optional TOML file.
//!
//! Every option group is a clap `Args` struct whose fields are all optional,
//! and the same struct is a TOML table. Merging is field-wise
//! `flag.or(file)`, with defaults applied last.

use std::path::{Path, PathBuf};

use anyhow::Context;
use brlr_core::{AggLrConfig, BoostConfig};
use clap::Args;
use serde::Deserialize;

use crate::UsageError;

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataOpts {
    /// Fact file (declarations and true ground atoms)
    #[arg(long)]
    pub facts: Option<PathBuf>,
    /// Positive target atoms
    #[arg(long)]
    pub pos: Option<PathBuf>,
    /// Negative target atoms; omitted means closed-world negatives
    #[arg(long)]
    pub neg: Option<PathBuf>,
    /// Mode declarations
    #[arg(long)]
    pub modes: Option<PathBuf>,
    /// Optional population declarations
    #[arg(long)]
    pub pop: Option<PathBuf>,
    /// Target predicate functor
    #[arg(long)]
    pub target: Option<String>,
}

impl DataOpts {
    fn or(self, file: DataOpts) -> DataOpts {
        DataOpts {
            facts: self.facts.or(file.facts),
            pos: self.pos.or(file.pos),
            neg: self.neg.or(file.neg),
            modes: self.modes.or(file.modes),
            pop: self.pop.or(file.pop),
            target: self.target.or(file.target),
        }
    }

    fn rebase(mut self, dir: &Path) -> DataOpts {
        for p in [
            &mut self.facts,
            &mut self.pos,
            &mut self.neg,
            &mut self.modes,
            &mut self.pop,
        ]
        .into_iter()
        .flatten()
        {
            *p = dir.join(&*p);
        }
        self
    }
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostOpts {
    /// Boosting iterations M [default: 10]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Ridge penalty lambda [default: 1000]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Maximum body literals per clause [default: 4]
    #[arg(long)]
    pub max_clause_length: Option<usize>,
    /// Beam width of the clause search [default: 1]
    #[arg(long)]
    pub beam: Option<usize>,
    /// Negatives kept per positive in each iteration [default: all]
    #[arg(long)]
    pub neg_ratio: Option<f64>,
    /// Scale applied to each learned clause [default: 1]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Start from log(pos/neg) instead of 0
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub empirical_prior: Option<bool>,
}

impl BoostOpts {
    fn or(self, file: BoostOpts) -> BoostOpts {
        BoostOpts {
            iters: self.iters.or(file.iters),
            lambda: self.lambda.or(file.lambda),
            max_clause_length: self.max_clause_length.or(file.max_clause_length),
            beam: self.beam.or(file.beam),
            neg_ratio: self.neg_ratio.or(file.neg_ratio),
            learning_rate: self.learning_rate.or(file.learning_rate),
            empirical_prior: self.empirical_prior.or(file.empirical_prior),
        }
    }
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggLrOpts {
    /// AGG-LR L2 penalty on non-bias weights [default: 0.01]
    #[arg(long)]
    pub l2: Option<f64>,
    /// AGG-LR gradient-descent iteration cap [default: 5000]
    #[arg(long)]
    pub lr_max_iters: Option<usize>,
}

impl AggLrOpts {
    fn or(self, file: AggLrOpts) -> AggLrOpts {
        AggLrOpts {
            l2: self.l2.or(file.l2),
            lr_max_iters: self.lr_max_iters.or(file.lr_max_iters),
        }
    }
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommonOpts {
    /// TOML run configuration; flags take precedence over it
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Top-level layout of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub data: DataOpts,
    #[serde(default)]
    pub boost: BoostOpts,
    #[serde(default)]
    pub agg_lr: AggLrOpts,
    #[serde(default)]
    pub cv: CvFileOpts,
    #[serde(default)]
    pub output: OutputFileOpts,
    #[serde(default)]
    pub generate: GenerateOpts,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateOpts {
    /// Number of people [default: 200]
    #[arg(long)]
    pub n_people: Option<usize>,
    /// Cancer iff at least this many friends smoke [default: 2]
    #[arg(long)]
    pub k_threshold: Option<usize>,
    /// Probability of each directed friendship [default: 0.05]
    #[arg(long)]
    pub edge_prob: Option<f64>,
    /// Label flip probability [default: 0.05]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Probability that a person smokes [default: 0.15]
    #[arg(long)]
    pub smoke_prob: Option<f64>,
}

impl GenerateOpts {
    pub fn or(self, file: GenerateOpts) -> GenerateOpts {
        GenerateOpts {
            n_people: self.n_people.or(file.n_people),
            k_threshold: self.k_threshold.or(file.k_threshold),
            edge_prob: self.edge_prob.or(file.edge_prob),
            noise: self.noise.or(file.noise),
            smoke_prob: self.smoke_prob.or(file.smoke_prob),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvFileOpts {
    pub method: Option<String>,
    pub folds: Option<usize>,
    pub lambda_grid: Option<bool>,
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputFileOpts {
    pub model_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub progress_out: Option<PathBuf>,
}

impl FileConfig {
    /// Relative paths in the file resolve against the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<FileConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
        let cfg: FileConfig =
            toml::from_str(&text).map_err(|e| UsageError(format!("config file {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: Option<PathBuf>| p.map(|p| dir.join(p));
        Ok(FileConfig {
            data: cfg.data.rebase(dir),
            cv: CvFileOpts {
                groups: rebase(cfg.cv.groups),
                ..cfg.cv
            },
            output: OutputFileOpts {
                model_out: rebase(cfg.output.model_out),
                report_out: rebase(cfg.output.report_out),
                progress_out: rebase(cfg.output.progress_out),
            },
            ..cfg
        })
    }

    pub fn for_common(common: &CommonOpts) -> anyhow::Result<FileConfig> {
        match &common.config {
            Some(p) => FileConfig::load(p),
            None => Ok(FileConfig::default()),
        }
    }
}

/// Fully merged settings shared by the training subcommands.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub data: DataOpts,
    pub boost: BoostConfig,
    pub agg_lr: AggLrConfig,
    pub seed: u64,
    pub jobs: Option<usize>,
}

pub fn resolve(
    common: &CommonOpts,
    data: DataOpts,
    boost: BoostOpts,
    agg: AggLrOpts,
    file: &mut FileConfig,
) -> anyhow::Result<Resolved> {
    let data = data.or(std::mem::take(&mut file.data));
    let b = boost.or(std::mem::take(&mut file.boost));
    let a = agg.or(std::mem::take(&mut file.agg_lr));
    let seed = common.seed.or(file.seed).unwrap_or(0);
    let d = BoostConfig::default();
    let boost = BoostConfig {
        iterations: b.iters.unwrap_or(d.iterations),
        lambda: b.lambda.unwrap_or(d.lambda),
        max_clause_length: b.max_clause_length.unwrap_or(d.max_clause_length),
        beam_width: b.beam.unwrap_or(d.beam_width),
        negative_subsample_ratio: b.neg_ratio.or(d.negative_subsample_ratio),
        seed,
        learning_rate: b.learning_rate.unwrap_or(d.learning_rate),
        empirical_prior: b.empirical_prior.unwrap_or(d.empirical_prior),
    };
    boost.validate()?;
    let da = AggLrConfig::default();
    let agg_lr = AggLrConfig {
        l2: a.l2.unwrap_or(da.l2),
        max_iters: a.lr_max_iters.unwrap_or(da.max_iters),
        tol: da.tol,
    };
    if !(agg_lr.l2 >= 0.0 && agg_lr.l2.is_finite()) {
        return Err(UsageError(format!("l2 must be non-negative, got {}", agg_lr.l2)).into());
    }
    let jobs = common.jobs.or(file.jobs);
    if jobs == Some(0) {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    Ok(Resolved {
        data,
        boost,
        agg_lr,
        seed,
        jobs,
    })
}

pub fn require<T: Clone>(value: &Option<T>, flag: &str) -> anyhow::Result<T> {
    value
        .clone()
        .ok_or_else(|| UsageError(format!("missing required option --{flag}")).into())
}
