use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use brlr_core::boosting::{lambda_grid, PROGRESS_HEADER};
use brlr_core::data::{parse_examples, parse_facts_into, parse_groups, parse_modes, parse_populations_into};
use brlr_core::eval::{AggregateReport, TrainedModel};
use brlr_core::{
    cross_validate, deserialize_model, generate_negatives, generate_smokes_cancer, load_bundle, read_model_target,
    serialize_model, train, Atom, BundleSources, DatabaseBuilder, DatasetBundle, FactDatabase, FoldConfig, FoldScheme,
    Method, MetricReport, NegativeRatio, RlrModel, SmokesCancerParams,
};
use clap::Args;
use serde::Serialize;

use crate::config::{require, resolve, AggLrOpts, BoostOpts, CommonOpts, DataOpts, FileConfig, GenerateOpts};
use crate::UsageError;

fn read(path: &Path, what: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {what} file {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn init_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

/// Read each file with its own error context, then assemble the dataset.
fn load_dataset(data: &DataOpts) -> Result<DatasetBundle> {
    let facts_path = require(&data.facts, "facts")?;
    let pos_path = require(&data.pos, "pos")?;
    let modes_path = require(&data.modes, "modes")?;
    let target = require(&data.target, "target")?;

    let facts = read(&facts_path, "facts")?;
    let pos = read(&pos_path, "positive examples")?;
    let modes = read(&modes_path, "modes")?;
    let neg = data.neg.as_deref().map(|p| read(p, "negative examples")).transpose()?;
    let pop = data.pop.as_deref().map(|p| read(p, "populations")).transpose()?;

    parse_modes(&modes).with_context(|| format!("in {}", modes_path.display()))?;
    parse_examples(&pos).with_context(|| format!("in {}", pos_path.display()))?;
    if let (Some(text), Some(p)) = (&neg, &data.neg) {
        parse_examples(text).with_context(|| format!("in {}", p.display()))?;
    }

    let bundle = load_bundle(&BundleSources {
        facts: &facts,
        positives: &pos,
        negatives: neg.as_deref(),
        modes: &modes,
        populations: pop.as_deref(),
        target: &target,
    })
    .with_context(|| format!("loading dataset {}", facts_path.display()))?;
    log::info!(
        "{} facts, {} positive and {} negative examples",
        bundle.db.num_facts(),
        bundle.positives.len(),
        bundle.negatives.len()
    );
    Ok(bundle)
}

#[derive(Args)]
pub struct LearnArgs {
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    boost: BoostOpts,
    /// Where to write the learned model
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Where to write the per-iteration progress log [default: <model-out>.progress]
    #[arg(long)]
    progress_out: Option<PathBuf>,
}

pub fn learn(args: LearnArgs) -> Result<()> {
    let mut file = FileConfig::for_common(&args.common)?;
    let r = resolve(&args.common, args.data, args.boost, AggLrOpts::default(), &mut file)?;
    let model_out = require(&args.model_out.or(file.output.model_out), "model-out")?;
    let progress_out = args
        .progress_out
        .or(file.output.progress_out)
        .unwrap_or_else(|| PathBuf::from(format!("{}.progress", model_out.display())));
    init_pool(r.jobs)?;
    let bundle = load_dataset(&r.data)?;

    let mut log = vec![PROGRESS_HEADER.to_string()];
    let out = train(
        &bundle.labeled(),
        &bundle.db,
        &bundle.target,
        &bundle.modes,
        &r.boost,
        |rec| {
            log::info!("{rec}");
            log.push(rec.to_string());
        },
    )?;
    write(&model_out, &serialize_model(&out.model))?;
    log.push(String::new());
    write(&progress_out, &log.join("\n"))?;
    let last = out.history.last().expect("iteration 0 is always recorded");
    eprintln!(
        "learned {} clauses; training NLL {:.6} -> {:.6}; model written to {}",
        out.model.clauses.len(),
        out.history[0].training_nll,
        last.training_nll,
        model_out.display()
    );
    Ok(())
}

/// A database for scoring `examples` under a stored model: the model's
/// target signature is declared alongside the dataset's own declarations.
fn prediction_db(model_text: &str, data: &DataOpts, examples: &[Atom]) -> Result<(FactDatabase, RlrModel)> {
    let target = read_model_target(model_text).context("reading model target")?;
    let mut b = DatabaseBuilder::default();
    if let Some(p) = &data.pop {
        parse_populations_into(&read(p, "populations")?, &mut b).with_context(|| format!("in {}", p.display()))?;
    }
    if let Some(p) = &data.modes {
        for m in parse_modes(&read(p, "modes")?).with_context(|| format!("in {}", p.display()))? {
            b.declare_predicate(m.signature())?;
        }
    }
    b.declare_predicate(target)
        .context("model target conflicts with the dataset")?;
    let facts_path = require(&data.facts, "facts")?;
    parse_facts_into(&read(&facts_path, "facts")?, &mut b).with_context(|| format!("in {}", facts_path.display()))?;
    for e in examples {
        b.observe(e)?;
    }
    let db = b.build()?;
    let model = deserialize_model(model_text, &db).context("model does not fit the dataset")?;
    Ok((db, model))
}

fn read_atoms(path: &Path, what: &str) -> Result<Vec<Atom>> {
    parse_examples(&read(path, what)?).with_context(|| format!("in {}", path.display()))
}

#[derive(Args)]
pub struct PredictArgs {
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    data: DataOpts,
    /// Model file written by `learn`
    #[arg(long)]
    model: PathBuf,
    /// Atoms to score [default: --pos then --neg]
    #[arg(long)]
    examples: Option<PathBuf>,
    /// Where to write `atom<TAB>probability` lines [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

fn example_atoms(examples: &Option<PathBuf>, data: &DataOpts) -> Result<Vec<Atom>> {
    if let Some(p) = examples {
        return read_atoms(p, "examples");
    }
    let mut atoms = Vec::new();
    for p in data.pos.iter().chain(&data.neg) {
        atoms.extend(read_atoms(p, "examples")?);
    }
    if atoms.is_empty() && data.pos.is_none() && data.neg.is_none() {
        return Err(UsageError("no examples given: use --examples, --pos or --neg".into()).into());
    }
    Ok(atoms)
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let mut file = FileConfig::for_common(&args.common)?;
    let r = resolve(
        &args.common,
        args.data,
        BoostOpts::default(),
        AggLrOpts::default(),
        &mut file,
    )?;
    init_pool(r.jobs)?;
    let examples = example_atoms(&args.examples, &r.data)?;
    let model_text = read(&args.model, "model")?;
    let (db, model) = prediction_db(&model_text, &r.data, &examples)?;
    let scores = brlr_core::predict(&model, &examples, &db)?;
    let text: String = scores
        .iter()
        .map(|s| format!("{}\t{}\n", s.example, s.probability))
        .collect();
    match &args.out {
        Some(p) => write(p, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("writing predictions"),
    }
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    data: DataOpts,
    /// Model file written by `learn`
    #[arg(long)]
    model: PathBuf,
    /// Where to write the JSON metric report [default: stdout]
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Report a wall time of 0 so output is reproducible byte for byte
    #[arg(long)]
    no_timing: bool,
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut file = FileConfig::for_common(&args.common)?;
    let r = resolve(
        &args.common,
        args.data,
        BoostOpts::default(),
        AggLrOpts::default(),
        &mut file,
    )?;
    init_pool(r.jobs)?;
    let pos_path = require(&r.data.pos, "pos")?;
    let positives = read_atoms(&pos_path, "positive examples")?;
    let given_neg = r
        .data
        .neg
        .as_deref()
        .map(|p| read_atoms(p, "negative examples"))
        .transpose()?;
    let model_text = read(&args.model, "model")?;
    let observed: Vec<Atom> = positives.iter().chain(given_neg.iter().flatten()).cloned().collect();
    let (db, model) = prediction_db(&model_text, &r.data, &observed)?;
    let negatives = match given_neg {
        Some(n) => n,
        None => generate_negatives(&db, &model.target, &positives, NegativeRatio::All, 0)?,
    };

    let start = Instant::now();
    let examples: Vec<Atom> = positives.iter().chain(&negatives).cloned().collect();
    let labels = std::iter::repeat_n(true, positives.len()).chain(std::iter::repeat_n(false, negatives.len()));
    let scored: Vec<(f64, bool)> = brlr_core::predict(&model, &examples, &db)?
        .into_iter()
        .map(|s| s.probability)
        .zip(labels)
        .collect();
    let mut report = MetricReport::from_scores("brlr", None, None, &scored)?;
    report.wall_time_s = if args.no_timing {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    };

    eprintln!(
        "AUC-ROC {:.4}  AUC-PR {:.4}  NLL {:.4}  ({} pos, {} neg)",
        report.auc_roc, report.auc_pr, report.nll, report.n_pos, report.n_neg
    );
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match args.report_out.or(file.output.report_out) {
        Some(p) => write(&p, &json),
        None => std::io::stdout().write_all(json.as_bytes()).context("writing report"),
    }
}

#[derive(Args)]
pub struct CvArgs {
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    boost: BoostOpts,
    #[command(flatten)]
    agg: AggLrOpts,
    /// brlr or agg-lr [default: brlr]
    #[arg(long)]
    method: Option<String>,
    /// Number of folds [default: 4]
    #[arg(long)]
    folds: Option<usize>,
    /// Repeat over lambda in {10^2, 10^2.5, 10^3, 10^3.5}
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    lambda_grid: Option<bool>,
    /// `group(constant, name).` file; holds out whole groups per fold
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Directory for per-fold models
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// JSON-lines file of fold and aggregate records
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Report wall times of 0 so output is reproducible byte for byte
    #[arg(long)]
    no_timing: bool,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum CvRecord {
    Fold(MetricReport),
    Aggregate(AggregateReport),
}

fn fmt_lambda(l: Option<f64>) -> String {
    l.map_or_else(|| "-".to_string(), |l| format!("{l:.1}"))
}

pub fn cv(args: CvArgs) -> Result<()> {
    let mut file = FileConfig::for_common(&args.common)?;
    let r = resolve(&args.common, args.data, args.boost, args.agg, &mut file)?;
    let method = args.method.or(file.cv.method).unwrap_or_else(|| "brlr".into());
    let k = args.folds.or(file.cv.folds).unwrap_or(4);
    let grid = args.lambda_grid.or(file.cv.lambda_grid).unwrap_or(false);
    let groups = args.groups.or(file.cv.groups);
    let model_dir = args.model_out.or(file.output.model_out);
    let report_out = args.report_out.or(file.output.report_out);
    if k < 2 {
        return Err(UsageError(format!("--folds must be at least 2, got {k}")).into());
    }
    let methods: Vec<Method> = match method.as_str() {
        "brlr" if grid => lambda_grid()
            .iter()
            .map(|&lambda| {
                Method::Brlr(brlr_core::BoostConfig {
                    lambda,
                    ..r.boost.clone()
                })
            })
            .collect(),
        "brlr" => vec![Method::Brlr(r.boost.clone())],
        "agg-lr" if grid => return Err(UsageError("--lambda-grid applies to --method brlr only".into()).into()),
        "agg-lr" => vec![Method::AggLr(r.agg_lr.clone())],
        other => return Err(UsageError(format!("unknown method '{other}' (expected brlr or agg-lr)")).into()),
    };
    init_pool(r.jobs)?;
    let bundle = load_dataset(&r.data)?;
    let scheme = match &groups {
        Some(p) => {
            FoldScheme::ByGroup(parse_groups(&read(p, "groups")?).with_context(|| format!("in {}", p.display()))?)
        }
        None => FoldScheme::Random,
    };
    let folds = FoldConfig {
        k,
        scheme,
        seed: r.seed,
    };

    let mut records = Vec::new();
    let mut aggregates = Vec::new();
    for m in &methods {
        let mut res = cross_validate(&bundle, &folds, m)?;
        if args.no_timing {
            for f in &mut res.folds {
                f.report.wall_time_s = 0.0;
            }
            let reports: Vec<MetricReport> = res.folds.iter().map(|f| f.report.clone()).collect();
            res.aggregate = AggregateReport::of(&reports);
        }
        if let Some(dir) = &model_dir {
            for f in &res.folds {
                let stem = match (grid, &f.report.lambda) {
                    (true, Some(l)) => format!("lambda{l}_fold{}", f.report.fold.unwrap_or(0)),
                    _ => format!("fold{}", f.report.fold.unwrap_or(0)),
                };
                match &f.model {
                    TrainedModel::Rlr(model) => write(&dir.join(format!("{stem}.model")), &serialize_model(model))?,
                    TrainedModel::AggLr(model) => write(
                        &dir.join(format!("{stem}.agglr.json")),
                        &(serde_json::to_string_pretty(model)? + "\n"),
                    )?,
                }
            }
        }
        records.extend(res.folds.iter().map(|f| CvRecord::Fold(f.report.clone())));
        records.push(CvRecord::Aggregate(res.aggregate.clone()));
        aggregates.push(res.aggregate);
    }

    println!(
        "{:<7} {:>8} {:>5} {:>8} {:>8} {:>8} {:>6} {:>6} {:>8}",
        "method", "lambda", "fold", "auc_roc", "auc_pr", "nll", "n_pos", "n_neg", "time_s"
    );
    for rec in &records {
        match rec {
            CvRecord::Fold(r) => println!(
                "{:<7} {:>8} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>6} {:>6} {:>8.2}",
                r.method,
                fmt_lambda(r.lambda),
                r.fold.map_or("-".into(), |f| f.to_string()),
                r.auc_roc,
                r.auc_pr,
                r.nll,
                r.n_pos,
                r.n_neg,
                r.wall_time_s
            ),
            CvRecord::Aggregate(a) => println!(
                "{:<7} {:>8} {:>5} {:>8.4} {:>8.4} {:>8.4}   (mean; std {:.4} / {:.4} / {:.4})",
                a.method,
                fmt_lambda(a.lambda),
                "mean",
                a.auc_roc.mean,
                a.auc_pr.mean,
                a.nll.mean,
                a.auc_roc.std,
                a.auc_pr.std,
                a.nll.std
            ),
        }
    }
    if aggregates.len() > 1 {
        let best = aggregates
            .iter()
            .reduce(|a, b| if b.auc_roc.mean > a.auc_roc.mean { b } else { a })
            .expect("non-empty grid");
        println!("best lambda by mean AUC-ROC: {}", fmt_lambda(best.lambda));
    }

    if let Some(p) = report_out {
        let mut text = String::new();
        for rec in &records {
            text.push_str(&serde_json::to_string(rec)?);
            text.push('\n');
        }
        write(&p, &text)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    params: GenerateOpts,
    /// Output directory
    #[arg(long)]
    out_dir: PathBuf,
    /// File stem of the dataset
    #[arg(long, default_value = "smokes")]
    name: String,
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let file = FileConfig::for_common(&args.common)?;
    let g = args.params.or(file.generate);
    let d = SmokesCancerParams::default();
    let params = SmokesCancerParams {
        n_people: g.n_people.unwrap_or(d.n_people),
        k_threshold: g.k_threshold.unwrap_or(d.k_threshold),
        edge_prob: g.edge_prob.unwrap_or(d.edge_prob),
        noise: g.noise.unwrap_or(d.noise),
        smoke_prob: g.smoke_prob.unwrap_or(d.smoke_prob),
        seed: args.common.seed.or(file.seed).unwrap_or(d.seed),
    };
    params.validate().map_err(|e| UsageError(e.to_string()))?;
    let bundle = generate_smokes_cancer(&params)?;
    let files = bundle.to_files();
    for (ext, text) in [
        ("facts", &files.facts),
        ("pos", &files.pos),
        ("neg", &files.neg),
        ("modes", &files.modes),
    ] {
        let path = args.out_dir.join(format!("{}.{ext}", args.name));
        write(&path, text)?;
        println!("{}", path.display());
    }
    eprintln!(
        "{} people, {} positive and {} negative examples (target: {})",
        params.n_people,
        bundle.positives.len(),
        bundle.negatives.len(),
        bundle.target
    );
    Ok(())
}
