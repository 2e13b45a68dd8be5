//! Ranking metrics, per-fold reports and cross-validation.
//!
//! Scores are `(probability, label)` pairs. Tied scores are handled as
//! groups: AUC-ROC counts a tied positive/negative pair as one half, and
//! AUC-PR is the step-wise average precision over distinct thresholds.

use std::cmp::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agg_lr::{train_agg_lr, AggLrConfig, AggLrModel};
use crate::boosting::{train, BoostConfig};
use crate::data::{make_folds, DatasetBundle, FoldScheme};
use crate::error::{Error, Result};
use crate::model::{predict, RlrModel};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside the log.
pub const P_CLAMP: f64 = 1e-15;

fn class_counts(scores: &[(f64, bool)]) -> (usize, usize) {
    let p = scores.iter().filter(|s| s.1).count();
    (p, scores.len() - p)
}

fn check_finite(scores: &[(f64, bool)]) -> Result<()> {
    match scores.iter().find(|s| !s.0.is_finite()) {
        Some(s) => Err(Error::Argument(format!("non-finite score {}", s.0))),
        None => Ok(()),
    }
}

/// `(positives, negatives)` per distinct score, highest score first.
fn tie_groups(scores: &[(f64, bool)]) -> Vec<(f64, usize, usize)> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (s, y) in sorted {
        match groups.last_mut() {
            Some(g) if g.0.total_cmp(&s) == Ordering::Equal => {
                if y {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, y as usize, (!y) as usize)),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative.
pub fn auc_roc(scores: &[(f64, bool)]) -> Result<f64> {
    check_finite(scores)?;
    let (p, n) = class_counts(scores);
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC-ROC needs both classes, got {p} positive and {n} negative"
        )));
    }
    let mut neg_above = 0usize;
    let mut wins = 0.0;
    for (_, gp, gn) in tie_groups(scores) {
        // positives in this group lose to every negative above, tie with the group's negatives
        wins += gp as f64 * (n - neg_above - gn) as f64 + 0.5 * (gp * gn) as f64;
        neg_above += gn;
    }
    Ok(wins / (p as f64 * n as f64))
}

/// Area under the precision-recall curve as step-wise average precision.
pub fn auc_pr(scores: &[(f64, bool)]) -> Result<f64> {
    check_finite(scores)?;
    let (p, _) = class_counts(scores);
    if p == 0 {
        return Err(Error::UndefinedMetric("AUC-PR needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (_, gp, gn) in tie_groups(scores) {
        tp += gp;
        fp += gn;
        ap += (gp as f64 / p as f64) * (tp as f64 / (tp + fp) as f64);
    }
    Ok(ap)
}

/// Summed negative log-likelihood of the labels.
pub fn nll(scores: &[(f64, bool)]) -> f64 {
    scores
        .iter()
        .map(|&(p, y)| {
            let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            -if y { p.ln() } else { (1.0 - p).ln() }
        })
        .sum::<f64>()
}

/// `(false positive rate, true positive rate)` from (0, 0) to (1, 1).
pub fn roc_points(scores: &[(f64, bool)]) -> Result<Vec<(f64, f64)>> {
    check_finite(scores)?;
    let (p, n) = class_counts(scores);
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("ROC curve needs both classes".into()));
    }
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0, 0);
    for (_, gp, gn) in tie_groups(scores) {
        tp += gp;
        fp += gn;
        pts.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Ok(pts)
}

/// `(recall, precision)` at each distinct threshold.
pub fn pr_points(scores: &[(f64, bool)]) -> Result<Vec<(f64, f64)>> {
    check_finite(scores)?;
    let (p, _) = class_counts(scores);
    if p == 0 {
        return Err(Error::UndefinedMetric("PR curve needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0, 0);
    Ok(tie_groups(scores)
        .into_iter()
        .map(|(_, gp, gn)| {
            tp += gp;
            fp += gn;
            (tp as f64 / p as f64, tp as f64 / (tp + fp) as f64)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub lambda: Option<f64>,
    pub fold: Option<usize>,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub nll: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub wall_time_s: f64,
}

impl MetricReport {
    pub fn from_scores(method: &str, lambda: Option<f64>, fold: Option<usize>, scores: &[(f64, bool)]) -> Result<Self> {
        let (n_pos, n_neg) = class_counts(scores);
        Ok(MetricReport {
            method: method.to_string(),
            lambda,
            fold,
            auc_roc: auc_roc(scores)?,
            auc_pr: auc_pr(scores)?,
            nll: nll(scores),
            n_pos,
            n_neg,
            wall_time_s: 0.0,
        })
    }
}

/// Mean and sample standard deviation (n - 1 denominator).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub method: String,
    pub lambda: Option<f64>,
    pub folds: usize,
    pub auc_roc: MeanStd,
    pub auc_pr: MeanStd,
    pub nll: MeanStd,
    pub wall_time_s: MeanStd,
}

impl AggregateReport {
    pub fn of(reports: &[MetricReport]) -> Self {
        let col = |f: fn(&MetricReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        AggregateReport {
            method: reports.first().map(|r| r.method.clone()).unwrap_or_default(),
            lambda: reports.first().and_then(|r| r.lambda),
            folds: reports.len(),
            auc_roc: col(|r| r.auc_roc),
            auc_pr: col(|r| r.auc_pr),
            nll: col(|r| r.nll),
            wall_time_s: col(|r| r.wall_time_s),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    Brlr(BoostConfig),
    AggLr(AggLrConfig),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Brlr(_) => "brlr",
            Method::AggLr(_) => "agg-lr",
        }
    }

    fn lambda(&self) -> Option<f64> {
        match self {
            Method::Brlr(c) => Some(c.lambda),
            Method::AggLr(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum TrainedModel {
    Rlr(RlrModel),
    AggLr(AggLrModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldConfig {
    pub k: usize,
    pub scheme: FoldScheme,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub report: MetricReport,
    pub model: TrainedModel,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub folds: Vec<FoldOutcome>,
    pub aggregate: AggregateReport,
}

/// Train on each fold's training part, score its test part.
pub fn cross_validate(bundle: &DatasetBundle, folds: &FoldConfig, method: &Method) -> Result<CvResult> {
    bundle.validate()?;
    let splits = make_folds(bundle, folds.k, &folds.scheme, folds.seed)?;
    let mut outcomes = Vec::with_capacity(splits.len());
    for split in &splits {
        let start = Instant::now();
        let train_set = split.train.labeled();
        let test_atoms = split.test.examples();
        let (probs, model) = match method {
            Method::Brlr(cfg) => {
                let out = train(&train_set, &split.train.db, &bundle.target, &bundle.modes, cfg, |_| {})?;
                let probs: Vec<f64> = predict(&out.model, &test_atoms, &split.test.db)?
                    .into_iter()
                    .map(|s| s.probability)
                    .collect();
                (probs, TrainedModel::Rlr(out.model))
            }
            Method::AggLr(cfg) => {
                let m = train_agg_lr(&train_set, &split.train.db, &bundle.target, &bundle.modes, cfg)?;
                (m.predict(&test_atoms, &split.test.db)?, TrainedModel::AggLr(m))
            }
        };
        let labels = std::iter::repeat_n(true, split.test.positives.len())
            .chain(std::iter::repeat_n(false, split.test.negatives.len()));
        let scores: Vec<(f64, bool)> = probs.into_iter().zip(labels).collect();
        let mut report = MetricReport::from_scores(method.name(), method.lambda(), Some(split.fold_id), &scores)?;
        report.wall_time_s = start.elapsed().as_secs_f64();
        log::info!(
            "fold {}: auc_roc={:.4} auc_pr={:.4} nll={:.4}",
            split.fold_id,
            report.auc_roc,
            report.auc_pr,
            report.nll
        );
        outcomes.push(FoldOutcome { report, model });
    }
    let reports: Vec<MetricReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    Ok(CvResult {
        folds: outcomes,
        aggregate: AggregateReport::of(&reports),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted_rankings() {
        let s = [(0.9, true), (0.8, true), (0.3, false), (0.1, false)];
        assert_eq!(auc_roc(&s).unwrap(), 1.0);
        assert_eq!(auc_pr(&s).unwrap(), 1.0);
        let inv: Vec<_> = s.iter().map(|&(p, y)| (p, !y)).collect();
        assert_eq!(auc_roc(&inv).unwrap(), 0.0);
    }

    #[test]
    fn all_tied_scores() {
        let s = [(0.5, true), (0.5, false), (0.5, false), (0.5, true)];
        assert_eq!(auc_roc(&s).unwrap(), 0.5);
        assert_eq!(auc_pr(&s).unwrap(), 0.5);
    }

    #[test]
    fn hand_computed_average_precision() {
        // ranks: + - + -  -> AP = (1/2)(1/1) + (1/2)(2/3)
        let s = [(0.9, true), (0.7, false), (0.6, true), (0.2, false)];
        assert!((auc_pr(&s).unwrap() - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(auc_roc(&s).unwrap(), 0.75);
    }

    #[test]
    fn undefined_metrics() {
        let s = [(0.3, true), (0.4, true)];
        assert!(matches!(auc_roc(&s), Err(Error::UndefinedMetric(_))));
        assert!(auc_pr(&s).is_ok());
        assert!(matches!(auc_pr(&[(0.3, false)]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn nll_clamps_extremes() {
        let v = nll(&[(0.0, true)]);
        assert!(v.is_finite());
        assert!((v + P_CLAMP.ln()).abs() < 1e-12);
        assert!((nll(&[(0.5, true), (0.5, false)]) - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(nll(&[]), 0.0);
    }

    #[test]
    fn curves_end_at_full_recall() {
        let s = [(0.9, true), (0.7, false), (0.6, true), (0.2, false)];
        assert_eq!(*roc_points(&s).unwrap().last().unwrap(), (1.0, 1.0));
        assert_eq!(pr_points(&s).unwrap().last().unwrap().0, 1.0);
    }

    #[test]
    fn sample_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
    }
}
