//! Propositionalized baseline: count-of-true-groundings features for single
//! mode-legal literals, z-scored, fed to L2-regularized logistic regression.

use serde::{Deserialize, Serialize};

use crate::boosting::{generate_candidate_literals, LabeledExample};
use crate::error::{Error, Result};
use crate::logic::{Atom, CompiledBody, ConjunctiveBody, FactDatabase, ModeDeclaration, PredicateSignature};
use crate::model::{head_counts, sigmoid, target_pops};

/// `count_<body>`: true groundings of a body given the example's head binding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggFeatureSpec {
    pub name: String,
    pub body: ConjunctiveBody,
}

impl AggFeatureSpec {
    pub fn new(body: ConjunctiveBody) -> Self {
        AggFeatureSpec {
            name: format!("count_{body}"),
            body,
        }
    }
}

/// One feature per mode-legal literal that shares a variable with the head.
pub fn derive_feature_specs(
    target: &PredicateSignature,
    modes: &[ModeDeclaration],
    db: &FactDatabase,
) -> Result<Vec<AggFeatureSpec>> {
    let head = target.head_atom();
    let head_vars = head.vars();
    Ok(
        generate_candidate_literals(&head, &ConjunctiveBody::empty(), modes, db)?
            .into_iter()
            .filter(|lit| lit.vars().iter().any(|v| head_vars.contains(v)))
            .map(|literal| AggFeatureSpec::new(ConjunctiveBody::new(vec![literal])))
            .collect(),
    )
}

/// Count matrix, one row per example.
pub fn propositionalize(
    examples: &[Atom],
    target: &PredicateSignature,
    specs: &[AggFeatureSpec],
    db: &FactDatabase,
) -> Result<Vec<Vec<f64>>> {
    let pops = target_pops(target, db)?;
    let head = target.head_atom();
    let head_vars: Vec<(String, usize)> = head
        .vars()
        .into_iter()
        .map(String::from)
        .zip(pops.iter().copied())
        .collect();
    let bodies = specs
        .iter()
        .map(|s| CompiledBody::compile(&head_vars, &s.body, db))
        .collect::<Result<Vec<_>>>()?;
    examples
        .iter()
        .map(|e| {
            if e.predicate != target.functor {
                return Err(Error::Typing(format!(
                    "example {e} is not an atom of target '{}'",
                    target.functor
                )));
            }
            let syms = db.ground_syms(e)?;
            bodies.iter().map(|b| Ok(head_counts(b, db, &syms)?.t as f64)).collect()
        })
        .collect()
}

/// Per-column z-scoring; constant columns keep scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(matrix: &[Vec<f64>]) -> Self {
        let d = matrix.first().map_or(0, Vec::len);
        let n = matrix.len().max(1) as f64;
        let means: Vec<f64> = (0..d).map(|j| matrix.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scales = (0..d)
            .map(|j| {
                let var = matrix.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { means, scales }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Logistic regression; `weights[0]` is the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub weights: Vec<f64>,
}

impl LrModel {
    pub fn logit(&self, row: &[f64]) -> f64 {
        self.weights[0] + row.iter().zip(&self.weights[1..]).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn probability(&self, row: &[f64]) -> f64 {
        sigmoid(self.logit(row))
    }
}

#[derive(Clone, Debug)]
pub struct LrFit {
    pub model: LrModel,
    /// Objective after each accepted step, starting from the initial weights.
    pub loss_history: Vec<f64>,
    pub converged: bool,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean logistic loss plus `l2/2 * |w|^2` (bias unpenalized).
pub fn lr_objective(matrix: &[Vec<f64>], labels: &[bool], l2: f64, model: &LrModel) -> f64 {
    let n = matrix.len() as f64;
    let data: f64 = matrix
        .iter()
        .zip(labels)
        .map(|(r, &y)| {
            let z = model.logit(r);
            softplus(z) - if y { z } else { 0.0 }
        })
        .sum::<f64>()
        / n;
    data + 0.5 * l2 * model.weights[1..].iter().map(|w| w * w).sum::<f64>()
}

pub fn lr_gradient(matrix: &[Vec<f64>], labels: &[bool], l2: f64, model: &LrModel) -> Vec<f64> {
    let n = matrix.len() as f64;
    let mut g = vec![0.0; model.weights.len()];
    for (r, &y) in matrix.iter().zip(labels) {
        let err = model.probability(r) - if y { 1.0 } else { 0.0 };
        g[0] += err;
        for (gj, x) in g[1..].iter_mut().zip(r) {
            *gj += err * x;
        }
    }
    for gj in &mut g {
        *gj /= n;
    }
    for (gj, w) in g[1..].iter_mut().zip(&model.weights[1..]) {
        *gj += l2 * w;
    }
    g
}

/// Gradient descent with Armijo backtracking, from zero weights.
pub fn train_lr(matrix: &[Vec<f64>], labels: &[bool], l2: f64, max_iters: usize, tol: f64) -> Result<LrFit> {
    if matrix.is_empty() || matrix.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} feature rows for {} labels",
            matrix.len(),
            labels.len()
        )));
    }
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(Error::Argument("logistic regression needs both classes".into()));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::Argument(format!("l2 penalty must be non-negative, got {l2}")));
    }
    let d = matrix[0].len();
    if matrix.iter().any(|r| r.len() != d || r.iter().any(|x| !x.is_finite())) {
        return Err(Error::Argument(
            "feature rows must be finite and of equal length".into(),
        ));
    }

    let mut model = LrModel {
        weights: vec![0.0; d + 1],
    };
    let mut loss = lr_objective(matrix, labels, l2, &model);
    let mut history = vec![loss];
    let mut step: f64 = 1.0;
    let mut converged = false;
    for _ in 0..max_iters {
        let g = lr_gradient(matrix, labels, l2, &model);
        if g.iter().all(|x| x.abs() <= tol) {
            converged = true;
            break;
        }
        let g2: f64 = g.iter().map(|x| x * x).sum();
        step = (step * 2.0).min(1e3);
        let accepted = loop {
            let trial = LrModel {
                weights: model.weights.iter().zip(&g).map(|(w, gj)| w - step * gj).collect(),
            };
            let trial_loss = lr_objective(matrix, labels, l2, &trial);
            if trial_loss <= loss - 0.5 * step * g2 {
                break Some((trial, trial_loss));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        match accepted {
            Some((m, l)) => {
                model = m;
                loss = l;
                history.push(l);
            }
            None => break,
        }
    }
    Ok(LrFit {
        model,
        loss_history: history,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggLrConfig {
    pub l2: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for AggLrConfig {
    fn default() -> Self {
        AggLrConfig {
            l2: 1e-2,
            max_iters: 5000,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggLrModel {
    pub target: PredicateSignature,
    pub features: Vec<AggFeatureSpec>,
    pub standardizer: Standardizer,
    pub lr: LrModel,
}

impl AggLrModel {
    pub fn predict(&self, examples: &[Atom], db: &FactDatabase) -> Result<Vec<f64>> {
        Ok(propositionalize(examples, &self.target, &self.features, db)?
            .iter()
            .map(|r| self.lr.probability(&self.standardizer.apply(r)))
            .collect())
    }
}

pub fn train_agg_lr(
    examples: &[LabeledExample],
    db: &FactDatabase,
    target: &PredicateSignature,
    modes: &[ModeDeclaration],
    config: &AggLrConfig,
) -> Result<AggLrModel> {
    let features = derive_feature_specs(target, modes, db)?;
    let atoms: Vec<Atom> = examples.iter().map(|e| e.atom.clone()).collect();
    let labels: Vec<bool> = examples.iter().map(|e| e.label).collect();
    let raw = propositionalize(&atoms, target, &features, db)?;
    let standardizer = Standardizer::fit(&raw);
    let x: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.apply(r)).collect();
    let fit = train_lr(&x, &labels, config.l2, config.max_iters, config.tol)?;
    if !fit.converged {
        log::warn!("AGG-LR stopped before the gradient reached tolerance {}", config.tol);
    }
    Ok(AggLrModel {
        target: target.clone(),
        features,
        standardizer,
        lr: fit.model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::ArgMode;

    #[test]
    fn loss_never_increases() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64 - 10.0) / 3.0, (i % 3) as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 9 || i % 4 == 0).collect();
        let fit = train_lr(&x, &y, 0.01, 500, 1e-8).unwrap();
        for w in fit.loss_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(fit.converged);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = vec![vec![1.0, -2.0], vec![0.5, 0.3], vec![-1.5, 1.0]];
        let y = vec![true, false, true];
        let m = LrModel {
            weights: vec![0.1, -0.4, 0.7],
        };
        let g = lr_gradient(&x, &y, 0.3, &m);
        let h = 1e-6;
        for j in 0..3 {
            let mut up = m.clone();
            up.weights[j] += h;
            let mut dn = m.clone();
            dn.weights[j] -= h;
            let fd = (lr_objective(&x, &y, 0.3, &up) - lr_objective(&x, &y, 0.3, &dn)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8, "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(train_lr(&[vec![1.0]], &[true], 0.0, 10, 1e-6).is_err());
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let s = Standardizer::fit(&[vec![1.0, 3.0], vec![3.0, 3.0]]);
        assert_eq!(s.apply(&[1.0, 3.0]), vec![-1.0, 0.0]);
    }

    #[test]
    fn features_count_literal_groundings() {
        let mut b = FactDatabase::builder();
        b.declare_population("person", vec!["a", "b", "c"]).unwrap();
        b.declare_predicate(PredicateSignature::new("friends", vec!["person", "person"]))
            .unwrap();
        b.declare_predicate(PredicateSignature::new("cancer", vec!["person"]))
            .unwrap();
        b.add_fact(&Atom::ground("friends", &["a", "b"])).unwrap();
        b.add_fact(&Atom::ground("friends", &["a", "c"])).unwrap();
        let db = b.build().unwrap();
        let target = db.signature("cancer").unwrap().clone();
        let modes = vec![
            ModeDeclaration::new("friends", vec![(ArgMode::Input, "person"), (ArgMode::Output, "person")]),
            ModeDeclaration::new("cancer", vec![(ArgMode::Input, "person")]),
        ];
        let specs = derive_feature_specs(&target, &modes, &db).unwrap();
        let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, vec!["count_friends(A, A)", "count_friends(A, B)"]);
        let rows = propositionalize(
            &[Atom::ground("cancer", &["a"]), Atom::ground("cancer", &["b"])],
            &target,
            &specs,
            &db,
        )
        .unwrap();
        assert_eq!(rows, vec![vec![0.0, 2.0], vec![0.0, 0.0]]);
    }
}
