//! Functional gradient boosting for RLR.
//!
//! Each iteration computes the pointwise gradients `I(y = 1) - P(y = 1)` of
//! the log-likelihood with respect to the potential, then grows one
//! vector-weighted clause whose count features `[1, t, f]` fit those
//! gradients in regularized least squares. Clause bodies are built greedily
//! (or with a small beam) from mode-legal literals.

use std::collections::HashMap;
use std::fmt;

use indexmap::{IndexMap, IndexSet};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::nll;
use crate::logic::{
    clause_value, logvar_name, ArgMode, Atom, CompiledBody, ConjunctiveBody, FactDatabase, GroundingCounts,
    ModeDeclaration, PredicateSignature, Sym, Term, VectorWeightedClause,
};
use crate::model::{head_counts, predict, sigmoid, target_pops, RlrModel};

/// Candidates whose scores differ by no more than this are tied; the one
/// generated first wins.
pub const TIE_EPSILON: f64 = 1e-12;

/// A body is only extended when the best literal lowers the score by at least this much.
pub const MIN_IMPROVEMENT: f64 = 1e-9;

/// `{10^2, 10^2.5, 10^3, 10^3.5}`
pub fn lambda_grid() -> [f64; 4] {
    [1e2, 10f64.powf(2.5), 1e3, 10f64.powf(3.5)]
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub atom: Atom,
    pub label: bool,
}

impl LabeledExample {
    pub fn new(atom: Atom, label: bool) -> Self {
        LabeledExample { atom, label }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientExample {
    pub example: Atom,
    pub label: bool,
    pub regression_value: f64,
    pub gradient: f64,
}

/// `I(label) - sigmoid(psi)`.
pub fn gradient(label: bool, psi: f64) -> f64 {
    (label as u8 as f64) - sigmoid(psi)
}

/// `log P(y = label | psi)`, evaluated without cancellation in either tail.
pub fn log_likelihood(label: bool, psi: f64) -> f64 {
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    if label {
        -softplus(-psi)
    } else {
        -softplus(psi)
    }
}

/// Count features `[1, t, f]` of one example for one candidate clause.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CountFeature {
    pub t: u64,
    pub f: u64,
}

impl CountFeature {
    pub fn row(&self) -> [f64; 3] {
        [1.0, self.t as f64, self.f as f64]
    }
}

impl From<GroundingCounts> for CountFeature {
    fn from(c: GroundingCounts) -> Self {
        CountFeature { t: c.t, f: c.f }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RidgeFit {
    pub weights: [f64; 3],
    /// `sum_i (w . c_i - delta_i)^2 + lambda |w|^2`
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub iterations: usize,
    pub lambda: f64,
    pub max_clause_length: usize,
    pub beam_width: usize,
    /// Negatives kept per positive in each iteration; `None` keeps them all.
    pub negative_subsample_ratio: Option<f64>,
    pub seed: u64,
    /// Step size applied to each learned clause before it joins the model.
    pub learning_rate: f64,
    /// Start from `log(pos/neg)` instead of 0.
    pub empirical_prior: bool,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            iterations: 10,
            lambda: 1e3,
            max_clause_length: 4,
            beam_width: 1,
            negative_subsample_ratio: None,
            seed: 0,
            learning_rate: 1.0,
            empirical_prior: false,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be a positive finite number, got {}",
                self.lambda
            )));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if let Some(r) = self.negative_subsample_ratio {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!(
                    "negative subsample ratio must be positive, got {r}"
                )));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Pointwise gradients of the current model, in input order.
pub fn compute_gradients(
    examples: &[LabeledExample],
    model: &RlrModel,
    db: &FactDatabase,
) -> Result<Vec<GradientExample>> {
    let atoms: Vec<Atom> = examples.iter().map(|e| e.atom.clone()).collect();
    let scores = predict(model, &atoms, db)?;
    Ok(examples
        .iter()
        .zip(scores)
        .map(|(e, s)| GradientExample {
            example: e.atom.clone(),
            label: e.label,
            regression_value: s.regression_value,
            gradient: gradient(e.label, s.regression_value),
        })
        .collect())
}

/// Closed-form ridge fit of the gradients on count features:
/// `w = (C^T C + lambda I)^-1 C^T delta`.
pub fn solve_ridge(features: &[CountFeature], gradients: &[f64], lambda: f64) -> Result<RidgeFit> {
    if features.is_empty() {
        return Err(Error::Argument("ridge fit needs at least one example".into()));
    }
    if features.len() != gradients.len() {
        return Err(Error::Argument(format!(
            "{} feature rows but {} gradients",
            features.len(),
            gradients.len()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Argument(format!("lambda must be positive, got {lambda}")));
    }
    if let Some(i) = gradients.iter().position(|d| !d.is_finite()) {
        return Err(Error::Argument(format!("gradient {i} is not finite")));
    }

    // count covariance and count-weighted gradients
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for (c, &d) in features.iter().zip(gradients) {
        let row = c.row();
        for i in 0..3 {
            b[i] += row[i] * d;
            for j in i..3 {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..3 {
        for j in 0..i {
            a[i][j] = a[j][i];
        }
        a[i][i] += lambda;
    }

    let mut w = solve3(a, b);
    // one step of refinement against the assembled system
    let mut r = [0.0; 3];
    for i in 0..3 {
        r[i] = b[i] - (a[i][0] * w[0] + a[i][1] * w[1] + a[i][2] * w[2]);
    }
    let dw = solve3(a, r);
    for i in 0..3 {
        w[i] += dw[i];
    }

    let mut score = lambda * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    for (c, &d) in features.iter().zip(gradients) {
        let row = c.row();
        let e = w[0] * row[0] + w[1] * row[1] + w[2] * row[2] - d;
        score += e * e;
    }
    Ok(RidgeFit { weights: w, score })
}

/// Gaussian elimination with partial pivoting. `a` must be nonsingular.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty range");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..3 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Mode-legal literals that can extend `body` under `head`.
///
/// `+` positions take an existing logvar of the right type, `-` positions an
/// existing one or a fresh one, `#` positions every constant of the type.
/// The target predicate and literals already in the body are excluded.
pub fn generate_candidate_literals(
    head: &Atom,
    body: &ConjunctiveBody,
    modes: &[ModeDeclaration],
    db: &FactDatabase,
) -> Result<Vec<Atom>> {
    let usable: Vec<&ModeDeclaration> = modes.iter().filter(|m| m.predicate != head.predicate).collect();
    if usable.is_empty() {
        return Err(Error::Config(format!(
            "no mode declarations for predicates other than the target '{}'",
            head.predicate
        )));
    }
    for sig in db.signatures() {
        if sig.functor != head.predicate && !usable.iter().any(|m| m.predicate == sig.functor) {
            return Err(Error::Config(format!(
                "missing mode declaration for predicate '{}'",
                sig.functor
            )));
        }
    }
    for m in &usable {
        let sig = db
            .signature(&m.predicate)
            .ok_or_else(|| Error::Config(format!("mode for undeclared predicate '{}'", m.predicate)))?;
        if *sig != m.signature() {
            return Err(Error::Config(format!("mode {m} does not match signature {sig}")));
        }
    }

    let mut types: IndexMap<String, usize> = IndexMap::new();
    db.infer_var_types(std::iter::once(head).chain(&body.literals), &mut types)?;
    let existing: Vec<(String, String)> = types
        .iter()
        .map(|(v, &p)| (v.clone(), db.population_name(p).to_string()))
        .collect();

    let taken: std::collections::HashSet<&str> = existing.iter().map(|(v, _)| v.as_str()).collect();
    let mut fresh_names = Vec::new();
    let mut k = existing.len();
    let max_outputs = usable.iter().map(|m| m.args.len()).max().unwrap_or(0);
    while fresh_names.len() < max_outputs {
        let name = logvar_name(k);
        if !taken.contains(name.as_str()) {
            fresh_names.push(name);
        }
        k += 1;
    }

    #[derive(Clone)]
    enum Choice {
        Existing(String),
        Fresh,
        Constant(String),
    }

    let mut out: IndexSet<Atom> = IndexSet::new();
    for m in usable {
        let options: Vec<Vec<Choice>> = m
            .args
            .iter()
            .map(|(mode, ty)| {
                let same_type = existing
                    .iter()
                    .filter(|(_, t)| t == ty)
                    .map(|(v, _)| Choice::Existing(v.clone()));
                match mode {
                    ArgMode::Input => same_type.collect(),
                    ArgMode::Output => same_type.chain(std::iter::once(Choice::Fresh)).collect(),
                    ArgMode::Constant => db
                        .population(ty)
                        .map(|p| p.constants.iter().cloned().map(Choice::Constant).collect())
                        .unwrap_or_default(),
                }
            })
            .collect();
        if options.iter().any(Vec::is_empty) {
            continue;
        }
        let mut idx = vec![0usize; options.len()];
        'product: loop {
            let mut fresh = 0;
            let args = idx
                .iter()
                .zip(&options)
                .map(|(&i, opts)| match &opts[i] {
                    Choice::Existing(v) => Term::Var(v.clone()),
                    Choice::Fresh => {
                        fresh += 1;
                        Term::Var(fresh_names[fresh - 1].clone())
                    }
                    Choice::Constant(c) => Term::Const(c.clone()),
                })
                .collect();
            let atom = Atom::new(m.predicate.clone(), args);
            if !body.literals.contains(&atom) {
                out.insert(atom);
            }
            let mut pos = idx.len();
            loop {
                if pos == 0 {
                    break 'product;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < options[pos].len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
    Ok(out.into_iter().collect())
}

/// The outcome of one clause search.
#[derive(Clone, Debug, PartialEq)]
pub struct ClauseFit {
    pub clause: VectorWeightedClause,
    pub score: f64,
    /// Score of the body-less fit, then of the best body after each extension.
    pub step_scores: Vec<f64>,
}

struct SearchData<'a> {
    db: &'a FactDatabase,
    head: Atom,
    head_vars: Vec<(String, usize)>,
    examples: Vec<Vec<Sym>>,
    deltas: Vec<f64>,
    lambda: f64,
}

impl SearchData<'_> {
    fn score(&self, body: &ConjunctiveBody) -> Result<RidgeFit> {
        let compiled = CompiledBody::compile(&self.head_vars, body, self.db)?;
        let features = self
            .examples
            .iter()
            .map(|ex| head_counts(&compiled, self.db, ex).map(CountFeature::from))
            .collect::<Result<Vec<_>>>()?;
        solve_ridge(&features, &self.deltas, self.lambda)
    }
}

#[derive(Clone)]
struct Node {
    body: ConjunctiveBody,
    fit: RidgeFit,
}

fn body_key(body: &ConjunctiveBody) -> String {
    let mut lits: Vec<String> = body.literals.iter().map(ToString::to_string).collect();
    lits.sort();
    lits.join(";")
}

/// Grow one vector-weighted clause for the given gradients.
pub fn fit_regression_clause(
    grads: &[GradientExample],
    db: &FactDatabase,
    target: &PredicateSignature,
    modes: &[ModeDeclaration],
    config: &BoostConfig,
) -> Result<ClauseFit> {
    if grads.is_empty() {
        return Err(Error::Argument("clause fit needs at least one gradient example".into()));
    }
    config.validate()?;
    let pops = target_pops(target, db)?;
    let examples = grads
        .iter()
        .map(|g| db.ground_syms(&g.example))
        .collect::<Result<Vec<_>>>()?;
    let deltas = grads.iter().map(|g| g.gradient).collect();
    let data = search_data(db, target, &pops, examples, deltas, config.lambda);
    search_clause(&data, modes, config)
}

fn search_data<'a>(
    db: &'a FactDatabase,
    target: &PredicateSignature,
    pops: &[usize],
    examples: Vec<Vec<Sym>>,
    deltas: Vec<f64>,
    lambda: f64,
) -> SearchData<'a> {
    let head = target.head_atom();
    let head_vars = head
        .vars()
        .into_iter()
        .zip(pops)
        .map(|(v, &p)| (v.to_string(), p))
        .collect();
    SearchData {
        db,
        head,
        head_vars,
        examples,
        deltas,
        lambda,
    }
}

fn search_clause(data: &SearchData, modes: &[ModeDeclaration], config: &BoostConfig) -> Result<ClauseFit> {
    let root = Node {
        body: ConjunctiveBody::empty(),
        fit: data.score(&ConjunctiveBody::empty())?,
    };
    let mut step_scores = vec![root.fit.score];
    let mut best = root.clone();
    let mut beam = vec![root];
    let mut cache: HashMap<String, RidgeFit> = HashMap::new();

    for _ in 0..config.max_clause_length {
        let mut children: Vec<Node> = Vec::new();
        let mut seen: std::collections::HashSet<String> = std::collections::HashSet::new();
        for node in &beam {
            let candidates = generate_candidate_literals(&data.head, &node.body, modes, data.db)?;
            let bodies: Vec<(String, ConjunctiveBody)> = candidates
                .into_iter()
                .map(|lit| {
                    let b = node.body.with(lit);
                    (body_key(&b), b)
                })
                .collect();
            let fits: Vec<Result<RidgeFit>> = bodies
                .par_iter()
                .map(|(key, b)| match cache.get(key) {
                    Some(fit) => Ok(*fit),
                    None => data.score(b),
                })
                .collect();
            for ((key, body), fit) in bodies.into_iter().zip(fits) {
                let fit = fit?;
                cache.insert(key.clone(), fit);
                if fit.score < node.fit.score - MIN_IMPROVEMENT && seen.insert(key) {
                    children.push(Node { body, fit });
                }
            }
        }
        if children.is_empty() {
            break;
        }
        beam = take_best(children, config.beam_width);
        if beam[0].fit.score < best.fit.score - TIE_EPSILON {
            best = beam[0].clone();
        }
        step_scores.push(beam[0].fit.score);
    }

    let clause = VectorWeightedClause::new(data.head.clone(), best.body, best.fit.weights)?;
    Ok(ClauseFit {
        clause,
        score: best.fit.score,
        step_scores,
    })
}

/// Up to `k` lowest-scoring nodes; near-ties go to the earlier node.
fn take_best(mut nodes: Vec<Node>, k: usize) -> Vec<Node> {
    let mut picked = Vec::with_capacity(k.min(nodes.len()));
    while picked.len() < k && !nodes.is_empty() {
        let mut arg = 0;
        for (i, n) in nodes.iter().enumerate().skip(1) {
            if n.fit.score < nodes[arg].fit.score - TIE_EPSILON {
                arg = i;
            }
        }
        picked.push(nodes.remove(arg));
    }
    picked
}

/// One line of the training progress log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `None` for iteration 0 (the prior alone).
    pub clause: Option<VectorWeightedClause>,
    pub training_nll: f64,
}

pub const PROGRESS_HEADER: &str = "# iteration\tclause\tweights\ttraining_nll";

impl fmt::Display for IterationRecord {
    /// `iteration<TAB>head :- body<TAB>[w0, w1, w2]<TAB>nll`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.clause {
            Some(c) => {
                let [w0, w1, w2] = c.weights;
                write!(
                    f,
                    "{}\t{} :- {}\t[{w0:?}, {w1:?}, {w2:?}]\t{:?}",
                    self.iteration, c.head, c.body, self.training_nll
                )
            }
            None => write!(f, "{}\t-\t-\t{:?}", self.iteration, self.training_nll),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: RlrModel,
    /// Iterations `0..=M`.
    pub history: Vec<IterationRecord>,
}

/// Boosted RLR learning: `M` rounds of gradients plus one fitted clause each.
pub fn train(
    examples: &[LabeledExample],
    db: &FactDatabase,
    target: &PredicateSignature,
    modes: &[ModeDeclaration],
    config: &BoostConfig,
    mut progress: impl FnMut(&IterationRecord),
) -> Result<TrainOutput> {
    config.validate()?;
    let n_pos = examples.iter().filter(|e| e.label).count();
    let n_neg = examples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Argument(format!(
            "training needs both classes, got {n_pos} positive and {n_neg} negative examples"
        )));
    }
    let pops = target_pops(target, db)?;
    let syms: Vec<Vec<Sym>> = examples
        .iter()
        .map(|e| {
            if e.atom.predicate != target.functor {
                return Err(Error::Typing(format!(
                    "example {} is not an atom of target '{}'",
                    e.atom, target.functor
                )));
            }
            db.ground_syms(&e.atom)
        })
        .collect::<Result<_>>()?;
    let positives: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label).collect();
    let negatives: Vec<usize> = (0..examples.len()).filter(|&i| !examples[i].label).collect();

    let gamma = if config.empirical_prior {
        (n_pos as f64 / n_neg as f64).ln()
    } else {
        0.0
    };
    let mut model = RlrModel::new(target.clone(), gamma);
    let mut psi = vec![gamma; examples.len()];
    let training_nll = |psi: &[f64]| {
        let scored: Vec<(f64, bool)> = psi.iter().zip(examples).map(|(&z, e)| (sigmoid(z), e.label)).collect();
        nll(&scored)
    };

    let mut history = Vec::with_capacity(config.iterations + 1);
    let first = IterationRecord {
        iteration: 0,
        clause: None,
        training_nll: training_nll(&psi),
    };
    progress(&first);
    history.push(first);

    for m in 1..=config.iterations {
        let subset: Vec<usize> = match config.negative_subsample_ratio {
            None => (0..examples.len()).collect(),
            Some(ratio) => {
                let want = ((ratio * n_pos as f64).ceil() as usize).min(n_neg);
                let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed(config.seed, m));
                let mut picked: Vec<usize> = sample(&mut rng, n_neg, want)
                    .into_iter()
                    .map(|i| negatives[i])
                    .collect();
                picked.extend(&positives);
                picked.sort_unstable();
                picked
            }
        };
        let data = search_data(
            db,
            target,
            &pops,
            subset.iter().map(|&i| syms[i].clone()).collect(),
            subset.iter().map(|&i| gradient(examples[i].label, psi[i])).collect(),
            config.lambda,
        );
        let fit = search_clause(&data, modes, config)?;
        let mut clause = fit.clause;
        for w in &mut clause.weights {
            *w *= config.learning_rate;
        }

        let compiled = CompiledBody::compile(&data.head_vars, &clause.body, db)?;
        let contributions = syms
            .par_iter()
            .map(|ex| head_counts(&compiled, db, ex).map(|c| clause_value(&clause.weights, c)))
            .collect::<Result<Vec<f64>>>()?;
        for (p, c) in psi.iter_mut().zip(contributions) {
            *p += c;
        }
        model.push(clause.clone())?;

        let record = IterationRecord {
            iteration: m,
            clause: Some(clause),
            training_nll: training_nll(&psi),
        };
        log::info!("{record}");
        progress(&record);
        history.push(record);
    }

    Ok(TrainOutput { model, history })
}

fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iteration as u64)
}
