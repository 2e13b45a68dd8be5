//! Dataset files, closed-world negatives, the Smokes-Cancer-Friends generator
//! and cross-validation folds.
//!
//! File set for a dataset `<name>`:
//!
//! | file            | contents                                              |
//! |-----------------|-------------------------------------------------------|
//! | `<name>.facts`  | `population`/`predicate` declarations and true atoms  |
//! | `<name>.pos`    | positive target atoms                                 |
//! | `<name>.neg`    | negative target atoms (optional: closed world)        |
//! | `<name>.modes`  | `mode: pred(+type, -type, #type).`                    |
//! | `<name>.pop`    | optional `population` declarations                    |
//!
//! All files are UTF-8 with `%` line comments.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use indexmap::{IndexMap, IndexSet};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boosting::LabeledExample;
use crate::error::{Error, Result};
use crate::logic::{
    enumerate_groundings, ArgMode, Atom, DatabaseBuilder, FactDatabase, ModeDeclaration, PredicateSignature, Term,
};
use crate::syntax::{Parser, Pos, Statement, TermStyle};

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub db: Arc<FactDatabase>,
    pub target: PredicateSignature,
    pub positives: Vec<Atom>,
    pub negatives: Vec<Atom>,
    pub modes: Vec<ModeDeclaration>,
    /// Free-form provenance lines, written as `%` comments.
    pub header: Vec<String>,
}

impl DatasetBundle {
    /// Positives first, then negatives.
    pub fn labeled(&self) -> Vec<LabeledExample> {
        self.positives
            .iter()
            .map(|a| LabeledExample::new(a.clone(), true))
            .chain(self.negatives.iter().map(|a| LabeledExample::new(a.clone(), false)))
            .collect()
    }

    pub fn examples(&self) -> Vec<Atom> {
        self.positives.iter().chain(&self.negatives).cloned().collect()
    }

    pub fn validate(&self) -> Result<()> {
        for a in self.positives.iter().chain(&self.negatives) {
            if a.predicate != self.target.functor {
                return Err(Error::Typing(format!(
                    "example {a} is not an atom of target '{}'",
                    self.target.functor
                )));
            }
            self.db.ground_syms(a)?;
        }
        let pos: HashSet<&Atom> = self.positives.iter().collect();
        if let Some(a) = self.negatives.iter().find(|a| pos.contains(a)) {
            return Err(Error::Argument(format!("{a} is listed as both positive and negative")));
        }
        Ok(())
    }

    pub fn to_files(&self) -> BundleFiles {
        let mut facts = String::new();
        for line in &self.header {
            writeln!(facts, "% {line}").unwrap();
        }
        facts.push_str(&serialize_facts(&self.db));
        BundleFiles {
            facts,
            pos: serialize_examples(&self.positives),
            neg: serialize_examples(&self.negatives),
            modes: serialize_modes(&self.modes),
        }
    }
}

/// File contents of a dataset, ready to write.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundleFiles {
    pub facts: String,
    pub pos: String,
    pub neg: String,
    pub modes: String,
}

/// Prefix a schema/typing error with its source position, keeping its kind.
fn at(pos: Pos, e: Error) -> Error {
    let loc = |m: String| format!("line {}, column {}: {m}", pos.line, pos.column);
    match e {
        Error::Schema(m) => Error::Schema(loc(m)),
        Error::Typing(m) => Error::Typing(loc(m)),
        other => other,
    }
}

/// Read declarations and facts into `builder`. Predicates must be declared
/// (here, in a mode file, or earlier) before their facts.
pub fn parse_facts_into(text: &str, builder: &mut DatabaseBuilder) -> Result<()> {
    for (stmt, pos) in Parser::new(text, TermStyle::Ground)?.statements()? {
        match stmt {
            Statement::Population { name, constants } => {
                builder.declare_population(name, constants).map_err(|e| at(pos, e))?;
            }
            Statement::Predicate(sig) => {
                builder.declare_predicate(sig).map_err(|e| at(pos, e))?;
            }
            Statement::Atom(atom) => {
                builder.add_fact(&atom).map_err(|e| at(pos, e))?;
            }
            Statement::Mode(m) => {
                return Err(Error::parse(
                    pos.line,
                    pos.column,
                    format!("mode declaration for '{}' in a fact file", m.predicate),
                ))
            }
        }
    }
    Ok(())
}

/// A self-contained fact file: declarations plus facts.
pub fn parse_facts(text: &str) -> Result<FactDatabase> {
    let mut b = DatabaseBuilder::default();
    parse_facts_into(text, &mut b)?;
    b.build()
}

/// Ground atoms, one per statement.
pub fn parse_examples(text: &str) -> Result<Vec<Atom>> {
    Parser::new(text, TermStyle::Ground)?
        .statements()?
        .into_iter()
        .map(|(stmt, pos)| match stmt {
            Statement::Atom(a) => Ok(a),
            _ => Err(Error::parse(pos.line, pos.column, "expected a ground atom")),
        })
        .collect()
}

pub fn parse_modes(text: &str) -> Result<Vec<ModeDeclaration>> {
    Parser::new(text, TermStyle::Ground)?
        .statements()?
        .into_iter()
        .map(|(stmt, pos)| match stmt {
            Statement::Mode(m) => Ok(m),
            _ => Err(Error::parse(
                pos.line,
                pos.column,
                "expected 'mode: pred(+type, -type, #type).'",
            )),
        })
        .collect()
}

/// Population declarations (`.pop` files).
pub fn parse_populations_into(text: &str, builder: &mut DatabaseBuilder) -> Result<()> {
    for (stmt, pos) in Parser::new(text, TermStyle::Ground)?.statements()? {
        match stmt {
            Statement::Population { name, constants } => {
                builder.declare_population(name, constants).map_err(|e| at(pos, e))?;
            }
            _ => {
                return Err(Error::parse(
                    pos.line,
                    pos.column,
                    "expected 'population name = {c1, c2, ...}.'",
                ))
            }
        }
    }
    Ok(())
}

/// Declarations first, then facts grouped by predicate.
pub fn serialize_facts(db: &FactDatabase) -> String {
    let mut out = String::new();
    for p in db.populations() {
        let consts: Vec<String> = p.constants.iter().map(|c| Term::Const(c.clone()).to_string()).collect();
        writeln!(out, "population {} = {{{}}}.", p.name, consts.join(", ")).unwrap();
    }
    for sig in db.signatures() {
        writeln!(out, "predicate {sig}.").unwrap();
    }
    for atom in db.facts() {
        writeln!(out, "{atom}.").unwrap();
    }
    out
}

pub fn serialize_examples(atoms: &[Atom]) -> String {
    atoms.iter().map(|a| format!("{a}.\n")).collect()
}

pub fn serialize_modes(modes: &[ModeDeclaration]) -> String {
    modes.iter().map(|m| format!("{m}\n")).collect()
}

/// Raw file contents for [`load_bundle`].
#[derive(Clone, Debug, Default)]
pub struct BundleSources<'a> {
    pub facts: &'a str,
    pub positives: &'a str,
    /// `None` means every other grounding of the target is negative.
    pub negatives: Option<&'a str>,
    pub modes: &'a str,
    pub populations: Option<&'a str>,
    pub target: &'a str,
}

/// Assemble a dataset from its files. Mode declarations double as predicate
/// signatures; the target must be declared by a mode or a `predicate` line.
pub fn load_bundle(src: &BundleSources) -> Result<DatasetBundle> {
    let mut b = DatabaseBuilder::default();
    if let Some(pop) = src.populations {
        parse_populations_into(pop, &mut b)?;
    }
    let modes = parse_modes(src.modes)?;
    for m in &modes {
        b.declare_predicate(m.signature())
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    parse_facts_into(src.facts, &mut b)?;
    if !b.has_predicate(src.target) {
        return Err(Error::Schema(format!(
            "target predicate '{}' has no mode or predicate declaration",
            src.target
        )));
    }
    let positives = parse_examples(src.positives)?;
    let negatives = match src.negatives {
        Some(text) => Some(parse_examples(text)?),
        None => None,
    };
    for a in positives.iter().chain(negatives.iter().flatten()) {
        if a.predicate != src.target {
            return Err(Error::Typing(format!(
                "example {a} is not an atom of target '{}'",
                src.target
            )));
        }
        b.observe(a)?;
    }
    let db = b.build()?;
    let target = db.signature(src.target).cloned().expect("target declared above");
    let negatives = match negatives {
        Some(n) => n,
        None => generate_negatives(&db, &target, &positives, NegativeRatio::All, 0)?,
    };
    let bundle = DatasetBundle {
        db: Arc::new(db),
        target,
        positives,
        negatives,
        modes,
        header: Vec::new(),
    };
    bundle.validate()?;
    Ok(bundle)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NegativeRatio {
    All,
    PerPositive(f64),
}

/// Closed-world negatives: groundings of the target that are not positive.
///
/// `PerPositive(r)` draws a seeded uniform sample of `ceil(r * |positives|)`
/// of them, kept in grounding order. Asking for more than exist returns all.
pub fn generate_negatives(
    db: &FactDatabase,
    target: &PredicateSignature,
    positives: &[Atom],
    ratio: NegativeRatio,
    seed: u64,
) -> Result<Vec<Atom>> {
    let head = target.head_atom();
    let pos: HashSet<&Atom> = positives.iter().collect();
    for p in positives {
        db.ground_syms(p)?;
    }
    let all: Vec<Atom> = enumerate_groundings(&head, db)?
        .map(|theta| head.substitute(&theta))
        .filter(|a| !pos.contains(a))
        .collect();
    match ratio {
        NegativeRatio::All => Ok(all),
        NegativeRatio::PerPositive(r) => {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Argument(format!("negative ratio must be positive, got {r}")));
            }
            let want = (r * positives.len() as f64).ceil() as usize;
            if want >= all.len() {
                if want > all.len() {
                    log::warn!(
                        "requested {want} negatives but only {} exist; using all of them",
                        all.len()
                    );
                }
                return Ok(all);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, all.len(), want).into_vec();
            idx.sort_unstable();
            Ok(idx.into_iter().map(|i| all[i].clone()).collect())
        }
    }
}

/// Parameters of the synthetic Smokes-Cancer-Friends domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmokesCancerParams {
    pub n_people: usize,
    /// Cancer iff at least this many friends smoke (before noise).
    pub k_threshold: usize,
    /// Probability of each directed friendship edge.
    pub edge_prob: f64,
    /// Probability of flipping each cancer label.
    pub noise: f64,
    pub smoke_prob: f64,
    pub seed: u64,
}

impl Default for SmokesCancerParams {
    fn default() -> Self {
        SmokesCancerParams {
            n_people: 200,
            k_threshold: 2,
            edge_prob: 0.05,
            noise: 0.05,
            smoke_prob: 0.15,
            seed: 7,
        }
    }
}

impl SmokesCancerParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_people == 0 {
            return Err(Error::Argument("n_people must be positive".into()));
        }
        if self.k_threshold == 0 {
            return Err(Error::Argument("k_threshold must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::Argument(format!("edge_prob {} not in [0, 1]", self.edge_prob)));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Argument(format!("noise {} not in [0, 1)", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.smoke_prob) {
            return Err(Error::Argument(format!("smoke_prob {} not in [0, 1]", self.smoke_prob)));
        }
        Ok(())
    }
}

/// Random directed friendship graph, independent smoking, and
/// `cancer(x)` iff `#{y : friends(x, y), smokes(y)} >= k`, flipped with
/// probability `noise`.
pub fn generate_smokes_cancer(params: &SmokesCancerParams) -> Result<DatasetBundle> {
    params.validate()?;
    let n = params.n_people;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let people: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();

    let mut friends = vec![Vec::new(); n];
    for (x, out) in friends.iter_mut().enumerate() {
        for y in 0..n {
            if x != y && rng.gen::<f64>() < params.edge_prob {
                out.push(y);
            }
        }
    }
    let smokes: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < params.smoke_prob).collect();
    let cancer: Vec<bool> = (0..n)
        .map(|x| {
            let smoking_friends = friends[x].iter().filter(|&&y| smokes[y]).count();
            let label = smoking_friends >= params.k_threshold;
            label ^ (rng.gen::<f64>() < params.noise)
        })
        .collect();

    let mut b = DatabaseBuilder::default();
    b.declare_population("person", people.clone())?;
    b.declare_predicate(PredicateSignature::new("friends", vec!["person", "person"]))?;
    b.declare_predicate(PredicateSignature::new("smokes", vec!["person"]))?;
    b.declare_predicate(PredicateSignature::new("cancer", vec!["person"]))?;
    for (x, out) in friends.iter().enumerate() {
        for &y in out {
            b.add_fact(&Atom::ground("friends", &[&people[x], &people[y]]))?;
        }
    }
    for (x, &s) in smokes.iter().enumerate() {
        if s {
            b.add_fact(&Atom::ground("smokes", &[&people[x]]))?;
        }
    }
    let db = b.build()?;
    let target = db.signature("cancer").cloned().expect("declared above");

    let (positives, negatives): (Vec<_>, Vec<_>) = (0..n)
        .map(|x| (Atom::ground("cancer", &[&people[x]]), cancer[x]))
        .partition(|(_, c)| *c);
    let modes = vec![
        ModeDeclaration::new("friends", vec![(ArgMode::Input, "person"), (ArgMode::Output, "person")]),
        ModeDeclaration::new("friends", vec![(ArgMode::Output, "person"), (ArgMode::Input, "person")]),
        ModeDeclaration::new("smokes", vec![(ArgMode::Input, "person")]),
        ModeDeclaration::new("cancer", vec![(ArgMode::Input, "person")]),
    ];
    let header = vec![
        "smokes-cancer-friends synthetic domain".to_string(),
        format!(
            "n_people={} k_threshold={} edge_prob={} noise={} smoke_prob={} seed={}",
            params.n_people, params.k_threshold, params.edge_prob, params.noise, params.smoke_prob, params.seed
        ),
        "directed friendship edges; cancer iff smoking friends >= k_threshold, then label noise".to_string(),
    ];
    Ok(DatasetBundle {
        db: Arc::new(db),
        target,
        positives: positives.into_iter().map(|(a, _)| a).collect(),
        negatives: negatives.into_iter().map(|(a, _)| a).collect(),
        modes,
        header,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum FoldScheme {
    /// Stratified random assignment of examples; every fold shares the database.
    Random,
    /// Constant -> group. Whole groups become test folds, and facts are split
    /// with them.
    ByGroup(IndexMap<String, String>),
}

/// `group(constant, name).` lines.
pub fn parse_groups(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (stmt, pos) in Parser::new(text, TermStyle::Ground)?.statements()? {
        match stmt {
            Statement::Atom(a) if a.predicate == "group" && a.args.len() == 2 => {
                let c = a.constants().expect("ground style");
                if let Some(prev) = out.insert(c[0].to_string(), c[1].to_string()) {
                    if prev != c[1] {
                        return Err(Error::parse(
                            pos.line,
                            pos.column,
                            format!("constant '{}' assigned to groups '{prev}' and '{}'", c[0], c[1]),
                        ));
                    }
                }
            }
            _ => return Err(Error::parse(pos.line, pos.column, "expected 'group(constant, name).'")),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train: DatasetBundle,
    pub test: DatasetBundle,
}

pub fn make_folds(bundle: &DatasetBundle, k: usize, scheme: &FoldScheme, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {k}")));
    }
    let n = bundle.positives.len() + bundle.negatives.len();
    if k > n {
        return Err(Error::Argument(format!("{k} folds requested for {n} examples")));
    }
    match scheme {
        FoldScheme::Random => Ok(random_folds(bundle, k, seed)),
        FoldScheme::ByGroup(groups) => group_folds(bundle, k, groups),
    }
}

fn random_folds(bundle: &DatasetBundle, k: usize, seed: u64) -> Vec<FoldSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos_order: Vec<usize> = (0..bundle.positives.len()).collect();
    let mut neg_order: Vec<usize> = (0..bundle.negatives.len()).collect();
    shuffle(&mut pos_order, &mut rng);
    shuffle(&mut neg_order, &mut rng);

    // deal positives then negatives round-robin so folds stay stratified
    let mut pos_fold = vec![0; bundle.positives.len()];
    let mut neg_fold = vec![0; bundle.negatives.len()];
    let mut next = 0;
    for &i in &pos_order {
        pos_fold[i] = next % k;
        next += 1;
    }
    for &i in &neg_order {
        neg_fold[i] = next % k;
        next += 1;
    }

    (0..k)
        .map(|fold| {
            let split = |atoms: &[Atom], folds: &[usize], test: bool| -> Vec<Atom> {
                atoms
                    .iter()
                    .zip(folds)
                    .filter(|(_, &f)| (f == fold) == test)
                    .map(|(a, _)| a.clone())
                    .collect()
            };
            let part = |test: bool| DatasetBundle {
                db: Arc::clone(&bundle.db),
                target: bundle.target.clone(),
                positives: split(&bundle.positives, &pos_fold, test),
                negatives: split(&bundle.negatives, &neg_fold, test),
                modes: bundle.modes.clone(),
                header: bundle.header.clone(),
            };
            FoldSplit {
                fold_id: fold,
                train: part(false),
                test: part(true),
            }
        })
        .collect()
}

fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

fn group_folds(bundle: &DatasetBundle, k: usize, groups: &IndexMap<String, String>) -> Result<Vec<FoldSplit>> {
    let names: IndexSet<&str> = groups.values().map(String::as_str).collect();
    if k > names.len() {
        return Err(Error::Argument(format!(
            "{k} folds requested but only {} groups exist",
            names.len()
        )));
    }
    let fold_of_group: HashMap<&str, usize> = names.iter().enumerate().map(|(i, g)| (*g, i % k)).collect();
    let fold_of_const = |c: &str| groups.get(c).map(|g| fold_of_group[g.as_str()]);

    let example_fold = |a: &Atom| -> Result<usize> {
        a.constants()
            .and_then(|cs| cs.into_iter().find_map(fold_of_const))
            .ok_or_else(|| Error::Argument(format!("example {a} has no grouped constant")))
    };
    let pos_fold = bundle.positives.iter().map(example_fold).collect::<Result<Vec<_>>>()?;
    let neg_fold = bundle.negatives.iter().map(example_fold).collect::<Result<Vec<_>>>()?;

    (0..k)
        .map(|fold| {
            // side: Some(true) = test groups only, Some(false) = train groups only
            let side = |c: &str| fold_of_const(c).map(|f| f == fold);
            let restricted = |test: bool| -> Result<FactDatabase> {
                let mut b = DatabaseBuilder::default();
                for p in bundle.db.populations() {
                    let keep: Vec<String> = p
                        .constants
                        .iter()
                        .filter(|c| side(c).is_none_or(|s| s == test))
                        .cloned()
                        .collect();
                    b.declare_population(p.name.clone(), keep)?;
                }
                for sig in bundle.db.signatures() {
                    b.declare_predicate(sig.clone())?;
                }
                for fact in bundle.db.facts() {
                    let cs = fact.constants().expect("facts are ground");
                    if cs.iter().all(|c| side(c).is_none_or(|s| s == test)) {
                        b.add_fact(&fact)?;
                    }
                }
                b.build()
            };
            let split = |atoms: &[Atom], folds: &[usize], test: bool| -> Vec<Atom> {
                atoms
                    .iter()
                    .zip(folds)
                    .filter(|(_, &f)| (f == fold) == test)
                    .map(|(a, _)| a.clone())
                    .collect()
            };
            let part = |test: bool| -> Result<DatasetBundle> {
                Ok(DatasetBundle {
                    db: Arc::new(restricted(test)?),
                    target: bundle.target.clone(),
                    positives: split(&bundle.positives, &pos_fold, test),
                    negatives: split(&bundle.negatives, &neg_fold, test),
                    modes: bundle.modes.clone(),
                    header: bundle.header.clone(),
                })
            };
            Ok(FoldSplit {
                fold_id: fold,
                train: part(false)?,
                test: part(true)?,
            })
        })
        .collect()
}
