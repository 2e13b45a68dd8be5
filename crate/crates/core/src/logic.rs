//! Typed, function-free first-order logic over finite populations.
//!
//! A [`FactDatabase`] holds the populations, the predicate signatures and the
//! set of ground atoms that are true. Everything absent is false (closed
//! world). The central query is [`count_groundings`]: for a conjunctive body
//! and a binding of some of its logvars, how many instantiations of the
//! remaining logvars make the body true, and how many make it false.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interned constant.
pub(crate) type Sym = u32;

/// Canonical name for the `i`-th logvar of a clause: `A`..`Z`, then `V26`, `V27`, ...
pub fn logvar_name(i: usize) -> String {
    if i < 26 {
        ((b'A' + i as u8) as char).to_string()
    } else {
        format!("V{i}")
    }
}

/// True when `s` has to be quoted to be read back as a constant in clause text.
pub(crate) fn constant_needs_quotes(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        None => true,
        Some(c) if c.is_ascii_lowercase() || c.is_ascii_digit() => {
            !s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        }
        Some(_) => true,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Self {
        Term::Var(name.into())
    }

    pub fn constant(name: impl Into<String>) -> Self {
        Term::Const(name.into())
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => f.write_str(v),
            Term::Const(c) if constant_needs_quotes(c) => write!(f, "\"{c}\""),
            Term::Const(c) => f.write_str(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        Atom {
            predicate: predicate.into(),
            args,
        }
    }

    /// A ground atom from constant names.
    pub fn ground<S: AsRef<str>>(predicate: impl Into<String>, constants: &[S]) -> Self {
        Atom::new(
            predicate,
            constants.iter().map(|c| Term::Const(c.as_ref().to_string())).collect(),
        )
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !t.is_var())
    }

    /// Distinct logvars in order of first occurrence.
    pub fn vars(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for t in &self.args {
            if let Term::Var(v) = t {
                if !seen.contains(&v.as_str()) {
                    seen.push(v.as_str());
                }
            }
        }
        seen
    }

    /// Untyped substitution; see [`apply_substitution`] for the checked form.
    pub fn substitute(&self, theta: &Substitution) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            args: self
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => match theta.get(v) {
                        Some(c) => Term::Const(c.to_string()),
                        None => t.clone(),
                    },
                    Term::Const(_) => t.clone(),
                })
                .collect(),
        }
    }

    /// Constant names of a ground atom, `None` if any argument is a logvar.
    pub fn constants(&self) -> Option<Vec<&str>> {
        self.args
            .iter()
            .map(|t| match t {
                Term::Const(c) => Some(c.as_str()),
                Term::Var(_) => None,
            })
            .collect()
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, t) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str(")")
    }
}

/// A mapping from logvars to constants.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Substitution {
    bindings: BTreeMap<String, String>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, var: impl Into<String>, constant: impl Into<String>) -> Self {
        self.bindings.insert(var.into(), constant.into());
        self
    }

    pub fn insert(&mut self, var: impl Into<String>, constant: impl Into<String>) {
        self.bindings.insert(var.into(), constant.into());
    }

    pub fn get(&self, var: &str) -> Option<&str> {
        self.bindings.get(var).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Substitution {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Substitution {
            bindings: iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.bindings.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}/{}", Term::Const(v.clone()))?;
        }
        f.write_str("}")
    }
}

/// A conjunction of positive literals. The empty body is `true`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConjunctiveBody {
    pub literals: Vec<Atom>,
}

impl ConjunctiveBody {
    pub fn new(literals: Vec<Atom>) -> Self {
        ConjunctiveBody { literals }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.literals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn with(&self, literal: Atom) -> Self {
        let mut literals = self.literals.clone();
        literals.push(literal);
        ConjunctiveBody { literals }
    }

    /// Distinct logvars in order of first occurrence.
    pub fn vars(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for lit in &self.literals {
            for v in lit.vars() {
                if !seen.contains(&v) {
                    seen.push(v);
                }
            }
        }
        seen
    }
}

impl fmt::Display for ConjunctiveBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.literals.is_empty() {
            return f.write_str("true");
        }
        for (i, lit) in self.literals.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{lit}")?;
        }
        Ok(())
    }
}

/// `[w0, w1, w2] :: head :- body`: bias, weight on true groundings, weight on
/// false groundings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorWeightedClause {
    pub head: Atom,
    pub body: ConjunctiveBody,
    pub weights: [f64; 3],
}

impl VectorWeightedClause {
    pub fn new(head: Atom, body: ConjunctiveBody, weights: [f64; 3]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Argument(format!(
                "clause weights must be finite, got {weights:?}"
            )));
        }
        let vars = head.vars();
        if vars.len() != head.args.len() {
            return Err(Error::Argument(format!(
                "clause head {head} must consist of distinct logvars"
            )));
        }
        Ok(VectorWeightedClause { head, body, weights })
    }

    /// Contribution `w0 + w1*t + w2*f` for one example's counts.
    pub fn value(&self, counts: GroundingCounts) -> f64 {
        clause_value(&self.weights, counts)
    }
}

pub(crate) fn clause_value(w: &[f64; 3], counts: GroundingCounts) -> f64 {
    w[0] + w[1] * counts.t as f64 + w[2] * counts.f as f64
}

impl fmt::Display for VectorWeightedClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w0, w1, w2] = self.weights;
        write!(f, "[{w0:?}, {w1:?}, {w2:?}] :: {} :- {}", self.head, self.body)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredicateSignature {
    pub functor: String,
    pub arg_types: Vec<String>,
}

impl PredicateSignature {
    pub fn new<S: Into<String>>(functor: impl Into<String>, arg_types: Vec<S>) -> Self {
        PredicateSignature {
            functor: functor.into(),
            arg_types: arg_types.into_iter().map(Into::into).collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.arg_types.len()
    }

    /// `functor(A, B, ...)` with canonical logvar names.
    pub fn head_atom(&self) -> Atom {
        Atom::new(
            self.functor.clone(),
            (0..self.arity()).map(|i| Term::Var(logvar_name(i))).collect(),
        )
    }
}

impl fmt::Display for PredicateSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.functor, self.arg_types.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Population {
    pub name: String,
    pub constants: Vec<String>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.constants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constants.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArgMode {
    /// `+`: must be filled by a logvar already in the clause.
    Input,
    /// `-`: an existing logvar or a fresh one.
    Output,
    /// `#`: a constant of the population.
    Constant,
}

impl ArgMode {
    pub fn sigil(self) -> char {
        match self {
            ArgMode::Input => '+',
            ArgMode::Output => '-',
            ArgMode::Constant => '#',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeDeclaration {
    pub predicate: String,
    pub args: Vec<(ArgMode, String)>,
}

impl ModeDeclaration {
    pub fn new<S: Into<String>>(predicate: impl Into<String>, args: Vec<(ArgMode, S)>) -> Self {
        ModeDeclaration {
            predicate: predicate.into(),
            args: args.into_iter().map(|(m, t)| (m, t.into())).collect(),
        }
    }

    pub fn signature(&self) -> PredicateSignature {
        PredicateSignature::new(
            self.predicate.clone(),
            self.args.iter().map(|(_, t)| t.clone()).collect(),
        )
    }
}

impl fmt::Display for ModeDeclaration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mode: {}(", self.predicate)?;
        for (i, (m, t)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}{t}", m.sigil())?;
        }
        f.write_str(").")
    }
}

/// True- and false-grounding counts of a body under a binding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct GroundingCounts {
    pub t: u64,
    pub f: u64,
}

impl GroundingCounts {
    pub fn total(&self) -> u64 {
        self.t + self.f
    }
}

#[derive(Debug)]
struct PopData {
    population: Population,
    members: Vec<Sym>,
    set: HashSet<Sym>,
}

const MAX_INDEXED_ARITY: usize = 8;

#[derive(Debug)]
struct Relation {
    signature: PredicateSignature,
    type_pops: Vec<usize>,
    tuples: Vec<Box<[Sym]>>,
    set: HashSet<Box<[Sym]>>,
    /// Bound-position mask -> projection -> row ids.
    index: HashMap<u32, HashMap<Box<[Sym]>, Vec<u32>>>,
}

impl Relation {
    fn build_index(&mut self) {
        let arity = self.signature.arity();
        if arity > MAX_INDEXED_ARITY {
            return;
        }
        let full = (1u32 << arity) - 1;
        for mask in 1..full {
            let mut map: HashMap<Box<[Sym]>, Vec<u32>> = HashMap::new();
            for (row, tuple) in self.tuples.iter().enumerate() {
                let key: Box<[Sym]> = (0..arity).filter(|p| mask & (1 << p) != 0).map(|p| tuple[p]).collect();
                map.entry(key).or_default().push(row as u32);
            }
            self.index.insert(mask, map);
        }
    }
}

/// Populations, signatures and the set of true ground atoms.
///
/// Immutable once built; every query takes `&self`.
#[derive(Debug)]
pub struct FactDatabase {
    symbols: Vec<String>,
    symbol_ids: HashMap<String, Sym>,
    populations: IndexMap<String, PopData>,
    relations: IndexMap<String, Relation>,
}

impl FactDatabase {
    pub fn builder() -> DatabaseBuilder {
        DatabaseBuilder::default()
    }

    pub fn populations(&self) -> impl Iterator<Item = &Population> {
        self.populations.values().map(|p| &p.population)
    }

    pub fn population(&self, type_name: &str) -> Option<&Population> {
        self.populations.get(type_name).map(|p| &p.population)
    }

    pub fn signatures(&self) -> impl Iterator<Item = &PredicateSignature> {
        self.relations.values().map(|r| &r.signature)
    }

    pub fn signature(&self, functor: &str) -> Option<&PredicateSignature> {
        self.relations.get(functor).map(|r| &r.signature)
    }

    pub fn num_facts(&self) -> usize {
        self.relations.values().map(|r| r.tuples.len()).sum()
    }

    /// True atoms, grouped by predicate in declaration order.
    pub fn facts(&self) -> impl Iterator<Item = Atom> + '_ {
        self.relations.values().flat_map(move |r| {
            r.tuples.iter().map(move |t| {
                Atom::ground(
                    r.signature.functor.clone(),
                    &t.iter().map(|&s| self.name(s)).collect::<Vec<_>>(),
                )
            })
        })
    }

    /// Closed-world membership of a well-typed ground atom.
    pub fn holds(&self, atom: &Atom) -> Result<bool> {
        let syms = self.ground_syms(atom)?;
        let rel = &self.relations[&atom.predicate];
        Ok(rel.set.contains(syms.as_slice()))
    }

    pub(crate) fn sym(&self, name: &str) -> Option<Sym> {
        self.symbol_ids.get(name).copied()
    }

    pub(crate) fn name(&self, sym: Sym) -> &str {
        &self.symbols[sym as usize]
    }

    fn relation_index(&self, functor: &str) -> Result<usize> {
        self.relations
            .get_index_of(functor)
            .ok_or_else(|| Error::Schema(format!("undeclared predicate '{functor}'")))
    }

    pub(crate) fn pop_size(&self, pop: usize) -> usize {
        self.populations[pop].members.len()
    }

    pub(crate) fn pop_members(&self, pop: usize) -> &[Sym] {
        &self.populations[pop].members
    }

    fn in_pop(&self, pop: usize, sym: Sym) -> bool {
        self.populations[pop].set.contains(&sym)
    }

    /// Resolve a constant that must belong to population `pop`.
    fn typed_constant(&self, constant: &str, pop: usize, context: &dyn fmt::Display) -> Result<Sym> {
        match self.sym(constant) {
            Some(s) if self.in_pop(pop, s) => Ok(s),
            _ => Err(Error::Typing(format!(
                "constant '{constant}' in {context} is not in population '{}'",
                self.populations[pop].population.name
            ))),
        }
    }

    /// Check that `atom` is a well-typed ground atom and intern its arguments.
    pub(crate) fn ground_syms(&self, atom: &Atom) -> Result<Vec<Sym>> {
        let rel = self.relation_index(&atom.predicate)?;
        let rel = &self.relations[rel];
        if rel.signature.arity() != atom.args.len() {
            return Err(Error::Typing(format!(
                "{atom}: predicate '{}' has arity {}",
                atom.predicate,
                rel.signature.arity()
            )));
        }
        atom.args
            .iter()
            .zip(&rel.type_pops)
            .map(|(t, &pop)| match t {
                Term::Const(c) => self.typed_constant(c, pop, atom),
                Term::Var(v) => Err(Error::Typing(format!("{atom} is not ground (logvar {v})"))),
            })
            .collect()
    }

    /// Assign a population to every logvar of `atoms`, checking consistency
    /// with `known` (logvar -> population index) and extending it.
    pub(crate) fn infer_var_types<'a>(
        &self,
        atoms: impl IntoIterator<Item = &'a Atom>,
        known: &mut IndexMap<String, usize>,
    ) -> Result<()> {
        for atom in atoms {
            let rel = &self.relations[self.relation_index(&atom.predicate)?];
            if rel.signature.arity() != atom.args.len() {
                return Err(Error::Typing(format!(
                    "{atom}: predicate '{}' has arity {}",
                    atom.predicate,
                    rel.signature.arity()
                )));
            }
            for (t, &pop) in atom.args.iter().zip(&rel.type_pops) {
                match t {
                    Term::Var(v) => match known.get(v) {
                        Some(&p) if p != pop => {
                            return Err(Error::Typing(format!(
                                "logvar {v} used as both '{}' and '{}' (in {atom})",
                                self.populations[p].population.name, self.populations[pop].population.name
                            )))
                        }
                        Some(_) => {}
                        None => {
                            known.insert(v.clone(), pop);
                        }
                    },
                    Term::Const(c) => {
                        self.typed_constant(c, pop, atom)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn population_name(&self, pop: usize) -> &str {
        &self.populations[pop].population.name
    }
}

/// Accumulates declarations and facts, then freezes them into a [`FactDatabase`].
///
/// Populations that are not declared are inferred as the union of constants
/// seen in each typed argument position, in first-seen order.
#[derive(Debug, Default, Clone)]
pub struct DatabaseBuilder {
    declared: IndexMap<String, IndexSet<String>>,
    observed: IndexMap<String, IndexSet<String>>,
    signatures: IndexMap<String, PredicateSignature>,
    facts: IndexMap<String, IndexSet<Vec<String>>>,
}

impl DatabaseBuilder {
    pub fn declare_population<S: Into<String>>(
        &mut self,
        name: impl Into<String>,
        constants: Vec<S>,
    ) -> Result<&mut Self> {
        let name = name.into();
        let mut set = IndexSet::new();
        for c in constants {
            let c = c.into();
            if !set.insert(c.clone()) {
                return Err(Error::Schema(format!(
                    "constant '{c}' listed twice in population '{name}'"
                )));
            }
        }
        if set.is_empty() {
            return Err(Error::Schema(format!(
                "population '{name}' must contain at least one constant"
            )));
        }
        if let Some(prev) = self.declared.get(&name) {
            if *prev != set {
                return Err(Error::Schema(format!(
                    "population '{name}' declared twice with different constants"
                )));
            }
        }
        self.declared.insert(name, set);
        Ok(self)
    }

    pub fn declare_predicate(&mut self, signature: PredicateSignature) -> Result<&mut Self> {
        if signature.arity() == 0 {
            return Err(Error::Schema(format!(
                "predicate '{}' must have at least one argument",
                signature.functor
            )));
        }
        if let Some(prev) = self.signatures.get(&signature.functor) {
            if *prev != signature {
                return Err(Error::Schema(format!(
                    "conflicting signatures for '{}': {prev} vs {signature}",
                    signature.functor
                )));
            }
            return Ok(self);
        }
        self.signatures.insert(signature.functor.clone(), signature);
        Ok(self)
    }

    pub fn has_predicate(&self, functor: &str) -> bool {
        self.signatures.contains_key(functor)
    }

    fn check_and_observe(&mut self, atom: &Atom) -> Result<Vec<String>> {
        let sig = self
            .signatures
            .get(&atom.predicate)
            .ok_or_else(|| Error::Schema(format!("undeclared predicate '{}'", atom.predicate)))?;
        if sig.arity() != atom.args.len() {
            return Err(Error::Schema(format!(
                "arity mismatch: '{}' expects {} argument(s), got {}",
                atom.predicate,
                sig.arity(),
                atom.args.len()
            )));
        }
        let consts = atom
            .constants()
            .ok_or_else(|| Error::Typing(format!("{atom} is not ground")))?
            .into_iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        for (c, ty) in consts.iter().zip(sig.arg_types.clone()) {
            if let Some(decl) = self.declared.get(&ty) {
                if !decl.contains(c) {
                    return Err(Error::Typing(format!(
                        "constant '{c}' in {atom} is not in declared population '{ty}'"
                    )));
                }
            }
            self.observed.entry(ty).or_default().insert(c.clone());
        }
        Ok(consts)
    }

    /// Add a true ground atom. Duplicates collapse.
    pub fn add_fact(&mut self, atom: &Atom) -> Result<&mut Self> {
        let consts = self.check_and_observe(atom)?;
        self.facts.entry(atom.predicate.clone()).or_default().insert(consts);
        Ok(self)
    }

    /// Register the constants of a ground atom (e.g. an example) without
    /// asserting it.
    pub fn observe(&mut self, atom: &Atom) -> Result<&mut Self> {
        self.check_and_observe(atom)?;
        Ok(self)
    }

    pub fn build(&self) -> Result<FactDatabase> {
        let mut symbols = Vec::new();
        let mut symbol_ids: HashMap<String, Sym> = HashMap::new();
        let mut intern = |s: &str| -> Sym {
            if let Some(&id) = symbol_ids.get(s) {
                return id;
            }
            let id = symbols.len() as Sym;
            symbols.push(s.to_string());
            symbol_ids.insert(s.to_string(), id);
            id
        };

        let mut type_order: IndexSet<String> = self.declared.keys().cloned().collect();
        for sig in self.signatures.values() {
            type_order.extend(sig.arg_types.iter().cloned());
        }

        let mut populations = IndexMap::new();
        for ty in type_order {
            let constants: Vec<String> = match self.declared.get(&ty) {
                Some(decl) => decl.iter().cloned().collect(),
                None => self
                    .observed
                    .get(&ty)
                    .map(|s| s.iter().cloned().collect())
                    .unwrap_or_default(),
            };
            if constants.is_empty() {
                return Err(Error::Schema(format!(
                    "population '{ty}' has no constants (declare it or provide facts/examples)"
                )));
            }
            let members: Vec<Sym> = constants.iter().map(|c| intern(c)).collect();
            let set = members.iter().copied().collect();
            populations.insert(
                ty.clone(),
                PopData {
                    population: Population { name: ty, constants },
                    members,
                    set,
                },
            );
        }

        let mut relations = IndexMap::new();
        for sig in self.signatures.values() {
            let type_pops = sig
                .arg_types
                .iter()
                .map(|t| populations.get_index_of(t).expect("type registered above"))
                .collect();
            let tuples: Vec<Box<[Sym]>> = self
                .facts
                .get(&sig.functor)
                .map(|rows| rows.iter().map(|row| row.iter().map(|c| intern(c)).collect()).collect())
                .unwrap_or_default();
            let set = tuples.iter().cloned().collect();
            let mut rel = Relation {
                signature: sig.clone(),
                type_pops,
                tuples,
                set,
                index: HashMap::new(),
            };
            rel.build_index();
            relations.insert(sig.functor.clone(), rel);
        }

        Ok(FactDatabase {
            symbols,
            symbol_ids,
            populations,
            relations,
        })
    }
}

impl FactDatabase {
    /// A builder pre-loaded with this database's declarations, populations
    /// and facts, for deriving a modified copy.
    pub fn to_builder(&self) -> DatabaseBuilder {
        let mut b = DatabaseBuilder::default();
        for p in self.populations() {
            b.declare_population(p.name.clone(), p.constants.clone())
                .expect("existing population is valid");
        }
        for sig in self.signatures() {
            b.declare_predicate(sig.clone()).expect("existing signature is valid");
        }
        for atom in self.facts() {
            b.add_fact(&atom).expect("existing fact is valid");
        }
        b
    }
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Var(usize),
    Const(Sym),
}

#[derive(Clone, Debug)]
struct CompiledLiteral {
    relation: usize,
    slots: Vec<Slot>,
}

/// A body resolved against a database: logvars become dense indices and
/// constants become symbols.
///
/// The first logvars are the ones passed as `head_vars` to
/// [`CompiledBody::compile`], so callers can bind them positionally.
#[derive(Clone, Debug)]
pub(crate) struct CompiledBody {
    var_names: Vec<String>,
    var_pops: Vec<usize>,
    in_body: Vec<bool>,
    literals: Vec<CompiledLiteral>,
}

impl CompiledBody {
    pub(crate) fn compile(head_vars: &[(String, usize)], body: &ConjunctiveBody, db: &FactDatabase) -> Result<Self> {
        let mut types: IndexMap<String, usize> = head_vars.iter().cloned().collect();
        db.infer_var_types(&body.literals, &mut types)?;
        let body_vars: HashSet<&str> = body.vars().into_iter().collect();
        let var_names: Vec<String> = types.keys().cloned().collect();
        let var_pops: Vec<usize> = types.values().copied().collect();
        let in_body = var_names.iter().map(|v| body_vars.contains(v.as_str())).collect();
        let literals = body
            .literals
            .iter()
            .map(|lit| {
                let relation = db.relation_index(&lit.predicate)?;
                let slots = lit
                    .args
                    .iter()
                    .map(|t| match t {
                        Term::Var(v) => Slot::Var(types.get_index_of(v).expect("typed above")),
                        Term::Const(c) => Slot::Const(db.sym(c).expect("checked by typing")),
                    })
                    .collect();
                Ok(CompiledLiteral { relation, slots })
            })
            .collect::<Result<_>>()?;
        Ok(CompiledBody {
            var_names,
            var_pops,
            in_body,
            literals,
        })
    }

    pub(crate) fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    /// Binding vector from a substitution, type-checked.
    pub(crate) fn bind(&self, theta: &Substitution, db: &FactDatabase) -> Result<Vec<Option<Sym>>> {
        let mut assign = vec![None; self.num_vars()];
        for (var, constant) in theta.iter() {
            if let Some(i) = self.var_names.iter().position(|v| v == var) {
                let ctx = format!("binding {var}/{constant}");
                assign[i] = Some(db.typed_constant(constant, self.var_pops[i], &ctx)?);
            }
        }
        Ok(assign)
    }

    /// Count groundings of the free logvars (body logvars unbound in `assign`).
    pub(crate) fn counts(&self, db: &FactDatabase, assign: &[Option<Sym>]) -> Result<GroundingCounts> {
        let mut total: u64 = 1;
        for i in 0..self.num_vars() {
            if self.in_body[i] && assign[i].is_none() {
                total = total
                    .checked_mul(db.pop_size(self.var_pops[i]) as u64)
                    .ok_or_else(|| Error::Argument("grounding count overflows u64".into()))?;
            }
        }
        let mut work = assign.to_vec();
        let mut done = vec![false; self.literals.len()];
        let t = self.search(db, &mut work, &mut done, self.literals.len());
        debug_assert!(t <= total);
        Ok(GroundingCounts { t, f: total - t })
    }

    fn search(&self, db: &FactDatabase, assign: &mut [Option<Sym>], done: &mut [bool], remaining: usize) -> u64 {
        if remaining == 0 {
            return 1;
        }
        // Most-bound literal first; ties go to the earliest.
        let mut pick = usize::MAX;
        let mut pick_bound = 0usize;
        for (i, lit) in self.literals.iter().enumerate() {
            if done[i] {
                continue;
            }
            let bound = lit
                .slots
                .iter()
                .filter(|s| match s {
                    Slot::Const(_) => true,
                    Slot::Var(v) => assign[*v].is_some(),
                })
                .count();
            if pick == usize::MAX || bound > pick_bound {
                pick = i;
                pick_bound = bound;
                if bound == lit.slots.len() {
                    break;
                }
            }
        }
        let lit = &self.literals[pick];
        let rel = &db.relations[lit.relation];
        let value = |s: &Slot, assign: &[Option<Sym>]| match s {
            Slot::Const(c) => Some(*c),
            Slot::Var(v) => assign[*v],
        };

        done[pick] = true;
        let mut count = 0u64;
        if pick_bound == lit.slots.len() {
            let key: Vec<Sym> = lit
                .slots
                .iter()
                .map(|s| value(s, assign).expect("fully bound"))
                .collect();
            if rel.set.contains(key.as_slice()) {
                count = self.search(db, assign, done, remaining - 1);
            }
        } else {
            let mut mask = 0u32;
            let mut key = Vec::with_capacity(pick_bound);
            for (p, s) in lit.slots.iter().enumerate() {
                if let Some(c) = value(s, assign) {
                    mask |= 1 << p;
                    key.push(c);
                }
            }
            let indexed = if mask == 0 {
                None
            } else {
                rel.index.get(&mask).map(|m| m.get(key.as_slice()))
            };
            let mut newly = Vec::with_capacity(lit.slots.len());
            let mut visit = |tuple: &[Sym], assign: &mut [Option<Sym>], done: &mut [bool]| {
                newly.clear();
                let mut ok = true;
                for (p, s) in lit.slots.iter().enumerate() {
                    match s {
                        Slot::Const(c) => {
                            if *c != tuple[p] {
                                ok = false;
                                break;
                            }
                        }
                        Slot::Var(v) => match assign[*v] {
                            Some(c) if c != tuple[p] => {
                                ok = false;
                                break;
                            }
                            Some(_) => {}
                            None => {
                                assign[*v] = Some(tuple[p]);
                                newly.push(*v);
                            }
                        },
                    }
                }
                let n = if ok {
                    self.search(db, assign, done, remaining - 1)
                } else {
                    0
                };
                for &v in &newly {
                    assign[v] = None;
                }
                n
            };
            match indexed {
                Some(Some(rows)) => {
                    for &row in rows {
                        count += visit(&rel.tuples[row as usize], assign, done);
                    }
                }
                Some(None) => {}
                None => {
                    for tuple in &rel.tuples {
                        count += visit(tuple, assign, done);
                    }
                }
            }
        }
        done[pick] = false;
        count
    }
}

/// Replace the logvars bound by `theta`, checking each binding against the
/// population of the argument position it lands in.
pub fn apply_substitution(atom: &Atom, theta: &Substitution, db: &FactDatabase) -> Result<Atom> {
    let rel = &db.relations[db.relation_index(&atom.predicate)?];
    if rel.signature.arity() != atom.args.len() {
        return Err(Error::Typing(format!(
            "{atom}: predicate '{}' has arity {}",
            atom.predicate,
            rel.signature.arity()
        )));
    }
    for (t, &pop) in atom.args.iter().zip(&rel.type_pops) {
        if let Term::Var(v) = t {
            if let Some(c) = theta.get(v) {
                let ctx = format!("binding {v}/{c} for {atom}");
                db.typed_constant(c, pop, &ctx)?;
            }
        }
    }
    Ok(atom.substitute(theta))
}

/// `(t, f)` for `body` once `head_binding` is applied: `t` counts the
/// assignments of the remaining logvars that make every literal true, `f`
/// the rest of the product of their population sizes.
pub fn count_groundings(
    body: &ConjunctiveBody,
    head_binding: &Substitution,
    db: &FactDatabase,
) -> Result<GroundingCounts> {
    let compiled = CompiledBody::compile(&[], body, db)?;
    let assign = compiled.bind(head_binding, db)?;
    compiled.counts(db, &assign)
}

/// Every full, well-typed binding of the logvars of `pattern`, in population
/// declaration order with the first logvar varying slowest.
pub fn enumerate_groundings<'a>(
    pattern: &Atom,
    db: &'a FactDatabase,
) -> Result<impl Iterator<Item = Substitution> + 'a> {
    let mut types = IndexMap::new();
    db.infer_var_types(std::iter::once(pattern), &mut types)?;
    let vars: Vec<(String, usize)> = types.into_iter().collect();
    Ok(Groundings::new(vars, db))
}

struct Groundings<'a> {
    vars: Vec<(String, usize)>,
    db: &'a FactDatabase,
    cursor: Option<Vec<usize>>,
}

impl<'a> Groundings<'a> {
    fn new(vars: Vec<(String, usize)>, db: &'a FactDatabase) -> Self {
        let cursor = if vars.iter().any(|(_, p)| db.pop_size(*p) == 0) {
            None
        } else {
            Some(vec![0; vars.len()])
        };
        Groundings { vars, db, cursor }
    }
}

impl Iterator for Groundings<'_> {
    type Item = Substitution;

    fn next(&mut self) -> Option<Substitution> {
        let cursor = self.cursor.as_mut()?;
        let theta = self
            .vars
            .iter()
            .zip(cursor.iter())
            .map(|((v, p), &i)| (v.clone(), self.db.name(self.db.pop_members(*p)[i]).to_string()))
            .collect();
        // odometer, last position fastest
        let mut pos = cursor.len();
        loop {
            if pos == 0 {
                self.cursor = None;
                break;
            }
            pos -= 1;
            cursor[pos] += 1;
            if cursor[pos] < self.db.pop_size(self.vars[pos].1) {
                break;
            }
            cursor[pos] = 0;
        }
        Some(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> Term {
        Term::var(s)
    }

    fn lit(p: &str, args: Vec<Term>) -> Atom {
        Atom::new(p, args)
    }

    /// persons {P1}, students {S1,S2,S3}; S1 and S2 advised by P1; all PhD.
    fn advising_db() -> FactDatabase {
        let mut b = FactDatabase::builder();
        b.declare_population("person", vec!["P1"]).unwrap();
        b.declare_population("student", vec!["S1", "S2", "S3"]).unwrap();
        b.declare_predicate(PredicateSignature::new("advisedby", vec!["student", "person"]))
            .unwrap();
        b.declare_predicate(PredicateSignature::new("phd", vec!["student"]))
            .unwrap();
        for a in [
            Atom::ground("advisedby", &["S1", "P1"]),
            Atom::ground("advisedby", &["S2", "P1"]),
            Atom::ground("phd", &["S1"]),
            Atom::ground("phd", &["S2"]),
            Atom::ground("phd", &["S3"]),
        ] {
            b.add_fact(&a).unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn substitution_replaces_bound_logvars_only() {
        let db = advising_db();
        let a = lit("advisedby", vec![v("s"), v("p")]);
        let theta = Substitution::new().bind("p", "P1");
        assert_eq!(
            apply_substitution(&a, &theta, &db).unwrap(),
            lit("advisedby", vec![v("s"), Term::constant("P1")])
        );

        let phd = lit("phd", vec![v("s")]);
        assert_eq!(apply_substitution(&phd, &Substitution::new(), &db).unwrap(), phd);

        let full = Substitution::new().bind("s", "S1").bind("p", "P1");
        assert_eq!(
            apply_substitution(&a, &full, &db).unwrap(),
            Atom::ground("advisedby", &["S1", "P1"])
        );
    }

    #[test]
    fn substitution_rejects_wrong_population() {
        let db = advising_db();
        let a = lit("advisedby", vec![v("s"), v("p")]);
        let theta = Substitution::new().bind("p", "S1");
        assert!(matches!(apply_substitution(&a, &theta, &db), Err(Error::Typing(_))));
    }

    #[test]
    fn counts_phd_students_of_advisor() {
        let db = advising_db();
        let body = ConjunctiveBody::new(vec![lit("advisedby", vec![v("s"), v("p")]), lit("phd", vec![v("s")])]);
        let theta = Substitution::new().bind("p", "P1");
        let c = count_groundings(&body, &theta, &db).unwrap();
        assert_eq!((c.t, c.f), (2, 1));
    }

    #[test]
    fn ground_body_counts_single_grounding() {
        let db = advising_db();
        let body = ConjunctiveBody::new(vec![Atom::ground("phd", &["S1"])]);
        let c = count_groundings(&body, &Substitution::new(), &db).unwrap();
        assert_eq!((c.t, c.f), (1, 0));
    }

    #[test]
    fn closed_world_with_no_facts() {
        let mut b = FactDatabase::builder();
        b.declare_population("person", vec!["P1"]).unwrap();
        b.declare_population("student", vec!["S1", "S2", "S3"]).unwrap();
        b.declare_predicate(PredicateSignature::new("advisedby", vec!["student", "person"]))
            .unwrap();
        let db = b.build().unwrap();
        let body = ConjunctiveBody::new(vec![lit("advisedby", vec![v("s"), v("p")])]);
        let c = count_groundings(&body, &Substitution::new().bind("p", "P1"), &db).unwrap();
        assert_eq!((c.t, c.f), (0, 3));
    }

    #[test]
    fn empty_body_is_true_once() {
        let db = advising_db();
        let c = count_groundings(&ConjunctiveBody::empty(), &Substitution::new(), &db).unwrap();
        assert_eq!((c.t, c.f), (1, 0));
    }

    #[test]
    fn repeated_logvar_in_literal() {
        let mut b = FactDatabase::builder();
        b.declare_population("p", vec!["a", "b", "c"]).unwrap();
        b.declare_predicate(PredicateSignature::new("r", vec!["p", "p"]))
            .unwrap();
        for (x, y) in [("a", "a"), ("a", "b"), ("c", "c")] {
            b.add_fact(&Atom::ground("r", &[x, y])).unwrap();
        }
        let db = b.build().unwrap();
        let body = ConjunctiveBody::new(vec![lit("r", vec![v("X"), v("X")])]);
        let c = count_groundings(&body, &Substitution::new(), &db).unwrap();
        assert_eq!((c.t, c.f), (2, 1));
    }

    #[test]
    fn undeclared_predicate_is_schema_error() {
        let db = advising_db();
        let body = ConjunctiveBody::new(vec![lit("teaches", vec![v("p")])]);
        assert!(matches!(
            count_groundings(&body, &Substitution::new(), &db),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn inconsistent_logvar_type_is_typing_error() {
        let db = advising_db();
        let body = ConjunctiveBody::new(vec![lit("advisedby", vec![v("s"), v("p")]), lit("phd", vec![v("p")])]);
        assert!(matches!(
            count_groundings(&body, &Substitution::new(), &db),
            Err(Error::Typing(_))
        ));
    }

    #[test]
    fn enumeration_in_declaration_order() {
        let db = advising_db();
        let pattern = lit("advisedby", vec![v("s"), v("p")]);
        let all: Vec<_> = enumerate_groundings(&pattern, &db).unwrap().collect();
        assert_eq!(all.len(), 3);
        let students: Vec<_> = all.iter().map(|t| t.get("s").unwrap()).collect();
        assert_eq!(students, ["S1", "S2", "S3"]);

        let ground = Atom::ground("phd", &["S2"]);
        let one: Vec<_> = enumerate_groundings(&ground, &db).unwrap().collect();
        assert_eq!(one, vec![Substitution::new()]);
    }

    #[test]
    fn enumeration_of_undeclared_predicate_fails() {
        let db = advising_db();
        assert!(matches!(
            enumerate_groundings(&lit("nope", vec![v("x")]), &db).map(|_| ()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn builder_collapses_duplicates_and_checks_arity() {
        let mut b = FactDatabase::builder();
        b.declare_predicate(PredicateSignature::new("phd", vec!["student"]))
            .unwrap();
        b.add_fact(&Atom::ground("phd", &["s1"])).unwrap();
        b.add_fact(&Atom::ground("phd", &["s1"])).unwrap();
        assert!(matches!(
            b.add_fact(&Atom::ground("phd", &["s1", "s2"])),
            Err(Error::Schema(_))
        ));
        let db = b.build().unwrap();
        assert_eq!(db.num_facts(), 1);
        assert_eq!(db.population("student").unwrap().constants, ["s1"]);
    }

    #[test]
    fn declared_population_rejects_unknown_constant() {
        let mut b = FactDatabase::builder();
        b.declare_population("student", vec!["s1"]).unwrap();
        b.declare_predicate(PredicateSignature::new("phd", vec!["student"]))
            .unwrap();
        assert!(matches!(
            b.add_fact(&Atom::ground("phd", &["s9"])),
            Err(Error::Typing(_))
        ));
        assert!(b.declare_population("empty", Vec::<String>::new()).is_err());
        assert!(b.declare_population("dup", vec!["a", "a"]).is_err());
    }

    #[test]
    fn holds_is_closed_world() {
        let db = advising_db();
        assert!(db.holds(&Atom::ground("phd", &["S3"])).unwrap());
        assert!(!db.holds(&Atom::ground("advisedby", &["S3", "P1"])).unwrap());
        assert!(db.holds(&Atom::ground("phd", &["P1"])).is_err());
    }

    #[test]
    fn logvar_names() {
        assert_eq!(logvar_name(0), "A");
        assert_eq!(logvar_name(25), "Z");
        assert_eq!(logvar_name(26), "V26");
    }
}
