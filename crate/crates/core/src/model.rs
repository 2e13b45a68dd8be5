//! RLR models: a prior plus an ordered sum of vector-weighted clauses.

use std::fmt::Write as _;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::{
    clause_value, Atom, CompiledBody, ConjunctiveBody, FactDatabase, GroundingCounts, PredicateSignature, Substitution,
    Sym, Term, VectorWeightedClause,
};
use crate::syntax::{Parser, TermStyle};

pub const MODEL_HEADER: &str = "rlr-model v1";

/// Logistic function, computed as `exp(min(z, 0)) / (1 + exp(-|z|))` so that
/// neither tail overflows.
pub fn sigmoid(z: f64) -> f64 {
    z.min(0.0).exp() / (1.0 + (-z.abs()).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlrModel {
    pub target: PredicateSignature,
    /// Initial potential, added once to every example's regression value.
    pub gamma: f64,
    pub clauses: Vec<VectorWeightedClause>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleScore {
    pub example: Atom,
    pub regression_value: f64,
    pub probability: f64,
}

impl RlrModel {
    pub fn new(target: PredicateSignature, gamma: f64) -> Self {
        RlrModel {
            target,
            gamma,
            clauses: Vec::new(),
        }
    }

    pub fn push(&mut self, clause: VectorWeightedClause) -> Result<()> {
        if clause.head.predicate != self.target.functor || clause.head.args.len() != self.target.arity() {
            return Err(Error::Argument(format!(
                "clause head {} does not match target {}",
                clause.head, self.target
            )));
        }
        self.clauses.push(clause);
        Ok(())
    }

    pub(crate) fn compile(&self, db: &FactDatabase) -> Result<CompiledModel> {
        let target_pops = target_pops(&self.target, db)?;
        let clauses = self
            .clauses
            .iter()
            .map(|c| {
                let head_vars: Vec<(String, usize)> = c
                    .head
                    .args
                    .iter()
                    .zip(&target_pops)
                    .map(|(t, &p)| match t {
                        Term::Var(v) => Ok((v.clone(), p)),
                        Term::Const(_) => Err(Error::Argument(format!(
                            "clause head {} must consist of logvars",
                            c.head
                        ))),
                    })
                    .collect::<Result<_>>()?;
                Ok((CompiledBody::compile(&head_vars, &c.body, db)?, c.weights))
            })
            .collect::<Result<_>>()?;
        Ok(CompiledModel {
            gamma: self.gamma,
            clauses,
        })
    }
}

pub(crate) fn target_pops(target: &PredicateSignature, db: &FactDatabase) -> Result<Vec<usize>> {
    let sig = db
        .signature(&target.functor)
        .ok_or_else(|| Error::Schema(format!("target predicate '{}' is not declared", target.functor)))?;
    if sig != target {
        return Err(Error::Schema(format!(
            "target signature {target} does not match database signature {sig}"
        )));
    }
    let mut types = IndexMap::new();
    db.infer_var_types(std::iter::once(&target.head_atom()), &mut types)?;
    Ok(types.into_values().collect())
}

/// A model resolved against one database. The head logvars of every clause
/// occupy the first slots of its compiled body, so an example's constants
/// bind them positionally.
pub(crate) struct CompiledModel {
    gamma: f64,
    clauses: Vec<(CompiledBody, [f64; 3])>,
}

impl CompiledModel {
    pub(crate) fn regression_value(&self, db: &FactDatabase, example: &[Sym]) -> Result<f64> {
        let mut psi = self.gamma;
        for (body, w) in &self.clauses {
            psi += clause_value(w, head_counts(body, db, example)?);
        }
        Ok(psi)
    }
}

pub(crate) fn head_counts(body: &CompiledBody, db: &FactDatabase, example: &[Sym]) -> Result<GroundingCounts> {
    let mut assign = vec![None; body.num_vars()];
    for (slot, &c) in assign.iter_mut().zip(example) {
        *slot = Some(c);
    }
    body.counts(db, &assign)
}

/// `gamma + sum over clauses of (w0 + w1*t + w2*f)` for one example.
pub fn regression_value(model: &RlrModel, example_binding: &Substitution, db: &FactDatabase) -> Result<f64> {
    let head = model.target.head_atom();
    let example = head.substitute(example_binding);
    if !example.is_ground() {
        return Err(Error::Argument(format!(
            "binding {example_binding} does not ground {head}"
        )));
    }
    let syms = db.ground_syms(&example)?;
    model.compile(db)?.regression_value(db, &syms)
}

/// Score ground target atoms. Output order follows input order.
pub fn predict(model: &RlrModel, examples: &[Atom], db: &FactDatabase) -> Result<Vec<ExampleScore>> {
    let compiled = model.compile(db)?;
    examples
        .par_iter()
        .map(|ex| {
            if ex.predicate != model.target.functor {
                return Err(Error::Typing(format!(
                    "example {ex} is not an atom of target '{}'",
                    model.target.functor
                )));
            }
            let syms = db
                .ground_syms(ex)
                .map_err(|e| Error::Typing(format!("example {ex}: {e}")))?;
            let psi = compiled.regression_value(db, &syms)?;
            Ok(ExampleScore {
                example: ex.clone(),
                regression_value: psi,
                probability: sigmoid(psi),
            })
        })
        .collect()
}

/// Model text: header, `gamma`, `target`, then one `clause` line each.
pub fn serialize_model(model: &RlrModel) -> String {
    let mut out = String::new();
    writeln!(out, "{MODEL_HEADER}").unwrap();
    writeln!(out, "gamma {:?}", model.gamma).unwrap();
    writeln!(out, "target {}", model.target).unwrap();
    for c in &model.clauses {
        writeln!(out, "clause {c}").unwrap();
    }
    out
}

struct Header<'a> {
    gamma: f64,
    target: PredicateSignature,
    target_line: usize,
    clauses: Vec<(usize, &'a str)>,
}

fn parse_header(text: &str) -> Result<Header<'_>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });

    match lines.next() {
        Some((_, l)) if l.trim() == MODEL_HEADER => {}
        Some((n, _)) => return Err(Error::parse(n, 1, format!("expected header '{MODEL_HEADER}'"))),
        None => return Err(Error::parse(1, 1, "empty model file")),
    }

    let (n, line) = lines.next().ok_or_else(|| Error::parse(2, 1, "missing 'gamma' line"))?;
    let gamma = line
        .trim()
        .strip_prefix("gamma")
        .ok_or_else(|| Error::parse(n, 1, "expected 'gamma <float>'"))
        .and_then(|rest| parse_float(rest.trim(), n, 7))?;

    let (n, line) = lines
        .next()
        .ok_or_else(|| Error::parse(3, 1, "missing 'target' line"))?;
    let rest = line
        .trim()
        .strip_prefix("target")
        .ok_or_else(|| Error::parse(n, 1, "expected 'target functor(type, ...)'"))?;
    let mut p = Parser::with_offset(rest, TermStyle::Clause, n, 7)?;
    let sig_atom = p.atom()?;
    let target = PredicateSignature::new(
        sig_atom.predicate.clone(),
        sig_atom
            .args
            .iter()
            .map(|t| match t {
                Term::Var(s) | Term::Const(s) => s.clone(),
            })
            .collect(),
    );
    Ok(Header {
        gamma,
        target,
        target_line: n,
        clauses: lines.collect(),
    })
}

/// The target signature recorded in a model file, without checking it
/// against any database.
pub fn read_model_target(text: &str) -> Result<PredicateSignature> {
    parse_header(text).map(|h| h.target)
}

/// Parse a model and check every clause against the database schema.
pub fn deserialize_model(text: &str, db: &FactDatabase) -> Result<RlrModel> {
    let Header {
        gamma,
        target,
        target_line: n,
        clauses: lines,
    } = parse_header(text)?;
    match db.signature(&target.functor) {
        Some(sig) if *sig == target => {}
        Some(sig) => {
            return Err(Error::parse(
                n,
                8,
                format!("target {target} does not match database signature {sig}"),
            ))
        }
        None => return Err(Error::parse(n, 8, format!("unknown predicate '{}'", target.functor))),
    }

    let mut model = RlrModel::new(target, gamma);
    for (n, line) in lines {
        let rest = line
            .trim_start()
            .strip_prefix("clause")
            .ok_or_else(|| Error::parse(n, 1, "expected 'clause [w0, w1, w2] :: head :- body'"))?;
        let offset = line.len() - rest.len();
        let open = rest
            .find('[')
            .ok_or_else(|| Error::parse(n, offset + 1, "expected '[' before weights"))?;
        let close = rest
            .find(']')
            .ok_or_else(|| Error::parse(n, offset + 1, "expected ']' after weights"))?;
        let mut weights = [0.0; 3];
        let parts: Vec<&str> = rest[open + 1..close].split(',').collect();
        if parts.len() != 3 {
            return Err(Error::parse(n, offset + open + 1, "expected exactly three weights"));
        }
        for (w, part) in weights.iter_mut().zip(parts) {
            *w = parse_float(part.trim(), n, offset + open + 2)?;
        }
        let after = &rest[close + 1..];
        let after_trim = after.trim_start();
        let clause_text = after_trim
            .strip_prefix("::")
            .ok_or_else(|| Error::parse(n, offset + close + 2, "expected '::' after weights"))?;
        let column = offset + close + 2 + (after.len() - after_trim.len()) + 2;
        let mut p = Parser::with_offset(clause_text, TermStyle::Clause, n, column + 1)?;
        let head_pos = p.pos();
        let head = p.atom()?;
        let body = if p.eat(&crate::syntax::Tok::Neck) {
            p.body()?
        } else {
            Vec::new()
        };
        if !p.at_end() {
            let pos = p.pos();
            return Err(Error::parse(pos.line, pos.column, "unexpected text after clause"));
        }
        for lit in &body {
            if db.signature(&lit.predicate).is_none() {
                return Err(Error::parse(
                    n,
                    head_pos.column,
                    format!("unknown predicate '{}'", lit.predicate),
                ));
            }
        }
        let clause = VectorWeightedClause::new(head, ConjunctiveBody::new(body), weights)
            .map_err(|e| Error::parse(n, head_pos.column, e.to_string()))?;
        let mut single = RlrModel::new(model.target.clone(), 0.0);
        single
            .push(clause.clone())
            .and_then(|_| single.compile(db).map(|_| ()))
            .map_err(|e| Error::parse(n, head_pos.column, e.to_string()))?;
        model.clauses.push(clause);
    }
    Ok(model)
}

fn parse_float(s: &str, line: usize, column: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::parse(line, column, format!("invalid number '{s}'")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, column, format!("non-finite number '{s}'")));
    }
    Ok(v)
}
