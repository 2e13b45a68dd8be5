//! Independent oracles and random fixtures shared by the integration tests.
//!
//! Nothing here calls into the counting, solving or metric code under test:
//! groundings are enumerated exhaustively, ridge problems are minimized by
//! conjugate gradients, and metrics are recomputed from their definitions.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use brlr_core::{Atom, ConjunctiveBody, DatabaseBuilder, FactDatabase, PredicateSignature, Substitution, Term};
use rand::Rng;

pub struct RandomWorld {
    pub db: FactDatabase,
    pub signatures: Vec<PredicateSignature>,
}

/// 1-2 types with 1-5 constants each, 1-4 predicates of arity 1-3, and a
/// random subset of all ground tuples as facts.
pub fn random_world(rng: &mut impl Rng) -> RandomWorld {
    let n_types = rng.gen_range(1..=2);
    let mut b = DatabaseBuilder::default();
    let mut pops = Vec::new();
    for t in 0..n_types {
        let size = rng.gen_range(1..=5);
        let consts: Vec<String> = (0..size).map(|i| format!("c{t}_{i}")).collect();
        b.declare_population(format!("t{t}"), consts.clone()).unwrap();
        pops.push(consts);
    }
    let n_preds = rng.gen_range(1..=4);
    let density = rng.gen_range(0.1..0.9);
    let mut signatures = Vec::new();
    for p in 0..n_preds {
        let arity = rng.gen_range(1..=3);
        let types: Vec<usize> = (0..arity).map(|_| rng.gen_range(0..n_types)).collect();
        let sig = PredicateSignature::new(format!("p{p}"), types.iter().map(|t| format!("t{t}")).collect());
        b.declare_predicate(sig.clone()).unwrap();
        for tuple in product(&types.iter().map(|&t| pops[t].len()).collect::<Vec<_>>()) {
            if rng.gen_bool(density) {
                let args: Vec<&str> = tuple.iter().zip(&types).map(|(&i, &t)| pops[t][i].as_str()).collect();
                b.add_fact(&Atom::ground(sig.functor.clone(), &args)).unwrap();
            }
        }
        signatures.push(sig);
    }
    RandomWorld {
        db: b.build().unwrap(),
        signatures,
    }
}

/// All index tuples of the given radices, last position fastest.
pub fn product(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in sizes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..n).map(move |i| {
                    let mut v = prefix.clone();
                    v.push(i);
                    v
                })
            })
            .collect();
    }
    out
}

/// 1-3 literals over a small per-type pool of logvars, occasionally with
/// constants, plus a random binding of some of the body's logvars.
pub fn random_body(rng: &mut impl Rng, world: &RandomWorld) -> (ConjunctiveBody, Substitution) {
    let n_lits = rng.gen_range(1..=3);
    let mut literals = Vec::new();
    for _ in 0..n_lits {
        let sig = &world.signatures[rng.gen_range(0..world.signatures.len())];
        let args = sig
            .arg_types
            .iter()
            .map(|ty| {
                if rng.gen_bool(0.15) {
                    let pop = world.db.population(ty).unwrap();
                    Term::constant(pop.constants[rng.gen_range(0..pop.len())].clone())
                } else {
                    Term::var(format!("V{}{}", ty.to_uppercase(), rng.gen_range(0..3)))
                }
            })
            .collect();
        literals.push(Atom::new(sig.functor.clone(), args));
    }
    let body = ConjunctiveBody::new(literals);
    let types = var_types(&body, &world.db);
    let mut theta = Substitution::new();
    for (v, ty) in &types {
        if rng.gen_bool(0.4) {
            let pop = world.db.population(ty).unwrap();
            theta.insert(v.clone(), pop.constants[rng.gen_range(0..pop.len())].clone());
        }
    }
    (body, theta)
}

/// Logvar -> type name, in first-occurrence order.
pub fn var_types(body: &ConjunctiveBody, db: &FactDatabase) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for lit in &body.literals {
        let sig = db.signature(&lit.predicate).unwrap();
        for (t, ty) in lit.args.iter().zip(&sig.arg_types) {
            if let Term::Var(v) = t {
                if !out.iter().any(|(w, _)| w == v) {
                    out.push((v.clone(), ty.clone()));
                }
            }
        }
    }
    out
}

/// `(true groundings, all groundings)` of the free logvars, by trying every
/// assignment against the fact list.
pub fn brute_force_counts(body: &ConjunctiveBody, binding: &Substitution, db: &FactDatabase) -> (u64, u64) {
    let facts: HashSet<Atom> = db.facts().collect();
    let free: Vec<(String, String)> = var_types(body, db)
        .into_iter()
        .filter(|(v, _)| binding.get(v).is_none())
        .collect();
    let pops: Vec<&Vec<String>> = free
        .iter()
        .map(|(_, ty)| &db.population(ty).unwrap().constants)
        .collect();
    let mut t = 0;
    let mut total = 0;
    for idx in product(&pops.iter().map(|p| p.len()).collect::<Vec<_>>()) {
        let mut theta = binding.clone();
        for ((v, _), (&i, pop)) in free.iter().zip(idx.iter().zip(&pops)) {
            theta.insert(v.clone(), pop[i].clone());
        }
        total += 1;
        if body.literals.iter().all(|l| facts.contains(&l.substitute(&theta))) {
            t += 1;
        }
    }
    (t, total)
}

/// Minimize `|Cw - d|^2 + lambda |w|^2` by conjugate gradients on the
/// normal equations, iterated well past convergence.
pub fn cg_ridge(rows: &[[f64; 3]], d: &[f64], lambda: f64) -> [f64; 3] {
    let apply = |w: &[f64; 3]| -> [f64; 3] {
        let mut out = [lambda * w[0], lambda * w[1], lambda * w[2]];
        for r in rows {
            let dot = r[0] * w[0] + r[1] * w[1] + r[2] * w[2];
            for k in 0..3 {
                out[k] += r[k] * dot;
            }
        }
        out
    };
    let mut rhs = [0.0; 3];
    for (r, &di) in rows.iter().zip(d) {
        for k in 0..3 {
            rhs[k] += r[k] * di;
        }
    }
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let mut w = [0.0; 3];
    // restarted CG: each sweep is exact in 3 steps for a 3x3 SPD system in
    // exact arithmetic; restarts mop up rounding
    for _ in 0..20 {
        let aw = apply(&w);
        let mut r = [rhs[0] - aw[0], rhs[1] - aw[1], rhs[2] - aw[2]];
        let mut p = r;
        let mut rr = dot(&r, &r);
        for _ in 0..3 {
            if rr == 0.0 {
                break;
            }
            let ap = apply(&p);
            let alpha = rr / dot(&p, &ap);
            for k in 0..3 {
                w[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for k in 0..3 {
                p[k] = r[k] + beta * p[k];
            }
            rr = rr_new;
        }
    }
    w
}

/// Fraction of positive/negative pairs ranked correctly, ties counted half.
pub fn pairwise_auc(scores: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Average precision by sweeping each distinct score as a threshold
/// (predict positive iff score >= threshold), highest first.
pub fn threshold_sweep_ap(scores: &[(f64, bool)]) -> f64 {
    let n_pos = scores.iter().filter(|s| s.1).count() as f64;
    let mut thresholds: Vec<f64> = scores.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for th in thresholds {
        let tp = scores.iter().filter(|s| s.1 && s.0 >= th).count() as f64;
        let predicted = scores.iter().filter(|s| s.0 >= th).count() as f64;
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

/// Scores drawn from a handful of levels so ties are common.
pub fn random_scores(rng: &mut impl Rng, n: usize) -> Vec<(f64, bool)> {
    let levels = rng.gen_range(1..=n.max(1));
    let mut s: Vec<(f64, bool)> = (0..n)
        .map(|_| (rng.gen_range(0..levels) as f64 / levels as f64, rng.gen_bool(0.4)))
        .collect();
    // make sure both classes are present
    s[0].1 = true;
    if n > 1 {
        s[n - 1].1 = false;
    }
    s
}

/// `log sigma(psi)` or `log(1 - sigma(psi)) = log sigma(-psi)`, written
/// directly as `-ln(1 + e^{-/+psi})` to avoid `1 - p` cancellation.
pub fn log_likelihood_direct(label: bool, psi: f64) -> f64 {
    let z = if label { -psi } else { psi };
    -z.exp().ln_1p()
}

/// The persons/students fixture: P1 advises S1 and S2; S1-S3 are PhD students.
pub fn advising_db() -> FactDatabase {
    let mut b = DatabaseBuilder::default();
    b.declare_population("person", vec!["p1"]).unwrap();
    b.declare_population("student", vec!["s1", "s2", "s3"]).unwrap();
    b.declare_predicate(PredicateSignature::new("advisedby", vec!["student", "person"]))
        .unwrap();
    b.declare_predicate(PredicateSignature::new("phd", vec!["student"]))
        .unwrap();
    b.declare_predicate(PredicateSignature::new("active", vec!["person"]))
        .unwrap();
    for s in ["s1", "s2"] {
        b.add_fact(&Atom::ground("advisedby", &[s, "p1"])).unwrap();
    }
    for s in ["s1", "s2", "s3"] {
        b.add_fact(&Atom::ground("phd", &[s])).unwrap();
    }
    b.build().unwrap()
}

/// Professors p0..p(n-1); professor i advises i PhD students.
pub fn ladder_db(n: usize) -> FactDatabase {
    let mut b = DatabaseBuilder::default();
    let profs: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
    let mut students = Vec::new();
    let mut advised = HashMap::new();
    for i in 0..n {
        for j in 0..i {
            let s = format!("s{i}_{j}");
            advised.insert(s.clone(), profs[i].clone());
            students.push(s);
        }
    }
    students.push("s_free".into());
    b.declare_population("person", profs.clone()).unwrap();
    b.declare_population("student", students.clone()).unwrap();
    b.declare_predicate(PredicateSignature::new("advisedby", vec!["student", "person"]))
        .unwrap();
    b.declare_predicate(PredicateSignature::new("phd", vec!["student"]))
        .unwrap();
    b.declare_predicate(PredicateSignature::new("active", vec!["person"]))
        .unwrap();
    for s in &students {
        b.add_fact(&Atom::ground("phd", &[s])).unwrap();
        if let Some(p) = advised.get(s) {
            b.add_fact(&Atom::ground("advisedby", &[s, p])).unwrap();
        }
    }
    b.build().unwrap()
}
