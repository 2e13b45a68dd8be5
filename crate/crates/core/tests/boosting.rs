mod common;

use brlr_core::boosting::{log_likelihood, PROGRESS_HEADER};
use brlr_core::{
    compute_gradients, fit_regression_clause, generate_candidate_literals, generate_smokes_cancer, gradient,
    solve_ridge, train, ArgMode, Atom, BoostConfig, ConjunctiveBody, CountFeature, DatabaseBuilder, Error,
    GradientExample, LabeledExample, ModeDeclaration, PredicateSignature, RlrModel, SmokesCancerParams, Substitution,
    Term,
};
use common::{brute_force_counts, cg_ridge, log_likelihood_direct};
use proptest::prelude::*;

fn ridge_score(rows: &[[f64; 3]], d: &[f64], lambda: f64, w: &[f64; 3]) -> f64 {
    rows.iter()
        .zip(d)
        .map(|(r, di)| (r[0] * w[0] + r[1] * w[1] + r[2] * w[2] - di).powi(2))
        .sum::<f64>()
        + lambda * w.iter().map(|x| x * x).sum::<f64>()
}

#[test]
fn gradient_at_half() {
    assert!((gradient(true, 0.5) - 0.377_540_668_798_145_4).abs() < 1e-12);
    assert_eq!(gradient(true, 0.0), 0.5);
    assert_eq!(gradient(false, 0.0), -0.5);
}

#[test]
fn single_row_ridge() {
    let fit = solve_ridge(&[CountFeature { t: 0, f: 0 }], &[1.0], 1.0).unwrap();
    assert!((fit.weights[0] - 0.5).abs() < 1e-15);
    assert_eq!(&fit.weights[1..], &[0.0, 0.0]);
}

#[test]
fn ridge_rejects_bad_input() {
    let c = [CountFeature { t: 1, f: 0 }];
    assert!(matches!(solve_ridge(&c, &[1.0], 0.0), Err(Error::Argument(_))));
    assert!(matches!(solve_ridge(&[], &[], 1.0), Err(Error::Argument(_))));
    assert!(solve_ridge(&c, &[1.0, 2.0], 1.0).is_err());
    assert!(solve_ridge(&c, &[f64::NAN], 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gradient_is_derivative_of_log_likelihood(label in any::<bool>(), psi in -30.0f64..30.0) {
        let h = 1e-5;
        let fd = (log_likelihood_direct(label, psi + h) - log_likelihood_direct(label, psi - h)) / (2.0 * h);
        prop_assert!((gradient(label, psi) - fd).abs() < 1e-6);
        prop_assert!((log_likelihood(label, psi) - log_likelihood_direct(label, psi)).abs() < 1e-9);
    }

    #[test]
    fn ridge_matches_conjugate_gradient(
        rows in prop::collection::vec((0u64..=10, 0u64..=10), 1..=20),
        deltas in prop::collection::vec(-1.0f64..1.0, 20),
        lambda in 0.5f64..1e3,
    ) {
        let feats: Vec<CountFeature> = rows.iter().map(|&(t, f)| CountFeature { t, f }).collect();
        let d = &deltas[..feats.len()];
        let fit = solve_ridge(&feats, d, lambda).unwrap();
        let dense: Vec<[f64; 3]> = feats.iter().map(CountFeature::row).collect();
        let oracle = cg_ridge(&dense, d, lambda);
        for k in 0..3 {
            prop_assert!((fit.weights[k] - oracle[k]).abs() < 1e-8, "{:?} vs {:?}", fit.weights, oracle);
        }
        let score = ridge_score(&dense, d, lambda, &fit.weights);
        prop_assert!((fit.score - score).abs() <= 1e-9 * (1.0 + score));
        // stationarity: nudging any weight cannot lower the objective
        for k in 0..3 {
            for s in [-1e-4, 1e-4] {
                let mut w = fit.weights;
                w[k] += s;
                prop_assert!(ridge_score(&dense, d, lambda, &w) >= fit.score - 1e-12 * (1.0 + fit.score));
            }
        }
    }

    #[test]
    fn ridge_is_linear_in_gradients(
        rows in prop::collection::vec((0u64..=10, 0u64..=10), 1..=20),
        deltas in prop::collection::vec(-1.0f64..1.0, 20),
        scale in -4.0f64..4.0,
    ) {
        let feats: Vec<CountFeature> = rows.iter().map(|&(t, f)| CountFeature { t, f }).collect();
        let d = &deltas[..feats.len()];
        let scaled: Vec<f64> = d.iter().map(|x| x * scale).collect();
        let a = solve_ridge(&feats, d, 10.0).unwrap();
        let b = solve_ridge(&feats, &scaled, 10.0).unwrap();
        for k in 0..3 {
            prop_assert!((b.weights[k] - scale * a.weights[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn more_regularization_shrinks_weights(
        rows in prop::collection::vec((0u64..=10, 0u64..=10), 1..=20),
        deltas in prop::collection::vec(-1.0f64..1.0, 20),
        lambda in 0.5f64..100.0,
    ) {
        let feats: Vec<CountFeature> = rows.iter().map(|&(t, f)| CountFeature { t, f }).collect();
        let d = &deltas[..feats.len()];
        let norm = |w: [f64; 3]| w.iter().map(|x| x * x).sum::<f64>();
        let lo = solve_ridge(&feats, d, lambda).unwrap();
        let hi = solve_ridge(&feats, d, lambda * 10.0).unwrap();
        prop_assert!(norm(hi.weights) <= norm(lo.weights) + 1e-15);
    }
}

fn advising_modes() -> Vec<ModeDeclaration> {
    vec![
        ModeDeclaration::new(
            "advisedby",
            vec![(ArgMode::Output, "student"), (ArgMode::Input, "person")],
        ),
        ModeDeclaration::new("phd", vec![(ArgMode::Input, "student")]),
        ModeDeclaration::new("active", vec![(ArgMode::Input, "person")]),
    ]
}

#[test]
fn candidates_follow_modes() {
    let db = common::advising_db();
    let head = Atom::new("active", vec![Term::var("P")]);
    let body = ConjunctiveBody::new(vec![Atom::new("advisedby", vec![Term::var("S"), Term::var("P")])]);
    let cands = generate_candidate_literals(&head, &body, &advising_modes(), &db).unwrap();
    assert!(cands.contains(&Atom::new("phd", vec![Term::var("S")])));
    assert!(!cands.iter().any(|c| c.predicate == "active"));
    assert!(!cands.contains(&body.literals[0]));
    // phd needs a bound student, so it is not available from the head alone
    let from_head = generate_candidate_literals(&head, &ConjunctiveBody::empty(), &advising_modes(), &db).unwrap();
    assert!(from_head.iter().all(|c| c.predicate == "advisedby"));
}

#[test]
fn missing_modes_are_config_errors() {
    let db = common::advising_db();
    let head = Atom::new("active", vec![Term::var("P")]);
    assert!(matches!(
        generate_candidate_literals(&head, &ConjunctiveBody::empty(), &[], &db),
        Err(Error::Config(_))
    ));
    let partial = &advising_modes()[..1];
    assert!(matches!(
        generate_candidate_literals(&head, &ConjunctiveBody::empty(), partial, &db),
        Err(Error::Config(_))
    ));
}

/// a -> c, b -> d, d -> c; only c smokes. Cancer iff a friend smokes: a and d.
fn smokes_toy() -> (brlr_core::FactDatabase, Vec<LabeledExample>, Vec<ModeDeclaration>) {
    let mut b = DatabaseBuilder::default();
    b.declare_population("person", vec!["a", "b", "c", "d"]).unwrap();
    b.declare_predicate(PredicateSignature::new("friends", vec!["person", "person"]))
        .unwrap();
    b.declare_predicate(PredicateSignature::new("smokes", vec!["person"]))
        .unwrap();
    b.declare_predicate(PredicateSignature::new("cancer", vec!["person"]))
        .unwrap();
    // only c smokes; a and b befriend c, d only befriends the non-smoker b
    for (x, y) in [("a", "b"), ("a", "c"), ("b", "c"), ("d", "b")] {
        b.add_fact(&Atom::ground("friends", &[x, y])).unwrap();
    }
    b.add_fact(&Atom::ground("smokes", &["c"])).unwrap();
    let ex = ["a", "b", "c", "d"]
        .iter()
        .map(|p| LabeledExample::new(Atom::ground("cancer", &[p]), *p == "a" || *p == "b"))
        .collect();
    let modes = vec![
        ModeDeclaration::new("friends", vec![(ArgMode::Input, "person"), (ArgMode::Output, "person")]),
        ModeDeclaration::new("friends", vec![(ArgMode::Output, "person"), (ArgMode::Input, "person")]),
        ModeDeclaration::new("smokes", vec![(ArgMode::Input, "person")]),
    ];
    (b.build().unwrap(), ex, modes)
}

/// Best one-literal extension of `prefix`, scored by brute-force counts and
/// a conjugate-gradient ridge solve.
fn oracle_extension(
    prefix: &ConjunctiveBody,
    ex: &[LabeledExample],
    deltas: &[f64],
    modes: &[ModeDeclaration],
    db: &brlr_core::FactDatabase,
    lambda: f64,
) -> (f64, Atom) {
    let head = db.signature("cancer").unwrap().head_atom();
    let mut best: Option<(f64, Atom)> = None;
    for lit in generate_candidate_literals(&head, prefix, modes, db).unwrap() {
        let body = prefix.with(lit.clone());
        let rows: Vec<[f64; 3]> = ex
            .iter()
            .map(|e| {
                let theta = Substitution::new().bind("A", e.atom.constants().unwrap()[0]);
                let (t, total) = brute_force_counts(&body, &theta, db);
                [1.0, t as f64, (total - t) as f64]
            })
            .collect();
        let w = cg_ridge(&rows, deltas, lambda);
        let s = ridge_score(&rows, deltas, lambda, &w);
        if best.as_ref().is_none_or(|(b, _)| s < *b - 1e-12) {
            best = Some((s, lit));
        }
    }
    best.unwrap()
}

#[test]
fn greedy_steps_match_the_oracle() {
    let (db, ex, modes) = smokes_toy();
    let target = db.signature("cancer").unwrap().clone();
    let model = RlrModel::new(target.clone(), 0.0);
    let grads = compute_gradients(&ex, &model, &db).unwrap();
    let deltas: Vec<f64> = grads.iter().map(|g| g.gradient).collect();
    let cfg = BoostConfig {
        lambda: 1.0,
        ..BoostConfig::default()
    };
    let fit = fit_regression_clause(&grads, &db, &target, &modes, &cfg).unwrap();

    let (s1, l1) = oracle_extension(&ConjunctiveBody::empty(), &ex, &deltas, &modes, &db, 1.0);
    assert_eq!(l1, Atom::new("friends", vec![Term::var("A"), Term::var("B")]));
    assert_eq!(fit.clause.body.literals[0], l1);
    assert!((fit.step_scores[1] - s1).abs() < 1e-9);

    let prefix = ConjunctiveBody::new(vec![l1]);
    let (s2, l2) = oracle_extension(&prefix, &ex, &deltas, &modes, &db, 1.0);
    assert_eq!(l2, Atom::new("smokes", vec![Term::var("B")]));
    assert_eq!(fit.clause.body.literals[1], l2);
    assert!((fit.step_scores[2] - s2).abs() < 1e-9);
}

#[test]
fn indistinguishable_examples_get_a_constant_clause() {
    let (db, _, modes) = smokes_toy();
    let target = db.signature("cancer").unwrap().clone();
    // three copies of one example cannot be told apart by any body
    let grads: Vec<GradientExample> = (0..3)
        .map(|_| GradientExample {
            example: Atom::ground("cancer", &["d"]),
            label: true,
            regression_value: 0.0,
            gradient: 0.5,
        })
        .collect();
    let cfg = BoostConfig {
        lambda: 10.0,
        ..BoostConfig::default()
    };
    let fit = fit_regression_clause(&grads, &db, &target, &modes, &cfg).unwrap();
    let theta = Substitution::new().bind("A", "d");
    let (t, total) = brute_force_counts(&fit.clause.body, &theta, &db);
    let row = [1.0, t as f64, (total - t) as f64];
    let rows = vec![row; 3];
    let oracle = cg_ridge(&rows, &[0.5; 3], 10.0);
    let oracle_score = ridge_score(&rows, &[0.5; 3], 10.0, &oracle);
    assert!((fit.score - oracle_score).abs() < 1e-12);
    // with only the bias and true-count columns active (t = 1 for the empty
    // body), the optimum splits n*g/(2n + lambda) across them
    if fit.clause.body.is_empty() {
        let w = 3.0 * 0.5 / (6.0 + 10.0);
        assert!((fit.clause.weights[0] - w).abs() < 1e-15);
        assert!((fit.clause.weights[1] - w).abs() < 1e-15);
    }
}

#[test]
fn synthetic_training_lowers_nll() {
    let data = generate_smokes_cancer(&SmokesCancerParams::default()).unwrap();
    let cfg = BoostConfig {
        lambda: 100.0,
        ..BoostConfig::default()
    };
    let mut lines = Vec::new();
    let out = train(&data.labeled(), &data.db, &data.target, &data.modes, &cfg, |r| {
        lines.push(r.to_string())
    })
    .unwrap();
    assert_eq!(out.model.clauses.len(), 10);
    assert_eq!(lines.len(), 11);
    let nll: Vec<f64> = out.history.iter().map(|r| r.training_nll).collect();
    assert!(nll[10] < nll[0]);
    let non_increasing = nll.windows(2).filter(|w| w[1] <= w[0] + 1e-9).count();
    assert!(non_increasing >= 8, "{nll:?}");
    for (i, line) in lines.iter().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), PROGRESS_HEADER.split('\t').count());
        assert_eq!(cols[0], i.to_string());
        assert_eq!(cols[3].parse::<f64>().unwrap(), nll[i]);
    }
}

#[test]
fn training_is_deterministic_with_subsampling() {
    let data = generate_smokes_cancer(&SmokesCancerParams {
        n_people: 60,
        ..Default::default()
    })
    .unwrap();
    let cfg = BoostConfig {
        iterations: 4,
        lambda: 100.0,
        negative_subsample_ratio: Some(1.0),
        seed: 11,
        ..BoostConfig::default()
    };
    let run = || {
        train(&data.labeled(), &data.db, &data.target, &data.modes, &cfg, |_| {})
            .unwrap()
            .model
    };
    assert_eq!(run(), run());
}

#[test]
fn beam_search_returns_a_valid_clause() {
    let data = generate_smokes_cancer(&SmokesCancerParams {
        n_people: 60,
        ..Default::default()
    })
    .unwrap();
    let model = RlrModel::new(data.target.clone(), 0.0);
    let grads = compute_gradients(&data.labeled(), &model, &data.db).unwrap();
    let cfg = BoostConfig {
        lambda: 100.0,
        beam_width: 3,
        ..BoostConfig::default()
    };
    let fit = fit_regression_clause(&grads, &data.db, &data.target, &data.modes, &cfg).unwrap();
    assert!(fit.clause.body.len() <= cfg.max_clause_length);
    assert!(fit.score <= fit.step_scores[0]);
    assert!(fit.step_scores.windows(2).all(|w| w[1] < w[0]));
}
