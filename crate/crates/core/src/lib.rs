//! Boosted relational logistic regression.
//!
//! A model is a bias plus vector-weighted clauses; each clause adds
//! `w0 + w1*t + w2*f` to an example's regression value, where `t` and `f`
//! count the true and false groundings of its body. Clauses are learned
//! one at a time by functional-gradient boosting.
//!
//! ```
//! use brlr_core::{generate_smokes_cancer, train, BoostConfig, SmokesCancerParams};
//!
//! let data = generate_smokes_cancer(&SmokesCancerParams { n_people: 40, ..Default::default() })?;
//! let cfg = BoostConfig { iterations: 2, lambda: 10.0, ..Default::default() };
//! let out = train(&data.labeled(), &data.db, &data.target, &data.modes, &cfg, |_| {})?;
//! assert_eq!(out.history.len(), 3);
//! # Ok::<(), brlr_core::Error>(())
//! ```

pub mod agg_lr;
pub mod boosting;
pub mod data;
pub mod error;
pub mod eval;
pub mod logic;
pub mod model;
mod syntax;

pub use agg_lr::{train_agg_lr, AggLrConfig, AggLrModel};
pub use boosting::{
    compute_gradients, fit_regression_clause, generate_candidate_literals, gradient, solve_ridge, train, BoostConfig,
    ClauseFit, CountFeature, GradientExample, IterationRecord, LabeledExample, RidgeFit, TrainOutput,
};
pub use data::{
    generate_negatives, generate_smokes_cancer, load_bundle, make_folds, BundleSources, DatasetBundle, FoldScheme,
    FoldSplit, NegativeRatio, SmokesCancerParams,
};
pub use error::{Error, Result};
pub use eval::{auc_pr, auc_roc, cross_validate, nll, CvResult, FoldConfig, Method, MetricReport};
pub use logic::{
    apply_substitution, count_groundings, enumerate_groundings, ArgMode, Atom, ConjunctiveBody, DatabaseBuilder,
    FactDatabase, GroundingCounts, ModeDeclaration, Population, PredicateSignature, Substitution, Term,
    VectorWeightedClause,
};
pub use model::{
    deserialize_model, predict, read_model_target, regression_value, serialize_model, sigmoid, ExampleScore, RlrModel,
};
