//! Metrics for synthetic tables: privacy (distance to closest record),
//! fidelity (rule violations), realism (real-vs-synthetic discriminator),
//! and downstream utility of models trained on synthetic rows.

mod dcr;
mod encode;
pub mod models;
mod rules;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{FeatureKind, Table};

pub use dcr::{dcr, Dcr};
pub use rules::{parse_rules, point_in_polygon, violation_rate, Proportion, ViolationRule};

use encode::Encoder;
use models::{DecisionTree, LinearRegression, LogisticOptions, LogisticRegression, TreeOptions, TreeTarget};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("tables have different schemas")]
    SchemaMismatch,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` is not numerical")]
    NotNumerical(String),
    #[error("`{a}` does not determine `{b}` in real data (value `{value}` maps to several)")]
    NotFunctional { a: String, b: String, value: String },
    #[error("invalid polygon: {0}")]
    BadPolygon(String),
    #[error("{rows} rows per class cannot fill {folds} folds")]
    TooFewRows { rows: usize, folds: usize },
    #[error("task `{task}` does not fit {kind} target `{target}`")]
    TaskMismatch { task: Task, kind: FeatureKind, target: String },
    #[error("{path}:{line}: {reason}")]
    RulesFile { path: String, line: usize, reason: String },
}

/// Mean with a 95% normal-approximation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    /// per-fold values
    pub samples: Vec<f64>,
}

impl Interval {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let k = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / k;
        let sd = if samples.len() > 1 {
            (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        let half = 1.96 * sd / k.sqrt();
        Self {
            mean,
            lo: mean - half,
            hi: mean + half,
            samples,
        }
    }
}

/// Accuracy of a classifier telling real (0) from synthetic (1) rows,
/// estimated by stratified `folds`-fold cross-validation of an L2
/// logistic regression on min-max / one-hot encoded features.
pub fn discriminator_measure(real: &Table, synth: &Table, folds: usize, seed: u64) -> Result<Interval, EvalError> {
    if real.schema() != synth.schema() {
        return Err(EvalError::SchemaMismatch);
    }
    let smallest = real.n_rows().min(synth.n_rows());
    if folds < 2 || smallest < folds {
        return Err(EvalError::TooFewRows { rows: smallest, folds });
    }
    let enc = Encoder::fit(&[real, synth], None);
    let width = enc.width();
    let mut x = enc.encode_table(real);
    x.extend(enc.encode_table(synth));
    let labels: Vec<usize> = (0..real.n_rows()).map(|_| 0).chain((0..synth.n_rows()).map(|_| 1)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; labels.len()];
    for class in [0, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold_of[i] = j % folds;
        }
    }
    let opts = LogisticOptions {
        iterations: 300,
        ..LogisticOptions::default()
    };
    let mut scores = Vec::with_capacity(folds);
    for f in 0..folds {
        let (mut tx, mut ty) = (Vec::new(), Vec::new());
        for i in (0..labels.len()).filter(|&i| fold_of[i] != f) {
            tx.extend_from_slice(&x[i * width..(i + 1) * width]);
            ty.push(labels[i]);
        }
        let model = LogisticRegression::fit(&tx, width, &ty, 2, &opts);
        let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
        let correct = test
            .iter()
            .filter(|&&i| model.predict(&x[i * width..(i + 1) * width]) == labels[i])
            .count();
        scores.push(correct as f64 / test.len() as f64);
    }
    Ok(Interval::from_samples(scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Regress,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Classify => "classify",
            Task::Regress => "regress",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub target: String,
    pub task: Task,
    pub scores: Vec<ModelScore>,
    /// test labels never seen in training; their rows count as errors
    pub unseen_labels: Vec<String>,
}

/// Macro-averaged F1 over every label present in `truth` or `pred`.
pub fn macro_f1(truth: &[usize], pred: &[usize]) -> f64 {
    let k = truth.iter().chain(pred).max().map_or(0, |m| m + 1);
    let (mut tp, mut fp, mut fneg) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let present: Vec<usize> = (0..k).filter(|&c| tp[c] + fp[c] + fneg[c] > 0).collect();
    if present.is_empty() {
        return 1.0;
    }
    present
        .iter()
        .map(|&c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fneg[c]) as f64)
        .sum::<f64>()
        / present.len() as f64
}

/// Trains on `train` (typically synthetic) and scores on `test` (real).
pub fn downstream_utility(train: &Table, test: &Table, target: &str, task: Task) -> Result<UtilityReport, EvalError> {
    if train.schema() != test.schema() {
        return Err(EvalError::SchemaMismatch);
    }
    let col = train
        .schema()
        .index_of(target)
        .ok_or_else(|| EvalError::UnknownFeature(target.to_string()))?;
    let kind = train.schema().kind(col);
    let expected = match task {
        Task::Classify => FeatureKind::Categorical,
        Task::Regress => FeatureKind::Numerical,
    };
    if kind != expected {
        return Err(EvalError::TaskMismatch {
            task,
            kind,
            target: target.to_string(),
        });
    }
    let enc = Encoder::fit(&[train], Some(col));
    let width = enc.width();
    let (tx, ex) = (enc.encode_table(train), enc.encode_table(test));
    let rows = |x: &[f64]| x.chunks(width.max(1)).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let test_rows: Vec<Vec<f64>> = if width == 0 { vec![Vec::new(); test.n_rows()] } else { rows(&ex) };

    let mut scores = Vec::new();
    let mut unseen_labels = Vec::new();
    match task {
        Task::Classify => {
            let mut classes: Vec<String> = Vec::new();
            let label = |s: &str, grow: bool, classes: &mut Vec<String>| -> Option<usize> {
                match classes.iter().position(|c| c == s) {
                    Some(i) => Some(i),
                    None if grow => {
                        classes.push(s.to_string());
                        Some(classes.len() - 1)
                    }
                    None => None,
                }
            };
            let ty: Vec<usize> = train
                .column(col)
                .map(|v| label(v.as_category().unwrap(), true, &mut classes).unwrap())
                .collect();
            let known = classes.len();
            // unseen test labels get fresh indices the models never predict
            let truth: Vec<usize> = test
                .column(col)
                .map(|v| {
                    let s = v.as_category().unwrap();
                    label(s, false, &mut classes).unwrap_or_else(|| {
                        if !unseen_labels.iter().any(|u| u == s) {
                            unseen_labels.push(s.to_string());
                        }
                        known + unseen_labels.iter().position(|u| u == s).unwrap()
                    })
                })
                .collect();
            let lr = LogisticRegression::fit(&tx, width, &ty, known, &LogisticOptions::default());
            let tree = DecisionTree::fit(
                &tx,
                width,
                &TreeTarget::Classes {
                    labels: &ty,
                    classes: known,
                },
                &TreeOptions::default(),
            );
            let lr_pred: Vec<usize> = test_rows.iter().map(|r| lr.predict(r)).collect();
            let tree_pred: Vec<usize> = test_rows.iter().map(|r| tree.predict(r) as usize).collect();
            for (name, pred) in [("logistic_regression", lr_pred), ("decision_tree", tree_pred)] {
                let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
                scores.push(ModelScore {
                    model: name.into(),
                    accuracy: Some(correct as f64 / truth.len().max(1) as f64),
                    macro_f1: Some(macro_f1(&truth, &pred)),
                    mse: None,
                });
            }
        }
        Task::Regress => {
            let ty = train.numeric_column(col);
            let truth = test.numeric_column(col);
            let ols = LinearRegression::fit(&tx, width, &ty);
            let tree = DecisionTree::fit(&tx, width, &TreeTarget::Values(&ty), &TreeOptions::default());
            let mse = |f: &dyn Fn(&[f64]) -> f64| {
                test_rows.iter().zip(&truth).map(|(r, t)| (f(r) - t).powi(2)).sum::<f64>() / truth.len().max(1) as f64
            };
            scores.push(ModelScore {
                model: "linear_regression".into(),
                accuracy: None,
                macro_f1: None,
                mse: Some(mse(&|r| ols.predict(r))),
            });
            scores.push(ModelScore {
                model: "decision_tree".into(),
                accuracy: None,
                macro_f1: None,
                mse: Some(mse(&|r| tree.predict(r))),
            });
        }
    }
    Ok(UtilityReport {
        target: target.to_string(),
        task,
        scores,
        unseen_labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleResult {
    pub rule: String,
    #[serde(flatten)]
    pub rate: Proportion,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dcr: Option<Dcr>,
    pub violations: Vec<RuleResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<Interval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityReport>,
    /// settings that produced the report
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(d) = &self.dcr {
            let _ = writeln!(out, "DCR: mean {:.6} over {} synthetic rows", d.mean, d.distances.len());
        }
        for v in &self.violations {
            let _ = writeln!(
                out,
                "violation [{}]: {:.2}% ({}/{}), 95% CI [{:.2}%, {:.2}%]",
                v.rule,
                100.0 * v.rate.rate,
                v.rate.count,
                v.rate.n,
                100.0 * v.rate.lo,
                100.0 * v.rate.hi
            );
        }
        if let Some(d) = &self.discriminator {
            let _ = writeln!(
                out,
                "discriminator accuracy: {:.4} (95% CI [{:.4}, {:.4}], {} folds)",
                d.mean,
                d.lo,
                d.hi,
                d.samples.len()
            );
        }
        if let Some(u) = &self.utility {
            let _ = writeln!(out, "utility ({} `{}`):", u.task, u.target);
            for s in &u.scores {
                let _ = match (s.accuracy, s.macro_f1, s.mse) {
                    (Some(a), Some(f), _) => writeln!(out, "  {}: accuracy {:.4}, macro-F1 {:.4}", s.model, a, f),
                    (_, _, Some(m)) => writeln!(out, "  {}: MSE {:.6}", s.model, m),
                    _ => Ok(()),
                };
            }
            if !u.unseen_labels.is_empty() {
                let _ = writeln!(out, "  test labels absent from training: {}", u.unseen_labels.join(", "));
            }
        }
        out
    }
}
