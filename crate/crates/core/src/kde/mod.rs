//! Training-free conditional sampling.
//!
//! For each feature the rows of the real table are indexed by the feature's
//! parents: first partitioned by the tuple of categorical parent codes, then
//! organized in a [`BallTree`] over the min-max normalized numerical parents.
//! Sampling a value retrieves the rows whose parents are close to the values
//! already generated for the current row and then draws either from a
//! Gaussian KDE over their target values (numerical targets) or from their
//! empirical target distribution (categorical targets).

mod balltree;

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::TopoOrder;
use crate::rng;
use crate::table::{FeatureKind, NormStats, Table, Value};

pub use balltree::{l1, BallTree, DimensionMismatch};

#[derive(Debug, Error, PartialEq)]
pub enum KdeError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{feature}` expects {expected} parent values, got {found}")]
    ParentArity {
        feature: String,
        expected: usize,
        found: usize,
    },
    #[error("parent `{parent}` of `{feature}` has the wrong value kind")]
    ParentKind { feature: String, parent: String },
    #[error("category `{value}` is outside the support of `{column}`")]
    UnknownCategory { column: String, value: String },
    #[error("bandwidth needs at least one sample")]
    NoSamples,
    #[error("topological order does not match the table schema")]
    OrderMismatch,
}

/// Fuzzy-matching schedule: numeric radius `0`, then
/// `eps0 * d * growth^k` for `d` numerical parents, until `k_min` rows match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPolicy {
    pub k_min: usize,
    pub eps0: f64,
    pub growth: f64,
}

impl Default for EpsilonPolicy {
    fn default() -> Self {
        Self {
            k_min: 20,
            eps0: 0.05,
            growth: 2.0,
        }
    }
}

impl EpsilonPolicy {
    /// Radii tried at one Hamming radius, ending at one that covers every
    /// point of the unit cube.
    fn schedule(&self, dims: usize) -> Vec<f64> {
        let mut out = vec![0.0];
        if dims == 0 {
            return out;
        }
        let base = self.eps0 * dims as f64;
        let growth = if self.growth > 1.0 { self.growth } else { 2.0 };
        let mut eps = if base > 0.0 { base } else { 0.05 * dims as f64 };
        while eps < dims as f64 {
            out.push(eps);
            eps *= growth;
        }
        out.push(eps);
        out
    }
}

/// Rule for the kernel bandwidth of a univariate KDE.
///
/// `Scott` and `Silverman` give a dimensionless factor that is scaled by
/// the standard deviation of the candidate values; `Fixed` is absolute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    Scott,
    Silverman,
    Fixed(f64),
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Scott
    }
}

/// `n^(-1/(d+4))` for Scott, `(4/(d+2))^(1/(d+4)) n^(-1/(d+4))` for Silverman.
pub fn bandwidth(rule: BandwidthRule, n: usize, d: usize) -> Result<f64, KdeError> {
    if n == 0 {
        return Err(KdeError::NoSamples);
    }
    let d = d.max(1) as f64;
    let n = n as f64;
    Ok(match rule {
        BandwidthRule::Scott => n.powf(-1.0 / (d + 4.0)),
        BandwidthRule::Silverman => (4.0 / (d + 2.0)).powf(1.0 / (d + 4.0)) * n.powf(-1.0 / (d + 4.0)),
        BandwidthRule::Fixed(h) => h,
    })
}

/// Gaussian KDE density at `x`.
pub fn kde_density(values: &[f64], h: f64, x: f64) -> f64 {
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * PI).sqrt());
    norm * values
        .iter()
        .map(|v| {
            let u = (x - v) / h;
            (-0.5 * u * u).exp()
        })
        .sum::<f64>()
}

/// Exact draw from the Gaussian KDE: a uniformly chosen value plus `h` times
/// a standard normal, clamped to `bounds`.
pub fn kde_sample<R: Rng + ?Sized>(values: &[f64], h: f64, bounds: (f64, f64), rng: &mut R) -> f64 {
    let center = values[rng.random_range(0..values.len())];
    let v = if h > 0.0 {
        let g: f64 = StandardNormal.sample(rng);
        center + h * g
    } else {
        center
    };
    v.clamp(bounds.0, bounds.1)
}

/// Draws one candidate's value; frequency-proportional by construction.
pub fn categorical_sample<'a, T, R: Rng + ?Sized>(targets: &'a [T], rng: &mut R) -> &'a T {
    &targets[rng.random_range(0..targets.len())]
}

/// Sample standard deviation (n - 1 denominator), 0 for fewer than two values.
fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Rows retrieved for one query and the radius at which they were found.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub rows: Vec<u32>,
    /// number of mismatching categorical parents allowed
    pub hamming: usize,
    /// L1 radius over normalized numerical parents
    pub numeric: f64,
}

impl CandidateSet {
    pub fn total_radius(&self) -> f64 {
        self.hamming as f64 + self.numeric
    }
}

#[derive(Debug, Clone)]
enum Column {
    Num(Vec<f64>),
    Cat(Vec<u32>),
}

#[derive(Debug, Clone, Copy)]
enum Cell {
    Num(f64),
    Cat(u32),
}

#[derive(Debug, Clone)]
struct Partition {
    key: Vec<u32>,
    rows: Vec<u32>,
    tree: Option<BallTree>,
}

#[derive(Debug, Clone)]
struct FeatureIndex {
    target: usize,
    /// schema columns, in parent-list order
    parents: Vec<usize>,
    cat_parents: Vec<usize>,
    num_parents: Vec<usize>,
    partitions: Vec<Partition>,
    lookup: HashMap<Vec<u32>, usize>,
    /// standard deviation of the whole column, for parentless numerical targets
    marginal_std: f64,
}

/// Per-feature two-level index over a real table plus sampling policy.
#[derive(Debug, Clone)]
pub struct KdeModel {
    table: Table,
    stats: NormStats,
    columns: Vec<Column>,
    features: Vec<FeatureIndex>,
    policy: EpsilonPolicy,
    rule: BandwidthRule,
}

impl KdeModel {
    pub fn build(
        table: &Table,
        order: &TopoOrder,
        stats: NormStats,
        policy: EpsilonPolicy,
        rule: BandwidthRule,
    ) -> Result<Self, KdeError> {
        let schema = table.schema();
        if order.ordering().len() != schema.len() {
            return Err(KdeError::OrderMismatch);
        }
        let columns: Vec<Column> = (0..schema.len())
            .map(|c| match schema.kind(c) {
                FeatureKind::Numerical => Column::Num(
                    table.column(c).map(|v| stats.normalize(c, v.as_number().unwrap())).collect(),
                ),
                FeatureKind::Categorical => Column::Cat(
                    table
                        .column(c)
                        .map(|v| stats.code(c, v.as_category().unwrap()).expect("stats fitted on table"))
                        .collect(),
                ),
            })
            .collect();

        let col = |name: &str| schema.index_of(name).ok_or_else(|| KdeError::UnknownFeature(name.to_string()));
        let mut features = Vec::with_capacity(schema.len());
        for (name, parent_names) in order.iter() {
            let target = col(name)?;
            let parents = parent_names.iter().map(|p| col(p)).collect::<Result<Vec<_>, _>>()?;
            let cat_parents: Vec<usize> = parents
                .iter()
                .copied()
                .filter(|&p| schema.kind(p) == FeatureKind::Categorical)
                .collect();
            let num_parents: Vec<usize> = parents
                .iter()
                .copied()
                .filter(|&p| schema.kind(p) == FeatureKind::Numerical)
                .collect();

            let mut groups: Vec<(Vec<u32>, Vec<u32>)> = Vec::new();
            let mut lookup: HashMap<Vec<u32>, usize> = HashMap::new();
            for r in 0..table.n_rows() {
                let key: Vec<u32> = cat_parents
                    .iter()
                    .map(|&p| match &columns[p] {
                        Column::Cat(codes) => codes[r],
                        Column::Num(_) => unreachable!(),
                    })
                    .collect();
                let slot = *lookup.entry(key.clone()).or_insert_with(|| {
                    groups.push((key, Vec::new()));
                    groups.len() - 1
                });
                groups[slot].1.push(r as u32);
            }
            let partitions = groups
                .into_iter()
                .map(|(key, rows)| {
                    let tree = (!num_parents.is_empty()).then(|| {
                        let mut pts = Vec::with_capacity(rows.len() * num_parents.len());
                        for &r in &rows {
                            for &p in &num_parents {
                                if let Column::Num(xs) = &columns[p] {
                                    pts.push(xs[r as usize]);
                                }
                            }
                        }
                        BallTree::new(num_parents.len(), pts, rows.clone(), BallTree::DEFAULT_LEAF_SIZE)
                    });
                    Partition { key, rows, tree }
                })
                .collect();
            let marginal_std = match schema.kind(target) {
                FeatureKind::Numerical => std_dev(&table.numeric_column(target)),
                FeatureKind::Categorical => 0.0,
            };
            features.push(FeatureIndex {
                target,
                parents,
                cat_parents,
                num_parents,
                partitions,
                lookup,
                marginal_std,
            });
        }
        Ok(Self {
            table: table.clone(),
            stats,
            columns,
            features,
            policy,
            rule,
        })
    }

    pub fn policy(&self) -> EpsilonPolicy {
        self.policy
    }

    pub fn rule(&self) -> BandwidthRule {
        self.rule
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    /// Number of categorical-parent partitions for a feature.
    pub fn partition_count(&self, feature: &str) -> Option<usize> {
        self.feature_index(feature).ok().map(|f| self.features[f].partitions.len())
    }

    /// Whether the feature's partitions carry ball trees (it has numerical parents).
    pub fn has_trees(&self, feature: &str) -> Option<bool> {
        self.feature_index(feature).ok().map(|f| !self.features[f].num_parents.is_empty())
    }

    fn feature_index(&self, feature: &str) -> Result<usize, KdeError> {
        let col = self
            .table
            .schema()
            .index_of(feature)
            .ok_or_else(|| KdeError::UnknownFeature(feature.to_string()))?;
        Ok(self.features.iter().position(|f| f.target == col).unwrap())
    }

    fn encode_query(&self, fi: &FeatureIndex, parent_values: &[Value]) -> Result<Vec<Cell>, KdeError> {
        let schema = self.table.schema();
        if parent_values.len() != fi.parents.len() {
            return Err(KdeError::ParentArity {
                feature: schema.name(fi.target).to_string(),
                expected: fi.parents.len(),
                found: parent_values.len(),
            });
        }
        let mut cells = vec![Cell::Num(0.0); schema.len()];
        for (&p, v) in fi.parents.iter().zip(parent_values) {
            cells[p] = match (schema.kind(p), v) {
                (FeatureKind::Numerical, Value::Number(x)) => Cell::Num(self.stats.normalize(p, *x)),
                (FeatureKind::Categorical, Value::Category(s)) => {
                    Cell::Cat(self.stats.code(p, s).ok_or_else(|| KdeError::UnknownCategory {
                        column: schema.name(p).to_string(),
                        value: s.clone(),
                    })?)
                }
                _ => {
                    return Err(KdeError::ParentKind {
                        feature: schema.name(fi.target).to_string(),
                        parent: schema.name(p).to_string(),
                    })
                }
            };
        }
        Ok(cells)
    }

    /// Staged exact-then-fuzzy retrieval of rows whose parents resemble
    /// `parent_values` (given in the order's parent-list order).
    pub fn fuzzy_match(&self, feature: &str, parent_values: &[Value]) -> Result<CandidateSet, KdeError> {
        let f = self.feature_index(feature)?;
        let fi = &self.features[f];
        let cells = self.encode_query(fi, parent_values)?;
        Ok(self.candidates(fi, &cells))
    }

    /// Rows within Hamming radius `hamming` and numeric L1 radius `numeric`
    /// of the query, without the staged schedule.
    pub fn match_at(
        &self,
        feature: &str,
        parent_values: &[Value],
        hamming: usize,
        numeric: f64,
    ) -> Result<Vec<u32>, KdeError> {
        let f = self.feature_index(feature)?;
        let fi = &self.features[f];
        let cells = self.encode_query(fi, parent_values)?;
        let (qcat, qnum) = split_query(fi, &cells);
        let mut out = Vec::new();
        for part in &fi.partitions {
            if hamming_distance(&part.key, &qcat) <= hamming {
                collect(part, &qnum, numeric, &mut out);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    fn candidates(&self, fi: &FeatureIndex, cells: &[Cell]) -> CandidateSet {
        let n_rows = self.table.n_rows();
        let k_min = self.policy.k_min.clamp(1, n_rows);
        let (qcat, qnum) = split_query(fi, cells);
        let schedule = self.policy.schedule(qnum.len());

        let mut rows = Vec::new();
        // exact categorical stage through the hash index
        if let Some(&p) = fi.lookup.get(&qcat) {
            let part = &fi.partitions[p];
            for &eps in &schedule {
                rows.clear();
                collect(part, &qnum, eps, &mut rows);
                if rows.len() >= k_min {
                    return CandidateSet {
                        rows,
                        hamming: 0,
                        numeric: eps,
                    };
                }
                if rows.len() == part.rows.len() {
                    break;
                }
            }
        }

        let mut by_distance: Vec<(usize, &Partition)> = fi
            .partitions
            .iter()
            .map(|p| (hamming_distance(&p.key, &qcat), p))
            .collect();
        by_distance.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.key.cmp(&b.1.key)));
        let max_distance = by_distance.last().map_or(0, |d| d.0);
        for radius in 1..=max_distance {
            let included: Vec<&Partition> = by_distance
                .iter()
                .take_while(|(d, _)| *d <= radius)
                .map(|(_, p)| *p)
                .collect();
            if !by_distance.iter().any(|(d, _)| *d == radius) {
                continue;
            }
            let available: usize = included.iter().map(|p| p.rows.len()).sum();
            for &eps in &schedule {
                rows.clear();
                for part in &included {
                    collect(part, &qnum, eps, &mut rows);
                }
                if rows.len() >= k_min {
                    return CandidateSet {
                        rows,
                        hamming: radius,
                        numeric: eps,
                    };
                }
                if rows.len() == available {
                    break;
                }
            }
        }
        // unreachable for k_min <= n_rows, kept as a total fallback
        CandidateSet {
            rows: (0..n_rows as u32).collect(),
            hamming: max_distance,
            numeric: *schedule.last().unwrap(),
        }
    }

    fn sample_feature<R: Rng + ?Sized>(&self, fi: &FeatureIndex, cells: &[Cell], rng: &mut R) -> Cell {
        let rows_owned;
        let (rows, parentless) = if fi.parents.is_empty() {
            (&fi.partitions[0].rows, true)
        } else {
            rows_owned = self.candidates(fi, cells).rows;
            (&rows_owned, false)
        };
        match &self.columns[fi.target] {
            Column::Cat(codes) => {
                let r = *categorical_sample(rows, rng);
                Cell::Cat(codes[r as usize])
            }
            Column::Num(_) => {
                let raw = |r: &u32| self.table.value(*r as usize, fi.target).as_number().unwrap();
                let values: Vec<f64> = rows.iter().map(raw).collect();
                let spread = if parentless {
                    fi.marginal_std
                } else {
                    std_dev(&values)
                };
                let h = match self.rule {
                    BandwidthRule::Fixed(h) => h,
                    rule => bandwidth(rule, values.len(), 1).unwrap() * spread,
                };
                let bounds = self.stats.bounds(fi.target);
                // raw (unnormalized) value; the caller normalizes for queries
                Cell::Num(kde_sample(&values, h, bounds, rng))
            }
        }
    }

    /// One synthetic row, features visited in topological order.
    pub fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Value> {
        let m = self.table.n_cols();
        let mut cells = vec![Cell::Num(0.0); m];
        let mut raw = vec![0.0; m];
        for fi in &self.features {
            cells[fi.target] = match self.sample_feature(fi, &cells, rng) {
                Cell::Num(v) => {
                    raw[fi.target] = v;
                    Cell::Num(self.stats.normalize(fi.target, v))
                }
                cat => cat,
            };
        }
        (0..m)
            .map(|c| match cells[c] {
                Cell::Cat(code) => Value::Category(self.stats.decode(c, code).to_string()),
                Cell::Num(_) => Value::Number(raw[c]),
            })
            .collect()
    }

    /// `n` rows; row `i` uses its own random stream derived from `(seed, i)`.
    pub fn sample_table(&self, n: usize, seed: u64) -> Table {
        let rows = (0..n)
            .map(|i| self.sample_row(&mut rng::stream(seed, i as u64)))
            .collect();
        Table::new(self.table.schema().clone(), rows).expect("sampled rows match schema")
    }
}

fn split_query(fi: &FeatureIndex, cells: &[Cell]) -> (Vec<u32>, Vec<f64>) {
    let qcat = fi
        .cat_parents
        .iter()
        .map(|&p| match cells[p] {
            Cell::Cat(c) => c,
            Cell::Num(_) => unreachable!("categorical parent holds a code"),
        })
        .collect();
    let qnum = fi
        .num_parents
        .iter()
        .map(|&p| match cells[p] {
            Cell::Num(x) => x,
            Cell::Cat(_) => unreachable!("numerical parent holds a number"),
        })
        .collect();
    (qcat, qnum)
}

fn hamming_distance(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn collect(part: &Partition, qnum: &[f64], eps: f64, out: &mut Vec<u32>) {
    match &part.tree {
        Some(tree) => tree.range_query_into(qnum, eps, out).expect("query matches tree dimension"),
        None => out.extend_from_slice(&part.rows),
    }
}

#[cfg(test)]
mod tests;
