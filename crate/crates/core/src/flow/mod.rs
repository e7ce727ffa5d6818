//! Parametric synthesis with one conditional normalizing flow per feature.
//!
//! Each flow maps a standard-normal latent `z` to a feature value given the
//! encoded values of the feature's parents. The conditioner network emits
//! the parameters of an affine map followed by a rational-quadratic spline;
//! numerical targets are standardized, categorical targets are modelled as
//! dequantized label codes and decoded by rounding.

mod net;
mod real;
mod spline;

use std::f64::consts::PI;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::TopoOrder;
use crate::rng;
use crate::table::{hex_digest, FeatureKind, NormStats, Schema, Table, Value};

pub use net::{Layout, DROPOUT, GROUPS, HIDDEN};
pub use real::{Dual, Real};
pub use spline::{Transform, BINS, BOUND, N_PARAMS};

use net::Cache;

const ARCHIVE_FORMAT: &str = "dagsynth-flow/1";

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("category `{value}` is outside the support of `{column}`")]
    UnknownCategory { column: String, value: String },
    #[error("parent `{parent}` has the wrong value kind")]
    ParentKind { parent: String },
    #[error("topological order does not match the table schema")]
    OrderMismatch,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged for `{feature}` at epoch {epoch}")]
    Diverged { feature: String, epoch: usize },
    #[error("archive {what} does not match")]
    HashMismatch { what: &'static str },
    #[error("malformed archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// epochs without improvement of the epoch mean NLL before stopping
    pub patience: usize,
    /// spacing between dequantized category codes
    pub dequant_gap: f64,
    /// drop the spline and keep only the conditional affine map
    pub affine_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            weight_decay: 0.01,
            batch_size: 256,
            epochs: 200,
            seed: 42,
            patience: 20,
            dequant_gap: 4.0,
            affine_only: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.dequant_gap >= 1.0) {
            return bad("dequant_gap must be at least 1");
        }
        Ok(())
    }
}

/// How a flow's standardized output maps back to a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetCoding {
    Numerical,
    /// value `code * gap`, `levels` codes
    Categorical { gap: f64, levels: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalFlow {
    pub target: String,
    target_col: usize,
    pub parents: Vec<String>,
    parent_cols: Vec<usize>,
    layout: Layout,
    params: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub coding: TargetCoding,
    pub affine_only: bool,
}

/// Conditioner input for one feature. Numerical parents are min-max
/// normalized, categorical parents map to `code / (K - 1)`; a feature
/// without parents gets the constant `[1]`.
pub fn encode_parents(parent_cols: &[usize], values: &[Value], stats: &NormStats, schema: &Schema) -> Result<Vec<f64>, FlowError> {
    if parent_cols.is_empty() {
        return Ok(vec![1.0]);
    }
    parent_cols
        .iter()
        .zip(values)
        .map(|(&p, v)| match (schema.kind(p), v) {
            (FeatureKind::Numerical, Value::Number(x)) => Ok(stats.normalize(p, *x)),
            (FeatureKind::Categorical, Value::Category(s)) => {
                let code = stats.code(p, s).ok_or_else(|| FlowError::UnknownCategory {
                    column: schema.name(p).to_string(),
                    value: s.clone(),
                })?;
                let k = stats.support(p).len();
                Ok(if k > 1 { code as f64 / (k - 1) as f64 } else { 0.0 })
            }
            _ => Err(FlowError::ParentKind {
                parent: schema.name(p).to_string(),
            }),
        })
        .collect()
}

fn log_normal(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

impl ConditionalFlow {
    /// Untrained flow whose transform is the identity map.
    pub fn identity(target: &str, inputs: usize, mean: f64, std: f64) -> Self {
        let layout = Layout::new(inputs.max(1));
        let mut rng = rng::stream(0, 0);
        Self {
            target: target.to_string(),
            target_col: 0,
            parents: Vec::new(),
            parent_cols: Vec::new(),
            layout,
            params: layout.init(&mut rng),
            mean,
            std,
            coding: TargetCoding::Numerical,
            affine_only: false,
        }
    }

    pub fn inputs(&self) -> usize {
        self.layout.inputs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Transform for an encoded context (inference mode, no dropout).
    pub fn transform(&self, context: &[f64]) -> Transform<f64> {
        let mut cache = Cache::default();
        net::forward(&self.layout, &self.params, context, None, &mut cache);
        Transform::from_raw(&cache.out, self.affine_only)
    }

    /// `(v, log |dv/dz|)` on the target's own scale.
    pub fn forward(&self, z: f64, context: &[f64]) -> (f64, f64) {
        let (s, ld) = self.transform(context).forward(z);
        (self.mean + self.std * s, ld + self.std.ln())
    }

    /// `(z, log |dz/dv|)`.
    pub fn inverse(&self, v: f64, context: &[f64]) -> (f64, f64) {
        let (z, ld) = self.transform(context).inverse((v - self.mean) / self.std);
        (z, ld - self.std.ln())
    }

    pub fn log_density(&self, v: f64, context: &[f64]) -> f64 {
        let (z, ld) = self.inverse(v, context);
        log_normal(z) + ld
    }

    /// Mean NLL of standardized targets over `rows` and its gradient
    /// (added to `grad`, scaled by `1 / rows.len()`). With a mask source,
    /// each row draws its own dropout mask from it.
    pub fn loss_grad(
        &self,
        contexts: &[f64],
        targets: &[f64],
        rows: &[usize],
        mut dropout: Option<&mut ChaCha8Rng>,
        grad: &mut [f64],
    ) -> f64 {
        let p = self.layout.inputs;
        let scale = 1.0 / rows.len() as f64;
        let mut cache = Cache::default();
        let mut mask = [0.0; HIDDEN];
        let mut total = 0.0;
        for &r in rows {
            let c = &contexts[r * p..(r + 1) * p];
            let m = dropout.as_deref_mut().map(|rng| {
                net::dropout_mask(rng, &mut mask);
                &mask
            });
            net::forward(&self.layout, &self.params, c, m, &mut cache);
            let mut raw = [Dual::<N_PARAMS>::cst(0.0); N_PARAMS];
            for (i, r) in raw.iter_mut().enumerate() {
                *r = Dual::var(cache.out[i], i);
            }
            let tr = Transform::from_raw(&raw, self.affine_only);
            let (z, ld) = tr.inverse(Dual::cst(targets[r]));
            let nll = z * z * Dual::cst(0.5) + Dual::cst(0.5 * (2.0 * PI).ln()) - ld;
            total += nll.v;
            let mut dout = nll.d;
            dout.iter_mut().for_each(|d| *d *= scale);
            let m = dropout.is_some().then_some(&mask);
            net::backward(&self.layout, &self.params, c, m, &cache, &dout, grad);
        }
        total * scale
    }

    fn decode(&self, v: f64, stats: &NormStats) -> Value {
        match self.coding {
            TargetCoding::Numerical => {
                let (lo, hi) = stats.bounds(self.target_col);
                Value::Number(v.clamp(lo, hi))
            }
            TargetCoding::Categorical { gap, levels } => {
                let code = (v / gap).round().clamp(0.0, (levels - 1) as f64) as u32;
                Value::Category(stats.decode(self.target_col, code).to_string())
            }
        }
    }
}

/// Per-feature training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub feature: String,
    /// mean NLL per epoch, on the target's own scale
    pub epoch_nll: Vec<f64>,
    /// epoch whose parameters were kept
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    schema: Schema,
    stats: NormStats,
    order_hash: String,
    flows: Vec<ConditionalFlow>,
    pub log: Vec<TrainLog>,
    pub config: TrainConfig,
}

struct Prepared {
    contexts: Vec<f64>,
    /// raw targets (codes times gap for categoricals)
    values: Vec<f64>,
    categorical: bool,
}

impl FlowModel {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn flows(&self) -> &[ConditionalFlow] {
        &self.flows
    }

    pub fn flow(&self, feature: &str) -> Option<&ConditionalFlow> {
        self.flows.iter().find(|f| f.target == feature)
    }

    pub fn order_hash(&self) -> &str {
        &self.order_hash
    }

    /// Encoded context for `feature` from a full row of values.
    pub fn context(&self, feature: &str, row: &[Value]) -> Result<Vec<f64>, FlowError> {
        let f = self.flow(feature).ok_or_else(|| FlowError::UnknownFeature(feature.to_string()))?;
        let values: Vec<Value> = f.parent_cols.iter().map(|&p| row[p].clone()).collect();
        encode_parents(&f.parent_cols, &values, &self.stats, &self.schema)
    }

    pub fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Value> {
        let mut row = vec![Value::Number(0.0); self.schema.len()];
        let mut ctx = Vec::with_capacity(8);
        let mut parents = Vec::with_capacity(8);
        for f in &self.flows {
            parents.clear();
            parents.extend(f.parent_cols.iter().map(|&p| row[p].clone()));
            ctx.clear();
            ctx.extend(encode_parents(&f.parent_cols, &parents, &self.stats, &self.schema).expect("sampled values are in support"));
            let z: f64 = StandardNormal.sample(rng);
            let (v, _) = f.forward(z, &ctx);
            row[f.target_col] = f.decode(v, &self.stats);
        }
        row
    }

    /// `n` rows; row `i` uses its own random stream derived from `(seed, i)`.
    pub fn sample_table(&self, n: usize, seed: u64) -> Table {
        let rows = (0..n).map(|i| self.sample_row(&mut rng::stream(seed, i as u64))).collect();
        Table::new(self.schema.clone(), rows).expect("sampled rows match schema")
    }

    /// Writes a JSON archive binding the model to its schema and order.
    pub fn save(&self, path: &Path) -> Result<(), FlowError> {
        let payload = serde_json::to_string(self)?;
        let mut h = Sha256::new();
        h.update(payload.as_bytes());
        let archive = Archive {
            format: ARCHIVE_FORMAT.to_string(),
            schema_hash: self.schema.hash(),
            graph_hash: self.order_hash.clone(),
            payload_sha256: hex_digest(h),
            payload,
        };
        std::fs::write(path, serde_json::to_string_pretty(&archive)?)?;
        Ok(())
    }

    /// Reads an archive and checks its integrity and that it was trained
    /// for `schema` and `order`.
    pub fn load(path: &Path, schema: &Schema, order: &TopoOrder) -> Result<Self, FlowError> {
        let archive: Archive = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if archive.format != ARCHIVE_FORMAT {
            return Err(FlowError::Archive(format!("unsupported format `{}`", archive.format)));
        }
        let mut h = Sha256::new();
        h.update(archive.payload.as_bytes());
        if hex_digest(h) != archive.payload_sha256 {
            return Err(FlowError::HashMismatch { what: "payload digest" });
        }
        if archive.schema_hash != schema.hash() {
            return Err(FlowError::HashMismatch { what: "schema hash" });
        }
        if archive.graph_hash != order.hash() {
            return Err(FlowError::HashMismatch { what: "graph hash" });
        }
        let mut model: FlowModel = serde_json::from_str(&archive.payload)?;
        if model.schema.hash() != archive.schema_hash || model.order_hash != archive.graph_hash {
            return Err(FlowError::Archive("payload disagrees with header".into()));
        }
        model.stats = model.stats.reindex();
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Archive {
    format: String,
    schema_hash: String,
    graph_hash: String,
    payload_sha256: String,
    payload: String,
}

/// Trains one flow per feature by maximum likelihood. Features train
/// independently, each on its own random stream.
pub fn fit_flows(table: &Table, order: &TopoOrder, cfg: &TrainConfig) -> Result<FlowModel, FlowError> {
    cfg.validate()?;
    let schema = table.schema();
    if order.ordering().len() != schema.len() {
        return Err(FlowError::OrderMismatch);
    }
    let stats = NormStats::fit(table);
    let col = |name: &str| schema.index_of(name).ok_or_else(|| FlowError::UnknownFeature(name.to_string()));
    let mut specs = Vec::with_capacity(schema.len());
    for (name, parents) in order.iter() {
        let target = col(name)?;
        let parent_cols = parents.iter().map(|p| col(p)).collect::<Result<Vec<_>, _>>()?;
        specs.push((target, parents.to_vec(), parent_cols));
    }
    let trained = specs
        .par_iter()
        .map(|(target, parents, parent_cols)| train_one(table, &stats, *target, parents, parent_cols, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let (flows, log) = trained.into_iter().unzip();
    Ok(FlowModel {
        schema: schema.clone(),
        stats,
        order_hash: order.hash(),
        flows,
        log,
        config: *cfg,
    })
}

fn prepare(table: &Table, stats: &NormStats, target: usize, parent_cols: &[usize], gap: f64) -> Prepared {
    let schema = table.schema();
    let mut contexts = Vec::with_capacity(table.n_rows() * parent_cols.len().max(1));
    let mut parents = Vec::with_capacity(parent_cols.len());
    for row in table.rows() {
        parents.clear();
        parents.extend(parent_cols.iter().map(|&p| row[p].clone()));
        contexts.extend(encode_parents(parent_cols, &parents, stats, schema).expect("stats fitted on table"));
    }
    let categorical = schema.kind(target) == FeatureKind::Categorical;
    let values = table
        .column(target)
        .map(|v| match v {
            Value::Number(x) => *x,
            Value::Category(s) => stats.code(target, s).expect("stats fitted on table") as f64 * gap,
        })
        .collect();
    Prepared {
        contexts,
        values,
        categorical,
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, layout: &Layout, params: &mut [f64], grad: &[f64], lr: f64, decay: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for g in 0..GROUPS.len() {
            let wd = if layout.decays(g) { lr * decay } else { 0.0 };
            for i in layout.group(g) {
                self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
                self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
                let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
                params[i] -= wd * params[i] + lr * update;
            }
        }
    }
}

fn train_one(
    table: &Table,
    stats: &NormStats,
    target: usize,
    parents: &[String],
    parent_cols: &[usize],
    cfg: &TrainConfig,
) -> Result<(ConditionalFlow, TrainLog), FlowError> {
    let schema = table.schema();
    let name = schema.name(target).to_string();
    let data = prepare(table, stats, target, parent_cols, cfg.dequant_gap);
    let (mean, std) = mean_std(&data.values);
    let coding = if data.categorical {
        TargetCoding::Categorical {
            gap: cfg.dequant_gap,
            levels: stats.support(target).len() as u32,
        }
    } else {
        TargetCoding::Numerical
    };
    let layout = Layout::new(parent_cols.len().max(1));
    let mut rng = rng::stream(cfg.seed, target as u64);
    let mut flow = ConditionalFlow {
        target: name.clone(),
        target_col: target,
        parents: parents.to_vec(),
        parent_cols: parent_cols.to_vec(),
        layout,
        params: layout.init(&mut rng),
        mean,
        std,
        coding,
        affine_only: cfg.affine_only,
    };

    let n = table.n_rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut targets: Vec<f64> = data.values.iter().map(|v| (v - mean) / std).collect();
    let mut grad = vec![0.0; layout.len()];
    let mut adam = AdamW::new(layout.len());
    let mut best = (f64::INFINITY, 0, flow.params.clone());
    let mut epoch_nll = Vec::with_capacity(cfg.epochs);
    let log_std = std.ln();

    for epoch in 0..cfg.epochs {
        if data.categorical {
            for (t, v) in targets.iter_mut().zip(&data.values) {
                *t = (v + rng.random_range(-0.5..0.5) - mean) / std;
            }
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = flow.loss_grad(&data.contexts, &targets, batch, Some(&mut rng), &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(FlowError::Diverged { feature: name, epoch });
            }
            adam.step(&layout, &mut flow.params, &grad, cfg.learning_rate, cfg.weight_decay);
            total += loss * batch.len() as f64;
        }
        let nll = total / n as f64 + log_std;
        epoch_nll.push(nll);
        if nll < best.0 {
            best = (nll, epoch, flow.params.clone());
        } else if epoch - best.1 >= cfg.patience {
            debug!("{name}: early stop at epoch {epoch}");
            break;
        }
    }
    flow.params = best.2;
    info!("{name}: best mean NLL {:.4} at epoch {}", best.0, best.1);
    Ok((
        flow,
        TrainLog {
            feature: name,
            epoch_nll,
            best_epoch: best.1,
        },
    ))
}
