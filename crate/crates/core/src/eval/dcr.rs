use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::table::{FeatureKind, NormStats, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dcr {
    /// one entry per synthetic row
    pub distances: Vec<f64>,
    pub mean: f64,
}

/// Distance to closest record. For each synthetic row, the minimum over
/// real rows of the mean per-column distance: normalized absolute
/// difference for numerical columns, 0/1 mismatch for categorical ones.
/// `stats` should be fitted on the real table.
pub fn dcr(real: &Table, synth: &Table, stats: &NormStats) -> Result<Dcr, EvalError> {
    if real.schema() != synth.schema() {
        return Err(EvalError::SchemaMismatch);
    }
    let schema = real.schema();
    let num_cols: Vec<usize> = (0..schema.len()).filter(|&c| schema.kind(c) == FeatureKind::Numerical).collect();
    let cat_cols: Vec<usize> = (0..schema.len()).filter(|&c| schema.kind(c) == FeatureKind::Categorical).collect();
    let encode = |t: &Table| -> (Vec<f64>, Vec<u32>) {
        let mut nums = Vec::with_capacity(t.n_rows() * num_cols.len());
        let mut cats = Vec::with_capacity(t.n_rows() * cat_cols.len());
        for row in t.rows() {
            nums.extend(num_cols.iter().map(|&c| stats.normalize(c, row[c].as_number().unwrap())));
            cats.extend(cat_cols.iter().map(|&c| stats.code(c, row[c].as_category().unwrap()).unwrap_or(u32::MAX)));
        }
        (nums, cats)
    };
    let (rn, rc) = encode(real);
    let (sn, sc) = encode(synth);
    let (dn, dc) = (num_cols.len(), cat_cols.len());
    let m = schema.len() as f64;

    let distances: Vec<f64> = (0..synth.n_rows())
        .into_par_iter()
        .map(|i| {
            let (qn, qc) = (&sn[i * dn..(i + 1) * dn], &sc[i * dc..(i + 1) * dc]);
            let mut best = f64::INFINITY;
            for r in 0..real.n_rows() {
                let mut d = qc.iter().zip(&rc[r * dc..(r + 1) * dc]).filter(|(a, b)| a != b).count() as f64;
                if d >= best {
                    continue;
                }
                for (a, b) in qn.iter().zip(&rn[r * dn..(r + 1) * dn]) {
                    d += (a - b).abs();
                }
                best = best.min(d);
            }
            best / m
        })
        .collect();
    let mean = distances.iter().sum::<f64>() / distances.len().max(1) as f64;
    Ok(Dcr { distances, mean })
}
