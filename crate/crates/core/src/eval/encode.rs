use std::collections::HashMap;

use crate::table::{FeatureKind, Table, Value};

#[derive(Debug, Clone)]
enum Slot {
    Num { col: usize, min: f64, max: f64 },
    Cat { col: usize, levels: HashMap<String, usize>, offset: usize },
}

/// Min-max numericals plus one-hot categoricals, fitted on one or more
/// tables. Unseen categories encode as all zeros.
#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    slots: Vec<Slot>,
    width: usize,
}

impl Encoder {
    pub fn fit(tables: &[&Table], exclude: Option<usize>) -> Self {
        let schema = tables[0].schema();
        let mut slots = Vec::new();
        let mut width = 0;
        for c in (0..schema.len()).filter(|&c| Some(c) != exclude) {
            match schema.kind(c) {
                FeatureKind::Numerical => {
                    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                    for t in tables {
                        for v in t.column(c) {
                            let x = v.as_number().unwrap();
                            min = min.min(x);
                            max = max.max(x);
                        }
                    }
                    slots.push(Slot::Num { col: c, min, max });
                    width += 1;
                }
                FeatureKind::Categorical => {
                    let mut levels = HashMap::new();
                    for t in tables {
                        for v in t.column(c) {
                            let n = levels.len();
                            levels.entry(v.as_category().unwrap().to_string()).or_insert(n);
                        }
                    }
                    let n = levels.len();
                    slots.push(Slot::Cat { col: c, levels, offset: width });
                    width += n;
                }
            }
        }
        Self { slots, width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn encode_into(&self, row: &[Value], out: &mut Vec<f64>) {
        let start = out.len();
        out.resize(start + self.width, 0.0);
        let mut pos = start;
        for slot in &self.slots {
            match slot {
                Slot::Num { col, min, max } => {
                    let x = row[*col].as_number().unwrap();
                    out[pos] = if max > min { (x - min) / (max - min) } else { 0.0 };
                    pos += 1;
                }
                Slot::Cat { col, levels, offset } => {
                    if let Some(&l) = levels.get(row[*col].as_category().unwrap()) {
                        out[start + offset + l] = 1.0;
                    }
                    pos = start + offset + levels.len();
                }
            }
        }
    }

    /// Row-major design matrix.
    pub fn encode_table(&self, table: &Table) -> Vec<f64> {
        let mut out = Vec::with_capacity(table.n_rows() * self.width);
        for row in table.rows() {
            self.encode_into(row, &mut out);
        }
        out
    }
}
