use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::table::{FeatureKind, Schema, Table, Value};

/// A domain rule that synthetic rows should satisfy.
#[derive(Debug, Clone, PartialEq)]
pub enum ViolationRule {
    /// `b` must equal the value that real data pairs with `a`.
    PairMap {
        a: String,
        b: String,
        map: HashMap<String, String>,
    },
    /// `(x, y)` must lie inside the polygon (boundary included).
    BoundingRegion {
        x: String,
        y: String,
        polygon: Vec<(f64, f64)>,
    },
}

/// Proportion with a 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub count: usize,
    pub n: usize,
    pub rate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Proportion {
    pub fn wilson(count: usize, n: usize) -> Self {
        if n == 0 {
            return Self { count, n, rate: 0.0, lo: 0.0, hi: 1.0 };
        }
        let z = 1.959_963_984_540_054;
        let nf = n as f64;
        let p = count as f64 / nf;
        let denom = 1.0 + z * z / nf;
        let center = (p + z * z / (2.0 * nf)) / denom;
        let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
        Self {
            count,
            n,
            rate: p,
            lo: (center - half).clamp(0.0, 1.0).min(p),
            hi: (center + half).clamp(0.0, 1.0).max(p),
        }
    }
}

fn column(schema: &Schema, name: &str) -> Result<usize, EvalError> {
    schema.index_of(name).ok_or_else(|| EvalError::UnknownFeature(name.to_string()))
}

fn numeric_column(schema: &Schema, name: &str) -> Result<usize, EvalError> {
    let c = column(schema, name)?;
    if schema.kind(c) != FeatureKind::Numerical {
        return Err(EvalError::NotNumerical(name.to_string()));
    }
    Ok(c)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let scale = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1.0);
    cross(a, b, p).abs() <= 1e-12 * scale * scale
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

fn segments_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let (d1, d2) = (cross(c, d, a), cross(c, d, b));
    let (d3, d4) = (cross(a, b, c), cross(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

/// Even-odd test; points on an edge count as inside.
pub fn point_in_polygon(p: (f64, f64), polygon: &[(f64, f64)]) -> bool {
    let n = polygon.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        if on_segment(p, a, b) {
            return true;
        }
        if (a.1 > p.1) != (b.1 > p.1) {
            let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if p.0 < x {
                inside = !inside;
            }
        }
    }
    inside
}

impl ViolationRule {
    /// Learns the `a -> b` map from real data; fails if some `a` value
    /// appears with two different `b` values.
    pub fn pair_map(real: &Table, a: &str, b: &str) -> Result<Self, EvalError> {
        let (ca, cb) = (column(real.schema(), a)?, column(real.schema(), b)?);
        let mut map: HashMap<String, String> = HashMap::new();
        for row in real.rows() {
            let (ka, kb) = (row[ca].to_string(), row[cb].to_string());
            match map.get(&ka) {
                Some(existing) if *existing != kb => {
                    return Err(EvalError::NotFunctional {
                        a: a.to_string(),
                        b: b.to_string(),
                        value: ka,
                    })
                }
                Some(_) => {}
                None => {
                    map.insert(ka, kb);
                }
            }
        }
        Ok(Self::PairMap {
            a: a.to_string(),
            b: b.to_string(),
            map,
        })
    }

    /// Simple polygon over two numerical features. A repeated closing
    /// vertex is dropped.
    pub fn region(x: &str, y: &str, mut polygon: Vec<(f64, f64)>) -> Result<Self, EvalError> {
        if polygon.len() > 1 && polygon.first() == polygon.last() {
            polygon.pop();
        }
        let bad = |m: &str| Err(EvalError::BadPolygon(m.to_string()));
        if polygon.len() < 3 {
            return bad("needs at least 3 vertices");
        }
        if polygon.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return bad("non-finite vertex");
        }
        let n = polygon.len();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (a, b) = (polygon[i], polygon[(i + 1) % n]);
                let (c, d) = (polygon[j], polygon[(j + 1) % n]);
                if segments_cross(a, b, c, d) {
                    return bad(&format!("edges {i} and {j} intersect"));
                }
            }
        }
        Ok(Self::BoundingRegion {
            x: x.to_string(),
            y: y.to_string(),
            polygon,
        })
    }

    /// Axis-aligned bounding box of a polygon, as a region rule.
    pub fn bounding_box(x: &str, y: &str, polygon: &[(f64, f64)]) -> Result<Self, EvalError> {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(a, b) in polygon {
            x0 = x0.min(a);
            x1 = x1.max(a);
            y0 = y0.min(b);
            y1 = y1.max(b);
        }
        Self::region(x, y, vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    }

    pub fn describe(&self) -> String {
        match self {
            Self::PairMap { a, b, .. } => format!("pairmap {a} {b}"),
            Self::BoundingRegion { x, y, polygon } => format!("region {x} {y} ({} vertices)", polygon.len()),
        }
    }

    /// Per-row check against `schema`'s column layout.
    pub fn checker(&self, schema: &Schema) -> Result<impl Fn(&[Value]) -> bool + '_, EvalError> {
        let cols = match self {
            Self::PairMap { a, b, .. } => (column(schema, a)?, column(schema, b)?),
            Self::BoundingRegion { x, y, .. } => (numeric_column(schema, x)?, numeric_column(schema, y)?),
        };
        Ok(move |row: &[Value]| match self {
            Self::PairMap { map, .. } => map.get(&row[cols.0].to_string()) != Some(&row[cols.1].to_string()),
            Self::BoundingRegion { polygon, .. } => {
                let p = (row[cols.0].as_number().unwrap(), row[cols.1].as_number().unwrap());
                !point_in_polygon(p, polygon)
            }
        })
    }
}

/// Fraction of rows violating `rule`, with a Wilson interval.
pub fn violation_rate(table: &Table, rule: &ViolationRule) -> Result<Proportion, EvalError> {
    let violates = rule.checker(table.schema())?;
    let count = table.rows().iter().filter(|r| violates(r)).count();
    Ok(Proportion::wilson(count, table.n_rows()))
}

fn read_polygon(path: &Path) -> Result<Vec<(f64, f64)>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::RulesFile {
        path: path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (fields.len() == 2)
            .then(|| Some((fields[0].parse::<f64>().ok()?, fields[1].parse::<f64>().ok()?)))
            .flatten();
        match parsed {
            Some(p) => out.push(p),
            // a header line
            None if out.is_empty() && i == 0 => {}
            None => {
                return Err(EvalError::RulesFile {
                    path: path.display().to_string(),
                    line: i + 1,
                    reason: "expected `x,y`".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Parses a rules file. Lines are `pairmap A B`, `region X Y polygon.csv`
/// or `bbox X Y polygon.csv`; polygon paths are relative to the rules file.
/// Pair maps are learned from `real`.
pub fn parse_rules(path: &Path, real: &Table) -> Result<Vec<ViolationRule>, EvalError> {
    let err = |line: usize, reason: String| EvalError::RulesFile {
        path: path.display().to_string(),
        line,
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(0, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        let rule = match words.as_slice() {
            ["pairmap", a, b] => ViolationRule::pair_map(real, a, b),
            ["region", x, y, file] => ViolationRule::region(x, y, read_polygon(&base.join(file))?),
            ["bbox", x, y, file] => ViolationRule::bounding_box(x, y, &read_polygon(&base.join(file))?),
            _ => return Err(err(i + 1, format!("unrecognized rule `{line}`"))),
        };
        rules.push(rule.map_err(|e| err(i + 1, e.to_string()))?);
    }
    Ok(rules)
}
